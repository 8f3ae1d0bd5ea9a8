//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! test fails if any check fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcd_core::chanmask::{
    build_mask, select_unseen_params, DomainParams, MaskSpec, ParamsRegistry, Strategy, TaskTag,
};
use pcd_core::chanstats::{cd_ratio, dtw, pearson_corr};
use pcd_core::dataio::{synth_generate, RawDataset, SynthSpec};
use pcd_core::forecaster::{AttentionMode, Composition, ForecastModel, ModelConfig};
use pcd_core::harness::{
    ablation_run, gradient_fidelity, masked_channel_prediction, robustness_sweep, run_experiment, AblationCell,
    ErrorTable, ExperimentConfig, DEFAULT_MISSING_RATIOS,
};
use pcd_core::Matrix;

/// Values measured once at the pinned seeds and frozen.
mod frozen {
    pub const PCD_TEST_MSE: f64 = 0.9987860394568376;
    pub const CI_TEST_MSE: f64 = 1.0810232463885652;
    pub const PCD_MCP: [f64; 4] = [1.7460044776227353, 1.5162794972285292, 1.4725537564240647, 1.4972030403770704];
    pub const CI_MCP: [f64; 4] = [2.215459881535431, 2.2350090175425863, 2.248560009523805, 2.20597789540352];
    pub const CLEAN_R_ABS: f64 = 0.4471647620064961;
    pub const MISSING_25_R_ABS: f64 = 0.45480169489883515;
    pub const CLEAN_MSE: f64 = 0.9987860394568376;
    pub const MISSING_25_MSE: f64 = 0.9829442855112703;
}

/// Relative tolerance for frozen regression values.
const FROZEN_RTOL: f64 = 1e-6;

const SYNTH: &str = "lagged_copy,c=4,t=2000,tau=3,noise=0.1,seed=7";
const TRAIN_SEED: u64 = 0;

struct Gate {
    results: Vec<(usize, String, bool)>,
}

impl Gate {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, name.to_string(), pass));
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= FROZEN_RTOL * b.abs().max(1e-12)
}

fn lagged() -> RawDataset {
    synth_generate(&SYNTH.parse::<SynthSpec>().unwrap()).unwrap()
}

fn base_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.seed = TRAIN_SEED;
    cfg
}

fn gradient_fidelity_check(gate: &mut Gate) {
    let start = Instant::now();
    let r = gradient_fidelity(0, 1e-5).unwrap();
    let took = start.elapsed();
    let pass = r.model_error < 1e-4 && r.mask_error < 1e-6 && took < Duration::from_secs(30);
    gate.record(
        1,
        "gradient fidelity",
        pass,
        format!(
            "model {:.3e} < 1e-4 over {} entries, mask {:.3e} < 1e-6, {:.2}s < 30s",
            r.model_error,
            r.model_entries,
            r.mask_error,
            took.as_secs_f64()
        ),
    );
}

fn mode_equivalences(gate: &mut Gate) {
    let ds = lagged();
    let stats = pearson_corr(&ds.values.slice_rows(0, 1400)).unwrap();
    let small = |mode, mask| ModelConfig {
        lookback: 32,
        horizon: 8,
        d_model: 8,
        heads: 2,
        layers: 2,
        mode,
        mask,
        ..ModelConfig::default()
    };
    let cd = ForecastModel::new(small(AttentionMode::Cd, MaskSpec::Ones), 4, None, 3).unwrap();
    let pcd = ForecastModel::new(small(AttentionMode::Pcd, MaskSpec::Ones), 4, Some(stats), 3).unwrap();
    let ci = ForecastModel::new(small(AttentionMode::Ci, MaskSpec::Ones), 4, None, 3).unwrap();
    let mut ones_gap: f64 = 0.0;
    let mut ci_leak: f64 = 0.0;
    for start in (0..1800).step_by(97) {
        let x = ds.values.slice_rows(start, start + 32);
        ones_gap = ones_gap.max(cd.predict(&x).unwrap().max_abs_diff(&pcd.predict(&x).unwrap()));
        let base = ci.predict(&x).unwrap();
        for j in 0..4 {
            let mut xp = x.clone();
            for i in 0..32 {
                xp.row_mut(i)[j] += 2.0 * ((i + j) as f64).sin();
            }
            let y = ci.predict(&xp).unwrap();
            for k in (0..4).filter(|&k| k != j) {
                for h in 0..8 {
                    ci_leak = ci_leak.max((y[(h, k)] - base[(h, k)]).abs());
                }
            }
        }
    }

    let cell = AblationCell {
        mask: MaskSpec::Ones,
        composition: Composition::LocalOnly,
    };
    let rows = ablation_run(&ds, &base_config(), &[cell], true).unwrap();
    let (cd_row, cell_row) = (&rows[1], &rows[2]);
    let metric_gap = (cd_row.mse - cell_row.mse).abs().max((cd_row.mae - cell_row.mae).abs());

    let pass = ones_gap <= 1e-12 && metric_gap <= 1e-12 && ci_leak <= 1e-12;
    gate.record(
        2,
        "mode equivalences",
        pass,
        format!(
            "ones-mask vs CD output gap {ones_gap:.1e}, ones+local cell vs CD metric gap {metric_gap:.1e}, CI cross-channel leak {ci_leak:.1e} (all <= 1e-12)"
        ),
    );
}

fn cd_ratio_contract(gate: &mut Gate) {
    let identity = cd_ratio(&Matrix::identity(5)).unwrap();
    let ones = cd_ratio(&Matrix::ones(5, 5)).unwrap();
    let data = Matrix::from_fn(300, 5, |i, j| {
        let t = i as f64;
        (0.1 * t).sin() * (1.0 - 0.2 * j as f64) + (0.37 * t * (j + 1) as f64).cos() * 0.3 * j as f64
    });
    let stats = pearson_corr(&data).unwrap();
    let ratios: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|&b| build_mask(&stats, &DomainParams::scalar(1.0, b)).unwrap().cd_ratio)
        .collect();
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let pass = identity == 0.0 && ones == 1.0 && increasing;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    gate.record(
        3,
        "CD-ratio contract",
        pass,
        format!("r(I) = {identity}, r(1) = {ones}, r over beta -2..2 = [{}]", shown.join(", ")),
    );
}

fn naive_pearson(data: &Matrix) -> Matrix {
    let (t, c) = data.shape();
    Matrix::from_fn(c, c, |a, b| {
        let (mut sa, mut sb) = (0.0, 0.0);
        for i in 0..t {
            sa += data[(i, a)];
            sb += data[(i, b)];
        }
        let (ma, mb) = (sa / t as f64, sb / t as f64);
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for i in 0..t {
            let (da, db) = (data[(i, a)] - ma, data[(i, b)] - mb);
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        cov / (va * vb).sqrt()
    })
}

fn oracle_equivalence(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let data = Matrix::from_fn(50, 6, |_, _| rng.random_range(-1.0..1.0));
    let stats = pearson_corr(&data).unwrap();
    let pearson_gap = stats.raw.max_abs_diff(&naive_pearson(&data));

    let preds: Vec<Matrix> = (0..7).map(|_| Matrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0))).collect();
    let targets: Vec<Matrix> = (0..7).map(|_| Matrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0))).collect();
    let table = ErrorTable::from_pairs(preds.iter().zip(&targets)).unwrap();
    let (mut sq, mut ab, mut n) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(&targets) {
        for i in 0..5 {
            for j in 0..3 {
                let e = p[(i, j)] - y[(i, j)];
                sq += e * e;
                ab += e.abs();
                n += 1.0;
            }
        }
    }
    let metric_gap = (table.mse - sq / n).abs().max((table.mae - ab / n).abs());

    let mut dtw_ok = true;
    for _ in 0..20 {
        let len = rng.random_range(5..40);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        dtw_ok &= dtw(&x, &x).unwrap() == 0.0 && dtw(&x, &y).unwrap() == dtw(&y, &x).unwrap();
    }
    let rbar_sum = stats.centered.sum().abs();

    let pass = pearson_gap <= 1e-12 && metric_gap <= 1e-12 && dtw_ok && rbar_sum <= 1e-12;
    gate.record(
        4,
        "oracle equivalence",
        pass,
        format!(
            "Pearson gap {pearson_gap:.1e}, MSE/MAE gap {metric_gap:.1e}, DTW identity+symmetry on 20 pairs {}, |sum R-bar| {rbar_sum:.1e}",
            if dtw_ok { "ok" } else { "violated" }
        ),
    );
}

fn coupled_channels(gate: &mut Gate) {
    let start = Instant::now();
    let ds = lagged();
    let base = base_config();
    let pcd = run_experiment(&ds, &base.with_mode(AttentionMode::Pcd)).unwrap();
    let ci = run_experiment(&ds, &base.with_mode(AttentionMode::Ci)).unwrap();
    let mcp = |out: &pcd_core::harness::RunOutcome| -> Vec<f64> {
        masked_channel_prediction(&out.model, &out.prepared.test, &ds.channel_names)
            .unwrap()
            .iter()
            .map(|r| r.loss)
            .collect()
    };
    let (pcd_mcp, ci_mcp) = (mcp(&pcd), mcp(&ci));
    let took = start.elapsed();
    println!(
        "      PCD test MSE {:?}, CI test MSE {:?}\n      PCD masked {:?}\n      CI masked  {:?}",
        pcd.report.mse(),
        ci.report.mse(),
        pcd_mcp,
        ci_mcp
    );

    let direction = pcd.report.mse() < ci.report.mse() && (1..4).all(|c| pcd_mcp[c] < ci_mcp[c]);
    let regression = close(pcd.report.mse(), frozen::PCD_TEST_MSE)
        && close(ci.report.mse(), frozen::CI_TEST_MSE)
        && (0..4).all(|c| close(pcd_mcp[c], frozen::PCD_MCP[c]) && close(ci_mcp[c], frozen::CI_MCP[c]));
    let reduction = 100.0 * (1.0 - pcd.report.mse() / ci.report.mse());
    let pass = direction && regression && took < Duration::from_secs(180);
    gate.record(
        5,
        "coupled-channel synthetic",
        pass,
        format!(
            "PCD MSE {:.6} < CI {:.6} ({reduction:.1}% lower); masked loss on channels 1-3 PCD [{:.4}, {:.4}, {:.4}] < CI [{:.4}, {:.4}, {:.4}]; frozen values {}; {:.1}s",
            pcd.report.mse(),
            ci.report.mse(),
            pcd_mcp[1],
            pcd_mcp[2],
            pcd_mcp[3],
            ci_mcp[1],
            ci_mcp[2],
            ci_mcp[3],
            if regression { "match" } else { "DIFFER" },
            took.as_secs_f64()
        ),
    );
}

fn missing_values(gate: &mut Gate) {
    let ds = lagged();
    let rows = robustness_sweep(&ds, &base_config(), &DEFAULT_MISSING_RATIOS).unwrap();
    let clean = &rows[0];
    let quarter = rows.iter().find(|r| r.ratio == 0.25).unwrap();
    println!(
        "      clean r {:?} MSE {:?}; 25% r {:?} MSE {:?}",
        clean.r_abs, clean.mse, quarter.r_abs, quarter.mse
    );
    let dr = (quarter.r_abs - clean.r_abs).abs();
    let degradation = quarter.mse / clean.mse - 1.0;
    let regression = close(clean.r_abs, frozen::CLEAN_R_ABS)
        && close(quarter.r_abs, frozen::MISSING_25_R_ABS)
        && close(clean.mse, frozen::CLEAN_MSE)
        && close(quarter.mse, frozen::MISSING_25_MSE);
    let pass = rows.len() == DEFAULT_MISSING_RATIOS.len() + 1 && dr <= 0.05 && degradation <= 0.15 && regression;
    gate.record(
        6,
        "missing-value robustness",
        pass,
        format!(
            "|r(|R|) change| at 25% missing {dr:.4} <= 0.05, MSE change {:+.2}% <= +15%, frozen values {}",
            100.0 * degradation,
            if regression { "match" } else { "DIFFER" }
        ),
    );
}

fn unseen_parameters(gate: &mut Gate) {
    let mut reg = ParamsRegistry::new();
    reg.register("a", DomainParams::scalar(1.0, 0.0), 0.1, TaskTag::Forecast).unwrap();
    reg.register("b", DomainParams::scalar(3.0, 2.0), 0.6, TaskTag::Forecast).unwrap();
    reg.register("c", DomainParams::scalar(-0.5, 1.5), 0.3, TaskTag::Classification).unwrap();
    let all_finite = [Strategy::AvgAll, Strategy::AvgForecast, Strategy::ClosestRbar].iter().all(|&s| {
        let (a, b) = select_unseen_params(&reg, s, 0.4).unwrap().as_scalar().unwrap();
        a.is_finite() && b.is_finite()
    });

    let mut single = ParamsRegistry::new();
    single.register("only", DomainParams::scalar(0.7311, -1.25), 0.2, TaskTag::Forecast).unwrap();
    let singleton = [Strategy::AvgAll, Strategy::AvgForecast, Strategy::ClosestRbar]
        .iter()
        .all(|&s| select_unseen_params(&single, s, 0.9).unwrap() == DomainParams::scalar(0.7311, -1.25));

    let mut pair = ParamsRegistry::new();
    pair.register("x", DomainParams::scalar(1.0, 0.0), 0.1, TaskTag::Forecast).unwrap();
    pair.register("y", DomainParams::scalar(3.0, 2.0), 0.2, TaskTag::Forecast).unwrap();
    let avg = select_unseen_params(&pair, Strategy::AvgAll, 0.0).unwrap();
    let avg_exact = avg == DomainParams::scalar(2.0, 1.0);

    gate.record(
        7,
        "unseen-parameter strategies",
        all_finite && singleton && avg_exact,
        format!(
            "all strategies finite: {all_finite}, singleton returned exactly: {singleton}, avg_all of (1,0),(3,2) = {:?}",
            avg.as_scalar().unwrap()
        ),
    );
}

fn pcd(args: &[&str], dir: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_pcd"))
        .args(args)
        .current_dir(dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    status.success()
}

fn cli_determinism(gate: &mut Gate) {
    let tmp = tempfile::tempdir().unwrap();
    let small = "lagged_copy,c=3,t=800,tau=2,noise=0.1,seed=3";
    let model_flags = ["--lookback", "48", "--horizon", "12", "--epochs", "2", "--seed", "5"];
    let mut failures = Vec::new();
    let mut compared = 0;
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let with = |cmd: &[&str], extra: &[&str]| -> Vec<String> {
            let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
            v.extend(["--synth-spec", small].iter().map(|s| s.to_string()));
            v.extend(extra.iter().map(|s| s.to_string()));
            v
        };
        let commands: Vec<Vec<String>> = vec![
            with(&["train", "--out", "train", "--registry", "registry.json"], &model_flags),
            with(&["eval", "--checkpoint", "train/model.ckpt", "--out", "eval.json"], &[]),
            with(&["mcp", "--checkpoint", "train/model.ckpt", "--out", "mcp.json"], &[]),
            with(&["analyze", "--checkpoint", "train/model.ckpt", "--cache", "cache.json", "--out", "analyze.json"], &[]),
            with(&["ablate", "--cells", "both:scalar,global:abs", "--out", "ablate.json"], &model_flags),
            with(&["robustness", "--ratios", "0.25", "--out", "robustness.json"], &model_flags),
            with(&["unseen-params", "--registry", "registry.json", "--strategy", "closest_rbar", "--out", "unseen.json"], &[]),
            vec!["gradcheck".into(), "--out".into(), "gradcheck.json".into()],
        ];
        for args in &commands {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            if !pcd(&args, &dir) {
                failures.push(format!("`pcd {}` failed", args.join(" ")));
            }
        }
    }
    let files = [
        "train/report.json",
        "train/history.json",
        "train/model.ckpt",
        "registry.json",
        "eval.json",
        "mcp.json",
        "analyze.json",
        "cache.json",
        "ablate.json",
        "robustness.json",
        "unseen.json",
        "gradcheck.json",
    ];
    for f in files {
        let a = std::fs::read(tmp.path().join("a").join(f));
        let b = std::fs::read(tmp.path().join("b").join(f));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => compared += 1,
            (Ok(_), Ok(_)) => failures.push(format!("{f} differs")),
            _ => failures.push(format!("{f} missing")),
        }
    }
    gate.record(
        8,
        "CLI determinism",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{compared} output files byte-identical across two runs of 8 commands")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut gate = Gate { results: Vec::new() };
    gradient_fidelity_check(&mut gate);
    mode_equivalences(&mut gate);
    cd_ratio_contract(&mut gate);
    oracle_equivalence(&mut gate);
    coupled_channels(&mut gate);
    missing_values(&mut gate);
    unseen_parameters(&mut gate);
    cli_determinism(&mut gate);
    let took = start.elapsed();
    gate.record(
        9,
        "suite runtime",
        took < Duration::from_secs(300),
        format!("{:.1}s < 300s", took.as_secs_f64()),
    );
    let failed: Vec<String> = gate
        .results
        .iter()
        .filter(|(_, _, pass)| !pass)
        .map(|(id, name, _)| format!("[{id}] {name}"))
        .collect();
    println!("{} of {} checks passed", gate.results.len() - failed.len(), gate.results.len());
    assert!(failed.is_empty(), "failed: {}", failed.join(", "));
}
