mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use args::RunArgs;
use pcd_core::chanmask::{evaluate_mask, select_unseen_params, ParamsRegistry, Strategy, TaskTag};
use pcd_core::chanstats::{cd_ratio, CorrCache, CorrStats, Metric};
use pcd_core::dataio::{chrono_split, Standardizer};
use pcd_core::forecaster::{load_checkpoint, save_checkpoint, ForecastModel};
use pcd_core::harness::{
    ablation_grid, ablation_run, evaluate, gradient_fidelity, masked_channel_prediction, prepare_for,
    robustness_sweep, run_experiment, write_json, AblationCell, EvalReport, ExperimentConfig, DEFAULT_MISSING_RATIOS,
};
use pcd_core::{Error, Matrix, Result};

#[derive(Parser)]
#[command(name = "pcd", version, about = "Channel-masked attention forecasting experiments")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forecaster and score it on the test split.
    Train(TrainCmd),
    /// Score a saved model.
    Eval(CheckpointCmd),
    /// Masked channel prediction with a saved model.
    Mcp(CheckpointCmd),
    /// Similarity statistics and CD ratios of a dataset.
    Analyze(AnalyzeCmd),
    /// Train every mask/composition cell at one seed.
    Ablate(AblateCmd),
    /// Train on increasingly gappy copies of a dataset.
    Robustness(RobustnessCmd),
    /// Domain parameters for a dataset without trained parameters.
    UnseenParams(UnseenCmd),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckCmd),
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for report.json, history.json and model.ckpt.
    #[arg(long)]
    out: PathBuf,
    /// Record the learned domain parameters in this registry file.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Task tag for the registry entry.
    #[arg(long, default_value = "forecast")]
    task: String,
    /// Registry name; defaults to the dataset name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct CheckpointCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset and split options; model options come from the checkpoint.
    #[command(flatten)]
    run: RunArgs,
    /// test or val.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Correlation cache file, created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Also report the mask of this saved model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Cells as `composition:mask` pairs, e.g. `both:scalar,local:ones`;
    /// defaults to the full grid.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    /// Skip the CI and CD baselines.
    #[arg(long)]
    no_baselines: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Missing-value ratios in [0, 1).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MISSING_RATIOS.to_vec())]
    ratios: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UnseenCmd {
    #[arg(long)]
    registry: PathBuf,
    /// avg_all, avg_forecast or closest_rbar.
    #[arg(long)]
    strategy: String,
    /// CD ratio of the target's centered similarity matrix; computed from
    /// the dataset options when omitted.
    #[arg(long)]
    target_rbar: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Largest acceptable relative error for the full model.
    #[arg(long, default_value_t = 1e-4)]
    model_tol: f64,
    /// Largest acceptable relative error for the mask pipeline.
    #[arg(long, default_value_t = 1e-6)]
    mask_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcd: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

type CliResult = std::result::Result<(), Box<dyn std::error::Error>>;

fn run(command: Command) -> CliResult {
    match command {
        Command::Train(cmd) => train_cmd(cmd),
        Command::Eval(cmd) => eval_cmd(cmd, false),
        Command::Mcp(cmd) => eval_cmd(cmd, true),
        Command::Analyze(cmd) => analyze_cmd(cmd),
        Command::Ablate(cmd) => ablate_cmd(cmd),
        Command::Robustness(cmd) => robustness_cmd(cmd),
        Command::UnseenParams(cmd) => unseen_cmd(cmd),
        Command::Gradcheck(cmd) => gradcheck_cmd(cmd),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    if let Some(path) = out {
        write_json(path, value)?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{} [{} windows of {}]: MSE {:.6}  MAE {:.6}", r.dataset, r.windows, r.split, r.mse(), r.mae());
    if let Some(c) = r.cd_ratio {
        println!("  mask CD ratio {c:.6}");
    }
    if let Some((a, b)) = r.alpha_beta {
        println!("  alpha {a:.6}  beta {b:.6}");
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config: &'a ExperimentConfig,
    channels: usize,
    parameters: usize,
    best_epoch: usize,
    test: &'a EvalReport,
}

fn train_cmd(cmd: TrainCmd) -> CliResult {
    let run = cmd.run.with_file()?;
    let ds = run.dataset()?;
    let cfg = run.experiment()?;
    let out = run_experiment(&ds, &cfg)?;
    fs::create_dir_all(&cmd.out)?;
    let report = TrainOutput {
        config: &cfg,
        channels: out.model.channels(),
        parameters: out.model.param_count(),
        best_epoch: out.history.best_epoch,
        test: &out.report,
    };
    write_json(&cmd.out.join("report.json"), &report)?;
    write_json(&cmd.out.join("history.json"), &out.history)?;
    save_checkpoint(&out.model, &cmd.out.join("model.ckpt"))?;
    print_report(&out.report);
    println!("  best epoch {} of {}", out.history.best_epoch, cfg.train.epochs);

    if let Some(path) = &cmd.registry {
        let (Some(params), Some(stats)) = (out.model.domain_params(), out.model.stats()) else {
            return Err("only PCD models with learned domain parameters can be registered".into());
        };
        let mut registry = ParamsRegistry::load_or_default(path)?;
        let name = cmd.name.unwrap_or_else(|| ds.name.clone());
        registry.register(&name, params, cd_ratio(&stats.centered)?, cmd.task.parse::<TaskTag>()?)?;
        registry.save(path)?;
        println!("  registered `{name}` in {}", path.display());
    }
    Ok(())
}

fn eval_cmd(cmd: CheckpointCmd, masked: bool) -> CliResult {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let run = cmd.run.with_file()?;
    let ds = run.dataset()?;
    if ds.channels() != model.channels() {
        return Err(format!(
            "model has {} channels, dataset `{}` has {}",
            model.channels(),
            ds.name,
            ds.channels()
        )
        .into());
    }
    let mut cfg = run.experiment()?;
    cfg.model = model.config().clone();
    let prepared = prepare_for(&ds, &cfg)?;
    let ws = match cmd.split.as_str() {
        "test" => &prepared.test,
        "val" => &prepared.val,
        other => return Err(format!("unknown split `{other}`, expected test or val").into()),
    };
    let mut report = evaluate(&model, &ds.name, ws)?;
    if masked {
        let table = masked_channel_prediction(&model, ws, &ds.channel_names)?;
        for row in &table {
            println!("masked {:>3} {:<16} loss {:.6}", row.channel, row.name, row.loss);
        }
        report.masked_channel = Some(table);
    } else {
        print_report(&report);
    }
    Ok(emit(cmd.out.as_deref(), &report)?)
}

#[derive(Serialize)]
struct AnalyzeReport {
    dataset: String,
    metric: Metric,
    channels: usize,
    source_rows: usize,
    raw: Vec<Vec<f64>>,
    similarity: Vec<Vec<f64>>,
    centered: Vec<Vec<f64>>,
    cd_ratio_similarity: f64,
    cd_ratio_centered: f64,
    mask: Option<MaskSummary>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct MaskSummary {
    label: String,
    cd_ratio: f64,
    values: Vec<Vec<f64>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn analyze_cmd(cmd: AnalyzeCmd) -> CliResult {
    let run = cmd.run.with_file()?;
    let ds = run.dataset()?;
    let metric = run.metric()?;
    let (train, _, _) = chrono_split(&ds, &run.split()?)?;
    let train = Standardizer::fit(&train.values)?.apply(&train.values);
    let stats = match &cmd.cache {
        Some(path) => {
            let mut cache = CorrCache::load_or_default(path)?;
            let (stats, hit) = cache.get_or_compute(&ds.name, metric, &train)?;
            info!("correlation cache {}", if hit { "hit" } else { "miss" });
            if !hit {
                cache.save(path)?;
            }
            stats
        }
        None => CorrStats::compute(metric, &train)?,
    };
    let mask = match &cmd.checkpoint {
        Some(path) => {
            let model: ForecastModel = load_checkpoint(path)?;
            let params = model.domain_params();
            let m = evaluate_mask(model.config().mask, &stats, params.as_ref())?;
            Some(MaskSummary {
                label: m.spec.label(),
                cd_ratio: m.cd_ratio,
                values: rows(&m.values),
            })
        }
        None => None,
    };
    let report = AnalyzeReport {
        dataset: ds.name.clone(),
        metric,
        channels: stats.channel_count,
        source_rows: stats.source_rows,
        raw: rows(&stats.raw),
        similarity: rows(&stats.abs),
        centered: rows(&stats.centered),
        cd_ratio_similarity: cd_ratio(&stats.abs)?,
        cd_ratio_centered: cd_ratio(&stats.centered)?,
        mask,
        warnings: stats.warnings.clone(),
    };
    println!("{} ({} channels, {metric} on {} training rows)", report.dataset, report.channels, report.source_rows);
    println!("  r(|R|) {:.6}  r(R-bar) {:.6}", report.cd_ratio_similarity, report.cd_ratio_centered);
    if let Some(m) = &report.mask {
        println!("  r({}) {:.6}", m.label, m.cd_ratio);
    }
    Ok(emit(cmd.out.as_deref(), &report)?)
}

fn parse_cell(s: &str) -> Result<AblationCell> {
    let (comp, mask) = s
        .split_once(':')
        .ok_or_else(|| Error::Contract(format!("ablation cell `{s}` is not composition:mask")))?;
    Ok(AblationCell {
        composition: comp.trim().parse()?,
        mask: mask.trim().parse()?,
    })
}

fn ablate_cmd(cmd: AblateCmd) -> CliResult {
    let run = cmd.run.with_file()?;
    let ds = run.dataset()?;
    let cfg = run.experiment()?;
    let cells = if cmd.cells.is_empty() {
        ablation_grid()
    } else {
        cmd.cells.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?
    };
    let table = ablation_run(&ds, &cfg, &cells, !cmd.no_baselines)?;
    for row in &table {
        let cd = row.cd_ratio.map(|c| format!("{c:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<24} MSE {:.6}  MAE {:.6}  r(M) {cd}", row.label, row.mse, row.mae);
    }
    Ok(emit(cmd.out.as_deref(), &table)?)
}

fn robustness_cmd(cmd: RobustnessCmd) -> CliResult {
    let run = cmd.run.with_file()?;
    let ds = run.dataset()?;
    let cfg = run.experiment()?;
    let table = robustness_sweep(&ds, &cfg, &cmd.ratios)?;
    for row in &table {
        println!("missing {:>5.2}: r(|R|) {:.6}  MSE {:.6}  MAE {:.6}", row.ratio, row.r_abs, row.mse, row.mae);
    }
    Ok(emit(cmd.out.as_deref(), &table)?)
}

#[derive(Serialize)]
struct UnseenReport {
    strategy: Strategy,
    target_rbar: f64,
    alpha: f64,
    beta: f64,
}

fn unseen_cmd(cmd: UnseenCmd) -> CliResult {
    let registry = ParamsRegistry::load(&cmd.registry)?;
    let strategy: Strategy = cmd.strategy.parse()?;
    let target_rbar = match cmd.target_rbar {
        Some(r) => r,
        None => {
            let run = cmd.run.with_file()?;
            let ds = run.dataset()?;
            let (train, _, _) = chrono_split(&ds, &run.split()?)?;
            let train = Standardizer::fit(&train.values)?.apply(&train.values);
            cd_ratio(&CorrStats::compute(run.metric()?, &train)?.centered)?
        }
    };
    let params = select_unseen_params(&registry, strategy, target_rbar)?;
    let (alpha, beta) = params
        .as_scalar()
        .ok_or_else(|| Error::Contract("selected parameters are not scalar".into()))?;
    println!("{strategy}: alpha {alpha:.6}  beta {beta:.6}");
    let report = UnseenReport {
        strategy,
        target_rbar,
        alpha,
        beta,
    };
    Ok(emit(cmd.out.as_deref(), &report)?)
}

fn gradcheck_cmd(cmd: GradcheckCmd) -> CliResult {
    let report = gradient_fidelity(cmd.seed, cmd.step)?;
    println!(
        "model: max relative error {:.3e} over {} entries{}",
        report.model_error,
        report.model_entries,
        report.worst_parameter.as_deref().map(|w| format!(" (worst {w})")).unwrap_or_default()
    );
    println!("mask:  max relative error {:.3e}", report.mask_error);
    emit(cmd.out.as_deref(), &report)?;
    if report.model_error >= cmd.model_tol || report.mask_error >= cmd.mask_tol {
        return Err(format!(
            "gradient check failed: model {:.3e} (limit {:.0e}), mask {:.3e} (limit {:.0e})",
            report.model_error, cmd.model_tol, report.mask_error, cmd.mask_tol
        )
        .into());
    }
    Ok(())
}
