use super::*;
use crate::chanmask::MaskSpec;
use crate::dataio::RawDataset;
use crate::error::Error;
use crate::forecaster::Composition;

fn small_data(channels: usize, noise: f64) -> RawDataset {
    synth_generate(&SynthSpec::lagged_copy(channels, 400, 2, noise, 5)).unwrap()
}

fn small_config(mode: AttentionMode, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            lookback: 24,
            horizon: 8,
            d_model: 8,
            heads: 2,
            mode,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs,
            batch_size: 16,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            seed: 3,
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let ds = small_data(3, 0.1);
    let mut cfg = small_config(AttentionMode::Pcd, 3);
    cfg.train.adam.lr = 0.0;
    let prepared = prepare_for(&ds, &cfg).unwrap();
    let model = init_model(&prepared, &cfg).unwrap();
    let before = model.param_hash();
    let (trained, history) = train(model, &prepared.train, Some(&prepared.val), &cfg.train).unwrap();
    assert_eq!(trained.param_hash(), before);
    let val: Vec<f64> = history.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    assert!(val.windows(2).all(|w| w[0] == w[1]));
    assert!(history.epochs.iter().all(|e| e.alpha_beta == Some((1.0, 0.0))));
}

#[test]
fn training_is_deterministic() {
    let ds = small_data(3, 0.1);
    let cfg = small_config(AttentionMode::Pcd, 2);
    let a = run_experiment(&ds, &cfg).unwrap();
    let b = run_experiment(&ds, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.report, b.report);
    assert_eq!(a.model.param_hash(), b.model.param_hash());
}

#[test]
fn train_loss_decreases_on_noiseless_data() {
    let ds = small_data(3, 0.0);
    let out = run_experiment(&ds, &small_config(AttentionMode::Pcd, 3)).unwrap();
    let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn keeps_best_validation_epoch() {
    let ds = small_data(3, 0.1);
    let out = run_experiment(&ds, &small_config(AttentionMode::Cd, 4)).unwrap();
    let h = &out.history;
    let best = h.epochs[h.best_epoch - 1].val_loss.unwrap();
    assert!(h.epochs.iter().all(|e| e.val_loss.unwrap() >= best));
    let val = evaluate(&out.model, "x", &out.prepared.val).unwrap();
    assert_eq!(val.mse(), best);
}

#[test]
fn train_without_validation_keeps_last_epoch() {
    let ds = small_data(2, 0.1);
    let cfg = small_config(AttentionMode::Ci, 2);
    let prepared = prepare_for(&ds, &cfg).unwrap();
    let model = init_model(&prepared, &cfg).unwrap();
    let (_, history) = train(model, &prepared.train, None, &cfg.train).unwrap();
    assert_eq!(history.best_epoch, 2);
    assert!(history.epochs.iter().all(|e| e.val_loss.is_none() && e.alpha_beta.is_none()));
}

#[test]
fn invalid_train_config() {
    let ds = small_data(2, 0.1);
    let mut cfg = small_config(AttentionMode::Ci, 0);
    assert!(matches!(run_experiment(&ds, &cfg), Err(Error::Contract(_))));
    cfg.train.epochs = 1;
    cfg.train.adam.lr = -1.0;
    assert!(run_experiment(&ds, &cfg).is_err());
}

#[test]
fn diverging_training_reports_epoch_and_batch() {
    let ds = small_data(2, 0.1);
    let mut cfg = small_config(AttentionMode::Cd, 1);
    cfg.train.adam.lr = 1e300;
    cfg.model.instance_norm = false;
    match run_experiment(&ds, &cfg) {
        Err(Error::Numeric { context }) => assert!(context.contains("epoch 1, batch 2"), "{context}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn report_averages_are_exact_means() {
    let ds = small_data(3, 0.1);
    let out = run_experiment(&ds, &small_config(AttentionMode::Pcd, 1)).unwrap();
    let e = &out.report.errors;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((e.mse - mean(&e.mse_per_step)).abs() < 1e-12);
    assert!((e.mae - mean(&e.mae_per_step)).abs() < 1e-12);
    let r = out.report.cd_ratio.unwrap();
    assert!(r > 0.0 && r < 1.0);
}

#[test]
fn masked_channel_prediction_leaves_model_untouched() {
    let ds = small_data(3, 0.1);
    let out = run_experiment(&ds, &small_config(AttentionMode::Pcd, 1)).unwrap();
    let before = out.model.param_hash();
    let table = masked_channel_prediction(&out.model, &out.prepared.test, &ds.channel_names).unwrap();
    assert_eq!(out.model.param_hash(), before);
    assert_eq!(table.len(), 3);
    assert!(table.iter().all(|row| row.loss.is_finite() && row.loss > 0.0));
    assert_eq!(table[1].name, ds.channel_names[1]);
}

#[test]
fn ci_masked_forecast_ignores_other_channels() {
    let ds = small_data(3, 0.1);
    let out = run_experiment(&ds, &small_config(AttentionMode::Ci, 1)).unwrap();
    let a = masked_channel_prediction(&out.model, &out.prepared.test, &ds.channel_names).unwrap();
    let scrambled = out.prepared.test.map_series(|s| {
        Matrix::from_fn(s.rows(), s.cols(), |i, j| if j == 0 { s[(i, j)] } else { (i as f64).sin() })
    });
    let b = masked_channel_prediction(&out.model, &scrambled, &ds.channel_names).unwrap();
    assert_eq!(a[0].loss, b[0].loss);
}

#[test]
fn masked_channel_prediction_needs_two_channels() {
    let ds = synth_generate(&"independent,c=1,t=400,seed=1".parse::<SynthSpec>().unwrap()).unwrap();
    let cfg = small_config(AttentionMode::Ci, 1);
    let out = run_experiment(&ds, &cfg).unwrap();
    let err = masked_channel_prediction(&out.model, &out.prepared.test, &ds.channel_names);
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn ones_local_cell_matches_cd() {
    let ds = small_data(3, 0.1);
    let cfg = small_config(AttentionMode::Cd, 2);
    let cell = AblationCell {
        mask: MaskSpec::Ones,
        composition: Composition::LocalOnly,
    };
    let rows = ablation_run(&ds, &cfg, &[cell], true).unwrap();
    assert_eq!(rows.len(), 3);
    let (cd, cell) = (&rows[1], &rows[2]);
    assert_eq!(cd.label, "cd");
    assert!((cd.mse - cell.mse).abs() < 1e-12);
    assert!((cd.mae - cell.mae).abs() < 1e-12);
}

#[test]
fn ablation_grid_covers_every_cell() {
    let grid = ablation_grid();
    assert_eq!(grid.len(), 15);
    let labels: std::collections::BTreeSet<String> =
        grid.iter().map(|c| format!("{}+{}", c.composition, c.mask)).collect();
    assert_eq!(labels.len(), 15);
}

#[test]
fn robustness_table_shape() {
    let ds = small_data(3, 0.1);
    let cfg = small_config(AttentionMode::Pcd, 1);
    let rows = robustness_sweep(&ds, &cfg, &[0.1, 0.3]).unwrap();
    assert_eq!(rows.len(), 3);
    let clean = run_experiment(&ds, &cfg).unwrap();
    assert_eq!(rows[0].ratio, 0.0);
    assert_eq!(rows[0].mse, clean.report.mse());
    assert!(robustness_sweep(&ds, &cfg, &[1.0]).is_err());
}

#[test]
fn report_file_is_reproducible() {
    let ds = small_data(2, 0.1);
    let out = run_experiment(&ds, &small_config(AttentionMode::Pcd, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a/report.json"), dir.path().join("b.json"));
    write_json(&a, &out.report).unwrap();
    write_json(&b, &out.report).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back: EvalReport = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(back, out.report);
}
