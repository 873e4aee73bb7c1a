use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use fwilab::geomodel::Family;
use fwilab::nn::{Checkpoint, CrfSettings};
use fwilab::pipeline::*;
use fwilab::Error;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { dims: (24, 24), train_size: 12, test_size: 4, out_dir: dir.to_path_buf(), ..Default::default() };
    cfg.acquisition = AcquisitionConfig::Even { sources: 2, receivers: 8, nt: 64 };
    cfg.network.width_divisor = 16;
    cfg.training.epochs = 2;
    cfg.training.batch_size = 4;
    cfg.training.validation_fraction = 0.25;
    cfg.crf.window = 3;
    cfg.crf.lambda1_grid = vec![0.5, 1.0];
    cfg.crf.lambda2_grid = vec![0.1];
    cfg.crf.search_steps = 2;
    cfg.crf.learn_steps = 2;
    cfg.crf.max_fit_models = 2;
    cfg.eval.dump_samples = 1;
    cfg.eval.scenario_models = 2;
    cfg
}

#[test]
fn gen_writes_configured_counts_and_dims() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { train_size: 4, test_size: 2, out_dir: dir.path().into(), ..Default::default() };
    cfg.acquisition = AcquisitionConfig::Even { sources: 3, receivers: 32, nt: 100 };
    let r = cmd_gen(&cfg).unwrap();
    let ds = Dataset::load(&r.train).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.header.model_dims, (50, 50));
    assert_eq!(ds.header.gather_dims, (3, 32, 100));
    assert_eq!(ds.header.family, Family::Flat);
    assert_eq!(Dataset::load(&r.test).unwrap().len(), 2);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r.manifest).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["train"]["records"], 4);
    // the stored model is exactly what the echoed spec regenerates
    let m = fwilab::geomodel::generate_model(&ds.records[1].spec).unwrap();
    assert_eq!(ds.model(1).grid().data(), m.grid().map(|v| v as f32 as f64).data());
}

#[test]
fn regeneration_is_byte_identical_across_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg_a = tiny(a.path());
    let cfg_b = ExperimentConfig { out_dir: b.path().into(), workers: Some(1), ..cfg_a.clone() };
    assert_eq!(cfg_a.hash(), cfg_b.hash());
    cmd_gen(&cfg_a).unwrap();
    with_workers(Some(1), || cmd_gen(&cfg_b)).unwrap().unwrap();
    for f in [TRAIN_FILE, TEST_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_and_test_specs_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_gen(&cfg).unwrap();
    let train = Dataset::load(&dir.path().join(TRAIN_FILE)).unwrap();
    let test = Dataset::load(&dir.path().join(TEST_FILE)).unwrap();
    let seeds: HashSet<u64> = train.records.iter().map(|r| r.spec.seed).collect();
    assert_eq!(seeds.len(), train.len());
    assert!(test.records.iter().all(|r| !seeds.contains(&r.spec.seed)));
}

#[test]
fn curved_gathers_are_subsampled_to_32_by_1000() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { train_size: 1, test_size: 1, out_dir: dir.path().into(), ..ExperimentConfig::full_scale(Family::Curved).unwrap() };
    let ds = build_split(&cfg, Split::Test).unwrap();
    assert_eq!(ds.header.gather_dims, (3, 32, 1000));
    assert_eq!(ds.header.model_dims, (100, 150));
    assert_eq!(ds.records[0].gather.len(), 3 * 32 * 1000);
    assert!((ds.header.dt - 2.0 * cfg.sim.dt).abs() < 1e-15);
}

#[test]
fn too_few_samples_for_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cmd_gen(&cfg).unwrap();
    cfg.training.batch_size = 10;
    match cmd_train(&cfg, TrainOptions::default()) {
        Err(Error::DatasetTooSmall { have: 9, need: 10 }) => {}
        other => panic!("expected DatasetTooSmall, got {other:?}"),
    }
}

#[test]
fn resume_continues_with_identical_state() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = ExperimentConfig { training: fwilab::pipeline::TrainingConfig { epochs: 3, ..tiny(a.path()).training }, ..tiny(a.path()) };
    cmd_gen(&full).unwrap();
    let straight = cmd_train(&full, TrainOptions::default()).unwrap();

    let mut first = ExperimentConfig { out_dir: b.path().into(), ..full.clone() };
    for f in [TRAIN_FILE, TEST_FILE] {
        fs::copy(a.path().join(f), b.path().join(f)).unwrap();
    }
    first.training.epochs = 1;
    cmd_train(&first, TrainOptions::default()).unwrap();
    let saved = Checkpoint::load(&b.path().join(LAST_CKPT)).unwrap();
    let reloaded = Checkpoint::load(&b.path().join(LAST_CKPT)).unwrap();
    assert_eq!(saved, reloaded);
    let resumed = cmd_train(&ExperimentConfig { out_dir: b.path().into(), ..full.clone() }, TrainOptions { resume: true }).unwrap();

    assert_eq!(straight.history, resumed.history);
    assert_eq!(resumed.history[1], saved.history[1]);
    let ca = Checkpoint::load(&a.path().join(LAST_CKPT)).unwrap();
    let cb = Checkpoint::load(&b.path().join(LAST_CKPT)).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(fs::read(a.path().join(LOSS_FILE)).unwrap(), fs::read(b.path().join(LOSS_FILE)).unwrap());
}

#[test]
fn residual_flag_changes_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.training.epochs = 0;
    cmd_gen(&cfg).unwrap();
    let plain = cmd_train(&cfg, TrainOptions::default()).unwrap();
    cfg.network.residual = true;
    let residual = cmd_train(&cfg, TrainOptions::default()).unwrap();
    assert!(residual.param_count > plain.param_count);
    // resuming under a different architecture is refused
    cfg.network.residual = false;
    assert!(matches!(cmd_train(&cfg, TrainOptions { resume: true }), Err(Error::InvalidArgument(_))));
}

#[test]
fn eval_crf_with_zero_weight_matches_plain_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg, TrainOptions::default()).unwrap();
    let fit = cmd_fit_crf(&cfg).unwrap();
    assert!(fit.settings.w >= 0.0);
    assert!(fit.val_mae_crf <= fit.val_mae_nn);

    let path = dir.path().join(BEST_CKPT);
    let mut ckpt = Checkpoint::load(&path).unwrap();
    ckpt.crf = Some(CrfSettings { w: 0.0, ..fit.settings });
    ckpt.save(&path).unwrap();
    let nn = cmd_eval(&cfg, EvalOptions::default()).unwrap();
    let crf = cmd_eval(&cfg, EvalOptions { crf: true, ..Default::default() }).unwrap();
    assert_eq!(nn.per_model, crf.per_model);
    assert_eq!(fs::read(&nn.metrics_path).unwrap(), fs::read(&crf.metrics_path).unwrap());
    assert!(dir.path().join("eval/nn_clean/profile_0.csv").exists());
    assert!(dir.path().join("eval/crf_clean/pred_0.pgm").exists());

    let noisy = cmd_eval(&cfg, EvalOptions { snr_db: Some(20.0), nn_audit: true, ..Default::default() }).unwrap();
    assert_ne!(noisy.per_model, nn.per_model);
    let again = cmd_eval(&cfg, EvalOptions { snr_db: Some(20.0), ..Default::default() }).unwrap();
    assert_eq!(noisy.per_model, again.per_model);
    let audit = fs::read_to_string(dir.path().join(NN_AUDIT_FILE)).unwrap();
    assert_eq!(audit.lines().count(), 1 + cfg.test_size);
}

#[test]
fn scenarios_report_every_suite() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.training.epochs = 1;
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg, TrainOptions::default()).unwrap();
    let reports = cmd_scenarios(&cfg).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["no_fault", "two_faults", "smooth"]);
    assert!(reports.iter().all(|r| r.crf.is_none()));
    let profile = fs::read_to_string(dir.path().join("scenarios/smooth/profile.csv")).unwrap();
    assert_eq!(profile.lines().next().unwrap(), "depth_m,truth,nn");
    assert_eq!(profile.lines().count(), 1 + cfg.dims.0);

    let models = scenario_models(&cfg).unwrap();
    assert!(models[0].1.iter().zip(&models[1].1).all(|(a, b)| a != b));
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = tiny(dir.path());
    cfg.train_size = 4;
    cfg.test_size = 1;
    cfg.save(&cfg_path).unwrap();
    let bin = env!("CARGO_BIN_EXE_fwilab");
    let out = Command::new(bin).args(["--config", cfg_path.to_str().unwrap(), "--seed", "9", "gen"]).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let expected = ExperimentConfig { seed: 9, ..cfg.clone() }.hash();
    assert!(stdout.contains(&expected), "{stdout}");
    assert_eq!(Dataset::load(&dir.path().join(TRAIN_FILE)).unwrap().len(), 4);

    // missing checkpoint: a clean error and a non-zero exit code
    let out = Command::new(bin).args(["--config", cfg_path.to_str().unwrap(), "eval"]).env("RUST_LOG", "off").output().unwrap();
    assert_eq!(out.status.code(), Some(18));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
