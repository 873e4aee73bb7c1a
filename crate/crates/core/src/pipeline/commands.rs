use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{write_pgm, Dataset, DatasetHeader, DatasetRecord, ExperimentConfig};
use crate::crf::{grid_search_hyperparams, InferOptions, learn_w_batch, refine, validation_mae, CrfGraph, CrfParams, CrfSample, GridSearchResult, LearnOptions};
use crate::geomodel::{generate_model, nearest_neighbor, smooth_gradient_model, ModelGenSpec, Standardizer, VelocityModel};
use crate::metrics::{evaluate_set, metrics_csv, MetricReport};
use crate::nn::{loss_l2, lr_at_epoch, predict, AdamState, Checkpoint, CrfSettings, EpochStats, Mode, Network, NetworkSpec};
use crate::numerics::{SeededRng, Tensor};
use crate::wavesim::{add_noise, downsample, forward_model, AcquisitionGeometry, ShotGather};
use crate::{Error, Result};

/// Test specs start this far above train specs, so the seed ranges of the
/// two splits never overlap for any realistic size.
pub const TEST_SEED_OFFSET: u64 = 1 << 40;
pub const SCENARIO_SEED_OFFSET: u64 = 2 << 40;

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

pub const TRAIN_FILE: &str = "train.fwid";
pub const TEST_FILE: &str = "test.fwid";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const CRF_SEARCH_FILE: &str = "crf_search.csv";
pub const NN_AUDIT_FILE: &str = "nn_audit.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Generator seed of sample `index` in `split`.
pub fn spec_seed(seed: u64, split: Split, index: usize) -> u64 {
    let base = SeededRng::new(seed).next_u64();
    let offset = match split {
        Split::Train => 0,
        Split::Test => TEST_SEED_OFFSET,
    };
    base.wrapping_add(offset + index as u64)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Reorders a gather `(ns, nr, nt)` into the network layout `(nt, nr, ns)`
/// and appends it, scaled, to `out`.
pub fn push_nhwc<T: Copy + Into<f64>>(out: &mut Vec<f64>, gather: &[T], dims: (usize, usize, usize), scale: f64) {
    let (ns, nr, nt) = dims;
    debug_assert_eq!(gather.len(), ns * nr * nt);
    for t in 0..nt {
        for r in 0..nr {
            for s in 0..ns {
                out.push(gather[(s * nr + r) * nt + t].into() * scale);
            }
        }
    }
}

/// Stacks gathers into a `(n, nt, nr, ns)` batch.
pub fn nhwc_batch<T: Copy + Into<f64>>(gathers: &[&[T]], dims: (usize, usize, usize), scale: f64) -> Result<Tensor> {
    let (ns, nr, nt) = dims;
    let mut data = Vec::with_capacity(gathers.len() * ns * nr * nt);
    for g in gathers {
        if g.len() != ns * nr * nt {
            return Err(Error::ShapeMismatch(format!("gather of {} values, expected {ns}x{nr}x{nt}", g.len())));
        }
        push_nhwc(&mut data, g, dims, scale);
    }
    Tensor::new(vec![gathers.len(), nt, nr, ns], data)
}

/// Validation indices are the trailing `round(fraction * n)` records.
pub fn split_indices(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * fraction).round() as usize).min(n);
    ((0..n - n_val).collect(), (n - n_val..n).collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn network_spec(cfg: &ExperimentConfig) -> Result<NetworkSpec> {
    let (ns, nr, nt) = cfg.gather_dims()?;
    NetworkSpec::inversion_net((nt, nr, ns), cfg.dims, cfg.network.width_divisor, cfg.network.residual, cfg.network.leaky_slope)
}

/// Draws the generator spec for `seed`, on the experiment's grid spacing.
pub fn sample_spec(cfg: &ExperimentConfig, fault_count: usize, seed: u64) -> Result<ModelGenSpec> {
    let mut spec = ModelGenSpec::sample(cfg.family, cfg.dims, fault_count, seed)?;
    spec.dx = cfg.dx();
    Ok(spec)
}

/// Simulates the recorded (and possibly subsampled) gather for `model`.
pub fn simulate(cfg: &ExperimentConfig, geom: &AcquisitionGeometry, model: &VelocityModel) -> Result<ShotGather> {
    let g = forward_model(model, geom, &cfg.sim)?;
    match cfg.downsample {
        Some((r, nt)) => downsample(&g, r, nt),
        None => Ok(g),
    }
}

fn dataset_header(cfg: &ExperimentConfig, geom: &AcquisitionGeometry) -> Result<DatasetHeader> {
    let dims = cfg.gather_dims()?;
    let dt = geom.dt * geom.nt as f64 / dims.2 as f64;
    Ok(DatasetHeader { family: cfg.family, model_dims: cfg.dims, gather_dims: dims, dx: cfg.dx(), dt })
}

/// Generates one split in parallel; record order follows the sample index.
pub fn build_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let geom = cfg.geometry()?;
    let count = match split {
        Split::Train => cfg.train_size,
        Split::Test => cfg.test_size,
    };
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = sample_spec(cfg, cfg.fault_count, spec_seed(cfg.seed, split, i))?;
            let model = generate_model(&spec)?;
            let gather = simulate(cfg, &geom, &model)?;
            Ok(DatasetRecord::new(spec, &model, &gather))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dataset_header(cfg, &geom)?, records)
}

#[derive(Debug, Serialize)]
struct ManifestFile {
    file: String,
    records: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    train: ManifestFile,
    test: ManifestFile,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenReport {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
    pub config_hash: String,
}

/// Writes `train.fwid`, `test.fwid` and `manifest.json` into the output
/// directory.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();
    for (split, name) in [(Split::Train, TRAIN_FILE), (Split::Test, TEST_FILE)] {
        let ds = build_split(cfg, split)?;
        let bytes = ds.to_bytes()?;
        fs::write(out_path(cfg, name), &bytes)?;
        info!("wrote {} records to {name}", ds.len());
        files.push(ManifestFile { file: name.into(), records: ds.len(), sha256: sha256_hex(&bytes) });
    }
    let test = files.pop().expect("two splits");
    let train = files.pop().expect("two splits");
    let manifest = Manifest { config_hash: cfg.hash(), train, test, config: cfg };
    fs::write(out_path(cfg, MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(GenReport {
        train: out_path(cfg, TRAIN_FILE),
        test: out_path(cfg, TEST_FILE),
        manifest: out_path(cfg, MANIFEST_FILE),
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from `last.ckpt` instead of starting fresh.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub param_count: usize,
    pub best_val_mae: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |s| s.train_loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.train_loss)
    }
}

/// Training tensors drawn from a dataset.
struct Batches<'a> {
    ds: &'a Dataset,
    standardizer: Standardizer,
    scale: f64,
}

impl Batches<'_> {
    fn input(&self, idx: &[usize]) -> Result<Tensor> {
        let gathers: Vec<&[f32]> = idx.iter().map(|&i| self.ds.records[i].gather.as_slice()).collect();
        nhwc_batch(&gathers, self.ds.header.gather_dims, self.scale)
    }

    fn target(&self, idx: &[usize]) -> Result<Tensor> {
        let (nz, nx) = self.ds.header.model_dims;
        let st = self.standardizer;
        let data = idx.iter().flat_map(|&i| self.ds.records[i].model.iter().map(move |&v| (v as f64 - st.mean) / st.std)).collect();
        Tensor::new(vec![idx.len(), nz, nx, 1], data)
    }

    /// Mean |prediction - truth| in m/s over `idx`, in inference mode.
    fn mae(&self, net: &mut Network, idx: &[usize], chunk: usize) -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        let mut cells = 0usize;
        for part in idx.chunks(chunk.max(1)) {
            let pred = predict(net, &self.input(part)?, chunk)?;
            let truth = self.target(part)?;
            total += pred.data().iter().zip(truth.data()).map(|(p, t)| (p - t).abs()).sum::<f64>();
            cells += pred.len();
        }
        Ok(self.standardizer.std * total / cells as f64)
    }
}

/// Reciprocal RMS amplitude of the given records' gathers.
fn amplitude_scale(ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for &i in idx {
        sum += ds.records[i].gather.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        n += ds.records[i].gather.len();
    }
    if n == 0 || sum == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(1.0 / (sum / n as f64).sqrt())
}

fn mini_batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    // batch statistics need at least two samples
    order.chunks(batch_size).filter(|b| b.len() >= 2)
}

fn write_loss_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,lr,train_loss,val_mae\n");
    for h in history {
        let _ = writeln!(s, "{},{:.6e},{:.8e},{:.6}", h.epoch, h.lr, h.train_loss, h.val_mae);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Mini-batch Adam training on the training split minus its validation
/// tail. Epoch 0 in the history is the untrained network. Writes
/// `loss.csv`, `last.ckpt` every epoch and `best.ckpt` whenever validation
/// mae improves.
pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = Dataset::load(&out_path(cfg, TRAIN_FILE))?;
    let (train_idx, val_idx) = split_indices(ds.len(), cfg.training.validation_fraction);
    let bs = cfg.training.batch_size;
    if train_idx.len() < bs {
        return Err(Error::DatasetTooSmall { have: train_idx.len(), need: bs });
    }
    let spec = network_spec(cfg)?;

    let mut ckpt = if opts.resume {
        let ckpt = Checkpoint::load(&out_path(cfg, LAST_CKPT))?;
        if ckpt.network.spec() != &spec {
            return Err(Error::InvalidArgument("checkpoint network does not match the configured architecture".into()));
        }
        info!("resuming after epoch {}", ckpt.epoch);
        ckpt
    } else {
        let train_models: Vec<VelocityModel> = train_idx.iter().map(|&i| ds.model(i)).collect();
        let t = &cfg.training;
        Checkpoint {
            network: Network::new(spec, cfg.network.init_seed)?,
            optimizer: AdamState::new(t.beta1, t.beta2, t.adam_eps),
            standardizer: Standardizer::fit(&train_models)?,
            input_scale: amplitude_scale(&ds, &train_idx)?,
            epoch: 0,
            best_val_mae: f64::INFINITY,
            config_hash: cfg.hash(),
            crf: None,
            history: Vec::new(),
        }
    };
    ckpt.config_hash = cfg.hash();
    let data = Batches { ds: &ds, standardizer: ckpt.standardizer, scale: ckpt.input_scale };

    if ckpt.history.is_empty() {
        // forward passes on a copy so running statistics stay untouched
        let mut probe = ckpt.network.clone();
        let (mut total, mut count) = (0.0, 0usize);
        for b in mini_batches(&train_idx, bs) {
            let pred = probe.forward(&data.input(b)?, Mode::Train)?;
            total += loss_l2(&pred, &data.target(b)?)?.0 * b.len() as f64;
            count += b.len();
        }
        let val_mae = data.mae(&mut ckpt.network, &val_idx, bs)?;
        ckpt.history.push(EpochStats { epoch: 0, lr: lr_at_epoch(&cfg.training.lr, 0), train_loss: total / count as f64, val_mae });
        info!("epoch 0: loss {:.4e}, val mae {val_mae:.2}", total / count as f64);
    }
    let param_count = ckpt.network.param_count();
    info!("{param_count} trainable parameters");

    let shuffle = SeededRng::with_stream(cfg.seed, SHUFFLE_STREAM);
    for epoch in ckpt.epoch + 1..=cfg.training.epochs {
        let lr = lr_at_epoch(&cfg.training.lr, epoch - 1);
        let mut order = train_idx.clone();
        shuffle.child(epoch as u64).shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0usize);
        for b in mini_batches(&order, bs) {
            let (x, y) = (data.input(b)?, data.target(b)?);
            ckpt.network.zero_grad();
            let pred = ckpt.network.forward(&x, Mode::Train)?;
            let (loss, grad) = loss_l2(&pred, &y)?;
            ckpt.network.backward(&grad)?;
            ckpt.optimizer.step(&mut ckpt.network.params_mut(), lr)?;
            total += loss * b.len() as f64;
            count += b.len();
        }
        let val_mae = data.mae(&mut ckpt.network, &val_idx, bs)?;
        let stats = EpochStats { epoch, lr, train_loss: total / count as f64, val_mae };
        info!("epoch {epoch}: loss {:.4e}, val mae {val_mae:.2}", stats.train_loss);
        ckpt.history.push(stats);
        ckpt.epoch = epoch;
        let improved = val_mae < ckpt.best_val_mae || val_mae.is_nan();
        if improved && !val_mae.is_nan() {
            ckpt.best_val_mae = val_mae;
        }
        ckpt.save(&out_path(cfg, LAST_CKPT))?;
        if improved {
            ckpt.save(&out_path(cfg, BEST_CKPT))?;
        }
        write_loss_csv(&out_path(cfg, LOSS_FILE), &ckpt.history)?;
    }
    if !out_path(cfg, BEST_CKPT).exists() {
        ckpt.save(&out_path(cfg, BEST_CKPT))?;
    }
    ckpt.save(&out_path(cfg, LAST_CKPT))?;
    write_loss_csv(&out_path(cfg, LOSS_FILE), &ckpt.history)?;
    Ok(TrainReport { history: ckpt.history.clone(), param_count, best_val_mae: ckpt.best_val_mae })
}

/// Network predictions (velocity units) and, when requested, the decoder's
/// final feature maps `(nz, nx, c)` for each gather.
pub fn infer_models(ckpt: &mut Checkpoint, gathers: &[&[f64]], dims: (usize, usize, usize), dx: f64, chunk: usize, with_features: bool) -> Result<(Vec<VelocityModel>, Vec<Tensor>)> {
    let (nz, nx) = ckpt.network.spec().output;
    let mut models = Vec::with_capacity(gathers.len());
    let mut features = Vec::new();
    for part in gathers.chunks(chunk.max(1)) {
        let x = nhwc_batch(part, dims, ckpt.input_scale)?;
        let (pred, feats) = if with_features {
            let (p, f) = ckpt.network.forward_with_features(&x, Mode::Eval)?;
            (p, Some(f))
        } else {
            (ckpt.network.forward(&x, Mode::Eval)?, None)
        };
        for (k, p) in pred.data().chunks(nz * nx).enumerate() {
            let t = Tensor::new(vec![nz, nx], p.to_vec())?;
            models.push(ckpt.standardizer.destandardize(&t, dx)?);
            if let Some(f) = &feats {
                let c = f.shape()[3];
                let per = nz * nx * c;
                features.push(Tensor::new(vec![nz, nx, c], f.data()[k * per..(k + 1) * per].to_vec())?);
            }
        }
    }
    Ok((models, features))
}

/// Inverts one gather with a trained checkpoint. With `crf` set, the
/// checkpoint's CRF refinement is applied using those inference options.
pub fn invert_gather(ckpt: &mut Checkpoint, gather: &ShotGather, dx: f64, crf: Option<&InferOptions>) -> Result<VelocityModel> {
    let (nt, nr, ns) = ckpt.network.spec().input;
    if gather.dims() != (ns, nr, nt) {
        return Err(Error::ShapeMismatch(format!("gather {:?} for a network expecting {:?}", gather.dims(), (ns, nr, nt))));
    }
    let data = gather.data().data();
    let (mut models, features) = infer_models(ckpt, &[data], (ns, nr, nt), dx, 1, crf.is_some())?;
    let pred = models.pop().expect("one input");
    match crf {
        None => Ok(pred),
        Some(infer) => {
            let s = ckpt.crf.ok_or_else(|| Error::InvalidArgument("checkpoint has no CRF settings; run fit-crf first".into()))?;
            let params = CrfParams::new(s.w, s.lambda1, s.lambda2)?;
            refine(&pred, &features[0], s.window, &params, &ckpt.standardizer, infer)
        }
    }
}

fn record_gathers(ds: &Dataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| ds.records[i].gather.iter().map(|&v| v as f64).collect()).collect()
}

fn as_slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfFitReport {
    pub settings: CrfSettings,
    pub search: GridSearchResult,
    /// Validation mae in m/s without and with the fitted refinement.
    pub val_mae_nn: f64,
    pub val_mae_crf: f64,
}

/// Fits the CRF on the validation tail of the training split: grid search
/// over the bandwidths, then further ascent on `w` at the best pair. The
/// result is stored in `best.ckpt`.
pub fn cmd_fit_crf(cfg: &ExperimentConfig) -> Result<CrfFitReport> {
    cfg.validate()?;
    let ckpt_path = out_path(cfg, BEST_CKPT);
    let mut ckpt = Checkpoint::load(&ckpt_path)?;
    let ds = Dataset::load(&out_path(cfg, TRAIN_FILE))?;
    let (_, val_idx) = split_indices(ds.len(), cfg.training.validation_fraction);
    let fit_idx: Vec<usize> = val_idx.into_iter().take(cfg.crf.max_fit_models).collect();
    if fit_idx.is_empty() {
        return Err(Error::DatasetTooSmall { have: 0, need: 1 });
    }
    let gathers = record_gathers(&ds, &fit_idx);
    let (preds, features) = infer_models(&mut ckpt, &as_slices(&gathers), ds.header.gather_dims, cfg.dx(), cfg.training.batch_size, true)?;
    let st = ckpt.standardizer;
    let samples = fit_idx
        .par_iter()
        .zip(preds.par_iter().zip(features.par_iter()))
        .map(|(&i, (pred, feat))| {
            let graph = CrfGraph::grid(feat, cfg.crf.window)?;
            let z = st.standardize(pred)?.into_data();
            let y = st.standardize(&ds.model(i))?.into_data();
            CrfSample::new(graph, z, y)
        })
        .collect::<Result<Vec<_>>>()?;

    let edges: usize = samples.iter().map(|s| s.graph.edge_count()).sum();
    let step_size = cfg.crf.step_size / edges.max(1) as f64;
    let infer = cfg.crf.infer_options();
    let search_opts = LearnOptions { steps: cfg.crf.search_steps, step_size, infer };
    let search = grid_search_hyperparams(&samples, &cfg.crf.lambda1_grid, &cfg.crf.lambda2_grid, &search_opts)?;
    let learn_opts = LearnOptions { steps: cfg.crf.learn_steps, ..search_opts };
    let mut params = learn_w_batch(&samples, &search.best, &learn_opts)?;

    let identity = CrfParams { w: 0.0, ..params };
    let mae_nn = validation_mae(&samples, &identity, &infer)?;
    let mut mae_crf = validation_mae(&samples, &params, &infer)?;
    if mae_crf > mae_nn {
        info!("fitted w = {:.4} raises validation mae; keeping w = 0", params.w);
        params = identity;
        mae_crf = mae_nn;
    }
    let settings = CrfSettings { window: cfg.crf.window, lambda1: params.lambda1, lambda2: params.lambda2, w: params.w };
    info!("CRF: w {:.4}, lambda1 {}, lambda2 {}", settings.w, settings.lambda1, settings.lambda2);
    ckpt.crf = Some(settings);
    ckpt.save(&ckpt_path)?;

    let mut table = String::from("lambda1,lambda2,w,val_mae_std\n");
    for (l1, l2, w, mae) in &search.table {
        let _ = writeln!(table, "{l1},{l2},{w:.8e},{mae:.8e}");
    }
    fs::write(out_path(cfg, CRF_SEARCH_FILE), table)?;
    Ok(CrfFitReport { settings, search, val_mae_nn: mae_nn * st.std, val_mae_crf: mae_crf * st.std })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    pub crf: bool,
    /// Additive noise level; `None` evaluates clean gathers.
    pub snr_db: Option<f64>,
    pub nn_audit: bool,
}

impl EvalOptions {
    /// File-name tag such as `nn_clean` or `crf_snr20`.
    pub fn tag(&self) -> String {
        let model = if self.crf { "crf" } else { "nn" };
        match self.snr_db {
            Some(s) => format!("{model}_snr{s}"),
            None => format!("{model}_clean"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tag: String,
    pub per_model: Vec<MetricReport>,
    pub aggregate: MetricReport,
    pub metrics_path: PathBuf,
}

/// Refines each prediction with the checkpoint's CRF settings.
fn refine_all(ckpt: &Checkpoint, cfg: &ExperimentConfig, preds: &[VelocityModel], features: &[Tensor]) -> Result<Vec<VelocityModel>> {
    let s = ckpt.crf.ok_or_else(|| Error::InvalidArgument("checkpoint has no CRF settings; run fit-crf first".into()))?;
    let params = CrfParams::new(s.w, s.lambda1, s.lambda2)?;
    let infer = cfg.crf.infer_options();
    preds
        .par_iter()
        .zip(features.par_iter())
        .map(|(p, f)| refine(p, f, s.window, &params, &ckpt.standardizer, &infer))
        .collect()
}

fn grid_csv(m: &VelocityModel) -> String {
    let mut s = String::new();
    for z in 0..m.nz() {
        let row: Vec<String> = (0..m.nx()).map(|x| format!("{:.3}", m.at(z, x))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Velocity against depth at column `x` for the truth and each labelled
/// prediction.
pub fn profile_csv(truth: &VelocityModel, preds: &[(&str, &VelocityModel)], x: usize) -> String {
    let mut s = String::from("depth_m,truth");
    for (label, _) in preds {
        let _ = write!(s, ",{label}");
    }
    s.push('\n');
    for z in 0..truth.nz() {
        let _ = write!(s, "{:.3},{:.3}", z as f64 * truth.dx(), truth.at(z, x));
        for (_, p) in preds {
            let _ = write!(s, ",{:.3}", p.at(z, x));
        }
        s.push('\n');
    }
    s
}

fn dump_sample(dir: &Path, i: usize, truth: &VelocityModel, pred: &VelocityModel, range: (f64, f64), column: usize, label: &str) -> Result<()> {
    fs::write(dir.join(format!("pred_{i}.csv")), grid_csv(pred))?;
    write_pgm(&dir.join(format!("pred_{i}.pgm")), pred.grid(), range.0, range.1)?;
    write_pgm(&dir.join(format!("truth_{i}.pgm")), truth.grid(), range.0, range.1)?;
    fs::write(dir.join(format!("profile_{i}.csv")), profile_csv(truth, &[(label, pred)], column))?;
    Ok(())
}

/// Evaluates `best.ckpt` on the test split. Writes
/// `eval/metrics_<tag>.csv` and per-sample dumps under `eval/<tag>/`.
pub fn cmd_eval(cfg: &ExperimentConfig, opts: EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let mut ckpt = Checkpoint::load(&out_path(cfg, BEST_CKPT))?;
    let ds = Dataset::load(&out_path(cfg, TEST_FILE))?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut gathers = record_gathers(&ds, &idx);
    if let Some(snr) = opts.snr_db {
        let noise = SeededRng::with_stream(cfg.seed, NOISE_STREAM);
        let (ns, nr, nt) = ds.header.gather_dims;
        gathers = gathers
            .into_par_iter()
            .enumerate()
            .map(|(i, g)| {
                let clean = ShotGather::new(Tensor::new(vec![ns, nr, nt], g)?, ds.header.dt)?;
                Ok(add_noise(&clean, snr, &mut noise.child(i as u64))?.into_data().into_data())
            })
            .collect::<Result<Vec<_>>>()?;
    }
    let (mut preds, features) = infer_models(&mut ckpt, &as_slices(&gathers), ds.header.gather_dims, cfg.dx(), cfg.training.batch_size, opts.crf)?;
    if opts.crf {
        preds = refine_all(&ckpt, cfg, &preds, &features)?;
    }
    let truths = ds.models();
    let (per_model, aggregate) = evaluate_set(&preds, &truths)?;

    let tag = opts.tag();
    let eval_dir = out_path(cfg, "eval");
    let dump_dir = eval_dir.join(&tag);
    fs::create_dir_all(&dump_dir)?;
    let metrics_path = eval_dir.join(format!("metrics_{tag}.csv"));
    fs::write(&metrics_path, metrics_csv(&per_model, &aggregate))?;
    let range = cfg.family.velocity_range();
    for i in 0..cfg.eval.dump_samples.min(preds.len()) {
        dump_sample(&dump_dir, i, &truths[i], &preds[i], range, cfg.profile_column(), &tag)?;
    }
    info!("{tag}: mae {:.3} m/s over {} models", aggregate.mae, preds.len());
    if opts.nn_audit {
        cmd_nn_audit(cfg)?;
    }
    Ok(EvalReport { tag, per_model, aggregate, metrics_path })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMatch {
    pub test_index: usize,
    pub train_index: usize,
    pub distance: f64,
}

/// Nearest training model for every test model, written to
/// `nn_audit.csv`.
pub fn cmd_nn_audit(cfg: &ExperimentConfig) -> Result<Vec<NeighborMatch>> {
    let train = Dataset::load(&out_path(cfg, TRAIN_FILE))?.models();
    let test = Dataset::load(&out_path(cfg, TEST_FILE))?.models();
    let matches = test
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let (j, d) = nearest_neighbor(q, &train)?;
            Ok(NeighborMatch { test_index: i, train_index: j, distance: d })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = String::from("test_index,train_index,distance,rms_per_cell\n");
    let cells = (cfg.dims.0 * cfg.dims.1) as f64;
    for m in &matches {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", m.test_index, m.train_index, m.distance, m.distance / cells.sqrt());
    }
    fs::write(out_path(cfg, NN_AUDIT_FILE), s)?;
    Ok(matches)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub nn: MetricReport,
    pub crf: Option<MetricReport>,
}

/// Models for the generalization suites: no faults, two faults, and one
/// depth-graded smooth model.
pub fn scenario_models(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, Vec<VelocityModel>)>> {
    let base = SeededRng::new(cfg.seed).next_u64().wrapping_add(SCENARIO_SEED_OFFSET);
    let faulted = |faults: usize, offset: u64| -> Result<Vec<VelocityModel>> {
        (0..cfg.eval.scenario_models)
            .map(|k| generate_model(&sample_spec(cfg, faults, base.wrapping_add(offset + k as u64))?))
            .collect()
    };
    let (top, bottom) = cfg.eval.smooth_velocity;
    Ok(vec![
        ("no_fault", faulted(0, 0)?),
        ("two_faults", faulted(2, 1 << 20)?),
        ("smooth", vec![smooth_gradient_model(cfg.dims, cfg.dx(), top, bottom)]),
    ])
}

/// Simulates, predicts and scores each scenario; refined scores are added
/// when the checkpoint carries CRF settings. Outputs go to
/// `scenarios/<name>/`.
pub fn cmd_scenarios(cfg: &ExperimentConfig) -> Result<Vec<ScenarioReport>> {
    cfg.validate()?;
    let mut ckpt = Checkpoint::load(&out_path(cfg, BEST_CKPT))?;
    let geom = cfg.geometry()?;
    let dims = cfg.gather_dims()?;
    let mut reports = Vec::new();
    for (name, truths) in scenario_models(cfg)? {
        let gathers = truths
            .par_iter()
            .map(|m| Ok(simulate(cfg, &geom, m)?.into_data().into_data()))
            .collect::<Result<Vec<_>>>()?;
        let with_crf = ckpt.crf.is_some();
        let (preds, features) = infer_models(&mut ckpt, &as_slices(&gathers), dims, cfg.dx(), cfg.training.batch_size, with_crf)?;
        let dir = out_path(cfg, "scenarios").join(name);
        fs::create_dir_all(&dir)?;
        let (per, nn) = evaluate_set(&preds, &truths)?;
        fs::write(dir.join("metrics_nn.csv"), metrics_csv(&per, &nn))?;
        let refined = if with_crf { Some(refine_all(&ckpt, cfg, &preds, &features)?) } else { None };
        let crf = match &refined {
            Some(r) => {
                let (per, agg) = evaluate_set(r, &truths)?;
                fs::write(dir.join("metrics_crf.csv"), metrics_csv(&per, &agg))?;
                Some(agg)
            }
            None => None,
        };
        let mut columns = vec![("nn", &preds[0])];
        if let Some(r) = &refined {
            columns.push(("crf", &r[0]));
        }
        fs::write(dir.join("profile.csv"), profile_csv(&truths[0], &columns, cfg.profile_column()))?;
        let (lo, hi) = cfg.family.velocity_range();
        write_pgm(&dir.join("truth_0.pgm"), truths[0].grid(), lo, hi)?;
        write_pgm(&dir.join("pred_0.pgm"), preds[0].grid(), lo, hi)?;
        info!("scenario {name}: mae {:.3} m/s", nn.mae);
        reports.push(ScenarioReport { name: name.into(), nn, crf });
    }
    Ok(reports)
}
