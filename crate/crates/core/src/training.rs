//! Two-phase training: the auxiliary network is fitted first on every batch,
//! then encoder and decoder take one step on `ELBO + λ·MI` with Q frozen.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{kv_map, parse_kv, parse_list, parse_value, render_list};
use crate::data::{batch_iterator, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::networks::{init_params, Activation, Arch, LatentSpec, ModelParams};
use crate::objectives::{
    check_lambda, forward, mi_lower_bound_estimate, objective_nodes, per_sample_mi, CodeMode, MiEstimateConfig, Noise,
    ObjectiveBreakdown,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{Purpose, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "step,epoch,elbo,recon_ll,kl_gauss,kl_cat,mi_term,mi_bound_eval,lambda";

/// Posterior max-probability above which a categorical code counts as saturated.
const SATURATION: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    Gaussian,
    Joint,
}

impl LatentMode {
    /// Default latent layout for each mode: 32 Gaussian dims with `(z₁, z₂)`
    /// targeted, or 16 Gaussian dims plus a 10-way code.
    pub fn default_spec(self) -> LatentSpec {
        match self {
            Self::Gaussian => LatentSpec::gaussian(32, vec![0, 1]),
            Self::Joint => LatentSpec::joint(16, 10, 0.67),
        }
    }
}

impl std::str::FromStr for LatentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "joint" => Ok(Self::Joint),
            other => Err(Error::config(format!("unknown latent mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LatentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub spec: LatentSpec,
    pub arch: Arch,
    pub lambda: f64,
    pub lr: f64,
    pub lr_q: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Q-only Adam steps per batch before the encoder/decoder step.
    pub q_steps: usize,
    /// Fitting steps of the per-epoch fresh-Q bound; 0 disables it.
    pub eval_q_steps: usize,
    /// Images drawn from the head of the training set for the per-epoch bound.
    pub eval_pool: usize,
    /// Held-out part of `eval_pool` the per-epoch bound is reported on.
    pub eval_samples: usize,
    /// Train on the first `n` images only.
    pub train_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            spec: LatentMode::Joint.default_spec(),
            arch: Arch::default(),
            lambda: 1.0,
            lr: 1e-3,
            lr_q: 1e-3,
            adam: AdamConfig::default(),
            batch_size: 128,
            epochs: 20,
            seed: 0,
            q_steps: 1,
            eval_q_steps: 2000,
            eval_pool: 10_000,
            eval_samples: 2000,
            train_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn mode(&self) -> LatentMode {
        if self.spec.is_joint() {
            LatentMode::Joint
        } else {
            LatentMode::Gaussian
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        self.spec.validate()?;
        if !(self.lr > 0.0) || !(self.lr_q > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !self.spec.is_joint() && !self.spec.has_continuous_target() && (self.lambda > 0.0 || self.q_steps > 0) {
            return Err(Error::config("pure Gaussian runs need mi_indices for the MI term"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let s = &self.spec;
        let a = &self.arch;
        let mut out: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.to_string()),
            ("latent", self.mode().to_string()),
            ("gauss_dim", s.gauss_dim.to_string()),
            ("mi_indices", render_list(&s.mi_indices)),
            ("cat_k", s.cat_k.map_or(String::new(), |k| k.to_string())),
            ("tau", s.tau.to_string()),
            ("input_dim", a.input_dim.to_string()),
            ("enc_hidden", render_list(&a.enc_hidden)),
            ("dec_hidden", render_list(&a.dec_hidden)),
            ("q_hidden", render_list(&a.q_hidden)),
            ("activation", a.activation.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_q", self.lr_q.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("q_steps", self.q_steps.to_string()),
            ("eval_q_steps", self.eval_q_steps.to_string()),
            ("eval_pool", self.eval_pool.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
        ];
        out.push(("train_limit", self.train_limit.map_or(String::new(), |n| n.to_string())));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies `key=value` overrides. `latent` resets the latent layout to the
    /// mode default and is applied before every other key.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let map = kv_map(pairs);
        if let Some(mode) = map.get("latent") {
            let mode: LatentMode = mode.parse()?;
            let tau = self.spec.tau;
            self.spec = mode.default_spec();
            self.spec.tau = tau;
        }
        for (&key, &value) in &map {
            match key {
                "latent" => {}
                "dataset" => self.dataset = value.parse()?,
                "gauss_dim" => self.spec.gauss_dim = parse_value(key, value)?,
                "mi_indices" => self.spec.mi_indices = parse_list(key, value)?,
                "cat_k" => {
                    self.spec.cat_k = if value.is_empty() {
                        None
                    } else {
                        Some(parse_value(key, value)?)
                    }
                }
                "tau" => self.spec.tau = parse_value(key, value)?,
                "input_dim" => self.arch.input_dim = parse_value(key, value)?,
                "enc_hidden" => self.arch.enc_hidden = parse_list(key, value)?,
                "dec_hidden" => self.arch.dec_hidden = parse_list(key, value)?,
                "q_hidden" => self.arch.q_hidden = parse_list(key, value)?,
                "activation" => self.arch.activation = value.parse::<Activation>()?,
                "lambda" => self.lambda = parse_value(key, value)?,
                "lr" => self.lr = parse_value(key, value)?,
                "lr_q" => self.lr_q = parse_value(key, value)?,
                "beta1" => self.adam.beta1 = parse_value(key, value)?,
                "beta2" => self.adam.beta2 = parse_value(key, value)?,
                "adam_eps" => self.adam.eps = parse_value(key, value)?,
                "batch" => self.batch_size = parse_value(key, value)?,
                "epochs" => self.epochs = parse_value(key, value)?,
                "seed" => self.seed = parse_value(key, value)?,
                "q_steps" => self.q_steps = parse_value(key, value)?,
                "eval_q_steps" => self.eval_q_steps = parse_value(key, value)?,
                "eval_pool" => self.eval_pool = parse_value(key, value)?,
                "eval_samples" => self.eval_samples = parse_value(key, value)?,
                "train_limit" => {
                    self.train_limit = if value.is_empty() {
                        None
                    } else {
                        Some(parse_value(key, value)?)
                    }
                }
                other => return Err(Error::config(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&parse_kv(&text)?)
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub breakdown: ObjectiveBreakdown,
    /// Fresh-Q bound, filled on the last step of an epoch.
    pub mi_bound_eval: Option<f64>,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            b.elbo(),
            b.recon_ll,
            b.kl_gauss,
            b.kl_cat,
            b.mi_term,
            self.mi_bound_eval.map_or(String::new(), |v| v.to_string()),
            b.lambda
        )
    }
}

/// Parameters, optimizer moments and counters: everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// Moments for encoder then decoder parameters.
    pub opt_main: Adam,
    pub opt_q: Adam,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    /// Initial state; the weights depend only on `seed` and the layout, never on λ.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&mut Rng::stream(cfg.seed, Purpose::Init, 0), &cfg.spec, &cfg.arch)?;
        let opt_main = Adam::new(
            cfg.adam,
            params.encoder.tensors().into_iter().chain(params.decoder.tensors()),
        );
        let opt_q = Adam::new(cfg.adam, params.q.tensors());
        Ok(Self {
            params,
            opt_main,
            opt_q,
            step: 0,
            epoch: 0,
        })
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut arrays: Vec<(String, Tensor)> = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        for (tag, opt) in [("main", &self.opt_main), ("q", &self.opt_q)] {
            for (i, m) in opt.m.iter().enumerate() {
                arrays.push((format!("opt.{tag}.m.{i}"), m.clone()));
            }
            for (i, v) in opt.v.iter().enumerate() {
                arrays.push((format!("opt.{tag}.v.{i}"), v.clone()));
            }
        }
        let mut meta = cfg.to_kv();
        meta.push(("step".into(), self.step.to_string()));
        meta.push(("epoch".into(), self.epoch.to_string()));
        meta.push(("opt_main_step".into(), self.opt_main.step.to_string()));
        meta.push(("opt_q_step".into(), self.opt_q.step.to_string()));
        Checkpoint { arrays, meta }
    }

    /// Restores a state; optimizer moments are zero when the checkpoint has none.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let (params, cfg) = load_model(ckpt)?;
        let mut state = Self::init(&cfg)?;
        state.params = params;
        for (tag, opt) in [("main", &mut state.opt_main), ("q", &mut state.opt_q)] {
            let step_key = format!("opt_{tag}_step");
            opt.step = ckpt.meta(&step_key).map_or(Ok(0), |v| parse_value(&step_key, v))?;
            for (kind, store) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                for (i, slot) in store.iter_mut().enumerate() {
                    if let Some(t) = ckpt.array(&format!("opt.{tag}.{kind}.{i}")) {
                        if t.shape() != slot.shape() {
                            return Err(Error::Format(format!(
                                "optimizer moment opt.{tag}.{kind}.{i} has wrong shape"
                            )));
                        }
                        *slot = t.clone();
                    }
                }
            }
        }
        state.step = ckpt.meta("step").map_or(Ok(0), |v| parse_value("step", v))?;
        state.epoch = ckpt.meta("epoch").map_or(Ok(0), |v| parse_value("epoch", v))?;
        Ok((state, cfg))
    }
}

/// Model parameters and run configuration stored in a checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<(ModelParams, TrainConfig)> {
    let run_keys: Vec<(String, String)> = ckpt
        .meta
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "step" | "epoch" | "opt_main_step" | "opt_q_step"))
        .cloned()
        .collect();
    let cfg = TrainConfig::from_kv(&run_keys)?;
    let mut params = init_params(&mut Rng::seed_from(0), &cfg.spec, &cfg.arch)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let slots = params
        .encoder
        .tensors_mut()
        .into_iter()
        .chain(params.decoder.tensors_mut())
        .chain(params.q.tensors_mut());
    for (name, slot) in names.iter().zip(slots) {
        let t = ckpt
            .array(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!(
                "{name}: shape {:?} does not match the layout {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    params.validate()?;
    Ok((params, cfg))
}

pub fn load_model_file(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    load_model(&Checkpoint::load(path)?)
}

/// Random streams for one epoch; independent of λ and of each other.
pub struct EpochStreams {
    pub shuffle: Rng,
    pub noise: Rng,
    pub q_phase: Rng,
}

impl EpochStreams {
    pub fn new(seed: u64, epoch: usize) -> Self {
        let e = epoch as u64;
        Self {
            shuffle: Rng::stream(seed, Purpose::Shuffle, e),
            noise: Rng::stream(seed, Purpose::Noise, e),
            q_phase: Rng::stream(seed, Purpose::QPhase, e),
        }
    }
}

/// Outcome of one [`train_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub breakdown: ObjectiveBreakdown,
    /// Smallest max-probability of the categorical posterior over the batch.
    pub min_max_prob: Option<f64>,
}

/// Phase 1 alone: `cfg.q_steps` Adam ascent steps on the MI term w.r.t. Q.
/// Returns whether the configuration has an MI term at all.
pub fn q_phase(state: &mut TrainState, batch: &Tensor, cfg: &TrainConfig, q_rng: &mut Rng) -> Result<bool> {
    let spec = &state.params.spec;
    let with_mi = spec.is_joint() || spec.has_continuous_target();
    if !with_mi {
        return Ok(false);
    }
    for _ in 0..cfg.q_steps {
        let noise = Noise::draw(q_rng, batch.rows(), spec);
        let mut tape = Tape::new();
        let bound = state.params.bind(&mut tape, false, true);
        let x = tape.constant(batch.clone());
        let fwd = forward(&mut tape, &bound, spec, x, &noise, CodeMode::Relaxed)?;
        let per = per_sample_mi(&mut tape, &bound.q, spec, fwd.x_hat, fwd.z, fwd.c)?;
        let mean = tape.mean(per);
        let loss = tape.neg(mean);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound
            .q
            .params()
            .into_iter()
            .map(|v| grads.take(v).expect("Q parameters reach the MI term"))
            .collect();
        state
            .opt_q
            .update(&mut state.params.q.tensors_mut(), &grads, cfg.lr_q)?;
    }
    Ok(true)
}

/// Phase 1: `q_steps` Adam ascent steps on the MI term w.r.t. Q only.
/// Phase 2: one Adam ascent step on `ELBO + λ·MI` w.r.t. encoder and decoder.
pub fn train_step(
    state: &mut TrainState,
    batch: &Tensor,
    cfg: &TrainConfig,
    noise_rng: &mut Rng,
    q_rng: &mut Rng,
) -> Result<StepOutcome> {
    let with_mi = q_phase(state, batch, cfg, q_rng)?;
    let spec = &state.params.spec;
    let noise = Noise::draw(noise_rng, batch.rows(), spec);
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, true, false);
    let nodes = objective_nodes(&mut tape, &bound, spec, batch, &noise, cfg.lambda, with_mi)?;
    let breakdown = nodes.breakdown(&tape);
    if !breakdown.is_finite() {
        return Err(Error::Numeric(format!(
            "objective at step {} is {breakdown:?}",
            state.step + 1
        )));
    }
    let min_max_prob = nodes.cat_logits.map(|l| {
        tape.value(l)
            .softmax()
            .data()
            .chunks(spec.cat_k.unwrap_or(1))
            .map(|row| row.iter().cloned().fold(f64::MIN, f64::max))
            .fold(f64::INFINITY, f64::min)
    });
    let loss = tape.neg(nodes.total);
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = bound
        .vae_params()
        .into_iter()
        .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    state
        .opt_main
        .update(&mut state.params.vae_tensors_mut(), &grads, cfg.lr)?;
    state.step += 1;
    Ok(StepOutcome {
        breakdown,
        min_max_prob,
    })
}

/// Fresh-Q bound used for the per-epoch curve. The Q initialization and noise
/// are shared across epochs and λ values, so curves differ only through the model.
pub fn epoch_mi_bound(params: &ModelParams, cfg: &TrainConfig, ds: &Dataset) -> Result<f64> {
    let pool = ds.head(cfg.eval_pool.min(ds.len()));
    let est = mi_lower_bound_estimate(
        params,
        &pool.images,
        &MiEstimateConfig {
            q_steps: cfg.eval_q_steps,
            batch_size: cfg.batch_size,
            lr: cfg.lr_q,
            adam: cfg.adam,
            eval_samples: cfg.eval_samples,
            seed: cfg.seed,
        },
    )?;
    Ok(est.bound)
}

/// Summary of a finished [`train`] call.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub state: TrainState,
    pub records: Vec<MetricsRecord>,
    /// Epochs (1-based) in which every categorical posterior was saturated.
    pub saturated_epochs: Vec<usize>,
}

/// Artifact layout under a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch:03}.vmiv"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("final.vmiv")
    }
}

/// Trains from `state` to `cfg.epochs`, writing metrics and checkpoints under
/// `out` when given. A state restored from an epoch checkpoint continues the
/// same step numbering and random streams.
pub fn train(cfg: &TrainConfig, ds: &Dataset, mut state: TrainState, out: Option<&RunDir>) -> Result<TrainReport> {
    cfg.validate()?;
    if ds.dim() != cfg.arch.input_dim {
        return Err(Error::config(format!(
            "dataset images have {} pixels, the model expects {}",
            ds.dim(),
            cfg.arch.input_dim
        )));
    }
    let train_ds = match cfg.train_limit {
        Some(n) => ds.head(n.min(ds.len())),
        None => ds.clone(),
    };
    if train_ds.is_empty() {
        return Err(Error::config("training set is empty"));
    }

    let mut metrics = match out {
        Some(dir) => Some(open_metrics(dir, state.step)?),
        None => None,
    };
    if let Some(dir) = out {
        let ckpt_dir = dir.root.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        if state.epoch == 0 {
            state.to_checkpoint(cfg).save(&dir.epoch_checkpoint(0))?;
        }
    }

    let mut records = Vec::new();
    let mut saturated_epochs = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut streams = EpochStreams::new(cfg.seed, epoch);
        let mut saturated = state.params.spec.is_joint();
        let batches: Vec<Vec<usize>> = batch_iterator(train_ds.len(), cfg.batch_size, &mut streams.shuffle).collect();
        let last = batches.len() - 1;
        for (i, idx) in batches.iter().enumerate() {
            let x = train_ds.batch(idx);
            let outcome = train_step(&mut state, &x, cfg, &mut streams.noise, &mut streams.q_phase)?;
            if let Some(p) = outcome.min_max_prob {
                saturated &= p > SATURATION;
            }
            let mi_bound_eval = if i == last && cfg.eval_q_steps > 0 {
                Some(epoch_mi_bound(&state.params, cfg, &train_ds)?)
            } else {
                None
            };
            let record = MetricsRecord {
                step: state.step,
                epoch,
                breakdown: outcome.breakdown,
                mi_bound_eval,
            };
            if let Some(w) = metrics.as_mut() {
                writeln!(w.1, "{}", record.csv_row()).map_err(|e| Error::io(&w.0, e))?;
            }
            records.push(record);
        }
        state.epoch = epoch;
        if saturated {
            log::warn!("epoch {epoch}: categorical posterior saturated on every batch");
            saturated_epochs.push(epoch);
        }
        let last_record = records.last().expect("at least one batch per epoch");
        log::info!(
            "epoch {epoch}/{}: elbo {:.3} kl_cat {:.4} mi_term {:.4} mi_bound {}",
            cfg.epochs,
            last_record.breakdown.elbo(),
            last_record.breakdown.kl_cat,
            last_record.breakdown.mi_term,
            last_record.mi_bound_eval.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        if let Some(dir) = out {
            if let Some(w) = metrics.as_mut() {
                w.1.flush().map_err(|e| Error::io(&w.0, e))?;
            }
            state.to_checkpoint(cfg).save(&dir.epoch_checkpoint(epoch))?;
        }
    }
    if let Some(dir) = out {
        state.to_checkpoint(cfg).save(&dir.final_checkpoint())?;
    }
    Ok(TrainReport {
        state,
        records,
        saturated_epochs,
    })
}

/// Opens `metrics.csv` for appending, dropping rows past `step` left by an interrupted run.
fn open_metrics(dir: &RunDir, step: u64) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.metrics();
    fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let mut kept = format!("{METRICS_HEADER}\n");
    if step > 0 {
        if let Ok(existing) = fs::read_to_string(&path) {
            for line in existing.lines().skip(1) {
                let row_step: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
                if row_step <= step {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
    let file = fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

/// Reads a metrics CSV back into `(step, epoch, values…)` rows keyed by header name.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!("{}: unexpected metrics header", path.display())));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("metrics row has {} fields", f.len())));
            }
            let num = |i: usize| parse_value::<f64>("metrics", f[i]);
            let (elbo, recon_ll, kl_gauss, kl_cat, mi_term, lambda) =
                (num(2)?, num(3)?, num(4)?, num(5)?, num(6)?, num(8)?);
            let mut breakdown = ObjectiveBreakdown {
                recon_ll,
                kl_gauss,
                kl_cat,
                mi_term,
                lambda,
                total: 0.0,
            };
            breakdown.total = elbo + lambda * mi_term;
            Ok(MetricsRecord {
                step: parse_value("step", f[0])?,
                epoch: parse_value("epoch", f[1])?,
                breakdown,
                mi_bound_eval: if f[7].is_empty() { None } else { Some(num(7)?) },
            })
        })
        .collect()
}
