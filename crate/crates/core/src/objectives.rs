//! ELBOs, mutual-information regularizers and the fixed-model MI lower bound.
//!
//! Every expectation is a single-sample Monte Carlo estimate per datum. The
//! expectation over `x ~ p_θ(x|z)` inside the MI terms is realized by the
//! decoder mean `sigmoid(logits)`, which keeps the regularizer differentiable
//! with respect to encoder and decoder.

use crate::distributions::{
    bernoulli_log_likelihood, categorical_kl_to_uniform, categorical_log_density, gaussian_kl_to_standard,
    gaussian_log_density, gumbel_max_sample, gumbel_softmax_sample, reparameterize_gaussian, sample_gumbel,
    standard_gaussian_entropy, uniform_entropy, GaussianParams,
};
use crate::error::{Error, Result};
use crate::networks::{
    decoder_forward, encoder_forward, init_q, q_forward, BoundMlp, BoundModel, EncoderOutput, LatentSpec, Mlp,
    ModelParams,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{Purpose, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Scalar summary of one objective evaluation (batch means, nats).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveBreakdown {
    pub recon_ll: f64,
    pub kl_gauss: f64,
    pub kl_cat: f64,
    pub mi_term: f64,
    pub lambda: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn elbo(&self) -> f64 {
        self.recon_ll - self.kl_gauss - self.kl_cat
    }

    pub fn is_finite(&self) -> bool {
        [self.recon_ll, self.kl_gauss, self.kl_cat, self.mi_term, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Noise for one forward pass, drawn Gaussian first, then Gumbel.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub eps: Tensor,
    pub gumbel: Option<Tensor>,
}

impl Noise {
    pub fn draw(rng: &mut Rng, batch: usize, spec: &LatentSpec) -> Self {
        let eps = rng.normal_tensor(&[batch, spec.gauss_dim]);
        let gumbel = spec.cat_k.map(|k| sample_gumbel(rng, &[batch, k]));
        Self { eps, gumbel }
    }
}

/// How the categorical code is fed to the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeMode {
    /// Gumbel-softmax relaxed sample (training).
    Relaxed,
    /// Gumbel-max one-hot sample (evaluation).
    Hard,
}

/// Nodes of one encoder → sample → decoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub enc: EncoderOutput,
    pub z: Var,
    pub c: Option<Var>,
    pub logits: Var,
    pub x_hat: Var,
}

pub fn forward(
    tape: &mut Tape,
    model: &BoundModel,
    spec: &LatentSpec,
    x: Var,
    noise: &Noise,
    mode: CodeMode,
) -> Result<Forward> {
    let enc = encoder_forward(tape, &model.encoder, x, spec)?;
    let z = reparameterize_gaussian(tape, enc.gauss, &noise.eps)?;
    let c = match (enc.cat, &noise.gumbel) {
        (Some(cat), Some(g)) => Some(match mode {
            CodeMode::Relaxed => gumbel_softmax_sample(tape, cat, g, spec.tau)?.y,
            CodeMode::Hard => {
                let idx = gumbel_max_sample(tape.value(cat.logits), g)?;
                tape.constant(Tensor::one_hot(&idx, g.cols()))
            }
        }),
        (None, None) => None,
        _ => return Err(Error::config("noise does not match the latent spec")),
    };
    let logits = decoder_forward(tape, &model.decoder, z, c, spec)?;
    let x_hat = tape.sigmoid(logits);
    Ok(Forward {
        enc,
        z,
        c,
        logits,
        x_hat,
    })
}

/// Batch-mean ELBO components as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct ElboNodes {
    pub recon: Var,
    pub kl_gauss: Var,
    pub kl_cat: Option<Var>,
    pub elbo: Var,
}

pub fn elbo_nodes(tape: &mut Tape, fwd: &Forward, x: &Tensor) -> Result<ElboNodes> {
    let ll = bernoulli_log_likelihood(tape, x, fwd.logits)?;
    let recon = tape.mean(ll);
    let klg = gaussian_kl_to_standard(tape, fwd.enc.gauss)?;
    let kl_gauss = tape.mean(klg);
    let mut elbo = tape.sub(recon, kl_gauss)?;
    let kl_cat = match fwd.enc.cat {
        Some(cat) => {
            let klc = categorical_kl_to_uniform(tape, cat)?;
            let klc = tape.mean(klc);
            elbo = tape.sub(elbo, klc)?;
            Some(klc)
        }
        None => None,
    };
    Ok(ElboNodes {
        recon,
        kl_gauss,
        kl_cat,
        elbo,
    })
}

/// Entropy constant added to the MI term: prior entropy of the targeted code.
pub fn mi_entropy_constant(spec: &LatentSpec) -> f64 {
    let mut h = 0.0;
    if spec.has_continuous_target() {
        h += standard_gaussian_entropy(spec.mi_indices.len());
    }
    if let Some(k) = spec.cat_k {
        h += uniform_entropy(k);
    }
    h
}

/// Per-sample `log Q(code | x̂) + H(code)` for the targeted parts of the code.
pub fn per_sample_mi(
    tape: &mut Tape,
    q: &BoundMlp,
    spec: &LatentSpec,
    x_hat: Var,
    z: Var,
    c: Option<Var>,
) -> Result<Var> {
    if !spec.has_continuous_target() && !spec.is_joint() {
        return Err(Error::config("MI term needs mi indices or a categorical code"));
    }
    let out = q_forward(tape, q, x_hat, spec)?;
    let mut total: Option<Var> = None;
    if let Some(head) = out.gauss_head {
        let z_hat = tape.select(z, &spec.mi_indices)?;
        let ld = gaussian_log_density(tape, z_hat, head)?;
        total = Some(ld);
    }
    if let Some(head) = out.cat_head {
        let c = c.ok_or_else(|| Error::config("categorical MI term needs a categorical code"))?;
        let ld = categorical_log_density(tape, c, head)?;
        total = Some(match total {
            Some(t) => tape.add(t, ld)?,
            None => ld,
        });
    }
    let total = total.expect("at least one head is present");
    Ok(tape.add_scalar(total, mi_entropy_constant(spec)))
}

/// Graph for `ELBO + λ·MI`. With `λ = 0` the MI node is still evaluated for
/// logging but is not an ancestor of `total`.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub elbo: ElboNodes,
    pub mi: Option<Var>,
    pub total: Var,
    pub lambda: f64,
    /// Encoder categorical logits, when present.
    pub cat_logits: Option<Var>,
}

impl ObjectiveNodes {
    pub fn breakdown(&self, tape: &Tape) -> ObjectiveBreakdown {
        ObjectiveBreakdown {
            recon_ll: tape.scalar(self.elbo.recon),
            kl_gauss: tape.scalar(self.elbo.kl_gauss),
            kl_cat: self.elbo.kl_cat.map_or(0.0, |v| tape.scalar(v)),
            mi_term: self.mi.map_or(0.0, |v| tape.scalar(v)),
            lambda: self.lambda,
            total: tape.scalar(self.total),
        }
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!(
            "lambda must be a finite value >= 0, got {lambda}"
        )));
    }
    Ok(())
}

pub fn objective_nodes(
    tape: &mut Tape,
    model: &BoundModel,
    spec: &LatentSpec,
    x: &Tensor,
    noise: &Noise,
    lambda: f64,
    with_mi: bool,
) -> Result<ObjectiveNodes> {
    check_lambda(lambda)?;
    let xv = tape.constant(x.clone());
    let fwd = forward(tape, model, spec, xv, noise, CodeMode::Relaxed)?;
    let elbo = elbo_nodes(tape, &fwd, x)?;
    let mi = if with_mi || lambda > 0.0 {
        let per = per_sample_mi(tape, &model.q, spec, fwd.x_hat, fwd.z, fwd.c)?;
        Some(tape.mean(per))
    } else {
        None
    };
    let total = match mi {
        Some(mi) if lambda > 0.0 => {
            let weighted = tape.scale(mi, lambda);
            tape.add(elbo.elbo, weighted)?
        }
        _ => elbo.elbo,
    };
    Ok(ObjectiveNodes {
        elbo,
        mi,
        total,
        lambda,
        cat_logits: fwd.enc.cat.map(|c| c.logits),
    })
}

/// Single-sample ELBO for a pure Gaussian latent.
pub fn elbo_gaussian(model: &ModelParams, x: &Tensor, rng: &mut Rng) -> Result<ObjectiveBreakdown> {
    if model.spec.is_joint() {
        return Err(Error::config("elbo_gaussian needs a pure Gaussian latent"));
    }
    evaluate(model, x, rng, 0.0, false)
}

/// Single-sample ELBO for the joint Gaussian + categorical latent.
pub fn elbo_joint(model: &ModelParams, x: &Tensor, rng: &mut Rng) -> Result<ObjectiveBreakdown> {
    if !model.spec.is_joint() {
        return Err(Error::config("elbo_joint needs a categorical latent"));
    }
    evaluate(model, x, rng, 0.0, false)
}

/// `ELBO + λ·MI` for the active configuration.
pub fn combined_objective(model: &ModelParams, x: &Tensor, lambda: f64, rng: &mut Rng) -> Result<ObjectiveBreakdown> {
    evaluate(model, x, rng, lambda, lambda > 0.0)
}

fn evaluate(model: &ModelParams, x: &Tensor, rng: &mut Rng, lambda: f64, with_mi: bool) -> Result<ObjectiveBreakdown> {
    let noise = Noise::draw(rng, x.rows(), &model.spec);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false, false);
    let nodes = objective_nodes(&mut tape, &bound, &model.spec, x, &noise, lambda, with_mi)?;
    Ok(nodes.breakdown(&tape))
}

/// Continuous MI regularizer over the sub-vector `ẑ` (mean over the batch, nats).
pub fn mi_regularizer_continuous(model: &ModelParams, x: &Tensor, rng: &mut Rng) -> Result<f64> {
    if !model.spec.has_continuous_target() {
        return Err(Error::config("continuous MI term needs non-empty mi indices"));
    }
    mi_value(model, x, rng)
}

/// Categorical MI regularizer (mean over the batch, nats).
pub fn mi_regularizer_categorical(model: &ModelParams, x: &Tensor, rng: &mut Rng) -> Result<f64> {
    if !model.spec.is_joint() {
        return Err(Error::config("categorical MI term needs a categorical latent"));
    }
    mi_value(model, x, rng)
}

fn mi_value(model: &ModelParams, x: &Tensor, rng: &mut Rng) -> Result<f64> {
    let noise = Noise::draw(rng, x.rows(), &model.spec);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false, false);
    let xv = tape.constant(x.clone());
    let fwd = forward(&mut tape, &bound, &model.spec, xv, &noise, CodeMode::Relaxed)?;
    let per = per_sample_mi(&mut tape, &bound.q, &model.spec, fwd.x_hat, fwd.z, fwd.c)?;
    Ok(tape.value(per).mean())
}

/// Settings for the fresh-Q lower-bound estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct MiEstimateConfig {
    /// Adam steps (mini-batches) used to fit the fresh auxiliary network.
    pub q_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Held-out images used for the reported mean; the rest fit Q.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for MiEstimateConfig {
    fn default() -> Self {
        Self {
            q_steps: 2000,
            batch_size: 128,
            lr: 1e-3,
            adam: AdamConfig::default(),
            eval_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiEstimate {
    /// Held-out mean of `log Q(code|x̂) + H(code)`, nats.
    pub bound: f64,
    pub std_error: f64,
    pub eval_samples: usize,
    /// Training-batch bound after each fitting step.
    pub fit_curve: Vec<f64>,
}

/// Encoder outputs for a fixed model, computed once per estimate.
struct Encoded {
    mu: Tensor,
    logvar: Tensor,
    logits: Option<Tensor>,
}

fn encode_all(model: &ModelParams, images: &Tensor) -> Result<Encoded> {
    const CHUNK: usize = 1000;
    let n = images.rows();
    let (mut mu, mut logvar, mut logits) = (Vec::new(), Vec::new(), Vec::new());
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let mut tape = Tape::new();
        let enc_params = model.encoder.bind(&mut tape, false);
        let x = tape.constant(images.gather_rows(&idx));
        let out = encoder_forward(&mut tape, &enc_params, x, &model.spec)?;
        mu.extend_from_slice(tape.value(out.gauss.mu).data());
        logvar.extend_from_slice(tape.value(out.gauss.logvar).data());
        if let Some(cat) = out.cat {
            logits.extend_from_slice(tape.value(cat.logits).data());
        }
    }
    let d = model.spec.gauss_dim;
    Ok(Encoded {
        mu: Tensor::new(vec![n, d], mu)?,
        logvar: Tensor::new(vec![n, d], logvar)?,
        logits: match model.spec.cat_k {
            Some(k) => Some(Tensor::new(vec![n, k], logits)?),
            None => None,
        },
    })
}

/// Per-sample bound on a batch of pre-encoded images; Q is tracked when `train_q`.
fn bound_on_batch(
    model: &ModelParams,
    q: &Mlp,
    encoded: &Encoded,
    idx: &[usize],
    rng: &mut Rng,
    train_q: bool,
) -> Result<(Tape, Var, crate::networks::BoundMlp)> {
    let spec = &model.spec;
    let noise = Noise::draw(rng, idx.len(), spec);
    let mut tape = Tape::new();
    let decoder = model.decoder.bind(&mut tape, false);
    let q_bound = q.bind(&mut tape, train_q);
    let mu = tape.constant(encoded.mu.gather_rows(idx));
    let logvar = tape.constant(encoded.logvar.gather_rows(idx));
    let z = reparameterize_gaussian(&mut tape, GaussianParams { mu, logvar }, &noise.eps)?;
    let c = match (&encoded.logits, &noise.gumbel) {
        (Some(logits), Some(g)) => {
            let hard = gumbel_max_sample(&logits.gather_rows(idx), g)?;
            Some(tape.constant(Tensor::one_hot(&hard, g.cols())))
        }
        _ => None,
    };
    let logits = decoder_forward(&mut tape, &decoder, z, c, spec)?;
    let x_hat = tape.sigmoid(logits);
    let per = per_sample_mi(&mut tape, &q_bound, spec, x_hat, z, c)?;
    Ok((tape, per, q_bound))
}

/// Fits a fresh auxiliary network to the frozen model and reports the held-out
/// mean of the variational lower bound on `I(code; x)`.
///
/// Codes are drawn as true samples (Gumbel-max for the categorical part) and
/// the decoder receives hard one-hot vectors.
pub fn mi_lower_bound_estimate(model: &ModelParams, images: &Tensor, cfg: &MiEstimateConfig) -> Result<MiEstimate> {
    let n = images.rows();
    if n < 2 {
        return Err(Error::config("MI estimate needs at least two images"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut q = init_q(&mut Rng::stream(cfg.seed, Purpose::Eval, 0), &model.spec, &model.arch);
    let mut opt = Adam::new(cfg.adam, q.tensors());
    let encoded = encode_all(model, images)?;

    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(cfg.seed, Purpose::Eval, 1).shuffle(&mut order);
    let n_eval = cfg.eval_samples.clamp(1, n / 2);
    let (eval_idx, fit_idx) = order.split_at(n_eval);

    let mut shuffle_rng = Rng::stream(cfg.seed, Purpose::Eval, 2);
    let mut noise_rng = Rng::stream(cfg.seed, Purpose::Eval, 3);
    let mut fit_order = fit_idx.to_vec();
    let mut cursor = fit_order.len();
    let mut fit_curve = Vec::with_capacity(cfg.q_steps);
    for _ in 0..cfg.q_steps {
        if cursor + cfg.batch_size > fit_order.len() {
            shuffle_rng.shuffle(&mut fit_order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(fit_order.len());
        let idx = &fit_order[cursor..end];
        cursor = end;
        let (mut tape, per, q_bound) = bound_on_batch(model, &q, &encoded, idx, &mut noise_rng, true)?;
        let mean = tape.mean(per);
        let value = tape.scalar(mean);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("MI bound became {value} while fitting Q")));
        }
        fit_curve.push(value);
        let loss = tape.neg(mean);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = q_bound
            .params()
            .into_iter()
            .map(|v| grads.take(v).expect("Q parameters are tracked"))
            .collect();
        opt.update(&mut q.tensors_mut(), &grads, cfg.lr)?;
    }

    let mut eval_rng = Rng::stream(cfg.seed, Purpose::Eval, 4);
    let mut values = Vec::with_capacity(n_eval);
    for chunk in eval_idx.chunks(1000) {
        let (tape, per, _) = bound_on_batch(model, &q, &encoded, chunk, &mut eval_rng, false)?;
        values.extend_from_slice(tape.value(per).data());
    }
    let (bound, std_error) = mean_and_se(&values);
    Ok(MiEstimate {
        bound,
        std_error,
        eval_samples: values.len(),
        fit_curve,
    })
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A fully tabulated discrete model `x → c → x̂` used to check the bound
/// estimator against enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    /// `p(x)` over data states.
    pub p_x: Vec<f64>,
    /// `q(c | x)`, one row per data state.
    pub encoder: Vec<Vec<f64>>,
    /// `p(x̂ | c)`, one row per category.
    pub decoder: Vec<Vec<f64>>,
}

impl TabularModel {
    /// `x ∈ {0,1}²`, `c ∈ {0,1}`, `x̂ ∈ {0,1}²`.
    pub fn two_bit_example() -> Self {
        Self {
            p_x: vec![0.4, 0.1, 0.2, 0.3],
            encoder: vec![vec![0.9, 0.1], vec![0.6, 0.4], vec![0.3, 0.7], vec![0.05, 0.95]],
            decoder: vec![vec![0.55, 0.25, 0.15, 0.05], vec![0.05, 0.15, 0.3, 0.5]],
        }
    }

    pub fn categories(&self) -> usize {
        self.decoder.len()
    }

    pub fn observations(&self) -> usize {
        self.decoder[0].len()
    }

    pub fn marginal_c(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.categories()];
        for (px, row) in self.p_x.iter().zip(&self.encoder) {
            for (mc, q) in m.iter_mut().zip(row) {
                *mc += px * q;
            }
        }
        m
    }

    pub fn entropy_c(&self) -> f64 {
        -self
            .marginal_c()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// Exact `I(c; x̂)` by enumeration.
    pub fn true_mi(&self) -> f64 {
        let pc = self.marginal_c();
        let mut p_obs = vec![0.0; self.observations()];
        for (c, row) in self.decoder.iter().enumerate() {
            for (o, p) in row.iter().enumerate() {
                p_obs[o] += pc[c] * p;
            }
        }
        let mut mi = 0.0;
        for (c, row) in self.decoder.iter().enumerate() {
            for (o, &p) in row.iter().enumerate() {
                let joint = pc[c] * p;
                if joint > 0.0 {
                    mi += joint * (p / p_obs[o]).ln();
                }
            }
        }
        mi
    }

    /// Draws `(c, x̂)` through the data distribution.
    pub fn sample(&self, rng: &mut Rng) -> (usize, usize) {
        let x = rng.categorical(&self.p_x);
        let c = rng.categorical(&self.encoder[x]);
        let o = rng.categorical(&self.decoder[c]);
        (c, o)
    }
}

/// Fits a tabular `Q(c | x̂)` by Adam on sampled mini-batches and returns the
/// held-out bound `E[log Q(c|x̂)] + H(c)`, with `H(c)` the exact marginal entropy.
pub fn tabular_mi_bound(
    model: &TabularModel,
    steps: usize,
    batch: usize,
    eval_samples: usize,
    seed: u64,
) -> Result<MiEstimate> {
    let (k, obs) = (model.categories(), model.observations());
    let mut table = Tensor::zeros(&[obs, k]);
    let mut opt = Adam::new(AdamConfig::default(), [&table]);
    let mut rng = Rng::stream(seed, Purpose::Eval, 0);
    let h_c = model.entropy_c();
    let per_sample = |tape: &mut Tape, table: Var, draws: &[(usize, usize)]| -> Result<Var> {
        let cs: Vec<usize> = draws.iter().map(|d| d.0).collect();
        let os: Vec<usize> = draws.iter().map(|d| d.1).collect();
        let obs_onehot = tape.constant(Tensor::one_hot(&os, obs));
        let logits = tape.matmul(obs_onehot, table)?;
        let c = tape.constant(Tensor::one_hot(&cs, k));
        let ld = categorical_log_density(tape, c, crate::distributions::CategoricalParams { logits })?;
        Ok(tape.add_scalar(ld, h_c))
    };
    let mut fit_curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let draws: Vec<_> = (0..batch).map(|_| model.sample(&mut rng)).collect();
        let mut tape = Tape::new();
        let t = tape.var(table.clone());
        let per = per_sample(&mut tape, t, &draws)?;
        let mean = tape.mean(per);
        fit_curve.push(tape.scalar(mean));
        let loss = tape.neg(mean);
        let mut grads = tape.backward(loss)?;
        let g = grads.take(t).expect("table is tracked");
        opt.update(&mut [&mut table], &[g], 0.05)?;
    }
    let draws: Vec<_> = (0..eval_samples).map(|_| model.sample(&mut rng)).collect();
    let mut tape = Tape::new();
    let t = tape.constant(table);
    let per = per_sample(&mut tape, t, &draws)?;
    let (bound, std_error) = mean_and_se(tape.value(per).data());
    Ok(MiEstimate {
        bound,
        std_error,
        eval_samples,
        fit_curve,
    })
}
