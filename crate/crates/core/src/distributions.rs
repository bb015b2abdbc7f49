//! Probability primitives recorded on a [`Tape`].
//!
//! All information quantities are in nats. Per-sample results are `[batch]`
//! vectors; callers average them.

use std::f64::consts::{E, PI};

use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Uniform draws are clamped into this range before the double log.
pub const GUMBEL_U_MIN: f64 = 1e-20;
pub const GUMBEL_U_MAX: f64 = 1.0 - 1e-7;

/// Diagonal Gaussian `N(mu, exp(logvar))`, both `[batch × d]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianParams {
    pub mu: Var,
    pub logvar: Var,
}

/// Categorical distribution given by unnormalised `logits` `[batch × K]`.
#[derive(Clone, Copy, Debug)]
pub struct CategoricalParams {
    pub logits: Var,
}

/// One Gumbel-softmax draw: the noise `g`, the temperature, and the relaxed one-hot `y`.
#[derive(Clone, Debug)]
pub struct GumbelDraw {
    pub g: Tensor,
    pub tau: f64,
    pub y: Var,
}

fn check_same(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<()> {
    tape.value(a).expect_same_shape(tape.value(b), op)
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize_gaussian(tape: &mut Tape, p: GaussianParams, eps: &Tensor) -> Result<Var> {
    check_same(tape, p.mu, p.logvar, "reparameterize")?;
    tape.value(p.mu).expect_same_shape(eps, "reparameterize")?;
    let eps = tape.constant(eps.clone());
    let half = tape.scale(p.logvar, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    tape.add(p.mu, noise)
}

/// `KL(N(mu, σ²) ‖ N(0, I))` per sample.
pub fn gaussian_kl_to_standard(tape: &mut Tape, p: GaussianParams) -> Result<Var> {
    check_same(tape, p.mu, p.logvar, "gaussian_kl")?;
    let mu2 = tape.square(p.mu);
    let var = tape.exp(p.logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, p.logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let per_sample = tape.sum_axis(c, 1)?;
    Ok(tape.scale(per_sample, 0.5))
}

/// `log N(z; mu, exp(logvar))` summed over dimensions.
pub fn gaussian_log_density(tape: &mut Tape, z: Var, p: GaussianParams) -> Result<Var> {
    check_same(tape, p.mu, p.logvar, "gaussian_log_density")?;
    check_same(tape, z, p.mu, "gaussian_log_density")?;
    let diff = tape.sub(z, p.mu)?;
    let sq = tape.square(diff);
    let neg_lv = tape.neg(p.logvar);
    let precision = tape.exp(neg_lv);
    let maha = tape.mul(sq, precision)?;
    let inner = tape.add(maha, p.logvar)?;
    let scaled = tape.scale(inner, -0.5);
    let shifted = tape.add_scalar(scaled, -0.5 * (2.0 * PI).ln());
    tape.sum_axis(shifted, 1)
}

/// Differential entropy of `N(0, I_d)`: `d/2 · log(2πe)`.
pub fn standard_gaussian_entropy(d: usize) -> f64 {
    0.5 * d as f64 * (2.0 * PI * E).ln()
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(GUMBEL_U_MIN, GUMBEL_U_MAX);
    -(-u.ln()).ln()
}

/// I.i.d. Gumbel(0, 1) noise.
pub fn sample_gumbel(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = gumbel_from_uniform(rng.uniform());
    }
    t
}

/// Relaxed one-hot `y = softmax((log π + g) / τ)` with `log π = log_softmax(logits)`.
pub fn gumbel_softmax_sample(tape: &mut Tape, c: CategoricalParams, g: &Tensor, tau: f64) -> Result<GumbelDraw> {
    if !(tau > 0.0) {
        return Err(TensorError::Domain {
            op: "gumbel_softmax",
            detail: format!("temperature must be positive, got {tau}"),
        });
    }
    tape.value(c.logits).expect_same_shape(g, "gumbel_softmax")?;
    let log_pi = tape.log_softmax(c.logits);
    let noise = tape.constant(g.clone());
    let perturbed = tape.add(log_pi, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    let y = tape.softmax(scaled);
    Ok(GumbelDraw { g: g.clone(), tau, y })
}

/// Hard sample `one_hot(argmax(log π + g))` (Gumbel-max); returns the category indices.
pub fn gumbel_max_sample(logits: &Tensor, g: &Tensor) -> Result<Vec<usize>> {
    logits.expect_same_shape(g, "gumbel_max")?;
    Ok(logits.log_softmax().add(g)?.argmax_rows())
}

/// `KL(softmax(logits) ‖ Uniform(K))` per sample.
pub fn categorical_kl_to_uniform(tape: &mut Tape, c: CategoricalParams) -> Result<Var> {
    let k = tape.value(c.logits).cols();
    let log_q = tape.log_softmax(c.logits);
    let q = tape.exp(log_q);
    let shifted = tape.add_scalar(log_q, (k as f64).ln());
    let terms = tape.mul(q, shifted)?;
    tape.sum_axis(terms, 1)
}

/// `Σ_k y_k · log_softmax(logits)_k` per sample; exact log-mass for hard one-hot `y`.
pub fn categorical_log_density(tape: &mut Tape, y: Var, c: CategoricalParams) -> Result<Var> {
    check_same(tape, y, c.logits, "categorical_log_density")?;
    let log_q = tape.log_softmax(c.logits);
    let terms = tape.mul(y, log_q)?;
    tape.sum_axis(terms, 1)
}

/// Bernoulli log-likelihood of `x ∈ [0,1]` under pixel logits, summed per sample.
///
/// Uses `x·l − softplus(l)`, which equals `x log σ(l) + (1−x) log(1−σ(l))`.
pub fn bernoulli_log_likelihood(tape: &mut Tape, x: &Tensor, logits: Var) -> Result<Var> {
    if let Some(bad) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(TensorError::Domain {
            op: "bernoulli_log_likelihood",
            detail: format!("target {bad} outside [0, 1]"),
        });
    }
    tape.value(logits).expect_same_shape(x, "bernoulli_log_likelihood")?;
    let xv = tape.constant(x.clone());
    let xl = tape.mul(xv, logits)?;
    let sp = tape.softplus(logits);
    let ll = tape.sub(xl, sp)?;
    tape.sum_axis(ll, 1)
}

/// Entropy of the uniform distribution over `k` categories.
pub fn uniform_entropy(k: usize) -> f64 {
    assert!(k >= 1, "category count must be at least 1");
    (k as f64).ln()
}
