//! Encoder, decoder and auxiliary network: parameters and forward passes.

use std::fmt;
use std::str::FromStr;

use crate::distributions::{CategoricalParams, GaussianParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const IMAGE_DIM: usize = 784;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Shape of the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSpec {
    pub gauss_dim: usize,
    /// Components of the Gaussian code targeted by the continuous MI term.
    pub mi_indices: Vec<usize>,
    /// Category count of the discrete part; `None` for a pure Gaussian latent.
    pub cat_k: Option<usize>,
    /// Gumbel-softmax temperature.
    pub tau: f64,
}

impl LatentSpec {
    pub fn gaussian(gauss_dim: usize, mi_indices: Vec<usize>) -> Self {
        Self {
            gauss_dim,
            mi_indices,
            cat_k: None,
            tau: 0.67,
        }
    }

    pub fn joint(gauss_dim: usize, cat_k: usize, tau: f64) -> Self {
        Self {
            gauss_dim,
            mi_indices: Vec::new(),
            cat_k: Some(cat_k),
            tau,
        }
    }

    pub fn is_joint(&self) -> bool {
        self.cat_k.is_some()
    }

    /// Width of the decoder input: Gaussian part plus one-hot part.
    pub fn decoder_input_dim(&self) -> usize {
        self.gauss_dim + self.cat_k.unwrap_or(0)
    }

    pub fn has_continuous_target(&self) -> bool {
        !self.mi_indices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gauss_dim == 0 {
            return Err(Error::config("gauss_dim must be positive"));
        }
        if let Some(&bad) = self.mi_indices.iter().find(|&&i| i >= self.gauss_dim) {
            return Err(Error::config(format!(
                "mi index {bad} outside the {}-dimensional Gaussian code",
                self.gauss_dim
            )));
        }
        let mut sorted = self.mi_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.mi_indices.len() {
            return Err(Error::config("mi indices must be distinct"));
        }
        if self.cat_k == Some(0) {
            return Err(Error::config("category count must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Self::Relu => tape.relu(x),
            Self::Tanh => tape.tanh(x),
            Self::Sigmoid => tape.sigmoid(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Hidden-layer widths of the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Arch {
    pub input_dim: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            input_dim: IMAGE_DIM,
            enc_hidden: vec![512, 256],
            dec_hidden: vec![256, 512],
            q_hidden: vec![512, 256],
            activation: Activation::Relu,
        }
    }
}

impl Arch {
    /// Same layout at toy widths, for gradient checks and fast tests.
    pub fn tiny(input_dim: usize, width: usize) -> Self {
        Self {
            input_dim,
            enc_hidden: vec![width],
            dec_hidden: vec![width],
            q_hidden: vec![width],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in × out]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = glorot_bound(fan_in, fan_out);
        Self {
            w: rng.uniform_tensor(&[fan_in, fan_out], -bound, bound),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A trunk of activated affine layers followed by parallel linear heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub trunk: Vec<Linear>,
    pub heads: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init(rng: &mut Rng, input: usize, hidden: &[usize], heads: &[usize], activation: Activation) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut prev = input;
        for &width in hidden {
            trunk.push(Linear::glorot(rng, prev, width));
            prev = width;
        }
        let heads = heads.iter().map(|&out| Linear::glorot(rng, prev, out)).collect();
        Self {
            trunk,
            heads,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .or_else(|| self.heads.first())
            .map_or(0, Linear::in_dim)
    }

    /// All parameter tensors, trunk first, each layer as `(w, b)`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            out.push((format!("{prefix}.trunk.{i}.w"), &l.w));
            out.push((format!("{prefix}.trunk.{i}.b"), &l.b));
        }
        for (i, l) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head.{i}.w"), &l.w));
            out.push((format!("{prefix}.head.{i}.b"), &l.b));
        }
        out
    }

    fn check_chain(&self, what: &str) -> Result<()> {
        let mut prev = self.input_dim();
        for l in &self.trunk {
            if l.in_dim() != prev || l.b.len() != l.out_dim() {
                return Err(Error::config(format!("{what}: layer widths do not chain")));
            }
            prev = l.out_dim();
        }
        for h in &self.heads {
            if h.in_dim() != prev || h.b.len() != h.out_dim() {
                return Err(Error::config(format!("{what}: head does not match trunk width")));
            }
        }
        Ok(())
    }

    /// Records the parameters on `tape`; untracked when `trainable` is false.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut bind = |l: &Linear| {
            if trainable {
                BoundLinear {
                    w: tape.var(l.w.clone()),
                    b: tape.var(l.b.clone()),
                }
            } else {
                BoundLinear {
                    w: tape.constant(l.w.clone()),
                    b: tape.constant(l.b.clone()),
                }
            }
        };
        BoundMlp {
            trunk: self.trunk.iter().map(&mut bind).collect(),
            heads: self.heads.iter().map(&mut bind).collect(),
            activation: self.activation,
            input_dim: self.input_dim(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    trunk: Vec<BoundLinear>,
    heads: Vec<BoundLinear>,
    activation: Activation,
    input_dim: usize,
}

impl BoundMlp {
    /// Parameter nodes in the same order as [`Mlp::tensors`].
    pub fn params(&self) -> Vec<Var> {
        self.trunk.iter().chain(&self.heads).flat_map(|l| [l.w, l.b]).collect()
    }

    fn trunk_forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim || tape.value(x).shape().len() != 2 {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "network input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim],
            }
            .into());
        }
        let mut h = x;
        for l in &self.trunk {
            let a = tape.linear(h, l.w, l.b)?;
            h = self.activation.apply(tape, a);
        }
        Ok(h)
    }

    fn heads_forward(&self, tape: &mut Tape, h: Var) -> Result<Vec<Var>> {
        self.heads
            .iter()
            .map(|l| tape.linear(h, l.w, l.b).map_err(Error::from))
            .collect()
    }
}

/// Encoder, decoder and auxiliary-network parameters plus the layout they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: LatentSpec,
    pub arch: Arch,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub q: Mlp,
}

fn encoder_heads(spec: &LatentSpec) -> Vec<usize> {
    let mut heads = vec![spec.gauss_dim, spec.gauss_dim];
    heads.extend(spec.cat_k);
    heads
}

fn q_heads(spec: &LatentSpec) -> Vec<usize> {
    let mut heads = Vec::new();
    if spec.has_continuous_target() {
        heads.extend([spec.mi_indices.len(), spec.mi_indices.len()]);
    }
    heads.extend(spec.cat_k);
    heads
}

/// Glorot-uniform initialization of all three networks, drawn in the order encoder, decoder, Q.
pub fn init_params(rng: &mut Rng, spec: &LatentSpec, arch: &Arch) -> Result<ModelParams> {
    spec.validate()?;
    if arch.input_dim == 0 {
        return Err(Error::config("input dimension must be positive"));
    }
    for (name, widths) in [
        ("encoder", &arch.enc_hidden),
        ("decoder", &arch.dec_hidden),
        ("q", &arch.q_hidden),
    ] {
        if widths.contains(&0) {
            return Err(Error::config(format!("{name} has a zero-width layer")));
        }
    }
    let encoder = Mlp::init(
        rng,
        arch.input_dim,
        &arch.enc_hidden,
        &encoder_heads(spec),
        arch.activation,
    );
    let decoder = Mlp::init(
        rng,
        spec.decoder_input_dim(),
        &arch.dec_hidden,
        &[arch.input_dim],
        arch.activation,
    );
    let q = init_q(rng, spec, arch);
    let params = ModelParams {
        spec: spec.clone(),
        arch: arch.clone(),
        encoder,
        decoder,
        q,
    };
    params.validate()?;
    Ok(params)
}

/// A freshly initialized auxiliary network for `spec`.
pub fn init_q(rng: &mut Rng, spec: &LatentSpec, arch: &Arch) -> Mlp {
    Mlp::init(rng, arch.input_dim, &arch.q_hidden, &q_heads(spec), arch.activation)
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.encoder.check_chain("encoder")?;
        self.decoder.check_chain("decoder")?;
        self.q.check_chain("q")?;
        let enc_heads: Vec<usize> = self.encoder.heads.iter().map(Linear::out_dim).collect();
        if enc_heads != encoder_heads(&self.spec) || self.encoder.input_dim() != self.arch.input_dim {
            return Err(Error::config("encoder does not match the latent spec"));
        }
        let dec_out: Vec<usize> = self.decoder.heads.iter().map(Linear::out_dim).collect();
        if self.decoder.input_dim() != self.spec.decoder_input_dim() || dec_out != [self.arch.input_dim] {
            return Err(Error::config("decoder does not match the latent spec"));
        }
        let q_out: Vec<usize> = self.q.heads.iter().map(Linear::out_dim).collect();
        if q_out != q_heads(&self.spec) || self.q.input_dim() != self.arch.input_dim {
            return Err(Error::config("auxiliary network does not match the latent spec"));
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_tensors("encoder");
        out.extend(self.decoder.named_tensors("decoder"));
        out.extend(self.q.named_tensors("q"));
        out
    }

    /// Encoder and decoder parameters (the VAE proper), encoder first.
    pub fn vae_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape, train_vae: bool, train_q: bool) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape, train_vae),
            decoder: self.decoder.bind(tape, train_vae),
            q: self.q.bind(tape, train_q),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
    pub q: BoundMlp,
}

impl BoundModel {
    pub fn vae_params(&self) -> Vec<Var> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub gauss: GaussianParams,
    pub cat: Option<CategoricalParams>,
}

#[derive(Clone, Copy, Debug)]
pub struct QOutput {
    pub gauss_head: Option<GaussianParams>,
    pub cat_head: Option<CategoricalParams>,
}

pub fn encoder_forward(tape: &mut Tape, phi: &BoundMlp, x: Var, spec: &LatentSpec) -> Result<EncoderOutput> {
    let h = phi.trunk_forward(tape, x)?;
    let heads = phi.heads_forward(tape, h)?;
    let expected = 2 + usize::from(spec.is_joint());
    if heads.len() != expected {
        return Err(Error::config("encoder heads do not match the latent spec"));
    }
    let logvar = tape.clamp(heads[1], LOGVAR_MIN, LOGVAR_MAX);
    Ok(EncoderOutput {
        gauss: GaussianParams { mu: heads[0], logvar },
        cat: spec.is_joint().then(|| CategoricalParams { logits: heads[2] }),
    })
}

/// Pixel logits for `z` (and, in joint mode, the one-hot or relaxed `c`).
pub fn decoder_forward(tape: &mut Tape, theta: &BoundMlp, z: Var, c: Option<Var>, spec: &LatentSpec) -> Result<Var> {
    let input = match (c, spec.is_joint()) {
        (Some(c), true) => tape.concat(z, c)?,
        (None, false) => z,
        (Some(_), false) => {
            return Err(Error::config(
                "pure Gaussian decoder does not accept a categorical code",
            ))
        }
        (None, true) => return Err(Error::config("joint decoder requires a categorical code")),
    };
    let h = theta.trunk_forward(tape, input)?;
    let heads = theta.heads_forward(tape, h)?;
    Ok(heads[0])
}

/// Auxiliary network over a decoder mean image.
pub fn q_forward(tape: &mut Tape, qp: &BoundMlp, x_hat: Var, spec: &LatentSpec) -> Result<QOutput> {
    let h = qp.trunk_forward(tape, x_hat)?;
    let heads = qp.heads_forward(tape, h)?;
    let mut it = heads.into_iter();
    let gauss_head = if spec.has_continuous_target() {
        match (it.next(), it.next()) {
            (Some(mu), Some(lv)) => {
                let logvar = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
                Some(GaussianParams { mu, logvar })
            }
            _ => return Err(Error::config("auxiliary network is missing its Gaussian head")),
        }
    } else {
        None
    };
    let cat_head = if spec.is_joint() {
        match it.next() {
            Some(logits) => Some(CategoricalParams { logits }),
            None => return Err(Error::config("auxiliary network is missing its categorical head")),
        }
    } else {
        None
    };
    Ok(QOutput { gauss_head, cat_head })
}
