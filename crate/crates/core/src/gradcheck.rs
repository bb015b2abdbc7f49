//! Central finite differences as an oracle for the tape's gradients.

use crate::distributions::{
    bernoulli_log_likelihood, categorical_kl_to_uniform, categorical_log_density, gaussian_kl_to_standard,
    gaussian_log_density, gumbel_softmax_sample, reparameterize_gaussian, sample_gumbel, CategoricalParams,
    GaussianParams,
};
use crate::error::Result;
use crate::networks::{init_params, Arch, LatentSpec, ModelParams};
use crate::objectives::{objective_nodes, Noise};
use crate::rng::{Purpose, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const CASES_PER_FAMILY: usize = 20;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every component `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Compares tape gradients of `Σ w ∘ build(inputs)` with finite differences
/// for the first `wrt` inputs; the rest are data the op treats as constants.
/// `w` is a fixed random weighting so every output entry contributes.
pub fn check_op(inputs: &[Tensor], wrt: usize, build: &Build, rng: &mut Rng) -> Result<f64> {
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = build(&mut probe, &vars)?;
    let weights = rng.normal_tensor(probe.value(out).shape());

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).mul(&weights)?.sum())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(out, w)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate().take(wrt) {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = finite_diff_grad(
            |xi| {
                let mut xs = inputs.to_vec();
                xs[i] = xi.clone();
                eval(&xs)
            },
            &inputs[i],
            DEFAULT_STEP,
        )?;
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

/// Result for one op family or end-to-end objective.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl FamilyResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

/// Entries at least `margin` away from every point in `kinks`.
fn away_from(rng: &mut Rng, shape: &[usize], kinks: &[f64], margin: f64) -> Tensor {
    let mut t = rng.normal_tensor(shape);
    for v in t.data_mut() {
        while kinks.iter().any(|k| (*v - k).abs() < margin) {
            *v = rng.normal();
        }
    }
    t
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (1 + rng.below(8), 1 + rng.below(8))
}

struct Family {
    name: &'static str,
    /// Leading inputs differentiated; trailing ones are noise or data.
    wrt: usize,
    inputs: fn(&mut Rng) -> Vec<Tensor>,
    build: Box<Build>,
}

fn unary(name: &'static str, op: fn(&mut Tape, Var) -> Var) -> Family {
    Family {
        name,
        wrt: 1,
        inputs: |r| {
            let (m, n) = dims(r);
            vec![away_from(r, &[m, n], &[0.0], 1e-3)]
        },
        build: Box::new(move |t, v| Ok(op(t, v[0]))),
    }
}

fn binary(name: &'static str, op: fn(&mut Tape, Var, Var) -> crate::tensor::Result<Var>) -> Family {
    Family {
        name,
        wrt: 2,
        inputs: |r| {
            let (m, n) = dims(r);
            vec![r.normal_tensor(&[m, n]), r.normal_tensor(&[m, n])]
        },
        build: Box::new(move |t, v| Ok(op(t, v[0], v[1])?)),
    }
}

fn families() -> Vec<Family> {
    vec![
        Family {
            name: "matmul",
            wrt: 2,
            inputs: |r| {
                let (m, k) = dims(r);
                let n = 1 + r.below(8);
                vec![r.normal_tensor(&[m, k]), r.normal_tensor(&[k, n])]
            },
            build: Box::new(|t, v| Ok(t.matmul(v[0], v[1])?)),
        },
        binary("add", Tape::add),
        binary("sub", Tape::sub),
        binary("mul", Tape::mul),
        Family {
            name: "add_row",
            wrt: 2,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![r.normal_tensor(&[m, n]), r.normal_tensor(&[n])]
            },
            build: Box::new(|t, v| Ok(t.add_row(v[0], v[1])?)),
        },
        Family {
            name: "linear",
            wrt: 3,
            inputs: |r| {
                let (m, k) = dims(r);
                let n = 1 + r.below(8);
                vec![
                    r.normal_tensor(&[m, k]),
                    r.normal_tensor(&[k, n]),
                    r.normal_tensor(&[n]),
                ]
            },
            build: Box::new(|t, v| Ok(t.linear(v[0], v[1], v[2])?)),
        },
        unary("scale", |t, a| t.scale(a, -1.7)),
        unary("add_scalar", |t, a| t.add_scalar(a, 0.3)),
        unary("square", Tape::square),
        unary("relu", Tape::relu),
        unary("sigmoid", Tape::sigmoid),
        unary("tanh", Tape::tanh),
        unary("exp", Tape::exp),
        unary("softplus", Tape::softplus),
        Family {
            name: "log",
            wrt: 1,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![r.uniform_tensor(&[m, n], 0.1, 3.0)]
            },
            build: Box::new(|t, v| Ok(t.log(v[0])?)),
        },
        Family {
            name: "clamp",
            wrt: 1,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![away_from(r, &[m, n], &[-0.5, 0.5], 1e-3)]
            },
            build: Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        },
        unary("softmax", Tape::softmax),
        unary("log_softmax", Tape::log_softmax),
        unary("sum", Tape::sum),
        unary("mean", Tape::mean),
        unary("sum_axis0", |t, a| t.sum_axis(a, 0).expect("matrix input")),
        unary("sum_axis1", |t, a| t.sum_axis(a, 1).expect("matrix input")),
        unary("mean_axis1", |t, a| t.mean_axis(a, 1).expect("matrix input")),
        Family {
            name: "concat",
            wrt: 2,
            inputs: |r| {
                let (m, n) = dims(r);
                let k = 1 + r.below(8);
                vec![r.normal_tensor(&[m, n]), r.normal_tensor(&[m, k])]
            },
            build: Box::new(|t, v| Ok(t.concat(v[0], v[1])?)),
        },
        Family {
            name: "slice",
            wrt: 1,
            inputs: |r| {
                let m = 1 + r.below(8);
                vec![r.normal_tensor(&[m, 8])]
            },
            build: Box::new(|t, v| Ok(t.slice(v[0], 2, 6)?)),
        },
        Family {
            name: "select",
            wrt: 1,
            inputs: |r| {
                let m = 1 + r.below(8);
                vec![r.normal_tensor(&[m, 8])]
            },
            build: Box::new(|t, v| Ok(t.select(v[0], &[5, 0, 3])?)),
        },
        Family {
            name: "reparameterize",
            wrt: 2,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![
                    r.normal_tensor(&[m, n]),
                    r.normal_tensor(&[m, n]),
                    r.normal_tensor(&[m, n]),
                ]
            },
            build: Box::new(|t, v| {
                let eps = t.value(v[2]).clone();
                Ok(reparameterize_gaussian(
                    t,
                    GaussianParams { mu: v[0], logvar: v[1] },
                    &eps,
                )?)
            }),
        },
        Family {
            name: "gaussian_kl",
            wrt: 2,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![r.normal_tensor(&[m, n]), r.normal_tensor(&[m, n])]
            },
            build: Box::new(|t, v| Ok(gaussian_kl_to_standard(t, GaussianParams { mu: v[0], logvar: v[1] })?)),
        },
        Family {
            name: "gaussian_log_density",
            wrt: 3,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![
                    r.normal_tensor(&[m, n]),
                    r.normal_tensor(&[m, n]),
                    r.normal_tensor(&[m, n]),
                ]
            },
            build: Box::new(|t, v| {
                Ok(gaussian_log_density(
                    t,
                    v[0],
                    GaussianParams { mu: v[1], logvar: v[2] },
                )?)
            }),
        },
        Family {
            name: "gumbel_softmax",
            wrt: 1,
            inputs: |r| {
                let (m, k) = dims(r);
                vec![r.normal_tensor(&[m, k]), sample_gumbel(r, &[m, k])]
            },
            build: Box::new(|t, v| {
                let g = t.value(v[1]).clone();
                Ok(gumbel_softmax_sample(t, CategoricalParams { logits: v[0] }, &g, 0.67)?.y)
            }),
        },
        Family {
            name: "categorical_kl",
            wrt: 1,
            inputs: |r| {
                let (m, k) = dims(r);
                vec![r.normal_tensor(&[m, k])]
            },
            build: Box::new(|t, v| Ok(categorical_kl_to_uniform(t, CategoricalParams { logits: v[0] })?)),
        },
        Family {
            name: "categorical_log_density",
            wrt: 2,
            inputs: |r| {
                let (m, k) = dims(r);
                let y = r.normal_tensor(&[m, k]).softmax();
                vec![y, r.normal_tensor(&[m, k])]
            },
            build: Box::new(|t, v| Ok(categorical_log_density(t, v[0], CategoricalParams { logits: v[1] })?)),
        },
        Family {
            name: "bernoulli_log_likelihood",
            wrt: 1,
            inputs: |r| {
                let (m, n) = dims(r);
                vec![r.normal_tensor(&[m, n]), r.uniform_tensor(&[m, n], 0.0, 1.0)]
            },
            build: Box::new(|t, v| {
                let x = t.value(v[1]).clone();
                Ok(bernoulli_log_likelihood(t, &x, v[0])?)
            }),
        },
    ]
}

/// Gradient of `ELBO + λ·MI` w.r.t. every encoder, decoder and Q parameter
/// on a 2-sample batch with 8-unit layers.
pub fn check_objective(spec: &LatentSpec, lambda: f64, seed: u64) -> Result<f64> {
    let arch = Arch::tiny(crate::networks::IMAGE_DIM, 8);
    let params = init_params(&mut Rng::stream(seed, Purpose::Init, 0), spec, &arch)?;
    let mut rng = Rng::stream(seed, Purpose::Test, 0);
    let x = rng.uniform_tensor(&[2, arch.input_dim], 0.0, 1.0);
    let noise = Noise::draw(&mut rng, 2, spec);

    let value = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false, false);
        let nodes = objective_nodes(&mut tape, &bound, spec, &x, &noise, lambda, true)?;
        Ok(tape.scalar(nodes.total))
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true, true);
    let nodes = objective_nodes(&mut tape, &bound, spec, &x, &noise, lambda, true)?;
    let grads = tape.backward(nodes.total)?;
    let vars: Vec<Var> = bound.vae_params().into_iter().chain(bound.q.params()).collect();

    let mut worst = 0.0f64;
    let count = params.named_tensors().len();
    for (i, v) in vars.iter().enumerate().take(count) {
        let original = tensor_at(&params, i).clone();
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(original.shape()));
        let numeric = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                *tensor_at_mut(&mut p, i) = t.clone();
                value(&p)
            },
            &original,
            DEFAULT_STEP,
        )?;
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

fn tensor_at(p: &ModelParams, i: usize) -> &Tensor {
    p.encoder
        .tensors()
        .into_iter()
        .chain(p.decoder.tensors())
        .chain(p.q.tensors())
        .nth(i)
        .expect("index within parameter count")
}

fn tensor_at_mut(p: &mut ModelParams, i: usize) -> &mut Tensor {
    p.encoder
        .tensors_mut()
        .into_iter()
        .chain(p.decoder.tensors_mut())
        .chain(p.q.tensors_mut())
        .nth(i)
        .expect("index within parameter count")
}

/// Every op family on [`CASES_PER_FAMILY`] random inputs, then the end-to-end objectives.
pub fn run_suite(seed: u64) -> Result<Vec<FamilyResult>> {
    let mut out = Vec::new();
    for (fi, fam) in families().into_iter().enumerate() {
        let mut rng = Rng::stream(seed, Purpose::Test, 100 + fi as u64);
        let mut worst = 0.0f64;
        for _ in 0..CASES_PER_FAMILY {
            let inputs = (fam.inputs)(&mut rng);
            worst = worst.max(check_op(&inputs, fam.wrt, fam.build.as_ref(), &mut rng)?);
        }
        out.push(FamilyResult {
            name: fam.name.to_string(),
            cases: CASES_PER_FAMILY,
            max_rel_err: worst,
        });
    }
    let objectives = [
        ("objective_gaussian", LatentSpec::gaussian(4, vec![0, 1]), 1.0),
        ("objective_joint", LatentSpec::joint(4, 10, 0.67), 1.0),
        (
            "objective_joint_with_continuous_target",
            LatentSpec {
                mi_indices: vec![1],
                ..LatentSpec::joint(3, 4, 0.5)
            },
            2.5,
        ),
        ("objective_elbo_only", LatentSpec::joint(4, 10, 0.67), 0.0),
    ];
    for (name, spec, lambda) in objectives {
        out.push(FamilyResult {
            name: name.to_string(),
            cases: 1,
            max_rel_err: check_objective(&spec, lambda, seed)?,
        });
    }
    Ok(out)
}
