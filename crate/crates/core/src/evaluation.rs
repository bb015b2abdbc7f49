//! Figures and measurements for trained models: traversal grids, posterior
//! histograms, clustering accuracy, and a finite-support check of the
//! total-expectation identity behind the MI lower bound.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{decoder_forward, encoder_forward, ModelParams};
use crate::rng::{Purpose, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const CELL: usize = 28;
pub const GUTTER: usize = 2;
pub const SEPARATOR_GUTTER: usize = 6;
pub const TRAVERSAL_RANGE: f64 = 3.0;
pub const DEFAULT_GRID_N: usize = 7;

/// Tiled 28×28 cells, row-major, with an optional separated first column.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows × cols` cells of 784 values in `[0,1]`.
    pub cells: Vec<Vec<f64>>,
    /// One cell per row when present.
    pub separated: Option<Vec<Vec<f64>>>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<Vec<f64>>, separated: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::config(format!(
                "grid {rows}×{cols} needs {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        if separated.as_ref().is_some_and(|s| s.len() != rows) {
            return Err(Error::config("separated column needs one cell per row"));
        }
        let all = cells.iter().chain(separated.iter().flatten());
        for c in all {
            if c.len() != CELL * CELL {
                return Err(Error::config(format!("grid cell has {} pixels, expected 784", c.len())));
            }
        }
        Ok(Self {
            rows,
            cols,
            cells,
            separated,
        })
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        &self.cells[r * self.cols + c]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len() + self.separated.as_ref().map_or(0, Vec::len)
    }

    pub fn width(&self) -> usize {
        let sep = if self.separated.is_some() {
            CELL + SEPARATOR_GUTTER
        } else {
            0
        };
        GUTTER + sep + self.cols * (CELL + GUTTER)
    }

    pub fn height(&self) -> usize {
        GUTTER + self.rows * (CELL + GUTTER)
    }

    /// Mean over cells and pixels of `|cell − mean cell|`.
    pub fn variation(&self) -> f64 {
        mean_abs_deviation(&self.cells.iter().map(Vec::as_slice).collect::<Vec<_>>())
    }

    /// [`ImageGrid::variation`] restricted to the interior cells of one row.
    pub fn row_variation(&self, r: usize) -> f64 {
        let cells: Vec<&[f64]> = (0..self.cols).map(|c| self.cell(r, c)).collect();
        mean_abs_deviation(&cells)
    }

    /// Per-row pixel variance across interior columns, averaged over rows and pixels.
    pub fn column_variance(&self) -> f64 {
        let mut total = 0.0;
        for r in 0..self.rows {
            for p in 0..CELL * CELL {
                let vals: Vec<f64> = (0..self.cols).map(|c| self.cell(r, c)[p]).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            }
        }
        total / (self.rows * CELL * CELL) as f64
    }
}

fn mean_abs_deviation(cells: &[&[f64]]) -> f64 {
    let n = cells.len() as f64;
    let mut total = 0.0;
    for p in 0..CELL * CELL {
        let m = cells.iter().map(|c| c[p]).sum::<f64>() / n;
        total += cells.iter().map(|c| (c[p] - m).abs()).sum::<f64>();
    }
    total / (n * (CELL * CELL) as f64)
}

/// Binary PGM (`P5`, maxval 255) with white gutters; pixel bytes are `⌊v·255 + ½⌋`.
pub fn render_pgm(grid: &ImageGrid) -> Result<Vec<u8>> {
    let (w, h) = (grid.width(), grid.height());
    let mut canvas = vec![255u8; w * h];
    let mut blit = |cell: &[f64], x0: usize, y0: usize| -> Result<()> {
        for (i, &v) in cell.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("pixel value {v} outside [0,1]")));
            }
            let (y, x) = (i / CELL, i % CELL);
            canvas[(y0 + y) * w + x0 + x] = (v * 255.0 + 0.5).floor() as u8;
        }
        Ok(())
    };
    let interior_x0 = match &grid.separated {
        Some(_) => GUTTER + CELL + SEPARATOR_GUTTER,
        None => GUTTER,
    };
    for r in 0..grid.rows {
        let y0 = GUTTER + r * (CELL + GUTTER);
        if let Some(sep) = &grid.separated {
            blit(&sep[r], GUTTER, y0)?;
        }
        for c in 0..grid.cols {
            blit(grid.cell(r, c), interior_x0 + c * (CELL + GUTTER), y0)?;
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    Ok(out)
}

pub fn write_pgm(grid: &ImageGrid, path: &Path) -> Result<()> {
    fs::write(path, render_pgm(grid)?).map_err(|e| Error::io(path, e))
}

/// `n` evenly spaced values over `[−3, 3]`; a single value is 0.
pub fn lattice(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| -TRAVERSAL_RANGE + 2.0 * TRAVERSAL_RANGE * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Posterior means (and categorical probabilities) for a batch of images.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Tensor,
    pub probs: Option<Tensor>,
}

pub fn encode(params: &ModelParams, images: &Tensor) -> Result<Posterior> {
    const CHUNK: usize = 2000;
    let n = images.rows();
    let (mut mu, mut probs) = (Vec::new(), Vec::new());
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let mut tape = Tape::new();
        let enc = params.encoder.bind(&mut tape, false);
        let x = tape.constant(images.gather_rows(&idx));
        let out = encoder_forward(&mut tape, &enc, x, &params.spec)?;
        mu.extend_from_slice(tape.value(out.gauss.mu).data());
        if let Some(cat) = out.cat {
            probs.extend_from_slice(tape.value(cat.logits).softmax().data());
        }
    }
    Ok(Posterior {
        mu: Tensor::new(vec![n, params.spec.gauss_dim], mu)?,
        probs: match params.spec.cat_k {
            Some(k) => Some(Tensor::new(vec![n, k], probs)?),
            None => None,
        },
    })
}

/// Decoder mean images for codes `z` and, in joint mode, category indices.
pub fn decode(params: &ModelParams, z: &Tensor, categories: Option<&[usize]>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let dec = params.decoder.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let c = match (categories, params.spec.cat_k) {
        (Some(cs), Some(k)) => Some(tape.constant(Tensor::one_hot(cs, k))),
        (None, None) => None,
        _ => return Err(Error::config("category indices must be given exactly for joint models")),
    };
    let logits = decoder_forward(&mut tape, &dec, zv, c, &params.spec)?;
    Ok(tape.value(logits).sigmoid())
}

fn seed_tensor(x_seed: &[f64]) -> Result<Tensor> {
    Ok(Tensor::new(vec![1, x_seed.len()], x_seed.to_vec())?)
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Decodes a `grid_n × grid_n` lattice over the two MI-targeted components
/// (rows vary the first, columns the second), the rest fixed at the posterior mean.
pub fn latent_traversal_grid(params: &ModelParams, x_seed: &[f64], grid_n: usize) -> Result<ImageGrid> {
    if params.spec.is_joint() {
        return Err(Error::config("latent traversal needs a pure Gaussian model"));
    }
    let (d1, d2) = match params.spec.mi_indices.as_slice() {
        [a, b, ..] => (*a, *b),
        _ => (0, 1),
    };
    if d2 >= params.spec.gauss_dim {
        return Err(Error::config("latent traversal needs at least two Gaussian dimensions"));
    }
    let post = encode(params, &seed_tensor(x_seed)?)?;
    let base = post.mu.row(0).to_vec();
    let values = lattice(grid_n);
    let mut z = Vec::with_capacity(grid_n * grid_n * base.len());
    for &a in &values {
        for &b in &values {
            let mut code = base.clone();
            code[d1] = a;
            code[d2] = b;
            z.extend(code);
        }
    }
    let images = decode(params, &Tensor::new(vec![grid_n * grid_n, base.len()], z)?, None)?;
    ImageGrid::new(grid_n, grid_n, rows_of(&images), None)
}

/// One row per model: the original image, then the first MI-targeted
/// component varied over `[−3, 3]` in `steps` cells.
pub fn lambda_sweep_row(models: &[ModelParams], x_seed: &[f64], steps: usize) -> Result<ImageGrid> {
    let first = models
        .first()
        .ok_or_else(|| Error::config("lambda sweep needs at least one model"))?;
    if models.iter().any(|m| m.spec != first.spec) {
        return Err(Error::config("lambda sweep models must share a latent layout"));
    }
    if first.spec.is_joint() {
        return Err(Error::config("lambda sweep needs pure Gaussian models"));
    }
    let dim = first.spec.mi_indices.first().copied().unwrap_or(0);
    let values = lattice(steps);
    let mut cells = Vec::with_capacity(models.len() * steps);
    for m in models {
        let base = encode(m, &seed_tensor(x_seed)?)?.mu.row(0).to_vec();
        let mut z = Vec::with_capacity(steps * base.len());
        for &v in &values {
            let mut code = base.clone();
            code[dim] = v;
            z.extend(code);
        }
        let images = decode(m, &Tensor::new(vec![steps, base.len()], z)?, None)?;
        cells.extend(rows_of(&images));
    }
    ImageGrid::new(models.len(), steps, cells, Some(vec![x_seed.to_vec(); models.len()]))
}

/// One row per seed image: the original, then one decoded cell per category
/// with the Gaussian part fixed at the posterior mean.
pub fn categorical_traversal_grid(params: &ModelParams, x_seeds: &[Vec<f64>]) -> Result<ImageGrid> {
    let k = params
        .spec
        .cat_k
        .ok_or_else(|| Error::config("categorical traversal needs a joint model"))?;
    let mut cells = Vec::with_capacity(x_seeds.len() * k);
    for x in x_seeds {
        let base = encode(params, &seed_tensor(x)?)?.mu.row(0).to_vec();
        let z = Tensor::new(vec![k, base.len()], base.repeat(k))?;
        let cats: Vec<usize> = (0..k).collect();
        cells.extend(rows_of(&decode(params, &z, Some(&cats))?));
    }
    ImageGrid::new(x_seeds.len(), k, cells, Some(x_seeds.to_vec()))
}

/// Category assignment (argmax, ties to the lowest index) per image.
pub fn assignments(probs: &Tensor) -> Vec<usize> {
    probs.argmax_rows()
}

/// Mean `KL(q(c|x) ‖ Uniform(K))` over images.
pub fn mean_categorical_kl(probs: &Tensor) -> f64 {
    let k = probs.cols() as f64;
    let total: f64 = probs
        .data()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p * k).ln())
        .sum();
    total / probs.rows() as f64
}

/// Counts `(category, label)`: `k` rows, 10 label columns.
pub fn onehot_digit_histograms(assign: &[usize], labels: &[u8], k: usize) -> Vec<[usize; 10]> {
    let mut counts = vec![[0usize; 10]; k];
    for (&a, &l) in assign.iter().zip(labels) {
        counts[a][l as usize] += 1;
    }
    counts
}

/// Majority training label of each category; categories never chosen map to label 0.
pub fn majority_mapping(counts: &[[usize; 10]]) -> Vec<u8> {
    counts
        .iter()
        .map(|row| {
            let mut best = 0;
            for d in 1..10 {
                if row[d] > row[best] {
                    best = d;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub mapping: Vec<u8>,
    pub train: f64,
    pub test: f64,
}

pub fn mapped_accuracy(mapping: &[u8], assign: &[usize], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = assign.iter().zip(labels).filter(|(&a, &l)| mapping[a] == l).count();
    hits as f64 / labels.len() as f64
}

/// Uses the categorical posterior as a classifier through a majority-vote mapping fitted on the training split.
pub fn categorical_classifier_accuracy(
    train_assign: &[usize],
    train_labels: &[u8],
    test_assign: &[usize],
    test_labels: &[u8],
    k: usize,
) -> AccuracyReport {
    let mapping = majority_mapping(&onehot_digit_histograms(train_assign, train_labels, k));
    AccuracyReport {
        train: mapped_accuracy(&mapping, train_assign, train_labels),
        test: mapped_accuracy(&mapping, test_assign, test_labels),
        mapping,
    }
}

/// Counts of all posterior probabilities in `bins` equal-width bins on `[0,1]`.
pub fn categorical_probability_histogram(probs: &Tensor, bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let mut counts = vec![0usize; bins];
    for &p in probs.data() {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts)
}

/// Fraction of probabilities in `[lo, hi]`.
pub fn mass_within(probs: &Tensor, lo: f64, hi: f64) -> f64 {
    probs.data().iter().filter(|&&p| p >= lo && p <= hi).count() as f64 / probs.len() as f64
}

/// Fraction of probabilities strictly above `t`.
pub fn mass_above(probs: &Tensor, t: f64) -> f64 {
    probs.data().iter().filter(|&&p| p > t).count() as f64 / probs.len() as f64
}

/// Mean over non-empty categories of `max label count / category size`.
pub fn cluster_purity(counts: &[[usize; 10]]) -> f64 {
    let rows: Vec<f64> = counts
        .iter()
        .filter_map(|row| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| *row.iter().max().unwrap() as f64 / total as f64)
        })
        .collect();
    rows.iter().sum::<f64>() / rows.len().max(1) as f64
}

/// Largest total-variation distance between a non-empty category's label
/// distribution and the overall label distribution.
pub fn max_tv_to_marginal(counts: &[[usize; 10]]) -> f64 {
    let mut marginal = [0.0; 10];
    let n: usize = counts.iter().flatten().sum();
    for row in counts {
        for (m, &c) in marginal.iter_mut().zip(row) {
            *m += c as f64 / n as f64;
        }
    }
    counts
        .iter()
        .filter_map(|row| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| {
                0.5 * row
                    .iter()
                    .zip(&marginal)
                    .map(|(&c, m)| (c as f64 / total as f64 - m).abs())
                    .sum::<f64>()
            })
        })
        .fold(0.0, f64::max)
}

/// A copy whose decoder output cannot depend on `c` and whose categorical
/// posterior is uniform, so `I(c; x̂) = 0` exactly.
pub fn ignore_categorical_code(params: &ModelParams) -> Result<ModelParams> {
    let k = params
        .spec
        .cat_k
        .ok_or_else(|| Error::config("the categorical code only exists in joint models"))?;
    let mut out = params.clone();
    let d = out.spec.gauss_dim;
    let first = out
        .decoder
        .trunk
        .first_mut()
        .or_else(|| out.decoder.heads.first_mut())
        .expect("decoder has a layer");
    let cols = first.w.cols();
    for r in d..d + k {
        first.w.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
    }
    let head = &mut out.encoder.heads[2];
    head.w.data_mut().fill(0.0);
    head.b.data_mut().fill(0.0);
    Ok(out)
}

/// Writes a CSV with `header` and pre-formatted rows.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = format!("{header}\n");
    for row in rows {
        body.push_str(&row);
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A joint distribution `P(x, y)` on finite supports with a test function `f(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteJoint {
    /// `p[x][y]`.
    pub p: Vec<Vec<f64>>,
    /// `f[x][y]`.
    pub f: Vec<Vec<f64>>,
}

pub const MAX_SUPPORT: usize = 16;

impl FiniteJoint {
    pub fn new(p: Vec<Vec<f64>>, f: Vec<Vec<f64>>) -> Result<Self> {
        let nx = p.len();
        let ny = p.first().map_or(0, Vec::len);
        if nx == 0 || ny == 0 || nx > MAX_SUPPORT || ny > MAX_SUPPORT {
            return Err(Error::config(format!(
                "supports must be 1..={MAX_SUPPORT}, got {nx}×{ny}"
            )));
        }
        if p.iter().chain(&f).any(|r| r.len() != ny) || f.len() != nx {
            return Err(Error::config(
                "joint and function tables must be rectangular and equal-sized",
            ));
        }
        if p.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("probabilities must be finite and non-negative"));
        }
        let total: f64 = p.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("joint sums to {total}, not 1")));
        }
        Ok(Self { p, f })
    }

    /// Random joint with Dirichlet(1) weights and `f ~ N(0,1)`.
    pub fn random(rng: &mut Rng, nx: usize, ny: usize) -> Result<Self> {
        let raw: Vec<f64> = (0..nx * ny).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let total: f64 = raw.iter().sum();
        let p = raw.chunks(ny).map(|r| r.iter().map(|v| v / total).collect()).collect();
        let f = (0..nx).map(|_| (0..ny).map(|_| rng.normal()).collect()).collect();
        Self::new(p, f)
    }

    fn px(&self) -> Vec<f64> {
        self.p.iter().map(|r| r.iter().sum()).collect()
    }

    fn py(&self) -> Vec<f64> {
        let mut py = vec![0.0; self.p[0].len()];
        for r in &self.p {
            for (a, v) in py.iter_mut().zip(r) {
                *a += v;
            }
        }
        py
    }

    /// `E_{x, y|x}[f(x, y)]`.
    pub fn exact_lhs(&self) -> f64 {
        let px = self.px();
        let mut total = 0.0;
        for (x, row) in self.p.iter().enumerate() {
            if px[x] == 0.0 {
                continue;
            }
            let inner: f64 = row.iter().enumerate().map(|(y, &pxy)| pxy / px[x] * self.f[x][y]).sum();
            total += px[x] * inner;
        }
        total
    }

    /// `E_{x, y|x, x'|y}[f(x', y)]` as three nested sums.
    pub fn exact_rhs(&self) -> f64 {
        let (px, py) = (self.px(), self.py());
        let mut total = 0.0;
        for (x, row) in self.p.iter().enumerate() {
            if px[x] == 0.0 {
                continue;
            }
            for (y, &pxy) in row.iter().enumerate() {
                if pxy == 0.0 {
                    continue;
                }
                let inner: f64 = (0..self.p.len()).map(|x2| self.p[x2][y] / py[y] * self.f[x2][y]).sum();
                total += px[x] * (pxy / px[x]) * inner;
            }
        }
        total
    }

    fn conditional_y(&self, x: usize) -> Vec<f64> {
        self.p[x].clone()
    }

    fn conditional_x(&self, y: usize) -> Vec<f64> {
        self.p.iter().map(|r| r[y]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub exact_lhs: f64,
    pub exact_rhs: f64,
}

impl LemmaCheck {
    pub fn pooled_se(&self) -> f64 {
        (self.lhs_se.powi(2) + self.rhs_se.powi(2)).sqrt()
    }

    /// MC sides agree within 3 pooled SE and each lies within 3 SE of the exact value.
    pub fn passes(&self) -> bool {
        (self.lhs - self.rhs).abs() <= 3.0 * self.pooled_se()
            && (self.lhs - self.exact_lhs).abs() <= 3.0 * self.lhs_se
            && (self.rhs - self.exact_rhs).abs() <= 3.0 * self.rhs_se
    }
}

/// Monte Carlo and exact evaluation of both sides of
/// `E_{x, y|x}[f(x, y)] = E_{x, y|x, x'|y}[f(x', y)]`.
pub fn lemma_mc_check(joint: &FiniteJoint, n_samples: usize, rng: &mut Rng) -> Result<LemmaCheck> {
    if n_samples < 2 {
        return Err(Error::config("lemma check needs at least two samples"));
    }
    let px = joint.px();
    let cond_y: Vec<Vec<f64>> = (0..px.len()).map(|x| joint.conditional_y(x)).collect();
    let cond_x: Vec<Vec<f64>> = (0..joint.p[0].len()).map(|y| joint.conditional_x(y)).collect();
    let (mut lhs, mut rhs) = (Vec::with_capacity(n_samples), Vec::with_capacity(n_samples));
    for _ in 0..n_samples {
        let x = rng.categorical(&px);
        let y = rng.categorical(&cond_y[x]);
        lhs.push(joint.f[x][y]);
        let x2 = rng.categorical(&px);
        let y2 = rng.categorical(&cond_y[x2]);
        let x3 = rng.categorical(&cond_x[y2]);
        rhs.push(joint.f[x3][y2]);
    }
    let (l, lse) = crate::objectives::mean_and_se(&lhs);
    let (r, rse) = crate::objectives::mean_and_se(&rhs);
    Ok(LemmaCheck {
        lhs: l,
        rhs: r,
        lhs_se: lse,
        rhs_se: rse,
        exact_lhs: joint.exact_lhs(),
        exact_rhs: joint.exact_rhs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaBattery {
    pub checks: Vec<LemmaCheck>,
    pub max_exact_gap: f64,
    pub mc_failures: usize,
}

/// Runs [`lemma_mc_check`] on `n_joints` random joints with supports of 2..=8 states.
pub fn lemma_battery(seed: u64, n_joints: usize, n_samples: usize) -> Result<LemmaBattery> {
    let mut shape_rng = Rng::stream(seed, Purpose::Test, 0);
    let mut checks = Vec::with_capacity(n_joints);
    for i in 0..n_joints {
        let nx = 2 + shape_rng.below(7);
        let ny = 2 + shape_rng.below(7);
        let joint = FiniteJoint::random(&mut shape_rng, nx, ny)?;
        checks.push(lemma_mc_check(
            &joint,
            n_samples,
            &mut Rng::stream(seed, Purpose::Test, 1 + i as u64),
        )?);
    }
    let max_exact_gap = checks
        .iter()
        .map(|c| (c.exact_lhs - c.exact_rhs).abs())
        .fold(0.0, f64::max);
    let mc_failures = checks.iter().filter(|c| !c.passes()).count();
    Ok(LemmaBattery {
        checks,
        max_exact_gap,
        mc_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{init_params, Arch, LatentSpec};

    fn flat(v: f64) -> Vec<f64> {
        vec![v; CELL * CELL]
    }

    #[test]
    fn pgm_single_black_cell() {
        let grid = ImageGrid::new(1, 1, vec![flat(0.0)], None).unwrap();
        let bytes = render_pgm(&grid).unwrap();
        let header = b"P5\n32 32\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        for y in 0..32 {
            for x in 0..32 {
                let inside = (2..30).contains(&x) && (2..30).contains(&y);
                assert_eq!(body[y * 32 + x], if inside { 0 } else { 255 });
            }
        }
    }

    #[test]
    fn pgm_rounding_half_up() {
        let mut cell = flat(1.0);
        cell[0] = 0.0;
        cell[1] = 0.25;
        cell[2] = 0.5;
        let grid = ImageGrid::new(1, 1, vec![cell], None).unwrap();
        let bytes = render_pgm(&grid).unwrap();
        let body = &bytes[b"P5\n32 32\n255\n".len()..];
        // 0.25·255 = 63.75 and 0.5·255 = 127.5 sit on either side of a rounding boundary.
        assert_eq!(&body[2 * 32 + 2..2 * 32 + 6], &[0, 64, 128, 255]);
    }

    #[test]
    fn grid_dimensions() {
        let grid = ImageGrid::new(2, 2, vec![flat(0.5); 4], None).unwrap();
        assert_eq!((grid.width(), grid.height()), (62, 62));
        let sep = ImageGrid::new(2, 3, vec![flat(0.5); 6], Some(vec![flat(0.0); 2])).unwrap();
        assert_eq!(sep.width(), 2 + 28 + 6 + 3 * 30);
        assert_eq!(sep.cell_count(), 8);
        assert!(ImageGrid::new(2, 2, vec![flat(0.5); 3], None).is_err());
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        let grid = ImageGrid::new(1, 1, vec![flat(1.5)], None).unwrap();
        assert!(render_pgm(&grid).is_err());
    }

    #[test]
    fn lattice_values() {
        assert_eq!(lattice(7), vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(lattice(1), vec![0.0]);
    }

    fn gaussian_model() -> ModelParams {
        init_params(
            &mut Rng::seed_from(3),
            &LatentSpec::gaussian(4, vec![0, 1]),
            &Arch::tiny(784, 8),
        )
        .unwrap()
    }

    fn joint_model() -> ModelParams {
        init_params(
            &mut Rng::seed_from(3),
            &LatentSpec::joint(4, 10, 0.67),
            &Arch::tiny(784, 8),
        )
        .unwrap()
    }

    fn seed_image() -> Vec<f64> {
        Rng::seed_from(9).uniform_tensor(&[1, 784], 0.0, 1.0).into_data()
    }

    #[test]
    fn traversal_center_is_decoded_origin() {
        let m = gaussian_model();
        let x = seed_image();
        let grid = latent_traversal_grid(&m, &x, 7).unwrap();
        assert_eq!(grid.cells.len(), 49);
        let mut z = encode(&m, &Tensor::new(vec![1, 784], x).unwrap())
            .unwrap()
            .mu
            .into_data();
        z[0] = 0.0;
        z[1] = 0.0;
        let expected = decode(&m, &Tensor::new(vec![1, 4], z).unwrap(), None).unwrap();
        assert_eq!(grid.cell(3, 3), expected.data());
        assert!(latent_traversal_grid(&joint_model(), &seed_image(), 7).is_err());
    }

    #[test]
    fn sweep_rows_follow_model_order() {
        let a = gaussian_model();
        let mut b = gaussian_model();
        b.decoder.heads[0].b.data_mut().fill(1.0);
        let grid = lambda_sweep_row(&[a.clone(), b.clone()], &seed_image(), 5).unwrap();
        assert_eq!(grid.rows, 2);
        let only_a = lambda_sweep_row(&[a], &seed_image(), 5).unwrap();
        let only_b = lambda_sweep_row(&[b], &seed_image(), 5).unwrap();
        assert_eq!(grid.cells[..5], only_a.cells[..]);
        assert_eq!(grid.cells[5..], only_b.cells[..]);
        assert!(lambda_sweep_row(&[gaussian_model(), joint_model()], &seed_image(), 5).is_err());
    }

    #[test]
    fn categorical_grid_argmax_cell_is_reconstruction() {
        let m = joint_model();
        let x = seed_image();
        let grid = categorical_traversal_grid(&m, std::slice::from_ref(&x)).unwrap();
        assert_eq!(grid.cols, 10);
        let post = encode(&m, &Tensor::new(vec![1, 784], x).unwrap()).unwrap();
        let k = assignments(post.probs.as_ref().unwrap())[0];
        let recon = decode(&m, &post.mu, Some(&[k])).unwrap();
        assert_eq!(grid.cell(0, k), recon.data());
    }

    #[test]
    fn perfect_clustering_scores_one_and_permutation_invariant() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let assign: Vec<usize> = labels.iter().map(|&l| (l as usize + 3) % 10).collect();
        let r = categorical_classifier_accuracy(&assign, &labels, &assign, &labels, 10);
        assert_eq!(r.test, 1.0);
        assert_eq!(r.train, 1.0);
    }

    #[test]
    fn uniform_encoder_scores_majority_frequency() {
        let labels: Vec<u8> = vec![3, 3, 3, 1, 2];
        let assign = vec![0; 5];
        let r = categorical_classifier_accuracy(&assign, &labels, &assign, &labels, 10);
        assert_eq!(r.mapping[0], 3);
        assert_eq!(r.mapping[1], 0);
        assert!((r.test - 0.6).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_and_uniform_mass() {
        let probs = Tensor::full(&[7, 10], 0.1);
        let h = categorical_probability_histogram(&probs, 20).unwrap();
        assert_eq!(h.iter().sum::<usize>(), 70);
        assert_eq!(h[2], 70);
        assert!(categorical_probability_histogram(&probs, 0).is_err());
        assert_eq!(mass_within(&probs, 0.05, 0.15), 1.0);
        assert_eq!(mass_above(&probs, 0.8), 0.0);
    }

    #[test]
    fn digit_histogram_marginals() {
        let labels: Vec<u8> = vec![0, 1, 1, 2, 9];
        let assign = vec![4, 4, 2, 2, 2];
        let c = onehot_digit_histograms(&assign, &labels, 10);
        assert_eq!(c[4].iter().sum::<usize>(), 2);
        assert_eq!(c.iter().map(|r| r[1]).sum::<usize>(), 2);
        assert!((cluster_purity(&c) - (0.5 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ignoring_code_removes_category_effect() {
        let m = ignore_categorical_code(&joint_model()).unwrap();
        let grid = categorical_traversal_grid(&m, &[seed_image()]).unwrap();
        assert!(grid.column_variance() < 1e-25);
        let post = encode(&m, &Tensor::new(vec![1, 784], seed_image()).unwrap()).unwrap();
        assert!(post.probs.unwrap().data().iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn lemma_uniform_two_by_two() {
        let p = vec![vec![0.25; 2]; 2];
        let f = vec![vec![0.0, 2.0], vec![1.0, 3.0]];
        let j = FiniteJoint::new(p, f).unwrap();
        assert!((j.exact_lhs() - 1.5).abs() < 1e-15);
        assert!((j.exact_rhs() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lemma_constant_function() {
        let j = FiniteJoint::random(&mut Rng::seed_from(2), 3, 4).unwrap();
        let c = FiniteJoint::new(j.p.clone(), vec![vec![2.5; 4]; 3]).unwrap();
        assert!((c.exact_lhs() - 2.5).abs() < 1e-12 && (c.exact_rhs() - 2.5).abs() < 1e-12);
        let mc = lemma_mc_check(&c, 100, &mut Rng::seed_from(1)).unwrap();
        assert_eq!((mc.lhs, mc.rhs), (2.5, 2.5));
    }

    #[test]
    fn non_normalized_joint_rejected() {
        assert!(FiniteJoint::new(vec![vec![0.5, 0.6]], vec![vec![0.0, 0.0]]).is_err());
        assert!(FiniteJoint::new(vec![vec![1.0; 17]], vec![vec![0.0; 17]]).is_err());
    }
}
