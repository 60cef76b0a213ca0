//! Linear softmax models shared by the class-probability estimate and the
//! weighted-ERM oracle: feature encoding, a weighted soft-label cross-entropy
//! objective, and fixed-step gradient descent.

use std::collections::HashMap;

use log::debug;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};

const CHUNK: usize = 1024;

/// Raw features followed by one-hot attributes, each column standardized
/// with training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_raw: usize,
    cardinalities: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureMap {
    pub fn fit(ds: &Dataset) -> Self {
        let mut map = Self {
            num_raw: ds.feature_dim(),
            cardinalities: ds.schema().cardinalities().to_vec(),
            mean: Vec::new(),
            scale: Vec::new(),
        };
        let dim = map.dim();
        map.mean = vec![0.0; dim];
        map.scale = vec![1.0; dim];
        let n = ds.len() as f64;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut row = vec![0.0; dim];
        for i in 0..ds.len() {
            map.encode_raw(ds.row(i), &ds.attributes()[i], &mut row);
            for j in 0..dim {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        for j in 0..dim {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            map.mean[j] = mean;
            map.scale[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        map
    }

    pub fn from_parts(
        num_raw: usize,
        cardinalities: Vec<usize>,
        mean: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        let dim = num_raw + cardinalities.iter().sum::<usize>();
        check_len(dim, mean.len(), "feature means")?;
        check_len(dim, scale.len(), "feature scales")?;
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Parameter("feature scales must be positive".into()));
        }
        Ok(Self {
            num_raw,
            cardinalities,
            mean,
            scale,
        })
    }

    pub fn num_raw(&self) -> usize {
        self.num_raw
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Encoded width, without the intercept.
    pub fn dim(&self) -> usize {
        self.num_raw + self.cardinalities.iter().sum::<usize>()
    }

    fn encode_raw(&self, z: &[f64], a: &[usize], out: &mut [f64]) {
        out[..self.num_raw].copy_from_slice(z);
        let mut offset = self.num_raw;
        for (&v, &c) in a.iter().zip(&self.cardinalities) {
            for l in 0..c {
                out[offset + l] = if l == v { 1.0 } else { 0.0 };
            }
            offset += c;
        }
    }

    /// Writes the standardized encoding of `(z, a)` into `out[..dim]`.
    pub fn encode(&self, z: &[f64], a: &[usize], out: &mut [f64]) -> Result<()> {
        check_len(self.num_raw, z.len(), "raw features")?;
        check_len(self.cardinalities.len(), a.len(), "attribute vector")?;
        if let Some((m, _)) = a
            .iter()
            .zip(&self.cardinalities)
            .enumerate()
            .find(|(_, (v, c))| v >= c)
        {
            return Err(Error::Schema(format!("attribute {m} out of range")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        self.encode_raw(z, a, out);
        for j in 0..self.dim() {
            out[j] = (out[j] - self.mean[j]) / self.scale[j];
        }
        Ok(())
    }

    /// Encoded rows with a trailing intercept column.
    pub fn design(&self, ds: &Dataset) -> Result<Design> {
        let p = self.dim() + 1;
        let mut x = vec![0.0; ds.len() * p];
        for (i, row) in x.chunks_mut(p).enumerate() {
            self.encode(ds.row(i), &ds.attributes()[i], &mut row[..p - 1])?;
            row[p - 1] = 1.0;
        }
        Ok(Design { x, n: ds.len(), p })
    }
}

/// Row-major design matrix whose last column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    x: Vec<f64>,
    n: usize,
    p: usize,
}

impl Design {
    pub fn new(x: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        check_len(n * p, x.len(), "design matrix")?;
        Ok(Self { x, n, p })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// `s = xᵀΘ` for `Θ` stored `p × K` row-major.
pub fn scores(x: &[f64], theta: &[f64], k: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (&xj, row) in x.iter().zip(theta.chunks_exact(k)) {
        for (o, t) in out.iter_mut().zip(row) {
            *o += xj * t;
        }
    }
}

/// In-place softmax; returns the log-sum-exp of the input.
pub fn softmax_in_place(s: &mut [f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
    max + total.ln()
}

/// `Σ_i w_i Σ_k t_ik (−log softmax_k(x_iᵀΘ)) + (l2/2)‖Θ without intercept‖²`.
///
/// Rows with identical encodings are merged on construction.
#[derive(Debug, Clone)]
pub struct SoftmaxProblem {
    design: Design,
    targets: Vec<f64>,
    weights: Vec<f64>,
    k: usize,
    l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// False when the loss rose over the last tenth of the iterations.
    pub converged: bool,
}

impl SoftmaxProblem {
    /// `targets` is `n × K` row-major soft labels, `weights` one nonnegative weight per row.
    pub fn new(
        design: &Design,
        targets: &[f64],
        weights: &[f64],
        k: usize,
        l2: f64,
    ) -> Result<Self> {
        check_len(design.n * k, targets.len(), "soft labels")?;
        check_len(design.n, weights.len(), "sample weights")?;
        if weights.iter().any(|w| !(*w >= 0.0)) || targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter(
                "weights must be nonnegative and targets finite".into(),
            ));
        }
        let p = design.p;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut x = Vec::new();
        let mut acc_t: Vec<f64> = Vec::new();
        let mut acc_w: Vec<f64> = Vec::new();
        for i in 0..design.n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let row = design.row(i);
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                x.extend_from_slice(row);
                acc_t.extend(std::iter::repeat(0.0).take(k));
                acc_w.push(0.0);
                acc_w.len() - 1
            });
            acc_w[slot] += w;
            for (a, t) in acc_t[slot * k..(slot + 1) * k]
                .iter_mut()
                .zip(&targets[i * k..(i + 1) * k])
            {
                *a += w * t;
            }
        }
        let m = acc_w.len();
        for (slot, &w) in acc_w.iter().enumerate() {
            for t in &mut acc_t[slot * k..(slot + 1) * k] {
                *t /= w;
            }
        }
        Ok(Self {
            design: Design { x, n: m, p },
            targets: acc_t,
            weights: acc_w,
            k,
            l2,
        })
    }

    pub fn num_params(&self) -> usize {
        self.design.p * self.k
    }

    /// Distinct rows after merging duplicates.
    pub fn num_rows(&self) -> usize {
        self.design.n
    }

    pub fn evaluate(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (p, k) = (self.design.p, self.k);
        let chunks = self.design.n.div_ceil(CHUNK);
        // Class-major copies keep the per-row loops contiguous.
        let mut cols = vec![0.0; p * k];
        for j in 0..p {
            for l in 0..k {
                cols[l * p + j] = theta[j * k + l];
            }
        }
        let partial: Vec<(f64, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut g = vec![0.0; k * p];
                let mut loss = 0.0;
                let mut s = vec![0.0; k];
                for i in c * CHUNK..((c + 1) * CHUNK).min(self.design.n) {
                    let x = self.design.row(i);
                    let t = &self.targets[i * k..(i + 1) * k];
                    let w = self.weights[i];
                    for (sl, col) in s.iter_mut().zip(cols.chunks_exact(p)) {
                        *sl = x.iter().zip(col).map(|(a, b)| a * b).sum();
                    }
                    let raw: f64 = t.iter().zip(&s).map(|(tk, sk)| tk * sk).sum();
                    let total: f64 = t.iter().sum();
                    let lse = softmax_in_place(&mut s);
                    loss += w * (total * lse - raw);
                    for ((gl, sl), tl) in g.chunks_exact_mut(p).zip(&s).zip(t) {
                        let rl = w * (total * sl - tl);
                        for (gj, xj) in gl.iter_mut().zip(x) {
                            *gj += rl * xj;
                        }
                    }
                }
                (loss, g)
            })
            .collect();
        grad.fill(0.0);
        let mut loss = 0.0;
        for (l, g) in partial {
            loss += l;
            for j in 0..p {
                for c in 0..k {
                    grad[j * k + c] += g[c * p + j];
                }
            }
        }
        let reg = (p - 1) * k;
        for (gj, tj) in grad[..reg].iter_mut().zip(&theta[..reg]) {
            *gj += self.l2 * tj;
            loss += 0.5 * self.l2 * tj * tj;
        }
        loss
    }

    /// `iterations` steps of `Θ ← Θ − lr ∇`.
    pub fn descend(&self, theta: &mut [f64], lr: f64, iterations: usize) -> DescentReport {
        let mut grad = vec![0.0; theta.len()];
        let tail_start = iterations - iterations / 10;
        let mut initial = f64::NAN;
        let mut tail_loss = f64::NAN;
        let mut last = f64::NAN;
        for it in 0..iterations {
            last = self.evaluate(theta, &mut grad);
            if it == 0 {
                initial = last;
            }
            if it == tail_start {
                tail_loss = last;
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
        }
        let final_loss = if iterations == 0 {
            f64::NAN
        } else {
            self.evaluate(theta, &mut grad)
        };
        // A loss that stopped moving has converged; only an increase is flagged.
        let converged = iterations == 0
            || final_loss <= tail_loss
            || final_loss - tail_loss <= 1e-12 * tail_loss.abs().max(1.0);
        if !converged {
            debug!("loss rose over the final iterations ({tail_loss} -> {last} -> {final_loss})");
        }
        DescentReport {
            initial_loss: initial,
            final_loss,
            converged,
        }
    }
}
