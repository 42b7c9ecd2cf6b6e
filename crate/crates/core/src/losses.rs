//! Loss kernels for the three training objectives and their combination,
//! with analytic gradients.
//!
//! The printed objectives sum raw log-probabilities; everything here is the
//! negative log-likelihood so that "loss" is minimized. All reductions
//! default to sums over positions; a mean reduction is available for step
//! size stability and scales gradients consistently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};

/// Weight on the denoising term; the other two objectives enter unweighted.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Guard below which a norm product counts as degenerate instead of being
/// clamped.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Per-step unnormalized scores over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    logits: Matrix,
}

impl TokenDistribution {
    pub fn new(logits: Matrix) -> Result<Self> {
        logits.ensure_finite("logits")?;
        Ok(Self { logits })
    }

    pub fn steps(&self) -> usize {
        self.logits.rows()
    }

    pub fn vocab(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }
}

fn check_targets(dist: &TokenDistribution, targets: &[u32]) -> Result<()> {
    if targets.len() != dist.steps() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} distribution steps",
            targets.len(),
            dist.steps()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= dist.vocab()) {
        return Err(Error::InvalidTarget { id: bad, vocab: dist.vocab() });
    }
    Ok(())
}

/// Negative log-likelihood of the targets under row-wise softmax.
pub fn cross_entropy(
    dist: &TokenDistribution,
    targets: &[u32],
    reduction: Reduction,
) -> Result<f64> {
    check_targets(dist, targets)?;
    let mut loss = 0.0;
    for (row, &target) in dist.logits.iter_rows().zip(targets) {
        loss += row_nll(row, target as usize);
    }
    Ok(reduce(loss, targets.len(), reduction))
}

/// Loss plus its gradient with respect to the logits (softmax minus the
/// one-hot target, scaled by the reduction).
pub fn cross_entropy_with_grad(
    dist: &TokenDistribution,
    targets: &[u32],
    reduction: Reduction,
) -> Result<(f64, Matrix)> {
    check_targets(dist, targets)?;
    let m = dist.steps();
    let v = dist.vocab();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => {
            if m == 0 {
                1.0
            } else {
                1.0 / m as f64
            }
        }
    };
    let mut grad = Matrix::zeros(m, v);
    let mut loss = 0.0;
    for (i, (row, &target)) in dist.logits.iter_rows().zip(targets).enumerate() {
        let lse = log_sum_exp(row);
        loss += lse - row[target as usize];
        let g = grad.row_mut(i);
        for (gj, &lj) in g.iter_mut().zip(row) {
            *gj = (lj - lse).exp() * scale;
        }
        g[target as usize] -= scale;
    }
    Ok((reduce(loss, m, reduction), grad))
}

/// Echo objective: next-token loss of the pseudo-label sequence.
pub fn echo_loss(dist: &TokenDistribution, targets: &[u32]) -> Result<f64> {
    cross_entropy(dist, targets, Reduction::Sum)
}

/// S2T objective over ground-truth text; shares the echo kernel exactly.
pub fn s2t_loss(dist: &TokenDistribution, targets: &[u32]) -> Result<f64> {
    cross_entropy(dist, targets, Reduction::Sum)
}

fn row_nll(row: &[f64], target: usize) -> f64 {
    log_sum_exp(row) - row[target]
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&l| (l - mx).exp()).sum();
    mx + sum.ln()
}

fn reduce(loss: f64, n: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => loss,
        Reduction::Mean => {
            if n == 0 {
                0.0
            } else {
                loss / n as f64
            }
        }
    }
}

/// One-hidden-layer feed-forward map with a tanh nonlinearity; `w1` is
/// input-by-hidden, `w2` hidden-by-output. Doubles as its own gradient
/// container.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl AdapterParams {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        if b1.len() != w1.cols() || w2.rows() != w1.cols() || b2.len() != w2.cols() {
            return Err(Error::DimensionMismatch(format!(
                "adapter shapes: w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        for m in [&w1, &w2] {
            m.ensure_finite("adapter weights")?;
        }
        if !b1.iter().chain(&b2).all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("adapter biases contain non-finite entries".into()));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn zeros_like(&self) -> AdapterParams {
        AdapterParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "adapter input dim {} vs expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut z1 = self.w1.vecmat(input);
        for (z, &b) in z1.iter_mut().zip(&self.b1) {
            *z = (*z + b).tanh();
        }
        let mut out = self.w2.vecmat(&z1);
        for (o, &b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        Ok(out)
    }

    pub fn forward_matrix(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(inputs.rows(), self.output_dim());
        for i in 0..inputs.rows() {
            let row = self.forward(inputs.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Flat parameter order: w1 row-major, b1, w2 row-major, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(self.w1.data());
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(self.w2.data());
        flat.extend_from_slice(&self.b2);
        flat
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<AdapterParams> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} flat values for {} adapter parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let (d, h, o) = (self.w1.rows(), self.w1.cols(), self.w2.cols());
        let mut off = 0;
        let w1 = Matrix::new(d, h, flat[off..off + d * h].to_vec())?;
        off += d * h;
        let b1 = flat[off..off + h].to_vec();
        off += h;
        let w2 = Matrix::new(h, o, flat[off..off + h * o].to_vec())?;
        off += h * o;
        let b2 = flat[off..].to_vec();
        AdapterParams::new(w1, b1, w2, b2)
    }

    pub fn param_count(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }

    /// In-place gradient step: `p -= lr * g`.
    pub fn apply_gradient(&mut self, grad: &AdapterParams, lr: f64) {
        fn axpy(dst: &mut [f64], src: &[f64], lr: f64) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d -= lr * s;
            }
        }
        axpy(self.w1.data_mut(), grad.w1.data(), lr);
        axpy(&mut self.b1, &grad.b1, lr);
        axpy(self.w2.data_mut(), grad.w2.data(), lr);
        axpy(&mut self.b2, &grad.b2, lr);
    }
}

/// Denoising objective: sum over rows of one minus the cosine between the
/// adapted hidden state and the matching embedding row. Returns the exact
/// gradient with respect to every adapter parameter.
pub fn denoising_loss(
    hidden: &Matrix,
    adapter: &AdapterParams,
    embeddings: &Matrix,
    reduction: Reduction,
) -> Result<(f64, AdapterParams)> {
    if hidden.rows() != embeddings.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} hidden rows vs {} embedding rows",
            hidden.rows(),
            embeddings.rows()
        )));
    }
    if hidden.cols() != adapter.input_dim() || embeddings.cols() != adapter.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "hidden dim {} / embedding dim {} vs adapter {}->{}",
            hidden.cols(),
            embeddings.cols(),
            adapter.input_dim(),
            adapter.output_dim()
        )));
    }
    hidden.ensure_finite("hidden states")?;
    embeddings.ensure_finite("embeddings")?;

    let n = hidden.rows();
    let mut loss = 0.0;
    let mut grad = adapter.zeros_like();
    let hdim = adapter.hidden_dim();
    let odim = adapter.output_dim();

    for i in 0..n {
        let h = hidden.row(i);
        let e = embeddings.row(i);

        // Forward pass, keeping the intermediates for backprop.
        let mut z1 = adapter.w1.vecmat(h);
        for (z, &b) in z1.iter_mut().zip(&adapter.b1) {
            *z += b;
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.tanh()).collect();
        let mut out = adapter.w2.vecmat(&a1);
        for (o, &b) in out.iter_mut().zip(&adapter.b2) {
            *o += b;
        }

        let no = l2_norm(&out);
        let ne = l2_norm(e);
        let denom = no * ne;
        if denom < NORM_EPSILON {
            return Err(Error::DegenerateVector(format!(
                "norm product {denom:e} below {NORM_EPSILON:e} at row {i}"
            )));
        }
        let cos = dot(&out, e) / denom;
        loss += 1.0 - cos;

        // d(1 - cos)/d out.
        let mut dout = vec![0.0; odim];
        let inv_denom = 1.0 / denom;
        let self_term = cos / (no * no);
        for k in 0..odim {
            dout[k] = -e[k] * inv_denom + out[k] * self_term;
        }

        // Backprop through w2/b2.
        let mut da1 = vec![0.0; hdim];
        for j in 0..hdim {
            let w2_row = adapter.w2.row(j);
            let g_row = grad.w2.row_mut(j);
            let aj = a1[j];
            let mut acc = 0.0;
            for k in 0..odim {
                acc += w2_row[k] * dout[k];
                g_row[k] += aj * dout[k];
            }
            da1[j] = acc;
        }
        for (gb, &d) in grad.b2.iter_mut().zip(&dout) {
            *gb += d;
        }

        // Through the tanh and w1/b1.
        let dz1: Vec<f64> = da1.iter().zip(&a1).map(|(&d, &a)| d * (1.0 - a * a)).collect();
        for (p, &hp) in h.iter().enumerate() {
            let g_row = grad.w1.row_mut(p);
            for (g, &d) in g_row.iter_mut().zip(&dz1) {
                *g += hp * d;
            }
        }
        for (gb, &d) in grad.b1.iter_mut().zip(&dz1) {
            *gb += d;
        }
    }

    if reduction == Reduction::Mean && n > 0 {
        let inv = 1.0 / n as f64;
        for v in grad.w1.data_mut() {
            *v *= inv;
        }
        for v in &mut grad.b1 {
            *v *= inv;
        }
        for v in grad.w2.data_mut() {
            *v *= inv;
        }
        for v in &mut grad.b2 {
            *v *= inv;
        }
        loss *= inv;
    }
    Ok((loss, grad))
}

/// Components and weighted total for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub echo: f64,
    pub denoising: f64,
    pub s2t: f64,
    pub lambda: f64,
    pub total: f64,
}

pub fn combined_loss(echo: f64, denoising: f64, s2t: f64, lambda: f64) -> Result<LossBreakdown> {
    for (name, v) in [("echo", echo), ("denoising", denoising), ("s2t", s2t), ("lambda", lambda)] {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} is not finite")));
        }
    }
    Ok(LossBreakdown { echo, denoising, s2t, lambda, total: echo + lambda * denoising + s2t })
}

/// Central-difference check of an analytic gradient.
///
/// `f` evaluates the loss and its gradient at a parameter vector. Returns
/// the maximum over coordinates of `|analytic - numeric| /
/// max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::InvalidInput(format!("step {step} outside (0, 1e-2]")));
    }
    let (base, analytic) = f(params)?;
    if !base.is_finite() {
        return Err(Error::InvalidInput("loss is not finite at the base point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient length {} vs {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = f(&probe)?.0;
        probe[i] = params[i] - step;
        let down = f(&probe)?.0;
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite loss probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
