//! Layers and pointwise ops, each with an explicit backward pass.

use rand::Rng;

use super::{shape_err, Matrix, NnError};

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self, NnError> {
        if bias.len() != weight.rows() {
            return Err(shape_err(format!("bias {} for {} outputs", bias.len(), weight.rows())));
        }
        Ok(Self { weight, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Matrix::uniform(outputs, inputs, limit, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        let mut y = x.matmul_nt(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Gradients given the forward input `x` and upstream `dy`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<DenseGrads, NnError> {
        let grads = self.param_grads(x, dy)?;
        Ok(DenseGrads {
            input: dy.matmul(&self.weight)?,
            weight: grads.0,
            bias: grads.1,
        })
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn param_grads(&self, x: &Matrix, dy: &Matrix) -> Result<(Matrix, Vec<f64>), NnError> {
        if dy.cols() != self.outputs() || x.cols() != self.inputs() || x.rows() != dy.rows() {
            return Err(shape_err("dense backward"));
        }
        Ok((dy.matmul_tn(x)?, dy.column_sums()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mode: Mode,
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance (used for normalization).
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            eps,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x`. Running statistics are left alone; see
    /// [`BatchNorm::update_running`].
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, BnCache), NnError> {
        let (n, f) = x.shape();
        if f != self.features() {
            return Err(shape_err(format!("batch norm over {f} features, expected {}", self.features())));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::BatchTooSmall(n));
                }
                let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n as f64).collect();
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for ((v, &xi), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *v += (xi - m) * (xi - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, f);
        let mut y = Matrix::zeros(n, f);
        for r in 0..n {
            let xr = x.row(r);
            for c in 0..f {
                let h = (xr[c] - mean[c]) * inv_std[c];
                xhat.row_mut(r)[c] = h;
                y.row_mut(r)[c] = self.gamma[c] * h + self.beta[c];
            }
        }
        Ok((
            y,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Folds a train-mode batch into the running statistics. The running
    /// variance uses the unbiased batch estimate.
    pub fn update_running(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.xhat.rows() as f64;
        let m = self.momentum;
        for c in 0..self.features() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            let unbiased = cache.batch_var[c] * n / (n - 1.0);
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased;
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache, dy: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>), NnError> {
        dy.check_same(&cache.xhat)?;
        let (n, f) = dy.shape();
        let dbeta = dy.column_sums();
        let mut dgamma = vec![0.0; f];
        for r in 0..n {
            for ((g, d), h) in dgamma.iter_mut().zip(dy.row(r)).zip(cache.xhat.row(r)) {
                *g += d * h;
            }
        }
        let mut dx = Matrix::zeros(n, f);
        match cache.mode {
            Mode::Eval => {
                for r in 0..n {
                    for c in 0..f {
                        dx.row_mut(r)[c] = dy.row(r)[c] * self.gamma[c] * cache.inv_std[c];
                    }
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for c in 0..f {
                    // dxhat = dy * gamma, so its column sums follow from dbeta and dgamma.
                    let sum_dxhat = dbeta[c] * self.gamma[c];
                    let sum_dxhat_xhat = dgamma[c] * self.gamma[c];
                    let k = cache.inv_std[c] / nf;
                    for r in 0..n {
                        let dxhat = dy.row(r)[c] * self.gamma[c];
                        dx.row_mut(r)[c] = k * (nf * dxhat - sum_dxhat - cache.xhat.row(r)[c] * sum_dxhat_xhat);
                    }
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given its forward input.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix, NnError> {
    x.zip_map(dy, |v, d| if v > 0.0 { d } else { 0.0 })
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Gradient through sigmoid given its output.
pub fn sigmoid_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix, NnError> {
    y.zip_map(dy, |s, d| d * s * (1.0 - s))
}

/// Row-wise softmax, max-shifted.
pub fn softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Gradient through row-wise softmax given its output.
pub fn softmax_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix, NnError> {
    y.check_same(dy)?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dr) = (y.row(r), dy.row(r));
        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (o, (s, d)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
            *o = s * (d - dot);
        }
    }
    Ok(dx)
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), NnError> {
    pred.check_same(target)?;
    let count = pred.as_slice().len().max(1) as f64;
    let loss = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / count;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / count)?;
    Ok((loss, grad))
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::Matrix;

    pub const H: f64 = 1e-5;

    /// Relative error with a small floor so that near-zero pairs compare
    /// absolutely.
    pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(floor)
    }

    /// Largest relative error between `analytic` and central differences of
    /// `f` around `x`.
    pub fn check(x: &[f64], analytic: &[f64], floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        assert_eq!(x.len(), analytic.len());
        let mut probe = x.to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let down = f(&probe);
            probe[i] = x[i];
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i], numeric, floor));
        }
        worst
    }

    /// Fixed random projection so a matrix output becomes a scalar loss.
    pub fn projection(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng::seeded(seed);
        Matrix::uniform(rows, cols, 1.0, &mut rng)
    }

    pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
    }
}
