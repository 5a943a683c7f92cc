//! The concatenation (AVC), adaptive-weighting (AVAW) and audio-only models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::layers::{mse_loss, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, BnCache};
use super::{shape_err, BatchNorm, Dense, Matrix, Mode, NnError};
use crate::audio::DEFAULT_GCC_DIM;
use crate::eval::DOA_BINS;
use crate::visual::DEFAULT_VISUAL_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Audio and visual features concatenated.
    Avc,
    /// Audio and visual blocks rescaled by learned softmax weights, then concatenated.
    Avaw,
    /// GCC-PHAT features only.
    GccOnly,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Avc, Architecture::Avaw, Architecture::GccOnly];

    pub fn tag(self) -> u8 {
        match self {
            Architecture::Avc => 0,
            Architecture::Avaw => 1,
            Architecture::GccOnly => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Avc => "avc",
            Architecture::Avaw => "avaw",
            Architecture::GccOnly => "gcc_only",
        }
    }

    pub fn uses_visual(self) -> bool {
        self != Architecture::GccOnly
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown model '{s}' (expected avc, avaw or gcc_only)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub gcc_dim: usize,
    /// Two equal halves: horizontal row then vertical row.
    pub vis_dim: usize,
    pub hidden: Vec<usize>,
    /// Hidden width of the AVAW weight net.
    pub weight_hidden: usize,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            gcc_dim: DEFAULT_GCC_DIM,
            vis_dim: DEFAULT_VISUAL_DIM,
            hidden: vec![1000; 3],
            weight_hidden: 64,
            outputs: DOA_BINS,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn trunk_inputs(&self) -> usize {
        match self.arch {
            Architecture::GccOnly => self.gcc_dim,
            _ => self.gcc_dim + self.vis_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.gcc_dim == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(shape_err("zero-sized layer"));
        }
        if !self.vis_dim.is_multiple_of(2) {
            return Err(shape_err(format!("visual width {} is not two equal rows", self.vis_dim)));
        }
        if self.arch == Architecture::Avaw && self.weight_hidden == 0 {
            return Err(shape_err("weight net needs a hidden layer"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(shape_err("batch-norm momentum must be in [0,1] and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightNet {
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub weight_net: Option<WeightNet>,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

#[derive(Debug, Clone)]
struct WeightCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    bn: BnCache,
    normed: Matrix,
}

/// Output of [`Model::forward`] plus whatever the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub posterior: Matrix,
    /// AVAW only: `(w_audio, w_u, w_v)` per row.
    pub weights: Option<Matrix>,
    raw: Matrix,
    weight_cache: Option<WeightCache>,
    layers: Vec<LayerCache>,
    last: Matrix,
}

impl Model {
    /// Glorot-initialized model. Draw order follows declaration order: weight
    /// net, hidden layers, output layer.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, NnError> {
        config.validate()?;
        let weight_net = (config.arch == Architecture::Avaw).then(|| {
            let inputs = config.gcc_dim + config.vis_dim;
            let hidden = Dense::glorot(inputs, config.weight_hidden, rng);
            let output = Dense::glorot(config.weight_hidden, 3, rng);
            WeightNet { hidden, output }
        });
        let mut width = config.trunk_inputs();
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for &h in &config.hidden {
            hidden.push(HiddenLayer {
                dense: Dense::glorot(width, h, rng),
                norm: BatchNorm::new(h, config.bn_momentum, config.bn_eps),
            });
            width = h;
        }
        let output = Dense::glorot(width, config.outputs, rng);
        Ok(Self {
            config,
            weight_net,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Architecture {
        self.config.arch
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(w) = &self.weight_net {
            out.extend([w.hidden.weight.as_slice(), &w.hidden.bias, w.output.weight.as_slice(), &w.output.bias]);
        }
        for l in &self.hidden {
            out.extend([l.dense.weight.as_slice(), &l.dense.bias, &l.norm.gamma, &l.norm.beta]);
        }
        out.extend([self.output.weight.as_slice(), &self.output.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(w) = &mut self.weight_net {
            out.push(w.hidden.weight.as_mut_slice());
            out.push(&mut w.hidden.bias);
            out.push(w.output.weight.as_mut_slice());
            out.push(&mut w.output.bias);
        }
        for l in &mut self.hidden {
            out.push(l.dense.weight.as_mut_slice());
            out.push(&mut l.dense.bias);
            out.push(&mut l.norm.gamma);
            out.push(&mut l.norm.beta);
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(&mut self.output.bias);
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .hidden
                .iter()
                .all(|l| l.norm.running_mean.iter().chain(&l.norm.running_var).all(|v| v.is_finite()))
    }

    fn check_inputs(&self, gcc: &Matrix, vis: &Matrix) -> Result<(), NnError> {
        if gcc.cols() != self.config.gcc_dim {
            return Err(shape_err(format!("audio width {}, expected {}", gcc.cols(), self.config.gcc_dim)));
        }
        if vis.cols() != self.config.vis_dim {
            return Err(shape_err(format!("visual width {}, expected {}", vis.cols(), self.config.vis_dim)));
        }
        if gcc.rows() != vis.rows() {
            return Err(shape_err(format!("{} audio rows vs {} visual rows", gcc.rows(), vis.rows())));
        }
        Ok(())
    }

    /// Which adaptive weight scales trunk-input column `j`.
    fn block_of(&self, j: usize) -> usize {
        let g = self.config.gcc_dim;
        let half = self.config.vis_dim / 2;
        if j < g {
            0
        } else if j < g + half {
            1
        } else {
            2
        }
    }

    /// Runs the network. This never mutates the model; in train mode call
    /// [`Model::update_running_stats`] afterwards to fold in batch statistics.
    pub fn forward(&self, gcc: &Matrix, vis: &Matrix, mode: Mode) -> Result<ForwardPass, NnError> {
        self.check_inputs(gcc, vis)?;
        let (trunk_in, weights, weight_cache) = match self.config.arch {
            Architecture::GccOnly => (gcc.clone(), None, None),
            Architecture::Avc => (Matrix::hconcat(&[gcc, vis])?, None, None),
            Architecture::Avaw => {
                let net = self.weight_net.as_ref().expect("AVAW model has a weight net");
                let raw = Matrix::hconcat(&[gcc, vis])?;
                let pre = net.hidden.forward(&raw)?;
                let act = relu(&pre);
                let w = softmax(&net.output.forward(&act)?);
                let mut scaled = raw.clone();
                for r in 0..scaled.rows() {
                    let wr = [w.get(r, 0), w.get(r, 1), w.get(r, 2)];
                    for (j, v) in scaled.row_mut(r).iter_mut().enumerate() {
                        *v *= wr[self.block_of(j)];
                    }
                }
                (scaled, Some(w), Some(WeightCache { input: raw, pre, act }))
            }
        };
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut x = trunk_in.clone();
        for l in &self.hidden {
            let z = l.dense.forward(&x)?;
            let (normed, bn) = l.norm.forward(&z, mode)?;
            let next = relu(&normed);
            layers.push(LayerCache { input: x, bn, normed });
            x = next;
        }
        let posterior = sigmoid(&self.output.forward(&x)?);
        if !posterior.is_finite() {
            return Err(NnError::NonFinite("posterior".into()));
        }
        Ok(ForwardPass {
            posterior,
            weights,
            raw: trunk_in,
            weight_cache,
            layers,
            last: x,
        })
    }

    /// Eval-mode posterior.
    pub fn predict(&self, gcc: &Matrix, vis: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward(gcc, vis, Mode::Eval)?.posterior)
    }

    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (l, c) in self.hidden.iter_mut().zip(&pass.layers) {
            l.norm.update_running(&c.bn);
        }
    }

    /// Gradients of every trainable tensor, in [`Model::params`] order, given
    /// the loss gradient w.r.t. the posterior.
    pub fn backward(&self, pass: &ForwardPass, d_posterior: &Matrix) -> Result<Vec<Vec<f64>>, NnError> {
        let dz = sigmoid_backward(&pass.posterior, d_posterior)?;
        let (dw_out, db_out) = self.output.param_grads(&pass.last, &dz)?;
        let mut dh = dz.matmul(&self.output.weight)?;

        let mut trunk_grads = Vec::with_capacity(self.hidden.len());
        let need_input_grad = self.config.arch == Architecture::Avaw;
        for (i, (l, c)) in self.hidden.iter().zip(&pass.layers).enumerate().rev() {
            let dn = relu_backward(&c.normed, &dh)?;
            let (dzl, dgamma, dbeta) = l.norm.backward(&c.bn, &dn)?;
            let (dw, db) = l.dense.param_grads(&c.input, &dzl)?;
            if i > 0 || need_input_grad {
                dh = dzl.matmul(&l.dense.weight)?;
            }
            trunk_grads.push([dw.into_vec(), db, dgamma, dbeta]);
        }
        trunk_grads.reverse();

        let mut out = Vec::new();
        if let (Some(net), Some(wc), Some(w)) = (&self.weight_net, &pass.weight_cache, &pass.weights) {
            // dh is now the gradient w.r.t. the scaled trunk input.
            let mut dweights = Matrix::zeros(w.rows(), 3);
            for r in 0..w.rows() {
                let (ds, x) = (dh.row(r), wc.input.row(r));
                for j in 0..ds.len() {
                    dweights.row_mut(r)[self.block_of(j)] += ds[j] * x[j];
                }
            }
            let dlogits = softmax_backward(w, &dweights)?;
            let (dw2, db2) = net.output.param_grads(&wc.act, &dlogits)?;
            let dact = dlogits.matmul(&net.output.weight)?;
            let dpre = relu_backward(&wc.pre, &dact)?;
            let (dw1, db1) = net.hidden.param_grads(&wc.input, &dpre)?;
            out.extend([dw1.into_vec(), db1, dw2.into_vec(), db2]);
        }
        for g in trunk_grads {
            out.extend(g);
        }
        out.extend([dw_out.into_vec(), db_out]);
        Ok(out)
    }

    /// MSE loss and parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        gcc: &Matrix,
        vis: &Matrix,
        target: &Matrix,
        mode: Mode,
    ) -> Result<(f64, Vec<Vec<f64>>, ForwardPass), NnError> {
        let pass = self.forward(gcc, vis, mode)?;
        let (loss, d) = mse_loss(&pass.posterior, target)?;
        let grads = self.backward(&pass, &d)?;
        Ok((loss, grads, pass))
    }

    /// Raw trunk input of the last forward pass (after AVAW scaling).
    pub fn trunk_input<'a>(&self, pass: &'a ForwardPass) -> &'a Matrix {
        &pass.raw
    }
}

#[cfg(test)]
mod tests {
    use super::super::layers::gradcheck::rel_err;
    use super::*;
    use crate::rng::seeded;

    fn small(arch: Architecture) -> Model {
        let cfg = ModelConfig::new(arch).with_hidden(vec![16, 16, 16]);
        Model::init(cfg, &mut seeded(21)).unwrap()
    }

    fn inputs(rows: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
        let mut rng = seeded(seed);
        let gcc = Matrix::uniform(rows, 306, 1.0, &mut rng);
        let vis = Matrix::uniform(rows, 102, 1.0, &mut rng).map(|v| v.abs());
        let target = Matrix::uniform(rows, 360, 1.0, &mut rng).map(|v| v.abs());
        (gcc, vis, target)
    }

    /// Central differences of the MSE loss. The two losses are differenced
    /// per element, `(a - t)^2 - (b - t)^2 = (a - b)(a + b - 2t)`, before
    /// summing, which avoids cancellation between two nearly equal totals.
    fn whole_network_error(model: &Model, tensors: std::ops::Range<usize>, stride: usize) -> f64 {
        let (gcc, vis, target) = inputs(4, 22);
        let (_, grads, _) = model.loss_and_grads(&gcc, &vis, &target, Mode::Train).unwrap();
        let h = 1e-5;
        let count = target.as_slice().len() as f64;
        let mut worst: f64 = 0.0;
        let mut probe = model.clone();
        for t in tensors {
            for i in (0..grads[t].len()).step_by(stride) {
                let orig = probe.params()[t][i];
                probe.params_mut()[t][i] = orig + h;
                let up = probe.forward(&gcc, &vis, Mode::Train).unwrap().posterior;
                probe.params_mut()[t][i] = orig - h;
                let down = probe.forward(&gcc, &vis, Mode::Train).unwrap().posterior;
                probe.params_mut()[t][i] = orig;
                let delta: f64 = (0..up.as_slice().len())
                    .map(|k| {
                        let (a, b, y) = (up.as_slice()[k], down.as_slice()[k], target.as_slice()[k]);
                        (a - b) * (a + b - 2.0 * y)
                    })
                    .sum::<f64>()
                    / count;
                let numeric = delta / (2.0 * h);
                worst = worst.max(rel_err(grads[t][i], numeric, 1e-8));
            }
        }
        worst
    }

    #[test]
    fn dimensions_and_ranges() {
        let m = small(Architecture::Avc);
        assert_eq!(m.config().trunk_inputs(), 408);
        assert_eq!(m.hidden[0].dense.inputs(), 408);
        let (gcc, vis, _) = inputs(5, 1);
        let p = m.predict(&gcc, &vis).unwrap();
        assert_eq!(p.shape(), (5, 360));
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(matches!(m.predict(&gcc.columns(0, 300), &vis), Err(NnError::ShapeMismatch(_))));
        assert!(matches!(m.predict(&gcc, &vis.columns(0, 51)), Err(NnError::ShapeMismatch(_))));
        assert_eq!(small(Architecture::GccOnly).hidden[0].dense.inputs(), 306);
    }

    #[test]
    fn avc_whole_network_gradients() {
        let m = small(Architecture::Avc);
        let n = m.params().len();
        let err = whole_network_error(&m, 0..n, 7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn avaw_whole_network_gradients() {
        let m = small(Architecture::Avaw);
        let n = m.params().len();
        let err = whole_network_error(&m, 0..n, 7);
        assert!(err < 1e-4, "{err}");
        // Weight-net tensors, every entry.
        let err = whole_network_error(&m, 0..4, 1);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn avaw_weights_are_a_distribution() {
        let m = small(Architecture::Avaw);
        let (gcc, vis, _) = inputs(6, 3);
        let pass = m.forward(&gcc, &vis, Mode::Eval).unwrap();
        let w = pass.weights.unwrap();
        for r in 0..6 {
            let row = w.row(r);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_weight_net_reduces_to_scaled_avc() {
        let mut avaw = small(Architecture::Avaw);
        let net = avaw.weight_net.as_mut().unwrap();
        net.output.weight = Matrix::zeros(3, net.output.inputs());
        net.output.bias = vec![0.0; 3];
        let mut avc = small(Architecture::Avc);
        avc.hidden = avaw.hidden.clone();
        avc.output = avaw.output.clone();

        let (gcc, vis, _) = inputs(4, 5);
        for mode in [Mode::Train, Mode::Eval] {
            let a = avaw.forward(&gcc, &vis, mode).unwrap();
            assert!(a.weights.as_ref().unwrap().as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
            let third = |m: &Matrix| m.map(|v| v * (1.0 / 3.0));
            let b = avc.forward(&third(&gcc), &third(&vis), mode).unwrap();
            let worst = a
                .posterior
                .as_slice()
                .iter()
                .zip(b.posterior.as_slice())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-12, "{worst}");
        }
    }

    #[test]
    fn forward_is_pure_and_stats_update_separately() {
        let mut m = small(Architecture::Avc);
        let (gcc, vis, _) = inputs(8, 6);
        let before = m.clone();
        let pass = m.forward(&gcc, &vis, Mode::Train).unwrap();
        assert_eq!(m, before);
        m.update_running_stats(&pass);
        assert_ne!(m.hidden[0].norm.running_mean, before.hidden[0].norm.running_mean);
        assert!(m.forward(&gcc.select_rows(&[0]), &vis.select_rows(&[0]), Mode::Train).is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            assert_eq!(Architecture::from_tag(a.tag()), Some(a));
        }
        assert!("mlp".parse::<Architecture>().is_err());
    }
}
