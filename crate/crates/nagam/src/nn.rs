//! Minimal reverse-mode gradient engine for small fully-connected networks.
//!
//! A [`MicroNet`] is a stack of dense layers with rectifier hidden units and
//! an identity, sigmoid, or softmax output. Forward passes can record their
//! activations on a [`GradTape`]; [`MicroNet::backward`] then fills the tape's
//! parameter gradients by backpropagation. All math is 64-bit so that
//! finite-difference checks are meaningful.
//!
//! Gradient convention at the output: for identity and sigmoid nets the
//! upstream gradient is taken with respect to the network *output*; for
//! softmax nets it is taken with respect to the *logits*, pairing with the
//! fused softmax gradient returned by [`ce_loss`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clipped to this floor before any `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sigmoid/softmax outputs are kept this far inside the open interval (0, 1)
/// so that saturating inputs never produce exact 0 or 1.
const SATURATION_MARGIN: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input length {got} does not match expected dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter buffer of length {got} does not match model size {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("backward called without a cached forward pass")]
    StaleTape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
}

/// A small fully-connected network. Layer `l` maps `layer_dims[l]` inputs to
/// `layer_dims[l+1]` outputs; weights are stored row-major per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroNet {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

impl MicroNet {
    /// Fresh network with zero biases and zero-mean uniform weights scaled by
    /// sqrt(2 / fan_in).
    pub fn new<R: Rng>(layer_dims: &[usize], activation: OutputActivation, rng: &mut R) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        assert!(layer_dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in layer_dims.windows(2) {
            let (d_in, d_out) = (win[0], win[1]);
            let bound = (2.0 / d_in as f64).sqrt();
            let w = (0..d_in * d_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; d_out]);
        }
        MicroNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            output_activation: activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Pure forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = affine(w, b, &a, self.layer_dims[l + 1]);
            a = if l < last {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                apply_output(self.output_activation, z)
            };
        }
        Ok(a)
    }

    /// Forward pass that records pre-activations and activations on `tape`
    /// for a later [`backward`](Self::backward).
    pub fn forward_tape(&self, tape: &mut GradTape, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        tape.check_shape(self)?;
        tape.pre_activations.clear();
        tape.activations.clear();
        tape.activations.push(input.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = affine(w, b, tape.activations.last().unwrap(), self.layer_dims[l + 1]);
            let a = if l < last {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                apply_output(self.output_activation, z.clone())
            };
            tape.pre_activations.push(z);
            tape.activations.push(a);
        }
        tape.armed = true;
        Ok(tape.activations.last().unwrap().clone())
    }

    /// Backpropagates `output_grad` through the cached forward pass,
    /// accumulating parameter gradients on the tape. The cached pass is
    /// consumed: a second call without a fresh forward returns `StaleTape`.
    ///
    /// For softmax nets `output_grad` must be the gradient with respect to
    /// the logits (see module docs); otherwise it is with respect to the
    /// network output.
    pub fn backward(&self, tape: &mut GradTape, output_grad: &[f64]) -> Result<(), NnError> {
        if !tape.armed {
            return Err(NnError::StaleTape);
        }
        tape.check_shape(self)?;
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        tape.armed = false;

        let last = self.weights.len() - 1;
        // Gradient wrt the last layer's pre-activation.
        let mut dz: Vec<f64> = match self.output_activation {
            OutputActivation::Identity | OutputActivation::Softmax => output_grad.to_vec(),
            OutputActivation::Sigmoid => {
                let out = tape.activations.last().unwrap();
                output_grad
                    .iter()
                    .zip(out)
                    .map(|(&g, &s)| g * s * (1.0 - s))
                    .collect()
            }
        };

        for l in (0..=last).rev() {
            let (d_in, d_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let a_prev = &tape.activations[l];
            for row in 0..d_out {
                tape.bias_grads[l][row] += dz[row];
                let w_row = row * d_in;
                for col in 0..d_in {
                    tape.weight_grads[l][w_row + col] += dz[row] * a_prev[col];
                }
            }
            if l > 0 {
                let mut da = vec![0.0; d_in];
                for row in 0..d_out {
                    let w_row = row * d_in;
                    for col in 0..d_in {
                        da[col] += self.weights[l][w_row + col] * dz[row];
                    }
                }
                let z_prev = &tape.pre_activations[l - 1];
                dz = da
                    .iter()
                    .zip(z_prev)
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect();
            }
        }
        Ok(())
    }

    /// Appends all parameters (per layer: weights row-major, then biases).
    pub fn push_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Reads parameters back from a flat buffer, advancing `pos`.
    pub fn pull_params(&mut self, src: &[f64], pos: &mut usize) -> Result<(), NnError> {
        let need = self.param_count();
        if src.len() < *pos + need {
            return Err(NnError::ShapeMismatch {
                expected: *pos + need,
                got: src.len(),
            });
        }
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let w_len = w.len();
            w.copy_from_slice(&src[*pos..*pos + w_len]);
            *pos += w_len;
            let b_len = b.len();
            b.copy_from_slice(&src[*pos..*pos + b_len]);
            *pos += b_len;
        }
        Ok(())
    }

    /// Zeroes the final layer so the net outputs exactly zero (pre-output
    /// activation) regardless of input. Used by additive banks so a fresh
    /// model starts as a pure constant predictor.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].iter_mut().for_each(|w| *w = 0.0);
        self.biases[last].iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.push_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) -> Result<(), NnError> {
        if src.len() != self.param_count() {
            return Err(NnError::ShapeMismatch {
                expected: self.param_count(),
                got: src.len(),
            });
        }
        let mut pos = 0;
        self.pull_params(src, &mut pos)
    }
}

fn affine(w: &[f64], b: &[f64], input: &[f64], d_out: usize) -> Vec<f64> {
    let d_in = input.len();
    let mut z = b.to_vec();
    debug_assert_eq!(z.len(), d_out);
    for (row, zr) in z.iter_mut().enumerate() {
        let w_row = &w[row * d_in..(row + 1) * d_in];
        let mut acc = 0.0;
        for (wi, xi) in w_row.iter().zip(input) {
            acc += wi * xi;
        }
        *zr += acc;
    }
    z
}

fn apply_output(activation: OutputActivation, z: Vec<f64>) -> Vec<f64> {
    match activation {
        OutputActivation::Identity => z,
        OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        OutputActivation::Softmax => softmax(&z),
    }
}

/// Numerically stable logistic function, clamped inside the open interval.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SATURATION_MARGIN, 1.0 - SATURATION_MARGIN)
}

/// Max-subtracted softmax; entries stay inside (0, 1) and sum to 1 within
/// floating-point rounding even for saturating logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut p: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let clipped: f64 = p
        .iter_mut()
        .map(|v| {
            *v = v.max(SATURATION_MARGIN);
            *v
        })
        .sum();
    for v in p.iter_mut() {
        *v /= clipped;
    }
    p
}

/// Cached activations and parameter-gradient buffers for one [`MicroNet`].
///
/// Gradients accumulate across `forward_tape`/`backward` pairs until
/// [`zero_grads`](Self::zero_grads), which supports mini-batch sums.
#[derive(Debug, Clone)]
pub struct GradTape {
    layer_dims: Vec<usize>,
    pub(crate) weight_grads: Vec<Vec<f64>>,
    pub(crate) bias_grads: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    armed: bool,
}

impl GradTape {
    pub fn for_net(net: &MicroNet) -> Self {
        GradTape {
            layer_dims: net.layer_dims.clone(),
            weight_grads: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            bias_grads: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            pre_activations: Vec::new(),
            activations: Vec::new(),
            armed: false,
        }
    }

    fn check_shape(&self, net: &MicroNet) -> Result<(), NnError> {
        if self.layer_dims != net.layer_dims {
            return Err(NnError::ShapeMismatch {
                expected: net.param_count(),
                got: self
                    .weight_grads
                    .iter()
                    .chain(&self.bias_grads)
                    .map(Vec::len)
                    .sum(),
            });
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in self.weight_grads.iter_mut().chain(&mut self.bias_grads) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Appends accumulated gradients in the same order as
    /// [`MicroNet::push_params`].
    pub fn push_grads(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weight_grads.iter().zip(&self.bias_grads) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, grad))
}

/// Categorical cross-entropy against a one-hot target. Probabilities are
/// clipped to [`PROB_FLOOR`, 1] before the log. The returned gradient is with
/// respect to the *logits* of the softmax that produced `pred_probs`
/// (the fused form `p - y`).
pub fn ce_loss(pred_probs: &[f64], target_onehot: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred_probs.len() != target_onehot.len() || pred_probs.is_empty() {
        return Err(NnError::LengthMismatch {
            left: pred_probs.len(),
            right: target_onehot.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred_probs.len());
    for (&p, &y) in pred_probs.iter().zip(target_onehot) {
        if y != 0.0 {
            loss -= y * p.clamp(PROB_FLOOR, 1.0).ln();
        }
        grad.push(p - y);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_grad, max_rel_err, seeded_rng};

    fn zeroed(net: &MicroNet) -> MicroNet {
        let mut n = net.clone();
        let zeros = vec![0.0; n.param_count()];
        n.set_params_flat(&zeros).unwrap();
        n
    }

    #[test]
    fn forward_zero_net_identity_is_zero() {
        let mut rng = seeded_rng(1, 0);
        let net = zeroed(&MicroNet::new(&[3, 4, 2], OutputActivation::Identity, &mut rng));
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_zero_net_sigmoid_is_half() {
        let mut rng = seeded_rng(1, 0);
        let net = zeroed(&MicroNet::new(&[3, 4, 1], OutputActivation::Sigmoid, &mut rng));
        assert_eq!(net.forward(&[0.3, 0.1, -0.7]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_single_affine_layer() {
        let mut rng = seeded_rng(1, 0);
        let mut net = MicroNet::new(&[1, 1], OutputActivation::Identity, &mut rng);
        net.set_params_flat(&[2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let mut rng = seeded_rng(1, 0);
        let net = MicroNet::new(&[3, 2], OutputActivation::Identity, &mut rng);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn softmax_sums_to_one_even_when_saturated() {
        let p = softmax(&[900.0, 0.0, -900.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        assert!(sigmoid(1e4) < 1.0);
        assert!(sigmoid(-1e4) > 0.0);
    }

    #[test]
    fn backward_zero_output_grad_gives_zero_grads() {
        let mut rng = seeded_rng(7, 0);
        let net = MicroNet::new(&[3, 4, 2], OutputActivation::Identity, &mut rng);
        let mut tape = GradTape::for_net(&net);
        net.forward_tape(&mut tape, &[0.2, -0.4, 0.9]).unwrap();
        net.backward(&mut tape, &[0.0, 0.0]).unwrap();
        let mut grads = Vec::new();
        tape.push_grads(&mut grads);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_single_layer_affine_derivative() {
        let mut rng = seeded_rng(7, 0);
        let mut net = MicroNet::new(&[1, 1], OutputActivation::Identity, &mut rng);
        net.set_params_flat(&[2.0, 1.0]).unwrap();
        let mut tape = GradTape::for_net(&net);
        net.forward_tape(&mut tape, &[3.0]).unwrap();
        net.backward(&mut tape, &[1.0]).unwrap();
        let mut grads = Vec::new();
        tape.push_grads(&mut grads);
        assert_eq!(grads, vec![3.0, 1.0]); // dW = x, db = 1
    }

    #[test]
    fn backward_without_forward_is_stale() {
        let mut rng = seeded_rng(7, 0);
        let net = MicroNet::new(&[2, 2], OutputActivation::Identity, &mut rng);
        let mut tape = GradTape::for_net(&net);
        assert!(matches!(
            net.backward(&mut tape, &[1.0, 0.0]),
            Err(NnError::StaleTape)
        ));
    }

    /// Scalar loss used to gradient-check a whole net: squared norm of the
    /// output against a fixed target.
    fn net_loss(net: &MicroNet, input: &[f64], target: &[f64]) -> f64 {
        let out = net.forward(input).unwrap();
        mse_loss(&out, target).unwrap().0
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = seeded_rng(seed, 1);
            let net = MicroNet::new(&[4, 6, 3], OutputActivation::Identity, &mut rng);
            let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let mut tape = GradTape::for_net(&net);
            let out = net.forward_tape(&mut tape, &input).unwrap();
            let (_, dout) = mse_loss(&out, &target).unwrap();
            net.backward(&mut tape, &dout).unwrap();
            let mut analytic = Vec::new();
            tape.push_grads(&mut analytic);

            let params = net.params_flat();
            let fd = fd_grad(&params, 1e-4, |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p).unwrap();
                net_loss(&probe, &input, &target)
            });
            assert!(
                max_rel_err(&analytic, &fd) < 1e-4,
                "seed {seed}: gradient mismatch"
            );
        }
    }

    #[test]
    fn sigmoid_net_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = seeded_rng(seed, 2);
            let net = MicroNet::new(&[3, 5, 1], OutputActivation::Sigmoid, &mut rng);
            let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = vec![rng.gen_range(0.1..0.9)];

            let mut tape = GradTape::for_net(&net);
            let out = net.forward_tape(&mut tape, &input).unwrap();
            let (_, dout) = mse_loss(&out, &target).unwrap();
            net.backward(&mut tape, &dout).unwrap();
            let mut analytic = Vec::new();
            tape.push_grads(&mut analytic);

            let params = net.params_flat();
            let fd = fd_grad(&params, 1e-4, |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p).unwrap();
                net_loss(&probe, &input, &target)
            });
            assert!(max_rel_err(&analytic, &fd) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn softmax_ce_net_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = seeded_rng(seed, 3);
            let net = MicroNet::new(&[3, 5, 4], OutputActivation::Softmax, &mut rng);
            let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut onehot = vec![0.0; 4];
            onehot[seed as usize % 4] = 1.0;

            let mut tape = GradTape::for_net(&net);
            let probs = net.forward_tape(&mut tape, &input).unwrap();
            let (_, dlogits) = ce_loss(&probs, &onehot).unwrap();
            net.backward(&mut tape, &dlogits).unwrap();
            let mut analytic = Vec::new();
            tape.push_grads(&mut analytic);

            let params = net.params_flat();
            let fd = fd_grad(&params, 1e-4, |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p).unwrap();
                let probs = probe.forward(&input).unwrap();
                ce_loss(&probs, &onehot).unwrap().0
            });
            assert!(max_rel_err(&analytic, &fd) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, _) = mse_loss(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(l, 0.5);
        assert!(mse_loss(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(11, 4);
        let pred: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, analytic) = mse_loss(&pred, &target).unwrap();
        let fd = fd_grad(&pred, 1e-6, |p| mse_loss(p, &target).unwrap().0);
        for (a, f) in analytic.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6);
        }
    }

    #[test]
    fn ce_examples() {
        let (l, _) = ce_loss(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l, 0.0);
        let uniform = vec![1.0 / 6.0; 6];
        let mut onehot = vec![0.0; 6];
        onehot[5] = 1.0;
        let (l, _) = ce_loss(&uniform, &onehot).unwrap();
        assert!((l - 6.0f64.ln()).abs() < 1e-12);
        assert!(l >= 0.0);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = seeded_rng(5, 5);
        let net = MicroNet::new(&[4, 8, 3], OutputActivation::Softmax, &mut rng);
        let flat = net.params_flat();
        assert_eq!(flat.len(), net.param_count());
        let mut other = MicroNet::new(&[4, 8, 3], OutputActivation::Softmax, &mut rng);
        other.set_params_flat(&flat).unwrap();
        assert_eq!(net, other);
        assert!(other.set_params_flat(&flat[1..]).is_err());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let mut rng = seeded_rng(5, 6);
        let net = MicroNet::new(&[2, 3, 1], OutputActivation::Sigmoid, &mut rng);
        let json = serde_json::to_string(&net).unwrap();
        let back: MicroNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
