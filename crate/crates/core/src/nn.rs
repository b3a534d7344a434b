//! Small fully connected networks with hand-written backpropagation.
//!
//! Hidden layers use `tanh`; the output layer is linear. The same body serves
//! the softmax policy (output width = number of rates) and the scalar critic
//! (output width 1).
//!
//! Weights are stored input-major: the weight from input `i` to output `j`
//! of a layer lives at `weights[i * outputs + j]`.

use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action {index} out of range for {outputs} outputs")]
    InvalidAction { index: usize, outputs: usize },
    #[error("gradient buffer shape does not match parameters")]
    ShapeMismatch,
    #[error("invalid step size {0}")]
    InvalidStep(f64),
    #[error("update produced non-finite parameters")]
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward_into(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend_from_slice(&self.biases);
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.outputs)) {
            for (yj, wij) in y.iter_mut().zip(row) {
                *yj += wij * xi;
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Dot product with four independent accumulators so the reduction is not
/// latency bound.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Whether every `p + step·g` is finite.
fn finite_after(p: &[f64], g: &[f64], step: f64) -> bool {
    // inf·0 and NaN·0 are NaN, so one non-finite entry poisons the sum
    let mut acc = [0.0; 4];
    let (cp, cg) = (p.chunks_exact(4), g.chunks_exact(4));
    let (rp, rg) = (cp.remainder(), cg.remainder());
    for (x, y) in cp.zip(cg) {
        for k in 0..4 {
            acc[k] += (x[k] + step * y[k]) * 0.0;
        }
    }
    let tail: f64 = rp.iter().zip(rg).map(|(x, y)| (x + step * y) * 0.0).sum();
    (acc[0] + acc[1] + acc[2] + acc[3] + tail).is_finite()
}

/// Parameters of a tanh MLP (`θ` for the policy, `φ` for the critic).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Gradient with the same shape as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l]` the output of layer `l - 1`
    /// (post-tanh for hidden layers, linear for the last).
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

impl MlpParams {
    /// All-zero network with the given layer widths, input first.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform `±1/√fan_in` initialisation.
    pub fn init_uniform(dims: &[usize], rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        net
    }

    /// Input, two hidden layers of `hidden` units, output.
    pub fn two_hidden(inputs: usize, hidden: usize, outputs: usize, rng: &mut RngStream) -> Self {
        Self::init_uniform(&[inputs, hidden, hidden, outputs], rng)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ShapeMismatch);
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(NnError::ShapeMismatch);
            }
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(NnError::ShapeMismatch);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Inverse of [`MlpParams::flat`].
    pub fn from_flat(dims: &[usize], values: &[f64]) -> Result<Self, NnError> {
        let mut net = Self::zeros(dims);
        if values.len() != net.param_count() {
            return Err(NnError::ShapeMismatch);
        }
        let mut rest = values;
        for l in &mut net.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(net)
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    fn check_input(&self, obs: &[f64]) -> Result<(), NnError> {
        if obs.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Forward pass retaining activations.
    pub fn forward(&self, obs: &[f64], cache: &mut ForwardCache) -> Result<(), NnError> {
        self.check_input(obs)?;
        let n = self.layers.len();
        cache.acts.resize_with(n + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(obs);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, todo) = cache.acts.split_at_mut(l + 1);
            let y = &mut todo[0];
            layer.forward_into(&done[l], y);
            if l + 1 < n {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(())
    }

    /// Raw network output (logits for a policy, one value for a critic).
    pub fn output(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = ForwardCache::default();
        self.forward(obs, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Accumulates `scale · J^T d_out` into `grad`, where `J` is the Jacobian
    /// of the output with respect to the parameters at the cached point.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &[f64],
        scale: f64,
        grad: &mut GradBuffer,
    ) -> Result<(), NnError> {
        if !grad.matches(self) || d_out.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch);
        }
        let mut delta: Vec<f64> = d_out.iter().map(|d| d * scale).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.acts[l];
            let g = &mut grad.layers[l];
            for (gb, d) in g.biases.iter_mut().zip(&delta) {
                *gb += d;
            }
            for (xi, grow) in x.iter().zip(g.weights.chunks_exact_mut(layer.outputs)) {
                for (gw, d) in grow.iter_mut().zip(&delta) {
                    *gw += xi * d;
                }
            }
            if l == 0 {
                break;
            }
            // x is the tanh output of the previous layer.
            delta = layer
                .weights
                .chunks_exact(layer.outputs)
                .zip(x)
                .map(|(row, xi)| dot(row, &delta) * (1.0 - xi * xi))
                .collect();
        }
        Ok(())
    }
}

impl GradBuffer {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn flat(&self) -> Vec<f64> {
        MlpParams {
            layers: self.layers.clone(),
        }
        .flat()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| dot(&l.weights, &l.weights) + dot(&l.biases, &l.biases))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to at most `max_norm` in Euclidean norm. Returns the
    /// pre-clip norm, or 0 without computing it when `max_norm` is 0.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        if max_norm <= 0.0 {
            return 0.0;
        }
        let n = self.norm();
        if max_norm > 0.0 && n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn add_scaled(&mut self, other: &GradBuffer, factor: f64) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len()
            || self
                .layers
                .iter()
                .zip(&other.layers)
                .any(|(a, b)| a.weights.len() != b.weights.len() || a.biases.len() != b.biases.len())
        {
            return Err(NnError::ShapeMismatch);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += factor * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += factor * y;
            }
        }
        Ok(())
    }

    /// Only the output-layer bias is nonzero.
    pub fn only_output_bias(&self) -> bool {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().all(|(l, d)| {
            d.weights.iter().all(|v| *v == 0.0) && (l == last || d.biases.iter().all(|v| *v == 0.0))
        })
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln softmax(logits)[i]` without forming the probabilities.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

pub fn policy_forward(params: &MlpParams, obs: &[f64]) -> Result<Vec<f64>, NnError> {
    Ok(softmax(&params.output(obs)?))
}

pub fn value_forward(params: &MlpParams, obs: &[f64]) -> Result<f64, NnError> {
    Ok(params.output(obs)?[0])
}

/// Result of a policy forward/backward pass at one observation.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub probs: Vec<f64>,
    pub logprob: f64,
}

/// Adds `scale · ∇θ ln π(action | obs)` into `grad` and returns the forward
/// quantities.
pub fn accumulate_logprob_grad(
    params: &MlpParams,
    obs: &[f64],
    action: usize,
    scale: f64,
    grad: &mut GradBuffer,
    cache: &mut ForwardCache,
) -> Result<PolicyEval, NnError> {
    accumulate_logprob_grad_with(params, obs, action, |_| scale, grad, cache)
}

/// As [`accumulate_logprob_grad`], with the scale chosen after the forward
/// pass from `ln π(action | obs)`.
pub fn accumulate_logprob_grad_with<F>(
    params: &MlpParams,
    obs: &[f64],
    action: usize,
    scale_for: F,
    grad: &mut GradBuffer,
    cache: &mut ForwardCache,
) -> Result<PolicyEval, NnError>
where
    F: FnOnce(f64) -> f64,
{
    let outputs = params.output_dim();
    if action >= outputs {
        return Err(NnError::InvalidAction {
            index: action,
            outputs,
        });
    }
    params.forward(obs, cache)?;
    let logits = cache.output();
    let probs = softmax(logits);
    let logprob = log_softmax_at(logits, action);
    // d ln softmax_a / d z = e_a - p
    let d_out: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, p)| if j == action { 1.0 - p } else { -p })
        .collect();
    let scale = scale_for(logprob);
    if scale != 0.0 {
        params.backward(cache, &d_out, scale, grad)?;
    }
    Ok(PolicyEval { probs, logprob })
}

/// Exact `∇θ ln π(action | obs)`.
pub fn logprob_grad(params: &MlpParams, obs: &[f64], action: usize) -> Result<GradBuffer, NnError> {
    let mut grad = GradBuffer::zeros_like(params);
    let mut cache = ForwardCache::default();
    accumulate_logprob_grad(params, obs, action, 1.0, &mut grad, &mut cache)?;
    Ok(grad)
}

/// Adds `scale · ∇θ H(π(· | obs))` into `grad`; returns the entropy.
pub fn accumulate_entropy_grad(
    params: &MlpParams,
    obs: &[f64],
    scale: f64,
    grad: &mut GradBuffer,
    cache: &mut ForwardCache,
) -> Result<f64, NnError> {
    params.forward(obs, cache)?;
    let probs = softmax(cache.output());
    let logp: Vec<f64> = probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
    let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    let d_out: Vec<f64> = probs
        .iter()
        .zip(&logp)
        .map(|(p, l)| -p * (l + entropy))
        .collect();
    params.backward(cache, &d_out, scale, grad)?;
    Ok(entropy)
}

/// Adds `scale · ∇φ V(obs)` into `grad`; returns `V(obs)`.
pub fn accumulate_value_grad(
    params: &MlpParams,
    obs: &[f64],
    scale: f64,
    grad: &mut GradBuffer,
    cache: &mut ForwardCache,
) -> Result<f64, NnError> {
    accumulate_value_grad_with(params, obs, |_| scale, grad, cache)
}

/// As [`accumulate_value_grad`], with the scale chosen from `V(obs)`.
pub fn accumulate_value_grad_with<F>(
    params: &MlpParams,
    obs: &[f64],
    scale_for: F,
    grad: &mut GradBuffer,
    cache: &mut ForwardCache,
) -> Result<f64, NnError>
where
    F: FnOnce(f64) -> f64,
{
    params.forward(obs, cache)?;
    let v = cache.output()[0];
    let scale = scale_for(v);
    if scale != 0.0 {
        params.backward(cache, &[1.0], scale, grad)?;
    }
    Ok(v)
}

/// Exact `∇φ V(obs)`.
pub fn value_grad(params: &MlpParams, obs: &[f64]) -> Result<GradBuffer, NnError> {
    let mut grad = GradBuffer::zeros_like(params);
    let mut cache = ForwardCache::default();
    accumulate_value_grad(params, obs, 1.0, &mut grad, &mut cache)?;
    Ok(grad)
}

/// `params ± step · grad`. The parameters are left untouched and
/// [`NnError::Diverged`] is returned if any updated entry would be
/// non-finite.
pub fn sgd_apply(
    params: &mut MlpParams,
    grad: &GradBuffer,
    step: f64,
    direction: Direction,
) -> Result<(), NnError> {
    if !(step.is_finite() && step >= 0.0) {
        return Err(NnError::InvalidStep(step));
    }
    if !grad.matches(params) {
        return Err(NnError::ShapeMismatch);
    }
    let signed = match direction {
        Direction::Ascent => step,
        Direction::Descent => -step,
    };
    let ok = params.layers.iter().zip(&grad.layers).all(|(p, g)| {
        finite_after(&p.weights, &g.weights, signed) && finite_after(&p.biases, &g.biases, signed)
    });
    if !ok {
        return Err(NnError::Diverged);
    }
    for (p, g) in params.layers.iter_mut().zip(&grad.layers) {
        for (w, d) in p.weights.iter_mut().zip(&g.weights) {
            *w += signed * d;
        }
        for (b, d) in p.biases.iter_mut().zip(&g.biases) {
            *b += signed * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(dims: &[usize], seed: u64) -> MlpParams {
        MlpParams::init_uniform(dims, &mut RngStream::new(seed, 0))
    }

    #[test]
    fn zero_policy_is_uniform() {
        let p = MlpParams::zeros(&[2, 8, 8, 5]);
        let probs = policy_forward(&p, &[0.3, 0.1]).unwrap();
        for q in probs {
            assert!((q - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_normalised() {
        let p = net(&[1, 16, 16, 5], 3);
        for x in [-100.0, -1.0, 0.0, 0.5, 7.0, 1e3] {
            let probs = policy_forward(&p, &[x]).unwrap();
            assert!(probs.iter().all(|q| *q > 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn contrived_logits_give_closed_form_softmax() {
        // Zero hidden path; output bias carries the logits.
        let mut p = MlpParams::zeros(&[1, 4, 4, 5]);
        p.layers_mut()[2].biases = vec![2f64.ln(), 0.0, 0.0, 0.0, 0.0];
        let probs = policy_forward(&p, &[1.0]).unwrap();
        let want = [2.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in probs.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn value_forward_cases() {
        assert_eq!(value_forward(&MlpParams::zeros(&[2, 4, 4, 1]), &[1.0, 2.0]).unwrap(), 0.0);
        let mut p = MlpParams::zeros(&[1, 4, 4, 1]);
        p.layers_mut()[2].biases[0] = 1.75;
        for x in [0.0, 3.0, -9.0] {
            assert_eq!(value_forward(&p, &[x]).unwrap(), 1.75);
        }
        let r = net(&[2, 32, 32, 1], 11);
        assert!(value_forward(&r, &[1e3, -1e3]).unwrap().is_finite());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = net(&[2, 4, 4, 3], 1);
        assert_eq!(
            policy_forward(&p, &[1.0]),
            Err(NnError::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(value_forward(&p, &[1.0, 2.0, 3.0]).is_err());
        assert!(matches!(
            logprob_grad(&p, &[1.0, 2.0], 3),
            Err(NnError::InvalidAction { index: 3, outputs: 3 })
        ));
    }

    #[test]
    fn score_function_identity() {
        let p = net(&[2, 16, 16, 5], 8);
        let obs = [0.4, 0.2];
        let probs = policy_forward(&p, &obs).unwrap();
        let mut total = GradBuffer::zeros_like(&p);
        for (a, pa) in probs.iter().enumerate() {
            total.add_scaled(&logprob_grad(&p, &obs, a).unwrap(), *pa).unwrap();
        }
        assert!(total.flat().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn single_action_has_zero_gradient() {
        let p = net(&[1, 8, 8, 1], 2);
        let g = logprob_grad(&p, &[0.7], 0).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_critic_gradient_only_on_output_bias() {
        let p = MlpParams::zeros(&[2, 8, 8, 1]);
        let g = value_grad(&p, &[0.3, 0.9]).unwrap();
        assert!(g.only_output_bias());
        assert_eq!(g.flat().last().copied(), Some(1.0));
    }

    #[test]
    fn zero_input_gradient_independent_of_obs_path() {
        let p = net(&[2, 8, 8, 1], 4);
        let a = value_grad(&p, &[0.0, 0.0]).unwrap();
        let b = value_grad(&p, &[0.0 * 5.0, 0.0 * -3.0]).unwrap();
        assert_eq!(a, b);
        // First-layer weight gradients vanish because the inputs do.
        assert!(a.layers[0].weights.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = MlpParams::zeros(&[1, 1]);
        p.layers_mut()[0].weights[0] = 1.0;
        let mut g = GradBuffer::zeros_like(&p);
        g.layers[0].weights[0] = 2.0;
        sgd_apply(&mut p, &g, 0.1, Direction::Ascent).unwrap();
        assert!((p.layers()[0].weights[0] - 1.2).abs() < 1e-15);

        let before = p.clone();
        let zero = GradBuffer::zeros_like(&p);
        sgd_apply(&mut p, &zero, 0.5, Direction::Ascent).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn ascent_then_descent_restores() {
        let mut p = net(&[2, 8, 8, 3], 5);
        let orig = p.clone();
        let g = logprob_grad(&p, &[0.1, 0.2], 1).unwrap();
        sgd_apply(&mut p, &g, 0.01, Direction::Ascent).unwrap();
        sgd_apply(&mut p, &g, 0.01, Direction::Descent).unwrap();
        for (a, b) in p.flat().iter().zip(orig.flat()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_update_rejected_without_mutation() {
        let mut p = net(&[1, 2, 1], 6);
        let before = p.clone();
        let mut g = GradBuffer::zeros_like(&p);
        g.layers[1].biases[0] = f64::INFINITY;
        assert_eq!(sgd_apply(&mut p, &g, 1.0, Direction::Ascent), Err(NnError::Diverged));
        assert_eq!(p, before);
        assert!(matches!(
            sgd_apply(&mut p, &g, -1.0, Direction::Ascent),
            Err(NnError::InvalidStep(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let p = net(&[2, 5, 5, 3], 12);
        let q = MlpParams::from_flat(&p.layer_dims(), &p.flat()).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_flat(&[2, 5, 3], &p.flat()).is_err());
    }

    #[test]
    fn clip_norm_bounds() {
        let p = net(&[1, 4, 4, 2], 13);
        let mut g = logprob_grad(&p, &[0.5], 0).unwrap();
        g.scale(1e3);
        let before = g.clip_norm(5.0);
        assert!(before > 5.0);
        assert!((g.norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn entropy_gradient_matches_finite_difference() {
        let p = net(&[1, 6, 6, 4], 21);
        let obs = [0.3];
        let mut grad = GradBuffer::zeros_like(&p);
        let mut cache = ForwardCache::default();
        accumulate_entropy_grad(&p, &obs, 1.0, &mut grad, &mut cache).unwrap();
        let entropy = |q: &MlpParams| {
            let pr = policy_forward(q, &obs).unwrap();
            -pr.iter().map(|x| x * x.ln()).sum::<f64>()
        };
        let flat = p.flat();
        let g = grad.flat();
        let dims = p.layer_dims();
        for i in (0..flat.len()).step_by(7) {
            let mut up = flat.clone();
            up[i] += 1e-6;
            let mut dn = flat.clone();
            dn[i] -= 1e-6;
            let fd = (entropy(&MlpParams::from_flat(&dims, &up).unwrap())
                - entropy(&MlpParams::from_flat(&dims, &dn).unwrap()))
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7 + 1e-5 * fd.abs(), "{i}: {fd} vs {}", g[i]);
        }
    }
}
