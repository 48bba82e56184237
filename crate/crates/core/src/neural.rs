//! Dense feed-forward networks with hand-written backpropagation and Adam.
//!
//! Everything is `f64`. Batches are row-major `(batch, features)` matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// `grad ⊙ σ'(z)` in place.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(z).for_each(|g, &z| {
                let t = z.tanh();
                *g *= 1.0 - t * t;
            }),
        }
    }
}

/// One affine layer followed by an activation. `weight` is `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Adam first and second moments for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m_weight: Array2<f64>,
    pub m_bias: Array1<f64>,
    pub v_weight: Array2<f64>,
    pub v_bias: Array1<f64>,
}

impl Moments {
    fn zeros(layer: &Dense) -> Self {
        Self {
            m_weight: Array2::zeros(layer.weight.raw_dim()),
            m_bias: Array1::zeros(layer.bias.raw_dim()),
            v_weight: Array2::zeros(layer.weight.raw_dim()),
            v_bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weight *= factor;
            g.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    /// Flattened in the same order as [`Network::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weight.iter());
            out.extend(g.bias.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Input of layer `index` for the whole batch; the last layer's input is
    /// the final hidden representation.
    pub fn input(&self, index: usize) -> Option<&Array2<f64>> {
        self.inputs.get(index)
    }

    /// Pre-activation of layer `index` for the whole batch.
    pub fn pre_activation(&self, index: usize) -> Option<&Array2<f64>> {
        self.pre_activations.get(index)
    }
}

/// A multilayer perceptron together with its Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Dense>,
    moments: Vec<Moments>,
    step: u64,
    /// Bumped on every parameter change to detect stale caches.
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.moments == other.moments && self.step == other.step
    }
}

impl Network {
    /// `sizes = [input, hidden.., output]`. Weights and biases start
    /// uniform in `±1/sqrt(fan_in)`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                    activation: if i == last { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let moments = layers.iter().map(Moments::zeros).collect();
        Self::from_parts(layers, moments, 0)
    }

    /// Rebuild a network with existing optimizer state; shapes are checked.
    pub fn from_parts(layers: Vec<Dense>, moments: Vec<Moments>, step: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("a network needs at least one layer"));
        }
        if moments.len() != layers.len() {
            return Err(Error::Shape {
                expected: layers.len(),
                actual: moments.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Shape {
                    expected: layer.outputs(),
                    actual: layer.bias.len(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs() != layer.outputs() {
                    return Err(Error::Shape {
                        expected: layer.outputs(),
                        actual: next.inputs(),
                    });
                }
            }
            let m = &moments[i];
            if m.m_weight.dim() != layer.weight.dim()
                || m.v_weight.dim() != layer.weight.dim()
                || m.m_bias.len() != layer.bias.len()
                || m.v_bias.len() != layer.bias.len()
            {
                return Err(Error::domain(format!(
                    "optimizer moments of layer {i} do not match"
                )));
            }
        }
        Ok(Self {
            layers,
            moments,
            step,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    /// Number of Adam steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Multiply the last layer's weights and bias by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight *= factor;
        last.bias *= factor;
        self.version += 1;
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape {
                expected: self.parameter_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    /// Forward a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::domain(e.to_string()))?;
        let (y, cache) = self.forward_batch(x.view())?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let z = current.dot(&layer.weight) + &layer.bias;
            let a = layer.activation.apply(&z);
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok((
            current,
            ForwardCache {
                version: self.version,
                inputs,
                pre_activations: pre,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight);
            z += &layer.bias;
            current = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => z.mapv_into(|v| v.max(0.0)),
                Activation::Tanh => z.mapv_into(f64::tanh),
            };
        }
        Ok(current)
    }

    /// Single-vector forward pass without a cache.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.predict_one_with_features(input).map(|(out, _)| out)
    }

    /// Single-vector forward pass that also returns the output layer's input.
    pub fn predict_one_with_features(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input.len())?;
        let mut current = input.to_vec();
        let mut features = Vec::new();
        for layer in &self.layers {
            features.clone_from(&current);
            let mut next = layer.bias.to_vec();
            for (i, &xi) in current.iter().enumerate() {
                if xi != 0.0 {
                    for (n, &w) in next.iter_mut().zip(layer.weight.row(i)) {
                        *n += xi * w;
                    }
                }
            }
            match layer.activation {
                Activation::Identity => {}
                Activation::Relu => next.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
            }
            current = next;
        }
        Ok((current, features))
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: width,
            });
        }
        Ok(())
    }

    /// Reverse pass. `output_grad` is `∂L/∂output` for the batch of the
    /// cached forward pass. Returns the parameter gradients and `∂L/∂input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.backward_with_features(cache, output_grad, None)
    }

    /// [`Network::backward`] for a loss that also depends directly on the
    /// output layer's input (the final hidden features); `feature_grad` is
    /// that partial derivative.
    pub fn backward_with_features(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        feature_grad: Option<ArrayView2<f64>>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::domain(
                "forward cache is stale: parameters changed since the forward pass",
            ));
        }
        let batch = cache.inputs[0].nrows();
        if output_grad.dim() != (batch, self.output_dim()) {
            return Err(Error::domain(format!(
                "output gradient has shape {:?}, expected {:?}",
                output_grad.dim(),
                (batch, self.output_dim())
            )));
        }
        let last = self.layers.len() - 1;
        if let Some(f) = &feature_grad {
            if f.dim() != cache.inputs[last].dim() {
                return Err(Error::domain(format!(
                    "feature gradient has shape {:?}, expected {:?}",
                    f.dim(),
                    cache.inputs[last].dim()
                )));
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut grad = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer
                .activation
                .backprop(&cache.pre_activations[i], &mut grad);
            let weight = cache.inputs[i].t().dot(&grad);
            let bias = grad.sum_axis(Axis(0));
            let mut input_grad = grad.dot(&layer.weight.t());
            if i == last {
                if let Some(f) = &feature_grad {
                    input_grad += f;
                }
            }
            grads.push(DenseGrad { weight, bias });
            grad = input_grad;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, grad))
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                expected: self.layers.len(),
                actual: grads.layers.len(),
            });
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if layer.weight.dim() != g.weight.dim() || layer.bias.len() != g.bias.len() {
                return Err(Error::domain("gradient shapes do not match the network"));
            }
        }
        self.step += 1;
        let t = self.step;
        for ((layer, m), g) in self
            .layers
            .iter_mut()
            .zip(&mut self.moments)
            .zip(&grads.layers)
        {
            adam_update(
                layer.weight.as_slice_mut().expect("standard layout"),
                g.weight
                    .as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
                m.m_weight.as_slice_mut().expect("standard layout"),
                m.v_weight.as_slice_mut().expect("standard layout"),
                t,
                learning_rate,
            );
            adam_update(
                layer.bias.as_slice_mut().expect("standard layout"),
                g.bias
                    .as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
                m.m_bias.as_slice_mut().expect("standard layout"),
                m.v_bias.as_slice_mut().expect("standard layout"),
                t,
                learning_rate,
            );
        }
        self.version += 1;
        if !self.is_finite() {
            return Err(Error::domain("network parameters became non-finite"));
        }
        Ok(())
    }

    /// Polyak averaging `θ ← (1 - τ) θ + τ θ_src`. Optimizer state is untouched.
    pub fn soft_update_from(&mut self, source: &Network, tau: f64) -> Result<()> {
        if self.layers.len() != source.layers.len() {
            return Err(Error::Shape {
                expected: self.layers.len(),
                actual: source.layers.len(),
            });
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            if dst.weight.dim() != src.weight.dim() {
                return Err(Error::domain(
                    "soft update between networks of different shape",
                ));
            }
            Zip::from(&mut dst.weight)
                .and(&src.weight)
                .for_each(|d, &s| *d = (1.0 - tau) * *d + tau * s);
            Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, &s| *d = (1.0 - tau) * *d + tau * s);
        }
        self.version += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Elementwise Adam on flat slices; `t` is the 1-based step count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    learning_rate: f64,
) {
    let exponent = i32::try_from(t).unwrap_or(i32::MAX);
    let correction1 = 1.0 - ADAM_BETA1.powi(exponent);
    let correction2 = 1.0 - ADAM_BETA2.powi(exponent);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(
            &[4, 7, 5, 3],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        )
        .unwrap()
    }

    fn random_batch(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    /// Loss used by the gradient checks: `Σ c ⊙ f(x)`.
    fn weighted_sum(net: &Network, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        (net.predict(x.view()).unwrap() * c).sum()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layers = vec![
            Dense {
                weight: Array2::zeros((3, 4)),
                bias: Array1::zeros(4),
                activation: Activation::Relu,
            },
            Dense {
                weight: Array2::zeros((4, 2)),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        ];
        let net = Network::from_layers(layers).unwrap();
        let (y, _) = net.forward(&[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_unit() {
        let net = Network::from_layers(vec![Dense {
            weight: array![[2.0]],
            bias: array![1.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap().0, vec![7.0]);
        assert_eq!(net.predict_one(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = random_net(1);
        let x = [0.1, -0.4, 0.9, 0.0];
        let a = net.forward(&x).unwrap().0;
        let b = net.forward(&x).unwrap().0;
        assert_eq!(a, b);
        let c = net.predict_one(&x).unwrap();
        for (u, v) in a.iter().zip(&c) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = random_net(1);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        let bad = vec![
            Dense {
                weight: Array2::zeros((3, 4)),
                bias: Array1::zeros(4),
                activation: Activation::Relu,
            },
            Dense {
                weight: Array2::zeros((5, 2)),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        ];
        assert!(Network::from_layers(bad).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = random_net(7);
        let x = random_batch(8, 6, 4);
        let c = random_batch(9, 6, 3);
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let (grads, input_grad) = net.backward(&cache, c.view()).unwrap();
        let analytic = grads.flatten();
        let base = net.flat_params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            net.set_flat_params(&p).unwrap();
            let up = weighted_sum(&net, &x, &c);
            p[i] = base[i] - h;
            net.set_flat_params(&p).unwrap();
            let down = weighted_sum(&net, &x, &c);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
        net.set_flat_params(&base).unwrap();
        // input gradient
        for r in 0..x.nrows() {
            for col in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, col]] += h;
                let up = weighted_sum(&net, &xp, &c);
                xp[[r, col]] -= 2.0 * h;
                let down = weighted_sum(&net, &xp, &c);
                let fd = (up - down) / (2.0 * h);
                let a = input_grad[[r, col]];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-6) <= 1e-4);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = random_net(2);
        let x = random_batch(3, 5, 4);
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let (g, _) = net.backward(&cache, Array2::zeros((5, 3)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let net = random_net(4);
        let x = random_batch(5, 5, 4);
        let c = random_batch(6, 5, 3);
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let (g1, _) = net.backward(&cache, c.view()).unwrap();
        let (g2, _) = net.backward(&cache, (&c * 2.0).view()).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = random_net(5);
        let x = random_batch(1, 2, 4);
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let g = Gradients::zeros_like(&net);
        net.adam_step(&g, 1e-3).unwrap();
        assert!(net.backward(&cache, Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = random_net(6);
        let before = net.flat_params();
        net.adam_step(&Gradients::zeros_like(&net), 0.01).unwrap();
        assert_eq!(net.flat_params(), before);
        assert_eq!(net.step(), 1);
    }

    #[test]
    fn adam_moments_decay_with_zero_gradient() {
        let mut p = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[0.5], &mut m, &mut v, 1, 0.1);
        let (m1, v1) = (m[0], v[0]);
        adam_update(&mut p, &[0.0], &mut m, &mut v, 2, 0.1);
        assert!((m[0] - 0.9 * m1).abs() < 1e-15);
        assert!((v[0] - 0.999 * v1).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_by_hand() {
        // m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g², step = lr g / (|g| + eps)
        for g in [0.37, -2.5, 1e-3] {
            let mut p = [0.25];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, 0.005);
            let expected = 0.25 - 0.005 * g / (g.abs() + 1e-8);
            assert!(
                (p[0] - expected).abs() < 1e-15,
                "{g}: {} vs {expected}",
                p[0]
            );
            assert!(((0.25 - p[0]).abs() - 0.005).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = random_net(10);
        let mut b = random_net(10);
        let x = random_batch(11, 8, 4);
        for k in 0..5 {
            let c = random_batch(20 + k, 8, 3);
            for net in [&mut a, &mut b] {
                let (_, cache) = net.forward_batch(x.view()).unwrap();
                let (g, _) = net.backward(&cache, c.view()).unwrap();
                net.adam_step(&g, 0.005).unwrap();
            }
        }
        assert_eq!(a, b);
    }

    #[test]
    fn soft_update_limits() {
        let src = random_net(1);
        let mut copy = random_net(2);
        copy.soft_update_from(&src, 1.0).unwrap();
        assert_eq!(copy.flat_params(), src.flat_params());
        let mut frozen = random_net(2);
        let before = frozen.flat_params();
        frozen.soft_update_from(&src, 0.0).unwrap();
        assert_eq!(frozen.flat_params(), before);
    }
}
