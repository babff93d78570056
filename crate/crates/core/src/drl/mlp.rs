//! Small fully connected network over a flat parameter vector, with an
//! optional single-channel 1D convolution in front and hand-written
//! backpropagation.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Multiplies `grad` by the derivative evaluated at pre-activation `z`.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        if self == Activation::Relu {
            grad.zip_mut_with(z, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    /// Kernel width of the front convolution, if any.
    pub conv_kernel: Option<usize>,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            conv_kernel: None,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Relu,
        }
    }

    pub fn with_conv(mut self, kernel: usize) -> Self {
        self.conv_kernel = Some(kernel);
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::config("network", "layer sizes must be positive"));
        }
        if let Some(k) = self.conv_kernel {
            if k == 0 || k > self.input {
                return Err(Error::config("network", format!("conv kernel {k} does not fit input {}", self.input)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1d,
    Dense,
}

/// Where one layer's parameters live in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Conv: kernel width; dense: `in_dim`.
    pub fan_in: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl LayerLayout {
    pub fn n_weights(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d => self.fan_in,
            LayerKind::Dense => self.in_dim * self.out_dim,
        }
    }

    pub fn n_bias(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d => 1,
            LayerKind::Dense => self.out_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerLayout>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
pub struct ForwardCache {
    /// input of every layer
    inputs: Vec<Array2<f64>>,
    /// pre-activation output of every layer
    pre: Vec<Array2<f64>>,
}

fn layout(spec: &MlpSpec) -> (Vec<LayerLayout>, usize) {
    let mut layers = Vec::new();
    let mut off = 0;
    let mut dim = spec.input;
    if let Some(k) = spec.conv_kernel {
        let out = dim - k + 1;
        layers.push(LayerLayout {
            kind: LayerKind::Conv1d,
            in_dim: dim,
            out_dim: out,
            fan_in: k,
            w_off: off,
            b_off: off + k,
        });
        off += k + 1;
        dim = out;
    }
    for &h in spec.hidden.iter().chain(std::iter::once(&spec.output)) {
        layers.push(LayerLayout {
            kind: LayerKind::Dense,
            in_dim: dim,
            out_dim: h,
            fan_in: dim,
            w_off: off,
            b_off: off + dim * h,
        });
        off += dim * h + h;
        dim = h;
    }
    (layers, off)
}

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let (layers, n) = layout(&spec);
        Ok(Mlp {
            spec,
            layers,
            params: vec![0.0; n],
        })
    }

    /// Uniform fan-in initialization, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for l in net.layers.clone() {
            let bound = (6.0 / (l.fan_in + if l.kind == LayerKind::Dense { l.out_dim } else { 1 }) as f64).sqrt();
            for w in &mut net.params[l.w_off..l.w_off + l.n_weights()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Multiplies the output layer's weights by `factor`.
    pub fn scale_output(&mut self, factor: f64) {
        let l = *self.layers.last().expect("at least one layer");
        for w in &mut self.params[l.w_off..l.w_off + l.n_weights()] {
            *w *= factor;
        }
    }

    fn weights(&self, l: &LayerLayout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.in_dim, l.out_dim), &self.params[l.w_off..l.w_off + l.n_weights()])
            .expect("layout matches")
    }

    fn bias(&self, l: &LayerLayout) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.b_off..l.b_off + l.n_bias()])
    }

    fn conv_forward(&self, l: &LayerLayout, x: &Array2<f64>) -> Array2<f64> {
        let k = l.fan_in;
        let w = &self.params[l.w_off..l.w_off + k];
        let b = self.params[l.b_off];
        let mut out = Array2::from_elem((x.nrows(), l.out_dim), b);
        for (i, &wi) in w.iter().enumerate() {
            out.scaled_add(wi, &x.slice(s![.., i..i + l.out_dim]));
        }
        out
    }

    fn layer_forward(&self, idx: usize, x: &Array2<f64>) -> Array2<f64> {
        let l = &self.layers[idx];
        match l.kind {
            LayerKind::Conv1d => self.conv_forward(l, x),
            LayerKind::Dense => x.dot(&self.weights(l)) + &self.bias(l),
        }
    }

    fn is_output(&self, idx: usize) -> bool {
        idx + 1 == self.layers.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for idx in 0..self.layers.len() {
            let mut z = self.layer_forward(idx, &h);
            if !self.is_output(idx) {
                self.spec.activation.apply(&mut z);
            }
            h = z;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        self.forward(&x).into_raw_vec_and_offset().0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for idx in 0..self.layers.len() {
            let z = self.layer_forward(idx, &h);
            let mut a = z.clone();
            if !self.is_output(idx) {
                self.spec.activation.apply(&mut a);
            }
            cache.inputs.push(h);
            cache.pre.push(z);
            h = a;
        }
        (h, cache)
    }

    /// Gradient of `Σ grad_out ⊙ output` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_out.clone();
        for idx in (0..self.layers.len()).rev() {
            let l = &self.layers[idx];
            if !self.is_output(idx) {
                self.spec.activation.backprop(&cache.pre[idx], &mut g);
            }
            let x = &cache.inputs[idx];
            match l.kind {
                LayerKind::Dense => {
                    let dw = x.t().dot(&g);
                    grads[l.w_off..l.w_off + l.n_weights()]
                        .iter_mut()
                        .zip(dw.iter())
                        .for_each(|(d, v)| *d = *v);
                    let db = g.sum_axis(Axis(0));
                    grads[l.b_off..l.b_off + l.n_bias()]
                        .iter_mut()
                        .zip(db.iter())
                        .for_each(|(d, v)| *d = *v);
                    if idx > 0 {
                        g = g.dot(&self.weights(l).t());
                    }
                }
                LayerKind::Conv1d => {
                    for i in 0..l.fan_in {
                        grads[l.w_off + i] = (&g * &x.slice(s![.., i..i + l.out_dim])).sum();
                    }
                    grads[l.b_off] = g.sum();
                }
            }
        }
        grads
    }
}

/// Numerical check of [`Mlp::backward`]: random inputs and a random linear
/// readout, central differences with step `h`. Returns the max relative
/// error `|a − n| / max(|a| + |n|, 1e-6)` over all parameters.
pub fn backprop_check<R: Rng + ?Sized>(net: &Mlp, batch: usize, h: f64, rng: &mut R) -> f64 {
    let x = Array2::from_shape_fn((batch, net.spec.input), |_| rng.random_range(-1.0..1.0));
    let c = Array2::from_shape_fn((batch, net.spec.output), |_| rng.random_range(-1.0..1.0));
    let loss = |n: &Mlp| (n.forward(&x) * &c).sum();
    let (_, cache) = net.forward_cached(&x);
    let analytic = net.backward(&cache, &c);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.params.len() {
        let p0 = probe.params[i];
        probe.params[i] = p0 + h;
        let up = loss(&probe);
        probe.params[i] = p0 - h;
        let down = loss(&probe);
        probe.params[i] = p0;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub fn log_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.mapv(|v| (v - m).exp()).sum().ln();
    logits.mapv(|v| v - lse)
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
