//! Parameter storage and fully-connected building blocks.

use indexmap::IndexMap;

use crate::backend;
use crate::error::{Error, Result};
use crate::graph::{sigmoid_scalar, softplus_scalar, Graph, Var};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Floor added to every predicted standard deviation so downstream log-pdfs
/// and divisions stay finite.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Named parameter tensors in deterministic (insertion) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            self.entries.insert(name.clone(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Error if any parameter picked up a NaN or infinity.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (name, t) in &self.entries {
            if let Some((i, v)) = t.first_non_finite() {
                return Err(Error::non_finite_at(
                    context,
                    format!("parameter {name}[{i}] = {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
    Relu,
}

impl Activation {
    fn apply_graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Softplus => g.softplus(x),
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }

    fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus_scalar(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Output parameterization of an [`MlpSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Single affine output (logits, reconstructions, ...).
    Linear,
    /// Two affine outputs: a mean and a softplus-positive standard deviation.
    Gaussian,
}

/// Shape and naming of one fully-connected network. Parameters live in a
/// [`ParamStore`] under `{prefix}.w{i}` / `{prefix}.b{i}` for the trunk and
/// `w_out`/`b_out` (linear) or `w_mean`/`b_mean`/`w_sigma`/`b_sigma`
/// (Gaussian) for the head.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(
        prefix: impl Into<String>,
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        head: Head,
    ) -> Self {
        MlpSpec { prefix: prefix.into(), input_dim, hidden, output_dim, activation, head }
    }

    fn trunk_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut d = self.input_dim;
        for &h in &self.hidden {
            dims.push((d, h));
            d = h;
        }
        dims
    }

    fn last_width(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Create this network's parameters: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn init_into(&self, store: &mut ParamStore, rng: &mut RandomStream) {
        let mut init_layer = |store: &mut ParamStore, w: String, b: String, din: usize, dout: usize| {
            let bound = 1.0 / (din as f64).sqrt();
            store.insert(w, rng.uniform_tensor(vec![din, dout], -bound, bound));
            store.insert(b, Tensor::zeros(vec![dout]));
        };
        for (i, (din, dout)) in self.trunk_dims().into_iter().enumerate() {
            init_layer(store, self.name(&format!("w{i}")), self.name(&format!("b{i}")), din, dout);
        }
        let din = self.last_width();
        match self.head {
            Head::Linear => {
                init_layer(store, self.name("w_out"), self.name("b_out"), din, self.output_dim);
            }
            Head::Gaussian => {
                init_layer(store, self.name("w_mean"), self.name("b_mean"), din, self.output_dim);
                init_layer(store, self.name("w_sigma"), self.name("b_sigma"), din, self.output_dim);
            }
        }
    }

    fn graph_trunk(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for i in 0..self.hidden.len() {
            let w = g.param(&self.name(&format!("w{i}")), store.get(&self.name(&format!("w{i}"))));
            let b = g.param(&self.name(&format!("b{i}")), store.get(&self.name(&format!("b{i}"))));
            let a = g.matmul(h, w);
            let ab = g.add_row(a, b);
            h = self.activation.apply_graph(g, ab);
        }
        h
    }

    fn graph_affine(&self, g: &mut Graph, store: &ParamStore, h: Var, w: &str, b: &str) -> Var {
        let w = g.param(&self.name(w), store.get(&self.name(w)));
        let b = g.param(&self.name(b), store.get(&self.name(b)));
        let a = g.matmul(h, w);
        g.add_row(a, b)
    }

    /// Tape forward pass for a [`Head::Linear`] network: `[n, in] -> [n, out]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        assert_eq!(self.head, Head::Linear, "{}: use forward_gaussian", self.prefix);
        let h = self.graph_trunk(g, store, x);
        self.graph_affine(g, store, h, "w_out", "b_out")
    }

    /// Tape forward pass for a [`Head::Gaussian`] network: returns
    /// `(mean, sigma)` with `sigma = softplus(raw) + SIGMA_FLOOR`.
    pub fn forward_gaussian(&self, g: &mut Graph, store: &ParamStore, x: Var) -> (Var, Var) {
        assert_eq!(self.head, Head::Gaussian, "{}: use forward", self.prefix);
        let h = self.graph_trunk(g, store, x);
        let mean = self.graph_affine(g, store, h, "w_mean", "b_mean");
        let raw = self.graph_affine(g, store, h, "w_sigma", "b_sigma");
        let sp = g.softplus(raw);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        (mean, sigma)
    }

    fn eval_trunk(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for i in 0..self.hidden.len() {
            let w = store.get(&self.name(&format!("w{i}")));
            let b = store.get(&self.name(&format!("b{i}")));
            h = affine(&h, w, b).map(|v| self.activation.apply_scalar(v));
        }
        h
    }

    /// Tape-free forward pass (evaluation, probes), [`Head::Linear`] only.
    pub fn eval_forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(self.head, Head::Linear);
        let h = self.eval_trunk(store, x);
        affine(&h, store.get(&self.name("w_out")), store.get(&self.name("b_out")))
    }

    /// Tape-free `(mean, sigma)` for a [`Head::Gaussian`] network.
    pub fn eval_forward_gaussian(&self, store: &ParamStore, x: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(self.head, Head::Gaussian);
        let h = self.eval_trunk(store, x);
        let mean = affine(&h, store.get(&self.name("w_mean")), store.get(&self.name("b_mean")));
        let raw = affine(&h, store.get(&self.name("w_sigma")), store.get(&self.name("b_sigma")));
        (mean, raw.map(|v| softplus_scalar(v) + SIGMA_FLOOR))
    }

    /// Names of every parameter this spec creates, in creation order.
    pub fn param_names(&self) -> Vec<String> {
        self.param_shapes().into_iter().map(|(n, _)| n).collect()
    }

    /// `(name, shape)` for every parameter this spec creates, in creation
    /// order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (din, dout)) in self.trunk_dims().into_iter().enumerate() {
            out.push((self.name(&format!("w{i}")), vec![din, dout]));
            out.push((self.name(&format!("b{i}")), vec![dout]));
        }
        let din = self.last_width();
        match self.head {
            Head::Linear => {
                out.push((self.name("w_out"), vec![din, self.output_dim]));
                out.push((self.name("b_out"), vec![self.output_dim]));
            }
            Head::Gaussian => {
                out.push((self.name("w_mean"), vec![din, self.output_dim]));
                out.push((self.name("b_mean"), vec![self.output_dim]));
                out.push((self.name("w_sigma"), vec![din, self.output_dim]));
                out.push((self.name("b_sigma"), vec![self.output_dim]));
            }
        }
        out
    }
}

/// `x W + b` without a tape.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut out = backend::matmul_nn(x, w);
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        for (o, &bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    out
}

/// Row-wise stable sigmoid, tape-free.
pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax, tape-free.
pub fn softmax_tensor(x: &Tensor) -> Tensor {
    let k = x.cols();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::from_raw(x.shape().to_vec(), out)
}
