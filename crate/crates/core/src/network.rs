//! Fully connected ReLU networks.
//!
//! A network is a chain of affine layers with ReLU between consecutive
//! layers and none after the last:
//! `f(x) = A_L ReLU(A_{L−1} ReLU(⋯ A_1 x + b_1 ⋯) + b_{L−1}) + b_L`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, gemm, sample_gaussian_matrix, MatRef, Matrix, RngState, Vector};

const NARROW_OUTPUT: usize = 4;
const NARROW_INPUT: usize = 8;

/// One affine map `x ↦ W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    weights: Matrix,
    bias: Vector,
}

impl AffineLayer {
    pub fn new(weights: Matrix, bias: Vector) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim("AffineLayer::new", weights.rows(), bias.len()));
        }
        Ok(AffineLayer { weights, bias })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Vector {
        &mut self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        let mut y = self.weights.matvec(x)?;
        for (v, b) in y.iter_mut().zip(self.bias.iter()) {
            *v += b;
        }
        Ok(y)
    }
}

/// Weight initialization schemes.
///
/// Both draw weights from `N(0, 1/fan_in)` (standard deviation
/// `1/√fan_in`) and biases from `U(−1/√fan_in, 1/√fan_in)`, the usual
/// framework default for linear layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// The distribution under which the expected-bound theorems are stated.
    PaperRandom,
    /// Starting point for training. Currently identical to `PaperRandom`.
    TrainedDefault,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<AffineLayer>,
    seed: Option<u64>,
}

/// Per-parameter gradients mirroring a network's shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub input: Vector,
}

impl GradientTape {
    pub fn zeros_like(net: &ReluNetwork) -> Self {
        GradientTape {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| Vector::zeros(l.out_dim())).collect(),
            input: Vector::zeros(net.input_dim()),
        }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: f64, other: &GradientTape) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_scaled(c, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += c * y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(other.input.iter()) {
            *x += c * y;
        }
    }

    /// `self *= c`.
    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        }
        for v in self.biases.iter_mut().flat_map(|b| b.iter_mut()).chain(self.input.iter_mut()) {
            *v *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(|b| b.is_finite())
            && self.input.is_finite()
    }
}

/// Per-layer weight histogram with equal-width bins.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerHistogram {
    pub layer: usize,
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "a network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    "ReluNetwork::new",
                    format!("layer {} in_dim = {}", i + 1, pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(ReluNetwork { layers, seed: None })
    }

    /// The two-layer block `a2 · ReLU(A1 x + b1) + b2`; `a2` may have
    /// several rows for multi-output blocks.
    pub fn from_block(a1: Matrix, b1: Vector, a2: Matrix, b2: Vector) -> Result<Self> {
        ReluNetwork::new(vec![AffineLayer::new(a1, b1)?, AffineLayer::new(a2, b2)?])
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Seed recorded at initialization, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    /// `[in_dim, hidden…, out_dim]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(AffineLayer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * (l.in_dim() + 1))
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("forward", self.input_dim(), x.len()));
        }
        let last = self.layers.len() - 1;
        let mut h = Vector::from(x);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Forward pass over a batch stored as rows of `inputs` (`B × in_dim`);
    /// returns `B × out_dim`.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::dim("forward_batch", self.input_dim(), inputs.cols()));
        }
        let last = self.layers.len() - 1;
        let mut h = inputs.clone();
        let mut i = 0;
        while i <= last {
            let layer = &self.layers[i];
            if i + 1 == last && layer.in_dim() <= NARROW_INPUT && self.layers[last].out_dim() <= NARROW_OUTPUT {
                return Ok(fused_block(layer, &self.layers[last], &h));
            }
            let mut next = Matrix::zeros(h.rows(), layer.out_dim());
            if layer.out_dim() <= NARROW_OUTPUT {
                for r in 0..h.rows() {
                    let x = h.row(r);
                    for (o, v) in next.row_mut(r).iter_mut().enumerate() {
                        *v = dot(layer.weights().row(o), x) + layer.bias()[o];
                    }
                }
            } else {
                for r in 0..next.rows() {
                    next.row_mut(r).copy_from_slice(layer.bias());
                }
                gemm(MatRef::new(&h), MatRef::new(layer.weights()).t(), 1.0, &mut next);
            }
            if i < last {
                relu_in_place(next.as_mut_slice());
            }
            h = next;
            i += 1;
        }
        Ok(h)
    }

    /// Pre-activations of every layer for input `x` (the last entry is the
    /// network output).
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vector>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("pre_activations", self.input_dim(), x.len()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = Vector::from(x);
        for layer in &self.layers {
            let z = layer.apply(&h)?;
            h = z.map(|v| v.max(0.0));
            out.push(z);
        }
        Ok(out)
    }

    /// Reverse-mode gradients of `upstream · f(x)` with respect to every
    /// weight, bias and input coordinate. `ReLU'(0)` is taken as 0.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientTape> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim("backward", self.output_dim(), upstream.len()));
        }
        let pre = self.pre_activations(x)?;
        let mut tape = GradientTape::zeros_like(self);
        let mut grad = Vector::from(upstream);
        for i in (0..self.layers.len()).rev() {
            let input: Vector = if i == 0 {
                Vector::from(x)
            } else {
                pre[i - 1].map(|v| v.max(0.0))
            };
            tape.weights[i].add_outer(1.0, &grad, &input);
            tape.biases[i] = grad.clone();
            let mut down = self.layers[i].weights().matvec_transposed(&grad)?;
            if i > 0 {
                for (g, z) in down.iter_mut().zip(pre[i - 1].iter()) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grad = down;
        }
        tape.input = grad;
        Ok(tape)
    }

    /// `θ ← θ − lr · g` for every weight and bias.
    pub fn apply_update(&mut self, grads: &GradientTape, lr: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            layer.weights.add_scaled(-lr, gw);
            for (b, g) in layer.bias.iter_mut().zip(gb.iter()) {
                *b -= lr * g;
            }
        }
    }

    pub fn export_weight_histogram(&self, bins: usize) -> Result<Vec<LayerHistogram>> {
        if bins < 2 {
            return Err(Error::param("bins", format!("need at least 2 bins, got {bins}")));
        }
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| histogram(i, l.weights().as_slice(), bins))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(text)?;
        doc.into_network()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `second · ReLU(first · x + b1) + b2` for every row of `inputs`, one row
/// at a time so the hidden activations stay in cache. Used when the input
/// is narrow (gemm is inefficient with a tiny inner dimension) and the
/// output is narrow.
fn fused_block(first: &AffineLayer, second: &AffineLayer, inputs: &Matrix) -> Matrix {
    let wt = first.weights().transpose();
    let mut out = Matrix::zeros(inputs.rows(), second.out_dim());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { fused_rows_avx2(first, second, &wt, inputs, &mut out) };
        return out;
    }
    fused_rows(first, second, &wt, inputs, &mut out);
    out
}

// Same arithmetic as `fused_rows` (no FMA contraction), so the result does
// not depend on which variant runs.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fused_rows_avx2(first: &AffineLayer, second: &AffineLayer, wt: &Matrix, inputs: &Matrix, out: &mut Matrix) {
    fused_rows(first, second, wt, inputs, out)
}

#[inline(always)]
fn fused_rows(first: &AffineLayer, second: &AffineLayer, wt: &Matrix, inputs: &Matrix, out: &mut Matrix) {
    let mut hidden = vec![0.0; first.out_dim()];
    for r in 0..inputs.rows() {
        hidden.copy_from_slice(first.bias());
        for (j, &xj) in inputs.row(r).iter().enumerate() {
            axpy(xj, wt.row(j), &mut hidden);
        }
        relu_in_place(&mut hidden);
        for (o, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = dot(second.weights().row(o), &hidden) + second.bias()[o];
        }
    }
}

#[inline(always)]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

fn histogram(layer: usize, values: &[f64], bins: usize) -> LayerHistogram {
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() {
        lo = 0.0;
        hi = 1.0;
    } else if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    LayerHistogram {
        layer,
        edges,
        counts,
    }
}

/// Draws a network with the given layer widths.
pub fn init_network(rng: &mut RngState, dims: &[usize], scheme: InitScheme) -> Result<ReluNetwork> {
    if dims.len() < 2 {
        return Err(Error::param(
            "dims",
            format!("need at least input and output widths, got {dims:?}"),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::param("dims", format!("zero width in {dims:?}")));
    }
    match scheme {
        InitScheme::PaperRandom | InitScheme::TrainedDefault => {}
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = sample_gaussian_matrix(rng, fan_out, fan_in, scale)?;
        let bias: Vector = (0..fan_out).map(|_| rng.uniform_in(-scale, scale)).collect();
        layers.push(AffineLayer::new(weights, bias)?);
    }
    Ok(ReluNetwork::new(layers)?.with_seed(Some(rng.seed())))
}

/// On-disk network schema (`format = "tightprop-network"`, `version = 1`).
///
/// Weights are stored row-major (`out_dim × in_dim`). Floats are written in
/// shortest round-trip decimal form, so save/load is exact.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    format: String,
    version: u32,
    dims: Vec<usize>,
    seed: Option<u64>,
    layers: Vec<LayerDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocument {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

const NETWORK_FORMAT: &str = "tightprop-network";
const NETWORK_VERSION: u32 = 1;

impl From<&ReluNetwork> for NetworkDocument {
    fn from(net: &ReluNetwork) -> Self {
        NetworkDocument {
            format: NETWORK_FORMAT.to_string(),
            version: NETWORK_VERSION,
            dims: net.dims(),
            seed: net.seed,
            layers: net
                .layers
                .iter()
                .map(|l| LayerDocument {
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl NetworkDocument {
    fn into_network(self) -> Result<ReluNetwork> {
        if self.format != NETWORK_FORMAT || self.version != NETWORK_VERSION {
            return Err(Error::param(
                "format",
                format!(
                    "expected {NETWORK_FORMAT} v{NETWORK_VERSION}, got {} v{}",
                    self.format, self.version
                ),
            ));
        }
        if self.dims.len() != self.layers.len() + 1 {
            return Err(Error::dim(
                "network document",
                format!("{} dims for {} layers", self.layers.len() + 1, self.layers.len()),
                self.dims.len(),
            ));
        }
        let layers = self
            .layers
            .into_iter()
            .zip(self.dims.windows(2))
            .map(|(l, d)| AffineLayer::new(Matrix::from_vec(d[1], d[0], l.weights)?, l.bias.into()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReluNetwork::new(layers)?.with_seed(self.seed))
    }
}
