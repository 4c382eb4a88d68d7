//! Interval output bounds for ReLU networks over an ℓ∞ input box.
//!
//! Three propagators live here:
//!
//! * [`affine_interval`]: exact bounds of one affine map over the box,
//!   `A x + b ∓ ε |A| 1`.
//! * [`ibp_network`]: layerwise interval bound propagation. Deterministically
//!   sound and usually loose.
//! * [`expected_bounds_block`] / [`propagate_blockwise`]: the expected tight
//!   bounds. Each hidden ReLU is replaced by a 0/1 diagonal mask chosen from
//!   the upper bound of its pre-activation (`1{u ≥ 0}`), which turns the
//!   network into a single affine envelope `G x̃ + h` that is then bounded
//!   exactly over the box. These are true bounds only in expectation over
//!   Gaussian weights; no pointwise soundness is claimed.
//!
//! Networks with biases carry the offset `h` through the recursion:
//! `G_0 = A_1, h_0 = b_1`, `G_i = A_{i+1} M_i G_{i−1}`,
//! `h_i = A_{i+1} M_i h_{i−1} + b_{i+1}`, where `M_i` is the mask of the
//! upper bound `G_{i−1} x + h_{i−1} + ε |G_{i−1}| 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef, Matrix, Vector};
use crate::network::{AffineLayer, ReluNetwork};

/// The ℓ∞ ball `[x − ε1, x + ε1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    center: Vector,
    radius: f64,
}

impl InputBox {
    pub fn new(center: Vector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::param(
                "radius",
                format!("must be a finite non-negative number, got {radius}"),
            ));
        }
        if !center.is_finite() {
            return Err(Error::param("center", "contains a non-finite value"));
        }
        Ok(InputBox { center, radius })
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn to_interval(&self) -> Interval {
        Interval {
            lower: self.center.map(|c| c - self.radius),
            upper: self.center.map(|c| c + self.radius),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.center.iter())
                .all(|(v, c)| (v - c).abs() <= self.radius)
    }
}

/// Paired lower/upper vectors with `lower ≤ upper` elementwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lower: Vector,
    upper: Vector,
}

impl Interval {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("Interval::new", lower.len(), upper.len()));
        }
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::param("interval", "bounds must be finite"));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::param(
                "interval",
                format!("lower[{i}] = {} exceeds upper[{i}] = {}", lower[i], upper[i]),
            ));
        }
        Ok(Interval { lower, upper })
    }

    /// Degenerate interval `[v, v]`.
    pub fn point(v: Vector) -> Self {
        Interval {
            lower: v.clone(),
            upper: v,
        }
    }

    /// `center ∓ radius`; `radius` must be non-negative.
    pub(crate) fn from_center_radius(center: &[f64], radius: &[f64]) -> Self {
        debug_assert!(radius.iter().all(|r| *r >= 0.0 || r.is_nan()));
        Interval {
            lower: center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            upper: center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        }
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn midpoint(&self) -> Vector {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn half_width(&self) -> Vector {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(l, u)| 0.5 * (u - l))
            .collect()
    }

    /// Whether `x` lies inside, allowing `slack` on each side.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.len()
            && (0..self.len()).all(|i| x[i] >= self.lower[i] - slack && x[i] <= self.upper[i] + slack)
    }

    /// Whether `other ⊆ self`, allowing `slack` on each side.
    pub fn encloses(&self, other: &Interval, slack: f64) -> bool {
        other.len() == self.len()
            && (0..self.len())
                .all(|i| other.lower[i] >= self.lower[i] - slack && other.upper[i] <= self.upper[i] + slack)
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// Indicator mask `diag(1{u ≥ 0})` replacing a ReLU layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationMask(Vec<bool>);

impl ActivationMask {
    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    /// The diagonal as a 0/1 vector.
    pub fn to_vector(&self) -> Vector {
        self.0.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

/// Affine map `x̃ ↦ G x̃ + h` accumulated by the blockwise recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineEnvelope {
    pub map: Matrix,
    pub offset: Vector,
}

impl AffineEnvelope {
    pub fn new(map: Matrix, offset: Vector) -> Result<Self> {
        if map.rows() != offset.len() {
            return Err(Error::dim("AffineEnvelope::new", map.rows(), offset.len()));
        }
        Ok(AffineEnvelope { map, offset })
    }

    /// Exact range of the envelope over `input`.
    pub fn bounds(&self, input: &InputBox) -> Result<Interval> {
        let (center, radius) = envelope_center_radius(&self.map, &self.offset, input)?;
        Ok(Interval::from_center_radius(&center, &radius))
    }
}

fn envelope_center_radius(map: &Matrix, offset: &[f64], input: &InputBox) -> Result<(Vector, Vector)> {
    if map.cols() != input.dim() {
        return Err(Error::dim("affine bound", map.cols(), input.dim()));
    }
    let mut center = map.matvec(input.center())?;
    for (c, h) in center.iter_mut().zip(offset) {
        *c += h;
    }
    let eps = input.radius();
    let radius = map.abs_row_sums().map(|s| eps * s);
    Ok((center, radius))
}

/// Bounds of one affine layer over the box: `A x + b ∓ ε |A| 1`.
pub fn affine_interval(layer: &AffineLayer, input: &InputBox) -> Result<Interval> {
    let (center, radius) = envelope_center_radius(layer.weights(), layer.bias(), input)?;
    Ok(Interval::from_center_radius(&center, &radius))
}

/// Bounds of one affine layer over an arbitrary interval, in midpoint /
/// half-width form: `W m + b ∓ |W| r`.
pub fn affine_interval_general(layer: &AffineLayer, input: &Interval) -> Result<Interval> {
    if layer.in_dim() != input.len() {
        return Err(Error::dim("affine_interval_general", layer.in_dim(), input.len()));
    }
    let mid = input.midpoint();
    let rad = input.half_width();
    let w = layer.weights();
    let center = layer.apply(&mid)?;
    let radius: Vector = (0..w.rows())
        .map(|i| w.row(i).iter().zip(rad.iter()).map(|(a, r)| a.abs() * r).sum())
        .collect();
    Ok(Interval::from_center_radius(&center, &radius))
}

/// ReLU applied to both endpoints.
pub fn relu_interval(input: &Interval) -> Interval {
    Interval {
        lower: input.lower.map(|v| v.max(0.0)),
        upper: input.upper.map(|v| v.max(0.0)),
    }
}

/// Layerwise interval bound propagation through the whole network.
pub fn ibp_network(net: &ReluNetwork, input: &InputBox) -> Result<Interval> {
    let layers = net.layers();
    let mut iv = affine_interval(&layers[0], input)?;
    for layer in &layers[1..] {
        iv = affine_interval_general(layer, &relu_interval(&iv))?;
    }
    Ok(iv)
}

/// `M = diag(1{u ≥ 0})`; ties at exactly zero count as active.
pub fn mask_from_upper(upper: &[f64]) -> ActivationMask {
    ActivationMask(upper.iter().map(|&u| u >= 0.0).collect())
}

/// Rows of `a` with columns scaled by the mask (`a · M`).
fn mask_columns(a: &Matrix, mask: &ActivationMask) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (v, keep) in out.row_mut(r).iter_mut().zip(&mask.0) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    out
}

/// Expected tight bounds of the block `a2 · ReLU(A1 x̃ + b1) + b2`:
/// `a2ᵀ M A1 x + a2ᵀ M b1 + b2 ∓ ε |a2ᵀ M A1| 1`.
///
/// `a2` may have several rows; all rows share one mask. The center is
/// evaluated as `a2 · M (A1 x + b1) + b2`, which equals the forward pass
/// exactly when `ε = 0`.
pub fn expected_bounds_block(
    a1: &Matrix,
    b1: &Vector,
    a2: &Matrix,
    b2: &Vector,
    input: &InputBox,
) -> Result<Interval> {
    if b1.len() != a1.rows() {
        return Err(Error::dim("expected_bounds_block: b1", a1.rows(), b1.len()));
    }
    if a2.cols() != a1.rows() {
        return Err(Error::dim("expected_bounds_block: a2", a1.rows(), a2.cols()));
    }
    if b2.len() != a2.rows() {
        return Err(Error::dim("expected_bounds_block: b2", a2.rows(), b2.len()));
    }
    let (c1, r1) = envelope_center_radius(a1, b1, input)?;
    let u1: Vector = c1.iter().zip(r1.iter()).map(|(c, r)| c + r).collect();
    let mask = mask_from_upper(&u1);
    let a2m = mask_columns(a2, &mask);
    let map = a2m.matmul(a1)?;
    let mut center = a2m.matvec(&c1)?;
    for (c, b) in center.iter_mut().zip(b2.iter()) {
        *c += b;
    }
    let eps = input.radius();
    let radius = map.abs_row_sums().map(|s| eps * s);
    Ok(Interval::from_center_radius(&center, &radius))
}

/// Everything the blockwise recursion computed, kept for differentiation.
#[derive(Clone, Debug)]
pub struct BlockwiseTrace {
    /// `G_i` for `i = 0..L−1`; the last entry is the final map. Only the
    /// final map is kept unless intermediates were requested.
    pub maps: Vec<Matrix>,
    /// Envelope value at the box center, `G_i x + h_i`, for every layer.
    pub centers: Vec<Vector>,
    /// `M_i`, one per hidden layer.
    pub masks: Vec<ActivationMask>,
    pub bounds: Interval,
}

impl BlockwiseTrace {
    /// The final envelope `(G, h)`, with `h = c − G x`.
    pub fn envelope(&self, input: &InputBox) -> Result<AffineEnvelope> {
        let map = self.maps.last().expect("at least one map").clone();
        let gx = map.matvec(input.center())?;
        let center = self.centers.last().expect("at least one center");
        let offset = center.iter().zip(gx.iter()).map(|(c, g)| c - g).collect();
        AffineEnvelope::new(map, offset)
    }
}

/// Blockwise propagation of the expected tight bounds through a deep
/// network. A single-layer network yields its exact affine bounds.
pub fn propagate_blockwise(net: &ReluNetwork, input: &InputBox) -> Result<(Interval, AffineEnvelope)> {
    let trace = propagate_blockwise_trace(net, input, false)?;
    let env = trace.envelope(input)?;
    Ok((trace.bounds, env))
}

/// As [`propagate_blockwise`], optionally retaining every intermediate
/// map `G_i` (needed for gradients).
///
/// The envelope value at the box center is carried as a point,
/// `c_i = A_{i+1} M_i c_{i−1} + b_{i+1}`, which equals `G_i x + h_i`.
pub fn propagate_blockwise_trace(
    net: &ReluNetwork,
    input: &InputBox,
    keep_intermediate: bool,
) -> Result<BlockwiseTrace> {
    if net.input_dim() != input.dim() {
        return Err(Error::dim("propagate_blockwise", net.input_dim(), input.dim()));
    }
    let eps = input.radius();
    let layers = net.layers();
    let mut map = layers[0].weights().clone();
    let mut center = layers[0].apply(input.center())?;
    let mut maps = Vec::new();
    let mut centers = Vec::with_capacity(layers.len());
    let mut masks = Vec::with_capacity(layers.len() - 1);
    for layer in &layers[1..] {
        let radius = map.abs_row_sums();
        let upper: Vector = center.iter().zip(radius.iter()).map(|(c, r)| c + eps * r).collect();
        let mask = mask_from_upper(&upper);

        let mut masked = map.clone();
        let mut point = center.clone();
        for r in 0..masked.rows() {
            if !mask.is_active(r) {
                masked.row_mut(r).fill(0.0);
                point[r] = 0.0;
            }
        }
        let mut next = Matrix::zeros(layer.out_dim(), masked.cols());
        gemm(MatRef::new(layer.weights()), MatRef::new(&masked), 0.0, &mut next);
        let next_center = layer.apply(&point)?;
        if keep_intermediate {
            maps.push(std::mem::replace(&mut map, next));
        } else {
            map = next;
        }
        centers.push(std::mem::replace(&mut center, next_center));
        masks.push(mask);
    }
    let radius = map.abs_row_sums().map(|s| eps * s);
    let bounds = Interval::from_center_radius(&center, &radius);
    maps.push(map);
    centers.push(center);
    Ok(BlockwiseTrace {
        maps,
        centers,
        masks,
        bounds,
    })
}

/// Elementwise `upper − lower`.
pub fn width(iv: &Interval) -> Vector {
    iv.upper
        .iter()
        .zip(iv.lower.iter())
        .map(|(u, l)| u - l)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;
    use crate::network::{init_network, InitScheme};

    fn row(v: &[f64]) -> Matrix {
        Matrix::from_rows(&[v.to_vec()]).unwrap()
    }

    fn failure_block(n: usize) -> (Matrix, Vector, Matrix, Vector, InputBox) {
        (
            Matrix::identity(n).scale(1000.0),
            Vector::filled(n, -999.0),
            row(&vec![-10.0; n]),
            Vector::zeros(1),
            InputBox::new(Vector::zeros(n), 1.0).unwrap(),
        )
    }

    #[test]
    fn point_box_gives_affine_image() {
        let layer = AffineLayer::new(
            Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap(),
            vec![0.1, -0.2].into(),
        )
        .unwrap();
        let b = InputBox::new(vec![1.0, 2.0].into(), 0.0).unwrap();
        let iv = affine_interval(&layer, &b).unwrap();
        assert_eq!(iv.lower(), iv.upper());
        assert_eq!(iv.lower(), &layer.apply(&[1.0, 2.0]).unwrap());
    }

    #[test]
    fn identity_layer_returns_the_box() {
        let layer = AffineLayer::new(Matrix::identity(3), Vector::zeros(3)).unwrap();
        let b = InputBox::new(vec![1.0, -1.0, 0.0].into(), 0.25).unwrap();
        assert_eq!(affine_interval(&layer, &b).unwrap(), b.to_interval());
    }

    #[test]
    fn failure_example_first_layer_recomputed() {
        let (a1, b1, _, _, bx) = failure_block(4);
        let iv = affine_interval(&AffineLayer::new(a1, b1).unwrap(), &bx).unwrap();
        assert!(iv.lower().iter().all(|&v| v == -1999.0));
        assert!(iv.upper().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_interval_cases() {
        let iv = Interval::new(vec![-1.0, 0.5, -3.0].into(), vec![1.0, 2.0, -1.0].into()).unwrap();
        let r = relu_interval(&iv);
        assert_eq!(r.lower().as_slice(), &[0.0, 0.5, 0.0]);
        assert_eq!(r.upper().as_slice(), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn mask_ties_are_active() {
        let m = mask_from_upper(&[-1.0, 0.0, 2.0]);
        assert_eq!(m.to_vector().as_slice(), &[0.0, 1.0, 1.0]);
        assert_eq!(mask_from_upper(&[-1.0, -2.0]).active_count(), 0);
        assert_eq!(mask_from_upper(&[1.0, 2.0]).active_count(), 2);
    }

    #[test]
    fn failure_example_bounds() {
        for n in [2usize, 8] {
            let (a1, b1, a2, b2, bx) = failure_block(n);
            let m = expected_bounds_block(&a1, &b1, &a2, &b2, &bx).unwrap();
            assert_eq!(m.lower()[0], -10.0 * n as f64);
            assert_eq!(m.upper()[0], 19990.0 * n as f64);
            let net = ReluNetwork::from_block(a1, b1, a2, b2).unwrap();
            let ibp = ibp_network(&net, &bx).unwrap();
            assert_eq!(ibp.lower()[0], -10.0 * n as f64);
            assert_eq!(ibp.upper()[0], 0.0);
            let diff = width(&ibp)[0] - width(&m)[0];
            assert_eq!(diff, -19990.0 * n as f64);
        }
    }

    #[test]
    fn single_unit_all_active() {
        let net = ReluNetwork::from_block(row(&[1.0]), vec![10.0].into(), row(&[1.0]), vec![0.0].into())
            .unwrap();
        let bx = InputBox::new(vec![0.0].into(), 1.0).unwrap();
        let ibp = ibp_network(&net, &bx).unwrap();
        assert_eq!((ibp.lower()[0], ibp.upper()[0]), (9.0, 11.0));
    }

    #[test]
    fn absolute_value_block_collapses() {
        // g(x) = relu(x) + relu(-x) = |x|
        let a1 = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let bx = InputBox::new(vec![0.0].into(), 1.0).unwrap();
        let m = expected_bounds_block(&a1, &Vector::zeros(2), &row(&[1.0, 1.0]), &Vector::zeros(1), &bx)
            .unwrap();
        assert_eq!((m.lower()[0], m.upper()[0]), (0.0, 0.0));
        let net = ReluNetwork::from_block(a1, Vector::zeros(2), row(&[1.0, 1.0]), Vector::zeros(1)).unwrap();
        let ibp = ibp_network(&net, &bx).unwrap();
        assert_eq!((ibp.lower()[0], ibp.upper()[0]), (0.0, 2.0));
    }

    #[test]
    fn ibp_matches_closed_form_on_two_layer_block() {
        let mut rng = RngState::new(21);
        let net = init_network(&mut rng, &[6, 12, 1], InitScheme::PaperRandom).unwrap();
        let bx = InputBox::new((0..6).map(|i| 0.3 * i as f64 - 0.7).collect(), 0.2).unwrap();
        let ibp = ibp_network(&net, &bx).unwrap();
        let first = affine_interval(&net.layers()[0], &bx).unwrap();
        let a2 = net.layers()[1].weights().row(0);
        let b2 = net.layers()[1].bias()[0];
        let (mut mid, mut rad) = (0.0, 0.0);
        for i in 0..12 {
            let hi = first.upper()[i].max(0.0);
            let lo = first.lower()[i].max(0.0);
            mid += a2[i] * (hi + lo) / 2.0;
            rad += a2[i].abs() * (hi - lo) / 2.0;
        }
        assert!((ibp.lower()[0] - (mid - rad + b2)).abs() < 1e-12);
        assert!((ibp.upper()[0] - (mid + rad + b2)).abs() < 1e-12);
    }

    #[test]
    fn depth_two_recursion_reduces_to_block_formula() {
        let mut rng = RngState::new(8);
        for _ in 0..20 {
            let net = init_network(&mut rng, &[5, 9, 3], InitScheme::PaperRandom).unwrap();
            let center: Vector = (0..5).map(|_| rng.standard_normal()).collect();
            let bx = InputBox::new(center, 0.3).unwrap();
            let (deep, _) = propagate_blockwise(&net, &bx).unwrap();
            let l = net.layers();
            let block =
                expected_bounds_block(l[0].weights(), l[0].bias(), l[1].weights(), l[1].bias(), &bx).unwrap();
            for i in 0..3 {
                assert!((deep.lower()[i] - block.lower()[i]).abs() < 1e-12);
                assert!((deep.upper()[i] - block.upper()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_active_bias_free_chain_is_linear() {
        // Positive weights and a positive box keep every unit active, so the
        // envelope is the plain product of the weight matrices.
        let mut rng = RngState::new(4);
        let dims = [4usize, 6, 5, 2];
        let layers: Vec<AffineLayer> = dims
            .windows(2)
            .map(|d| {
                let w = crate::linalg::sample_gaussian_matrix(&mut rng, d[1], d[0], 1.0)
                    .unwrap()
                    .abs();
                AffineLayer::new(w, Vector::zeros(d[1])).unwrap()
            })
            .collect();
        let product = layers[2]
            .weights()
            .matmul(&layers[1].weights().matmul(layers[0].weights()).unwrap())
            .unwrap();
        let net = ReluNetwork::new(layers).unwrap();
        let bx = InputBox::new(Vector::filled(4, 10.0), 0.5).unwrap();
        let (deep, env) = propagate_blockwise(&net, &bx).unwrap();
        let linear = affine_interval(&AffineLayer::new(product, Vector::zeros(2)).unwrap(), &bx).unwrap();
        for i in 0..2 {
            assert!((deep.lower()[i] - linear.lower()[i]).abs() < 1e-9 * linear.upper()[i].abs());
            assert!((deep.upper()[i] - linear.upper()[i]).abs() < 1e-9 * linear.upper()[i].abs());
        }
        assert_eq!(env.map.shape(), (2, 4));
    }

    #[test]
    fn trace_keeps_every_envelope() {
        let mut rng = RngState::new(2);
        let net = init_network(&mut rng, &[3, 4, 4, 2], InitScheme::PaperRandom).unwrap();
        let bx = InputBox::new(Vector::zeros(3), 0.1).unwrap();
        let trace = propagate_blockwise_trace(&net, &bx, true).unwrap();
        assert_eq!(trace.maps.len(), 3);
        assert_eq!(trace.centers.len(), 3);
        assert_eq!(trace.masks.len(), 2);
        assert_eq!(trace.maps[0], *net.layers()[0].weights());
        let (plain, _) = propagate_blockwise(&net, &bx).unwrap();
        assert_eq!(plain, trace.bounds);
    }

    #[test]
    fn zero_radius_collapses_to_forward_exactly() {
        let mut rng = RngState::new(17);
        for depth in 1..=4 {
            let mut dims = vec![5];
            dims.extend(std::iter::repeat(7).take(depth - 1));
            dims.push(3);
            let net = init_network(&mut rng, &dims, InitScheme::PaperRandom).unwrap();
            let x: Vector = (0..5).map(|_| rng.standard_normal()).collect();
            let bx = InputBox::new(x.clone(), 0.0).unwrap();
            let y = net.forward(&x).unwrap();
            let (m, _) = propagate_blockwise(&net, &bx).unwrap();
            let ibp = ibp_network(&net, &bx).unwrap();
            for iv in [&m, &ibp] {
                assert_eq!(iv.lower(), &y);
                assert_eq!(iv.upper(), &y);
            }
        }
    }

    #[test]
    fn envelope_reproduces_trace_bounds() {
        let mut rng = RngState::new(5);
        let net = init_network(&mut rng, &[6, 10, 10, 2], InitScheme::PaperRandom).unwrap();
        let bx = InputBox::new((0..6).map(|_| rng.standard_normal()).collect(), 0.1).unwrap();
        let (iv, env) = propagate_blockwise(&net, &bx).unwrap();
        let again = env.bounds(&bx).unwrap();
        for i in 0..2 {
            assert!((iv.lower()[i] - again.lower()[i]).abs() < 1e-12);
            assert!((iv.upper()[i] - again.upper()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        assert!(InputBox::new(Vector::zeros(2), -1.0).is_err());
        assert!(InputBox::new(vec![f64::NAN].into(), 1.0).is_err());
        assert!(Interval::new(vec![1.0].into(), vec![0.0].into()).is_err());
        assert!(Interval::new(vec![1.0].into(), vec![0.0, 1.0].into()).is_err());
        let layer = AffineLayer::new(Matrix::identity(2), Vector::zeros(2)).unwrap();
        let bx = InputBox::new(Vector::zeros(3), 1.0).unwrap();
        assert!(matches!(affine_interval(&layer, &bx), Err(Error::Dimension { .. })));
    }
}
