//! Inner estimates of the true output range.
//!
//! Every value reported here was attained by an actual forward pass at a
//! point of the box, so the result is always a subset of the true range.
//! Corner extremes are exact: small boxes are enumerated outright, larger
//! ones are searched depth-first with interval pruning.

use crate::bounds::{InputBox, Interval};
use crate::error::{Error, Result};
use crate::linalg::{fill_uniform_box, Matrix, RngState, Vector};
use crate::network::ReluNetwork;

/// Largest input dimension for which corners are evaluated by default.
pub const DEFAULT_CORNER_CAP: usize = 22;

const BATCH: usize = 256;
const ENUMERATE_MAX_DIM: usize = 12;

/// Running elementwise minimum and maximum of observed outputs.
#[derive(Clone, Debug)]
pub(crate) struct Extremes {
    lo: Vec<f64>,
    hi: Vec<f64>,
    seen: bool,
}

impl Extremes {
    pub(crate) fn new(dim: usize) -> Self {
        Extremes {
            lo: vec![f64::INFINITY; dim],
            hi: vec![f64::NEG_INFINITY; dim],
            seen: false,
        }
    }

    pub(crate) fn observe(&mut self, y: &[f64]) {
        for ((lo, hi), &v) in self.lo.iter_mut().zip(self.hi.iter_mut()).zip(y) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
        self.seen = true;
    }

    fn best(&self, output: usize, sign: f64) -> f64 {
        if sign > 0.0 {
            self.hi[output]
        } else {
            -self.lo[output]
        }
    }

    pub(crate) fn into_interval(self) -> Result<Interval> {
        if !self.seen {
            return Err(Error::param("samples", "no points were evaluated"));
        }
        Interval::new(self.lo.into(), self.hi.into())
    }
}

/// Elementwise min/max of the network output over `n_uniform` uniform
/// samples of the box and, optionally, all `2ⁿ` corners.
pub fn empirical_range(
    net: &ReluNetwork,
    input: &InputBox,
    n_uniform: usize,
    include_corners: bool,
    rng: &mut RngState,
) -> Result<Interval> {
    empirical_range_with_cap(net, input, n_uniform, include_corners, DEFAULT_CORNER_CAP, rng)
}

/// [`empirical_range`] with an explicit corner cap.
pub fn empirical_range_with_cap(
    net: &ReluNetwork,
    input: &InputBox,
    n_uniform: usize,
    include_corners: bool,
    corner_cap: usize,
    rng: &mut RngState,
) -> Result<Interval> {
    if net.input_dim() != input.dim() {
        return Err(Error::dim("empirical_range", net.input_dim(), input.dim()));
    }
    if include_corners && input.dim() > corner_cap {
        return Err(Error::param(
            "include_corners",
            format!(
                "2^{} corners exceeds the cap of 2^{corner_cap}; disable corners to use sampling only",
                input.dim()
            ),
        ));
    }
    if n_uniform == 0 && !include_corners {
        return Err(Error::param("n_uniform", "must be positive when corners are disabled"));
    }
    let mut acc = Extremes::new(net.output_dim());
    if input.radius() == 0.0 {
        // Every sample and corner is the center itself.
        acc.observe(&net.forward(input.center())?);
        return acc.into_interval();
    }
    observe_uniform(net, input, n_uniform, rng, &mut acc)?;
    if include_corners {
        observe_corners(net, input, &mut acc)?;
    }
    acc.into_interval()
}

fn observe_uniform(
    net: &ReluNetwork,
    input: &InputBox,
    count: usize,
    rng: &mut RngState,
    acc: &mut Extremes,
) -> Result<()> {
    let mut remaining = count;
    while remaining > 0 {
        let b = remaining.min(BATCH);
        let mut batch = Matrix::zeros(b, input.dim());
        for r in 0..b {
            fill_uniform_box(rng, input.center(), input.radius(), batch.row_mut(r));
        }
        let out = net.forward_batch(&batch)?;
        for r in 0..b {
            acc.observe(out.row(r));
        }
        remaining -= b;
    }
    Ok(())
}

/// Exact elementwise extremes of the output over the `2ⁿ` box corners.
pub fn corner_extremes(net: &ReluNetwork, input: &InputBox) -> Result<Interval> {
    if net.input_dim() != input.dim() {
        return Err(Error::dim("corner_extremes", net.input_dim(), input.dim()));
    }
    let mut acc = Extremes::new(net.output_dim());
    observe_corners(net, input, &mut acc)?;
    acc.into_interval()
}

/// Corner extremes by evaluating every corner.
pub fn corner_extremes_exhaustive(net: &ReluNetwork, input: &InputBox) -> Result<Interval> {
    if net.input_dim() != input.dim() {
        return Err(Error::dim("corner_extremes", net.input_dim(), input.dim()));
    }
    let mut acc = Extremes::new(net.output_dim());
    enumerate_corners(net, input, &mut acc)?;
    acc.into_interval()
}

fn observe_corners(net: &ReluNetwork, input: &InputBox, acc: &mut Extremes) -> Result<()> {
    if input.dim() <= ENUMERATE_MAX_DIM {
        return enumerate_corners(net, input, acc);
    }
    let budget = 1usize << (input.dim() - 3);
    let mut search = CornerSearch::new(net, input, budget);
    for output in 0..net.output_dim() {
        for sign in [1.0, -1.0] {
            if !search.run(output, sign, acc)? {
                return enumerate_corners(net, input, acc);
            }
        }
    }
    Ok(())
}

fn enumerate_corners(net: &ReluNetwork, input: &InputBox, acc: &mut Extremes) -> Result<()> {
    let n = input.dim();
    assert!(n < usize::BITS as usize, "corner count overflows");
    let total = 1usize << n;
    let (center, eps) = (input.center(), input.radius());
    let mut start = 0;
    while start < total {
        let b = (total - start).min(BATCH);
        let mut batch = Matrix::zeros(b, n);
        for r in 0..b {
            let idx = start + r;
            for (j, v) in batch.row_mut(r).iter_mut().enumerate() {
                *v = if (idx >> j) & 1 == 1 { center[j] + eps } else { center[j] - eps };
            }
        }
        let out = net.forward_batch(&batch)?;
        for r in 0..b {
            acc.observe(out.row(r));
        }
        start += b;
    }
    Ok(())
}

/// Depth-first search over corners for the extreme of one output.
///
/// Coordinates are fixed one at a time, heaviest first-layer column first.
/// The first-layer pre-activation over the remaining sub-box is kept as
/// center/radius and updated per fixed coordinate; interval propagation
/// through the later layers bounds the subtree.
struct CornerSearch<'a> {
    net: &'a ReluNetwork,
    center: &'a [f64],
    eps: f64,
    order: Vec<usize>,
    /// Columns of the first weight matrix, scaled by ε.
    steps: Vec<Vector>,
    /// First-layer radius with coordinates `order[level..]` still free.
    radii: Vec<Vector>,
    corner: Vec<f64>,
    nodes: usize,
    budget: usize,
}

impl<'a> CornerSearch<'a> {
    fn new(net: &'a ReluNetwork, input: &'a InputBox, budget: usize) -> Self {
        let n = input.dim();
        let eps = input.radius();
        let w = net.layers()[0].weights();
        let steps: Vec<Vector> = (0..n).map(|j| w.column(j).map(|v| eps * v)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let weight: Vec<f64> = steps.iter().map(|s| s.norm_l1()).collect();
        order.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));

        let k = w.rows();
        let mut radii = vec![Vector::zeros(k); n + 1];
        for level in (0..n).rev() {
            let step = &steps[order[level]];
            let mut r = radii[level + 1].clone();
            for (ri, s) in r.iter_mut().zip(step.iter()) {
                *ri += s.abs();
            }
            radii[level] = r;
        }
        CornerSearch {
            net,
            center: input.center(),
            eps,
            order,
            steps,
            radii,
            corner: input.center().to_vec(),
            nodes: 0,
            budget,
        }
    }

    /// Raises `acc` to the corner extreme of `sign · f[output]`. Returns
    /// `false` if the node budget ran out first.
    fn run(&mut self, output: usize, sign: f64, acc: &mut Extremes) -> Result<bool> {
        let root = self.net.layers()[0].apply(self.center)?;
        self.descend(0, &root, output, sign, acc)
    }

    fn descend(&mut self, level: usize, pre: &[f64], output: usize, sign: f64, acc: &mut Extremes) -> Result<bool> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Ok(false);
        }
        let n = self.order.len();
        if level == n {
            let y = self.net.forward(&self.corner)?;
            acc.observe(&y);
            return Ok(true);
        }
        let j = self.order[level];
        let mut children = [(1.0, Vec::new(), 0.0), (-1.0, Vec::new(), 0.0)];
        for child in children.iter_mut() {
            let shifted: Vec<f64> = pre
                .iter()
                .zip(self.steps[j].iter())
                .map(|(p, s)| p + child.0 * s)
                .collect();
            child.2 = self.tail_bound(&shifted, level + 1, output, sign);
            child.1 = shifted;
        }
        if children[1].2 > children[0].2 {
            children.swap(0, 1);
        }
        for (dir, shifted, bound) in children {
            let best = acc.best(output, sign);
            let tol = 1e-9 * (1.0 + best.abs());
            if bound + tol < best {
                continue;
            }
            self.corner[j] = self.center[j] + dir * self.eps;
            if !self.descend(level + 1, &shifted, output, sign, acc)? {
                return Ok(false);
            }
        }
        self.corner[j] = self.center[j];
        Ok(true)
    }

    /// Upper bound on `sign · f[output]` over the sub-box whose first-layer
    /// pre-activation is `pre ∓ radii[level]`.
    ///
    /// Hidden pre-activation bounds are the intersection of interval
    /// propagation and a backward linear relaxation; the output bound is
    /// the smaller of the two methods as well.
    fn tail_bound(&self, pre: &[f64], level: usize, output: usize, sign: f64) -> f64 {
        let layers = self.net.layers();
        let last = layers.len() - 1;
        let mut bounds: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(last);
        bounds.push((
            pre.iter().zip(self.radii[level].iter()).map(|(c, r)| c - r).collect(),
            pre.iter().zip(self.radii[level].iter()).map(|(c, r)| c + r).collect(),
        ));
        for m in 1..last {
            let (plo, phi) = &bounds[m - 1];
            let (mut lo, mut hi) = (Vec::new(), Vec::new());
            interval_layer(&layers[m], plo, phi, None, &mut lo, &mut hi);
            let k = layers[m].out_dim();
            let up = self.backward_upper(Matrix::identity(k), m, &bounds, pre, level);
            let down = self.backward_upper(Matrix::identity(k).scale(-1.0), m, &bounds, pre, level);
            for i in 0..k {
                hi[i] = hi[i].min(up[i]);
                lo[i] = lo[i].max(-down[i]).min(hi[i]);
            }
            bounds.push((lo, hi));
        }
        let (plo, phi) = &bounds[last - 1];
        let (mut olo, mut ohi) = (Vec::new(), Vec::new());
        interval_layer(&layers[last], plo, phi, Some(output), &mut olo, &mut ohi);
        let ibp = if sign > 0.0 { ohi[0] } else { -olo[0] };

        let mut objective = Matrix::zeros(1, layers[last].out_dim());
        objective.set(0, output, sign);
        let relaxed = self.backward_upper(objective, last, &bounds, pre, level)[0];
        ibp.min(relaxed)
    }

    /// Upper bounds on each row of `lambda · z_m` over the sub-box, where
    /// `z_m` is the pre-activation of layer `m`. Each ReLU below layer `m`
    /// is replaced by a linear upper or lower bound according to the sign
    /// of its coefficient, using `bounds` for the hidden pre-activations.
    fn backward_upper(
        &self,
        mut lambda: Matrix,
        mut m: usize,
        bounds: &[(Vec<f64>, Vec<f64>)],
        pre: &[f64],
        level: usize,
    ) -> Vec<f64> {
        let layers = self.net.layers();
        let mut constant = vec![0.0; lambda.rows()];
        while m > 0 {
            let layer = &layers[m];
            for (r, c) in constant.iter_mut().enumerate() {
                *c += lambda.row(r).iter().zip(layer.bias().iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut mu = lambda.matmul(layer.weights()).expect("chained dims");
            let (lo, hi) = &bounds[m - 1];
            for r in 0..mu.rows() {
                let row = mu.row_mut(r);
                for i in 0..row.len() {
                    let (l, u, g) = (lo[i], hi[i], row[i]);
                    if l >= 0.0 {
                        continue;
                    }
                    if u <= 0.0 {
                        row[i] = 0.0;
                    } else if g >= 0.0 {
                        let slope = u / (u - l);
                        row[i] = g * slope;
                        constant[r] -= g * slope * l;
                    } else if u < -l {
                        row[i] = 0.0;
                    }
                }
            }
            lambda = mu;
            m -= 1;
        }
        (0..lambda.rows())
            .map(|r| {
                let coeff = lambda.row(r);
                let mut value = constant[r] + coeff.iter().zip(pre).map(|(a, b)| a * b).sum::<f64>();
                for &j in &self.order[level..] {
                    value += coeff.iter().zip(self.steps[j].iter()).map(|(a, b)| a * b).sum::<f64>().abs();
                }
                value
            })
            .collect()
    }
}

/// Interval image of `ReLU([plo, phi])` under `layer` (only row `only`
/// when given).
fn interval_layer(
    layer: &crate::network::AffineLayer,
    plo: &[f64],
    phi: &[f64],
    only: Option<usize>,
    lo: &mut Vec<f64>,
    hi: &mut Vec<f64>,
) {
    lo.clear();
    hi.clear();
    let w = layer.weights();
    let rows = match only {
        Some(o) => o..o + 1,
        None => 0..w.rows(),
    };
    for i in rows {
        let (mut c, mut r) = (layer.bias()[i], 0.0);
        for ((a, &l), &u) in w.row(i).iter().zip(plo).zip(phi) {
            let (l, u) = (l.max(0.0), u.max(0.0));
            c += a * 0.5 * (u + l);
            r += a.abs() * 0.5 * (u - l);
        }
        lo.push(c - r);
        hi.push(c + r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::affine_interval;
    use crate::network::{init_network, AffineLayer, InitScheme};

    fn random_box(rng: &mut RngState, n: usize, eps: f64) -> InputBox {
        InputBox::new((0..n).map(|_| rng.standard_normal()).collect(), eps).unwrap()
    }

    #[test]
    fn affine_corners_are_exact() {
        let mut rng = RngState::new(3);
        let net = init_network(&mut rng, &[6, 3], InitScheme::PaperRandom).unwrap();
        let bx = random_box(&mut rng, 6, 0.4);
        let emp = empirical_range(&net, &bx, 10, true, &mut rng).unwrap();
        let exact = affine_interval(&net.layers()[0], &bx).unwrap();
        for i in 0..3 {
            assert!((emp.lower()[i] - exact.lower()[i]).abs() < 1e-9);
            assert!((emp.upper()[i] - exact.upper()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_radius_is_the_forward_pass() {
        let mut rng = RngState::new(4);
        let net = init_network(&mut rng, &[4, 8, 2], InitScheme::PaperRandom).unwrap();
        let bx = random_box(&mut rng, 4, 0.0);
        let emp = empirical_range(&net, &bx, 100, true, &mut rng).unwrap();
        let y = net.forward(bx.center()).unwrap();
        assert_eq!(emp.lower(), &y);
        assert_eq!(emp.upper(), &y);
    }

    #[test]
    fn absolute_value_range() {
        let net = ReluNetwork::from_block(
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            Vector::zeros(2),
            Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Vector::zeros(1),
        )
        .unwrap();
        let bx = InputBox::new(vec![0.0].into(), 1.0).unwrap();
        let mut rng = RngState::new(1);
        let emp = empirical_range(&net, &bx, 10_000, true, &mut rng).unwrap();
        assert_eq!(emp.upper()[0], 1.0);
        assert!(emp.lower()[0] >= 0.0 && emp.lower()[0] < 1e-3);
    }

    #[test]
    fn search_matches_enumeration() {
        let mut rng = RngState::new(11);
        for (dims, eps) in [
            (vec![14, 30, 1], 0.1),
            (vec![15, 200, 2], 0.1),
            (vec![13, 10, 10, 10, 1], 0.1),
            (vec![16, 50, 1], 1.0),
        ] {
            let net = init_network(&mut rng, &dims, InitScheme::PaperRandom).unwrap();
            let bx = random_box(&mut rng, dims[0], eps);
            let fast = corner_extremes(&net, &bx).unwrap();
            let slow = corner_extremes_exhaustive(&net, &bx).unwrap();
            for i in 0..net.output_dim() {
                let scale = 1.0 + slow.upper()[i].abs().max(slow.lower()[i].abs());
                assert!((fast.lower()[i] - slow.lower()[i]).abs() <= 1e-9 * scale, "{dims:?}");
                assert!((fast.upper()[i] - slow.upper()[i]).abs() <= 1e-9 * scale, "{dims:?}");
            }
        }
    }

    #[test]
    fn more_samples_never_shrink() {
        let mut rng = RngState::new(8);
        let net = init_network(&mut rng, &[3, 16, 1], InitScheme::PaperRandom).unwrap();
        let bx = random_box(&mut rng, 3, 0.3);
        let mut acc = Extremes::new(1);
        let mut prev: Option<Interval> = None;
        for _ in 0..5 {
            observe_uniform(&net, &bx, 500, &mut rng, &mut acc).unwrap();
            let now = acc.clone().into_interval().unwrap();
            if let Some(p) = prev {
                assert!(now.encloses(&p, 0.0));
            }
            prev = Some(now);
        }
    }

    #[test]
    fn corner_cap_and_empty_budget() {
        let mut rng = RngState::new(2);
        let net = init_network(&mut rng, &[5, 4, 1], InitScheme::PaperRandom).unwrap();
        let bx = random_box(&mut rng, 5, 0.1);
        assert!(matches!(
            empirical_range_with_cap(&net, &bx, 10, true, 4, &mut rng),
            Err(Error::Parameter { name: "include_corners", .. })
        ));
        assert!(empirical_range(&net, &bx, 0, false, &mut rng).is_err());
        assert!(empirical_range(&net, &bx, 0, true, &mut rng).is_ok());
        let single = AffineLayer::new(Matrix::identity(2), Vector::zeros(2)).unwrap();
        let net2 = ReluNetwork::new(vec![single]).unwrap();
        assert!(empirical_range(&net2, &bx, 10, false, &mut rng).is_err());
    }
}
