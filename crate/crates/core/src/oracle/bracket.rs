//! Certified two-sided bracket on the true output range of a two-layer
//! block `a2 · ReLU(A1 x̃ + b1) + b2`.
//!
//! The outer side enumerates activation patterns. Units whose
//! pre-activation interval is entirely nonnegative (or nonpositive) keep a
//! single state over the whole box; only the remaining unstable units are
//! enumerated. Each pattern's affine restriction is bounded exactly over
//! the box, ignoring whether the pattern is feasible, and the worst case
//! over patterns encloses the true range.

use serde::Serialize;

use crate::bounds::{affine_interval, InputBox, Interval};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState, Vector};
use crate::network::ReluNetwork;

use super::range::{empirical_range_with_cap, DEFAULT_CORNER_CAP};

/// Largest number of unstable hidden units enumerated by default.
pub const DEFAULT_PATTERN_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    Sampling,
    SamplingWithCorners,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    PatternEnumeration,
}

/// Inner (attained) and outer (certified) estimates of the true range.
#[derive(Clone, Debug)]
pub struct OracleBracket {
    pub inner: Interval,
    pub outer: Interval,
    pub inner_method: InnerMethod,
    pub outer_method: OuterMethod,
    /// Hidden units whose sign changes over the box.
    pub unstable_units: usize,
}

impl OracleBracket {
    /// Whether `inner ⊆ outer`.
    pub fn is_consistent(&self) -> bool {
        self.outer.encloses(&self.inner, 0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BracketOptions {
    pub n_uniform: usize,
    pub pattern_cap: usize,
    pub corner_cap: usize,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions {
            n_uniform: 10_000,
            pattern_cap: DEFAULT_PATTERN_CAP,
            corner_cap: DEFAULT_CORNER_CAP,
        }
    }
}

/// Brackets the true range of the block over `input`. Corners join the
/// inner estimate whenever the input dimension is within the corner cap.
pub fn certified_bracket_2layer(
    a1: &Matrix,
    b1: &Vector,
    a2: &Matrix,
    b2: &Vector,
    input: &InputBox,
    options: &BracketOptions,
    rng: &mut RngState,
) -> Result<OracleBracket> {
    let net = ReluNetwork::from_block(a1.clone(), b1.clone(), a2.clone(), b2.clone())?;
    if net.input_dim() != input.dim() {
        return Err(Error::dim("certified_bracket_2layer", net.input_dim(), input.dim()));
    }
    let first = affine_interval(&net.layers()[0], input)?;
    let k = a1.rows();
    let mut always_on = Vec::new();
    let mut unstable = Vec::new();
    for i in 0..k {
        if first.lower()[i] >= 0.0 {
            always_on.push(i);
        } else if first.upper()[i] > 0.0 {
            unstable.push(i);
        }
    }
    if unstable.len() > options.pattern_cap {
        return Err(Error::param(
            "pattern_cap",
            format!(
                "{} unstable hidden units exceed the cap of {}",
                unstable.len(),
                options.pattern_cap
            ),
        ));
    }
    let outer = enumerate_patterns(a1, b1, a2, b2, input, &always_on, &unstable);

    let corners = input.dim() <= options.corner_cap;
    let inner = empirical_range_with_cap(&net, input, options.n_uniform, corners, options.corner_cap, rng)?;
    Ok(OracleBracket {
        inner,
        outer,
        inner_method: if corners {
            InnerMethod::SamplingWithCorners
        } else {
            InnerMethod::Sampling
        },
        outer_method: OuterMethod::PatternEnumeration,
        unstable_units: unstable.len(),
    })
}

fn enumerate_patterns(
    a1: &Matrix,
    b1: &Vector,
    a2: &Matrix,
    b2: &Vector,
    input: &InputBox,
    always_on: &[usize],
    unstable: &[usize],
) -> Interval {
    let n = a1.cols();
    let x = input.center();
    let eps = input.radius();
    // Generous allowance for rounding in the dot products below.
    let unit = 64.0 * (n + a1.rows() + 2) as f64 * f64::EPSILON;
    let abs_x: Vec<f64> = x.iter().map(|v| v.abs() + eps).collect();
    let mut lower = Vector::filled(a2.rows(), f64::INFINITY);
    let mut upper = Vector::filled(a2.rows(), f64::NEG_INFINITY);
    let mut w = vec![0.0; n];
    for o in 0..a2.rows() {
        let a = a2.row(o);
        for pattern in 0..(1usize << unstable.len()) {
            w.fill(0.0);
            let mut offset = b2[o];
            let mut scale = b2[o].abs();
            let active = always_on
                .iter()
                .copied()
                .chain(unstable.iter().enumerate().filter(|(bit, _)| (pattern >> bit) & 1 == 1).map(|(_, &i)| i));
            for i in active {
                for (wj, &aij) in w.iter_mut().zip(a1.row(i)) {
                    *wj += a[i] * aij;
                }
                offset += a[i] * b1[i];
                scale += a[i].abs() * (b1[i].abs() + a1.row(i).iter().zip(&abs_x).map(|(p, q)| p.abs() * q).sum::<f64>());
            }
            let center: f64 = w.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() + offset;
            let radius: f64 = eps * w.iter().map(|v| v.abs()).sum::<f64>();
            let pad = unit * scale;
            lower[o] = lower[o].min(center - radius - pad);
            upper[o] = upper[o].max(center + radius + pad);
        }
    }
    Interval::new(lower, upper).expect("pattern bounds are ordered")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::expected_bounds_block;
    use crate::linalg::sample_gaussian_matrix;

    fn row(v: &[f64]) -> Matrix {
        Matrix::from_rows(&[v.to_vec()]).unwrap()
    }

    #[test]
    fn absolute_value_bracket() {
        let a1 = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let bx = InputBox::new(vec![0.0].into(), 1.0).unwrap();
        let mut rng = RngState::new(0);
        let br = certified_bracket_2layer(
            &a1,
            &Vector::zeros(2),
            &row(&[1.0, 1.0]),
            &Vector::zeros(1),
            &bx,
            &BracketOptions::default(),
            &mut rng,
        )
        .unwrap();
        // Patterns: {} → 0, {1} → x̃, {2} → −x̃, {1,2} → 0; over [−1,1] the
        // hull of these is [−1, 1].
        assert!((br.outer.lower()[0] + 1.0).abs() < 1e-12);
        assert!((br.outer.upper()[0] - 1.0).abs() < 1e-12);
        assert_eq!(br.inner.upper()[0], 1.0);
        assert!(br.is_consistent());
        assert_eq!(br.unstable_units, 2);
    }

    #[test]
    fn all_active_is_tight() {
        let mut rng = RngState::new(12);
        let a1 = sample_gaussian_matrix(&mut rng, 5, 3, 1.0).unwrap();
        let b1 = Vector::filled(5, 50.0);
        let a2 = sample_gaussian_matrix(&mut rng, 2, 5, 1.0).unwrap();
        let b2 = Vector::zeros(2);
        let bx = InputBox::new(vec![0.1, -0.2, 0.3].into(), 0.5).unwrap();
        let br = certified_bracket_2layer(&a1, &b1, &a2, &b2, &bx, &BracketOptions::default(), &mut rng).unwrap();
        assert_eq!(br.unstable_units, 0);
        let m = expected_bounds_block(&a1, &b1, &a2, &b2, &bx).unwrap();
        for i in 0..2 {
            for (p, q) in [
                (br.outer.lower()[i], br.inner.lower()[i]),
                (br.outer.upper()[i], br.inner.upper()[i]),
                (br.outer.lower()[i], m.lower()[i]),
                (br.outer.upper()[i], m.upper()[i]),
            ] {
                assert!((p - q).abs() < 1e-9);
            }
        }
        assert!(br.is_consistent());
    }

    #[test]
    fn random_brackets_enclose_dense_sampling() {
        let mut rng = RngState::new(99);
        let options = BracketOptions {
            n_uniform: 20_000,
            ..BracketOptions::default()
        };
        for _ in 0..20 {
            let a1 = sample_gaussian_matrix(&mut rng, 8, 4, 0.5).unwrap();
            let b1: Vector = (0..8).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
            let a2 = sample_gaussian_matrix(&mut rng, 1, 8, 0.35).unwrap();
            let b2 = Vector::zeros(1);
            let bx = InputBox::new((0..4).map(|_| rng.standard_normal()).collect(), 0.5).unwrap();
            let br = certified_bracket_2layer(&a1, &b1, &a2, &b2, &bx, &options, &mut rng).unwrap();
            assert!(br.is_consistent());
        }
    }

    #[test]
    fn pattern_cap_counts_unstable_units() {
        let a1 = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        let bx = InputBox::new(vec![0.0].into(), 1.0).unwrap();
        let options = BracketOptions {
            pattern_cap: 2,
            ..BracketOptions::default()
        };
        let mut rng = RngState::new(0);
        let res = certified_bracket_2layer(
            &a1,
            &Vector::zeros(3),
            &row(&[1.0, 1.0, 1.0]),
            &Vector::zeros(1),
            &bx,
            &options,
            &mut rng,
        );
        assert!(matches!(res, Err(Error::Parameter { name: "pattern_cap", .. })));
        let shifted = Vector::from(vec![5.0, 5.0, 0.0]);
        let ok = certified_bracket_2layer(
            &a1,
            &shifted,
            &row(&[1.0, 1.0, 1.0]),
            &Vector::zeros(1),
            &bx,
            &options,
            &mut rng,
        )
        .unwrap();
        assert_eq!(ok.unstable_units, 1);
    }
}
