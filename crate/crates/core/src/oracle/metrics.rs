use serde::Serialize;

use crate::bounds::{width, Interval};
use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Widths below this make the width ratio meaningless; it is omitted.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Fraction of the truth interval covered by the candidate, per coordinate:
/// `|candidate ∩ truth| / |truth|`.
///
/// A zero-width truth scores 1 if its point lies in the candidate and 0
/// otherwise.
pub fn gamma(candidate: &Interval, truth: &Interval) -> Result<Vector> {
    if candidate.len() != truth.len() {
        return Err(Error::dim("gamma", truth.len(), candidate.len()));
    }
    Ok((0..truth.len())
        .map(|i| {
            let (cl, cu) = (candidate.lower()[i], candidate.upper()[i]);
            let (tl, tu) = (truth.lower()[i], truth.upper()[i]);
            let w = tu - tl;
            if w <= 0.0 {
                return if cl <= tl && tl <= cu { 1.0 } else { 0.0 };
            }
            let overlap = (cu.min(tu) - cl.max(tl)).max(0.0);
            (overlap / w).clamp(0.0, 1.0)
        })
        .collect())
}

/// Width comparison between interval bound propagation and the expected
/// bounds, optionally with Γ of the expected bounds against a truth
/// estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessReport {
    pub width_ibp: Vector,
    pub width_m: Vector,
    /// `W_IBP − W_M`.
    pub diff: Vector,
    /// `W_IBP / W_M`, or `None` where `W_M < RATIO_FLOOR`.
    pub ratio: Vec<Option<f64>>,
    pub gamma: Option<Vector>,
}

pub fn tightness(candidate_ibp: &Interval, candidate_m: &Interval) -> Result<TightnessReport> {
    if candidate_ibp.len() != candidate_m.len() {
        return Err(Error::dim("tightness", candidate_ibp.len(), candidate_m.len()));
    }
    let width_ibp = width(candidate_ibp);
    let width_m = width(candidate_m);
    let diff = width_ibp.iter().zip(width_m.iter()).map(|(a, b)| a - b).collect();
    let ratio = width_ibp
        .iter()
        .zip(width_m.iter())
        .map(|(&a, &b)| (b >= RATIO_FLOOR).then(|| a / b))
        .collect();
    Ok(TightnessReport {
        width_ibp,
        width_m,
        diff,
        ratio,
        gamma: None,
    })
}

impl TightnessReport {
    /// Attaches Γ of `candidate_m` against `truth`.
    pub fn with_gamma(mut self, candidate_m: &Interval, truth: &Interval) -> Result<Self> {
        self.gamma = Some(gamma(candidate_m, truth)?);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: f64, u: f64) -> Interval {
        Interval::new(vec![l].into(), vec![u].into()).unwrap()
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(gamma(&iv(0.0, 1.0), &iv(0.0, 1.0)).unwrap()[0], 1.0);
        assert_eq!(gamma(&iv(0.0, 2.0), &iv(0.0, 1.0)).unwrap()[0], 1.0);
        assert_eq!(gamma(&iv(0.0, 0.0), &iv(0.0, 1.0)).unwrap()[0], 0.0);
        assert_eq!(gamma(&iv(0.5, 3.0), &iv(0.0, 1.0)).unwrap()[0], 0.5);
        assert_eq!(gamma(&iv(2.0, 3.0), &iv(0.0, 1.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn gamma_point_truth() {
        assert_eq!(gamma(&iv(0.0, 1.0), &iv(0.5, 0.5)).unwrap()[0], 1.0);
        assert_eq!(gamma(&iv(0.5, 0.5), &iv(0.5, 0.5)).unwrap()[0], 1.0);
        assert_eq!(gamma(&iv(0.6, 1.0), &iv(0.5, 0.5)).unwrap()[0], 0.0);
    }

    #[test]
    fn tightness_cases() {
        let same = tightness(&iv(-1.0, 2.0), &iv(-1.0, 2.0)).unwrap();
        assert_eq!(same.diff[0], 0.0);
        assert_eq!(same.ratio[0], Some(1.0));

        let abs = tightness(&iv(0.0, 2.0), &iv(0.0, 0.0)).unwrap();
        assert_eq!(abs.diff[0], 2.0);
        assert_eq!(abs.ratio[0], None);

        let n = 8.0;
        let fail = tightness(&iv(-10.0 * n, 0.0), &iv(-10.0 * n, 19990.0 * n)).unwrap();
        assert_eq!(fail.diff[0], -19990.0 * n);
        assert!(tightness(&iv(0.0, 1.0), &Interval::point(Vector::zeros(2))).is_err());
    }

    #[test]
    fn report_with_gamma() {
        let r = tightness(&iv(-3.0, 3.0), &iv(-1.0, 1.0))
            .unwrap()
            .with_gamma(&iv(-1.0, 1.0), &iv(-0.5, 2.0))
            .unwrap();
        assert_eq!(r.gamma.unwrap()[0], 0.6);
    }
}
