//! Gaussian approximations of a random Affine-ReLU-Affine block and their
//! Monte-Carlo counterparts.

use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState, Vector};

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `E[max(y, 0)²]` for `y ~ N(μ, σ²)`.
pub fn rectified_second_moment(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.max(0.0).powi(2);
    }
    let z = mu / sigma;
    (mu * mu + sigma * sigma) * normal_cdf(z) + mu * sigma * normal_pdf(z)
}

/// Distribution of the first affine layer's output when the weights are
/// i.i.d. Gaussian and the input is uniform over the box: independent
/// coordinates with a shared variance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianLayerLaw {
    pub mean: Vector,
    pub variance: f64,
}

/// Law of `A₁x̃ + b₁` for `A₁(i, j) ~ N(0, σ²)` and `x̃ ~ U[x − ε, x + ε]`.
pub fn layer_output_law(sigma_a1: f64, x: &[f64], eps: f64, b1: &[f64]) -> Result<GaussianLayerLaw> {
    if !(sigma_a1 > 0.0 && sigma_a1.is_finite()) {
        return Err(Error::param("sigma_a1", format!("must be positive and finite, got {sigma_a1}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::param("eps", format!("must be non-negative and finite, got {eps}")));
    }
    let n = x.len() as f64;
    let s2 = sigma_a1 * sigma_a1;
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    Ok(GaussianLayerLaw {
        mean: b1.into(),
        variance: eps * eps * s2 * n / 3.0 + s2 * norm2,
    })
}

/// Approximate output interval of `a₂ᵀ max(ỹ, 0) + b₂`: mean `∓ m` standard
/// deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApproxBounds {
    pub l_approx: f64,
    pub u_approx: f64,
    pub m: f64,
}

/// Mean and variance of `a₂ᵀ max(ỹ, 0) + b₂` for `a₂ ~ N(0, σ²_{a₂} I)`
/// independent of `ỹ`.
pub fn block_output_moments(law: &GaussianLayerLaw, sigma_a2: f64, b2: f64) -> (f64, f64) {
    let sd = law.variance.sqrt();
    let second: f64 = law.mean.iter().map(|&mu| rectified_second_moment(mu, sd)).sum();
    (b2, sigma_a2 * sigma_a2 * second)
}

pub fn approx_true_bounds(law: &GaussianLayerLaw, sigma_a2: f64, b2: f64, m: f64) -> Result<ApproxBounds> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::param("m", format!("must be non-negative and finite, got {m}")));
    }
    if !(sigma_a2 > 0.0 && sigma_a2.is_finite()) {
        return Err(Error::param("sigma_a2", format!("must be positive and finite, got {sigma_a2}")));
    }
    let (mean, var) = block_output_moments(law, sigma_a2, b2);
    let half = m * var.sqrt();
    Ok(ApproxBounds {
        l_approx: mean - half,
        u_approx: mean + half,
        m,
    })
}

/// Sample moments of standardized sums of `aᵢx̃ᵢ`, with the
/// Kolmogorov-Smirnov distance to `N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub trials: usize,
    /// `Σ E[aᵢx̃ᵢ]`, subtracted before standardizing.
    pub centering: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
}

/// Draws `trials` sums `(1/sₙ) Σ (aᵢx̃ᵢ − E[aᵢx̃ᵢ])` with `aᵢ ~ N(0, 1)` and
/// `x̃ᵢ ~ U[−1, 1]`, so `sₙ² = n/3`.
pub fn clt_normality_check(n: usize, trials: usize, rng: &mut RngState) -> Result<CltReport> {
    if n < 2 {
        return Err(Error::param("n", format!("must be at least 2, got {n}")));
    }
    if trials < 2 {
        return Err(Error::param("trials", format!("must be at least 2, got {trials}")));
    }
    // E[aᵢ] = 0 and aᵢ is independent of x̃ᵢ.
    let centering = 0.0;
    let s_n = (n as f64 / 3.0).sqrt();
    let mut z: Vec<f64> = (0..trials)
        .map(|_| {
            let s: f64 = (0..n).map(|_| rng.standard_normal() * rng.uniform_in(-1.0, 1.0)).sum();
            (s - centering) / s_n
        })
        .collect();
    let m = sample_moments(&z);
    z.sort_by(f64::total_cmp);
    Ok(CltReport {
        n,
        trials,
        centering,
        mean: m.mean,
        variance: m.variance,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        ks_distance: ks_distance_normal(&z),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMoments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Population-style central moments (dividing by the sample count).
pub fn sample_moments(xs: &[f64]) -> SampleMoments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    SampleMoments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

/// `sup |F̂ − Φ|` for sorted samples.
fn ks_distance_normal(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Monte-Carlo covariance of `A x̃` with `A(i, j) ~ N(0, σ²)` redrawn each
/// time, next to the closed-form per-coordinate variance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub predicted_variance: f64,
    pub empirical_diagonal: Vector,
    /// `|diag − predicted| / predicted`, maximised over coordinates.
    pub max_relative_error: f64,
    /// Off-diagonal sample covariances, row-major, upper triangle only.
    pub off_diagonal: Vec<f64>,
    /// Each off-diagonal entry divided by its standard error.
    pub off_diagonal_z: Vec<f64>,
}

pub fn covariance_monte_carlo(
    sigma: f64,
    x: &[f64],
    eps: f64,
    outputs: usize,
    draws: usize,
    rng: &mut RngState,
) -> Result<CovarianceCheck> {
    if outputs < 2 || draws < 2 {
        return Err(Error::param("covariance_monte_carlo", "need at least two outputs and two draws"));
    }
    let predicted = layer_output_law(sigma, x, eps, &vec![0.0; outputs])?.variance;
    let n = x.len();
    let mut ys = Matrix::zeros(draws, outputs);
    let mut xt = vec![0.0; n];
    for d in 0..draws {
        for (v, &c) in xt.iter_mut().zip(x) {
            *v = rng.uniform_in(c - eps, c + eps);
        }
        for y in ys.row_mut(d) {
            *y = xt.iter().map(|&v| sigma * rng.standard_normal() * v).sum();
        }
    }
    let means: Vec<f64> = (0..outputs)
        .map(|o| (0..draws).map(|d| ys.get(d, o)).sum::<f64>() / draws as f64)
        .collect();
    let cov = |a: usize, b: usize| -> (f64, f64) {
        let prods: Vec<f64> = (0..draws)
            .map(|d| (ys.get(d, a) - means[a]) * (ys.get(d, b) - means[b]))
            .collect();
        let m = sample_moments(&prods);
        (m.mean, (m.variance / draws as f64).sqrt())
    };
    let diag: Vector = (0..outputs).map(|o| cov(o, o).0).collect();
    let max_relative_error = diag.iter().map(|v| (v - predicted).abs() / predicted).fold(0.0, f64::max);
    let mut off_diagonal = Vec::new();
    let mut off_diagonal_z = Vec::new();
    for a in 0..outputs {
        for b in a + 1..outputs {
            let (c, se) = cov(a, b);
            off_diagonal.push(c);
            off_diagonal_z.push(c / se);
        }
    }
    Ok(CovarianceCheck {
        predicted_variance: predicted,
        empirical_diagonal: diag,
        max_relative_error,
        off_diagonal,
        off_diagonal_z,
    })
}

/// The two closed forms for `E[‖a‖₂ − ‖a‖₁/√(2π)]` with `a ~ N(0, I_k)`:
/// `(√2Γ((k+1)/2)/Γ(k/2) − k√(2/π), √2Γ((k+1)/2)/Γ(k/2) − k/π)`.
///
/// The first drops the `1/√(2π)` factor on `E‖a‖₁ = k√(2/π)`; the second
/// keeps it and is the one Monte-Carlo agrees with.
pub fn prop3_expectation(k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let kf = k as f64;
    let norm2 = SQRT_2 * (libm::lgamma((kf + 1.0) / 2.0) - libm::lgamma(kf / 2.0)).exp();
    Ok((norm2 - kf * (2.0 / PI).sqrt(), norm2 - kf / PI))
}

/// The large-`k` approximation `√k(1 − √(2/π)√k)` of the first form.
pub fn prop3_asymptote(k: usize) -> f64 {
    let kf = k as f64;
    kf.sqrt() * (1.0 - (2.0 / PI).sqrt() * kf.sqrt())
}

/// Which closed form a Monte-Carlo estimate agrees with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prop3Match {
    Paper,
    Corrected,
    Both,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop3Row {
    pub k: usize,
    pub formula_paper: f64,
    pub formula_corrected: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub matches: Prop3Match,
}

/// Monte-Carlo mean and standard error of `‖a‖₂ − ‖a‖₁/√(2π)`.
pub fn prop3_monte_carlo(k: usize, draws: usize, rng: &mut RngState) -> Result<(f64, f64)> {
    if k == 0 || draws < 2 {
        return Err(Error::param("prop3_monte_carlo", "need k ≥ 1 and at least two draws"));
    }
    let c = 1.0 / (2.0 * PI).sqrt();
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let (mut l1, mut l2) = (0.0, 0.0);
            for _ in 0..k {
                let a: f64 = rng.standard_normal();
                l1 += a.abs();
                l2 += a * a;
            }
            l2.sqrt() - c * l1
        })
        .collect();
    let m = sample_moments(&samples);
    Ok((m.mean, (m.variance / draws as f64).sqrt()))
}

/// Compares each closed form against Monte-Carlo at every `k`; a form
/// matches when within `rel_tol` of the estimate.
pub fn prop3_arbitrate(ks: &[usize], draws: usize, rel_tol: f64, rng: &mut RngState) -> Result<Vec<Prop3Row>> {
    ks.iter()
        .map(|&k| {
            let (paper, corrected) = prop3_expectation(k)?;
            let (mc_mean, mc_stderr) = prop3_monte_carlo(k, draws, rng)?;
            let close = |f: f64| (f - mc_mean).abs() <= rel_tol * mc_mean.abs();
            let matches = match (close(paper), close(corrected)) {
                (true, true) => Prop3Match::Both,
                (true, false) => Prop3Match::Paper,
                (false, true) => Prop3Match::Corrected,
                (false, false) => Prop3Match::Neither,
            };
            Ok(Prop3Row {
                k,
                formula_paper: paper,
                formula_corrected: corrected,
                mc_mean,
                mc_stderr,
                matches,
            })
        })
        .collect()
}

/// Per-column evaluation of the sufficient condition for the expected bounds
/// being no wider than IBP in expectation:
/// `x_j 1ᵀA₁(:, j)/√(2π) + 1ᵀb₁/(2n) ≥ ε(‖A₁(:, j)‖₂ − ‖A₁(:, j)‖₁/√(2π))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Check {
    pub lhs: Vector,
    pub rhs: Vector,
    pub satisfied: Vec<bool>,
    pub fraction: f64,
}

pub fn theorem2_assumption_check(a1: &Matrix, b1: &[f64], x: &[f64], eps: f64) -> Result<Theorem2Check> {
    let (k, n) = a1.shape();
    if b1.len() != k {
        return Err(Error::dim("theorem2_assumption_check: b1", k, b1.len()));
    }
    if x.len() != n {
        return Err(Error::dim("theorem2_assumption_check: x", n, x.len()));
    }
    let c = 1.0 / (2.0 * PI).sqrt();
    let bias_term = b1.iter().sum::<f64>() / (2.0 * n as f64);
    let mut lhs = Vector::zeros(n);
    let mut rhs = Vector::zeros(n);
    for j in 0..n {
        let col = a1.column(j);
        lhs[j] = c * x[j] * col.iter().sum::<f64>() + bias_term;
        rhs[j] = eps * (col.norm_l2() - c * col.norm_l1());
    }
    let satisfied: Vec<bool> = lhs.iter().zip(rhs.iter()).map(|(l, r)| l >= r).collect();
    let fraction = satisfied.iter().filter(|&&s| s).count() as f64 / n.max(1) as f64;
    Ok(Theorem2Check {
        lhs,
        rhs,
        satisfied,
        fraction,
    })
}
