//! Correctness (Γ) and tightness (width) sweeps over random
//! paper-initialized networks.
//!
//! Trials are independent. Each draws from its own generator stream,
//! derived from the sweep point and trial index, so results do not depend
//! on scheduling or on which other points are in the sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{ibp_network, propagate_blockwise, InputBox};
use crate::error::{Error, Result};
use crate::linalg::{RngState, Vector};
use crate::network::{init_network, InitScheme};

use super::metrics::{gamma, tightness};
use super::range::{empirical_range_with_cap, DEFAULT_CORNER_CAP};

/// Generator stream for one trial at a sweep point identified by `key`.
pub fn sweep_stream(key: &[u64], trial: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let h = key.iter().fold(0u64, |h, &v| mix(h ^ v));
    mix(h ^ trial as u64)
}

/// `[n, k, …, k, out]` with `depth` affine layers.
pub fn layer_dims(n: usize, k: usize, depth: usize, output_dim: usize) -> Vec<usize> {
    let mut dims = vec![n];
    dims.extend(std::iter::repeat(k).take(depth.saturating_sub(1)));
    dims.push(output_dim);
    dims
}

fn one() -> usize {
    1
}

fn two_layers() -> Vec<usize> {
    vec![2]
}

fn yes() -> bool {
    true
}

fn corner_cap() -> usize {
    DEFAULT_CORNER_CAP
}

fn check_positive(name: &'static str, values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(name, "must not be empty"));
    }
    if values.contains(&0) {
        return Err(Error::param(name, "entries must be positive"));
    }
    Ok(())
}

fn check_eps(name: &'static str, eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::param(name, format!("must be finite and non-negative, got {eps}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectnessConfig {
    pub n_values: Vec<usize>,
    /// Hidden widths; ignored when `equal_width` is set.
    #[serde(default)]
    pub k_values: Vec<usize>,
    /// Number of affine layers.
    #[serde(default = "two_layers")]
    pub depths: Vec<usize>,
    /// Every hidden layer as wide as the input.
    #[serde(default)]
    pub equal_width: bool,
    #[serde(default = "one")]
    pub output_dim: usize,
    pub eps: f64,
    pub trials: usize,
    pub n_uniform: usize,
    #[serde(default = "yes")]
    pub include_corners: bool,
    #[serde(default = "corner_cap")]
    pub corner_cap: usize,
}

impl CorrectnessConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("n_values", &self.n_values)?;
        if !self.equal_width {
            check_positive("k_values", &self.k_values)?;
        }
        check_positive("depths", &self.depths)?;
        if self.depths.iter().any(|&d| d < 2) {
            return Err(Error::param("depths", "networks need at least 2 layers"));
        }
        if self.output_dim == 0 {
            return Err(Error::param("output_dim", "must be positive"));
        }
        check_eps("eps", self.eps)?;
        if self.trials == 0 {
            return Err(Error::param("trials", "must be positive"));
        }
        if self.n_uniform == 0 && !self.include_corners {
            return Err(Error::param("n_uniform", "must be positive when corners are disabled"));
        }
        if self.include_corners {
            if let Some(&n) = self.n_values.iter().find(|&&n| n > self.corner_cap) {
                return Err(Error::param(
                    "include_corners",
                    format!("n = {n} exceeds the corner cap of {}", self.corner_cap),
                ));
            }
        }
        Ok(())
    }

    /// Sweep points `(n, k, depth)` in output order.
    pub fn points(&self) -> Vec<(usize, usize, usize)> {
        let mut pts = Vec::new();
        for &n in &self.n_values {
            let ks = if self.equal_width { vec![n] } else { self.k_values.clone() };
            for k in ks {
                for &d in &self.depths {
                    pts.push((n, k, d));
                }
            }
        }
        pts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrectnessRow {
    pub n: usize,
    pub k: usize,
    pub depth: usize,
    pub trial: usize,
    /// Γ per output coordinate.
    pub gamma: Vector,
}

/// Γ averaged over trials, aggregating outputs by mean and by minimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaSummary {
    pub n: usize,
    pub k: usize,
    pub depth: usize,
    pub trials: usize,
    pub mean_gamma: f64,
    pub mean_min_gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectnessTable {
    pub eps: f64,
    pub output_dim: usize,
    pub rows: Vec<CorrectnessRow>,
}

const CORRECTNESS_TAG: u64 = 0x436f_7272;
const TIGHTNESS_TAG: u64 = 0x5469_6768;

pub fn run_correctness_experiment(cfg: &CorrectnessConfig, seed: u64) -> Result<CorrectnessTable> {
    cfg.validate()?;
    let jobs: Vec<((usize, usize, usize), usize)> = cfg
        .points()
        .into_iter()
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&((n, k, depth), trial)| {
            let key = [CORRECTNESS_TAG, n as u64, k as u64, depth as u64, cfg.output_dim as u64];
            let mut rng = RngState::with_stream(seed, sweep_stream(&key, trial));
            let net = init_network(&mut rng, &layer_dims(n, k, depth, cfg.output_dim), InitScheme::PaperRandom)?;
            let x: Vector = (0..n).map(|_| rng.standard_normal()).collect();
            let bx = InputBox::new(x, cfg.eps)?;
            let (expected, _) = propagate_blockwise(&net, &bx)?;
            let truth =
                empirical_range_with_cap(&net, &bx, cfg.n_uniform, cfg.include_corners, cfg.corner_cap, &mut rng)?;
            Ok(CorrectnessRow {
                n,
                k,
                depth,
                trial,
                gamma: gamma(&expected, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrectnessTable {
        eps: cfg.eps,
        output_dim: cfg.output_dim,
        rows,
    })
}

impl CorrectnessTable {
    /// One summary per sweep point, in row order.
    pub fn summaries(&self) -> Vec<GammaSummary> {
        let mut out: Vec<(GammaSummary, f64, f64)> = Vec::new();
        for row in &self.rows {
            let mean = row.gamma.iter().sum::<f64>() / row.gamma.len() as f64;
            let min = row.gamma.iter().copied().fold(f64::INFINITY, f64::min);
            match out.last_mut() {
                Some((s, sm, smin)) if (s.n, s.k, s.depth) == (row.n, row.k, row.depth) => {
                    s.trials += 1;
                    *sm += mean;
                    *smin += min;
                }
                _ => out.push((
                    GammaSummary {
                        n: row.n,
                        k: row.k,
                        depth: row.depth,
                        trials: 1,
                        mean_gamma: 0.0,
                        mean_min_gamma: 0.0,
                    },
                    mean,
                    min,
                )),
            }
        }
        out.into_iter()
            .map(|(mut s, sm, smin)| {
                s.mean_gamma = sm / s.trials as f64;
                s.mean_min_gamma = smin / s.trials as f64;
                s
            })
            .collect()
    }

    /// Per-trial CSV: `n,k,depth,eps,trial,gamma_0,…`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["n", "k", "depth", "eps", "trial"].map(String::from).to_vec();
        header.extend((0..self.output_dim).map(|i| format!("gamma_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                r.k.to_string(),
                r.depth.to_string(),
                self.eps.to_string(),
                r.trial.to_string(),
            ];
            rec.extend(r.gamma.iter().map(|g| g.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Summary CSV: `n,k,depth,eps,trials,mean_gamma,mean_min_gamma`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "k", "depth", "eps", "trials", "mean_gamma", "mean_min_gamma"])?;
        for s in self.summaries() {
            w.write_record([
                s.n.to_string(),
                s.k.to_string(),
                s.depth.to_string(),
                self.eps.to_string(),
                s.trials.to_string(),
                s.mean_gamma.to_string(),
                s.mean_min_gamma.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    N,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    /// Input dimension when not swept.
    #[serde(default)]
    pub n: usize,
    /// Hidden width when not swept.
    #[serde(default)]
    pub k: usize,
    /// Number of affine layers when not swept.
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub eps_values: Vec<f64>,
    pub trials: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
}

fn default_depth() -> usize {
    2
}

impl TightnessConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("values", &self.values)?;
        if self.eps_values.is_empty() {
            return Err(Error::param("eps_values", "must not be empty"));
        }
        for &e in &self.eps_values {
            check_eps("eps_values", e)?;
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be positive"));
        }
        if self.output_dim == 0 {
            return Err(Error::param("output_dim", "must be positive"));
        }
        if self.axis != SweepAxis::N && self.n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        if self.axis != SweepAxis::K && self.k == 0 {
            return Err(Error::param("k", "must be positive"));
        }
        match self.axis {
            SweepAxis::Depth if self.values.iter().any(|&d| d < 2) => {
                Err(Error::param("values", "depths must be at least 2"))
            }
            SweepAxis::K | SweepAxis::N if self.depth < 2 => Err(Error::param("depth", "must be at least 2")),
            _ => Ok(()),
        }
    }

    /// Layer widths at one sweep value.
    pub fn dims_at(&self, value: usize) -> Vec<usize> {
        match self.axis {
            SweepAxis::K => layer_dims(self.n, value, self.depth, self.output_dim),
            SweepAxis::N => layer_dims(value, self.k, self.depth, self.output_dim),
            SweepAxis::Depth => layer_dims(self.n, self.k, value, self.output_dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessRow {
    pub axis_value: usize,
    pub eps: f64,
    pub trial: usize,
    pub output: usize,
    pub diff: f64,
    pub ratio: Option<f64>,
    pub width_ibp: f64,
    pub width_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessSummary {
    pub axis_value: usize,
    pub eps: f64,
    pub count: usize,
    pub mean_diff: f64,
    /// Arithmetic mean over rows with a defined ratio.
    pub mean_ratio: f64,
    /// Geometric mean over rows with a defined ratio.
    pub geomean_ratio: f64,
    /// Rows whose ratio was suppressed.
    pub suppressed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightnessTable {
    pub axis: SweepAxis,
    pub rows: Vec<TightnessRow>,
}

pub fn run_tightness_experiment(cfg: &TightnessConfig, seed: u64) -> Result<TightnessTable> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .values
        .iter()
        .flat_map(|&v| (0..cfg.trials).map(move |t| (v, t)))
        .collect();
    let per_trial = jobs
        .par_iter()
        .map(|&(value, trial)| {
            let dims = cfg.dims_at(value);
            let key = std::iter::once(TIGHTNESS_TAG)
                .chain(dims.iter().map(|&d| d as u64))
                .collect::<Vec<_>>();
            let mut rng = RngState::with_stream(seed, sweep_stream(&key, trial));
            let net = init_network(&mut rng, &dims, InitScheme::PaperRandom)?;
            let x: Vector = (0..dims[0]).map(|_| rng.standard_normal()).collect();
            let mut rows = Vec::new();
            for &eps in &cfg.eps_values {
                let bx = InputBox::new(x.clone(), eps)?;
                let ibp = ibp_network(&net, &bx)?;
                let (expected, _) = propagate_blockwise(&net, &bx)?;
                let rep = tightness(&ibp, &expected)?;
                for o in 0..net.output_dim() {
                    rows.push(TightnessRow {
                        axis_value: value,
                        eps,
                        trial,
                        output: o,
                        diff: rep.diff[o],
                        ratio: rep.ratio[o],
                        width_ibp: rep.width_ibp[o],
                        width_m: rep.width_m[o],
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (vi, _) in cfg.values.iter().enumerate() {
        for ei in 0..cfg.eps_values.len() {
            for t in 0..cfg.trials {
                let trial_rows = &per_trial[vi * cfg.trials + t];
                let per_eps = trial_rows.len() / cfg.eps_values.len();
                rows.extend_from_slice(&trial_rows[ei * per_eps..(ei + 1) * per_eps]);
            }
        }
    }
    Ok(TightnessTable { axis: cfg.axis, rows })
}

impl TightnessTable {
    /// One summary per `(axis_value, eps)`, in row order.
    pub fn summaries(&self) -> Vec<TightnessSummary> {
        let mut out: Vec<(TightnessSummary, f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            let same = matches!(out.last(), Some((s, ..)) if s.axis_value == r.axis_value && s.eps == r.eps);
            if !same {
                out.push((
                    TightnessSummary {
                        axis_value: r.axis_value,
                        eps: r.eps,
                        count: 0,
                        mean_diff: 0.0,
                        mean_ratio: f64::NAN,
                        geomean_ratio: f64::NAN,
                        suppressed: 0,
                    },
                    0.0,
                    0.0,
                    0,
                ));
            }
            let (s, ratio_sum, log_sum, defined) = out.last_mut().expect("pushed above");
            s.count += 1;
            s.mean_diff += r.diff;
            match r.ratio {
                Some(q) => {
                    *ratio_sum += q;
                    *log_sum += q.ln();
                    *defined += 1;
                }
                None => s.suppressed += 1,
            }
        }
        out.into_iter()
            .map(|(mut s, ratio_sum, log_sum, defined)| {
                s.mean_diff /= s.count as f64;
                if defined > 0 {
                    s.mean_ratio = ratio_sum / defined as f64;
                    s.geomean_ratio = (log_sum / defined as f64).exp();
                }
                s
            })
            .collect()
    }

    /// Per-trial CSV:
    /// `axis_value,eps,trial,output,diff,ratio,width_ibp,width_m`; a
    /// suppressed ratio is an empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis_value", "eps", "trial", "output", "diff", "ratio", "width_ibp", "width_m"])?;
        for r in &self.rows {
            w.write_record([
                r.axis_value.to_string(),
                r.eps.to_string(),
                r.trial.to_string(),
                r.output.to_string(),
                r.diff.to_string(),
                r.ratio.map(|q| q.to_string()).unwrap_or_default(),
                r.width_ibp.to_string(),
                r.width_m.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Summary CSV:
    /// `axis_value,eps,count,mean_diff,mean_ratio,geomean_ratio,suppressed`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis_value", "eps", "count", "mean_diff", "mean_ratio", "geomean_ratio", "suppressed"])?;
        for s in self.summaries() {
            w.write_record([
                s.axis_value.to_string(),
                s.eps.to_string(),
                s.count.to_string(),
                s.mean_diff.to_string(),
                s.mean_ratio.to_string(),
                s.geomean_ratio.to_string(),
                s.suppressed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_correctness(eps: f64) -> CorrectnessConfig {
        CorrectnessConfig {
            n_values: vec![2, 4],
            k_values: vec![5],
            depths: vec![2],
            equal_width: false,
            output_dim: 1,
            eps,
            trials: 4,
            n_uniform: 200,
            include_corners: true,
            corner_cap: DEFAULT_CORNER_CAP,
        }
    }

    #[test]
    fn zero_eps_gives_unit_gamma() {
        let mut cfg = small_correctness(0.0);
        cfg.output_dim = 3;
        let table = run_correctness_experiment(&cfg, 7).unwrap();
        assert_eq!(table.rows.len(), 8);
        assert!(table.rows.iter().all(|r| r.gamma.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn correctness_is_reproducible_and_summarised() {
        let cfg = small_correctness(0.1);
        let a = run_correctness_experiment(&cfg, 3).unwrap();
        let b = run_correctness_experiment(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let s = a.summaries();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].trials, 4);
        assert!(s.iter().all(|s| (0.0..=1.0).contains(&s.mean_gamma)));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("n,k,depth,eps,trial,gamma_0\n"));
    }

    #[test]
    fn trials_do_not_depend_on_other_points() {
        let cfg = small_correctness(0.1);
        let full = run_correctness_experiment(&cfg, 3).unwrap();
        let mut only = cfg.clone();
        only.n_values = vec![4];
        let part = run_correctness_experiment(&only, 3).unwrap();
        assert_eq!(&full.rows[4..], &part.rows[..]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_correctness(0.1);
        cfg.n_values.clear();
        assert!(run_correctness_experiment(&cfg, 0).is_err());
        let mut cfg = small_correctness(0.1);
        cfg.n_values = vec![30];
        assert!(cfg.validate().is_err());
        let t = TightnessConfig {
            axis: SweepAxis::K,
            values: vec![],
            n: 5,
            k: 0,
            depth: 2,
            eps_values: vec![0.1],
            trials: 1,
            output_dim: 1,
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn tightness_depth_two_matches_two_layer_sweep() {
        let by_k = TightnessConfig {
            axis: SweepAxis::K,
            values: vec![30],
            n: 10,
            k: 0,
            depth: 2,
            eps_values: vec![0.01, 0.1],
            trials: 3,
            output_dim: 1,
        };
        let by_depth = TightnessConfig {
            axis: SweepAxis::Depth,
            values: vec![2, 3],
            n: 10,
            k: 30,
            depth: 2,
            eps_values: vec![0.01, 0.1],
            trials: 3,
            output_dim: 1,
        };
        let a = run_tightness_experiment(&by_k, 5).unwrap();
        let b = run_tightness_experiment(&by_depth, 5).unwrap();
        assert_eq!(a.rows.len(), 6);
        assert_eq!(b.rows.len(), 12);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!((ra.eps, ra.trial, ra.diff), (rb.eps, rb.trial, rb.diff));
        }
        let s = b.summaries();
        assert_eq!(s.len(), 4);
        assert_eq!((s[1].axis_value, s[1].eps), (2, 0.1));
        assert!(s.iter().all(|s| s.count == 3 && s.geomean_ratio > 1.0));
    }

    #[test]
    fn dims_layout() {
        assert_eq!(layer_dims(3, 7, 2, 1), vec![3, 7, 1]);
        assert_eq!(layer_dims(3, 7, 4, 2), vec![3, 7, 7, 7, 2]);
    }
}
