use std::io::Write;

use crate::bounds::{ibp_network, propagate_blockwise, InputBox, Interval};
use crate::error::{Error, Result};
use crate::linalg::{fill_uniform_box, Matrix, RngState};
use crate::network::ReluNetwork;

/// Slack allowed when checking sampled outputs against the interval bounds.
pub const SOUNDNESS_SLACK: f64 = 1e-9;

/// Sampled 2-D output cloud of a network over a box, with the expected and
/// IBP bound rectangles.
#[derive(Clone, Debug)]
pub struct PolytopeCloud {
    /// One sampled output per row (`n_samples × 2`).
    pub points: Matrix,
    pub expected: Interval,
    pub ibp: Interval,
    /// Samples falling outside the IBP rectangle; nonzero means a bug.
    pub ibp_violations: usize,
    /// Samples falling outside the expected-bounds rectangle.
    pub expected_misses: usize,
}

pub fn emit_polytope_cloud(
    net: &ReluNetwork,
    input: &InputBox,
    n_samples: usize,
    rng: &mut RngState,
) -> Result<PolytopeCloud> {
    if net.output_dim() != 2 {
        return Err(Error::dim("emit_polytope_cloud: output", 2, net.output_dim()));
    }
    if net.input_dim() != input.dim() {
        return Err(Error::dim("emit_polytope_cloud: input", net.input_dim(), input.dim()));
    }
    let mut inputs = Matrix::zeros(n_samples, input.dim());
    for r in 0..n_samples {
        fill_uniform_box(rng, input.center(), input.radius(), inputs.row_mut(r));
    }
    let points = net.forward_batch(&inputs)?;
    let (expected, _) = propagate_blockwise(net, input)?;
    let ibp = ibp_network(net, input)?;
    let outside = |iv: &Interval| (0..n_samples).filter(|&r| !iv.contains(points.row(r), SOUNDNESS_SLACK)).count();
    Ok(PolytopeCloud {
        ibp_violations: outside(&ibp),
        expected_misses: outside(&expected),
        points,
        expected,
        ibp,
    })
}

impl PolytopeCloud {
    /// CSV with header `method,x,y`: one `sample` row per point, then the
    /// lower and upper corners of each rectangle.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "x", "y"])?;
        for r in 0..self.points.rows() {
            let p = self.points.row(r);
            w.write_record(["sample", &p[0].to_string(), &p[1].to_string()])?;
        }
        for (name, iv) in [("expected", &self.expected), ("ibp", &self.ibp)] {
            for (side, v) in [("lower", iv.lower()), ("upper", iv.upper())] {
                w.write_record([format!("{name}_{side}"), v[0].to_string(), v[1].to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
