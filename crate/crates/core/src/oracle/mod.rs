//! Estimates of the true output range and the metrics comparing bounds
//! against it.

mod bracket;
mod experiment;
mod metrics;
mod polytope;
mod range;

pub use bracket::{
    certified_bracket_2layer, BracketOptions, InnerMethod, OracleBracket, OuterMethod, DEFAULT_PATTERN_CAP,
};
pub use experiment::{
    layer_dims, run_correctness_experiment, run_tightness_experiment, sweep_stream, CorrectnessConfig,
    CorrectnessRow, CorrectnessTable, GammaSummary, SweepAxis, TightnessConfig, TightnessRow, TightnessSummary,
    TightnessTable,
};
pub use metrics::{gamma, tightness, TightnessReport, RATIO_FLOOR};
pub use polytope::{emit_polytope_cloud, PolytopeCloud, SOUNDNESS_SLACK};
pub use range::{
    corner_extremes, corner_extremes_exhaustive, empirical_range, empirical_range_with_cap, DEFAULT_CORNER_CAP,
};
