//! Expected tight interval bounds for ReLU networks under Gaussian weights,
//! compared against interval bound propagation and empirical output ranges.

pub mod bounds;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod robust;
pub mod stats;

pub use bounds::{
    affine_interval, expected_bounds_block, ibp_network, mask_from_upper, propagate_blockwise, relu_interval,
    width, ActivationMask, AffineEnvelope, InputBox, Interval,
};
pub use error::{Error, ParseError, Result};
pub use linalg::{Matrix, RngState, Vector};
pub use network::{init_network, AffineLayer, InitScheme, ReluNetwork};
