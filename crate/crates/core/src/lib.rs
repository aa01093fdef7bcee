//! Numerical laboratory for stochastically perturbed reaction–diffusion
//! travelling waves on the cylinder ℝ × 𝕋^{d−1}.

// `!(x > 0.0)` style tests reject NaN; indexed loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod banded;
pub mod error;
pub mod fields;
pub mod fwd;
pub mod linear;
pub mod meta;
pub mod models;
pub mod noise;
pub mod phase;
pub mod rng;
pub mod sim;
pub mod util;
pub mod wave;

pub use error::{Error, Result};
pub use fields::{Field, Grid, ShiftScheme};
pub use linear::{Linearisation, NuSeries};
pub use models::ModelSpec;
pub use noise::{KernelSpec, NoiseKernel};
pub use phase::{PhaseSystem, StochasticWave};
pub use wave::WaveProfile;
