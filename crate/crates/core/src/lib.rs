//! Lace-expansion-style convolution recursions on Z^d.
//!
//! Evolves `f_{n+1}(k;z) = sum_m g_m(k;z) f_{n+1-m}(k;z) + e_{n+1}(k;z)`, locates the
//! critical point, certifies the induction bounds on explicit traces, and checks the
//! Gaussian scaling asymptotics numerically.

pub mod asymptotics;
pub mod certifier;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod quadrature;

pub use error::{Error, Result};
pub use kernel::{FourierPoint, StepKernel};
pub use model::{ModelCoefficients, SyntheticFamilySpec};
