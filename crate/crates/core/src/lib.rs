//! Kernel-based system identification.
//!
//! Dynamic systems are treated as functionals over *input locations* (lagged
//! windows or sampled past trajectories of the input), and estimated as
//! regularization networks in the reproducing kernel Hilbert space induced by
//! a kernel over those locations:
//!
//! ```text
//! ĝ = argmin (1/N) Σ (y_i − g(x_i))² + γ‖g‖²_H   ⇒   ĝ = Σ ĉ_i K(x_i, ·),  ĉ = (K + γN I)⁻¹ Y
//! ```
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`signal`] | signals, regressor construction, convolution, fit metric |
//! | [`systems`] | benchmark simulators and random stable linear systems |
//! | [`kernels`] | kernel specifications, evaluation, Gram matrices, PSD checks |
//! | [`stability`] | BIBO-stability certificates for kernels |
//! | [`rn`] | representer-theorem fitting, prediction, impulse-response extraction |
//! | [`hyper`] | Gaussian evidence, multi-start simplex tuning, the order oracle |
//! | [`mercer`] | stable-spline eigenexpansion, empirical Mercer, c_k, consistency runs |
//! | [`bench`] | Monte Carlo benchmark harness and report emitters |
//! | [`io`] | CSV/JSON file formats |

pub mod bench;
pub mod error;
pub mod hyper;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mercer;
pub mod optim;
pub mod rn;
pub mod signal;
pub mod stability;
pub mod systems;

pub use error::{Error, Result};
pub use kernels::{GramMatrix, IrKernelSpec, KernelSpec, LagGrid, NssVariant};
pub use rn::{fit_rn, RnModel};
pub use signal::{Dataset, InputLocation, LocationKind, Memory, Signal};
