//! Approximate sampling from Bayesian cut-distributions.
//!
//! The cut-distribution averages the conditional posterior of the parameters
//! of interest `α` over the module posterior of the cut parameters `γ`:
//!
//! ```text
//! π_cut(α | y) = ∫ π(α | γ, y) π(γ | z) dγ
//! ```
//!
//! Three engines are provided in [`cutcore`]:
//!
//! * direct sampling (one conditional MCMC chain per design location, pooled),
//! * direct sampling followed by a single moment-matched normal,
//! * conditional-posterior emulation (ECP): fit a parametric family to each
//!   conditional chain, emulate the family parameters over `γ` with Gaussian
//!   processes, and return a large equal-weight mixture.
//!
//! Supporting modules supply design-of-experiments samplers ([`doe`]),
//! adaptive Metropolis and Laplace fits ([`sampler`]), the emulator ([`gp`]),
//! sequential design ([`seqecp`]), two reference problems ([`problems`]) and
//! accuracy metrics ([`diagnostics`]).

pub mod cutcore;
pub mod diagnostics;
pub mod doe;
pub mod error;
pub mod families;
pub mod gp;
pub mod io;
pub mod optim;
pub mod points;
pub mod problems;
pub mod rng;
pub mod sampler;
pub mod seqecp;
pub mod stats;

pub use error::{Error, Result};
pub use points::PointSet;
pub use rng::RngStream;
