//! Stochastic simulation for dynamic probabilistic networks.
//!
//! A network is a two-slice template ([`model::DpnModel`]) unrolled over
//! time. Four particle algorithms track the filtered state marginals:
//! likelihood weighting, evidence reversal, survival-of-the-fittest
//! resampling and the combination of the last two. [`exact::ExactOracle`]
//! gives ground truth for small networks and [`experiment`] scores the
//! samplers against it. [`gauss2d`] is a continuous tracking demo with a
//! Kalman reference.

pub mod cli;
pub mod exact;
pub mod experiment;
pub mod format;
pub mod gauss2d;
pub mod model;
pub mod random_model;
pub mod reversal;
pub mod rng;
pub mod sampler;

pub use exact::{BeliefState, ExactOracle};
pub use model::{DpnModel, EvidenceSequence, SliceAssignment, SliceKind};
pub use reversal::ReversedModel;
pub use sampler::{Algorithm, MarginalEstimate, Monitor};
