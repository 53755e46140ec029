//! Self-labeling toolkit for imbalanced clustering.
//!
//! The crate combines entropic optimal-transport pseudo-label generation
//! (balanced Sinkhorn and a semi-relaxed scaling algorithm with a KL
//! penalty on the column marginal), an adaptive regularization controller,
//! density-based region pooling, a small prototype classifier, and the
//! training / evaluation machinery to exercise everything end to end on
//! synthetic imbalanced 3D scenes.

pub mod gamma;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ot;
pub mod pipeline;
pub mod region;
