//! Variable nodes: posterior families, per-sample costs and updates.

pub mod evidence;
pub mod gaussian;
pub mod mixture;
pub mod rectified;

pub use evidence::{evidence_cost, EvidenceSchedule};
pub use gaussian::{update_gaussian, GaussianLocalCost, GaussianPosterior, NonlinTerm};
pub use mixture::{DirichletPosterior, MixturePosterior};
pub use rectified::{update_rectified, RectifiedPosterior, TruncatedQ};
