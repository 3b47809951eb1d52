//! Variational Bayesian building blocks.
//!
//! Models are directed graphs of typed nodes: Gaussian, rectified Gaussian
//! and mixture-of-Gaussians variables, constants, and computational nodes
//! (sum, product, two nonlinearities, delay). The engine evaluates the
//! fully factorial variational cost
//! `C = Σ ⟨log q(θ)⟩ − ⟨log p(X, θ)⟩`, minimizes it node by node, speeds
//! this up with pattern searches along the joint update direction, and
//! learns structure by pricing node removals.
//!
//! ```
//! use vbblocks::{Arity, Graph, Net};
//!
//! let mut g = Graph::new(1).unwrap();
//! let c0 = g.constant("c0", 0.0).unwrap();
//! let s = g.gaussian("s", Arity::Scalar, c0, c0).unwrap();
//! g.observed("x", vec![2.0], s, c0).unwrap();
//! let mut net = Net::new(g).unwrap();
//! net.update_all().unwrap();
//! let q = net.stats(s)[0];
//! assert!((q.mean - 1.0).abs() < 1e-12 && (q.var - 0.5).abs() < 1e-12);
//! ```

pub mod error;
pub mod graph;
pub mod io;
pub mod learning;
pub mod messages;
pub mod models;
pub mod network;
pub mod scalar;
pub mod special;
pub mod structure;
pub mod variables;

pub use error::{Error, Result};
pub use graph::{Arity, ModelGraph, NodeId, NodeKind, ParentRole, ValidationReport, Violation};
pub use messages::{ForwardStats, NonlinKind};
pub use learning::{train, TrainConfig, TrainTrace};
pub use io::{DataFormat, DataMatrix};
pub use network::{CostBreakdown, Network};
pub use scalar::Real;

/// Graph over `f64`, the default precision.
pub type Graph = ModelGraph<f64>;
/// Network over `f64`.
pub type Net = Network<f64>;
/// Graph over `f32`.
pub type Graph32 = ModelGraph<f32>;
/// Network over `f32`.
pub type Net32 = Network<f32>;
