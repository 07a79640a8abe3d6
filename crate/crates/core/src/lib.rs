//! Geodesic retrieval over citation graphs.
//!
//! Every node carries an embedding `h_i` and a low-rank factor `L_i`; the
//! node-local metric `G_i = L_i L_i^T + εI` measures steps leaving that node,
//! and retrieval ranks papers by the cheapest path under those metrics.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod gat;
pub mod geodesic;
pub mod hierarchy;
pub mod linalg;
pub mod metric;
pub mod pipeline;

pub use error::{ErrorClass, GssError, Result};
