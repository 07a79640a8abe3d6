//! Corpus representation and persistence.
//!
//! A corpus on disk is a JSON manifest next to raw little-endian component
//! files: `u64` CSR arrays for the citation graph and row-major float
//! matrices for features, embeddings and metric factors. See
//! `docs/manifest.md` for the schema.

pub(crate) mod binary;
mod element;
mod graph;
pub(crate) mod manifest;
mod matrix;
mod split;

pub use element::Element;
pub use graph::{symmetrize, CorpusGraph, Csr, TraversalView};
pub use manifest::{load_corpus, resolve_manifest_path, save_corpus, CorpusManifest, MANIFEST_FILE};
pub use matrix::{DenseRows, EmbeddingMatrix, MetricFactorTensor, NodeFeatures};
pub use split::{SplitYears, TemporalSplit};

use crate::error::{GssError, Result};

/// Used when a manifest carries factors without an `epsilon` value.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Every component of a loaded corpus. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub graph: CorpusGraph,
    pub features: NodeFeatures,
    pub embeddings: Option<EmbeddingMatrix>,
    pub factors: Option<MetricFactorTensor>,
    pub split: Option<TemporalSplit>,
}

impl Corpus {
    /// Checks cross-component sizes.
    pub fn new(
        graph: CorpusGraph,
        features: NodeFeatures,
        embeddings: Option<EmbeddingMatrix>,
        factors: Option<MetricFactorTensor>,
        split: Option<TemporalSplit>,
    ) -> Result<Self> {
        let n = graph.node_count();
        if n == 0 {
            return Err(GssError::InvalidParameter("corpus needs at least one node".into()));
        }
        if features.len() != n {
            return Err(GssError::mismatch("feature rows", n, features.len()));
        }
        if let Some(e) = &embeddings {
            if e.len() != n {
                return Err(GssError::mismatch("embedding rows", n, e.len()));
            }
        }
        if let Some(f) = &factors {
            if f.len() != n {
                return Err(GssError::mismatch("factor slabs", n, f.len()));
            }
            if let Some(e) = &embeddings {
                if e.dim() != f.dim() {
                    return Err(GssError::mismatch("factor dim vs embedding dim", e.dim(), f.dim()));
                }
            }
        }
        if let Some(s) = &split {
            let covered = s.train.len() + s.valid.len() + s.test.len();
            if covered != n {
                return Err(GssError::mismatch("split coverage", n, covered));
            }
        }
        Ok(Corpus {
            graph,
            features,
            embeddings,
            factors,
            split,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn embeddings(&self) -> Result<&EmbeddingMatrix> {
        self.embeddings.as_ref().ok_or(GssError::MissingComponent("embeddings"))
    }

    pub fn factors(&self) -> Result<&MetricFactorTensor> {
        self.factors.as_ref().ok_or(GssError::MissingComponent("metric factors"))
    }
}
