use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::{read_elements, read_indices, write_elements, write_indices};
use super::element::Element;
use super::graph::{CorpusGraph, Csr};
use super::matrix::{DenseRows, MetricFactorTensor};
use super::split::{SplitYears, TemporalSplit};
use super::{Corpus, DEFAULT_EPSILON};
use crate::error::{GssError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "gss-corpus";
const INDEX_TYPE: &str = "u64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub node_count: usize,
    pub edge_count: usize,
    pub index_type: String,
    pub graph: GraphFiles,
    pub features: MatrixFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<MatrixFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<FactorFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitFiles>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFiles {
    pub offsets: String,
    pub indices: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub dim: usize,
    pub element_type: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFile {
    pub dim: usize,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub element_type: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    pub train_count: usize,
    pub valid: String,
    pub valid_count: usize,
    pub test: String,
    pub test_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<SplitYears>,
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn manifest_err(path: &Path, message: impl Into<String>) -> GssError {
    GssError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_element<T: Element>(path: &Path, tag: &str, what: &str) -> Result<()> {
    if tag != T::TAG {
        return Err(manifest_err(
            path,
            format!("{what} element_type {tag:?} unsupported (expected {:?})", T::TAG),
        ));
    }
    Ok(())
}

pub(crate) fn read_dense<T: Element>(
    base: &Path,
    manifest: &Path,
    spec: &MatrixFile,
    rows: usize,
    what: &str,
) -> Result<DenseRows<T>> {
    check_element::<T>(manifest, &spec.element_type, what)?;
    let data = read_elements::<T>(&base.join(&spec.file), rows * spec.dim, what)?;
    DenseRows::new(spec.dim, data, what)
}

pub(crate) fn read_factors<T: Element>(
    base: &Path,
    manifest: &Path,
    spec: &FactorFile,
    rows: usize,
) -> Result<MetricFactorTensor<T>> {
    check_element::<T>(manifest, &spec.element_type, "factors")?;
    let data = read_elements::<T>(&base.join(&spec.file), rows * spec.dim * spec.rank, "factors")?;
    MetricFactorTensor::new(spec.dim, spec.rank, spec.epsilon.unwrap_or(DEFAULT_EPSILON), data)
}

pub(crate) fn read_graph(base: &Path, spec: &GraphFiles, nodes: usize, edges: usize) -> Result<Csr> {
    let offsets = read_indices(&base.join(&spec.offsets), nodes + 1, "graph offsets")?;
    let indices = read_indices(&base.join(&spec.indices), edges, "graph indices")?;
    Csr::from_parts(nodes, offsets, indices)
}

pub(crate) fn write_graph(dir: &Path, prefix: &str, graph: &Csr) -> Result<GraphFiles> {
    let files = GraphFiles {
        offsets: format!("{prefix}offsets.u64"),
        indices: format!("{prefix}indices.u64"),
    };
    write_indices(&dir.join(&files.offsets), graph.offsets())?;
    write_indices(&dir.join(&files.indices), graph.indices())?;
    Ok(files)
}

pub(crate) fn write_dense<T: Element>(dir: &Path, file: &str, m: &DenseRows<T>) -> Result<MatrixFile> {
    write_elements(&dir.join(file), m.as_slice())?;
    Ok(MatrixFile {
        dim: m.dim(),
        element_type: T::TAG.to_string(),
        file: file.to_string(),
    })
}

pub(crate) fn write_factors<T: Element>(dir: &Path, file: &str, f: &MetricFactorTensor<T>) -> Result<FactorFile> {
    write_elements(&dir.join(file), f.as_slice())?;
    Ok(FactorFile {
        dim: f.dim(),
        rank: f.rank(),
        epsilon: Some(f.epsilon()),
        element_type: T::TAG.to_string(),
        file: file.to_string(),
    })
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| manifest_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| GssError::io(path, e))
}

pub(crate) fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| GssError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| manifest_err(path, e.to_string()))
}

/// Loads and validates every component referenced by the manifest at `path`
/// (or `path/manifest.json` when `path` is a directory).
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest_path = resolve_manifest_path(path);
    let manifest: CorpusManifest = read_json(&manifest_path)?;
    if manifest.format != FORMAT {
        return Err(manifest_err(&manifest_path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.index_type != INDEX_TYPE {
        return Err(manifest_err(&manifest_path, format!("unsupported index_type {:?}", manifest.index_type)));
    }
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let n = manifest.node_count;

    let out_edges = read_graph(&base, &manifest.graph, n, manifest.edge_count)?;
    let features = read_dense::<f32>(&base, &manifest_path, &manifest.features, n, "features")?;
    let embeddings = manifest
        .embeddings
        .as_ref()
        .map(|spec| read_dense::<f32>(&base, &manifest_path, spec, n, "embeddings"))
        .transpose()?;
    let factors = manifest
        .factors
        .as_ref()
        .map(|spec| read_factors::<f32>(&base, &manifest_path, spec, n))
        .transpose()?;
    let split = match &manifest.split {
        None => None,
        Some(s) => Some(TemporalSplit::new(
            n,
            read_indices(&base.join(&s.train), s.train_count, "train split")?,
            read_indices(&base.join(&s.valid), s.valid_count, "valid split")?,
            read_indices(&base.join(&s.test), s.test_count, "test split")?,
            s.years,
        )?),
    };
    Corpus::new(CorpusGraph::new(out_edges), features, embeddings, factors, split)
}

/// Writes the corpus next to `manifest_path` (a directory path writes
/// `manifest.json` inside it, creating the directory if needed).
pub fn save_corpus(corpus: &Corpus, manifest_path: &Path) -> Result<()> {
    // the types already enforce these; re-checked so nothing invalid reaches disk
    Corpus::new(
        corpus.graph.clone(),
        corpus.features.clone(),
        corpus.embeddings.clone(),
        corpus.factors.clone(),
        corpus.split.clone(),
    )?;
    if let Some(f) = &corpus.factors {
        if !(f.epsilon() > 0.0) {
            return Err(GssError::InvalidParameter("metric epsilon must be positive".into()));
        }
    }

    let manifest_path = if manifest_path.extension().is_none() {
        fs::create_dir_all(manifest_path).map_err(|e| GssError::io(manifest_path, e))?;
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|e| GssError::io(&dir, e))?;
    }

    let graph = write_graph(&dir, "graph_", corpus.graph.out_edges())?;
    let features = write_dense(&dir, "features.f32", &corpus.features)?;
    let embeddings = corpus
        .embeddings
        .as_ref()
        .map(|e| write_dense(&dir, "embeddings.f32", e))
        .transpose()?;
    let factors = corpus
        .factors
        .as_ref()
        .map(|f| write_factors(&dir, "factors.f32", f))
        .transpose()?;
    let split = match &corpus.split {
        None => None,
        Some(s) => {
            write_indices(&dir.join("split_train.u64"), &s.train)?;
            write_indices(&dir.join("split_valid.u64"), &s.valid)?;
            write_indices(&dir.join("split_test.u64"), &s.test)?;
            Some(SplitFiles {
                train: "split_train.u64".into(),
                train_count: s.train.len(),
                valid: "split_valid.u64".into(),
                valid_count: s.valid.len(),
                test: "split_test.u64".into(),
                test_count: s.test.len(),
                years: s.years,
            })
        }
    };

    let manifest = CorpusManifest {
        format: FORMAT.into(),
        version: 1,
        node_count: corpus.node_count(),
        edge_count: corpus.graph.out_edges().edge_count(),
        index_type: INDEX_TYPE.into(),
        graph,
        features,
        embeddings,
        factors,
        split,
    };
    write_json(&manifest_path, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingMatrix, NodeFeatures};

    fn tiny() -> Corpus {
        let graph = CorpusGraph::from_edges(4, &[(0, 1), (1, 2), (3, 2)]).unwrap();
        let features = NodeFeatures::new(8, (0..32).map(|v| v as f32 * 0.5).collect(), "features").unwrap();
        Corpus::new(graph, features, None, None, None).unwrap()
    }

    #[test]
    fn round_trips_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        save_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.node_count(), 4);
        assert_eq!(back, c);
    }

    #[test]
    fn single_node_without_edges() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(
            CorpusGraph::from_edges(1, &[]).unwrap(),
            NodeFeatures::new(3, vec![1.0, 2.0, 3.0], "features").unwrap(),
            None,
            None,
            None,
        )
        .unwrap();
        save_corpus(&c, &dir.path().join("corpus.json")).unwrap();
        assert_eq!(load_corpus(&dir.path().join("corpus.json")).unwrap(), c);
    }

    #[test]
    fn embedding_row_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.embeddings = Some(EmbeddingMatrix::new(2, vec![0.0; 8], "embeddings").unwrap());
        save_corpus(&c, dir.path()).unwrap();
        // grow the embedding file by one row behind the manifest's back
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let mut m: CorpusManifest = read_json(&manifest_path).unwrap();
        m.node_count = 4;
        write_elements(&dir.path().join("embeddings.f32"), &[0.0f32; 10]).unwrap();
        write_json(&manifest_path, &m).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(GssError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn missing_component_file() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&tiny(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("features.f32")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(GssError::Io { .. })));
    }

    #[test]
    fn non_finite_value_names_node() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&tiny(), dir.path()).unwrap();
        let mut vals = vec![0.0f32; 32];
        vals[8 * 2 + 3] = f32::INFINITY;
        write_elements(&dir.path().join("features.f32"), &vals).unwrap();
        match load_corpus(dir.path()) {
            Err(GssError::NonFinite { field, node }) => {
                assert_eq!(field, "features");
                assert_eq!(node, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_epsilon_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.embeddings = Some(EmbeddingMatrix::new(2, vec![0.5; 8], "embeddings").unwrap());
        c.factors = Some(MetricFactorTensor::zeros(4, 2, 1, 0.5).unwrap());
        save_corpus(&c, dir.path()).unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let mut m: CorpusManifest = read_json(&manifest_path).unwrap();
        m.factors.as_mut().unwrap().epsilon = None;
        write_json(&manifest_path, &m).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.factors.unwrap().epsilon(), DEFAULT_EPSILON);
    }

    #[test]
    fn zero_epsilon_never_reaches_disk() {
        let dir = tempfile::tempdir().unwrap();
        let zero = MetricFactorTensor::<f32>::zeros(4, 2, 1, 0.5).unwrap().with_epsilon(0.0);
        assert!(zero.is_err());
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    mod props {
        use super::*;
        use crate::corpus::MetricFactorTensor;
        use proptest::collection::vec;
        use proptest::num::f32::{NEGATIVE, NORMAL, POSITIVE, SUBNORMAL, ZERO};
        use proptest::prelude::*;

        fn finite(len: usize) -> impl Strategy<Value = Vec<f32>> {
            vec(POSITIVE | NEGATIVE | NORMAL | SUBNORMAL | ZERO, len)
        }

        fn corpus() -> impl Strategy<Value = Corpus> {
            (1usize..20, 1usize..5, 1usize..4)
                .prop_flat_map(|(n, d, r)| {
                    let r = r.min(d);
                    (
                        Just((n, d, r)),
                        vec((0..n, 0..n), 0..60),
                        finite(n * d),
                        proptest::option::of(finite(n * d)),
                        proptest::option::of((finite(n * d * r), 1e-6f64..1.0)),
                    )
                })
                .prop_map(|((n, d, r), raw, feats, emb, fac)| {
                    let mut edges: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| a != b).collect();
                    edges.sort_unstable();
                    edges.dedup();
                    Corpus::new(
                        CorpusGraph::from_edges(n, &edges).unwrap(),
                        NodeFeatures::new(d, feats, "features").unwrap(),
                        emb.map(|e| EmbeddingMatrix::new(d, e, "embeddings").unwrap()),
                        fac.map(|(f, eps)| MetricFactorTensor::new(d, r, eps, f).unwrap()),
                        None,
                    )
                    .unwrap()
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn save_then_load_is_bit_exact(c in corpus()) {
                let dir = tempfile::tempdir().unwrap();
                save_corpus(&c, dir.path()).unwrap();
                let back = load_corpus(dir.path()).unwrap();
                prop_assert_eq!(back.graph.out_edges(), c.graph.out_edges());
                let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(back.features.as_slice()), bits(c.features.as_slice()));
                prop_assert_eq!(back.embeddings.is_some(), c.embeddings.is_some());
                if let (Some(a), Some(b)) = (&back.embeddings, &c.embeddings) {
                    prop_assert_eq!(bits(a.as_slice()), bits(b.as_slice()));
                }
                prop_assert_eq!(back.factors.is_some(), c.factors.is_some());
                if let (Some(a), Some(b)) = (&back.factors, &c.factors) {
                    prop_assert_eq!(bits(a.as_slice()), bits(b.as_slice()));
                    prop_assert_eq!(a.epsilon(), b.epsilon());
                }
            }
        }
    }
}
