//! Compressed sparse row adjacency for the citation graph.

use serde::{Deserialize, Serialize};

use crate::error::{GssError, Result};

/// CSR adjacency. Rows are strictly ascending, so lookups are binary searches
/// and neighbor iteration is in ascending node-id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    /// Validates raw CSR arrays. Rows must be sorted; duplicates and
    /// self-loops are rejected rather than repaired.
    pub fn from_parts(node_count: usize, offsets: Vec<usize>, indices: Vec<usize>) -> Result<Self> {
        if offsets.len() != node_count + 1 {
            return Err(GssError::mismatch("row offsets", node_count + 1, offsets.len()));
        }
        if offsets[0] != 0 || offsets[node_count] != indices.len() {
            return Err(GssError::InvalidGraph(format!(
                "row offsets must span [0, {}], got [{}, {}]",
                indices.len(),
                offsets[0],
                offsets[node_count]
            )));
        }
        for i in 0..node_count {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            if hi < lo {
                return Err(GssError::InvalidGraph(format!("row offsets decrease at row {i}")));
            }
            let row = &indices[lo..hi];
            for (pos, &j) in row.iter().enumerate() {
                if j >= node_count {
                    return Err(GssError::NodeOutOfRange { node: j, count: node_count });
                }
                if j == i {
                    return Err(GssError::InvalidGraph(format!("self-loop at node {i}")));
                }
                if pos > 0 {
                    let prev = row[pos - 1];
                    if prev == j {
                        return Err(GssError::InvalidGraph(format!("duplicate edge ({i}, {j})")));
                    }
                    if prev > j {
                        return Err(GssError::InvalidGraph(format!("row {i} is not sorted")));
                    }
                }
            }
        }
        Ok(Csr { offsets, indices })
    }

    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = edges.to_vec();
        sorted.sort_unstable();
        let mut offsets = vec![0usize; node_count + 1];
        for &(i, j) in &sorted {
            if i >= node_count {
                return Err(GssError::NodeOutOfRange { node: i, count: node_count });
            }
            if j >= node_count {
                return Err(GssError::NodeOutOfRange { node: j, count: node_count });
            }
            offsets[i + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        let indices = sorted.into_iter().map(|(_, j)| j).collect();
        Csr::from_parts(node_count, offsets, indices)
    }

    pub fn empty(node_count: usize) -> Self {
        Csr {
            offsets: vec![0; node_count + 1],
            indices: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.node_count() && self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn transpose(&self) -> Csr {
        let n = self.node_count();
        let mut counts = vec![0usize; n + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0usize; self.indices.len()];
        // rows visited in ascending order keep every transposed row sorted
        for (i, j) in self.edges() {
            indices[cursor[j]] = i;
            cursor[j] += 1;
        }
        Csr { offsets: counts, indices }
    }
}

/// Undirected closure: `(i, j)` is present iff `(i, j)` or `(j, i)` is.
pub fn symmetrize(graph: &Csr) -> Csr {
    let n = graph.node_count();
    let transposed = graph.transpose();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(graph.edge_count() * 2);
    offsets.push(0);
    for i in 0..n {
        let (a, b) = (graph.neighbors(i), transposed.neighbors(i));
        let (mut x, mut y) = (0, 0);
        while x < a.len() || y < b.len() {
            let next = match (a.get(x), b.get(y)) {
                (Some(&u), Some(&v)) if u == v => {
                    x += 1;
                    y += 1;
                    u
                }
                (Some(&u), Some(&v)) if u < v => {
                    x += 1;
                    u
                }
                (Some(_), Some(&v)) => {
                    y += 1;
                    v
                }
                (Some(&u), None) => {
                    x += 1;
                    u
                }
                (None, Some(&v)) => {
                    y += 1;
                    v
                }
                (None, None) => unreachable!(),
            };
            indices.push(next);
        }
        offsets.push(indices.len());
    }
    Csr { offsets, indices }
}

/// Which adjacency a search walks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraversalView {
    /// Undirected closure of the citation edges.
    #[default]
    Symmetric,
    /// Follow citations from citing to cited paper only.
    Citation,
}

/// Directed citation graph plus its symmetrized traversal view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusGraph {
    out_edges: Csr,
    symmetric: Csr,
}

impl CorpusGraph {
    pub fn new(out_edges: Csr) -> Self {
        let symmetric = symmetrize(&out_edges);
        CorpusGraph { out_edges, symmetric }
    }

    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Ok(CorpusGraph::new(Csr::from_edges(node_count, edges)?))
    }

    pub fn node_count(&self) -> usize {
        self.out_edges.node_count()
    }

    pub fn out_edges(&self) -> &Csr {
        &self.out_edges
    }

    pub fn symmetric_view(&self) -> &Csr {
        &self.symmetric
    }

    pub fn view(&self, view: TraversalView) -> &Csr {
        match view {
            TraversalView::Symmetric => &self.symmetric,
            TraversalView::Citation => &self.out_edges,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_edge_symmetrizes_both_ways() {
        let g = Csr::from_edges(2, &[(0, 1)]).unwrap();
        let s = symmetrize(&g);
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn symmetrize_is_idempotent() {
        let g = Csr::from_edges(4, &[(0, 1), (1, 0), (2, 3), (3, 2), (1, 2), (2, 1)]).unwrap();
        let s = symmetrize(&g);
        assert_eq!(s, g);
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn rejects_duplicates_and_self_loops() {
        assert!(matches!(
            Csr::from_edges(3, &[(0, 1), (0, 1)]),
            Err(GssError::InvalidGraph(m)) if m.contains("duplicate")
        ));
        assert!(matches!(
            Csr::from_edges(3, &[(2, 2)]),
            Err(GssError::InvalidGraph(m)) if m.contains("self-loop")
        ));
        assert!(Csr::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn rejects_bad_offsets() {
        assert!(Csr::from_parts(2, vec![0, 2, 1], vec![1, 0]).is_err());
        assert!(Csr::from_parts(2, vec![0, 1], vec![1]).is_err());
        assert!(Csr::from_parts(2, vec![0, 2, 2], vec![1, 1]).is_err());
    }

    fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let mut m = vec![vec![false; n]; n];
        for &(i, j) in edges {
            m[i][j] = true;
            m[j][i] = true;
        }
        let mut out = Vec::new();
        for (i, row) in m.iter().enumerate() {
            for (j, &set) in row.iter().enumerate() {
                if set {
                    out.push((i, j));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn symmetric_view_matches_dense_oracle(
            n in 1usize..64,
            raw in proptest::collection::vec((0usize..64, 0usize..64), 0..300),
        ) {
            let mut edges: Vec<(usize, usize)> = raw
                .into_iter()
                .map(|(i, j)| (i % n, j % n))
                .filter(|(i, j)| i != j)
                .collect();
            edges.sort_unstable();
            edges.dedup();
            let g = CorpusGraph::from_edges(n, &edges).unwrap();
            let got: Vec<_> = g.symmetric_view().edges().collect();
            prop_assert_eq!(got, dense_oracle(n, &edges));
            prop_assert_eq!(symmetrize(g.symmetric_view()), g.symmetric_view().clone());
        }
    }
}
