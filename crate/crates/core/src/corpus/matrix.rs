use super::element::Element;
use crate::error::{GssError, Result};

/// Row-major N×dim matrix with one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseRows<T: Element = f32> {
    dim: usize,
    data: Vec<T>,
}

/// Node embeddings `h_i`, one row per node.
pub type EmbeddingMatrix<T = f32> = DenseRows<T>;

/// Input features `x_i`, one row per node.
pub type NodeFeatures = DenseRows<f32>;

impl<T: Element> DenseRows<T> {
    /// `field` names the component in non-finite errors.
    pub fn new(dim: usize, data: Vec<T>, field: &str) -> Result<Self> {
        if dim == 0 {
            return Err(GssError::InvalidParameter(format!("{field} dimension must be positive")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GssError::mismatch(
                format!("{field} length (multiple of dim {dim})"),
                data.len().div_ceil(dim) * dim,
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(GssError::NonFinite {
                field: field.to_string(),
                node: pos / dim,
            });
        }
        Ok(DenseRows { dim, data })
    }

    pub fn from_f64_rows(rows: &[Vec<f64>], field: &str) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(GssError::mismatch(format!("{field} row {bad}"), dim, rows[bad].len()));
        }
        let data = rows.iter().flatten().map(|&v| T::from_f64(v)).collect();
        Self::new(dim, data, field)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|v| v.to_f64()).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn cast<U: Element>(&self) -> DenseRows<U> {
        DenseRows {
            dim: self.dim,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Rows picked by `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> DenseRows<T> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        DenseRows { dim: self.dim, data }
    }
}

/// Per-node low-rank factors `L_i` (d×r, row-major) and the shared `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricFactorTensor<T: Element = f32> {
    dim: usize,
    rank: usize,
    epsilon: f64,
    data: Vec<T>,
}

impl<T: Element> MetricFactorTensor<T> {
    pub fn new(dim: usize, rank: usize, epsilon: f64, data: Vec<T>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(GssError::InvalidParameter(format!(
                "metric epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if dim == 0 || rank == 0 || rank > dim {
            return Err(GssError::InvalidParameter(format!(
                "factor rank must satisfy 1 <= r <= d, got r = {rank}, d = {dim}"
            )));
        }
        let slab = dim * rank;
        if !data.len().is_multiple_of(slab) {
            return Err(GssError::mismatch("factor tensor length", data.len().div_ceil(slab) * slab, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(GssError::NonFinite {
                field: "factors".into(),
                node: pos / slab,
            });
        }
        Ok(MetricFactorTensor {
            dim,
            rank,
            epsilon,
            data,
        })
    }

    pub fn zeros(nodes: usize, dim: usize, rank: usize, epsilon: f64) -> Result<Self> {
        Self::new(dim, rank, epsilon, vec![T::from_f64(0.0); nodes * dim * rank])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.dim * self.rank)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `L_i` as a row-major d×r slab: entry (a, b) at `a * rank + b`.
    #[inline]
    pub fn slab(&self, i: usize) -> &[T] {
        let s = self.dim * self.rank;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn cast<U: Element>(&self) -> MetricFactorTensor<U> {
        MetricFactorTensor {
            dim: self.dim,
            rank: self.rank,
            epsilon: self.epsilon,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn select(&self, ids: &[usize]) -> MetricFactorTensor<T> {
        let mut data = Vec::with_capacity(ids.len() * self.dim * self.rank);
        for &i in ids {
            data.extend_from_slice(self.slab(i));
        }
        MetricFactorTensor { data, ..*self }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(GssError::InvalidParameter(format!(
                "metric epsilon must be positive and finite, got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_node_of_non_finite_entry() {
        let err = EmbeddingMatrix::<f32>::new(2, vec![0.0, 1.0, 2.0, f32::NAN], "embeddings").unwrap_err();
        assert!(matches!(err, GssError::NonFinite { node: 1, .. }));
    }

    #[test]
    fn factor_invariants() {
        assert!(MetricFactorTensor::<f32>::zeros(2, 4, 2, 0.0).is_err());
        assert!(MetricFactorTensor::<f32>::zeros(2, 2, 3, 0.1).is_err());
        let t = MetricFactorTensor::<f32>::zeros(3, 4, 2, 0.01).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.slab(2).len(), 8);
    }
}
