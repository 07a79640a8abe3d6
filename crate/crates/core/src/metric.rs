//! Node-local metric mathematics.
//!
//! The metric at node `i` is `G_i = L_i L_i^T + εI`. Distances are evaluated
//! in the factored form `sqrt(|L_i^T Δ|² + ε|Δ|²)`, which costs O(dr) instead
//! of the O(d²) dense quadratic form.

use crate::corpus::{Element, EmbeddingMatrix, MetricFactorTensor};
use crate::error::{GssError, Result};
use crate::linalg::{symmetric_eigen, SquareMatrix};

/// Squared local distance from `h` to `target` under the factor slab `l`
/// (row-major d×r). Accumulates in `f64` regardless of storage type.
#[inline]
pub fn local_distance_sq<A: Element, B: Element>(
    h: &[A],
    target: &[B],
    l: &[A],
    rank: usize,
    epsilon: f64,
    scratch: &mut [f64],
) -> f64 {
    debug_assert_eq!(h.len(), target.len());
    debug_assert_eq!(l.len(), h.len() * rank);
    let proj = &mut scratch[..rank];
    proj.fill(0.0);
    let mut norm_sq = 0.0;
    for (a, (&x, &y)) in h.iter().zip(target).enumerate() {
        let delta = x.to_f64() - y.to_f64();
        norm_sq += delta * delta;
        let row = &l[a * rank..(a + 1) * rank];
        for (p, &lab) in proj.iter_mut().zip(row) {
            *p += lab.to_f64() * delta;
        }
    }
    let low_rank: f64 = proj.iter().map(|p| p * p).sum();
    low_rank + epsilon * norm_sq
}

/// Distance kernel over one corpus: embeddings plus factors, with a reusable
/// scratch buffer of length `r`. One kernel per thread.
#[derive(Clone)]
pub struct LocalDistanceKernel<'a, T: Element = f32> {
    embeddings: &'a EmbeddingMatrix<T>,
    factors: &'a MetricFactorTensor<T>,
    scratch: Vec<f64>,
}

impl<'a, T: Element> LocalDistanceKernel<'a, T> {
    pub fn new(embeddings: &'a EmbeddingMatrix<T>, factors: &'a MetricFactorTensor<T>) -> Result<Self> {
        if embeddings.dim() != factors.dim() {
            return Err(GssError::mismatch("factor dim vs embedding dim", embeddings.dim(), factors.dim()));
        }
        if embeddings.len() != factors.len() {
            return Err(GssError::mismatch("factor slabs vs embedding rows", embeddings.len(), factors.len()));
        }
        Ok(LocalDistanceKernel {
            embeddings,
            factors,
            scratch: vec![0.0; factors.rank()],
        })
    }

    pub fn embeddings(&self) -> &'a EmbeddingMatrix<T> {
        self.embeddings
    }

    pub fn factors(&self) -> &'a MetricFactorTensor<T> {
        self.factors
    }

    pub fn node_count(&self) -> usize {
        self.embeddings.len()
    }

    /// `d_{G_i}(h_i, target)`; `target` must have the embedding dimension.
    #[inline]
    pub fn distance_to<U: Element>(&mut self, i: usize, target: &[U]) -> f64 {
        local_distance_sq(
            self.embeddings.row(i),
            target,
            self.factors.slab(i),
            self.factors.rank(),
            self.factors.epsilon(),
            &mut self.scratch,
        )
        .sqrt()
    }

    /// Step cost from `u` to `v`, measured with the tail node's metric.
    #[inline]
    pub fn step(&mut self, u: usize, v: usize) -> f64 {
        let target = self.embeddings.row(v);
        local_distance_sq(
            self.embeddings.row(u),
            target,
            self.factors.slab(u),
            self.factors.rank(),
            self.factors.epsilon(),
            &mut self.scratch,
        )
        .sqrt()
    }
}

/// Local distance from node `i` to an arbitrary target vector.
pub fn local_distance<T: Element, U: Element>(
    i: usize,
    target: &[U],
    factors: &MetricFactorTensor<T>,
    embeddings: &EmbeddingMatrix<T>,
) -> Result<f64> {
    if i >= embeddings.len() {
        return Err(GssError::NodeOutOfRange { node: i, count: embeddings.len() });
    }
    if target.len() != embeddings.dim() {
        return Err(GssError::mismatch("target vector", embeddings.dim(), target.len()));
    }
    if let Some(bad) = target.iter().position(|v| !v.to_f64().is_finite()) {
        return Err(GssError::NonFinite {
            field: format!("target[{bad}]"),
            node: i,
        });
    }
    let mut kernel = LocalDistanceKernel::new(embeddings, factors)?;
    Ok(kernel.distance_to(i, target))
}

/// Accumulates gradients of `w = sqrt(|L^T Δ|² + ε|Δ|²)`, `Δ = h_u − h_v`,
/// scaled by `upstream`, into `grad_hu`, `grad_hv` and `grad_l`. Returns `w`.
/// At `w = 0` the (sub)gradient taken is zero.
#[allow(clippy::too_many_arguments)]
pub fn local_distance_backward(
    h_u: &[f64],
    h_v: &[f64],
    l: &[f64],
    rank: usize,
    epsilon: f64,
    upstream: f64,
    grad_hu: &mut [f64],
    grad_hv: &mut [f64],
    grad_l: &mut [f64],
) -> f64 {
    let d = h_u.len();
    let mut proj = vec![0.0; rank];
    let delta: Vec<f64> = h_u.iter().zip(h_v).map(|(a, b)| a - b).collect();
    let mut norm_sq = 0.0;
    for a in 0..d {
        norm_sq += delta[a] * delta[a];
        for b in 0..rank {
            proj[b] += l[a * rank + b] * delta[a];
        }
    }
    let w = (proj.iter().map(|p| p * p).sum::<f64>() + epsilon * norm_sq).sqrt();
    if w == 0.0 || upstream == 0.0 {
        return w;
    }
    let g = upstream / w;
    for a in 0..d {
        let lp: f64 = (0..rank).map(|b| l[a * rank + b] * proj[b]).sum();
        let dd = g * (lp + epsilon * delta[a]);
        grad_hu[a] += dd;
        grad_hv[a] -= dd;
        for b in 0..rank {
            grad_l[a * rank + b] += g * delta[a] * proj[b];
        }
    }
    w
}

/// Dense `G_i = L_i L_i^T + εI`.
pub fn dense_metric<T: Element>(i: usize, factors: &MetricFactorTensor<T>) -> SquareMatrix {
    dense_metric_from_slab(factors.slab(i), factors.dim(), factors.rank(), factors.epsilon())
}

pub fn dense_metric_from_slab<T: Element>(l: &[T], dim: usize, rank: usize, epsilon: f64) -> SquareMatrix {
    let mut g = SquareMatrix::zeros(dim);
    for a in 0..dim {
        for c in 0..=a {
            let mut s = 0.0;
            for b in 0..rank {
                s += l[a * rank + b].to_f64() * l[c * rank + b].to_f64();
            }
            g[(a, c)] = s;
            g[(c, a)] = s;
        }
        g[(a, a)] += epsilon;
    }
    g
}

/// Smallest eigenvalue of `G_i`.
pub fn min_metric_eigenvalue<T: Element>(i: usize, factors: &MetricFactorTensor<T>) -> f64 {
    let eig = symmetric_eigen(&dense_metric(i, factors));
    eig.values.last().copied().unwrap_or(f64::INFINITY)
}

/// Eigen-spectrum of a reference metric and the error of its best
/// `LL^T + εI` approximation at rank `r`.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub epsilon: f64,
    /// Measured `|G* − (LL^T + εI)|_F` for the top-r eigen construction.
    pub rank_r_error: f64,
    /// `sqrt(Σ_{i>r} (λ_i − ε)²)`.
    pub closed_form: f64,
    /// The constructed factor, row-major d×r.
    pub factor: Vec<f64>,
}

const SYMMETRY_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-8;

/// Builds `L = [sqrt(λ_1 − ε) u_1, …, sqrt(λ_r − ε) u_r]` from the top-r
/// eigenpairs and checks the measured Frobenius residual against the closed
/// form. Requires `λ_r ≥ ε` so every column is real.
pub fn spectrum_and_rank_error(reference: &SquareMatrix, rank: usize, epsilon: f64) -> Result<SpectrumReport> {
    let d = reference.n();
    if rank == 0 || rank > d {
        return Err(GssError::InvalidParameter(format!("rank {rank} outside 1..={d}")));
    }
    if !(epsilon > 0.0) {
        return Err(GssError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let asym = reference.max_asymmetry();
    if asym > SYMMETRY_TOL * reference.max_abs().max(1.0) {
        return Err(GssError::NotSymmetric(asym));
    }
    let eig = symmetric_eigen(reference);
    let smallest = eig.values[d - 1];
    if !(smallest > 0.0) {
        return Err(GssError::InvalidParameter(format!(
            "reference metric is not positive definite (smallest eigenvalue {smallest:e})"
        )));
    }
    let lambda_r = eig.values[rank - 1];
    if lambda_r < epsilon {
        return Err(GssError::BoundInapplicable { lambda_r, epsilon });
    }

    let mut factor = vec![0.0; d * rank];
    for k in 0..rank {
        let scale = (eig.values[k] - epsilon).sqrt();
        for a in 0..d {
            factor[a * rank + k] = scale * eig.vectors[(a, k)];
        }
    }
    let approx = dense_metric_from_slab(&factor, d, rank, epsilon);
    let rank_r_error = reference.frobenius_distance(&approx);
    let closed_form = eig.values[rank..]
        .iter()
        .map(|l| (l - epsilon) * (l - epsilon))
        .sum::<f64>()
        .sqrt();
    if (rank_r_error - closed_form).abs() > IDENTITY_TOL {
        return Err(GssError::Numeric(format!(
            "rank-{rank} residual {rank_r_error:e} departs from closed form {closed_form:e}"
        )));
    }
    Ok(SpectrumReport {
        eigenvalues: eig.values,
        rank,
        epsilon,
        rank_r_error,
        closed_form,
        factor,
    })
}
