//! Seeded k-means++ initialisation followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{DenseRows, Element};
use crate::error::{GssError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    /// `k × d` row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    /// Number of times an empty cluster was reseeded.
    pub repaired: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans<T: Element>(points: &DenseRows<T>, k: usize, iter_cap: usize, seed: u64) -> Result<KMeansResult> {
    let m = points.len();
    let d = points.dim();
    if k == 0 || k > m {
        return Err(GssError::InvalidParameter(format!(
            "k-means needs 1 <= k <= {m} points, got k = {k}"
        )));
    }
    let x: Vec<f64> = points.as_slice().iter().map(|v| v.to_f64()).collect();
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding; once every remaining point coincides with a centre,
    // the lowest-index unchosen point is taken.
    let mut chosen = vec![false; m];
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..m);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..m).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = (0..m).filter(|&i| !chosen[i]).map(|i| nearest[i]).sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = None;
            for i in (0..m).filter(|&i| !chosen[i]) {
                if nearest[i] > 0.0 {
                    pick = Some(i);
                    if target < nearest[i] {
                        break;
                    }
                    target -= nearest[i];
                }
            }
            pick.expect("positive mass implies a candidate")
        } else {
            (0..m).find(|&i| !chosen[i]).expect("k <= m")
        };
        chosen[pick] = true;
        centroids.extend_from_slice(row(pick));
        for i in 0..m {
            nearest[i] = nearest[i].min(sq_dist(row(i), row(pick)));
        }
    }

    let mut assignment: Vec<usize> = Vec::new();
    let mut wcss_history = Vec::new();
    let mut repaired = 0;
    let mut iterations = 0;
    while iterations < iter_cap.max(1) {
        let next: Vec<usize> = (0..m)
            .into_par_iter()
            .map(|i| {
                let p = row(i);
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let dist = sq_dist(p, &centroids[c * d..(c + 1) * d]);
                    if dist < best.0 {
                        best = (dist, c);
                    }
                }
                best.1
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        iterations += 1;

        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let donor = (0..m)
                .filter(|&i| sizes[assignment[i]] > 1)
                .map(|i| {
                    let a = assignment[i];
                    (sq_dist(row(i), &centroids[a * d..(a + 1) * d]), i)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            let Some((_, i)) = donor else { break };
            sizes[assignment[i]] -= 1;
            assignment[i] = c;
            sizes[c] = 1;
            repaired += 1;
        }

        let mut sums = vec![0.0; k * d];
        for (i, &a) in assignment.iter().enumerate() {
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / sizes[c] as f64;
                }
            }
        }
        let wcss = (0..m)
            .map(|i| {
                let a = assignment[i];
                sq_dist(row(i), &centroids[a * d..(a + 1) * d])
            })
            .sum();
        wcss_history.push(wcss);
    }

    Ok(KMeansResult {
        assignment,
        centroids,
        dim: d,
        wcss_history,
        iterations,
        repaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    /// Box-Muller pair of standard normals.
    fn normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u.ln()).sqrt();
        let t = std::f64::consts::TAU * v;
        (r * t.cos(), r * t.sin())
    }

    fn points(rows: &[Vec<f64>]) -> DenseRows<f64> {
        DenseRows::from_f64_rows(rows, "points").unwrap()
    }

    #[test]
    fn k_equals_m_gives_zero_wcss() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&points(&rows), 7, 50, 1).unwrap();
        assert_eq!(r.wcss(), 0.0);
        let mut seen = r.assignment.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let radius = 1.0;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, cx) in [(0usize, 0.0), (1, 10.0 * radius)] {
            for _ in 0..40 {
                let (a, b) = normal_pair(&mut rng);
                let scale = radius / 3.0;
                rows.push(vec![cx + (a * scale).clamp(-radius, radius), (b * scale).clamp(-radius, radius)]);
                labels.push(label);
            }
        }
        let r = kmeans(&points(&rows), 2, 100, 4).unwrap();
        // brute-force check: every pair shares a cluster iff it shares a blob
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                assert_eq!(r.assignment[i] == r.assignment[j], labels[i] == labels[j]);
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic_and_k_too_large_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let a = kmeans(&points(&rows), 6, 30, 9).unwrap();
        let b = kmeans(&points(&rows), 6, 30, 9).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&points(&rows), 61, 30, 9).is_err());
        assert!(kmeans(&points(&rows), 0, 30, 9).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let rows = vec![vec![1.0, 1.0]; 5];
        let r = kmeans(&points(&rows), 3, 20, 2).unwrap();
        assert_eq!(r.cluster_sizes().iter().filter(|&&s| s > 0).count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn wcss_is_nonincreasing(seed in 0u64..1000, m in 2usize..80, k_frac in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let k = ((k_frac * m as f64) as usize).clamp(1, m);
            let r = kmeans(&points(&rows), k, 100, seed).unwrap();
            for w in r.wcss_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", r.wcss_history);
            }
            prop_assert_eq!(r.assignment.len(), m);
            prop_assert!(r.assignment.iter().all(|&a| a < k));
        }
    }
}
