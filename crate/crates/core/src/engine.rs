//! Dense pairwise engine for many transfer-entropy evaluations on one
//! target/source pair.
//!
//! The selection grid evaluates the same pair under every `(k, l, K)` and
//! many source permutations. Max-norm distances between embedded rows are
//! maxima of per-lag absolute differences, so they can be tabulated once per
//! `(k, l)` as time-by-time matrices. A permuted source only re-indexes the
//! source matrix, and one pass over a row yields the neighbour radii for every
//! `K` at once.
//!
//! Results are bit-identical to [`crate::ksg::estimate_embedded`] on the
//! (permuted) embedded panel: the same distances are compared and the locals
//! are reduced in the same order.

use crate::error::{Error, Result};
use crate::ksg::{cmi_local, condition_pair, digamma_count, LocalEstimate, TeOptions};

/// Square matrix over time indices `0..dim`.
#[derive(Debug, Clone)]
struct TimeMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TimeMatrix {
    fn lagged_abs_diff(series: &[f64], dim: usize, lag: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for t in lag..dim {
            let a = series[t - lag];
            let row = &mut data[t * dim..(t + 1) * dim];
            for s in lag..dim {
                row[s] = (a - series[s - lag]).abs();
            }
        }
        TimeMatrix { dim, data }
    }

    /// Elementwise max of `|series[t-j] - series[s-j]|` over lags `j < order`.
    fn history(series: &[f64], dim: usize, order: usize) -> Self {
        let mut acc = TimeMatrix::lagged_abs_diff(series, dim, 0);
        for lag in 1..order {
            let next = TimeMatrix::lagged_abs_diff(series, dim, lag);
            acc.max_assign(&next);
        }
        acc
    }

    fn max_assign(&mut self, other: &TimeMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            if *b > *a {
                *a = *b;
            }
        }
    }

    #[inline]
    fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Conditioned target/source pair ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct TeEngine {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TeEngine {
    pub fn new(x: &[f64], y: &[f64], opts: &TeOptions) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!(
                "target has {} values, source has {}",
                x.len(),
                y.len()
            )));
        }
        let (x, y) = condition_pair(x, y, opts)?;
        Ok(TeEngine { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows available for history length `max(k, l)`.
    pub fn n_effective(&self, max_order: usize) -> usize {
        self.x.len().saturating_sub(max_order)
    }

    /// Tabulates distances for target order `k` and source order `l`.
    pub fn orders(&self, target_order: usize, source_order: usize) -> Result<OrderTables> {
        if target_order == 0 || source_order == 0 {
            return Err(Error::InvalidArgument("embedding orders must be >= 1".into()));
        }
        let n = self.x.len();
        let m = target_order.max(source_order);
        if n < m + 2 {
            return Err(Error::InvalidArgument(format!(
                "series of length {n} too short for k={target_order}, l={source_order}"
            )));
        }
        // Time t indexes rows with next value x[t+1].
        let dim = n - 1;
        let next: Vec<f64> = self.x[1..].to_vec();
        let dn = TimeMatrix::lagged_abs_diff(&next, dim, 0);
        let dx = TimeMatrix::history(&self.x[..dim], dim, target_order);
        let mut bx = dx.clone();
        bx.max_assign(&dn);
        let dy = TimeMatrix::history(&self.y[..dim], dim, source_order);
        Ok(OrderTables {
            offset: m - 1,
            rows: n - m,
            dx,
            bx,
            dy,
        })
    }
}

/// Distance tables for one `(k, l)`.
#[derive(Debug, Clone)]
pub struct OrderTables {
    offset: usize,
    rows: usize,
    /// Target-history distances (the conditioning space).
    dx: TimeMatrix,
    /// max(next, target history).
    bx: TimeMatrix,
    /// Source-history distances.
    dy: TimeMatrix,
}

impl OrderTables {
    pub fn n_effective(&self) -> usize {
        self.rows
    }

    /// Estimates for each neighbour count in `neighbours`, with source rows
    /// optionally permuted (`perm[r]` is the source row placed at row `r`).
    pub fn estimate(&self, neighbours: &[usize], perm: Option<&[usize]>) -> Result<Vec<LocalEstimate>> {
        let n = self.rows;
        let kmax = neighbours.iter().copied().max().unwrap_or(0);
        if neighbours.is_empty() || neighbours.contains(&0) || kmax >= n {
            return Err(Error::InvalidArgument(format!(
                "neighbour counts {neighbours:?} need 1 <= K < {n}"
            )));
        }
        if let Some(p) = perm {
            if p.len() != n {
                return Err(Error::Shape(format!("permutation of length {} for {n} rows", p.len())));
            }
        }
        let o = self.offset;
        let src = |r: usize| perm.map_or(r, |p| p[r]) + o;

        let mut locals: Vec<Vec<f64>> = vec![Vec::with_capacity(n); neighbours.len()];
        let psi: Vec<f64> = neighbours.iter().map(|&k| digamma_count(k)).collect();
        let mut best = vec![f64::INFINITY; kmax];
        let mut hist = vec![[0usize; 3]; kmax + 1];
        let src_times: Vec<usize> = (0..n).map(src).collect();
        let mut order: Vec<(usize, usize)> =
            neighbours.iter().copied().enumerate().map(|(q, k)| (k, q)).collect();
        order.sort_unstable();

        for i in 0..n {
            let ti = i + o;
            let bx_row = &self.bx.row(ti)[o..o + n];
            let dx_row = &self.dx.row(ti)[o..o + n];
            let dy_row = self.dy.row(src_times[i]);

            best.iter_mut().for_each(|b| *b = f64::INFINITY);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = bx_row[j].max(dy_row[src_times[j]]);
                if d < best[kmax - 1] {
                    let mut pos = kmax - 1;
                    while pos > 0 && best[pos - 1] > d {
                        best[pos] = best[pos - 1];
                        pos -= 1;
                    }
                    best[pos] = d;
                }
            }
            let eps_max = best[kmax - 1];

            hist.iter_mut().for_each(|h| *h = [0; 3]);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let a = dx_row[j];
                if a >= eps_max {
                    continue;
                }
                let b = bx_row[j];
                let c = a.max(dy_row[src_times[j]]);
                // Marginal distance v lies strictly inside the ball of rank K
                // iff v < best[K-1]; bucket by the first such rank.
                hist[best.partition_point(|e| *e <= a)][0] += 1;
                hist[best.partition_point(|e| *e <= b)][1] += 1;
                hist[best.partition_point(|e| *e <= c)][2] += 1;
            }
            // counts for rank K = sum of buckets 0..K.
            let mut cum = [0usize; 3];
            let mut next_rank = 0;
            for &(k, q) in &order {
                while next_rank < k {
                    for c in 0..3 {
                        cum[c] += hist[next_rank][c];
                    }
                    next_rank += 1;
                }
                let (n_z, n_xz, n_yz) = (cum[0], cum[1], cum[2]);
                locals[q].push(cmi_local(psi[q], n_xz, n_yz, n_z));
            }
        }
        Ok(locals.into_iter().map(LocalEstimate::from_locals).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ksg::{embed, estimate_embedded, EmbeddingConfig};
    use crate::sig::{permute_source_with, surrogate_permutation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(seed: u64, n: usize, coarse: bool) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            if coarse {
                rng.random_range(0..6) as f64
            } else {
                rng.random::<f64>()
            }
        };
        let y: Vec<f64> = (0..n).map(|_| draw()).collect();
        let mut x = vec![draw()];
        for t in 1..n {
            x.push(0.5 * x[t - 1] + y[t - 1] + draw());
        }
        (x, y)
    }

    #[test]
    fn matches_tree_route_exactly() {
        for (seed, coarse) in [(1, false), (2, true), (3, false)] {
            let (x, y) = series(seed, 90, coarse);
            let opts = if coarse { TeOptions::raw() } else { TeOptions::default() };
            let engine = TeEngine::new(&x, &y, &opts).unwrap();
            let (xc, yc) = condition_pair(&x, &y, &opts).unwrap();
            for (k, l) in [(1, 1), (2, 3), (4, 1), (3, 5)] {
                let tables = engine.orders(k, l).unwrap();
                let ks = [1, 3, 4, 7];
                let perm = surrogate_permutation(tables.n_effective(), seed, 5);
                let fast_obs = tables.estimate(&ks, None).unwrap();
                let fast_sur = tables.estimate(&ks, Some(&perm)).unwrap();
                for (q, &kk) in ks.iter().enumerate() {
                    let cfg = EmbeddingConfig::new(k, l, kk);
                    let panel = embed(&xc, &yc, &cfg).unwrap();
                    let slow = estimate_embedded(&panel, kk).unwrap();
                    assert_eq!(fast_obs[q], slow, "k={k} l={l} K={kk}");
                    let shuffled = permute_source_with(&panel, &perm).unwrap();
                    let slow = estimate_embedded(&shuffled, kk).unwrap();
                    assert_eq!(fast_sur[q], slow, "perm k={k} l={l} K={kk}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_neighbour_counts() {
        let (x, y) = series(4, 20, false);
        let engine = TeEngine::new(&x, &y, &TeOptions::default()).unwrap();
        let t = engine.orders(2, 2).unwrap();
        assert!(t.estimate(&[0], None).is_err());
        assert!(t.estimate(&[18], None).is_err());
        assert!(t.estimate(&[2], Some(&[0, 1])).is_err());
        assert!(engine.orders(19, 1).is_err());
    }
}
