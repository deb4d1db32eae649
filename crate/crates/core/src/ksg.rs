//! Kraskov–Stögbauer–Grassberger nearest-neighbour estimators: differential
//! entropy, mutual information, conditional mutual information, and transfer
//! entropy with its per-observation (local) decomposition. All values are in
//! nats.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::{KdTree, PointSet};

/// Digamma function ψ(x) for x > 0.
///
/// Shifts the argument above 6 with ψ(x) = ψ(x+1) − 1/x and finishes with
/// the asymptotic series; absolute error is below 1e-12.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            index: 0,
            reason: format!("digamma is defined here for finite x > 0, got {x}"),
        });
    }
    Ok(digamma_positive(x))
}

#[inline]
pub(crate) fn digamma_positive(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// ψ(n) for a positive integer count.
#[inline]
pub(crate) fn digamma_count(n: usize) -> f64 {
    digamma_positive(n as f64)
}

/// Embedding orders and neighbour count for a transfer-entropy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingConfig {
    /// Target history length `k`.
    pub target_order: usize,
    /// Source history length `l`.
    pub source_order: usize,
    /// Neighbour count `K`.
    pub neighbours: usize,
}

impl EmbeddingConfig {
    pub fn new(target_order: usize, source_order: usize, neighbours: usize) -> Self {
        EmbeddingConfig {
            target_order,
            source_order,
            neighbours,
        }
    }

    /// Longest history used; rows start at this offset.
    pub fn max_order(&self) -> usize {
        self.target_order.max(self.source_order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_order == 0 || self.source_order == 0 || self.neighbours == 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding orders and neighbour count must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// State-transition tuples `(x[t+1], x[t..t-k+1], y[t..t-l+1])`, one row per
/// usable time `t`. Row `r` corresponds to `t = r + max(k, l) - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPanel {
    pub next: Vec<f64>,
    /// Row-major `n_effective × k`, most recent value first.
    pub target_past: Vec<f64>,
    /// Row-major `n_effective × l`, most recent value first.
    pub source_past: Vec<f64>,
    pub target_order: usize,
    pub source_order: usize,
}

impl EmbeddedPanel {
    pub fn n_effective(&self) -> usize {
        self.next.len()
    }

    pub fn target_row(&self, r: usize) -> &[f64] {
        &self.target_past[r * self.target_order..(r + 1) * self.target_order]
    }

    pub fn source_row(&self, r: usize) -> &[f64] {
        &self.source_past[r * self.source_order..(r + 1) * self.source_order]
    }
}

pub fn embed(x: &[f64], y: &[f64], cfg: &EmbeddingConfig) -> Result<EmbeddedPanel> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "target has {} values, source has {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let m = cfg.max_order();
    if n < m + cfg.neighbours + 1 {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} too short for k={}, l={}, K={} (need {})",
            cfg.target_order,
            cfg.source_order,
            cfg.neighbours,
            m + cfg.neighbours + 1
        )));
    }
    let rows = n - m;
    let (k, l) = (cfg.target_order, cfg.source_order);
    let mut next = Vec::with_capacity(rows);
    let mut target_past = Vec::with_capacity(rows * k);
    let mut source_past = Vec::with_capacity(rows * l);
    for t in (m - 1)..(n - 1) {
        next.push(x[t + 1]);
        target_past.extend((0..k).map(|j| x[t - j]));
        source_past.extend((0..l).map(|j| y[t - j]));
    }
    Ok(EmbeddedPanel {
        next,
        target_past,
        source_past,
        target_order: k,
        source_order: l,
    })
}

/// Differential entropy of the points (nats), with `ε` taken as twice the
/// max-norm distance to the `K`-th neighbour.
pub fn ksg_entropy(points: &PointSet, neighbours: usize) -> Result<f64> {
    let n = points.len();
    if neighbours == 0 || n <= neighbours {
        return Err(Error::InvalidArgument(format!(
            "entropy needs N > K >= 1, got N={n}, K={neighbours}"
        )));
    }
    let tree = KdTree::build(points.clone());
    let eps: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| tree.kth_neighbor_distance(i, neighbours).map(|d| 2.0 * d))
        .collect::<Result<_>>()?;
    if let Some(i) = eps.iter().position(|e| *e == 0.0) {
        return Err(Error::Numeric(format!(
            "point {i} has {neighbours} exact duplicates; add jitter (see `jitter_series`) before estimating entropy"
        )));
    }
    let d = points.dim() as f64;
    let log_sum: f64 = eps.iter().map(|e| e.ln()).sum();
    Ok(digamma_count(n) - digamma_count(neighbours) + d * log_sum / n as f64)
}

/// A global estimate with its per-observation terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimate {
    pub global: f64,
    pub locals: Vec<f64>,
}

impl LocalEstimate {
    pub(crate) fn from_locals(locals: Vec<f64>) -> Self {
        let global = mean_in_order(&locals);
        LocalEstimate { global, locals }
    }
}

/// Sequential left-to-right mean; every estimator reduces with this so
/// results do not depend on how locals were scheduled.
pub(crate) fn mean_in_order(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

/// Local conditional-MI term: ψ(K) − ψ(n_xz+1) − ψ(n_yz+1) + ψ(n_z+1).
#[inline]
pub(crate) fn cmi_local(psi_k: f64, n_xz: usize, n_yz: usize, n_z: usize) -> f64 {
    psi_k - digamma_count(n_xz + 1) - digamma_count(n_yz + 1) + digamma_count(n_z + 1)
}

/// KSG (algorithm 1) mutual information between paired point sets.
pub fn ksg_mutual_info(x: &PointSet, y: &PointSet, neighbours: usize) -> Result<LocalEstimate> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Shape(format!("x has {n} points, y has {}", y.len())));
    }
    if neighbours == 0 || neighbours >= n {
        return Err(Error::InvalidArgument(format!(
            "mutual information needs 1 <= K < N, got K={neighbours}, N={n}"
        )));
    }
    let joint = KdTree::build(hstack(&[x, y])?);
    let tx = KdTree::build(x.clone());
    let ty = KdTree::build(y.clone());
    let base = digamma_count(neighbours) + digamma_count(n);
    let locals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let eps = joint.kth_neighbor_distance(i, neighbours)?;
            let nx = tx.count_within(i, eps, true)?;
            let ny = ty.count_within(i, eps, true)?;
            Ok(base - digamma_count(nx + 1) - digamma_count(ny + 1))
        })
        .collect::<Result<_>>()?;
    Ok(LocalEstimate::from_locals(locals))
}

/// KSG conditional mutual information I(X;Y|Z) from a single joint-space
/// ball per observation, with open-ball marginal counts.
pub fn ksg_conditional_mi(
    x: &PointSet,
    y: &PointSet,
    z: &PointSet,
    neighbours: usize,
) -> Result<LocalEstimate> {
    let n = x.len();
    if y.len() != n || z.len() != n {
        return Err(Error::Shape(format!(
            "lengths differ: x={n}, y={}, z={}",
            y.len(),
            z.len()
        )));
    }
    if neighbours == 0 || neighbours >= n {
        return Err(Error::InvalidArgument(format!(
            "conditional MI needs 1 <= K < N, got K={neighbours}, N={n}"
        )));
    }
    let joint = KdTree::build(hstack(&[x, z, y])?);
    let txz = KdTree::build(hstack(&[x, z])?);
    let tyz = KdTree::build(hstack(&[y, z])?);
    let tz = KdTree::build(z.clone());
    let psi_k = digamma_count(neighbours);
    let locals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let eps = joint.kth_neighbor_distance(i, neighbours)?;
            let n_xz = txz.count_within(i, eps, true)?;
            let n_yz = tyz.count_within(i, eps, true)?;
            let n_z = tz.count_within(i, eps, true)?;
            Ok(cmi_local(psi_k, n_xz, n_yz, n_z))
        })
        .collect::<Result<_>>()?;
    Ok(LocalEstimate::from_locals(locals))
}

fn hstack(parts: &[&PointSet]) -> Result<PointSet> {
    let n = parts[0].len();
    let dim: usize = parts.iter().map(|p| p.dim()).sum();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.point(i));
        }
    }
    PointSet::new(data, dim)
}

/// Transfer entropy `Y → X` with its local values.
#[derive(Debug, Clone, PartialEq)]
pub struct TeEstimate {
    pub global: f64,
    pub locals: Vec<f64>,
    pub config: EmbeddingConfig,
}

/// Input conditioning applied before embedding.
///
/// Each series is divided by its population standard deviation (so the
/// estimate does not depend on the units of either series), then perturbed
/// by seeded Gaussian noise of `jitter` standard deviations to break exact
/// ties such as repeated weekend values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeOptions {
    pub normalize: bool,
    pub jitter: Option<f64>,
    pub jitter_seed: u64,
}

impl Default for TeOptions {
    fn default() -> Self {
        TeOptions {
            normalize: true,
            jitter: Some(1e-8),
            jitter_seed: 0x6a69_7474_6572,
        }
    }
}

impl TeOptions {
    /// Estimate on the raw values.
    pub fn raw() -> Self {
        TeOptions {
            normalize: false,
            jitter: None,
            jitter_seed: 0,
        }
    }
}

/// Adds seeded Gaussian noise with standard deviation `amplitude · std(series)`.
pub fn jitter_series(series: &[f64], amplitude: f64, seed: u64) -> Vec<f64> {
    let sd = crate::prep::std_dev(series);
    let scale = if sd > 0.0 { amplitude * sd } else { amplitude };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    series
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + scale * e
        })
        .collect()
}

/// Applies [`TeOptions`] to a target/source pair.
pub fn condition_pair(x: &[f64], y: &[f64], opts: &TeOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let prep = |s: &[f64], stream: u64| -> Result<Vec<f64>> {
        let mut v = s.to_vec();
        if let Some(i) = v.iter().position(|a| !a.is_finite()) {
            return Err(Error::Domain {
                index: i,
                reason: "non-finite value in series".into(),
            });
        }
        if opts.normalize {
            let sd = crate::prep::std_dev(&v);
            if sd > 0.0 {
                v.iter_mut().for_each(|a| *a /= sd);
            }
        }
        if let Some(a) = opts.jitter {
            v = jitter_series(&v, a, opts.jitter_seed ^ stream);
        }
        Ok(v)
    };
    Ok((prep(x, 0)?, prep(y, 0x9e37_79b9_7f4a_7c15)?))
}

/// Transfer entropy from an already embedded panel: the conditional mutual
/// information I(x_next ; y_past | x_past).
pub fn estimate_embedded(panel: &EmbeddedPanel, neighbours: usize) -> Result<LocalEstimate> {
    let next = PointSet::new(panel.next.clone(), 1)?;
    let tp = PointSet::new(panel.target_past.clone(), panel.target_order)?;
    let sp = PointSet::new(panel.source_past.clone(), panel.source_order)?;
    ksg_conditional_mi(&next, &sp, &tp, neighbours)
}

pub fn transfer_entropy(x: &[f64], y: &[f64], cfg: &EmbeddingConfig) -> Result<TeEstimate> {
    transfer_entropy_with(x, y, cfg, &TeOptions::default())
}

pub fn transfer_entropy_with(
    x: &[f64],
    y: &[f64],
    cfg: &EmbeddingConfig,
    opts: &TeOptions,
) -> Result<TeEstimate> {
    let (xc, yc) = condition_pair(x, y, opts)?;
    let panel = embed(&xc, &yc, cfg)?;
    let est = estimate_embedded(&panel, cfg.neighbours)?;
    Ok(TeEstimate {
        global: est.global,
        locals: est.locals,
        config: *cfg,
    })
}
