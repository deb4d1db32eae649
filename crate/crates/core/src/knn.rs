//! Exact neighbour search under the maximum (Chebyshev) norm.
//!
//! [`KdTree`] answers k-th neighbour distances and radius counts for points
//! of the indexed set. A point never counts as its own neighbour; exclusion
//! is by index, so exact duplicates at distance zero are still neighbours.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// An `n × d` point matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("point dimension must be at least 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                index: pos / dim,
                reason: format!("non-finite coordinate {} in dimension {}", data[pos], pos % dim),
            });
        }
        Ok(PointSet { data, dim })
    }

    /// Column-stacks equally long 1-d series into points.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::InvalidArgument("no columns".into()));
        };
        let n = first.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            for c in columns {
                data.push(c[i]);
            }
        }
        PointSet::new(data, columns.len())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Maximum-norm distance.
#[inline]
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d > m {
            d
        } else {
            m
        }
    })
}

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    /// Child node indices; `None` for leaves.
    children: Option<(usize, usize)>,
}

/// Neighbour candidate ordered by `(distance, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Static k-d tree over a [`PointSet`].
#[derive(Debug, Clone)]
pub struct KdTree {
    points: PointSet,
    order: Vec<usize>,
    position: Vec<usize>,
    nodes: Vec<Node>,
    /// Per-node bounding boxes: `lo[0..d], hi[0..d]`.
    bounds: Vec<f64>,
}

impl KdTree {
    pub fn build(points: PointSet) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            order: (0..n).collect(),
            position: vec![0; n],
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            bounds: Vec::new(),
            points,
        };
        tree.split(0, n);
        for (pos, &idx) in tree.order.iter().enumerate() {
            tree.position[idx] = pos;
        }
        tree
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let d = self.points.dim;
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            children: None,
        });
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &self.order[start..end] {
            for (j, v) in self.points.point(i).iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        let (axis, spread) = (0..d)
            .map(|j| (j, hi[j] - lo[j]))
            .fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if spread <= 0.0 {
            // All points identical: keep as a (large) leaf.
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts.point(a)[axis]
                .total_cmp(&pts.point(b)[axis])
                .then(a.cmp(&b))
        });
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn node_bounds(&self, node: usize) -> (&[f64], &[f64]) {
        let d = self.points.dim;
        let b = &self.bounds[node * 2 * d..(node + 1) * 2 * d];
        b.split_at(d)
    }

    /// Smallest max-norm distance from `q` to the node's box.
    fn min_dist(&self, node: usize, q: &[f64]) -> f64 {
        let (lo, hi) = self.node_bounds(node);
        let mut m: f64 = 0.0;
        for j in 0..q.len() {
            let gap = if q[j] < lo[j] {
                lo[j] - q[j]
            } else if q[j] > hi[j] {
                q[j] - hi[j]
            } else {
                0.0
            };
            m = m.max(gap);
        }
        m
    }

    /// Largest max-norm distance from `q` to any point of the node's box.
    fn max_dist(&self, node: usize, q: &[f64]) -> f64 {
        let (lo, hi) = self.node_bounds(node);
        let mut m: f64 = 0.0;
        for j in 0..q.len() {
            m = m.max((q[j] - lo[j]).abs()).max((hi[j] - q[j]).abs());
        }
        m
    }

    /// The `k` nearest other points of point `i`, sorted by `(distance, index)`.
    pub fn k_nearest(&self, i: usize, k: usize) -> Result<Vec<(f64, usize)>> {
        self.check_query(i, k)?;
        let q = self.points.point(i);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, q, i, k, &mut heap);
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|c| (c.dist, c.index)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out)
    }

    fn knn_visit(&self, node: usize, q: &[f64], skip: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if heap.len() == k {
            if let Some(worst) = heap.peek() {
                if self.min_dist(node, q) > worst.dist {
                    return;
                }
            }
        }
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &idx in &self.order[n.start..n.end] {
                    if idx == skip {
                        continue;
                    }
                    let c = Candidate {
                        dist: chebyshev(q, self.points.point(idx)),
                        index: idx,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if let Some(worst) = heap.peek() {
                        if c < *worst {
                            heap.pop();
                            heap.push(c);
                        }
                    }
                }
            }
            Some((l, r)) => {
                let (first, second) = if self.min_dist(l, q) <= self.min_dist(r, q) {
                    (l, r)
                } else {
                    (r, l)
                };
                self.knn_visit(first, q, skip, k, heap);
                self.knn_visit(second, q, skip, k, heap);
            }
        }
    }

    /// Max-norm distance from point `i` to its `k`-th nearest other point.
    pub fn kth_neighbor_distance(&self, i: usize, k: usize) -> Result<f64> {
        Ok(self.k_nearest(i, k)?[k - 1].0)
    }

    /// Number of other points within `radius` of point `i`; `strict` counts
    /// the open ball (`< radius`), otherwise the closed ball.
    pub fn count_within(&self, i: usize, radius: f64, strict: bool) -> Result<usize> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "query index {i} out of range for {} points",
                self.len()
            )));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative radius {radius}")));
        }
        let q = self.points.point(i);
        Ok(self.count_visit(0, q, i, radius, strict))
    }

    fn count_visit(&self, node: usize, q: &[f64], skip: usize, radius: f64, strict: bool) -> usize {
        let inside = |d: f64| if strict { d < radius } else { d <= radius };
        if !inside(self.min_dist(node, q)) {
            return 0;
        }
        let n = &self.nodes[node];
        if inside(self.max_dist(node, q)) {
            let pos = self.position[skip];
            let own = usize::from(pos >= n.start && pos < n.end);
            return n.end - n.start - own;
        }
        match n.children {
            None => self.order[n.start..n.end]
                .iter()
                .filter(|&&idx| idx != skip && inside(chebyshev(q, self.points.point(idx))))
                .count(),
            Some((l, r)) => {
                self.count_visit(l, q, skip, radius, strict) + self.count_visit(r, q, skip, radius, strict)
            }
        }
    }

    fn check_query(&self, i: usize, k: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "query index {i} out of range for {} points",
                self.len()
            )));
        }
        if k == 0 || k >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "neighbour rank {k} needs 1 <= k <= n-1 with n = {}",
                self.len()
            )));
        }
        Ok(())
    }
}
