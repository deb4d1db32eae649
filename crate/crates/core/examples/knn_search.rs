//! k-d tree neighbour queries under the max norm, checked against a scan.

use infoflow::knn::{chebyshev, KdTree, PointSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> infoflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, dim) = (2000, 3);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tree = KdTree::build(PointSet::new(data, dim)?);
    let pts = tree.points();
    let i = 17;
    let nearest = tree.k_nearest(i, 4)?;
    println!("4 nearest to point {i}: {nearest:?}");
    let radius = nearest[3].0;
    let scan = (0..n).filter(|&j| j != i && chebyshev(pts.point(i), pts.point(j)) < radius).count();
    println!("strictly within {radius:.5}: tree {} scan {scan}", tree.count_within(i, radius, true)?);
    Ok(())
}
