//! KSG entropy and mutual information on Gaussian samples against their
//! closed forms.

use infoflow::knn::PointSet;
use infoflow::ksg::{ksg_entropy, ksg_mutual_info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> infoflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 5000;
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let h = ksg_entropy(&PointSet::new(z.clone(), 1)?, 4)?;
    let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    println!("entropy N(0,1): {h:.4} nats (exact {exact:.4})");

    for rho in [0.0, 0.3, 0.6, 0.9] {
        let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = z.iter().zip(&w).map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b).collect();
        let mi = ksg_mutual_info(&PointSet::new(z.clone(), 1)?, &PointSet::new(y, 1)?, 4)?.global;
        println!("MI rho={rho}: {mi:.4} nats (exact {:.4})", -0.5 * (1.0 - rho * rho).ln());
    }
    Ok(())
}
