//! Finite-difference gradient check of every preset.

use infoflow::net::gradcheck::check_gradients;
use infoflow::net::{Network, Preset};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> infoflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array3::from_shape_fn((2, 14, 3), |_| rng.random_range(-1.0..1.0));
    let y = [1.0, 0.0];
    for p in Preset::ALL {
        let net = Network::new(&p.spec(0.5), 14, 3, 1)?;
        let r = check_gradients(&net, x.view(), &y, Some(9), 20, 2)?;
        println!(
            "{p} ({}): {} coordinates, {} at kinks, max relative error {:.2e}",
            p.description(),
            r.checked,
            r.kinks,
            r.max_rel_error
        );
    }
    Ok(())
}
