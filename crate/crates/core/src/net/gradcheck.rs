//! Central finite-difference check of the analytic gradients.

use ndarray::ArrayView3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{layers::bce_loss, Mode, Network};
use crate::error::Result;

pub const STEP: f64 = 1e-6;

/// Denominator floor of the relative error. One ulp of a loss near 0.7
/// differenced over `2·STEP` is already 5e-11, and a deep forward pass
/// drifts by a few ulps, so gradients smaller than this floor are compared
/// in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

/// One-sided slopes disagreeing by more than this fraction mark a kink
/// (a ReLU or max-pool switch within `STEP`); the central difference is
/// meaningless there and the coordinate is skipped.
pub const KINK_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (tensor, flat index) of the worst coordinate.
    pub worst: (usize, usize),
    /// Analytic and numeric values at `worst`.
    pub worst_pair: (f64, f64),
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped at kinks.
    pub kinks: usize,
}

/// Compares `loss_and_grad` against `(L(θ+h) - L(θ-h)) / 2h` on up to
/// `per_tensor` coordinates of every parameter tensor (all of them when the
/// tensor is small). With `dropout_seed` the network runs in training mode
/// and every evaluation redraws the same masks.
pub fn check_gradients(
    net: &Network,
    x: ArrayView3<f64>,
    labels: &[f64],
    dropout_seed: Option<u64>,
    per_tensor: usize,
    sample_seed: u64,
) -> Result<GradCheck> {
    let loss_of = |n: &Network| -> Result<f64> {
        let p = match dropout_seed {
            Some(s) => n.forward(x, Mode::Train(&mut ChaCha8Rng::seed_from_u64(s)))?,
            None => n.forward(x, Mode::Eval)?,
        };
        bce_loss(&p, labels)
    };
    let analytic = match dropout_seed {
        Some(s) => net.loss_and_grad(x, labels, Mode::Train(&mut ChaCha8Rng::seed_from_u64(s)))?.2,
        None => net.loss_and_grad(x, labels, Mode::Eval)?.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut probe = net.clone();
    let base = loss_of(net)?;
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), worst_pair: (0.0, 0.0), checked: 0, kinks: 0 };
    for (k, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let coords: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, per_tensor).into_vec()
        };
        for idx in coords {
            let original = net.params[k].as_slice().expect("standard layout")[idx];
            probe.params[k].as_slice_mut().expect("standard layout")[idx] = original + STEP;
            let up = loss_of(&probe)?;
            probe.params[k].as_slice_mut().expect("standard layout")[idx] = original - STEP;
            let down = loss_of(&probe)?;
            probe.params[k].as_slice_mut().expect("standard layout")[idx] = original;
            let (ahead, behind) = ((up - base) / STEP, (base - down) / STEP);
            if (ahead - behind).abs() > KINK_TOL * ahead.abs().max(behind.abs()).max(REL_FLOOR) {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad.as_slice().expect("standard layout")[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, idx);
                report.worst_pair = (a, numeric);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
