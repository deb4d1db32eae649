//! Forward and backward passes of the individual layers on batches.
//!
//! Sequences are `(batch, time, features)`, flat activations are
//! `(batch, features)`. Biases are stored as `1 × n` matrices.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Gate blocks in the fused weight matrices, in column order.
pub const FORGET: usize = 0;
pub const INPUT: usize = 1;
pub const CANDIDATE: usize = 2;
pub const OUTPUT: usize = 3;

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array3<f64>,
    /// h[:, t+1] is the state after step t; h[:, 0] = 0.
    h: Array3<f64>,
    c: Array3<f64>,
    /// Activated gates, `(batch, time, 4H)` in [`FORGET`]..[`OUTPUT`] order.
    gates: Array3<f64>,
    tanh_c: Array3<f64>,
}

/// LSTM over the whole sequence, zero initial state. `u`: F × 4H, `w`:
/// H × 4H, `b`: 1 × 4H. Returns every hidden state `(batch, time, H)`.
///
/// g = σ(x U_g + h W_g + b_g), i = σ(...), c̃ = tanh(...), o = σ(...),
/// c_t = g ⊙ c_{t-1} + i ⊙ c̃, h_t = o ⊙ tanh(c_t).
pub fn lstm_forward(
    u: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
    x: ArrayView3<f64>,
) -> (Array3<f64>, LstmCache) {
    let (batch, time, _) = x.dim();
    let hidden = w.nrows();
    let mut h = Array3::<f64>::zeros((batch, time + 1, hidden));
    let mut c = Array3::<f64>::zeros((batch, time + 1, hidden));
    let mut gates = Array3::zeros((batch, time, 4 * hidden));
    let mut tanh_c = Array3::zeros((batch, time, hidden));
    for t in 0..time {
        let mut z = x.slice(s![.., t, ..]).dot(u) + h.slice(s![.., t, ..]).dot(w);
        z += &b.row(0);
        for bi in 0..batch {
            for j in 0..hidden {
                let g = sigmoid(z[[bi, FORGET * hidden + j]]);
                let i = sigmoid(z[[bi, INPUT * hidden + j]]);
                let cand = z[[bi, CANDIDATE * hidden + j]].tanh();
                let o = sigmoid(z[[bi, OUTPUT * hidden + j]]);
                let ct = g * c[[bi, t, j]] + i * cand;
                let tc = ct.tanh();
                c[[bi, t + 1, j]] = ct;
                h[[bi, t + 1, j]] = o * tc;
                tanh_c[[bi, t, j]] = tc;
                gates[[bi, t, FORGET * hidden + j]] = g;
                gates[[bi, t, INPUT * hidden + j]] = i;
                gates[[bi, t, CANDIDATE * hidden + j]] = cand;
                gates[[bi, t, OUTPUT * hidden + j]] = o;
            }
        }
    }
    let out = h.slice(s![.., 1.., ..]).to_owned();
    (
        out,
        LstmCache {
            x: x.to_owned(),
            h,
            c,
            gates,
            tanh_c,
        },
    )
}

pub struct LstmGrads {
    pub dx: Array3<f64>,
    pub du: Array2<f64>,
    pub dw: Array2<f64>,
    pub db: Array2<f64>,
}

/// Backpropagation through time given the loss gradient for every output
/// state (zeros where a state is not used).
pub fn lstm_backward(u: &Array2<f64>, w: &Array2<f64>, cache: &LstmCache, d_out: ArrayView3<f64>) -> LstmGrads {
    let (batch, time, _) = cache.x.dim();
    let hidden = w.nrows();
    let mut dx = Array3::zeros(cache.x.dim());
    let mut du = Array2::zeros(u.dim());
    let mut dw = Array2::zeros(w.dim());
    let mut db = Array2::zeros((1, 4 * hidden));
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = Array2::<f64>::zeros((batch, hidden));
    let mut dz = Array2::<f64>::zeros((batch, 4 * hidden));
    for t in (0..time).rev() {
        for bi in 0..batch {
            for j in 0..hidden {
                let g = cache.gates[[bi, t, FORGET * hidden + j]];
                let i = cache.gates[[bi, t, INPUT * hidden + j]];
                let cand = cache.gates[[bi, t, CANDIDATE * hidden + j]];
                let o = cache.gates[[bi, t, OUTPUT * hidden + j]];
                let tc = cache.tanh_c[[bi, t, j]];
                let dh = d_out[[bi, t, j]] + dh_next[[bi, j]];
                let dc = dc_next[[bi, j]] + dh * o * (1.0 - tc * tc);
                let c_prev = cache.c[[bi, t, j]];
                dz[[bi, FORGET * hidden + j]] = dc * c_prev * g * (1.0 - g);
                dz[[bi, INPUT * hidden + j]] = dc * cand * i * (1.0 - i);
                dz[[bi, CANDIDATE * hidden + j]] = dc * i * (1.0 - cand * cand);
                dz[[bi, OUTPUT * hidden + j]] = dh * tc * o * (1.0 - o);
                dc_next[[bi, j]] = dc * g;
            }
        }
        let xt = cache.x.slice(s![.., t, ..]);
        let h_prev = cache.h.slice(s![.., t, ..]);
        du += &xt.t().dot(&dz);
        dw += &h_prev.t().dot(&dz);
        db += &dz.sum_axis(Axis(0));
        dx.slice_mut(s![.., t, ..]).assign(&dz.dot(&u.t()));
        dh_next = dz.dot(&w.t());
    }
    LstmGrads { dx, du, dw, db }
}

pub fn reverse_time(x: ArrayView3<f64>) -> Array3<f64> {
    x.slice(s![.., ..;-1, ..]).to_owned()
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    /// Per sample im2col patches, `(batch, out_time, width·channels)`.
    patches: Array3<f64>,
    active: Array3<bool>,
    in_dim: (usize, usize, usize),
}

/// Valid 1-D convolution with stride 1 followed by ReLU. `k`:
/// (width·channels) × filters with row `j·channels + c`.
pub fn conv1d_forward(k: &Array2<f64>, b: &Array2<f64>, x: ArrayView3<f64>, width: usize) -> (Array3<f64>, ConvCache) {
    let (batch, time, channels) = x.dim();
    let out_time = time + 1 - width;
    let filters = k.ncols();
    let mut patches = Array3::zeros((batch, out_time, width * channels));
    let mut out = Array3::zeros((batch, out_time, filters));
    for bi in 0..batch {
        for t in 0..out_time {
            for j in 0..width {
                patches
                    .slice_mut(s![bi, t, j * channels..(j + 1) * channels])
                    .assign(&x.slice(s![bi, t + j, ..]));
            }
        }
        let mut z = patches.slice(s![bi, .., ..]).dot(k);
        z += &b.row(0);
        out.slice_mut(s![bi, .., ..]).assign(&z);
    }
    let active = out.mapv(|v| v > 0.0);
    out.mapv_inplace(relu);
    (
        out,
        ConvCache {
            patches,
            active,
            in_dim: (batch, time, channels),
        },
    )
}

pub fn conv1d_backward(
    k: &Array2<f64>,
    cache: &ConvCache,
    d_out: ArrayView3<f64>,
    width: usize,
) -> (Array3<f64>, Array2<f64>, Array2<f64>) {
    let (batch, _, channels) = cache.in_dim;
    let mut dk = Array2::zeros(k.dim());
    let mut db = Array2::zeros((1, k.ncols()));
    let mut dx = Array3::zeros(cache.in_dim);
    let mut dz = d_out.to_owned();
    Zip::from(&mut dz).and(&cache.active).for_each(|d, a| {
        if !*a {
            *d = 0.0;
        }
    });
    for bi in 0..batch {
        let dzb = dz.slice(s![bi, .., ..]);
        dk += &cache.patches.slice(s![bi, .., ..]).t().dot(&dzb);
        db += &dzb.sum_axis(Axis(0));
        let dp = dzb.dot(&k.t());
        for t in 0..dp.nrows() {
            for j in 0..width {
                let mut target = dx.slice_mut(s![bi, t + j, ..]);
                target += &dp.slice(s![t, j * channels..(j + 1) * channels]);
            }
        }
    }
    (dx, dk, db)
}

/// Non-overlapping max pooling over time; a trailing remainder shorter
/// than `width` is dropped. Ties go to the earliest position.
pub fn maxpool_forward(x: ArrayView3<f64>, width: usize) -> (Array3<f64>, Array3<usize>) {
    let (batch, time, channels) = x.dim();
    let out_time = time / width;
    let mut out = Array3::zeros((batch, out_time, channels));
    let mut arg = Array3::zeros((batch, out_time, channels));
    for bi in 0..batch {
        for t in 0..out_time {
            for c in 0..channels {
                let mut best = t * width;
                for j in 1..width {
                    if x[[bi, t * width + j, c]] > x[[bi, best, c]] {
                        best = t * width + j;
                    }
                }
                out[[bi, t, c]] = x[[bi, best, c]];
                arg[[bi, t, c]] = best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(arg: &Array3<usize>, d_out: ArrayView3<f64>, in_time: usize) -> Array3<f64> {
    let (batch, out_time, channels) = d_out.dim();
    let mut dx = Array3::zeros((batch, in_time, channels));
    for bi in 0..batch {
        for t in 0..out_time {
            for c in 0..channels {
                dx[[bi, arg[[bi, t, c]], c]] += d_out[[bi, t, c]];
            }
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => relu(v),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activated output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn dense_forward(w: &Array2<f64>, b: &Array2<f64>, x: ArrayView2<f64>, act: Activation) -> Array2<f64> {
    let mut z = x.dot(w);
    z += &b.row(0);
    z.mapv_inplace(|v| act.apply(v));
    z
}

/// Returns `(dx, dw, db)` given the activated output `y`.
pub fn dense_backward(
    w: &Array2<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    d_out: ArrayView2<f64>,
    act: Activation,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut dz = d_out.to_owned();
    Zip::from(&mut dz).and(&y).for_each(|d, &yv| *d *= act.derivative_from_output(yv));
    let dw = x.t().dot(&dz);
    let db = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx = dz.dot(&w.t());
    (dx, dw, db)
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: &[f64], labels: &[f64]) -> crate::Result<f64> {
    if p.len() != labels.len() || p.is_empty() {
        return Err(crate::Error::Shape(format!(
            "{} predictions for {} labels",
            p.len(),
            labels.len()
        )));
    }
    let n = p.len() as f64;
    Ok(-p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let q = p.clamp(1e-12, 1.0 - 1e-12);
            y * q.ln() + (1.0 - y) * (1.0 - q).ln()
        })
        .sum::<f64>()
        / n)
}

/// d(bce)/dp; zero where the clamp is active.
pub fn bce_grad(p: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(1e-12..=1.0 - 1e-12).contains(&p) {
                0.0
            } else {
                -(y / p - (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(2.5), 2.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let (f, h) = (3, 4);
        let x = Array3::from_shape_fn((2, 5, f), |(a, b, c)| (a + 2 * b + 3 * c) as f64 - 4.0);
        let (out, _) = lstm_forward(
            &Array2::zeros((f, 4 * h)),
            &Array2::zeros((h, 4 * h)),
            &Array2::zeros((1, 4 * h)),
            x.view(),
        );
        assert_eq!(out.dim(), (2, 5, h));
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_hand_value() {
        // U_i = U_c = 1, everything else 0, x = 1.
        let mut u = Array2::zeros((1, 4));
        u[[0, INPUT]] = 1.0;
        u[[0, CANDIDATE]] = 1.0;
        let (out, _) = lstm_forward(&u, &Array2::zeros((1, 4)), &Array2::zeros((1, 4)), array![[[1.0]]].view());
        let expected = sigmoid(0.0) * (sigmoid(1.0) * 1f64.tanh()).tanh();
        assert_eq!(out[[0, 0, 0]], expected);
    }

    #[test]
    fn maxpool_hand_case() {
        let x = array![[[1.0], [3.0], [2.0], [5.0]]];
        let (out, arg) = maxpool_forward(x.view(), 2);
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![3.0, 5.0]);
        let dx = maxpool_backward(&arg, array![[[1.0], [2.0]]].view(), 4);
        assert_eq!(dx.iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 2.0]);
        let (odd, _) = maxpool_forward(array![[[1.0], [3.0], [9.0]]].view(), 2);
        assert_eq!(odd.dim(), (1, 1, 1));
    }

    #[test]
    fn conv_hand_case() {
        // One channel, width 2, kernel [1, -1], bias 0.5.
        let k = array![[1.0], [-1.0]];
        let b = array![[0.5]];
        let x = array![[[3.0], [1.0], [4.0]]];
        let (out, _) = conv1d_forward(&k, &b, x.view(), 2);
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![2.5, 0.0]);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(&[0.25], &[1.0]).unwrap() - 1.3862943611198906).abs() < 1e-15);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 1e-11);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // 10^4 draws of a 100-unit mask; the mean activation stays within 1%.
        for rate in [0.3, 0.5, 0.7] {
            let total: f64 = (0..10_000).map(|_| dropout_mask(100, rate, &mut rng).iter().sum::<f64>()).sum();
            let mean = total / 1e6;
            assert!((mean - 1.0).abs() < 0.01, "{rate}: {mean}");
        }
    }
}
