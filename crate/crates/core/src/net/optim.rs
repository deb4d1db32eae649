//! Adam with the AMSGrad long-memory variant.

use ndarray::{Array2, Zip};

#[derive(Debug, Clone, PartialEq)]
pub struct AmsGrad {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Keep the running maximum of the second moment (AMSGrad); plain Adam
    /// otherwise.
    pub amsgrad: bool,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub v_max: Vec<Array2<f64>>,
}

impl AmsGrad {
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect::<Vec<_>>();
        AmsGrad {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: true,
            step: 0,
            m: zeros(),
            v: zeros(),
            v_max: zeros(),
        }
    }

    /// m ← β₁m + (1-β₁)g, v ← β₂v + (1-β₂)g², v̂ ← max(v̂, v),
    /// θ ← θ - lr·(m/(1-β₁ᵗ)) / (√(v̂/(1-β₂ᵗ)) + ε).
    pub fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, ams) = (self.beta1, self.beta2, self.eps, self.amsgrad);
        for (k, p) in params.iter_mut().enumerate() {
            Zip::from(p)
                .and(&grads[k])
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(&mut self.v_max[k])
                .for_each(|p, &g, m, v, vm| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let second = if ams {
                        if *v > *vm {
                            *vm = *v;
                        }
                        *vm
                    } else {
                        *v
                    };
                    *p -= lr * (*m / c1) / ((second / c2).sqrt() + eps);
                });
        }
    }
}
