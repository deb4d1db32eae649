//! Linear-Gaussian coupled processes with closed-form transfer entropy.
//!
//! `x[t+1] = a·x[t] + b·y[t] + sigma·e[t]` with a unit-variance source `y`,
//! either white noise or a stationary AR(1).

use chrono::NaiveDate;
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{daily_calendar, Panel};

const BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceModel {
    /// `y[t]` iid N(0, 1).
    IidNormal,
    /// `y[t+1] = rho·y[t] + sqrt(1 - rho²)·u[t]`, unit stationary variance.
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var1Spec {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub source: SourceModel,
}

impl Var1Spec {
    pub fn new(a: f64, b: f64, sigma: f64, source: SourceModel) -> Result<Self> {
        let spec = Var1Spec { a, b, sigma, source };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target coefficient |a| = {} must be < 1 for stationarity",
                self.a.abs()
            )));
        }
        if !(self.sigma > 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need sigma > 0 and finite b, got sigma={}, b={}",
                self.sigma, self.b
            )));
        }
        if let SourceModel::Ar1 { rho } = self.source {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidArgument(format!("source |rho| = {} must be < 1", rho.abs())));
            }
        }
        Ok(())
    }

    /// Stationary variance of the target.
    pub fn target_variance(&self) -> f64 {
        let cxy = self.cross_covariance();
        (self.b * self.b + 2.0 * self.a * self.b * cxy + self.sigma * self.sigma) / (1.0 - self.a * self.a)
    }

    /// Stationary Cov(x[t], y[t]).
    fn cross_covariance(&self) -> f64 {
        match self.source {
            SourceModel::IidNormal => 0.0,
            SourceModel::Ar1 { rho } => rho * self.b / (1.0 - self.a * rho),
        }
    }
}

/// Simulates `n` steps after discarding a burn-in of 1000.
pub fn simulate(spec: &Var1Spec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if n < 100 {
        return Err(Error::InvalidArgument(format!("simulate needs n >= 100, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let total = n + BURN_IN;
    let mut x = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    x.push(0.0);
    y.push(normal());
    for t in 0..total - 1 {
        let e = normal();
        let u = normal();
        x.push(spec.a * x[t] + spec.b * y[t] + spec.sigma * e);
        y.push(match spec.source {
            SourceModel::IidNormal => u,
            SourceModel::Ar1 { rho } => rho * y[t] + (1.0 - rho * rho).sqrt() * u,
        });
    }
    Ok((x.split_off(BURN_IN), y.split_off(BURN_IN)))
}

/// Transfer entropy `y → x` in nats for history lengths k = l = 1:
/// ½·ln(Var(x[t+1] | x[t]) / Var(x[t+1] | x[t], y[t])).
pub fn analytic_te(spec: &Var1Spec) -> Result<f64> {
    spec.validate()?;
    let s2 = spec.sigma * spec.sigma;
    let restricted = match spec.source {
        SourceModel::IidNormal => spec.b * spec.b + s2,
        SourceModel::Ar1 { .. } => {
            let vx = spec.target_variance();
            let lag_cov = spec.a * vx + spec.b * spec.cross_covariance();
            vx - lag_cov * lag_cov / vx
        }
    };
    Ok(0.5 * (restricted / s2).ln())
}

/// Synthetic price panel: a target driven by one coupled source plus
/// `noise_drivers` independent white-noise series. Returns are simulated and
/// then compounded into positive price levels starting at 100.
pub fn synthetic_price_panel(
    coupling: f64,
    noise_drivers: usize,
    n_returns: usize,
    start: NaiveDate,
    seed: u64,
) -> Result<Panel> {
    let spec = Var1Spec::new(0.5, coupling, 0.5, SourceModel::IidNormal)?;
    let (x, y) = simulate(&spec, n_returns, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_a5a5);
    let mut names = vec!["target".to_string(), "coupled".to_string()];
    let mut returns = vec![x, y];
    for j in 0..noise_drivers {
        names.push(format!("noise{}", j + 1));
        returns.push((0..n_returns).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let prices: Vec<Vec<f64>> = returns
        .iter()
        .map(|r| {
            let mut p = Vec::with_capacity(r.len() + 1);
            let mut level = 100.0_f64;
            p.push(level);
            for v in r {
                level *= (0.01 * v).exp();
                p.push(level);
            }
            p
        })
        .collect();
    let end = start + chrono::Days::new(n_returns as u64);
    Panel::from_complete(daily_calendar(start, end), names, prices)
}

/// Separable direction task: `n` windows of iid standard-normal values with
/// one feature, labelled 1 iff the last value of the window is positive.
pub fn sign_task(n: usize, window: usize, seed: u64) -> (Array3<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_simple_fn((n, window, 1), || StandardNormal.sample(&mut rng));
    let y = (0..n).map(|i| if x[[i, window - 1, 0]] > 0.0 { 1.0 } else { 0.0 }).collect();
    (x, y)
}
