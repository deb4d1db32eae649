//! Mini-batch training with early stopping on validation binary accuracy.

use ndarray::{ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{layers::bce_loss, AmsGrad, Mode, Network, NetworkSpec};
use crate::error::{Error, Result};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            learning_rate: 0.001,
            dropout: 0.5,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch, max_epochs and patience must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.dropout > 0.0 && self.dropout < 1.0) {
            return Err(Error::Config(format!("dropout {} not in (0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's training batches (dropout active).
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters of the best epoch.
    pub network: Network,
    pub optimizer: AmsGrad,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Evaluation-mode training loss before the first update.
    pub initial_loss: f64,
}

impl TrainedModel {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Fraction of `p >= 0.5` predictions that match the labels.
pub fn binary_accuracy(p: &[f64], labels: &[f64]) -> f64 {
    let hits = p.iter().zip(labels).filter(|(p, y)| (**p >= 0.5) == (**y > 0.5)).count();
    hits as f64 / labels.len() as f64
}

fn check_part(name: &str, x: &ArrayView3<f64>, y: &[f64]) -> Result<()> {
    if x.dim().0 == 0 || x.dim().0 != y.len() {
        return Err(Error::Data(format!(
            "{name} split has {} windows and {} labels",
            x.dim().0,
            y.len()
        )));
    }
    Ok(())
}

/// Trains a fresh network from `cfg.seed`. Batches are reshuffled every
/// epoch; training stops once `patience` epochs pass without a strictly
/// higher validation accuracy, and the best epoch's parameters are kept.
pub fn train(
    spec: &NetworkSpec,
    train_x: ArrayView3<f64>,
    train_y: &[f64],
    val_x: ArrayView3<f64>,
    val_y: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_part("training", &train_x, train_y)?;
    check_part("validation", &val_x, val_y)?;
    let (_, window, features) = train_x.dim();
    let spec = spec.clone().with_dropout(cfg.dropout);
    let mut net = Network::new(&spec, window, features, cfg.seed)?;
    let mut opt = AmsGrad::new(&net.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut dropout = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout.set_stream(DROPOUT_STREAM);

    let initial_loss = bce_loss(&net.predict(train_x)?, train_y)?;
    let n = train_y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<ndarray::Array2<f64>>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut hits) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            let bx = train_x.select(Axis(0), chunk);
            let by: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, probs, grads) = net.loss_and_grad(bx.view(), &by, Mode::Train(&mut dropout))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss diverged in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            hits += binary_accuracy(&probs, &by) * chunk.len() as f64;
            opt.update(&mut net.params, &grads, cfg.learning_rate);
        }
        let val_p = net.predict(val_x)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: hits / n as f64,
            val_loss: bce_loss(&val_p, val_y)?,
            val_acc: binary_accuracy(&val_p, val_y),
        };
        history.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| record.val_acc > *acc) {
            best = Some((record.val_acc, epoch, net.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    net.params = params;
    Ok(TrainedModel {
        network: net,
        optimizer: opt,
        history,
        best_epoch,
        initial_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Preset;
    use ndarray::Array3;

    fn toy(n: usize, window: usize, seed: u64) -> (ndarray::Array3<f64>, Vec<f64>) {
        crate::oracle::sign_task(n, window, seed)
    }

    #[test]
    fn same_seed_same_history() {
        let (x, y) = toy(60, 4, 1);
        let spec = crate::net::NetworkSpec::parse("lstm(4) dropout(0.5) dense(1,sigmoid)").unwrap();
        let cfg = TrainConfig { batch: 16, max_epochs: 3, seed: 5, ..TrainConfig::default() };
        let a = train(&spec, x.view(), &y, x.view(), &y, &cfg).unwrap();
        let b = train(&spec, x.view(), &y, x.view(), &y, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.network.params, b.network.params);
        let c = train(&spec, x.view(), &y, x.view(), &y, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn stops_after_patience_without_improvement() {
        let (x, y) = toy(40, 3, 2);
        let spec = crate::net::NetworkSpec::parse("lstm(2) dropout(0.5) dense(1,sigmoid)").unwrap();
        let cfg = TrainConfig { batch: 8, max_epochs: 20, patience: 1, seed: 1, learning_rate: 1e-9, ..TrainConfig::default() };
        let m = train(&spec, x.view(), &y, x.view(), &y, &cfg).unwrap();
        // With a negligible step size validation accuracy cannot rise.
        assert_eq!(m.history.len(), 2);
        assert_eq!(m.best_epoch, 1);
    }

    #[test]
    fn rejects_empty_or_misaligned_splits() {
        let (x, y) = toy(10, 3, 3);
        let spec = Preset::D2.spec(0.5);
        let cfg = TrainConfig::default();
        assert!(train(&spec, x.view(), &y[..9], x.view(), &y, &cfg).is_err());
        let empty = Array3::<f64>::zeros((0, 3, 1));
        assert!(train(&spec, x.view(), &y, empty.view(), &[], &cfg).is_err());
        assert!(train(&spec, x.view(), &y, x.view(), &y, &TrainConfig { patience: 0, ..cfg }).is_err());
    }

    #[test]
    fn restores_best_epoch_parameters() {
        let (x, y) = toy(80, 4, 4);
        let (vx, vy) = toy(40, 4, 5);
        let spec = crate::net::NetworkSpec::parse("lstm(6) dropout(0.3) dense(1,sigmoid)").unwrap();
        let cfg = TrainConfig { batch: 16, max_epochs: 12, patience: 3, seed: 2, learning_rate: 0.01, ..TrainConfig::default() };
        let m = train(&spec, x.view(), &y, vx.view(), &vy, &cfg).unwrap();
        let acc = binary_accuracy(&m.network.predict(vx.view()).unwrap(), &vy);
        assert_eq!(acc, m.best().val_acc);
        let max = m.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
        assert_eq!(m.best().val_acc, max);
    }

    #[test]
    fn first_epoch_lowers_the_loss() {
        let spec = crate::net::NetworkSpec::parse("lstm(8) dropout(0.5) dense(1,sigmoid)").unwrap();
        let mut lowered = 0;
        for seed in 0..10 {
            let (x, y) = toy(128, 6, 100 + seed);
            let cfg = TrainConfig { max_epochs: 1, seed, ..TrainConfig::default() };
            let m = train(&spec, x.view(), &y, x.view(), &y, &cfg).unwrap();
            let after = bce_loss(&m.network.predict(x.view()).unwrap(), &y).unwrap();
            lowered += usize::from(after < m.initial_loss);
        }
        assert!(lowered >= 9, "{lowered}/10");
    }

    #[test]
    fn d2_learns_the_sign_task() {
        let (x, y) = toy(256, 8, 40);
        let (vx, vy) = toy(128, 8, 41);
        let cfg = TrainConfig { max_epochs: 50, patience: 50, seed: 3, ..TrainConfig::default() };
        let m = train(&Preset::D2.spec(0.5), x.view(), &y, vx.view(), &vy, &cfg).unwrap();
        let train_acc = binary_accuracy(&m.network.predict(x.view()).unwrap(), &y);
        assert!(train_acc >= 0.95 && m.best().val_acc >= 0.9, "{train_acc} {:?}", m.best());
    }
}
