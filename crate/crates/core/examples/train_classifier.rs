//! Trains preset D2 on the separable sign task, scores it and round-trips
//! the model through a checkpoint.

use infoflow::experiment::score;
use infoflow::net::checkpoint::{parse, render, Checkpoint};
use infoflow::net::{train, Preset, TrainConfig};
use infoflow::oracle::sign_task;

fn main() -> infoflow::Result<()> {
    let (x, y) = sign_task(256, 8, 40);
    let (vx, vy) = sign_task(128, 8, 41);
    let cfg = TrainConfig { max_epochs: 30, seed: 3, ..TrainConfig::default() };
    let model = train(&Preset::D2.spec(0.5), x.view(), &y, vx.view(), &vy, &cfg)?;
    for r in &model.history {
        println!(
            "epoch {:2}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    println!("best epoch {}, {} parameters", model.best_epoch, model.network.parameter_count());

    let (tx, ty) = sign_task(200, 8, 42);
    let ds = infoflow::dataset::SupervisedDataset {
        windows: tx,
        labels: ty,
        feature_names: vec!["x".into()],
        label_dates: Vec::new(),
        window: 8,
        horizon: 1,
        split: None,
        scale: None,
    };
    let m = score(&model.network, &ds, 0..ds.len())?;
    println!("held-out: acc {:?} auc {:?} f1 {:?}", m.acc, m.auc, m.f1);

    let ck = Checkpoint { network: model.network, seed: cfg.seed, best_epoch: model.best_epoch };
    let text = render(&ck, None);
    assert_eq!(parse(&text)?, ck);
    println!("checkpoint: {} bytes, exact round trip", text.len());
    Ok(())
}
