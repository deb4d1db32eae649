//! Confusion metrics, ROC-AUC and the best-score tally.

use infoflow::metrics::{best_score_tally, confusion, evaluate, report, Metric, THRESHOLD};

fn main() -> infoflow::Result<()> {
    let p = [0.9, 0.8, 0.65, 0.55, 0.5, 0.45, 0.3, 0.2];
    let y = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let cm = confusion(&p, &y, THRESHOLD)?;
    println!("{cm:?}");
    let r = report(&cm);
    let worse = evaluate(&[0.6, 0.4, 0.6, 0.4, 0.6, 0.4, 0.6, 0.4], &y)?;
    let full = evaluate(&p, &y)?;
    for m in Metric::ALL {
        println!("{m:>4}: {:>9} {:>9}", m.format(m.get(&full)), m.format(m.get(&worse)));
    }
    println!("threshold-only report has auc {:?}", r.auc);
    println!("tally: {:?}", best_score_tally(&[full, worse]));
    Ok(())
}
