//! Full transfer-entropy grid over a synthetic panel with one coupled and
//! two independent drivers.
//!
//! cargo run --release --example select_drivers -- [returns] [coupling] [seed]
//!
//! Set `HEATMAP=path` to also write the per-cell table.

use std::time::Instant;

use chrono::NaiveDate;
use infoflow::oracle::synthetic_price_panel;
use infoflow::panel::Panel;
use infoflow::prep::log_return;
use infoflow::select::{select_features, Correction, GridSpec, SigParams};

fn main() -> infoflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let returns: usize = args.first().map_or(200, |s| s.parse().expect("returns"));
    let coupling: f64 = args.get(1).map_or(0.8, |s| s.parse().expect("coupling"));
    let seed: u64 = args.get(2).map_or(1, |s| s.parse().expect("seed"));

    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let prices = synthetic_price_panel(coupling, 2, returns, start, seed)?;
    let names = prices.names().to_vec();
    let series = names.iter().map(|n| log_return(&prices.values(n)?)).collect::<infoflow::Result<Vec<_>>>()?;
    let panel = Panel::from_complete(prices.dates()[1..].to_vec(), names, series)?;

    let sig = SigParams { seed, correction: Correction::Pooled, ..SigParams::default() };
    let drivers = vec!["coupled".to_string(), "noise1".to_string(), "noise2".to_string()];
    let t = Instant::now();
    let sel = select_features(&panel, "target", &drivers, &GridSpec::full(), &sig)?;
    println!("{}", sel.summary(None)?);
    if let Ok(path) = std::env::var("HEATMAP") {
        infoflow::select::export_heatmap(&sel.grids, std::path::Path::new(&path), None)?;
    }
    println!("# {} cells per driver in {:.1?}", GridSpec::full().cell_count(), t.elapsed());
    Ok(())
}
