//! Windows, chronological splits and the five feature scenarios on a
//! synthetic panel.

use chrono::NaiveDate;
use infoflow::dataset::{build_scenario, resolve_scenario, with_local_te, Scenario, SplitPlan, DEFAULT_FRACTIONS};
use infoflow::oracle::synthetic_price_panel;
use infoflow::panel::Panel;
use infoflow::prep::log_return;
use infoflow::select::{select_features, GridSpec, SigParams};

fn main() -> infoflow::Result<()> {
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let prices = synthetic_price_panel(0.8, 2, 400, start, 2)?;
    let names = prices.names().to_vec();
    let series = names.iter().map(|n| log_return(&prices.values(n)?)).collect::<infoflow::Result<Vec<_>>>()?;
    let panel = Panel::from_complete(prices.dates()[1..].to_vec(), names.clone(), series)?;
    let candidates: Vec<String> = names[1..].to_vec();
    let grid = GridSpec::new(&[1, 2], &[1, 2], &[4])?;
    let sel = select_features(&panel, "target", &candidates, &grid, &SigParams { surrogates: 39, ..SigParams::default() })?;
    println!("selected {:?}, excluded {:?}", sel.features.selected_drivers(), sel.excluded());
    let full = with_local_te(&panel, &sel.features)?;
    for s in Scenario::ALL {
        let spec = resolve_scenario(s, "target", &candidates, &sel.features)?;
        let ds = build_scenario(&spec, &full, "target", 20, 1, &SplitPlan::Fractions(DEFAULT_FRACTIONS))?;
        let split = ds.split()?;
        println!(
            "{s}: {:?} -> {} windows of {}x{}, split {:?}, train up-fraction {:.2}",
            spec.columns,
            ds.len(),
            ds.window,
            ds.features(),
            split.sizes(),
            ds.balance(split.train.clone())
        );
    }
    Ok(())
}
