//! Weekend filling, spline imputation, log returns and descriptive
//! statistics on a small panel with gaps.

use infoflow::panel::Panel;
use infoflow::prep::{corr_matrix, corr_table, describe, fill_weekends, log_return, spline_impute, stats_table};

const RAW: &str = "date,asset,index
2021-01-01,100.0,50.0
2021-01-02,,
2021-01-03,,
2021-01-04,101.5,50.4
2021-01-05,,50.1
2021-01-06,103.0,50.9
2021-01-07,102.2,51.2
2021-01-08,104.0,51.0
2021-01-09,,
2021-01-10,,
2021-01-11,105.1,51.6
2021-01-12,104.7,51.4
";

fn main() -> infoflow::Result<()> {
    let raw = Panel::parse(RAW)?;
    let filled = fill_weekends(&raw, &["index".to_string()])?;
    let mut returns = Vec::new();
    for name in filled.names() {
        let series = spline_impute(filled.column(name)?)?;
        returns.push(log_return(&series)?);
    }
    let panel = Panel::from_complete(filled.dates()[1..].to_vec(), filled.names().to_vec(), returns)?;
    print!("{}", panel.to_csv(None));
    let rows = panel
        .names()
        .iter()
        .map(|n| Ok((n.clone(), describe(&panel.values(n)?)?)))
        .collect::<infoflow::Result<Vec<_>>>()?;
    print!("\n{}", stats_table(&rows, None));
    print!("\n{}", corr_table(panel.names(), &corr_matrix(&panel)?, None));
    Ok(())
}
