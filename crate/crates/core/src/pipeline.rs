//! The subcommands behind the `infoflow` binary. Every step reads and
//! writes plain files under the configured output directory, so steps can
//! be rerun independently.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::config::RunConfig;
use crate::dataset::{build_scenario, manifest, resolve_scenario, with_local_te, Scenario, SupervisedDataset};
use crate::error::{Error, Result};
use crate::experiment::{
    assign_tallies, read_ledger, run_experiment, score, summarize, summary_table, train_run, ExperimentPlan, Part,
    RunKey, SummaryRow,
};
use crate::metrics::mean_report;
use crate::net::checkpoint::{self, Checkpoint};
use crate::panel::Panel;
use crate::prep::{corr_matrix, corr_table, describe, difference, fill_weekends, log_return, spline_impute, stats_table};
use crate::select::{export_heatmap, parse_heatmap, select_features, FeatureSet, SelectedDriver};

pub const PANEL: &str = "panel.csv";
pub const STATS: &str = "stats.csv";
pub const CORRELATION: &str = "correlation.csv";
pub const HEATMAP: &str = "heatmap.csv";
pub const SELECTION: &str = "selection.toml";
pub const LOCAL_TE: &str = "local_te.csv";
pub const LEDGER: &str = "runs.tsv";
pub const VALIDATION: &str = "validation.csv";
pub const TEST: &str = "test.csv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const CHECKPOINT_INDEX: &str = "index.csv";
pub const EVAL_VALIDATION: &str = "evaluation_validation.csv";
pub const EVAL_TEST: &str = "evaluation_test.csv";
pub const REPORT: &str = "report.txt";
pub const EFFECTIVE_CONFIG: &str = "config.toml";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Ok(cfg.out.clone())
}

/// Writes the effective configuration; rerunning from it reproduces every
/// output.
pub fn write_effective_config(cfg: &RunConfig) -> Result<PathBuf> {
    let path = out_dir(cfg)?.join(EFFECTIVE_CONFIG);
    write(&path, &format!("{}\n{}", cfg.header(), cfg.to_toml()))?;
    Ok(path)
}

/// Target followed by the candidate drivers, after checking they exist.
fn columns(cfg: &RunConfig, panel: &Panel) -> Result<Vec<String>> {
    let target = &cfg.data.target;
    panel.index_of(target).map_err(|_| Error::Data(format!("target column `{target}` not in input")))?;
    let candidates: Vec<String> = if cfg.data.candidates.is_empty() {
        panel.names().iter().filter(|n| *n != target).cloned().collect()
    } else {
        cfg.data.candidates.clone()
    };
    let listed = candidates.iter().chain(&cfg.data.weekend_fill).chain(&cfg.data.differenced);
    for name in listed {
        panel.index_of(name).map_err(|_| Error::Data(format!("column `{name}` not in input")))?;
    }
    if candidates.iter().any(|c| c == target) {
        return Err(Error::Config(format!("target `{target}` is also a candidate")));
    }
    let mut all = vec![target.clone()];
    all.extend(candidates);
    Ok(all)
}

/// Weekend fill, spline imputation, then log returns (or differences for
/// the listed columns). The result is dated by the later price of each pair.
pub fn preprocess(cfg: &RunConfig, raw: &Panel) -> Result<Panel> {
    let names = columns(cfg, raw)?;
    let panel = fill_weekends(&raw.select(&names)?, &cfg.data.weekend_fill)?;
    let mut series = Vec::with_capacity(names.len());
    for name in &names {
        let col = panel.column(name)?;
        let filled = if col.iter().all(Option::is_some) {
            col.iter().map(|v| v.expect("checked")).collect()
        } else if cfg.data.impute {
            spline_impute(col).map_err(|e| Error::Data(format!("column `{name}`: {e}")))?
        } else {
            return Err(Error::Data(format!("column `{name}` has gaps and imputation is off")));
        };
        let transformed = if cfg.data.differenced.contains(name) {
            difference(&filled)?
        } else {
            log_return(&filled).map_err(|e| Error::Data(format!("column `{name}`: {e}")))?
        };
        series.push(transformed);
    }
    Panel::from_complete(panel.dates()[1..].to_vec(), names, series)
}

pub fn cmd_prep(cfg: &RunConfig) -> Result<String> {
    let raw = Panel::read(&cfg.data.input).map_err(|e| match e {
        Error::Io { .. } => Error::Data(format!("cannot read input {}: {e}", cfg.data.input.display())),
        other => other,
    })?;
    let panel = preprocess(cfg, &raw)?;
    let dir = out_dir(cfg)?;
    panel.write(&dir.join(PANEL), Some(&cfg.header()))?;
    let stats = write_stats(cfg, &panel)?;
    Ok(format!("{} returns x {} columns written to {}\n{stats}", panel.len(), panel.width(), dir.display()))
}

fn write_stats(cfg: &RunConfig, panel: &Panel) -> Result<String> {
    let dir = out_dir(cfg)?;
    let rows = panel
        .names()
        .iter()
        .map(|n| Ok((n.clone(), describe(&panel.values(n)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = stats_table(&rows, Some(&cfg.header()));
    write(&dir.join(STATS), &table)?;
    let corr = corr_matrix(panel)?;
    write(&dir.join(CORRELATION), &corr_table(panel.names(), &corr, Some(&cfg.header())))?;
    Ok(table)
}

fn load_panel(cfg: &RunConfig) -> Result<Panel> {
    let path = cfg.out.join(PANEL);
    if !path.exists() {
        return Err(Error::Data(format!("{} not found; run `prep` first", path.display())));
    }
    Panel::read(&path)
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<String> {
    write_stats(cfg, &load_panel(cfg)?)
}

pub fn cmd_select(cfg: &RunConfig) -> Result<String> {
    let panel = load_panel(cfg)?;
    let target = &cfg.data.target;
    let drivers: Vec<String> = panel.names().iter().filter(|n| *n != target).cloned().collect();
    let selection = select_features(&panel, target, &drivers, &cfg.grid()?, &cfg.sig_params()?)?;
    let dir = out_dir(cfg)?;
    export_heatmap(&selection.grids, &dir.join(HEATMAP), Some(&cfg.header()))?;
    let summary = selection.summary(Some(&cfg.header()))?;
    write(&dir.join(SELECTION), &summary)?;
    let lte = dir.join(LOCAL_TE);
    if selection.features.is_empty() {
        if lte.exists() {
            std::fs::remove_file(&lte).map_err(|e| Error::io(&lte, e))?;
        }
    } else {
        selection.features.to_panel(panel.dates())?.write(&lte, Some(&cfg.header()))?;
    }
    let list = |v: Vec<String>| if v.is_empty() { "(none)".to_string() } else { v.join(", ") };
    Ok(format!(
        "target {target}: {} of {} drivers selected\nselected: {}\nexcluded: {}",
        selection.features.len(),
        drivers.len(),
        list(selection.features.selected_drivers()),
        list(selection.excluded())
    ))
}

/// Rebuilds the feature set from the heatmap and local-TE files.
pub fn load_features(cfg: &RunConfig, dates: &[NaiveDate]) -> Result<FeatureSet> {
    let path = cfg.out.join(HEATMAP);
    if !path.exists() {
        return Err(Error::Data(format!("{} not found; run `select` first", path.display())));
    }
    let grids = parse_heatmap(&read(&path)?)?;
    let selected: Vec<_> = grids.iter().filter(|g| g.optimal.is_some()).collect();
    let locals = if selected.is_empty() { None } else { Some(Panel::read(&cfg.out.join(LOCAL_TE))?) };
    let mut drivers = Vec::new();
    for g in selected {
        let lte = locals.as_ref().expect("present when drivers are selected");
        if lte.dates() != dates {
            return Err(Error::Data("local-TE file does not match the panel calendar".into()));
        }
        drivers.push(SelectedDriver {
            name: g.driver.clone(),
            cell: g.optimal.expect("filtered"),
            stats: g.optimal_stats().expect("optimal cell has stats"),
            locals: lte.values(&crate::select::local_te_name(&g.driver))?,
        });
    }
    Ok(FeatureSet { length: dates.len(), drivers })
}

/// Datasets for every configured scenario; manifests are written as a side
/// effect.
pub fn build_datasets(cfg: &RunConfig) -> Result<Vec<(Scenario, SupervisedDataset)>> {
    let panel = load_panel(cfg)?;
    let scenarios = cfg.scenarios()?;
    let target = &cfg.data.target;
    let candidates: Vec<String> = panel.names().iter().filter(|n| *n != target).cloned().collect();
    let features = if scenarios.iter().any(|s| s.needs_selection()) {
        load_features(cfg, panel.dates())?
    } else {
        FeatureSet { length: panel.len(), drivers: Vec::new() }
    };
    let full = with_local_te(&panel, &features)?;
    let plan = cfg.split_plan()?;
    let dir = out_dir(cfg)?;
    let mut out = Vec::new();
    for s in scenarios {
        let spec = resolve_scenario(s, target, &candidates, &features)?;
        let ds = build_scenario(&spec, &full, target, cfg.dataset.window, cfg.dataset.horizon, &plan)?;
        write(&dir.join(format!("dataset_{s}.toml")), &manifest(&ds, &s.to_string(), Some(&cfg.header()))?)?;
        out.push((s, ds));
    }
    Ok(out)
}

fn checkpoint_file(plan: &ExperimentPlan, key: &RunKey) -> String {
    format!("{}.ckpt", plan.run_id(key).replace('/', "_"))
}

const INDEX_HEADER: &str = "file,design,scenario,batch,lr,dropout,seed";

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let plan = cfg.plan()?;
    let datasets = build_datasets(cfg)?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let result = run_experiment(&plan, &datasets, Some(&dir.join(LEDGER)), &hash)?;
    write(&dir.join(VALIDATION), &result.table(Part::Validation, Some(&cfg.header())))?;
    write(&dir.join(TEST), &result.table(Part::Test, Some(&cfg.header())))?;

    // Retrain the chosen cells to keep their models; training is
    // deterministic, so the metrics must match the ledger exactly.
    let ck_dir = dir.join(CHECKPOINTS);
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let mut index = format!("{}\n{INDEX_HEADER}\n", cfg.header());
    for key in result.best_runs(&plan) {
        let ds = &datasets.iter().find(|(s, _)| *s == key.scenario).expect("built above").1;
        let (model, rerun) = train_run(&plan, &key, ds)?;
        let recorded = &result.runs.iter().find(|(k, _)| *k == key).expect("key from runs").1;
        if &rerun != recorded {
            return Err(Error::Numeric(format!("run {} did not reproduce its ledger entry", plan.run_id(&key))));
        }
        let file = checkpoint_file(&plan, &key);
        let ck = Checkpoint { network: model.network, seed: plan.run_seed(key.seed_index), best_epoch: model.best_epoch };
        checkpoint::save(&ck, &ck_dir.join(&file), Some(&cfg.header()))?;
        let _ = writeln!(
            index,
            "{file},{},{},{},{},{},{}",
            plan.designs[key.design].name, key.scenario, key.batch, key.learning_rate, key.dropout, key.seed_index
        );
    }
    write(&ck_dir.join(CHECKPOINT_INDEX), &index)?;
    Ok(format!(
        "{} runs ({} trained now, {} from the ledger)\n\n{}",
        result.runs.len(),
        result.trained,
        result.runs.len() - result.trained,
        result.table(Part::Test, None)
    ))
}

/// Scores the saved checkpoints on the validation and test splits.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.out.join(CHECKPOINTS);
    let index_path = dir.join(CHECKPOINT_INDEX);
    if !index_path.exists() {
        return Err(Error::Data(format!("{} not found; run `train` first", index_path.display())));
    }
    let datasets = build_datasets(cfg)?;
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut group: Vec<(crate::metrics::MetricsReport, crate::metrics::MetricsReport)> = Vec::new();
    let flush = |rows: &mut Vec<SummaryRow>, group: &mut Vec<_>| {
        if let Some(last) = rows.last_mut() {
            let (v, t): (Vec<_>, Vec<_>) = group.drain(..).unzip();
            last.val = mean_report(&v);
            last.test = mean_report(&t);
        }
    };
    let text = read(&index_path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(INDEX_HEADER) {
        return Err(Error::Data(format!("{} has an unexpected header", index_path.display())));
    }
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Data(format!("bad checkpoint index line `{line}`")));
        }
        let bad = |what: &str| Error::Data(format!("bad {what} in checkpoint index line `{line}`"));
        let scenario: Scenario = f[2].parse()?;
        let batch: usize = f[3].parse().map_err(|_| bad("batch"))?;
        let learning_rate: f64 = f[4].parse().map_err(|_| bad("learning rate"))?;
        let dropout: f64 = f[5].parse().map_err(|_| bad("dropout"))?;
        let ds = datasets
            .iter()
            .find(|(s, _)| *s == scenario)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Config(format!("scenario {scenario} is not configured")))?;
        let ck = checkpoint::load(&dir.join(f[0]))?;
        let split = ds.split()?;
        let val = score(&ck.network, ds, split.val.clone())?;
        let test = score(&ck.network, ds, split.test.clone())?;
        let same = rows.last().is_some_and(|r| {
            r.design == f[1] && r.scenario == scenario && r.batch == batch && r.learning_rate == learning_rate && r.dropout == dropout
        });
        if !same {
            flush(&mut rows, &mut group);
            rows.push(SummaryRow {
                design: f[1].to_string(),
                scenario,
                batch,
                learning_rate,
                dropout,
                val,
                test,
                tally_val: 0,
                tally_test: 0,
            });
        }
        group.push((val, test));
    }
    flush(&mut rows, &mut group);
    assign_tallies(&mut rows);
    let out = out_dir(cfg)?;
    write(&out.join(EVAL_VALIDATION), &summary_table(&rows, Part::Validation, Some(&cfg.header())))?;
    let test = summary_table(&rows, Part::Test, Some(&cfg.header()));
    write(&out.join(EVAL_TEST), &test)?;
    Ok(summary_table(&rows, Part::Test, None))
}

/// Summary tables from the run ledger alone, without training.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let plan = cfg.plan()?;
    let path = cfg.out.join(LEDGER);
    let done = read_ledger(&path, &cfg.hash())?;
    let keys = plan.runs();
    let missing = keys.iter().filter(|k| !done.contains_key(&plan.run_id(k))).count();
    if missing > 0 {
        return Err(Error::Data(format!(
            "ledger {} lacks {missing} of {} runs for this configuration; run `train`",
            path.display(),
            keys.len()
        )));
    }
    let runs: Vec<_> = keys.iter().map(|k| (*k, done[&plan.run_id(k)].clone())).collect();
    let rows = summarize(&plan, &runs);
    let mut text = format!("{}\n", cfg.header());
    let selection = cfg.out.join(SELECTION);
    if selection.exists() {
        text.push_str("\n[selection]\n");
        text.extend(read(&selection)?.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")));
    }
    let designs: BTreeSet<&str> = rows.iter().map(|r| r.design.as_str()).collect();
    let _ = writeln!(text, "\n[runs]\ncount = {}\ndesigns = {}", runs.len(), designs.len());
    let _ = write!(text, "\n[validation]\n{}", summary_table(&rows, Part::Validation, None));
    let _ = write!(text, "\n[test]\n{}", summary_table(&rows, Part::Test, None));
    write(&out_dir(cfg)?.join(REPORT), &text)?;
    Ok(text)
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub coupling: f64,
    pub noise_drivers: usize,
    pub returns: usize,
    pub start: NaiveDate,
    pub output: Option<PathBuf>,
}

/// Synthetic price panel in the input format: `target`, one `coupled`
/// driver and independent `noiseN` drivers.
pub fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs) -> Result<String> {
    let panel = crate::oracle::synthetic_price_panel(args.coupling, args.noise_drivers, args.returns, args.start, cfg.seed)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => out_dir(cfg)?.join("synthetic.csv"),
    };
    panel.write(&path, Some(&cfg.header()))?;
    Ok(format!("{} rows x {} columns written to {}", panel.len(), panel.width(), path.display()))
}
