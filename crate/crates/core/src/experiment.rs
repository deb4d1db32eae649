//! Hyperparameter grid over designs and scenarios, with a resumable run
//! ledger and the validation/test summary tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::dataset::{Scenario, SupervisedDataset};
use crate::error::{Error, Result};
use crate::metrics::{best_score_tally, confusion, mean_report, report, roc_auc, Metric, MetricsReport, THRESHOLD};
use crate::net::{train, Network, NetworkSpec, Preset, TrainConfig, TrainedModel};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub name: String,
    pub spec: NetworkSpec,
}

impl Design {
    pub fn preset(p: Preset) -> Self {
        Design { name: p.to_string(), spec: p.spec(0.5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub batch: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub seeds: usize,
}

impl HyperGrid {
    pub fn paper() -> Self {
        HyperGrid {
            batch: vec![32, 64, 128, 256],
            learning_rate: vec![0.001, 0.0001],
            dropout: vec![0.3, 0.5, 0.7],
            seeds: 10,
        }
    }

    pub fn cells(&self) -> usize {
        self.batch.len() * self.learning_rate.len() * self.dropout.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub designs: Vec<Design>,
    pub scenarios: Vec<Scenario>,
    pub grid: HyperGrid,
    pub max_epochs: usize,
    pub patience: usize,
    pub master_seed: u64,
}

/// One training run. `design` indexes `ExperimentPlan::designs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub design: usize,
    pub scenario: Scenario,
    pub batch: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed_index: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if self.designs.is_empty() || self.scenarios.is_empty() || g.cells() == 0 || g.seeds == 0 {
            return Err(Error::Config("experiment needs at least one design, scenario, grid cell and seed".into()));
        }
        for (i, d) in self.designs.iter().enumerate() {
            if self.designs[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("design `{}` listed twice", d.name)));
            }
        }
        for &dropout in &g.dropout {
            for &learning_rate in &g.learning_rate {
                for &batch in &g.batch {
                    self.train_config(batch, learning_rate, dropout, 0).validate()?;
                }
            }
        }
        Ok(())
    }

    /// Every run in table order: design, scenario, batch, learning rate,
    /// dropout, seed.
    pub fn runs(&self) -> Vec<RunKey> {
        let mut out = Vec::new();
        for design in 0..self.designs.len() {
            for &scenario in &self.scenarios {
                for &batch in &self.grid.batch {
                    for &learning_rate in &self.grid.learning_rate {
                        for &dropout in &self.grid.dropout {
                            for seed_index in 0..self.grid.seeds {
                                out.push(RunKey { design, scenario, batch, learning_rate, dropout, seed_index });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn run_id(&self, k: &RunKey) -> String {
        format!(
            "{}/{}/batch={}/lr={}/dropout={}/seed={}",
            self.designs[k.design].name, k.scenario, k.batch, k.learning_rate, k.dropout, k.seed_index
        )
    }

    /// Seeds are shared across cells, so every configuration sees the same
    /// ten initialisations.
    pub fn run_seed(&self, seed_index: usize) -> u64 {
        derive_seed(self.master_seed, "train", seed_index as u64)
    }

    fn train_config(&self, batch: usize, learning_rate: f64, dropout: f64, seed: u64) -> TrainConfig {
        TrainConfig { batch, learning_rate, dropout, max_epochs: self.max_epochs, patience: self.patience, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best_epoch: usize,
    pub epochs: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Threshold metrics plus AUC; AUC is undefined when one class is absent.
pub fn score(net: &Network, ds: &SupervisedDataset, range: std::ops::Range<usize>) -> Result<MetricsReport> {
    let (x, y) = ds.part(range);
    let p = net.predict(x)?;
    let mut r = report(&confusion(&p, y, THRESHOLD)?);
    let both = y.iter().any(|v| *v > 0.5) && y.iter().any(|v| *v <= 0.5);
    r.auc = if both { Some(roc_auc(&p, y)?) } else { None };
    Ok(r)
}

pub fn train_run(plan: &ExperimentPlan, key: &RunKey, ds: &SupervisedDataset) -> Result<(TrainedModel, RunResult)> {
    let split = ds.split()?;
    let (tx, ty) = ds.part(split.train.clone());
    let (vx, vy) = ds.part(split.val.clone());
    let cfg = plan.train_config(key.batch, key.learning_rate, key.dropout, plan.run_seed(key.seed_index));
    let model = train(&plan.designs[key.design].spec, tx, ty, vx, vy, &cfg)?;
    let result = RunResult {
        best_epoch: model.best_epoch,
        epochs: model.history.len(),
        val: score(&model.network, ds, split.val.clone())?,
        test: score(&model.network, ds, split.test.clone())?,
    };
    Ok((model, result))
}

const LEDGER_HEADER: &str = "# infoflow run ledger: hash id best_epoch epochs val[8] test[8]";

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:?}"))
}

fn ledger_line(hash: &str, id: &str, r: &RunResult) -> String {
    let vals: Vec<String> = [&r.val, &r.test]
        .iter()
        .flat_map(|rep| Metric::ALL.iter().map(move |m| fmt_value(m.get(rep))))
        .collect();
    format!("{hash}\t{id}\t{}\t{}\t{}", r.best_epoch, r.epochs, vals.join("\t"))
}

fn parse_report(fields: &[&str]) -> Option<MetricsReport> {
    let v: Vec<Option<f64>> = fields
        .iter()
        .map(|f| if *f == "-" { Some(None) } else { f.parse().ok().map(Some) })
        .collect::<Option<_>>()?;
    Some(MetricsReport { acc: v[0], auc: v[1], tpr: v[2], tnr: v[3], ppv: v[4], for_rate: v[5], ba: v[6], f1: v[7] })
}

/// Completed runs recorded under `hash`, keyed by run id. Lines written under
/// another configuration are ignored; a torn final line is skipped.
pub fn read_ledger(path: &Path, hash: &str) -> Result<HashMap<String, RunResult>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = HashMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 20 || f[0] != hash {
            continue;
        }
        let parsed = (|| {
            Some(RunResult {
                best_epoch: f[2].parse().ok()?,
                epochs: f[3].parse().ok()?,
                val: parse_report(&f[4..12])?,
                test: parse_report(&f[12..20])?,
            })
        })();
        if let Some(r) = parsed {
            out.insert(f[1].to_string(), r);
        }
    }
    Ok(out)
}

/// Appends lines in slot order whatever order they finish in, so the ledger
/// is identical for any worker count. Lines waiting on an earlier slot are
/// lost if the process dies.
struct OrderedLog {
    file: std::fs::File,
    next: usize,
    ready: BTreeMap<usize, String>,
}

impl OrderedLog {
    fn push(&mut self, slot: usize, line: String) -> std::io::Result<()> {
        self.ready.insert(slot, line);
        while let Some(line) = self.ready.remove(&self.next) {
            writeln!(self.file, "{line}")?;
            self.next += 1;
        }
        self.file.flush()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub design: String,
    pub scenario: Scenario,
    pub batch: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Means over seeds of the chosen cell.
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub tally_val: usize,
    pub tally_test: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<(RunKey, RunResult)>,
    pub rows: Vec<SummaryRow>,
    /// Runs trained in this call (the rest came from the ledger).
    pub trained: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Validation,
    Test,
}

impl ExperimentResult {
    /// Run keys of every seed of the chosen cell of each row.
    pub fn best_runs(&self, plan: &ExperimentPlan) -> Vec<RunKey> {
        let mut out = Vec::new();
        for row in &self.rows {
            out.extend(self.runs.iter().map(|(k, _)| *k).filter(|k| {
                plan.designs[k.design].name == row.design
                    && k.scenario == row.scenario
                    && k.batch == row.batch
                    && k.learning_rate == row.learning_rate
                    && k.dropout == row.dropout
            }));
        }
        out
    }

    pub fn table(&self, part: Part, preamble: Option<&str>) -> String {
        summary_table(&self.rows, part, preamble)
    }
}

/// Result table with columns Design, Case, Dropout, LR, Batch, the eight
/// metrics and the best-score tally `#`.
pub fn summary_table(rows: &[SummaryRow], part: Part, preamble: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(p) = preamble {
        out.push_str(p);
        out.push('\n');
    }
    let names: Vec<String> = Metric::ALL.iter().map(|m| m.to_string()).collect();
    let _ = writeln!(out, "Design,Case,Dropout,LR,Batch,{},#", names.join(","));
    for row in rows {
        let (rep, tally) = match part {
            Part::Validation => (&row.val, row.tally_val),
            Part::Test => (&row.test, row.tally_test),
        };
        let vals: Vec<String> = Metric::ALL.iter().map(|m| m.format(m.get(rep))).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.design,
            row.scenario,
            row.dropout,
            row.learning_rate,
            row.batch,
            vals.join(","),
            tally
        );
    }
    out
}

/// Best-score tallies within each run of consecutive rows sharing a design.
pub fn assign_tallies(rows: &mut [SummaryRow]) {
    let mut start = 0;
    while start < rows.len() {
        let end = start + rows[start..].iter().take_while(|r| r.design == rows[start].design).count();
        let group = &mut rows[start..end];
        let tv = best_score_tally(&group.iter().map(|r| r.val).collect::<Vec<_>>());
        let tt = best_score_tally(&group.iter().map(|r| r.test).collect::<Vec<_>>());
        for ((row, v), t) in group.iter_mut().zip(tv).zip(tt) {
            row.tally_val = v;
            row.tally_test = t;
        }
        start = end;
    }
}

/// Trains every run of `plan` not already in the ledger, in parallel on the
/// current rayon pool, appending each finished run to the ledger. Results
/// are gathered by run index, so tables do not depend on scheduling.
pub fn run_experiment(
    plan: &ExperimentPlan,
    datasets: &[(Scenario, SupervisedDataset)],
    ledger: Option<&Path>,
    hash: &str,
) -> Result<ExperimentResult> {
    plan.validate()?;
    let dataset = |s: Scenario| -> Result<&SupervisedDataset> {
        datasets
            .iter()
            .find(|(id, _)| *id == s)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Config(format!("no dataset built for scenario {s}")))
    };
    for &s in &plan.scenarios {
        dataset(s)?.split()?;
    }
    let keys = plan.runs();
    let done = match ledger {
        Some(p) => read_ledger(p, hash)?,
        None => HashMap::new(),
    };
    let writer = match ledger {
        Some(p) => {
            let fresh = !p.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?;
            if fresh {
                writeln!(f, "{LEDGER_HEADER}").map_err(|e| Error::io(p, e))?;
            }
            Some((p, Mutex::new(OrderedLog { file: f, next: 0, ready: BTreeMap::new() })))
        }
        None => None,
    };
    let pending: Vec<usize> = (0..keys.len()).filter(|&i| !done.contains_key(&plan.run_id(&keys[i]))).collect();
    let fresh: Vec<(usize, RunResult)> = pending
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let key = &keys[i];
            let (_, result) = train_run(plan, key, dataset(key.scenario)?)?;
            if let Some((p, log)) = &writer {
                let line = ledger_line(hash, &plan.run_id(key), &result);
                log.lock().expect("ledger lock").push(slot, line).map_err(|e| Error::io(p, e))?;
            }
            Ok((i, result))
        })
        .collect::<Result<_>>()?;
    let mut fresh: HashMap<usize, RunResult> = fresh.into_iter().collect();
    let trained = fresh.len();
    let runs: Vec<(RunKey, RunResult)> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let r = fresh.remove(&i).unwrap_or_else(|| done[&plan.run_id(k)].clone());
            (*k, r)
        })
        .collect();
    let rows = summarize(plan, &runs);
    Ok(ExperimentResult { runs, rows, trained })
}

/// Picks, for each (design, scenario), the grid cell with the highest mean
/// validation accuracy over seeds (first in grid order on ties), then
/// fills in the best-score tallies within each design.
pub fn summarize(plan: &ExperimentPlan, runs: &[(RunKey, RunResult)]) -> Vec<SummaryRow> {
    let per_cell = plan.grid.seeds;
    let mut rows = Vec::new();
    let mut i = 0;
    for design in &plan.designs {
        for &scenario in &plan.scenarios {
            let mut best: Option<(f64, SummaryRow)> = None;
            for _ in 0..plan.grid.cells() {
                let cell = &runs[i..i + per_cell];
                i += per_cell;
                let val = mean_report(&cell.iter().map(|(_, r)| r.val).collect::<Vec<_>>());
                let test = mean_report(&cell.iter().map(|(_, r)| r.test).collect::<Vec<_>>());
                let acc = val.acc.unwrap_or(f64::NEG_INFINITY);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    let k = cell[0].0;
                    best = Some((
                        acc,
                        SummaryRow {
                            design: design.name.clone(),
                            scenario,
                            batch: k.batch,
                            learning_rate: k.learning_rate,
                            dropout: k.dropout,
                            val,
                            test,
                            tally_val: 0,
                            tally_test: 0,
                        },
                    ));
                }
            }
            rows.push(best.expect("grid has cells").1);
        }
    }
    assign_tallies(&mut rows);
    rows
}
