//! Run configuration: keyed TOML with `paper` and `smoke` default sets.
//!
//! A file only needs the keys it changes; everything else comes from the
//! chosen default set. The effective configuration (all keys resolved) is
//! what gets hashed and written next to the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DateSegments, Scenario, SplitPlan, DEFAULT_FRACTIONS, DEFAULT_HORIZON, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::experiment::{Design, ExperimentPlan, HyperGrid};
use crate::ksg::TeOptions;
use crate::net::{NetworkSpec, Preset};
use crate::select::{Correction, GridSpec, SigParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defaults {
    Paper,
    Smoke,
}

impl FromStr for Defaults {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Defaults::Paper),
            "smoke" => Ok(Defaults::Smoke),
            _ => Err(Error::Config(format!("unknown defaults `{s}` (expected paper or smoke)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core. Does not change any output.
    pub workers: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub selection: SelectionConfig,
    pub dataset: DatasetConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Price panel: header row, first column `date`.
    pub input: PathBuf,
    pub target: String,
    /// Candidate drivers; empty means every other column.
    pub candidates: Vec<String>,
    /// Columns whose missing weekend cells copy the preceding Friday.
    pub weekend_fill: Vec<String>,
    /// Fill remaining interior gaps with a natural cubic spline.
    pub impute: bool,
    /// Columns turned into first differences instead of log returns.
    pub differenced: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub target_orders: Vec<usize>,
    pub source_orders: Vec<usize>,
    pub neighbours: Vec<usize>,
    pub surrogates: usize,
    pub alpha: f64,
    /// "none", "maxT" (per driver) or "pooled" (all drivers together).
    pub correction: String,
    pub normalize: bool,
    /// Standard deviation of the tie-breaking noise; 0 disables it.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub window: usize,
    pub horizon: usize,
    /// "dates" or "fractions".
    pub split: String,
    pub train: [String; 2],
    pub val: [String; 2],
    pub test: [String; 2],
    pub fractions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<String>,
    /// Preset names (D1..D5) or keys of `custom_designs`.
    pub designs: Vec<String>,
    /// Name → layer string, e.g. `lstm(16) dropout(0.5) dense(1,sigmoid)`.
    pub custom_designs: BTreeMap<String, String>,
    pub batch: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub seeds: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl RunConfig {
    pub fn defaults(which: Defaults) -> Self {
        let full: Vec<usize> = (1..=10).collect();
        let paper = RunConfig {
            seed: 0,
            workers: 0,
            out: PathBuf::from("out"),
            data: DataConfig {
                input: PathBuf::new(),
                target: String::new(),
                candidates: Vec::new(),
                weekend_fill: Vec::new(),
                impute: true,
                differenced: Vec::new(),
            },
            selection: SelectionConfig {
                target_orders: full.clone(),
                source_orders: full.clone(),
                neighbours: full,
                surrogates: 100,
                alpha: 0.05,
                correction: Correction::None.to_string(),
                normalize: true,
                jitter: 1e-8,
            },
            dataset: DatasetConfig {
                window: DEFAULT_WINDOW,
                horizon: DEFAULT_HORIZON,
                split: "dates".into(),
                train: ["2017-01-01".into(), "2020-01-04".into()],
                val: ["2020-01-05".into(), "2020-07-11".into()],
                test: ["2020-07-12".into(), "2021-01-09".into()],
                fractions: DEFAULT_FRACTIONS,
            },
            experiment: ExperimentConfig {
                scenarios: names(&["S1", "S2", "S3", "S4", "S5"]),
                designs: names(&["D1", "D2", "D3", "D4", "D5"]),
                custom_designs: BTreeMap::new(),
                batch: HyperGrid::paper().batch,
                learning_rate: HyperGrid::paper().learning_rate,
                dropout: HyperGrid::paper().dropout,
                seeds: 10,
                max_epochs: 100,
                patience: 10,
            },
        };
        match which {
            Defaults::Paper => paper,
            Defaults::Smoke => RunConfig {
                selection: SelectionConfig {
                    target_orders: vec![1, 2],
                    source_orders: vec![1, 2],
                    neighbours: vec![4],
                    surrogates: 39,
                    correction: Correction::Pooled.to_string(),
                    ..paper.selection
                },
                dataset: DatasetConfig { window: 10, split: "fractions".into(), ..paper.dataset },
                experiment: ExperimentConfig {
                    scenarios: names(&["S3"]),
                    designs: names(&["D5"]),
                    batch: vec![32],
                    learning_rate: vec![0.001],
                    dropout: vec![0.5],
                    seeds: 2,
                    max_epochs: 5,
                    patience: 3,
                    ..paper.experiment
                },
                ..paper
            },
        }
    }

    /// Overlays `text` on a default set. The set is `defaults` if given,
    /// else the file's own `defaults = "..."` key, else `paper`.
    pub fn from_toml(text: &str, defaults: Option<Defaults>) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let named = match user.remove("defaults") {
            Some(toml::Value::String(s)) => Some(s.parse()?),
            Some(other) => return Err(Error::Config(format!("`defaults` must be a string, got {other}"))),
            None => None,
        };
        let base = RunConfig::defaults(defaults.or(named).unwrap_or(Defaults::Paper));
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, defaults: Option<Defaults>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text, defaults)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the effective configuration,
    /// leaving out `workers` and `out`, which do not affect results.
    pub fn hash(&self) -> String {
        let neutral = RunConfig { workers: 0, out: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(neutral.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line opening every output file.
    pub fn header(&self) -> String {
        format!("# infoflow {} seed={} config={}", env!("CARGO_PKG_VERSION"), self.seed, self.hash())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.input.as_os_str().is_empty() {
            return Err(Error::Config("data.input is required".into()));
        }
        if self.data.target.is_empty() {
            return Err(Error::Config("data.target is required".into()));
        }
        self.grid()?;
        self.sig_params()?;
        self.split_plan()?;
        if self.dataset.window == 0 || self.dataset.horizon == 0 {
            return Err(Error::Config("window and horizon must be >= 1".into()));
        }
        self.scenarios()?;
        self.plan()?.validate()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let s = &self.selection;
        GridSpec::new(&s.target_orders, &s.source_orders, &s.neighbours)
    }

    pub fn sig_params(&self) -> Result<SigParams> {
        let s = &self.selection;
        if s.surrogates == 0 {
            return Err(Error::Config("selection.surrogates must be >= 1".into()));
        }
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return Err(Error::Config(format!("selection.alpha {} not in (0, 1)", s.alpha)));
        }
        if !(s.jitter >= 0.0 && s.jitter.is_finite()) {
            return Err(Error::Config(format!("selection.jitter {} must be >= 0", s.jitter)));
        }
        Ok(SigParams {
            surrogates: s.surrogates,
            alpha: s.alpha,
            seed: self.seed,
            correction: s.correction.parse()?,
            options: TeOptions {
                normalize: s.normalize,
                jitter: (s.jitter > 0.0).then_some(s.jitter),
                ..TeOptions::default()
            },
        })
    }

    pub fn split_plan(&self) -> Result<SplitPlan> {
        let d = &self.dataset;
        match d.split.as_str() {
            "dates" => {
                let (t, v, s) = (&d.train, &d.val, &d.test);
                Ok(SplitPlan::Dates(DateSegments::parse(
                    [&t[0], &t[1]],
                    [&v[0], &v[1]],
                    [&s[0], &s[1]],
                )?))
            }
            "fractions" => {
                let f = d.fractions;
                if f.iter().any(|v| !(*v > 0.0)) || f.iter().sum::<f64>() > 1.0 + 1e-9 {
                    return Err(Error::Config(format!("fractions {f:?} must be positive with sum <= 1")));
                }
                Ok(SplitPlan::Fractions(f))
            }
            other => Err(Error::Config(format!("dataset.split `{other}` (expected dates or fractions)"))),
        }
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.experiment.scenarios.iter().map(|s| s.parse()).collect()
    }

    pub fn designs(&self) -> Result<Vec<Design>> {
        let e = &self.experiment;
        e.designs
            .iter()
            .map(|name| match e.custom_designs.get(name) {
                Some(layers) => Ok(Design { name: name.clone(), spec: NetworkSpec::parse(layers)? }),
                None => name.parse::<Preset>().map(Design::preset).map_err(|_| {
                    Error::Config(format!("design `{name}` is neither a preset nor a custom design"))
                }),
            })
            .collect()
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        let e = &self.experiment;
        Ok(ExperimentPlan {
            designs: self.designs()?,
            scenarios: self.scenarios()?,
            grid: HyperGrid {
                batch: e.batch.clone(),
                learning_rate: e.learning_rate.clone(),
                dropout: e.dropout.clone(),
                seeds: e.seeds,
            },
            max_epochs: e.max_epochs,
            patience: e.patience,
            master_seed: self.seed,
        })
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
