//! Supervised windows with next-step direction labels, chronological splits
//! and the feature scenarios S1–S5.
//!
//! Row `t` of the input panel holds the returns dated `t`. Sample `i` is the
//! block of rows `i ..= i + window - 1` and its label is the sign of the
//! target return `horizon` rows later.

use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{s, Array3, ArrayView3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{parse_date, Panel};
use crate::select::FeatureSet;

pub const DEFAULT_WINDOW: usize = 74;
pub const DEFAULT_HORIZON: usize = 1;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.75, 0.13, 0.12];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    /// samples × window × features.
    pub windows: Array3<f64>,
    /// 1.0 for an up move, 0.0 otherwise.
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Date of the return each label is read from.
    pub label_dates: Vec<NaiveDate>,
    pub window: usize,
    pub horizon: usize,
    pub split: Option<SplitRanges>,
    /// Per-feature divisor applied before windowing, if any.
    pub scale: Option<Vec<f64>>,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn part(&self, range: Range<usize>) -> (ArrayView3<'_, f64>, &[f64]) {
        (self.windows.slice(s![range.clone(), .., ..]), &self.labels[range])
    }

    pub fn split(&self) -> Result<&SplitRanges> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has not been split".into()))
    }

    /// Fraction of positive labels.
    pub fn balance(&self, range: Range<usize>) -> f64 {
        let part = &self.labels[range];
        if part.is_empty() {
            return f64::NAN;
        }
        part.iter().sum::<f64>() / part.len() as f64
    }
}

/// Windows over every panel column.
pub fn make_windows(panel: &Panel, target: &str, window: usize, horizon: usize) -> Result<SupervisedDataset> {
    make_windows_with(panel, target, panel.names(), window, horizon)
}

/// Windows over `features` with labels from `target`; the target need not
/// be among the features.
pub fn make_windows_with(
    panel: &Panel,
    target: &str,
    features: &[String],
    window: usize,
    horizon: usize,
) -> Result<SupervisedDataset> {
    windows_over_rows(panel, target, features, window, horizon, 0..panel.len(), None)
}

fn windows_over_rows(
    panel: &Panel,
    target: &str,
    features: &[String],
    window: usize,
    horizon: usize,
    rows: Range<usize>,
    scale: Option<&[f64]>,
) -> Result<SupervisedDataset> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("window and horizon must be >= 1".into()));
    }
    if features.is_empty() {
        return Err(Error::Config("no feature columns".into()));
    }
    let n = rows.len();
    if window + horizon > n {
        return Err(Error::Data(format!(
            "{n} rows cannot hold a window of {window} plus horizon {horizon}"
        )));
    }
    let label_col = panel.values(target)?;
    let cols: Vec<Vec<f64>> = features.iter().map(|f| panel.values(f)).collect::<Result<_>>()?;
    let samples = n - window - horizon + 1;
    let mut windows = Array3::zeros((samples, window, features.len()));
    let mut labels = Vec::with_capacity(samples);
    let mut label_dates = Vec::with_capacity(samples);
    for i in 0..samples {
        let start = rows.start + i;
        for (f, col) in cols.iter().enumerate() {
            let div = scale.map_or(1.0, |s| s[f]);
            for w in 0..window {
                windows[[i, w, f]] = col[start + w] / div;
            }
        }
        let label_row = start + window - 1 + horizon;
        labels.push(if label_col[label_row] > 0.0 { 1.0 } else { 0.0 });
        label_dates.push(panel.dates()[label_row]);
    }
    Ok(SupervisedDataset {
        windows,
        labels,
        feature_names: features.to_vec(),
        label_dates,
        window,
        horizon,
        split: None,
        scale: scale.map(|s| s.to_vec()),
    })
}

/// Train/val/test sample counts from fractions: train and val rounded to
/// nearest, test takes the remainder.
pub fn split_sizes(samples: usize, fractions: [f64; 3]) -> Result<SplitRanges> {
    if fractions.iter().any(|f| !(*f > 0.0)) || fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to at most 1"
        )));
    }
    let train = (samples as f64 * fractions[0]).round() as usize;
    let val = (samples as f64 * fractions[1]).round() as usize;
    if train == 0 || val == 0 || train + val >= samples {
        return Err(Error::Data(format!(
            "split of {samples} samples by {fractions:?} leaves an empty part"
        )));
    }
    Ok(SplitRanges {
        train: 0..train,
        val: train..train + val,
        test: train + val..samples,
    })
}

pub fn chronological_split(mut ds: SupervisedDataset, fractions: [f64; 3]) -> Result<SupervisedDataset> {
    ds.split = Some(split_sizes(ds.len(), fractions)?);
    Ok(ds)
}

/// Calendar ranges of the three splits. A return dated `d` belongs to the
/// range `(start, end]`: its price pair lies inside the range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateSegments {
    pub train: (NaiveDate, NaiveDate),
    pub val: (NaiveDate, NaiveDate),
    pub test: (NaiveDate, NaiveDate),
}

impl DateSegments {
    pub fn parse(train: [&str; 2], val: [&str; 2], test: [&str; 2]) -> Result<Self> {
        let pair = |p: [&str; 2]| -> Result<(NaiveDate, NaiveDate)> { Ok((parse_date(p[0])?, parse_date(p[1])?)) };
        let segs = DateSegments {
            train: pair(train)?,
            val: pair(val)?,
            test: pair(test)?,
        };
        segs.validate()?;
        Ok(segs)
    }

    /// 2017-01-01..2020-01-04, 2020-01-05..2020-07-11, 2020-07-12..2021-01-09.
    pub fn paper() -> Self {
        DateSegments::parse(
            ["2017-01-01", "2020-01-04"],
            ["2020-01-05", "2020-07-11"],
            ["2020-07-12", "2021-01-09"],
        )
        .expect("static dates")
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        for (a, b) in parts {
            if a >= b {
                return Err(Error::Config(format!("split range {a}..{b} is empty")));
            }
        }
        if self.train.1 >= self.val.0 || self.val.1 >= self.test.0 {
            return Err(Error::Config("split ranges overlap or are out of order".into()));
        }
        Ok(())
    }

    fn rows(&self, dates: &[NaiveDate]) -> Result<[Range<usize>; 3]> {
        let find = |(a, b): (NaiveDate, NaiveDate)| -> Result<Range<usize>> {
            let start = dates.partition_point(|d| *d <= a);
            let end = dates.partition_point(|d| *d <= b);
            if start == end {
                return Err(Error::Data(format!("no returns dated in ({a}, {b}]")));
            }
            // The first return's earlier price sits one day before it.
            let first_price = dates.first().and_then(|d| d.pred_opt());
            if first_price.is_none_or(|d| d > a) || dates.last().is_none_or(|d| *d < b) {
                return Err(Error::Config(format!("split range {a}..{b} is outside the panel calendar")));
            }
            Ok(start..end)
        };
        Ok([find(self.train)?, find(self.val)?, find(self.test)?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPlan {
    Dates(DateSegments),
    Fractions([f64; 3]),
}

/// Population standard deviation of each feature over `rows`.
fn train_std(panel: &Panel, features: &[String], rows: Range<usize>) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            let v = panel.values(f)?;
            let sd = crate::prep::std_dev(&v[rows.clone()]);
            if sd > 0.0 && sd.is_finite() {
                Ok(sd)
            } else {
                Err(Error::Data(format!("feature `{f}` is constant over the training rows")))
            }
        })
        .collect()
}

/// Windows, split and (optionally) train-only variance scaling in one pass.
///
/// With date segments, windows are cut inside each segment so no sample
/// straddles a boundary. With fractions the sample index is split after
/// windowing, and scaling uses the rows covered by training windows.
pub fn build_dataset(
    panel: &Panel,
    target: &str,
    features: &[String],
    window: usize,
    horizon: usize,
    plan: &SplitPlan,
    scale: bool,
) -> Result<SupervisedDataset> {
    match plan {
        SplitPlan::Fractions(fr) => {
            let samples = (panel.len() + 1).checked_sub(window + horizon).unwrap_or(0);
            let split = split_sizes(samples, *fr)?;
            let std = if scale {
                Some(train_std(panel, features, 0..split.train.end + window - 1)?)
            } else {
                None
            };
            let mut ds = windows_over_rows(panel, target, features, window, horizon, 0..panel.len(), std.as_deref())?;
            ds.split = Some(split);
            Ok(ds)
        }
        SplitPlan::Dates(segs) => {
            let rows = segs.rows(panel.dates())?;
            let std = if scale {
                Some(train_std(panel, features, rows[0].clone())?)
            } else {
                None
            };
            let parts: Vec<SupervisedDataset> = rows
                .iter()
                .map(|r| windows_over_rows(panel, target, features, window, horizon, r.clone(), std.as_deref()))
                .collect::<Result<_>>()?;
            let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
            let views: Vec<ArrayView3<f64>> = parts.iter().map(|p| p.windows.view()).collect();
            let windows = ndarray::concatenate(ndarray::Axis(0), &views)
                .map_err(|e| Error::Shape(e.to_string()))?;
            let (a, b) = (sizes[0], sizes[0] + sizes[1]);
            Ok(SupervisedDataset {
                windows,
                labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
                feature_names: features.to_vec(),
                label_dates: parts.iter().flat_map(|p| p.label_dates.iter().copied()).collect(),
                window,
                horizon,
                split: Some(SplitRanges {
                    train: 0..a,
                    val: a..b,
                    test: b..b + sizes[2],
                }),
                scale: std,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    /// Target history alone.
    S1,
    /// Target plus every candidate driver.
    S2,
    /// Target plus the significant drivers.
    S3,
    /// Local-TE series of the significant drivers.
    S4,
    /// S3 columns followed by S4 columns.
    S5,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4, Scenario::S5];

    pub fn needs_selection(self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S4 | Scenario::S5)
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            "S5" => Ok(Scenario::S5),
            _ => Err(Error::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub id: Scenario,
    pub columns: Vec<String>,
}

pub fn resolve_scenario(id: Scenario, target: &str, candidates: &[String], features: &FeatureSet) -> Result<ScenarioSpec> {
    if id.needs_selection() && features.is_empty() {
        return Err(Error::Data(format!("scenario {id} needs at least one significant driver")));
    }
    let own = || std::iter::once(target.to_string());
    let columns: Vec<String> = match id {
        Scenario::S1 => own().collect(),
        Scenario::S2 => own().chain(candidates.iter().cloned()).collect(),
        Scenario::S3 => own().chain(features.selected_drivers()).collect(),
        Scenario::S4 => features.feature_names(),
        Scenario::S5 => own()
            .chain(features.selected_drivers())
            .chain(features.feature_names())
            .collect(),
    };
    Ok(ScenarioSpec { id, columns })
}

/// Appends the local-TE columns of `features` to a copy of `panel`.
pub fn with_local_te(panel: &Panel, features: &FeatureSet) -> Result<Panel> {
    if features.length != panel.len() {
        return Err(Error::Shape(format!(
            "local-TE series of length {} for a panel of {} rows",
            features.length,
            panel.len()
        )));
    }
    let mut out = panel.clone();
    for (name, d) in features.feature_names().iter().zip(&features.drivers) {
        out.push_column(name, d.locals.iter().copied().map(Some).collect())?;
    }
    Ok(out)
}

pub fn build_scenario(
    spec: &ScenarioSpec,
    panel: &Panel,
    target: &str,
    window: usize,
    horizon: usize,
    plan: &SplitPlan,
) -> Result<SupervisedDataset> {
    build_dataset(panel, target, &spec.columns, window, horizon, plan, true)
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: String,
    window: usize,
    horizon: usize,
    features: &'a [String],
    samples: usize,
    split: Vec<SplitEntry>,
}

#[derive(Serialize)]
struct SplitEntry {
    name: &'static str,
    samples: usize,
    first_label_date: String,
    last_label_date: String,
    positive_fraction: f64,
}

/// Keyed text description of a split dataset.
pub fn manifest(ds: &SupervisedDataset, scenario: &str, preamble: Option<&str>) -> Result<String> {
    let split = ds.split()?;
    let entry = |name, r: &Range<usize>| SplitEntry {
        name,
        samples: r.len(),
        first_label_date: ds.label_dates[r.start].to_string(),
        last_label_date: ds.label_dates[r.end - 1].to_string(),
        positive_fraction: ds.balance(r.clone()),
    };
    let doc = Manifest {
        scenario: scenario.to_string(),
        window: ds.window,
        horizon: ds.horizon,
        features: &ds.feature_names,
        samples: ds.len(),
        split: vec![entry("train", &split.train), entry("val", &split.val), entry("test", &split.test)],
    };
    let body = toml::to_string(&doc).map_err(|e| Error::Numeric(format!("manifest serialization: {e}")))?;
    Ok(match preamble {
        Some(p) => format!("{p}\n{body}"),
        None => body,
    })
}
