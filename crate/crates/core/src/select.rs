//! Driver selection: a `(k, l, K)` grid of transfer-entropy measurements per
//! candidate driver, permutation significance per cell, and the local-TE
//! feature series of the drivers that pass.
//!
//! Many cells per driver means many tests. With [`Correction::MaxT`] the
//! per-cell p-values are adjusted by the single-step max-T permutation
//! method: each cell's statistic is standardized by its own surrogate mean
//! and deviation, and the observed value is compared against the surrogate
//! maxima over the whole grid. This bounds the chance that an unrelated
//! driver shows any significant cell at `alpha`. [`Correction::Pooled`]
//! takes the maxima over every driver's grid at once, which bounds the
//! chance that any unrelated driver is selected.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::TeEngine;
use crate::error::{Error, Result};
use crate::ksg::TeOptions;
use crate::panel::Panel;
use crate::seed::derive_seed;
use crate::sig::{check_params, p_value, surrogate_permutation, DEFAULT_ALPHA, DEFAULT_SURROGATES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub target_orders: Vec<usize>,
    pub source_orders: Vec<usize>,
    pub neighbours: Vec<usize>,
}

impl GridSpec {
    /// Values are sorted and deduplicated; all must be at least 1.
    pub fn new(target_orders: &[usize], source_orders: &[usize], neighbours: &[usize]) -> Result<Self> {
        let clean = |name: &str, v: &[usize]| -> Result<Vec<usize>> {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::Config(format!("grid {name} must be non-empty and >= 1, got {v:?}")));
            }
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            Ok(v)
        };
        Ok(GridSpec {
            target_orders: clean("target orders", target_orders)?,
            source_orders: clean("source orders", source_orders)?,
            neighbours: clean("neighbour counts", neighbours)?,
        })
    }

    /// Every parameter from 1 to 10.
    pub fn full() -> Self {
        let r: Vec<usize> = (1..=10).collect();
        GridSpec::new(&r, &r, &r).expect("static grid")
    }

    pub fn cell_count(&self) -> usize {
        self.target_orders.len() * self.source_orders.len() * self.neighbours.len()
    }

    /// All cells in lexicographic order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::with_capacity(self.cell_count());
        for &k in &self.target_orders {
            for &l in &self.source_orders {
                for &neighbours in &self.neighbours {
                    out.push(CellKey { k, l, neighbours });
                }
            }
        }
        out
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::full()
    }
}

/// Target history `k`, source history `l`, neighbour count `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub k: usize,
    pub l: usize,
    pub neighbours: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correction {
    /// Each cell judged on its own p-value.
    None,
    /// Family-wise control over the driver's grid.
    MaxT,
    /// Family-wise control over the grids of all drivers together.
    #[default]
    Pooled,
}

impl std::str::FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Correction::None),
            "maxt" => Ok(Correction::MaxT),
            "pooled" => Ok(Correction::Pooled),
            _ => Err(Error::Config(format!("unknown correction `{s}` (expected none, maxT or pooled)"))),
        }
    }
}

impl std::fmt::Display for Correction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Correction::None => "none",
            Correction::MaxT => "maxT",
            Correction::Pooled => "pooled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigParams {
    pub surrogates: usize,
    pub alpha: f64,
    /// Master seed; per-driver surrogate streams are derived from it.
    pub seed: u64,
    pub correction: Correction,
    pub options: TeOptions,
}

impl Default for SigParams {
    fn default() -> Self {
        SigParams {
            surrogates: DEFAULT_SURROGATES,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            correction: Correction::default(),
            options: TeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub te: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// One grid cell; `stats` is `None` when the series is too short for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    pub stats: Option<CellStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub driver: String,
    /// Lexicographic by key.
    pub cells: Vec<Cell>,
    /// Largest TE among significant cells; ties go to the smallest key.
    pub optimal: Option<CellKey>,
}

impl GridResult {
    pub fn from_cells(driver: impl Into<String>, mut cells: Vec<Cell>) -> Self {
        cells.sort_by_key(|c| c.key);
        let mut optimal: Option<(CellKey, f64)> = None;
        for c in &cells {
            if let Some(s) = c.stats.filter(|s| s.significant) {
                if optimal.is_none_or(|(_, best)| s.te > best) {
                    optimal = Some((c.key, s.te));
                }
            }
        }
        GridResult {
            driver: driver.into(),
            cells,
            optimal: optimal.map(|(k, _)| k),
        }
    }

    pub fn cell(&self, key: CellKey) -> Option<&Cell> {
        self.cells.binary_search_by_key(&key, |c| c.key).ok().map(|i| &self.cells[i])
    }

    pub fn optimal_stats(&self) -> Option<CellStats> {
        self.optimal.and_then(|k| self.cell(k)).and_then(|c| c.stats)
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.stats.is_some()).count()
    }

    pub fn significant_count(&self) -> usize {
        self.cells.iter().filter(|c| c.stats.is_some_and(|s| s.significant)).count()
    }
}

/// Observed values and surrogates of one `(k, l)` pair over its valid `K`s.
struct PairRun {
    neighbours: Vec<usize>,
    observed: Vec<f64>,
    /// `surrogates[s][q]`.
    surrogates: Vec<Vec<f64>>,
}

/// Measures every cell of `grid` for `driver → target`.
///
/// Surrogate permutations depend on the master seed, the driver name and
/// `max(k, l)` only, so every cell sharing a row count sees the same
/// shuffles and any sub-grid reproduces the full grid's raw values.
pub fn grid_search(
    target: &[f64],
    driver_name: &str,
    driver: &[f64],
    grid: &GridSpec,
    sig: &SigParams,
) -> Result<GridResult> {
    let m = measure_grid(target, driver_name, driver, grid, sig)?;
    let adjusted = match sig.correction {
        Correction::None => m.raw.clone(),
        Correction::MaxT | Correction::Pooled => max_t_adjust(&m.observed, &m.null, sig.surrogates),
    };
    Ok(m.finish(grid, &adjusted, sig.alpha))
}

/// Raw measurements of one driver's valid cells.
struct Measured {
    driver: String,
    keys: Vec<CellKey>,
    observed: Vec<f64>,
    null: Vec<Vec<f64>>,
    raw: Vec<f64>,
}

impl Measured {
    fn finish(self, grid: &GridSpec, adjusted: &[f64], alpha: f64) -> GridResult {
        let mut cells: Vec<Cell> = grid.cells().into_iter().map(|key| Cell { key, stats: None }).collect();
        for (i, key) in self.keys.iter().enumerate() {
            let pos = cells.binary_search_by_key(key, |c| c.key).expect("key from grid");
            cells[pos].stats = Some(CellStats {
                te: self.observed[i],
                p_value: self.raw[i],
                p_adjusted: adjusted[i],
                significant: adjusted[i] <= alpha,
            });
        }
        GridResult::from_cells(self.driver, cells)
    }
}

fn measure_grid(
    target: &[f64],
    driver_name: &str,
    driver: &[f64],
    grid: &GridSpec,
    sig: &SigParams,
) -> Result<Measured> {
    check_params(sig.surrogates, sig.alpha)?;
    let engine = TeEngine::new(target, driver, &sig.options)?;
    let n = engine.len();
    let pairs: Vec<(usize, usize)> = grid
        .target_orders
        .iter()
        .flat_map(|&k| grid.source_orders.iter().map(move |&l| (k, l)))
        .collect();

    let runs: Vec<Option<PairRun>> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let m = k.max(l);
            let rows = n.saturating_sub(m);
            let neighbours: Vec<usize> = grid.neighbours.iter().copied().filter(|&kk| kk < rows).collect();
            if neighbours.is_empty() {
                return Ok(None);
            }
            let tables = engine.orders(k, l)?;
            let observed = tables.estimate(&neighbours, None)?.into_iter().map(|e| e.global).collect();
            let seed = derive_seed(sig.seed, driver_name, m as u64);
            let surrogates = (0..sig.surrogates as u64)
                .into_par_iter()
                .map(|s| {
                    let perm = surrogate_permutation(rows, seed, s);
                    Ok(tables
                        .estimate(&neighbours, Some(&perm))?
                        .into_iter()
                        .map(|e| e.global)
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(Some(PairRun {
                neighbours,
                observed,
                surrogates,
            }))
        })
        .collect::<Result<_>>()?;

    // Flatten valid cells into parallel arrays.
    let mut keys = Vec::new();
    let mut observed = Vec::new();
    let mut null: Vec<Vec<f64>> = Vec::new();
    for (&(k, l), run) in pairs.iter().zip(&runs) {
        let Some(run) = run else { continue };
        for (q, &neighbours) in run.neighbours.iter().enumerate() {
            keys.push(CellKey { k, l, neighbours });
            observed.push(run.observed[q]);
            null.push(run.surrogates.iter().map(|s| s[q]).collect());
        }
    }
    let raw: Vec<f64> = observed.iter().zip(&null).map(|(o, s)| p_value(*o, s)).collect();
    Ok(Measured {
        driver: driver_name.to_string(),
        keys,
        observed,
        null,
        raw,
    })
}

/// Grids of several drivers against one target. With
/// [`Correction::Pooled`] the max-T adjustment runs over all of them.
pub fn grid_search_all(
    target: &[f64],
    drivers: &[(&str, &[f64])],
    grid: &GridSpec,
    sig: &SigParams,
) -> Result<Vec<GridResult>> {
    if sig.correction != Correction::Pooled {
        return drivers
            .iter()
            .map(|(name, y)| grid_search(target, name, y, grid, sig))
            .collect();
    }
    let measured = drivers
        .iter()
        .map(|(name, y)| measure_grid(target, name, y, grid, sig))
        .collect::<Result<Vec<_>>>()?;
    let observed: Vec<f64> = measured.iter().flat_map(|m| m.observed.iter().copied()).collect();
    let null: Vec<Vec<f64>> = measured.iter().flat_map(|m| m.null.iter().cloned()).collect();
    let adjusted = max_t_adjust(&observed, &null, sig.surrogates);
    let mut offset = 0;
    Ok(measured
        .into_iter()
        .map(|m| {
            let part = &adjusted[offset..offset + m.observed.len()];
            offset += m.observed.len();
            m.finish(grid, part, sig.alpha)
        })
        .collect())
}

/// Single-step max-T adjusted p-values. `null[c]` holds cell `c`'s
/// surrogate values, all cells sharing the surrogate index. Each cell is
/// standardized by the mean and deviation of its observed and surrogate
/// values together.
pub fn max_t_adjust(observed: &[f64], null: &[Vec<f64>], surrogates: usize) -> Vec<f64> {
    if observed.is_empty() {
        return Vec::new();
    }
    let standardize = |v: f64, mean: f64, sd: f64| {
        if sd > 0.0 {
            (v - mean) / sd
        } else if v > mean {
            f64::INFINITY
        } else if v < mean {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    };
    let mut z_obs = Vec::with_capacity(observed.len());
    let mut max_null = vec![f64::NEG_INFINITY; surrogates];
    for (o, s) in observed.iter().zip(null) {
        // Observed and surrogates are standardized alike, so the S + 1
        // values stay exchangeable under the null.
        let mut all = s.clone();
        all.push(*o);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let sd = crate::prep::std_dev(&all);
        z_obs.push(standardize(*o, mean, sd));
        for (m, v) in max_null.iter_mut().zip(s) {
            let z = standardize(*v, mean, sd);
            if z > *m {
                *m = z;
            }
        }
    }
    z_obs
        .iter()
        .map(|z| (1 + max_null.iter().filter(|m| **m >= *z).count()) as f64 / (surrogates + 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedDriver {
    pub name: String,
    pub cell: CellKey,
    pub stats: CellStats,
    /// Local TE at the optimal cell, aligned to the input series: the first
    /// `max(k, l)` positions have no measurement and hold zero.
    pub locals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub length: usize,
    pub drivers: Vec<SelectedDriver>,
}

impl FeatureSet {
    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn selected_drivers(&self) -> Vec<String> {
        self.drivers.iter().map(|d| d.name.clone()).collect()
    }

    /// Column names of the local-TE features.
    pub fn feature_names(&self) -> Vec<String> {
        self.drivers.iter().map(|d| local_te_name(&d.name)).collect()
    }

    pub fn local_te_series(&self) -> Vec<&[f64]> {
        self.drivers.iter().map(|d| d.locals.as_slice()).collect()
    }

    /// Local-TE features on the given calendar (one date per series value).
    pub fn to_panel(&self, dates: &[NaiveDate]) -> Result<Panel> {
        if dates.len() != self.length {
            return Err(Error::Shape(format!(
                "{} dates for local series of length {}",
                dates.len(),
                self.length
            )));
        }
        Panel::from_complete(
            dates.to_vec(),
            self.feature_names(),
            self.drivers.iter().map(|d| d.locals.clone()).collect(),
        )
    }
}

pub fn local_te_name(driver: &str) -> String {
    format!("lte_{driver}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub target: String,
    pub grids: Vec<GridResult>,
    pub features: FeatureSet,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    target: &'a str,
    status: &'a str,
    selected: Vec<String>,
    excluded: Vec<String>,
    driver: Vec<DriverSummary>,
}

#[derive(Serialize)]
struct DriverSummary {
    name: String,
    selected: bool,
    valid_cells: usize,
    significant_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    te_nats: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_adjusted: Option<f64>,
}

impl Selection {
    pub fn excluded(&self) -> Vec<String> {
        self.grids.iter().filter(|g| g.optimal.is_none()).map(|g| g.driver.clone()).collect()
    }

    /// Keyed text report; `status` reads "no significant drivers" when the
    /// feature set is empty.
    pub fn summary(&self, preamble: Option<&str>) -> Result<String> {
        let doc = SummaryDoc {
            target: &self.target,
            status: if self.features.is_empty() { "no significant drivers" } else { "ok" },
            selected: self.features.selected_drivers(),
            excluded: self.excluded(),
            driver: self
                .grids
                .iter()
                .map(|g| {
                    let opt = g.optimal_stats();
                    DriverSummary {
                        name: g.driver.clone(),
                        selected: g.optimal.is_some(),
                        valid_cells: g.valid_count(),
                        significant_cells: g.significant_count(),
                        optimal: g.optimal.map(|c| [c.k, c.l, c.neighbours]),
                        te_nats: opt.map(|s| s.te),
                        p_value: opt.map(|s| s.p_value),
                        p_adjusted: opt.map(|s| s.p_adjusted),
                    }
                })
                .collect(),
        };
        let body = toml::to_string(&doc).map_err(|e| Error::Numeric(format!("summary serialization: {e}")))?;
        Ok(match preamble {
            Some(p) => format!("{p}\n{body}"),
            None => body,
        })
    }
}

/// Runs the grid for every driver against `target` (columns of a complete
/// panel, typically log returns) and keeps the drivers with at least one
/// significant cell, in the given order.
pub fn select_features(
    panel: &Panel,
    target: &str,
    drivers: &[String],
    grid: &GridSpec,
    sig: &SigParams,
) -> Result<Selection> {
    if drivers.is_empty() {
        return Err(Error::Config("no candidate drivers given".into()));
    }
    if drivers.iter().any(|d| d == target) {
        return Err(Error::Config(format!("target `{target}` listed as its own driver")));
    }
    let x = panel.values(target)?;
    let series = drivers.iter().map(|d| panel.values(d)).collect::<Result<Vec<_>>>()?;
    let inputs: Vec<(&str, &[f64])> = drivers.iter().zip(&series).map(|(d, y)| (d.as_str(), y.as_slice())).collect();
    let grids = grid_search_all(&x, &inputs, grid, sig)?;
    let mut selected = Vec::new();
    for (result, y) in grids.iter().zip(&series) {
        let name = &result.driver;
        if let (Some(cell), Some(stats)) = (result.optimal, result.optimal_stats()) {
            let engine = TeEngine::new(&x, y, &sig.options)?;
            let est = engine.orders(cell.k, cell.l)?.estimate(&[cell.neighbours], None)?;
            let m = cell.k.max(cell.l);
            let mut locals = vec![0.0; m];
            locals.extend_from_slice(&est[0].locals);
            selected.push(SelectedDriver {
                name: name.clone(),
                cell,
                stats,
                locals,
            });
        }
    }
    Ok(Selection {
        target: target.to_string(),
        grids,
        features: FeatureSet {
            length: x.len(),
            drivers: selected,
        },
    })
}

const HEATMAP_HEADER: &str = "driver,k,l,K,te_nats,p_value,p_adjusted,significant";

/// Long-format grid table, one row per cell. Cells too short to measure
/// have empty values and `invalid` in the last column.
pub fn heatmap_table(results: &[GridResult], preamble: Option<&str>) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no grid results to export".into()));
    }
    let mut out = String::new();
    if let Some(p) = preamble {
        out.push_str(p);
        out.push('\n');
    }
    out.push_str(HEATMAP_HEADER);
    out.push('\n');
    for g in results {
        if g.driver.contains([',', '\n']) {
            return Err(Error::InvalidArgument(format!("driver name `{}` not exportable", g.driver)));
        }
        for c in &g.cells {
            let CellKey { k, l, neighbours } = c.key;
            let _ = match c.stats {
                Some(s) => writeln!(
                    out,
                    "{},{k},{l},{neighbours},{:?},{:?},{:?},{}",
                    g.driver, s.te, s.p_value, s.p_adjusted, s.significant
                ),
                None => writeln!(out, "{},{k},{l},{neighbours},,,,invalid", g.driver),
            };
        }
    }
    Ok(out)
}

pub fn export_heatmap(results: &[GridResult], path: &Path, preamble: Option<&str>) -> Result<()> {
    let text = heatmap_table(results, preamble)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`heatmap_table`].
pub fn parse_heatmap(text: &str) -> Result<Vec<GridResult>> {
    let mut groups: Vec<(String, Vec<Cell>)> = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != HEATMAP_HEADER {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: 1,
                    reason: format!("expected header `{HEATMAP_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |column: usize, reason: String| Error::Parse {
            line: lineno + 1,
            column,
            reason,
        };
        if fields.len() != 8 {
            return Err(err(1, format!("expected 8 fields, found {}", fields.len())));
        }
        let int = |i: usize| fields[i].parse::<usize>().map_err(|e| err(i + 1, e.to_string()));
        let real = |i: usize| fields[i].parse::<f64>().map_err(|e| err(i + 1, e.to_string()));
        let key = CellKey {
            k: int(1)?,
            l: int(2)?,
            neighbours: int(3)?,
        };
        let stats = match fields[7] {
            "invalid" => None,
            flag => Some(CellStats {
                te: real(4)?,
                p_value: real(5)?,
                p_adjusted: real(6)?,
                significant: flag.parse().map_err(|_| err(8, format!("bad flag `{flag}`")))?,
            }),
        };
        let driver = fields[0];
        match groups.last_mut() {
            Some((d, cells)) if d == driver => cells.push(Cell { key, stats }),
            _ => groups.push((driver.to_string(), vec![Cell { key, stats }])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            reason: "no grid rows".into(),
        });
    }
    Ok(groups.into_iter().map(|(d, c)| GridResult::from_cells(d, c)).collect())
}
