//! Preprocessing: weekend filling, spline imputation, returns, scaling, and
//! descriptive statistics.

use std::fmt::Write as _;

use chrono::{Datelike, Weekday};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::panel::Panel;

/// `ln(series[t+1] / series[t])`.
pub fn log_return(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "log return needs at least 2 values, got {}",
            series.len()
        )));
    }
    if let Some(index) = series.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain {
            index,
            reason: format!("log return requires strictly positive values, found {}", series[index]),
        });
    }
    Ok(series.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// `series[t+1] - series[t]`, used for series that may change sign.
pub fn difference(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "differencing needs at least 2 values, got {}",
            series.len()
        )));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Running sum of log returns.
pub fn cumulative_return(log_returns: &[f64]) -> Vec<f64> {
    log_returns
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

/// Missing Saturday and Sunday cells of the listed columns take the value of
/// the preceding Friday.
///
/// If that Friday is itself missing the weekend cells stay missing and are
/// left for imputation. A weekend gap whose Friday lies before the start of
/// the panel is an error.
pub fn fill_weekends(panel: &Panel, columns: &[String]) -> Result<Panel> {
    let dates = panel.dates();
    for (i, w) in dates.windows(2).enumerate() {
        if w[0].succ_opt() != Some(w[1]) {
            return Err(Error::Data(format!(
                "weekend filling needs a contiguous daily calendar; gap after row {i} ({})",
                w[0]
            )));
        }
    }
    let mut out = panel.clone();
    for name in columns {
        let mut col = panel.column(name)?.to_vec();
        for t in 0..col.len() {
            if col[t].is_some() {
                continue;
            }
            let back = match dates[t].weekday() {
                Weekday::Sat => 1,
                Weekday::Sun => 2,
                _ => continue,
            };
            if t < back {
                return Err(Error::Data(format!(
                    "column `{name}`: weekend {} has no preceding Friday in range",
                    dates[t]
                )));
            }
            col[t] = col[t - back];
        }
        out.set_column(name, col)?;
    }
    Ok(out)
}

/// Fills interior gaps with the natural cubic spline through the observed
/// points, using the row index as abscissa. Observed values are returned
/// unchanged.
pub fn spline_impute(series: &[Option<f64>]) -> Result<Vec<f64>> {
    let n = series.len();
    if n == 0 || series[0].is_none() || series[n - 1].is_none() {
        return Err(Error::Data("spline imputation needs observed endpoints".into()));
    }
    let knots: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i as f64, v)))
        .collect();
    if knots.len() < 4 {
        return Err(Error::Data(format!(
            "spline imputation needs at least 4 observed points, got {}",
            knots.len()
        )));
    }
    if knots.len() == n {
        return Ok(knots.into_iter().map(|(_, v)| v).collect());
    }
    let spline = NaturalSpline::fit(&knots);
    Ok(series
        .iter()
        .enumerate()
        .map(|(i, v)| v.unwrap_or_else(|| spline.eval(i as f64)))
        .collect())
}

/// Natural cubic spline (zero second derivative at both ends).
struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    fn fit(knots: &[(f64, f64)]) -> Self {
        let n = knots.len();
        let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();

        // Tridiagonal system for interior second derivatives (Thomas algorithm).
        let m = n - 2;
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for j in 0..m {
            let i = j + 1;
            diag[j] = 2.0 * (h[i - 1] + h[i]);
            upper[j] = h[i];
            rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for j in 1..m {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        let mut second = vec![0.0; n];
        for j in (0..m).rev() {
            let next = if j + 1 < m { second[j + 2] } else { 0.0 };
            second[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
        }
        NaturalSpline { xs, ys, second }
    }

    fn eval(&self, x: f64) -> f64 {
        let seg = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        };
        let (x0, x1) = (self.xs[seg], self.xs[seg + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[seg]
            + b * self.ys[seg + 1]
            + ((a * a * a - a) * self.second[seg] + (b * b * b - b) * self.second[seg + 1]) * h * h
                / 6.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/N) standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Divides by the population standard deviation without demeaning.
pub fn scale_by_std(series: &[f64]) -> Result<Vec<f64>> {
    let sd = std_dev(series);
    if !(sd > 0.0) {
        return Err(Error::Data("cannot scale a zero-variance series".into()));
    }
    Ok(series.iter().map(|x| x / sd).collect())
}

/// Star levels of the Jarque–Bera test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    None,
    TenPercent,
    FivePercent,
    OnePercent,
}

impl Significance {
    pub fn from_p_value(p: f64) -> Self {
        if p < 0.01 {
            Significance::OnePercent
        } else if p < 0.05 {
            Significance::FivePercent
        } else if p < 0.10 {
            Significance::TenPercent
        } else {
            Significance::None
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::TenPercent => "*",
            Significance::FivePercent => "**",
            Significance::OnePercent => "***",
        }
    }
}

/// Descriptive statistics of one series. `kurtosis_excess` is the fourth
/// standardized moment minus 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub kurtosis_excess: f64,
    pub jb: f64,
    pub jb_pvalue: f64,
    pub significance: Significance,
}

impl StatsSummary {
    /// Completes a summary from already-known moments.
    pub fn from_moments(n: usize, mean: f64, std_dev: f64, skewness: f64, kurtosis_excess: f64) -> Self {
        let jb = n as f64 / 6.0 * (skewness * skewness + kurtosis_excess * kurtosis_excess / 4.0);
        // Chi-square with 2 degrees of freedom: survival function is exp(-x/2).
        let jb_pvalue = (-jb / 2.0).exp();
        StatsSummary {
            n,
            mean,
            std_dev,
            skewness,
            kurtosis_excess,
            jb,
            jb_pvalue,
            significance: Significance::from_p_value(jb_pvalue),
        }
    }
}

pub fn describe(series: &[f64]) -> Result<StatsSummary> {
    let n = series.len();
    if n < 8 {
        return Err(Error::InvalidArgument(format!(
            "describe needs at least 8 values, got {n}"
        )));
    }
    let m = mean(series);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let nf = n as f64;
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    if !(m2 > 0.0) {
        return Err(Error::Data("zero-variance series has no standardized moments".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    Ok(StatsSummary::from_moments(n, m, m2.sqrt(), skew, kurt))
}

/// Pearson correlation matrix of a complete panel.
pub fn corr_matrix(panel: &Panel) -> Result<Array2<f64>> {
    let cols: Vec<Vec<f64>> = panel
        .names()
        .iter()
        .map(|n| panel.values(n))
        .collect::<Result<_>>()?;
    let p = cols.len();
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = mean(c);
            c.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    for (name, nrm) in panel.names().iter().zip(&norms) {
        if !(*nrm > 0.0) {
            return Err(Error::Data(format!("column `{name}` has zero variance")));
        }
    }
    let mut out = Array2::zeros((p, p));
    for i in 0..p {
        out[[i, i]] = 1.0;
        for j in (i + 1)..p {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out[[i, j]] = r;
            out[[j, i]] = r;
        }
    }
    Ok(out)
}

/// Table of descriptive statistics, one row per variable.
pub fn stats_table(rows: &[(String, StatsSummary)], preamble: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(p) = preamble {
        out.push_str(p);
        out.push('\n');
    }
    out.push_str("Variable,Mean,Std. Dev.,Skewness,Kurtosis,JB,p-value,Significance\n");
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{name},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{}",
            s.mean,
            s.std_dev,
            s.skewness,
            s.kurtosis_excess,
            s.jb,
            s.jb_pvalue,
            s.significance.stars()
        );
    }
    out
}

pub fn corr_table(names: &[String], corr: &Array2<f64>, preamble: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(p) = preamble {
        out.push_str(p);
        out.push('\n');
    }
    out.push_str("variable");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(n);
        for j in 0..names.len() {
            let _ = write!(out, ",{:.6}", corr[[i, j]]);
        }
        out.push('\n');
    }
    out
}
