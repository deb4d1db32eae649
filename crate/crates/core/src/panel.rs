//! Date-aligned multivariate series with a per-cell missing mask, plus the
//! delimiter-separated text format used for every tabular input and output.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// A daily panel. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

impl Panel {
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Shape(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != dates.len() {
                return Err(Error::Shape(format!(
                    "column `{name}` has {} rows, calendar has {}",
                    col.len(),
                    dates.len()
                )));
            }
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(Error::Data(format!("duplicate date {} at row {}", w[1], i + 1)));
            }
            if w[1] < w[0] {
                return Err(Error::Data(format!(
                    "dates not increasing at row {}: {} after {}",
                    i + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Data(format!("duplicate column name `{a}`")));
            }
        }
        Ok(Panel {
            dates,
            names,
            columns,
        })
    }

    /// Builds a panel with no missing cells.
    pub fn from_complete(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let columns = columns
            .into_iter()
            .map(|c| c.into_iter().map(Some).collect())
            .collect();
        Panel::new(dates, names, columns)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn column_at(&self, idx: usize) -> &[Option<f64>] {
        &self.columns[idx]
    }

    /// Values of a column that must be fully observed.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        col.iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::Data(format!("column `{name}` is missing a value at {}", self.dates[i]))
                })
            })
            .collect()
    }

    /// Missing-cell indicator, one row per column.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.columns
            .iter()
            .map(|c| c.iter().map(Option::is_none).collect())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(|c| c.iter().all(Option::is_some))
    }

    pub fn set_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "replacement for `{name}` has {} rows, expected {}",
                values.len(),
                self.len()
            )));
        }
        let idx = self.index_of(name)?;
        self.columns[idx] = values;
        Ok(())
    }

    pub fn push_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Data(format!("duplicate column name `{name}`")));
        }
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "new column `{name}` has {} rows, expected {}",
                values.len(),
                self.len()
            )));
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(())
    }

    /// Sub-panel restricted to the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Panel> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            columns.push(self.column(n)?.to_vec());
        }
        Panel::new(self.dates.clone(), names.to_vec(), columns)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Panel {
        Panel {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    /// Parses delimiter-separated text: header row, first column `date`,
    /// empty cell = missing. Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Panel> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

        let (header_line, header) = lines
            .next()
            .ok_or_else(|| Error::Data("empty input: no header row".into()))?;
        let delim = detect_delimiter(header);
        let mut fields = header.split(delim).map(str::trim);
        let first = fields.next().unwrap_or_default();
        if !first.eq_ignore_ascii_case("date") {
            return Err(Error::Parse {
                line: header_line,
                column: 1,
                reason: format!("first header field must be `date`, found `{first}`"),
            });
        }
        let names: Vec<String> = fields.map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Parse {
                line: header_line,
                column: 2,
                reason: "no data columns".into(),
            });
        }

        let mut dates = Vec::new();
        let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (line_no, line) in lines {
            let cells: Vec<&str> = line.split(delim).collect();
            if cells.len() != names.len() + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    column: cells.len().min(names.len() + 1),
                    reason: format!("expected {} fields, found {}", names.len() + 1, cells.len()),
                });
            }
            let date = NaiveDate::parse_from_str(cells[0].trim(), DATE_FORMAT).map_err(|e| {
                Error::Parse {
                    line: line_no,
                    column: 1,
                    reason: format!("bad date `{}`: {e}", cells[0].trim()),
                }
            })?;
            dates.push(date);
            for (j, cell) in cells[1..].iter().enumerate() {
                let cell = cell.trim();
                let value = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        column: j + 2,
                        reason: format!("bad number `{cell}` in column `{}`", names[j]),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line: line_no,
                            column: j + 2,
                            reason: format!("non-finite value in column `{}`", names[j]),
                        });
                    }
                    Some(v)
                };
                columns[j].push(value);
            }
        }
        if dates.is_empty() {
            return Err(Error::Data("input has a header but no rows".into()));
        }
        Panel::new(dates, names, columns)
    }

    pub fn read(path: &Path) -> Result<Panel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Panel::parse(&text)
    }

    /// Renders as comma-separated text. Values use the shortest
    /// representation that round-trips exactly.
    pub fn to_csv(&self, preamble: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(p) = preamble {
            out.push_str(p);
            out.push('\n');
        }
        out.push_str("date");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            let _ = write!(out, "{}", d.format(DATE_FORMAT));
            for c in &self.columns {
                out.push(',');
                if let Some(v) = c[i] {
                    let _ = write!(out, "{v:?}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, preamble: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_csv(preamble)).map_err(|e| Error::io(path, e))
    }
}

fn detect_delimiter(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else if header.contains(';') && !header.contains(',') {
        ';'
    } else {
        ','
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| Error::Config(format!("bad date `{s}`: {e}")))
}

/// Contiguous daily calendar `[start, end]`.
pub fn daily_calendar(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start.iter_days().take_while(|d| *d <= end).collect()
}
