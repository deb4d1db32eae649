//! Plain-text model checkpoints: a keyed header followed by one block per
//! parameter tensor, values in row-major order with exact round-trip
//! formatting.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{Network, NetworkSpec, Preset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub best_epoch: usize,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.window == other.window
            && self.features == other.features
            && self.params == other.params
    }
}

pub fn render(ck: &Checkpoint, preamble: Option<&str>) -> String {
    let net = &ck.network;
    let mut out = String::new();
    if let Some(p) = preamble {
        out.push_str(p);
        out.push('\n');
    }
    let _ = writeln!(out, "layers = {}", net.spec.layer_string());
    if let Some(p) = net.spec.preset {
        let _ = writeln!(out, "preset = {p}");
    }
    let _ = writeln!(out, "window = {}", net.window);
    let _ = writeln!(out, "features = {}", net.features);
    let _ = writeln!(out, "seed = {}", ck.seed);
    let _ = writeln!(out, "best_epoch = {}", ck.best_epoch);
    let _ = writeln!(out, "tensors = {}", net.params.len());
    for (k, p) in net.params.iter().enumerate() {
        let _ = writeln!(out, "tensor {k} {} {}", p.nrows(), p.ncols());
        for row in p.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save(ck: &Checkpoint, path: &Path, preamble: Option<&str>) -> Result<()> {
    std::fs::write(path, render(ck, preamble)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Checkpoint> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let err = |line: usize, reason: String| Error::Parse { line: line + 1, column: 1, reason };
    let mut header = std::collections::BTreeMap::new();
    let mut pending = None;
    for (i, line) in lines.by_ref() {
        if line.starts_with("tensor ") {
            pending = Some((i, line));
            break;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| err(i, format!("expected `key = value`, got `{line}`")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| header.get(k).ok_or_else(|| err(0, format!("missing header key `{k}`")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| err(0, format!("bad value for `{k}`"))) };
    let mut spec = NetworkSpec::parse(get("layers")?)?;
    spec.preset = header.get("preset").map(|p| p.parse::<Preset>()).transpose()?;
    let (window, features) = (num("window")? as usize, num("features")? as usize);
    let count = num("tensors")? as usize;
    let mut params = Vec::with_capacity(count);
    for k in 0..count {
        let (i, line) = match pending.take() {
            Some(p) => p,
            None => lines.next().ok_or_else(|| err(0, format!("missing tensor {k}")))?,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != k.to_string() {
            return Err(err(i, format!("expected `tensor {k} ROWS COLS`")));
        }
        let rows: usize = parts[2].parse().map_err(|_| err(i, "bad row count".into()))?;
        let cols: usize = parts[3].parse().map_err(|_| err(i, "bad column count".into()))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (j, row) = lines.next().ok_or_else(|| err(i, format!("tensor {k} truncated")))?;
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| err(j, format!("bad number `{v}`")))?);
            }
        }
        let arr = Array2::from_shape_vec((rows, cols), data).map_err(|_| err(i, format!("tensor {k} has wrong size")))?;
        params.push(arr);
    }
    Ok(Checkpoint {
        network: Network::from_params(&spec, window, features, params)?,
        seed: num("seed")?,
        best_epoch: num("best_epoch")? as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for p in [Preset::D1, Preset::D5] {
            let net = Network::new(&p.spec(0.3), 12, 3, 11).unwrap();
            let ck = Checkpoint { network: net, seed: 11, best_epoch: 4 };
            let text = render(&ck, Some("# header"));
            assert_eq!(parse(&text).unwrap(), ck);
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let net = Network::new(&Preset::D2.spec(0.5), 4, 1, 0).unwrap();
        let text = render(&Checkpoint { network: net, seed: 0, best_epoch: 1 }, None);
        let truncated: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(parse(&truncated).is_err());
        assert!(parse(&text.replace("window = 4", "window = 5")).is_ok());
        assert!(parse(&text.replace("features = 1", "features = 2")).is_err());
        assert!(parse("layers = lstm(2)\n").is_err());
    }
}
