//! Plain-text parameter checkpoints.
//!
//! ```text
//! mfmc-params 1
//! widths 2 4 3
//! batch_norm 0 1
//! tensor layer0.weight 4 2
//! <row-major values, one row per line>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{BatchNorm, Dense, MlpParams, MlpSpec};
use crate::error::{Error, Result};

const HEADER: &str = "mfmc-params 1";

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| format!("{:e}", at(r, c))).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    write_tensor(out, name, 1, v.len(), |_, c| v[c]);
}

pub fn to_string(params: &MlpParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let widths: Vec<String> = params.spec.widths().iter().map(|w| w.to_string()).collect();
    let _ = writeln!(out, "widths {}", widths.join(" "));
    let flags: Vec<&str> = params.spec.batch_norm().iter().map(|&b| if b { "1" } else { "0" }).collect();
    let _ = writeln!(out, "batch_norm {}", flags.join(" ").trim_end());
    for (l, layer) in params.layers.iter().enumerate() {
        let w = &layer.weight;
        write_tensor(&mut out, &format!("layer{l}.weight"), w.nrows(), w.ncols(), |r, c| w[(r, c)]);
        write_vector(&mut out, &format!("layer{l}.bias"), &layer.bias);
        if let Some(Some(bn)) = params.norms.get(l) {
            write_vector(&mut out, &format!("bn{l}.gamma"), &bn.gamma);
            write_vector(&mut out, &format!("bn{l}.beta"), &bn.beta);
            write_vector(&mut out, &format!("bn{l}.running_mean"), &bn.running_mean);
            write_vector(&mut out, &format!("bn{l}.running_var"), &bn.running_var);
        }
    }
    out.push_str("end\n");
    out
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (n, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Checkpoint(format!("line {n}: expected `{key}`, found `{line}`")));
        }
        Ok(parts.collect())
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (n, line) = self.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let expected = format!("tensor {name} {rows} {cols}");
        if parts.join(" ") != expected {
            return Err(Error::Checkpoint(format!("line {n}: expected `{expected}`, found `{line}`")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next()?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Checkpoint(format!("line {n}: {e}")))?;
            if row.len() != cols {
                return Err(Error::Checkpoint(format!("line {n}: {} values, expected {cols}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("line {n}: non-finite value in {name}")));
            }
            values.extend(row);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<DVector<f64>> {
        let m = self.tensor(name, 1, len)?;
        Ok(DVector::from_iterator(len, m.iter().copied()))
    }
}

fn parse_list<T: std::str::FromStr>(items: &[&str], what: &str) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse::<T>().map_err(|_| Error::Checkpoint(format!("bad {what} entry `{s}`")))).collect()
}

pub fn from_str(text: &str) -> Result<MlpParams> {
    let mut r = Reader { lines: text.lines().enumerate() };
    let (_, header) = r.next()?;
    if header != HEADER {
        return Err(Error::Checkpoint(format!("unsupported header `{header}`")));
    }
    let widths: Vec<usize> = parse_list(&r.keyed("widths")?, "width")?;
    let flags: Vec<u8> = parse_list(&r.keyed("batch_norm")?, "batch_norm")?;
    if flags.iter().any(|&f| f > 1) {
        return Err(Error::Checkpoint("batch_norm flags must be 0 or 1".into()));
    }
    let spec = MlpSpec::with_batch_norm(widths, flags.iter().map(|&f| f == 1).collect())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut layers = Vec::new();
    let mut norms = Vec::new();
    for (l, w) in spec.widths().windows(2).enumerate() {
        let weight = r.tensor(&format!("layer{l}.weight"), w[1], w[0])?;
        let bias = r.vector(&format!("layer{l}.bias"), w[1])?;
        layers.push(Dense { weight, bias });
        if l < spec.batch_norm().len() {
            if spec.batch_norm()[l] {
                norms.push(Some(BatchNorm {
                    gamma: r.vector(&format!("bn{l}.gamma"), w[1])?,
                    beta: r.vector(&format!("bn{l}.beta"), w[1])?,
                    running_mean: r.vector(&format!("bn{l}.running_mean"), w[1])?,
                    running_var: r.vector(&format!("bn{l}.running_var"), w[1])?,
                }));
            } else {
                norms.push(None);
            }
        }
    }
    let (n, tail) = r.next()?;
    if tail != "end" {
        return Err(Error::Checkpoint(format!("line {n}: expected `end`, found `{tail}`")));
    }
    Ok(MlpParams { spec, layers, norms })
}

pub fn save(params: &MlpParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MlpParams> {
    from_str(&std::fs::read_to_string(path)?)
}
