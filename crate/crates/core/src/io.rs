//! CSV input/output and atomic file writes.
//!
//! Floats are written with 17 significant digits so that every `f64`
//! round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::EstimateResult;
use crate::simulator::{FinePath, ObservationSet};

/// Lossless text form of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("'{s}' is not a number")))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Serializes rows of pre-formatted fields into CSV bytes.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

/// Header and records of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read '{}': {e}", path.display())))?;
    read_csv_str(&text)
}

pub fn read_csv_str(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_error)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Fine path as `t,x,y`.
pub fn path_csv(path: &FinePath) -> Result<Vec<u8>> {
    csv_bytes(
        &["t", "x", "y"],
        (0..path.x.len()).map(|k| [fmt_f64(path.times[k]), fmt_f64(path.x[k]), fmt_f64(path.y[k])]),
    )
}

/// Observations as `i,t,y_obs,x_tilde,x_true`. `x_tilde` on row `i` is the
/// quotient ending at `iΔ`, so row 0 leaves it empty; `x_true` is empty when
/// the exact series was dropped.
pub fn observations_csv(obs: &ObservationSet) -> Result<Vec<u8>> {
    let delta = obs.sampling_step();
    let exact = obs.x_true();
    csv_bytes(
        &["i", "t", "y_obs", "x_tilde", "x_true"],
        obs.y_obs().iter().enumerate().map(|(i, &y)| {
            [
                i.to_string(),
                fmt_f64(i as f64 * delta),
                fmt_f64(y),
                if i == 0 { String::new() } else { fmt_f64(obs.x_tilde()[i - 1]) },
                exact.map_or(String::new(), |xs| fmt_f64(xs[i])),
            ]
        }),
    )
}

fn column(header: &[String], names: &[&str]) -> Option<usize> {
    names.iter().find_map(|n| header.iter().position(|h| h == n))
}

/// Reads integrated observations from a CSV with a time column `t` and a `Y`
/// column named `y_obs` or `y` (the output of `simulate` with or without
/// `--delta`). The sampling step is the uniform spacing of `t`.
pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let (header, rows) = read_csv(path)?;
    let t_col = column(&header, &["t"])
        .ok_or_else(|| Error::Parse(format!("'{}' has no 't' column", path.display())))?;
    let y_col = column(&header, &["y_obs", "y"])
        .ok_or_else(|| Error::Parse(format!("'{}' has no 'y_obs' or 'y' column", path.display())))?;
    let mut t = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let field = |c: usize| {
            row.get(c)
                .ok_or_else(|| Error::Parse(format!("row {}: missing column {c}", k + 1)))
                .and_then(|s| parse_f64(s))
        };
        t.push(field(t_col)?);
        y.push(field(y_col)?);
    }
    if t.len() < 2 {
        return Err(Error::InsufficientData(format!("'{}' has fewer than two rows", path.display())));
    }
    let delta = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - delta).abs() > 1e-9 * delta.abs().max(1.0) {
            return Err(Error::Parse(format!(
                "time column is not uniformly spaced at row {} (step {} vs {delta})",
                k + 2,
                w[1] - w[0]
            )));
        }
    }
    ObservationSet::from_integrated(y, delta, None)
}

/// Estimates as `x,p_hat,a_hat,b_hat,se_a,se_b,n_eff`; points without nearby
/// data are left empty.
pub fn estimates_csv(result: &EstimateResult) -> Result<Vec<u8>> {
    csv_bytes(
        &["x", "p_hat", "a_hat", "b_hat", "se_a", "se_b", "n_eff"],
        result.grid.iter().zip(&result.points).map(|(&x, p)| match p {
            Some(g) => vec![
                fmt_f64(x),
                fmt_f64(g.p),
                fmt_f64(g.a),
                fmt_f64(g.b),
                fmt_f64(g.se_a),
                g.se_b.map_or(String::new(), fmt_f64),
                fmt_f64(g.n_eff),
            ],
            None => {
                let mut row = vec![fmt_f64(x)];
                row.resize(7, String::new());
                row
            }
        }),
    )
}
