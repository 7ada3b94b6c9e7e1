//! Plain-text interchange: the `key = value` parameter format and the CSV
//! schemas for trajectories, kernels, distributions, run records, objective
//! sweeps, and MSE curves.
//!
//! All floats are written with Rust's shortest round-trip formatting, so
//! reading back reproduces the exact bit pattern.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::RunRecord;
use crate::likelihood::SweepPoint;
use crate::markov::{MatrixKind, StationaryDist, TransitionMatrix};
use crate::model::{NetworkParams, ParamVector, Trajectory};

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        origin: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Strips an inline `#` comment and surrounding whitespace.
fn logical_line(raw: &str) -> &str {
    raw.split('#').next().unwrap_or("").trim()
}

fn parse_float_list(origin: &str, line: usize, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .map(|tok| {
            if tok.is_empty() {
                return Err(parse_err(origin, line, "empty entry in number list"));
            }
            tok.parse::<f64>()
                .map_err(|e| parse_err(origin, line, format!("bad number `{tok}`: {e}")))
        })
        .collect()
}

/// Parses the parameter format:
///
/// ```text
/// # any comment
/// n = 2
/// a = 0.5, -0.3, 0.2, 0.4   # row-major
/// c = 0.1, -0.2
/// sigma = 1, 1              # optional, defaults to all ones
/// ```
///
/// Unknown and duplicate keys are errors; messages carry `origin:line`.
pub fn parse_params(text: &str, origin: &str) -> Result<NetworkParams> {
    let mut n: Option<usize> = None;
    let mut a: Option<Vec<f64>> = None;
    let mut c: Option<Vec<f64>> = None;
    let mut sigma: Option<Vec<f64>> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = logical_line(raw);
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(origin, line_no, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        let taken = match key {
            "n" => n
                .replace(value.parse::<usize>().map_err(|e| {
                    parse_err(origin, line_no, format!("bad agent count `{value}`: {e}"))
                })?)
                .is_some(),
            "a" => a.replace(parse_float_list(origin, line_no, value)?).is_some(),
            "c" => c.replace(parse_float_list(origin, line_no, value)?).is_some(),
            "sigma" => sigma
                .replace(parse_float_list(origin, line_no, value)?)
                .is_some(),
            other => {
                return Err(parse_err(
                    origin,
                    line_no,
                    format!("unknown key `{other}` (expected n, a, c, sigma)"),
                ))
            }
        };
        if taken {
            return Err(parse_err(origin, line_no, format!("duplicate key `{key}`")));
        }
    }
    let missing = |what: &str| parse_err(origin, 0, format!("missing key `{what}`"));
    let n = n.ok_or_else(|| missing("n"))?;
    let a = a.ok_or_else(|| missing("a"))?;
    let c = c.ok_or_else(|| missing("c"))?;
    let sigma = sigma.unwrap_or_else(|| vec![1.0; n]);
    NetworkParams::new(n, a, c, sigma)
}

pub fn read_params_file(path: &Path) -> Result<NetworkParams> {
    let text = std::fs::read_to_string(path)?;
    parse_params(&text, &path.display().to_string())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn write_params<W: Write>(mut w: W, params: &NetworkParams) -> Result<()> {
    writeln!(w, "n = {}", params.n())?;
    writeln!(w, "a = {}", join(params.weights()))?;
    writeln!(w, "c = {}", join(params.thresholds()))?;
    writeln!(w, "sigma = {}", join(params.noise_sds()))?;
    Ok(())
}

pub fn write_params_file(path: &Path, params: &NetworkParams) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parses a flattened θ: floats separated by commas and/or whitespace,
/// `#` comments allowed.
pub fn parse_theta(text: &str, origin: &str, n: usize) -> Result<ParamVector> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = logical_line(raw);
        if line.is_empty() {
            continue;
        }
        for tok in line.split([',', ' ', '\t']).filter(|t| !t.is_empty()) {
            values.push(tok.parse::<f64>().map_err(|e| {
                parse_err(origin, idx + 1, format!("bad number `{tok}`: {e}"))
            })?);
        }
    }
    ParamVector::new(values, n)
}

pub fn read_theta_file(path: &Path, n: usize) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path)?;
    parse_theta(&text, &path.display().to_string(), n)
}

/// Trajectory CSV: header `t,s_bits`, one row per step t = 1..T with the
/// state as a decimal bitmask. S_0 is not a step and is not exported.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "t,s_bits")?;
    for (t, s) in traj.observations().iter().enumerate() {
        writeln!(w, "{},{}", t + 1, s.bits())?;
    }
    Ok(())
}

/// Kernel CSV: no header, one matrix row per line, entries comma-separated.
pub fn write_kernel_csv<W: Write>(mut w: W, m: &TransitionMatrix) -> Result<()> {
    for row in 0..m.dim() {
        let cells: Vec<String> = m.row(row).iter().map(f64::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads the kernel CSV back. The matrix must be square with one row per
/// line; stochasticity is enforced by the matrix constructor.
pub fn parse_kernel_csv(text: &str, origin: &str, kind: MatrixKind) -> Result<TransitionMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        rows.push(parse_float_list(origin, idx + 1, line)?);
    }
    if rows.is_empty() {
        return Err(parse_err(origin, 0, "no rows"));
    }
    let dim = rows.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
        return Err(parse_err(
            origin,
            bad + 1,
            format!("row has {} entries, expected {dim} (square matrix)", rows[bad].len()),
        ));
    }
    TransitionMatrix::from_rows(rows.into_iter().flatten().collect(), kind)
}

pub fn read_kernel_csv_file(path: &Path, kind: MatrixKind) -> Result<TransitionMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_kernel_csv(&text, &path.display().to_string(), kind)
}

/// Stationary CSV: header `state,pi`, one row per state index.
pub fn write_stationary_csv<W: Write>(mut w: W, pi: &StationaryDist) -> Result<()> {
    writeln!(w, "state,pi")?;
    for (state, p) in pi.probabilities().iter().enumerate() {
        writeln!(w, "{state},{p}")?;
    }
    Ok(())
}

/// Run-record CSV: header `t,theta_1,…,theta_K[,err_norm]`, one row per
/// snapshot; the error column appears only when the run knew the truth.
pub fn write_run_record_csv<W: Write>(mut w: W, rec: &RunRecord) -> Result<()> {
    let k = rec.n() * (rec.n() + 1);
    let with_err = rec.snapshots().iter().all(|s| s.err_norm.is_some());
    write!(w, "t")?;
    for i in 1..=k {
        write!(w, ",theta_{i}")?;
    }
    if with_err {
        write!(w, ",err_norm")?;
    }
    writeln!(w)?;
    for snap in rec.snapshots() {
        write!(w, "{}", snap.t)?;
        for v in snap.theta.as_slice() {
            write!(w, ",{v}")?;
        }
        if with_err {
            write!(w, ",{}", snap.err_norm.expect("checked above"))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Sweep CSV: header `theta_component,offset,value,grad_norm`.
pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(w, "theta_component,offset,value,grad_norm")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.component, p.offset, p.value, p.grad_norm)?;
    }
    Ok(())
}

/// MSE CSV: header `t,mse,n_trials`.
pub fn write_mse_csv<W: Write>(mut w: W, points: &[(u64, f64)], n_trials: usize) -> Result<()> {
    writeln!(w, "t,mse,n_trials")?;
    for (t, mse) in points {
        writeln!(w, "{t},{mse},{n_trials}")?;
    }
    Ok(())
}
