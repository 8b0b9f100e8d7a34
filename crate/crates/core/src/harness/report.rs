use std::io::Write;

use crate::error::Result;
use crate::learner::TraceRow;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub const TRACE_HEADER: [&str; 13] = [
    "k",
    "objective",
    "step_norm",
    "bellman_mse",
    "max_x",
    "max_u",
    "aborted",
    "solver_converged",
    "alpha",
    "solve_gap",
    "kkt_residual",
    "iterations",
    "gamma",
];

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            opt(r.objective, fmt_f64),
            opt(r.step_norm, fmt_f64),
            opt(r.bellman_mse, fmt_f64),
            fmt_f64(r.max_x),
            fmt_f64(r.max_u),
            r.aborted.to_string(),
            opt(r.solver_converged, |b| b.to_string()),
            opt(r.alpha, fmt_f64),
            opt(r.solve_gap, fmt_f64),
            opt(r.kkt_residual, fmt_f64),
            opt(r.iterations, |n| n.to_string()),
            fmt_f64(r.gamma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of already formatted cells.
pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
