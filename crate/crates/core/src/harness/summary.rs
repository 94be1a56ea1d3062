//! Ensemble quartiles and CSV output.

use std::io::{self, Write};

use crate::error::HarnessError;
use crate::harness::sweep::{quantile, SweepRecord};

/// Lower quartile, median and upper quartile.
pub type Quartiles = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub t: f64,
    pub frac_converged: f64,
    pub mad_marginal: Quartiles,
    pub mad_c: Quartiles,
    pub mad_chi: Quartiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub rows: Vec<EnsembleRow>,
}

/// Quartiles where non-converged runs count as `+∞`, so a quartile is
/// infinite once the non-converged fraction exceeds it.
pub fn truncated_quartiles(values: &[f64]) -> Quartiles {
    let mut s: Vec<f64> = values.iter().map(|v| if v.is_nan() { f64::INFINITY } else { *v }).collect();
    s.sort_by(f64::total_cmp);
    [quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75)]
}

/// Per-temperature quartiles over instances sharing one grid.
pub fn aggregate(runs: &[Vec<SweepRecord>]) -> Result<EnsembleSummary, HarnessError> {
    let Some(first) = runs.first() else {
        return Ok(EnsembleSummary { rows: Vec::new() });
    };
    for r in runs {
        if r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.t != b.t) {
            return Err(HarnessError::GridMismatch);
        }
    }
    let rows = (0..first.len())
        .map(|k| {
            let col = |f: fn(&SweepRecord) -> f64| -> Vec<f64> {
                runs.iter().map(|r| if r[k].converged() { f(&r[k]) } else { f64::INFINITY }).collect()
            };
            let conv = runs.iter().filter(|r| r[k].converged()).count();
            EnsembleRow {
                t: first[k].t,
                frac_converged: conv as f64 / runs.len() as f64,
                mad_marginal: truncated_quartiles(&col(|r| r.mad_marginal)),
                mad_c: truncated_quartiles(&col(|r| r.mad_c)),
                mad_chi: truncated_quartiles(&col(|r| r.mad_chi)),
            }
        })
        .collect();
    Ok(EnsembleSummary { rows })
}

pub const SWEEP_HEADER: &str =
    "T,status,iterations,mad_marginal,mad_C,mad_chi,max_abs_delta,lambda_q1,lambda_q2,lambda_q3,lambda_min,lambda_max,wall_ms";

/// Shortest round-trip formatting with infinities as `inf` / `-inf`.
pub fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn write_sweep_csv<W: Write>(mut w: W, records: &[SweepRecord]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in records {
        let nums = [
            r.mad_marginal,
            r.mad_c,
            r.mad_chi,
            r.max_abs_delta,
            r.lambda_q1,
            r.lambda_q2,
            r.lambda_q3,
            r.lambda_min,
            r.lambda_max,
            r.wall_ms,
        ];
        let tail: Vec<String> = nums.iter().map(|v| fmt_num(*v)).collect();
        writeln!(w, "{},{},{},{}", fmt_num(r.t), r.status, r.iterations, tail.join(","))?;
    }
    Ok(())
}
