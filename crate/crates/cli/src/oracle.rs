//! `pwavg oracle`: engine `f_i` against a bundled closed form.

use std::fmt::Write as _;

use pwavg::bifurcation_function;
use pwavg::examples::{bundled, find_example, ExampleEntry};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{exit, CliError, Format, Sweep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub x: f64,
    pub engine: Option<f64>,
    pub oracle: f64,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub example: String,
    pub order: usize,
    pub tolerance: f64,
    pub rows: Vec<OracleRow>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl OracleReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            exit::OK
        } else {
            exit::CHECK_FAILED
        }
    }
}

/// Relative error, or absolute when the oracle is zero to working precision.
pub fn rel_error(got: f64, want: f64) -> f64 {
    if want.abs() > 1e-8 {
        (got - want).abs() / want.abs()
    } else {
        (got - want).abs()
    }
}

pub fn unknown_example(name: &str) -> CliError {
    let names: Vec<&str> = bundled().iter().map(|e| e.name).collect();
    CliError::Usage(format!("unknown example `{name}` (have: {})", names.join(", ")))
}

pub fn run(name: &str, sweep: Option<Sweep>, params: &[(String, f64)]) -> Result<OracleReport, CliError> {
    let entry: &ExampleEntry = find_example(name).ok_or_else(|| unknown_example(name))?;
    let mut model = entry.model()?;
    if !params.is_empty() {
        let p: Vec<(&str, f64)> = params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        model = model.with_params(&p)?;
    }
    let sweep = sweep.unwrap_or(Sweep {
        lo: model.chart.v_lower[0],
        hi: model.chart.v_upper[0],
        n: 20,
    });
    let rows: Vec<OracleRow> = sweep
        .points()
        .into_par_iter()
        .map(|x| {
            let oracle = (entry.oracle)(&model, x);
            match bifurcation_function(&model, &[x], entry.order) {
                Ok(f) => OracleRow {
                    x,
                    engine: Some(f[0]),
                    oracle,
                    abs_error: Some((f[0] - oracle).abs()),
                    rel_error: Some(rel_error(f[0], oracle)),
                    error: None,
                },
                Err(e) => OracleRow {
                    x,
                    engine: None,
                    oracle,
                    abs_error: None,
                    rel_error: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let max_abs_error = rows.iter().filter_map(|r| r.abs_error).fold(0.0, f64::max);
    let max_rel_error = rows.iter().filter_map(|r| r.rel_error).fold(0.0, f64::max);
    let passed = rows.iter().all(|r| r.error.is_none()) && max_rel_error < entry.tolerance;
    Ok(OracleReport {
        example: entry.name.to_string(),
        order: entry.order,
        tolerance: entry.tolerance,
        rows,
        max_abs_error,
        max_rel_error,
        passed,
    })
}

impl OracleReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serialises") + "\n",
            Format::Csv => {
                let mut s = String::from("x,engine,oracle,abs_error,rel_error\n");
                for r in &self.rows {
                    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
                    writeln!(
                        s,
                        "{:e},{},{:e},{},{}",
                        r.x,
                        opt(r.engine),
                        r.oracle,
                        opt(r.abs_error),
                        opt(r.rel_error)
                    )
                    .unwrap();
                }
                s
            }
            Format::Table => {
                let mut s = String::new();
                writeln!(s, "{:>10} {:>20} {:>20} {:>10} {:>10}", "x", "engine", "oracle", "abs", "rel").unwrap();
                for r in &self.rows {
                    match r.engine {
                        Some(e) => writeln!(
                            s,
                            "{:>10.5} {:>20.12e} {:>20.12e} {:>10.2e} {:>10.2e}",
                            r.x,
                            e,
                            r.oracle,
                            r.abs_error.unwrap(),
                            r.rel_error.unwrap()
                        )
                        .unwrap(),
                        None => writeln!(s, "{:>10.5} failed: {}", r.x, r.error.as_deref().unwrap_or("")).unwrap(),
                    }
                }
                writeln!(
                    s,
                    "{} f_{}: max abs {:.2e}, max rel {:.2e}, tolerance {:.0e}: {}",
                    self.example,
                    self.order,
                    self.max_abs_error,
                    self.max_rel_error,
                    self.tolerance,
                    if self.passed { "PASS" } else { "FAIL" }
                )
                .unwrap();
                s
            }
        }
    }
}
