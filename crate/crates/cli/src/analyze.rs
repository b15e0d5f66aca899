//! `pwavg analyze`: hypotheses, grids of `f_1..f_k`, zeros, verification.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pwavg::averaging::path_csv;
use pwavg::lsreduction::{evaluate_grid, grid_max_abs, GridPoint};
use pwavg::model::{validate_hypotheses, HypothesisReport};
use pwavg::roots::engine_zeros;
use pwavg::{
    averaged_functions, convergence_order, load_system, AnalysisOptions, Model, VerificationRecord,
    ZeroCertificate, ZeroStatus,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{exit, read_config, CliError, Format};

/// Bumped whenever a field of [`AnalysisReport`] changes meaning or goes away.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub config: PathBuf,
    pub order: Option<usize>,
    pub grid: Option<usize>,
    pub verify: bool,
    pub expect_zeros: bool,
    pub dump_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigInfo {
    pub path: String,
    /// SHA-256 of the config bytes, hex.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: usize,
    pub max_abs: f64,
    /// `max_abs < zero_floor`.
    pub identically_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub alpha_star: Vec<f64>,
    pub record: Option<VerificationRecord>,
    pub error: Option<String>,
}

impl VerificationOutcome {
    pub fn passed(&self) -> bool {
        self.record.as_ref().is_some_and(|r| r.passed)
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub hypotheses: f64,
    pub grid: f64,
    pub roots: f64,
    pub verify: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    HypothesesFailed,
    NoZeros,
    VerificationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ConfigInfo,
    pub options: AnalysisOptions,
    pub order: usize,
    pub grid: usize,
    pub hypotheses: HypothesisReport,
    pub orders: Vec<OrderSummary>,
    /// First order whose `f_i` is not identically zero on the grid.
    pub active_order: Option<usize>,
    pub grid_values: Vec<GridPoint>,
    pub zeros: Vec<ZeroCertificate>,
    pub verification: Vec<VerificationOutcome>,
    pub outcome: Outcome,
    pub exit_code: i32,
    pub timings: Timings,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn run(args: &AnalyzeArgs) -> Result<AnalysisReport, CliError> {
    let start = Instant::now();
    let text = read_config(&args.config)?;
    let mut model = load_system(&text)?;
    let k = args.order.unwrap_or(model.system.k);
    if k == 0 || k > model.system.k {
        return Err(CliError::Usage(format!(
            "--order {k} outside 1..={} (the config's k)",
            model.system.k
        )));
    }
    if let Some(n) = args.grid {
        if n < 2 {
            return Err(CliError::Usage("--grid needs at least 2 points".into()));
        }
        model.options.grid = n;
    }
    let n = model.options.grid;
    let mut timings = Timings::default();

    let t = Instant::now();
    let hypotheses = validate_hypotheses(&model, model.options.samples);
    timings.hypotheses = secs(t);
    log::info!(
        "hypotheses: residual {:e}, min |det Delta| {:e}",
        hypotheses.max_residual,
        hypotheses.min_abs_det_delta
    );

    let mut report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: ConfigInfo {
            path: args.config.display().to_string(),
            sha256: digest(text.as_bytes()),
        },
        options: model.options.clone(),
        order: k,
        grid: n,
        hypotheses,
        orders: Vec::new(),
        active_order: None,
        grid_values: Vec::new(),
        zeros: Vec::new(),
        verification: Vec::new(),
        outcome: Outcome::Ok,
        exit_code: exit::OK,
        timings,
    };
    if !report.hypotheses.passed {
        report.outcome = Outcome::HypothesesFailed;
        report.exit_code = exit::HYPOTHESES;
        report.timings.total = secs(start);
        return Ok(report);
    }

    let t = Instant::now();
    let grid = evaluate_grid(&model, k, n);
    report.timings.grid = secs(t);
    let failed = grid.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} grid nodes failed", grid.len());
    }
    for i in 1..=k {
        let max_abs = grid_max_abs(&grid, i);
        let identically_zero = max_abs < model.options.zero_floor;
        log::info!("max |f_{i}| = {max_abs:e}");
        report.orders.push(OrderSummary {
            order: i,
            max_abs,
            identically_zero,
        });
    }
    report.active_order = report
        .orders
        .iter()
        .find(|o| !o.identically_zero)
        .map(|o| o.order);

    let t = Instant::now();
    if let Some(i) = report.active_order {
        report.zeros = engine_zeros(&model, i, &grid);
    }
    report.timings.roots = secs(t);
    report.grid_values = grid;

    let certified: Vec<&ZeroCertificate> = report
        .zeros
        .iter()
        .filter(|z| z.status == ZeroStatus::Certified)
        .collect();
    if args.verify {
        let t = Instant::now();
        let eps_list = model.options.eps_list.clone();
        report.verification = certified
            .par_iter()
            .map(|z| match convergence_order(&model, &z.alpha_star, &eps_list) {
                Ok(rec) => VerificationOutcome {
                    alpha_star: z.alpha_star.clone(),
                    error: rec.failure.clone(),
                    record: Some(rec),
                },
                Err(e) => VerificationOutcome {
                    alpha_star: z.alpha_star.clone(),
                    record: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        report.timings.verify = secs(t);
    }

    if let Some(path) = &args.dump_path {
        dump_path(&model, report.active_order.unwrap_or(k), certified.first().copied(), path)?;
    }

    if certified.is_empty() {
        report.outcome = Outcome::NoZeros;
        if args.expect_zeros {
            report.exit_code = exit::NO_ZEROS;
        }
    } else if report.verification.iter().any(|v| !v.passed()) {
        report.outcome = Outcome::VerificationFailed;
        report.exit_code = exit::CHECK_FAILED;
    }
    report.timings.total = secs(start);
    Ok(report)
}

/// Augmented path `(t, x, Y, w_i)` at the first certified zero, or at the
/// centre of `V` when there is none.
fn dump_path(
    model: &Model,
    order: usize,
    zero: Option<&ZeroCertificate>,
    path: &Path,
) -> Result<(), CliError> {
    let ch = &model.chart;
    let alpha: Vec<f64> = match zero {
        Some(z) => z.alpha_star.clone(),
        None => ch
            .v_lower
            .iter()
            .zip(&ch.v_upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    };
    let z = model
        .z_alpha(&alpha)
        .map_err(|e| CliError::Usage(format!("chart at {alpha:?}: {e}")))?;
    let res = averaged_functions(&model.system, &z, order, model.options.tolerances())
        .map_err(|e| CliError::Usage(format!("averaging at {alpha:?}: {e}")))?;
    let csv = path_csv(&model.system, &res).expect("averaged_functions keeps its path");
    std::fs::write(path, csv).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl AnalysisReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serialises") + "\n",
            Format::Csv => self.csv(),
            Format::Table => self.table(),
        }
    }

    /// Columns `alpha_1..alpha_d, f<k>_1..f<k>_d` for the requested order;
    /// failed nodes leave the `f` fields empty.
    pub fn csv(&self) -> String {
        let d = self.grid_values.first().map_or(0, |p| p.alpha.len());
        let k = self.order;
        let mut out = String::new();
        let mut header: Vec<String> = (1..=d).map(|i| format!("alpha_{i}")).collect();
        header.extend((1..=d).map(|c| format!("f{k}_{c}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for p in &self.grid_values {
            let mut row: Vec<String> = p.alpha.iter().map(|a| format!("{a:e}")).collect();
            match p.f.get(k - 1) {
                Some(f) => row.extend(f.iter().map(|v| format!("{v:e}"))),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let h = &self.hypotheses;
        writeln!(s, "config    {} (sha256 {})", self.config.path, &self.config.sha256[..12]).unwrap();
        writeln!(
            s,
            "periodic  {} (max |x(T) - z| = {:.2e}, tol {:.0e})",
            yes(h.periodic),
            h.max_residual,
            h.periodicity_tol
        )
        .unwrap();
        writeln!(
            s,
            "det Delta {} (min |det| = {:.3e}, tol {:.0e})",
            yes(h.nondegenerate),
            h.min_abs_det_delta,
            h.degeneracy_tol
        )
        .unwrap();
        for o in &self.orders {
            let note = if o.identically_zero { "  identically zero" } else { "" };
            writeln!(s, "max |f_{}| {:.3e}{note}", o.order, o.max_abs).unwrap();
        }
        match self.active_order {
            Some(i) => writeln!(s, "zeros of f_{i}: {}", self.zeros.len()).unwrap(),
            None if self.outcome == Outcome::HypothesesFailed => {}
            None => writeln!(s, "all requested orders vanish on the grid").unwrap(),
        }
        for z in &self.zeros {
            let a: Vec<String> = z.alpha_star.iter().map(|v| format!("{v:.10}")).collect();
            writeln!(
                s,
                "  alpha* = ({})  |f| = {:.1e}  det Df = {:.4e}  {:?}",
                a.join(", "),
                z.residual,
                z.det_jacobian,
                z.status
            )
            .unwrap();
        }
        for v in &self.verification {
            match (&v.record, &v.error) {
                (Some(r), None) => {
                    let slope = r.slope.map_or("-".to_string(), |s| format!("{s:.3}"));
                    let dmax = r.distances.iter().cloned().fold(0.0, f64::max);
                    writeln!(
                        s,
                        "  verify {:?}: slope {slope}, max distance {dmax:.2e}, {}",
                        v.alpha_star,
                        if r.passed { "passed" } else { "FAILED" }
                    )
                    .unwrap();
                }
                (_, Some(e)) => writeln!(s, "  verify {:?}: FAILED ({e})", v.alpha_star).unwrap(),
                (None, None) => {}
            }
        }
        writeln!(s, "outcome   {:?} (exit {}), {:.2}s", self.outcome, self.exit_code, self.timings.total)
            .unwrap();
        s
    }
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "NO"
    }
}
