//! Commands behind the `pwavg` binary. Each command returns a value that
//! renders to the requested format plus the process exit code.

pub mod analyze;
pub mod expand;
pub mod oracle;

use std::path::PathBuf;

use pwavg::examples::ExampleError;
use pwavg::ModelError;
use thiserror::Error;

/// Exit codes shared by all commands.
pub mod exit {
    pub const OK: i32 = 0;
    /// I/O, schema or usage error.
    pub const ERROR: i32 = 1;
    /// The chart is not a manifold of nondegenerate periodic orbits.
    pub const HYPOTHESES: i32 = 2;
    /// No certified zero, with `--expect-zeros`.
    pub const NO_ZEROS: i32 = 3;
    /// A verification or comparison exceeded its tolerance.
    pub const CHECK_FAILED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

/// `lo:hi:n` with `n >= 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Sweep {
    pub fn points(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(format!("expected lo:hi:n, got `{s}`"));
        };
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad count `{n}`"))?;
        if n < 2 || !(lo < hi) {
            return Err(format!("need lo < hi and n >= 2 in `{s}`"));
        }
        Ok(Sweep { lo, hi, n })
    }
}

/// `name=value`.
pub fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("bad value in `{s}`"))?;
    Ok((name.trim().to_string(), v))
}

pub fn read_config(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes to `out` or to stdout.
pub fn emit(out: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
