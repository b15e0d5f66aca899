use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pwavg::examples::{example1_config, EXAMPLE1_BUNDLED};
use pwavg::load_system;
use pwavg_cli::analyze::{self, AnalyzeArgs};
use pwavg_cli::{emit, exit, expand, oracle, parse_assignment, read_config, CliError, Format, Sweep};

#[derive(Parser, Debug)]
#[command(name = "pwavg", version, about = "Periodic orbits of time-switched systems by higher-order averaging")]
struct Cli {
    /// Worker threads for grid and verification work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check the hypotheses, scan f_1..f_k, certify zeros and optionally verify them.
    Analyze {
        config: PathBuf,
        /// Highest order to compute (default: k of the config).
        #[arg(long)]
        order: Option<usize>,
        /// Grid points per axis of V (default: analysis.grid).
        #[arg(long)]
        grid: Option<usize>,
        /// Locate the orbits of the full system over analysis.eps_list.
        #[arg(long)]
        verify: bool,
        /// Exit 3 when no zero is certified.
        #[arg(long)]
        expect_zeros: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the augmented (t, x, Y, w) path at the first zero as CSV.
        #[arg(long)]
        dump_path: Option<PathBuf>,
    },
    /// Compare the engine with a bundled closed form.
    Oracle {
        example: String,
        /// lo:hi:n (default: the chart box, 20 points).
        #[arg(long)]
        sweep: Option<Sweep>,
        /// Override a parameter, name=value.
        #[arg(long = "set", value_parser = parse_assignment)]
        set: Vec<(String, f64)>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Print F_0..F_k per zone.
    Expand {
        config: PathBuf,
        /// Compare with the full field at N random points per zone.
        #[arg(long, value_name = "N")]
        check: Option<usize>,
    },
    /// Write a config for the y = 0 switching example with a given f(x, y).
    Example1 {
        /// f(x, y), e.g. "cos(x)"; or the name of a bundled variant.
        f: String,
        #[arg(long, default_value_t = 1)]
        order: usize,
        /// Chart box lo:hi for r (the count is ignored).
        #[arg(long, default_value = "0.5:7:2")]
        v: Sweep,
        /// Parameter value, name=value (a0..a3, b1..b3).
        #[arg(long = "set", value_parser = parse_assignment)]
        set: Vec<(String, f64)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::Analyze {
            config,
            order,
            grid,
            verify,
            expect_zeros,
            format,
            out,
            dump_path,
        } => {
            let args = AnalyzeArgs {
                config,
                order,
                grid,
                verify,
                expect_zeros,
                dump_path,
            };
            let report = analyze::run(&args)?;
            emit(out.as_deref(), &report.render(format))?;
            Ok(report.exit_code)
        }
        Cmd::Oracle {
            example,
            sweep,
            set,
            format,
        } => {
            let report = oracle::run(&example, sweep, &set)?;
            print!("{}", report.render(format));
            Ok(report.exit_code())
        }
        Cmd::Expand { config, check } => {
            let model = load_system(&read_config(&config)?)?;
            print!("{}", expand::print_orders(&model));
            let Some(n) = check else {
                return Ok(exit::OK);
            };
            let res = expand::check(&model, n);
            if res.zones.is_empty() {
                return Err(CliError::Usage("--check needs zones given by rhs_full".into()));
            }
            println!(
                "check: {} points in zones {:?} at eps = {:e}, max residual {:.3e} ({} skipped)",
                res.points,
                res.zones,
                expand::CHECK_EPS,
                res.max_residual,
                res.skipped
            );
            Ok(if res.points > 0 && res.max_residual < expand::CHECK_TOL {
                exit::OK
            } else {
                exit::CHECK_FAILED
            })
        }
        Cmd::Example1 {
            f,
            order,
            v,
            set,
            out,
        } => {
            let text = match EXAMPLE1_BUNDLED.iter().find(|b| b.0 == f) {
                Some((_, src, k, lo, hi, params)) => example1_config(src, *k, *lo, *hi, params)?,
                None => {
                    let p: Vec<(&str, f64)> = set.iter().map(|(n, v)| (n.as_str(), *v)).collect();
                    example1_config(&f, order, v.lo, v.hi, &p)?
                }
            };
            // refuse to write something that would not load
            load_system(&text)?;
            emit(out.as_deref(), &text)?;
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PWAVG_LOG")).init();
    // clap's own usage exit code (2) would collide with the hypotheses code
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::ERROR as u8 } else { 0 });
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("pwavg: --jobs: {e}");
            return ExitCode::from(exit::ERROR as u8);
        }
    }
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("pwavg: {e}");
            exit::ERROR
        }
    };
    ExitCode::from(code as u8)
}
