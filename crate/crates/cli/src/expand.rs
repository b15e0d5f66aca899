//! `pwavg expand`: the per-zone `F_0..F_k` of a config and a numerical
//! check of the truncated eps-series against the full field.

use std::fmt::Write as _;

use pwavg::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small parameter used by `--check`.
pub const CHECK_EPS: f64 = 1e-6;
/// Largest acceptable `--check` residual.
pub const CHECK_TOL: f64 = 1e-10;

pub fn print_orders(model: &Model) -> String {
    let sys = &model.system;
    let names = &sys.layout.state;
    let mut s = String::new();
    for (j, zone) in sys.zones.iter().enumerate() {
        let (a, b) = (sys.switch_times[j], sys.switch_times[j + 1]);
        let src = if zone.full.is_some() { "expanded" } else { "given" };
        writeln!(s, "zone {} [{a:.6}, {b:.6}) ({src})", j + 1).unwrap();
        for (i, order) in zone.rhs.iter().enumerate() {
            for (c, e) in order.iter().enumerate() {
                writeln!(s, "  F_{i} {}' = {e}", names[c]).unwrap();
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    /// Zones with an `rhs_full` source that were sampled.
    pub zones: Vec<usize>,
    pub points: usize,
    pub max_residual: f64,
    /// Evaluation failures, skipped.
    pub skipped: usize,
}

/// Compares the full field at `eps = CHECK_EPS` with `sum eps^i F_i` at
/// `n` random `(t, x)` per zone: `t` inside the zone, `x` within 0.1 of a
/// random chart point.
pub fn check(model: &Model, n: usize) -> CheckResult {
    let sys = &model.system;
    let lay = &sys.layout;
    let m = sys.m;
    let mut rng = ChaCha8Rng::seed_from_u64(model.options.seed);
    let mut res = CheckResult {
        zones: Vec::new(),
        points: 0,
        max_residual: 0.0,
        skipped: 0,
    };
    let mut full = vec![0.0; m];
    let mut part = vec![0.0; m];
    for (j, zone) in sys.zones.iter().enumerate() {
        if zone.full.is_none() {
            continue;
        }
        res.zones.push(j + 1);
        let (a, b) = (sys.switch_times[j], sys.switch_times[j + 1]);
        for _ in 0..n {
            let alpha: Vec<f64> = model
                .chart
                .v_lower
                .iter()
                .zip(&model.chart.v_upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect();
            let Ok(z) = model.z_alpha(&alpha) else {
                res.skipped += 1;
                continue;
            };
            let mut env = sys.env();
            env[lay.time_slot()] = a + (b - a) * rng.random_range(0.01..0.99);
            for c in 0..m {
                env[lay.state_slot(c)] = z[c] + rng.random_range(-0.1..0.1);
            }
            env[lay.eps_slot()] = CHECK_EPS;
            if zone.eval_full(&env, &mut full).is_err() {
                res.skipped += 1;
                continue;
            }
            let mut series = vec![0.0; m];
            let mut ok = true;
            for i in 0..zone.rhs.len() {
                if zone.eval_order(i, &env, &mut part).is_err() {
                    ok = false;
                    break;
                }
                let w = CHECK_EPS.powi(i as i32);
                for c in 0..m {
                    series[c] += w * part[c];
                }
            }
            if !ok {
                res.skipped += 1;
                continue;
            }
            res.points += 1;
            for c in 0..m {
                res.max_residual = res.max_residual.max((full[c] - series[c]).abs());
            }
        }
    }
    res
}
