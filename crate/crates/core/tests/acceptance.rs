//! Exit criteria. One test per criterion; each prints a PASS/FAIL summary
//! line before asserting.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use pwavg::averaging::liouville_check;
use pwavg::averaging::partitions::{bell_partial, enumerate_partition_tuples};
use pwavg::examples::{
    a0a1, bessel_j1, cubic_root_classification, example1_f1_cos, example1_f1_sin, find_example,
    integrate, oracle_f1_fourzone, oracle_f2_cubic,
};
use pwavg::lsreduction::{delta_by_finite_differences, evaluate_grid, grid_max_abs};
use pwavg::roots::{engine_zeros, ZeroStatus};
use pwavg::{
    averaged_functions, averaged_functions_bell, bifurcation_function, convergence_order,
    load_system, Model,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error, falling back to absolute error for oracle values that
/// are zero to working precision.
fn rel_err(got: f64, want: f64) -> f64 {
    if want.abs() > 1e-8 {
        (got - want).abs() / want.abs()
    } else {
        (got - want).abs()
    }
}

fn report(name: &str, pass: bool, detail: String) {
    println!("{name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn model(name: &str) -> Model {
    find_example(name).unwrap().model().unwrap()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn fourzone_first_order_matches_closed_form() {
    let base = model("fourzone");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let mut params: Vec<(String, f64)> = Vec::new();
        for p in ["a", "b", "c", "d"] {
            for j in 1..=4 {
                params.push((format!("{p}{j}"), rng.random_range(-1.0..1.0)));
            }
        }
        let refs: Vec<(&str, f64)> = params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let m = base.with_params(&refs).unwrap();
        let a = [0, 1, 2, 3].map(|j| params[j].1);
        let b = [4, 5, 6, 7].map(|j| params[j].1);
        for _ in 0..20 {
            let alpha = rng.random_range(0.5..3.0);
            let got = bifurcation_function(&m, &[alpha], 1).unwrap()[0];
            worst = worst.max(rel_err(got, oracle_f1_fourzone(alpha, a, b)));
        }
    }
    let pass = worst < 1e-6;
    report("fourzone f_1 vs closed form", pass, format!("max rel err {worst:.3e}, tol 1e-6"));
    assert!(pass);
}

#[test]
fn example1_cos_first_order_and_zeros() {
    let m = model("ex1_cos");
    let b1 = m.system.params["b1"];
    let mut worst: f64 = 0.0;
    for r in linspace(0.5, 7.0, 50) {
        let got = bifurcation_function(&m, &[r], 1).unwrap()[0];
        worst = worst.max(rel_err(got, example1_f1_cos(r, b1)));
    }
    let grid = evaluate_grid(&m, 1, m.options.grid);
    let zeros = engine_zeros(&m, 1, &grid);
    let certified: Vec<f64> = zeros
        .iter()
        .filter(|z| z.status == ZeroStatus::Certified)
        .map(|z| z.alpha_star[0])
        .collect();
    let near = |t: f64| certified.iter().any(|r| (r - t).abs() < 1e-4);
    let pass = worst < 1e-5 && near(PI) && near(2.0 * PI);
    report(
        "ex1 cos f_1 vs -2 b1 sin r / r",
        pass,
        format!("max rel err {worst:.3e}, tol 1e-5; certified zeros {certified:?}"),
    );
    assert!(pass);
}

#[test]
fn example1_sin_first_order_and_bessel_zero() {
    let m = model("ex1_sin");
    let a1 = m.system.params["a1"];
    let mut worst: f64 = 0.0;
    for r in linspace(0.5, 7.0, 50) {
        let got = bifurcation_function(&m, &[r], 1).unwrap()[0];
        worst = worst.max(rel_err(got, example1_f1_sin(r, a1)));
    }
    // first positive zero of J_1 by bisection on the series
    let (mut lo, mut hi) = (3.0, 4.5);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bessel_j1(lo).unwrap() * bessel_j1(mid).unwrap() <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let j1_zero = 0.5 * (lo + hi);
    let grid = evaluate_grid(&m, 1, m.options.grid);
    let zeros = engine_zeros(&m, 1, &grid);
    let hit = zeros
        .iter()
        .any(|z| z.status == ZeroStatus::Certified && (z.alpha_star[0] - j1_zero).abs() < 1e-3);
    let pass = worst < 1e-5 && hit && (j1_zero - 3.83171).abs() < 1e-5;
    report(
        "ex1 sin f_1 vs a1 pi J1(r)",
        pass,
        format!("max rel err {worst:.3e}; J1 zero {j1_zero:.8}; certified zero found: {hit}"),
    );
    assert!(pass);
}

#[test]
fn example1_quadratic_second_order_matches_reference_cubic() {
    let base = model("ex1_quad");
    let grid = evaluate_grid(&base, 1, base.options.grid);
    let max_f1 = grid_max_abs(&grid, 1);
    let sets = [
        [1.0, 1.0, 0.0, 0.0, 0.5, 0.1, 0.0],
        [0.3, -0.7, 0.2, 0.4, 1.1, -0.2, 0.3],
        [-0.5, 0.8, -0.3, 0.1, -0.4, 0.05, -0.6],
    ];
    let names = ["a0", "a1", "a2", "a3", "b1", "b2", "b3"];
    let mut worst: f64 = 0.0;
    for s in sets {
        let params: Vec<(&str, f64)> = names.iter().copied().zip(s).collect();
        let m = base.with_params(&params).unwrap();
        for r in linspace(0.3, 2.5, 10) {
            let got = bifurcation_function(&m, &[r], 2).unwrap()[0];
            worst = worst.max(rel_err(got, oracle_f2_cubic(r, s[0], s[1], s[4], s[5])));
        }
    }
    let pass = max_f1 < 1e-7 && worst < 1e-4;
    report(
        "ex1 quadratic: f_1 == 0 and f_2 vs reference cubic",
        pass,
        format!("max |f_1| {max_f1:.3e} (tol 1e-7); f_2 max rel err {worst:.3e} (tol 1e-4)"),
    );
    assert!(pass);
}

/// Sign changes of `r^3 + A1 r + A0` on a fine grid of `(0, R]`.
fn brute_force_positive_roots(a0: f64, a1: f64) -> usize {
    let bound = 1.0 + a0.abs().max(a1.abs());
    let p = |r: f64| r * r * r + a1 * r + a0;
    let n = 200_000;
    let mut count = 0;
    let mut prev = p(1e-12);
    for i in 1..=n {
        let v = p(bound * i as f64 / n as f64);
        if (v < 0.0) != (prev < 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

#[test]
fn cubic_classification_never_overclaims() {
    let axis = linspace(-2.05, 1.95, 10);
    let mut violations = 0;
    let mut tight_cell = 0;
    let mut tight_attained = 0;
    for &a0 in &axis {
        for &a1 in &axis {
            let c = cubic_root_classification(a0, a1);
            let count = brute_force_positive_roots(a0, a1);
            if c.positive_root_lower_bound > count {
                violations += 1;
            }
            if c.discriminant > 0.0 && a1 < 0.0 && a0 > 0.0 {
                tight_cell += 1;
                if c.positive_root_lower_bound == count {
                    tight_attained += 1;
                }
            }
        }
    }
    // A0 and A1 come from the four physical parameters; spot-check finiteness
    let (x0, x1) = a0a1(1.0, 1.0, 0.5, 0.1);
    let pass = violations == 0 && tight_cell > 0 && tight_attained == tight_cell && x0.is_finite() && x1.is_finite();
    report(
        "cubic root classification",
        pass,
        format!("{violations} overclaims in 100 pairs; bound attained in {tight_attained}/{tight_cell} cells with D>0, A1<0, A0>0"),
    );
    assert!(pass);
}

#[test]
fn orbit_distance_is_first_order_in_eps() {
    let four = model("fourzone");
    let grid = evaluate_grid(&four, 1, four.options.grid);
    let zeros = engine_zeros(&four, 1, &grid);
    let star = zeros
        .iter()
        .find(|z| z.status == ZeroStatus::Certified)
        .expect("four-zone zero")
        .alpha_star
        .clone();
    let cos = model("ex1_cos");
    // Same zeros with transverse forcing switched on, so that the orbit
    // actually moves with eps (c, d do not enter f_1; neither does a0 for f = cos x).
    let four_forced = four
        .with_params(&[("c1", 0.7), ("c2", -0.4), ("c3", 0.3), ("c4", 0.9), ("d1", 0.5), ("d2", -0.2), ("d3", 0.8), ("d4", 0.1)])
        .unwrap();
    let cos_forced = cos.with_params(&[("a0", 0.5)]).unwrap();
    let cases = [
        ("fourzone", four, star.clone(), false),
        ("ex1_cos", cos, vec![PI], false),
        ("fourzone forced", four_forced, star, true),
        ("ex1_cos forced", cos_forced, vec![PI], true),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, m, alpha, need_slope) in cases {
        let rec = convergence_order(&m, &alpha, &m.options.eps_list).unwrap();
        let in_band = rec.slope.is_some_and(|s| (0.8..=1.3).contains(&s));
        let ok = rec.failure.is_none()
            && rec.passed
            && (in_band || !need_slope)
            && rec.residuals.len() == m.options.eps_list.len()
            && rec.residuals.iter().all(|&r| r < 1e-10);
        pass &= ok;
        detail.push(format!(
            "{name}: alpha* {:?}, slope {:?}, max |h| {:.1e}, max distance {:.1e}{}",
            alpha,
            rec.slope,
            rec.residuals.iter().cloned().fold(0.0, f64::max),
            rec.distances.iter().cloned().fold(0.0, f64::max),
            rec.failure.map(|f| format!(", failure {f}")).unwrap_or_default()
        ));
    }
    report("O(eps) orbit convergence", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn structural_invariants_on_bundled_examples() {
    let mut failures = Vec::new();
    let mut worst = [0.0f64; 4];
    for name in ["fourzone", "ex1_cos", "ex1_sin", "ex1_quad"] {
        let m = model(name);
        let sys = &m.system;
        let tol = m.options.tolerances();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (lo, hi) = (m.chart.v_lower[0], m.chart.v_upper[0]);
        for s in 0..20 {
            let alpha = rng.random_range(lo..hi);
            let z = m.z_alpha(&[alpha]).unwrap();
            let avg = averaged_functions(sys, &z, sys.k, tol).unwrap();
            if avg.nodes[0].y != DMatrix::identity(sys.m, sys.m) {
                failures.push(format!("{name}: Y(0) != Id"));
            }
            let g0 = avg.g[0].iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst[0] = worst[0].max(g0);
            if g0 >= 1e-8 {
                failures.push(format!("{name}: |g_0(z_alpha)| = {g0:.2e} at alpha = {alpha}"));
            }
            if s % 5 != 0 {
                continue;
            }
            for node in liouville_check(sys, &z, tol).unwrap() {
                worst[1] = worst[1].max(node.rel_error);
                if node.rel_error >= 1e-7 {
                    failures.push(format!("{name}: Liouville rel err {:.2e}", node.rel_error));
                }
            }
            let fd = delta_by_finite_differences(&m, &[alpha]).unwrap();
            let block = pwavg::lsreduction::delta_matrix(&avg.y_t, sys.m, m.chart.d).unwrap();
            let scale = block.amax().max(1.0);
            let diff = (&fd - &block).amax() / scale;
            worst[2] = worst[2].max(diff);
            if diff >= 1e-5 {
                failures.push(format!("{name}: Delta FD vs block {diff:.2e}"));
            }
            // off the manifold as well, where g_0 is not small
            let mut off = z.clone();
            off[sys.m - 1] += 0.1;
            for point in [z.clone(), off] {
                let a = averaged_functions(sys, &point, sys.k, tol).unwrap();
                let b = averaged_functions_bell(sys, &point, sys.k, tol).unwrap();
                for (ga, gb) in a.g.iter().zip(&b.g) {
                    for (x, y) in ga.iter().zip(gb) {
                        let e = (x - y).abs() / x.abs().max(1.0);
                        worst[3] = worst[3].max(e);
                        if e >= 1e-7 {
                            failures.push(format!("{name}: Bell route differs by {e:.2e}"));
                        }
                    }
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(
        "structural invariants",
        pass,
        format!(
            "max |g_0| {:.1e}, Liouville {:.1e}, Delta {:.1e}, Bell {:.1e}; {failures:?}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
    assert!(pass);
}

fn set_partitions_by_blocks(p: usize) -> Vec<usize> {
    // restricted growth strings a_0 = 0, a_i <= 1 + max(a_0..a_{i-1})
    fn go(i: usize, p: usize, max: usize, counts: &mut [usize]) {
        if i == p {
            counts[max + 1] += 1;
            return;
        }
        for v in 0..=max + 1 {
            go(i + 1, p, max.max(v), counts);
        }
    }
    let mut counts = vec![0; p + 2];
    go(1, p, 0, &mut counts);
    counts
}

fn integer_partitions(n: usize, largest: usize) -> usize {
    if n == 0 {
        return 1;
    }
    (1..=largest.min(n)).map(|k| integer_partitions(n - k, k)).sum()
}

#[test]
fn combinatorics_suite() {
    let mut failures = Vec::new();
    let x = [1.3, -0.7, 2.1, 0.4, -1.6, 0.9];
    let bell_numbers = [1, 2, 5, 15, 52, 203];
    for p in 1..=6 {
        let xp = &x[..1];
        if (bell_partial(p, p, xp).unwrap() - x[0].powi(p as i32)).abs() > 1e-12 {
            failures.push(format!("B_{{{p},{p}}}"));
        }
        if (bell_partial(p, 1, &x[..p]).unwrap() - x[p - 1]).abs() > 1e-12 {
            failures.push(format!("B_{{{p},1}}"));
        }
        let blocks = set_partitions_by_blocks(p);
        let mut row = 0.0;
        for q in 1..=p {
            let v = bell_partial(p, q, &vec![1.0; p - q + 1]).unwrap();
            if v != blocks[q] as f64 {
                failures.push(format!("B_{{{p},{q}}}(1) = {v}, expected {}", blocks[q]));
            }
            row += v;
        }
        if row != bell_numbers[p - 1] as f64 {
            failures.push(format!("Bell row {p}: {row}"));
        }
        let s = enumerate_partition_tuples(p).unwrap().len();
        if s != integer_partitions(p, p) {
            failures.push(format!("|S_{p}| = {s}"));
        }
    }
    let pass = failures.is_empty();
    report("combinatorics", pass, format!("{failures:?}"));
    assert!(pass);
}

#[test]
fn smooth_single_zone_reduces_to_classical_average() {
    let cfg = r#"
[system]
m = 2
T = "2*pi"
k = 1
state = ["u", "v"]
switch_times = [0, "2*pi"]

[[zone]]
rhs_order_0 = ["0", "0"]
rhs_order_1 = ["sin(t)*u^2 + cos(v + t)", "u*v*cos(t)^2 + exp(sin(2*t))"]

[manifold]
d = 2
beta = []
v_lower = [-1, -1]
v_upper = [1, 1]
"#;
    let m = load_system(cfg).unwrap();
    let mut worst: f64 = 0.0;
    for z in [[0.3, -0.4], [1.2, 0.7], [-0.8, 2.0]] {
        let g = averaged_functions(&m.system, &z, 1, m.options.tolerances()).unwrap().g;
        let (u, v) = (z[0], z[1]);
        let q0 = integrate(|t| t.sin() * u * u + (v + t).cos(), 0.0, 2.0 * PI, 1e-13);
        let q1 = integrate(|t| u * v * t.cos().powi(2) + (2.0 * t).sin().exp(), 0.0, 2.0 * PI, 1e-13);
        worst = worst.max((g[1][0] - q0).abs()).max((g[1][1] - q1).abs());
    }
    let pass = worst < 1e-9;
    report("single-zone averaging vs quadrature", pass, format!("max abs err {worst:.3e}, tol 1e-9"));
    assert!(pass);
}
