//! Dormand–Prince 5(4) integration with exact stops at switching times.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{PiecewiseSystem, EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Tolerances { rtol, atol }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::new(1e-10, 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("|eps| = {eps} exceeds the configured bound {bound}")]
    EpsOutOfRange { eps: f64, bound: f64 },
}

const MAX_STEPS: usize = 1_000_000;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    /// Five coefficient vectors of the interpolant, concatenated.
    rc: Vec<f64>,
}

impl DenseStep {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = out.len();
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            let r = |j: usize| self.rc[j * n + i];
            *o = r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))));
        }
    }
}

/// The solution on one zone `[t_start, t_end]`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub zone: usize,
    /// Accepted mesh, starting at `t_start` and ending exactly at `t_end`.
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    dense: Vec<DenseStep>,
    /// Sum over steps of the max-norm local error estimate.
    pub error_estimate: f64,
    pub rejected: usize,
}

impl Segment {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.y.last().unwrap()
    }

    /// Dense evaluation inside the segment.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if t < self.t_start() || t > self.t_end() {
            return None;
        }
        let mut out = vec![0.0; self.y[0].len()];
        match self.dense.iter().position(|s| t <= s.t0 + s.h) {
            Some(i) => self.dense[i].eval(t, &mut out),
            None => out.copy_from_slice(self.final_state()),
        }
        Some(out)
    }
}

/// A concatenation of zone segments over `[0, T]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.segments.last().unwrap().final_state()
    }

    pub fn error_estimate(&self) -> f64 {
        self.segments.iter().map(|s| s.error_estimate).sum()
    }

    pub fn steps(&self) -> usize {
        self.segments.iter().map(|s| s.t.len() - 1).sum()
    }

    /// States at the switching times `t_0..t_n`.
    pub fn nodes(&self) -> Vec<(f64, &[f64])> {
        let mut out = vec![(self.segments[0].t_start(), self.segments[0].y[0].as_slice())];
        out.extend(self.segments.iter().map(|s| (s.t_end(), s.final_state())));
        out
    }

    /// Dense evaluation; at a switching time the left segment is used.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        self.segments.iter().find_map(|s| s.eval(t))
    }

    /// `(t, zone, state)` for every mesh point, the shared node included once.
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, &[f64])> {
        self.segments.iter().enumerate().flat_map(|(j, s)| {
            let skip = usize::from(j > 0);
            s.t.iter()
                .zip(&s.y)
                .skip(skip)
                .map(move |(t, y)| (*t, s.zone, y.as_slice()))
        })
    }

    /// CSV with header `t,<names...>,zone`; zones are 1-based.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("t");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",zone\n");
        for (t, zone, y) in self.samples() {
            write!(out, "{t:?}").unwrap();
            for v in y {
                write!(out, ",{v:?}").unwrap();
            }
            writeln!(out, ",{}", zone + 1).unwrap();
        }
        out
    }
}

fn rms_error(err: &[f64], y0: &[f64], y1: &[f64], tol: Tolerances) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = tol.atol + tol.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrates `y' = rhs(t, y)` from `t_start` to exactly `t_end`.
///
/// `rhs` writes the derivative into its third argument. `zone` is recorded on
/// the segment only.
pub fn integrate_zone<F>(
    mut rhs: F,
    zone: usize,
    t_start: f64,
    t_end: f64,
    y0: &[f64],
    tol: Tolerances,
) -> Result<Segment, IntegrationError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), String>,
{
    assert!(t_start < t_end, "integrate_zone needs t_start < t_end");
    let n = y0.len();
    let mut call = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), IntegrationError> {
        rhs(t, y, out).map_err(|message| IntegrationError::Rhs { t, message })?;
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(IntegrationError::NonFinite { t })
        }
    };

    let mut seg = Segment {
        zone,
        t: vec![t_start],
        y: vec![y0.to_vec()],
        dense: Vec::new(),
        error_estimate: 0.0,
        rejected: 0,
    };
    let mut t = t_start;
    let mut y = y0.to_vec();
    let mut h = (t_end - t_start) / 100.0;
    let mut k1 = vec![0.0; n];
    call(t, &y, &mut k1)?;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ys = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];

    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;
    const SAFE: f64 = 0.9;
    const FACC1: f64 = 1.0 / 0.2;
    const FACC2: f64 = 1.0 / 10.0;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;

    for _ in 0..MAX_STEPS {
        let remaining = t_end - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(IntegrationError::StepUnderflow { t, h });
        }

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        call(t + C2 * h, &ys, &mut k2)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        call(t + C3 * h, &ys, &mut k3)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        call(t + C4 * h, &ys, &mut k4)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        call(t + C5 * h, &ys, &mut k5)?;
        for i in 0..n {
            ys[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + h };
        call(t_new, &ys, &mut k6)?;
        for i in 0..n {
            y1[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        call(t_new, &y1, &mut k7)?;
        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = rms_error(&err, &y, &y1, tol);
        if !e.is_finite() {
            return Err(IntegrationError::NonFinite { t });
        }

        let fac11 = e.powf(EXPO1);
        if e <= 1.0 {
            let mut rc = Vec::with_capacity(5 * n);
            rc.extend_from_slice(&y);
            rc.extend(y1.iter().zip(&y).map(|(a, b)| a - b));
            for i in 0..n {
                let ydiff = y1[i] - y[i];
                rc.push(h * k1[i] - ydiff);
            }
            for i in 0..n {
                let ydiff = y1[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rc.push(ydiff - h * k7[i] - bspl);
            }
            for i in 0..n {
                rc.push(
                    h * (D1 * k1[i]
                        + D3 * k3[i]
                        + D4 * k4[i]
                        + D5 * k5[i]
                        + D6 * k6[i]
                        + D7 * k7[i]),
                );
            }
            seg.dense.push(DenseStep { t0: t, h, rc });
            seg.error_estimate += err.iter().fold(0.0, |a: f64, b| a.max(b.abs()));

            let mut fac = fac11 / facold.powf(BETA);
            fac = FACC2.max(FACC1.min(fac / SAFE));
            let mut h_new = h / fac;
            facold = e.max(1e-4);
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;

            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut y1);
            t = t_new;
            seg.t.push(t);
            seg.y.push(y.clone());
            if last {
                return Ok(seg);
            }
            h = h_new;
        } else {
            h /= FACC1.min(fac11 / SAFE);
            last_rejected = true;
            seg.rejected += 1;
        }
    }
    Err(IntegrationError::TooManySteps { t })
}

/// Integrates zone by zone over `[0, T]`; `field(zone, env_with_t_and_x, out)`
/// evaluates the vector field.
fn propagate_with<F>(
    sys: &PiecewiseSystem,
    z: &[f64],
    eps: f64,
    tol: Tolerances,
    field: F,
) -> Result<Trajectory, IntegrationError>
where
    F: Fn(usize, &[f64], &mut [f64]) -> Result<(), String>,
{
    let layout = &sys.layout;
    let m = sys.m;
    let mut env = sys.env();
    env[layout.eps_slot()] = eps;
    let mut segments: Vec<Segment> = Vec::with_capacity(sys.n_zones());
    let mut state = z.to_vec();
    for j in 0..sys.n_zones() {
        let (a, b) = (sys.switch_times[j], sys.switch_times[j + 1]);
        let seg = integrate_zone(
            |t, y, out| {
                env[layout.time_slot()] = t;
                env[1..=m].copy_from_slice(y);
                field(j, &env, out)
            },
            j,
            a,
            b,
            &state,
            tol,
        )?;
        state = seg.final_state().to_vec();
        segments.push(seg);
    }
    Ok(Trajectory { segments })
}

/// Solution of `x' = F_0(t, x)` from `x(0) = z` over one period.
pub fn propagate_unperturbed(
    sys: &PiecewiseSystem,
    z: &[f64],
    tol: Tolerances,
) -> Result<Trajectory, IntegrationError> {
    propagate_with(sys, z, 0.0, tol, |j, env, out| {
        sys.zones[j].eval_order(0, env, out).map_err(|e| e.to_string())
    })
}

/// Solution of the full perturbed system at `eps` over one period.
///
/// `eps = 0` delegates to [`propagate_unperturbed`].
pub fn propagate_full(
    sys: &PiecewiseSystem,
    z: &[f64],
    eps: f64,
    eps_max: f64,
    tol: Tolerances,
) -> Result<Trajectory, IntegrationError> {
    if !(eps.abs() <= eps_max) {
        return Err(IntegrationError::EpsOutOfRange {
            eps,
            bound: eps_max,
        });
    }
    if eps == 0.0 {
        return propagate_unperturbed(sys, z, tol);
    }
    debug_assert_eq!(sys.layout.eps_slot(), sys.m + 1, "{EPS} slot follows the state");
    propagate_with(sys, z, eps, tol, |j, env, out| {
        sys.zones[j].eval_full(env, out).map_err(|e| e.to_string())
    })
}
