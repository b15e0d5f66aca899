//! Standard-form piecewise systems, manifold charts and config ingestion.
//!
//! A config is a TOML document with the sections `[system]`, `[[zone]]`,
//! `[manifold]` and an optional `[analysis]`. See the README for the schema.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use pwavg_expr::{
    epsilon_series, parse_expression, CompiledExpr, EvalError, Expr, ParseError, SeriesError,
    SlotMap, UnaryOp, RESERVED,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::{averaged_functions, tensor::SymbolicTensor};
use crate::lsreduction::delta_matrix;
use crate::odeint::Tolerances;

/// Largest supported perturbation order.
pub const MAX_ORDER: usize = 6;

/// Name of the small parameter inside expressions.
pub const EPS: &str = "eps";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Toml(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Expansion { path: String, source: SeriesError },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Variable naming shared by all expressions of one system.
///
/// Evaluation environments are flat slices laid out as
/// `[t, x_1..x_m, eps, params...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub time: String,
    pub state: Vec<String>,
    pub params: Vec<String>,
}

impl VarLayout {
    pub fn m(&self) -> usize {
        self.state.len()
    }

    pub fn time_slot(&self) -> usize {
        0
    }

    pub fn state_slot(&self, c: usize) -> usize {
        1 + c
    }

    pub fn eps_slot(&self) -> usize {
        1 + self.m()
    }

    pub fn param_slot(&self, j: usize) -> usize {
        2 + self.m() + j
    }

    pub fn env_len(&self) -> usize {
        2 + self.m() + self.params.len()
    }

    pub fn slot_map(&self) -> SlotMap {
        let mut s = SlotMap::new();
        s.insert(self.time.clone(), self.time_slot());
        for (c, name) in self.state.iter().enumerate() {
            s.insert(name.clone(), self.state_slot(c));
        }
        s.insert(EPS.to_string(), self.eps_slot());
        for (j, name) in self.params.iter().enumerate() {
            s.insert(name.clone(), self.param_slot(j));
        }
        s
    }

    fn allowed(&self, with_eps: bool) -> HashSet<String> {
        let mut set: HashSet<String> = self.state.iter().cloned().collect();
        set.insert(self.time.clone());
        set.extend(self.params.iter().cloned());
        if with_eps {
            set.insert(EPS.to_string());
        }
        set
    }
}

/// One time zone `[t_{j-1}, t_j)` of a standard-form system.
#[derive(Debug, Clone)]
pub struct Zone {
    /// `rhs[i][c]` is component `c` of `F_i` on this zone.
    pub rhs: Vec<Vec<Expr>>,
    /// The eps-dependent field the orders were expanded from, if any.
    pub full: Option<Vec<Expr>>,
    pub remainder: Option<Vec<Expr>>,
    layout: Arc<VarLayout>,
    compiled: Vec<Vec<CompiledExpr>>,
    compiled_full: Option<Vec<CompiledExpr>>,
    compiled_remainder: Option<Vec<CompiledExpr>>,
    tensors: Vec<Vec<OnceLock<Arc<SymbolicTensor>>>>,
}

impl PartialEq for Zone {
    fn eq(&self, other: &Self) -> bool {
        self.rhs == other.rhs && self.full == other.full && self.remainder == other.remainder
    }
}

fn compile_all(exprs: &[Expr], slots: &SlotMap) -> Vec<CompiledExpr> {
    exprs
        .iter()
        .map(|e| CompiledExpr::compile(e, slots).expect("variables were checked at parse time"))
        .collect()
}

impl Zone {
    fn new(
        rhs: Vec<Vec<Expr>>,
        full: Option<Vec<Expr>>,
        remainder: Option<Vec<Expr>>,
        layout: Arc<VarLayout>,
    ) -> Zone {
        let slots = layout.slot_map();
        let compiled = rhs.iter().map(|r| compile_all(r, &slots)).collect();
        let compiled_full = full.as_deref().map(|f| compile_all(f, &slots));
        let compiled_remainder = remainder.as_deref().map(|f| compile_all(f, &slots));
        let k = rhs.len() - 1;
        let tensors = (0..=k)
            .map(|_| (0..=MAX_ORDER + 1).map(|_| OnceLock::new()).collect())
            .collect();
        Zone {
            rhs,
            full,
            remainder,
            layout,
            compiled,
            compiled_full,
            compiled_remainder,
            tensors,
        }
    }

    pub fn layout(&self) -> &VarLayout {
        &self.layout
    }

    /// Evaluates `F_order` into `out`; `env` must hold t, x and the params.
    pub fn eval_order(&self, order: usize, env: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.compiled[order]) {
            *o = e.eval(env)?;
        }
        Ok(())
    }

    /// Evaluates the full field at `env[eps_slot]`: the `rhs_full` source if
    /// present, otherwise the truncated sum plus `eps^(k+1) R`.
    pub fn eval_full(&self, env: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        if let Some(full) = &self.compiled_full {
            for (o, e) in out.iter_mut().zip(full) {
                *o = e.eval(env)?;
            }
            return Ok(());
        }
        let eps = env[self.layout.eps_slot()];
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut scale = 1.0;
        for order in &self.compiled {
            for (o, e) in out.iter_mut().zip(order) {
                *o += scale * e.eval(env)?;
            }
            scale *= eps;
        }
        if let Some(rem) = &self.compiled_remainder {
            for (o, e) in out.iter_mut().zip(rem) {
                *o += scale * e.eval(env)?;
            }
        }
        Ok(())
    }

    pub(crate) fn tensor_cell(&self, order: usize, l: usize) -> &OnceLock<Arc<SymbolicTensor>> {
        &self.tensors[order][l]
    }
}

/// A T-periodic standard-form system with time-switched zones.
#[derive(Debug, Clone)]
pub struct PiecewiseSystem {
    pub m: usize,
    pub period: f64,
    pub k: usize,
    pub switch_times: Vec<f64>,
    pub zones: Vec<Zone>,
    pub params: BTreeMap<String, f64>,
    pub layout: Arc<VarLayout>,
    period_src: String,
    switch_src: Vec<String>,
    expand_to: Vec<Option<usize>>,
}

impl PartialEq for PiecewiseSystem {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.period.to_bits() == other.period.to_bits()
            && self.k == other.k
            && self.switch_times == other.switch_times
            && self.zones == other.zones
            && self.params == other.params
            && self.layout == other.layout
    }
}

impl PiecewiseSystem {
    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    /// Zone index of time `t`, reduced mod T, with half-open zones.
    pub fn zone_at(&self, t: f64) -> usize {
        let mut s = t.rem_euclid(self.period);
        if s >= self.period {
            s = 0.0;
        }
        let idx = self.switch_times.partition_point(|&tj| tj <= s);
        idx.clamp(1, self.zones.len()) - 1
    }

    /// An environment slice with the parameter slots filled in.
    pub fn env(&self) -> Vec<f64> {
        let mut env = vec![0.0; self.layout.env_len()];
        for (j, name) in self.layout.params.iter().enumerate() {
            env[self.layout.param_slot(j)] = self.params[name];
        }
        env
    }
}

/// The family `z_alpha = (alpha, beta(alpha))` over the box `V`.
#[derive(Debug, Clone)]
pub struct ManifoldChart {
    pub d: usize,
    pub beta: Vec<Expr>,
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    compiled: Vec<CompiledExpr>,
}

impl PartialEq for ManifoldChart {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.beta == other.beta
            && self.v_lower == other.v_lower
            && self.v_upper == other.v_upper
    }
}

impl ManifoldChart {
    /// `z_alpha` for the parameter values of `sys`.
    pub fn point(&self, sys: &PiecewiseSystem, alpha: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut env = Vec::with_capacity(self.d + sys.params.len());
        env.extend_from_slice(alpha);
        env.extend(sys.layout.params.iter().map(|p| sys.params[p]));
        let mut z = alpha.to_vec();
        for b in &self.compiled {
            z.push(b.eval(&env)?);
        }
        Ok(z)
    }

    pub fn contains(&self, alpha: &[f64]) -> bool {
        alpha
            .iter()
            .zip(self.v_lower.iter().zip(&self.v_upper))
            .all(|(a, (lo, hi))| *lo <= *a && *a <= *hi)
    }
}

fn default_rtol() -> f64 {
    1e-10
}
fn default_atol() -> f64 {
    1e-12
}
fn default_tol_1e8() -> f64 {
    1e-8
}
fn default_zero_floor() -> f64 {
    1e-7
}
fn default_grid() -> usize {
    64
}
fn default_eps_list() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3, 1.25e-3]
}
fn default_eps_max() -> f64 {
    0.1
}
fn default_newton_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    30
}
fn default_simple_zero_floor() -> f64 {
    1e-6
}
fn default_verify_tol() -> f64 {
    1e-10
}
fn default_verify_rtol() -> f64 {
    1e-12
}
fn default_verify_atol() -> f64 {
    1e-14
}
fn default_samples() -> usize {
    20
}
fn default_seed() -> u64 {
    0x5eed
}
fn default_fd_h0() -> [f64; 3] {
    [1e-4, 1e-3, 5e-3]
}
fn default_dedup_tol() -> f64 {
    1e-6
}

/// Tolerances and sizes for an analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_tol_1e8")]
    pub periodicity_tol: f64,
    #[serde(default = "default_tol_1e8")]
    pub degeneracy_tol: f64,
    /// `max |f_i|` over the grid below this declares `f_i` identically zero.
    #[serde(default = "default_zero_floor")]
    pub zero_floor: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_simple_zero_floor")]
    pub simple_zero_floor: f64,
    #[serde(default = "default_dedup_tol")]
    pub dedup_tol: f64,
    #[serde(default = "default_verify_tol")]
    pub verify_tol: f64,
    #[serde(default = "default_verify_rtol")]
    pub verify_rtol: f64,
    #[serde(default = "default_verify_atol")]
    pub verify_atol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Base finite-difference steps for b-derivatives of order 1, 2 and >= 3.
    #[serde(default = "default_fd_h0")]
    pub fd_h0: [f64; 3],
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        toml::Table::new()
            .try_into()
            .expect("every field has a default")
    }
}

impl AnalysisOptions {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances::new(self.rtol, self.atol)
    }

    pub fn verify_tolerances(&self) -> Tolerances {
        Tolerances::new(self.verify_rtol, self.verify_atol)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("periodicity_tol", self.periodicity_tol),
            ("degeneracy_tol", self.degeneracy_tol),
            ("zero_floor", self.zero_floor),
            ("eps_max", self.eps_max),
            ("newton_tol", self.newton_tol),
            ("simple_zero_floor", self.simple_zero_floor),
            ("dedup_tol", self.dedup_tol),
            ("verify_tol", self.verify_tol),
            ("verify_rtol", self.verify_rtol),
            ("verify_atol", self.verify_atol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("analysis.{name}"), "must be positive"));
            }
        }
        if self.grid < 2 {
            return Err(invalid("analysis.grid", "need at least 2 points per axis"));
        }
        if self.fd_h0.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("analysis.fd_h0", "steps must be positive"));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && *e <= self.eps_max)) {
            return Err(invalid("analysis.eps_list", "entries must lie in (0, eps_max]"));
        }
        Ok(())
    }
}

/// A loaded config: system, chart and analysis options.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub system: PiecewiseSystem,
    pub chart: ManifoldChart,
    pub options: AnalysisOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    fn source(&self) -> String {
        match self {
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(v) => format!("{v:?}"),
            Scalar::Text(s) => s.clone(),
        }
    }

    fn value(&self, path: &str) -> Result<f64, ModelError> {
        match self {
            Scalar::Int(i) => Ok(*i as f64),
            Scalar::Float(v) => Ok(*v),
            Scalar::Text(s) => constant(s, path),
        }
    }
}

fn constant(src: &str, path: &str) -> Result<f64, ModelError> {
    let e = parse_expression(src, &HashSet::new()).map_err(|source| ModelError::Parse {
        path: path.to_string(),
        source,
    })?;
    let v = e
        .eval_const()
        .map_err(|err| invalid(path, err.to_string()))?;
    if !v.is_finite() {
        return Err(invalid(path, "value is not finite"));
    }
    Ok(v)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    m: usize,
    #[serde(rename = "T")]
    period: Scalar,
    k: usize,
    time: Option<String>,
    state: Option<Vec<String>>,
    switch_times: Vec<Scalar>,
    #[serde(default)]
    params: BTreeMap<String, Scalar>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifoldSection {
    d: usize,
    beta: Vec<String>,
    v_lower: Vec<Scalar>,
    v_upper: Vec<Scalar>,
}

fn section<T: for<'de> Deserialize<'de>>(
    doc: &toml::Table,
    name: &str,
) -> Result<Option<T>, ModelError> {
    doc.get(name)
        .map(|v| {
            v.clone()
                .try_into::<T>()
                .map_err(|e| invalid(name, e.message().to_string()))
        })
        .transpose()
}

fn check_identifier(name: &str, path: &str, taken: &mut HashSet<String>) -> Result<(), ModelError> {
    let mut chars = name.chars();
    let ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ok {
        return Err(invalid(path, format!("`{name}` is not a valid identifier")));
    }
    if RESERVED.contains(&name) || name == EPS || UnaryOp::from_name(name).is_some() {
        return Err(invalid(path, format!("`{name}` is reserved")));
    }
    if !taken.insert(name.to_string()) {
        return Err(invalid(path, format!("`{name}` is declared twice")));
    }
    Ok(())
}

fn parse_in(src: &str, allowed: &HashSet<String>, path: &str) -> Result<Expr, ModelError> {
    parse_expression(src, allowed).map_err(|source| ModelError::Parse {
        path: path.to_string(),
        source,
    })
}

fn string_array(v: &toml::Value, path: &str, len: usize) -> Result<Vec<String>, ModelError> {
    let arr = v
        .as_array()
        .ok_or_else(|| invalid(path, "expected an array of expression strings"))?;
    if arr.len() != len {
        return Err(invalid(path, format!("expected {len} components, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(c, s)| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| invalid(format!("{path}[{c}]"), "expected a string"))
        })
        .collect()
}

fn parse_vector(
    v: &toml::Value,
    path: &str,
    len: usize,
    allowed: &HashSet<String>,
) -> Result<Vec<Expr>, ModelError> {
    string_array(v, path, len)?
        .iter()
        .enumerate()
        .map(|(c, s)| parse_in(s, allowed, &format!("{path}[{c}]")))
        .collect()
}

fn parse_zone(
    table: &toml::Table,
    j: usize,
    k: usize,
    layout: &Arc<VarLayout>,
) -> Result<(Zone, Option<usize>), ModelError> {
    let path = format!("zone[{j}]");
    let m = layout.m();
    let plain = layout.allowed(false);
    let with_eps = layout.allowed(true);
    let order_keys: Vec<String> = (0..=k).map(|i| format!("rhs_order_{i}")).collect();
    for key in table.keys() {
        let known = order_keys.contains(key)
            || matches!(key.as_str(), "rhs_full" | "expand_to" | "remainder");
        if !known {
            return Err(invalid(format!("{path}.{key}"), "unknown key"));
        }
    }
    let has_full = table.contains_key("rhs_full");
    let has_orders = order_keys.iter().any(|key| table.contains_key(key));
    let (rhs, full, expand_to) = match (has_full, has_orders) {
        (true, true) => {
            return Err(invalid(&path, "give either rhs_order_* or rhs_full, not both"));
        }
        (false, false) => return Err(invalid(&path, "missing rhs_order_0..rhs_order_k or rhs_full")),
        (false, true) => {
            if table.contains_key("expand_to") {
                return Err(invalid(format!("{path}.expand_to"), "only valid with rhs_full"));
            }
            let mut rhs = Vec::with_capacity(k + 1);
            for key in &order_keys {
                let p = format!("{path}.{key}");
                let v = table.get(key).ok_or_else(|| invalid(&p, "missing"))?;
                rhs.push(parse_vector(v, &p, m, &plain)?);
            }
            (rhs, None, None)
        }
        (true, false) => {
            let p = format!("{path}.expand_to");
            let n = table
                .get("expand_to")
                .ok_or_else(|| invalid(&p, "required with rhs_full"))?
                .as_integer()
                .ok_or_else(|| invalid(&p, "expected an integer"))?;
            if n != k as i64 {
                return Err(invalid(&p, format!("must equal system.k = {k}")));
            }
            if table.contains_key("remainder") {
                return Err(invalid(
                    format!("{path}.remainder"),
                    "rhs_full already defines the full field",
                ));
            }
            let p = format!("{path}.rhs_full");
            let full = parse_vector(&table["rhs_full"], &p, m, &with_eps)?;
            let mut rhs = vec![Vec::with_capacity(m); k + 1];
            for (c, e) in full.iter().enumerate() {
                let series = epsilon_series(e, EPS, k).map_err(|source| ModelError::Expansion {
                    path: format!("{p}[{c}]"),
                    source,
                })?;
                for (i, s) in series.into_iter().enumerate() {
                    rhs[i].push(s);
                }
            }
            (rhs, Some(full), Some(k))
        }
    };
    // Orders below k are differentiated in x; abs has no derivative at 0.
    for (i, order) in rhs.iter().enumerate().take(k) {
        for (c, e) in order.iter().enumerate() {
            if contains_abs(e) {
                return Err(invalid(
                    format!("{path}.rhs_order_{i}[{c}]"),
                    "abs() is not allowed in fields that are differentiated",
                ));
            }
        }
    }
    let remainder = table
        .get("remainder")
        .map(|v| parse_vector(v, &format!("{path}.remainder"), m, &with_eps))
        .transpose()?;
    Ok((Zone::new(rhs, full, remainder, layout.clone()), expand_to))
}

fn contains_abs(e: &Expr) -> bool {
    match e {
        Expr::Num(_) | Expr::Var(_) => false,
        Expr::Unary(op, a) => *op == UnaryOp::Abs || contains_abs(a),
        Expr::Pow(a, _) => contains_abs(a),
        Expr::Binary(_, a, b) => contains_abs(a) || contains_abs(b),
    }
}

/// Parses and validates a config document.
pub fn load_system(config: &str) -> Result<Model, ModelError> {
    let doc: toml::Table = config
        .parse()
        .map_err(|e: toml::de::Error| ModelError::Toml(e.to_string()))?;
    for key in doc.keys() {
        if !matches!(key.as_str(), "system" | "zone" | "manifold" | "analysis") {
            return Err(invalid(key, "unknown section"));
        }
    }
    let sys: SystemSection =
        section(&doc, "system")?.ok_or_else(|| invalid("system", "missing section"))?;
    let man: ManifoldSection =
        section(&doc, "manifold")?.ok_or_else(|| invalid("manifold", "missing section"))?;
    let options: AnalysisOptions = section(&doc, "analysis")?.unwrap_or_default();
    options.validate()?;

    if sys.m == 0 {
        return Err(invalid("system.m", "must be at least 1"));
    }
    if sys.k == 0 || sys.k > MAX_ORDER {
        return Err(invalid("system.k", format!("must lie in 1..={MAX_ORDER}")));
    }
    let period = sys.period.value("system.T")?;
    if !(period > 0.0) {
        return Err(invalid("system.T", "must be positive"));
    }

    let mut taken = HashSet::new();
    let time = sys.time.clone().unwrap_or_else(|| "t".to_string());
    check_identifier(&time, "system.time", &mut taken)?;
    let state = match &sys.state {
        Some(names) => {
            if names.len() != sys.m {
                return Err(invalid(
                    "system.state",
                    format!("expected {} names, found {}", sys.m, names.len()),
                ));
            }
            names.clone()
        }
        None => (1..=sys.m).map(|c| format!("x_{c}")).collect(),
    };
    for (c, name) in state.iter().enumerate() {
        check_identifier(name, &format!("system.state[{c}]"), &mut taken)?;
    }
    let mut params = BTreeMap::new();
    for (name, v) in &sys.params {
        let path = format!("system.params.{name}");
        check_identifier(name, &path, &mut taken)?;
        if let Scalar::Text(_) = v {
            return Err(invalid(&path, "expected a number"));
        }
        params.insert(name.clone(), v.value(&path)?);
    }
    let layout = Arc::new(VarLayout {
        time,
        state,
        params: params.keys().cloned().collect(),
    });

    let mut switch_times = Vec::with_capacity(sys.switch_times.len());
    for (j, s) in sys.switch_times.iter().enumerate() {
        switch_times.push(s.value(&format!("system.switch_times[{j}]"))?);
    }
    if switch_times.len() < 2 {
        return Err(invalid("system.switch_times", "need at least t_0 = 0 and t_n = T"));
    }
    if switch_times[0] != 0.0 {
        return Err(invalid("system.switch_times", "must start at 0"));
    }
    if switch_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("system.switch_times", "must be strictly increasing"));
    }
    let last = *switch_times.last().unwrap();
    if last != period {
        return Err(invalid(
            "system.switch_times",
            format!("must end exactly at T = {period}, found {last}"),
        ));
    }
    let n = switch_times.len() - 1;

    let zone_tables = match doc.get("zone") {
        Some(toml::Value::Array(a)) => a,
        Some(_) => return Err(invalid("zone", "expected an array of tables [[zone]]")),
        None => return Err(invalid("zone", "missing [[zone]] entries")),
    };
    if zone_tables.len() != n {
        return Err(invalid(
            "zone",
            format!("switch_times define {n} zones, found {}", zone_tables.len()),
        ));
    }
    let mut zones = Vec::with_capacity(n);
    let mut expand_to = Vec::with_capacity(n);
    for (j, z) in zone_tables.iter().enumerate() {
        let table = z
            .as_table()
            .ok_or_else(|| invalid(format!("zone[{j}]"), "expected a table"))?;
        let (zone, e) = parse_zone(table, j, sys.k, &layout)?;
        zones.push(zone);
        expand_to.push(e);
    }

    if man.d == 0 || man.d > sys.m {
        return Err(invalid("manifold.d", format!("must lie in 1..={}", sys.m)));
    }
    if man.beta.len() != sys.m - man.d {
        return Err(invalid(
            "manifold.beta",
            format!("expected m - d = {} components, found {}", sys.m - man.d, man.beta.len()),
        ));
    }
    let mut v_lower = Vec::new();
    let mut v_upper = Vec::new();
    for (name, src, dst) in [
        ("v_lower", &man.v_lower, &mut v_lower),
        ("v_upper", &man.v_upper, &mut v_upper),
    ] {
        if src.len() != man.d {
            return Err(invalid(format!("manifold.{name}"), format!("expected {} entries", man.d)));
        }
        for (i, s) in src.iter().enumerate() {
            dst.push(s.value(&format!("manifold.{name}[{i}]"))?);
        }
    }
    if v_lower.iter().zip(&v_upper).any(|(lo, hi)| !(lo < hi)) {
        return Err(invalid("manifold", "v_lower must be below v_upper on every axis"));
    }
    // beta may use alpha_1..alpha_d or the first d state names.
    let mut chart_slots = SlotMap::new();
    let mut chart_vars = HashSet::new();
    for i in 0..man.d {
        for name in [format!("alpha_{}", i + 1), layout.state[i].clone()] {
            chart_slots.insert(name.clone(), i);
            chart_vars.insert(name);
        }
    }
    for (j, p) in layout.params.iter().enumerate() {
        chart_slots.insert(p.clone(), man.d + j);
        chart_vars.insert(p.clone());
    }
    let mut beta = Vec::with_capacity(man.beta.len());
    for (c, src) in man.beta.iter().enumerate() {
        beta.push(parse_in(src, &chart_vars, &format!("manifold.beta[{c}]"))?);
    }
    let compiled = compile_all(&beta, &chart_slots);

    let system = PiecewiseSystem {
        m: sys.m,
        period,
        k: sys.k,
        switch_times,
        zones,
        params,
        layout,
        period_src: sys.period.source(),
        switch_src: sys.switch_times.iter().map(Scalar::source).collect(),
        expand_to,
    };
    let chart = ManifoldChart {
        d: man.d,
        beta,
        v_lower,
        v_upper,
        compiled,
    };
    Ok(Model {
        system,
        chart,
        options,
    })
}

/// Reads and loads a config file.
pub fn load_system_file(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_system(&text)
}

fn strings(exprs: &[Expr]) -> toml::Value {
    toml::Value::Array(exprs.iter().map(|e| toml::Value::String(e.to_string())).collect())
}

impl Model {
    /// Serialises the loaded records back to a config document.
    pub fn to_toml(&self) -> String {
        let sys = &self.system;
        let mut system = toml::Table::new();
        system.insert("m".into(), (sys.m as i64).into());
        system.insert("T".into(), sys.period_src.clone().into());
        system.insert("k".into(), (sys.k as i64).into());
        system.insert("time".into(), sys.layout.time.clone().into());
        system.insert(
            "state".into(),
            toml::Value::Array(sys.layout.state.iter().map(|s| s.clone().into()).collect()),
        );
        system.insert(
            "switch_times".into(),
            toml::Value::Array(sys.switch_src.iter().map(|s| s.clone().into()).collect()),
        );
        let params: toml::Table = sys
            .params
            .iter()
            .map(|(k, v)| (k.clone(), toml::Value::Float(*v)))
            .collect();
        system.insert("params".into(), params.into());

        let mut zones = Vec::new();
        for (zone, expand) in sys.zones.iter().zip(&sys.expand_to) {
            let mut t = toml::Table::new();
            match (&zone.full, expand) {
                (Some(full), Some(n)) => {
                    t.insert("rhs_full".into(), strings(full));
                    t.insert("expand_to".into(), (*n as i64).into());
                }
                _ => {
                    for (i, order) in zone.rhs.iter().enumerate() {
                        t.insert(format!("rhs_order_{i}"), strings(order));
                    }
                    if let Some(rem) = &zone.remainder {
                        t.insert("remainder".into(), strings(rem));
                    }
                }
            }
            zones.push(toml::Value::Table(t));
        }

        let ch = &self.chart;
        let mut manifold = toml::Table::new();
        manifold.insert("d".into(), (ch.d as i64).into());
        manifold.insert("beta".into(), strings(&ch.beta));
        let floats = |v: &[f64]| toml::Value::Array(v.iter().map(|x| toml::Value::Float(*x)).collect());
        manifold.insert("v_lower".into(), floats(&ch.v_lower));
        manifold.insert("v_upper".into(), floats(&ch.v_upper));

        let mut doc = toml::Table::new();
        doc.insert("system".into(), system.into());
        doc.insert("zone".into(), toml::Value::Array(zones));
        doc.insert("manifold".into(), manifold.into());
        doc.insert(
            "analysis".into(),
            toml::Value::try_from(&self.options).expect("options serialise"),
        );
        toml::to_string(&doc).expect("config serialises")
    }

    /// A copy with some parameters replaced. Unknown names are rejected.
    pub fn with_params(&self, values: &[(&str, f64)]) -> Result<Model, ModelError> {
        let mut out = self.clone();
        for (name, v) in values {
            match out.system.params.get_mut(*name) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(invalid(format!("system.params.{name}"), "no such parameter"));
                }
            }
        }
        Ok(out)
    }

    /// Chart point for `alpha`.
    pub fn z_alpha(&self, alpha: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.chart.point(&self.system, alpha)
    }
}

/// Per-sample outcome of [`validate_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSample {
    pub alpha: Vec<f64>,
    /// `max_c |x_c(T, z_alpha, 0) - z_alpha,c|`.
    pub residual: Option<f64>,
    pub det_delta: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub samples: Vec<HypothesisSample>,
    pub max_residual: f64,
    pub min_abs_det_delta: f64,
    pub periodicity_tol: f64,
    pub degeneracy_tol: f64,
    pub periodic: bool,
    pub nondegenerate: bool,
    pub passed: bool,
}

/// Checks that the chart consists of T-periodic unperturbed orbits and that
/// `det Delta_alpha` stays away from zero, at `samples` uniform draws in V.
pub fn validate_hypotheses(model: &Model, samples: usize) -> HypothesisReport {
    use rayon::prelude::*;

    let opts = &model.options;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let alphas: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            model
                .chart
                .v_lower
                .iter()
                .zip(&model.chart.v_upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect()
        })
        .collect();
    let m = model.system.m;
    let d = model.chart.d;
    let results: Vec<HypothesisSample> = alphas
        .into_par_iter()
        .map(|alpha| {
            let run = || -> Result<(f64, f64), String> {
                let z = model.z_alpha(&alpha).map_err(|e| e.to_string())?;
                let avg = averaged_functions(&model.system, &z, 0, opts.tolerances())
                    .map_err(|e| e.to_string())?;
                let residual = avg
                    .x_t
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let det = if d == m {
                    1.0
                } else {
                    delta_matrix(&avg.y_t, m, d)
                        .map_err(|e| e.to_string())?
                        .determinant()
                };
                Ok((residual, det))
            };
            match run() {
                Ok((residual, det)) => HypothesisSample {
                    alpha,
                    residual: Some(residual),
                    det_delta: Some(det),
                    error: None,
                },
                Err(e) => HypothesisSample {
                    alpha,
                    residual: None,
                    det_delta: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let failed = results.iter().any(|s| s.error.is_some());
    let max_residual = results
        .iter()
        .filter_map(|s| s.residual)
        .fold(0.0, f64::max);
    let min_abs_det_delta = results
        .iter()
        .filter_map(|s| s.det_delta.map(f64::abs))
        .fold(f64::INFINITY, f64::min);
    let periodic = !failed && max_residual <= opts.periodicity_tol;
    let nondegenerate = !failed && min_abs_det_delta > opts.degeneracy_tol;
    HypothesisReport {
        samples: results,
        max_residual,
        min_abs_det_delta,
        periodicity_tol: opts.periodicity_tol,
        degeneracy_tol: opts.degeneracy_tol,
        periodic,
        nondegenerate,
        passed: periodic && nondegenerate,
    }
}
