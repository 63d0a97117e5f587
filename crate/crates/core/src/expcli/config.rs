//! Flat `[section]` / `key = value` experiment configs.
//!
//! Blank lines and `#` comments are ignored; lists are comma separated and
//! lists of vectors separate vectors by `;`. Unknown sections and keys,
//! duplicates, malformed and out-of-range values are all reported with
//! their line numbers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbsolver::{FluxLaw, SolverOptions};
use crate::monotone::{DEFAULT_C1, DEFAULT_C2, DEFAULT_C3, DYADIC_MIN_SHELLS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scan,
    Bound,
    Dyadic,
    Fh,
    Solve,
    Hebey,
    Calibrate,
}

impl Kind {
    pub const ALL: [Kind; 7] = [Kind::Scan, Kind::Bound, Kind::Dyadic, Kind::Fh, Kind::Solve, Kind::Hebey, Kind::Calibrate];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Scan => "scan",
            Kind::Bound => "bound",
            Kind::Dyadic => "dyadic",
            Kind::Fh => "fh",
            Kind::Solve => "solve",
            Kind::Hebey => "hebey",
            Kind::Calibrate => "calibrate",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricType {
    Euclidean,
    SpaceForm,
    Polynomial,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSection {
    #[serde(rename = "type")]
    pub kind: MetricType,
    pub n: usize,
    pub kappa: f64,
    pub coeffs: Vec<f64>,
    /// Factor `t` of the rescaled metric `g(t x)`.
    pub rescale: f64,
    pub curvature_bound: Option<f64>,
    pub working_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSection {
    pub radius: f64,
    pub n_r: usize,
    pub n_ang: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Plane,
    Sector,
    Cap,
    Inhomogeneous,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairSection {
    pub family: FamilyKind,
    /// Plane directions; one pair per direction (the first is used by
    /// single-pair experiments).
    pub directions: Vec<Vec<f64>>,
    pub theta: f64,
    /// Inhomogeneities; one pair per value.
    pub a: Vec<f64>,
    pub scale_plus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSection {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub count: usize,
    pub c0: f64,
    pub k_max: Option<usize>,
    pub delta: Option<f64>,
    /// `t` of the differential inequality (curvature scale).
    pub t: f64,
    /// Repeat at doubled resolution and compare.
    pub refine: bool,
    pub drift_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsSection {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FhSection {
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HebeySection {
    pub radius: Option<f64>,
    pub k: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub step_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemSection {
    /// Boundary data `<b, x> + offset + quadratic |x|^2`.
    pub boundary: Vec<f64>,
    pub offset: f64,
    pub quadratic: f64,
    pub f1: f64,
    pub f2: f64,
    pub bound: Option<f64>,
    pub solver: SolverOptions,
    pub lipschitz_radius: Option<f64>,
    pub flux: FluxLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub svg: bool,
    pub log_radius: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub name: String,
    pub seed: u64,
    pub metric: MetricSection,
    pub grid: GridSection,
    pub pair: PairSection,
    pub scan: ScanSection,
    pub constants: ConstantsSection,
    pub fh: FhSection,
    pub hebey: HebeySection,
    pub problem: ProblemSection,
    pub output: OutputSection,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["kind", "name", "seed"]),
    ("metric", &["type", "n", "kappa", "coeffs", "rescale", "curvature_bound", "working_radius"]),
    ("grid", &["radius", "n_r", "n_ang"]),
    ("pair", &["family", "direction", "directions", "theta", "a", "scale_plus"]),
    ("scan", &["r_min", "r_max", "count", "c0", "k_max", "delta", "t", "refine", "drift_tol"]),
    ("constants", &["c1", "c2", "c3"]),
    ("fh", &["theta"]),
    ("hebey", &["radius", "k", "n_radial", "n_angular", "step_fraction"]),
    (
        "problem",
        &[
            "boundary", "offset", "quadratic", "f1", "f2", "bound", "omega", "tol", "max_sweeps", "max_outer",
            "lipschitz_radius", "flux", "flux_p", "flux_q", "flux_c",
        ],
    ),
    ("output", &["dir", "svg", "log_radius"]),
];

/// One `key = value` entry with its line number.
#[derive(Clone, Debug)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Default)]
struct Parser {
    entries: BTreeMap<(String, String), Entry>,
    errors: Vec<String>,
}

impl Parser {
    fn error(&mut self, line: usize, msg: impl fmt::Display) {
        self.errors.push(format!("line {line}: {msg}"));
    }

    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn string(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.take(section, key).map(|e| (e.line, e.value))
    }

    fn float(&mut self, section: &str, key: &str, check: impl Fn(f64) -> bool, range: &str) -> Option<f64> {
        let e = self.take(section, key)?;
        match e.value.parse::<f64>() {
            Ok(v) if v.is_finite() && check(v) => Some(v),
            Ok(v) => {
                self.error(e.line, format!("{section}.{key} = {v} out of range ({range})"));
                None
            }
            Err(_) => {
                self.error(e.line, format!("{section}.{key}: expected a number, got '{}'", e.value));
                None
            }
        }
    }

    fn int(&mut self, section: &str, key: &str, check: impl Fn(u64) -> bool, range: &str) -> Option<u64> {
        let e = self.take(section, key)?;
        match e.value.parse::<u64>() {
            Ok(v) if check(v) => Some(v),
            Ok(v) => {
                self.error(e.line, format!("{section}.{key} = {v} out of range ({range})"));
                None
            }
            Err(_) => {
                let msg = if e.value.starts_with('-') {
                    format!("{section}.{key} = {} out of range ({range})", e.value)
                } else {
                    format!("{section}.{key}: expected a non-negative integer, got '{}'", e.value)
                };
                self.error(e.line, msg);
                None
            }
        }
    }

    fn boolean(&mut self, section: &str, key: &str) -> Option<bool> {
        let e = self.take(section, key)?;
        match e.value.as_str() {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            other => {
                self.error(e.line, format!("{section}.{key}: expected true or false, got '{other}'"));
                None
            }
        }
    }

    fn list(&mut self, section: &str, key: &str) -> Option<(usize, Vec<f64>)> {
        let e = self.take(section, key)?;
        match parse_list(&e.value) {
            Some(v) => Some((e.line, v)),
            None => {
                self.error(e.line, format!("{section}.{key}: expected comma separated numbers, got '{}'", e.value));
                None
            }
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let out: Option<Vec<f64>> = s.split(',').map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect();
    out.filter(|v| !v.is_empty())
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Parse and validate a config. `default_kind` fills a missing
/// `experiment.kind`; a conflicting one is an error.
pub fn parse_config_for(text: &str, default_kind: Option<Kind>) -> Result<ExperimentConfig> {
    let mut p = Parser::default();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let s = stripped.trim();
        if s.is_empty() {
            continue;
        }
        if s.starts_with('[') {
            if !s.ends_with(']') {
                p.error(line, format!("malformed section header '{s}'"));
                continue;
            }
            let name = s[1..s.len() - 1].trim().to_string();
            if SCHEMA.iter().any(|(sec, _)| *sec == name) {
                section = Some(name);
            } else {
                p.error(line, format!("unknown section [{name}]"));
                section = None;
            }
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            p.error(line, format!("expected 'key = value', got '{s}'"));
            continue;
        };
        let key = k.trim().to_string();
        let value = unquote(v).to_string();
        let Some(sec) = section.clone() else {
            p.error(line, format!("key '{key}' outside of a known section"));
            continue;
        };
        let known = SCHEMA.iter().find(|(name, _)| *name == sec).is_some_and(|(_, keys)| keys.contains(&key.as_str()));
        if !known {
            p.error(line, format!("unknown key '{key}' in [{sec}]"));
            continue;
        }
        if value.is_empty() {
            p.error(line, format!("{sec}.{key} has an empty value"));
            continue;
        }
        if let Some(prev) = p.entries.get(&(sec.clone(), key.clone())) {
            let first = prev.line;
            p.error(line, format!("duplicate key {sec}.{key} (first set on line {first})"));
            continue;
        }
        p.entries.insert((sec, key), Entry { line, value });
    }

    // [experiment]
    let kind = match p.string("experiment", "kind") {
        Some((line, v)) => match Kind::parse(&v) {
            Some(k) => {
                if let Some(d) = default_kind {
                    if d != k {
                        p.error(line, format!("experiment.kind = {k} conflicts with the requested experiment {d}"));
                    }
                }
                Some(k)
            }
            None => {
                p.error(line, format!("unknown experiment kind '{v}'"));
                None
            }
        },
        None => {
            if default_kind.is_none() {
                p.errors.push("missing required key experiment.kind".into());
            }
            default_kind
        }
    };
    let kind = kind.unwrap_or(Kind::Scan);
    let name = p.string("experiment", "name").map(|(_, v)| v).unwrap_or_else(|| kind.name().to_string());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        p.errors.push(format!("experiment.name '{name}' must be non-empty ASCII letters, digits, '_' or '-'"));
    }
    let seed = p.int("experiment", "seed", |_| true, "any").unwrap_or(0);

    // [metric]
    let n = p.int("metric", "n", |v| v == 2 || v == 3, "2 or 3").unwrap_or(2) as usize;
    let mtype = match p.string("metric", "type") {
        Some((line, v)) => match v.as_str() {
            "euclidean" => MetricType::Euclidean,
            "space_form" => MetricType::SpaceForm,
            "polynomial" => MetricType::Polynomial,
            other => {
                p.error(line, format!("unknown metric type '{other}'"));
                MetricType::Euclidean
            }
        },
        None => MetricType::Euclidean,
    };
    let kappa = p.float("metric", "kappa", |_| true, "finite").unwrap_or(0.0);
    let coeffs = match p.list("metric", "coeffs") {
        Some((line, v)) => {
            if v.len() != n.pow(4) {
                p.error(line, format!("metric.coeffs needs {} values for n = {n}, got {}", n.pow(4), v.len()));
            }
            v
        }
        None => {
            if mtype == MetricType::Polynomial {
                p.errors.push("metric.type = polynomial requires metric.coeffs".into());
            }
            vec![]
        }
    };
    let rescale = p.float("metric", "rescale", |v| v > 0.0 && v <= 1.0, "0 < t <= 1").unwrap_or(1.0);
    let curvature_bound = p.float("metric", "curvature_bound", |v| v >= 0.0, ">= 0");
    let working_radius = p.float("metric", "working_radius", |v| v > 0.0, "> 0");

    // [grid]
    let radius = p.float("grid", "radius", |v| v > 0.0, "> 0").unwrap_or(1.0);
    let n_r = p.int("grid", "n_r", |v| v >= 16, ">= 16").unwrap_or(crate::ballgrid::DEFAULT_N_R as u64) as usize;
    let n_ang = p
        .int("grid", "n_ang", |v| v >= 16 && v % 2 == 0, "even, >= 16")
        .unwrap_or(crate::ballgrid::default_n_ang(n) as u64) as usize;

    // [pair]
    let family = match p.string("pair", "family") {
        Some((line, v)) => match v.as_str() {
            "plane" => FamilyKind::Plane,
            "sector" => FamilyKind::Sector,
            "cap" => FamilyKind::Cap,
            "inhomogeneous" => FamilyKind::Inhomogeneous,
            "zero" => FamilyKind::Zero,
            other => {
                p.error(line, format!("unknown pair family '{other}'"));
                FamilyKind::Plane
            }
        },
        None => FamilyKind::Plane,
    };
    let mut directions = Vec::new();
    if let Some((line, v)) = p.list("pair", "direction") {
        directions.push((line, v));
    }
    if let Some(e) = p.take("pair", "directions") {
        for part in e.value.split(';').filter(|s| !s.trim().is_empty()) {
            match parse_list(part) {
                Some(v) => directions.push((e.line, v)),
                None => p.error(e.line, format!("pair.directions: malformed vector '{}'", part.trim())),
            }
        }
    }
    let mut dirs = Vec::new();
    for (line, v) in directions {
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.len() != n {
            p.error(line, format!("direction has {} components, metric has n = {n}", v.len()));
        } else if !(len > 0.0) {
            p.error(line, "direction must be nonzero");
        } else {
            let unit = (len - 1.0).abs() <= 1e-12;
            dirs.push(if unit { v } else { v.iter().map(|x| x / len).collect() });
        }
    }
    if dirs.is_empty() {
        dirs = default_directions(n, kind);
    }
    let theta = match family {
        FamilyKind::Sector => p.float("pair", "theta", |v| v > 0.0 && v < 2.0 * PI, "0 < theta < 2 pi"),
        _ => p.float("pair", "theta", |v| v > 0.0 && v < PI, "0 < theta < pi"),
    }
    .unwrap_or(PI / 2.0);
    let a = match p.list("pair", "a") {
        Some((line, v)) => {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                p.error(line, "pair.a values out of range (0 <= a <= 1)");
            }
            v
        }
        None => vec![1.0],
    };
    let scale_plus = p.float("pair", "scale_plus", |v| v > 0.0, "> 0").unwrap_or(1.0);
    if family == FamilyKind::Sector && n != 2 {
        p.errors.push("pair.family = sector needs metric.n = 2".into());
    }
    if family == FamilyKind::Cap && n != 3 {
        p.errors.push("pair.family = cap needs metric.n = 3".into());
    }

    // [scan]
    let r_min = p.float("scan", "r_min", |v| v > 0.0, "> 0");
    let r_max = p.float("scan", "r_max", |v| v > 0.0, "> 0");
    let count = p.int("scan", "count", |v| (2..=100_000).contains(&v), "2..=100000").unwrap_or(10) as usize;
    let c0 = p.float("scan", "c0", |v| v >= 0.0, ">= 0").unwrap_or(0.0);
    let k_max_entry = p.entries.get(&("scan".to_string(), "k_max".to_string())).map(|e| e.line);
    let k_max = p.int("scan", "k_max", |v| v <= 32, "<= 32").map(|v| v as usize);
    let delta = p.float("scan", "delta", |v| v > 0.0, "> 0");
    let t = p.float("scan", "t", |v| v >= 0.0, ">= 0").unwrap_or(0.0);
    let refine = p.boolean("scan", "refine").unwrap_or(false);
    let drift_tol = p.float("scan", "drift_tol", |v| v > 0.0, "> 0").unwrap_or(0.15);
    if let (Some(lo), Some(hi)) = (r_min, r_max) {
        if lo >= hi {
            p.errors.push(format!("scan.r_min = {lo} must be below scan.r_max = {hi}"));
        }
    }
    for (key, v) in [("r_max", r_max), ("r_min", r_min), ("delta", delta)] {
        if let Some(v) = v {
            if v > radius * (1.0 + 1e-12) {
                p.errors.push(format!("scan.{key} = {v} exceeds grid.radius = {radius}"));
            }
        }
    }
    if let Some(k) = k_max {
        let h = radius / n_r as f64;
        if radius * 4f64.powi(-(k as i32)) < DYADIC_MIN_SHELLS * h * (1.0 - 1e-12) {
            let msg = format!(
                "insufficient resolution: scan.k_max = {k} needs n_r >= {} at grid.n_r = {n_r}",
                (DYADIC_MIN_SHELLS * 4f64.powi(k as i32)).ceil()
            );
            match k_max_entry {
                Some(line) => p.error(line, msg),
                None => p.errors.push(msg),
            }
        }
    }

    // [constants]
    let c1 = p.float("constants", "c1", |v| v >= 0.0, ">= 0").unwrap_or(DEFAULT_C1);
    let c2 = p.float("constants", "c2", |v| v >= 0.0, ">= 0").unwrap_or(DEFAULT_C2);
    let c3 = p.float("constants", "c3", |v| v >= 0.0, ">= 0").unwrap_or(DEFAULT_C3);

    // [fh]
    let fh_theta = p.float("fh", "theta", |v| v > 0.0 && v < 2.0 * PI, "0 < theta < 2 pi");
    if let Some(th) = fh_theta {
        if n == 3 && th >= PI {
            p.errors.push(format!("fh.theta = {th} must lie below pi for n = 3"));
        }
    }

    // [hebey]
    let hebey_radius = p.float("hebey", "radius", |v| v > 0.0, "> 0");
    let hebey_k = p.float("hebey", "k", |v| v > 0.0, "> 0").unwrap_or(0.5);
    let n_radial = p.int("hebey", "n_radial", |v| (2..=10_000).contains(&v), "2..=10000").unwrap_or(40) as usize;
    let n_angular = p.int("hebey", "n_angular", |v| (4..=10_000).contains(&v), "4..=10000").unwrap_or(64) as usize;
    let step_fraction = p.float("hebey", "step_fraction", |v| v > 0.0 && v < 0.1, "0 < s < 0.1").unwrap_or(1e-4);

    // [problem]
    let boundary = match p.list("problem", "boundary") {
        Some((line, v)) => {
            if v.len() != n {
                p.error(line, format!("problem.boundary needs {n} coefficients, got {}", v.len()));
            }
            v
        }
        None => {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        }
    };
    let offset = p.float("problem", "offset", |_| true, "finite").unwrap_or(0.0);
    let quadratic = p.float("problem", "quadratic", |_| true, "finite").unwrap_or(0.0);
    let f1 = p.float("problem", "f1", |_| true, "finite").unwrap_or(0.0);
    let f2 = p.float("problem", "f2", |_| true, "finite").unwrap_or(0.0);
    let bound = p.float("problem", "bound", |v| v >= 0.0, ">= 0");
    let defaults = SolverOptions::default();
    let solver = SolverOptions {
        omega: p.float("problem", "omega", |v| v > 0.0 && v < 2.0, "0 < omega < 2").unwrap_or(defaults.omega),
        tol: p.float("problem", "tol", |v| v > 0.0 && v < 1.0, "0 < tol < 1").unwrap_or(defaults.tol),
        max_sweeps: p.int("problem", "max_sweeps", |v| v >= 1, ">= 1").map_or(defaults.max_sweeps, |v| v as usize),
        max_outer: p.int("problem", "max_outer", |v| v >= 1, ">= 1").map_or(defaults.max_outer, |v| v as usize),
    };
    let lipschitz_radius = p.float("problem", "lipschitz_radius", |v| v > 0.0 && v < radius, "0 < K < grid.radius");
    let flux_kind = p.string("problem", "flux");
    let fp = p.float("problem", "flux_p", |_| true, "finite");
    let fq = p.float("problem", "flux_q", |_| true, "finite");
    let fc = p.float("problem", "flux_c", |_| true, "finite");
    let flux = match flux_kind {
        None => FluxLaw::Difference,
        Some((line, v)) => match v.as_str() {
            "difference" => FluxLaw::Difference,
            "product_minus_one" => FluxLaw::ProductMinusOne,
            "affine" => FluxLaw::Affine { p: fp.unwrap_or(1.0), q: fq.unwrap_or(-1.0), c: fc.unwrap_or(0.0) },
            other => {
                p.error(line, format!("unknown flux law '{other}'"));
                FluxLaw::Difference
            }
        },
    };
    if let Some(b) = bound {
        if f1.abs() > b || f2.abs() > b {
            p.errors.push(format!("problem.f1, problem.f2 exceed problem.bound = {b}"));
        }
    }

    // [output]
    let dir = p.string("output", "dir").map(|(_, v)| v);
    let svg = p.boolean("output", "svg").unwrap_or(true);
    let log_radius = p.boolean("output", "log_radius").unwrap_or(false);

    if !p.errors.is_empty() {
        return Err(Error::Config(p.errors.join("; ")));
    }
    Ok(ExperimentConfig {
        kind,
        name,
        seed,
        metric: MetricSection { kind: mtype, n, kappa, coeffs, rescale, curvature_bound, working_radius },
        grid: GridSection { radius, n_r, n_ang },
        pair: PairSection { family, directions: dirs, theta, a, scale_plus },
        scan: ScanSection { r_min, r_max, count, c0, k_max, delta, t, refine, drift_tol },
        constants: ConstantsSection { c1, c2, c3 },
        fh: FhSection { theta: fh_theta },
        hebey: HebeySection { radius: hebey_radius, k: hebey_k, n_radial, n_angular, step_fraction },
        problem: ProblemSection { boundary, offset, quadratic, f1, f2, bound, solver, lipschitz_radius, flux },
        output: OutputSection { dir, svg, log_radius },
    })
}

/// [`parse_config_for`] with `experiment.kind` required.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// `e1` for single-pair experiments; the coordinate axes `e1`, `e_n` and
/// the diagonal of `e1, e2` for calibration families.
fn default_directions(n: usize, kind: Kind) -> Vec<Vec<f64>> {
    let axis = |i: usize| {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        e
    };
    if kind != Kind::Calibrate {
        return vec![axis(0)];
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut diag = vec![0.0; n];
    diag[0] = s;
    diag[1] = s;
    vec![axis(0), axis(n - 1), diag]
}

impl ExperimentConfig {
    /// Canonical `key = value` rendering; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut line = |t: String| {
            s.push_str(&t);
            s.push('\n');
        };
        line("[experiment]".into());
        line(format!("kind = {}", self.kind));
        line(format!("name = {}", self.name));
        line(format!("seed = {}", self.seed));
        line("\n[metric]".into());
        let m = &self.metric;
        line(format!(
            "type = {}",
            match m.kind {
                MetricType::Euclidean => "euclidean",
                MetricType::SpaceForm => "space_form",
                MetricType::Polynomial => "polynomial",
            }
        ));
        line(format!("n = {}", m.n));
        line(format!("kappa = {:?}", m.kappa));
        if !m.coeffs.is_empty() {
            line(format!("coeffs = {}", list(&m.coeffs)));
        }
        line(format!("rescale = {:?}", m.rescale));
        if let Some(v) = m.curvature_bound {
            line(format!("curvature_bound = {v:?}"));
        }
        if let Some(v) = m.working_radius {
            line(format!("working_radius = {v:?}"));
        }
        line("\n[grid]".into());
        line(format!("radius = {:?}", self.grid.radius));
        line(format!("n_r = {}", self.grid.n_r));
        line(format!("n_ang = {}", self.grid.n_ang));
        line("\n[pair]".into());
        let pr = &self.pair;
        line(format!(
            "family = {}",
            match pr.family {
                FamilyKind::Plane => "plane",
                FamilyKind::Sector => "sector",
                FamilyKind::Cap => "cap",
                FamilyKind::Inhomogeneous => "inhomogeneous",
                FamilyKind::Zero => "zero",
            }
        ));
        line(format!("directions = {}", pr.directions.iter().map(|d| list(d)).collect::<Vec<_>>().join("; ")));
        line(format!("theta = {:?}", pr.theta));
        line(format!("a = {}", list(&pr.a)));
        line(format!("scale_plus = {:?}", pr.scale_plus));
        line("\n[scan]".into());
        let sc = &self.scan;
        if let Some(v) = sc.r_min {
            line(format!("r_min = {v:?}"));
        }
        if let Some(v) = sc.r_max {
            line(format!("r_max = {v:?}"));
        }
        line(format!("count = {}", sc.count));
        line(format!("c0 = {:?}", sc.c0));
        if let Some(v) = sc.k_max {
            line(format!("k_max = {v}"));
        }
        if let Some(v) = sc.delta {
            line(format!("delta = {v:?}"));
        }
        line(format!("t = {:?}", sc.t));
        line(format!("refine = {}", sc.refine));
        line(format!("drift_tol = {:?}", sc.drift_tol));
        line("\n[constants]".into());
        line(format!("c1 = {:?}", self.constants.c1));
        line(format!("c2 = {:?}", self.constants.c2));
        line(format!("c3 = {:?}", self.constants.c3));
        if let Some(v) = self.fh.theta {
            line("\n[fh]".into());
            line(format!("theta = {v:?}"));
        }
        line("\n[hebey]".into());
        let hb = &self.hebey;
        if let Some(v) = hb.radius {
            line(format!("radius = {v:?}"));
        }
        line(format!("k = {:?}", hb.k));
        line(format!("n_radial = {}", hb.n_radial));
        line(format!("n_angular = {}", hb.n_angular));
        line(format!("step_fraction = {:?}", hb.step_fraction));
        line("\n[problem]".into());
        let pb = &self.problem;
        line(format!("boundary = {}", list(&pb.boundary)));
        line(format!("offset = {:?}", pb.offset));
        line(format!("quadratic = {:?}", pb.quadratic));
        line(format!("f1 = {:?}", pb.f1));
        line(format!("f2 = {:?}", pb.f2));
        if let Some(v) = pb.bound {
            line(format!("bound = {v:?}"));
        }
        line(format!("omega = {:?}", pb.solver.omega));
        line(format!("tol = {:?}", pb.solver.tol));
        line(format!("max_sweeps = {}", pb.solver.max_sweeps));
        line(format!("max_outer = {}", pb.solver.max_outer));
        if let Some(v) = pb.lipschitz_radius {
            line(format!("lipschitz_radius = {v:?}"));
        }
        match pb.flux {
            FluxLaw::Difference => line("flux = difference".into()),
            FluxLaw::ProductMinusOne => line("flux = product_minus_one".into()),
            FluxLaw::Affine { p, q, c } => {
                line("flux = affine".into());
                line(format!("flux_p = {p:?}"));
                line(format!("flux_q = {q:?}"));
                line(format!("flux_c = {c:?}"));
            }
        }
        line("\n[output]".into());
        if let Some(d) = &self.output.dir {
            line(format!("dir = {d}"));
        }
        line(format!("svg = {}", self.output.svg));
        line(format!("log_radius = {}", self.output.log_radius));
        s
    }

    /// Grid counts multiplied by `k`.
    pub fn with_resolution_scale(mut self, k: usize) -> Self {
        let k = k.max(1);
        self.grid.n_r *= k;
        self.grid.n_ang *= k;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config("[experiment]\nkind = scan\n").unwrap();
        assert_eq!(c.kind, Kind::Scan);
        assert_eq!(c.name, "scan");
        assert_eq!(c.metric.n, 2);
        assert_eq!(c.grid.n_r, crate::ballgrid::DEFAULT_N_R);
        assert_eq!(c.pair.directions, vec![vec![1.0, 0.0]]);
        assert_eq!(c.scan.count, 10);
    }

    #[test]
    fn insufficient_resolution_for_dyadic_levels() {
        let m = err("[experiment]\nkind = dyadic\n[grid]\nn_r = 64\n[scan]\nk_max = 3\n");
        assert!(m.contains("insufficient resolution"), "{m}");
    }

    #[test]
    fn negative_radius_reports_line() {
        let m = err("[experiment]\nkind = scan\n\n[grid]\nradius = -1\n");
        assert!(m.contains("line 5") && m.contains("grid.radius"), "{m}");
        let m = err("[experiment]\nkind = scan\n[grid]\nn_r = -3\n");
        assert!(m.contains("line 4") && m.contains("out of range"), "{m}");
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let m = err("[experiment]\nkind = scan\n[grid]\nsize = 3\n");
        assert!(m.contains("line 4") && m.contains("unknown key 'size'"), "{m}");
        let m = err("[experiment]\nkind = scan\n[grid]\nn_r = 32\nn_r = 64\n");
        assert!(m.contains("duplicate") && m.contains("line 4"), "{m}");
        let m = err("[solver]\nomega = 1\n");
        assert!(m.contains("unknown section"), "{m}");
    }

    #[test]
    fn kind_must_match_subcommand() {
        assert!(parse_config_for("[experiment]\nkind = scan\n", Some(Kind::Fh)).is_err());
        assert_eq!(parse_config_for("", Some(Kind::Fh)).unwrap().kind, Kind::Fh);
        assert!(parse_config("").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "[experiment]\nkind = solve\nname = s1\nseed = 4\n[metric]\ntype = space_form\nkappa = -1\n\
                    [problem]\nf1 = 0.25\nflux = affine\nflux_p = 2\n[pair]\nfamily = inhomogeneous\na = 0.25, 1\n";
        let c = parse_config(text).unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn resolution_scale_multiplies_counts() {
        let c = parse_config("[experiment]\nkind = scan\n[grid]\nn_r = 32\nn_ang = 16\n").unwrap().with_resolution_scale(3);
        assert_eq!((c.grid.n_r, c.grid.n_ang), (96, 48));
    }
}
