//! Dispatch of a validated config to the numerical modules, with trace,
//! chart and report files written to an output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, FamilyKind, Kind, MetricType};
use super::output::{emit_csv, emit_svg, phi_chart, Chart, Series};
use crate::ballgrid::BallGrid;
use crate::error::{Error, Result};
use crate::fbsolver::{flux_balance_check, lipschitz_ratio, two_phase_solve, TwoPhaseProblem};
use crate::fields::{energy_inequality_check, BumpFamily};
use crate::geometry::{hebey_verify_with, HebeyOptions, ModelMetric};
use crate::monotone::{
    almost_mono_bound, calibrate_profiles, diff_inequality_check, dyadic_trace, linear_radii, max_dyadic_level,
    PairProfiles, TraceRows, MIN_RADIUS_SPACINGS,
};
use crate::pairs::{
    fh_scan_openings, friedland_hayman_check, make_cap_pair, make_inhomogeneous_pair, make_plane_pair, make_sector_pair,
    Pair, PairClass,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named pass/fail outcome with the operation and tolerance behind it.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub operation: String,
    pub tolerance: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub experiment: String,
    pub kind: Kind,
    pub config: ExperimentConfig,
    pub verdicts: Vec<Verdict>,
    pub fitted: BTreeMap<String, f64>,
    pub details: Value,
    pub files: Vec<String>,
    pub runtime_ms: u128,
    pub version: String,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// 0 when every verdict passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass() {
            0
        } else {
            1
        }
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    files: Vec<String>,
    verdicts: Vec<Verdict>,
    fitted: BTreeMap<String, f64>,
    details: serde_json::Map<String, Value>,
}

impl<'a> Ctx<'a> {
    fn verdict(&mut self, name: &str, pass: bool, operation: &str, tolerance: impl Into<String>) {
        self.verdicts.push(Verdict { name: name.into(), pass, operation: operation.into(), tolerance: tolerance.into() });
    }

    fn detail(&mut self, key: &str, v: impl Serialize) {
        self.details.insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn path(&mut self, suffix: &str) -> PathBuf {
        let file = format!("{}{suffix}", self.cfg.name);
        self.files.push(file.clone());
        self.out.join(file)
    }

    fn write_trace(&mut self, suffix: &str, trace: &dyn TraceRows) -> Result<()> {
        let p = self.path(&format!("{suffix}.csv"));
        emit_csv(trace, BufWriter::new(File::create(p)?))
    }

    fn write_chart(&mut self, suffix: &str, chart: &Chart) -> Result<()> {
        if !self.cfg.output.svg {
            return Ok(());
        }
        let p = self.path(&format!("{suffix}.svg"));
        emit_svg(chart, BufWriter::new(File::create(p)?))
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<ModelMetric<f64>> {
    let m = &cfg.metric;
    let mut model = match m.kind {
        MetricType::Euclidean => ModelMetric::euclidean(m.n)?,
        MetricType::SpaceForm => ModelMetric::space_form(m.n, m.kappa)?,
        MetricType::Polynomial => ModelMetric::polynomial(m.n, m.coeffs.clone())?,
    };
    if let Some(lambda) = m.curvature_bound {
        model = model.with_curvature_bound(lambda);
    }
    if m.rescale != 1.0 {
        model = model.rescale(m.rescale)?;
    }
    if let Some(r) = m.working_radius {
        model = model.with_working_radius(r)?;
    }
    Ok(model)
}

pub fn build_grid(cfg: &ExperimentConfig, refine: usize) -> Result<Arc<BallGrid<f64>>> {
    let g = &cfg.grid;
    Ok(Arc::new(BallGrid::build(cfg.metric.n, g.radius, g.n_r * refine, g.n_ang * refine)?))
}

/// Every member of the configured pair family.
pub fn build_pairs(cfg: &ExperimentConfig, grid: &Arc<BallGrid<f64>>) -> Result<Vec<Pair<f64>>> {
    let p = &cfg.pair;
    let pairs = match p.family {
        FamilyKind::Plane => p.directions.iter().map(|d| make_plane_pair(grid.clone(), d)).collect::<Result<Vec<_>>>()?,
        FamilyKind::Sector => vec![make_sector_pair(grid.clone(), p.theta)?],
        FamilyKind::Cap => vec![make_cap_pair(grid.clone(), p.theta)?],
        FamilyKind::Inhomogeneous => p.a.iter().map(|a| make_inhomogeneous_pair(grid.clone(), *a)).collect::<Result<Vec<_>>>()?,
        FamilyKind::Zero => vec![Pair::zero(grid.clone())],
    };
    Ok(pairs.into_iter().map(|q| if p.scale_plus != 1.0 { q.scale_plus(p.scale_plus) } else { q }).collect())
}

fn scan_radii(cfg: &ExperimentConfig, grid: &BallGrid<f64>) -> Vec<f64> {
    let min = MIN_RADIUS_SPACINGS * grid.spacing();
    let lo = cfg.scan.r_min.unwrap_or((0.1 * grid.radius()).max(min));
    let hi = cfg.scan.r_max.unwrap_or(grid.radius());
    linear_radii(lo, hi, cfg.scan.count)
}

/// Run one experiment, writing its files into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let mut ctx =
        Ctx { cfg, out: out.to_path_buf(), files: vec![], verdicts: vec![], fitted: BTreeMap::new(), details: serde_json::Map::new() };
    let outcome = match cfg.kind {
        Kind::Scan => run_scan(&mut ctx),
        Kind::Bound => run_bound(&mut ctx),
        Kind::Dyadic => run_dyadic(&mut ctx),
        Kind::Fh => run_fh(&mut ctx),
        Kind::Solve => run_solve(&mut ctx),
        Kind::Hebey => run_hebey(&mut ctx),
        Kind::Calibrate => run_calibrate(&mut ctx),
    };
    let report_path = ctx.path("_report.json");
    let mut report = Report {
        experiment: cfg.name.clone(),
        kind: cfg.kind,
        config: cfg.clone(),
        verdicts: ctx.verdicts,
        fitted: ctx.fitted,
        details: Value::Object(ctx.details),
        files: ctx.files,
        runtime_ms: 0,
        version: VERSION.into(),
    };
    if let Err(e) = &outcome {
        report.details["error"] = json!(e.to_string());
    }
    report.runtime_ms = start.elapsed().as_millis();
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(report_path, text + "\n")?;
    outcome.map(|_| report)
}

fn run_scan(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg, 1)?;
    let pair = build_pairs(cfg, &grid)?.remove(0);
    let radii = scan_radii(cfg, &grid);
    let profiles = PairProfiles::new(&model, &pair)?;
    let trace = profiles.trace(&radii, cfg.scan.c0)?;
    if pair.class == PairClass::Subharmonic {
        ctx.verdict("monotone", trace.pass, "phi_scan", format!("relative {:e}", trace.tol_mono));
    }
    let c = &cfg.constants;
    let diff = diff_inequality_check(&trace, c.c1, c.c2, c.c3, cfg.scan.t);
    if diff.threshold_met {
        ctx.verdict("diff_inequality", diff.pass, "diff_inequality_check", format!("C2 = {}, C3 = {}, t = {}", c.c2, c.c3, cfg.scan.t));
    }
    ctx.detail("log_derivative", &trace.log_derivative);
    ctx.detail("diff_inequality", &diff);
    ctx.detail("tol_mono", trace.tol_mono);
    ctx.write_trace("", &trace)?;
    ctx.write_chart("_phi", &phi_chart(&trace, &format!("{}: phi and phi_F", cfg.name), cfg.output.log_radius))?;
    Ok(())
}

fn run_bound(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let fit = |scale: usize| -> Result<Vec<f64>> {
        let grid = build_grid(cfg, scale)?;
        let delta = cfg.scan.delta.unwrap_or(grid.radius());
        build_pairs(cfg, &grid)?
            .iter()
            .map(|p| almost_mono_bound(&model, p, delta).map(|r| r.c_fitted))
            .collect()
    };
    let grid = build_grid(cfg, 1)?;
    let pairs = build_pairs(cfg, &grid)?;
    let delta = cfg.scan.delta.unwrap_or(grid.radius());
    let mut reports = Vec::new();
    for p in &pairs {
        reports.push(almost_mono_bound(&model, p, delta)?);
    }
    let c: Vec<f64> = reports.iter().map(|r| r.c_fitted).collect();
    for (i, v) in c.iter().enumerate() {
        ctx.fitted.insert(format!("c_fitted_{i}"), *v);
    }
    ctx.verdict("c_fitted_finite", c.iter().all(|v| v.is_finite()), "almost_mono_bound", "finite");
    if c.len() > 1 {
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        ctx.fitted.insert("family_spread".into(), spread);
        ctx.verdict("family_spread", spread < 10.0, "almost_mono_bound", "max/min < 10");
    }
    if cfg.scan.refine {
        let fine = fit(2)?;
        let drift = c.iter().zip(&fine).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        ctx.fitted.insert("refinement_drift".into(), drift);
        ctx.verdict("refinement_drift", drift < cfg.scan.drift_tol, "almost_mono_bound", format!("< {}", cfg.scan.drift_tol));
    }
    let bumps = BumpFamily::seeded(&grid, cfg.seed);
    let mut energy = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.class != PairClass::DeltaGeMinusOne {
            continue;
        }
        for (side, u) in [("plus", &p.u_plus), ("minus", &p.u_minus)] {
            match energy_inequality_check(&model, u, 1.0, &bumps) {
                Ok(rep) => {
                    ctx.verdict(&format!("energy_inequality_{i}_{side}"), rep.pass, "energy_inequality_check", format!("relative {:e}", rep.tol));
                    energy.push(json!({"member": i, "side": side, "report": rep}));
                }
                Err(Error::Precondition(msg)) => energy.push(json!({"member": i, "side": side, "skipped": msg})),
                Err(e) => return Err(e),
            }
        }
    }
    ctx.detail("almost_mono", &reports);
    ctx.detail("energy_inequality", energy);
    let radii = scan_radii(cfg, &grid);
    let trace = PairProfiles::new(&model, &pairs[0])?.trace(&radii, 0.0)?;
    ctx.write_trace("", &trace)?;
    ctx.write_chart("_phi", &phi_chart(&trace, &format!("{}: phi and phi_F", cfg.name), cfg.output.log_radius))?;
    Ok(())
}

fn run_dyadic(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg, 1)?;
    let pair = build_pairs(cfg, &grid)?.remove(0);
    let k_max = cfg.scan.k_max.unwrap_or_else(|| max_dyadic_level(&grid));
    let c = &cfg.constants;
    let d = dyadic_trace(&model, &pair, k_max, c.c1, c.c2)?;
    ctx.verdict("product_inequality", d.product_verdicts.iter().all(|v| *v), "dyadic_trace", "ratio <= (1 + delta_k)(1 + tol_mono)");
    ctx.verdict("dichotomy", d.dichotomy_pass, "dyadic_trace", "fitted epsilon > 0");
    if let Some(e) = d.fitted_epsilon {
        ctx.fitted.insert("epsilon".into(), e);
    }
    ctx.detail("dyadic", &d);
    ctx.write_trace("", &d)?;
    let k: Vec<f64> = d.k.iter().map(|k| *k as f64).collect();
    let chart = Chart {
        title: format!("{}: b_k", cfg.name),
        x_label: "k".into(),
        y_label: "4^(4k) A_k".into(),
        log_x: false,
        series: vec![
            Series { label: "b_k plus".into(), points: k.iter().cloned().zip(d.bk_plus.iter().cloned()).collect() },
            Series { label: "b_k minus".into(), points: k.iter().cloned().zip(d.bk_minus.iter().cloned()).collect() },
        ],
    };
    ctx.write_chart("_bk", &chart)?;
    Ok(())
}

fn run_fh(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let n = cfg.metric.n;
    let openings: Vec<f64> = match cfg.fh.theta {
        Some(t) => vec![t],
        None => fh_scan_openings(n),
    };
    let mut rows = Vec::new();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["theta", "alpha_plus", "alpha_minus", "sum", "verdict"])?;
    for th in &openings {
        let rep = friedland_hayman_check(n, *th)?;
        w.write_record(&[
            format!("{th:?}"),
            format!("{:?}", rep.alpha_plus),
            format!("{:?}", rep.alpha_minus),
            format!("{:?}", rep.sum),
            if rep.pass { "pass" } else { "fail" }.to_string(),
        ])?;
        rows.push((*th, rep));
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    let path = ctx.path("_fh.csv");
    fs::write(path, bytes)?;
    let (arg, min) = rows.iter().fold((0.0, f64::INFINITY), |acc, (t, r)| if r.sum < acc.1 { (*t, r.sum) } else { acc });
    ctx.fitted.insert("min_sum".into(), min);
    ctx.fitted.insert("argmin_theta".into(), arg);
    ctx.verdict("friedland_hayman", rows.iter().all(|(_, r)| r.pass), "friedland_hayman_check", "sum >= 2 - 1e-9");
    let reports: Vec<Value> = rows.iter().map(|(t, r)| json!({"theta": t, "report": r})).collect();
    ctx.detail("openings", reports);
    let chart = Chart {
        title: format!("{}: alpha+ + alpha-", cfg.name),
        x_label: "theta".into(),
        y_label: "sum".into(),
        log_x: false,
        series: vec![Series { label: "sum".into(), points: rows.iter().map(|(t, r)| (*t, r.sum)).collect() }],
    };
    ctx.write_chart("_fh", &chart)?;
    Ok(())
}

fn run_solve(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let pb = &cfg.problem;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg, 1)?;
    let b = pb.boundary.clone();
    let (offset, q) = (pb.offset, pb.quadratic);
    let h = move |x: &[f64]| {
        let lin: f64 = x.iter().zip(&b).map(|(a, c)| a * c).sum();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        lin + offset + q * r2
    };
    let mut problem = TwoPhaseProblem::constant(model.clone(), grid.clone(), h, pb.f1, pb.f2)?
        .with_flux(pb.flux)
        .with_options(pb.solver);
    if let Some(bound) = pb.bound {
        problem = problem.with_bound(bound);
    }
    let sol = two_phase_solve(&problem)?;
    let path = ctx.path("_u.csv");
    sol.u.write_csv(BufWriter::new(File::create(path)?))?;
    ctx.detail("iterations", sol.iterations);
    ctx.detail("sweeps", sol.sweeps);
    ctx.detail("tie_nodes", sol.tie_nodes);
    ctx.detail("residuals", &sol.residuals);
    ctx.detail("phase_residual", sol.phase_residual);
    ctx.detail("consistency_residual", sol.consistency_residual);
    ctx.detail("residual_tol", sol.residual_tol);
    ctx.verdict("converged", sol.converged, "two_phase_solve", "stationary sign pattern");
    ctx.verdict("phase_residual", sol.residual_ok(), "two_phase_solve", format!("<= 10 h^2 scale = {:e}", sol.residual_tol));
    let flux = flux_balance_check(&sol, pb.flux)?;
    let n = grid.dim();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["node".to_string()];
    header.extend(["x1", "x2", "x3"].iter().take(n).map(|s| s.to_string()));
    header.extend(["grad_plus", "grad_minus", "G"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for s in &flux.samples {
        let mut rec = vec![s.node.to_string()];
        rec.extend(s.point.iter().map(|v| format!("{v:?}")));
        rec.extend([s.grad_plus, s.grad_minus, s.value].iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    let path = ctx.path("_interface.csv");
    fs::write(path, bytes)?;
    ctx.detail("flux", json!({"law": flux.law, "min": flux.min, "max": flux.max, "mean": flux.mean, "nodes": flux.samples.len()}));
    let k = pb.lipschitz_radius.unwrap_or(0.75 * grid.radius());
    let lip = lipschitz_ratio(&sol, k)?;
    if !lip.vacuous {
        ctx.fitted.insert("lipschitz_ratio".into(), lip.sup_ratio);
    }
    ctx.detail("lipschitz", &lip);
    if sol.interface_count() > 0 {
        let pair = sol.pair()?;
        let am = almost_mono_bound(&model, &pair, grid.radius())?;
        ctx.fitted.insert("c_fitted".into(), am.c_fitted);
        ctx.verdict("c_fitted_finite", am.c_fitted.is_finite(), "almost_mono_bound", "finite");
        ctx.detail("almost_mono", &am);
        let radii = scan_radii(cfg, &grid);
        let trace = PairProfiles::new(&model, &pair)?.trace(&radii, 0.0)?;
        ctx.write_trace("", &trace)?;
        ctx.write_chart("_phi", &phi_chart(&trace, &format!("{}: phi and phi_F of the solution", cfg.name), cfg.output.log_radius))?;
    }
    if !sol.converged {
        return Err(Error::NonConvergence(format!(
            "sign pattern not stationary after {} iterations ({} sweeps)",
            sol.iterations, sol.sweeps
        )));
    }
    Ok(())
}

fn run_hebey(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let hb = &cfg.hebey;
    let radius = hb.radius.unwrap_or_else(|| model.hebey_radius());
    let opts = HebeyOptions { n_radial: hb.n_radial, n_angular: hb.n_angular, step_fraction: hb.step_fraction };
    let rep = hebey_verify_with(&model, radius, hb.k, opts)?;
    let fine = hebey_verify_with(&model, radius, hb.k, HebeyOptions { step_fraction: hb.step_fraction / 10.0, ..opts })?;
    let drift = if rep.fitted_k > 0.0 { ((fine.fitted_k - rep.fitted_k) / rep.fitted_k).abs() } else { 0.0 };
    ctx.fitted.insert("k".into(), rep.fitted_k);
    ctx.fitted.insert("k_deviation".into(), rep.k_deviation);
    ctx.fitted.insert("k_derivative".into(), rep.k_derivative);
    ctx.fitted.insert("step_drift".into(), drift);
    ctx.verdict("hebey", rep.pass, "hebey_verify", format!("K = {}", hb.k));
    ctx.verdict("step_refinement", drift <= 0.1, "hebey_verify", "fitted K within 10% when the step shrinks 10x");
    ctx.detail("radius", radius);
    ctx.detail("report", &rep);
    ctx.detail("refined", &fine);
    Ok(())
}

fn run_calibrate(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let lambda = model.curvature_bound();
    let calibrate = |scale: usize| -> Result<(crate::monotone::CalibrationReport, Vec<PairProfiles<f64>>, Vec<f64>)> {
        let grid = build_grid(cfg, scale)?;
        let pairs = build_pairs(cfg, &grid)?;
        let radii = scan_radii(cfg, &grid);
        let profiles: Vec<PairProfiles<f64>> = pairs.iter().map(|p| PairProfiles::new(&model, p)).collect::<Result<_>>()?;
        Ok((calibrate_profiles(lambda, &profiles, &radii)?, profiles, radii))
    };
    let (rep, profiles, radii) = calibrate(1)?;
    ctx.verdict("c0_found", rep.c0.is_some(), "calibrate_c0", "smallest grid value passing every member");
    if let Some(c0) = rep.c0 {
        ctx.fitted.insert("c0".into(), c0);
    }
    if cfg.scan.refine {
        let (fine, _, _) = calibrate(2)?;
        ctx.verdict("c0_stable", fine.c0 == rep.c0, "calibrate_c0", "same grid value at doubled resolution");
        ctx.detail("refined", &fine);
    }
    ctx.detail("calibration", &rep);
    let c0 = rep.c0.unwrap_or(0.0);
    let mut series = Vec::new();
    for (i, p) in profiles.iter().enumerate() {
        let trace = p.trace(&radii, c0)?;
        ctx.write_trace(&format!("_{i}"), &trace)?;
        series.push(Series { label: format!("member {i}"), points: trace.radii.iter().cloned().zip(trace.phi.iter().cloned()).collect() });
    }
    let chart = Chart {
        title: format!("{}: e^(c0 r^2) phi, c0 = {c0}", cfg.name),
        x_label: "r".into(),
        y_label: "phi".into(),
        log_x: cfg.output.log_radius,
        series,
    };
    ctx.write_chart("_phi", &chart)?;
    Ok(())
}
