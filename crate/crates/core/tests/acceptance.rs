//! Acceptance criteria 1 to 10. Prints one line per criterion and exits
//! nonzero when any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

use monolab::ballgrid::BallGrid;
use monolab::fbsolver::{lipschitz_ratio, two_phase_solve, TwoPhaseProblem};
use monolab::fields::{
    build_corrector, check_superharmonic_bound, default_tol, energy_inequality_check, gradient_energy, is_interior,
    laplace_beltrami, BumpFamily, ScalarField,
};
use monolab::geometry::{hebey_verify_with, HebeyOptions, ModelMetric};
use monolab::monotone::{
    almost_mono_bound, calibrate_c0, dyadic_trace, linear_radii, phi_scan, DEFAULT_C1, DEFAULT_C2,
};
use monolab::operator::PolarOperator;
use monolab::pairs::{
    fh_scan_openings, friedland_hayman_check, make_inhomogeneous_pair, make_plane_pair, make_sector_pair, Pair,
};

type Grid = Arc<BallGrid<f64>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn default_grid(n: usize, radius: f64, scale: usize) -> Grid {
    Arc::new(BallGrid::build_default(n, radius, scale).unwrap())
}

fn unit(n: usize, axis: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[axis] = 1.0;
    e
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sphere(n: usize) -> ModelMetric<f64> {
    ModelMetric::space_form(n, 1.0).unwrap()
}

fn hyperbolic(n: usize) -> ModelMetric<f64> {
    ModelMetric::space_form(n, -1.0).unwrap()
}

fn flat(n: usize) -> ModelMetric<f64> {
    ModelMetric::euclidean(n).unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst = Vec::new();
    let mut pass = true;
    for (n, target) in [(2, PI * PI / 4.0), (3, PI * PI)] {
        let t = Instant::now();
        let g = default_grid(n, 1.0, 1);
        let pair = make_plane_pair(g.clone(), &unit(n, 0)).unwrap();
        let trace = phi_scan(&flat(n), &pair, &linear_radii(0.1, 1.0, 19), 0.0).unwrap();
        let dev = trace.phi.iter().map(|p| rel(*p, target)).fold(0.0, f64::max);
        let secs = t.elapsed().as_secs_f64();
        pass &= dev <= 0.01 && secs < 5.0;
        worst.push(format!("n={n} max dev {dev:.2e} in {secs:.2}s"));
    }
    outcome(pass, worst.join(", "))
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let g = default_grid(2, 1.0, 1);
    let pair = make_sector_pair(g, PI / 2.0).unwrap();
    let trace = phi_scan(&flat(2), &pair, &linear_radii(0.4, 0.8, 9), 0.0).unwrap();
    let ratio = trace.phi[8] / trace.phi[0];
    let target = 2f64.powf(4.0 / 3.0);
    let secs = t.elapsed().as_secs_f64();
    let pass = rel(ratio, target) <= 0.03 && trace.pass && secs < 5.0;
    outcome(pass, format!("phi(0.8)/phi(0.4) = {ratio:.4} vs {target:.4}, scan verdict {}, {secs:.2}s", trace.pass))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let (mut min, mut arg) = (f64::INFINITY, 0.0);
    for th in fh_scan_openings::<f64>(2) {
        let s = friedland_hayman_check(2, th).unwrap().sum;
        if s < min {
            min = s;
            arg = th;
        }
    }
    let hemi = friedland_hayman_check(3, PI / 2.0).unwrap().sum;
    let secs = t.elapsed().as_secs_f64();
    let pass = (min - 2.0).abs() <= 1e-9 && (arg - PI).abs() <= 1e-12 && (hemi - 2.0).abs() <= 1e-6 && secs < 10.0;
    outcome(pass, format!("n=2 min {min} at theta {arg:.6}; n=3 hemisphere {hemi}; {secs:.2}s"))
}

fn plane_family(g: &Grid) -> Vec<Pair<f64>> {
    let n = g.dim();
    let mut diag = vec![1.0 / (n as f64).sqrt(); n];
    diag[0] = -diag[0];
    [unit(n, 0), unit(n, n - 1), diag].iter().map(|d| make_plane_pair(g.clone(), d).unwrap()).collect()
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    for n in [2, 3] {
        for (label, model) in [("+1", sphere(n)), ("-1", hyperbolic(n))] {
            let c0 = |scale| {
                let g = default_grid(n, 0.5, scale);
                let radii = linear_radii(0.05, 0.5, 10);
                calibrate_c0(&model, &plane_family(&g), &radii).unwrap().c0
            };
            let (a, b) = (c0(1), c0(2));
            pass &= a.is_some() && a == b;
            notes.push(format!("n={n} k={label}: {a:?}/{b:?}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    outcome(pass, format!("c0 default/doubled {}; {secs:.2}s", notes.join(", ")))
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let members = |g: &Grid| -> Vec<Pair<f64>> {
        let mut v = vec![make_plane_pair(g.clone(), &unit(2, 0)).unwrap()];
        v.extend([0.25, 0.5, 1.0].iter().map(|a| make_inhomogeneous_pair(g.clone(), *a).unwrap()));
        v
    };
    let mut fitted = Vec::new();
    let mut drift: f64 = 0.0;
    for model in [flat(2), sphere(2)] {
        let c = |scale| -> Vec<f64> {
            members(&default_grid(2, 1.0, scale)).iter().map(|p| almost_mono_bound(&model, p, 1.0).unwrap().c_fitted).collect()
        };
        let (a, b) = (c(1), c(2));
        for (x, y) in a.iter().zip(&b) {
            drift = drift.max(rel(*x, *y));
        }
        fitted.extend(a);
    }
    let hi = fitted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = fitted.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    let secs = t.elapsed().as_secs_f64();
    let pass = fitted.iter().all(|c| c.is_finite() && *c > 0.0) && drift < 0.15 && spread < 10.0 && secs < 120.0;
    outcome(pass, format!("max refinement drift {drift:.3}, family spread {spread:.3}; {secs:.2}s"))
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let g: Grid = Arc::new(BallGrid::build(2, 1.0, 2048, 64).unwrap());
    let plane = dyadic_trace(&flat(2), &make_plane_pair(g.clone(), &unit(2, 0)).unwrap(), 4, DEFAULT_C1, DEFAULT_C2).unwrap();
    let eq = plane.product_ratio.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let sector = dyadic_trace(&flat(2), &make_sector_pair(g, PI / 2.0).unwrap(), 4, DEFAULT_C1, DEFAULT_C2).unwrap();
    let strict = sector.product_ratio.iter().cloned().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = plane.product_ratio.len() == 4
        && eq <= 1e-3
        && plane.product_verdicts.iter().all(|v| *v)
        && sector.product_verdicts.iter().all(|v| *v)
        && strict < 1.0
        && secs < 30.0;
    outcome(pass, format!("plane max |ratio - 1| {eq:.2e}, sector max ratio {strict:.4}; {secs:.2}s"))
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    for kappa in [1.0, -1.0] {
        let model = ModelMetric::space_form(3, kappa).unwrap();
        let opts = HebeyOptions::default();
        let a = hebey_verify_with(&model, 0.8, 0.5, opts).unwrap();
        let b = hebey_verify_with(&model, 0.8, 0.5, HebeyOptions { step_fraction: opts.step_fraction / 10.0, ..opts }).unwrap();
        let converged = rel(a.fitted_k, b.fitted_k) <= 0.1;
        pass &= a.pass && a.fitted_k <= 0.5 && converged;
        notes.push(format!("kappa={kappa}: fitted K {:.4} (step refined {:.4})", a.fitted_k, b.fitted_k));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 10.0;
    outcome(pass, format!("{}; threshold 0.5; {secs:.2}s", notes.join(", ")))
}

fn max_interior_dev(field: &ScalarField<f64>, exact: impl Fn(&[f64; 3]) -> f64) -> f64 {
    let g = field.grid();
    (0..g.node_count())
        .filter(|k| is_interior(g, *k))
        .map(|k| (field.values()[k] - exact(&g.point(k))).abs())
        .fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let mut fails: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    let g2 = Arc::new(BallGrid::build(2, 1.0, 64, 64).unwrap());
    let g3 = Arc::new(BallGrid::build(3, 1.0, 64, 32).unwrap());
    let ones2 = vec![1.0; g2.node_count()];
    let ones3 = vec![1.0; g3.node_count()];
    check("node count", g2.node_count() == 4096);
    check("disc area", rel(g2.volume_integral(&flat(2), &ones2, 1.0, 0.0).unwrap(), PI) <= 1e-3);
    check("ball volume", rel(g3.volume_integral(&flat(3), &ones3, 1.0, 0.0).unwrap(), 4.0 * PI / 3.0) <= 1e-3);
    check("circle length", rel(g2.sphere_integral(&flat(2), &ones2, 1.0).unwrap(), 2.0 * PI) <= 1e-3);
    check("sphere area", rel(g3.sphere_integral(&flat(3), &ones3, 0.5).unwrap(), PI) <= 2e-3);

    let sq2 = ScalarField::from_fn(g2.clone(), |x| x[0] * x[0] + x[1] * x[1]).unwrap();
    let lap = laplace_beltrami(&flat(2), &sq2).unwrap();
    check("laplacian |x|^2", max_interior_dev(&lap, |_| 4.0) <= 0.04);
    let x1 = ScalarField::from_fn(g2.clone(), |x| x[0]).unwrap();
    let lap1 = laplace_beltrami(&flat(2), &x1).unwrap();
    let inner = (0..g2.n_dirs()).map(|d| lap1.values()[g2.node(0, d)].abs()).fold(0.0, f64::max);
    check("laplacian x1 near center", inner <= 1e-6);
    let gx = gradient_energy(&flat(2), &x1).unwrap();
    check("gradient x1", gx.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max) <= 1e-6);
    let flat_ok = check_superharmonic_bound(&flat(2), &ScalarField::zeros(g2.clone()), 0.0, default_tol(&g2)).unwrap().pass;
    check("superharmonic zero field", flat_ok);
    let neg = ScalarField::from_fn(g2.clone(), |x| -(x[0] * x[0] + x[1] * x[1])).unwrap();
    let rep = check_superharmonic_bound(&flat(2), &neg, 0.0, default_tol(&g2)).unwrap();
    check("superharmonic -|x|^2", !rep.pass && (rep.worst_value + 4.0).abs() <= 0.04);
    let cor = build_corrector(&flat(3), g3.clone()).unwrap();
    let cdev = (0..g3.node_count()).map(|k| rel(cor.field.values()[k], 1.0 / g3.node_radius(k))).fold(0.0, f64::max);
    check("flat corrector 1/r", cdev <= 1e-12);
    let cor2 = build_corrector(&flat(2), g2.clone()).unwrap();
    check("2D corrector constant", cor2.field.values().iter().all(|v| *v == 1.0));
    let bumps = BumpFamily::seeded(&g2, 3);
    check("energy inequality zero field", energy_inequality_check(&flat(2), &ScalarField::zeros(g2.clone()), 1.0, &bumps).unwrap().pass);

    // divergence theorem on a curved metric
    let model = sphere(2);
    let f = ScalarField::from_fn(g2.clone(), |x| x[0] * x[1] + 0.3 * x[1] + (x[0] - 0.2).powi(2)).unwrap();
    let op = PolarOperator::new(&model, &g2).unwrap();
    let l = op.laplacian(f.values(), f.origin(), false);
    for r in [0.4, 0.8] {
        let i = g2.snap_shell(r).unwrap();
        let vol = g2.volume_integral(&model, &l, g2.shells()[i], 0.0).unwrap();
        let flux = op.normal_flux(f.values(), f.origin(), false, i);
        check("divergence theorem", rel(vol, flux) <= 0.02);
    }

    // second-order convergence: unit 3-ball volume, geodesic disc and 3-ball on the unit sphere
    let cases: [(usize, ModelMetric<f64>, f64); 3] = [
        (3, flat(3), 4.0 * PI / 3.0),
        (2, sphere(2), 2.0 * PI * (1.0 - 1f64.cos())),
        (3, sphere(3), 2.0 * PI * (1.0 - 2f64.sin() / 2.0)),
    ];
    let mut ratios = Vec::new();
    for (n, m, exact) in cases {
        let err = |n_r: usize| {
            let g = BallGrid::build(n, 1.0, n_r, 32).unwrap();
            (g.volume_integral(&m, &vec![1.0; g.node_count()], 1.0, 0.0).unwrap() - exact).abs()
        };
        let ratio = err(32) / err(64);
        ratios.push(ratio);
        check("second-order quadrature", ratio >= 3.5);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = fails.is_empty() && secs < 60.0;
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    outcome(pass, format!("failed: {:?}; convergence ratios {}; {secs:.2}s", fails, ratios.join(" ")))
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let x1 = |x: &[f64]| x[0];
    let g = default_grid(2, 1.0, 1);
    let p = TwoPhaseProblem::constant(flat(2), g.clone(), x1, 0.0, 0.0).unwrap();
    let s = two_phase_solve(&p).unwrap();
    let err = (0..g.node_count()).map(|k| (s.u.values()[k] - g.point(k)[0]).abs()).fold(0.0, f64::max);
    let h2 = g.spacing().powi(2);
    let lip = lipschitz_ratio(&s, 0.75).unwrap();
    let resid = s.consistency_residual.0.max(s.consistency_residual.1).max(s.phase_residual.0).max(s.phase_residual.1);
    let harmonic_ok = s.converged && s.residual_ok() && resid <= 10.0 * h2 && err <= 10.0 * h2;
    let lip_ok = !lip.vacuous && (lip.sup_ratio - 1.0).abs() <= 0.03;
    let fit = |scale| {
        let g = default_grid(2, 1.0, scale);
        let p = TwoPhaseProblem::constant(sphere(2), g, x1, 0.5, 0.5).unwrap();
        let s = two_phase_solve(&p).unwrap();
        (s.converged, almost_mono_bound(&s.model, &s.pair().unwrap(), 1.0).unwrap().c_fitted)
    };
    let ((ca, a), (cb, b)) = (fit(1), fit(2));
    let drift = rel(a, b);
    let curved_ok = ca && cb && a.is_finite() && drift < 0.15;
    let secs = t.elapsed().as_secs_f64();
    let pass = harmonic_ok && lip_ok && curved_ok && secs < 120.0;
    outcome(
        pass,
        format!(
            "x1 error {err:.1e}, residual {:.1e} (10h^2 = {:.1e}), lipschitz {:.4}, C_fitted {a:.4}/{b:.4} drift {drift:.3}; {secs:.2}s",
            resid,
            10.0 * h2,
            lip.sup_ratio
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().and_then(|s| s.to_str()) == Some("csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    let kinds = ["scan", "bound", "dyadic", "fh", "solve", "calibrate"];
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for kind in kinds {
        let cfg = fs::read_dir(&configs)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(kind))
            .expect("config for every kind");
        let run = |tag: &str, jobs: &str| {
            let out = tmp.path().join(format!("{kind}_{tag}"));
            let status = Command::new(env!("CARGO_BIN_EXE_monolab"))
                .args([kind, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .args(["--jobs", jobs])
                .stdout(Stdio::null())
                .status()
                .unwrap();
            (status.code(), out)
        };
        let (ca, a) = run("a", "1");
        let (cb, b) = run("b", "4");
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        if ca != cb || fa.is_empty() || fa.len() != fb.len() {
            mismatched.push(kind.to_string());
            continue;
        }
        for (x, y) in fa.iter().zip(&fb) {
            compared += 1;
            if fs::read(x).unwrap() != fs::read(y).unwrap() {
                mismatched.push(x.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    outcome(mismatched.is_empty(), format!("{compared} CSV files compared, mismatches {mismatched:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("euclidean constancy", criterion_1),
        ("strict monotonicity", criterion_2),
        ("Friedland-Hayman", criterion_3),
        ("curved calibration", criterion_4),
        ("almost-monotonicity", criterion_5),
        ("dyadic product inequality", criterion_6),
        ("metric bounds", criterion_7),
        ("quadrature and operator", criterion_8),
        ("two-phase solver", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} ({name}): {} | {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
