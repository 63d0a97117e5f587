//! Monotonicity engine: weighted energies `A+-`, surface terms `B+-`, the
//! functionals `phi` and `phi_F`, radius scans, `c0` calibration, the
//! almost-monotonicity bound and the dyadic iteration.

use std::sync::Arc;

use serde::Serialize;

use crate::ballgrid::BallGrid;
use crate::error::{Error, Result};
use crate::fields::{build_corrector, CorrectorField};
use crate::geometry::ModelMetric;
use crate::operator::PolarOperator;
use crate::pairs::Pair;
use crate::scalar::Real;

/// Default `C1`, `C2`, `C3`.
pub const DEFAULT_C1: f64 = 1.0;
pub const DEFAULT_C2: f64 = 10.0;
pub const DEFAULT_C3: f64 = 10.0;
/// Smallest admissible radius in units of the shell spacing.
pub const MIN_RADIUS_SPACINGS: f64 = 4.0;
/// Dyadic balls must contain this many shells.
pub const DYADIC_MIN_SHELLS: f64 = 8.0;

/// Weight of the energy integrands.
#[derive(Clone, Copy, Debug)]
pub enum Weight<'a, T> {
    /// `|x|^{2-n}`.
    DistancePower,
    /// The corrector `F_g`.
    Corrector(&'a CorrectorField<T>),
}

/// Per-shell radial densities of `|grad_g u+-|^2 * weight`, from which
/// `A+-(r)` (volume) and `B+-(r)` (sphere) follow by quadrature.
#[derive(Clone, Debug)]
pub struct EnergyProfile<T> {
    grid: Arc<BallGrid<T>>,
    plus: Vec<T>,
    minus: Vec<T>,
}

impl<T: Real> EnergyProfile<T> {
    pub fn new(op: &PolarOperator<T>, pair: &Pair<T>, weight: Weight<T>) -> Result<Self> {
        let grid = pair.grid().clone();
        let n = grid.dim();
        let density = |u: &crate::fields::ScalarField<T>| -> Vec<T> {
            let e = op.gradient_energy(u.values(), u.origin(), true);
            match weight {
                Weight::DistancePower => grid.shell_densities(op.densities(), &e, T::from_usize_lossy(2) - T::from_usize_lossy(n)),
                Weight::Corrector(c) => {
                    let w: Vec<T> = e.iter().zip(c.field.values()).map(|(a, f)| *a * *f).collect();
                    grid.shell_densities(op.densities(), &w, T::zero())
                }
            }
        };
        Ok(EnergyProfile { plus: density(&pair.u_plus), minus: density(&pair.u_minus), grid })
    }

    /// `(A+(r), A-(r))`.
    pub fn volume(&self, r: T) -> Result<(T, T)> {
        Ok((self.grid.integrate_shells(&self.plus, r)?, self.grid.integrate_shells(&self.minus, r)?))
    }

    /// `(B+(r), B-(r))` on the shell nearest to `r`.
    pub fn surface(&self, r: T) -> Result<(T, T)> {
        let i = self.grid.snap_shell(r)?;
        Ok((self.plus[i], self.minus[i]))
    }
}

/// `(A+(r), A-(r))`.
pub fn energies<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, r: T, weight: Weight<T>) -> Result<(T, T)> {
    let op = PolarOperator::new(model, pair.grid())?;
    EnergyProfile::new(&op, pair, weight)?.volume(r)
}

/// `(B+(r), B-(r))`.
pub fn surface_energies<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, r: T, weight: Weight<T>) -> Result<(T, T)> {
    let op = PolarOperator::new(model, pair.grid())?;
    EnergyProfile::new(&op, pair, weight)?.surface(r)
}

fn phi_value<T: Real>(a: (T, T), r: T, c0: T) -> T {
    (c0 * r * r).exp() * a.0 * a.1 / r.powi(4)
}

/// `e^{c0 r^2} r^{-4} A+(r) A-(r)` with the distance weight.
pub fn phi<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, r: T, c0: T) -> Result<T> {
    if !(r > T::zero()) {
        return Err(Error::Domain(format!("phi needs r > 0, got {r}")));
    }
    let a = energies(model, pair, r, Weight::DistancePower)?;
    Ok(phi_value(a, r, c0))
}

/// Relative tolerance `3 h^2 + 1e-9` of monotonicity verdicts.
pub fn tol_mono<T: Real>(grid: &BallGrid<T>) -> T {
    T::lit(3.0) * grid.spacing().sq() + T::lit(1e-9)
}

/// Radius scan of `phi` and `phi_F`.
#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityTrace {
    pub radii: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub b_plus: Vec<f64>,
    pub b_minus: Vec<f64>,
    /// Corrector-weighted energies (equal to the above when n = 2).
    pub a_plus_f: Vec<f64>,
    pub a_minus_f: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_f: Vec<f64>,
    /// Discrete `d ln phi / d ln r` between consecutive radii.
    pub log_derivative: Vec<f64>,
    /// `phi(r_i) >= phi(r_{i-1}) (1 - tol_mono)`; the first entry is `true`.
    pub verdicts: Vec<bool>,
    pub c0: f64,
    pub tol_mono: f64,
    pub pass: bool,
}

impl MonotonicityTrace {
    pub fn empty(c0: f64, tol: f64) -> Self {
        MonotonicityTrace {
            radii: vec![],
            a_plus: vec![],
            a_minus: vec![],
            b_plus: vec![],
            b_minus: vec![],
            a_plus_f: vec![],
            a_minus_f: vec![],
            phi: vec![],
            phi_f: vec![],
            log_derivative: vec![],
            verdicts: vec![],
            c0,
            tol_mono: tol,
            pass: true,
        }
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}

/// Trace sink shared by the monotonicity and dyadic traces.
pub trait TraceRows {
    /// `(r, A+, A-, B+, B-, phi, phi_F, verdict)` rows.
    fn rows(&self) -> Vec<[f64; 7]>;
    fn row_verdicts(&self) -> Vec<bool>;
}

impl TraceRows for MonotonicityTrace {
    fn rows(&self) -> Vec<[f64; 7]> {
        (0..self.len())
            .map(|i| [self.radii[i], self.a_plus[i], self.a_minus[i], self.b_plus[i], self.b_minus[i], self.phi[i], self.phi_f[i]])
            .collect()
    }

    fn row_verdicts(&self) -> Vec<bool> {
        self.verdicts.clone()
    }
}

fn check_radii<T: Real>(grid: &BallGrid<T>, radii: &[T]) -> Result<()> {
    let min = grid.spacing() * T::lit(MIN_RADIUS_SPACINGS);
    for w in radii.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain("scan radii must be strictly increasing".into()));
        }
    }
    for &r in radii {
        if r < min * (T::one() - T::lit(1e-12)) || r > grid.radius() * (T::one() + T::lit(1e-12)) {
            return Err(Error::Domain(format!("scan radius {r} outside [{min}, {}]", grid.radius())));
        }
    }
    Ok(())
}

/// Precomputed energy profiles of one pair on one metric.
#[derive(Clone, Debug)]
pub struct PairProfiles<T> {
    pub distance: EnergyProfile<T>,
    pub corrector: EnergyProfile<T>,
    pub grid: Arc<BallGrid<T>>,
}

impl<T: Real> PairProfiles<T> {
    pub fn new(model: &ModelMetric<T>, pair: &Pair<T>) -> Result<Self> {
        let op = PolarOperator::new(model, pair.grid())?;
        Self::with_operator(model, &op, pair)
    }

    pub fn with_operator(model: &ModelMetric<T>, op: &PolarOperator<T>, pair: &Pair<T>) -> Result<Self> {
        let grid = pair.grid().clone();
        let distance = EnergyProfile::new(op, pair, Weight::DistancePower)?;
        let corrector = if grid.dim() == 2 {
            distance.clone()
        } else {
            let c = build_corrector(model, grid.clone())?;
            EnergyProfile::new(op, pair, Weight::Corrector(&c))?
        };
        Ok(PairProfiles { distance, corrector, grid })
    }

    pub fn trace(&self, radii: &[T], c0: T) -> Result<MonotonicityTrace> {
        check_radii(&self.grid, radii)?;
        let tol = tol_mono(&self.grid);
        let mut t = MonotonicityTrace::empty(c0.to_f64_lossy(), tol.to_f64_lossy());
        for &r in radii {
            let a = self.distance.volume(r)?;
            let b = self.corrector.surface(r)?;
            let af = self.corrector.volume(r)?;
            t.radii.push(r.to_f64_lossy());
            t.a_plus.push(a.0.to_f64_lossy());
            t.a_minus.push(a.1.to_f64_lossy());
            t.b_plus.push(b.0.to_f64_lossy());
            t.b_minus.push(b.1.to_f64_lossy());
            t.a_plus_f.push(af.0.to_f64_lossy());
            t.a_minus_f.push(af.1.to_f64_lossy());
            t.phi.push(phi_value(a, r, c0).to_f64_lossy());
            t.phi_f.push(phi_value(af, r, T::zero()).to_f64_lossy());
        }
        let tol = t.tol_mono;
        for i in 0..t.len() {
            let ok = i == 0 || t.phi[i] >= t.phi[i - 1] * (1.0 - tol);
            t.verdicts.push(ok);
            if i > 0 {
                let d = if t.phi[i] > 0.0 && t.phi[i - 1] > 0.0 {
                    (t.phi[i] / t.phi[i - 1]).ln() / (t.radii[i] / t.radii[i - 1]).ln()
                } else {
                    0.0
                };
                t.log_derivative.push(d);
            }
        }
        t.pass = t.verdicts.iter().all(|v| *v);
        Ok(t)
    }
}

/// Evaluate `phi` (and `phi_F`) at `radii` and test monotonicity.
pub fn phi_scan<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, radii: &[T], c0: T) -> Result<MonotonicityTrace> {
    PairProfiles::new(model, pair)?.trace(radii, c0)
}

/// Equally spaced scan radii on `[lo, hi]`.
pub fn linear_radii<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    if count < 2 {
        return vec![hi];
    }
    let step = (hi - lo) / T::from_usize_lossy(count - 1);
    (0..count).map(|i| lo + step * T::from_usize_lossy(i)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    /// Smallest passing grid value, if any.
    pub c0: Option<f64>,
    /// `(c0, every member passes)` for each grid value.
    pub grid: Vec<(f64, bool)>,
    pub lambda: f64,
}

/// Candidate values `{0, L/4, L/2, L, 2L, 4L, 8L}` for `c0`.
pub fn c0_grid<T: Real>(lambda: T) -> Vec<T> {
    [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|f| T::lit(*f) * lambda).collect()
}

/// Smallest `c0` on the candidate grid for which every pair's scan passes.
pub fn calibrate_c0<T: Real>(model: &ModelMetric<T>, family: &[Pair<T>], radii: &[T]) -> Result<CalibrationReport> {
    let profiles: Vec<PairProfiles<T>> = family.iter().map(|p| PairProfiles::new(model, p)).collect::<Result<_>>()?;
    calibrate_profiles(model.curvature_bound(), &profiles, radii)
}

pub fn calibrate_profiles<T: Real>(lambda: T, profiles: &[PairProfiles<T>], radii: &[T]) -> Result<CalibrationReport> {
    let mut grid = Vec::new();
    let mut found = None;
    for c0 in c0_grid(lambda) {
        let mut ok = true;
        for p in profiles {
            ok &= p.trace(radii, c0)?.pass;
        }
        grid.push((c0.to_f64_lossy(), ok));
        if ok && found.is_none() {
            found = Some(c0.to_f64_lossy());
        }
    }
    Ok(CalibrationReport { c0: found, grid, lambda: lambda.to_f64_lossy() })
}

#[derive(Clone, Debug, Serialize)]
pub struct AlmostMonoReport {
    pub sup_phi: f64,
    /// Radius where the supremum is attained.
    pub argmax: f64,
    /// `(1 + A+(delta) + A-(delta))^2`.
    pub budget: f64,
    pub c_fitted: f64,
}

/// `sup_{4h <= r <= delta} phi(r)` (c0 = 0) against `(1 + A+(delta) + A-(delta))^2`.
pub fn almost_mono_bound<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, delta: T) -> Result<AlmostMonoReport> {
    let op = PolarOperator::new(model, pair.grid())?;
    let profile = EnergyProfile::new(&op, pair, Weight::DistancePower)?;
    almost_mono_profile(pair.grid(), &profile, delta)
}

pub fn almost_mono_profile<T: Real>(grid: &BallGrid<T>, profile: &EnergyProfile<T>, delta: T) -> Result<AlmostMonoReport> {
    if delta > grid.radius() * (T::one() + T::lit(1e-12)) {
        return Err(Error::Domain(format!("delta = {delta} exceeds grid radius {}", grid.radius())));
    }
    let min = grid.spacing() * T::lit(MIN_RADIUS_SPACINGS);
    let mut radii: Vec<T> = grid.shells().iter().cloned().filter(|r| *r >= min && *r <= delta).collect();
    if radii.last().map_or(true, |r| *r < delta) {
        radii.push(delta);
    }
    let mut sup = T::zero();
    let mut arg = delta;
    for r in radii {
        let v = phi_value(profile.volume(r)?, r, T::zero());
        if v > sup {
            sup = v;
            arg = r;
        }
    }
    let a = profile.volume(delta)?;
    let budget = (T::one() + a.0 + a.1).sq();
    Ok(AlmostMonoReport {
        sup_phi: sup.to_f64_lossy(),
        argmax: arg.to_f64_lossy(),
        budget: budget.to_f64_lossy(),
        c_fitted: (sup / budget).to_f64_lossy(),
    })
}

/// Energies over the dyadic balls `B_{R 4^-k}`.
#[derive(Clone, Debug, Serialize)]
pub struct DyadicTrace {
    pub k: Vec<usize>,
    pub radii: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub b_plus: Vec<f64>,
    pub b_minus: Vec<f64>,
    /// `4^{4k} A_k+-`.
    pub bk_plus: Vec<f64>,
    pub bk_minus: Vec<f64>,
    /// `C2/sqrt(b+) + C2/sqrt(b-) + C2 4^{-2k}`.
    pub delta: Vec<f64>,
    /// `4^4 A_{k+1}+ A_{k+1}- / (A_k+ A_k-)` for `k < k_max`.
    pub product_ratio: Vec<f64>,
    /// Product inequality `ratio <= 1 + delta_k` per `k < k_max`.
    pub product_verdicts: Vec<bool>,
    /// Smallest `1 - A_{k+1}- / A_k-` over the steps meeting the dichotomy
    /// hypotheses; `None` when no step does.
    pub fitted_epsilon: Option<f64>,
    pub dichotomy_pass: bool,
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
}

impl TraceRows for DyadicTrace {
    fn rows(&self) -> Vec<[f64; 7]> {
        (0..self.k.len())
            .map(|i| {
                let r = self.radii[i];
                let phi = self.a_plus[i] * self.a_minus[i] / r.powi(4);
                [r, self.a_plus[i], self.a_minus[i], self.b_plus[i], self.b_minus[i], phi, phi]
            })
            .collect()
    }

    fn row_verdicts(&self) -> Vec<bool> {
        let mut v = self.product_verdicts.clone();
        v.push(true);
        v
    }
}

/// Dyadic quantities for `k = 0..=k_max`; the product inequality is
/// tested with relative tolerance `tol_mono`.
pub fn dyadic_trace<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, k_max: usize, c1: T, c2: T) -> Result<DyadicTrace> {
    let grid = pair.grid().clone();
    let smallest = grid.radius() * T::lit(4.0).powi(-(k_max as i32));
    if smallest < grid.spacing() * T::lit(DYADIC_MIN_SHELLS) * (T::one() - T::lit(1e-12)) {
        return Err(Error::Config(format!(
            "insufficient resolution: B_(R 4^-{k_max}) holds {:.2} shells, need {DYADIC_MIN_SHELLS}",
            (smallest / grid.spacing()).to_f64_lossy()
        )));
    }
    let op = PolarOperator::new(model, &grid)?;
    let profile = EnergyProfile::new(&op, pair, Weight::DistancePower)?;
    let tol = tol_mono(&grid);
    let four = T::lit(4.0);
    let mut t = DyadicTrace {
        k: vec![],
        radii: vec![],
        a_plus: vec![],
        a_minus: vec![],
        b_plus: vec![],
        b_minus: vec![],
        bk_plus: vec![],
        bk_minus: vec![],
        delta: vec![],
        product_ratio: vec![],
        product_verdicts: vec![],
        fitted_epsilon: None,
        dichotomy_pass: true,
        c1: c1.to_f64_lossy(),
        c2: c2.to_f64_lossy(),
        pass: true,
    };
    let mut a = Vec::new();
    for k in 0..=k_max {
        let r = grid.radius() * four.powi(-(k as i32));
        let ak = profile.volume(r)?;
        let bs = profile.surface(r)?;
        let scale = four.powi(4 * k as i32);
        let (bp, bm) = (ak.0 * scale, ak.1 * scale);
        let dk = c2 / bp.sqrt() + c2 / bm.sqrt() + c2 * four.powi(-2 * k as i32);
        t.k.push(k);
        t.radii.push(r.to_f64_lossy());
        t.a_plus.push(ak.0.to_f64_lossy());
        t.a_minus.push(ak.1.to_f64_lossy());
        t.b_plus.push(bs.0.to_f64_lossy());
        t.b_minus.push(bs.1.to_f64_lossy());
        t.bk_plus.push(bp.to_f64_lossy());
        t.bk_minus.push(bm.to_f64_lossy());
        t.delta.push(dk.to_f64_lossy());
        a.push(ak);
    }
    let mut eps: Option<T> = None;
    for k in 0..k_max {
        let lhs = four.powi(4) * a[k + 1].0 * a[k + 1].1;
        let base = a[k].0 * a[k].1;
        let (ratio, ok) = if base > T::zero() {
            let q = lhs / base;
            (q, q <= (T::one() + T::lit(t.delta[k])) * (T::one() + tol))
        } else {
            (T::zero(), lhs <= T::zero())
        };
        t.product_ratio.push(ratio.to_f64_lossy());
        t.product_verdicts.push(ok);
        let hyp = T::lit(t.bk_plus[k]) >= c1 && T::lit(t.bk_minus[k]) >= c1 && four.powi(4) * a[k + 1].0 >= a[k].0;
        if hyp && a[k].1 > T::zero() {
            let e = T::one() - a[k + 1].1 / a[k].1;
            eps = Some(eps.map_or(e, |p: T| p.min(e)));
        }
    }
    t.fitted_epsilon = eps.map(|e| e.to_f64_lossy());
    t.dichotomy_pass = eps.map_or(true, |e| e > T::zero());
    t.pass = t.dichotomy_pass && t.product_verdicts.iter().all(|v| *v);
    Ok(t)
}

/// Largest `k_max` for which `B_{R 4^-k_max}` still holds the required shells.
pub fn max_dyadic_level<T: Real>(grid: &BallGrid<T>) -> usize {
    let mut k = 0;
    while grid.radius() * T::lit(4.0).powi(-(k as i32 + 1)) >= grid.spacing() * T::lit(DYADIC_MIN_SHELLS) * (T::one() - T::lit(1e-12)) {
        k += 1;
    }
    k
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffInequalityReport {
    pub pass: bool,
    /// Smallest `(phi_F' - rhs) / phi_F` over interior radii.
    pub worst_margin: f64,
    pub worst_radius: f64,
    /// Whether `A+-^F(r) >= C1` at every trace radius.
    pub threshold_met: bool,
    /// `phi_F(r_max / 4) <= (1 + C2 delta) phi_F(r_max)` with
    /// `delta = 1/sqrt(A+^F(r_max)) + 1/sqrt(A-^F(r_max)) + C3 t^2`.
    pub integrated: Option<bool>,
    pub integrated_ratio: Option<f64>,
}

/// `phi_F'(r) >= -C2 (1/sqrt(A+) + 1/sqrt(A-) + C3 t^2) phi_F(r)` at interior
/// trace radii (centred differences), plus the integrated form.
pub fn diff_inequality_check(trace: &MonotonicityTrace, c1: f64, c2: f64, c3: f64, t: f64) -> DiffInequalityReport {
    let m = trace.len();
    let mut worst = f64::INFINITY;
    let mut worst_r = 0.0;
    let mut pass = true;
    let coeff = |i: usize| {
        let ap = trace.a_plus_f[i];
        let am = trace.a_minus_f[i];
        c2 * (1.0 / ap.sqrt() + 1.0 / am.sqrt() + c3 * t * t)
    };
    for i in 1..m.saturating_sub(1) {
        let f = trace.phi_f[i];
        if !(f > 0.0) {
            continue;
        }
        let d = (trace.phi_f[i + 1] - trace.phi_f[i - 1]) / (trace.radii[i + 1] - trace.radii[i - 1]);
        let rhs = -coeff(i) * f;
        let margin = (d - rhs) / f;
        let slack = trace.tol_mono / (trace.radii[i + 1] - trace.radii[i - 1]);
        if margin < -slack {
            pass = false;
        }
        if margin < worst {
            worst = margin;
            worst_r = trace.radii[i];
        }
    }
    let threshold_met = trace.a_plus_f.iter().chain(&trace.a_minus_f).all(|a| *a >= c1);
    let (integrated, ratio) = if m >= 2 && trace.phi_f[m - 1] > 0.0 {
        let top = trace.radii[m - 1];
        let q = top / 4.0;
        match trace.radii.iter().position(|r| *r >= q) {
            Some(j) if j > 0 || (trace.radii[0] - q).abs() <= 1e-12 * top => {
                let v = if j == 0 || trace.radii[j] == q {
                    trace.phi_f[j]
                } else {
                    let (r0, r1) = (trace.radii[j - 1], trace.radii[j]);
                    let w = (q - r0) / (r1 - r0);
                    trace.phi_f[j - 1] * (1.0 - w) + trace.phi_f[j] * w
                };
                let delta = 1.0 / trace.a_plus_f[m - 1].sqrt() + 1.0 / trace.a_minus_f[m - 1].sqrt() + c3 * t * t;
                let ratio = v / trace.phi_f[m - 1];
                (Some(ratio <= (1.0 + c2 * delta) * (1.0 + trace.tol_mono)), Some(ratio))
            }
            _ => (None, None),
        }
    } else {
        (None, None)
    };
    DiffInequalityReport {
        pass: pass && integrated.unwrap_or(true),
        worst_margin: if worst.is_finite() { worst } else { 0.0 },
        worst_radius: worst_r,
        threshold_met,
        integrated,
        integrated_ratio: ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::{make_inhomogeneous_pair, make_plane_pair, make_sector_pair};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize, r: f64, scale: usize) -> Arc<BallGrid<f64>> {
        Arc::new(BallGrid::build_default(n, r, scale).unwrap())
    }

    fn flat(n: usize) -> ModelMetric<f64> {
        ModelMetric::euclidean(n).unwrap()
    }

    fn e1(n: usize) -> Vec<f64> {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        e
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn plane_energies() {
        let p = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        let (ap, am) = energies(&flat(2), &p, 1.0, Weight::DistancePower).unwrap();
        assert!(close(ap, PI / 2.0, 0.005) && close(am, PI / 2.0, 0.005));
        let p3 = make_plane_pair(grid(3, 1.0, 1), &e1(3)).unwrap();
        let (ap, am) = energies(&flat(3), &p3, 1.0, Weight::DistancePower).unwrap();
        assert!(close(ap, PI, 0.005) && close(am, PI, 0.005), "{ap} {am}");
    }

    #[test]
    fn zero_pair_is_vacuous() {
        let g = grid(2, 1.0, 1);
        let p = Pair::zero(g.clone());
        let m = flat(2);
        assert_eq!(energies(&m, &p, 1.0, Weight::DistancePower).unwrap(), (0.0, 0.0));
        assert_eq!(surface_energies(&m, &p, 1.0, Weight::DistancePower).unwrap(), (0.0, 0.0));
        assert_eq!(phi(&m, &p, 0.5, 0.0).unwrap(), 0.0);
        assert_eq!(almost_mono_bound(&m, &p, 1.0).unwrap().sup_phi, 0.0);
        let d = dyadic_trace(&m, &p, 1, DEFAULT_C1, DEFAULT_C2).unwrap();
        assert!(d.pass && d.a_plus.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn surface_energies_match_closed_forms() {
        let p = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        let (bp, _) = surface_energies(&flat(2), &p, 1.0, Weight::DistancePower).unwrap();
        assert!(close(bp, PI, 0.01));
        // |grad u+|^2 = 4 r^2 on a quarter circle
        let s = make_sector_pair(grid(2, 1.0, 1), PI / 2.0).unwrap();
        let (bp, _) = surface_energies(&flat(2), &s, 1.0, Weight::DistancePower).unwrap();
        assert!(close(bp, 2.0 * PI, 0.01), "{bp}");
    }

    #[test]
    fn energy_domain_errors() {
        let p = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        assert!(energies(&flat(2), &p, 1.5, Weight::DistancePower).is_err());
        assert!(phi(&flat(2), &p, 0.0, 0.0).is_err());
        assert!(phi_scan(&flat(2), &p, &[0.5, 0.4], 0.0).is_err());
        assert!(phi_scan(&flat(2), &p, &[0.01, 0.4], 0.0).is_err());
    }

    #[test]
    fn plane_phi_is_constant() {
        let radii = linear_radii(0.1, 1.0, 10);
        for (n, target) in [(2, PI * PI / 4.0), (3, PI * PI)] {
            let p = make_plane_pair(grid(n, 1.0, 1), &e1(n)).unwrap();
            let t = phi_scan(&flat(n), &p, &radii, 0.0).unwrap();
            assert!(t.pass);
            assert!(t.phi.iter().all(|v| close(*v, target, 0.01)), "n={n} {:?}", t.phi);
        }
    }

    #[test]
    fn sector_phi_grows_like_power() {
        let s = make_sector_pair(grid(2, 1.0, 1), PI / 2.0).unwrap();
        let t = phi_scan(&flat(2), &s, &[0.4, 0.8], 0.0).unwrap();
        assert!(t.pass);
        assert!(close(t.phi[1] / t.phi[0], 2f64.powf(4.0 / 3.0), 0.03));
        let t = phi_scan(&flat(2), &s, &linear_radii(0.3, 0.9, 7), 0.0).unwrap();
        for d in &t.log_derivative {
            assert!(close(*d, 4.0 / 3.0, 0.03), "{d}");
        }
    }

    #[test]
    fn sphere_plane_calibrates() {
        let g = grid(2, 0.5, 1);
        let m = ModelMetric::space_form(2, 1.0).unwrap();
        let p = make_plane_pair(g, &e1(2)).unwrap();
        let radii = linear_radii(0.05, 0.5, 10);
        let rep = calibrate_c0(&m, std::slice::from_ref(&p), &radii).unwrap();
        let c0 = rep.c0.expect("finite c0");
        assert!(phi_scan(&m, &p, &radii, c0).unwrap().pass);
    }

    #[test]
    fn euclidean_calibration_is_zero() {
        let g = grid(2, 1.0, 1);
        let fam: Vec<_> = [[1.0, 0.0], [0.0, 1.0]].iter().map(|d| make_plane_pair(g.clone(), d).unwrap()).collect();
        let rep = calibrate_c0(&flat(2), &fam, &linear_radii(0.1, 1.0, 10)).unwrap();
        assert_eq!(rep.c0, Some(0.0));
        assert_eq!(rep.grid.len(), 7);
    }

    #[test]
    fn hyperbolic_calibration_is_finite() {
        let m = ModelMetric::space_form(2, -1.0).unwrap();
        let p = make_plane_pair(grid(2, 0.5, 1), &e1(2)).unwrap();
        let rep = calibrate_c0(&m, &[p], &linear_radii(0.05, 0.5, 10)).unwrap();
        assert!(rep.c0.is_some());
    }

    #[test]
    fn rescaling_preserves_phi() {
        // plane pair of g^t at r/t equals plane pair of g at r
        let m = ModelMetric::space_form(2, 1.0).unwrap();
        let t = 0.5;
        let mt = m.rescale(t).unwrap();
        let p = make_plane_pair(grid(2, 0.5, 1), &e1(2)).unwrap();
        let q = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        for r in [0.1, 0.25, 0.5] {
            let a = phi(&m, &p, r, 0.0).unwrap();
            let b = phi(&mt, &q, r / t, 0.0).unwrap();
            assert!(close(b, a, 0.02), "{a} {b}");
        }
    }

    #[test]
    fn almost_mono_plane() {
        let c = (PI * PI / 4.0) / (1.0 + PI).powi(2);
        for scale in [1, 2] {
            let p = make_plane_pair(grid(2, 1.0, scale), &e1(2)).unwrap();
            let rep = almost_mono_bound(&flat(2), &p, 1.0).unwrap();
            assert!(close(rep.c_fitted, c, 0.02), "{}", rep.c_fitted);
        }
    }

    #[test]
    fn almost_mono_inhomogeneous_stable() {
        let fit = |scale| {
            let p = make_inhomogeneous_pair(grid(2, 1.0, scale), 1.0).unwrap();
            almost_mono_bound(&flat(2), &p, 1.0).unwrap().c_fitted
        };
        let (a, b) = (fit(1), fit(2));
        assert!(a.is_finite() && a > 0.0);
        assert!(close(a, b, 0.05), "{a} {b}");
    }

    #[test]
    fn dyadic_plane_equality() {
        let g = Arc::new(BallGrid::build(2, 1.0, 256, 64).unwrap());
        let p = make_plane_pair(g.clone(), &e1(2)).unwrap();
        let k_max = max_dyadic_level(&g);
        assert_eq!(k_max, 2);
        let d = dyadic_trace(&flat(2), &p, k_max, DEFAULT_C1, DEFAULT_C2).unwrap();
        assert!(d.pass);
        for q in &d.product_ratio {
            assert!((q - 1.0).abs() < 1e-3, "{q}");
        }
        for (k, r) in d.radii.iter().enumerate() {
            let (ap, am) = energies(&flat(2), &p, *r, Weight::DistancePower).unwrap();
            assert!((ap - d.a_plus[k]).abs() <= 1e-12 * ap && (am - d.a_minus[k]).abs() <= 1e-12 * am);
        }
    }

    #[test]
    fn dyadic_sector_is_strict() {
        let g = Arc::new(BallGrid::build(2, 1.0, 256, 64).unwrap());
        let s = make_sector_pair(g, PI / 2.0).unwrap();
        let d = dyadic_trace(&flat(2), &s, 2, DEFAULT_C1, DEFAULT_C2).unwrap();
        assert!(d.pass);
        // 4^{4 - 2 (alpha+ + alpha-)} = 4^{-4/3}
        for q in &d.product_ratio {
            assert!(close(*q, 4f64.powf(-4.0 / 3.0), 0.03), "{q}");
        }
    }

    #[test]
    fn dyadic_rejects_coarse_grids() {
        let p = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        let err = dyadic_trace(&flat(2), &p, 3, DEFAULT_C1, DEFAULT_C2).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("insufficient resolution")));
    }

    #[test]
    fn diff_inequality_examples() {
        let radii = linear_radii(0.1, 1.0, 10);
        let p = make_plane_pair(grid(2, 1.0, 1), &e1(2)).unwrap();
        let t = phi_scan(&flat(2), &p, &radii, 0.0).unwrap();
        let rep = diff_inequality_check(&t, DEFAULT_C1, DEFAULT_C2, DEFAULT_C3, 0.0);
        assert!(rep.pass && rep.integrated == Some(true));
        let s = make_sector_pair(grid(2, 1.0, 1), PI / 2.0).unwrap();
        let t = phi_scan(&flat(2), &s, &radii, 0.0).unwrap();
        let rep = diff_inequality_check(&t, DEFAULT_C1, DEFAULT_C2, DEFAULT_C3, 0.0);
        assert!(rep.pass && rep.worst_margin > 0.0);
    }

    #[test]
    fn diff_inequality_curved_margin_shrinks_with_c2() {
        let m = ModelMetric::space_form(3, 1.0).unwrap().rescale(0.25).unwrap();
        let p = make_inhomogeneous_pair(grid(3, 1.0, 1), 1.0).unwrap();
        let t = phi_scan(&m, &p, &linear_radii(0.1, 1.0, 10), 0.0).unwrap();
        let strong = diff_inequality_check(&t, DEFAULT_C1, DEFAULT_C2, DEFAULT_C3, 0.25);
        let weak = diff_inequality_check(&t, DEFAULT_C1, 0.1, DEFAULT_C3, 0.25);
        assert!(strong.pass);
        assert!(weak.worst_margin < strong.worst_margin);
    }

    #[test]
    fn trace_rows_and_monotone_energies() {
        let p = make_inhomogeneous_pair(grid(2, 1.0, 1), 0.5).unwrap();
        let t = phi_scan(&flat(2), &p, &linear_radii(0.1, 1.0, 10), 0.0).unwrap();
        assert_eq!(t.rows().len(), 10);
        for w in t.a_plus.windows(2).chain(t.a_minus.windows(2)) {
            assert!(w[1] >= w[0]);
        }
        assert!(t.rows().iter().flatten().all(|v| v.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn bilinear_in_scaling(lambda in 0.1f64..10.0, angle in 0.0f64..6.28) {
            let g = Arc::new(BallGrid::build(2, 1.0, 32, 32).unwrap());
            let p = make_plane_pair(g, &[angle.cos(), angle.sin()]).unwrap();
            let q = p.scale_plus(lambda);
            let m = flat(2);
            let radii = linear_radii(0.2, 1.0, 5);
            let a = phi_scan(&m, &p, &radii, 0.0).unwrap();
            let b = phi_scan(&m, &q, &radii, 0.0).unwrap();
            let l2 = lambda * lambda;
            for i in 0..radii.len() {
                prop_assert!((b.a_plus[i] - l2 * a.a_plus[i]).abs() <= 1e-12 * b.a_plus[i].abs().max(1e-300));
                prop_assert!((b.b_plus[i] - l2 * a.b_plus[i]).abs() <= 1e-12 * b.b_plus[i].abs().max(1e-300));
                prop_assert!((b.phi[i] - l2 * a.phi[i]).abs() <= 1e-12 * b.phi[i].abs().max(1e-300));
                prop_assert_eq!(b.a_minus[i], a.a_minus[i]);
            }
            prop_assert_eq!(a.verdicts, b.verdicts);
        }
    }
}
