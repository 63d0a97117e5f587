//! Admissible two-phase pairs `(u+, u-)` and characteristic exponents of
//! spherical caps.

use std::sync::Arc;

use serde::Serialize;

use crate::ballgrid::BallGrid;
use crate::error::{Error, Result};
use crate::fields::{check_superharmonic_bound_with, interface_mask, BoundReport, ScalarField};
use crate::geometry::ModelMetric;
use crate::operator::PolarOperator;
use crate::scalar::Real;

/// Integration steps of the cap shooting solver.
pub const SHOOT_STEPS: usize = 10_000;
/// Bisection tolerance on the cap eigenvalue.
pub const LAMBDA_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    /// `Delta_g u+- >= 0`.
    Subharmonic,
    /// `Delta_g u+- >= -1`.
    DeltaGeMinusOne,
}

impl PairClass {
    /// Lower bound `b` in `Delta_g u >= -b`.
    pub fn bound<T: Real>(self) -> T {
        match self {
            PairClass::Subharmonic => T::zero(),
            PairClass::DeltaGeMinusOne => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PairFamily {
    Plane { direction: Vec<f64> },
    Sector { theta: f64 },
    Cap { theta: f64 },
    Inhomogeneous { a: f64 },
    Custom,
}

#[derive(Clone, Debug)]
pub struct Pair<T> {
    pub u_plus: ScalarField<T>,
    pub u_minus: ScalarField<T>,
    pub class: PairClass,
    /// Nodes adjacent to a change of phase.
    pub interface: Vec<bool>,
    pub family: PairFamily,
}

impl<T: Real> Pair<T> {
    /// Assemble a pair from two fields; both become piecewise fields masked
    /// on the phase interface of `u+ - u-`.
    pub fn new(u_plus: ScalarField<T>, u_minus: ScalarField<T>, class: PairClass, family: PairFamily) -> Result<Self> {
        let grid = u_plus.grid().clone();
        let signed: Vec<T> = u_plus.values().iter().zip(u_minus.values()).map(|(p, m)| *p - *m).collect();
        let mut interface = interface_mask(&grid, &signed, u_plus.origin() - u_minus.origin());
        for (k, flag) in interface.iter_mut().enumerate() {
            *flag |= u_plus.mask()[k] || u_minus.mask()[k];
        }
        Ok(Pair {
            u_plus: u_plus.with_mask(interface.clone())?.piecewise(),
            u_minus: u_minus.with_mask(interface.clone())?.piecewise(),
            class,
            interface,
            family,
        })
    }

    pub fn grid(&self) -> &Arc<BallGrid<T>> {
        self.u_plus.grid()
    }

    /// Pair with `u+` multiplied by `lambda`.
    pub fn scale_plus(&self, lambda: T) -> Self {
        Pair { u_plus: self.u_plus.scaled(lambda), ..self.clone() }
    }

    pub fn zero(grid: Arc<BallGrid<T>>) -> Self {
        let z = ScalarField::zeros(grid.clone());
        let interface = vec![false; grid.node_count()];
        Pair { u_plus: z.clone(), u_minus: z, class: PairClass::Subharmonic, interface, family: PairFamily::Custom }
    }
}

/// Values below `1e-12 R` are generator round-off on the zero set.
fn clamp<T: Real>(v: T, grid: &BallGrid<T>) -> T {
    if v.abs() <= T::lit(1e-12) * grid.radius() {
        T::zero()
    } else {
        v
    }
}

/// Pair from a signed generator `s`: `u+ = s^+`, `u- = s^-`.
fn from_signed<T: Real>(
    grid: Arc<BallGrid<T>>,
    class: PairClass,
    family: PairFamily,
    s: impl Fn(&[T]) -> T,
) -> Result<Pair<T>> {
    let g = grid.clone();
    let signed = move |x: &[T]| clamp(s(x), &g);
    let plus = ScalarField::from_fn(grid.clone(), |x| signed(x).max(T::zero()))?;
    let minus = ScalarField::from_fn(grid, |x| (-signed(x)).max(T::zero()))?;
    Pair::new(plus, minus, class, family)
}

/// `u+- = <x, e>^+-`.
pub fn make_plane_pair<T: Real>(grid: Arc<BallGrid<T>>, direction: &[T]) -> Result<Pair<T>> {
    let n = grid.dim();
    if direction.len() != n {
        return Err(Error::Config(format!("direction needs {n} components")));
    }
    let len = direction.iter().fold(T::zero(), |a, v| a + v.sq()).sqrt();
    if (len - T::one()).abs() > T::lit(1e-9) {
        return Err(Error::Config(format!("direction has length {len}, expected a unit vector")));
    }
    let e = direction.to_vec();
    let family = PairFamily::Plane { direction: e.iter().map(|v| v.to_f64_lossy()).collect() };
    from_signed(grid, PairClass::Subharmonic, family, move |x| x.iter().zip(&e).fold(T::zero(), |a, (xi, ei)| a + *xi * *ei))
}

/// Homogeneous harmonic pair on the sector `0 < phi < theta` and its
/// complement (n = 2).
pub fn make_sector_pair<T: Real>(grid: Arc<BallGrid<T>>, theta: T) -> Result<Pair<T>> {
    if grid.dim() != 2 {
        return Err(Error::Config("sector pairs need n = 2".into()));
    }
    let two_pi = T::lit(2.0) * T::PI();
    if !(theta > T::zero() && theta < two_pi) {
        return Err(Error::Config(format!("sector opening {theta} outside (0, 2 pi)")));
    }
    let ap = T::PI() / theta;
    let am = T::PI() / (two_pi - theta);
    let family = PairFamily::Sector { theta: theta.to_f64_lossy() };
    from_signed(grid, PairClass::Subharmonic, family, move |x| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r == T::zero() {
            return T::zero();
        }
        let mut phi = x[1].atan2(x[0]);
        if phi < T::zero() {
            phi += two_pi;
        }
        if phi <= theta {
            r.powf(ap) * (ap * phi).sin()
        } else {
            -(r.powf(am) * (am * (phi - theta)).sin())
        }
    })
}

/// `u+ = x1^+ - (a/2) (x1^+)^2`, `u- = x1^-` with `Delta u+ = -a` (flat).
pub fn make_inhomogeneous_pair<T: Real>(grid: Arc<BallGrid<T>>, a: T) -> Result<Pair<T>> {
    if !(a >= T::zero() && a <= T::one()) {
        return Err(Error::Config(format!("inhomogeneity a = {a} outside [0, 1]")));
    }
    if grid.radius() > T::one() * (T::one() + T::lit(1e-12)) {
        return Err(Error::Config(format!("inhomogeneous pairs need grid radius <= 1, got {}", grid.radius())));
    }
    let family = PairFamily::Inhomogeneous { a: a.to_f64_lossy() };
    let half = a / T::lit(2.0);
    from_signed(grid, PairClass::DeltaGeMinusOne, family, move |x| {
        let t = x[0];
        if t > T::zero() {
            t - half * t * t
        } else {
            t
        }
    })
}

/// Cone pair over the polar cap `theta_p < theta` and its complement
/// (n = 3): `u+- = r^{alpha+-} y+-(angle)` with `y` the cap eigenfunctions.
pub fn make_cap_pair<T: Real>(grid: Arc<BallGrid<T>>, theta: T) -> Result<Pair<T>> {
    if grid.dim() != 3 {
        return Err(Error::Config("cap pairs need n = 3".into()));
    }
    let plus = cap_profile(theta)?;
    let minus = cap_profile(T::PI() - theta)?;
    let family = PairFamily::Cap { theta: theta.to_f64_lossy() };
    from_signed(grid, PairClass::Subharmonic, family, move |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == T::zero() {
            return T::zero();
        }
        let polar = (x[2] / r).max(-T::one()).min(T::one()).acos();
        if polar <= theta {
            r.powf(plus.exponent.alpha) * plus.eval(polar)
        } else {
            -(r.powf(minus.exponent.alpha) * minus.eval(T::PI() - polar))
        }
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CapExponent<T> {
    pub n: usize,
    /// Opening angle.
    pub theta: T,
    /// First Dirichlet eigenvalue of the cap (n = 3) or arc (n = 2).
    pub lambda: T,
    /// Positive root of `alpha (alpha + n - 2) = lambda`.
    pub alpha: T,
}

/// Tabulated first eigenfunction `y(psi)` of the cap, `y(0) = 1`.
struct CapProfile<T> {
    exponent: CapExponent<T>,
    psi: Vec<T>,
    y: Vec<T>,
    dy: Vec<T>,
}

impl<T: Real> CapProfile<T> {
    /// Cubic Hermite interpolation; zero past the cap boundary.
    fn eval(&self, psi: T) -> T {
        let n = self.psi.len();
        if psi >= self.psi[n - 1] {
            return T::zero();
        }
        if psi <= self.psi[0] {
            let l = self.exponent.lambda;
            return series(l, psi).0;
        }
        let h = self.psi[1] - self.psi[0];
        let i = (((psi - self.psi[0]) / h).to_usize().unwrap_or(0)).min(n - 2);
        let t = (psi - self.psi[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = -two * t3 + three * t2;
        let h11 = t3 - t2;
        (h00 * self.y[i] + h10 * h * self.dy[i] + h01 * self.y[i + 1] + h11 * h * self.dy[i + 1]).max(T::zero())
    }
}

/// Regular series `y = 1 - l s^2/4 + l (l - 2/3) s^4 / 64` and derivative.
fn series<T: Real>(l: T, s: T) -> (T, T) {
    let a1 = -l / T::lit(4.0);
    let a2 = l * (l - T::lit(2.0) / T::lit(3.0)) / T::lit(64.0);
    let s2 = s * s;
    (T::one() + a1 * s2 + a2 * s2 * s2, T::lit(2.0) * a1 * s + T::lit(4.0) * a2 * s2 * s)
}

/// RK4 for `y'' + cot(psi) y' + lambda y = 0` on `[psi0, cap]`; returns the
/// grid, values, slopes and whether `y` reached zero.
fn shoot<T: Real>(lambda: T, cap: T, keep: bool) -> (Vec<T>, Vec<T>, Vec<T>, bool) {
    let psi0 = cap * T::lit(1e-4);
    let h = (cap - psi0) / T::from_usize_lossy(SHOOT_STEPS);
    let (mut y, mut v) = series(lambda, psi0);
    let rhs = |s: T, y: T, v: T| (v, -(s.cos() / s.sin()) * v - lambda * y);
    let cap_len = if keep { SHOOT_STEPS + 1 } else { 0 };
    let (mut ps, mut ys, mut vs) = (Vec::with_capacity(cap_len), Vec::with_capacity(cap_len), Vec::with_capacity(cap_len));
    let mut s = psi0;
    let half = h / T::lit(2.0);
    let mut crossed = false;
    for i in 0..=SHOOT_STEPS {
        if keep {
            ps.push(s);
            ys.push(y);
            vs.push(v);
        }
        if y <= T::zero() {
            crossed = true;
            if !keep {
                break;
            }
        }
        if i == SHOOT_STEPS {
            break;
        }
        let (k1y, k1v) = rhs(s, y, v);
        let (k2y, k2v) = rhs(s + half, y + half * k1y, v + half * k1v);
        let (k3y, k3v) = rhs(s + half, y + half * k2y, v + half * k2v);
        let (k4y, k4v) = rhs(s + h, y + h * k3y, v + h * k3v);
        let sixth = h / T::lit(6.0);
        y += sixth * (k1y + T::lit(2.0) * k2y + T::lit(2.0) * k3y + k4y);
        v += sixth * (k1v + T::lit(2.0) * k2v + T::lit(2.0) * k3v + k4v);
        s = psi0 + h * T::from_usize_lossy(i + 1);
    }
    (ps, ys, vs, crossed)
}

fn cap_profile<T: Real>(theta: T) -> Result<CapProfile<T>> {
    let exponent = cap_exponent(3, theta)?;
    let (psi, y, dy, _) = shoot(exponent.lambda, theta, true);
    Ok(CapProfile { exponent, psi, y, dy })
}

/// Exponent of the cone over a cap (n = 3) or arc (n = 2) of opening `theta`.
pub fn cap_exponent<T: Real>(n: usize, theta: T) -> Result<CapExponent<T>> {
    match n {
        2 => {
            if !(theta > T::zero() && theta < T::lit(2.0) * T::PI()) {
                return Err(Error::Config(format!("arc opening {theta} outside (0, 2 pi)")));
            }
            let alpha = T::PI() / theta;
            Ok(CapExponent { n, theta, lambda: alpha * alpha, alpha })
        }
        3 => {
            if !(theta > T::zero() && theta < T::PI()) {
                return Err(Error::Config(format!("cap opening {theta} outside (0, pi)")));
            }
            let reaches_zero = |l: T| shoot(l, theta, false).3;
            let mut lo = T::zero();
            let mut hi = T::one();
            while !reaches_zero(hi) {
                lo = hi;
                hi = hi * T::lit(2.0);
                if hi > T::lit(1e9) {
                    return Err(Error::Numerical(format!("cap eigenvalue for theta = {theta} not bracketed below 1e9")));
                }
            }
            let tol = T::lit(LAMBDA_TOL);
            while hi - lo > tol * T::one().max(lo) {
                let mid = (lo + hi) / T::lit(2.0);
                if reaches_zero(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let lambda = (lo + hi) / T::lit(2.0);
            let quarter = T::lit(0.25);
            let alpha = -T::lit(0.5) + (quarter + lambda).sqrt();
            Ok(CapExponent { n, theta, lambda, alpha })
        }
        _ => Err(Error::Config(format!("cap exponents need n = 2 or 3, got {n}"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FhReport {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub sum: f64,
    pub pass: bool,
}

/// `alpha+ + alpha- >= 2` for the partition `(theta, 2 pi - theta)` of the
/// circle (n = 2) or the caps `(theta, pi - theta)` of the sphere (n = 3).
pub fn friedland_hayman_check<T: Real>(n: usize, theta: T) -> Result<FhReport> {
    let (p, m) = match n {
        2 => (cap_exponent(2, theta)?, cap_exponent(2, T::lit(2.0) * T::PI() - theta)?),
        3 => (cap_exponent(3, theta)?, cap_exponent(3, T::PI() - theta)?),
        _ => return Err(Error::Config(format!("Friedland-Hayman check needs n = 2 or 3, got {n}"))),
    };
    let sum = p.alpha + m.alpha;
    Ok(FhReport {
        alpha_plus: p.alpha.to_f64_lossy(),
        alpha_minus: m.alpha.to_f64_lossy(),
        sum: sum.to_f64_lossy(),
        pass: sum >= T::lit(2.0 - 1e-9),
    })
}

/// Openings scanned for the Friedland-Hayman minimum: 50 partitions,
/// symmetric around (and including) the balanced one.
pub fn fh_scan_openings<T: Real>(n: usize) -> Vec<T> {
    let full = if n == 2 { T::lit(2.0) * T::PI() } else { T::PI() };
    let mid = full / T::lit(2.0);
    let step = full / T::lit(51.0);
    (0..50).map(|k| mid + T::from_usize_lossy(k) * step - T::lit(25.0) * step).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PairReport {
    pub pass: bool,
    pub nonnegative: bool,
    pub disjoint: bool,
    pub vanishes_at_center: bool,
    pub laplacian_plus: BoundReport,
    pub laplacian_minus: BoundReport,
    /// `max(0, -min Delta_g u+-)` over the checked nodes.
    pub measured_bound: f64,
    /// Tightest class consistent with `measured_bound` (within `tol`).
    pub measured_class: Option<PairClass>,
    pub violations: Vec<String>,
}

pub fn validate_pair<T: Real>(model: &ModelMetric<T>, pair: &Pair<T>, tol: T) -> Result<PairReport> {
    let op = PolarOperator::new(model, pair.grid())?;
    validate_pair_with(&op, pair, tol)
}

pub fn validate_pair_with<T: Real>(op: &PolarOperator<T>, pair: &Pair<T>, tol: T) -> Result<PairReport> {
    let (p, m) = (&pair.u_plus, &pair.u_minus);
    let mut violations = Vec::new();
    let neg = |f: &ScalarField<T>| f.values().iter().position(|v| *v < T::zero()).or(if f.origin() < T::zero() { Some(usize::MAX) } else { None });
    let nonnegative = match (neg(p), neg(m)) {
        (None, None) => true,
        (a, b) => {
            violations.push(format!("negative value at node {:?}", a.or(b)));
            false
        }
    };
    let overlap = p.values().iter().zip(m.values()).position(|(a, b)| *a * *b != T::zero());
    let disjoint = overlap.is_none() && p.origin() * m.origin() == T::zero();
    if !disjoint {
        violations.push(format!("supports overlap at node {overlap:?}"));
    }
    let vanishes_at_center = p.origin() == T::zero() && m.origin() == T::zero();
    if !vanishes_at_center {
        violations.push("pair does not vanish at the center".into());
    }
    let bound = pair.class.bound::<T>();
    let lp = check_superharmonic_bound_with(op, p, bound, tol)?;
    let lm = check_superharmonic_bound_with(op, m, bound, tol)?;
    for (name, rep) in [("u+", &lp), ("u-", &lm)] {
        if !rep.pass {
            violations.push(format!(
                "Delta_g {name} = {} below -{} at node {:?}",
                rep.worst_value,
                bound.to_f64_lossy(),
                rep.worst_node
            ));
        }
    }
    let measured = (-lp.worst_value.min(lm.worst_value)).max(0.0);
    let t = tol.to_f64_lossy();
    let measured_class = if measured <= t {
        Some(PairClass::Subharmonic)
    } else if measured <= 1.0 + t {
        Some(PairClass::DeltaGeMinusOne)
    } else {
        None
    };
    Ok(PairReport {
        pass: violations.is_empty(),
        nonnegative,
        disjoint,
        vanishes_at_center,
        laplacian_plus: lp,
        laplacian_minus: lm,
        measured_bound: measured,
        measured_class,
        violations,
    })
}
