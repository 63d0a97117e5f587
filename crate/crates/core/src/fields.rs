//! Scalar fields on a [`BallGrid`], the discrete Laplace-Beltrami operator
//! and gradient energy, the corrector `F_g`, and the weak-form energy
//! inequalities for functions with `Delta_g u >= -1`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ballgrid::BallGrid;
use crate::error::{Error, Result};
use crate::geometry::ModelMetric;
use crate::operator::PolarOperator;
use crate::scalar::Real;

/// Nodal interior checks use shells with `r >= max(4h, R/4)`: second
/// differences of the cone pairs `r^alpha Y` (`alpha < 2`) carry an error
/// of order `h^2 r^(alpha-4)` that is not `O(h^2)` uniformly near the center.
pub const INTERIOR_MIN_SPACINGS: usize = 4;
pub const INTERIOR_MIN_FRACTION: f64 = 0.25;

/// Nodal values of a function on a grid, plus its value at the center and
/// a mask of nodes excluded from nodal interior checks.
#[derive(Clone, Debug)]
pub struct ScalarField<T> {
    grid: Arc<BallGrid<T>>,
    values: Vec<T>,
    /// `+inf` for fields singular at the center.
    origin: T,
    mask: Vec<bool>,
    piecewise: bool,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Arc<BallGrid<T>>, values: Vec<T>, origin: T) -> Result<Self> {
        grid.check_len(&values)?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at node {k}")));
        }
        if origin.is_nan() {
            return Err(Error::Numerical("field value at the center is NaN".into()));
        }
        let mask = vec![false; values.len()];
        Ok(ScalarField { grid, values, origin, mask, piecewise: false })
    }

    /// Sample `f` (taking Cartesian coordinates) at every node and the center.
    pub fn from_fn(grid: Arc<BallGrid<T>>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        let n = grid.dim();
        let values = (0..grid.node_count()).map(|k| f(&grid.point(k)[..n])).collect();
        let origin = f(&[T::zero(); 3][..n]);
        Self::new(grid, values, origin)
    }

    pub fn zeros(grid: Arc<BallGrid<T>>) -> Self {
        let values = vec![T::zero(); grid.node_count()];
        let mask = vec![false; values.len()];
        ScalarField { grid, values, origin: T::zero(), mask, piecewise: false }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::Domain(format!("mask has {} entries, field has {}", mask.len(), self.values.len())));
        }
        self.mask = mask;
        Ok(self)
    }

    /// Mark the field as smooth only away from its zero set (e.g. `u^+`):
    /// differences then never straddle a change of sign.
    pub fn piecewise(mut self) -> Self {
        self.piecewise = true;
        self
    }

    pub fn is_piecewise(&self) -> bool {
        self.piecewise
    }

    pub fn grid(&self) -> &Arc<BallGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn origin(&self) -> T {
        self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `lambda * u`, mask kept.
    pub fn scaled(&self, lambda: T) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| *v * lambda).collect(),
            origin: self.origin * lambda,
            mask: self.mask.clone(),
            piecewise: self.piecewise,
        }
    }

    /// Nodes that take part in nodal interior checks.
    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&k| !self.mask[k] && is_interior(&self.grid, k))
    }

    /// CSV with columns `r, phi, value` (n = 2) or `r, theta, phi, value`
    /// (n = 3); the first row is the center when its value is finite.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let g = &self.grid;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        if g.dim() == 2 {
            w.write_record(["r", "phi", "value"])?;
        } else {
            w.write_record(["r", "theta", "phi", "value"])?;
        }
        let row = |r: T, d: Option<usize>, v: T| -> Vec<String> {
            let mut rec = vec![fmt(r)];
            let (th, ph) = match d {
                Some(d) if g.dim() == 3 => (g.polar_angle(d / g.n_ang()), g.azimuth(d)),
                Some(d) => (T::zero(), g.azimuth(d)),
                None => (T::zero(), T::zero()),
            };
            if g.dim() == 3 {
                rec.push(fmt(th));
            }
            rec.push(fmt(ph));
            rec.push(fmt(v));
            rec
        };
        if self.origin.is_finite() {
            w.write_record(row(T::zero(), None, self.origin))?;
        }
        for (k, v) in self.values.iter().enumerate() {
            w.write_record(row(g.node_radius(k), Some(g.dir_of(k)), *v))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`ScalarField::write_csv`] for the same grid.
    pub fn read_csv<R: Read>(grid: Arc<BallGrid<T>>, input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut vals = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let v: f64 = rec
                .get(rec.len() - 1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Numerical("malformed field value".into()))?;
            vals.push(T::lit(v));
        }
        let count = grid.node_count();
        let (origin, values) = match vals.len() {
            l if l == count + 1 => (vals[0], vals[1..].to_vec()),
            l if l == count => (T::infinity(), vals),
            l => return Err(Error::Domain(format!("csv has {l} rows, grid has {count} nodes"))),
        };
        Self::new(grid, values, origin)
    }
}

fn fmt<T: Real>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

/// Default inequality tolerance `5 h^2`.
pub fn default_tol<T: Real>(grid: &BallGrid<T>) -> T {
    T::lit(5.0) * grid.spacing() * grid.spacing()
}

/// Shells strictly inside the ball with `r >= max(4h, R/4)`.
pub fn is_interior<T: Real>(grid: &BallGrid<T>, node: usize) -> bool {
    let s = grid.shell_of(node);
    let r = grid.shells()[s];
    let inner = (grid.spacing() * T::from_usize_lossy(INTERIOR_MIN_SPACINGS))
        .max(grid.radius() * T::lit(INTERIOR_MIN_FRACTION));
    r >= inner * (T::one() - T::lit(1e-12)) && s + 1 < grid.n_r()
}

/// Grid neighbours of a node along rays and angular lines (the center is
/// reported as `None`).
pub(crate) fn neighbours<T: Real>(grid: &BallGrid<T>, node: usize) -> Vec<Option<usize>> {
    let s = grid.shell_of(node);
    let d = grid.dir_of(node);
    let na = grid.n_ang();
    let mut out = Vec::with_capacity(6);
    out.push(if s == 0 { None } else { Some(grid.node(s - 1, d)) });
    if s + 1 < grid.n_r() {
        out.push(Some(grid.node(s + 1, d)));
    }
    if grid.dim() == 2 {
        out.push(Some(grid.node(s, (d + 1) % na)));
        out.push(Some(grid.node(s, (d + na - 1) % na)));
    } else {
        let (p, a) = (d / na, d % na);
        let np = grid.n_pol();
        out.push(Some(grid.node(s, p * na + (a + 1) % na)));
        out.push(Some(grid.node(s, p * na + (a + na - 1) % na)));
        let across = (a + na / 2) % na;
        out.push(Some(grid.node(s, if p == 0 { across } else { (p - 1) * na + a })));
        out.push(Some(grid.node(s, if p + 1 == np { p * na + across } else { (p + 1) * na + a })));
    }
    out
}

/// Nodes whose sign (`+`, `-` or `0`) differs from that of a grid neighbour.
pub fn interface_mask<T: Real>(grid: &BallGrid<T>, signed: &[T], origin: T) -> Vec<bool> {
    let sgn = |v: T| crate::stencil::sign_of(v);
    (0..grid.node_count())
        .map(|k| {
            let s = sgn(signed[k]);
            neighbours(grid, k).into_iter().any(|nb| match nb {
                Some(j) => sgn(signed[j]) != s,
                None => sgn(origin) != s,
            })
        })
        .collect()
}

fn check_field<T: Real>(op: &PolarOperator<T>, field: &ScalarField<T>) -> Result<()> {
    let (a, b) = (op.grid(), field.grid().as_ref());
    let same = std::ptr::eq(a, b)
        || (a.dim() == b.dim() && a.n_r() == b.n_r() && a.n_ang() == b.n_ang() && a.radius() == b.radius());
    if !same {
        return Err(Error::Domain("field and operator live on different grids".into()));
    }
    Ok(())
}

/// `Delta_g u`; the result masks the input's masked nodes, the outer shell
/// and the shells below `4h`.
pub fn laplace_beltrami<T: Real>(model: &ModelMetric<T>, field: &ScalarField<T>) -> Result<ScalarField<T>> {
    let op = PolarOperator::new(model, field.grid())?;
    laplace_beltrami_with(&op, field)
}

pub fn laplace_beltrami_with<T: Real>(op: &PolarOperator<T>, field: &ScalarField<T>) -> Result<ScalarField<T>> {
    check_field(op, field)?;
    let g = field.grid();
    let values = op.laplacian(field.values(), field.origin(), field.is_piecewise());
    let origin = if field.origin().is_finite() {
        let r0 = g.shells()[0];
        let mean = shell_mean(g, field.values(), 0);
        T::lit(2.0) * T::from_usize_lossy(g.dim()) * (mean - field.origin()) / (r0 * r0)
    } else {
        -field.origin()
    };
    let mask = (0..values.len()).map(|k| field.mask()[k] || !is_interior(g, k)).collect();
    ScalarField::new(g.clone(), values, origin)?.with_mask(mask)
}

fn shell_mean<T: Real>(g: &BallGrid<T>, values: &[T], shell: usize) -> T {
    let mut s = T::zero();
    let mut w = T::zero();
    for d in 0..g.n_dirs() {
        s += values[g.node(shell, d)] * g.angular_weight(d);
        w += g.angular_weight(d);
    }
    s / w
}

/// Nodal `|grad_g u|^2`.
pub fn gradient_energy<T: Real>(model: &ModelMetric<T>, field: &ScalarField<T>) -> Result<ScalarField<T>> {
    let op = PolarOperator::new(model, field.grid())?;
    gradient_energy_with(&op, field)
}

pub fn gradient_energy_with<T: Real>(op: &PolarOperator<T>, field: &ScalarField<T>) -> Result<ScalarField<T>> {
    check_field(op, field)?;
    let g = field.grid();
    let values = op.gradient_energy(field.values(), field.origin(), field.is_piecewise());
    // gradient at the center from the first angular moment on the inner shell
    let n = g.dim();
    let r0 = g.shells()[0];
    let mut c = [T::zero(); 3];
    let mut area = T::zero();
    for d in 0..g.n_dirs() {
        let w = g.angular_weight(d);
        let dir = g.direction(d);
        let v = field.values()[g.node(0, d)];
        for i in 0..n {
            c[i] += v * dir[i] * w;
        }
        area += w;
    }
    let scale = T::from_usize_lossy(n) / (area * r0);
    let origin = if field.origin().is_finite() { c.iter().fold(T::zero(), |a, v| a + (*v * scale).sq()) } else { T::infinity() };
    ScalarField::new(g.clone(), values, origin)?.with_mask(field.mask().to_vec())
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub pass: bool,
    pub worst_node: Option<usize>,
    /// Smallest nodal `Delta_g u` over the checked nodes.
    pub worst_value: f64,
    pub checked: usize,
}

/// Check `Delta_g u >= -bound - tol` at interior, unmasked nodes.
pub fn check_superharmonic_bound<T: Real>(
    model: &ModelMetric<T>,
    field: &ScalarField<T>,
    bound: T,
    tol: T,
) -> Result<BoundReport> {
    let op = PolarOperator::new(model, field.grid())?;
    check_superharmonic_bound_with(&op, field, bound, tol)
}

pub fn check_superharmonic_bound_with<T: Real>(
    op: &PolarOperator<T>,
    field: &ScalarField<T>,
    bound: T,
    tol: T,
) -> Result<BoundReport> {
    let lap = laplace_beltrami_with(op, field)?;
    let mut worst: Option<(usize, T)> = None;
    let mut checked = 0;
    for k in lap.interior_nodes() {
        checked += 1;
        let v = lap.values()[k];
        if worst.is_none_or(|(_, w)| v < w) {
            worst = Some((k, v));
        }
    }
    let pass = worst.is_none_or(|(_, w)| w >= -bound - tol);
    Ok(BoundReport {
        pass,
        worst_node: worst.map(|w| w.0),
        worst_value: worst.map_or(0.0, |w| w.1.to_f64_lossy()),
        checked,
    })
}

/// Radial corrector `F_g = r^{2-n} + F_1g` (or `1` for n = 2).
#[derive(Clone, Debug)]
pub struct CorrectorField<T> {
    pub field: ScalarField<T>,
    pub n: usize,
    /// Fitted `c` in `|F_1g| <= c t^2 r^{3-n}`, `t` the model's scale.
    pub bound_c: T,
}

/// `F_1g(r) = (n-2) int_0^r s^{1-n} (1 - 1/omega(s)) ds` with
/// `ln omega(s)` the ray average of `ln sqrt(det g)` on the sphere of radius
/// `s`. Then `(r^{n-1} omega F_g')' = 0`, i.e. `F_g` solves the
/// direction-averaged equation `Delta_g F_g = 0` off the center.
pub fn corrector_profile<T: Real>(model: &ModelMetric<T>, radii: &[T]) -> Result<Vec<T>> {
    let n = model.dim();
    let (xs, ws) = crate::ballgrid::gauss_legendre::<T>(8);
    let nm2 = T::from_usize_lossy(n - 2);
    let integrand = |s: T| -> Result<T> {
        let m = model.mean_log_density(s)?;
        Ok(nm2 * s.powi(1 - n as i32) * (-(-m).exp_m1()))
    };
    let mut out = Vec::with_capacity(radii.len());
    let mut acc = T::zero();
    let mut prev = T::zero();
    for &r in radii {
        let half = (r - prev) / T::lit(2.0);
        let mid = (r + prev) / T::lit(2.0);
        for (x, w) in xs.iter().zip(&ws) {
            acc += *w * half * integrand(mid + half * *x)?;
        }
        out.push(acc);
        prev = r;
    }
    Ok(out)
}

pub fn build_corrector<T: Real>(model: &ModelMetric<T>, grid: Arc<BallGrid<T>>) -> Result<CorrectorField<T>> {
    grid.check_model(model)?;
    let n = grid.dim();
    if n == 2 {
        let field = ScalarField::new(grid.clone(), vec![T::one(); grid.node_count()], T::one())?;
        return Ok(CorrectorField { field, n, bound_c: T::zero() });
    }
    let f1 = corrector_profile(model, grid.shells())?;
    let t = model.scale();
    let mut bound_c = T::zero();
    let mut shell_vals = Vec::with_capacity(grid.n_r());
    for (i, &r) in grid.shells().iter().enumerate() {
        let kernel = r.powi(2 - n as i32);
        let f = kernel + f1[i];
        if !(f >= kernel / T::lit(2.0)) {
            return Err(Error::Construction(format!(
                "F_g = {} < r^(2-n)/2 = {} at r = {r}",
                f,
                kernel / T::lit(2.0)
            )));
        }
        bound_c = bound_c.max(f1[i].abs() * r.powi(n as i32 - 3) / (t * t));
        shell_vals.push(f);
    }
    let values = (0..grid.node_count()).map(|k| shell_vals[grid.shell_of(k)]).collect();
    let field = ScalarField::new(grid.clone(), values, T::infinity())?;
    let lap = laplace_beltrami(model, &field)?;
    for k in lap.interior_nodes() {
        let r = grid.node_radius(k);
        let tol = corrector_tol(&grid, r);
        if lap.values()[k] > tol {
            return Err(Error::Construction(format!(
                "-Delta_g F_g = {} < -{} at node {k} (r = {r})",
                -lap.values()[k],
                tol
            )));
        }
    }
    Ok(CorrectorField { field, n, bound_c })
}

/// Nodal tolerance for `-Delta_g F_g >= 0`: `5 h^2` relative to the size
/// `r^{-n}` of the individual second-order terms of `Delta_g r^{2-n}`.
pub fn corrector_tol<T: Real>(grid: &BallGrid<T>, r: T) -> T {
    default_tol(grid) * T::one().max(r.powi(-(grid.dim() as i32)))
}

/// Radial bumps `(1 - (|x - x0| / rho)^2)^3_+` used as test functions.
#[derive(Clone, Debug)]
pub struct BumpFamily<T> {
    pub centers: Vec<[T; 3]>,
    pub radius: T,
}

impl<T: Real> BumpFamily<T> {
    /// Eight bumps of radius `R/2` centred in `B_{R/4}`, centres drawn from
    /// a seeded generator. Supports stay inside `B_{3R/4}`.
    pub fn seeded(grid: &BallGrid<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.dim();
        let quarter = grid.radius() / T::lit(4.0);
        let mut centers = Vec::with_capacity(8);
        while centers.len() < 8 {
            let mut c = [T::zero(); 3];
            for ci in c.iter_mut().take(n) {
                *ci = T::lit(rng.gen_range(-1.0..1.0));
            }
            if c.iter().fold(T::zero(), |a, v| a + v.sq()) <= T::one() {
                centers.push(c.map(|v| v * quarter));
            }
        }
        BumpFamily { centers, radius: grid.radius() / T::lit(2.0) }
    }

    pub fn field(&self, grid: &Arc<BallGrid<T>>, j: usize) -> Result<ScalarField<T>> {
        let c = self.centers[j];
        let rho = self.radius;
        ScalarField::from_fn(grid.clone(), |x| {
            let d2 = x.iter().zip(&c).fold(T::zero(), |a, (xi, ci)| a + (*xi - *ci).sq());
            let s = T::one() - d2 / (rho * rho);
            if s > T::zero() {
                s * s * s
            } else {
                T::zero()
            }
        })
    }
}

impl<T: Real> BumpFamily<T> {
    /// Nodal `Delta_g phi_j` from the closed-form bump derivatives:
    /// `g^ij d_ij phi + (d_i g^ij + g^ij d_i ln sqrt g) d_j phi`.
    pub fn laplacian(&self, model: &ModelMetric<T>, grid: &BallGrid<T>, j: usize) -> Result<Vec<T>> {
        let n = grid.dim();
        let c = self.centers[j];
        let rho2 = self.radius * self.radius;
        let step = grid.spacing() * T::lit(1e-2);
        (0..grid.node_count())
            .map(|k| {
                let x = grid.point(k);
                let mut d = [T::zero(); 3];
                for i in 0..n {
                    d[i] = x[i] - c[i];
                }
                let s = T::one() - d.iter().fold(T::zero(), |a, v| a + v.sq()) / rho2;
                if s <= T::zero() {
                    return Ok(T::zero());
                }
                let six = T::lit(6.0);
                let grad: Vec<T> = (0..n).map(|i| -six * s * s * d[i] / rho2).collect();
                let hess = |i: usize, l: usize| {
                    let delta = if i == l { T::one() } else { T::zero() };
                    T::lit(24.0) * s * d[i] * d[l] / (rho2 * rho2) - six * s * s * delta / rho2
                };
                let m = model.metric_at(&x[..n])?;
                let gi = &m.g_inv;
                let mut acc = T::zero();
                for i in 0..n {
                    for l in 0..n {
                        acc += gi.get(i, l) * hess(i, l);
                    }
                }
                if !model.is_euclidean() {
                    // d_i g^{ij} = -g^{ia} (d_i g_ab) g^{bj};  d_i ln sqrt g = tr(g^-1 d_i g) / 2
                    let dg: Vec<_> = (0..n).map(|i| model.metric_derivative(&x[..n], i, step)).collect::<Result<_>>()?;
                    for jj in 0..n {
                        let mut b = T::zero();
                        for i in 0..n {
                            let mut half_tr = T::zero();
                            for a in 0..n {
                                for bb in 0..n {
                                    b -= gi.get(i, a) * dg[i].get(a, bb) * gi.get(bb, jj);
                                    half_tr += gi.get(a, bb) * dg[i].get(bb, a);
                                }
                            }
                            b += gi.get(i, jj) * half_tr / T::lit(2.0);
                        }
                        acc += b * grad[jj];
                    }
                }
                Ok(acc)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyTerm {
    /// `int 2 |grad u|^2 phi`.
    pub lhs: f64,
    /// `int C u phi + int u^2 Delta_g phi`.
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub pass: bool,
    pub terms: Vec<EnergyTerm>,
    /// Smallest `C >= 0` for which every test function passes.
    pub fitted_c: f64,
    pub tol: f64,
}

fn require_admissible<T: Real>(op: &PolarOperator<T>, field: &ScalarField<T>) -> Result<()> {
    if let Some(k) = field.values().iter().position(|v| *v < T::zero()) {
        return Err(Error::Precondition(format!("field is negative at node {k}")));
    }
    let tol = default_tol(op.grid());
    let rep = check_superharmonic_bound_with(op, field, T::one(), tol)?;
    if !rep.pass {
        return Err(Error::Precondition(format!(
            "Delta_g u = {} < -1 at node {:?}",
            rep.worst_value, rep.worst_node
        )));
    }
    Ok(())
}

fn whole_ball<T: Real>(op: &PolarOperator<T>, integrand: &[T]) -> Result<T> {
    let g = op.grid();
    let sd = g.shell_densities(op.densities(), integrand, T::zero());
    g.integrate_shells(&sd, g.radius())
}

/// `int 2 |grad_g u|^2 phi <= int C u phi + int u^2 Delta_g phi` for every
/// test function of the family.
pub fn energy_inequality_check<T: Real>(
    model: &ModelMetric<T>,
    field: &ScalarField<T>,
    c: T,
    bumps: &BumpFamily<T>,
) -> Result<EnergyReport> {
    let op = PolarOperator::new(model, field.grid())?;
    require_admissible(&op, field)?;
    let grid = field.grid();
    let grad = op.gradient_energy(field.values(), field.origin(), field.is_piecewise());
    let u = field.values();
    let tol = default_tol(grid);
    let mut terms = Vec::new();
    let mut fitted = T::zero();
    for j in 0..bumps.centers.len() {
        let phi = bumps.field(grid, j)?;
        let lap_phi = bumps.laplacian(model, grid, j)?;
        let p = phi.values();
        let lhs_i: Vec<T> = (0..u.len()).map(|k| T::lit(2.0) * grad[k] * p[k]).collect();
        let up: Vec<T> = (0..u.len()).map(|k| u[k] * p[k]).collect();
        let u2l: Vec<T> = (0..u.len()).map(|k| u[k] * u[k] * lap_phi[k]).collect();
        let lhs = whole_ball(&op, &lhs_i)?;
        let int_up = whole_ball(&op, &up)?;
        let int_u2l = whole_ball(&op, &u2l)?;
        let rhs = c * int_up + int_u2l;
        let scale = lhs.abs() + (c * int_up).abs() + int_u2l.abs();
        let pass = lhs <= rhs + tol * scale;
        let need = lhs - int_u2l;
        if int_up > T::zero() {
            fitted = fitted.max(need / int_up);
        } else if need > tol * scale {
            fitted = T::infinity();
        }
        terms.push(EnergyTerm { lhs: lhs.to_f64_lossy(), rhs: rhs.to_f64_lossy(), pass });
    }
    Ok(EnergyReport {
        pass: terms.iter().all(|t| t.pass),
        terms,
        fitted_c: fitted.to_f64_lossy(),
        tol: tol.to_f64_lossy(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectorEnergyReport {
    /// `int_{B_{delta/4}} |grad_g u|^2 F_g dV_g`.
    pub lhs: f64,
    /// `int_{B_{delta/2} \ B_{delta/4}} u^2 dV_g`.
    pub annulus: f64,
    /// Smallest `C` with `lhs <= C + C * annulus`.
    pub rhs_constant: f64,
}

pub fn corrector_energy_bound<T: Real>(
    model: &ModelMetric<T>,
    field: &ScalarField<T>,
    corrector: &CorrectorField<T>,
    delta: T,
) -> Result<CorrectorEnergyReport> {
    let op = PolarOperator::new(model, field.grid())?;
    require_admissible(&op, field)?;
    let g = field.grid();
    let grad = op.gradient_energy(field.values(), field.origin(), field.is_piecewise());
    let f = corrector.field.values();
    let u = field.values();
    let weighted: Vec<T> = (0..u.len()).map(|k| grad[k] * f[k]).collect();
    let u2: Vec<T> = u.iter().map(|v| v.sq()).collect();
    let sd_w = g.shell_densities(op.densities(), &weighted, T::zero());
    let sd_u = g.shell_densities(op.densities(), &u2, T::zero());
    let q = delta / T::lit(4.0);
    let lhs = g.integrate_shells(&sd_w, q)?;
    let annulus = g.integrate_shells(&sd_u, delta / T::lit(2.0))? - g.integrate_shells(&sd_u, q)?;
    let c = lhs / (T::one() + annulus);
    Ok(CorrectorEnergyReport {
        lhs: lhs.to_f64_lossy(),
        annulus: annulus.to_f64_lossy(),
        rhs_constant: c.to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, r: f64, n_r: usize, n_ang: usize) -> Arc<BallGrid<f64>> {
        Arc::new(BallGrid::build(n, r, n_r, n_ang).unwrap())
    }

    fn flat(n: usize) -> ModelMetric<f64> {
        ModelMetric::euclidean(n).unwrap()
    }

    fn masked(f: ScalarField<f64>) -> ScalarField<f64> {
        let mask = interface_mask(f.grid(), f.values(), f.origin());
        f.with_mask(mask).unwrap().piecewise()
    }

    fn pos(v: f64) -> f64 {
        if v > 1e-12 {
            v
        } else {
            0.0
        }
    }

    #[test]
    fn laplacian_of_r_squared_is_four() {
        let g = grid(2, 1.0, 64, 64);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let lap = laplace_beltrami(&flat(2), &u).unwrap();
        for k in lap.interior_nodes() {
            assert!((lap.values()[k] - 4.0).abs() < 0.04);
        }
        assert!((lap.origin() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn laplacian_of_linear_function_vanishes_next_to_center() {
        for n in [2, 3] {
            let g = grid(n, 1.0, 32, 32);
            let u = ScalarField::from_fn(g.clone(), |x| x[0]).unwrap();
            let lap = laplace_beltrami(&flat(n), &u).unwrap();
            for d in 0..g.n_dirs() {
                assert!(lap.values()[g.node(0, d)].abs() < 1e-6, "n={n}");
            }
        }
    }

    #[test]
    fn laplacian_of_r_squared_on_sphere() {
        let model = ModelMetric::space_form(2, 1.0).unwrap();
        let g = grid(2, 1.0, 64, 64);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let lap = laplace_beltrami(&model, &u).unwrap();
        let i = g.snap_shell(0.5).unwrap();
        let expect = 2.0 + 2.0 * 0.5 / 0.5f64.tan();
        assert!((expect - 3.8305).abs() < 1e-4);
        for d in 0..g.n_dirs() {
            let v = lap.values()[g.node(i, d)];
            assert!((v - expect).abs() < 0.01 * expect, "{v}");
        }
    }

    #[test]
    fn flat_laplacian_exact_on_quadratics() {
        for n in [2, 3] {
            let g = grid(n, 1.0, 32, 32);
            let u = ScalarField::from_fn(g.clone(), |x| {
                let z = if n == 3 { x[2] } else { 0.0 };
                0.5 + x[0] - 2.0 * x[1] + 3.0 * x[0] * x[1] - x[0] * x[0] + 0.5 * x[1] * x[1] + z * z - x[1] * z
            })
            .unwrap();
            let expect = -2.0 + 1.0 + if n == 3 { 2.0 } else { 0.0 };
            let lap = laplace_beltrami(&flat(n), &u).unwrap();
            let worst = lap.values().iter().fold(0.0f64, |m, v| m.max((v - expect).abs()));
            assert!(worst <= 1e-6, "n={n} worst={worst}");
        }
    }

    #[test]
    fn gradient_energy_of_linear_function() {
        for n in [2, 3] {
            let g = grid(n, 1.0, 32, 32);
            let u = ScalarField::from_fn(g.clone(), |x| x[0]).unwrap();
            let e = gradient_energy(&flat(n), &u).unwrap();
            for v in e.values() {
                assert!((v - 1.0).abs() < 1e-6);
            }
            assert!((e.origin() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_energy_of_homogeneous_harmonic() {
        let g = grid(2, 1.0, 64, 64);
        let u = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] * x[1]).unwrap();
        let e = gradient_energy(&flat(2), &u).unwrap();
        for k in 0..g.node_count() {
            let r = g.node_radius(k);
            assert!((e.values()[k] - 4.0 * r * r).abs() <= 0.01 * 4.0 * r * r);
        }
    }

    #[test]
    fn gradient_energy_on_sphere_matches_inverse_metric() {
        let model = ModelMetric::space_form(2, 1.0).unwrap();
        let g = grid(2, 1.0, 80, 64);
        let u = ScalarField::from_fn(g.clone(), |x| x[0]).unwrap();
        let e = gradient_energy(&model, &u).unwrap();
        let i = g.snap_shell(0.8).unwrap();
        // radial point: g^11 = 1
        assert!((e.values()[g.node(i, 0)] - 1.0).abs() < 1e-4);
        // tangential point: g^11 = 1/f^2 != 1
        let x = g.point(g.node(i, 16));
        let oracle = model.metric_at(&x[..2]).unwrap().g_inv.get(0, 0);
        let v = e.values()[g.node(i, 16)];
        assert!((oracle - 1.0).abs() > 0.1);
        assert!((v - oracle).abs() < 1e-3 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn gradient_energy_matches_cartesian_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = ModelMetric::space_form(2, -1.0).unwrap();
        let g = grid(2, 1.0, 64, 64);
        for _ in 0..5 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = move |x: &[f64]| a[0] * x[0] + a[1] * (2.0 * x[1]).sin() + a[2] * x[0] * x[1] + a[3] * (x[0] - x[1]).cos() + a[4] * x[1];
            let u = ScalarField::from_fn(g.clone(), &f).unwrap();
            let e = gradient_energy(&model, &u).unwrap();
            for k in (0..g.node_count()).step_by(37) {
                let p = g.point(k);
                let h = 1e-5;
                let d0 = (f(&[p[0] + h, p[1]]) - f(&[p[0] - h, p[1]])) / (2.0 * h);
                let d1 = (f(&[p[0], p[1] + h]) - f(&[p[0], p[1] - h])) / (2.0 * h);
                let gi = model.metric_at(&p[..2]).unwrap().g_inv;
                let oracle = gi.get(0, 0) * d0 * d0 + 2.0 * gi.get(0, 1) * d0 * d1 + gi.get(1, 1) * d1 * d1;
                let v = e.values()[k];
                assert!((v - oracle).abs() <= 0.01 * oracle.max(0.1), "{v} vs {oracle}");
            }
        }
    }

    #[test]
    fn divergence_theorem_on_curved_metrics() {
        for (n, kappa) in [(2, 1.0), (3, -1.0), (3, 1.0)] {
            let model = ModelMetric::space_form(n, kappa).unwrap();
            let g = grid(n, 1.0, 64, if n == 2 { 64 } else { 32 });
            let f = |x: &[f64]| x[0] + 0.5 * x[0] * x[1] + x[1] * x[1] * x[1] + (x[0] * x[0]).cos();
            let u = ScalarField::from_fn(g.clone(), f).unwrap();
            let op = PolarOperator::new(&model, &g).unwrap();
            let lap = op.laplacian(u.values(), u.origin(), false);
            for r in [0.5, 0.75] {
                let i = g.snap_shell(r).unwrap();
                let vol = g.volume_integral(&model, &lap, g.shells()[i], 0.0).unwrap();
                let flux = op.normal_flux(u.values(), u.origin(), false, i);
                assert!((vol - flux).abs() <= 0.02 * flux.abs(), "n={n} r={r}: {vol} vs {flux}");
            }
        }
    }

    #[test]
    fn superharmonic_bound_examples() {
        let m = flat(2);
        let g = grid(2, 1.0, 64, 64);
        let tol = default_tol(&g);
        let plus = masked(ScalarField::from_fn(g.clone(), |x| pos(x[0])).unwrap());
        assert!(check_superharmonic_bound(&m, &plus, 0.0, tol).unwrap().pass);
        let quad = masked(ScalarField::from_fn(g.clone(), |x| {
            let p = pos(x[0]);
            p - 0.4 * p * p
        })
        .unwrap());
        assert!(check_superharmonic_bound(&m, &quad, 1.0, tol).unwrap().pass);
        let rep = check_superharmonic_bound(&m, &quad, 0.3, tol).unwrap();
        assert!(!rep.pass);
        assert!((rep.worst_value + 0.8).abs() < 1e-3, "{}", rep.worst_value);
        for n in [2, 3] {
            let g = grid(n, 1.0, 32, 32);
            let u = ScalarField::from_fn(g.clone(), |x| -x.iter().map(|v| v * v).sum::<f64>()).unwrap();
            let rep = check_superharmonic_bound(&flat(n), &u, 0.0, default_tol(&g)).unwrap();
            assert!(!rep.pass);
            assert!((rep.worst_value + 2.0 * n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn corrector_is_flat_kernel_in_euclidean_space() {
        let g = grid(3, 1.0, 32, 32);
        let c = build_corrector(&flat(3), g.clone()).unwrap();
        for k in 0..g.node_count() {
            assert_eq!(c.field.values()[k], 1.0 / g.node_radius(k));
        }
        assert_eq!(c.bound_c, 0.0);
    }

    #[test]
    fn corrector_is_one_in_the_plane() {
        let g = grid(2, 1.0, 32, 32);
        let model = ModelMetric::space_form(2, 1.0).unwrap();
        let c = build_corrector(&model, g.clone()).unwrap();
        assert!(c.field.values().iter().all(|v| *v == 1.0));
        assert_eq!(c.field.origin(), 1.0);
    }

    #[test]
    fn corrector_on_rescaled_sphere() {
        // closed form on the sphere: F_g = t cot(t r)
        let t = 0.25;
        let model = ModelMetric::space_form(3, 1.0).unwrap().rescale(t).unwrap();
        let mut cs = Vec::new();
        for n_r in [32, 64] {
            let g = grid(3, 1.0, n_r, 32);
            let c = build_corrector(&model, g.clone()).unwrap();
            for k in (0..g.node_count()).step_by(101) {
                let r = g.node_radius(k);
                let oracle = t / (t * r).tan();
                assert!((c.field.values()[k] - oracle).abs() < 1e-10 * oracle, "{r}");
                assert!(c.field.values()[k] >= 0.5 / r);
            }
            cs.push(c.bound_c);
        }
        // |F_1| = 1/r - t cot(t r) ~ t^2 r / 3
        assert!((cs[0] - 1.0 / 3.0).abs() < 0.02, "{cs:?}");
        assert!((cs[1] - cs[0]).abs() <= 0.2 * cs[0]);
    }

    #[test]
    fn corrector_fails_past_the_half_kernel_radius() {
        // cot r < 1/(2r) beyond r ~ 1.166
        let model = ModelMetric::space_form(3, 1.0).unwrap();
        let g = grid(3, 1.4, 32, 32);
        assert!(matches!(build_corrector(&model, g), Err(Error::Construction(_))));
    }

    #[test]
    fn energy_inequality_examples() {
        let m = flat(2);
        let g = grid(2, 1.0, 64, 64);
        let bumps = BumpFamily::seeded(&g, 1);
        let zero = ScalarField::zeros(g.clone());
        let rep = energy_inequality_check(&m, &zero, 4.0, &bumps).unwrap();
        assert!(rep.pass);
        assert!(rep.terms.iter().all(|t| t.lhs == 0.0 && t.rhs == 0.0));
        let plus = masked(ScalarField::from_fn(g.clone(), |x| pos(x[0])).unwrap());
        let rep = energy_inequality_check(&m, &plus, 4.0, &bumps).unwrap();
        assert!(rep.pass, "{rep:?}");
        let sq = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let rep = energy_inequality_check(&m, &sq, 0.0, &bumps).unwrap();
        let fitted = rep.fitted_c;
        assert!(rep.pass && fitted <= 0.0, "{rep:?}");
        let neg = ScalarField::from_fn(g.clone(), |x| x[0]).unwrap();
        assert!(matches!(energy_inequality_check(&m, &neg, 4.0, &bumps), Err(Error::Precondition(_))));
    }

    #[test]
    fn corrector_energy_examples() {
        let m = flat(3);
        let mut cs = Vec::new();
        for n_r in [32, 64] {
            let g = grid(3, 1.0, n_r, 32);
            let c = build_corrector(&m, g.clone()).unwrap();
            let zero = ScalarField::zeros(g.clone());
            let rep = corrector_energy_bound(&m, &zero, &c, 1.0).unwrap();
            assert_eq!(rep.lhs, 0.0);
            let plus = masked(ScalarField::from_fn(g.clone(), |x| pos(x[0])).unwrap());
            let rep = corrector_energy_bound(&m, &plus, &c, 1.0).unwrap();
            // int_{B_rho, x1 > 0} |x|^{-1} = pi rho^2
            assert!((rep.lhs - PI / 16.0).abs() < 0.01 * PI / 16.0, "{rep:?}");
            cs.push(rep.rhs_constant);
        }
        assert!((cs[1] - cs[0]).abs() <= 0.1 * cs[0]);

        // the flat formula has Delta_g u < -1 on the unit ball of the sphere;
        // the metric rescaled by t = 1/4 keeps it admissible
        let model = ModelMetric::space_form(3, 1.0).unwrap().rescale(0.25).unwrap();
        let mut cs = Vec::new();
        for n_r in [32, 64] {
            let g = grid(3, 1.0, n_r, 32);
            let c = build_corrector(&model, g.clone()).unwrap();
            let u = masked(
                ScalarField::from_fn(g.clone(), |x| {
                    let p = pos(x[0]);
                    p - 0.4 * p * p
                })
                .unwrap(),
            );
            cs.push(corrector_energy_bound(&model, &u, &c, 1.0).unwrap().rhs_constant);
        }
        assert!(cs[0].is_finite() && (cs[1] - cs[0]).abs() <= 0.15 * cs[0], "{cs:?}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = grid(3, 1.0, 16, 16);
        let u = ScalarField::from_fn(g.clone(), |x| (x[0] * 3.1).sin() + x[2] / 7.0).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("r,theta,phi,value\n"));
        assert_eq!(text.lines().count(), g.node_count() + 2);
        let back = ScalarField::read_csv(g.clone(), &buf[..]).unwrap();
        assert_eq!(back.values(), u.values());
        assert_eq!(back.origin(), u.origin());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn gradient_energy_nonnegative(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -3.0..3.0f64, s in 0.1..0.9f64) {
                let g = grid(2, 1.0, 16, 16);
                let u = ScalarField::from_fn(g.clone(), |x| (a * x[0] + b * x[1] * x[1] - s).max(0.0) + c * (x[0] * x[1]).sin()).unwrap();
                let e = gradient_energy(&ModelMetric::space_form(2, -1.0).unwrap(), &u).unwrap();
                prop_assert!(e.values().iter().all(|v| *v >= 0.0));
            }
        }
    }
}
