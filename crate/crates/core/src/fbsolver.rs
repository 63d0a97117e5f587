//! Two-phase free boundary solver on geodesic balls and the Lipschitz
//! estimator near the free boundary.
//!
//! `Delta_g u = f1 1{u > 0} - f2 1{u < 0}` is solved by a sign-pattern fixed
//! point: each outer step freezes the phases of the previous iterate and
//! solves the linear Dirichlet problem by red-black over-relaxation on a
//! compact discretization of the polar operator. Radial lines use 3-point
//! differences through the center, polar rings (n = 3) 3-point differences
//! on the Gauss-Legendre angles continued across the poles, and uniform
//! angles the trigonometric 3-point formulas, which are exact on the first
//! harmonic. The center obeys `2n (mean of shell 0 - u0) / h^2 = f(0)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ballgrid::BallGrid;
use crate::error::{Error, Result};
use crate::fields::{interface_mask, ScalarField, INTERIOR_MIN_SPACINGS};
use crate::geometry::ModelMetric;
use crate::operator::PolarOperator;
use crate::pairs::{Pair, PairClass, PairFamily};
use crate::scalar::Real;
use crate::stencil::sign_of;

/// Default over-relaxation factor.
pub const DEFAULT_OMEGA: f64 = 1.5;
/// Sweeps between residual evaluations.
const CHECK_EVERY: usize = 16;
/// Node counts above which colour updates run in parallel.
const PARALLEL_MIN: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub omega: f64,
    /// Linear solves stop at `|residual|_inf <= tol * scale(f, h)`.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { omega: DEFAULT_OMEGA, tol: 1e-9, max_sweeps: 200_000, max_outer: 50 }
    }
}

/// Free boundary condition `G(|grad u+|, |grad u-|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FluxLaw {
    /// `a - b`.
    Difference,
    /// `a b - 1`.
    ProductMinusOne,
    /// `p a + q b + c`.
    Affine { p: f64, q: f64, c: f64 },
}

impl FluxLaw {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            FluxLaw::Difference => a - b,
            FluxLaw::ProductMinusOne => a * b - 1.0,
            FluxLaw::Affine { p, q, c } => p * a + q * b + c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoPhaseProblem<T> {
    pub model: ModelMetric<T>,
    pub grid: Arc<BallGrid<T>>,
    /// Dirichlet data on the outer shell, one value per direction.
    pub boundary: Vec<T>,
    /// Right-hand sides of the positive and negative phase.
    pub f1: ScalarField<T>,
    pub f2: ScalarField<T>,
    /// Declared bound `C` with `|f1|, |f2| <= C`.
    pub bound: T,
    pub flux: FluxLaw,
    pub options: SolverOptions,
}

impl<T: Real> TwoPhaseProblem<T> {
    /// Problem with boundary data `h` and sources `f1`, `f2` sampled from
    /// Cartesian functions; the declared bound is `max |f|`.
    pub fn new(
        model: ModelMetric<T>,
        grid: Arc<BallGrid<T>>,
        h: impl Fn(&[T]) -> T,
        f1: impl Fn(&[T]) -> T,
        f2: impl Fn(&[T]) -> T,
    ) -> Result<Self> {
        grid.check_model(&model)?;
        let n = grid.dim();
        let outer = grid.n_r() - 1;
        let boundary = (0..grid.n_dirs()).map(|d| h(&grid.point(grid.node(outer, d))[..n])).collect::<Vec<T>>();
        if boundary.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite boundary data".into()));
        }
        let f1 = ScalarField::from_fn(grid.clone(), f1)?;
        let f2 = ScalarField::from_fn(grid.clone(), f2)?;
        let bound = sup(&f1).max(sup(&f2));
        Ok(TwoPhaseProblem { model, grid, boundary, f1, f2, bound, flux: FluxLaw::Difference, options: SolverOptions::default() })
    }

    /// Constant sources.
    pub fn constant(model: ModelMetric<T>, grid: Arc<BallGrid<T>>, h: impl Fn(&[T]) -> T, f1: T, f2: T) -> Result<Self> {
        Self::new(model, grid, h, move |_| f1, move |_| f2)
    }

    pub fn with_bound(mut self, bound: T) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_flux(mut self, flux: FluxLaw) -> Self {
        self.flux = flux;
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Same problem with data and sources multiplied by `lambda`.
    pub fn scaled(&self, lambda: T) -> Self {
        TwoPhaseProblem {
            boundary: self.boundary.iter().map(|v| *v * lambda).collect(),
            f1: self.f1.scaled(lambda),
            f2: self.f2.scaled(lambda),
            bound: self.bound * lambda.abs(),
            ..self.clone()
        }
    }

    /// `max(|f|_inf, |h|_inf / R^2)`, the unit of residuals.
    pub fn scale(&self) -> T {
        let h = self.boundary.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        let r2 = self.grid.radius().sq();
        sup(&self.f1).max(sup(&self.f2)).max(h / r2)
    }
}

fn sup<T: Real>(f: &ScalarField<T>) -> T {
    f.values().iter().fold(f.origin().abs(), |a, v| a.max(v.abs()))
}

#[derive(Clone, Debug)]
pub struct FreeBoundarySolution<T> {
    pub u: ScalarField<T>,
    /// Nodes with a neighbour of strictly opposite sign, or zero nodes
    /// between both phases.
    pub interface: Vec<bool>,
    /// Outer sign-pattern iterations (linear solves).
    pub iterations: usize,
    pub sweeps: usize,
    /// Final linear residual of each outer iteration, relative to the scale.
    pub residuals: Vec<f64>,
    /// `|Delta_g u - f|_inf` of the solved discrete equation over the
    /// nodes of each phase off the interface.
    pub phase_residual: (f64, f64),
    /// The same with the 5-point phase-respecting operator, over nodes at
    /// radius `>= 4h`; a consistency diagnostic between discretizations.
    pub consistency_residual: (f64, f64),
    /// `10 h^2 scale(f, h)`.
    pub residual_tol: f64,
    pub converged: bool,
    /// Nodes whose phase cycled between iterations; they carry zero source.
    pub tie_nodes: usize,
    pub model: ModelMetric<T>,
    pub bound: T,
}

impl<T: Real> FreeBoundarySolution<T> {
    pub fn interface_count(&self) -> usize {
        self.interface.iter().filter(|f| **f).count()
    }

    pub fn residual_ok(&self) -> bool {
        self.phase_residual.0 <= self.residual_tol && self.phase_residual.1 <= self.residual_tol
    }

    /// `Err(NonConvergence)` for flagged solutions.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence(format!(
                "sign pattern not stationary after {} iterations ({} sweeps)",
                self.iterations, self.sweeps
            )))
        }
    }

    /// `(u+, u-) / max(1, C)`, a pair with `Delta_g u+- >= -1`.
    pub fn pair(&self) -> Result<Pair<T>> {
        let c = T::one().max(self.bound);
        let grid = self.u.grid().clone();
        let plus: Vec<T> = self.u.values().iter().map(|v| v.max(T::zero()) / c).collect();
        let minus: Vec<T> = self.u.values().iter().map(|v| (-*v).max(T::zero()) / c).collect();
        let o = self.u.origin();
        Pair::new(
            ScalarField::new(grid.clone(), plus, o.max(T::zero()) / c)?,
            ScalarField::new(grid, minus, (-o).max(T::zero()) / c)?,
            PairClass::DeltaGeMinusOne,
            PairFamily::Custom,
        )
    }

    /// Indices of the interface nodes.
    pub fn interface_nodes(&self) -> Vec<usize> {
        (0..self.interface.len()).filter(|k| self.interface[*k]).collect()
    }
}

/// Sparse row of the discrete operator; column `count` is the center.
#[derive(Clone, Debug, Default)]
struct Row<T> {
    cols: Vec<usize>,
    weights: Vec<T>,
    diag: T,
}

impl<T: Real> Row<T> {
    fn add(&mut self, col: usize, w: T) {
        match self.cols.iter().position(|c| *c == col) {
            Some(i) => self.weights[i] += w,
            None => {
                self.cols.push(col);
                self.weights.push(w);
            }
        }
    }

    fn off_diag(&self, u: &[T]) -> T {
        self.cols.iter().zip(&self.weights).fold(T::zero(), |a, (c, w)| a + *w * u[*c])
    }
}

/// 1-D stencil along one polar coordinate: `(prev, self, next)` columns with
/// first and second derivative weights.
struct Line<T> {
    cols: [usize; 3],
    d1: [T; 3],
    d2: [T; 3],
}

/// Matrix of the compact polar operator over all nodes plus the center.
struct CompactOperator<T> {
    rows: Vec<Row<T>>,
    /// Center row: `diag * u0 + sum w_d u(0, d)`.
    center: Row<T>,
    fixed: Vec<bool>,
    colours: [Vec<usize>; 2],
}

fn trig_line<T: Real>(prev: usize, k: usize, next: usize, step: T) -> Line<T> {
    let s = step.sin();
    let c = T::lit(2.0) * (T::one() - step.cos());
    Line {
        cols: [prev, k, next],
        d1: [-T::one() / (T::lit(2.0) * s), T::zero(), T::one() / (T::lit(2.0) * s)],
        d2: [T::one() / c, -T::lit(2.0) / c, T::one() / c],
    }
}

fn nonuniform_line<T: Real>(prev: usize, k: usize, next: usize, a: T, b: T) -> Line<T> {
    let two = T::lit(2.0);
    Line {
        cols: [prev, k, next],
        d1: [-b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b))],
        d2: [two / (a * (a + b)), -two / (a * b), two / (b * (a + b))],
    }
}

impl<T: Real> CompactOperator<T> {
    fn new(op: &PolarOperator<T>, grid: &BallGrid<T>) -> Self {
        let n = grid.dim();
        let count = grid.node_count();
        let centre = count;
        let h = grid.spacing();
        let na = grid.n_ang();
        let step = T::lit(2.0) * T::PI() / T::from_usize_lossy(na);
        let outer = grid.n_r() - 1;
        let line = |k: usize, axis: usize| -> Option<Line<T>> {
            let s = grid.shell_of(k);
            let d = grid.dir_of(k);
            match (axis, n) {
                (0, _) => {
                    if s == outer {
                        return None;
                    }
                    let prev = if s == 0 { centre } else { grid.node(s - 1, d) };
                    let next = grid.node(s + 1, d);
                    let two = T::lit(2.0);
                    Some(Line {
                        cols: [prev, k, next],
                        d1: [-T::one() / (two * h), T::zero(), T::one() / (two * h)],
                        d2: [T::one() / (h * h), -two / (h * h), T::one() / (h * h)],
                    })
                }
                (1, 2) => Some(trig_line(grid.node(s, (d + na - 1) % na), k, grid.node(s, (d + 1) % na), step)),
                (2, 3) => {
                    let (p, a) = (d / na, d % na);
                    Some(trig_line(
                        grid.node(s, p * na + (a + na - 1) % na),
                        k,
                        grid.node(s, p * na + (a + 1) % na),
                        step,
                    ))
                }
                (1, 3) => {
                    let (p, a) = (d / na, d % na);
                    let np = grid.n_pol();
                    let across = (a + na / 2) % na;
                    let th = grid.polar_angle(p);
                    let (prev, th_prev) = if p == 0 {
                        (grid.node(s, across), -th)
                    } else {
                        (grid.node(s, (p - 1) * na + a), grid.polar_angle(p - 1))
                    };
                    let (next, th_next) = if p + 1 == np {
                        (grid.node(s, p * na + across), T::lit(2.0) * T::PI() - th)
                    } else {
                        (grid.node(s, (p + 1) * na + a), grid.polar_angle(p + 1))
                    };
                    Some(nonuniform_line(prev, k, next, th - th_prev, th_next - th))
                }
                _ => None,
            }
        };
        let mut rows = Vec::with_capacity(count);
        let mut fixed = vec![false; count];
        for k in 0..count {
            let mut row = Row { cols: Vec::new(), weights: Vec::new(), diag: T::zero() };
            if grid.shell_of(k) == outer {
                fixed[k] = true;
                rows.push(row);
                continue;
            }
            let gi = op.inverse_polar_metric(k);
            let b = op.drift(k);
            let lines: Vec<Line<T>> = (0..n).map(|a| line(k, a).expect("interior line")).collect();
            let mut add = |col: usize, w: T| {
                if col == k {
                    row.diag += w;
                } else {
                    row.add(col, w);
                }
            };
            for a in 0..n {
                let l = &lines[a];
                for i in 0..3 {
                    add(l.cols[i], gi[a][a] * l.d2[i] + b[a] * l.d1[i]);
                }
            }
            for a in 0..n {
                for c in (a + 1)..n {
                    let coeff = T::lit(2.0) * gi[a][c];
                    if coeff == T::zero() {
                        continue;
                    }
                    for i in 0..3 {
                        let m = lines[a].cols[i];
                        let wa = lines[a].d1[i];
                        if wa == T::zero() || m == centre {
                            continue;
                        }
                        let lc = if m == k { line(k, c) } else { line(m, c) };
                        let lc = lc.unwrap_or_else(|| {
                            // outer-shell neighbour: angular stencils only
                            let mut l = line(grid.node(outer - 1, grid.dir_of(m)), c).expect("angular line");
                            for col in l.cols.iter_mut() {
                                *col = grid.node(outer, grid.dir_of(*col));
                            }
                            l
                        });
                        for j in 0..3 {
                            add(lc.cols[j], coeff * wa * lc.d1[j]);
                        }
                    }
                }
            }
            rows.push(row);
        }
        let mut center = Row { cols: Vec::new(), weights: Vec::new(), diag: T::zero() };
        let nn = T::lit(2.0) * T::from_usize_lossy(n) / (h * h);
        let total = (0..grid.n_dirs()).fold(T::zero(), |a, d| a + grid.angular_weight(d));
        for d in 0..grid.n_dirs() {
            center.add(grid.node(0, d), nn * grid.angular_weight(d) / total);
        }
        center.diag = -nn;
        let mut colours = [Vec::new(), Vec::new()];
        for k in 0..count {
            if fixed[k] {
                continue;
            }
            let s = grid.shell_of(k);
            let d = grid.dir_of(k);
            let parity = if n == 2 { s + d } else { s + d / na + d % na };
            colours[parity % 2].push(k);
        }
        CompactOperator { rows, center, fixed, colours }
    }

    fn residual_inf(&self, u: &[T], rhs: &[T]) -> T {
        let count = self.rows.len();
        let mut worst = (self.center.diag * u[count] + self.center.off_diag(u) - rhs[count]).abs();
        for k in 0..count {
            if self.fixed[k] {
                continue;
            }
            let r = &self.rows[k];
            worst = worst.max((r.diag * u[k] + r.off_diag(u) - rhs[k]).abs());
        }
        worst
    }

    /// Red-black over-relaxation until `|A u - rhs|_inf <= target`.
    fn relax(&self, u: &mut [T], rhs: &[T], omega: T, target: T, max_sweeps: usize) -> (usize, T) {
        let count = self.rows.len();
        let mut sweeps = 0;
        let mut res = self.residual_inf(u, rhs);
        let mut buf: Vec<T> = Vec::new();
        while res > target && sweeps < max_sweeps {
            for _ in 0..CHECK_EVERY {
                for colour in &self.colours {
                    {
                        let cur: &[T] = u;
                        let update = |k: &usize| {
                            let r = &self.rows[*k];
                            let gs = (rhs[*k] - r.off_diag(cur)) / r.diag;
                            cur[*k] + omega * (gs - cur[*k])
                        };
                        buf.clear();
                        if count >= PARALLEL_MIN {
                            colour.par_iter().map(update).collect_into_vec(&mut buf);
                        } else {
                            buf.extend(colour.iter().map(update));
                        }
                    }
                    for (k, v) in colour.iter().zip(&buf) {
                        u[*k] = *v;
                    }
                }
                let c = &self.center;
                let gs = (rhs[count] - c.off_diag(u)) / c.diag;
                u[count] = u[count] + omega * (gs - u[count]);
                sweeps += 1;
            }
            res = self.residual_inf(u, rhs);
            if !res.is_finite() {
                break;
            }
        }
        (sweeps, res)
    }
}

fn sign_pattern<T: Real>(u: &[T], eps: T) -> Vec<i8> {
    u.iter()
        .map(|v| {
            if v.abs() <= eps {
                0
            } else {
                sign_of(*v)
            }
        })
        .collect()
}

/// Solve the two-phase problem; nonconvergent sign iterations return the
/// last iterate with `converged = false`.
pub fn two_phase_solve<T: Real>(problem: &TwoPhaseProblem<T>) -> Result<FreeBoundarySolution<T>> {
    let grid = problem.grid.clone();
    if problem.boundary.len() != grid.n_dirs() {
        return Err(Error::Config(format!("boundary data has {} values, expected {}", problem.boundary.len(), grid.n_dirs())));
    }
    let slack = T::one() + T::lit(1e-12);
    if sup(&problem.f1) > problem.bound * slack || sup(&problem.f2) > problem.bound * slack {
        return Err(Error::Precondition(format!("sources exceed the declared bound {}", problem.bound)));
    }
    let opts = problem.options;
    if !(opts.omega > 0.0 && opts.omega < 2.0) {
        return Err(Error::Config(format!("over-relaxation factor {} outside (0, 2)", opts.omega)));
    }
    let op = PolarOperator::new(&problem.model, &grid)?;
    let a = CompactOperator::new(&op, &grid);
    let count = grid.node_count();
    let outer = grid.n_r() - 1;
    let scale = problem.scale();
    let unit = if scale > T::zero() { scale } else { T::one() };
    let target = T::lit(opts.tol) * unit;
    let eps = T::lit(1e-9) * unit * grid.radius().sq();

    // initial iterate: boundary data on the outer shell, zero inside
    let mut u = vec![T::zero(); count + 1];
    for d in 0..grid.n_dirs() {
        u[grid.node(outer, d)] = problem.boundary[d];
    }
    let f_at = |k: usize, s: i8| -> T {
        let (f1, f2) = if k == count {
            (problem.f1.origin(), problem.f2.origin())
        } else {
            (problem.f1.values()[k], problem.f2.values()[k])
        };
        match s {
            1 => f1,
            -1 => -f2,
            _ => T::zero(),
        }
    };
    let mut patterns: Vec<Vec<i8>> = vec![vec![0; count + 1]];
    // nodes caught in a sign cycle, treated as lying on F(u) (zero source)
    let mut ties = vec![false; count + 1];
    let mut residuals = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer {
        let pattern = patterns.last().expect("pattern").clone();
        let rhs: Vec<T> = (0..=count).map(|k| f_at(k, pattern[k])).collect();
        let (s, res) = a.relax(&mut u, &rhs, T::lit(opts.omega), target, opts.max_sweeps);
        iterations += 1;
        sweeps += s;
        residuals.push((res / unit).to_f64_lossy());
        if !res.is_finite() {
            return Err(Error::Numerical("relaxation diverged".into()));
        }
        if res > target {
            break;
        }
        let mut next = sign_pattern(&u, eps);
        for (v, t) in next.iter_mut().zip(&ties) {
            if *t {
                *v = 0;
            }
        }
        let next_rhs: Vec<T> = (0..=count).map(|k| f_at(k, next[k])).collect();
        if next_rhs == rhs || next == pattern {
            converged = true;
            break;
        }
        if let Some(j) = patterns.iter().position(|p| *p == next) {
            for k in 0..=count {
                if patterns[j..].iter().any(|p| p[k] != next[k]) {
                    ties[k] = true;
                    next[k] = 0;
                }
            }
        }
        patterns.push(next);
    }
    let tie_nodes = ties[..count].iter().filter(|t| **t).count();
    let compact_residual = compact_residuals(&a, &u, &grid, f_at, eps);
    let origin = u[count];
    u.truncate(count);
    let signed: Vec<T> = u.iter().map(|v| if v.abs() <= eps { T::zero() } else { *v }).collect();
    let field = ScalarField::new(grid.clone(), signed, if origin.abs() <= eps { T::zero() } else { origin })?;
    let interface = free_boundary_nodes(&grid, field.values(), field.origin());
    let consistency_residual = consistency_residuals(&op, problem, &field)?;
    let residual_tol = (T::lit(10.0) * grid.spacing().sq() * unit).to_f64_lossy();
    Ok(FreeBoundarySolution {
        u: field,
        interface,
        iterations,
        sweeps,
        residuals,
        phase_residual: compact_residual,
        consistency_residual,
        residual_tol,
        converged,
        tie_nodes,
        model: problem.model.clone(),
        bound: problem.bound,
    })
}

/// Nodes with a neighbour of strictly opposite sign, and zero nodes with
/// neighbours of both signs.
fn free_boundary_nodes<T: Real>(grid: &BallGrid<T>, u: &[T], origin: T) -> Vec<bool> {
    (0..grid.node_count())
        .map(|k| {
            let signs: Vec<i8> = crate::fields::neighbours(grid, k)
                .into_iter()
                .map(|nb| sign_of(nb.map_or(origin, |j| u[j])))
                .collect();
            match sign_of(u[k]) {
                0 => signs.contains(&1) && signs.contains(&-1),
                s => signs.contains(&-s),
            }
        })
        .collect()
}

fn compact_residuals<T: Real>(
    a: &CompactOperator<T>,
    u: &[T],
    grid: &BallGrid<T>,
    f_at: impl Fn(usize, i8) -> T,
    eps: T,
) -> (f64, f64) {
    let count = grid.node_count();
    let origin = u[count];
    let mask = interface_mask(grid, &u[..count], origin);
    let mut out = (0.0f64, 0.0f64);
    for k in 0..count {
        if a.fixed[k] || mask[k] || u[k].abs() <= eps {
            continue;
        }
        let r = &a.rows[k];
        let sg = sign_of(u[k]);
        let e = (r.diag * u[k] + r.off_diag(u) - f_at(k, sg)).abs().to_f64_lossy();
        if sg > 0 {
            out.0 = out.0.max(e);
        } else {
            out.1 = out.1.max(e);
        }
    }
    out
}

fn consistency_residuals<T: Real>(op: &PolarOperator<T>, problem: &TwoPhaseProblem<T>, u: &ScalarField<T>) -> Result<(f64, f64)> {
    let grid = u.grid();
    let lap = op.laplacian(u.values(), u.origin(), true);
    let mask = interface_mask(grid, u.values(), u.origin());
    let outer = grid.n_r() - 1;
    let inner = grid.spacing() * T::from_usize_lossy(INTERIOR_MIN_SPACINGS) * (T::one() - T::lit(1e-12));
    let mut out = (0.0f64, 0.0f64);
    for k in 0..grid.node_count() {
        let s = grid.shell_of(k);
        if mask[k] || s == outer || grid.shells()[s] < inner {
            continue;
        }
        let v = u.values()[k];
        if v > T::zero() {
            out.0 = out.0.max((lap[k] - problem.f1.values()[k]).abs().to_f64_lossy());
        } else if v < T::zero() {
            out.1 = out.1.max((lap[k] + problem.f2.values()[k]).abs().to_f64_lossy());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzReport {
    /// `sup |u(x)| / dist_g(x, F(u))` over nodes of `B_K` with distance at
    /// most `R/4`.
    pub sup_ratio: f64,
    pub argmax_node: Option<usize>,
    pub argmax_point: Vec<f64>,
    pub argmax_distance: f64,
    /// Square root of the smallest metric eigenvalue on `B_R`.
    pub distance_factor: f64,
    pub vacuous: bool,
}

/// Points where `u` vanishes: zero nodes next to a nonzero node and the
/// linear interpolation of `u` along grid edges with a strict sign change.
fn zero_crossings<T: Real>(grid: &BallGrid<T>, u: &[T], origin: T) -> Vec<[T; 3]> {
    let n = grid.dim();
    let mut out = Vec::new();
    let centre = [T::zero(); 3];
    if origin == T::zero() && u.iter().take(grid.n_dirs()).any(|v| *v != T::zero()) {
        out.push(centre);
    }
    for k in 0..grid.node_count() {
        let uk = u[k];
        let xk = grid.point(k);
        if uk == T::zero() {
            if crate::fields::neighbours(grid, k).into_iter().any(|nb| nb.map_or(origin, |j| u[j]) != T::zero()) {
                out.push(xk);
            }
            continue;
        }
        for nb in crate::fields::neighbours(grid, k) {
            let (uj, xj) = match nb {
                Some(j) if j > k => (u[j], grid.point(j)),
                None => (origin, centre),
                _ => continue,
            };
            if uj != T::zero() && uj.signum() != uk.signum() {
                let s = uk / (uk - uj);
                let mut p = [T::zero(); 3];
                for i in 0..n {
                    p[i] = xk[i] + s * (xj[i] - xk[i]);
                }
                out.push(p);
            }
        }
    }
    out
}

/// Lipschitz ratio of `u` near its free boundary inside `B_K`.
pub fn lipschitz_ratio<T: Real>(solution: &FreeBoundarySolution<T>, k_radius: T) -> Result<LipschitzReport> {
    let u = &solution.u;
    let grid = u.grid();
    if !(k_radius > T::zero() && k_radius < grid.radius()) {
        return Err(Error::Domain(format!("compact radius {k_radius} outside (0, {})", grid.radius())));
    }
    let (lo, _) = solution.model.eigen_range(grid.radius())?;
    let factor = lo.sqrt();
    let crossings = zero_crossings(grid, u.values(), u.origin());
    let mut report = LipschitzReport {
        sup_ratio: 0.0,
        argmax_node: None,
        argmax_point: vec![],
        argmax_distance: 0.0,
        distance_factor: factor.to_f64_lossy(),
        vacuous: crossings.is_empty(),
    };
    if crossings.is_empty() {
        return Ok(report);
    }
    let n = grid.dim();
    let limit = grid.radius() / T::lit(4.0);
    let nodes: Vec<usize> = (0..grid.node_count()).filter(|k| grid.node_radius(*k) <= k_radius).collect();
    let best: Vec<Option<(T, T)>> = nodes
        .par_iter()
        .map(|&k| {
            let v = u.values()[k].abs();
            if v == T::zero() {
                return None;
            }
            let x = grid.point(k);
            let d2 = crossings.iter().fold(T::infinity(), |acc, p| {
                let mut s = T::zero();
                for i in 0..n {
                    s += (x[i] - p[i]).sq();
                }
                acc.min(s)
            });
            let d = d2.sqrt() * factor;
            if d > limit || d == T::zero() {
                return None;
            }
            Some((v / d, d))
        })
        .collect();
    let mut sup = T::zero();
    for (idx, b) in best.iter().enumerate() {
        if let Some((ratio, d)) = b {
            if *ratio > sup {
                sup = *ratio;
                let k = nodes[idx];
                report.argmax_node = Some(k);
                report.argmax_point = grid.point(k)[..n].iter().map(|v| v.to_f64_lossy()).collect();
                report.argmax_distance = d.to_f64_lossy();
            }
        }
    }
    report.sup_ratio = sup.to_f64_lossy();
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct FluxSample {
    pub node: usize,
    pub point: Vec<f64>,
    pub grad_plus: f64,
    pub grad_minus: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FluxReport {
    pub law: FluxLaw,
    pub samples: Vec<FluxSample>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// `G(|grad_g u+|, |grad_g u-|)` at the interface nodes from one-sided
/// limits of each phase. Diagnostic only.
pub fn flux_balance_check<T: Real>(solution: &FreeBoundarySolution<T>, law: FluxLaw) -> Result<FluxReport> {
    let u = &solution.u;
    let grid = u.grid();
    let n = grid.dim();
    let op = PolarOperator::new(&solution.model, grid)?;
    let plus: Vec<T> = u.values().iter().map(|v| v.max(T::zero())).collect();
    let minus: Vec<T> = u.values().iter().map(|v| (-*v).max(T::zero())).collect();
    let gp = op.one_sided_gradient_sq(&plus, u.origin().max(T::zero()));
    let gm = op.one_sided_gradient_sq(&minus, (-u.origin()).max(T::zero()));
    let outer = grid.n_r() - 1;
    let samples: Vec<FluxSample> = solution
        .interface_nodes()
        .into_iter()
        .filter(|k| grid.shell_of(*k) != outer)
        .map(|k| {
            let a = gp[k].sqrt().to_f64_lossy();
            let b = gm[k].sqrt().to_f64_lossy();
            FluxSample {
                node: k,
                point: grid.point(k)[..n].iter().map(|v| v.to_f64_lossy()).collect(),
                grad_plus: a,
                grad_minus: b,
                value: law.eval(a, b),
            }
        })
        .collect();
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for s in &samples {
        min = min.min(s.value);
        max = max.max(s.value);
        sum += s.value;
    }
    let mean = if samples.is_empty() { 0.0 } else { sum / samples.len() as f64 };
    if samples.is_empty() {
        min = 0.0;
        max = 0.0;
    }
    Ok(FluxReport { law, samples, min, max, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, r: f64, scale: usize) -> Arc<BallGrid<f64>> {
        Arc::new(BallGrid::build_default(n, r, scale).unwrap())
    }

    fn x1(x: &[f64]) -> f64 {
        x[0]
    }

    #[test]
    fn harmonic_extension_of_x1() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g.clone(), x1, 0.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        assert!(s.converged && s.residual_ok());
        assert!(s.consistency_residual.0.max(s.consistency_residual.1) <= s.residual_tol);
        let err = (0..g.node_count()).fold(0.0f64, |a, k| a.max((s.u.values()[k] - g.point(k)[0]).abs()));
        assert!(err < 1e-6, "{err}");
        let lr = lipschitz_ratio(&s, 0.9).unwrap();
        assert!((lr.sup_ratio - 1.0).abs() < 0.03, "{lr:?}");
    }

    fn sphere(n: usize) -> ModelMetric<f64> {
        ModelMetric::space_form(n, 1.0).unwrap()
    }

    #[test]
    fn curved_harmonic_solve_is_symmetric() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(sphere(2), g.clone(), x1, 0.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        assert!(s.converged && s.residual_ok(), "{:?} {}", s.phase_residual, s.residual_tol);
        // F(u) lies within one cell of the geodesic x1 = 0
        let h = g.spacing();
        for k in s.interface_nodes() {
            assert!(g.point(k)[0].abs() <= h.max(g.node_radius(k) * 2.0 * std::f64::consts::PI / g.n_ang() as f64));
        }
        assert!(s.interface_count() > 0);
    }

    #[test]
    fn nonnegative_data_stays_positive() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, |x| 1.0 + 0.5 * x[0], 0.0, 0.3).unwrap();
        let s = two_phase_solve(&p).unwrap();
        assert!(s.converged && s.iterations == 1);
        assert!(s.u.values().iter().all(|v| *v >= 0.0) && s.u.origin() >= 0.0);
        assert_eq!(s.interface_count(), 0);
        assert!(lipschitz_ratio(&s, 0.5).unwrap().vacuous);
    }

    #[test]
    fn maximum_principle() {
        let g = grid(2, 1.0, 1);
        let h = |x: &[f64]| (3.0 * x[1].atan2(x[0])).sin() + 0.3;
        let p = TwoPhaseProblem::constant(sphere(2), g.clone(), h, 0.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        let (lo, hi) = p.boundary.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(s.u.values().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn inhomogeneous_lipschitz_is_refinement_stable() {
        let ratio = |scale| {
            let g = grid(2, 1.0, scale);
            let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, x1, 0.2, 0.2).unwrap();
            let s = two_phase_solve(&p).unwrap();
            assert!(s.converged && s.residual_ok(), "{:?} {}", s.phase_residual, s.residual_tol);
            lipschitz_ratio(&s, 0.75).unwrap().sup_ratio
        };
        let (a, b) = (ratio(1), ratio(2));
        assert!(a.is_finite() && (a - b).abs() <= 0.1 * b, "{a} {b}");
    }

    #[test]
    fn linear_scaling_of_ratio() {
        let g = grid(2, 1.0, 1);
        let base = TwoPhaseProblem::constant(sphere(2), g, |x| x[0] + 0.3 * x[1], 0.0, 0.0).unwrap();
        let a = lipschitz_ratio(&two_phase_solve(&base).unwrap(), 0.75).unwrap();
        let b = lipschitz_ratio(&two_phase_solve(&base.scaled(2.0)).unwrap(), 0.75).unwrap();
        assert!((b.sup_ratio - 2.0 * a.sup_ratio).abs() <= 1e-6 * b.sup_ratio);
        assert_eq!(a.argmax_node, b.argmax_node);
    }

    #[test]
    fn flux_of_linear_solution() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, x1, 0.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        let d = flux_balance_check(&s, FluxLaw::Difference).unwrap();
        assert!(!d.samples.is_empty() && d.samples.iter().all(|v| v.value.abs() < 0.05));
        let m = flux_balance_check(&s, FluxLaw::ProductMinusOne).unwrap();
        assert!(m.samples.iter().all(|v| v.value.abs() < 0.1));
    }

    #[test]
    fn one_phase_source_gives_varying_flux() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, |x| x[0] + 0.2 * x[1], 1.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        assert!(s.converged);
        let f = flux_balance_check(&s, FluxLaw::Difference).unwrap();
        assert!(f.max - f.min > 1e-3, "{} {}", f.min, f.max);
    }

    #[test]
    fn curved_solution_feeds_almost_monotonicity() {
        let fit = |scale| {
            let g = grid(2, 1.0, scale);
            let p = TwoPhaseProblem::constant(sphere(2), g, x1, 0.5, 0.5).unwrap();
            let s = two_phase_solve(&p).unwrap().require_converged().unwrap();
            let pair = s.pair().unwrap();
            crate::monotone::almost_mono_bound(&s.model, &pair, 1.0).unwrap().c_fitted
        };
        let (a, b) = (fit(1), fit(2));
        assert!(a.is_finite() && a > 0.0 && (a - b).abs() <= 0.15 * b, "{a} {b}");
    }

    #[test]
    fn three_dimensional_solve() {
        let g = grid(3, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(3).unwrap(), g.clone(), x1, 0.0, 0.0).unwrap();
        let s = two_phase_solve(&p).unwrap();
        assert!(s.converged && s.residual_ok(), "{:?} {}", s.phase_residual, s.residual_tol);
        let err = (0..g.node_count()).fold(0.0f64, |a, k| a.max((s.u.values()[k] - g.point(k)[0]).abs()));
        assert!(err < 10.0 * g.spacing().powi(2), "{err}");
    }

    #[test]
    fn flagged_nonconvergence() {
        let g = grid(2, 1.0, 1);
        let opts = SolverOptions { max_outer: 1, ..SolverOptions::default() };
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, x1, 1.0, 1.0).unwrap().with_options(opts);
        let s = two_phase_solve(&p).unwrap();
        assert!(!s.converged);
        assert!(matches!(s.require_converged(), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn sources_must_respect_bound() {
        let g = grid(2, 1.0, 1);
        let p = TwoPhaseProblem::constant(ModelMetric::euclidean(2).unwrap(), g, x1, 1.0, 1.0).unwrap().with_bound(0.5);
        assert!(matches!(two_phase_solve(&p), Err(Error::Precondition(_))));
    }
}
