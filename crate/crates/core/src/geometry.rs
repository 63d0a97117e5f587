//! Model Riemannian metrics written in geodesic normal coordinates at the
//! ball center, together with the quantities derived from them.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::linalg::Mat;
use crate::scalar::{sinc, sinhc, Real};

/// Which family of metrics a [`ModelMetric`] belongs to.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricKind<T> {
    Euclidean,
    /// Constant sectional curvature `kappa` (1/length^2).
    SpaceForm { kappa: T },
    /// `g_ij(x) = delta_ij + sum_kl c_ijkl x_k x_l`, with `c` stored
    /// row-major as `((i*n + j)*n + k)*n + l` and symmetrized in `(i, j)`.
    Polynomial { coeffs: Vec<T> },
}

/// A metric in normal coordinates, optionally rescaled: `g^t(x) = g(t x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMetric<T> {
    dim: usize,
    kind: MetricKind<T>,
    curvature_bound: T,
    scale: T,
    /// Validity radius in the unscaled coordinates.
    base_radius: T,
}

/// Metric tensor, its inverse and volume density at a point.
#[derive(Clone, Copy, Debug)]
pub struct MetricData<T> {
    pub g: Mat<T>,
    pub g_inv: Mat<T>,
    pub sqrt_det: T,
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::Config(format!("dimension must be 2 or 3, got {n}")))
    }
}

impl<T: Real> ModelMetric<T> {
    pub fn euclidean(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(ModelMetric {
            dim: n,
            kind: MetricKind::Euclidean,
            curvature_bound: T::zero(),
            scale: T::one(),
            base_radius: T::infinity(),
        })
    }

    /// Constant curvature model; `kappa = 0` gives the Euclidean metric.
    pub fn space_form(n: usize, kappa: T) -> Result<Self> {
        check_dim(n)?;
        if !kappa.is_finite() {
            return Err(Error::Config("curvature must be finite".into()));
        }
        if kappa == T::zero() {
            return Self::euclidean(n);
        }
        // Inside 1.5/sqrt|kappa| the tangential factor stays well inside [1/4, 4].
        let base_radius = T::lit(1.5) / kappa.abs().sqrt();
        Ok(ModelMetric {
            dim: n,
            kind: MetricKind::SpaceForm { kappa },
            curvature_bound: kappa.abs(),
            scale: T::one(),
            base_radius,
        })
    }

    /// Quadratic perturbation of the flat metric. The curvature bound
    /// defaults to `2 * sum |c_ijkl|`; override it with
    /// [`with_curvature_bound`](Self::with_curvature_bound).
    pub fn polynomial(n: usize, coeffs: Vec<T>) -> Result<Self> {
        check_dim(n)?;
        if coeffs.len() != n * n * n * n {
            return Err(Error::Config(format!(
                "polynomial metric needs {} coefficients, got {}",
                n * n * n * n,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite metric coefficient".into()));
        }
        let mut sym = coeffs.clone();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let a = coeffs[((i * n + j) * n + k) * n + l];
                        let b = coeffs[((j * n + i) * n + k) * n + l];
                        let c = coeffs[((i * n + j) * n + l) * n + k];
                        let d = coeffs[((j * n + i) * n + l) * n + k];
                        sym[((i * n + j) * n + k) * n + l] = (a + b + c + d) / T::lit(4.0);
                    }
                }
            }
        }
        let bound = sym.iter().fold(T::zero(), |acc, c| acc + c.abs()) * T::lit(2.0);
        Ok(ModelMetric {
            dim: n,
            kind: MetricKind::Polynomial { coeffs: sym },
            curvature_bound: bound,
            scale: T::one(),
            base_radius: T::one(),
        })
    }

    pub fn with_curvature_bound(mut self, lambda: T) -> Self {
        self.curvature_bound = lambda;
        self
    }

    /// Override the working radius (in the current, possibly rescaled, coordinates).
    pub fn with_working_radius(mut self, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return domain("working radius must be positive");
        }
        self.base_radius = radius * self.scale;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &MetricKind<T> {
        &self.kind
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, MetricKind::Euclidean)
    }

    /// The curvature bound `|Rm| + |grad Rm| <= Lambda` of the unscaled metric.
    pub fn curvature_bound(&self) -> T {
        self.curvature_bound
    }

    /// Accumulated rescale factor `t`.
    pub fn scale(&self) -> T {
        self.scale
    }

    /// Radius (in the current coordinates) inside which the metric may be evaluated.
    pub fn working_radius(&self) -> T {
        self.base_radius / self.scale
    }

    /// Default radius at which the Hebey bounds are checked: `min(0.8, 0.8/sqrt(Lambda))`,
    /// expressed in the current coordinates.
    pub fn hebey_radius(&self) -> T {
        let base = if self.curvature_bound > T::zero() {
            T::lit(0.8).min(T::lit(0.8) / self.curvature_bound.sqrt())
        } else {
            T::lit(0.8)
        };
        (base / self.scale).min(self.working_radius())
    }

    /// `g^t` with `t` multiplied by `factor`.
    pub fn rescale(&self, factor: T) -> Result<Self> {
        if !(factor > T::zero() && factor <= T::one()) {
            return domain(format!("rescale factor must lie in (0, 1], got {factor}"));
        }
        let mut out = self.clone();
        out.scale = self.scale * factor;
        Ok(out)
    }

    fn raw_metric(&self, y: &[T]) -> Mat<T> {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean => Mat::identity(n),
            MetricKind::SpaceForm { kappa } => {
                let r = norm(y);
                if r == T::zero() {
                    return Mat::identity(n);
                }
                let f = tangential_factor(*kappa, r);
                let f2 = f * f;
                let mut g = Mat::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        let p = y[i] * y[j] / (r * r);
                        let d = if i == j { T::one() } else { T::zero() };
                        g.a[i][j] = p + f2 * (d - p);
                    }
                }
                g
            }
            MetricKind::Polynomial { coeffs } => {
                let mut g = Mat::identity(n);
                for i in 0..n {
                    for j in 0..n {
                        let mut s = T::zero();
                        for k in 0..n {
                            for l in 0..n {
                                s += coeffs[((i * n + j) * n + k) * n + l] * y[k] * y[l];
                            }
                        }
                        g.a[i][j] += s;
                    }
                }
                g
            }
        }
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return domain(format!("point has {} coordinates, metric dimension is {}", x.len(), self.dim));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("non-finite point");
        }
        let r = norm(x);
        let limit = self.working_radius() * (T::one() + T::lit(1e-9));
        if r > limit {
            return domain(format!("|x| = {r} exceeds working radius {}", self.working_radius()));
        }
        Ok(())
    }

    /// Metric tensor, inverse and `sqrt(det g)` at `x` (current coordinates).
    pub fn metric_at(&self, x: &[T]) -> Result<MetricData<T>> {
        self.check_point(x)?;
        let mut y = [T::zero(); 3];
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = *xi * self.scale;
        }
        let y = &y[..self.dim];
        let g = self.raw_metric(y);
        match &self.kind {
            MetricKind::Euclidean => Ok(MetricData { g, g_inv: g, sqrt_det: T::one() }),
            MetricKind::SpaceForm { kappa } => {
                let r = norm(y);
                if r == T::zero() {
                    return Ok(MetricData { g, g_inv: g, sqrt_det: T::one() });
                }
                let f = tangential_factor(*kappa, r);
                let n = self.dim;
                let mut g_inv = Mat::zeros(n);
                let inv_f2 = T::one() / (f * f);
                for i in 0..n {
                    for j in 0..n {
                        let p = y[i] * y[j] / (r * r);
                        let d = if i == j { T::one() } else { T::zero() };
                        g_inv.a[i][j] = p + inv_f2 * (d - p);
                    }
                }
                Ok(MetricData { g, g_inv, sqrt_det: f.powi(n as i32 - 1) })
            }
            MetricKind::Polynomial { .. } => {
                if !positive_definite(&g) {
                    return Err(Error::Domain(format!("metric not positive definite at {x:?}")));
                }
                let g_inv = g
                    .inverse()
                    .ok_or_else(|| Error::Numerical("singular metric".into()))?;
                Ok(MetricData { g, g_inv, sqrt_det: g.det().sqrt() })
            }
        }
    }

    /// `d g_ij / d x_k` by fourth-order central differences with step `step`.
    pub fn metric_derivative(&self, x: &[T], k: usize, step: T) -> Result<Mat<T>> {
        let mut out = Mat::zeros(self.dim);
        if self.is_euclidean() {
            return Ok(out);
        }
        let coeffs = [(-2, T::lit(1.0)), (-1, T::lit(-8.0)), (1, T::lit(8.0)), (2, T::lit(-1.0))];
        let mut p = [T::zero(); 3];
        for (off, w) in coeffs {
            p[..self.dim].copy_from_slice(x);
            p[k] += T::lit(off as f64) * step;
            let g = self.metric_at(&p[..self.dim])?.g;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out.a[i][j] += w * g.a[i][j];
                }
            }
        }
        let denom = T::lit(12.0) * step;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.a[i][j] /= denom;
            }
        }
        Ok(out)
    }

    /// `Delta_g r = (n-1)/r + d/dr ln sqrt(det g)`, averaged over ray directions.
    pub fn radial_laplacian(&self, r: T) -> Result<T> {
        if !(r > T::zero()) {
            return domain(format!("radial Laplacian needs r > 0, got {r}"));
        }
        if r >= self.working_radius() {
            return domain(format!("r = {r} not inside working radius {}", self.working_radius()));
        }
        let n1 = T::from_usize_lossy(self.dim - 1);
        if self.is_euclidean() {
            return Ok(n1 / r);
        }
        let dirs = sample_directions::<T>(self.dim);
        let step = (r * T::lit(1e-3)).min((self.working_radius() - r) / T::lit(4.0));
        let mut acc = T::zero();
        for d in &dirs {
            acc += self.log_density_derivative(d, r, step)?;
        }
        Ok(n1 / r + acc / T::from_usize_lossy(dirs.len()))
    }

    fn log_density_derivative(&self, dir: &[T], r: T, step: T) -> Result<T> {
        let at = |rho: T| -> Result<T> {
            let mut p = [T::zero(); 3];
            for i in 0..self.dim {
                p[i] = dir[i] * rho;
            }
            Ok(self.metric_at(&p[..self.dim])?.sqrt_det.ln())
        };
        let h = step;
        let d = (at(r - h - h)? - T::lit(8.0) * at(r - h)? + T::lit(8.0) * at(r + h)? - at(r + h + h)?)
            / (T::lit(12.0) * h);
        Ok(d)
    }

    /// `ln` of the ray-averaged volume density: `mean_dirs ln sqrt(det g)(r * dir)`.
    pub fn mean_log_density(&self, r: T) -> Result<T> {
        if self.is_euclidean() || r == T::zero() {
            return Ok(T::zero());
        }
        let dirs = sample_directions::<T>(self.dim);
        let mut acc = T::zero();
        for d in &dirs {
            let mut p = [T::zero(); 3];
            for i in 0..self.dim {
                p[i] = d[i] * r;
            }
            acc += self.metric_at(&p[..self.dim])?.sqrt_det.ln();
        }
        Ok(acc / T::from_usize_lossy(dirs.len()))
    }

    /// Smallest and largest metric eigenvalue over a sample of the ball of `radius`.
    pub fn eigen_range(&self, radius: T) -> Result<(T, T)> {
        let mut lo = T::one();
        let mut hi = T::one();
        for p in ball_samples(self.dim, radius, 16, 32) {
            let ev = self.metric_at(&p)?.g.sym_eigenvalues();
            lo = lo.min(ev[0]);
            hi = hi.max(ev[ev.len() - 1]);
        }
        Ok((lo, hi))
    }
}

/// `f(r)` such that the space-form metric is `P_rad + f^2 P_tan`.
pub fn tangential_factor<T: Real>(kappa: T, r: T) -> T {
    if kappa > T::zero() {
        sinc(kappa.sqrt() * r)
    } else if kappa < T::zero() {
        sinhc((-kappa).sqrt() * r)
    } else {
        T::one()
    }
}

fn positive_definite<T: Real>(g: &Mat<T>) -> bool {
    let a = &g.a;
    if !(a[0][0] > T::zero()) {
        return false;
    }
    let m2 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !(m2 > T::zero()) {
        return false;
    }
    g.dim == 2 || g.det() > T::zero()
}

pub(crate) fn norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt()
}

/// Fixed, symmetric direction set used for ray averages.
pub(crate) fn sample_directions<T: Real>(n: usize) -> Vec<Vec<T>> {
    if n == 2 {
        (0..16)
            .map(|j| {
                let a = T::lit(2.0 * std::f64::consts::PI * j as f64 / 16.0);
                vec![a.cos(), a.sin()]
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for i in 0..6 {
            let th = T::lit(std::f64::consts::PI * (i as f64 + 0.5) / 6.0);
            for j in 0..12 {
                let ph = T::lit(2.0 * std::f64::consts::PI * j as f64 / 12.0);
                out.push(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
            }
        }
        out
    }
}

/// Points on concentric spheres `radius * i / n_radial`, `i = 1..=n_radial`.
pub(crate) fn ball_samples<T: Real>(n: usize, radius: T, n_radial: usize, n_angular: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let pi = std::f64::consts::PI;
    for i in 1..=n_radial {
        let r = radius * T::from_usize_lossy(i) / T::from_usize_lossy(n_radial);
        if n == 2 {
            for j in 0..n_angular {
                let a = T::lit(2.0 * pi * j as f64 / n_angular as f64);
                out.push(vec![r * a.cos(), r * a.sin()]);
            }
        } else {
            let n_pol = (n_angular / 2).max(2);
            for a in 0..n_pol {
                let th = T::lit(pi * (a as f64 + 0.5) / n_pol as f64);
                for b in 0..n_angular {
                    let ph = T::lit(2.0 * pi * b as f64 / n_angular as f64);
                    out.push(vec![r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()]);
                }
            }
        }
    }
    out
}

/// Sampling and differencing resolution for [`hebey_verify`].
#[derive(Clone, Copy, Debug)]
pub struct HebeyOptions {
    pub n_radial: usize,
    pub n_angular: usize,
    /// Finite-difference step as a fraction of the checked radius.
    pub step_fraction: f64,
}

impl Default for HebeyOptions {
    fn default() -> Self {
        HebeyOptions { n_radial: 40, n_angular: 64, step_fraction: 1e-4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HebeyReport {
    pub pass: bool,
    /// `fitted_k / k` (0 when both vanish, infinite when only `k` does).
    pub worst_ratio: f64,
    pub worst_point: Vec<f64>,
    /// Smallest `K` satisfying both parts of the second bound on the sample.
    pub fitted_k: f64,
    /// Smallest `K` with `|g_ij - delta_ij| <= K |y|^2`.
    pub k_deviation: f64,
    /// Smallest `K` with `|d_k g_ij| <= K |y|`.
    pub k_derivative: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub eigen_bounds_ok: bool,
}

/// Check `1/4 <= g <= 4` and `|g - delta| <= K|y|^2`, `|dg| <= K|y|` on a
/// sample of the ball of `radius`.
pub fn hebey_verify<T: Real>(model: &ModelMetric<T>, radius: T, k: T) -> Result<HebeyReport> {
    hebey_verify_with(model, radius, k, HebeyOptions::default())
}

pub fn hebey_verify_with<T: Real>(
    model: &ModelMetric<T>,
    radius: T,
    k: T,
    opts: HebeyOptions,
) -> Result<HebeyReport> {
    if !(radius > T::zero()) || radius > model.working_radius() {
        return domain(format!("Hebey radius {radius} must lie in (0, {}]", model.working_radius()));
    }
    let n = model.dim();
    let step = radius * T::lit(opts.step_fraction);
    let mut k_dev = T::zero();
    let mut k_der = T::zero();
    let mut worst = T::neg_infinity();
    let mut worst_point = vec![T::zero(); n];
    let (mut eig_min, mut eig_max) = (T::one(), T::one());
    let quarter = T::lit(0.25);
    let four = T::lit(4.0);
    // Keep the derivative stencil inside the working radius.
    let sample_radius = radius.min(model.working_radius() - step * T::lit(2.5));
    for p in ball_samples(n, sample_radius, opts.n_radial, opts.n_angular) {
        let y = norm(&p);
        let data = model.metric_at(&p)?;
        let ev = data.g.sym_eigenvalues();
        eig_min = eig_min.min(ev[0]);
        eig_max = eig_max.max(ev[n - 1]);
        let dev = data.g.max_abs_diff(&Mat::identity(n));
        let mut der = T::zero();
        for kk in 0..n {
            let d = model.metric_derivative(&p, kk, step)?;
            der = der.max(d.max_abs_diff(&Mat::zeros(n)));
        }
        k_dev = k_dev.max(dev / (y * y));
        k_der = k_der.max(der / y);
        // Worst point: largest absolute excess over the candidate bound.
        let excess = (dev - k * y * y).max(der - k * y);
        if excess > worst {
            worst = excess;
            worst_point = p.clone();
        }
    }
    let fitted = k_dev.max(k_der);
    let eigen_ok = eig_min >= quarter && eig_max <= four;
    let worst_ratio = if fitted == T::zero() {
        0.0
    } else if k == T::zero() {
        f64::INFINITY
    } else {
        (fitted / k).to_f64_lossy()
    };
    let pass = eigen_ok && fitted <= k * (T::one() + T::lit(1e-12));
    Ok(HebeyReport {
        pass,
        worst_ratio,
        worst_point: worst_point.iter().map(|v| v.to_f64_lossy()).collect(),
        fitted_k: fitted.to_f64_lossy(),
        k_deviation: k_dev.to_f64_lossy(),
        k_derivative: k_der.to_f64_lossy(),
        eig_min: eig_min.to_f64_lossy(),
        eig_max: eig_max.to_f64_lossy(),
        eigen_bounds_ok: eigen_ok,
    })
}
