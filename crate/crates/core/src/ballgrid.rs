//! Polar (n = 2) and spherical-product (n = 3) lattices over a geodesic
//! ball in normal coordinates, with volume and sphere quadrature.
//!
//! Shells sit at `r_i = (i + 1) h`, `h = R / n_r`, so the outer shell is the
//! boundary sphere. Radial quadrature is the trapezoidal rule on
//! `0, r_0, .., r_{n_r-1}`; the origin term always vanishes because the
//! radial density carries a factor `r^{n-1}` (times `r^{2-n}` at worst).

use crate::error::{domain, Error, Result};
use crate::geometry::ModelMetric;
use crate::scalar::Real;

/// Default shell count.
pub const DEFAULT_N_R: usize = 64;

/// Default angular resolution: 64 angles (n = 2), 32 azimuths (n = 3).
pub fn default_n_ang(n: usize) -> usize {
    if n == 3 {
        32
    } else {
        64
    }
}

#[derive(Clone, Debug)]
pub struct BallGrid<T> {
    dim: usize,
    radius: T,
    n_r: usize,
    n_ang: usize,
    n_pol: usize,
    spacing: T,
    shells: Vec<T>,
    dirs: Vec<[T; 3]>,
    /// Polar angle of each polar ring (n = 3); empty for n = 2.
    polar_angles: Vec<T>,
    ang_weights: Vec<T>,
}

/// Gauss-Legendre nodes and weights on [-1, 1], nodes descending.
pub fn gauss_legendre<T: Real>(m: usize) -> (Vec<T>, Vec<T>) {
    let mut x = vec![T::zero(); m];
    let mut w = vec![T::zero(); m];
    let mf = T::from_usize_lossy(m);
    for i in 0..m {
        let mut z = (T::PI() * (T::from_usize_lossy(i) + T::lit(0.75)) / (mf + T::lit(0.5))).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            let (mut p0, mut p1) = (T::one(), z);
            for k in 2..=m {
                let kf = T::from_usize_lossy(k);
                let p2 = ((T::lit(2.0) * kf - T::one()) * z * p1 - (kf - T::one()) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { T::one() } else { p0 };
            dp = mf * (z * pm - pm1) / (z * z - T::one());
            let dz = pm / dp;
            z -= dz;
            if dz.abs() <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = T::lit(2.0) / ((T::one() - z * z) * dp * dp);
    }
    (x, w)
}

impl<T: Real> BallGrid<T> {
    /// `n_ang` is the number of angles per circle (n = 2) or of azimuths
    /// (n = 3, paired with `n_ang / 2` Gauss-Legendre polar rings).
    pub fn build(n: usize, radius: T, n_r: usize, n_ang: usize) -> Result<Self> {
        Self::build_inner(n, radius, n_r, n_ang)
    }

    /// Grid at the default resolution scaled by `scale`.
    pub fn build_default(n: usize, radius: T, scale: usize) -> Result<Self> {
        Self::build_inner(n, radius, DEFAULT_N_R * scale.max(1), default_n_ang(n) * scale.max(1))
    }

    fn build_inner(n: usize, radius: T, n_r: usize, n_ang: usize) -> Result<Self> {
        if n != 2 && n != 3 {
            return Err(Error::Config(format!("grid dimension must be 2 or 3, got {n}")));
        }
        if n_r < 16 || n_ang < 16 {
            return Err(Error::Config(format!("grid needs n_r >= 16 and n_ang >= 16, got {n_r} x {n_ang}")));
        }
        if !n_ang.is_multiple_of(2) {
            return Err(Error::Config("n_ang must be even".into()));
        }
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::Config(format!("grid radius must be positive, got {radius}")));
        }
        let spacing = radius / T::from_usize_lossy(n_r);
        let shells = (0..n_r).map(|i| spacing * T::from_usize_lossy(i + 1)).collect();
        let two_pi = T::lit(2.0) * T::PI();
        let mut dirs = Vec::new();
        let mut ang_weights = Vec::new();
        let mut polar_angles = Vec::new();
        let n_pol = if n == 3 { n_ang / 2 } else { 1 };
        if n == 2 {
            for j in 0..n_ang {
                let a = two_pi * T::from_usize_lossy(j) / T::from_usize_lossy(n_ang);
                dirs.push([a.cos(), a.sin(), T::zero()]);
                ang_weights.push(two_pi / T::from_usize_lossy(n_ang));
            }
        } else {
            let (x, w) = gauss_legendre::<T>(n_pol);
            for p in 0..n_pol {
                let th = x[p].acos();
                polar_angles.push(th);
                for a in 0..n_ang {
                    let ph = two_pi * T::from_usize_lossy(a) / T::from_usize_lossy(n_ang);
                    dirs.push([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                    ang_weights.push(w[p] * two_pi / T::from_usize_lossy(n_ang));
                }
            }
        }
        Ok(BallGrid { dim: n, radius, n_r, n_ang, n_pol, spacing, shells, dirs, polar_angles, ang_weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radius(&self) -> T {
        self.radius
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_ang(&self) -> usize {
        self.n_ang
    }
    /// Number of polar rings (1 for n = 2).
    pub fn n_pol(&self) -> usize {
        self.n_pol
    }
    /// Shell spacing `h`.
    pub fn spacing(&self) -> T {
        self.spacing
    }
    pub fn shells(&self) -> &[T] {
        &self.shells
    }
    /// Number of directions per shell.
    pub fn n_dirs(&self) -> usize {
        self.dirs.len()
    }
    pub fn node_count(&self) -> usize {
        self.n_r * self.dirs.len()
    }
    pub fn direction(&self, d: usize) -> [T; 3] {
        self.dirs[d]
    }
    pub fn polar_angle(&self, p: usize) -> T {
        self.polar_angles[p]
    }
    /// Angle of direction `d` in the plane (n = 2) or its azimuth (n = 3).
    pub fn azimuth(&self, d: usize) -> T {
        let a = d % self.n_ang;
        T::lit(2.0) * T::PI() * T::from_usize_lossy(a) / T::from_usize_lossy(self.n_ang)
    }
    pub fn angular_weight(&self, d: usize) -> T {
        self.ang_weights[d]
    }

    #[inline]
    pub fn node(&self, shell: usize, dir: usize) -> usize {
        shell * self.dirs.len() + dir
    }
    #[inline]
    pub fn shell_of(&self, node: usize) -> usize {
        node / self.dirs.len()
    }
    #[inline]
    pub fn dir_of(&self, node: usize) -> usize {
        node % self.dirs.len()
    }
    pub fn node_radius(&self, node: usize) -> T {
        self.shells[self.shell_of(node)]
    }

    /// Cartesian coordinates of a node (first `dim` entries meaningful).
    pub fn point(&self, node: usize) -> [T; 3] {
        let r = self.node_radius(node);
        let d = self.dirs[self.dir_of(node)];
        [r * d[0], r * d[1], r * d[2]]
    }

    /// Check that every node lies inside the model's working radius.
    pub fn check_model(&self, model: &ModelMetric<T>) -> Result<()> {
        if model.dim() != self.dim {
            return domain(format!("metric dimension {} does not match grid dimension {}", model.dim(), self.dim));
        }
        if self.radius > model.working_radius() * (T::one() + T::lit(1e-9)) {
            return domain(format!(
                "grid radius {} exceeds metric working radius {}",
                self.radius,
                model.working_radius()
            ));
        }
        Ok(())
    }

    /// `sqrt(det g)` at every node.
    pub fn densities(&self, model: &ModelMetric<T>) -> Result<Vec<T>> {
        self.check_model(model)?;
        if model.is_euclidean() {
            return Ok(vec![T::one(); self.node_count()]);
        }
        (0..self.node_count())
            .map(|k| {
                let p = self.point(k);
                model.metric_at(&p[..self.dim]).map(|m| m.sqrt_det)
            })
            .collect()
    }

    /// Trapezoidal weights `(shell, w)` for `int_0^r rho(s) ds` given shell
    /// samples of a radial density with `rho(0) = 0`. Between shells the
    /// density is interpolated linearly.
    pub fn radial_weights(&self, r: T) -> Result<Vec<(usize, T)>> {
        if !(r >= T::zero()) || r > self.radius * (T::one() + T::lit(1e-12)) {
            return domain(format!("radius {r} outside [0, {}]", self.radius));
        }
        let h = self.spacing;
        let mut out = Vec::new();
        let pos = r / h;
        // number of shells with r_i <= r
        let mut full = (pos + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
        full = full.min(self.n_r);
        if full == 0 {
            // [0, r] against rho(s) ~ rho_0 s / h
            out.push((0, r * r / (T::lit(2.0) * h)));
            return Ok(out);
        }
        for i in 0..full {
            let w = if i + 1 == full { h / T::lit(2.0) } else { h };
            out.push((i, w));
        }
        let last = full - 1;
        let s = (r - self.shells[last]).max(T::zero());
        if s > h * T::lit(1e-9) && full < self.n_r {
            let q = s * s / (T::lit(2.0) * h);
            out[last].1 += s - q;
            out.push((full, q));
        }
        Ok(out)
    }

    /// Per-shell radial density `r^{n-1+power} * sum_dirs f sqrt(g) w_ang`.
    pub fn shell_densities(&self, densities: &[T], integrand: &[T], power: T) -> Vec<T> {
        let nd = self.dirs.len();
        let n1 = T::from_usize_lossy(self.dim - 1);
        (0..self.n_r)
            .map(|i| {
                let r = self.shells[i];
                let mut s = T::zero();
                for d in 0..nd {
                    let k = i * nd + d;
                    s += integrand[k] * densities[k] * self.ang_weights[d];
                }
                s * r.powf(n1 + power)
            })
            .collect()
    }

    pub fn integrate_shells(&self, shell_density: &[T], r: T) -> Result<T> {
        Ok(self
            .radial_weights(r)?
            .into_iter()
            .fold(T::zero(), |acc, (i, w)| acc + w * shell_density[i]))
    }

    /// `int_{B_r} f |x|^power dV_g`.
    pub fn volume_integral(&self, model: &ModelMetric<T>, integrand: &[T], r: T, power: T) -> Result<T> {
        self.check_len(integrand)?;
        let dens = self.densities(model)?;
        let sd = self.shell_densities(&dens, integrand, power);
        self.integrate_shells(&sd, r)
    }

    /// Index of the shell within half a spacing of `r`.
    pub fn snap_shell(&self, r: T) -> Result<usize> {
        let h = self.spacing;
        let idx = (r / h).round().to_isize().unwrap_or(-1) - 1;
        if idx < 0 || idx as usize >= self.n_r {
            return domain(format!("no shell within h/2 of r = {r}"));
        }
        let i = idx as usize;
        if (self.shells[i] - r).abs() > h / T::lit(2.0) * (T::one() + T::lit(1e-9)) {
            return domain(format!("no shell within h/2 of r = {r}"));
        }
        Ok(i)
    }

    /// `int_{dB_r} f sqrt(g) dS` on the shell nearest to `r`.
    pub fn sphere_integral(&self, model: &ModelMetric<T>, integrand: &[T], r: T) -> Result<T> {
        self.check_len(integrand)?;
        let i = self.snap_shell(r)?;
        let dens = self.densities(model)?;
        Ok(self.sphere_integral_on_shell(&dens, integrand, i))
    }

    pub fn sphere_integral_on_shell(&self, densities: &[T], integrand: &[T], shell: usize) -> T {
        let nd = self.dirs.len();
        let r = self.shells[shell];
        let mut s = T::zero();
        for d in 0..nd {
            let k = shell * nd + d;
            s += integrand[k] * densities[k] * self.ang_weights[d];
        }
        s * r.powi(self.dim as i32 - 1)
    }

    pub(crate) fn check_len(&self, values: &[T]) -> Result<()> {
        if values.len() != self.node_count() {
            return domain(format!("field has {} values, grid has {} nodes", values.len(), self.node_count()));
        }
        Ok(())
    }
}
