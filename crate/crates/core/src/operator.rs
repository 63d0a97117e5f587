//! Discrete Laplace-Beltrami operator and gradient on a [`BallGrid`].
//!
//! In polar coordinates `q = (r, psi)` or `(r, theta, phi)` the operator
//! `(1/sqrt g) d_i (sqrt g g^ij d_j u)` reads
//! `G^ab d_a d_b u + b^a d_a u` with `G^ab` the inverse polar metric and
//! `b^a = (1/sqrt G) d_c (sqrt G G^ca)`. Both are tabulated per node;
//! derivatives come from the phase-respecting line stencils in
//! [`crate::stencil`] (3 points radially, 5 points in each angle).

use crate::ballgrid::BallGrid;
use crate::error::Result;
use crate::geometry::ModelMetric;
use crate::scalar::Real;
use crate::stencil::{select, sign_of, Basis};

const RADIAL_POINTS: usize = 3;
const ANGULAR_POINTS: usize = 5;

/// Nodal first and second polar derivatives of a field.
#[derive(Clone, Debug)]
pub struct Derivatives<T> {
    pub first: Vec<[T; 3]>,
    pub second: Vec<[[T; 3]; 3]>,
    /// Zero-valued nodes lying on the edge of the field's support.
    pub edge: Vec<bool>,
    /// Quadrature share of the nodal energy. Along an azimuthal ring where
    /// the support ends between a support node `P` and a zero node `Z`, with
    /// the extrapolated continuation vanishing `s` cells past `P`, `Z` gets
    /// `max(s - 1/2, 0)` and `P` a factor `1 - max(1/2 - s, 0)`; this makes
    /// the innermost (trapezoidal) quadrature exact for the jump of the
    /// energy density. A zero node on the interface (`s = 1`) gets 1/2. Zero
    /// edge nodes seen only along rays or meridians get `max(s - 1/2, 0)`
    /// from those lines.
    pub energy_share: Vec<T>,
}

/// Metric coefficients of the operator tabulated on a grid.
#[derive(Clone, Debug)]
pub struct PolarOperator<'g, T> {
    grid: &'g BallGrid<T>,
    inv_metric: Vec<[[T; 3]; 3]>,
    drift: Vec<[T; 3]>,
    sqrt_det: Vec<T>,
}

/// Crossing position `s = v_adj / (v_adj - v_ext)` in `[0, 1]` of the
/// continuation between the adjacent support sample and the zero target.
fn crossing<T: Real>(v_adj: T, v_ext: T) -> T {
    let denom = v_adj - v_ext;
    if v_adj == T::zero() || (v_ext != T::zero() && v_ext.signum() == v_adj.signum()) || denom == T::zero() {
        return T::one();
    }
    (v_adj / denom).max(T::zero()).min(T::one())
}

/// Polar coordinates of a node: `(r, psi)` or `(r, theta, phi)`.
fn node_coords<T: Real>(grid: &BallGrid<T>, k: usize) -> [T; 3] {
    let r = grid.node_radius(k);
    let d = grid.dir_of(k);
    if grid.dim() == 2 {
        [r, grid.azimuth(d), T::zero()]
    } else {
        [r, grid.polar_angle(d / grid.n_ang()), grid.azimuth(d)]
    }
}

/// Orthonormal polar frame and scale factors at polar coordinates `q`.
fn frame<T: Real>(n: usize, q: [T; 3]) -> ([[T; 3]; 3], [T; 3]) {
    if n == 2 {
        let (s, c) = q[1].sin_cos();
        ([[c, s, T::zero()], [-s, c, T::zero()], [T::zero(); 3]], [T::one(), q[0], T::one()])
    } else {
        let (st, ct) = q[1].sin_cos();
        let (sp, cp) = q[2].sin_cos();
        (
            [[st * cp, st * sp, ct], [ct * cp, ct * sp, -st], [-sp, cp, T::zero()]],
            [T::one(), q[0], q[0] * st],
        )
    }
}

/// `(sqrt G, G^ab, sqrt det g)` at polar point `q`.
fn polar_metric<T: Real>(model: &ModelMetric<T>, q: [T; 3]) -> Result<(T, [[T; 3]; 3], T)> {
    let n = model.dim();
    let (e, s) = frame(n, q);
    let mut x = [T::zero(); 3];
    for i in 0..n {
        x[i] = q[0] * e[0][i];
    }
    let m = model.metric_at(&x[..n])?;
    let mut ginv = [[T::zero(); 3]; 3];
    for a in 0..n {
        for b in 0..n {
            let mut acc = T::zero();
            for i in 0..n {
                for j in 0..n {
                    acc += e[a][i] * m.g_inv.a[i][j] * e[b][j];
                }
            }
            ginv[a][b] = acc / (s[a] * s[b]);
        }
    }
    let jac = s.iter().take(n).fold(T::one(), |acc, v| acc * *v);
    Ok((m.sqrt_det * jac, ginv, m.sqrt_det))
}

impl<'g, T: Real> PolarOperator<'g, T> {
    pub fn new(model: &ModelMetric<T>, grid: &'g BallGrid<T>) -> Result<Self> {
        grid.check_model(model)?;
        let n = grid.dim();
        let count = grid.node_count();
        let mut inv_metric = Vec::with_capacity(count);
        let mut drift = Vec::with_capacity(count);
        let mut sqrt_det = Vec::with_capacity(count);
        for k in 0..count {
            let q = node_coords(grid, k);
            if model.is_euclidean() {
                let r = q[0];
                let mut gi = [[T::zero(); 3]; 3];
                gi[0][0] = T::one();
                gi[1][1] = T::one() / (r * r);
                let mut b = [T::zero(); 3];
                b[0] = T::from_usize_lossy(n - 1) / r;
                if n == 3 {
                    let st = q[1].sin();
                    gi[2][2] = T::one() / (r * r * st * st);
                    b[1] = q[1].cos() / st / (r * r);
                }
                inv_metric.push(gi);
                drift.push(b);
                sqrt_det.push(T::one());
                continue;
            }
            let (sg, gi, sd) = polar_metric(model, q)?;
            let mut b = [T::zero(); 3];
            for c in 0..n {
                let eps = if c == 0 { q[0] * T::lit(1e-3) } else { T::lit(1e-3) };
                let backward = c == 0 && q[0] + eps * T::lit(2.0) > model.working_radius();
                let flux = |shift: T| -> Result<[T; 3]> {
                    let mut qq = q;
                    qq[c] += shift;
                    let (sg2, gi2, _) = polar_metric(model, qq)?;
                    let mut out = [T::zero(); 3];
                    for a in 0..n {
                        out[a] = sg2 * gi2[c][a];
                    }
                    Ok(out)
                };
                let deriv: [T; 3] = if backward {
                    let w = [25.0, -48.0, 36.0, -16.0, 3.0];
                    let mut acc = [T::zero(); 3];
                    for (i, wi) in w.iter().enumerate() {
                        let f = flux(-eps * T::from_usize_lossy(i))?;
                        for a in 0..n {
                            acc[a] += T::lit(*wi) * f[a];
                        }
                    }
                    acc.map(|v| v / (T::lit(12.0) * eps))
                } else {
                    let w = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
                    let mut acc = [T::zero(); 3];
                    for (o, wi) in w {
                        let f = flux(eps * T::lit(o))?;
                        for a in 0..n {
                            acc[a] += T::lit(wi) * f[a];
                        }
                    }
                    acc.map(|v| v / (T::lit(12.0) * eps))
                };
                for a in 0..n {
                    b[a] += deriv[a] / sg;
                }
            }
            inv_metric.push(gi);
            drift.push(b);
            sqrt_det.push(sd);
        }
        Ok(PolarOperator { grid, inv_metric, drift, sqrt_det })
    }

    pub fn grid(&self) -> &BallGrid<T> {
        self.grid
    }

    /// `sqrt(det g)` (Cartesian) at each node.
    pub fn densities(&self) -> &[T] {
        &self.sqrt_det
    }

    pub fn inverse_polar_metric(&self, node: usize) -> [[T; 3]; 3] {
        self.inv_metric[node]
    }

    pub fn drift(&self, node: usize) -> [T; 3] {
        self.drift[node]
    }

    /// Polar derivatives of `values` (with value `origin` at the center).
    /// With `split`, stencils stay inside runs of equal sign (`+`, `-`, `0`)
    /// along each line, for fields that only are piecewise smooth with kinks
    /// on their zero set.
    pub fn derivatives(&self, values: &[T], origin: T, split: bool) -> Derivatives<T> {
        let g = self.grid;
        let count = g.node_count();
        let nd = g.n_dirs();
        let n_r = g.n_r();
        let mut first = vec![[T::zero(); 3]; count];
        let mut second = vec![[[T::zero(); 3]; 3]; count];
        let mut edge = vec![false; count];
        // -1 marks "no edge line seen yet"
        let mut ring_share = vec![-T::one(); count];
        let mut line_share = vec![-T::one(); count];
        let mut support_factor = vec![T::one(); count];
        let half = T::lit(0.5);
        let mut mark = |k: usize,
                        sel: &crate::stencil::Selection<T>,
                        val: &dyn Fn(usize) -> T,
                        ring_node: Option<&dyn Fn(usize) -> usize>| {
            if let (true, Some(st), Some(adj)) = (sel.edge, sel.stencil.as_ref(), sel.adjacent) {
                edge[k] = true;
                let s = crossing(val(adj), st.apply0(val));
                let z = (s - half).max(T::zero());
                match ring_node {
                    Some(node_of) => {
                        ring_share[k] = ring_share[k].max(z);
                        support_factor[node_of(adj)] *= T::one() - (half - s).max(T::zero());
                    }
                    None => line_share[k] = line_share[k].max(z),
                }
            }
        };
        let phase = |v: T| if split { sign_of(v) } else { 1 };
        let signs: Vec<i8> = values.iter().map(|v| phase(*v)).collect();

        // rays through the origin; a non-finite origin value (singular
        // fields) drops the center from the line
        let skip = usize::from(!origin.is_finite());
        let mut coords = Vec::with_capacity(n_r + 1);
        coords.push(T::zero());
        coords.extend_from_slice(g.shells());
        let mut line_signs = vec![0i8; n_r + 1];
        let mut line_vals = vec![T::zero(); n_r + 1];
        for d in 0..nd {
            line_signs[0] = phase(origin);
            line_vals[0] = origin;
            for i in 0..n_r {
                let k = g.node(i, d);
                line_signs[i + 1] = signs[k];
                line_vals[i + 1] = values[k];
            }
            for i in 0..n_r {
                let k = g.node(i, d);
                let sel = select(&line_signs[skip..], &coords[skip..], None, Basis::Poly, RADIAL_POINTS, i + 1 - skip);
                mark(k, &sel, &|p| line_vals[p + skip], None);
                if let Some(st) = sel.stencil {
                    first[k][0] = st.apply1(|p| line_vals[p + skip]);
                    second[k][0][0] = st.apply2(|p| line_vals[p + skip]);
                }
            }
        }

        let two_pi = T::lit(2.0) * T::PI();
        if g.dim() == 2 {
            let na = g.n_ang();
            let ang: Vec<T> = (0..na).map(|j| g.azimuth(j)).collect();
            for i in 0..n_r {
                let base = g.node(i, 0);
                let ring_signs = &signs[base..base + na];
                for j in 0..na {
                    let k = base + j;
                    let sel = select(ring_signs, &ang, Some(two_pi), Basis::Trig, ANGULAR_POINTS, j);
                    mark(k, &sel, &|p| values[base + p], Some(&|p| base + p));
                    if let Some(st) = sel.stencil {
                        first[k][1] = st.apply1(|p| values[base + p]);
                        second[k][1][1] = st.apply2(|p| values[base + p]);
                        let mixed = st.apply1(|p| first[base + p][0]);
                        second[k][0][1] = mixed;
                        second[k][1][0] = mixed;
                    }
                }
            }
        } else {
            let na = g.n_ang();
            let np = g.n_pol();
            let half = na / 2;
            // meridian great circles: polar rings 0..np at azimuth a, then back
            // over the south pole at azimuth a + pi
            let mut mer_coords = Vec::with_capacity(2 * np);
            for p in 0..np {
                mer_coords.push(g.polar_angle(p));
            }
            for p in (0..np).rev() {
                mer_coords.push(two_pi - g.polar_angle(p));
            }
            let mut mer_nodes = vec![0usize; 2 * np];
            let mut mer_signs = vec![0i8; 2 * np];
            for i in 0..n_r {
                for a in 0..na {
                    for p in 0..np {
                        mer_nodes[p] = g.node(i, p * na + a);
                        mer_nodes[2 * np - 1 - p] = g.node(i, p * na + (a + half) % na);
                    }
                    for (s, &k) in mer_signs.iter_mut().zip(&mer_nodes) {
                        *s = signs[k];
                    }
                    for p in 0..np {
                        let k = mer_nodes[p];
                        let sel = select(&mer_signs, &mer_coords, Some(two_pi), Basis::Trig, ANGULAR_POINTS, p);
                        mark(k, &sel, &|q| values[mer_nodes[q]], None);
                        if let Some(st) = sel.stencil {
                            first[k][1] = st.apply1(|q| values[mer_nodes[q]]);
                            second[k][1][1] = st.apply2(|q| values[mer_nodes[q]]);
                            let mixed = st.apply1(|q| first[mer_nodes[q]][0]);
                            second[k][0][1] = mixed;
                            second[k][1][0] = mixed;
                        }
                    }
                }
            }
            let az: Vec<T> = (0..na).map(|j| g.azimuth(j)).collect();
            for i in 0..n_r {
                for p in 0..np {
                    let base = g.node(i, p * na);
                    let ring_signs = &signs[base..base + na];
                    for a in 0..na {
                        let k = base + a;
                        let sel = select(ring_signs, &az, Some(two_pi), Basis::Trig, ANGULAR_POINTS, a);
                        mark(k, &sel, &|q| values[base + q], Some(&|q| base + q));
                        if let Some(st) = sel.stencil {
                            first[k][2] = st.apply1(|q| values[base + q]);
                            second[k][2][2] = st.apply2(|q| values[base + q]);
                            let mr = st.apply1(|q| first[base + q][0]);
                            let mt = st.apply1(|q| first[base + q][1]);
                            second[k][0][2] = mr;
                            second[k][2][0] = mr;
                            second[k][1][2] = mt;
                            second[k][2][1] = mt;
                        }
                    }
                }
            }
        }
        let energy_share = (0..count)
            .map(|k| {
                let z = if ring_share[k] >= T::zero() { ring_share[k] } else { line_share[k] };
                if z < T::zero() {
                    support_factor[k]
                } else {
                    z * support_factor[k]
                }
            })
            .collect();
        Derivatives { first, second, edge, energy_share }
    }

    /// Nodal `Delta_g u`.
    pub fn laplacian(&self, values: &[T], origin: T, split: bool) -> Vec<T> {
        let n = self.grid.dim();
        let d = self.derivatives(values, origin, split);
        (0..values.len())
            .map(|k| {
                let gi = &self.inv_metric[k];
                let b = &self.drift[k];
                let mut acc = T::zero();
                for a in 0..n {
                    acc += b[a] * d.first[k][a];
                    for c in 0..n {
                        acc += gi[a][c] * d.second[k][a][c];
                    }
                }
                acc
            })
            .collect()
    }

    fn grad_sq(&self, k: usize, first: &[T; 3]) -> T {
        let n = self.grid.dim();
        let gi = &self.inv_metric[k];
        let mut acc = T::zero();
        for a in 0..n {
            for c in 0..n {
                acc += gi[a][c] * first[a] * first[c];
            }
        }
        acc.max(T::zero())
    }

    /// Nodal `|grad_g u|^2`, scaled at support-edge nodes by
    /// [`Derivatives::energy_share`] (1/2 on the interface: the mean of the
    /// two one-sided limits).
    pub fn gradient_energy(&self, values: &[T], origin: T, split: bool) -> Vec<T> {
        let d = self.derivatives(values, origin, split);
        (0..values.len()).map(|k| self.grad_sq(k, &d.first[k]) * d.energy_share[k]).collect()
    }

    /// Nodal `|grad_g u|^2` using the one-sided limit at support-edge nodes.
    pub fn one_sided_gradient_sq(&self, values: &[T], origin: T) -> Vec<T> {
        let d = self.derivatives(values, origin, true);
        (0..values.len()).map(|k| self.grad_sq(k, &d.first[k])).collect()
    }

    /// Outward flux `int_{dB_r} sqrt(g) g^{ij} d_j u nu_i dS` through a shell.
    pub fn normal_flux(&self, values: &[T], origin: T, split: bool, shell: usize) -> T {
        let g = self.grid;
        let n = g.dim();
        let d = self.derivatives(values, origin, split);
        let r = g.shells()[shell];
        let mut acc = T::zero();
        for dir in 0..g.n_dirs() {
            let k = g.node(shell, dir);
            let gi = &self.inv_metric[k];
            let mut f = T::zero();
            for a in 0..n {
                f += gi[0][a] * d.first[k][a];
            }
            acc += f * self.sqrt_det[k] * g.angular_weight(dir);
        }
        acc * r.powi(n as i32 - 1)
    }
}
