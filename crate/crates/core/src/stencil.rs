//! One-dimensional differencing along grid lines (rays, rings, meridians).
//!
//! Stencils never straddle a sign change of the sampled field: the window is
//! taken inside the maximal run of same-signed samples containing the
//! target. A target sample that is exactly zero is differenced from the
//! adjacent nonzero run, extrapolating that side's smooth continuation.

use crate::linalg::solve_dense;
use crate::scalar::Real;

pub(crate) const MAX_STENCIL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Basis {
    /// `1, s, s^2` (radial lines).
    Poly,
    /// `1, sin s, 1 - cos s, sin 2s, 1 - cos 2s` (angular lines).
    Trig,
}

/// Sample indices along a line and the value/first/second derivative
/// weights at the target.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil<T> {
    pub pos: [usize; MAX_STENCIL],
    pub w0: [T; MAX_STENCIL],
    pub w1: [T; MAX_STENCIL],
    pub w2: [T; MAX_STENCIL],
    pub len: usize,
}

impl<T: Real> Stencil<T> {
    pub fn apply0(&self, f: impl Fn(usize) -> T) -> T {
        (0..self.len).fold(T::zero(), |acc, s| acc + self.w0[s] * f(self.pos[s]))
    }
    pub fn apply1(&self, f: impl Fn(usize) -> T) -> T {
        (0..self.len).fold(T::zero(), |acc, s| acc + self.w1[s] * f(self.pos[s]))
    }
    pub fn apply2(&self, f: impl Fn(usize) -> T) -> T {
        (0..self.len).fold(T::zero(), |acc, s| acc + self.w2[s] * f(self.pos[s]))
    }
}

/// Outcome of stencil selection at one target.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Selection<T> {
    pub stencil: Option<Stencil<T>>,
    /// Target is a zero sample with a nonzero run on exactly one side.
    pub edge: bool,
    /// Line index of the nonzero sample next to an edge target.
    pub adjacent: Option<usize>,
}

pub(crate) fn sign_of<T: Real>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

struct Line<'a, T> {
    signs: &'a [i8],
    coords: &'a [T],
    period: Option<T>,
}

impl<'a, T: Real> Line<'a, T> {
    fn len(&self) -> isize {
        self.signs.len() as isize
    }

    fn wrap(&self, t: isize) -> Option<usize> {
        let l = self.len();
        if self.period.is_some() {
            Some(t.rem_euclid(l) as usize)
        } else if t >= 0 && t < l {
            Some(t as usize)
        } else {
            None
        }
    }

    fn sign(&self, t: isize) -> Option<i8> {
        self.wrap(t).map(|i| self.signs[i])
    }

    fn coord(&self, t: isize) -> T {
        let i = self.wrap(t).expect("index inside line");
        match self.period {
            Some(p) => self.coords[i] + p * T::lit(t.div_euclid(self.len()) as f64),
            None => self.coords[i],
        }
    }
}

fn basis_eval<T: Real>(basis: Basis, q: usize, s: T) -> T {
    match (basis, q) {
        (_, 0) => T::one(),
        (Basis::Poly, 1) => s,
        (Basis::Poly, _) => s * s,
        (Basis::Trig, 1) => s.sin(),
        (Basis::Trig, 2) => T::one() - s.cos(),
        (Basis::Trig, 3) => (s + s).sin(),
        (Basis::Trig, _) => T::one() - (s + s).cos(),
    }
}

/// (first, second) derivative of basis function `q` at 0.
fn basis_derivs<T: Real>(basis: Basis, q: usize) -> (T, T) {
    match (basis, q) {
        (_, 0) => (T::zero(), T::zero()),
        (Basis::Poly, 1) => (T::one(), T::zero()),
        (Basis::Poly, _) => (T::zero(), T::lit(2.0)),
        (Basis::Trig, 1) => (T::one(), T::zero()),
        (Basis::Trig, 2) => (T::zero(), T::one()),
        (Basis::Trig, 3) => (T::lit(2.0), T::zero()),
        (Basis::Trig, _) => (T::zero(), T::lit(4.0)),
    }
}

fn weights<T: Real>(line: &Line<T>, basis: Basis, target: isize, pts: &[isize]) -> Option<Stencil<T>> {
    let m = pts.len();
    let mut st = Stencil {
        pos: [0; MAX_STENCIL],
        w0: [T::zero(); MAX_STENCIL],
        w1: [T::zero(); MAX_STENCIL],
        w2: [T::zero(); MAX_STENCIL],
        len: m,
    };
    for (s, &t) in pts.iter().enumerate() {
        st.pos[s] = line.wrap(t)?;
    }
    if m <= 1 {
        st.w0[0] = T::one();
        return Some(st);
    }
    let x0 = line.coord(target);
    let offsets: Vec<T> = pts.iter().map(|&t| line.coord(t) - x0).collect();
    let mut mat = vec![T::zero(); m * m];
    for q in 0..m {
        for s in 0..m {
            mat[q * m + s] = basis_eval(basis, q, offsets[s]);
        }
    }
    let mut b1: Vec<T> = (0..m).map(|q| basis_derivs::<T>(basis, q).0).collect();
    let mut b2: Vec<T> = (0..m).map(|q| basis_derivs::<T>(basis, q).1).collect();
    let mut b0 = vec![T::zero(); m];
    b0[0] = T::one();
    let mut m0 = mat.clone();
    let mut m1 = mat.clone();
    solve_dense(&mut m0, &mut b0, m)?;
    solve_dense(&mut m1, &mut b1, m)?;
    solve_dense(&mut mat, &mut b2, m)?;
    st.w0[..m].copy_from_slice(&b0);
    st.w1[..m].copy_from_slice(&b1);
    st.w2[..m].copy_from_slice(&b2);
    Some(st)
}

/// Select a phase-respecting stencil of at most `m` samples for `target`.
pub(crate) fn select<T: Real>(
    signs: &[i8],
    coords: &[T],
    period: Option<T>,
    basis: Basis,
    m: usize,
    target: usize,
) -> Selection<T> {
    let line = Line { signs, coords, period };
    let l = line.len();
    let k = target as isize;
    let s = signs[target];
    if s != 0 {
        let (mut a, mut b) = (k, k);
        while (b - a + 1) < l && line.sign(a - 1) == Some(s) {
            a -= 1;
        }
        while (b - a + 1) < l && line.sign(b + 1) == Some(s) {
            b += 1;
        }
        let len = (b - a + 1) as usize;
        let win = m.min(len) as isize;
        let start = (k - win / 2).clamp(a, b - win + 1);
        let pts: Vec<isize> = (start..start + win).collect();
        return Selection { stencil: weights(&line, basis, k, &pts), edge: false, adjacent: None };
    }
    let side = |dir: isize| -> Vec<isize> {
        let mut pts = Vec::new();
        let first = match line.sign(k + dir) {
            Some(v) if v != 0 => v,
            _ => return pts,
        };
        let mut t = k + dir;
        while pts.len() < m && (t - k).abs() < l && line.sign(t) == Some(first) {
            pts.push(t);
            t += dir;
        }
        pts
    };
    let left = side(-1);
    let right = side(1);
    let (mut pts, edge) = match (left.is_empty(), right.is_empty()) {
        (true, true) => return Selection { stencil: None, edge: false, adjacent: None },
        (false, true) => (left, true),
        (true, false) => (right, true),
        (false, false) => (if right.len() > left.len() { right } else { left }, false),
    };
    let adjacent = if edge { line.wrap(pts[0]) } else { None };
    pts.sort_unstable();
    Selection { stencil: weights(&line, basis, k, &pts), edge, adjacent }
}
