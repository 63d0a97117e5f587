//! Tiny dense linear algebra for 2x2/3x3 metric tensors and stencil weights.

use crate::scalar::Real;

/// Square matrix of dimension 2 or 3 stored in a fixed 3x3 buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<T> {
    pub dim: usize,
    pub a: [[T; 3]; 3],
}

impl<T: Real> Mat<T> {
    pub fn zeros(dim: usize) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        Mat { dim, a: [[T::zero(); 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i][i] = T::one();
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.a[i][j]
    }

    pub fn det(&self) -> T {
        let a = &self.a;
        match self.dim {
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    /// Inverse by cofactors; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        let a = &self.a;
        let mut out = Self::zeros(self.dim);
        match self.dim {
            2 => {
                out.a[0][0] = a[1][1] / d;
                out.a[0][1] = -a[0][1] / d;
                out.a[1][0] = -a[1][0] / d;
                out.a[1][1] = a[0][0] / d;
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                        let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                        out.a[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
                    }
                }
            }
        }
        Some(out)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = T::zero();
                for k in 0..self.dim {
                    s += self.a[i][k] * other.a[k][j];
                }
                out.a[i][j] = s;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.a[i][j] = self.a[j][i];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.a[i][j] - other.a[i][j]).abs());
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.max_abs_diff(&self.transpose()) <= tol
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn sym_eigenvalues(&self) -> Vec<T> {
        let n = self.dim;
        let mut a = self.a;
        for _sweep in 0..50 {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off <= T::epsilon() * T::epsilon() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q] == T::zero() {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }
}

/// Solve `m x = b` in place by Gaussian elimination with partial pivoting.
/// `m` is row-major `k x k`. Returns `None` when (numerically) singular.
pub fn solve_dense<T: Real>(m: &mut [T], b: &mut [T], k: usize) -> Option<()> {
    for col in 0..k {
        let mut piv = col;
        for row in (col + 1)..k {
            if m[row * k + col].abs() > m[piv * k + col].abs() {
                piv = row;
            }
        }
        if m[piv * k + col].abs() <= T::min_positive_value() {
            return None;
        }
        if piv != col {
            for c in 0..k {
                m.swap(col * k + c, piv * k + c);
            }
            b.swap(col, piv);
        }
        let d = m[col * k + col];
        for row in (col + 1)..k {
            let f = m[row * k + col] / d;
            if f == T::zero() {
                continue;
            }
            for c in col..k {
                let v = m[col * k + c];
                m[row * k + c] -= f * v;
            }
            let bc = b[col];
            b[row] -= f * bc;
        }
    }
    for row in (0..k).rev() {
        let mut s = b[row];
        for c in (row + 1)..k {
            s -= m[row * k + c] * b[c];
        }
        b[row] = s / m[row * k + row];
    }
    Some(())
}
