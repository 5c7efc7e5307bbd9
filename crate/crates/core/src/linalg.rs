//! Dense nonsymmetric eigen-decomposition.
//!
//! Eigenvalues come from a real Schur factorization of the balanced matrix.
//! Right eigenvectors are recovered on demand by inverse iteration on the
//! quasi-triangular Schur factor, which is upper Hessenberg, so each vector
//! costs O(n^2).

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Real Schur factorization `D^-1 A D = Q T Q^T` with diagonal balancing `D`.
pub struct EigenDecomposition {
    q: DMatrix<f64>,
    t: DMatrix<f64>,
    scale: Vec<f64>,
    values: Vec<C64>,
    norm: f64,
}

impl EigenDecomposition {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Domain(format!(
                "eigenvalues of a non-square {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state matrix".into()));
        }
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                q: DMatrix::zeros(0, 0),
                t: DMatrix::zeros(0, 0),
                scale: vec![],
                values: vec![],
                norm: 0.0,
            });
        }
        let mut b = a.clone();
        let scale = balance(&mut b);
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let schur = nalgebra::linalg::Schur::try_new(b, f64::EPSILON, 100 * n.max(10))
            .ok_or(Error::EigenSolver)?;
        let values: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
        let (q, t) = schur.unpack();
        Ok(Self {
            q,
            t,
            scale,
            values,
            norm,
        })
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// Unit-norm right eigenvector for eigenvalue index `k`.
    pub fn vector(&self, k: usize) -> DVector<C64> {
        let n = self.order();
        let lambda = self.values[k];
        let shift = lambda + C64::new(self.norm.max(1.0) * 1e-13, 0.0);
        let mut y = DVector::from_fn(n, |i, _| {
            C64::new(1.0 + 0.1 * ((i * 7 + 3) % 11) as f64, 0.0)
        });
        for _ in 0..3 {
            y = hessenberg_solve(&self.t, shift, &y, self.norm);
            let nrm = y.norm();
            if nrm > 0.0 && nrm.is_finite() {
                y /= C64::new(nrm, 0.0);
            }
        }
        let mut v = DVector::from_fn(n, |i, _| {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..n {
                s += y[j] * self.q[(i, j)];
            }
            s * self.scale[i]
        });
        let nrm = v.norm();
        v /= C64::new(nrm, 0.0);
        v
    }
}

/// Solve `(H - shift I) x = b` for upper Hessenberg `H` by Gaussian
/// elimination with adjacent-row pivoting.
fn hessenberg_solve(h: &DMatrix<f64>, shift: C64, b: &DVector<C64>, norm: f64) -> DVector<C64> {
    let n = h.nrows();
    let mut m = DMatrix::from_fn(n, n, |i, j| {
        let v = C64::new(h[(i, j)], 0.0);
        if i == j {
            v - shift
        } else {
            v
        }
    });
    let mut x = b.clone();
    let tiny = f64::EPSILON * norm.max(1.0);
    for k in 0..n.saturating_sub(1) {
        if m[(k + 1, k)].norm() > m[(k, k)].norm() {
            m.swap_rows(k, k + 1);
            x.swap_rows(k, k + 1);
        }
        if m[(k, k)].norm() < tiny {
            m[(k, k)] = C64::new(tiny, 0.0);
        }
        let f = m[(k + 1, k)] / m[(k, k)];
        if f.norm() != 0.0 {
            for j in k..n {
                let v = m[(k, j)];
                m[(k + 1, j)] -= f * v;
            }
            let v = x[k];
            x[k + 1] -= f * v;
        }
    }
    if n > 0 && m[(n - 1, n - 1)].norm() < tiny {
        m[(n - 1, n - 1)] = C64::new(tiny, 0.0);
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    x
}

/// Diagonal similarity balancing by powers of two. Returns the scaling `d`
/// such that the balanced matrix equals `D^-1 A D`.
fn balance(a: &mut DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut d = vec![1.0; n];
    let radix = 2.0f64;
    let sqrdx = radix * radix;
    let mut done = false;
    let mut sweeps = 0;
    while !done && sweeps < 100 {
        done = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= sqrdx;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
    d
}

/// Solve a dense complex linear system, reporting singularity.
pub fn complex_solve(m: DMatrix<C64>, rhs: DMatrix<C64>, what: &str) -> Result<DMatrix<C64>> {
    let lu = m.lu();
    lu.solve(&rhs)
        .filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Frobenius norm.
pub fn fro(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &DMatrix<f64>, lambda: C64, v: &DVector<C64>) -> f64 {
        let ac = a.map(|x| C64::new(x, 0.0));
        (ac * v - v * lambda).norm()
    }

    #[test]
    fn diagonal_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let e = EigenDecomposition::new(&a).unwrap();
        let mut re: Vec<f64> = e.values().iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert_eq!(re, vec![-2.0, -1.0]);
    }

    #[test]
    fn badly_scaled_matrix_vectors_have_small_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[-1e5, 3e4, 0.0, 1e-3, -0.2, 5.0, 0.0, -4.0, -1e-2]);
        let e = EigenDecomposition::new(&a).unwrap();
        let anorm = fro(&a);
        for k in 0..3 {
            let v = e.vector(k);
            assert!(residual(&a, e.values()[k], &v) < 1e-10 * anorm);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(
            EigenDecomposition::new(&a),
            Err(Error::NonFinite(_))
        ));
    }
}
