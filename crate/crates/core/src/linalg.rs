//! Dense symmetric matrices and a cyclic Jacobi eigensolver.

use crate::error::{Error, Result};

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix rows must all have length n".into()));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.n.max(1))
            .take(self.n)
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|a_ij - a_ji|` with its position.
    pub fn asymmetry(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = (self[(i, j)] - self[(j, i)]).abs();
                if d > worst.0 {
                    worst = (d, i, j);
                }
            }
        }
        worst
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self[(i, j)] * self[(i, j)];
                }
            }
        }
        s.sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Eigenvalues (unsorted) and eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps over all `(p, q)` pairs, annihilating each off-diagonal entry with
/// a plane rotation, until the off-diagonal Frobenius norm falls below
/// `1e-12 * ||A||_F`. Only the upper and lower triangles' average is used.
pub fn jacobi_eigen(a: &SquareMatrix) -> SymmetricEigen {
    let n = a.dim();
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = SquareMatrix::identity(n);
    let threshold = OFF_TOL * m.frobenius_norm();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && m.off_diagonal_norm() > threshold {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A <- A J
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                // A <- J^T A
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen {
        values: (0..n).map(|i| m[(i, i)]).collect(),
        vectors: v,
        sweeps,
    }
}

/// Smallest eigenvalue of a symmetric matrix (0 for the empty matrix).
///
/// Values within the solver's resolution `1e-12 * ||A||_F` of zero are
/// reported as exactly zero, so rank-deficient Gram matrices test as PSD
/// with zero tolerance.
pub fn min_eigenvalue(a: &SquareMatrix) -> f64 {
    let resolution = OFF_TOL * a.frobenius_norm();
    let lambda = jacobi_eigen(a)
        .values
        .into_iter()
        .min_by(|x, y| x.total_cmp(y))
        .unwrap_or(0.0);
    if lambda.abs() <= resolution {
        0.0
    } else {
        lambda
    }
}

/// Returns `(min eigenvalue >= -tol, min eigenvalue)`.
///
/// Rejects inputs whose asymmetry exceeds `1e-12` relative to the largest entry.
pub fn check_psd(a: &SquareMatrix, tol: f64) -> Result<(bool, f64)> {
    let (diff, row, col) = a.asymmetry();
    let scale = a.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
    if diff > 1e-12 * scale {
        return Err(Error::NotSymmetric { row, col, diff });
    }
    let lambda = min_eigenvalue(a);
    Ok((lambda >= -tol, lambda))
}

/// Nearest positive semidefinite matrix in Frobenius norm: eigendecompose and
/// clip negative eigenvalues to zero. Writes the result into `out`.
pub fn project_psd_into(a: &SquareMatrix, out: &mut SquareMatrix) {
    let n = a.dim();
    let eig = jacobi_eigen(a);
    let data = out.as_mut_slice();
    data.fill(0.0);
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda <= 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = lambda * eig.vectors[(i, k)];
            if vi == 0.0 {
                continue;
            }
            for j in i..n {
                data[i * n + j] += vi * eig.vectors[(j, k)];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
}

pub fn project_psd(a: &SquareMatrix) -> SquareMatrix {
    let mut out = SquareMatrix::zeros(a.dim());
    project_psd_into(a, &mut out);
    out
}

/// Euclidean projection of `v` onto the probability simplex, in place.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
