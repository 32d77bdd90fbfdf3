//! Small dense linear-algebra kernel: vector helpers, symmetric matrices,
//! a cyclic Jacobi eigensolver and projections onto an eigenvector.

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const UNIT_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn check_unit(u: &[f64]) -> Result<f64> {
    let n = norm(u);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit { norm: n });
    }
    Ok(n)
}

/// Dense symmetric matrix. Both triangles are stored and kept bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    n: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds the matrix from the upper triangle `f(i, j)` with `i <= j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let x = f(i, j);
                m.data[i * n + j] = x;
                m.data[j * n + i] = x;
            }
        }
        m
    }

    /// Row-major input; rejects non-finite or non-symmetric entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
            data.extend_from_slice(row);
        }
        for i in 0..n {
            for j in i + 1..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (k, x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    row: k / self.n,
                    col: k % self.n,
                });
            }
        }
        Ok(())
    }
}

/// Eigenpairs ordered by descending eigenvalue.
///
/// `values` always holds the full spectrum. `vectors` holds the leading
/// eigenvectors; it covers the whole spectrum when produced by [`sym_eig`]
/// but may stop at the numerical rank when the spectrum was obtained from a
/// low-rank factor (the omitted eigenvalues are then exactly zero).
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> Option<&[f64]> {
        self.vectors.get(i).map(Vec::as_slice)
    }

    /// Frobenius norm of `m - sum_i lambda_i u_i u_i^T`.
    pub fn reconstruction_error(&self, m: &SymMat) -> f64 {
        let n = m.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut r = m.get(i, j);
                for (lambda, u) in self.values.iter().zip(&self.vectors) {
                    r -= lambda * u[i] * u[j];
                }
                acc += r * r;
            }
        }
        acc.sqrt()
    }

    /// Whether the eigenvalue at `index` (0-based) is within `rel * lambda_1`
    /// of a neighbour, making its eigenvector ill-defined.
    pub fn is_degenerate(&self, index: usize, rel: f64) -> bool {
        let top = self.values.first().copied().unwrap_or(0.0).abs();
        let tol = rel * top;
        let v = self.values[index];
        let below = self.values.get(index + 1).map(|&w| v - w <= tol);
        let above = index
            .checked_sub(1)
            .map(|k| self.values[k] - v <= tol);
        below.unwrap_or(false) || above.unwrap_or(false)
    }
}

/// Flips `u` so that its first component with magnitude above 1e-12 is positive.
pub fn canonical_sign(u: &mut [f64]) {
    if let Some(&first) = u.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &SymMat) -> Result<EigenPairs> {
    m.check_finite()?;
    let n = m.dim();
    let mut a = m.data.clone();
    let mut v = SymMat::identity(n).data;
    let fro = m.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * fro {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_p = c * arp - s * arq;
                    let new_q = s * arp + c * arq;
                    a[r * n + p] = new_p;
                    a[p * n + r] = new_p;
                    a[r * n + q] = new_q;
                    a[q * n + r] = new_q;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));

    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut u: Vec<f64> = (0..n).map(|r| v[r * n + k]).collect();
            canonical_sign(&mut u);
            u
        })
        .collect();
    Ok(EigenPairs { values, vectors })
}

/// Norms of the components of `v` along the unit vector `u` and in its
/// orthogonal complement.
pub fn project_split(v: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    if v.len() != u.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let un = check_unit(u)?;
    let c = dot(v, u) / (un * un);
    let perp = v
        .iter()
        .zip(u)
        .map(|(x, y)| {
            let r = x - c * y;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(((c * un).abs(), perp))
}

/// Angle in `[0, pi/2]` between the lines spanned by two unit vectors.
pub fn principal_angle(u_prev: &[f64], u_next: &[f64]) -> Result<f64> {
    if u_prev.len() != u_next.len() {
        return Err(Error::Dimension {
            expected: u_prev.len(),
            got: u_next.len(),
        });
    }
    check_unit(u_prev)?;
    check_unit(u_next)?;
    let s = if dot(u_prev, u_next) < 0.0 { -1.0 } else { 1.0 };
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u_prev.iter().zip(u_next) {
        diff += (a - s * b).powi(2);
        sum += (a + s * b).powi(2);
    }
    // 2 atan2 keeps precision for tiny angles where acos loses it.
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}
