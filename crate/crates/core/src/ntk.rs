//! Neural tangent kernel at a given network state: the Gram matrix of the
//! per-sample weight gradients, its spectrum, and warm-up spectral bounds.

use crate::error::{Error, Result};
use crate::numlin::{canonical_sign, dot, norm, principal_angle, sym_eig, EigenPairs, SymMat};
use crate::shallow_net::{Dataset, NetworkState};

/// Relative gap below which an eigenvalue is treated as degenerate.
pub const DEGENERACY_REL: f64 = 1e-9;
/// Relative threshold for the numerical rank.
pub const RANK_REL: f64 = 1e-8;
/// Gram eigenvalues below this fraction of the top one are not lifted to
/// eigenvectors of the full kernel.
const LIFT_REL: f64 = 1e-10;
const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct NtkSnapshot {
    pub t: f64,
    pub h: SymMat,
    pub eig: EigenPairs,
}

impl NtkSnapshot {
    pub fn lambda(&self, i: usize) -> f64 {
        self.eig.values[i]
    }

    pub fn lambda1(&self) -> f64 {
        self.eig.values[0]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.eig
            .vector(i)
            .expect("eigenvector beyond the numerical rank requested")
    }

    /// Count of eigenvalues above `RANK_REL * lambda_1`.
    pub fn numerical_rank(&self) -> usize {
        let tol = RANK_REL * self.lambda1();
        self.eig.values.iter().filter(|&&l| l > tol).count()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig.values.last().copied().unwrap_or(0.0)
    }
}

/// Rows are the flattened per-sample gradients `df(x_i)/dW`.
pub fn jacobian(s: &NetworkState, data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.len()).map(|i| s.grad_weights(data.input(i))).collect()
}

/// `H_ij = (x_i . x_j / mu^2) sum_r act'(w_r.x_i) act'(w_r.x_j)`.
pub fn ntk_gram(s: &NetworkState, data: &Dataset) -> SymMat {
    let m = s.width();
    let act = s.activation();
    let deriv: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let x = data.input(i);
            (0..m).map(|r| act.derivative(dot(s.neuron(r), x))).collect()
        })
        .collect();
    let inv_mu2 = 1.0 / (s.mu() * s.mu());
    SymMat::from_upper(data.len(), |i, j| {
        dot(data.input(i), data.input(j)) * dot(&deriv[i], &deriv[j]) * inv_mu2
    })
}

/// Spectrum of `J J^T` for a row-major `n x p` factor `J`.
///
/// When `p < n` the nonzero part of the spectrum is taken from the `p x p`
/// matrix `J^T J`, and its eigenvectors are lifted through `J`; the remaining
/// `n - p` eigenvalues are zero and carry no stored eigenvector. Otherwise the
/// `n x n` kernel is diagonalized directly.
pub fn gram_spectrum(jac: &[Vec<f64>]) -> Result<EigenPairs> {
    let n = jac.len();
    let p = jac.first().map_or(0, Vec::len);
    if p >= n {
        let h = SymMat::from_upper(n, |i, j| dot(&jac[i], &jac[j]));
        return sym_eig(&h);
    }
    let g = SymMat::from_upper(p, |a, b| jac.iter().map(|row| row[a] * row[b]).sum());
    let small = sym_eig(&g)?;
    let top = small.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut values = small.values.clone();
    values.resize(n, 0.0);
    values.sort_by(|a, b| b.total_cmp(a));

    let mut vectors = Vec::new();
    for (lambda, g_vec) in small.values.iter().zip(&small.vectors) {
        if *lambda <= LIFT_REL * top || *lambda <= 0.0 {
            break;
        }
        let mut u: Vec<f64> = jac.iter().map(|row| dot(row, g_vec)).collect();
        let un = norm(&u);
        u.iter_mut().for_each(|x| *x /= un);
        canonical_sign(&mut u);
        vectors.push(u);
    }
    Ok(EigenPairs { values, vectors })
}

pub fn ntk_matrix(s: &NetworkState, data: &Dataset) -> Result<NtkSnapshot> {
    data.bind(s)?;
    let h = ntk_gram(s, data);
    let eig = gram_spectrum(&jacobian(s, data))?;
    Ok(NtkSnapshot { t: s.t, h, eig })
}

/// Top kernel eigenvalue by power iteration on whichever of `J^T J` and
/// `J J^T` is smaller.
pub fn top_eigenvalue(s: &NetworkState, data: &Dataset) -> Result<f64> {
    data.bind(s)?;
    let jac = jacobian(s, data);
    let n = jac.len();
    let p = jac.first().map_or(0, Vec::len);
    if p < n {
        power_iteration(p, &|x: &[f64]| {
            let mut out = vec![0.0; p];
            for row in &jac {
                let c = dot(row, x);
                out.iter_mut().zip(row).for_each(|(o, r)| *o += c * r);
            }
            out
        })
    } else {
        power_iteration(n, &|x: &[f64]| {
            let mut jtx = vec![0.0; p];
            for (row, c) in jac.iter().zip(x) {
                jtx.iter_mut().zip(row).for_each(|(o, r)| *o += c * r);
            }
            jac.iter().map(|row| dot(row, &jtx)).collect()
        })
    }
}

fn power_iteration(dim: usize, apply: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<f64> {
    let mut x: Vec<f64> = (0..dim).map(|k| 1.0 + 1.0 / (k as f64 + 2.0)).collect();
    let xn = norm(&x);
    x.iter_mut().for_each(|v| *v /= xn);
    for _ in 0..POWER_MAX_ITERS {
        let y = apply(&x);
        let lambda = dot(&x, &y);
        let yn = norm(&y);
        if !(yn > 0.0) {
            return Ok(0.0);
        }
        let residual = y.iter().zip(&x).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= POWER_TOL * lambda {
            return Ok(lambda);
        }
        x = y.into_iter().map(|v| v / yn).collect();
    }
    Err(Error::InvalidParameter("power iteration did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub lambda1_lo: f64,
    pub lambda1_hi: f64,
    pub warmup_t0: f64,
}

impl SpectralBounds {
    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lambda1_lo && lambda <= self.lambda1_hi
    }
}

#[derive(Debug, Clone)]
pub struct ProbeTrace {
    pub times: Vec<f64>,
    pub lambda1: Vec<f64>,
}

/// Runs a throwaway descent probe from a copy of `s` and brackets the
/// observed top eigenvalue with a multiplicative margin.
pub fn spectral_bounds(
    s: &NetworkState,
    data: &Dataset,
    probe_steps: usize,
    probe_eta: f64,
    margin: f64,
) -> Result<(SpectralBounds, ProbeTrace)> {
    if probe_steps == 0 {
        return Err(Error::InvalidParameter("probe_steps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidParameter(format!("margin {margin} outside [0, 1)")));
    }
    if !(probe_eta > 0.0) {
        return Err(Error::InvalidParameter(format!("probe_eta {probe_eta} must be positive")));
    }
    data.bind(s)?;
    let mut state = s.clone();
    let mut times = Vec::with_capacity(probe_steps + 1);
    let mut lambda1 = Vec::with_capacity(probe_steps + 1);
    for k in 0..=probe_steps {
        let l = top_eigenvalue(&state, data)?;
        if !(l > 0.0) {
            return Err(Error::NonPositiveSpectrum(l));
        }
        times.push(state.t);
        lambda1.push(l);
        if k < probe_steps {
            state = state.gd_step(data, probe_eta);
        }
    }
    let lo = lambda1.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lambda1.iter().copied().fold(0.0, f64::max);

    // First probe index after which every successive change stays below 1%.
    let mut settle = lambda1.len() - 1;
    for k in (0..lambda1.len() - 1).rev() {
        if ((lambda1[k + 1] - lambda1[k]) / lambda1[k]).abs() < 0.01 {
            settle = k;
        } else {
            break;
        }
    }
    Ok((
        SpectralBounds {
            lambda1_lo: (1.0 - margin) * lo,
            lambda1_hi: (1.0 + margin) * hi,
            warmup_t0: times[settle],
        },
        ProbeTrace { times, lambda1 },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub angle: f64,
    /// False when the eigenvalue at the index is degenerate in either snapshot.
    pub reliable: bool,
}

/// Angle between the `index`-th (1-based) eigenvectors of two snapshots.
pub fn eigvec_rotation(a: &NtkSnapshot, b: &NtkSnapshot, index: usize) -> Result<Rotation> {
    if index == 0 {
        return Err(Error::InvalidParameter("eigenvector index is 1-based".into()));
    }
    if a.h.dim() != b.h.dim() {
        return Err(Error::Dimension {
            expected: a.h.dim(),
            got: b.h.dim(),
        });
    }
    let k = index - 1;
    let (ua, ub) = match (a.eig.vector(k), b.eig.vector(k)) {
        (Some(ua), Some(ub)) => (ua, ub),
        _ => {
            return Ok(Rotation {
                angle: f64::NAN,
                reliable: false,
            })
        }
    };
    let angle = principal_angle(ua, ub)?;
    let reliable =
        !a.eig.is_degenerate(k, DEGENERACY_REL) && !b.eig.is_degenerate(k, DEGENERACY_REL);
    Ok(Rotation { angle, reliable })
}

/// `(I - eta H) v`, the linearized error after one step.
pub fn linearized_step(h: &SymMat, v: &[f64], eta: f64) -> Vec<f64> {
    let hv = h.mul_vec(v);
    v.iter().zip(&hv).map(|(a, b)| a - eta * b).collect()
}
