//! One-step stopping certificate.
//!
//! Given the training error `v0` and the NTK spectrum at `t0`, picks a step
//! `eta1 = beta / lambda1_lo`, takes that single gradient step, and bounds the
//! population loss at `t1 = t0 + eta1` by `Omega1` plus a concentration term.
//! The scalar formulas are exposed individually so they can be checked in
//! isolation; [`certify`] wires them together.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ntk::{eigvec_rotation, ntk_matrix, spectral_bounds, NtkSnapshot, SpectralBounds, DEGENERACY_REL};
use crate::numlin::{norm, norm1, project_split};
use crate::shallow_net::{empirical_loss, Activation, Dataset, NetworkState};

/// Slack used when comparing quantities that are equal in exact arithmetic.
const CHAIN_REL_TOL: f64 = 1e-12;
const MC_BETA_ITERS: usize = 50;

/// Rademacher complexity factor `2m / (mu sqrt(n))`.
pub fn phi(m: usize, mu: f64, n: usize) -> f64 {
    2.0 * m as f64 / (mu * (n as f64).sqrt())
}

/// Worst-case `M1 = (m/mu) (1 + (beta/lambda1_lo) ||v0||_1 / mu)`.
pub fn m1_conservative(m: usize, mu: f64, beta: f64, lambda1_lo: f64, v0_norm1: f64) -> f64 {
    m as f64 / mu * (1.0 + beta / lambda1_lo * v0_norm1 / mu)
}

/// Source of fresh `(x, y)` pairs from the data distribution.
pub trait Sampler {
    fn draw(&mut self) -> (Vec<f64>, f64);
}

/// Uniform draws with replacement from a held-out pool.
pub struct PoolSampler<'a> {
    pool: &'a Dataset,
    rng: ChaCha8Rng,
}

impl<'a> PoolSampler<'a> {
    pub fn new(pool: &'a Dataset, seed: u64) -> Self {
        Self {
            pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Sampler for PoolSampler<'_> {
    fn draw(&mut self) -> (Vec<f64>, f64) {
        let i = self.rng.random_range(0..self.pool.len());
        (self.pool.input(i).to_vec(), self.pool.target(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloM1 {
    /// Largest observed `|f - y|` inflated by one sample standard deviation.
    pub m1: f64,
    pub max: f64,
    pub std: f64,
    /// Failure probability attached to the estimate, `std / 10`.
    pub eps: f64,
    pub trials: usize,
}

/// Fixed batch of fresh samples, reusable across candidate step sizes.
#[derive(Debug, Clone)]
pub struct McDraws {
    draws: Vec<(Vec<f64>, f64)>,
}

impl McDraws {
    pub fn sample(sampler: &mut dyn Sampler, n_trials: usize) -> Result<Self> {
        if n_trials < 2 {
            return Err(Error::InvalidParameter("Monte-Carlo M1 needs at least 2 trials".into()));
        }
        Ok(Self {
            draws: (0..n_trials).map(|_| sampler.draw()).collect(),
        })
    }

    pub fn estimate(&self, s0: &NetworkState, s1: &NetworkState) -> MonteCarloM1 {
        let maxima: Vec<f64> = self
            .draws
            .iter()
            .map(|(x, y)| (s0.forward(x) - y).abs().max((s1.forward(x) - y).abs()))
            .collect();
        let trials = maxima.len();
        let max = maxima.iter().copied().fold(0.0, f64::max);
        let mean = maxima.iter().sum::<f64>() / trials as f64;
        let var = maxima.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let std = var.sqrt();
        MonteCarloM1 {
            m1: max + std,
            max,
            std,
            eps: std / 10.0,
            trials,
        }
    }
}

/// Monte-Carlo estimate of the sup of `|f(W(t), x) - y|` over `t in {t0, t1}`.
pub fn m1_monte_carlo(
    s0: &NetworkState,
    s1: &NetworkState,
    sampler: &mut dyn Sampler,
    n_trials: usize,
) -> Result<MonteCarloM1> {
    Ok(McDraws::sample(sampler, n_trials)?.estimate(s0, s1))
}

/// `(A1, B1)`: norms of `v0` along `u1` and in its orthogonal complement.
pub fn decompose_error(v0: &[f64], u1: &[f64]) -> Result<(f64, f64)> {
    let (a, b) = project_split(v0, u1)?;
    if a <= 1e-12 * (1.0 + norm(v0)) {
        return Err(Error::ZeroProjection(a));
    }
    Ok((a, b))
}

/// `gamma1 = 4 sqrt(n) M1 ||v0||_1 m / ((1+alpha1)^2 lambda1_lo A1^2 mu^2)`.
#[allow(clippy::too_many_arguments)]
pub fn gamma1(
    m1: f64,
    v0_norm1: f64,
    lambda1_lo: f64,
    a1: f64,
    n: usize,
    m: usize,
    mu: f64,
    alpha1: f64,
) -> Result<f64> {
    if !(a1 > 0.0) {
        return Err(Error::ZeroProjection(a1));
    }
    let num = 4.0 * (n as f64).sqrt() * m1 * v0_norm1 * m as f64;
    let den = (1.0 + alpha1).powi(2) * lambda1_lo * a1 * a1 * mu * mu;
    Ok(num / den)
}

/// Decrease-maximizing `beta* = 1 - gamma1`.
pub fn beta_star(gamma1: f64) -> Result<f64> {
    if !(gamma1 > 0.0 && gamma1 < 1.0) {
        return Err(Error::NoAdmissibleBeta { gamma1 });
    }
    Ok(1.0 - gamma1)
}

/// `(eta1, t1) = (beta / lambda1_lo, t0 + eta1)`.
pub fn stopping_time(beta: f64, lambda1_lo: f64, t0: f64) -> (f64, f64) {
    let eta1 = beta / lambda1_lo;
    (eta1, t0 + eta1)
}

/// Smallest admissible `alpha1 = (sigma1/rho1) (theta1 + B1/A1)`.
pub fn alpha_min(sigma1: f64, rho1: f64, theta1: f64, b1: f64, a1: f64) -> f64 {
    if sigma1 == 0.0 {
        return 0.0;
    }
    sigma1 / rho1 * (theta1 + b1 / a1)
}

/// `(A1', B1') = (rho1 (1+alpha1) A1, B1 + sigma1 A1)`.
pub fn contracted_projections(a1: f64, b1: f64, rho1: f64, sigma1: f64, alpha1: f64) -> (f64, f64) {
    (rho1 * (1.0 + alpha1) * a1, b1 + sigma1 * a1)
}

/// `nu0 = 4 M1 Phi max_r ||w_r(t0)||`, `nu1 = nu0 + 4 M1 (Phi/mu) eta1 ||v0||_1`.
pub fn nu_bounds(m1: f64, phi: f64, mu: f64, eta1: f64, v0_norm1: f64, w_max_t0: f64) -> (f64, f64) {
    let nu0 = 4.0 * m1 * phi * w_max_t0;
    (nu0, nu0 + 4.0 * m1 * phi / mu * eta1 * v0_norm1)
}

/// Generalization term `4 M1 c Phi`.
pub fn l_g(m1: f64, phi: f64, c: f64) -> f64 {
    4.0 * m1 * c * phi
}

/// `Delta1` and `D1`, refusing when `gamma1 >= 1 - beta/2`.
pub fn gap(a1: f64, b1: f64, alpha1: f64, sigma1: f64, beta: f64, gamma1: f64, n: usize) -> Result<(f64, f64)> {
    if gamma1 >= 1.0 - beta / 2.0 {
        return Err(Error::ConditionViolated { gamma1, beta });
    }
    Ok(gap_unchecked(a1, b1, alpha1, sigma1, beta, gamma1, n))
}

fn gap_unchecked(a1: f64, b1: f64, alpha1: f64, sigma1: f64, beta: f64, gamma1: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let d1 = a1 * a1 * (2.0 * alpha1 + alpha1 * alpha1 + sigma1 * sigma1 + 2.0 * sigma1 * b1 / a1);
    let delta1 = -2.0 * a1 * a1 / n * beta * (1.0 - gamma1 - beta / 2.0) * (1.0 + alpha1).powi(2) + d1 / n;
    (delta1, d1)
}

/// `omega0 = ||v0||^2/n + nu0`, `omega1 = (A1'^2 + B1'^2)/n + nu1`.
pub fn omegas(v0_norm: f64, nu0: f64, a1p: f64, b1p: f64, nu1: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    (v0_norm * v0_norm / n + nu0, (a1p * a1p + b1p * b1p) / n + nu1)
}

pub fn omega_bound(omega0: f64, delta1: f64) -> f64 {
    omega0 + delta1
}

/// `Omega1 + 3 M1^2 sqrt(log(2/delta) / (2n))`, the bound holding with
/// probability `1 - delta`. The log term is clamped at zero for `delta >= 2`.
pub fn population_bound(omega1: f64, m1: f64, n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} must be positive")));
    }
    let log_term = (2.0 / delta).ln().max(0.0);
    Ok(omega1 + 3.0 * m1 * m1 * (log_term / (2.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum M1Source {
    Conservative,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Reliability {
    /// Decrease condition holds and `lambda1(t1)` lies within the probe bounds.
    Certified,
    /// The post-step check failed (spectral bound or decrease condition).
    Unverified,
    /// Top eigenvalue is degenerate, so the rotation angle is ill-defined.
    Unreliable,
}

impl Reliability {
    pub fn as_str(self) -> &'static str {
        match self {
            Reliability::Certified => "CERTIFIED",
            Reliability::Unverified => "UNVERIFIED",
            Reliability::Unreliable => "UNRELIABLE",
        }
    }
}

/// Every scalar of the one-step bound plus the measurements that fed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCertificate {
    pub n: usize,
    pub m: usize,
    pub mu: f64,
    pub t0: f64,
    pub phi: f64,
    pub v0_norm: f64,
    pub v0_norm1: f64,
    pub w_max_t0: f64,
    pub lambda1_t0: f64,
    pub lambda1_lo: f64,
    pub lambda1_hi: f64,
    pub lambda1_t1: f64,
    pub a1: f64,
    pub b1: f64,
    pub theta1: f64,
    pub rho1: f64,
    pub sigma1: f64,
    pub alpha1: f64,
    pub a1p: f64,
    pub b1p: f64,
    /// `gamma1` with `alpha1 = 0`, used to choose `beta`.
    pub gamma1_initial: f64,
    pub gamma1: f64,
    pub beta: f64,
    pub eta1: f64,
    pub t1: f64,
    pub m1: f64,
    pub m1_source: M1Source,
    /// `M1` from the worst-case formula at the chosen `beta`, for comparison.
    pub m1_conservative: f64,
    /// Monte-Carlo failure probability; zero for the conservative source.
    pub eps: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub d1: f64,
    pub delta1: f64,
    pub big_omega1: f64,
    pub delta: f64,
    pub pop_bound: f64,
    pub condition_ok: bool,
    pub reliability: Reliability,
    /// Measured `||v(t1)||^2 / n`.
    pub ls_t1: f64,
}

impl StopCertificate {
    fn fields(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| fmt_sig(x, 6);
        vec![
            ("n", self.n.to_string()),
            ("m", self.m.to_string()),
            ("mu", f(self.mu)),
            ("t0", f(self.t0)),
            ("phi", f(self.phi)),
            ("v0_norm", f(self.v0_norm)),
            ("v0_norm1", f(self.v0_norm1)),
            ("w_max_t0", f(self.w_max_t0)),
            ("lambda1_t0", f(self.lambda1_t0)),
            ("lambda1_lo", f(self.lambda1_lo)),
            ("lambda1_hi", f(self.lambda1_hi)),
            ("lambda1_t1", f(self.lambda1_t1)),
            ("a1", f(self.a1)),
            ("b1", f(self.b1)),
            ("theta1", f(self.theta1)),
            ("rho1", f(self.rho1)),
            ("sigma1", f(self.sigma1)),
            ("alpha1", f(self.alpha1)),
            ("a1p", f(self.a1p)),
            ("b1p", f(self.b1p)),
            ("gamma1_initial", f(self.gamma1_initial)),
            ("gamma1", f(self.gamma1)),
            ("beta", f(self.beta)),
            ("eta1", f(self.eta1)),
            ("t1", f(self.t1)),
            ("m1", f(self.m1)),
            (
                "m1_source",
                match self.m1_source {
                    M1Source::Conservative => "conservative".into(),
                    M1Source::MonteCarlo => "monte-carlo".into(),
                },
            ),
            ("m1_conservative", f(self.m1_conservative)),
            ("eps", f(self.eps)),
            ("nu0", f(self.nu0)),
            ("nu1", f(self.nu1)),
            ("omega0", f(self.omega0)),
            ("omega1", f(self.omega1)),
            ("d1", f(self.d1)),
            ("delta1", f(self.delta1)),
            ("big_omega1", f(self.big_omega1)),
            ("delta", f(self.delta)),
            ("pop_bound", f(self.pop_bound)),
            ("condition_ok", self.condition_ok.to_string()),
            ("reliability", self.reliability.as_str().into()),
            ("ls_t1", f(self.ls_t1)),
        ]
    }

    /// Flat `key=value` lines, one per field, 6 significant digits.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// JSON report: every field rounded to 6 significant digits, plus a
    /// `provenance` map describing where the inputs came from.
    pub fn to_json(&self, provenance: &BTreeMap<String, String>) -> Result<String> {
        let mut obj = serde_json::Map::new();
        for (k, v) in self.fields() {
            let value = match v.parse::<f64>() {
                Ok(x) if k != "n" && k != "m" => serde_json::json!(x),
                _ => match v.as_str() {
                    "true" => serde_json::json!(true),
                    "false" => serde_json::json!(false),
                    s => s
                        .parse::<u64>()
                        .map(|u| serde_json::json!(u))
                        .unwrap_or_else(|_| serde_json::json!(s)),
                },
            };
            obj.insert(k.to_string(), value);
        }
        obj.insert("provenance".into(), serde_json::to_value(provenance)?);
        Ok(serde_json::to_string_pretty(&serde_json::Value::Object(obj))?)
    }
}

/// `%g`-style rendering with `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, x);
        let (mant, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mant), e)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    };
    // Rounding may have bumped the exponent (9.999995 -> 10.0000).
    if s.parse::<f64>().map(|v| v.abs().log10().floor() as i32 != exp).unwrap_or(false)
        && !s.contains('e')
    {
        let decimals = (digits as i32 - 2 - exp).max(0) as usize;
        return trim_zeros(&format!("{x:.decimals$}")).to_string();
    }
    s
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainReport {
    pub lg_t1: f64,
    pub nu1: f64,
    pub omega1: f64,
    pub big_omega1: f64,
    pub ordered: bool,
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + CHAIN_REL_TOL * (1.0 + b.abs())
}

/// Measures `L_G(t1)` with `c1 = max(max_r ||w_r(t0)||, max_r ||w_r(t1)||)`
/// and checks `L_G(t1) <= nu1 <= omega1 <= Omega1`.
pub fn chain_check(s1: &NetworkState, cert: &StopCertificate, phi: f64) -> ChainReport {
    let c1 = cert.w_max_t0.max(s1.max_neuron_norm());
    let lg_t1 = l_g(cert.m1, phi, c1);
    let ordered = leq(lg_t1, cert.nu1) && leq(cert.nu1, cert.omega1) && leq(cert.omega1, cert.big_omega1);
    ChainReport {
        lg_t1,
        nu1: cert.nu1,
        omega1: cert.omega1,
        big_omega1: cert.big_omega1,
        ordered,
    }
}

/// Second-step factor `gamma2` with `alpha2 = 0`, from the kernel snapshot
/// at `t1` and the error `v(t1)`. Infinite when `v(t1)` is orthogonal to `u2`.
pub fn next_gamma(
    snap_t1: &NtkSnapshot,
    v1: &[f64],
    m2: f64,
    lambda2_lo: f64,
    m: usize,
    mu: f64,
) -> Result<f64> {
    let u2 = snap_t1
        .eig
        .vector(1)
        .ok_or_else(|| Error::InvalidParameter("kernel has no second eigenvector".into()))?;
    let (a2, _) = project_split(v1, u2)?;
    if a2 == 0.0 || !(lambda2_lo > 0.0) {
        return Ok(f64::INFINITY);
    }
    gamma1(m2, norm1(v1), lambda2_lo, a2, v1.len(), m, mu, 0.0)
}

/// One row of a step-size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub alpha1: f64,
    pub gamma1: f64,
    pub delta1: f64,
    pub big_omega1: f64,
    /// `gamma1 < 1 - beta/2` at this `beta`.
    pub admissible: bool,
}

/// Inputs held fixed while `beta` varies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepInputs {
    pub a1: f64,
    pub b1: f64,
    pub theta1: f64,
    pub lambda1_lo: f64,
    pub lambda1_hi: f64,
    /// `gamma1` at `alpha1 = 0`.
    pub gamma1_base: f64,
    pub omega0: f64,
    pub n: usize,
}

impl SweepInputs {
    pub fn from_certificate(c: &StopCertificate) -> Self {
        Self {
            a1: c.a1,
            b1: c.b1,
            theta1: c.theta1,
            lambda1_lo: c.lambda1_lo,
            lambda1_hi: c.lambda1_hi,
            gamma1_base: c.gamma1_initial,
            omega0: c.omega0,
            n: c.n,
        }
    }

    pub fn at(&self, beta: f64) -> SweepRow {
        let eta = beta / self.lambda1_lo;
        let rho = 1.0 - beta;
        let sigma = eta * self.lambda1_hi * self.theta1;
        let alpha1 = alpha_min(sigma, rho, self.theta1, self.b1, self.a1);
        let gamma1 = self.gamma1_base / (1.0 + alpha1).powi(2);
        let (delta1, _) = gap_unchecked(self.a1, self.b1, alpha1, sigma, beta, gamma1, self.n);
        SweepRow {
            beta,
            alpha1,
            gamma1,
            delta1,
            big_omega1: omega_bound(self.omega0, delta1),
            admissible: gamma1 < 1.0 - beta / 2.0,
        }
    }
}

/// Evaluates `beta = step, 2 step, ...` below 1 and returns the rows with the
/// index of the admissible row of largest `|Delta1|`, if any.
pub fn beta_sweep(inputs: &SweepInputs, step: f64) -> Result<(Vec<SweepRow>, Option<usize>)> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::InvalidParameter(format!("beta step {step} outside (0, 1)")));
    }
    let count = ((1.0 / step).round() as usize).max(2);
    let rows: Vec<SweepRow> = (1..count)
        .map(|k| k as f64 * step)
        .filter(|b| *b < 1.0)
        .map(|b| inputs.at(b))
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.admissible)
        .max_by(|a, b| a.1.delta1.abs().total_cmp(&b.1.delta1.abs()))
        .map(|(i, _)| i);
    Ok((rows, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum M1Mode {
    Conservative,
    MonteCarlo { trials: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaMode {
    Star,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum T0Mode {
    Zero,
    Warmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub m1_mode: M1Mode,
    pub beta: BetaMode,
    pub delta: f64,
    pub probe_steps: usize,
    /// Probe learning rate; `None` spreads `1/lambda1(t0)` over the probe.
    pub probe_eta: Option<f64>,
    pub margin: f64,
    /// `None` picks warm-up for relu and zero otherwise.
    pub t0_mode: Option<T0Mode>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            m1_mode: M1Mode::MonteCarlo { trials: 500 },
            beta: BetaMode::Star,
            delta: 0.05,
            probe_steps: 10,
            probe_eta: None,
            margin: 0.05,
            t0_mode: None,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta {} outside (0, 1)", self.delta)));
        }
        if let BetaMode::Explicit(b) = self.beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidParameter(format!("beta {b} outside (0, 1)")));
            }
        }
        if let M1Mode::MonteCarlo { trials } = self.m1_mode {
            if trials < 2 {
                return Err(Error::InvalidParameter("Monte-Carlo M1 needs at least 2 trials".into()));
            }
        }
        Ok(())
    }
}

/// Everything produced by a certificate run.
#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub cert: StopCertificate,
    /// State at `t0` (after any warm-up).
    pub s0: NetworkState,
    /// State after the single step.
    pub s1: NetworkState,
    pub snap_t0: NtkSnapshot,
    pub snap_t1: NtkSnapshot,
    pub bounds: SpectralBounds,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub monte_carlo: Option<MonteCarloM1>,
    pub chain: ChainReport,
}

impl CertifyOutcome {
    pub fn provenance(&self) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        p.insert(
            "m1".into(),
            match self.monte_carlo {
                Some(mc) => format!(
                    "monte-carlo: max |f-y| over {} draws and t in {{t0,t1}} plus one std; eps = std/10",
                    mc.trials
                ),
                None => "conservative worst-case formula".into(),
            },
        );
        p.insert(
            "lambda_bounds".into(),
            "descent probe from t0 with multiplicative margin; lambda1(t1) re-checked post-step".into(),
        );
        p.insert(
            "theta1".into(),
            "beta chosen with theta1 = 0, all derived quantities re-issued with measured theta1".into(),
        );
        p.insert("c1".into(), "max over {t0, t1} of max_r ||w_r||".into());
        p.insert("chain_ordered".into(), self.chain.ordered.to_string());
        p.insert("lg_t1".into(), fmt_sig(self.chain.lg_t1, 6));
        p
    }
}

fn choose_beta_conservative(
    m: usize,
    mu: f64,
    lambda1_lo: f64,
    v0_norm1: f64,
    a1: f64,
    n: usize,
) -> Result<f64> {
    // gamma1 grows with beta through M1, so beta = 1 - gamma1(beta) has a
    // unique root when gamma1(0) < 1.
    let g = |beta: f64| -> Result<f64> {
        let m1 = m1_conservative(m, mu, beta, lambda1_lo, v0_norm1);
        gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, 0.0)
    };
    let g0 = g(0.0)?;
    if g0 >= 1.0 {
        return Err(Error::NoAdmissibleBeta { gamma1: g0 });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - g(mid)? - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-phase certificate: choose `beta` assuming no eigenvector rotation,
/// take the step, then re-issue every derived quantity with the measured
/// rotation angle and post-step spectrum.
pub fn certify(
    s_init: &NetworkState,
    data: &Dataset,
    sampler: &mut dyn Sampler,
    config: &CertifyConfig,
) -> Result<CertifyOutcome> {
    config.validate()?;
    data.bind(s_init)?;
    let n = data.len();
    let m = s_init.width();
    let mu = s_init.mu();

    let lambda_start = crate::ntk::top_eigenvalue(s_init, data)?;
    if !(lambda_start > 0.0) {
        return Err(Error::NonPositiveSpectrum(lambda_start));
    }
    let probe_eta = config
        .probe_eta
        .unwrap_or(1.0 / (lambda_start * config.probe_steps.max(1) as f64));

    let t0_mode = config.t0_mode.unwrap_or(match s_init.activation() {
        Activation::Relu => T0Mode::Warmup,
        _ => T0Mode::Zero,
    });
    let (mut bounds, _) = spectral_bounds(s_init, data, config.probe_steps, probe_eta, config.margin)?;
    let mut s0 = s_init.clone();
    if t0_mode == T0Mode::Warmup && bounds.warmup_t0 > s_init.t {
        while s0.t < bounds.warmup_t0 - 0.5 * probe_eta {
            s0 = s0.gd_step(data, probe_eta);
        }
        bounds = spectral_bounds(&s0, data, config.probe_steps, probe_eta, config.margin)?.0;
    }

    // Phase 1.
    let snap_t0 = ntk_matrix(&s0, data)?;
    let v0 = s0.training_error(data);
    let v0_norm = norm(&v0);
    let v0_norm1 = norm1(&v0);
    let (a1, b1) = decompose_error(&v0, snap_t0.vector(0))?;
    let lambda1_lo = bounds.lambda1_lo;
    let phi_val = phi(m, mu, n);

    let (beta, m1, m1_source, monte_carlo, s1) = match config.m1_mode {
        M1Mode::MonteCarlo { trials } => {
            // M1 must cover t1, which depends on beta, which depends on M1.
            // With one fixed batch of draws, iterate beta <- 1 - gamma1(M1(beta))
            // starting from the t0-only estimate.
            let draws = McDraws::sample(sampler, trials)?;
            let pick = |m1: f64| -> Result<f64> {
                let g = gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, 0.0)?;
                match config.beta {
                    BetaMode::Explicit(b) => {
                        if g >= 1.0 - b / 2.0 {
                            return Err(Error::ConditionViolated { gamma1: g, beta: b });
                        }
                        Ok(b)
                    }
                    BetaMode::Star => beta_star(g),
                }
            };
            let mut beta = pick(draws.estimate(&s0, &s0).m1)?;
            let mut step = None;
            for _ in 0..MC_BETA_ITERS {
                let (eta, _) = stopping_time(beta, lambda1_lo, s0.t);
                let s1 = s0.gd_step(data, eta);
                let mc = draws.estimate(&s0, &s1);
                let next = pick(mc.m1)?;
                let settled = (next - beta).abs() <= 1e-12;
                step = Some((beta, mc, s1));
                if settled {
                    break;
                }
                beta = next;
            }
            let (beta, mc, s1) = step.expect("at least one iteration");
            (beta, mc.m1, M1Source::MonteCarlo, Some(mc), s1)
        }
        M1Mode::Conservative => {
            let beta = match config.beta {
                BetaMode::Explicit(b) => {
                    let m1 = m1_conservative(m, mu, b, lambda1_lo, v0_norm1);
                    let g = gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, 0.0)?;
                    if g >= 1.0 - b / 2.0 {
                        return Err(Error::ConditionViolated { gamma1: g, beta: b });
                    }
                    b
                }
                BetaMode::Star => choose_beta_conservative(m, mu, lambda1_lo, v0_norm1, a1, n)?,
            };
            let m1 = m1_conservative(m, mu, beta, lambda1_lo, v0_norm1);
            let (eta, _) = stopping_time(beta, lambda1_lo, s0.t);
            (beta, m1, M1Source::Conservative, None, s0.gd_step(data, eta))
        }
    };
    let gamma1_initial = gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, 0.0)?;
    let (eta1, t1) = stopping_time(beta, lambda1_lo, s0.t);

    // Phase 2.
    let snap_t1 = ntk_matrix(&s1, data)?;
    let rotation = eigvec_rotation(&snap_t0, &snap_t1, 1)?;
    let theta1 = rotation.angle;
    let rho1 = 1.0 - beta;
    let sigma1 = eta1 * bounds.lambda1_hi * theta1;
    let alpha1 = alpha_min(sigma1, rho1, theta1, b1, a1);
    let gamma1_val = gamma1(m1, v0_norm1, lambda1_lo, a1, n, m, mu, alpha1)?;
    let condition_ok = gamma1_val < 1.0 - beta / 2.0;
    let (a1p, b1p) = contracted_projections(a1, b1, rho1, sigma1, alpha1);
    let w_max_t0 = s0.max_neuron_norm();
    let (nu0, nu1) = nu_bounds(m1, phi_val, mu, eta1, v0_norm1, w_max_t0);
    let (delta1, d1) = gap_unchecked(a1, b1, alpha1, sigma1, beta, gamma1_val, n);
    let (omega0, omega1) = omegas(v0_norm, nu0, a1p, b1p, nu1, n);
    let big_omega1 = omega_bound(omega0, delta1);
    let pop_bound = population_bound(big_omega1, m1, n, config.delta)?;
    let lambda1_t1 = snap_t1.lambda1();
    let v1 = s1.training_error(data);

    let degenerate = !rotation.reliable || snap_t0.eig.is_degenerate(0, DEGENERACY_REL);
    let reliability = if degenerate {
        Reliability::Unreliable
    } else if condition_ok && bounds.contains(lambda1_t1) {
        Reliability::Certified
    } else {
        Reliability::Unverified
    };

    let cert = StopCertificate {
        n,
        m,
        mu,
        t0: s0.t,
        phi: phi_val,
        v0_norm,
        v0_norm1,
        w_max_t0,
        lambda1_t0: snap_t0.lambda1(),
        lambda1_lo,
        lambda1_hi: bounds.lambda1_hi,
        lambda1_t1,
        a1,
        b1,
        theta1,
        rho1,
        sigma1,
        alpha1,
        a1p,
        b1p,
        gamma1_initial,
        gamma1: gamma1_val,
        beta,
        eta1,
        t1,
        m1,
        m1_source,
        m1_conservative: m1_conservative(m, mu, beta, lambda1_lo, v0_norm1),
        eps: monte_carlo.map_or(0.0, |mc| mc.eps),
        nu0,
        nu1,
        omega0,
        omega1,
        d1,
        delta1,
        big_omega1,
        delta: config.delta,
        pop_bound,
        condition_ok,
        reliability,
        ls_t1: empirical_loss(&v1),
    };
    let chain = chain_check(&s1, &cert, phi_val);
    Ok(CertifyOutcome {
        cert,
        s0,
        s1,
        snap_t0,
        snap_t1,
        bounds,
        v0,
        v1,
        monte_carlo,
        chain,
    })
}
