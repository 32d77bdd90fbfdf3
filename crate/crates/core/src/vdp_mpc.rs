//! Van der Pol benchmark: plant, single-shooting tracking MPC used as the
//! labelling oracle, and the normalized imitation datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shallow_net::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdpState {
    pub x1: f64,
    pub x2: f64,
}

impl VdpState {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

fn field(x1: f64, x2: f64, u: f64) -> [f64; 2] {
    [x2, (1.0 - x1 * x1) * x2 - x1 + u]
}

/// One classical RK4 step with the control held constant.
pub fn vdp_step(s: VdpState, u: f64, dt: f64) -> VdpState {
    let k1 = field(s.x1, s.x2, u);
    let k2 = field(s.x1 + 0.5 * dt * k1[0], s.x2 + 0.5 * dt * k1[1], u);
    let k3 = field(s.x1 + 0.5 * dt * k2[0], s.x2 + 0.5 * dt * k2[1], u);
    let k4 = field(s.x1 + dt * k3[0], s.x2 + dt * k3[1], u);
    VdpState {
        x1: s.x1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x2: s.x2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    }
}

/// Tangent of the state with respect to `(x1, x2, u)` of the step input.
type Tangent = [[f64; 3]; 2];

fn field_tangent(x1: f64, x2: f64, t: &Tangent) -> Tangent {
    // Jacobian of the vector field: [[0, 1], [-2 x1 x2 - 1, 1 - x1^2]], du -> (0, 1).
    let a10 = -2.0 * x1 * x2 - 1.0;
    let a11 = 1.0 - x1 * x1;
    let mut out = [[0.0; 3]; 2];
    for c in 0..3 {
        out[0][c] = t[1][c];
        out[1][c] = a10 * t[0][c] + a11 * t[1][c] + if c == 2 { 1.0 } else { 0.0 };
    }
    out
}

fn axpy_tangent(base: &Tangent, h: f64, k: &Tangent) -> Tangent {
    let mut out = *base;
    for r in 0..2 {
        for c in 0..3 {
            out[r][c] += h * k[r][c];
        }
    }
    out
}

/// RK4 step together with its Jacobian with respect to `(x1, x2, u)`.
fn vdp_step_tangent(s: VdpState, u: f64, dt: f64) -> (VdpState, Tangent) {
    let t0: Tangent = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let k1 = field(s.x1, s.x2, u);
    let tk1 = field_tangent(s.x1, s.x2, &t0);

    let y2 = [s.x1 + 0.5 * dt * k1[0], s.x2 + 0.5 * dt * k1[1]];
    let ty2 = axpy_tangent(&t0, 0.5 * dt, &tk1);
    let k2 = field(y2[0], y2[1], u);
    let tk2 = field_tangent(y2[0], y2[1], &ty2);

    let y3 = [s.x1 + 0.5 * dt * k2[0], s.x2 + 0.5 * dt * k2[1]];
    let ty3 = axpy_tangent(&t0, 0.5 * dt, &tk2);
    let k3 = field(y3[0], y3[1], u);
    let tk3 = field_tangent(y3[0], y3[1], &ty3);

    let y4 = [s.x1 + dt * k3[0], s.x2 + dt * k3[1]];
    let ty4 = axpy_tangent(&t0, dt, &tk3);
    let k4 = field(y4[0], y4[1], u);
    let tk4 = field_tangent(y4[0], y4[1], &ty4);

    let next = VdpState {
        x1: s.x1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x2: s.x2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    };
    let mut tn = t0;
    for r in 0..2 {
        for c in 0..3 {
            tn[r][c] += dt / 6.0 * (tk1[r][c] + 2.0 * tk2[r][c] + 2.0 * tk3[r][c] + tk4[r][c]);
        }
    }
    (next, tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q_track: f64,
    pub r_ctrl: f64,
    pub u_max: f64,
    pub opt_iters: usize,
    pub opt_step: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            q_track: 1.0,
            r_ctrl: 0.1,
            u_max: 3.0,
            opt_iters: 60,
            opt_step: 0.05,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.dt > 0.0
            && self.q_track >= 0.0
            && self.r_ctrl >= 0.0
            && self.u_max > 0.0
            && self.opt_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid MPC config {self:?}")))
        }
    }

    /// Tracking cost of a control sequence over the horizon.
    pub fn cost(&self, s: VdpState, x_ref: f64, controls: &[f64]) -> f64 {
        let mut x = s;
        let mut j = 0.0;
        for &u in controls {
            x = vdp_step(x, u, self.dt);
            j += self.q_track * (x.x1 - x_ref).powi(2) + self.r_ctrl * u * u;
        }
        j
    }

    /// Cost and its gradient with respect to the controls (discrete adjoint).
    pub fn cost_gradient(&self, s: VdpState, x_ref: f64, controls: &[f64]) -> Result<(f64, Vec<f64>)> {
        let h = controls.len();
        let mut states = Vec::with_capacity(h + 1);
        let mut jacs = Vec::with_capacity(h);
        states.push(s);
        let mut j = 0.0;
        for &u in controls {
            let (next, tan) = vdp_step_tangent(*states.last().unwrap(), u, self.dt);
            if !next.is_finite() {
                return Err(Error::Diverged);
            }
            j += self.q_track * (next.x1 - x_ref).powi(2) + self.r_ctrl * u * u;
            states.push(next);
            jacs.push(tan);
        }
        if !j.is_finite() {
            return Err(Error::Diverged);
        }
        let mut grad = vec![0.0; h];
        let mut lam = [0.0, 0.0];
        for k in (0..h).rev() {
            // lam becomes dJ/dx_{k+1}.
            lam[0] += 2.0 * self.q_track * (states[k + 1].x1 - x_ref);
            let tan = &jacs[k];
            grad[k] = 2.0 * self.r_ctrl * controls[k] + tan[0][2] * lam[0] + tan[1][2] * lam[1];
            lam = [
                tan[0][0] * lam[0] + tan[1][0] * lam[1],
                tan[0][1] * lam[0] + tan[1][1] * lam[1],
            ];
        }
        Ok((j, grad))
    }

    /// Projected gradient descent on the control sequence, in place.
    /// Returns the cost after each iteration.
    pub fn optimize(&self, s: VdpState, x_ref: f64, controls: &mut [f64]) -> Result<Vec<f64>> {
        let mut history = Vec::with_capacity(self.opt_iters);
        for _ in 0..self.opt_iters {
            let (_, g) = self.cost_gradient(s, x_ref, controls)?;
            for (u, gk) in controls.iter_mut().zip(&g) {
                *u = (*u - self.opt_step * gk).clamp(-self.u_max, self.u_max);
            }
            history.push(self.cost(s, x_ref, controls));
        }
        Ok(history)
    }
}

/// First control of the optimized sequence, starting from zero controls.
pub fn mpc_control(s: VdpState, x_ref: f64, cfg: &MpcConfig) -> Result<f64> {
    cfg.validate()?;
    let mut controls = vec![0.0; cfg.horizon];
    cfg.optimize(s, x_ref, &mut controls)?;
    Ok(controls[0])
}

/// Receding-horizon controller that warm-starts from the shifted previous plan.
#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: MpcConfig,
    plan: Vec<f64>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plan: vec![0.0; cfg.horizon],
            cfg,
        })
    }

    pub fn control(&mut self, s: VdpState, x_ref: f64) -> Result<f64> {
        self.cfg.optimize(s, x_ref, &mut self.plan)?;
        let u = self.plan[0];
        self.plan.rotate_left(1);
        let last = self.plan.len() - 1;
        self.plan[last] = self.plan[last.saturating_sub(1)];
        Ok(u)
    }
}

/// `x_ref(t) = amplitude sin(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub x1: f64,
    pub x2: f64,
    pub x_ref: f64,
    pub u: f64,
}

/// Closed-loop rollout. `None` runs the plant uncontrolled.
pub fn simulate(
    s0: VdpState,
    reference: &Sinusoid,
    cfg: &MpcConfig,
    steps: usize,
    controlled: bool,
) -> Result<Vec<RawSample>> {
    let mut ctrl = MpcController::new(*cfg)?;
    let mut s = s0;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let x_ref = reference.at(k as f64 * cfg.dt);
        let u = if controlled { ctrl.control(s, x_ref)? } else { 0.0 };
        out.push(RawSample {
            x1: s.x1,
            x2: s.x2,
            x_ref,
            u,
        });
        s = vdp_step(s, u, cfg.dt);
        if !s.is_finite() {
            return Err(Error::Diverged);
        }
    }
    Ok(out)
}

/// Mean squared tracking error `(x1 - x_ref)^2` along a rollout.
pub fn tracking_mse(samples: &[RawSample]) -> f64 {
    samples.iter().map(|s| (s.x1 - s.x_ref).powi(2)).sum::<f64>() / samples.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub mpc: MpcConfig,
    /// Plant steps per episode.
    pub episode_steps: usize,
    /// Samples kept per episode, drawn without replacement.
    pub samples_per_episode: usize,
    /// Initial states are uniform on `[-init_range, init_range]^2`.
    pub init_range: f64,
    pub amplitude: (f64, f64),
    pub omega: (f64, f64),
    /// Largest target magnitude as a fraction of `m/mu`.
    pub target_fraction: f64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            mpc: MpcConfig {
                r_ctrl: 0.01,
                u_max: 0.5,
                ..MpcConfig::default()
            },
            episode_steps: 5,
            samples_per_episode: 5,
            init_range: 0.2,
            amplitude: (0.4, 1.2),
            omega: (0.5, 1.5),
            target_fraction: 0.45,
        }
    }
}

/// Sidecar written next to generated data so targets can be mapped back to
/// controls: `u = y * u_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub u_scale: f64,
    pub seed: u64,
    pub n: usize,
    pub n_test: usize,
    pub net_m: usize,
    pub net_mu: f64,
    pub discarded: usize,
    pub config: DataGenConfig,
}

fn episode(cfg: &DataGenConfig, seed: u64) -> Result<Vec<RawSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.init_range;
    let s0 = VdpState::new(rng.random_range(-r..=r), rng.random_range(-r..=r));
    let reference = Sinusoid {
        amplitude: rng.random_range(cfg.amplitude.0..=cfg.amplitude.1),
        omega: rng.random_range(cfg.omega.0..=cfg.omega.1),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    };
    let traj = simulate(s0, &reference, &cfg.mpc, cfg.episode_steps, true)?;
    let keep = cfg.samples_per_episode.min(traj.len());
    let picked = rand::seq::index::sample(&mut rng, traj.len(), keep);
    let mut idx: Vec<usize> = picked.into_iter().collect();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| traj[i]).collect())
}

fn collect(cfg: &DataGenConfig, seeds: &[u64], want: usize) -> Result<Vec<RawSample>> {
    let per_episode: Vec<Vec<RawSample>> = seeds
        .par_iter()
        .map(|&s| episode(cfg, s))
        .collect::<Result<_>>()?;
    let mut all: Vec<RawSample> = per_episode.into_iter().flatten().collect();
    all.truncate(want);
    Ok(all)
}

/// Builds the normalized dataset: inputs `(x1, x2, x_ref)` projected onto
/// the unit sphere, targets `u / u_scale`. Zero inputs are dropped.
pub fn to_dataset(samples: &[RawSample], u_scale: f64) -> (Dataset, usize) {
    let mut inputs = Vec::with_capacity(samples.len() * 3);
    let mut targets = Vec::with_capacity(samples.len());
    let mut dropped = 0;
    for s in samples {
        let r = (s.x1 * s.x1 + s.x2 * s.x2 + s.x_ref * s.x_ref).sqrt();
        if r == 0.0 {
            dropped += 1;
            continue;
        }
        inputs.extend_from_slice(&[s.x1 / r, s.x2 / r, s.x_ref / r]);
        targets.push(s.u / u_scale);
    }
    let data = Dataset::new(3, inputs, targets).expect("normalized inputs are unit");
    (data, dropped)
}

/// Generates disjoint (by episode) train and test sets from closed-loop MPC
/// episodes with randomized initial states and sinusoidal references.
pub fn generate_dataset(
    n: usize,
    n_test: usize,
    seed: u64,
    cfg: &DataGenConfig,
    net_m: usize,
    net_mu: f64,
) -> Result<(Dataset, Dataset, ScalingRecord)> {
    if n == 0 || n_test == 0 {
        return Err(Error::InvalidParameter("n and n_test must be at least 1".into()));
    }
    if cfg.samples_per_episode == 0 || cfg.episode_steps == 0 {
        return Err(Error::InvalidParameter("episodes must yield samples".into()));
    }
    if !(cfg.target_fraction > 0.0 && cfg.target_fraction <= 1.0) {
        return Err(Error::InvalidParameter("target_fraction must be in (0, 1]".into()));
    }
    cfg.mpc.validate()?;
    let bound = net_m as f64 / net_mu;
    // Controls never exceed u_max, so this single factor bounds every target.
    let u_scale = cfg.mpc.u_max / (cfg.target_fraction * bound);

    let per = cfg.samples_per_episode.min(cfg.episode_steps);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_seeds = |count: usize| -> Vec<u64> { (0..count).map(|_| master.random()).collect() };

    let mut discarded = 0;
    let mut build = |want: usize, seeds_for: &mut dyn FnMut(usize) -> Vec<u64>| -> Result<Dataset> {
        let mut raw = Vec::new();
        loop {
            let missing = want - raw.len().min(want);
            if missing == 0 {
                break;
            }
            let seeds = seeds_for(missing.div_ceil(per));
            raw.extend(collect(cfg, &seeds, usize::MAX)?);
            let before = raw.len();
            raw.retain(|s: &RawSample| s.x1 != 0.0 || s.x2 != 0.0 || s.x_ref != 0.0);
            discarded += before - raw.len();
        }
        raw.truncate(want);
        Ok(to_dataset(&raw, u_scale).0)
    };
    let train = build(n, &mut draw_seeds)?;
    let test = build(n_test, &mut draw_seeds)?;
    let record = ScalingRecord {
        u_scale,
        seed,
        n,
        n_test,
        net_m,
        net_mu,
        discarded,
        config: cfg.clone(),
    };
    Ok((train, test, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_and_field() {
        let s = vdp_step(VdpState::new(0.0, 0.0), 0.0, 0.05);
        assert_eq!(s, VdpState::new(0.0, 0.0));
        let dt = 1e-6;
        let s = vdp_step(VdpState::new(0.0, 0.0), 1.0, dt);
        assert!((s.x2 / dt - 1.0).abs() < 1e-5);
        assert!((s.x1 / dt).abs() < 1e-5);
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let s = VdpState::new(0.7, -1.3);
        let (u, dt, h) = (0.4, 0.05, 1e-6);
        let (_, tan) = vdp_step_tangent(s, u, dt);
        let probes = [
            (VdpState::new(s.x1 + h, s.x2), VdpState::new(s.x1 - h, s.x2), u, u),
            (VdpState::new(s.x1, s.x2 + h), VdpState::new(s.x1, s.x2 - h), u, u),
            (s, s, u + h, u - h),
        ];
        for (c, (sp, sm, up, um)) in probes.iter().enumerate() {
            let p = vdp_step(*sp, *up, dt);
            let m = vdp_step(*sm, *um, dt);
            assert!(((p.x1 - m.x1) / (2.0 * h) - tan[0][c]).abs() < 1e-8);
            assert!(((p.x2 - m.x2) / (2.0 * h) - tan[1][c]).abs() < 1e-8);
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let cfg = MpcConfig::default();
        let s = VdpState::new(1.2, 0.3);
        let controls: Vec<f64> = (0..cfg.horizon).map(|k| (k as f64 * 0.7).sin()).collect();
        let (_, g) = cfg.cost_gradient(s, -0.5, &controls).unwrap();
        let h = 1e-6;
        for k in 0..cfg.horizon {
            let mut up = controls.clone();
            let mut dn = controls.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (cfg.cost(s, -0.5, &up) - cfg.cost(s, -0.5, &dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn trivial_controls() {
        let cfg = MpcConfig::default();
        let u = mpc_control(VdpState::new(0.0, 0.0), 0.0, &cfg).unwrap();
        assert!(u.abs() < 1e-12);
        let lazy = MpcConfig {
            q_track: 0.0,
            ..cfg
        };
        assert_eq!(mpc_control(VdpState::new(1.5, -0.5), 0.8, &lazy).unwrap(), 0.0);
        let u = mpc_control(VdpState::new(1.5, 0.0), 0.0, &cfg).unwrap();
        assert!(u.abs() <= cfg.u_max);
    }

    #[test]
    fn cost_decreases_over_iterations() {
        let cfg = MpcConfig {
            opt_step: 0.02,
            opt_iters: 80,
            ..MpcConfig::default()
        };
        for (s, r) in [(VdpState::new(1.5, -1.0), 0.5), (VdpState::new(-2.0, 2.0), -0.9)] {
            let mut controls = vec![0.0; cfg.horizon];
            let start = cfg.cost(s, r, &controls);
            let hist = cfg.optimize(s, r, &mut controls).unwrap();
            assert!(hist[0] <= start);
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn datasets_are_normalized_and_bounded() {
        let cfg = DataGenConfig {
            episode_steps: 40,
            samples_per_episode: 10,
            ..DataGenConfig::default()
        };
        let (train, test, rec) = generate_dataset(35, 12, 3, &cfg, 10, 10.0).unwrap();
        assert_eq!(train.len(), 35);
        assert_eq!(test.len(), 12);
        for d in [&train, &test] {
            for i in 0..d.len() {
                let x = d.input(i);
                assert!(((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - 1.0).abs() < 1e-10);
                assert!(d.target(i).abs() <= 1.0);
            }
        }
        assert!((rec.u_scale - cfg.mpc.u_max / cfg.target_fraction).abs() < 1e-15);
        let (again, _, _) = generate_dataset(35, 12, 3, &cfg, 10, 10.0).unwrap();
        assert_eq!(train.to_csv(), again.to_csv());
    }

    #[test]
    fn zero_inputs_are_dropped() {
        let raw = [
            RawSample { x1: 0.0, x2: 0.0, x_ref: 0.0, u: 0.0 },
            RawSample { x1: 3.0, x2: 0.0, x_ref: 4.0, u: 1.5 },
        ];
        let (d, dropped) = to_dataset(&raw, 3.0);
        assert_eq!((d.len(), dropped), (1, 1));
        assert_eq!(d.input(0), &[0.6, 0.0, 0.8]);
        assert_eq!(d.target(0), 0.5);
    }

    #[test]
    fn bad_sizes() {
        let cfg = DataGenConfig::default();
        assert!(generate_dataset(0, 5, 1, &cfg, 10, 10.0).is_err());
        assert!(generate_dataset(5, 0, 1, &cfg, 10, 10.0).is_err());
    }
}
