//! Experiment harness behind the command-line tool: run configuration,
//! config-file parsing and the five commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::certificate::{
    beta_sweep, certify, fmt_sig, l_g, next_gamma, BetaMode, CertifyConfig, CertifyOutcome, M1Mode,
    PoolSampler, Reliability, SweepInputs, T0Mode,
};
use crate::error::{Error, Result};
use crate::numlin::norm;
use crate::shallow_net::{empirical_loss, Activation, Dataset, NetworkState};
use crate::vdp_mpc::{generate_dataset, DataGenConfig, ScalingRecord};

/// Environment variable that overrides the output root.
pub const OUT_ENV: &str = "NTK_STOP_OUT";

const NET_SEED_OFFSET: u64 = 1_000;
const SAMPLER_SEED_OFFSET: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MuMode {
    EqualM,
    SqrtM,
    Explicit(f64),
}

impl MuMode {
    pub fn resolve(self, m: usize) -> f64 {
        match self {
            MuMode::EqualM => m as f64,
            MuMode::SqrtM => (m as f64).sqrt(),
            MuMode::Explicit(v) => v,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "equal_m" => Ok(MuMode::EqualM),
            "sqrt_m" => Ok(MuMode::SqrtM),
            other => parse_f64("mu_mode", other).map(MuMode::Explicit),
        }
    }

    fn render(self) -> String {
        match self {
            MuMode::EqualM => "equal_m".into(),
            MuMode::SqrtM => "sqrt_m".into(),
            MuMode::Explicit(v) => v.to_string(),
        }
    }
}

/// Every knob of a run. Values come from defaults, then a config file, then
/// the environment (output root only), then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub n: usize,
    pub n_test: usize,
    pub m: usize,
    pub mu_mode: MuMode,
    pub activation: Activation,
    pub t0_mode: Option<T0Mode>,
    pub beta_mode: BetaMode,
    pub delta: f64,
    /// Monte-Carlo draws for `M1`; zero selects the worst-case formula.
    pub mc_trials: usize,
    pub probe_steps: usize,
    pub probe_eta: Option<f64>,
    pub margin: f64,
    pub out_dir: PathBuf,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub data: DataGenConfig,
    /// Sub-steps per certified step in `curves`.
    pub grid: usize,
    /// Horizon of `curves`; `None` means ten certified steps past `t0`.
    pub t_max: Option<f64>,
    pub beta_step: f64,
    pub probe_n: usize,
    pub probe_widths: Vec<usize>,
    pub probe_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 800,
            n_test: 1000,
            m: 10,
            mu_mode: MuMode::EqualM,
            activation: Activation::Tanh,
            t0_mode: None,
            beta_mode: BetaMode::Star,
            delta: 0.05,
            mc_trials: 500,
            probe_steps: 10,
            probe_eta: None,
            margin: 0.05,
            out_dir: PathBuf::from("out"),
            train: None,
            test: None,
            data: DataGenConfig::default(),
            grid: 20,
            t_max: None,
            beta_step: 1e-3,
            probe_n: 64,
            probe_widths: vec![64, 256, 1024],
            probe_seeds: 10,
        }
    }
}

/// Keys accepted in config files and by `--set`-style overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "n",
    "n_test",
    "m",
    "mu_mode",
    "activation",
    "t0_mode",
    "beta_mode",
    "delta",
    "mc_trials",
    "probe_steps",
    "probe_eta",
    "margin",
    "out_dir",
    "train",
    "test",
    "episode_steps",
    "samples_per_episode",
    "init_range",
    "amplitude_min",
    "amplitude_max",
    "omega_min",
    "omega_max",
    "target_fraction",
    "horizon",
    "dt",
    "q_track",
    "r_ctrl",
    "u_max",
    "opt_iters",
    "opt_step",
    "grid",
    "t_max",
    "beta_step",
    "probe_n",
    "probe_widths",
    "probe_seeds",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Parse(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn auto_or<T>(v: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

impl RunConfig {
    pub fn mu(&self) -> f64 {
        self.mu_mode.resolve(self.m)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.data;
        match key.trim().replace('-', "_").as_str() {
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| Error::Parse(format!("seed: expected an integer, got {v:?}")))?
            }
            "n" => self.n = parse_usize(key, v)?,
            "n_test" => self.n_test = parse_usize(key, v)?,
            "m" => self.m = parse_usize(key, v)?,
            "mu_mode" | "mu" => self.mu_mode = MuMode::parse(v)?,
            "activation" => self.activation = v.parse()?,
            "t0_mode" => {
                self.t0_mode = match v {
                    "auto" => None,
                    "zero" => Some(T0Mode::Zero),
                    "warmup" => Some(T0Mode::Warmup),
                    _ => return Err(Error::Parse(format!("t0_mode: expected auto, zero or warmup, got {v:?}"))),
                }
            }
            "beta_mode" | "beta" => {
                self.beta_mode = match v {
                    "star" => BetaMode::Star,
                    other => BetaMode::Explicit(parse_f64(key, other)?),
                }
            }
            "delta" => self.delta = parse_f64(key, v)?,
            "mc_trials" => self.mc_trials = parse_usize(key, v)?,
            "probe_steps" => self.probe_steps = parse_usize(key, v)?,
            "probe_eta" => self.probe_eta = auto_or(v, |s| parse_f64(key, s))?,
            "margin" => self.margin = parse_f64(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "train" => self.train = Some(PathBuf::from(v)),
            "test" => self.test = Some(PathBuf::from(v)),
            "episode_steps" => d.episode_steps = parse_usize(key, v)?,
            "samples_per_episode" => d.samples_per_episode = parse_usize(key, v)?,
            "init_range" => d.init_range = parse_f64(key, v)?,
            "amplitude_min" => d.amplitude.0 = parse_f64(key, v)?,
            "amplitude_max" => d.amplitude.1 = parse_f64(key, v)?,
            "omega_min" => d.omega.0 = parse_f64(key, v)?,
            "omega_max" => d.omega.1 = parse_f64(key, v)?,
            "target_fraction" => d.target_fraction = parse_f64(key, v)?,
            "horizon" => d.mpc.horizon = parse_usize(key, v)?,
            "dt" => d.mpc.dt = parse_f64(key, v)?,
            "q_track" => d.mpc.q_track = parse_f64(key, v)?,
            "r_ctrl" => d.mpc.r_ctrl = parse_f64(key, v)?,
            "u_max" => d.mpc.u_max = parse_f64(key, v)?,
            "opt_iters" => d.mpc.opt_iters = parse_usize(key, v)?,
            "opt_step" => d.mpc.opt_step = parse_f64(key, v)?,
            "grid" => self.grid = parse_usize(key, v)?,
            "t_max" => self.t_max = auto_or(v, |s| parse_f64(key, s))?,
            "beta_step" => self.beta_step = parse_f64(key, v)?,
            "probe_n" => self.probe_n = parse_usize(key, v)?,
            "probe_widths" => {
                self.probe_widths = v
                    .split(',')
                    .map(|w| parse_usize(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "probe_seeds" => self.probe_seeds = parse_usize(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// Replaces the output root with the environment override, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.n_test < 2 {
            return bad("n_test must be at least 2");
        }
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(self.mu() > 0.0) {
            return bad("mu must be positive");
        }
        if self.grid < 2 {
            return bad("grid must be at least 2");
        }
        if self.probe_widths.is_empty() || self.probe_widths.contains(&0) {
            return bad("probe_widths must list positive widths");
        }
        if self.probe_n == 0 || self.probe_seeds == 0 {
            return bad("probe_n and probe_seeds must be at least 1");
        }
        self.certify_config().validate()?;
        self.data.mpc.validate()
    }

    /// Settings handed to the certificate.
    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            m1_mode: if self.mc_trials == 0 {
                M1Mode::Conservative
            } else {
                M1Mode::MonteCarlo {
                    trials: self.mc_trials,
                }
            },
            beta: self.beta_mode,
            delta: self.delta,
            probe_steps: self.probe_steps,
            probe_eta: self.probe_eta,
            margin: self.margin,
            t0_mode: self.t0_mode,
        }
    }

    /// Canonical `key=value` rendering, readable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("n", self.n.to_string()),
            ("n_test", self.n_test.to_string()),
            ("m", self.m.to_string()),
            ("mu_mode", self.mu_mode.render()),
            ("activation", self.activation.name().into()),
            (
                "t0_mode",
                match self.t0_mode {
                    None => "auto".into(),
                    Some(T0Mode::Zero) => "zero".into(),
                    Some(T0Mode::Warmup) => "warmup".into(),
                },
            ),
            (
                "beta_mode",
                match self.beta_mode {
                    BetaMode::Star => "star".into(),
                    BetaMode::Explicit(b) => b.to_string(),
                },
            ),
            ("delta", self.delta.to_string()),
            ("mc_trials", self.mc_trials.to_string()),
            ("probe_steps", self.probe_steps.to_string()),
            ("probe_eta", opt(self.probe_eta)),
            ("margin", self.margin.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("episode_steps", d.episode_steps.to_string()),
            ("samples_per_episode", d.samples_per_episode.to_string()),
            ("init_range", d.init_range.to_string()),
            ("amplitude_min", d.amplitude.0.to_string()),
            ("amplitude_max", d.amplitude.1.to_string()),
            ("omega_min", d.omega.0.to_string()),
            ("omega_max", d.omega.1.to_string()),
            ("target_fraction", d.target_fraction.to_string()),
            ("horizon", d.mpc.horizon.to_string()),
            ("dt", d.mpc.dt.to_string()),
            ("q_track", d.mpc.q_track.to_string()),
            ("r_ctrl", d.mpc.r_ctrl.to_string()),
            ("u_max", d.mpc.u_max.to_string()),
            ("opt_iters", d.mpc.opt_iters.to_string()),
            ("opt_step", d.mpc.opt_step.to_string()),
            ("grid", self.grid.to_string()),
            ("t_max", opt(self.t_max)),
            ("beta_step", self.beta_step.to_string()),
            ("probe_n", self.probe_n.to_string()),
            (
                "probe_widths",
                self.probe_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("probe_seeds", self.probe_seeds.to_string()),
        ];
        if let Some(p) = path(&self.train) {
            pairs.push(("train", p));
        }
        if let Some(p) = path(&self.test) {
            pairs.push(("test", p));
        }
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.out_dir.join("curves")
    }

    pub fn train_path(&self) -> PathBuf {
        self.train
            .clone()
            .unwrap_or_else(|| self.data_dir().join(format!("train_s{}.csv", self.seed)))
    }

    pub fn test_path(&self) -> PathBuf {
        self.test
            .clone()
            .unwrap_or_else(|| self.data_dir().join(format!("test_s{}.csv", self.seed)))
    }

    pub fn scaling_path(&self) -> PathBuf {
        self.data_dir().join(format!("scaling_s{}.json", self.seed))
    }

    /// Fresh network for this run's seed and the given input dimension.
    pub fn network(&self, d: usize) -> Result<NetworkState> {
        NetworkState::init(d, self.m, self.mu(), self.activation, self.seed.wrapping_add(NET_SEED_OFFSET))
    }

    pub fn sampler_seed(&self) -> u64 {
        self.seed.wrapping_add(SAMPLER_SEED_OFFSET)
    }
}

/// How a certificate run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Certified,
    Refused,
    Unverified,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Certified => 0,
            RunStatus::Refused => 2,
            RunStatus::Unverified => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Certified => "certified",
            RunStatus::Refused => "refused",
            RunStatus::Unverified => "unverified",
        }
    }

    pub fn of(outcome: &CertifyOutcome) -> Self {
        match outcome.cert.reliability {
            Reliability::Certified => RunStatus::Certified,
            _ => RunStatus::Unverified,
        }
    }
}

/// Whether a certificate error is a refusal rather than a failure to run.
pub fn is_refusal(e: &Error) -> bool {
    matches!(
        e,
        Error::NoAdmissibleBeta { .. } | Error::ConditionViolated { .. } | Error::ZeroProjection(_)
    )
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn csv_num(x: f64) -> String {
    if x.is_finite() {
        fmt_sig(x, 10)
    } else {
        String::new()
    }
}

pub struct GenDataOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub scaling: PathBuf,
    pub record: ScalingRecord,
}

/// Generates the train and test sets plus the scaling sidecar.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataOutput> {
    cfg.validate()?;
    let (train, test, record) = generate_dataset(cfg.n, cfg.n_test, cfg.seed, &cfg.data, cfg.m, cfg.mu())?;
    ensure_dir(&cfg.data_dir())?;
    let out = GenDataOutput {
        train: cfg.data_dir().join(format!("train_s{}.csv", cfg.seed)),
        test: cfg.data_dir().join(format!("test_s{}.csv", cfg.seed)),
        scaling: cfg.scaling_path(),
        record,
    };
    train.write_csv(&out.train)?;
    test.write_csv(&out.test)?;
    std::fs::write(&out.scaling, serde_json::to_string_pretty(&out.record)? + "\n")?;
    Ok(out)
}

/// Reads the train and test sets named by the config.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let read = |p: PathBuf| {
        Dataset::read_csv(&p).map_err(|e| match e {
            Error::Io(io) => Error::Parse(format!("{}: {io} (run gen-data first)", p.display())),
            other => other,
        })
    };
    let train = read(cfg.train_path())?;
    let test = read(cfg.test_path())?;
    if train.dim() != test.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    Ok((train, test))
}

/// Runs the certificate on prepared data.
pub fn run_certificate(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<CertifyOutcome> {
    let net = cfg.network(train.dim())?;
    let mut sampler = PoolSampler::new(test, cfg.sampler_seed());
    certify(&net, train, &mut sampler, &cfg.certify_config())
}

pub struct CertifyReport {
    pub status: RunStatus,
    pub json: PathBuf,
    pub text: PathBuf,
    pub spectrum: Option<PathBuf>,
    pub outcome: Option<CertifyOutcome>,
    pub refusal: Option<String>,
}

fn refusal_json(cfg: &RunConfig, e: &Error) -> Result<String> {
    let mut obj = BTreeMap::new();
    obj.insert("status", serde_json::json!("refused"));
    obj.insert("reason", serde_json::json!(e.to_string()));
    obj.insert("seed", serde_json::json!(cfg.seed));
    match e {
        Error::NoAdmissibleBeta { gamma1 } => {
            obj.insert("gamma1", serde_json::json!(fmt_sig(*gamma1, 6).parse::<f64>().unwrap_or(*gamma1)));
        }
        Error::ConditionViolated { gamma1, beta } => {
            obj.insert("gamma1", serde_json::json!(fmt_sig(*gamma1, 6).parse::<f64>().unwrap_or(*gamma1)));
            obj.insert("beta", serde_json::json!(fmt_sig(*beta, 6).parse::<f64>().unwrap_or(*beta)));
        }
        _ => {}
    }
    Ok(serde_json::to_string_pretty(&obj)? + "\n")
}

/// Certificate run writing JSON, text and spectrum reports.
pub fn cmd_certify(cfg: &RunConfig) -> Result<CertifyReport> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let dir = cfg.reports_dir();
    ensure_dir(&dir)?;
    let json = dir.join(format!("certificate_s{}.json", cfg.seed));
    let text = dir.join(format!("certificate_s{}.txt", cfg.seed));
    match run_certificate(cfg, &train, &test) {
        Ok(outcome) => {
            let status = RunStatus::of(&outcome);
            let mut prov = outcome.provenance();
            prov.insert("seed".into(), cfg.seed.to_string());
            prov.insert("status".into(), status.as_str().into());
            prov.insert("train".into(), cfg.train_path().display().to_string());
            std::fs::write(&json, outcome.cert.to_json(&prov)? + "\n")?;
            let mut kv = format!("status={}\n", status.as_str());
            kv.push_str(&outcome.cert.to_key_value());
            let _ = writeln!(kv, "chain_ordered={}", outcome.chain.ordered);
            let _ = writeln!(kv, "lg_t1={}", fmt_sig(outcome.chain.lg_t1, 6));
            std::fs::write(&text, kv)?;
            let spectrum = dir.join(format!("spectrum_s{}.csv", cfg.seed));
            let mut csv = String::from("index,eigenvalue\n");
            for (i, l) in outcome.snap_t0.eig.values.iter().enumerate() {
                let _ = writeln!(csv, "{},{:.16e}", i + 1, l);
            }
            std::fs::write(&spectrum, csv)?;
            Ok(CertifyReport {
                status,
                json,
                text,
                spectrum: Some(spectrum),
                outcome: Some(outcome),
                refusal: None,
            })
        }
        Err(e) if is_refusal(&e) => {
            std::fs::write(&json, refusal_json(cfg, &e)?)?;
            std::fs::write(&text, format!("status=refused\nreason={e}\n"))?;
            Ok(CertifyReport {
                status: RunStatus::Refused,
                json,
                text,
                spectrum: None,
                outcome: None,
                refusal: Some(e.to_string()),
            })
        }
        Err(e) => Err(e),
    }
}

/// One time point of the loss curves. Bound columns are `NaN` past `t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub t: f64,
    pub ls: f64,
    pub lg: f64,
    pub nu: f64,
    pub omega: f64,
    pub big_omega: f64,
    pub l_test: f64,
}

/// Loss curves around a certified step. Up to `t1` each point is a single
/// step of length `t - t0` from the certified start with the bound columns
/// evaluated at that length; afterwards descent continues from the
/// certified state in steps of `eta1 / grid`.
pub fn curves(outcome: &CertifyOutcome, train: &Dataset, test: &Dataset, grid: usize, t_max: f64) -> Result<Vec<CurveRow>> {
    if grid < 2 {
        return Err(Error::InvalidParameter("grid must be at least 2".into()));
    }
    let c = &outcome.cert;
    let s0 = &outcome.s0;
    let eta_sub = c.eta1 / grid as f64;
    let total = (((t_max - c.t0) / eta_sub).round() as usize).max(grid);
    let n = train.len();
    let mut rows = Vec::with_capacity(total + 1);
    let mut c_max = c.w_max_t0;

    for k in 0..=grid {
        let tau = k as f64 * eta_sub;
        let s = if k == grid {
            outcome.s1.clone()
        } else if k == 0 {
            s0.clone()
        } else {
            s0.gd_step(train, tau)
        };
        let beta = tau * c.lambda1_lo;
        let rho = 1.0 - beta;
        let sigma = tau * c.lambda1_hi * c.theta1;
        let alpha = crate::certificate::alpha_min(sigma, rho, c.theta1, c.b1, c.a1);
        let (ap, bp) = crate::certificate::contracted_projections(c.a1, c.b1, rho, sigma, alpha);
        let (_, nu) = crate::certificate::nu_bounds(c.m1, c.phi, c.mu, tau, c.v0_norm1, c.w_max_t0);
        let omega = (ap * ap + bp * bp) / n as f64 + nu;
        let lg = l_g(c.m1, c.phi, c.w_max_t0.max(s.max_neuron_norm()));
        rows.push(CurveRow {
            t: s.t,
            ls: empirical_loss(&s.training_error(train)),
            lg,
            nu,
            omega,
            big_omega: c.omega0 + k as f64 / grid as f64 * c.delta1,
            l_test: s.test_loss(test),
        });
    }
    c_max = c_max.max(outcome.s1.max_neuron_norm());
    let mut s = outcome.s1.clone();
    for _ in grid..total {
        s = s.gd_step(train, eta_sub);
        c_max = c_max.max(s.max_neuron_norm());
        let v = s.training_error(train);
        if !norm(&v).is_finite() {
            return Err(Error::Diverged);
        }
        rows.push(CurveRow {
            t: s.t,
            ls: empirical_loss(&v),
            lg: l_g(c.m1, c.phi, c_max),
            nu: f64::NAN,
            omega: f64::NAN,
            big_omega: f64::NAN,
            l_test: s.test_loss(test),
        });
    }
    Ok(rows)
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("t,ls,lg,nu,omega,big_omega,l_test\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_num(r.t),
            csv_num(r.ls),
            csv_num(r.lg),
            csv_num(r.nu),
            csv_num(r.omega),
            csv_num(r.big_omega),
            csv_num(r.l_test)
        );
    }
    out
}

pub struct CurvesOutput {
    pub path: PathBuf,
    pub outcome: CertifyOutcome,
    pub rows: Vec<CurveRow>,
}

/// Certifies, then writes the loss curves.
pub fn cmd_curves(cfg: &RunConfig) -> Result<CurvesOutput> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let outcome = run_certificate(cfg, &train, &test)?;
    let t_max = cfg.t_max.unwrap_or(outcome.cert.t0 + 10.0 * outcome.cert.eta1);
    let rows = curves(&outcome, &train, &test, cfg.grid, t_max)?;
    ensure_dir(&cfg.curves_dir())?;
    let path = cfg.curves_dir().join(format!("curves_s{}.csv", cfg.seed));
    std::fs::write(&path, curves_csv(&rows))?;
    Ok(CurvesOutput { path, outcome, rows })
}

pub struct SweepOutput {
    pub path: PathBuf,
    pub gamma1: f64,
    pub best_beta: Option<f64>,
}

/// Tabulates `Delta1` and `Omega1` over a grid of `beta` at the certified start.
pub fn cmd_sweep_beta(cfg: &RunConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let outcome = run_certificate(cfg, &train, &test)?;
    let inputs = SweepInputs::from_certificate(&outcome.cert);
    let (rows, best) = beta_sweep(&inputs, cfg.beta_step)?;
    let mut out = String::from("beta,alpha1,gamma1,delta1,big_omega1,admissible,argmax\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_num(r.beta),
            csv_num(r.alpha1),
            csv_num(r.gamma1),
            csv_num(r.delta1),
            csv_num(r.big_omega1),
            r.admissible as u8,
            (Some(i) == best) as u8
        );
    }
    ensure_dir(&cfg.curves_dir())?;
    let path = cfg.curves_dir().join(format!("sweep_beta_s{}.csv", cfg.seed));
    std::fs::write(&path, out)?;
    Ok(SweepOutput {
        path,
        gamma1: outcome.cert.gamma1_initial,
        best_beta: best.map(|i| rows[i].beta),
    })
}

/// `gamma1` and `gamma2` for one configuration and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub regime: &'static str,
    pub n: usize,
    pub m: usize,
    pub mu: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Certificate plus second-step factor for one run. `gamma2` is `NaN` when
/// the first step is refused.
pub fn probe_run(cfg: &RunConfig, regime: &'static str) -> Result<ProbeRow> {
    let (train, test, _) = generate_dataset(cfg.n, cfg.n_test, cfg.seed, &cfg.data, cfg.m, cfg.mu())?;
    let mut row = ProbeRow {
        regime,
        n: cfg.n,
        m: cfg.m,
        mu: cfg.mu(),
        seed: cfg.seed,
        status: RunStatus::Refused,
        gamma1: f64::NAN,
        gamma2: f64::NAN,
    };
    match run_certificate(cfg, &train, &test) {
        Ok(o) => {
            let lambda2_lo = o.snap_t1.lambda(1) * (1.0 - cfg.margin);
            row.status = RunStatus::of(&o);
            row.gamma1 = o.cert.gamma1;
            row.gamma2 = next_gamma(&o.snap_t1, &o.v1, o.cert.m1, lambda2_lo, cfg.m, cfg.mu())?;
        }
        Err(Error::NoAdmissibleBeta { gamma1 }) => row.gamma1 = gamma1,
        Err(Error::ConditionViolated { gamma1, .. }) => row.gamma1 = gamma1,
        Err(e) if is_refusal(&e) => {}
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Configurations visited by the parameterization probe: the configured
/// network itself, then `mu = m` for each probe width on `probe_n` samples.
pub fn probe_configs(cfg: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let mut out = vec![("under", cfg.clone())];
    for &m in &cfg.probe_widths {
        let mut c = cfg.clone();
        c.n = cfg.probe_n;
        c.m = m;
        c.mu_mode = MuMode::EqualM;
        out.push(("over", c));
    }
    out
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("regime,n,m,mu,seed,status,gamma1,gamma2\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.regime,
            r.n,
            r.m,
            csv_num(r.mu),
            r.seed,
            r.status.as_str(),
            csv_num(r.gamma1),
            csv_num(r.gamma2)
        );
    }
    out
}

pub struct ProbeOutput {
    pub path: PathBuf,
    pub rows: Vec<ProbeRow>,
}

/// Runs every probe configuration for `probe_seeds` consecutive seeds.
pub fn cmd_param_probe(cfg: &RunConfig) -> Result<ProbeOutput> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (regime, base) in probe_configs(cfg) {
        for k in 0..cfg.probe_seeds as u64 {
            let mut c = base.clone();
            c.seed = cfg.seed.wrapping_add(k);
            rows.push(probe_run(&c, regime)?);
        }
    }
    ensure_dir(&cfg.curves_dir())?;
    let path = cfg.curves_dir().join(format!("param_probe_s{}.csv", cfg.seed));
    std::fs::write(&path, probe_csv(&rows))?;
    Ok(ProbeOutput { path, rows })
}
