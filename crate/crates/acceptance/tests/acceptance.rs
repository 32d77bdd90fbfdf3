use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ntk_stop::bench::{self, MuMode, RunConfig};
use ntk_stop::certificate::{
    alpha_min, beta_star, beta_sweep, contracted_projections, gamma1, omega_bound, stopping_time, CertifyOutcome,
    Reliability, SweepInputs,
};
use ntk_stop::error::Error;
use ntk_stop::ntk::{gram_spectrum, jacobian, linearized_step, ntk_matrix};
use ntk_stop::numlin::{dot, norm, project_split, sym_eig, SymMat};
use ntk_stop::shallow_net::{Activation, Dataset, NetworkState};
use ntk_stop::vdp_mpc::{generate_dataset, simulate, tracking_mse, MpcConfig, Sinusoid, VdpState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Run {
    train: Dataset,
    test: Dataset,
    outcome: Result<CertifyOutcome, Error>,
}

struct Example1 {
    runs: Vec<Run>,
    elapsed: Duration,
}

fn example1() -> Example1 {
    let start = Instant::now();
    let runs = (0..SEEDS)
        .map(|seed| {
            let cfg = RunConfig { seed, ..RunConfig::default() };
            let (train, test, _) =
                generate_dataset(cfg.n, cfg.n_test, seed, &cfg.data, cfg.m, cfg.mu()).expect("dataset");
            let outcome = bench::run_certificate(&cfg, &train, &test);
            Run { train, test, outcome }
        })
        .collect();
    Example1 { runs, elapsed: start.elapsed() }
}

fn certified(ex: &Example1) -> impl Iterator<Item = (&Run, &CertifyOutcome)> {
    ex.runs.iter().filter_map(|r| match &r.outcome {
        Ok(o) if o.cert.reliability == Reliability::Certified => Some((r, o)),
        _ => None,
    })
}

fn gamma_of(outcome: &Result<CertifyOutcome, Error>) -> Option<f64> {
    match outcome {
        Ok(o) => Some(o.cert.gamma1),
        Err(Error::NoAdmissibleBeta { gamma1 }) | Err(Error::ConditionViolated { gamma1, .. }) => Some(*gamma1),
        Err(_) => None,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn c01_formula() -> Verdict {
    let start = Instant::now();
    let g = gamma1(0.25, 429.0, 34.6, 13.9, 800, 10, 10.0, 0.0).unwrap();
    let b = beta_star(g).unwrap();
    let (_, t1) = stopping_time(b, 34.6, 0.0);
    let took = start.elapsed();
    let pass = (g - 0.1815).abs() <= 5e-4
        && (b - 0.8185).abs() <= 5e-4
        && (t1 - 0.02366).abs() <= 1e-4
        && took < Duration::from_millis(1);
    verdict(pass, format!("gamma1={g:.5} beta*={b:.5} t1={t1:.5} in {took:?}"))
}

fn c02_example1(ex: &Example1) -> Verdict {
    let v0: Vec<f64> = ex.runs.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| o.cert.v0_norm)).collect();
    let l1: Vec<f64> = ex.runs.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| o.cert.lambda1_t0)).collect();
    let below = ex.runs.iter().filter(|r| gamma_of(&r.outcome).is_some_and(|g| g < 1.0)).count();
    let cert: Vec<&CertifyOutcome> = certified(ex).map(|(_, o)| o).collect();
    let chain = cert.iter().all(|o| o.chain.ordered);
    let identity = cert
        .iter()
        .all(|o| (o.cert.big_omega1 - omega_bound(o.cert.omega0, o.cert.delta1)).abs() <= 1e-12);
    let big: Vec<f64> = cert.iter().map(|o| o.cert.big_omega1).collect();
    let (mv, ml, mo) = (mean(&v0), mean(&l1), mean(&big));
    let pass = (12.0..=24.0).contains(&mv)
        && (20.0..=55.0).contains(&ml)
        && below as f64 >= 0.9 * SEEDS as f64
        && !cert.is_empty()
        && chain
        && identity
        && (0.15..=0.45).contains(&mo)
        && ex.elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "mean |v0|={mv:.2} lambda1={ml:.1} gamma1<1 on {below}/{SEEDS} certified={} chain={chain} identity={identity} mean Omega1={mo:.3} in {:.1?}",
            cert.len(),
            ex.elapsed
        ),
    )
}

fn c03_efficacy(ex: &Example1) -> Verdict {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let mut ratios = Vec::new();
    let mut halved = 0;
    let mut later_min = 0;
    let mut not_collapsed = 0;
    for (run, o) in certified(ex) {
        let t_max = o.cert.t0 + 10.0 * o.cert.eta1;
        let rows = bench::curves(o, &run.train, &run.test, cfg.grid, t_max).expect("curves");
        let l0 = rows[0].l_test;
        let l1 = rows[cfg.grid].l_test;
        let best = rows.iter().min_by(|a, b| a.l_test.total_cmp(&b.l_test)).unwrap();
        ratios.push(l1 / l0);
        halved += usize::from(l1 <= 0.5 * l0);
        later_min += usize::from(best.t > o.cert.t1);
        not_collapsed += usize::from(best.l_test >= 0.1 * l1);
    }
    let k = ratios.len();
    let took = start.elapsed() + ex.elapsed;
    let mr = mean(&ratios);
    let pass = k > 0 && mr <= 0.5 && later_min == k && not_collapsed == k && took < Duration::from_secs(300);
    verdict(
        pass,
        format!(
            "mean L_test(t1)/L_test(t0)={mr:.3} (per-seed <=0.5 on {halved}/{k}) argmin after t1 on {later_min}/{k} L(t*)>=0.1 L(t1) on {not_collapsed}/{k} in {took:.1?}"
        ),
    )
}

fn c04_linearization(ex: &Example1) -> Verdict {
    let mut ok = 0;
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for (_, o) in certified(ex) {
        let lin = linearized_step(&o.snap_t0.h, &o.v0, o.cert.eta1);
        let diff: Vec<f64> = lin.iter().zip(&o.v1).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&o.v0);
        worst = worst.max(rel);
        total += 1;
        ok += usize::from(rel <= 0.05);
    }
    let pass = total > 0 && ok as f64 >= 0.95 * total as f64;
    verdict(pass, format!("within 5% on {ok}/{total} certified seeds, worst {worst:.4}"))
}

fn c05_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..100 {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Elu };
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=8);
        let net = NetworkState::init(d, m, m as f64, act, rng.random()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = net.grad_weights(&x);
        let h = 1e-5;
        let fd: Vec<f64> = (0..net.weights().len())
            .map(|k| {
                let shifted = |delta: f64| {
                    let mut w = net.weights().to_vec();
                    w[k] += delta;
                    NetworkState::from_parts(d, w, net.signs().to_vec(), net.mu(), act).unwrap().forward(&x)
                };
                (shifted(h) - shifted(-h)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&g).max(1e-12);
        worst = worst.max(rel);
        cases += 1;
    }
    verdict(worst <= 1e-6, format!("{cases} cases, worst relative error {worst:.2e}"))
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymMat {
    let raw: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    SymMat::from_upper(n, |i, j| raw[i * n + j])
}

fn c06_spectrum(ex: &Example1) -> Verdict {
    let mut psd = true;
    let mut rank_ok = true;
    for o in ex.runs.iter().filter_map(|r| r.outcome.as_ref().ok()) {
        for snap in [&o.snap_t0, &o.snap_t1] {
            psd &= snap.min_eigenvalue() >= -1e-8 * snap.lambda1();
            rank_ok &= snap.numerical_rank() <= o.s0.width() * o.s0.input_dim();
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_recon: f64 = 0.0;
    for _ in 0..10 {
        let m = random_symmetric(&mut rng, 50);
        let e = sym_eig(&m).unwrap();
        worst_recon = worst_recon.max(e.reconstruction_error(&m) / m.frobenius());
    }

    let mut worst_gram: f64 = 0.0;
    for k in 0..20 {
        let n = rng.random_range(2..=20);
        let d = 3;
        let m = rng.random_range(1..=4);
        let mut inputs = Vec::with_capacity(n * d);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nx = norm(&x);
            inputs.extend(x.iter().map(|v| v / nx));
        }
        let data = Dataset::new(d, inputs, vec![0.0; n]).unwrap();
        let net = NetworkState::init(d, m, m as f64, Activation::Tanh, k).unwrap();
        let jac = jacobian(&net, &data);
        let direct = sym_eig(&SymMat::from_upper(n, |i, j| dot(&jac[i], &jac[j]))).unwrap();
        let via_gram = gram_spectrum(&jac).unwrap();
        let snap = ntk_matrix(&net, &data).unwrap();
        let scale = 1.0 + direct.values[0];
        for ((a, b), c) in direct.values.iter().zip(&via_gram.values).zip(&snap.eig.values) {
            worst_gram = worst_gram.max((a - b).abs() / scale).max((a - c).abs() / scale);
        }
    }
    let pass = psd && rank_ok && worst_recon <= 1e-8 && worst_gram <= 1e-10;
    verdict(
        pass,
        format!("psd={psd} rank<=md={rank_ok} 50x50 reconstruction {worst_recon:.2e} gram route {worst_gram:.2e}"),
    )
}

fn c07_projection_bounds() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut ok = 0;
    for _ in 0..100 {
        let n = rng.random_range(5..=40);
        let basis = sym_eig(&random_symmetric(&mut rng, n)).unwrap().vectors;
        let top = rng.random_range(5.0..50.0);
        let mut lambdas: Vec<f64> = (1..n).map(|_| rng.random_range(0.0..0.5 * top)).collect();
        lambdas.insert(0, top);
        let h = SymMat::from_upper(n, |i, j| (0..n).map(|k| lambdas[k] * basis[k][i] * basis[k][j]).sum());
        let e = sym_eig(&h).unwrap();
        let u1 = e.vector(0).unwrap();
        let v0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (a1, b1) = project_split(&v0, u1).unwrap();

        let lambda_lo = 0.95 * e.values[0];
        let lambda_hi = 1.05 * e.values[0];
        let beta = rng.random_range(0.05..0.9);
        let eta = beta / lambda_lo;
        let theta = 0.0;
        let sigma = eta * lambda_hi * theta;
        let rho = 1.0 - beta;
        let alpha = alpha_min(sigma, rho, theta, b1, a1);
        let (ap, bp) = contracted_projections(a1, b1, rho, sigma, alpha);

        let v1 = linearized_step(&h, &v0, eta);
        let (a_obs, b_obs) = project_split(&v1, u1).unwrap();
        let slack = (a_obs - ap).max(b_obs - bp);
        worst = worst.max(slack);
        ok += usize::from(a_obs <= ap + 1e-10 && b_obs <= bp + 1e-10);
    }
    verdict(ok == 100, format!("{ok}/100 instances bounded, worst slack {worst:.2e}"))
}

fn c08_beta_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let step = 1e-3;
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = rng.random_range(1e-3..0.9);
        let lambda = rng.random_range(5.0..60.0);
        let inputs = SweepInputs {
            a1: rng.random_range(1.0..20.0),
            b1: rng.random_range(0.0..20.0),
            theta1: 0.0,
            lambda1_lo: lambda,
            lambda1_hi: 1.1 * lambda,
            gamma1_base: g,
            omega0: 1.0,
            n: 800,
        };
        let (rows, best) = beta_sweep(&inputs, step).unwrap();
        let Some(best) = best else { continue };
        let off = (rows[best].beta - (1.0 - g)).abs();
        worst = worst.max(off);
        ok += usize::from(off <= step + 1e-12);
    }
    verdict(ok == 20, format!("{ok}/20 within one grid step, worst offset {worst:.2e}"))
}

fn c09_scale_law() -> Verdict {
    let mut means = Vec::new();
    let mut detail = String::new();
    for m in [8usize, 32, 128] {
        let gs: Vec<f64> = (0..SEEDS)
            .filter_map(|seed| {
                let cfg = RunConfig { seed, m, mu_mode: MuMode::SqrtM, ..RunConfig::default() };
                let (train, test, _) =
                    generate_dataset(cfg.n, cfg.n_test, seed, &cfg.data, cfg.m, cfg.mu()).expect("dataset");
                gamma_of(&bench::run_certificate(&cfg, &train, &test))
            })
            .collect();
        let g = mean(&gs);
        detail += &format!("m={m}: {g:.3} ({} seeds) ", gs.len());
        means.push(g);
    }
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (hi - lo) / hi;
    verdict(spread < 0.2, format!("{detail}relative spread {spread:.3}"))
}

fn c10_regimes() -> Verdict {
    let start = Instant::now();
    let under: Vec<_> = (0..SEEDS)
        .map(|seed| bench::probe_run(&RunConfig { seed, ..RunConfig::default() }, "under").expect("probe"))
        .collect();
    let over: Vec<_> = (0..SEEDS)
        .map(|seed| {
            let cfg = RunConfig { seed, n: 64, m: 1024, mu_mode: MuMode::EqualM, ..RunConfig::default() };
            bench::probe_run(&cfg, "over").expect("probe")
        })
        .collect();
    let under_ok = under.iter().filter(|r| r.gamma2 > 1.0).count();
    let over_g1 = over.iter().filter(|r| r.gamma1 < 0.2).count();
    let over_g2 = over.iter().filter(|r| r.gamma2 < 0.5).count();
    let over_both = over.iter().filter(|r| r.gamma1 < 0.2 && r.gamma2 < 0.5).count();
    let med = |mut v: Vec<f64>| {
        v.retain(|x| x.is_finite());
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
    };
    let g1_med = med(over.iter().map(|r| r.gamma1).collect());
    let g2_med = med(over.iter().map(|r| r.gamma2).collect());
    let took = start.elapsed();
    let need = 0.9 * SEEDS as f64;
    let pass = under_ok as f64 >= need && over_both as f64 >= need && took < Duration::from_secs(600);
    verdict(
        pass,
        format!(
            "under gamma2>1 on {under_ok}/{SEEDS}; over gamma1<0.2 on {over_g1}/{SEEDS} gamma2<0.5 on {over_g2}/{SEEDS} (median gamma1 {g1_med:.3} gamma2 {g2_med:.3}) in {took:.1?}"
        ),
    )
}

fn c11_mpc() -> Verdict {
    let cfg = MpcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let steps = 200;
    let (mut ctrl, mut free) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let s0 = VdpState::new(rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
        let reference = Sinusoid {
            amplitude: rng.random_range(0.4..=1.2),
            omega: rng.random_range(0.5..=1.5),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        };
        ctrl.push(tracking_mse(&simulate(s0, &reference, &cfg, steps, true).unwrap()));
        free.push(tracking_mse(&simulate(s0, &reference, &cfg, steps, false).unwrap()));
    }
    let (c, f) = (mean(&ctrl), mean(&free));
    verdict(c <= 0.5 * f, format!("closed-loop MSE {c:.4} vs uncontrolled {f:.4} (ratio {:.3})", c / f))
}

/// The `ntk-stop` binary next to this test executable, built on demand.
fn cli_binary() -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    let profile_dir = exe.parent().and_then(Path::parent).expect("target profile dir");
    let bin = profile_dir.join(format!("ntk-stop{}", std::env::consts::EXE_SUFFIX));
    let release = profile_dir.file_name().is_some_and(|d| d == "release");
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "--quiet", "-p", "ntk-stop", "--bin", "ntk-stop"]);
    if release {
        build.arg("--release");
    }
    let status = build.status().expect("cargo runs");
    assert!(status.success() && bin.exists(), "could not build {}", bin.display());
    bin
}

fn run_cli(bin: &Path, dir: &Path, args: &[&str]) -> i32 {
    Command::new(bin)
        .current_dir(dir)
        .env_remove(bench::OUT_ENV)
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Verdict {
    let common = ["--seed", "1", "--n-test", "200", "--mc-trials", "200"];
    let commands: [&[&str]; 5] = [
        &["gen-data"],
        &["certify"],
        &["curves", "--grid", "5"],
        &["sweep-beta", "--beta-step", "0.01"],
        &["param-probe", "--probe-seeds", "1", "--probe-widths", "16"],
    ];
    let bin = cli_binary();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut codes = Vec::new();
    for dir in &dirs {
        for cmd in commands {
            let args: Vec<&str> = cmd.iter().chain(&common).copied().collect();
            codes.push(run_cli(&bin, dir.path(), &args));
        }
    }
    let (a, b) = (tree(&dirs[0].path().join("out")), tree(&dirs[1].path().join("out")));
    let ran = codes.iter().all(|c| matches!(c, 0 | 2 | 3));
    let pass = ran && !a.is_empty() && a == b;
    verdict(pass, format!("{} output files compared, exit codes {codes:?}", a.len()))
}

fn main() {
    let ex = example1();
    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "formula fidelity", Box::new(c01_formula)),
        (2, "example-1 end to end", Box::new(|| c02_example1(&ex))),
        (3, "one-step efficacy", Box::new(|| c03_efficacy(&ex))),
        (4, "linearization", Box::new(|| c04_linearization(&ex))),
        (5, "gradient oracle", Box::new(c05_gradients)),
        (6, "spectrum properties", Box::new(|| c06_spectrum(&ex))),
        (7, "projection bounds", Box::new(c07_projection_bounds)),
        (8, "beta optimality", Box::new(c08_beta_optimality)),
        (9, "scale law", Box::new(c09_scale_law)),
        (10, "regime probe", Box::new(c10_regimes)),
        (11, "mpc oracle", Box::new(c11_mpc)),
        (12, "determinism", Box::new(c12_determinism)),
    ];
    let mut failed = 0;
    for (k, name, check) in &criteria {
        let v = check();
        failed += usize::from(!v.pass);
        println!("criterion {k} ({name}): {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
