use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use ntk_stop::bench::{self, RunConfig, CONFIG_KEYS, OUT_ENV};
use ntk_stop::certificate::fmt_sig;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 64;

fn cli() -> Command {
    let mut cmd = Command::new("ntk-stop")
        .about("One-step early-stopping certificates for shallow networks")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("Flat key=value config file; flags override it"),
        )
        .after_help(format!("The output root may also be set with {OUT_ENV}; --out-dir takes precedence."))
        .subcommand(Command::new("gen-data").about("Generate train/test sets from the MPC controller"))
        .subcommand(Command::new("certify").about("Issue a one-step certificate (exit 0 certified, 2 refused, 3 unverified)"))
        .subcommand(Command::new("curves").about("Emit loss and bound curves around the certified step"))
        .subcommand(Command::new("sweep-beta").about("Tabulate Delta1 and Omega1 over beta"))
        .subcommand(Command::new("param-probe").about("Report gamma1 and gamma2 across parameterization regimes"));
    for key in CONFIG_KEYS {
        let flag: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        let mut arg = Arg::new(*key)
            .long(flag)
            .value_name("VALUE")
            .global(true)
            .action(ArgAction::Set);
        arg = match *key {
            "beta_mode" => arg.alias("beta"),
            "mu_mode" => arg.alias("mu"),
            _ => arg,
        };
        cmd = cmd.arg(arg);
    }
    cmd
}

fn build_config(m: &ArgMatches) -> ntk_stop::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(&PathBuf::from(path))?;
    }
    cfg.apply_env();
    for key in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(sub: &str, cfg: &RunConfig) -> ntk_stop::Result<u8> {
    match sub {
        "gen-data" => {
            let out = bench::cmd_gen_data(cfg)?;
            println!("train={}", out.train.display());
            println!("test={}", out.test.display());
            println!("scaling={}", out.scaling.display());
            println!("u_scale={}", fmt_sig(out.record.u_scale, 6));
            Ok(0)
        }
        "certify" => {
            let r = bench::cmd_certify(cfg)?;
            println!("status={}", r.status.as_str());
            if let Some(o) = &r.outcome {
                let c = &o.cert;
                println!("gamma1={}", fmt_sig(c.gamma1, 6));
                println!("beta={}", fmt_sig(c.beta, 6));
                println!("t1={}", fmt_sig(c.t1, 6));
                println!("big_omega1={}", fmt_sig(c.big_omega1, 6));
            }
            if let Some(reason) = &r.refusal {
                println!("reason={reason}");
            }
            println!("report={}", r.json.display());
            Ok(r.status.exit_code() as u8)
        }
        "curves" => {
            let out = bench::cmd_curves(cfg)?;
            println!("rows={}", out.rows.len());
            println!("curves={}", out.path.display());
            Ok(0)
        }
        "sweep-beta" => {
            let out = bench::cmd_sweep_beta(cfg)?;
            println!("gamma1={}", fmt_sig(out.gamma1, 6));
            if let Some(b) = out.best_beta {
                println!("argmax_beta={}", fmt_sig(b, 6));
            }
            println!("sweep={}", out.path.display());
            Ok(0)
        }
        "param-probe" => {
            let out = bench::cmd_param_probe(cfg)?;
            println!("rows={}", out.rows.len());
            println!("probe={}", out.path.display());
            Ok(0)
        }
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (sub, sub_m) = matches.subcommand().expect("subcommand required");
    let cfg = match build_config(sub_m) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(sub, &cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
