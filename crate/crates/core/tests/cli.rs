use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ntk-stop");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("NTK_STOP_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const SMALL: &[&str] = &["--n-test", "200", "--mc-trials", "200"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_v(dir: &Path, args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(dir, &refs)
}

#[test]
fn gen_data_writes_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_v(tmp.path(), &with(&["gen-data", "--seed", "3"], SMALL));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let train = read(tmp.path().join("out/data/train_s3.csv"));
    let mut lines = train.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3,y"));
    assert_eq!(lines.count(), 800);
    let test = read(tmp.path().join("out/data/test_s3.csv"));
    assert_eq!(test.lines().count(), 201);
    let side: serde_json::Value = serde_json::from_str(&read(tmp.path().join("out/data/scaling_s3.json"))).unwrap();
    assert!(side["u_scale"].as_f64().unwrap() > 0.0);
    assert_eq!(side["seed"].as_u64(), Some(3));
    assert!(side["config"]["mpc"]["horizon"].is_u64());
}

#[test]
fn zero_samples_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["gen-data", "--n", "0"]);
    assert_eq!(code(&o), 64);
    let o = run(tmp.path(), &["gen-data", "--no-such-flag", "1"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn certify_without_data_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["certify", "--seed", "11"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));
}

#[test]
fn certify_reports_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in ["3", "4"] {
        assert_eq!(code(&run_v(tmp.path(), &with(&["gen-data", "--seed", seed], SMALL))), 0);
    }
    let o = run_v(tmp.path(), &with(&["certify", "--seed", "3"], SMALL));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path().join("out/reports/certificate_s3.json"))).unwrap();
    assert!(json["gamma1"].as_f64().unwrap() < 1.0);
    assert_eq!(json["condition_ok"], serde_json::json!(true));
    assert_eq!(json["reliability"], serde_json::json!("CERTIFIED"));
    assert!(json["provenance"]["m1"].as_str().unwrap().contains("monte-carlo"));
    let text = read(tmp.path().join("out/reports/certificate_s3.txt"));
    assert!(text.starts_with("status=certified\n"));
    assert!(text.lines().all(|l| l.contains('=')));
    let spectrum = read(tmp.path().join("out/reports/spectrum_s3.csv"));
    assert_eq!(spectrum.lines().next(), Some("index,eigenvalue"));
    assert_eq!(spectrum.lines().count(), 801);

    // gamma1 is about 0.65 here, so a step this long violates the condition.
    let o = run_v(tmp.path(), &with(&["certify", "--seed", "4", "--beta", "0.999"], SMALL));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path().join("out/reports/certificate_s4.json"))).unwrap();
    assert_eq!(json["status"], serde_json::json!("refused"));
}

#[test]
fn mismatched_dimensions_fail() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.csv"), "x1,x2,y\n1,0,0.1\n0,1,0.2\n").unwrap();
    std::fs::write(tmp.path().join("b.csv"), "x1,x2,x3,y\n1,0,0,0.1\n0,1,0,0.2\n").unwrap();
    let o = run(tmp.path(), &["certify", "--train", "a.csv", "--test", "b.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_env_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.cfg"), "# small run\nseed = 5\nn = 120\nn_test = 50\nout_dir = from_file\n").unwrap();
    let o = run(tmp.path(), &["gen-data", "--config", "run.cfg", "--n", "90"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(tmp.path().join("from_file/data/train_s5.csv")).lines().count(), 91);

    let o = Command::new(BIN)
        .current_dir(tmp.path())
        .env("NTK_STOP_OUT", "from_env")
        .args(["gen-data", "--config", "run.cfg"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from_env/data/train_s5.csv").exists());

    let o = Command::new(BIN)
        .current_dir(tmp.path())
        .env("NTK_STOP_OUT", "from_env")
        .args(["gen-data", "--config", "run.cfg", "--out-dir", "from_flag"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from_flag/data/train_s5.csv").exists());
}

#[test]
fn curves_and_sweep_columns() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_v(tmp.path(), &with(&["gen-data", "--seed", "3"], SMALL))), 0);
    let o = run_v(tmp.path(), &with(&["curves", "--seed", "3", "--grid", "10"], SMALL));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(tmp.path().join("out/curves/curves_s3.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,ls,lg,nu,omega,big_omega,l_test"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 101);
    let at_t1: Vec<f64> = rows[10][..6].iter().map(|s| s.parse().unwrap()).collect();
    let tol = 1e-9;
    assert!(at_t1[2] <= at_t1[3] + tol && at_t1[3] <= at_t1[4] + tol && at_t1[4] <= at_t1[5] + tol);
    assert!(rows[11][3].is_empty());

    let o = run_v(tmp.path(), &with(&["sweep-beta", "--seed", "3"], SMALL));
    assert_eq!(code(&o), 0);
    let csv = read(tmp.path().join("out/curves/sweep_beta_s3.csv"));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 999);
    assert_eq!(rows.iter().filter(|r| r[6] == "1").count(), 1);
    assert!(rows.iter().filter(|r| r[5] == "1").all(|r| r[3].parse::<f64>().unwrap() < 0.0));
}

#[test]
fn every_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cmds: Vec<(Vec<String>, &str)> = vec![
        (with(&["gen-data", "--seed", "2"], SMALL), "out/data/train_s2.csv"),
        (with(&["gen-data", "--seed", "2"], SMALL), "out/data/scaling_s2.json"),
        (with(&["certify", "--seed", "2"], SMALL), "out/reports/certificate_s2.json"),
        (with(&["certify", "--seed", "2"], SMALL), "out/reports/certificate_s2.txt"),
        (with(&["curves", "--seed", "2", "--grid", "5"], SMALL), "out/curves/curves_s2.csv"),
        (with(&["sweep-beta", "--seed", "2", "--beta-step", "0.01"], SMALL), "out/curves/sweep_beta_s2.csv"),
        (
            with(&["param-probe", "--seed", "2", "--probe-seeds", "1", "--probe-widths", "16", "--n", "100"], SMALL),
            "out/curves/param_probe_s2.csv",
        ),
    ];
    for (args, file) in cmds {
        assert!(matches!(code(&run_v(tmp.path(), &args)), 0 | 2 | 3));
        let first = std::fs::read(tmp.path().join(file)).unwrap();
        assert!(matches!(code(&run_v(tmp.path(), &args)), 0 | 2 | 3));
        let second = std::fs::read(tmp.path().join(file)).unwrap();
        assert_eq!(first, second, "{file}");
    }
}
