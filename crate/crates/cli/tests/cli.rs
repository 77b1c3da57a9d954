use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = "theta1 = [-0.5, 0.3]
theta2 = 1.0
theta3 = 1.0
alpha1 = [2.0, 0.5]
beta1 = [1.0, 0.2]
alpha0 = [4.0, 0.1]
beta0 = [3.0, -0.2]
wealth_mean = 0.0
wealth_sd = 1.0
n_points = 400
target_degree = 6.0
";

fn spillover(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spillover"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = spillover(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

struct Sim {
    _tmp: TempDir,
    root: PathBuf,
}

impl Sim {
    fn new(seed: &str) -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        fs::write(root.join("spec.toml"), SPEC).unwrap();
        ok(&["simulate", "--spec", s(&root.join("spec.toml")), "--seed", seed, "--out", s(&root.join("sim"))]);
        Sim { _tmp: tmp, root }
    }

    fn file(&self, name: &str) -> String {
        self.root.join("sim").join(name).to_string_lossy().into_owned()
    }

    fn data_args(&self) -> Vec<String> {
        ["edges", "covariates", "assignment"]
            .iter()
            .flat_map(|f| [format!("--{f}"), self.file(&format!("{f}.csv"))])
            .collect()
    }

    fn estimate(&self, out: &Path, extra: &[&str]) {
        let mut args: Vec<String> = vec!["estimate".into()];
        args.extend(self.data_args());
        args.extend(["--choice".into(), self.file("choice.csv"), "--outcome".into(), self.file("outcome.csv")]);
        args.extend(["--out".into(), s(out).into()]);
        args.extend(extra.iter().map(|x| x.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("no_such_edges.csv");
    let out = spillover(&[
        "estimate",
        "--edges",
        s(&missing),
        "--choice",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn missing_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    let out = spillover(&["--config", s(&cfg), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&cfg)));
}

#[test]
fn unknown_config_key_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[model]\ncf_ordr = 2\n").unwrap();
    let out = spillover(&["--config", s(&cfg), "simulate", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_and_estimate_are_byte_identical_on_rerun() {
    let a = Sim::new("11");
    let b = Sim::new("11");
    let strip = |m: BTreeMap<String, Vec<u8>>| -> BTreeMap<String, Vec<u8>> {
        m.into_iter().filter(|(k, _)| k != "manifest.json").collect()
    };
    assert_eq!(strip(read_dir_bytes(&a.root.join("sim"))), strip(read_dir_bytes(&b.root.join("sim"))));

    a.estimate(&a.root.join("e1"), &[]);
    a.estimate(&a.root.join("e2"), &[]);
    assert_eq!(read_dir_bytes(&a.root.join("e1")), read_dir_bytes(&a.root.join("e2")));

    let c = Sim::new("12");
    assert_ne!(
        fs::read(a.root.join("sim/outcome.csv")).unwrap(),
        fs::read(c.root.join("sim/outcome.csv")).unwrap()
    );
}

#[test]
fn estimate_recovers_the_generating_parameters() {
    let sim = Sim::new("3");
    let out = sim.root.join("est");
    sim.estimate(&out, &[]);
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.file("truth.json")).unwrap()).unwrap();
    let truth = &truth["parameters"];

    for row in csv_rows(&out.join("theta_hat.csv")) {
        let (est, se): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        let t = truth[&row[0]].as_f64().unwrap();
        assert!((est - t).abs() <= 3.5 * se, "{}: {est} vs {t} (se {se})", row[0]);
    }
    for row in csv_rows(&out.join("gamma_hat.csv")) {
        // alpha[const] in arm 1 -> alpha1[const]; rho_u in arm 0 -> rho_u0
        let name = match row[1].split_once('[') {
            Some((h, t)) => format!("{h}{}[{t}", row[0]),
            None => format!("{}{}", row[1], row[0]),
        };
        let (est, se, naive): (f64, f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap(), row[4].parse().unwrap());
        let t = truth[&name].as_f64().unwrap();
        assert!((est - t).abs() <= 3.5 * se, "{name}: {est} vs {t} (se {se})");
        assert!(se >= naive * (1.0 - 1e-12), "{name}: corrected {se} below naive {naive}");
    }

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("first_stage.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert!(summary["lambda_hat"].as_f64().unwrap() < 1.0);
    let eq = csv_rows(&out.join("equilibrium.csv"));
    assert_eq!(eq.len(), summary["n"].as_u64().unwrap() as usize);
}

#[test]
fn second_stage_only_reproduces_the_full_run() {
    let sim = Sim::new("4");
    let full = sim.root.join("full");
    let part = sim.root.join("part");
    sim.estimate(&full, &[]);
    sim.estimate(&part, &["--second-stage", "--fit", s(&full)]);
    assert_eq!(fs::read(full.join("gamma_hat.csv")).unwrap(), fs::read(part.join("gamma_hat.csv")).unwrap());
}

#[test]
fn effects_and_predict_emit_plot_ready_tables() {
    let sim = Sim::new("5");
    let fit = sim.root.join("fit");
    sim.estimate(&fit, &[]);
    let data = sim.data_args();

    let eff = sim.root.join("eff");
    let mut args: Vec<String> = vec!["effects".into()];
    args.extend(data.clone());
    args.extend(["--fit".into(), s(&fit).into(), "--grid-step".into(), "0.1".into(), "--out".into(), s(&eff).into()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let ade = csv_rows(&eff.join("ade_curve.csv"));
    assert_eq!(ade.len(), 11);
    assert_eq!(csv_rows(&eff.join("apo_curves.csv")).len(), 22);
    assert_eq!(csv_rows(&eff.join("ase_curve.csv")).len(), 22);
    // ADE equals the difference of the potential-outcome curves.
    let apo = csv_rows(&eff.join("apo_curves.csv"));
    for i in 0..11 {
        let d: f64 = apo[i][2].parse::<f64>().unwrap() - apo[11 + i][2].parse::<f64>().unwrap();
        assert!((d - ade[i][1].parse::<f64>().unwrap()).abs() < 1e-10);
    }

    let pred = sim.root.join("pred");
    let mut args: Vec<String> = vec!["predict".into()];
    args.extend(data);
    args.extend(["--fit".into(), s(&fit).into(), "--sweep".into(), "--out".into(), s(&pred).into()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let curve = csv_rows(&pred.join("policy_curve.csv"));
    assert_eq!(curve.len(), 21);
    let shares: Vec<f64> = curve.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(shares.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*shares.last().unwrap(), 1.0);
}

#[test]
fn config_keys_apply_and_flags_override() {
    let sim = Sim::new("6");
    let cfg = sim.root.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[data]\nedges = {:?}\ncovariates = {:?}\nassignment = {:?}\nchoice = {:?}\noutcome = {:?}\n[model]\ncf_order = 2\n",
            sim.file("edges.csv"),
            sim.file("covariates.csv"),
            sim.file("assignment.csv"),
            sim.file("choice.csv"),
            sim.file("outcome.csv"),
        ),
    )
    .unwrap();
    let a = sim.root.join("a");
    let b = sim.root.join("b");
    ok(&["--config", s(&cfg), "estimate", "--out", s(&a)]);
    ok(&["--config", s(&cfg), "estimate", "--cf-order", "1", "--out", s(&b)]);
    // Order 2 adds a quadratic loading per term and arm.
    assert_eq!(csv_rows(&a.join("gamma_hat.csv")).len(), 16);
    assert_eq!(csv_rows(&b.join("gamma_hat.csv")).len(), 12);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["model"]["cf_order"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn monte_carlo_is_independent_of_thread_count() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let run = |threads: &str, dir: &str| {
        let out = tmp.path().join(dir);
        ok(&["mc", "--spec", s(&spec), "--reps", "12", "--threads", threads, "--seed", "9", "--out", s(&out)]);
        out
    };
    let a = run("1", "a");
    let b = run("3", "b");
    for f in ["mc_table.csv", "comparators.csv", "mc_summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.join("mc_table.csv")).unwrap();
    assert!(header.starts_with("name,truth,mean_estimate,bias,mean_se,empirical_sd,coverage,mc_se\n"));
    assert_eq!(csv_rows(&a.join("mc_table.csv")).len(), 16);
}
