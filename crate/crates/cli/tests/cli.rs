use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CHAIN: &str = r#"
name = "chain4"

[model]
kind = "tfim_chain"
n = 4
j = 1.0
g = 1.5

[channel]
alpha = 1.0
T = 2.0
dt = 0.25
sigma = 0.25
omega_max = 8.0
beta = 2.0
n_env = 1
seed = 99

[channel.jump_family]
kind = "single_pauli_only"

[run]
n_traj = 8
n_resets = 6

[fidelity]
every = 2
"#;

fn kgibbs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgibbs")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn only_run_dir(out: &Path, name: &str) -> PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(out.join("runs").join(name)).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn empty_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "\n");
    let out = kgibbs(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    let out = kgibbs(tmp.path(), &["run", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));
    let out = kgibbs(tmp.path(), &["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_channel_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CHAIN.replace("dt = 0.25", "dt = 0.3"));
    let out = kgibbs(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(kgibbs(&a, &["--workers", "1", "run", "--config", cfg.to_str().unwrap()]).status.success());
    assert!(kgibbs(&b, &["--workers", "2", "run", "--config", cfg.to_str().unwrap()]).status.success());
    let (da, db) = (only_run_dir(&a, "chain4"), only_run_dir(&b, "chain4"));
    assert_eq!(da.file_name(), db.file_name());
    for f in ["trajectories.csv", "summary.csv", "fidelity.csv", "report.txt", "config.toml"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f} differs");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(da.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 99);
    assert_eq!(manifest["config_hash"].as_str(), da.file_name().unwrap().to_str());

    let traj = fs::read_to_string(da.join("trajectories.csv")).unwrap();
    let header = traj.lines().next().unwrap();
    assert!(header.starts_with("traj,seed,cycle,energy,m_z,m_x,env_ones,z_0"));
    assert_eq!(traj.lines().count(), 1 + 8 * 7);

    let fid = fs::read_to_string(da.join("fidelity.csv")).unwrap();
    let cycles: Vec<&str> = fid.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(cycles, ["0", "2", "4", "6"]);

    let out = kgibbs(tmp.path(), &["analyze", "mixing", "--run", da.to_str().unwrap(), "--thresholds", "0.01"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(da.join("mixing.csv").exists());

    let c = tmp.path().join("c");
    let reseeded = kgibbs(&c, &["run", "--config", cfg.to_str().unwrap(), "--seed", "100"]);
    assert!(reseeded.status.success());
    let dc = only_run_dir(&c, "chain4");
    assert_ne!(dc.file_name(), da.file_name());
    assert_ne!(fs::read(dc.join("summary.csv")).unwrap(), fs::read(da.join("summary.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CHAIN.replace("[fidelity]\nevery = 2\n", ""));
    let out = kgibbs(
        tmp.path(),
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "beta", "--values", "1,inf", "--n-traj", "4"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(only_run_dir(tmp.path(), "chain4").join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("beta,"));
    assert!(rows[2].starts_with("inf,"));
    assert!(tmp.path().join("runs/chain4-betainf").is_dir());
}

#[test]
fn spectrum_matches_thermal_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let out = kgibbs(tmp.path(), &["spectrum", "--config", cfg.to_str().unwrap(), "--betas", "0,inf"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = only_run_dir(tmp.path(), "chain4").join("spectrum");
    let spec = fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    let energies: Vec<f64> = spec.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(energies.len(), 16);
    let thermal = fs::read_to_string(dir.join("thermal.csv")).unwrap();
    let rows: Vec<Vec<f64>> = thermal
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| if x == "inf" { f64::INFINITY } else { x.parse().unwrap() }).collect())
        .collect();
    let mean = energies.iter().sum::<f64>() / 16.0;
    assert!((rows[0][1] - mean).abs() < 1e-9);
    assert!((rows[1][1] - energies[0]).abs() < 1e-9);
}

#[test]
fn compile_emits_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kgibbs(tmp.path(), &["compile", "--preset", "fig2b-afim-beta3", "--fold", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("zz_gates_per_step 88"));
    assert!(report.contains("zz_depth_per_step 17"));
    let dir = fs::read_dir(tmp.path().join("compile")).unwrap().next().unwrap().unwrap().path();
    let sched: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("schedule.json")).unwrap()).unwrap();
    let layers = sched["layers"].as_array().unwrap();
    assert!(!layers.is_empty());
    assert_eq!(layers[0][0].as_array().unwrap().len(), 4);

    let edges = dir.join("graph.edges");
    let ok = kgibbs(tmp.path(), &["compile", "--preset", "fig2b-afim-beta3", "--graph", edges.to_str().unwrap()]);
    assert!(ok.status.success());
    fs::write(&edges, "0 1\n").unwrap();
    let bad = kgibbs(tmp.path(), &["compile", "--preset", "fig2b-afim-beta3", "--graph", edges.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn analyze_helpers() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("zne.csv");
    let rows: String =
        [0.0, 0.5, 1.0].iter().map(|p: &f64| format!("{p},{},0.001\n", 0.9 * (-0.3 * (1.0 + 2.0 * p)).exp())).collect();
    fs::write(&csv, format!("p,value,stderr\n{rows}")).unwrap();
    let out = kgibbs(tmp.path(), &["analyze", "zne", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["kind"], "exponential");
    assert!((fit["value"].as_f64().unwrap() - 0.9).abs() < 1e-6);

    let out = kgibbs(tmp.path(), &["analyze", "beta-star", "--confusion", "1,0", "--beta", "2"]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((r["beta_star"].as_f64().unwrap() - 2.0).abs() < 1e-6);

    let out = kgibbs(tmp.path(), &["analyze", "beta-star", "--confusion", "1", "--beta", "2"]);
    assert_eq!(out.status.code(), Some(2));

    let out = kgibbs(tmp.path(), &["analyze", "beta-eff", "--preset", "table1-ns12-binf", "--energy-per-site", "5"]);
    assert_eq!(out.status.code(), Some(3));
}
