use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sbflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbflow")).args(args).env("SF2M_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = sbflow(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let f = dir.join(name);
    std::fs::write(&f, body).unwrap();
    f
}

const CONFIG: &str = r#"
experiment = "two_dim"
seeds = [0, 1]
[dataset]
target = "moons"
n_train = 64
n_test = 64
[train]
batch_size = 32
steps = 20
[train.model]
kind = "mlp"
hidden = 8
[eval]
sim_steps = 10
traj_paths = 5
"#;

#[test]
fn run_writes_layout_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two_dim.toml", CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["run", "--config", p(&cfg), "--out", p(&b)]);
    for f in ["config.toml", "metrics.json", "loss.csv", "traj_g0.csv", "model.ckpt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let m = std::fs::read_to_string(a.join("metrics.json")).unwrap();
    assert_eq!(m, std::fs::read_to_string(b.join("metrics.json")).unwrap());
    let v: serde_json::Value = serde_json::from_str(&m).unwrap();
    for k in ["w2", "npe"] {
        assert!(v["metrics"][k]["mean"].is_f64() && v["metrics"][k]["std"].is_f64(), "{k}");
    }
    let loss = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,flow_loss,score_loss,wallclock\n"));
}

#[test]
fn invalid_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "experiment = \"two_dim\"\nseeds = []\n");
    let o = sbflow(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));
}

#[test]
fn simulate_sweeps_diffusion_from_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two_dim.toml", CONFIG);
    let out = dir.path().join("m");
    ok(&["train", "--config", p(&cfg), "--out", p(&out), "--steps", "10"]);
    let ck = out.join("model.ckpt");
    let x0 = write(dir.path(), "x0.csv", "x0,x1\n0.0,0.0\n1.0,-1.0\n0.5,0.5\n");
    let (t0, t1) = (dir.path().join("g0.csv"), dir.path().join("g1.csv"));
    ok(&["simulate", "--checkpoint", p(&ck), "--input", p(&x0), "--out", p(&t0), "--g", "0", "--steps", "5"]);
    ok(&["simulate", "--checkpoint", p(&ck), "--input", p(&x0), "--out", p(&t1), "--g", "1", "--steps", "5"]);
    let (a, b) = (std::fs::read_to_string(&t0).unwrap(), std::fs::read_to_string(&t1).unwrap());
    assert_eq!(a.lines().next(), b.lines().next());
    assert_eq!(a.lines().next().unwrap(), "x0,x1,t,path_id");
    assert_eq!(a.lines().count(), b.lines().count());
    assert_ne!(a, b);

    let traj = dir.path().join("export.csv");
    ok(&["export-traj", "--checkpoint", p(&ck), "--input", p(&x0), "--out", p(&traj), "--paths", "2", "--steps", "4"]);
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 1 + 2 * 5);

    let missing = sbflow(&["simulate", "--checkpoint", p(&dir.path().join("none.ckpt")), "--input", p(&x0), "--out", p(&t0)]);
    assert!(!missing.status.success());
}

#[test]
fn ot_solve_plan_has_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x0,x1\n0,0\n1,0\n0,1\n1,1\n");
    let b = write(dir.path(), "b.csv", "x0,x1\n0.1,0\n2,0\n0,3\n1,1.5\n");
    for method in ["exact", "sinkhorn"] {
        let plan = dir.path().join(format!("{method}.csv"));
        ok(&["ot-solve", "--method", method, "--source", p(&a), "--target", p(&b), "--out", p(&plan), "--epsilon", "0.5"]);
        let mut rows = [0.0; 4];
        let mut cols = [0.0; 4];
        let text = std::fs::read_to_string(&plan).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "i,j,mass");
        for l in lines {
            let f: Vec<&str> = l.split(',').collect();
            let m: f64 = f[2].parse().unwrap();
            rows[f[0].parse::<usize>().unwrap()] += m;
            cols[f[1].parse::<usize>().unwrap()] += m;
        }
        let tol = if method == "exact" { 1e-9 } else { 1e-6 };
        assert!(rows.iter().chain(&cols).all(|s| (s - 0.25).abs() < tol), "{method} {rows:?} {cols:?}");
        assert!(plan.with_extension("json").exists());
    }
}

#[test]
fn eval_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x0,x1\n0,0\n1,0\n0,1\n");
    let o = ok(&["eval", "--metric", "w2", "--a", p(&a), "--b", p(&a)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["value"].as_f64().unwrap(), 0.0);
    let b = write(dir.path(), "b.csv", "x0\n0\n1\n");
    let c = write(dir.path(), "c.csv", "x0\n1\n2\n");
    let o = ok(&["eval", "--metric", "w1", "--a", p(&b), "--b", p(&c)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let o = ok(&["eval", "--metric", "kl", "--a", p(&b), "--t", "0"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["note"].as_str().unwrap().contains("fit || truth"));
    assert!(!sbflow(&["eval", "--metric", "w2", "--a", p(&a)]).status.success());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            sbflow::experiment::ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
