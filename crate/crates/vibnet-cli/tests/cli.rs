//! End-to-end checks of the command-line surface: exit codes, report
//! contents, and byte-level determinism of artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vibnet::checkpoint;
use vibnet::network::{lenet_300_100, GateSlot};
use vibnet::rng::RandomSource;

fn vibnet_bin() -> &'static str {
    env!("CARGO_BIN_EXE_vibnet")
}

fn run(args: &[&str]) -> Output {
    Command::new(vibnet_bin()).args(args).output().expect("spawn vibnet")
}

fn mnist_dir() -> PathBuf {
    std::env::var("DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn write_toy_config(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("toy.cfg");
    std::fs::write(
        &path,
        format!(
            "[run]\nseed = {seed}\narch = toy_mlp(6,10,3)\nout_dir = {}\n\n[train]\ngamma_prime = 1e-3\nepochs = 5\nbatch_size = 32\neval_every = 0\nshards = 1\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy_config(dir.path(), 99);
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        let r = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = std::fs::read(out1.join("model.vibn")).unwrap();
    let b = std::fs::read(out2.join("model.vibn")).unwrap();
    assert_eq!(a, b, "checkpoints must be byte-identical");
    let la = std::fs::read(out1.join("trainlog.csv")).unwrap();
    let lb = std::fs::read(out2.join("trainlog.csv")).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn prune_on_identity_gates_keeps_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RandomSource::new(4);
    let mut net = lenet_300_100(&mut rng);
    let force_identity = |g: &mut GateSlot| {
        if let GateSlot::Stochastic(g) = g {
            g.mu.iter_mut().for_each(|m| *m = 1.0);
            g.log_sigma2.iter_mut().for_each(|t| *t = -20.0);
        }
    };
    force_identity(net.input_gate.as_mut().unwrap());
    net.blocks.iter_mut().for_each(|b| force_identity(&mut b.gate));
    let ckpt = checkpoint::from_network(&net, 4, 0);
    let ckpt_path = dir.path().join("identity.vibn");
    ckpt.save(&ckpt_path).unwrap();

    let r = run(&[
        "prune",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--tau",
        "1e-2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("r_W  = 100.00%"), "stdout: {stdout}");
    assert!(stdout.contains("784-300-100"), "stdout: {stdout}");
}

#[test]
fn eval_reports_published_metrics_for_97_71_33() {
    if !mnist_dir().join("t10k-labels-idx1-ubyte").exists()
        && !mnist_dir().join("t10k-labels-idx1-ubyte.gz").exists()
    {
        panic!("MNIST test files missing; run scripts/fetch_mnist.sh");
    }
    let dir = tempfile::tempdir().unwrap();
    // synthetic checkpoint with exactly the published pruned shape
    let mut rng = RandomSource::new(5);
    let mut net = lenet_300_100(&mut rng);
    let keep_first = |g: &mut GateSlot, k: usize| {
        if let GateSlot::Stochastic(g) = g {
            for (j, m) in g.mu.iter_mut().enumerate() {
                *m = if j < k { 1.0 } else { 0.0 };
            }
        }
    };
    keep_first(net.input_gate.as_mut().unwrap(), 97);
    keep_first(&mut net.blocks[0].gate, 71);
    keep_first(&mut net.blocks[1].gate, 33);
    let (pruned, report) = vibnet::pruner::prune(&net, 1e-6).unwrap();
    assert_eq!(report.arch_string(), "97-71-33");
    let ckpt_path = dir.path().join("pruned9771.vibn");
    checkpoint::from_network(&pruned, 5, 0).save(&ckpt_path).unwrap();

    let r = run(&[
        "eval",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--data-dir",
        mnist_dir().to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("r_W = 3.59%"), "stdout: {stdout}");
    assert!(stdout.contains("r_N = 16.98%"), "stdout: {stdout}");
}

#[test]
fn exit_codes_name_the_failure() {
    // unknown config key -> 2
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[train]\nlearning_rat = 3\n").unwrap();
    let r = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("train.learning_rat"), "stderr: {err}");

    // missing checkpoint -> 3
    let r = run(&["eval", "--checkpoint", "/nonexistent/model.vibn"]);
    assert_eq!(r.status.code(), Some(3));

    // degenerate pruning -> 4
    let mut rng = RandomSource::new(6);
    let mut net = vibnet::network::toy_mlp(&[4, 6, 3], false, false, &mut rng);
    if let GateSlot::Stochastic(g) = &mut net.blocks[0].gate {
        g.mu.iter_mut().for_each(|m| *m = 0.0);
    }
    let p = dir.path().join("dead.vibn");
    checkpoint::from_network(&net, 6, 0).save(&p).unwrap();
    let r = run(&["prune", "--checkpoint", p.to_str().unwrap(), "--tau", "1e-2"]);
    assert_eq!(r.status.code(), Some(4));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("block0"), "stderr: {err}");

    // unknown flag -> 2 with the flag named
    let r = run(&["train", "--confg", "x"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn analyze_writes_expected_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("analysis");
    let r = run(&["analyze", "--penalty-grid", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let csv = std::fs::read_to_string(out.join("penalty_grid.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "mu,omega,rho,oracle_plus_constant,diff");
    // 4 omegas x 61 grid points
    assert_eq!(lines.count(), 244);
    for line in csv.lines().skip(1) {
        let diff: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(diff.abs() < 1e-4);
    }
    // analyze with no mode selected is a usage error
    let r = run(&["analyze"]);
    assert_eq!(r.status.code(), Some(2));
}
