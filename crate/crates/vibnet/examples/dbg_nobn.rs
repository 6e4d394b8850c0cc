use vibnet::data::{load_mnist, Split};
use vibnet::mi::MiTracker;
use vibnet::network::{toy_mlp, Network};
use vibnet::pruner::{arch_arith, compute_r_n, compute_r_w, gated_feature_sizes, prune, DEFAULT_TAU};
use vibnet::rng::RandomSource;
use vibnet::trainer::*;
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let gamma: f64 = args[1].parse().unwrap();
    let epochs: usize = args[2].parse().unwrap();
    let bn: bool = args.get(3).map(|v| v == "bn").unwrap_or(false);
    let lr_step: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(0);
    let dir = Path::new("/root/crate/data/mnist");
    let train_d = load_mnist(dir, Split::Train).unwrap();
    let test_d = load_mnist(dir, Split::Test).unwrap();
    let mut rng = RandomSource::new(7);
    // 784-300-100-10 with input gate, no batch norm
    let net = if bn {
        vibnet::network::lenet_300_100(&mut rng)
    } else {
        toy_mlp(&[784, 300, 100, 10], true, false, &mut rng)
    };
    let cfg = TrainConfig {
        gamma_prime: gamma,
        optimizer: OptimizerKind::adam(1e-3),
        epochs,
        batch_size: 128,
        seed: 7,
        eval_every: 10,
        shards: 2,
        lr_step_epoch: lr_step,
        lr_step_factor: 0.2,
        ..TrainConfig::default()
    };
    let tracker = MiTracker::new(&train_d, 1000, 5, 0x4d49).unwrap();
    let mut observe = |_e: usize, n: &Network| Some(tracker.measure(n).map(|m| m.value).unwrap_or(f64::NAN));
    let (net, log) = train_full(net, &train_d, Some(&test_d), &cfg, Some(&mut observe)).unwrap();
    let mi: Vec<f64> = log.rows.iter().map(|r| r.mi.unwrap()).collect();
    let (pruned, report) = prune(&net, DEFAULT_TAU).unwrap();
    let err = pruned.classification_error(&test_d.images, &test_d.labels).unwrap();
    let orig = if bn {
        vibnet::network::lenet_300_100(&mut RandomSource::new(1))
    } else {
        toy_mlp(&[784, 300, 100, 10], true, false, &mut RandomSource::new(1))
    };
    let rw = compute_r_w(&arch_arith(&orig).unwrap(), &arch_arith(&pruned).unwrap()).unwrap();
    let rn = compute_r_n(&gated_feature_sizes(&orig), &gated_feature_sizes(&pruned)).unwrap();
    println!("gamma {gamma} epochs {epochs}: arch {} err {err:.4} r_W {rw:.2}% r_N {rn:.2}%",
        report.arch_string());
    println!("mi: {}", mi.iter().enumerate().map(|(i, m)| format!("{i}:{m:.2}")).collect::<Vec<_>>().join(" "));
    let peak = mi.iter().cloned().fold(f64::MIN, f64::max);
    let peak_i = mi.iter().position(|&m| m == peak).unwrap();
    println!("peak {peak:.3}@{peak_i} final {:.3} ratio {:.2}", mi.last().unwrap(), mi.last().unwrap()/peak);
}
