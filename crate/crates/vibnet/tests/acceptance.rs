//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `-- --nocapture` to see
//! them on success).
//!
//! The MNIST criteria share one desk-scale training run (plus a gamma = 0
//! control for the information-trend check), built once per process.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::{mnist_dir, network_grad_worst_rel_err};
use vibnet::analysis::{rho, rho_oracle, surrogate_minimize, SurrogateProblem};
use vibnet::data::{load_mnist, synthetic_blobs, Dataset, Split};
use vibnet::gate::PSI_FLOOR;
use vibnet::layers::{AffineLayer, BatchNormLayer, Conv2dLayer, Layer, Phase};
use vibnet::mi::{ksg_mutual_information, MiTracker};
use vibnet::network::{lenet_300_100, toy_mlp, Block, GateSlot, Likelihood, Network};
use vibnet::pruner::{compute_r_n, compute_r_w, prune, LayerArith, DEFAULT_TAU};
use vibnet::rng::RandomSource;
use vibnet::tensor::Tensor;
use vibnet::trainer::{fine_tune, train_full, GammaRule, OptimizerKind, StepTrainer, TrainConfig, TrainLog};
use vibnet::{Broadcast, EpsilonDraw, GateMode, VibGate};

// ---------------------------------------------------------------------------
// Criterion 1: closed-form KL vs Monte-Carlo oracle at xi = xi*
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_kl_closed_form_matches_monte_carlo_oracle() {
    let start = Instant::now();
    let mut rng = RandomSource::new(20_240_601);
    let net = toy_mlp(&[6, 12, 8, 4], false, false, &mut rng);
    let n: usize = 100_000;
    let batch = 1000usize;

    // pre-gate activations f_i for both gated layers, two independent
    // sample sets; f^2 is clamped at the psi floor throughout so the
    // relu's exact zeros stay inside log's domain
    let collect_f = |block_idx: usize, seed: u64| -> Vec<Tensor> {
        let mut xrng = RandomSource::new(seed);
        let mut nrng = RandomSource::new(seed ^ 0xabcdef);
        let mut out = Vec::new();
        for _ in 0..n / batch {
            let x = Tensor::randn(&[batch, 6], 1.0, &mut xrng);
            let h_prev = if block_idx == 0 {
                x
            } else {
                net.hidden_after_block(&x, block_idx - 1, GateMode::TrainSample, &mut nrng)
                    .unwrap()
            };
            let mut cur = h_prev;
            for layer in &net.blocks[block_idx].layers {
                let (y, _) = layer.forward(&cur, Phase::Train).unwrap();
                cur = y;
            }
            out.push(cur);
        }
        out
    };
    let f_sets: Vec<(Vec<Tensor>, Vec<Tensor>)> = (0..2)
        .map(|b| (collect_f(b, 100 + b as u64), collect_f(b, 200 + b as u64)))
        .collect();

    // 10 random gate coordinates across the two layers
    let widths = [12usize, 8];
    for trial in 0..10 {
        let layer = (trial % 2) as usize;
        let j = rng.below(widths[layer] as u64) as usize;
        let gate = match &net.blocks[layer].gate {
            GateSlot::Stochastic(g) => g,
            _ => unreachable!(),
        };
        let (mu, s2) = (gate.mu[j], gate.sigma2(j));
        let alpha = mu * mu / s2;
        let (set_a, set_b) = &f_sets[layer];

        let column = |set: &Vec<Tensor>| -> Vec<f64> {
            set.iter()
                .flat_map(|t| (0..t.rows()).map(|r| {
                    let v = t.at2(r, j);
                    (v * v).max(PSI_FLOOR)
                }))
                .collect::<Vec<f64>>()
        };
        let f2_b = column(set_b);
        let mean_f2_b = f2_b.iter().sum::<f64>() / f2_b.len() as f64;
        let xi = vibnet::analysis::xi_star(mu, s2.sqrt(), mean_f2_b).unwrap();
        let psi_b = mean_f2_b.ln() - f2_b.iter().map(|v| v.ln()).sum::<f64>() / f2_b.len() as f64;
        let closed = 0.5 * ((1.0 + alpha).ln() + psi_b);

        // Monte-Carlo average of the per-sample Gaussian KL on set A
        let f2_a = column(set_a);
        let kl_samples: Vec<f64> = f2_a
            .iter()
            .map(|&f2| 0.5 * ((mu * mu + s2) * f2 / xi - (s2 * f2 / xi).ln() - 1.0))
            .collect();
        let mc = kl_samples.iter().sum::<f64>() / kl_samples.len() as f64;
        let var_a = kl_samples.iter().map(|v| (v - mc) * (v - mc)).sum::<f64>()
            / (kl_samples.len() - 1) as f64;
        let se_a = (var_a / kl_samples.len() as f64).sqrt();
        // psi-hat error, delta method on both of its expectations
        let nb = f2_b.len() as f64;
        let var_f2 = f2_b.iter().map(|v| (v - mean_f2_b) * (v - mean_f2_b)).sum::<f64>() / (nb - 1.0);
        let mean_ln = f2_b.iter().map(|v| v.ln()).sum::<f64>() / nb;
        let var_ln = f2_b.iter().map(|v| (v.ln() - mean_ln) * (v.ln() - mean_ln)).sum::<f64>()
            / (nb - 1.0);
        let se_psi = 0.5 * (var_f2 / (mean_f2_b * mean_f2_b * nb) + var_ln / nb).sqrt();
        let se = (se_a * se_a + se_psi * se_psi).sqrt();

        let diff = (mc - closed).abs();
        assert!(
            diff < 3.0 * se,
            "gate {trial} (layer {layer}, unit {j}): mc {mc:.6} vs closed {closed:.6}, diff {diff:.2e} > 3se {:.2e}",
            3.0 * se
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 1 took {secs:.1}s, budget 60s");
    println!("criterion 1 PASS: MC KL matches (1/2)[ln(1+a)+psi] for 10 gates within 3 SE ({secs:.1}s)");
}

// ---------------------------------------------------------------------------
// Criterion 2: rho equals the brute-force sigma-infimum plus a constant
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_penalty_equivalence_on_grid() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &omega in &[0.01, 0.1, 1.0, 10.0] {
        let c = rho(-3.0, omega).unwrap() - rho_oracle(-3.0, omega).unwrap();
        for i in 0..=60 {
            let mu = -3.0 + 0.1 * i as f64;
            let diff = (rho(mu, omega).unwrap() - (rho_oracle(mu, omega).unwrap() + c)).abs();
            worst = worst.max(diff);
            assert!(diff < 1e-4, "omega {omega} mu {mu}: diff {diff:.2e}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "criterion 2 took {secs:.1}s, budget 10s");
    println!("criterion 2 PASS: |rho - (inf_sigma + c)| <= {worst:.2e} over 61x4 grid ({secs:.2}s)");
}

// ---------------------------------------------------------------------------
// Criterion 3: full-network gradient checks
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_full_network_gradient_checks() {
    let start = Instant::now();
    let mut rng = RandomSource::new(466);
    let mlp = toy_mlp(&[4, 8, 6, 3], true, true, &mut rng);
    let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let labels = vec![0usize, 1, 2, 0, 1, 2];
    let worst_mlp = network_grad_worst_rel_err(&mlp, &x, &labels, 15);
    assert!(worst_mlp < 1e-4, "mlp worst rel err {worst_mlp:.2e}");

    let conv = Conv2dLayer {
        weight: Tensor::randn(&[3, 1, 3, 3], 0.6, &mut rng),
        bias: Tensor::zeros(&[3]),
        stride: 1,
        padding: 0,
    };
    let conv_net = Network {
        input_shape: vec![1, 6, 6],
        input_gate: None,
        input_select: None,
        blocks: vec![
            Block {
                layers: vec![
                    Layer::Conv2d(conv),
                    Layer::BatchNorm(BatchNormLayer::new(3)),
                    Layer::Relu,
                ],
                gate: GateSlot::Stochastic(VibGate::new(3, 0.7, Broadcast::PerChannel, &mut rng)),
                conv_side: Some(4),
            },
            Block {
                layers: vec![
                    Layer::Affine(AffineLayer {
                        weight: Tensor::randn(&[5, 48], 0.4, &mut rng),
                        bias: Tensor::zeros(&[5]),
                    }),
                    Layer::Relu,
                ],
                gate: GateSlot::Stochastic(VibGate::new(5, 0.3, Broadcast::PerNeuron, &mut rng)),
                conv_side: None,
            },
        ],
        head: AffineLayer {
            weight: Tensor::randn(&[2, 5], 0.5, &mut rng),
            bias: Tensor::zeros(&[2]),
        },
        likelihood: Likelihood::CategoricalSoftmax,
        count_input_gate_in_depth: false,
    };
    let xc = Tensor::randn(&[4, 1, 6, 6], 1.0, &mut rng);
    let worst_conv = network_grad_worst_rel_err(&conv_net, &xc, &[0, 1, 0, 1], 16);
    assert!(worst_conv < 1e-4, "conv worst rel err {worst_conv:.2e}");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 3 took {secs:.1}s, budget 60s");
    println!(
        "criterion 3 PASS: worst rel err mlp {worst_mlp:.2e}, conv {worst_conv:.2e} ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: Table-1 metric arithmetic
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_published_metric_rows_reproduced() {
    let dense = |inp, out| LayerArith::Dense { inp, out };
    let orig = vec![dense(784, 300), dense(300, 100), dense(100, 10)];
    let cases = [
        ([97usize, 71, 33], 3.59, 16.98),
        ([512, 114, 72], 25.28, 58.95),
    ];
    for ([i, h1, h2], rw_pub, rn_pub) in cases {
        let pruned = vec![dense(i, h1), dense(h1, h2), dense(h2, 10)];
        let rw = compute_r_w(&orig, &pruned).unwrap();
        let rn = compute_r_n(&[784, 300, 100], &[i, h1, h2]).unwrap();
        assert!((rw - rw_pub).abs() <= 0.01, "{i}-{h1}-{h2}: r_W {rw:.4} vs {rw_pub}");
        assert!((rn - rn_pub).abs() <= 0.01, "{i}-{h1}-{h2}: r_N {rn:.4} vs {rn_pub}");
    }
    println!("criterion 4 PASS: r_W/r_N for 97-71-33 and 512-114-72 within 0.01pp of published");
}

// ---------------------------------------------------------------------------
// Shared desk-scale MNIST run (criteria 5, 6, 9b and the alpha-gap check)
// ---------------------------------------------------------------------------

const DESK_GAMMA_PRIME: f64 = 3e-3;
const DESK_EPOCHS: usize = 25;
const DESK_SEED: u64 = 7;

struct MnistFixture {
    train: Dataset,
    test: Dataset,
    net: Network,
    log: TrainLog,
    control_log: TrainLog,
    train_secs: f64,
}

fn mnist_fixture() -> &'static MnistFixture {
    static RUN: OnceLock<MnistFixture> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = mnist_dir();
        let train = load_mnist(&dir, Split::Train).expect("MNIST train set (scripts/fetch_mnist.sh)");
        let test = load_mnist(&dir, Split::Test).expect("MNIST test set");
        let cfg = TrainConfig {
            gamma_prime: DESK_GAMMA_PRIME,
            gamma_rule: GammaRule::Uniform,
            optimizer: OptimizerKind::adam(1e-3),
            weight_decay: 0.0,
            epochs: DESK_EPOCHS,
            batch_size: 128,
            seed: DESK_SEED,
            eval_every: 0,
            epsilon_draw: EpsilonDraw::PerExample,
            shards: 2,
        };
        let tracker = MiTracker::new(&train, 1000, 5, 0x4d49).unwrap();
        let run = |gamma: f64| {
            let mut rng = RandomSource::new(DESK_SEED);
            let net = lenet_300_100(&mut rng);
            let cfg = TrainConfig { gamma_prime: gamma, ..cfg.clone() };
            let mut observe =
                |_e: usize, n: &Network| Some(tracker.measure(n).map(|m| m.value).unwrap_or(f64::NAN));
            train_full(net, &train, Some(&test), &cfg, Some(&mut observe)).unwrap()
        };
        let t0 = Instant::now();
        let (net, log) = run(DESK_GAMMA_PRIME);
        let train_secs = t0.elapsed().as_secs_f64();
        let (_, control_log) = run(0.0);
        MnistFixture { train, test, net, log, control_log, train_secs }
    })
}

#[test]
fn criterion_05_desk_scale_compression_run() {
    let fx = mnist_fixture();
    const _: () = assert!(DESK_EPOCHS <= 60);
    assert!(fx.train_secs < 3600.0, "training took {:.0}s, budget 3600s", fx.train_secs);
    let (pruned, mut report) = prune(&fx.net, DEFAULT_TAU).unwrap();
    let err_before = fx.net.classification_error(&fx.test.images, &fx.test.labels).unwrap();
    let err_pruned = pruned.classification_error(&fx.test.images, &fx.test.labels).unwrap();
    report.err_before = Some(err_before);
    report.err_after = Some(err_pruned);
    assert!(err_pruned <= 0.025, "pruned test error {err_pruned:.4} > 2.5%");
    assert!(report.r_w <= 15.0, "r_W {:.2}% > 15%", report.r_w);
    assert!(report.r_n <= 35.0, "r_N {:.2}% > 35%", report.r_n);
    // fine-tuning must not increase the error
    let ft_cfg = TrainConfig {
        gamma_prime: 0.0,
        optimizer: OptimizerKind::adam(1e-4),
        epochs: 2,
        batch_size: 128,
        seed: DESK_SEED ^ 0xf1,
        eval_every: 0,
        shards: 2,
        ..TrainConfig::default()
    };
    let tuned = fine_tune(pruned, &fx.train, &ft_cfg).unwrap();
    let err_tuned = tuned.classification_error(&fx.test.images, &fx.test.labels).unwrap();
    assert!(
        err_tuned <= err_pruned,
        "fine-tuning increased error: {err_pruned:.4} -> {err_tuned:.4}"
    );
    println!(
        "criterion 5 PASS: {} epochs in {:.0}s; arch {}, err {:.2}% -> pruned {:.2}% -> tuned {:.2}%, r_W {:.2}%, r_N {:.2}%",
        DESK_EPOCHS,
        fx.train_secs,
        report.arch_string(),
        100.0 * err_before,
        100.0 * err_pruned,
        100.0 * err_tuned,
        report.r_w,
        report.r_n
    );
}

#[test]
fn criterion_06_mutual_information_trend() {
    let fx = mnist_fixture();
    let mi: Vec<f64> = fx.log.rows.iter().map(|r| r.mi.expect("mi tracked")).collect();
    let (peak_idx, peak) = mi
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, &v)| (i, v))
        .unwrap();
    let last = *mi.last().unwrap();
    assert!(
        peak_idx < mi.len().div_ceil(3),
        "MI peak at epoch {peak_idx} of {}, not in the first third (curve {mi:?})",
        mi.len()
    );
    assert!(
        last < 0.8 * peak,
        "final MI {last:.3} >= 0.8 x peak {peak:.3} (curve {mi:?})"
    );
    let control: Vec<f64> =
        fx.control_log.rows.iter().map(|r| r.mi.expect("mi tracked")).collect();
    let cmax = control.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let clast = *control.last().unwrap();
    assert!(
        clast >= 0.9 * cmax,
        "control final MI {clast:.3} < 0.9 x running max {cmax:.3} (curve {control:?})"
    );
    println!(
        "criterion 6 PASS: MI peak {:.3} at epoch {peak_idx}, final {:.3} ({:.2}x); control final {:.3} ({:.2}x of max)",
        peak, last, last / peak, clast, clast / cmax
    );
}

#[test]
fn alpha_distribution_is_bimodal_at_convergence() {
    // trainer invariant: at most 2% of units inside the decade [tau, 10 tau]
    let fx = mnist_fixture();
    let mut in_gap = 0usize;
    let mut total = 0usize;
    for alphas in fx.net.alphas() {
        for a in alphas {
            total += 1;
            if (DEFAULT_TAU..10.0 * DEFAULT_TAU).contains(&a) {
                in_gap += 1;
            }
        }
    }
    let frac = in_gap as f64 / total as f64;
    assert!(frac <= 0.02, "{in_gap}/{total} alphas inside [tau, 10tau]");
    println!(
        "alpha separation PASS: {in_gap}/{total} units ({:.2}%) inside [tau, 10tau]",
        100.0 * frac
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: quadratic-surrogate sparsity bound
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_surrogate_rank_bound_over_restarts() {
    let start = Instant::now();
    let mut worst = 0usize;
    for seed in 0..5u64 {
        let p = SurrogateProblem::random(30, 5, 0.1, 1000 + seed);
        // diag(A^T A) strictly positive
        let ata = p.ata();
        for j in 0..30 {
            assert!(ata.data()[j * 30 + j] > 0.0);
        }
        for restart in 0..20u64 {
            let sol = surrogate_minimize(&p, restart).unwrap();
            assert!(
                sol.nnz <= 6,
                "problem {seed} restart {restart}: nnz {} > rank+1 = 6",
                sol.nnz
            );
            worst = worst.max(sol.nnz);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 7 took {secs:.0}s, budget 300s");
    println!("criterion 7 PASS: nnz <= 6 over 5 problems x 20 restarts (worst {worst}, {secs:.0}s)");
}

// ---------------------------------------------------------------------------
// Criterion 8: clamped downstream column forces alpha to zero
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_zero_downstream_column_kills_alpha() {
    let data = synthetic_blobs(600, 4, 6, 3.0, 21).unwrap();
    let mut rng = RandomSource::new(22);
    let net = toy_mlp(&[6, 10, 4], false, false, &mut rng);
    let clamped_unit = 5usize;
    let cfg = TrainConfig {
        gamma_prime: 2e-3,
        optimizer: OptimizerKind::adam(1e-2),
        epochs: 0,
        batch_size: 64,
        seed: 23,
        eval_every: 0,
        shards: 1,
        ..TrainConfig::default()
    };
    let zero_column = |net: &mut Network| {
        let (out, inp) = (net.head.weight.shape()[0], net.head.weight.shape()[1]);
        for o in 0..out {
            net.head.weight.data_mut()[o * inp + clamped_unit] = 0.0;
        }
    };
    let mut trainer = {
        let mut net = net;
        zero_column(&mut net);
        StepTrainer::new(net, cfg)
    };
    let mut perm_rng = RandomSource::new(31);
    for _ in 0..2000 {
        let idx: Vec<usize> = (0..64).map(|_| perm_rng.below(600) as usize).collect();
        let x = data.images.gather_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        trainer.step(&x, &y).unwrap();
        // the experiment pins the column at zero throughout training
        zero_column(trainer.network_mut());
    }
    let alphas = trainer.network().alphas()[0].clone();
    let clamped_alpha = alphas[clamped_unit];
    let mut others: Vec<f64> =
        alphas.iter().enumerate().filter(|(i, _)| *i != clamped_unit).map(|(_, &a)| a).collect();
    others.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = others[others.len() / 2];
    assert!(clamped_alpha < 1e-3, "clamped unit alpha {clamped_alpha:.2e} >= 1e-3");
    assert!(median > 1e-1, "median unclamped alpha {median:.2e} <= 1e-1");
    println!(
        "criterion 8 PASS: clamped-column alpha {clamped_alpha:.2e} < 1e-3, median unclamped {median:.2e} > 0.1"
    );
}


// ---------------------------------------------------------------------------
// Criterion 9: pruning exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_pruning_exactness() {
    // exact-zero mu removal changes nothing, bit for bit
    let mut rng = RandomSource::new(33);
    let mut net = toy_mlp(&[6, 10, 5, 4], true, false, &mut rng);
    if let Some(GateSlot::Stochastic(g)) = net.input_gate.as_mut() {
        g.mu[0] = 0.0;
        g.mu[3] = 0.0;
    }
    if let GateSlot::Stochastic(g) = &mut net.blocks[0].gate {
        g.mu[7] = 0.0;
    }
    let (pruned, _) = prune(&net, 1e-30).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let a = net.eval_forward(&x).unwrap();
        let b = pruned.eval_forward(&x).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    assert_eq!(worst, 0.0, "zero-mu removal must be exact");

    // near-zero alpha removal barely moves the MNIST test error
    let fx = mnist_fixture();
    let err_full = fx.net.classification_error(&fx.test.images, &fx.test.labels).unwrap();
    let (pruned, _) = prune(&fx.net, 1e-6).unwrap();
    let err_pruned = pruned.classification_error(&fx.test.images, &fx.test.labels).unwrap();
    let delta_pp = (err_pruned - err_full).abs() * 100.0;
    assert!(delta_pp <= 0.05, "tau=1e-6 pruning moved error by {delta_pp:.3}pp");
    println!(
        "criterion 9 PASS: exact-zero removal diff 0.0; tau=1e-6 error shift {delta_pp:.3}pp"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: KSG estimator calibration
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_ksg_estimator_calibration() {
    let make = |n: usize, rho: f64, seed: u64| {
        let mut rng = RandomSource::new(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = rng.standard_normal();
            let z2 = rng.standard_normal();
            xs.push(z1);
            ys.push(rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        }
        (
            Tensor::from_vec(&[n, 1], xs).unwrap(),
            Tensor::from_vec(&[n, 1], ys).unwrap(),
        )
    };
    let (x, y) = make(5000, 0.9, 41);
    let mi = ksg_mutual_information(&x, &y, 5).unwrap().value;
    let closed = -0.5 * (1.0f64 - 0.81).ln();
    assert!((mi - closed).abs() < 0.1, "correlated: {mi:.4} vs {closed:.4}");

    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let (x, y) = make(2000, 0.0, 50 + seed);
        let mi0 = ksg_mutual_information(&x, &y, 5).unwrap().value;
        worst = worst.max(mi0.abs());
    }
    assert!(worst < 0.05, "independent case |mi| {worst:.4} >= 0.05");
    println!(
        "criterion 10 PASS: rho=0.9 estimate {mi:.4} (closed {closed:.4}); independent |mi| <= {worst:.4}"
    );
}
