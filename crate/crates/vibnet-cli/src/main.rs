//! Command-line front end: train / prune / eval / analyze.
//!
//! Exit codes: 0 success, 2 bad config key, 3 missing file, 4 degenerate
//! pruning, 1 anything else. Errors print one machine-parsable line to
//! stderr: `error: <category>: <detail>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use vibnet::checkpoint::{self, Checkpoint};
use vibnet::config::{parse_config, ArchSpec, RunConfig};
use vibnet::data::{load_mnist, synthetic_blobs, Dataset, Split};
use vibnet::error::VibError;
use vibnet::mi::{ksg_mutual_information, MiTracker};
use vibnet::network::Network;
use vibnet::pruner::{self, prune, PruneReport};
use vibnet::rng::RandomSource;
use vibnet::trainer::{fine_tune, train_full, TrainConfig};
use vibnet::Tensor;

const USAGE: &str = "\
vibnet - variational information-bottleneck network compression

USAGE:
  vibnet train   --config <file> [--data-dir <dir>] [--out <dir>]
  vibnet prune   --checkpoint <file> [--tau <t>] [--data-dir <dir>]
                 [--fine-tune-epochs <n>] [--out <dir>]
  vibnet eval    --checkpoint <file> --data-dir <dir> [--split train|test]
  vibnet analyze (--penalty-grid | --surrogate | --mi-demo) [--out <dir>]

The dataset directory may also come from the DATA_DIR environment
variable. scripts/fetch_mnist.sh downloads MNIST into ./data/mnist.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = match &e {
                VibError::Config { .. } => ("config", 2),
                VibError::Io { .. } => ("missing-file", 3),
                VibError::DegenerateLayer { .. } => ("degenerate-prune", 4),
                VibError::Diverged { .. } => ("diverged", 1),
                _ => ("failure", 1),
            };
            eprintln!("error: {category}: {e}");
            ExitCode::from(code)
        }
    }
}

struct Flags {
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    tau: Option<f64>,
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    split: Split,
    fine_tune_epochs: usize,
    penalty_grid: bool,
    surrogate: bool,
    mi_demo: bool,
}

fn parse_flags(args: &[String]) -> Result<Flags, VibError> {
    let mut f = Flags {
        config: None,
        checkpoint: None,
        tau: None,
        out: None,
        data_dir: None,
        split: Split::Test,
        fine_tune_epochs: 0,
        penalty_grid: false,
        surrogate: false,
        mi_demo: false,
    };
    let value = |args: &[String], i: &mut usize, flag: &str| -> Result<String, VibError> {
        *i += 1;
        args.get(*i).cloned().ok_or(VibError::Config {
            key: flag.into(),
            message: "flag requires a value".into(),
        })
    };
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => f.config = Some(PathBuf::from(value(args, &mut i, "--config")?)),
            "--checkpoint" => {
                f.checkpoint = Some(PathBuf::from(value(args, &mut i, "--checkpoint")?))
            }
            "--tau" => {
                let v = value(args, &mut i, "--tau")?;
                f.tau = Some(v.parse().map_err(|_| VibError::Config {
                    key: "--tau".into(),
                    message: format!("bad number '{v}'"),
                })?)
            }
            "--out" => f.out = Some(PathBuf::from(value(args, &mut i, "--out")?)),
            "--data-dir" => f.data_dir = Some(PathBuf::from(value(args, &mut i, "--data-dir")?)),
            "--split" => {
                f.split = match value(args, &mut i, "--split")?.as_str() {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(VibError::Config {
                            key: "--split".into(),
                            message: format!("expected train|test, got '{other}'"),
                        })
                    }
                }
            }
            "--fine-tune-epochs" => {
                let v = value(args, &mut i, "--fine-tune-epochs")?;
                f.fine_tune_epochs = v.parse().map_err(|_| VibError::Config {
                    key: "--fine-tune-epochs".into(),
                    message: format!("bad count '{v}'"),
                })?
            }
            "--penalty-grid" => f.penalty_grid = true,
            "--surrogate" => f.surrogate = true,
            "--mi-demo" => f.mi_demo = true,
            other => {
                return Err(VibError::Config { key: other.into(), message: "unknown flag".into() })
            }
        }
        i += 1;
    }
    Ok(f)
}

fn run(args: &[String]) -> Result<(), VibError> {
    let Some(cmd) = args.first() else {
        println!("{USAGE}");
        return Ok(());
    };
    let flags = parse_flags(&args[1..])?;
    match cmd.as_str() {
        "train" => cmd_train(flags),
        "prune" => cmd_prune(flags),
        "eval" => cmd_eval(flags),
        "analyze" => cmd_analyze(flags),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(VibError::Config {
            key: other.into(),
            message: "unknown subcommand (expected train|prune|eval|analyze)".into(),
        }),
    }
}

fn resolve_data_dir(flag: &Option<PathBuf>, cfg: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone()
        .or_else(|| cfg.clone())
        .or_else(|| std::env::var("DATA_DIR").ok().map(PathBuf::from))
}

fn load_split(dir: &Option<PathBuf>, arch: &ArchSpec, split: Split) -> Result<Dataset, VibError> {
    match arch {
        ArchSpec::Lenet300_100 | ArchSpec::Lenet5 => {
            let dir = dir.as_ref().ok_or(VibError::Io {
                path: "<data dir>".into(),
                message: "no dataset directory (use --data-dir, run.data_dir, or DATA_DIR)".into(),
            })?;
            load_mnist(dir, split)
        }
        // synthetic stand-in sized to the toy architecture
        ArchSpec::ToyMlp(dims) => synthetic_blobs(2000, dims[dims.len() - 1], dims[0], 5.0, 7),
    }
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, VibError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| VibError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)
        .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(path)
}

fn read_config(flags: &Flags) -> Result<RunConfig, VibError> {
    let path = flags.config.as_ref().ok_or(VibError::Config {
        key: "--config".into(),
        message: "train requires --config".into(),
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

/// Reshape flat dataset rows to the architecture's input layout.
fn shape_images(images: &Tensor, arch: &ArchSpec) -> Result<Tensor, VibError> {
    let mut shape = vec![images.rows()];
    shape.extend(arch.input_shape());
    images.clone().reshaped(&shape)
}

fn cmd_train(flags: Flags) -> Result<(), VibError> {
    let cfg = read_config(&flags)?;
    let out_dir = flags.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let data_dir = resolve_data_dir(&flags.data_dir, &cfg.data_dir);
    let train_data = {
        let mut d = load_split(&data_dir, &cfg.arch, Split::Train)?;
        d.images = shape_images(&d.images, &cfg.arch)?;
        d
    };
    let test_data = match &cfg.arch {
        ArchSpec::ToyMlp(_) => None,
        _ => {
            let mut d = load_split(&data_dir, &cfg.arch, Split::Test)?;
            d.images = shape_images(&d.images, &cfg.arch)?;
            Some(d)
        }
    };
    let mut rng = RandomSource::new(cfg.seed);
    let net = cfg.arch.build(&mut rng);
    let tracker = if cfg.mi_track {
        // the tracker sees flat rows regardless of architecture
        let flat = Dataset {
            images: train_data
                .images
                .clone()
                .reshaped(&[train_data.len(), train_data.images.row_len()])?,
            labels: train_data.labels.clone(),
            split: train_data.split,
            norm: train_data.norm,
            num_classes: train_data.num_classes,
        };
        Some(MiTracker::new(&flat, cfg.mi_subset, cfg.mi_k, cfg.seed ^ 0x4d49)?)
    } else {
        None
    };
    println!("seed: {}", cfg.seed);
    let cadence = cfg.train.eval_every;
    let mut observe = |epoch: usize, net: &Network| -> Option<f64> {
        // checkpoint at the eval cadence so long runs are resumable
        if cadence > 0 && (epoch + 1) % cadence == 0 {
            let snap = checkpoint::from_network(net, cfg.seed, epoch as u32 + 1);
            let _ = write_out(&out_dir, "model.vibn", &snap.to_bytes());
        }
        tracker.as_ref().map(|t| t.measure(net).map(|e| e.value).unwrap_or(f64::NAN))
    };
    let (net, log) =
        train_full(net, &train_data, test_data.as_ref(), &cfg.train, Some(&mut observe))?;
    let ckpt = checkpoint::from_network(&net, cfg.seed, cfg.train.epochs as u32);
    let ckpt_path = write_out(&out_dir, "model.vibn", &ckpt.to_bytes())?;
    let log_path = write_out(&out_dir, "trainlog.csv", log.to_csv().as_bytes())?;
    if let Some(row) = log.rows.last() {
        println!(
            "trained {} epochs: loss {:.4}, test error {}",
            cfg.train.epochs,
            row.loss,
            row.test_error.map(|e| format!("{:.4}", e)).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("train log:  {}", log_path.display());
    Ok(())
}

/// Guess the stock architecture from a checkpoint's input geometry so
/// eval and prune can load the matching dataset and baselines.
fn arch_for_data(net: &Network) -> ArchSpec {
    match net.input_shape.as_slice() {
        [1, 28, 28] => ArchSpec::Lenet5,
        [784] => ArchSpec::Lenet300_100,
        [d] => ArchSpec::ToyMlp(vec![*d, 1, net.head.out_dim()]),
        _ => ArchSpec::Lenet300_100,
    }
}

fn mnist_test(dir: &Option<PathBuf>, arch: &ArchSpec) -> Result<Dataset, VibError> {
    let mut d = load_split(dir, arch, Split::Test)?;
    d.images = shape_images(&d.images, arch)?;
    Ok(d)
}

fn cmd_prune(flags: Flags) -> Result<(), VibError> {
    let ckpt_path = flags.checkpoint.as_ref().ok_or(VibError::Config {
        key: "--checkpoint".into(),
        message: "prune requires --checkpoint".into(),
    })?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let net = checkpoint::to_network(&ckpt)?;
    let tau = flags.tau.unwrap_or(pruner::DEFAULT_TAU);
    let (mut pruned, mut report) = prune(&net, tau)?;
    let data_dir = resolve_data_dir(&flags.data_dir, &None);
    let arch = arch_for_data(&net);
    let is_mnist = matches!(arch, ArchSpec::Lenet300_100 | ArchSpec::Lenet5);
    if let (Some(_), true) = (&data_dir, is_mnist) {
        let d = mnist_test(&data_dir, &arch)?;
        report.err_before = Some(net.classification_error(&d.images, &d.labels)?);
        report.err_after = Some(pruned.classification_error(&d.images, &d.labels)?);
    }
    let out_dir = flags
        .out
        .clone()
        .or_else(|| ckpt_path.parent().map(|p| p.to_path_buf()))
        .unwrap_or_else(|| PathBuf::from("."));
    if flags.fine_tune_epochs > 0 {
        if !is_mnist {
            return Err(VibError::Config {
                key: "--fine-tune-epochs".into(),
                message: "fine-tuning is only wired to MNIST architectures".into(),
            });
        }
        let mut train = load_split(&data_dir, &arch, Split::Train)?;
        train.images = shape_images(&train.images, &arch)?;
        let ft_cfg = TrainConfig {
            epochs: flags.fine_tune_epochs,
            seed: ckpt.seed ^ 0xf17e,
            gamma_prime: 0.0,
            ..TrainConfig::default()
        };
        pruned = fine_tune(pruned, &train, &ft_cfg)?;
        if report.err_after.is_some() {
            let d = mnist_test(&data_dir, &arch)?;
            report.err_after = Some(pruned.classification_error(&d.images, &d.labels)?);
        }
    }
    let pruned_ckpt = checkpoint::from_network(&pruned, ckpt.seed, ckpt.epoch);
    let p1 = write_out(&out_dir, "pruned.vibn", &pruned_ckpt.to_bytes())?;
    let csv = format!("{}\n{}\n", PruneReport::csv_header(), report.csv_row());
    let p2 = write_out(&out_dir, "prune_report.csv", csv.as_bytes())?;
    write_out(&out_dir, "prune_report.txt", report.text_report().as_bytes())?;
    print!("{}", report.text_report());
    println!("pruned checkpoint: {}", p1.display());
    println!("report: {}", p2.display());
    Ok(())
}

fn cmd_eval(flags: Flags) -> Result<(), VibError> {
    let ckpt_path = flags.checkpoint.as_ref().ok_or(VibError::Config {
        key: "--checkpoint".into(),
        message: "eval requires --checkpoint".into(),
    })?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let net = checkpoint::to_network(&ckpt)?;
    let arch = arch_for_data(&net);
    let data_dir = resolve_data_dir(&flags.data_dir, &None);
    let mut data = load_split(&data_dir, &arch, flags.split)?;
    data.images = shape_images(&data.images, &arch)?;
    let err = net.classification_error(&data.images, &data.labels)?;
    println!("{} error: {:.4} ({:.2}%)", data.split.name(), err, 100.0 * err);
    // compression metrics when the checkpoint is a pruned stock network
    let stock_widths = match arch {
        ArchSpec::Lenet300_100 => Some(vec![784, 300, 100]),
        ArchSpec::Lenet5 => Some(vec![20, 50, 500]),
        ArchSpec::ToyMlp(_) => None,
    };
    if let Some(stock_widths) = stock_widths {
        if net.gated_widths() != stock_widths || net.input_select.is_some() {
            let mut rng = RandomSource::new(0);
            let stock = match arch {
                ArchSpec::Lenet300_100 => vibnet::network::lenet_300_100(&mut rng),
                _ => vibnet::network::lenet_5(&mut rng),
            };
            let r_w =
                pruner::compute_r_w(&pruner::arch_arith(&stock)?, &pruner::arch_arith(&net)?)?;
            let r_n = pruner::compute_r_n(
                &pruner::gated_feature_sizes(&stock),
                &pruner::gated_feature_sizes(&net),
            )?;
            let flops = pruner::compute_flops(&pruner::arch_arith(&net)?);
            println!("r_W = {r_w:.2}%  FLOPs = {flops}  r_N = {r_n:.2}%");
        }
    }
    Ok(())
}

fn cmd_analyze(flags: Flags) -> Result<(), VibError> {
    let out_dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("analysis"));
    let mut ran = false;
    if flags.penalty_grid {
        ran = true;
        let mut csv = String::from("mu,omega,rho,oracle_plus_constant,diff\n");
        for &omega in &[0.01_f64, 0.1, 1.0, 10.0] {
            let c = (2.0 * omega).ln(); // rho(0; omega)
            for i in 0..=60 {
                let mu = -3.0 + 0.1 * i as f64;
                let direct = vibnet::analysis::rho(mu, omega)?;
                let oracle = vibnet::analysis::rho_oracle(mu, omega)? + c;
                csv.push_str(&format!("{mu},{omega},{direct},{oracle},{}\n", direct - oracle));
            }
        }
        let p = write_out(&out_dir, "penalty_grid.csv", csv.as_bytes())?;
        println!("penalty grid: {}", p.display());
    }
    if flags.surrogate {
        ran = true;
        let mut csv = String::from("problem_seed,restart,nnz,rank_bound,objective,converged\n");
        for seed in 0..5u64 {
            let p = vibnet::analysis::SurrogateProblem::random(30, 5, 0.1, 1000 + seed);
            for restart in 0..20u64 {
                let sol = vibnet::analysis::surrogate_minimize(&p, restart)?;
                csv.push_str(&format!(
                    "{seed},{restart},{},6,{},{}\n",
                    sol.nnz, sol.objective, sol.converged
                ));
            }
        }
        let p = write_out(&out_dir, "surrogate_sparsity.csv", csv.as_bytes())?;
        println!("surrogate experiment: {}", p.display());
    }
    if flags.mi_demo {
        ran = true;
        let mut csv = String::from("rho,n,k,mi_estimate,mi_closed_form\n");
        let n = 5000;
        let k = 5;
        for &r in &[0.0_f64, 0.3, 0.6, 0.9] {
            let mut rng = RandomSource::new(11);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let z1 = rng.standard_normal();
                let z2 = rng.standard_normal();
                xs.push(z1);
                ys.push(r * z1 + (1.0 - r * r).sqrt() * z2);
            }
            let x = Tensor::from_vec(&[n, 1], xs).unwrap();
            let y = Tensor::from_vec(&[n, 1], ys).unwrap();
            let mi = ksg_mutual_information(&x, &y, k)?;
            let closed = -0.5 * (1.0_f64 - r * r).ln();
            csv.push_str(&format!("{r},{n},{k},{},{closed}\n", mi.value));
        }
        let p = write_out(&out_dir, "mi_demo.csv", csv.as_bytes())?;
        println!("mi demo: {}", p.display());
    }
    if !ran {
        return Err(VibError::Config {
            key: "analyze".into(),
            message: "pick at least one of --penalty-grid, --surrogate, --mi-demo".into(),
        });
    }
    Ok(())
}
