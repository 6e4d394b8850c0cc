//! Plain-text `key = value` run configuration with `[section]` headers.
//! Parsing is strict: an unknown section or key is an error naming it, so
//! hyperparameter typos cannot pass silently.

use std::path::PathBuf;

use crate::error::{Result, VibError};
use crate::network::{EpsilonDraw, Network};
use crate::pruner::DEFAULT_TAU;
use crate::rng::RandomSource;
use crate::trainer::{GammaRule, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchSpec {
    Lenet300_100,
    Lenet5,
    ToyMlp(Vec<usize>),
}

impl ArchSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lenet_300_100" => Ok(ArchSpec::Lenet300_100),
            "lenet_5" => Ok(ArchSpec::Lenet5),
            other => {
                if let Some(inner) = other.strip_prefix("toy_mlp(").and_then(|r| r.strip_suffix(')')) {
                    let dims: Result<Vec<usize>> = inner
                        .split(',')
                        .map(|d| {
                            d.trim().parse::<usize>().map_err(|_| VibError::Config {
                                key: "run.arch".into(),
                                message: format!("bad width '{d}'"),
                            })
                        })
                        .collect();
                    let dims = dims?;
                    if dims.len() < 3 {
                        return Err(VibError::Config {
                            key: "run.arch".into(),
                            message: "toy_mlp needs at least [input, hidden, out]".into(),
                        });
                    }
                    Ok(ArchSpec::ToyMlp(dims))
                } else {
                    Err(VibError::Config {
                        key: "run.arch".into(),
                        message: format!("unknown architecture '{other}'"),
                    })
                }
            }
        }
    }

    pub fn build(&self, rng: &mut RandomSource) -> Network {
        match self {
            ArchSpec::Lenet300_100 => crate::network::lenet_300_100(rng),
            ArchSpec::Lenet5 => crate::network::lenet_5(rng),
            ArchSpec::ToyMlp(dims) => crate::network::toy_mlp(dims, false, false, rng),
        }
    }

    /// Per-example input shape the architecture expects.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ArchSpec::Lenet300_100 => vec![784],
            ArchSpec::Lenet5 => vec![1, 28, 28],
            ArchSpec::ToyMlp(dims) => vec![dims[0]],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchSpec,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub tau: f64,
    pub mi_track: bool,
    pub mi_subset: usize,
    pub mi_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            arch: ArchSpec::Lenet300_100,
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            train: TrainConfig::default(),
            tau: DEFAULT_TAU,
            mi_track: false,
            mi_subset: 1000,
            mi_k: 5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| VibError::Config {
        key: key.into(),
        message: format!("cannot parse value '{value}'"),
    })
}

/// Parse a config file's text. `#` starts a comment; blank lines ignored.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut learning_rate: Option<f64> = None;
    let mut momentum: Option<f64> = None;
    let mut optimizer_name: Option<String> = None;
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            section = name.trim().to_string();
            if !matches!(section.as_str(), "run" | "train" | "prune" | "analysis") {
                return Err(VibError::Config {
                    key: section.clone(),
                    message: format!("unknown section at line {}", lineno + 1),
                });
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(VibError::Config {
            key: format!("line {}", lineno + 1),
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let qual = format!("{section}.{key}");
        match qual.as_str() {
            "run.seed" => cfg.seed = parse_num(&qual, value)?,
            "run.arch" => cfg.arch = ArchSpec::parse(value)?,
            "run.data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
            "run.out_dir" => cfg.out_dir = PathBuf::from(value),
            "train.gamma_prime" => cfg.train.gamma_prime = parse_num(&qual, value)?,
            "train.gamma_rule" => {
                cfg.train.gamma_rule = match value {
                    "uniform" => GammaRule::Uniform,
                    "inverse_side_length" => GammaRule::InverseSideLength,
                    other => {
                        return Err(VibError::Config {
                            key: qual,
                            message: format!("unknown gamma rule '{other}'"),
                        })
                    }
                }
            }
            "train.optimizer" => {
                if !matches!(value, "adam" | "sgd_momentum") {
                    return Err(VibError::Config {
                        key: qual,
                        message: format!("unknown optimizer '{value}'"),
                    });
                }
                optimizer_name = Some(value.to_string());
            }
            "train.learning_rate" => learning_rate = Some(parse_num(&qual, value)?),
            "train.momentum" => momentum = Some(parse_num(&qual, value)?),
            "train.weight_decay" => cfg.train.weight_decay = parse_num(&qual, value)?,
            "train.epochs" => cfg.train.epochs = parse_num(&qual, value)?,
            "train.batch_size" => cfg.train.batch_size = parse_num(&qual, value)?,
            "train.eval_every" => cfg.train.eval_every = parse_num(&qual, value)?,
            "train.epsilon_draw" => {
                cfg.train.epsilon_draw = match value {
                    "per_example" => EpsilonDraw::PerExample,
                    "per_batch" => EpsilonDraw::PerBatch,
                    other => {
                        return Err(VibError::Config {
                            key: qual,
                            message: format!("unknown epsilon draw '{other}'"),
                        })
                    }
                }
            }
            "train.shards" => cfg.train.shards = parse_num(&qual, value)?,
            "train.lr_step_epoch" => cfg.train.lr_step_epoch = parse_num(&qual, value)?,
            "train.lr_step_factor" => cfg.train.lr_step_factor = parse_num(&qual, value)?,
            "prune.tau" => cfg.tau = parse_num(&qual, value)?,
            "analysis.mi_track" => {
                cfg.mi_track = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(VibError::Config {
                            key: qual,
                            message: format!("expected true/false, got '{other}'"),
                        })
                    }
                }
            }
            "analysis.mi_subset" => cfg.mi_subset = parse_num(&qual, value)?,
            "analysis.mi_k" => cfg.mi_k = parse_num(&qual, value)?,
            _ => {
                return Err(VibError::Config {
                    key: qual,
                    message: format!("unknown key at line {}", lineno + 1),
                })
            }
        }
    }
    // assemble the optimizer from its pieces
    let name = optimizer_name.unwrap_or_else(|| "adam".into());
    cfg.train.optimizer = match name.as_str() {
        "adam" => OptimizerKind::adam(learning_rate.unwrap_or(1e-3)),
        "sgd_momentum" => OptimizerKind::SgdMomentum {
            learning_rate: learning_rate.unwrap_or(1e-2),
            momentum: momentum.unwrap_or(0.9),
        },
        _ => unreachable!("validated above"),
    };
    cfg.train.seed = cfg.seed;
    if cfg.tau <= 0.0 {
        return Err(VibError::Config {
            key: "prune.tau".into(),
            message: format!("tau must be positive, got {}", cfg.tau),
        });
    }
    Ok(cfg)
}
