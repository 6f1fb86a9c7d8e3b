//! Run configuration: profile defaults with a TOML file layered on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use nilab_core::estimators::EstimatorConfig;
use nilab_core::lmshape::{EfficiencyInterval, DEFAULT_DEPTHS};
use nilab_core::lmtrain::TrainBudget;
use nilab_core::toymodel::{ToyTrainConfig, REFERENCE_SIZES};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

impl FromStr for Profile {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => bail!("unknown profile {other:?} (expected desk or full)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub double_descent: DoubleDescentConfig,
    pub lm_sweep: LmSweepConfig,
    pub ext_compare: ExtCompareConfig,
    pub agop_check: AgopCheckConfig,
    pub verify: VerifyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleDescentConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub heatmap_sizes: Vec<usize>,
    pub train: ToyTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSweepConfig {
    pub budgets: Vec<usize>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub context: usize,
    pub vocab: usize,
    pub corpus: CorpusConfig,
    pub recipe: LmRecipe,
    pub estimator: EstimatorConfig,
    pub projection_dim: usize,
    pub projection_seed: u64,
    pub metric_seed: u64,
    /// Skip training and only write the solved shapes.
    pub shapes_only: bool,
}

/// Corpus files, or a generated stand-in when `train` is unset and `synthetic_bytes > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub synthetic_bytes: usize,
    pub synthetic_seed: u64,
}

/// Optimizer and step-budget recipe shared by every shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmRecipe {
    pub bytes_per_param: u64,
    pub min_steps: u64,
    pub max_step_factor: f64,
    pub batch: usize,
    pub eval_every: u64,
    pub patience: usize,
    pub warmup: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// 0 evaluates every window of a split.
    pub eval_windows_cap: usize,
}

impl Default for LmRecipe {
    fn default() -> Self {
        let b = TrainBudget::for_budget(1, 256);
        LmRecipe {
            bytes_per_param: 60,
            min_steps: 200,
            max_step_factor: 1.5,
            batch: b.batch,
            eval_every: b.eval_every,
            patience: b.patience,
            warmup: b.warmup,
            lr: b.lr,
            weight_decay: b.weight_decay,
            clip_norm: b.clip_norm,
            eval_windows_cap: 0,
        }
    }
}

impl LmRecipe {
    pub fn budget(&self, target_n: usize, context: usize) -> TrainBudget {
        let bytes = self.bytes_per_param * target_n as u64;
        let base_steps = (bytes / context as u64 / self.batch as u64).max(self.min_steps);
        TrainBudget {
            bytes,
            base_steps,
            max_steps: (base_steps as f64 * self.max_step_factor).floor() as u64,
            batch: self.batch,
            eval_every: self.eval_every,
            patience: self.patience,
            warmup: self.warmup,
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            eval_windows_cap: (self.eval_windows_cap > 0).then_some(self.eval_windows_cap),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtCompareConfig {
    /// Model table CSV; the bundled one when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub interval_lo: f64,
    pub interval_hi: f64,
}

impl ExtCompareConfig {
    pub fn interval(&self) -> Result<EfficiencyInterval> {
        Ok(EfficiencyInterval::new(self.interval_lo, self.interval_hi)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgopCheckConfig {
    pub alpha: f64,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Also run the training criteria (hours of CPU).
    pub heavy: bool,
    /// Directory of fixture tables to check instead of the bundled copies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    pub gradient_points: usize,
    pub tolerances: Tolerances,
}

/// Pass thresholds of the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub metric: f64,
    pub gradient_rel: f64,
    pub closed_form: f64,
    pub jvp_factor: f64,
    pub delta_alpha: f64,
    pub layer_gap: f64,
    pub group_r: f64,
    pub fixture_r: f64,
    pub toy_r: f64,
    pub bump_factor: f64,
    pub ratio_floor: f64,
    pub dd_pearson: f64,
    pub lm_loss_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            metric: 1e-12,
            gradient_rel: 1e-4,
            closed_form: 1e-10,
            jvp_factor: 3.0,
            delta_alpha: 1e-4,
            layer_gap: 1e-3,
            group_r: 0.03,
            fixture_r: 0.01,
            toy_r: 0.05,
            bump_factor: 1.2,
            ratio_floor: 0.85,
            dd_pearson: 0.8,
            lm_loss_factor: 0.7,
        }
    }
}

pub const DESK_SIZES: [usize; 8] = [3, 30, 100, 200, 500, 1000, 2714, 10278];
pub const FULL_BUDGETS: [usize; 11] = [
    300_000, 500_000, 800_000, 1_000_000, 1_300_000, 1_600_000, 2_000_000, 2_300_000, 2_700_000, 3_000_000, 10_000_000,
];

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let desk = profile == Profile::Desk;
        RunConfig {
            profile,
            double_descent: DoubleDescentConfig {
                sizes: if desk {
                    DESK_SIZES.to_vec()
                } else {
                    REFERENCE_SIZES.to_vec()
                },
                seeds: if desk { vec![0, 1, 2] } else { vec![0, 1, 2, 3, 4] },
                heatmap_sizes: vec![30, 500, 10278],
                train: ToyTrainConfig::default(),
            },
            lm_sweep: LmSweepConfig {
                budgets: if desk { vec![100_000] } else { FULL_BUDGETS.to_vec() },
                depths: if desk {
                    vec![1, 2, 4, 8, 12]
                } else {
                    DEFAULT_DEPTHS.to_vec()
                },
                seeds: vec![0],
                context: if desk { 64 } else { 256 },
                vocab: 256,
                corpus: CorpusConfig {
                    train: None,
                    valid: None,
                    test: None,
                    synthetic_bytes: if desk { 8_000_000 } else { 0 },
                    synthetic_seed: 0,
                },
                recipe: LmRecipe::default(),
                estimator: EstimatorConfig::default(),
                projection_dim: 64,
                projection_seed: 0,
                metric_seed: 0,
                shapes_only: false,
            },
            ext_compare: ExtCompareConfig {
                table: None,
                interval_lo: 0.023,
                interval_hi: 0.047,
            },
            agop_check: AgopCheckConfig {
                alpha: 0.5,
                windows: 64,
            },
            verify: VerifyConfig {
                heavy: false,
                fixtures: None,
                gradient_points: 100,
                tolerances: Tolerances::default(),
            },
        }
    }

    /// Profile defaults overlaid with `file`. Returns the dotted keys the file set.
    pub fn resolve(profile: Option<Profile>, file: Option<&Path>) -> Result<(RunConfig, Vec<String>)> {
        let table: toml::Table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let file_profile = match table.get("profile") {
            Some(v) => Some(v.as_str().context("`profile` must be a string")?.parse()?),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or_default();
        let mut base = toml::Value::try_from(RunConfig::for_profile(profile))?;
        let mut overrides = Vec::new();
        merge(&mut base, toml::Value::Table(table), "", &mut overrides);
        if let toml::Value::Table(t) = &mut base {
            t.insert("profile".into(), toml::Value::String(profile.to_string()));
        }
        overrides.retain(|k| k != "profile");
        let cfg: RunConfig = base.try_into().context("invalid configuration")?;
        Ok((cfg, overrides))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn merge(base: &mut toml::Value, over: toml::Value, prefix: &str, keys: &mut Vec<String>) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v, &path, keys),
                    _ => {
                        keys.push(path);
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
