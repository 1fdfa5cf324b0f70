//! Experiment configuration.
//!
//! A config is one TOML document; every field has a default so partial files
//! work, and the CLI overrides individual fields after loading.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::batching::{AllInOneOrder, Strategy, SubBatchOrder};
use crate::data::SyntheticSpec;
use crate::gateway::{AdapterConfig, BiasModel, RetryPolicy, TaskKind};
use crate::prompting::DEFAULT_MAX_PROMPT_CHARS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    OneByOne,
    AllInOne,
    SubBatch,
    Listwise,
}

impl FromStr for StrategyName {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-by-one" => Ok(Self::OneByOne),
            "all-in-one" => Ok(Self::AllInOne),
            "sub-batch" => Ok(Self::SubBatch),
            "listwise" => Ok(Self::Listwise),
            other => Err(HarnessError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderName {
    Init,
    Shuffled,
    Stb,
    Bts,
}

impl FromStr for OrderName {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "init" => Ok(Self::Init),
            "shuffled" => Ok(Self::Shuffled),
            "stb" => Ok(Self::Stb),
            "bts" => Ok(Self::Bts),
            other => Err(HarnessError::Config(format!("unknown order {other:?}"))),
        }
    }
}

/// What gets asked of the model: pointwise scores under a batching
/// strategy, or full listwise orderings of the whole list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pointwise(Strategy),
    Listwise(AllInOneOrder),
}

impl Method {
    pub fn resolve(strategy: StrategyName, order: OrderName, batches: usize) -> Result<Self, HarnessError> {
        let bad = || {
            HarnessError::Config(format!(
                "order {order:?} is not available for strategy {strategy:?}"
            ))
        };
        Ok(match strategy {
            StrategyName::OneByOne => match order {
                OrderName::Init => Method::Pointwise(Strategy::OneByOne),
                _ => return Err(bad()),
            },
            StrategyName::AllInOne | StrategyName::Listwise => {
                let order = match order {
                    OrderName::Init => AllInOneOrder::Initial,
                    OrderName::Shuffled => AllInOneOrder::Shuffled,
                    _ => return Err(bad()),
                };
                if strategy == StrategyName::Listwise {
                    Method::Listwise(order)
                } else {
                    Method::Pointwise(Strategy::AllInOne { order })
                }
            }
            StrategyName::SubBatch => {
                let order = match order {
                    OrderName::Init => SubBatchOrder::Initial,
                    OrderName::Stb => SubBatchOrder::ShuffleThenBatch,
                    OrderName::Bts => SubBatchOrder::BatchThenShuffle,
                    OrderName::Shuffled => return Err(bad()),
                };
                Method::Pointwise(Strategy::SubBatched { order, batches })
            }
        })
    }

    /// Listwise calls reuse the all-in-one schedules.
    pub fn plan_strategy(&self) -> Strategy {
        match *self {
            Method::Pointwise(s) => s,
            Method::Listwise(order) => Strategy::AllInOne { order },
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Method::Pointwise(_) => TaskKind::Pointwise,
            Method::Listwise(_) => TaskKind::Listwise,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Method::Pointwise(s) => s.kind_name(),
            Method::Listwise(_) => "listwise",
        }
    }

    pub fn order_name(&self) -> &'static str {
        self.plan_strategy().order_name()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pointwise(s) => write!(f, "{s}"),
            Method::Listwise(_) => write!(f, "listwise/{}", self.order_name()),
        }
    }
}

/// `live:<adapter>`, `replay:<path>` or `sim[:<bias preset>]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Live(String),
    Replay(PathBuf),
    Sim(Option<String>),
}

impl FromStr for BackendSpec {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("live", Some(a)) if !a.is_empty() => Ok(Self::Live(a.to_string())),
            ("replay", Some(a)) if !a.is_empty() => Ok(Self::Replay(PathBuf::from(a))),
            ("sim", a) => Ok(Self::Sim(a.filter(|a| !a.is_empty()).map(str::to_string))),
            _ => Err(HarnessError::Config(format!(
                "backend {s:?} is not live:<adapter>, replay:<path> or sim[:<bias>]"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Live(a) => write!(f, "live:{a}"),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendSpec::Sim(None) => f.write_str("sim"),
            BackendSpec::Sim(Some(b)) => write!(f, "sim:{b}"),
        }
    }
}

/// Named simulator settings usable as `sim:<name>`.
pub fn bias_preset(name: &str) -> Option<BiasModel> {
    Some(match name {
        "exact" | "none" => BiasModel::exact(),
        "uniform" => BiasModel::Uniform { base_error: 0.2 },
        "tail-decay" => BiasModel::TailDecay {
            base_error: 0.1,
            slope: 0.8,
            knee: 0.5,
            reference_len: None,
        },
        "lost-in-middle" => BiasModel::LostInMiddle {
            base_error: 0.1,
            slope: 0.5,
        },
        "junction-peak" => BiasModel::JunctionPeak {
            base_error: 0.4,
            relief: 0.3,
        },
        _ => return None,
    })
}

fn bias_kind(model: &BiasModel) -> &'static str {
    match model {
        BiasModel::Uniform { .. } => "uniform",
        BiasModel::TailDecay { .. } => "tail-decay",
        BiasModel::LostInMiddle { .. } => "lost-in-middle",
        BiasModel::JunctionPeak { .. } => "junction-peak",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetConfig {
    Files {
        queries: PathBuf,
        corpus: PathBuf,
        qrels: PathBuf,
        run: PathBuf,
    },
    Synthetic {
        num_queries: usize,
        #[serde(default = "default_distribution")]
        grade_distribution: [f64; 4],
        #[serde(default)]
        correlation: f64,
        /// Defaults to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_distribution() -> [f64; 4] {
    SyntheticSpec::default().grade_distribution
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        DatasetConfig::Synthetic {
            num_queries: spec.num_queries,
            grade_distribution: spec.grade_distribution,
            correlation: spec.correlation,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: StrategyName,
    pub order: OrderName,
    pub batches: usize,
    /// Self-consistency calls per passage.
    pub m: u32,
    pub depth: usize,
    pub seed: u64,
    pub concurrency: usize,
    pub binarize_threshold: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_prompt_chars: usize,
    pub ndcg_cutoff: usize,
    pub backend: String,
    /// Simulator parameters; overrides the preset of the same kind.
    pub bias: Option<BiasModel>,
    pub dataset: DatasetConfig,
    pub retry: RetryPolicy,
    pub adapters: BTreeMap<String, AdapterConfig>,
    /// When set, every backend response is appended to this replay cache.
    pub record: Option<PathBuf>,
    pub run_tag: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyName::SubBatch,
            order: OrderName::Stb,
            batches: 3,
            m: 1,
            depth: 30,
            seed: 0,
            concurrency: 8,
            binarize_threshold: 2,
            temperature: 1.0,
            max_output_tokens: 2048,
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
            ndcg_cutoff: 10,
            backend: "sim:exact".into(),
            bias: None,
            dataset: DatasetConfig::default(),
            retry: RetryPolicy::default(),
            adapters: BTreeMap::new(),
            record: None,
            run_tag: "bsc".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn method(&self) -> Result<Method, HarnessError> {
        Method::resolve(self.strategy, self.order, self.batches)
    }

    pub fn set_method(&mut self, method: Method) {
        match method {
            Method::Pointwise(Strategy::OneByOne) => {
                self.strategy = StrategyName::OneByOne;
                self.order = OrderName::Init;
            }
            Method::Pointwise(Strategy::AllInOne { order }) | Method::Listwise(order) => {
                self.strategy = if matches!(method, Method::Listwise(_)) {
                    StrategyName::Listwise
                } else {
                    StrategyName::AllInOne
                };
                self.order = match order {
                    AllInOneOrder::Initial => OrderName::Init,
                    AllInOneOrder::Shuffled => OrderName::Shuffled,
                };
            }
            Method::Pointwise(Strategy::SubBatched { order, batches }) => {
                self.strategy = StrategyName::SubBatch;
                self.batches = batches;
                self.order = match order {
                    SubBatchOrder::Initial => OrderName::Init,
                    SubBatchOrder::ShuffleThenBatch => OrderName::Stb,
                    SubBatchOrder::BatchThenShuffle => OrderName::Bts,
                };
            }
        }
    }

    pub fn backend_spec(&self) -> Result<BackendSpec, HarnessError> {
        self.backend.parse()
    }

    /// The simulator model selected by `sim[:<preset>]`.
    pub fn bias_model(&self) -> Result<BiasModel, HarnessError> {
        match self.backend_spec()? {
            BackendSpec::Sim(None) => Ok(self.bias.unwrap_or_default()),
            BackendSpec::Sim(Some(name)) => match self.bias {
                Some(model) if bias_kind(&model) == name => Ok(model),
                _ => bias_preset(&name).ok_or_else(|| HarnessError::Config(format!("unknown bias preset {name:?}"))),
            },
            other => Err(HarnessError::Config(format!("{other} is not a simulator backend"))),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.method()?;
        self.backend_spec()?;
        if self.m == 0 {
            return Err(HarnessError::Config("m must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(HarnessError::Config("depth must be at least 1".into()));
        }
        if self.ndcg_cutoff == 0 {
            return Err(HarnessError::Config("ndcg_cutoff must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(HarnessError::Config("temperature must be nonnegative".into()));
        }
        if self.binarize_threshold == 0 {
            return Err(HarnessError::Config("binarize_threshold must be at least 1".into()));
        }
        Ok(())
    }
}
