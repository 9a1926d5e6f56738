//! Run configuration read from a `key = value` file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::adaptor::{AdaptorConfig, AdaptorVariant, DEFAULT_HIDDEN};
use crate::backbones::{AugMode, BackboneConfig, BackboneKind, DEFAULT_ATTENTION, DEFAULT_CROSS_LAYERS, DEFAULT_EMBED_DIM, DEFAULT_MLP};
use crate::dataset::DEFAULT_MAX_HISTORY;
use crate::encoding::{Aggregation, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::prompting::{RetryPolicy, DEFAULT_MAX_TOKENS, DEFAULT_PROMPT_HISTORY};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    PrepareData,
    ElicitFactors,
    GenPrompts,
    GenKnowledge,
    Encode,
    Train,
    ExportAugmented,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::PrepareData,
        Stage::ElicitFactors,
        Stage::GenPrompts,
        Stage::GenKnowledge,
        Stage::Encode,
        Stage::Train,
        Stage::ExportAugmented,
    ];
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "prepare-data" => Ok(Stage::PrepareData),
            "elicit-factors" => Ok(Stage::ElicitFactors),
            "gen-prompts" => Ok(Stage::GenPrompts),
            "gen-knowledge" => Ok(Stage::GenKnowledge),
            "encode" => Ok(Stage::Encode),
            "train" => Ok(Stage::Train),
            "export-augmented" => Ok(Stage::ExportAugmented),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LlmBackend {
    Stub,
    Http,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub seed: u64,

    pub split_ratio: f64,
    pub max_history: usize,
    /// Keep only the first N lines of the ratings file; 0 keeps all.
    pub sample_limit: usize,

    pub scenario: String,
    pub factors: Vec<String>,
    pub llm: LlmBackend,
    pub llm_base_url: String,
    pub llm_model: String,
    pub llm_max_tokens: u32,
    pub llm_workers: usize,
    pub llm_max_attempts: usize,
    pub llm_backoff_ms: u64,
    pub prompt_history: usize,
    /// Age in days after which stored knowledge should be regenerated.
    /// Recorded for operators; nothing is scheduled automatically.
    pub knowledge_refresh_days: u32,

    pub encoder_dim: usize,
    pub aggregation: Aggregation,
    pub encode_workers: usize,

    pub backbone: BackboneKind,
    pub mode: AugMode,
    pub embed_dim: usize,
    pub mlp: Vec<usize>,
    pub cross_layers: usize,
    pub attention: Vec<usize>,

    pub adaptor: AdaptorVariant,
    pub adaptor_hidden: Vec<usize>,
    pub n_shared: Option<usize>,
    pub n_pref: Option<usize>,
    pub n_item: Option<usize>,
    pub aug_dim: usize,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,

    pub bench_batches: usize,
    pub bench_warmup: usize,
    pub bench_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/ml-1m"),
            work_dir: PathBuf::from("runs"),
            stages: Stage::ALL.to_vec(),
            seed: 2023,
            split_ratio: 0.9,
            max_history: DEFAULT_MAX_HISTORY,
            sample_limit: 0,
            scenario: "movie".into(),
            factors: Vec::new(),
            llm: LlmBackend::Stub,
            llm_base_url: "https://api.openai.com/v1".into(),
            llm_model: "gpt-3.5-turbo".into(),
            llm_max_tokens: DEFAULT_MAX_TOKENS,
            llm_workers: 4,
            llm_max_attempts: 4,
            llm_backoff_ms: 500,
            prompt_history: DEFAULT_PROMPT_HISTORY,
            knowledge_refresh_days: 30,
            encoder_dim: DEFAULT_DIM,
            aggregation: Aggregation::Avg,
            encode_workers: 1,
            backbone: BackboneKind::Din,
            mode: AugMode::Both,
            embed_dim: DEFAULT_EMBED_DIM,
            mlp: DEFAULT_MLP.to_vec(),
            cross_layers: DEFAULT_CROSS_LAYERS,
            attention: DEFAULT_ATTENTION.to_vec(),
            adaptor: AdaptorVariant::Hybrid,
            adaptor_hidden: DEFAULT_HIDDEN.to_vec(),
            n_shared: None,
            n_pref: None,
            n_item: None,
            aug_dim: DEFAULT_EMBED_DIM,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 5,
            patience: 1,
            batch_size: 256,
            eval_batch_size: 1024,
            bench_batches: 50,
            bench_warmup: 5,
            bench_batch_size: 256,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "work_dir" => self.work_dir = PathBuf::from(v),
            "stages" => {
                self.stages = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = parse(key, v)?,
            "split_ratio" => self.split_ratio = parse(key, v)?,
            "max_history" => self.max_history = parse(key, v)?,
            "sample_limit" => self.sample_limit = parse(key, v)?,
            "scenario" => self.scenario = v.to_string(),
            "factors" => {
                self.factors = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "llm" => {
                self.llm = match v {
                    "stub" => LlmBackend::Stub,
                    "http" => LlmBackend::Http,
                    _ => return Err(Error::Config(format!("llm must be stub or http, got {v:?}"))),
                }
            }
            "llm_base_url" => self.llm_base_url = v.to_string(),
            "llm_model" => self.llm_model = v.to_string(),
            "llm_max_tokens" => self.llm_max_tokens = parse(key, v)?,
            "llm_workers" => self.llm_workers = parse(key, v)?,
            "llm_max_attempts" => self.llm_max_attempts = parse(key, v)?,
            "llm_backoff_ms" => self.llm_backoff_ms = parse(key, v)?,
            "prompt_history" => self.prompt_history = parse(key, v)?,
            "knowledge_refresh_days" => self.knowledge_refresh_days = parse(key, v)?,
            "encoder_dim" => self.encoder_dim = parse(key, v)?,
            "aggregation" => self.aggregation = v.parse()?,
            "encode_workers" => self.encode_workers = parse(key, v)?,
            "backbone" => self.backbone = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "mlp" => self.mlp = parse_list(key, v)?,
            "cross_layers" => self.cross_layers = parse(key, v)?,
            "attention" => self.attention = parse_list(key, v)?,
            "adaptor" => self.adaptor = v.parse()?,
            "adaptor_hidden" => self.adaptor_hidden = parse_list(key, v)?,
            "n_shared" => self.n_shared = Some(parse(key, v)?),
            "n_pref" => self.n_pref = Some(parse(key, v)?),
            "n_item" => self.n_item = Some(parse(key, v)?),
            "aug_dim" => self.aug_dim = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, v)?,
            "bench_batches" => self.bench_batches = parse(key, v)?,
            "bench_warmup" => self.bench_warmup = parse(key, v)?,
            "bench_batch_size" => self.bench_batch_size = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("epochs", self.epochs),
            ("encoder_dim", self.encoder_dim),
            ("llm_workers", self.llm_workers),
            ("llm_max_attempts", self.llm_max_attempts),
            ("bench_batch_size", self.bench_batch_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must be in (0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.backbone_config().validate()?;
        self.adaptor_config().validate()
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            kind: self.backbone,
            embed_dim: self.embed_dim,
            mlp: self.mlp.clone(),
            cross_layers: self.cross_layers,
            attention: self.attention.clone(),
            mode: self.mode,
            aug_dim: self.aug_dim,
        }
    }

    pub fn adaptor_config(&self) -> AdaptorConfig {
        let base = AdaptorConfig::for_variant(self.adaptor, self.encoder_dim);
        AdaptorConfig {
            output_dim: self.aug_dim,
            hidden: self.adaptor_hidden.clone(),
            n_shared: self.n_shared.unwrap_or(base.n_shared),
            n_pref: self.n_pref.unwrap_or(base.n_pref),
            n_item: self.n_item.unwrap_or(base.n_item),
            ..base
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.llm_max_attempts,
            initial_backoff: Duration::from_millis(self.llm_backoff_ms),
            ..RetryPolicy::default()
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    pub fn train_samples_path(&self) -> PathBuf {
        self.path("train.kars")
    }

    pub fn test_samples_path(&self) -> PathBuf {
        self.path("test.kars")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.path("vocab.json")
    }

    pub fn factors_path(&self) -> PathBuf {
        self.path("factors.txt")
    }

    pub fn prompts_path(&self) -> PathBuf {
        self.path("prompts.jsonl")
    }

    pub fn knowledge_path(&self) -> PathBuf {
        self.path("knowledge.jsonl")
    }

    pub fn representations_path(&self) -> PathBuf {
        self.path("representations.karv")
    }

    pub fn checkpoint_path(&self, mode: AugMode) -> PathBuf {
        self.path(&format!("model-{}-{mode}.karc", self.backbone))
    }

    pub fn manifest_path(&self, mode: AugMode) -> PathBuf {
        self.path(&format!("model-{}-{mode}.json", self.backbone))
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.path(&format!("augmented-{}.karv", self.backbone))
    }

    pub fn report_path(&self) -> PathBuf {
        self.path("report.jsonl")
    }
}
