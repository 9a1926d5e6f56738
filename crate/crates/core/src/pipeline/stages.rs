//! The pipeline stages behind the CLI. Each stage reads its inputs from and
//! writes its outputs to `RunConfig::work_dir`.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};

use super::ablation::{run_ablation, AblationSetup};
use super::bench::{bench_inference, BenchOptions};
use super::config::{LlmBackend, RunConfig, Stage};
use super::metrics::MetricsReport;
use super::model::{train, KnowledgeSource, Model, TrainOptions};
use super::report::{append_jsonl, metrics_table, read_jsonl, timing_table, TimingRecord};
use crate::backbones::AugMode;
use crate::dataset::{
    build_samples, build_vocabulary, parse_interactions, read_samples, split_by_user, write_samples, Catalog,
    RawInteraction, Sample, SampleSchema,
};
use crate::encoding::{encode_all, prestore, prestore_augmented, HashingEncoder, KnowledgeRepresentation, RepresentationCache};
use crate::error::{Error, Result};
use crate::kind::KnowledgeKind;
use crate::prompting::{
    elicit_factors, generate_all, item_requests, preference_requests, HttpLlm, KnowledgeStore, LlmClient,
    PromptRequest, ScenarioFactors, StubLlm,
};

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::NotFound(format!("{what} {}", path.display())))
    }
}

fn ensure_work_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))
}

/// Interactions from `data_dir/ratings.dat`, cut to the first
/// `sample_limit` lines when that is non-zero.
pub fn load_interactions(cfg: &RunConfig) -> Result<Vec<RawInteraction>> {
    let path = cfg.data_dir.join("ratings.dat");
    require(&path, "ratings file")?;
    let mut rows = parse_interactions(&path)?;
    if cfg.sample_limit > 0 {
        rows.truncate(cfg.sample_limit);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepareSummary {
    pub interactions: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PrepareSummary> {
    let interactions = load_interactions(cfg)?;
    let catalog = Catalog::load_dir(&cfg.data_dir)?;
    let split = split_by_user(&interactions, cfg.split_ratio, cfg.seed)?;
    let vocab = build_vocabulary(&split.train, &catalog);
    let samples = build_samples(&split, &catalog, &vocab, cfg.max_history)?;
    let schema = SampleSchema::movielens(&vocab, cfg.max_history);
    ensure_work_dir(cfg)?;
    write_samples(cfg.train_samples_path(), &schema, &samples.train)?;
    write_samples(cfg.test_samples_path(), &schema, &samples.test)?;
    let vp = cfg.vocab_path();
    std::fs::write(&vp, vocab.to_json()).map_err(|e| Error::io(&vp, e))?;
    Ok(PrepareSummary {
        interactions: interactions.len(),
        train_samples: samples.train.len(),
        test_samples: samples.test.len(),
    })
}

fn default_factors(cfg: &RunConfig) -> Result<ScenarioFactors> {
    if !cfg.factors.is_empty() {
        let noun = ScenarioFactors::preset(&cfg.scenario).map_or_else(|| format!("{}s", cfg.scenario), |p| p.item_noun);
        return ScenarioFactors::new(&cfg.scenario, &noun, cfg.factors.clone());
    }
    ScenarioFactors::preset(&cfg.scenario).ok_or_else(|| {
        Error::Config(format!(
            "no preset factors for scenario {:?}; set `factors`",
            cfg.scenario
        ))
    })
}

pub fn make_llm(cfg: &RunConfig, factors: &[String]) -> Box<dyn LlmClient> {
    match cfg.llm {
        LlmBackend::Stub => Box::new(StubLlm::new(factors.to_vec(), cfg.seed)),
        LlmBackend::Http => {
            let mut c = HttpLlm::from_env(&cfg.llm_base_url, &cfg.llm_model);
            c.max_tokens = cfg.llm_max_tokens;
            Box::new(c)
        }
    }
}

/// `factors.txt`: scenario on the first line, item noun on the second, one
/// factor per following line.
pub fn write_factors(path: &Path, f: &ScenarioFactors) -> Result<()> {
    let mut text = format!("{}\n{}\n", f.scenario, f.item_noun);
    for n in f.names() {
        text.push_str(n);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_factors(path: &Path) -> Result<ScenarioFactors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let (Some(scenario), Some(noun)) = (lines.next(), lines.next()) else {
        return Err(Error::Format(format!("{} needs a scenario and an item noun", path.display())));
    };
    ScenarioFactors::new(scenario, noun, lines.map(String::from).collect())
}

/// Asks the LLM for the scenario's factors unless `factors` is configured.
pub fn elicit(cfg: &RunConfig) -> Result<ScenarioFactors> {
    let fallback = default_factors(cfg).ok();
    let names = fallback.as_ref().map(|f| f.names().to_vec()).unwrap_or_default();
    let llm = make_llm(cfg, &names);
    let noun = fallback.map_or_else(|| format!("{}s", cfg.scenario), |f| f.item_noun);
    let configured = (!cfg.factors.is_empty()).then(|| cfg.factors.clone());
    let factors = elicit_factors(&cfg.scenario, &noun, llm.as_ref(), configured)?;
    ensure_work_dir(cfg)?;
    write_factors(&cfg.factors_path(), &factors)?;
    Ok(factors)
}

/// Factors from a previous elicitation, else configuration or preset.
pub fn current_factors(cfg: &RunConfig) -> Result<ScenarioFactors> {
    let p = cfg.factors_path();
    if p.exists() {
        read_factors(&p)
    } else {
        default_factors(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub kind: KnowledgeKind,
    pub entity_id: String,
    pub prompt_hash: String,
    pub text: String,
}

impl From<&PromptRequest> for PromptRecord {
    fn from(r: &PromptRequest) -> Self {
        Self {
            kind: r.kind,
            entity_id: r.entity_id.clone(),
            prompt_hash: r.prompt_hash(),
            text: r.rendered_text.clone(),
        }
    }
}

impl From<PromptRecord> for PromptRequest {
    fn from(r: PromptRecord) -> Self {
        Self {
            kind: r.kind,
            entity_id: r.entity_id,
            rendered_text: r.text,
        }
    }
}

pub fn build_prompts(cfg: &RunConfig) -> Result<Vec<PromptRequest>> {
    let interactions = load_interactions(cfg)?;
    let catalog = Catalog::load_dir(&cfg.data_dir)?;
    let factors = current_factors(cfg)?;
    let mut reqs = preference_requests(&interactions, &catalog, &factors, cfg.prompt_history);
    reqs.extend(item_requests(&interactions, &catalog, &factors));
    Ok(reqs)
}

/// Renders every preference and item prompt into `prompts.jsonl`.
pub fn gen_prompts(cfg: &RunConfig) -> Result<usize> {
    let reqs = build_prompts(cfg)?;
    ensure_work_dir(cfg)?;
    let path = cfg.prompts_path();
    if path.exists() {
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    let records: Vec<PromptRecord> = reqs.iter().map(PromptRecord::from).collect();
    append_jsonl(&path, &records)?;
    Ok(records.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeSummary {
    pub prompts: usize,
    pub reused: usize,
    pub generated: usize,
}

fn store_age(path: &Path) -> Option<Duration> {
    let modified = std::fs::metadata(path).ok()?.modified().ok()?;
    SystemTime::now().duration_since(modified).ok()
}

/// Fills the knowledge store for every prompt. Records whose prompt hash is
/// unchanged are reused. A failed prompt does not stop the others; the
/// first failure is returned after the rest have been stored.
pub fn gen_knowledge(cfg: &RunConfig) -> Result<KnowledgeSummary> {
    let prompts_path = cfg.prompts_path();
    require(&prompts_path, "prompt file")?;
    let reqs: Vec<PromptRequest> = read_jsonl::<PromptRecord>(&prompts_path)?
        .into_iter()
        .map(PromptRequest::from)
        .collect();
    let path = cfg.knowledge_path();
    if let Some(age) = store_age(&path) {
        let limit = Duration::from_secs(u64::from(cfg.knowledge_refresh_days) * 86_400);
        if age > limit {
            log::warn!(
                "{} is older than {} days; remove it to regenerate all knowledge",
                path.display(),
                cfg.knowledge_refresh_days
            );
        }
    }
    let store = KnowledgeStore::open(&path)?;
    let reused = reqs
        .iter()
        .filter(|r| {
            store
                .lookup(&crate::kind::EntityKey::new(&r.entity_id, r.kind), &r.prompt_hash())
                .is_some()
        })
        .count();
    let factors = current_factors(cfg)?;
    let llm = make_llm(cfg, factors.names());
    let results = generate_all(&reqs, llm.as_ref(), &cfg.retry_policy(), &store, cfg.llm_workers);
    store.compact()?;
    let failed: Vec<Error> = results.into_iter().filter_map(|r| r.err()).collect();
    if let Some(first) = failed.into_iter().next() {
        return Err(first);
    }
    Ok(KnowledgeSummary {
        prompts: reqs.len(),
        reused,
        generated: reqs.len() - reused,
    })
}

/// Encodes every stored knowledge text into `representations.karv`.
pub fn encode(cfg: &RunConfig) -> Result<usize> {
    let path = cfg.knowledge_path();
    require(&path, "knowledge store")?;
    let store = KnowledgeStore::open(&path)?;
    let items: Vec<_> = store.records().into_iter().map(|r| (r.key(), r.text)).collect();
    if items.is_empty() {
        return Err(Error::EmptyKnowledge(format!("no records in {}", path.display())));
    }
    let encoder = HashingEncoder::new(cfg.encoder_dim, cfg.seed)?;
    let reps = encode_all(&encoder, &items, cfg.aggregation, cfg.encode_workers)?;
    prestore(&reps, cfg.representations_path())?;
    Ok(reps.len())
}

fn load_split(cfg: &RunConfig) -> Result<(SampleSchema, Vec<Sample>, Vec<Sample>)> {
    let (tp, sp) = (cfg.train_samples_path(), cfg.test_samples_path());
    require(&tp, "training samples")?;
    require(&sp, "test samples")?;
    let (schema, train) = read_samples(&tp)?;
    let (_, test) = read_samples(&sp)?;
    Ok((schema, train, test))
}

fn load_cache(path: &Path, what: &str, dim: usize) -> Result<RepresentationCache> {
    require(path, what)?;
    let cache = RepresentationCache::load(path)?;
    if cache.dim() != dim {
        return Err(Error::Config(format!(
            "{what} {} has dimension {}, configuration expects {dim}",
            path.display(),
            cache.dim()
        )));
    }
    Ok(cache)
}

fn representations_for(cfg: &RunConfig, mode: AugMode) -> Result<Option<RepresentationCache>> {
    if mode == AugMode::None {
        return Ok(None);
    }
    load_cache(&cfg.representations_path(), "representation cache", cfg.encoder_dim).map(Some)
}

pub fn train_options(cfg: &RunConfig, checkpoint_on_failure: Option<PathBuf>) -> TrainOptions {
    TrainOptions {
        adam: cfg.adam(),
        epochs: cfg.epochs,
        patience: cfg.patience,
        batch_size: cfg.batch_size,
        eval_batch_size: cfg.eval_batch_size,
        seed: cfg.seed,
        checkpoint_on_failure,
    }
}

/// Trains the configured backbone and mode, saves the checkpoint and its
/// manifest, and appends the report to `report.jsonl`.
pub fn train_stage(cfg: &RunConfig) -> Result<(Model, MetricsReport)> {
    let (schema, train_set, test_set) = load_split(cfg)?;
    let reps = representations_for(cfg, cfg.mode)?;
    let knowledge = reps.as_ref().map_or(KnowledgeSource::None, KnowledgeSource::Representations);
    let model = Model::new(schema, cfg.backbone_config(), Some(cfg.adaptor_config()), cfg.seed)?;
    let ck = cfg.checkpoint_path(cfg.mode);
    let (model, report) = train(model, &train_set, &test_set, knowledge, &train_options(cfg, Some(ck.clone())))?;
    model.save(&ck, Some(&cfg.manifest_path(cfg.mode)))?;
    append_jsonl(&cfg.report_path(), std::slice::from_ref(&report))?;
    Ok((model, report))
}

/// Runs every mode on the same split and seed; returns the reports and a
/// comparison table.
pub fn ablate(cfg: &RunConfig) -> Result<(Vec<MetricsReport>, String)> {
    let (schema, train_set, test_set) = load_split(cfg)?;
    let reps = representations_for(cfg, AugMode::Both)?;
    let setup = AblationSetup {
        schema: &schema,
        backbone: cfg.backbone_config(),
        adaptor: cfg.adaptor_config(),
        train: &train_set,
        test: &test_set,
        representations: reps.as_ref(),
        options: train_options(cfg, None),
    };
    let reports = run_ablation(&setup, &AugMode::ALL)?;
    append_jsonl(&cfg.report_path(), &reports)?;
    let table = metrics_table(&reports);
    Ok((reports, table))
}

/// The model whose adaptor serves augmented inputs: the configured mode,
/// or `both` when the configuration asks for none.
fn augmented_mode(cfg: &RunConfig) -> AugMode {
    if cfg.mode == AugMode::None { AugMode::Both } else { cfg.mode }
}

/// Runs every representation through the trained adaptor and prestores
/// the results.
pub fn export_augmented(cfg: &RunConfig) -> Result<usize> {
    let model = Model::load(&cfg.checkpoint_path(augmented_mode(cfg)))?;
    let cache = load_cache(&cfg.representations_path(), "representation cache", cfg.encoder_dim)?;
    let reps: Vec<KnowledgeRepresentation> = cache
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| KnowledgeRepresentation {
            key: k.clone(),
            vector: cache.row(i).to_vec(),
        })
        .collect();
    let out = model.augment(&reps)?;
    prestore_augmented(&out, cfg.augmented_path())?;
    Ok(out.len())
}

pub fn bench_path(cfg: &RunConfig) -> PathBuf {
    cfg.path("bench.jsonl")
}

/// Times the base model against the augmented one with and without the
/// adaptor in the loop, using trained checkpoints and prestored vectors.
pub fn bench(cfg: &RunConfig) -> Result<(Vec<TimingRecord>, String)> {
    let base = Model::load(&cfg.checkpoint_path(AugMode::None))?;
    let kar = Model::load(&cfg.checkpoint_path(augmented_mode(cfg)))?;
    let reps = load_cache(&cfg.representations_path(), "representation cache", cfg.encoder_dim)?;
    let aug = load_cache(&cfg.augmented_path(), "augmented vector cache", cfg.aug_dim)?;
    let sp = cfg.test_samples_path();
    require(&sp, "test samples")?;
    let (_, samples) = read_samples(&sp)?;
    let opts = BenchOptions {
        batches: cfg.bench_batches,
        warmup: cfg.bench_warmup,
        batch_size: cfg.bench_batch_size,
    };
    let rows = bench_inference(&base, &kar, &samples, &reps, &aug, &opts)?;
    append_jsonl(&bench_path(cfg), &rows)?;
    let table = timing_table(&rows);
    Ok((rows, table))
}

/// Runs one stage and returns a one-line summary.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<String> {
    Ok(match stage {
        Stage::PrepareData => {
            let s = prepare_data(cfg)?;
            format!(
                "prepare-data: {} interactions, {} train / {} test samples",
                s.interactions, s.train_samples, s.test_samples
            )
        }
        Stage::ElicitFactors => format!("elicit-factors: {}", elicit(cfg)?.joined()),
        Stage::GenPrompts => format!("gen-prompts: {} prompts", gen_prompts(cfg)?),
        Stage::GenKnowledge => {
            let s = gen_knowledge(cfg)?;
            format!("gen-knowledge: {} prompts, {} reused, {} generated", s.prompts, s.reused, s.generated)
        }
        Stage::Encode => format!("encode: {} representations", encode(cfg)?),
        Stage::Train => {
            let (_, r) = train_stage(cfg)?;
            format!("train: {} {} AUC {:.4} logloss {:.4}", r.backbone, r.mode, r.auc, r.logloss)
        }
        Stage::ExportAugmented => format!("export-augmented: {} vectors", export_augmented(cfg)?),
    })
}

/// Runs `cfg.stages` in order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Vec<String>> {
    cfg.stages.iter().map(|&s| run_stage(cfg, s)).collect()
}

/// Trains each configuration in turn; a plain runner over candidate
/// settings such as batch size and learning rate.
pub fn grid_search(configs: &[RunConfig]) -> Result<Vec<MetricsReport>> {
    configs.iter().map(|c| train_stage(c).map(|(_, r)| r)).collect()
}
