//! A trainable backbone plus optional adaptor, its knowledge inputs,
//! checkpointing and the training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auc, logloss, EpochRecord, MetricsReport};
use crate::adaptor::{Adaptor, AdaptorConfig, AugmentedVector};
use crate::backbones::{AugInputs, AugMode, Backbone, BackboneConfig, Batch};
use crate::dataset::{Sample, SampleSchema};
use crate::encoding::{KnowledgeRepresentation, RepresentationCache};
use crate::error::{Error, Result};
use crate::kind::{EntityKey, KnowledgeKind};
use crate::nn::{Adam, AdamConfig, Checkpoint, Graph, ParamStore, Tensor};

pub const BACKBONE_PREFIX: &str = "backbone";
pub const ADAPTOR_PREFIX: &str = "adaptor";

/// Where augmented inputs come from.
#[derive(Clone, Copy, Debug)]
pub enum KnowledgeSource<'a> {
    None,
    /// Semantic representations (dimension m) passed through the adaptor.
    Representations(&'a RepresentationCache),
    /// Prestored augmented vectors (dimension q) used as-is.
    Augmented(&'a RepresentationCache),
}

/// Per-batch knowledge rows, resolved ahead of the forward pass.
#[derive(Clone, Debug)]
pub struct KnowledgeRows {
    pub reasoning: Tensor,
    pub fact: Tensor,
    pub prestored: bool,
    pub missing: usize,
}

fn gather_rows(cache: &RepresentationCache, keys: impl Iterator<Item = EntityKey>, n: usize) -> (Tensor, usize) {
    let dim = cache.dim();
    let mut data = Vec::with_capacity(n * dim);
    let mut missing = 0;
    for key in keys {
        match cache.row_of(&key) {
            Some(r) => data.extend(cache.row(r).iter().map(|&v| v as f64)),
            None => {
                missing += 1;
                data.extend(std::iter::repeat_n(0.0, dim));
            }
        }
    }
    (Tensor::new(vec![n, dim], data).expect("rows match count"), missing)
}

impl KnowledgeSource<'_> {
    /// Looks up the user's reasoning row and the item's fact row for each
    /// sample. Keys absent from the cache resolve to zero rows.
    pub fn rows(&self, samples: &[&Sample]) -> Option<KnowledgeRows> {
        let (cache, prestored) = match self {
            KnowledgeSource::None => return None,
            KnowledgeSource::Representations(c) => (*c, false),
            KnowledgeSource::Augmented(c) => (*c, true),
        };
        let n = samples.len();
        let (reasoning, m1) = gather_rows(cache, samples.iter().map(|s| EntityKey::user(s.user_id.as_str())), n);
        let (fact, m2) = gather_rows(cache, samples.iter().map(|s| EntityKey::item(s.item_id.as_str())), n);
        Some(KnowledgeRows {
            reasoning,
            fact,
            prestored,
            missing: m1 + m2,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub backbone: Backbone,
    pub adaptor: Option<Adaptor>,
    pub schema: SampleSchema,
    pub seed: u64,
}

fn schema_meta(s: &SampleSchema) -> Vec<(String, String)> {
    let sizes = s.field_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    vec![
        ("schema.fields".into(), s.field_names.join(",")),
        ("schema.sizes".into(), sizes),
        ("schema.item_field".into(), s.item_field.to_string()),
        ("schema.category_field".into(), s.category_field.to_string()),
        ("schema.rating_size".into(), s.rating_size.to_string()),
        ("schema.max_history".into(), s.max_history.to_string()),
    ]
}

fn schema_from(ck: &Checkpoint) -> Result<SampleSchema> {
    let num = |k: &str| -> Result<usize> {
        ck.meta(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad checkpoint metadata {k}")))
    };
    let sizes = ck
        .meta("schema.sizes")?
        .split(',')
        .map(|s| s.parse().map_err(|_| Error::Format("bad schema.sizes".into())))
        .collect::<Result<Vec<usize>>>()?;
    Ok(SampleSchema {
        field_names: ck.meta("schema.fields")?.split(',').map(String::from).collect(),
        field_sizes: sizes,
        item_field: num("schema.item_field")?,
        category_field: num("schema.category_field")?,
        rating_size: num("schema.rating_size")?,
        max_history: num("schema.max_history")?,
    })
}

/// Sidecar JSON describing a saved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub backbone: BackboneConfig,
    pub adaptor: Option<AdaptorConfig>,
    pub checkpoint: PathBuf,
    /// Parameter-name prefix of the adaptor inside the checkpoint.
    pub adaptor_prefix: Option<String>,
    pub seed: u64,
    pub num_fields: usize,
}

impl Model {
    /// A model needs an adaptor to train with augmentation; without one it
    /// can still run on prestored augmented vectors.
    pub fn new(schema: SampleSchema, backbone: BackboneConfig, adaptor: Option<AdaptorConfig>, seed: u64) -> Result<Self> {
        if let Some(a) = &adaptor {
            if a.output_dim != backbone.aug_dim {
                return Err(Error::Config(format!(
                    "adaptor output {} does not match backbone augmented input {}",
                    a.output_dim, backbone.aug_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, &mut rng, BACKBONE_PREFIX, backbone, &schema)?;
        let adaptor = match adaptor {
            Some(cfg) if bb.config.mode != AugMode::None => Some(Adaptor::new(&mut store, &mut rng, ADAPTOR_PREFIX, cfg)?),
            _ => None,
        };
        Ok(Self {
            store,
            backbone: bb,
            adaptor,
            schema,
            seed,
        })
    }

    pub fn mode(&self) -> AugMode {
        self.backbone.config.mode
    }

    /// Puts the batch's augmented inputs on the tape.
    fn aug_inputs(&self, g: &mut Graph, rows: Option<&KnowledgeRows>) -> Result<AugInputs> {
        if self.mode() == AugMode::None {
            return Ok(AugInputs::default());
        }
        let rows = rows.ok_or_else(|| {
            Error::Input(format!("mode {} needs knowledge vectors", self.mode()))
        })?;
        let (r, f) = (g.constant(rows.reasoning.clone()), g.constant(rows.fact.clone()));
        if rows.prestored {
            return Ok(AugInputs {
                reasoning: Some(r),
                fact: Some(f),
            });
        }
        let adaptor = self
            .adaptor
            .as_ref()
            .ok_or_else(|| Error::Input("representations given but the model has no adaptor".into()))?;
        let mode = self.mode();
        Ok(AugInputs {
            reasoning: if mode.uses_reasoning() {
                Some(adaptor.forward(g, r, KnowledgeKind::Preference)?)
            } else {
                None
            },
            fact: if mode.uses_fact() {
                Some(adaptor.forward(g, f, KnowledgeKind::ItemFactual)?)
            } else {
                None
            },
        })
    }

    /// Probabilities for one pre-resolved batch.
    pub fn forward_batch(&self, batch: &Batch, rows: Option<&KnowledgeRows>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let aug = self.aug_inputs(&mut g, rows)?;
        let p = self.backbone.forward(&mut g, batch, &aug)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn predict(&self, samples: &[Sample], knowledge: KnowledgeSource, batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let batch = Batch::from_samples(refs.iter().copied())?;
            let rows = knowledge.rows(&refs);
            out.extend(self.forward_batch(&batch, rows.as_ref())?);
        }
        Ok(out)
    }

    pub fn evaluate(&self, samples: &[Sample], knowledge: KnowledgeSource, batch_size: usize) -> Result<(f64, f64)> {
        let preds = self.predict(samples, knowledge, batch_size)?;
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite prediction during evaluation".into()));
        }
        let labels: Vec<f64> = samples.iter().map(|s| s.label as f64).collect();
        Ok((auc(&preds, &labels)?, logloss(&preds, &labels)?))
    }

    /// Prestores the adaptor's output for every representation.
    pub fn augment(&self, reps: &[KnowledgeRepresentation]) -> Result<Vec<AugmentedVector>> {
        self.adaptor
            .as_ref()
            .ok_or_else(|| Error::Input("model has no adaptor".into()))?
            .augment_all(&self.store, reps)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store).with_meta("seed", self.seed);
        let meta = self
            .backbone
            .config
            .to_meta()
            .into_iter()
            .chain(schema_meta(&self.schema))
            .chain(self.adaptor.iter().flat_map(|a| a.config.to_meta()));
        for (k, v) in meta {
            ck.metadata.insert(k, v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| ck.meta(k).map(String::from);
        let backbone = BackboneConfig::from_meta(get)?;
        let adaptor = if ck.metadata.contains_key("adaptor.variant") {
            Some(AdaptorConfig::from_meta(get)?)
        } else {
            None
        };
        let seed = ck
            .meta("seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed metadata".into()))?;
        let mut model = Self::new(schema_from(ck)?, backbone, adaptor, seed)?;
        ck.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn manifest(&self, checkpoint: &Path) -> ModelManifest {
        ModelManifest {
            backbone: self.backbone.config.clone(),
            adaptor: self.adaptor.as_ref().map(|a| a.config.clone()),
            checkpoint: checkpoint.to_path_buf(),
            adaptor_prefix: self.adaptor.as_ref().map(|_| ADAPTOR_PREFIX.to_string()),
            seed: self.seed,
            num_fields: self.backbone.num_interaction_fields(),
        }
    }

    /// Writes the checkpoint and, when given, its manifest.
    pub fn save(&self, checkpoint: &Path, manifest: Option<&Path>) -> Result<()> {
        self.checkpoint().save(checkpoint)?;
        if let Some(m) = manifest {
            let json = serde_json::to_string_pretty(&self.manifest(checkpoint))
                .map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(m, json).map_err(|e| Error::io(m, e))?;
        }
        Ok(())
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        if !checkpoint.exists() {
            return Err(Error::NotFound(format!("checkpoint {}", checkpoint.display())));
        }
        Self::from_checkpoint(&Checkpoint::load(checkpoint)?)
    }
}

/// Hex SHA-256 over the `(user, item, timestamp)` identities of `samples`.
pub fn sample_set_hash(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(format!("{}\t{}\t{}\n", s.user_id, s.item_id, s.timestamp).as_bytes());
    }
    hex::encode(h.finalize())
}

/// A model with its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
}

impl Trainer {
    pub fn new(model: Model, config: AdamConfig) -> Self {
        let adam = Adam::new(&model.store, config);
        Self { model, adam }
    }

    /// One optimizer step on `samples`; returns the batch loss. On a
    /// non-finite loss or gradient the parameters are left untouched.
    pub fn step(&mut self, samples: &[&Sample], knowledge: KnowledgeSource) -> Result<f64> {
        let batch = Batch::from_samples(samples.iter().copied())?;
        let rows = knowledge.rows(samples);
        let grads = {
            let mut g = Graph::new(&self.model.store);
            let aug = self.model.aug_inputs(&mut g, rows.as_ref())?;
            let p = self.model.backbone.forward(&mut g, &batch, &aug)?;
            let loss = g.bce_loss(p, &batch.labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("training loss is {value}")));
            }
            (g.backward(loss)?.into_params(), value)
        };
        self.adam.step(&mut self.model.store, &grads.0)?;
        Ok(grads.1)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.checkpoint();
        ck.add_optimizer(&self.model.store, &self.adam);
        ck
    }

    pub fn resume(ck: &Checkpoint, config: AdamConfig) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let mut adam = Adam::new(&model.store, config);
        ck.load_optimizer(&model.store, &mut adam)?;
        Ok(Self { model, adam })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Epochs without test-AUC improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Where the last good parameters go if training hits a numeric failure.
    pub checkpoint_on_failure: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 5,
            patience: 1,
            batch_size: 256,
            eval_batch_size: 1024,
            seed: 0,
            checkpoint_on_failure: None,
        }
    }
}

/// Trains `model` on `train`, evaluating on `test` after every epoch, and
/// returns the parameters of the best epoch by test AUC.
pub fn train(
    model: Model,
    train: &[Sample],
    test: &[Sample],
    knowledge: KnowledgeSource,
    opts: &TrainOptions,
) -> Result<(Model, MetricsReport)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("training and test sets must be non-empty".into()));
    }
    if model.mode() != AugMode::None && matches!(knowledge, KnowledgeSource::None) {
        return Err(Error::Input(format!("mode {} needs knowledge vectors", model.mode())));
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(model, opts.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut missing_reported = false;
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::with_capacity(order.len() / opts.batch_size + 1);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            if !missing_reported {
                if let Some(rows) = knowledge.rows(&refs).filter(|r| r.missing > 0) {
                    log::warn!("{} knowledge lookups missing in the first batch; using zero vectors", rows.missing);
                    missing_reported = true;
                }
            }
            match trainer.step(&refs, knowledge) {
                Ok(loss) => batch_losses.push(loss),
                Err(Error::Numeric(msg)) => {
                    let saved = match &opts.checkpoint_on_failure {
                        Some(p) => {
                            trainer.checkpoint().save(p)?;
                            format!("; last good parameters saved to {}", p.display())
                        }
                        None => String::new(),
                    };
                    return Err(Error::Numeric(format!(
                        "epoch {epoch}, batch {}: {msg}{saved}",
                        batch_losses.len() + 1
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let (test_auc, test_logloss) = trainer.model.evaluate(test, knowledge, opts.eval_batch_size)?;
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.5}, test AUC {test_auc:.5}, logloss {test_logloss:.5}");
        curve.push(EpochRecord {
            epoch,
            train_loss,
            batch_losses,
            test_auc,
            test_logloss,
            seconds: t0.elapsed().as_secs_f64(),
        });
        match &best {
            Some((b, ..)) if test_auc <= *b => {
                stale += 1;
                if stale > opts.patience {
                    break;
                }
            }
            _ => {
                stale = 0;
                best = Some((test_auc, test_logloss, epoch, trainer.model.store.clone()));
            }
        }
    }
    let (auc, logloss, best_epoch, params) = best.expect("at least one epoch ran");
    let mut model = trainer.model;
    model.store = params;
    let report = MetricsReport {
        backbone: model.backbone.config.kind.to_string(),
        mode: model.mode().to_string(),
        seed: opts.seed,
        auc,
        logloss,
        best_epoch,
        curve,
        test_hash: sample_set_hash(test),
        train_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
