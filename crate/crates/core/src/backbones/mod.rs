//! DeepFM, DCNv2 and DIN with optional augmented-vector fields.
//!
//! All three share the same input layer: one embedding per categorical
//! field, plus one pooled behavior field. DeepFM and DCNv2 mean-pool the
//! history; DIN pools it with target attention. A history entry is the sum
//! of its item, category and rating embeddings. Augmented vectors join as
//! up to two further fields.

mod ops;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ops::{cross_layer, fm_second_order};

use crate::dataset::{Sample, SampleSchema};
use crate::error::{Error, Result};
use crate::nn::{uniform, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_MLP: [usize; 2] = [200, 80];
pub const DEFAULT_CROSS_LAYERS: usize = 3;
pub const DEFAULT_ATTENTION: [usize; 2] = [80, 40];
const EMBED_INIT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    DeepFm,
    Dcnv2,
    Din,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::DeepFm, BackboneKind::Dcnv2, BackboneKind::Din];
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::DeepFm => "deepfm",
            BackboneKind::Dcnv2 => "dcnv2",
            BackboneKind::Din => "din",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deepfm" => Ok(BackboneKind::DeepFm),
            "dcnv2" | "dcn-v2" | "dcn_v2" => Ok(BackboneKind::Dcnv2),
            "din" => Ok(BackboneKind::Din),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

/// Which augmented vectors the model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMode {
    None,
    Fact,
    Reasoning,
    Both,
}

impl AugMode {
    pub const ALL: [AugMode; 4] = [AugMode::None, AugMode::Fact, AugMode::Reasoning, AugMode::Both];

    pub fn uses_reasoning(self) -> bool {
        matches!(self, AugMode::Reasoning | AugMode::Both)
    }

    pub fn uses_fact(self) -> bool {
        matches!(self, AugMode::Fact | AugMode::Both)
    }

    pub fn extra_fields(self) -> usize {
        self.uses_reasoning() as usize + self.uses_fact() as usize
    }
}

impl fmt::Display for AugMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugMode::None => "none",
            AugMode::Fact => "fact",
            AugMode::Reasoning => "reasoning",
            AugMode::Both => "both",
        })
    }
}

impl FromStr for AugMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AugMode::None),
            "fact" => Ok(AugMode::Fact),
            "reasoning" => Ok(AugMode::Reasoning),
            "both" => Ok(AugMode::Both),
            other => Err(Error::Config(format!("unknown augmentation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub embed_dim: usize,
    pub mlp: Vec<usize>,
    pub cross_layers: usize,
    pub attention: Vec<usize>,
    pub mode: AugMode,
    /// Dimension of incoming augmented vectors.
    pub aug_dim: usize,
}

impl BackboneConfig {
    pub fn new(kind: BackboneKind, mode: AugMode) -> Self {
        Self {
            kind,
            embed_dim: DEFAULT_EMBED_DIM,
            mlp: DEFAULT_MLP.to_vec(),
            cross_layers: DEFAULT_CROSS_LAYERS,
            attention: DEFAULT_ATTENTION.to_vec(),
            mode,
            aug_dim: DEFAULT_EMBED_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.embed_dim == 0
            || self.aug_dim == 0
            || self.mlp.contains(&0)
            || self.attention.contains(&0);
        if bad {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("backbone.kind".into(), self.kind.to_string()),
            ("backbone.d".into(), self.embed_dim.to_string()),
            ("backbone.mlp".into(), list(&self.mlp)),
            ("backbone.cross_layers".into(), self.cross_layers.to_string()),
            ("backbone.attention".into(), list(&self.attention)),
            ("backbone.mode".into(), self.mode.to_string()),
            ("backbone.q".into(), self.aug_dim.to_string()),
        ]
    }

    pub fn from_meta(get: impl Fn(&str) -> Result<String>) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad checkpoint metadata {k}")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Format(format!("bad checkpoint metadata {k}"))))
                .collect()
        };
        let cfg = Self {
            kind: get("backbone.kind")?.parse()?,
            embed_dim: num("backbone.d")?,
            mlp: list("backbone.mlp")?,
            cross_layers: num("backbone.cross_layers")?,
            attention: list("backbone.attention")?,
            mode: get("backbone.mode")?.parse()?,
            aug_dim: num("backbone.q")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Index-level model input for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `fields[f][b]`.
    pub fields: Vec<Vec<usize>>,
    /// Padded history length for this batch.
    pub hist_len: usize,
    pub hist_items: Vec<usize>,
    pub hist_cats: Vec<usize>,
    pub hist_ratings: Vec<usize>,
    /// 1 for real entries, 0 for padding; `size * hist_len` long.
    pub hist_mask: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::Input("empty batch".into()))?;
        let nf = first.fields.len();
        let size = samples.len();
        let hist_len = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
        let mut fields = vec![Vec::with_capacity(size); nf];
        let n = size * hist_len;
        let (mut items, mut cats, mut ratings, mut mask) =
            (vec![0; n], vec![0; n], vec![0; n], vec![0.0; n]);
        let mut labels = Vec::with_capacity(size);
        for (b, s) in samples.iter().enumerate() {
            if s.fields.len() != nf {
                return Err(Error::shape("batch fields", &[nf], &[s.fields.len()]));
            }
            for (f, &v) in s.fields.iter().enumerate() {
                fields[f].push(v as usize);
            }
            for (j, h) in s.history.iter().enumerate() {
                let k = b * hist_len + j;
                items[k] = h.item as usize;
                cats[k] = h.category as usize;
                ratings[k] = h.rating as usize;
                mask[k] = 1.0;
            }
            labels.push(s.label as f64);
        }
        Ok(Self {
            size,
            fields,
            hist_len,
            hist_items: items,
            hist_cats: cats,
            hist_ratings: ratings,
            hist_mask: mask,
            labels,
        })
    }
}

/// Augmented vectors already placed on the tape, each `[B, q]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct AugInputs {
    pub reasoning: Option<Var>,
    pub fact: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    tables: Vec<ParamId>,
    rating_table: ParamId,
    item_field: usize,
    category_field: usize,
    first_order: Vec<ParamId>,
    bias: Option<ParamId>,
    cross: Vec<(ParamId, ParamId)>,
    attention: Option<Mlp>,
    head: Mlp,
    bridge_reasoning: Option<Linear>,
    bridge_fact: Option<Linear>,
}

impl Backbone {
    /// Registers parameters under `{prefix}.…`. Parameters that exist in
    /// every mode are created first, so that a given seed initializes them
    /// identically regardless of the augmentation mode.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        config: BackboneConfig,
        schema: &SampleSchema,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut tables = Vec::new();
        for (name, &size) in schema.field_names.iter().zip(&schema.field_sizes) {
            let t = uniform(rng, &[size, d], EMBED_INIT);
            tables.push(store.add(format!("{prefix}.embed.{name}"), t)?);
        }
        let rating_table = store.add(
            format!("{prefix}.embed.history_rating"),
            uniform(rng, &[schema.rating_size, d], EMBED_INIT),
        )?;
        let mut first_order = Vec::new();
        let mut bias = None;
        let mut cross = Vec::new();
        let mut attention = None;
        let base_fields = schema.num_fields() + 1;
        let width = (base_fields + config.mode.extra_fields()) * d;
        match config.kind {
            BackboneKind::DeepFm => {
                for (name, &size) in schema.field_names.iter().zip(&schema.field_sizes) {
                    let t = Tensor::zeros(&[size, 1]);
                    first_order.push(store.add(format!("{prefix}.first_order.{name}"), t)?);
                }
                bias = Some(store.add(format!("{prefix}.bias"), Tensor::zeros(&[1]))?);
            }
            BackboneKind::Dcnv2 => {
                for l in 0..config.cross_layers {
                    // Small init keeps the stacked cross product near identity.
                    let w = uniform(rng, &[width, width], 1.0 / width as f64);
                    let w = store.add(format!("{prefix}.cross.{l}.weight"), w)?;
                    let b = store.add(format!("{prefix}.cross.{l}.bias"), Tensor::zeros(&[width]))?;
                    cross.push((w, b));
                }
            }
            BackboneKind::Din => {
                let mut dims = vec![4 * d];
                dims.extend(&config.attention);
                dims.push(1);
                attention = Some(Mlp::new(store, rng, &format!("{prefix}.attention"), &dims, false)?);
            }
        }
        let mut dims = vec![width];
        dims.extend(&config.mlp);
        dims.push(1);
        let head = Mlp::new(store, rng, &format!("{prefix}.head"), &dims, false)?;
        let bridge = |store: &mut ParamStore, rng: &mut _, used: bool, name: &str| -> Result<Option<Linear>> {
            if used && config.aug_dim != d {
                Ok(Some(Linear::new(store, rng, &format!("{prefix}.bridge_{name}"), config.aug_dim, d)?))
            } else {
                Ok(None)
            }
        };
        let bridge_reasoning = bridge(store, rng, config.mode.uses_reasoning(), "reasoning")?;
        let bridge_fact = bridge(store, rng, config.mode.uses_fact(), "fact")?;
        Ok(Self {
            config,
            tables,
            rating_table,
            item_field: schema.item_field,
            category_field: schema.category_field,
            first_order,
            bias,
            cross,
            attention,
            head,
            bridge_reasoning,
            bridge_fact,
        })
    }

    /// Fields seen by the interaction layer: the categorical fields, the
    /// pooled history and one per augmented vector.
    pub fn num_interaction_fields(&self) -> usize {
        self.tables.len() + 1 + self.config.mode.extra_fields()
    }

    /// The `[B, d]` field embeddings in interaction order.
    pub fn interaction_fields(&self, g: &mut Graph, batch: &Batch, aug: &AugInputs) -> Result<Vec<Var>> {
        if batch.fields.len() != self.tables.len() {
            return Err(Error::shape("batch fields", &[self.tables.len()], &[batch.fields.len()]));
        }
        let d = self.config.embed_dim;
        let b = batch.size;
        let mut fields = Vec::with_capacity(self.num_interaction_fields());
        for (&table, idx) in self.tables.iter().zip(&batch.fields) {
            let t = g.param(table);
            fields.push(g.embedding_lookup(t, idx)?);
        }
        let pooled = if batch.hist_len == 0 {
            g.constant(Tensor::zeros(&[b, d]))
        } else {
            let l = batch.hist_len;
            let item_t = g.param(self.tables[self.item_field]);
            let cat_t = g.param(self.tables[self.category_field]);
            let rating_t = g.param(self.rating_table);
            let hi = g.embedding_lookup(item_t, &batch.hist_items)?;
            let hc = g.embedding_lookup(cat_t, &batch.hist_cats)?;
            let hr = g.embedding_lookup(rating_t, &batch.hist_ratings)?;
            let h = g.add(hi, hc)?;
            let hist = g.add(h, hr)?;
            match &self.attention {
                Some(mlp) => {
                    let target = g.add(fields[self.item_field], fields[self.category_field])?;
                    ops::din_attention(g, mlp, target, hist, &batch.hist_mask, l)?
                }
                None => ops::mean_pool(g, hist, &batch.hist_mask, b, l)?,
            }
        };
        fields.push(pooled);
        let mode = self.config.mode;
        for (used, input, bridge, name) in [
            (mode.uses_reasoning(), aug.reasoning, &self.bridge_reasoning, "reasoning"),
            (mode.uses_fact(), aug.fact, &self.bridge_fact, "fact"),
        ] {
            if !used {
                continue;
            }
            let v = input.ok_or_else(|| {
                Error::Input(format!("mode {mode} needs {name} augmented vectors"))
            })?;
            let expected = [b, self.config.aug_dim];
            if g.shape(v) != expected {
                return Err(Error::shape("augmented input", &expected, g.shape(v)));
            }
            fields.push(match bridge {
                Some(l) => l.forward(g, v)?,
                None => v,
            });
        }
        debug_assert_eq!(fields.len(), self.num_interaction_fields());
        Ok(fields)
    }

    /// Logits `[B, 1]`.
    pub fn logits(&self, g: &mut Graph, batch: &Batch, aug: &AugInputs) -> Result<Var> {
        let fields = self.interaction_fields(g, batch, aug)?;
        let b = batch.size;
        let n = fields.len();
        let d = self.config.embed_dim;
        let flat = g.concat(&fields, 1)?;
        match self.config.kind {
            BackboneKind::DeepFm => {
                let cube = g.reshape(flat, &[b, n, d])?;
                let fm = ops::fm_graph(g, cube)?;
                let deep = self.head.forward(g, flat)?;
                let mut acc = g.add(fm, deep)?;
                for (&w, idx) in self.first_order.iter().zip(&batch.fields) {
                    let t = g.param(w);
                    let term = g.embedding_lookup(t, idx)?;
                    acc = g.add(acc, term)?;
                }
                let bias = g.param(self.bias.expect("deepfm has a bias"));
                g.add_bias(acc, bias)
            }
            BackboneKind::Dcnv2 => {
                let mut xl = flat;
                for &(w, bias) in &self.cross {
                    let (w, bias) = (g.param(w), g.param(bias));
                    xl = ops::cross_graph(g, flat, xl, w, bias)?;
                }
                self.head.forward(g, xl)
            }
            BackboneKind::Din => self.head.forward(g, flat),
        }
    }

    /// Click probabilities `[B]`.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, aug: &AugInputs) -> Result<Var> {
        let logits = self.logits(g, batch, aug)?;
        let p = g.sigmoid(logits);
        g.reshape(p, &[batch.size])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::HistoryEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> SampleSchema {
        SampleSchema {
            field_names: ["user_id", "gender", "age", "occupation", "item_id", "category"]
                .map(String::from)
                .to_vec(),
            field_sizes: vec![11, 3, 8, 22, 16, 6],
            item_field: 4,
            category_field: 5,
            rating_size: 6,
            max_history: 5,
        }
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sch = schema();
        (0..n)
            .map(|i| {
                let fields = sch.field_sizes.iter().map(|&s| rng.random_range(0..s) as u32).collect();
                let hl = rng.random_range(0..=sch.max_history);
                let history = (0..hl)
                    .map(|_| HistoryEntry {
                        item: rng.random_range(0..16),
                        category: rng.random_range(0..6),
                        rating: rng.random_range(1..=5),
                    })
                    .collect();
                Sample {
                    user_id: format!("u{i}"),
                    item_id: "i".into(),
                    timestamp: 0,
                    fields,
                    history,
                    label: (i % 2) as u8,
                }
            })
            .collect()
    }

    fn build(kind: BackboneKind, mode: AugMode, q: usize, seed: u64) -> (ParamStore, Backbone) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BackboneConfig {
            embed_dim: 4,
            mlp: vec![8, 4],
            cross_layers: 2,
            attention: vec![6],
            aug_dim: q,
            ..BackboneConfig::new(kind, mode)
        };
        let m = Backbone::new(&mut store, &mut rng, "bb", cfg, &schema()).unwrap();
        (store, m)
    }

    fn aug_rows(g: &mut Graph, b: usize, q: usize, v: f64) -> Var {
        g.constant(Tensor::full(&[b, q], v))
    }

    #[test]
    fn probabilities_in_open_unit_interval_all_modes() {
        let data = samples(9, 1);
        let batch = Batch::from_samples(&data).unwrap();
        for kind in BackboneKind::ALL {
            for mode in AugMode::ALL {
                let (store, m) = build(kind, mode, 4, 3);
                let mut g = Graph::new(&store);
                let aug = AugInputs {
                    reasoning: Some(aug_rows(&mut g, 9, 4, 0.3)),
                    fact: Some(aug_rows(&mut g, 9, 4, -0.2)),
                };
                let p = m.forward(&mut g, &batch, &aug).unwrap();
                assert_eq!(g.shape(p), &[9]);
                assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0), "{kind} {mode}");
                let fields = m.interaction_fields(&mut g, &batch, &aug).unwrap();
                assert_eq!(fields.len(), 7 + mode.extra_fields());
                assert_eq!(m.num_interaction_fields(), 7 + mode.extra_fields());
            }
        }
    }

    #[test]
    fn missing_augmented_vectors_is_input_error() {
        let batch = Batch::from_samples(&samples(2, 1)).unwrap();
        let (store, m) = build(BackboneKind::Din, AugMode::Fact, 4, 1);
        let mut g = Graph::new(&store);
        assert!(matches!(m.forward(&mut g, &batch, &AugInputs::default()), Err(Error::Input(_))));
    }

    #[test]
    fn mode_none_ignores_augmentation_plumbing() {
        let batch = Batch::from_samples(&samples(5, 2)).unwrap();
        for kind in BackboneKind::ALL {
            let (store, m) = build(kind, AugMode::None, 4, 7);
            let mut g = Graph::new(&store);
            let a = m.forward(&mut g, &batch, &AugInputs::default()).unwrap();
            let aug = AugInputs {
                reasoning: Some(aug_rows(&mut g, 5, 4, 9.0)),
                fact: Some(aug_rows(&mut g, 5, 4, 9.0)),
            };
            let b = m.forward(&mut g, &batch, &aug).unwrap();
            assert_eq!(g.value(a), g.value(b));
            let (store2, m2) = build(kind, AugMode::None, 4, 7);
            let mut g2 = Graph::new(&store2);
            let c = m2.forward(&mut g2, &batch, &AugInputs::default()).unwrap();
            assert_eq!(g.value(a), g2.value(c));
        }
    }

    #[test]
    fn zero_augmented_fields_leave_fm_unchanged() {
        let batch = Batch::from_samples(&samples(4, 5)).unwrap();
        let (store, m) = build(BackboneKind::DeepFm, AugMode::Both, 4, 2);
        let mut g = Graph::new(&store);
        let zero = AugInputs {
            reasoning: Some(aug_rows(&mut g, 4, 4, 0.0)),
            fact: Some(aug_rows(&mut g, 4, 4, 0.0)),
        };
        let fields = m.interaction_fields(&mut g, &batch, &zero).unwrap();
        for b in 0..4 {
            let rows: Vec<Vec<f64>> = fields.iter().map(|&f| g.value(f).row(b).to_vec()).collect();
            let with = fm_second_order(&rows).unwrap();
            let without = fm_second_order(&rows[..rows.len() - 2]).unwrap();
            assert!((with - without).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_history_pools_to_zero_and_single_entry_is_identity() {
        let mut data = samples(2, 3);
        data[0].history.clear();
        data[1].history.truncate(1);
        if data[1].history.is_empty() {
            data[1].history.push(HistoryEntry { item: 3, category: 2, rating: 4 });
        }
        let batch = Batch::from_samples(&data).unwrap();
        let (store, m) = build(BackboneKind::Din, AugMode::None, 4, 4);
        let mut g = Graph::new(&store);
        let fields = m.interaction_fields(&mut g, &batch, &AugInputs::default()).unwrap();
        let pooled = g.value(fields[6]);
        assert_eq!(pooled.row(0), &[0.0; 4]);
        let h = &data[1].history[0];
        let t = |name: &str, i: usize| store.get(store.id(name).unwrap()).row(i).to_vec();
        let (a, b, c) = (
            t("bb.embed.item_id", h.item as usize),
            t("bb.embed.category", h.category as usize),
            t("bb.embed.history_rating", h.rating as usize),
        );
        for k in 0..4 {
            assert!((pooled.row(1)[k] - (a[k] + b[k] + c[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn bridge_inserted_when_q_differs() {
        let batch = Batch::from_samples(&samples(3, 9)).unwrap();
        let (store, m) = build(BackboneKind::Dcnv2, AugMode::Both, 6, 1);
        assert!(store.id("bb.bridge_reasoning.weight").is_some());
        let mut g = Graph::new(&store);
        let aug = AugInputs {
            reasoning: Some(aug_rows(&mut g, 3, 6, 0.1)),
            fact: Some(aug_rows(&mut g, 3, 6, 0.1)),
        };
        assert!(m.forward(&mut g, &batch, &aug).is_ok());
        let bad = AugInputs {
            reasoning: Some(aug_rows(&mut g, 3, 4, 0.1)),
            fact: Some(aug_rows(&mut g, 3, 6, 0.1)),
        };
        assert!(matches!(m.forward(&mut g, &batch, &bad), Err(Error::Shape { .. })));
        let (store, _) = build(BackboneKind::Dcnv2, AugMode::Both, 4, 1);
        assert!(store.id("bb.bridge_reasoning.weight").is_none());
    }

    #[test]
    fn config_meta_round_trip() {
        let cfg = BackboneConfig::new(BackboneKind::Dcnv2, AugMode::Reasoning);
        let meta: std::collections::HashMap<_, _> = cfg.to_meta().into_iter().collect();
        let back = BackboneConfig::from_meta(|k| meta.get(k).cloned().ok_or_else(|| Error::NotFound(k.into()))).unwrap();
        assert_eq!(back, cfg);
        assert_eq!("DCNv2".parse::<BackboneKind>().unwrap(), BackboneKind::Dcnv2);
        assert!("xdeepfm".parse::<BackboneKind>().is_err());
    }
}
