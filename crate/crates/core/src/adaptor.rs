//! Hybrid-expert adaptor mapping knowledge representations (dimension m)
//! to augmented vectors (dimension q).
//!
//! Each knowledge kind has a pool made of the shared experts followed by
//! its dedicated experts. A single affine gate per kind produces one logit
//! per pool member; the output is the softmax-weighted sum of the experts.
//! A pool with one member has no gate and a fixed weight of 1.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kind::{EntityKey, KnowledgeKind};
use crate::nn::{Graph, Linear, Mlp, ParamStore, Var};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 32];
pub const DEFAULT_OUTPUT_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptorVariant {
    /// One expert shared by both kinds, no gating.
    Mlp,
    /// A gated pool per kind with no shared experts.
    Moe,
    Hybrid,
}

impl fmt::Display for AdaptorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptorVariant::Mlp => "mlp",
            AdaptorVariant::Moe => "moe",
            AdaptorVariant::Hybrid => "hybrid",
        })
    }
}

impl FromStr for AdaptorVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(AdaptorVariant::Mlp),
            "moe" => Ok(AdaptorVariant::Moe),
            "hybrid" => Ok(AdaptorVariant::Hybrid),
            other => Err(Error::Config(format!("unknown adaptor variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptorConfig {
    pub variant: AdaptorVariant,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub n_shared: usize,
    pub n_pref: usize,
    pub n_item: usize,
}

impl AdaptorConfig {
    pub fn hybrid(input_dim: usize) -> Self {
        Self {
            variant: AdaptorVariant::Hybrid,
            input_dim,
            output_dim: DEFAULT_OUTPUT_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
            n_shared: 2,
            n_pref: 5,
            n_item: 5,
        }
    }

    pub fn mlp(input_dim: usize) -> Self {
        Self {
            variant: AdaptorVariant::Mlp,
            n_shared: 1,
            n_pref: 0,
            n_item: 0,
            ..Self::hybrid(input_dim)
        }
    }

    pub fn moe(input_dim: usize) -> Self {
        Self {
            variant: AdaptorVariant::Moe,
            n_shared: 0,
            ..Self::hybrid(input_dim)
        }
    }

    /// Default counts for `variant`.
    pub fn for_variant(variant: AdaptorVariant, input_dim: usize) -> Self {
        match variant {
            AdaptorVariant::Mlp => Self::mlp(input_dim),
            AdaptorVariant::Moe => Self::moe(input_dim),
            AdaptorVariant::Hybrid => Self::hybrid(input_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("adaptor dimensions must be positive".into()));
        }
        if self.n_shared + self.n_pref == 0 || self.n_shared + self.n_item == 0 {
            return Err(Error::Config(
                "each knowledge kind needs at least one expert".into(),
            ));
        }
        match self.variant {
            AdaptorVariant::Mlp if (self.n_shared, self.n_pref, self.n_item) != (1, 0, 0) => Err(
                Error::Config("mlp adaptor has exactly one shared expert".into()),
            ),
            AdaptorVariant::Moe if self.n_shared != 0 => {
                Err(Error::Config("moe adaptor has no shared experts".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn pool_size(&self, kind: KnowledgeKind) -> usize {
        self.n_shared + self.dedicated(kind)
    }

    fn dedicated(&self, kind: KnowledgeKind) -> usize {
        match kind {
            KnowledgeKind::Preference => self.n_pref,
            KnowledgeKind::ItemFactual => self.n_item,
        }
    }

    /// Checkpoint metadata entries.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        let hidden = self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("adaptor.variant".into(), self.variant.to_string()),
            ("adaptor.m".into(), self.input_dim.to_string()),
            ("adaptor.q".into(), self.output_dim.to_string()),
            ("adaptor.hidden".into(), hidden),
            ("adaptor.n_s".into(), self.n_shared.to_string()),
            ("adaptor.n_p".into(), self.n_pref.to_string()),
            ("adaptor.n_i".into(), self.n_item.to_string()),
        ]
    }

    pub fn from_meta(get: impl Fn(&str) -> Result<String>) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad checkpoint metadata {k}")))
        };
        let hidden = get("adaptor.hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format("bad adaptor.hidden".into())))
            .collect::<Result<_>>()?;
        let cfg = Self {
            variant: get("adaptor.variant")?.parse()?,
            input_dim: num("adaptor.m")?,
            output_dim: num("adaptor.q")?,
            hidden,
            n_shared: num("adaptor.n_s")?,
            n_pref: num("adaptor.n_p")?,
            n_item: num("adaptor.n_i")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which augmented vector a row is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentedRole {
    Reasoning,
    Fact,
}

impl From<KnowledgeKind> for AugmentedRole {
    fn from(k: KnowledgeKind) -> Self {
        match k {
            KnowledgeKind::Preference => AugmentedRole::Reasoning,
            KnowledgeKind::ItemFactual => AugmentedRole::Fact,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedVector {
    pub key: EntityKey,
    pub vector: Vec<f32>,
}

impl AugmentedVector {
    pub fn role(&self) -> AugmentedRole {
        self.key.kind.into()
    }
}

#[derive(Clone, Debug)]
pub struct Adaptor {
    pub config: AdaptorConfig,
    pub shared: Vec<Mlp>,
    pub pref: Vec<Mlp>,
    pub item: Vec<Mlp>,
    pub gate_pref: Option<Linear>,
    pub gate_item: Option<Linear>,
}

impl Adaptor {
    /// Registers parameters under `{prefix}.…` in `store`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, config: AdaptorConfig) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden);
        dims.push(config.output_dim);
        let mut pool = |name: &str, n: usize| -> Result<Vec<Mlp>> {
            (0..n)
                .map(|i| Mlp::new(store, rng, &format!("{prefix}.{name}.{i}"), &dims, false))
                .collect()
        };
        let shared = pool("shared", config.n_shared)?;
        let pref = pool("pref", config.n_pref)?;
        let item = pool("item", config.n_item)?;
        let mut gate = |name: &str, n: usize| -> Result<Option<Linear>> {
            if n > 1 {
                Ok(Some(Linear::new(store, rng, &format!("{prefix}.{name}"), config.input_dim, n)?))
            } else {
                Ok(None)
            }
        };
        let gate_pref = gate("gate_pref", config.pool_size(KnowledgeKind::Preference))?;
        let gate_item = gate("gate_item", config.pool_size(KnowledgeKind::ItemFactual))?;
        Ok(Self {
            config,
            shared,
            pref,
            item,
            gate_pref,
            gate_item,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Shared experts followed by the dedicated experts of `kind`.
    pub fn pool(&self, kind: KnowledgeKind) -> impl Iterator<Item = &Mlp> {
        let dedicated = match kind {
            KnowledgeKind::Preference => &self.pref,
            KnowledgeKind::ItemFactual => &self.item,
        };
        self.shared.iter().chain(dedicated)
    }

    pub fn gate(&self, kind: KnowledgeKind) -> Option<&Linear> {
        match kind {
            KnowledgeKind::Preference => self.gate_pref.as_ref(),
            KnowledgeKind::ItemFactual => self.gate_item.as_ref(),
        }
    }

    /// Maps `x: [n, m]` to `[n, q]` on the tape.
    pub fn forward(&self, g: &mut Graph, x: Var, kind: KnowledgeKind) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape("adaptor input", shape, &[shape.first().copied().unwrap_or(0), self.input_dim()]));
        }
        let experts: Vec<&Mlp> = self.pool(kind).collect();
        let Some(gate) = self.gate(kind) else {
            return experts[0].forward(g, x);
        };
        let logits = gate.forward(g, x)?;
        let weights = g.softmax(logits, 1)?;
        let mut acc: Option<Var> = None;
        for (j, e) in experts.iter().enumerate() {
            let out = e.forward(g, x)?;
            let w = g.slice_last(weights, j, 1)?;
            let term = g.scale_rows(out, w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.expect("pool is non-empty"))
    }

    /// Gate weights for one representation, without a tape.
    pub fn gate_weights(&self, store: &ParamStore, rep: &[f64], kind: KnowledgeKind) -> Result<Vec<f64>> {
        if rep.len() != self.input_dim() {
            return Err(Error::shape("adaptor gate", &[rep.len()], &[self.input_dim()]));
        }
        let Some(gate) = self.gate(kind) else {
            return Ok(vec![1.0]);
        };
        let logits = Mlp {
            layers: vec![gate.clone()],
            relu_output: false,
        }
        .forward_row(store, rep);
        Ok(softmax(&logits))
    }

    /// Augmented vector for one representation, without a tape.
    pub fn forward_row(&self, store: &ParamStore, rep: &[f64], kind: KnowledgeKind) -> Result<Vec<f64>> {
        let weights = self.gate_weights(store, rep, kind)?;
        let mut out = vec![0.0; self.output_dim()];
        for (w, e) in weights.iter().zip(self.pool(kind)) {
            for (o, v) in out.iter_mut().zip(e.forward_row(store, rep)) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Augments every representation, keeping its key.
    pub fn augment_all(&self, store: &ParamStore, reps: &[crate::encoding::KnowledgeRepresentation]) -> Result<Vec<AugmentedVector>> {
        reps.iter()
            .map(|r| {
                let x: Vec<f64> = r.vector.iter().map(|&v| v as f64).collect();
                let y = self.forward_row(store, &x, r.key.kind)?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite augmented vector for {}", r.key)));
                }
                Ok(AugmentedVector {
                    key: r.key.clone(),
                    vector: y.into_iter().map(|v| v as f32).collect(),
                })
            })
            .collect()
    }
}

/// Max-shifted softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
