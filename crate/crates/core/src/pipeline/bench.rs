//! Per-batch inference timing for the base backbone and the two ways of
//! serving an augmented one.

use std::fmt;
use std::time::Instant;

use super::model::{KnowledgeRows, KnowledgeSource, Model};
use super::report::TimingRecord;
use crate::backbones::{AugMode, Batch};
use crate::dataset::Sample;
use crate::encoding::RepresentationCache;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchVariant {
    Base,
    /// Representations pass through the adaptor on every request.
    KarWithAdaptor,
    /// Augmented vectors read from the prestore.
    KarPrestored,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 3] = [BenchVariant::Base, BenchVariant::KarWithAdaptor, BenchVariant::KarPrestored];
}

impl fmt::Display for BenchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchVariant::Base => "base",
            BenchVariant::KarWithAdaptor => "kar_with_adaptor",
            BenchVariant::KarPrestored => "kar_prestored",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub batches: usize,
    pub warmup: usize,
    pub batch_size: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batches: 50,
            warmup: 5,
            batch_size: 256,
        }
    }
}

struct Prepared {
    batch: Batch,
    reps: KnowledgeRows,
    augmented: KnowledgeRows,
}

fn summarize(variant: BenchVariant, times: &[f64], batch_size: usize) -> TimingRecord {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    TimingRecord {
        variant: variant.to_string(),
        batches: times.len(),
        batch_size,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
        min_seconds: times.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Times one forward pass per batch for each variant. Batches, feature
/// indices and knowledge rows are resolved before the clock starts, and the
/// variants are interleaved batch by batch in a rotating order so drift in
/// machine load is shared between them. Runs on the calling thread.
pub fn bench_inference(
    base: &Model,
    kar: &Model,
    samples: &[Sample],
    representations: &RepresentationCache,
    augmented: &RepresentationCache,
    opts: &BenchOptions,
) -> Result<Vec<TimingRecord>> {
    if base.mode() != AugMode::None {
        return Err(Error::Input(format!("base model must use mode none, not {}", base.mode())));
    }
    if kar.mode() == AugMode::None || kar.adaptor.is_none() {
        return Err(Error::Input("augmented model needs an adaptor and a knowledge mode".into()));
    }
    if samples.is_empty() || opts.batches == 0 || opts.batch_size == 0 {
        return Err(Error::Input("benchmark needs samples and a positive batch count".into()));
    }
    let total = opts.batches + opts.warmup;
    let prepared: Vec<Prepared> = (0..total)
        .map(|b| {
            let refs: Vec<&Sample> = (0..opts.batch_size)
                .map(|i| &samples[(b * opts.batch_size + i) % samples.len()])
                .collect();
            Ok(Prepared {
                batch: Batch::from_samples(refs.iter().copied())?,
                reps: KnowledgeSource::Representations(representations).rows(&refs).expect("source set"),
                augmented: KnowledgeSource::Augmented(augmented).rows(&refs).expect("source set"),
            })
        })
        .collect::<Result<_>>()?;
    let mut times = vec![Vec::with_capacity(opts.batches); 3];
    for (b, p) in prepared.iter().enumerate() {
        for r in 0..3 {
            let v = (b + r) % 3;
            let t = Instant::now();
            let out = match BenchVariant::ALL[v] {
                BenchVariant::Base => base.forward_batch(&p.batch, None)?,
                BenchVariant::KarWithAdaptor => kar.forward_batch(&p.batch, Some(&p.reps))?,
                BenchVariant::KarPrestored => kar.forward_batch(&p.batch, Some(&p.augmented))?,
            };
            let elapsed = t.elapsed().as_secs_f64();
            std::hint::black_box(out);
            if b >= opts.warmup {
                times[v].push(elapsed);
            }
        }
    }
    Ok(BenchVariant::ALL
        .iter()
        .zip(&times)
        .map(|(&v, t)| summarize(v, t, opts.batch_size))
        .collect())
}
