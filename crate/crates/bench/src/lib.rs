//! Shared fixtures for the criterion benchmarks.

use kar_core::adaptor::AdaptorConfig;
use kar_core::backbones::{AugMode, BackboneConfig, BackboneKind};
use kar_core::dataset::Sample;
use kar_core::encoding::{prestore_augmented, KnowledgeRepresentation, RepresentationCache, DEFAULT_DIM};
use kar_core::pipeline::synthetic::{latent_knowledge_dataset, LatentKnowledgeConfig};
use kar_core::pipeline::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Untrained DIN models at the default sizes plus knowledge caches.
pub struct InferenceFixture {
    pub base: Model,
    pub kar: Model,
    pub samples: Vec<Sample>,
    pub representations: RepresentationCache,
    pub augmented: RepresentationCache,
}

pub fn inference_fixture() -> InferenceFixture {
    let data = latent_knowledge_dataset(&LatentKnowledgeConfig {
        users: 400,
        items: 500,
        rep_dim: DEFAULT_DIM,
        max_history: 30,
        test_fraction: 0.5,
        ..Default::default()
    })
    .expect("fixture dataset");
    let base = Model::new(data.schema.clone(), BackboneConfig::new(BackboneKind::Din, AugMode::None), None, 1)
        .expect("base model");
    let kar = Model::new(
        data.schema.clone(),
        BackboneConfig::new(BackboneKind::Din, AugMode::Both),
        Some(AdaptorConfig::hybrid(DEFAULT_DIM)),
        1,
    )
    .expect("augmented model");
    let reps: Vec<KnowledgeRepresentation> = data
        .representations
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| KnowledgeRepresentation {
            key: k.clone(),
            vector: data.representations.row(i).to_vec(),
        })
        .collect();
    let path = std::env::temp_dir().join(format!("kar-bench-{}.karv", std::process::id()));
    let augmented = prestore_augmented(&kar.augment(&reps).expect("augment"), &path).expect("prestore");
    let _ = std::fs::remove_file(&path);
    InferenceFixture {
        base,
        kar,
        samples: data.test,
        representations: data.representations,
        augmented,
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
