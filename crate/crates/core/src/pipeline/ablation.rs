//! One training run per knowledge mode on a shared split.

use super::metrics::MetricsReport;
use super::model::{train, KnowledgeSource, Model, TrainOptions};
use crate::adaptor::AdaptorConfig;
use crate::backbones::{AugMode, BackboneConfig};
use crate::dataset::{Sample, SampleSchema};
use crate::encoding::RepresentationCache;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AblationSetup<'a> {
    pub schema: &'a SampleSchema,
    /// Its `mode` is overridden per run.
    pub backbone: BackboneConfig,
    pub adaptor: AdaptorConfig,
    pub train: &'a [Sample],
    pub test: &'a [Sample],
    pub representations: Option<&'a RepresentationCache>,
    pub options: TrainOptions,
}

/// Trains a fresh model for `mode`. Runs share nothing but their inputs,
/// so results do not depend on which modes ran before.
pub fn run_mode(setup: &AblationSetup, mode: AugMode) -> Result<MetricsReport> {
    let backbone = BackboneConfig {
        mode,
        ..setup.backbone.clone()
    };
    let knowledge = match (mode, setup.representations) {
        (AugMode::None, _) => KnowledgeSource::None,
        (_, Some(r)) => KnowledgeSource::Representations(r),
        (_, None) => return Err(Error::Input(format!("mode {mode} needs knowledge representations"))),
    };
    let model = Model::new(setup.schema.clone(), backbone, Some(setup.adaptor.clone()), setup.options.seed)?;
    Ok(train(model, setup.train, setup.test, knowledge, &setup.options)?.1)
}

pub fn run_ablation(setup: &AblationSetup, modes: &[AugMode]) -> Result<Vec<MetricsReport>> {
    modes.iter().map(|&m| run_mode(setup, m)).collect()
}
