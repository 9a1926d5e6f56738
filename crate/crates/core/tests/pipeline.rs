use std::path::Path;

use kar_core::adaptor::AdaptorConfig;
use kar_core::backbones::{AugMode, BackboneConfig, BackboneKind};
use kar_core::encoding::RepresentationCache;
use kar_core::nn::{AdamConfig, Checkpoint};
use kar_core::pipeline::synthetic::{
    latent_knowledge_dataset, write_movielens_like, LatentKnowledgeConfig, LatentKnowledgeData, MovieLensLikeConfig,
};
use kar_core::pipeline::*;
use kar_core::{EntityKey, Error, KnowledgeKind};

fn small_latent(seed: u64) -> LatentKnowledgeData {
    latent_knowledge_dataset(&LatentKnowledgeConfig {
        users: 120,
        items: 30,
        interactions_per_user: 12,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn small_backbone(kind: BackboneKind, mode: AugMode) -> BackboneConfig {
    BackboneConfig {
        embed_dim: 4,
        mlp: vec![16, 8],
        attention: vec![8],
        aug_dim: 4,
        ..BackboneConfig::new(kind, mode)
    }
}

fn small_adaptor(m: usize) -> AdaptorConfig {
    AdaptorConfig {
        output_dim: 4,
        hidden: vec![8],
        n_shared: 1,
        n_pref: 2,
        n_item: 2,
        ..AdaptorConfig::hybrid(m)
    }
}

fn opts(epochs: usize) -> TrainOptions {
    TrainOptions {
        epochs,
        batch_size: 64,
        adam: AdamConfig {
            lr: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn small_corpus(dir: &Path, users: usize) -> RunConfig {
    let data = dir.join("data");
    write_movielens_like(
        &data,
        &MovieLensLikeConfig {
            users,
            movies: 150,
            mean_extra_ratings: 10.0,
            ..Default::default()
        },
    )
    .unwrap();
    RunConfig {
        data_dir: data,
        work_dir: dir.join("run"),
        embed_dim: 8,
        aug_dim: 8,
        encoder_dim: 16,
        mlp: vec![32, 16],
        attention: vec![16],
        adaptor_hidden: vec![16, 8],
        epochs: 1,
        batch_size: 64,
        ..RunConfig::default()
    }
}

#[test]
fn one_epoch_on_a_thousand_samples_lowers_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        sample_limit: 1000,
        mode: AugMode::None,
        ..small_corpus(dir.path(), 60)
    };
    run_stage(&cfg, Stage::PrepareData).unwrap();
    let (_, report) = train_stage(&cfg).unwrap();
    let l = &report.curve[0].batch_losses;
    let n = l.len().min(3);
    let head = l[..n].iter().sum::<f64>() / n as f64;
    let tail = l[l.len() - n..].iter().sum::<f64>() / n as f64;
    assert!(tail < head, "loss {head} -> {tail}");
    assert!((0.0..=1.0).contains(&report.auc) && report.logloss >= 0.0);
    assert!(cfg.checkpoint_path(AugMode::None).exists());
    assert!(cfg.manifest_path(AugMode::None).exists());
}

#[test]
fn missing_representation_cache_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        sample_limit: 500,
        mode: AugMode::Both,
        ..small_corpus(dir.path(), 20)
    };
    run_stage(&cfg, Stage::PrepareData).unwrap();
    match train_stage(&cfg) {
        Err(Error::NotFound(msg)) => assert!(msg.contains("representations.karv"), "{msg}"),
        other => panic!("expected NotFound, got {other:?}"),
    }
}

#[test]
fn train_without_prepared_data_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        work_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let err = train_stage(&cfg).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn full_stage_chain_with_stub_llm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        sample_limit: 800,
        ..small_corpus(dir.path(), 30)
    };
    let lines = run_pipeline(&cfg).unwrap();
    assert_eq!(lines.len(), Stage::ALL.len());
    for p in [
        cfg.factors_path(),
        cfg.prompts_path(),
        cfg.knowledge_path(),
        cfg.representations_path(),
        cfg.checkpoint_path(AugMode::Both),
        cfg.augmented_path(),
        cfg.report_path(),
    ] {
        assert!(p.exists(), "{} missing", p.display());
    }
    // A second generation pass finds every prompt already answered.
    let again = gen_knowledge(&cfg).unwrap();
    assert_eq!((again.reused, again.generated), (again.prompts, 0));

    // Exported vectors are the adaptor applied to the stored representations.
    let model = Model::load(&cfg.checkpoint_path(AugMode::Both)).unwrap();
    let reps = RepresentationCache::load(cfg.representations_path()).unwrap();
    let aug = RepresentationCache::load(cfg.augmented_path()).unwrap();
    assert_eq!(aug.len(), reps.len());
    let adaptor = model.adaptor.as_ref().unwrap();
    for (i, key) in reps.keys().iter().enumerate().take(20) {
        let x: Vec<f64> = reps.row(i).iter().map(|&v| v as f64).collect();
        let want = adaptor.forward_row(&model.store, &x, key.kind).unwrap();
        let got = aug.get(key).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert_eq!(*a, *b as f32);
        }
    }

    // Bench and ablation run on the same artifacts.
    let base_cfg = RunConfig {
        mode: AugMode::None,
        ..cfg.clone()
    };
    train_stage(&base_cfg).unwrap();
    let bench_cfg = RunConfig {
        bench_batches: 3,
        bench_warmup: 1,
        bench_batch_size: 32,
        ..cfg.clone()
    };
    let (rows, table) = bench(&bench_cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(table.contains("kar_prestored"));
    let (reports, table) = ablate(&cfg).unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn bench_requires_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        work_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    match bench(&cfg) {
        Err(Error::NotFound(msg)) => assert!(msg.contains("model-din-none.karc"), "{msg}"),
        other => panic!("expected NotFound, got {other:?}"),
    }
}

#[test]
fn same_seed_same_metrics() {
    let d = small_latent(3);
    let run = || {
        let model = Model::new(
            d.schema.clone(),
            small_backbone(BackboneKind::Din, AugMode::Both),
            Some(small_adaptor(d.representations.dim())),
            11,
        )
        .unwrap();
        train(model, &d.train, &d.test, KnowledgeSource::Representations(&d.representations), &opts(2))
            .unwrap()
            .1
    };
    let (a, b) = (run(), run());
    assert_eq!(a.auc.to_bits(), b.auc.to_bits());
    assert_eq!(a.logloss.to_bits(), b.logloss.to_bits());
    assert_eq!(a.curve[0].batch_losses, b.curve[0].batch_losses);
}

#[test]
fn ablation_shares_the_test_split_and_is_order_independent() {
    let d = small_latent(4);
    let setup = AblationSetup {
        schema: &d.schema,
        backbone: small_backbone(BackboneKind::Dcnv2, AugMode::None),
        adaptor: small_adaptor(d.representations.dim()),
        train: &d.train,
        test: &d.test,
        representations: Some(&d.representations),
        options: opts(1),
    };
    let forward = run_ablation(&setup, &AugMode::ALL).unwrap();
    assert_eq!(forward.len(), 4);
    assert!(forward.iter().all(|r| r.test_hash == forward[0].test_hash));
    let mut reversed = run_ablation(&setup, &[AugMode::Both, AugMode::Reasoning, AugMode::Fact, AugMode::None]).unwrap();
    reversed.reverse();
    for (a, b) in forward.iter().zip(&reversed) {
        assert_eq!(a.mode, b.mode);
        assert_eq!(a.auc.to_bits(), b.auc.to_bits());
        assert_eq!(a.logloss.to_bits(), b.logloss.to_bits());
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let d = small_latent(5);
    let cfg = AdamConfig::default();
    let knowledge = KnowledgeSource::Representations(&d.representations);
    let batches: Vec<Vec<&kar_core::dataset::Sample>> = d.train.chunks(32).take(8).map(|c| c.iter().collect()).collect();
    let fresh = || {
        Model::new(
            d.schema.clone(),
            small_backbone(BackboneKind::Din, AugMode::Both),
            Some(small_adaptor(d.representations.dim())),
            7,
        )
        .unwrap()
    };

    let mut straight = Trainer::new(fresh(), cfg.clone());
    for b in &batches {
        straight.step(b, knowledge).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.karc");
    let mut first = Trainer::new(fresh(), cfg.clone());
    for b in &batches[..3] {
        first.step(b, knowledge).unwrap();
    }
    first.checkpoint().save(&path).unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::load(&path).unwrap(), cfg).unwrap();
    for b in &batches[3..] {
        resumed.step(b, knowledge).unwrap();
    }
    for (id, name, t) in straight.model.store.iter() {
        let other = resumed.model.store.get(id);
        assert_eq!(t.data(), other.data(), "{name} diverged after resume");
    }
}

#[test]
fn nan_loss_aborts_and_keeps_last_good_checkpoint() {
    let d = small_latent(6);
    let q = 4;
    let mut aug = RepresentationCache::new(q);
    for s in d.train.iter().chain(&d.test) {
        aug.insert(EntityKey::item(s.item_id.as_str()), &[0.1; 4]).unwrap();
        aug.insert(EntityKey::user(s.user_id.as_str()), &[0.2; 4]).unwrap();
    }
    // Every training user is poisoned, so the first batch fails.
    for s in &d.train {
        aug.insert(EntityKey::new(s.user_id.as_str(), KnowledgeKind::Preference), &[f32::NAN; 4]).unwrap();
    }
    let model = Model::new(d.schema.clone(), small_backbone(BackboneKind::DeepFm, AugMode::Both), None, 1).unwrap();
    let before = model.store.clone();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("last-good.karc");
    let o = TrainOptions {
        checkpoint_on_failure: Some(ck.clone()),
        ..opts(1)
    };
    let err = train(model, &d.train, &d.test, KnowledgeSource::Augmented(&aug), &o).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err:?}");
    assert_eq!(err.exit_code(), 4);
    let restored = Model::load(&ck).unwrap();
    for (id, name, t) in before.iter() {
        assert_eq!(t.data(), restored.store.get(id).data(), "{name}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let d = small_latent(7);
    let model = Model::new(
        d.schema.clone(),
        small_backbone(BackboneKind::Dcnv2, AugMode::Reasoning),
        Some(small_adaptor(d.representations.dim())),
        2,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.karc");
    let m = dir.path().join("m.json");
    model.save(&p, Some(&m)).unwrap();
    let back = Model::load(&p).unwrap();
    let k = KnowledgeSource::Representations(&d.representations);
    assert_eq!(model.predict(&d.test, k, 50).unwrap(), back.predict(&d.test, k, 50).unwrap());
    let manifest: ModelManifest = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
    assert_eq!(manifest.backbone, model.backbone.config);
    assert_eq!(manifest.adaptor_prefix.as_deref(), Some(ADAPTOR_PREFIX));
}

#[test]
fn prestored_knowledge_matches_inline_adaptor() {
    let d = small_latent(8);
    let model = Model::new(
        d.schema.clone(),
        small_backbone(BackboneKind::Din, AugMode::Both),
        Some(small_adaptor(d.representations.dim())),
        3,
    )
    .unwrap();
    let reps: Vec<_> = d
        .representations
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| kar_core::encoding::KnowledgeRepresentation {
            key: k.clone(),
            vector: d.representations.row(i).to_vec(),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let aug = kar_core::encoding::prestore_augmented(&model.augment(&reps).unwrap(), dir.path().join("a.karv")).unwrap();
    let inline = model.predict(&d.test, KnowledgeSource::Representations(&d.representations), 64).unwrap();
    let pre = model.predict(&d.test, KnowledgeSource::Augmented(&aug), 64).unwrap();
    // Prestored vectors are f32, so agreement is to single precision.
    for (a, b) in inline.iter().zip(&pre) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn bench_orders_variants() {
    let d = small_latent(9);
    let base = Model::new(d.schema.clone(), small_backbone(BackboneKind::Din, AugMode::None), None, 1).unwrap();
    let kar = Model::new(
        d.schema.clone(),
        small_backbone(BackboneKind::Din, AugMode::Both),
        Some(AdaptorConfig {
            output_dim: 4,
            ..AdaptorConfig::hybrid(d.representations.dim())
        }),
        1,
    )
    .unwrap();
    let reps: Vec<_> = d
        .representations
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| kar_core::encoding::KnowledgeRepresentation {
            key: k.clone(),
            vector: d.representations.row(i).to_vec(),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let aug = kar_core::encoding::prestore_augmented(&kar.augment(&reps).unwrap(), dir.path().join("a.karv")).unwrap();
    let o = BenchOptions {
        batches: 20,
        warmup: 3,
        batch_size: 128,
    };
    let rows = bench_inference(&base, &kar, &d.test, &d.representations, &aug, &o).unwrap();
    let t = |v: BenchVariant| rows.iter().find(|r| r.variant == v.to_string()).unwrap();
    let (b, p, w) = (t(BenchVariant::Base), t(BenchVariant::KarPrestored), t(BenchVariant::KarWithAdaptor));
    assert!(rows.iter().all(|r| r.batches == 20 && r.std_seconds >= 0.0));
    // The in-line adaptor runs seven experts per kind; its cost dwarfs the noise.
    assert!(w.min_seconds > p.min_seconds, "{rows:?}");
    assert!(b.min_seconds <= p.min_seconds + 3.0 * p.std_seconds, "{rows:?}");
    assert!(matches!(
        bench_inference(&kar, &kar, &d.test, &d.representations, &aug, &o),
        Err(Error::Input(_))
    ));
}

#[test]
fn grid_search_trains_each_config() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        sample_limit: 600,
        mode: AugMode::None,
        ..small_corpus(dir.path(), 20)
    };
    run_stage(&base, Stage::PrepareData).unwrap();
    let grid: Vec<RunConfig> = [1e-3, 1e-2]
        .iter()
        .map(|&lr| RunConfig { lr, ..base.clone() })
        .collect();
    let reports = grid_search(&grid).unwrap();
    assert_eq!(reports.len(), 2);
    assert_ne!(reports[0].curve[0].batch_losses, reports[1].curve[0].batch_losses);
    let all: Vec<MetricsReport> = read_jsonl(&base.report_path()).unwrap();
    assert_eq!(all.len(), 2);
}
