use std::collections::BTreeSet;

use deconf::data::{
    assign_labels, generate_synthetic_corpus, make_speaker_independent_folds, train_validation_plan, FeatureSource,
    Sample, Splits, SyntheticConfig, STRESS_CENTER,
};
use deconf::eval::{cross_domain_eval, TransferMode};
use deconf::model::{
    build_variant, load_checkpoint, load_checkpoint_unchecked, save_checkpoint, BranchHyper, EmotionTarget, HeadHyper,
    Modality, TrainingMode, VariantSpec,
};
use deconf::train::{probe_confound, train_run, TrainConfig};
use deconf::Error;

fn samples(cfg: &SyntheticConfig) -> Vec<Sample> {
    let corpus = generate_synthetic_corpus(cfg).unwrap();
    let stress = (cfg.confound_priors.len() == 3).then_some(STRESS_CENTER);
    let labels = assign_labels(&corpus.utterances, EmotionTarget::Activation, stress).unwrap();
    corpus
        .utterances
        .iter()
        .zip(labels)
        .map(|(u, l)| Sample {
            id: u.id.clone(),
            speaker: u.speaker_id.clone(),
            session: u.session_id.clone(),
            duration_s: u.duration_s,
            tokens: u.tokens.clone(),
            acoustic: match &u.acoustic {
                Some(FeatureSource::Inline(t)) => Some(t.clone()),
                _ => None,
            },
            lexical: None,
            emotion: l.emotion,
            confound: l.confound,
        })
        .collect()
}

fn small_spec(mode: TrainingMode, confound_classes: usize) -> VariantSpec {
    let mut spec = VariantSpec::new(mode, EmotionTarget::Activation, Modality::Acoustic);
    spec.acoustic = Some(BranchHyper {
        conv_layers: 1,
        kernel_width: 2,
        conv_width: 8,
        pool_width: 2,
        gru_layers: 1,
        gru_width: 8,
    });
    spec.head = HeadHyper {
        dense_layers: 1,
        dense_width: 8,
    };
    spec.confound_classes = confound_classes;
    spec
}

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 8,
        patience: 3,
        seeds: vec![0],
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(TrainingMode::Adversarial, 3);
    let params = build_variant(&spec, 4).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path, &spec).unwrap();
    assert_eq!(back, params);
    let first = std::fs::read(&path).unwrap();
    save_checkpoint(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let other = VariantSpec {
        lambda: Some(0.3),
        ..spec.clone()
    };
    assert!(matches!(load_checkpoint(&path, &other), Err(Error::FingerprintMismatch { .. })));
    assert_eq!(load_checkpoint_unchecked(&path).unwrap(), params);

    let mut bytes = first.clone();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path, &spec).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path, &spec).is_err());
}

#[test]
fn transfer_on_the_test_split_reproduces_in_domain_uar() {
    let all = samples(&SyntheticConfig {
        speakers: 15,
        utterances_per_speaker: 12,
        seed: 21,
        ..SyntheticConfig::default()
    });
    let plan = &make_speaker_independent_folds(&all, 5, 21).unwrap()[0];
    let splits = plan.splits(&all);
    assert!(splits.is_speaker_disjoint());
    let cfg = quick();
    let normal = train_run(&small_spec(TrainingMode::Normal, 3), &splits, &cfg, 0).unwrap();
    let adv = train_run(&small_spec(TrainingMode::Adversarial, 3), &splits, &cfg, 0).unwrap();

    let target: Vec<Sample> = splits.test.iter().map(|s| (*s).clone()).collect();
    let seen: BTreeSet<String> = splits.train.iter().chain(&splits.validation).map(|s| s.id.clone()).collect();
    let report = cross_domain_eval(
        &[(&normal.params, 0), (&adv.params, 0)],
        "fold:0",
        "fold:0 test",
        &target,
        &seen,
        TransferMode::InDomain,
    )
    .unwrap();
    assert_eq!(report.normal.run_uar, vec![normal.test.emotion_uar().unwrap()]);
    assert_eq!(report.adversarial.run_uar, vec![adv.test.emotion_uar().unwrap()]);
    assert_eq!(report.delta, report.adversarial.mean_uar - report.normal.mean_uar);
    assert_eq!(report.target_samples, target.len());

    // Any overlap with training data is refused.
    let leaked: Vec<Sample> = splits.train.iter().take(2).map(|s| (*s).clone()).collect();
    let err = cross_domain_eval(&[(&normal.params, 0), (&adv.params, 0)], "s", "t", &leaked, &seen, TransferMode::CrossCorpus)
        .unwrap_err();
    assert!(err.to_string().contains("used in training"), "{err}");

    // So is a target that cannot feed the model.
    let mut bare = target.clone();
    bare[0].acoustic = None;
    let err = cross_domain_eval(&[(&normal.params, 0), (&adv.params, 0)], "s", "t", &bare, &seen, TransferMode::CrossCorpus)
        .unwrap_err();
    assert!(matches!(err, Error::ModalityMismatch(_)), "{err}");
}

#[test]
fn probe_is_at_chance_without_confound_signal() {
    let all = samples(&SyntheticConfig {
        speakers: 40,
        utterances_per_speaker: 15,
        rho: 0.0,
        acoustic_shift: 0.0,
        lexical_shift: 0.0,
        seed: 5,
        ..SyntheticConfig::default()
    });
    let plan = &make_speaker_independent_folds(&all, 5, 5).unwrap()[0];
    let splits = plan.splits(&all);
    let cfg = quick();
    let mut uars = Vec::new();
    for seed in 0..3 {
        let r = train_run(&small_spec(TrainingMode::Normal, 3), &splits, &cfg, seed).unwrap();
        uars.push(probe_confound(&r.params, &splits, &cfg, seed, 3).unwrap().test_uar);
    }
    let mean = uars.iter().sum::<f64>() / uars.len() as f64;
    assert!((mean - 1.0 / 3.0).abs() <= 0.05, "probe UAR {uars:?}");
}

#[test]
fn binary_confound_trains_adversarially() {
    let all = samples(&SyntheticConfig {
        speakers: 10,
        utterances_per_speaker: 12,
        confound_priors: vec![0.5, 0.5],
        seed: 8,
        ..SyntheticConfig::default()
    });
    let plan = train_validation_plan(&all, 8).unwrap();
    let mut splits: Splits<'_> = plan.splits(&all);
    splits.test = splits.validation.clone();
    let r = train_run(&small_spec(TrainingMode::Adversarial, 2), &splits, &quick(), 0).unwrap();
    assert_eq!(r.test.confound_probs.as_ref().unwrap()[0].len(), 2);
    assert!(r.best().val_confound_uar.is_some());
}

#[test]
fn training_is_reproducible() {
    let all = samples(&SyntheticConfig {
        speakers: 8,
        utterances_per_speaker: 10,
        seed: 2,
        ..SyntheticConfig::default()
    });
    let plan = train_validation_plan(&all, 2).unwrap();
    let splits = plan.splits(&all);
    let spec = small_spec(TrainingMode::Adversarial, 3);
    let a = train_run(&spec, &splits, &quick(), 3).unwrap();
    let b = train_run(&spec, &splits, &quick(), 3).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let c = train_run(&spec, &splits, &quick(), 4).unwrap();
    assert_ne!(a.params, c.params);
}
