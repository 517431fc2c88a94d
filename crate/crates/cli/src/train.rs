use std::collections::{BTreeMap, BTreeSet};

use deconf::data::{
    compact_confound_levels, make_speaker_independent_folds, partition_by_confound, speaker_holdouts,
    train_validation_plan, Role, Sample, SplitPlan,
};
use deconf::features::EmbeddingTable;
use deconf::model::{save_checkpoint, TrainingMode, VariantSpec};
use deconf::train::{
    grid_search, is_chance, ledger_line, probe_confound, select_adversarial_checkpoint, train_run, LedgerEntry,
    RunRecord,
};
use deconf::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::io::{
    ensure_dir, file_stem, write_jsonl, write_splits, write_text, SplitIds, CONFIG_FILE, EVENTS_FILE, LEDGER_FILE,
};
use crate::prepare::{input_dims, level_name, load_corpus, relabel_confound, Corpus};

/// One source/target arrangement: the samples it sees and their roles.
#[derive(Debug, Clone)]
pub struct Context {
    pub group: String,
    pub samples: Vec<Sample>,
    pub plan: SplitPlan,
    pub confound_classes: usize,
}

impl Context {
    fn split_ids(&self) -> SplitIds {
        let ids = |r| self.plan.select(&self.samples, r).iter().map(|s| s.id.clone()).collect();
        SplitIds {
            train: ids(Role::Train),
            validation: ids(Role::Validation),
            test: ids(Role::Test),
        }
    }
}

fn speakers_of(plan: &SplitPlan, samples: &[Sample], role: Role) -> BTreeSet<String> {
    plan.select(samples, role).iter().map(|s| s.speaker.clone()).collect()
}

fn cross_validation_contexts(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<Context>> {
    let x = &cfg.experiment;
    let plans = make_speaker_independent_folds(&corpus.utterances, x.folds, cfg.seed)?;
    let mut out = Vec::new();
    for plan in plans {
        if !x.fold_subset.is_empty() && !x.fold_subset.contains(&plan.fold) {
            continue;
        }
        let train_speakers = speakers_of(&plan, &corpus.samples, Role::Train);
        out.push(Context {
            group: format!("fold:{}", plan.fold),
            samples: relabel_confound(corpus, &train_speakers)?,
            plan,
            confound_classes: corpus.confound_classes,
        });
    }
    Ok(out)
}

/// Source roles from a speaker-disjoint 80:20 plan, target as test.
fn source_target_context(group: String, source: Vec<Sample>, target: Vec<Sample>, seed: u64) -> Result<Context> {
    let mut source = source;
    let levels = compact_confound_levels(&mut source);
    let mut plan = train_validation_plan(&source, seed)?;
    for s in &target {
        if plan.assignment.insert(s.id.clone(), Role::Test).is_some() {
            return Err(Error::Data(format!("sample id {} appears in source and target", s.id)));
        }
    }
    let mut samples = source;
    samples.extend(target);
    Ok(Context {
        group,
        samples,
        plan,
        confound_classes: levels.len(),
    })
}

fn partition_contexts(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<Context>> {
    let x = &cfg.experiment;
    let everyone: BTreeSet<String> = corpus.utterances.iter().map(|u| u.speaker_id.clone()).collect();
    let samples = relabel_confound(corpus, &everyone)?;
    let mut out = Vec::new();
    for &level in &x.held_out_levels {
        if level >= corpus.confound_classes {
            return Err(Error::Config(format!(
                "held-out level {level} out of range for {} confound classes",
                corpus.confound_classes
            )));
        }
        let (source, target) = partition_by_confound(&samples, level)?;
        let name = format!("partition:{}", level_name(corpus.confound_classes, level));
        if x.leave_one_speaker_out {
            for (spk, src, tgt) in speaker_holdouts(&source, &target) {
                out.push(source_target_context(format!("{name}:{spk}"), src, tgt, cfg.seed)?);
            }
        } else {
            out.push(source_target_context(name, source, target, cfg.seed)?);
        }
    }
    Ok(out)
}

fn cross_corpus_contexts(cfg: &ExperimentConfig, corpus: &Corpus, target: &Corpus) -> Result<Vec<Context>> {
    let everyone: BTreeSet<String> = corpus.utterances.iter().map(|u| u.speaker_id.clone()).collect();
    let source = relabel_confound(corpus, &everyone)?;
    let name = cfg.experiment.target_name.clone().unwrap_or_else(|| {
        target
            .utterances
            .first()
            .map_or_else(|| "target".into(), |u| u.corpus.clone())
    });
    source_target_context(format!("cross:{name}"), source, target.samples.clone(), cfg.seed)
        .map(|c| vec![c])
}

/// Base spec of one mode for a context, with dimensions from the data.
fn base_spec(cfg: &ExperimentConfig, mode: TrainingMode, ctx: &Context) -> Result<VariantSpec> {
    let v = &cfg.variant;
    let mut spec = VariantSpec::new(mode, v.emotion_target, v.modality);
    let (a, l) = input_dims(&ctx.samples);
    if let Some(a) = a {
        spec.acoustic_dim = a;
    }
    if let Some(l) = l {
        spec.lexical_dim = l;
    }
    if ctx.confound_classes < 2 {
        if mode == TrainingMode::Adversarial {
            return Err(Error::Config(format!(
                "{}: source has a single confound level, nothing to be adversarial against",
                ctx.group
            )));
        }
        spec.confound_classes = 2;
    } else {
        spec.confound_classes = ctx.confound_classes;
    }
    if let Some(s) = &cfg.spec {
        spec.acoustic = spec.acoustic.map(|_| s.acoustic);
        spec.lexical = spec.lexical.map(|_| s.lexical);
        spec.head = s.head;
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
struct Task {
    ctx: usize,
    seed: u64,
    candidates: Vec<VariantSpec>,
}

struct Outcome {
    entry: LedgerEntry,
    record: RunRecord,
}

#[derive(Serialize)]
struct RunEvent<'a> {
    event: &'static str,
    group: &'a str,
    label: &'a str,
    seed: u64,
    fingerprint: &'a str,
    best_epoch: usize,
    epochs: usize,
    admissible: Option<bool>,
    test_emotion_uar: Option<f64>,
}

fn run_task(cfg: &ExperimentConfig, ctx: &Context, task: &Task, config_hash: &str) -> Result<Outcome> {
    let splits = ctx.plan.splits(&ctx.samples);
    let records = task
        .candidates
        .iter()
        .map(|spec| train_run(spec, &splits, &cfg.train, task.seed))
        .collect::<Result<Vec<_>>>()?;
    let tol = cfg.train.chance_tolerance;
    let (record, admissible) = if task.candidates[0].is_adversarial() {
        match select_adversarial_checkpoint(&records, tol) {
            Ok(r) => (r.clone(), Some(true)),
            Err(e @ Error::NoAdmissibleCheckpoint(_)) => {
                if cfg.experiment.require_admissible {
                    return Err(e);
                }
                log::warn!("{} seed {}: {e}", ctx.group, task.seed);
                let gap = |r: &RunRecord| {
                    (r.best().val_confound_uar.unwrap_or(f64::NAN) - 1.0 / r.spec.confound_classes as f64).abs()
                };
                let nearest = records
                    .iter()
                    .min_by(|a, b| gap(a).total_cmp(&gap(b)))
                    .expect("at least one candidate");
                (nearest.clone(), Some(false))
            }
            Err(e) => return Err(e),
        }
    } else {
        (records.into_iter().next().expect("one candidate"), None)
    };
    let checkpoint = cfg.experiment.save_checkpoints.then(|| {
        format!(
            "checkpoints/{}-{}-s{}.ckpt",
            file_stem(&ctx.group),
            file_stem(&record.spec.label()),
            task.seed
        )
    });
    let mut entry = LedgerEntry::from_record(&record, config_hash, &ctx.group, checkpoint)?;
    entry.admissible = admissible;
    if cfg.experiment.probe {
        entry.probe = Some(probe_confound(
            &record.params,
            &splits,
            &cfg.train,
            task.seed,
            record.spec.confound_classes,
        )?);
    }
    if let (Some(true), Some(u)) = (admissible, record.best().val_confound_uar) {
        debug_assert!(is_chance(u, record.spec.confound_classes, tol));
    }
    Ok(Outcome { entry, record })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Builds the contexts an experiment config asks for.
pub fn build_contexts(cfg: &ExperimentConfig, embeddings: Option<&EmbeddingTable>) -> Result<Vec<Context>> {
    let v = &cfg.variant;
    let manifest = cfg.data.manifest.as_ref().expect("validated");
    let corpus = load_corpus(manifest, v.emotion_target, v.modality, embeddings, cfg.data.duration_filter)?;
    match cfg.experiment.kind {
        ExperimentKind::CrossValidation => cross_validation_contexts(cfg, &corpus),
        ExperimentKind::Partition => partition_contexts(cfg, &corpus),
        ExperimentKind::CrossCorpus => {
            let t = cfg.experiment.target_manifest.as_ref().expect("validated");
            let target = load_corpus(t, v.emotion_target, v.modality, embeddings, cfg.data.duration_filter)?;
            cross_corpus_contexts(cfg, &corpus, &target)
        }
    }
}

/// Trains every context × mode × seed, writing the run ledger, split ids,
/// events, the resolved config and (optionally) checkpoints.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate_for_training()?;
    if cfg.experiment.probe && cfg.experiment.kind != ExperimentKind::CrossValidation {
        return Err(Error::Config("the confound probe needs cross-validation splits".into()));
    }
    let out = cfg.out_dir()?.to_path_buf();
    let config_hash = cfg.hash();
    let embeddings = match (&cfg.data.embeddings, cfg.variant.modality.uses_lexical()) {
        (Some(p), true) => Some(EmbeddingTable::load(p)?),
        _ => None,
    };
    let contexts = build_contexts(cfg, embeddings.as_ref())?;
    let pool = thread_pool(cfg.jobs)?;

    let mut candidates_by: Vec<(usize, TrainingMode, Vec<VariantSpec>)> = Vec::new();
    for (i, ctx) in contexts.iter().enumerate() {
        for &mode in &cfg.variant.modes {
            let base = base_spec(cfg, mode, ctx)?;
            let candidates = if cfg.spec.is_some() {
                match mode {
                    TrainingMode::Normal => vec![base],
                    TrainingMode::Adversarial => cfg
                        .train
                        .lambda_grid
                        .iter()
                        .map(|&l| VariantSpec {
                            lambda: Some(l),
                            ..base.clone()
                        })
                        .collect(),
                }
            } else {
                Vec::new()
            };
            candidates_by.push((i, mode, candidates));
        }
    }
    if let Some(grid) = &cfg.grid {
        let chosen = pool.install(|| {
            candidates_by
                .par_iter()
                .map(|(i, mode, _)| {
                    let ctx = &contexts[*i];
                    let base = base_spec(cfg, *mode, ctx)?;
                    let outcome = grid_search(&base, grid, &ctx.plan.splits(&ctx.samples), &cfg.train)?;
                    log::info!("{} {:?}: grid picked {}", ctx.group, mode, outcome.best.fingerprint());
                    Ok(outcome.best)
                })
                .collect::<Vec<Result<VariantSpec>>>()
        });
        for ((_, _, c), best) in candidates_by.iter_mut().zip(chosen) {
            *c = vec![best?];
        }
    }
    for (_, _, c) in &candidates_by {
        for s in c {
            s.validate()?;
        }
    }

    let tasks: Vec<Task> = candidates_by
        .iter()
        .flat_map(|(i, _, c)| {
            cfg.train.seeds.iter().map(move |&seed| Task {
                ctx: *i,
                seed,
                candidates: c.clone(),
            })
        })
        .collect();
    let results = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| run_task(cfg, &contexts[t.ctx], t, &config_hash))
            .collect::<Vec<Result<Outcome>>>()
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;

    ensure_dir(&out)?;
    if cfg.experiment.save_checkpoints {
        ensure_dir(&out.join("checkpoints"))?;
        for o in &outcomes {
            let rel = o.entry.checkpoint.as_ref().expect("checkpoint path set");
            save_checkpoint(&o.record.params, out.join(rel))?;
        }
    }
    let mut ledger = String::new();
    let mut events = Vec::new();
    for o in &outcomes {
        ledger.push_str(&ledger_line(&o.entry)?);
        ledger.push('\n');
        events.push(RunEvent {
            event: "run",
            group: &o.entry.group,
            label: &o.entry.label,
            seed: o.entry.seed,
            fingerprint: &o.entry.fingerprint,
            best_epoch: o.entry.best_epoch,
            epochs: o.entry.history.len(),
            admissible: o.entry.admissible,
            test_emotion_uar: o.entry.test_emotion_uar,
        });
    }
    let splits: BTreeMap<String, SplitIds> = contexts.iter().map(|c| (c.group.clone(), c.split_ids())).collect();
    write_splits(&out, &splits)?;
    write_jsonl(&out.join(EVENTS_FILE), &events)?;
    let mut resolved = serde_json::to_value(cfg)?;
    resolved["config_hash"] = serde_json::Value::String(config_hash.clone());
    write_text(&out.join(CONFIG_FILE), &serde_json::to_string_pretty(&resolved)?)?;
    write_text(&out.join(LEDGER_FILE), &ledger)?;
    Ok(format!(
        "trained {} runs over {} contexts; ledger {} (config {})",
        outcomes.len(),
        contexts.len(),
        out.join(LEDGER_FILE).display(),
        &config_hash[..12]
    ))
}
