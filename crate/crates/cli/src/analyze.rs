use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deconf::data::{filter_by_duration, read_manifest};
use deconf::eval::{
    aps, aps_correlation_report, confusion_delta, merge_speaker_holdouts, render_transfer_table, uar_report,
    ConfusionMatrix, CorrelationResult, TargetRun, TransferMode, UarReport, APS_RUNS,
};
use deconf::features::{lexical_category_vector, CategoryLexicon, LexicalFeatureVector};
use deconf::model::{EmotionTarget, Modality, TrainingMode};
use deconf::train::{read_ledger, LedgerEntry, Predictions};
use deconf::{Error, Result};
use serde::Serialize;

use crate::config::require_file;
use crate::evaluate::{family, family_name, modality_name};
use crate::io::{write_jsonl, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Question {
    /// Confound probe on frozen embeddings.
    Q1,
    /// In-domain normal versus adversarial UAR.
    Q2,
    /// Confusion-matrix changes.
    Q3,
    /// Transfer across confound partitions.
    Q4,
    /// Transfer across corpora.
    Q5,
    /// Lexical correlates of the adjusted probability of success.
    Q6,
}

impl FromStr for Question {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "q1" => Question::Q1,
            "q2" => Question::Q2,
            "q3" => Question::Q3,
            "q4" => Question::Q4,
            "q5" => Question::Q5,
            "q6" => Question::Q6,
            _ => return Err(Error::Config(format!("unknown question {s:?}; expected q1..q6"))),
        })
    }
}

impl Question {
    pub fn name(self) -> &'static str {
        match self {
            Question::Q1 => "q1",
            Question::Q2 => "q2",
            Question::Q3 => "q3",
            Question::Q4 => "q4",
            Question::Q5 => "q5",
            Question::Q6 => "q6",
        }
    }
}

/// Inputs beyond the ledgers that some questions need.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeInputs {
    pub ledgers: Vec<PathBuf>,
    /// Manifest with the transcripts the APS correlations use.
    pub manifest: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub duration_filter: bool,
}

type Family = (EmotionTarget, Modality);

fn is_fold(group: &str) -> bool {
    group.starts_with("fold:")
}

/// Concatenates predictions on disjoint samples, ordered by sample id.
pub fn concat_predictions(parts: &[&Predictions]) -> Result<Predictions> {
    let mut rows: Vec<(&str, usize, usize)> = Vec::new();
    for (p, part) in parts.iter().enumerate() {
        rows.extend(part.ids.iter().enumerate().map(|(i, id)| (id.as_str(), p, i)));
    }
    rows.sort();
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("sample {} predicted twice by one run", w[0].0)));
    }
    let with_confound = parts.iter().all(|p| p.confound_probs.is_some());
    let mut out = Predictions {
        ids: Vec::with_capacity(rows.len()),
        speakers: Vec::with_capacity(rows.len()),
        emotion_true: Vec::with_capacity(rows.len()),
        confound_true: Vec::with_capacity(rows.len()),
        emotion_probs: Vec::with_capacity(rows.len()),
        confound_probs: with_confound.then(Vec::new),
    };
    for (_, p, i) in rows {
        let src = parts[p];
        out.ids.push(src.ids[i].clone());
        out.speakers.push(src.speakers[i].clone());
        out.emotion_true.push(src.emotion_true[i]);
        out.confound_true.push(src.confound_true[i]);
        out.emotion_probs.push(src.emotion_probs[i].clone());
        if let (Some(all), Some(c)) = (out.confound_probs.as_mut(), src.confound_probs.as_ref()) {
            all.push(c[i].clone());
        }
    }
    Ok(out)
}

/// One run per (family, mode, seed) over all cross-validation folds.
fn fold_runs(entries: &[LedgerEntry]) -> Result<BTreeMap<Family, Vec<TargetRun>>> {
    let mut parts: BTreeMap<(Family, TrainingMode, u64), Vec<&LedgerEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| is_fold(&e.group)) {
        parts.entry((family(e), e.spec.training_mode, e.seed)).or_default().push(e);
    }
    let mut out: BTreeMap<Family, Vec<TargetRun>> = BTreeMap::new();
    for ((fam, mode, seed), es) in parts {
        let preds: Vec<&Predictions> = es.iter().map(|e| &e.test).collect();
        let folds: BTreeSet<&str> = es.iter().map(|e| e.group.as_str()).collect();
        if folds.len() != es.len() {
            return Err(Error::Data(format!(
                "{} seed {seed} appears twice in one fold",
                family_name(fam)
            )));
        }
        out.entry(fam).or_default().push(TargetRun {
            fingerprint: es.iter().map(|e| e.fingerprint.as_str()).collect::<Vec<_>>().join("+"),
            seed,
            training_mode: mode,
            emotion_target: fam.0,
            predictions: concat_predictions(&preds)?,
        });
    }
    Ok(out)
}

fn group_runs(entries: &[LedgerEntry], prefix: &str) -> BTreeMap<(String, Family), Vec<TargetRun>> {
    let mut out: BTreeMap<(String, Family), Vec<TargetRun>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.group.starts_with(prefix)) {
        out.entry((e.group.clone(), family(e))).or_default().push(TargetRun {
            fingerprint: e.fingerprint.clone(),
            seed: e.seed,
            training_mode: e.spec.training_mode,
            emotion_target: e.spec.emotion_target,
            predictions: e.test.clone(),
        });
    }
    out
}

fn no_runs(q: Question, what: &str) -> Error {
    Error::Data(format!("{}: the ledgers hold no {what}", q.name()))
}

#[derive(Debug, Serialize)]
struct ProbeRow {
    family: String,
    training_mode: TrainingMode,
    runs: usize,
    test_emotion_uar: f64,
    probe_uar: f64,
    adversary_val_uar: Option<f64>,
    chance: f64,
}

fn q1(entries: &[LedgerEntry]) -> Result<(String, Vec<ProbeRow>)> {
    let mut by: BTreeMap<(Family, TrainingMode), Vec<&LedgerEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.probe.is_some()) {
        by.entry((family(e), e.spec.training_mode)).or_default().push(e);
    }
    if by.is_empty() {
        return Err(no_runs(Question::Q1, "probe results (train with experiment.probe = true)"));
    }
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };
    let mut rows = Vec::new();
    for ((fam, mode), es) in by {
        let adv: Vec<f64> = es.iter().filter_map(|e| e.val_confound_uar).collect();
        rows.push(ProbeRow {
            family: family_name(fam),
            training_mode: mode,
            runs: es.len(),
            test_emotion_uar: mean(&mut es.iter().filter_map(|e| e.test_emotion_uar)),
            probe_uar: mean(&mut es.iter().map(|e| e.probe.as_ref().expect("filtered").test_uar)),
            adversary_val_uar: (!adv.is_empty()).then(|| mean(&mut adv.iter().copied())),
            chance: 1.0 / es[0].spec.confound_classes as f64,
        });
    }
    let mut t = format!(
        "{:<24}{:<13}{:>6}{:>10}{:>10}{:>12}{:>8}\n",
        "model", "mode", "runs", "emotion", "probe", "adversary", "chance"
    );
    for r in &rows {
        let _ = writeln!(
            t,
            "{:<24}{:<13}{:>6}{:>10.3}{:>10.3}{:>12}{:>8.3}",
            r.family,
            format!("{:?}", r.training_mode).to_lowercase(),
            r.runs,
            r.test_emotion_uar,
            r.probe_uar,
            r.adversary_val_uar.map_or("-".into(), |u| format!("{u:.3}")),
            r.chance
        );
    }
    Ok((t, rows))
}

fn q2(entries: &[LedgerEntry]) -> Result<(String, Vec<UarReport>)> {
    let runs = fold_runs(entries)?;
    if runs.is_empty() {
        return Err(no_runs(Question::Q2, "cross-validation runs"));
    }
    let reports = runs
        .iter()
        .map(|(fam, rs)| {
            let source = format!("cross-validation ({})", modality_name(fam.1));
            uar_report(&source, "in-domain", TransferMode::InDomain, rs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((render_transfer_table(&reports), reports))
}

#[derive(Debug, Serialize)]
struct ConfusionRow {
    family: String,
    normal: Vec<Vec<f64>>,
    adversarial: Vec<Vec<f64>>,
    /// Adversarial minus normal row percentages.
    delta: Vec<Vec<f64>>,
}

fn pooled_confusion(es: &[&LedgerEntry]) -> Result<ConfusionMatrix> {
    let classes = es
        .iter()
        .find_map(|e| e.test.emotion_probs.first().map(Vec::len))
        .ok_or(Error::EmptyInput("confusion"))?;
    let mut m = ConfusionMatrix::new(classes);
    for e in es {
        for (t, p) in e.test.emotion_true.iter().zip(e.test.emotion_pred()) {
            m.add(*t, p)?;
        }
    }
    Ok(m)
}

fn q3(entries: &[LedgerEntry]) -> Result<(String, Vec<ConfusionRow>)> {
    let mut by: BTreeMap<(Family, TrainingMode), Vec<&LedgerEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| is_fold(&e.group)) {
        by.entry((family(e), e.spec.training_mode)).or_default().push(e);
    }
    let fams: BTreeSet<Family> = by.keys().map(|k| k.0).collect();
    let mut rows = Vec::new();
    let mut t = String::new();
    for fam in fams {
        let (Some(n), Some(a)) = (by.get(&(fam, TrainingMode::Normal)), by.get(&(fam, TrainingMode::Adversarial)))
        else {
            continue;
        };
        let (cn, ca) = (pooled_confusion(n)?, pooled_confusion(a)?);
        let row = ConfusionRow {
            family: family_name(fam),
            normal: cn.row_percentages()?,
            adversarial: ca.row_percentages()?,
            delta: confusion_delta(&cn, &ca)?,
        };
        let _ = writeln!(t, "{} (row %, adversarial minus normal)", row.family);
        let names = ["low", "mid", "high"];
        let _ = writeln!(t, "{:<8}{:>9}{:>9}{:>9}", "true", names[0], names[1], names[2]);
        for (i, r) in row.delta.iter().enumerate() {
            let cells: String = r.iter().map(|x| format!("{x:>+9.2}")).collect();
            let _ = writeln!(t, "{:<8}{cells}", names.get(i).copied().unwrap_or("?"));
        }
        t.push('\n');
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(no_runs(Question::Q3, "cross-validation runs of both training modes"));
    }
    Ok((t, rows))
}

/// Transfer reports for groups under `prefix`. Groups named
/// `<base>:<speaker>` under a partition come from the speaker-holdout
/// protocol and are merged per base.
fn transfer(entries: &[LedgerEntry], prefix: &str, mode: TransferMode) -> Result<Vec<UarReport>> {
    let runs = group_runs(entries, prefix);
    let mut holdouts: BTreeMap<(String, Family), Vec<UarReport>> = BTreeMap::new();
    let mut reports = Vec::new();
    for ((group, fam), rs) in &runs {
        let parts: Vec<&str> = group.splitn(3, ':').collect();
        let source = format!("other levels ({})", modality_name(fam.1));
        match (mode, parts.as_slice()) {
            (TransferMode::Partition, [_, level, _speaker]) => {
                let base = format!("partition:{level}");
                let r = uar_report(&source, level, mode, rs)?;
                holdouts.entry((base, *fam)).or_default().push(r);
            }
            (TransferMode::Partition, [_, level]) => reports.push(uar_report(&source, level, mode, rs)?),
            _ => {
                let target = group.strip_prefix(prefix).unwrap_or(group);
                let source = format!("source ({})", modality_name(fam.1));
                reports.push(uar_report(&source, target, mode, rs)?);
            }
        }
    }
    for rs in holdouts.values() {
        reports.push(merge_speaker_holdouts(rs)?);
    }
    Ok(reports)
}

fn q45(entries: &[LedgerEntry], q: Question) -> Result<(String, Vec<UarReport>)> {
    let (prefix, mode, what) = match q {
        Question::Q4 => ("partition:", TransferMode::Partition, "partition runs"),
        _ => ("cross:", TransferMode::CrossCorpus, "cross-corpus runs"),
    };
    let reports = transfer(entries, prefix, mode)?;
    if reports.is_empty() {
        return Err(no_runs(q, what));
    }
    Ok((render_transfer_table(&reports), reports))
}

#[derive(Debug, Serialize)]
struct ApsBlock {
    family: String,
    scope: String,
    runs: usize,
    samples: usize,
    correlations: Vec<CorrelationResult>,
}

fn lexical_vectors(inputs: &AnalyzeInputs) -> Result<BTreeMap<String, LexicalFeatureVector>> {
    let manifest = inputs
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("q6 needs the manifest with transcripts (--manifest)".into()))?;
    require_file(manifest, "manifest")?;
    let lex = match &inputs.lexicon {
        Some(p) => CategoryLexicon::load(p)?,
        None => CategoryLexicon::builtin(),
    };
    let mut utts = read_manifest(manifest)?;
    if inputs.duration_filter {
        utts = filter_by_duration(utts);
    }
    utts.iter()
        .filter(|u| u.has_transcript())
        .map(|u| Ok((u.id.clone(), lexical_category_vector(&u.tokens, &lex, u.duration_s)?)))
        .collect()
}

fn aps_block(fam: Family, scope: &str, runs: &[TargetRun], features: &BTreeMap<String, LexicalFeatureVector>) -> Result<ApsBlock> {
    let mut normal: Vec<&TargetRun> = runs.iter().filter(|r| r.training_mode == TrainingMode::Normal).collect();
    let mut adv: Vec<&TargetRun> = runs.iter().filter(|r| r.training_mode == TrainingMode::Adversarial).collect();
    if normal.len() < APS_RUNS || adv.len() < APS_RUNS {
        return Err(Error::Data(format!(
            "run count: {} {scope} has {} normal and {} adversarial runs; APS needs at least {APS_RUNS} of each",
            family_name(fam),
            normal.len(),
            adv.len()
        )));
    }
    normal.sort_by_key(|r| r.seed);
    adv.sort_by_key(|r| r.seed);
    let n = normal.len().min(adv.len());
    let ids = &normal[0].predictions.ids;
    if normal[..n].iter().chain(&adv[..n]).any(|r| &r.predictions.ids != ids) {
        return Err(Error::Data(format!("{} {scope}: runs scored different samples", family_name(fam))));
    }
    let succ_n: Vec<Vec<bool>> = normal[..n].iter().map(|r| r.predictions.successes()).collect();
    let succ_a: Vec<Vec<bool>> = adv[..n].iter().map(|r| r.predictions.successes()).collect();
    let records = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let a: Vec<bool> = succ_a.iter().map(|s| s[i]).collect();
            let b: Vec<bool> = succ_n.iter().map(|s| s[i]).collect();
            aps(id, &a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApsBlock {
        family: family_name(fam),
        scope: scope.to_string(),
        runs: n,
        samples: records.len(),
        correlations: aps_correlation_report(&records, features)?,
    })
}

fn q6(entries: &[LedgerEntry], inputs: &AnalyzeInputs) -> Result<(String, Vec<ApsBlock>)> {
    let mut scoped: Vec<(Family, String, Vec<TargetRun>)> = Vec::new();
    for (fam, runs) in fold_runs(entries)? {
        scoped.push((fam, "cross-validation".into(), runs));
    }
    for ((group, fam), runs) in group_runs(entries, "") {
        if !is_fold(&group) {
            scoped.push((fam, group, runs));
        }
    }
    if scoped.is_empty() {
        return Err(no_runs(Question::Q6, "runs"));
    }
    // Refuse on run counts before reading any transcripts.
    for (fam, scope, runs) in &scoped {
        let count = |m| runs.iter().filter(|r| r.training_mode == m).count();
        let (n, a) = (count(TrainingMode::Normal), count(TrainingMode::Adversarial));
        if n < APS_RUNS || a < APS_RUNS {
            return Err(Error::Data(format!(
                "run count: {} {scope} has {n} normal and {a} adversarial runs; APS needs at least {APS_RUNS} of each",
                family_name(*fam)
            )));
        }
    }
    let features = lexical_vectors(inputs)?;
    let blocks = scoped
        .iter()
        .map(|(fam, scope, runs)| aps_block(*fam, scope, runs, &features))
        .collect::<Result<Vec<_>>>()?;
    let mut t = String::new();
    for b in &blocks {
        let _ = writeln!(t, "{} [{}] APS over {} runs, {} samples", b.family, b.scope, b.runs, b.samples);
        let _ = writeln!(t, "{:<16}{:>9}{:>10}{:>10}  code", "feature", "r", "p", "p_adj");
        for c in &b.correlations {
            let f = |x: Option<f64>, prec: usize| x.map_or("-".to_string(), |v| format!("{v:.prec$}"));
            let _ = writeln!(
                t,
                "{:<16}{:>9}{:>10}{:>10}  {}",
                c.feature,
                f(c.r, 3),
                f(c.p_raw, 4),
                f(c.p_adjusted, 4),
                if c.undefined { "undefined".to_string() } else { c.code.clone() }
            );
        }
        t.push('\n');
    }
    Ok((t, blocks))
}

/// Reads the ledgers and writes `<q>.txt` and `<q>.jsonl` under `out`.
pub fn cmd_analyze(q: Question, inputs: &AnalyzeInputs, out: &Path) -> Result<String> {
    if inputs.ledgers.is_empty() {
        return Err(Error::Config("analyze needs at least one --ledger".into()));
    }
    let mut entries = Vec::new();
    for l in &inputs.ledgers {
        require_file(l, "ledger")?;
        entries.extend(read_ledger(l)?);
    }
    let text = match q {
        Question::Q1 => {
            let (t, rows) = q1(&entries)?;
            write_jsonl(&out.join("q1.jsonl"), &rows)?;
            t
        }
        Question::Q2 => {
            let (t, rows) = q2(&entries)?;
            write_jsonl(&out.join("q2.jsonl"), &rows)?;
            t
        }
        Question::Q3 => {
            let (t, rows) = q3(&entries)?;
            write_jsonl(&out.join("q3.jsonl"), &rows)?;
            t
        }
        Question::Q4 | Question::Q5 => {
            let (t, rows) = q45(&entries, q)?;
            write_jsonl(&out.join(format!("{}.jsonl", q.name())), &rows)?;
            t
        }
        Question::Q6 => {
            let (t, rows) = q6(&entries, inputs)?;
            write_jsonl(&out.join("q6.jsonl"), &rows)?;
            t
        }
    };
    write_text(&out.join(format!("{}.txt", q.name())), &text)?;
    Ok(text.trim_end().to_string())
}
