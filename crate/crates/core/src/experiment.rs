//! End-to-end pipeline plumbing shared by the command-line tool and the
//! integration suite: corpus -> training -> embeddings -> scoring -> report.

use std::fmt::Write as _;

use crate::config::ExperimentConfig;
use crate::embedding::{enroll, extract_rvector, extract_rvector_multitask, RVector, Task};
use crate::error::{CoreError, Result};
use crate::features::{crop_short, Corpus, FeatureSequence, OffsetRule, Split};
use crate::lstmp::LstmpDims;
use crate::metrics::{build_sre_trials, compute_eer, compute_idr, MetricReport};
use crate::multitask::{init_multitask, FeedbackRouting, MultiTaskDims, MultiTaskModel, Sink};
use crate::scoring::{
    cosine_score, lda_train, softmax_language_id, softmax_language_id_multitask, svm_train,
};
use crate::serialize::SingleTaskModel;
use crate::training::{train_multitask, train_single, LossTrace};

/// Language-recognition scoring backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LreBackend {
    Cosine,
    Lda,
    Svm,
    Softmax,
}

impl LreBackend {
    pub fn from_str(s: &str) -> Result<LreBackend> {
        match s {
            "cosine" => Ok(LreBackend::Cosine),
            "lda" => Ok(LreBackend::Lda),
            "svm" => Ok(LreBackend::Svm),
            "softmax" => Ok(LreBackend::Softmax),
            other => Err(CoreError::validation(format!(
                "unknown backend `{other}` (expected cosine|lda|svm|softmax)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LreBackend::Cosine => "cosine",
            LreBackend::Lda => "lda",
            LreBackend::Svm => "svm",
            LreBackend::Softmax => "softmax",
        }
    }
}

/// A trained model of either flavor, borrowed for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalModel<'a> {
    Single(&'a SingleTaskModel),
    Multi(&'a MultiTaskModel),
}

impl<'a> EvalModel<'a> {
    pub fn embed(&self, seq: &FeatureSequence, task: Task) -> Result<RVector> {
        match self {
            EvalModel::Single(m) => {
                if m.task != task {
                    return Err(CoreError::validation(format!(
                        "model was trained for {} classification, cannot embed for {}",
                        m.task.as_str(),
                        task.as_str()
                    )));
                }
                extract_rvector(&m.params, seq, task)
            }
            EvalModel::Multi(m) => extract_rvector_multitask(m, seq, task),
        }
    }

    fn classify_language(&self, seq: &FeatureSequence) -> Result<(String, Vec<f64>)> {
        match self {
            EvalModel::Single(m) => {
                if m.task != Task::Language {
                    return Err(CoreError::validation(
                        "softmax language decisions need a language-output model",
                    ));
                }
                softmax_language_id(&m.params, &m.labels, seq)
            }
            EvalModel::Multi(m) => softmax_language_id_multitask(m, seq),
        }
    }

    pub fn languages(&self) -> &[String] {
        match self {
            EvalModel::Single(m) => &m.labels,
            EvalModel::Multi(m) => &m.languages,
        }
    }
}

/// Sorted label tables the trainers and evaluators agree on.
pub fn label_tables(corpus: &Corpus) -> (Vec<String>, Vec<String>) {
    (corpus.manifest.languages(), corpus.manifest.train_speakers())
}

fn class_index(table: &[String], label: &str, what: &str) -> Result<usize> {
    table
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| CoreError::validation(format!("{what} `{label}` missing from label table")))
}

fn input_dim(corpus: &Corpus) -> Result<usize> {
    corpus
        .sequences
        .first()
        .map(|s| s.frames.cols())
        .ok_or_else(|| CoreError::validation("corpus has no sequences"))
}

/// Trains one baseline branch on the corpus train split.
pub fn train_single_task(
    corpus: &Corpus,
    task: Task,
    cfg: &ExperimentConfig,
) -> Result<(SingleTaskModel, LossTrace)> {
    cfg.validate()?;
    let (languages, speakers) = label_tables(corpus);
    let labels = match task {
        Task::Language => languages,
        Task::Speaker => speakers,
    };
    let dims = LstmpDims {
        input: input_dim(corpus)?,
        cell: cfg.model.cell,
        rproj: cfg.model.rproj,
        pproj: cfg.model.pproj,
        out: labels.len(),
    };
    let mut params = crate::lstmp::init_params(dims, cfg.model.init_scale, cfg.model.seed)?;

    let train = corpus.split_sequences(Split::Train);
    let mut data = Vec::with_capacity(train.len());
    for seq in &train {
        let label = match task {
            Task::Language => &seq.language,
            Task::Speaker => &seq.speaker,
        };
        data.push((&seq.frames, class_index(&labels, label, "train label")?));
    }
    let trace = train_single(&mut params, &data, &cfg.optimizer)?;
    Ok((
        SingleTaskModel {
            params,
            labels,
            task,
        },
        trace,
    ))
}

/// Trains the coupled two-branch model on the corpus train split.
pub fn train_joint(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<(MultiTaskModel, LossTrace)> {
    cfg.validate()?;
    let (languages, speakers) = label_tables(corpus);
    let dims = MultiTaskDims {
        input: input_dim(corpus)?,
        cell: cfg.model.cell,
        rproj: cfg.model.rproj,
        pproj: cfg.model.pproj,
        n_languages: languages.len(),
        n_speakers: speakers.len(),
    };
    let mut model = init_multitask(
        dims,
        cfg.routing.clone(),
        cfg.model.init_scale,
        cfg.model.cross_init_scale,
        cfg.model.seed,
        None,
        languages.clone(),
        speakers.clone(),
    )?;
    let train = corpus.split_sequences(Split::Train);
    let mut data = Vec::with_capacity(train.len());
    for seq in &train {
        data.push((
            &seq.frames,
            class_index(&languages, &seq.language, "train language")?,
            class_index(&speakers, &seq.speaker, "train speaker")?,
        ));
    }
    let trace = train_multitask(&mut model, &data, &cfg.loss, &cfg.optimizer)?;
    Ok((model, trace))
}

/// Evaluation-time crop; `None` scores full utterances.
pub type CropRule = Option<(usize, OffsetRule)>;

fn maybe_crop(seq: &FeatureSequence, crop: &CropRule) -> FeatureSequence {
    match crop {
        Some((n, rule)) => crop_short(seq, *n, *rule),
        None => seq.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct SreEval {
    pub report: MetricReport,
    /// (enroll_label, test_utt, score, is_target)
    pub scores: Vec<(String, String, f64, bool)>,
}

/// Speaker verification: enroll split -> per-speaker centroids, test split
/// scored against every centroid with cosine, pooled EER.
pub fn evaluate_sre(model: EvalModel<'_>, corpus: &Corpus, crop: &CropRule) -> Result<SreEval> {
    let enroll_seqs = corpus.split_sequences(Split::Enroll);
    if enroll_seqs.is_empty() {
        return Err(CoreError::validation("corpus has no enrollment utterances"));
    }
    let mut enroll_rvs = Vec::with_capacity(enroll_seqs.len());
    for seq in &enroll_seqs {
        enroll_rvs.push((seq.speaker.clone(), model.embed(seq, Task::Speaker)?));
    }
    let labelled: Vec<(String, &RVector)> = enroll_rvs
        .iter()
        .map(|(spk, rv)| (spk.clone(), rv))
        .collect();
    let centroids = enroll(&labelled)?;

    let test_seqs = corpus.split_sequences(Split::Test);
    if test_seqs.is_empty() {
        return Err(CoreError::validation("corpus has no test utterances"));
    }
    let mut test_rvs = Vec::with_capacity(test_seqs.len());
    for seq in &test_seqs {
        let cropped = maybe_crop(seq, crop);
        test_rvs.push((seq.speaker.clone(), model.embed(&cropped, Task::Speaker)?));
    }

    let enroll_labels: Vec<String> = centroids.iter().map(|c| c.label.clone()).collect();
    let test_index: Vec<(String, String)> = test_rvs
        .iter()
        .map(|(spk, rv)| (rv.utt_id.clone(), spk.clone()))
        .collect();
    let trials = build_sre_trials(&enroll_labels, &test_index)?;

    let mut scores = Vec::with_capacity(trials.trials.len());
    let mut scored = Vec::with_capacity(trials.trials.len());
    for trial in &trials.trials {
        let centroid = centroids
            .iter()
            .find(|c| c.label == trial.enroll_label)
            .unwrap();
        let rv = &test_rvs
            .iter()
            .find(|(_, rv)| rv.utt_id == trial.test_utt)
            .unwrap()
            .1;
        let s = cosine_score(&centroid.centroid, &rv.values)?;
        scores.push((
            trial.enroll_label.clone(),
            trial.test_utt.clone(),
            s,
            trial.is_target,
        ));
        scored.push((s, trial.is_target));
    }
    let (eer, threshold) = compute_eer(&scored)?;
    Ok(SreEval {
        report: MetricReport {
            eer: Some(eer),
            threshold_at_eer: Some(threshold),
            target_trials: trials.target_count(),
            imposter_trials: trials.imposter_count(),
            idr: None,
            ide: None,
            id_trials: 0,
        },
        scores,
    })
}

#[derive(Debug, Clone)]
pub struct LreEval {
    pub report: MetricReport,
    /// (test_utt, predicted, truth)
    pub decisions: Vec<(String, String, String)>,
}

/// Language identification on the test split with the chosen backend.
/// Vector backends (cosine/lda/svm) fit on train-split embeddings.
pub fn evaluate_lre(
    model: EvalModel<'_>,
    corpus: &Corpus,
    backend: LreBackend,
    crop: &CropRule,
) -> Result<LreEval> {
    let test_seqs = corpus.split_sequences(Split::Test);
    if test_seqs.is_empty() {
        return Err(CoreError::validation("corpus has no test utterances"));
    }

    let mut decisions = Vec::with_capacity(test_seqs.len());

    if backend == LreBackend::Softmax {
        for seq in &test_seqs {
            let cropped = maybe_crop(seq, crop);
            let (pred, _) = model.classify_language(&cropped)?;
            decisions.push((seq.utt_id.clone(), pred, seq.language.clone()));
        }
    } else {
        let train_seqs = corpus.split_sequences(Split::Train);
        if train_seqs.is_empty() {
            return Err(CoreError::validation("corpus has no training utterances"));
        }
        let mut train_rvs = Vec::with_capacity(train_seqs.len());
        let mut train_labels = Vec::with_capacity(train_seqs.len());
        for seq in &train_seqs {
            train_rvs.push(model.embed(seq, Task::Language)?);
            train_labels.push(seq.language.clone());
        }
        let mut test_rvs = Vec::with_capacity(test_seqs.len());
        for seq in &test_seqs {
            let cropped = maybe_crop(seq, crop);
            test_rvs.push(model.embed(&cropped, Task::Language)?);
        }

        match backend {
            LreBackend::Cosine => {
                let labelled: Vec<(String, &RVector)> = train_labels
                    .iter()
                    .cloned()
                    .zip(train_rvs.iter())
                    .collect();
                let centroids = enroll(&labelled)?;
                for (seq, rv) in test_seqs.iter().zip(&test_rvs) {
                    let mut best = (f64::NEG_INFINITY, "");
                    for c in &centroids {
                        let s = cosine_score(&c.centroid, &rv.values)?;
                        if s > best.0 {
                            best = (s, &c.label);
                        }
                    }
                    decisions.push((seq.utt_id.clone(), best.1.to_string(), seq.language.clone()));
                }
            }
            LreBackend::Lda => {
                let views: Vec<&[f64]> = train_rvs.iter().map(|rv| rv.values.as_slice()).collect();
                let n_classes = model.languages().len();
                let dim = views[0].len();
                let target = n_classes.saturating_sub(1).max(1).min(dim);
                let lda = lda_train(&views, &train_labels, target)?;
                for (seq, rv) in test_seqs.iter().zip(&test_rvs) {
                    let projected = lda.project(&rv.values);
                    let mut best = (f64::NEG_INFINITY, "");
                    for (label, mean) in &lda.class_means_projected {
                        let s = cosine_score(mean, &projected)?;
                        if s > best.0 {
                            best = (s, label);
                        }
                    }
                    decisions.push((seq.utt_id.clone(), best.1.to_string(), seq.language.clone()));
                }
            }
            LreBackend::Svm => {
                let views: Vec<&[f64]> = train_rvs.iter().map(|rv| rv.values.as_slice()).collect();
                let svm = svm_train(&views, &train_labels, 1e-3, 20, 701)?;
                for (seq, rv) in test_seqs.iter().zip(&test_rvs) {
                    decisions.push((
                        seq.utt_id.clone(),
                        svm.predict(&rv.values).to_string(),
                        seq.language.clone(),
                    ));
                }
            }
            LreBackend::Softmax => unreachable!(),
        }
    }

    let preds: Vec<String> = decisions.iter().map(|(_, p, _)| p.clone()).collect();
    let truths: Vec<String> = decisions.iter().map(|(_, _, t)| t.clone()).collect();
    let (idr, ide) = compute_idr(&preds, &truths)?;
    Ok(LreEval {
        report: MetricReport {
            eer: None,
            threshold_at_eer: None,
            target_trials: 0,
            imposter_trials: 0,
            idr: Some(idr),
            ide: Some(ide),
            id_trials: preds.len(),
        },
        decisions,
    })
}

/// The routing grid the ablation sweeps, in table order.
pub fn ablation_routings() -> Vec<(String, FeedbackRouting)> {
    let mut out = Vec::new();
    for sink in Sink::ALL {
        out.push((
            sink.short_name().to_string(),
            FeedbackRouting::new(vec![sink], FeedbackRouting::cell_candidate_both().sources)
                .unwrap(),
        ));
    }
    out.push((
        "ifog".to_string(),
        FeedbackRouting::new(
            Sink::ALL.to_vec(),
            FeedbackRouting::cell_candidate_both().sources,
        )
        .unwrap(),
    ));
    out
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub routing: String,
    pub lre_ide_full: f64,
    pub lre_ide_short: f64,
    pub sre_eer_full: f64,
    pub sre_eer_short: f64,
}

/// Sweeps single-task baselines plus the five feedback routings under
/// full and short test conditions. Returns one row per system.
pub fn run_ablation(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let short: CropRule = Some((cfg.eval.short_frames, OffsetRule::SeededRandom(cfg.synth.seed)));
    let full: CropRule = None;

    let mut rows = Vec::new();

    let (lre_base, _) = train_single_task(corpus, Task::Language, cfg)?;
    let (sre_base, _) = train_single_task(corpus, Task::Speaker, cfg)?;
    let lre_full = evaluate_lre(EvalModel::Single(&lre_base), corpus, LreBackend::Softmax, &full)?;
    let lre_short =
        evaluate_lre(EvalModel::Single(&lre_base), corpus, LreBackend::Softmax, &short)?;
    let sre_full = evaluate_sre(EvalModel::Single(&sre_base), corpus, &full)?;
    let sre_short = evaluate_sre(EvalModel::Single(&sre_base), corpus, &short)?;
    rows.push(AblationRow {
        routing: "baseline".to_string(),
        lre_ide_full: lre_full.report.idr.unwrap(),
        lre_ide_short: lre_short.report.idr.unwrap(),
        sre_eer_full: sre_full.report.eer.unwrap(),
        sre_eer_short: sre_short.report.eer.unwrap(),
    });

    for (name, routing) in ablation_routings() {
        let mut cfg_r = cfg.clone();
        cfg_r.routing = routing;
        let (model, _) = train_joint(corpus, &cfg_r)?;
        let m = EvalModel::Multi(&model);
        let lre_full = evaluate_lre(m, corpus, LreBackend::Softmax, &full)?;
        let lre_short = evaluate_lre(m, corpus, LreBackend::Softmax, &short)?;
        let sre_full = evaluate_sre(m, corpus, &full)?;
        let sre_short = evaluate_sre(m, corpus, &short)?;
        rows.push(AblationRow {
            routing: name,
            lre_ide_full: lre_full.report.idr.unwrap(),
            lre_ide_short: lre_short.report.idr.unwrap(),
            sre_eer_full: sre_full.report.eer.unwrap(),
            sre_eer_short: sre_short.report.eer.unwrap(),
        });
    }
    Ok(rows)
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("routing\tlre_ide_full\tlre_ide_short\tsre_eer_full\tsre_eer_short\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.routing, r.lre_ide_full, r.lre_ide_short, r.sre_eer_full, r.sre_eer_short
        );
    }
    out
}

/// Per-epoch loss trace as TSV.
pub fn render_loss_trace(trace: &LossTrace) -> String {
    let mut out = String::from("epoch\tmean_frame_loss\n");
    for (i, loss) in trace.iter().enumerate() {
        let _ = writeln!(out, "{}\t{loss}", i + 1);
    }
    out
}
