//! r-vector extraction (frame-averaged concatenation of the two
//! projections) and enrollment centroids.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::features::FeatureSequence;
use crate::lstmp::{forward_sequence, LstmpParams, StepOutput};
use crate::multitask::{mt_forward, MultiTaskModel};

/// Which branch an r-vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Language,
    Speaker,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Language => "language",
            Task::Speaker => "speaker",
        }
    }

    pub fn from_str(s: &str) -> Result<Task> {
        match s {
            "language" => Ok(Task::Language),
            "speaker" => Ok(Task::Speaker),
            other => Err(CoreError::validation(format!("unknown task `{other}`"))),
        }
    }
}

/// Fixed-dimension utterance embedding: mean over frames of concat(r, p).
#[derive(Debug, Clone, PartialEq)]
pub struct RVector {
    pub utt_id: String,
    pub task: Task,
    pub values: Vec<f64>,
}

fn average_projections(outputs: &[StepOutput]) -> Result<Vec<f64>> {
    if outputs.is_empty() {
        return Err(CoreError::validation("cannot extract r-vector from an empty sequence"));
    }
    let dim = outputs[0].r.len() + outputs[0].p.len();
    let mut mean = vec![0.0; dim];
    for out in outputs {
        for (k, v) in out.r.iter().chain(&out.p).enumerate() {
            mean[k] += v;
        }
    }
    crate::linalg::scale(&mut mean, 1.0 / outputs.len() as f64);
    Ok(mean)
}

/// r-vector from a single-task branch.
pub fn extract_rvector(params: &LstmpParams, seq: &FeatureSequence, task: Task) -> Result<RVector> {
    if seq.is_empty() {
        return Err(CoreError::validation("cannot extract r-vector from an empty sequence"));
    }
    let outputs = forward_sequence(params, &seq.frames)?;
    Ok(RVector {
        utt_id: seq.utt_id.clone(),
        task,
        values: average_projections(&outputs)?,
    })
}

/// r-vector from one branch of the coupled model; the full coupled
/// recursion runs regardless of the branch read out.
pub fn extract_rvector_multitask(
    model: &MultiTaskModel,
    seq: &FeatureSequence,
    task: Task,
) -> Result<RVector> {
    if seq.is_empty() {
        return Err(CoreError::validation("cannot extract r-vector from an empty sequence"));
    }
    let (outs_l, outs_s) = mt_forward(model, &seq.frames)?;
    let outputs = match task {
        Task::Language => &outs_l,
        Task::Speaker => &outs_s,
    };
    Ok(RVector {
        utt_id: seq.utt_id.clone(),
        task,
        values: average_projections(outputs)?,
    })
}

/// Per-label enrollment centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollModel {
    pub label: String,
    pub centroid: Vec<f64>,
    pub n_utts: usize,
}

/// Groups r-vectors by label and averages each group.
pub fn enroll(labelled: &[(String, &RVector)]) -> Result<Vec<EnrollModel>> {
    if labelled.is_empty() {
        return Err(CoreError::validation("enrollment set is empty"));
    }
    let mut groups: BTreeMap<&str, Vec<&RVector>> = BTreeMap::new();
    for (label, rv) in labelled {
        groups.entry(label.as_str()).or_default().push(rv);
    }
    let mut models = Vec::with_capacity(groups.len());
    for (label, members) in groups {
        let dim = members[0].values.len();
        if members.iter().any(|m| m.values.len() != dim) {
            return Err(CoreError::dims(format!(
                "inconsistent r-vector dimensions while enrolling `{label}`"
            )));
        }
        let mut centroid = vec![0.0; dim];
        for m in &members {
            crate::linalg::add_assign(&mut centroid, &m.values);
        }
        crate::linalg::scale(&mut centroid, 1.0 / members.len() as f64);
        models.push(EnrollModel {
            label: label.to_string(),
            centroid,
            n_utts: members.len(),
        });
    }
    Ok(models)
}
