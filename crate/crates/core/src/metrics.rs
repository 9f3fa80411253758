//! Detection and identification metrics: EER over pairwise trials with
//! linear interpolation at the FAR/FRR crossing, and IDR/IDE counts.

use std::fmt::Write as _;

use crate::error::{CoreError, Result};

/// One verification trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll_label: String,
    pub test_utt: String,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn target_count(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn imposter_count(&self) -> usize {
        self.trials.iter().filter(|t| !t.is_target).count()
    }
}

/// Full cross product of enrolled labels and test utterances; a trial is
/// a target iff the speaker labels match.
pub fn build_sre_trials(
    enroll_labels: &[String],
    test_utts: &[(String, String)], // (utt_id, speaker)
) -> Result<TrialSet> {
    if enroll_labels.is_empty() || test_utts.is_empty() {
        return Err(CoreError::validation("trial construction needs non-empty sets"));
    }
    let mut trials = Vec::with_capacity(enroll_labels.len() * test_utts.len());
    for label in enroll_labels {
        for (utt, speaker) in test_utts {
            trials.push(Trial {
                enroll_label: label.clone(),
                test_utt: utt.clone(),
                is_target: label == speaker,
            });
        }
    }
    Ok(TrialSet { trials })
}

/// One operating point of the detection trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR/FRR at every distinct score threshold, descending. Convention:
/// accept iff score >= threshold; FRR = fraction of targets below,
/// FAR = fraction of imposters at or above.
pub fn far_frr_points(scored: &[(f64, bool)]) -> Result<Vec<OperatingPoint>> {
    let targets: Vec<f64> = scored.iter().filter(|(_, t)| *t).map(|(s, _)| *s).collect();
    let imposters: Vec<f64> = scored.iter().filter(|(_, t)| !*t).map(|(s, _)| *s).collect();
    if targets.is_empty() || imposters.is_empty() {
        return Err(CoreError::validation(
            "EER needs at least one target and one imposter trial",
        ));
    }
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(CoreError::numeric("non-finite score in trial set"));
    }

    let mut tsorted = targets.clone();
    tsorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut isorted = imposters.clone();
    isorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let count_below = |sorted: &[f64], theta: f64| sorted.partition_point(|&s| s < theta);

    let nt = tsorted.len() as f64;
    let ni = isorted.len() as f64;
    let mut points = vec![OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    }];
    for theta in thresholds {
        let frr = count_below(&tsorted, theta) as f64 / nt;
        let far = (isorted.len() - count_below(&isorted, theta)) as f64 / ni;
        points.push(OperatingPoint {
            threshold: theta,
            far,
            frr,
        });
    }
    Ok(points)
}

/// Equal error rate with linear interpolation between the two operating
/// points bracketing FAR = FRR. Returns (eer, threshold).
pub fn compute_eer(scored: &[(f64, bool)]) -> Result<(f64, f64)> {
    let points = far_frr_points(scored)?;
    // walking thresholds downward FAR rises and FRR falls; find the
    // first point with FAR >= FRR
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.far >= b.frr {
            let da = a.frr - a.far; // > 0 before the crossing
            let db = b.frr - b.far; // <= 0 at/after
            let denom = da - db;
            if denom.abs() < 1e-300 {
                return Ok((0.5 * (a.far + a.frr), b.threshold));
            }
            let alpha = da / denom;
            let eer = a.far + alpha * (b.far - a.far);
            let threshold = if a.threshold.is_finite() {
                a.threshold + alpha * (b.threshold - a.threshold)
            } else {
                b.threshold
            };
            return Ok((eer, threshold));
        }
    }
    // FAR never reaches FRR within the observed scores: the crossing sits
    // below the smallest score where FAR = 1, FRR -> 0
    let last = *points.last().unwrap();
    Ok((last.frr.max(last.far).min(1.0), last.threshold))
}

/// Identification error count and rate.
pub fn compute_idr(predictions: &[String], truths: &[String]) -> Result<(f64, usize)> {
    if predictions.len() != truths.len() {
        return Err(CoreError::validation("compute_idr: length mismatch"));
    }
    if predictions.is_empty() {
        return Err(CoreError::validation("compute_idr: empty trial list"));
    }
    let ide = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p != t)
        .count();
    Ok((ide as f64 / predictions.len() as f64, ide))
}

/// Evaluation summary for one system under one condition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub eer: Option<f64>,
    pub threshold_at_eer: Option<f64>,
    pub target_trials: usize,
    pub imposter_trials: usize,
    pub idr: Option<f64>,
    pub ide: Option<usize>,
    pub id_trials: usize,
}

impl MetricReport {
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        if let Some(eer) = self.eer {
            let _ = writeln!(out, "eer\t{eer}");
            let _ = writeln!(out, "threshold_at_eer\t{}", self.threshold_at_eer.unwrap_or(f64::NAN));
            let _ = writeln!(out, "target_trials\t{}", self.target_trials);
            let _ = writeln!(out, "imposter_trials\t{}", self.imposter_trials);
        }
        if let Some(idr) = self.idr {
            let _ = writeln!(out, "idr\t{idr}");
            let _ = writeln!(out, "ide\t{}", self.ide.unwrap_or(0));
            let _ = writeln!(out, "id_trials\t{}", self.id_trials);
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(eer) = self.eer {
            let _ = writeln!(
                out,
                "EER(%) {:>8.3}   targets {:>8}   imposters {:>10}",
                eer * 100.0,
                self.target_trials,
                self.imposter_trials
            );
        }
        if let Some(idr) = self.idr {
            let _ = writeln!(
                out,
                "IDR(%) {:>8.3}   IDE {:>8}   trials {:>10}",
                idr * 100.0,
                self.ide.unwrap_or(0),
                self.id_trials
            );
        }
        out
    }
}
