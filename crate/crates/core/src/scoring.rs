//! Back-end scorers over r-vectors: cosine, Fisher LDA, a primal
//! subgradient linear SVM, and direct softmax language identification.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::features::FeatureSequence;
use crate::linalg::{dot, norm, Mat};
use crate::lstmp::{forward_sequence, LstmpParams};
use crate::multitask::{mt_forward, MultiTaskModel};
use crate::training::softmax;

/// Cosine similarity; errors on zero-norm inputs.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::dims("cosine_score dimension mismatch"));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::numeric("cosine_score on a zero-norm vector"));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Fisher discriminant projection plus projected class means.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// k x d projection, rows are discriminant directions
    pub projection: Mat,
    pub class_means_projected: Vec<(String, Vec<f64>)>,
}

impl LdaModel {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.projection.matvec(v)
    }

    /// Row-orthonormalized copy (Gram-Schmidt); spans the same subspace.
    pub fn orthonormalized(&self) -> LdaModel {
        let k = self.projection.rows();
        let d = self.projection.cols();
        let mut rows: Vec<Vec<f64>> = (0..k).map(|r| self.projection.row(r).to_vec()).collect();
        for i in 0..k {
            for j in 0..i {
                let proj = dot(&rows[i], &rows[j]);
                let rj = rows[j].clone();
                for (x, y) in rows[i].iter_mut().zip(&rj) {
                    *x -= proj * y;
                }
            }
            let n = norm(&rows[i]);
            if n > 1e-12 {
                crate::linalg::scale(&mut rows[i], 1.0 / n);
            }
        }
        let mut projection = Mat::zeros(k, d);
        for (i, row) in rows.iter().enumerate() {
            projection.row_mut(i).copy_from_slice(row);
        }
        LdaModel {
            projection,
            class_means_projected: self.class_means_projected.clone(),
        }
    }
}

/// Fisher LDA: top-k eigenvectors of Sw^{-1} Sb, with Sw regularized by
/// a ridge of 1e-6 * trace(Sw)/d.
pub fn lda_train(vectors: &[&[f64]], labels: &[String], target_dim: usize) -> Result<LdaModel> {
    if vectors.len() != labels.len() {
        return Err(CoreError::validation("lda_train: vectors/labels length mismatch"));
    }
    if vectors.is_empty() {
        return Err(CoreError::validation("lda_train: empty training set"));
    }
    let d = vectors[0].len();
    if target_dim == 0 || target_dim > d {
        return Err(CoreError::validation("lda_train: target_dim must be in 1..=d"));
    }

    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (v, l) in vectors.iter().zip(labels) {
        groups.entry(l.as_str()).or_default().push(v);
    }
    if groups.len() < 2 {
        return Err(CoreError::validation("lda_train: need at least 2 classes"));
    }
    if groups.values().any(|g| g.len() < 2) {
        return Err(CoreError::validation("lda_train: every class needs >= 2 samples"));
    }

    let n = vectors.len() as f64;
    let mut global = DVector::zeros(d);
    for v in vectors {
        global += DVector::from_column_slice(v);
    }
    global /= n;

    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    let mut class_means: Vec<(String, DVector<f64>)> = Vec::new();
    for (label, members) in &groups {
        let mut mu = DVector::zeros(d);
        for v in members {
            mu += DVector::from_column_slice(v);
        }
        mu /= members.len() as f64;
        for v in members {
            let diff = DVector::from_column_slice(v) - &mu;
            sw += &diff * diff.transpose();
        }
        let bdiff = &mu - &global;
        sb += (members.len() as f64) * (&bdiff * bdiff.transpose());
        class_means.push((label.to_string(), mu));
    }

    let ridge = 1e-6 * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += ridge.max(1e-12);
    }

    // symmetric whitening: W = Sw^{-1/2}, eigen of W Sb W
    let eig_w = SymmetricEigen::new(sw.clone());
    let mut inv_sqrt = DMatrix::zeros(d, d);
    for i in 0..d {
        let lam = eig_w.eigenvalues[i].max(1e-12);
        let col = eig_w.eigenvectors.column(i);
        inv_sqrt += (1.0 / lam.sqrt()) * (&col * col.transpose());
    }
    let m = &inv_sqrt * &sb * &inv_sqrt;
    let sym = (&m + m.transpose()) * 0.5;
    let eig_b = SymmetricEigen::new(sym);

    // order eigenpairs by decreasing eigenvalue
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig_b.eigenvalues[b]
            .partial_cmp(&eig_b.eigenvalues[a])
            .unwrap()
    });

    let mut projection = Mat::zeros(target_dim, d);
    for (row, &ei) in order.iter().take(target_dim).enumerate() {
        let w = &inv_sqrt * eig_b.eigenvectors.column(ei);
        for c in 0..d {
            projection.set(row, c, w[c]);
        }
    }

    let class_means_projected = class_means
        .into_iter()
        .map(|(label, mu)| {
            let projected = projection.matvec(mu.as_slice());
            (label, projected)
        })
        .collect();

    Ok(LdaModel {
        projection,
        class_means_projected,
    })
}

/// Linear binary classifier with an ordered label pair; the decision
/// value w.x + b is positive for `classes.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub classes: (String, String),
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        if self.decision(x) >= 0.0 {
            &self.classes.1
        } else {
            &self.classes.0
        }
    }
}

/// Primal subgradient (Pegasos-style) solver on the hinge loss with an
/// L2 penalty `lambda`. The bias rides along as an augmented coordinate.
pub fn svm_train(
    vectors: &[&[f64]],
    labels: &[String],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<SvmModel> {
    if vectors.len() != labels.len() || vectors.is_empty() {
        return Err(CoreError::validation("svm_train: empty or mismatched inputs"));
    }
    if !(lambda > 0.0) {
        return Err(CoreError::validation("svm_train: lambda must be > 0"));
    }
    let mut classes: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() != 2 {
        return Err(CoreError::validation(format!(
            "svm_train: need exactly 2 classes, found {}",
            classes.len()
        )));
    }
    let (neg, pos) = (classes[0].to_string(), classes[1].to_string());
    let d = vectors[0].len();
    let ys: Vec<f64> = labels
        .iter()
        .map(|l| if *l == pos { 1.0 } else { -1.0 })
        .collect();

    // augmented weight vector: last coordinate is the bias
    let mut w = vec![0.0; d + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut t: u64 = 0;
    let radius = 1.0 / lambda.sqrt();

    for _ in 0..epochs.max(1) {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = ys[i] * (dot(&w[..d], vectors[i]) + w[d]);
            let shrink = 1.0 - eta * lambda;
            crate::linalg::scale(&mut w, shrink);
            if margin < 1.0 {
                for (wk, xk) in w[..d].iter_mut().zip(vectors[i]) {
                    *wk += eta * ys[i] * xk;
                }
                w[d] += eta * ys[i];
            }
            // projection onto the ball of radius 1/sqrt(lambda)
            let n = norm(&w);
            if n > radius {
                crate::linalg::scale(&mut w, radius / n);
            }
        }
    }

    let bias = w[d];
    w.truncate(d);
    Ok(SvmModel {
        weights: w,
        bias,
        classes: (neg, pos),
    })
}

/// Frame-averaged softmax posterior over the language outputs; argmax
/// wins, ties break toward the earlier label.
pub fn softmax_language_id(
    params: &LstmpParams,
    languages: &[String],
    seq: &FeatureSequence,
) -> Result<(String, Vec<f64>)> {
    if seq.is_empty() {
        return Err(CoreError::validation("softmax_language_id on empty sequence"));
    }
    let outs = forward_sequence(params, &seq.frames)?;
    posterior_decision(outs.iter().map(|o| o.y.as_slice()), languages)
}

/// Same decision rule via the coupled recursion of the multi-task model.
pub fn softmax_language_id_multitask(
    model: &MultiTaskModel,
    seq: &FeatureSequence,
) -> Result<(String, Vec<f64>)> {
    if seq.is_empty() {
        return Err(CoreError::validation("softmax_language_id on empty sequence"));
    }
    let (outs_l, _) = mt_forward(model, &seq.frames)?;
    posterior_decision(outs_l.iter().map(|o| o.y.as_slice()), &model.languages)
}

fn posterior_decision<'a>(
    logit_frames: impl Iterator<Item = &'a [f64]>,
    labels: &[String],
) -> Result<(String, Vec<f64>)> {
    let mut mean: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for y in logit_frames {
        let p = softmax(y);
        if mean.is_empty() {
            mean = vec![0.0; p.len()];
        }
        crate::linalg::add_assign(&mut mean, &p);
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::validation("no frames to decide on"));
    }
    crate::linalg::scale(&mut mean, 1.0 / n as f64);
    if mean.len() != labels.len() {
        return Err(CoreError::dims(format!(
            "posterior dim {} does not match {} labels",
            mean.len(),
            labels.len()
        )));
    }
    let mut best = 0;
    for k in 1..mean.len() {
        if mean[k] > mean[best] {
            best = k;
        }
    }
    Ok((labels[best].clone(), mean))
}
