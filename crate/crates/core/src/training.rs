//! Frame-level cross-entropy, exact backpropagation through the single-
//! and multi-task recursions, SGD with momentum, and a finite-difference
//! gradient checker.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::lstmp::{forward_sequence, LstmpParams, StepOutput};
use crate::multitask::{
    init_multitask, mt_forward, FeedbackRouting, MultiTaskDims, MultiTaskModel, Sink, Source,
};

/// Task weighting for the joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub lambda_lre: f64,
    pub lambda_sre: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            lambda_lre: 1.0,
            lambda_sre: 1.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_lre < 0.0 || self.lambda_sre < 0.0 {
            return Err(CoreError::validation("task weights must be nonnegative"));
        }
        if self.lambda_lre + self.lambda_sre <= 0.0 {
            return Err(CoreError::validation("task weights must not both be zero"));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters. `clip_norm <= 0` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            learning_rate: 0.2,
            momentum: 0.9,
            batch_size: 4,
            epochs: 12,
            lr_decay: 0.85,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(CoreError::validation("learning_rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::validation("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::validation("batch_size and epochs must be >= 1"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(CoreError::validation("lr_decay must be > 0"));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(CoreError::validation(format!(
            "label index {label} out of range for {} classes",
            logits.len()
        )));
    }
    let p = softmax(logits);
    Ok(-p[label].max(f64::MIN_POSITIVE).ln())
}

/// Weighted per-frame cross-entropy averaged over the frames of one
/// utterance. A task with zero weight may pass an empty logit list.
pub fn frame_loss(
    logits_l: &[Vec<f64>],
    logits_s: &[Vec<f64>],
    lang: usize,
    spk: usize,
    spec: &LossSpec,
) -> Result<f64> {
    spec.validate()?;
    let n = logits_l.len().max(logits_s.len());
    if n == 0 {
        return Err(CoreError::validation("frame_loss over an empty sequence"));
    }
    let mut total = 0.0;
    if spec.lambda_lre > 0.0 {
        for y in logits_l {
            total += spec.lambda_lre * cross_entropy(y, lang)?;
        }
    }
    if spec.lambda_sre > 0.0 {
        for y in logits_s {
            total += spec.lambda_sre * cross_entropy(y, spk)?;
        }
    }
    Ok(total / n as f64)
}

/// Gradients of the multi-task model, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct MtGrads {
    pub lre: LstmpParams,
    pub sre: LstmpParams,
    pub cross: crate::multitask::CrossTaskWeights,
}

impl MtGrads {
    pub fn zeros_like(model: &MultiTaskModel) -> MtGrads {
        MtGrads {
            lre: model.lre.zeros_like(),
            sre: model.sre.zeros_like(),
            cross: model.cross.zeros_like(),
        }
    }
}

struct BranchCarry {
    dc: Vec<f64>,
    dr: Vec<f64>,
    dp: Vec<f64>,
}

impl BranchCarry {
    fn zero(p: &LstmpParams) -> BranchCarry {
        BranchCarry {
            dc: vec![0.0; p.dims.cell],
            dr: vec![0.0; p.dims.rproj],
            dp: vec![0.0; p.dims.pproj],
        }
    }
}

struct GateDeltas {
    da_i: Vec<f64>,
    da_f: Vec<f64>,
    da_g: Vec<f64>,
    da_o: Vec<f64>,
}

impl GateDeltas {
    fn for_sink(&self, sink: Sink) -> &[f64] {
        match sink {
            Sink::InputGate => &self.da_i,
            Sink::ForgetGate => &self.da_f,
            Sink::CellCandidate => &self.da_g,
            Sink::OutputGate => &self.da_o,
        }
    }
}

/// Reverse step through one branch. `carry` holds the incoming gradients
/// for time t and is replaced with the outgoing gradients for time t-1
/// (within-branch paths only; cross contributions are added by the caller).
fn branch_backward_step(
    p: &LstmpParams,
    x: &[f64],
    c_prev: &[f64],
    r_prev: &[f64],
    out: &StepOutput,
    dy: &[f64],
    carry: &mut BranchCarry,
    g: &mut LstmpParams,
) -> GateDeltas {
    let cell = p.dims.cell;

    let mut dr = std::mem::take(&mut carry.dr);
    p.w_yr.tr_matvec_acc(dy, &mut dr);
    let mut dp = std::mem::take(&mut carry.dp);
    p.w_yp.tr_matvec_acc(dy, &mut dp);

    g.w_yr.outer_acc(dy, &out.r);
    g.w_yp.outer_acc(dy, &out.p);
    crate::linalg::add_assign(g.b_y.data_mut(), dy);

    let mut dm = vec![0.0; cell];
    p.w_rm.tr_matvec_acc(&dr, &mut dm);
    p.w_pm.tr_matvec_acc(&dp, &mut dm);
    g.w_rm.outer_acc(&dr, &out.m);
    g.w_pm.outer_acc(&dp, &out.m);

    let mut da_o = vec![0.0; cell];
    let mut dc = std::mem::take(&mut carry.dc);
    for k in 0..cell {
        let h = out.c[k].tanh();
        let do_k = dm[k] * h;
        da_o[k] = do_k * out.o[k] * (1.0 - out.o[k]);
        dc[k] += dm[k] * out.o[k] * (1.0 - h * h) + p.w_oc.data()[k] * da_o[k];
    }

    let mut da_i = vec![0.0; cell];
    let mut da_f = vec![0.0; cell];
    let mut da_g = vec![0.0; cell];
    for k in 0..cell {
        let di = dc[k] * out.g[k];
        da_i[k] = di * out.i[k] * (1.0 - out.i[k]);
        let df = dc[k] * c_prev[k];
        da_f[k] = df * out.f[k] * (1.0 - out.f[k]);
        let dg = dc[k] * out.i[k];
        da_g[k] = dg * (1.0 - out.g[k] * out.g[k]);
    }

    g.w_ix.outer_acc(&da_i, x);
    g.w_fx.outer_acc(&da_f, x);
    g.w_cx.outer_acc(&da_g, x);
    g.w_ox.outer_acc(&da_o, x);
    g.w_ir.outer_acc(&da_i, r_prev);
    g.w_fr.outer_acc(&da_f, r_prev);
    g.w_cr.outer_acc(&da_g, r_prev);
    g.w_or.outer_acc(&da_o, r_prev);
    for k in 0..cell {
        g.w_ic.data_mut()[k] += da_i[k] * c_prev[k];
        g.w_fc.data_mut()[k] += da_f[k] * c_prev[k];
        g.w_oc.data_mut()[k] += da_o[k] * out.c[k];
        g.b_i.data_mut()[k] += da_i[k];
        g.b_f.data_mut()[k] += da_f[k];
        g.b_c.data_mut()[k] += da_g[k];
        g.b_o.data_mut()[k] += da_o[k];
    }

    // outgoing carries for t-1
    let mut dc_prev = vec![0.0; cell];
    for k in 0..cell {
        dc_prev[k] =
            dc[k] * out.f[k] + p.w_ic.data()[k] * da_i[k] + p.w_fc.data()[k] * da_f[k];
    }
    let mut dr_prev = vec![0.0; p.dims.rproj];
    p.w_ir.tr_matvec_acc(&da_i, &mut dr_prev);
    p.w_fr.tr_matvec_acc(&da_f, &mut dr_prev);
    p.w_cr.tr_matvec_acc(&da_g, &mut dr_prev);
    p.w_or.tr_matvec_acc(&da_o, &mut dr_prev);

    carry.dc = dc_prev;
    carry.dr = dr_prev;
    carry.dp = vec![0.0; p.dims.pproj];

    GateDeltas {
        da_i,
        da_f,
        da_g,
        da_o,
    }
}

fn output_delta(logits: &[f64], label: usize, weight: f64) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(CoreError::validation(format!(
            "label index {label} out of range for {} classes",
            logits.len()
        )));
    }
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln() * weight;
    let mut dy: Vec<f64> = p.iter().map(|&q| q * weight).collect();
    dy[label] -= weight;
    Ok((loss, dy))
}

/// Exact BPTT gradient for a single-task branch on one utterance. Each
/// frame's loss is weighted by `frame_weight` (use 1/T for a per-utterance
/// average, or 1/total_batch_frames when accumulating a batch).
pub fn backward_single(
    params: &LstmpParams,
    frames: &Mat,
    label: usize,
    lambda: f64,
    frame_weight: f64,
) -> Result<(f64, LstmpParams)> {
    let outs = forward_sequence(params, frames)?;
    let mut grads = params.zeros_like();
    let mut carry = BranchCarry::zero(params);
    let mut loss = 0.0;

    let zero_c = vec![0.0; params.dims.cell];
    let zero_r = vec![0.0; params.dims.rproj];

    for t in (0..outs.len()).rev() {
        let (loss_t, dy) = output_delta(&outs[t].y, label, lambda * frame_weight)?;
        loss += loss_t;
        let (c_prev, r_prev) = if t == 0 {
            (zero_c.as_slice(), zero_r.as_slice())
        } else {
            (outs[t - 1].c.as_slice(), outs[t - 1].r.as_slice())
        };
        branch_backward_step(
            params,
            frames.row(t),
            c_prev,
            r_prev,
            &outs[t],
            &dy,
            &mut carry,
            &mut grads,
        );
    }
    check_finite_grads(grads.blocks().iter().map(|(n, m)| (n.to_string(), *m)))?;
    Ok((loss, grads))
}

fn check_finite_grads<'a>(blocks: impl Iterator<Item = (String, &'a Mat)>) -> Result<()> {
    for (name, m) in blocks {
        if !m.all_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite gradient in parameter block {name}"
            )));
        }
    }
    Ok(())
}

/// Exact BPTT gradient of the joint loss through both branches and the
/// inter-branch feedback paths, for one utterance.
pub fn backward_multitask(
    model: &MultiTaskModel,
    frames: &Mat,
    lang: usize,
    spk: usize,
    loss_spec: &LossSpec,
    frame_weight: f64,
) -> Result<(f64, MtGrads)> {
    loss_spec.validate()?;
    let (outs_l, outs_s) = mt_forward(model, frames)?;
    let t_len = outs_l.len();
    let mut grads = MtGrads::zeros_like(model);
    let mut carry_l = BranchCarry::zero(&model.lre);
    let mut carry_s = BranchCarry::zero(&model.sre);
    let mut loss = 0.0;

    let zero_cl = vec![0.0; model.lre.dims.cell];
    let zero_rl = vec![0.0; model.lre.dims.rproj];
    let zero_cs = vec![0.0; model.sre.dims.cell];
    let zero_rs = vec![0.0; model.sre.dims.rproj];

    for t in (0..t_len).rev() {
        let (loss_l, dy_l) =
            output_delta(&outs_l[t].y, lang, loss_spec.lambda_lre * frame_weight)?;
        let (loss_s, dy_s) =
            output_delta(&outs_s[t].y, spk, loss_spec.lambda_sre * frame_weight)?;
        loss += loss_l + loss_s;

        let (cl_prev, rl_prev) = if t == 0 {
            (zero_cl.as_slice(), zero_rl.as_slice())
        } else {
            (outs_l[t - 1].c.as_slice(), outs_l[t - 1].r.as_slice())
        };
        let (cs_prev, rs_prev) = if t == 0 {
            (zero_cs.as_slice(), zero_rs.as_slice())
        } else {
            (outs_s[t - 1].c.as_slice(), outs_s[t - 1].r.as_slice())
        };

        let del_l = branch_backward_step(
            &model.lre,
            frames.row(t),
            cl_prev,
            rl_prev,
            &outs_l[t],
            &dy_l,
            &mut carry_l,
            &mut grads.lre,
        );
        let del_s = branch_backward_step(
            &model.sre,
            frames.row(t),
            cs_prev,
            rs_prev,
            &outs_s[t],
            &dy_s,
            &mut carry_s,
            &mut grads.sre,
        );

        // cross-task paths: the l branch's gate deltas reach the s
        // branch's t-1 projections through W^{ls}, and vice versa
        if t > 0 {
            for (b, gb) in model.cross.into_lre.iter().zip(&mut grads.cross.into_lre) {
                let delta = del_l.for_sink(b.sink);
                let src = match b.source {
                    Source::Rproj => outs_s[t - 1].r.as_slice(),
                    Source::Pproj => outs_s[t - 1].p.as_slice(),
                };
                gb.w.outer_acc(delta, src);
                match b.source {
                    Source::Rproj => b.w.tr_matvec_acc(delta, &mut carry_s.dr),
                    Source::Pproj => b.w.tr_matvec_acc(delta, &mut carry_s.dp),
                }
            }
            for (b, gb) in model.cross.into_sre.iter().zip(&mut grads.cross.into_sre) {
                let delta = del_s.for_sink(b.sink);
                let src = match b.source {
                    Source::Rproj => outs_l[t - 1].r.as_slice(),
                    Source::Pproj => outs_l[t - 1].p.as_slice(),
                };
                gb.w.outer_acc(delta, src);
                match b.source {
                    Source::Rproj => b.w.tr_matvec_acc(delta, &mut carry_l.dr),
                    Source::Pproj => b.w.tr_matvec_acc(delta, &mut carry_l.dp),
                }
            }
        }
    }

    check_finite_grads(
        grads
            .lre
            .blocks()
            .iter()
            .map(|(n, m)| (format!("lre.{n}"), *m))
            .chain(grads.sre.blocks().iter().map(|(n, m)| (format!("sre.{n}"), *m)))
            .chain(grads.cross.blocks().into_iter()),
    )?;
    Ok((loss, grads))
}

/// Classical momentum update on one parameter block:
/// v <- momentum * v - lr * g;  p <- p + v.
pub fn sgd_step(param: &mut Mat, grad: &Mat, vel: &mut Mat, lr: f64, momentum: f64) {
    for ((p, g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(vel.data_mut())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

fn grad_global_norm<'a>(blocks: impl Iterator<Item = &'a Mat>) -> f64 {
    blocks
        .map(|m| m.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn clip_blocks<'a>(blocks: impl Iterator<Item = &'a mut Mat>, factor: f64) {
    for m in blocks {
        crate::linalg::scale(m.data_mut(), factor);
    }
}

fn accumulate(into: &mut LstmpParams, from: &LstmpParams) {
    for ((_, a), (_, b)) in into.blocks_mut().into_iter().zip(from.blocks()) {
        crate::linalg::add_assign(a.data_mut(), b.data());
    }
}

/// Per-epoch mean frame loss for the trace.
pub type LossTrace = Vec<f64>;

/// Trains one single-task branch with frame-level cross-entropy.
/// `data` pairs each utterance's frame matrix with its class index.
pub fn train_single(
    params: &mut LstmpParams,
    data: &[(&Mat, usize)],
    opt: &OptimizerSpec,
) -> Result<LossTrace> {
    opt.validate()?;
    if data.is_empty() {
        return Err(CoreError::validation("training set is empty"));
    }
    for (frames, label) in data {
        if *label >= params.dims.out {
            return Err(CoreError::validation(format!(
                "label {label} out of range for {} outputs",
                params.dims.out
            )));
        }
        if frames.cols() != params.dims.input {
            return Err(CoreError::dims("training sequence dim mismatch"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut vel = params.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let lr = opt.learning_rate * opt.lr_decay.powi(epoch as i32);
        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;

        for batch in order.chunks(opt.batch_size) {
            let total_frames: usize = batch.iter().map(|&i| data[i].0.rows()).sum();
            let fw = 1.0 / total_frames as f64;
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g) = backward_single(params, data[i].0, data[i].1, 1.0, fw)?;
                batch_loss += loss;
                accumulate(&mut grads, &g);
            }
            if opt.clip_norm > 0.0 {
                let norm = grad_global_norm(grads.blocks().iter().map(|(_, m)| *m));
                if norm > opt.clip_norm {
                    let f = opt.clip_norm / norm;
                    clip_blocks(grads.blocks_mut().into_iter().map(|(_, m)| m), f);
                }
            }
            for ((_, p), ((_, g), (_, v))) in params
                .blocks_mut()
                .into_iter()
                .zip(grads.blocks().into_iter().zip(vel.blocks_mut()))
            {
                sgd_step(p, g, v, lr, opt.momentum);
            }
            epoch_loss += batch_loss * total_frames as f64;
            epoch_frames += total_frames;
        }
        trace.push(epoch_loss / epoch_frames as f64);
    }
    Ok(trace)
}

/// Trains the coupled model; `data` carries (frames, language index,
/// speaker index) per utterance.
pub fn train_multitask(
    model: &mut MultiTaskModel,
    data: &[(&Mat, usize, usize)],
    loss_spec: &LossSpec,
    opt: &OptimizerSpec,
) -> Result<LossTrace> {
    opt.validate()?;
    loss_spec.validate()?;
    if data.is_empty() {
        return Err(CoreError::validation("training set is empty"));
    }
    for (frames, lang, spk) in data {
        if *lang >= model.lre.dims.out || *spk >= model.sre.dims.out {
            return Err(CoreError::validation("label out of range for model outputs"));
        }
        if frames.cols() != model.lre.dims.input {
            return Err(CoreError::dims("training sequence dim mismatch"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut vel = MtGrads::zeros_like(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let lr = opt.learning_rate * opt.lr_decay.powi(epoch as i32);
        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;

        for batch in order.chunks(opt.batch_size) {
            let total_frames: usize = batch.iter().map(|&i| data[i].0.rows()).sum();
            let fw = 1.0 / total_frames as f64;
            let mut grads = MtGrads::zeros_like(model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (frames, lang, spk) = data[i];
                let (loss, g) = backward_multitask(model, frames, lang, spk, loss_spec, fw)?;
                batch_loss += loss;
                accumulate(&mut grads.lre, &g.lre);
                accumulate(&mut grads.sre, &g.sre);
                for (a, b) in grads
                    .cross
                    .blocks_mut()
                    .into_iter()
                    .zip(g.cross.blocks())
                {
                    crate::linalg::add_assign(a.1.data_mut(), b.1.data());
                }
            }
            if opt.clip_norm > 0.0 {
                let norm = grad_global_norm(
                    grads
                        .lre
                        .blocks()
                        .iter()
                        .map(|(_, m)| *m)
                        .chain(grads.sre.blocks().iter().map(|(_, m)| *m))
                        .chain(grads.cross.blocks().iter().map(|(_, m)| &**m)),
                );
                if norm > opt.clip_norm {
                    let f = opt.clip_norm / norm;
                    clip_blocks(
                        grads
                            .lre
                            .blocks_mut()
                            .into_iter()
                            .map(|(_, m)| m)
                            .chain(grads.sre.blocks_mut().into_iter().map(|(_, m)| m))
                            .chain(grads.cross.blocks_mut().into_iter().map(|(_, m)| m)),
                        f,
                    );
                }
            }
            for ((_, p), ((_, g), (_, v))) in model
                .lre
                .blocks_mut()
                .into_iter()
                .zip(grads.lre.blocks().into_iter().zip(vel.lre.blocks_mut()))
            {
                sgd_step(p, g, v, lr, opt.momentum);
            }
            for ((_, p), ((_, g), (_, v))) in model
                .sre
                .blocks_mut()
                .into_iter()
                .zip(grads.sre.blocks().into_iter().zip(vel.sre.blocks_mut()))
            {
                sgd_step(p, g, v, lr, opt.momentum);
            }
            for ((_, p), ((_, g), (_, v))) in model
                .cross
                .blocks_mut()
                .into_iter()
                .zip(grads.cross.blocks().into_iter().zip(vel.cross.blocks_mut()))
            {
                sgd_step(p, g, v, lr, opt.momentum);
            }
            epoch_loss += batch_loss * total_frames as f64;
            epoch_frames += total_frames;
        }
        trace.push(epoch_loss / epoch_frames as f64);
    }
    Ok(trace)
}

/// Analytic-vs-numeric comparison, per parameter block.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub blocks: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

fn block_rel_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let mut max_diff = 0.0f64;
    let mut max_mag = 0.0f64;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        max_diff = max_diff.max((a - n).abs());
        max_mag = max_mag.max(a.abs()).max(n.abs());
    }
    max_diff / max_mag.max(1e-6)
}

fn model_loss(
    model: &MultiTaskModel,
    frames: &Mat,
    lang: usize,
    spk: usize,
    loss_spec: &LossSpec,
    frame_weight: f64,
) -> Result<f64> {
    let (outs_l, outs_s) = mt_forward(model, frames)?;
    let mut loss = 0.0;
    for t in 0..outs_l.len() {
        loss += loss_spec.lambda_lre * cross_entropy(&outs_l[t].y, lang)? * frame_weight;
        loss += loss_spec.lambda_sre * cross_entropy(&outs_s[t].y, spk)? * frame_weight;
    }
    Ok(loss)
}

/// Central finite-difference check of `backward_multitask` over all
/// parameter blocks including the cross-task matrices. Tiny models only.
pub fn gradcheck(
    dims: MultiTaskDims,
    routing: FeedbackRouting,
    t_len: usize,
    seed: u64,
) -> Result<GradReport> {
    if dims.cell > 16 {
        return Err(CoreError::validation(
            "gradcheck is restricted to cell <= 16 to bound runtime",
        ));
    }
    let languages = (0..dims.n_languages).map(|i| format!("L{i}")).collect();
    let speakers = (0..dims.n_speakers).map(|i| format!("s{i}")).collect();
    let mut model = init_multitask(dims, routing, 0.3, 0.2, seed, None, languages, speakers)?;
    let frames = Mat::from_fn(t_len, dims.input, |t, d| {
        ((t * dims.input + d) as f64 * 0.739 + seed as f64 * 0.173).sin()
    });
    let lang = (seed as usize) % dims.n_languages;
    let spk = (seed as usize) % dims.n_speakers;
    let loss_spec = LossSpec::default();
    let fw = 1.0 / t_len as f64;

    let (_, analytic) = backward_multitask(&model, &frames, lang, spk, &loss_spec, fw)?;

    let eps = 1e-4;
    let block_count = 2 * model.lre.blocks().len() + model.cross.blocks().len();
    let _ = block_count;

    let names: Vec<String> = model
        .lre
        .blocks()
        .iter()
        .map(|(n, _)| format!("lre.{n}"))
        .chain(model.sre.blocks().iter().map(|(n, _)| format!("sre.{n}")))
        .chain(model.cross.blocks().into_iter().map(|(n, _)| n))
        .collect();

    let analytic_blocks: Vec<Mat> = analytic
        .lre
        .blocks()
        .into_iter()
        .map(|(_, m)| m.clone())
        .chain(analytic.sre.blocks().into_iter().map(|(_, m)| m.clone()))
        .chain(analytic.cross.blocks().into_iter().map(|(_, m)| m.clone()))
        .collect();

    let n_lre = model.lre.blocks().len();
    let n_sre = model.sre.blocks().len();

    let mut report_blocks = Vec::with_capacity(names.len());
    let mut overall = 0.0f64;

    for (bi, name) in names.iter().enumerate() {
        let (rows, cols) = {
            let m = nth_block(&model, bi, n_lre, n_sre);
            (m.rows(), m.cols())
        };
        let mut numeric = Mat::zeros(rows, cols);
        for idx in 0..rows * cols {
            let orig = nth_block(&model, bi, n_lre, n_sre).data()[idx];
            nth_block_mut(&mut model, bi, n_lre, n_sre).data_mut()[idx] = orig + eps;
            let up = model_loss(&model, &frames, lang, spk, &loss_spec, fw)?;
            nth_block_mut(&mut model, bi, n_lre, n_sre).data_mut()[idx] = orig - eps;
            let down = model_loss(&model, &frames, lang, spk, &loss_spec, fw)?;
            nth_block_mut(&mut model, bi, n_lre, n_sre).data_mut()[idx] = orig;
            numeric.data_mut()[idx] = (up - down) / (2.0 * eps);
        }
        let err = block_rel_error(&analytic_blocks[bi], &numeric);
        overall = overall.max(err);
        report_blocks.push((name.clone(), err));
    }

    Ok(GradReport {
        blocks: report_blocks,
        max_rel_error: overall,
    })
}

fn nth_block<'a>(model: &'a MultiTaskModel, i: usize, n_lre: usize, n_sre: usize) -> &'a Mat {
    if i < n_lre {
        model.lre.blocks().into_iter().nth(i).unwrap().1
    } else if i < n_lre + n_sre {
        model.sre.blocks().into_iter().nth(i - n_lre).unwrap().1
    } else {
        model
            .cross
            .blocks()
            .into_iter()
            .nth(i - n_lre - n_sre)
            .unwrap()
            .1
    }
}

fn nth_block_mut<'a>(
    model: &'a mut MultiTaskModel,
    i: usize,
    n_lre: usize,
    n_sre: usize,
) -> &'a mut Mat {
    if i < n_lre {
        model.lre.blocks_mut().into_iter().nth(i).unwrap().1
    } else if i < n_lre + n_sre {
        model.sre.blocks_mut().into_iter().nth(i - n_lre).unwrap().1
    } else {
        model
            .cross
            .blocks_mut()
            .into_iter()
            .nth(i - n_lre - n_sre)
            .unwrap()
            .1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::FeedbackRouting;

    fn tiny_dims() -> MultiTaskDims {
        MultiTaskDims {
            input: 3,
            cell: 5,
            rproj: 3,
            pproj: 3,
            n_languages: 2,
            n_speakers: 3,
        }
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = vec![vec![0.0, 0.0]; 4];
        let spec = LossSpec {
            lambda_lre: 1.0,
            lambda_sre: 0.0,
        };
        let loss = frame_loss(&logits, &[], 0, 0, &spec).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let logits = vec![vec![50.0, 0.0]];
        let spec = LossSpec {
            lambda_lre: 1.0,
            lambda_sre: 0.0,
        };
        let loss = frame_loss(&logits, &[], 0, 0, &spec).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn joint_loss_is_sum_of_task_losses() {
        let yl = vec![vec![0.2, -0.4], vec![1.0, 0.3]];
        let ys = vec![vec![-0.1, 0.8, 0.3], vec![0.5, 0.5, -0.2]];
        let spec = LossSpec::default();
        let joint = frame_loss(&yl, &ys, 1, 2, &spec).unwrap();
        // independent per-task summation oracle
        let mut expected = 0.0;
        for y in &yl {
            expected += cross_entropy(y, 1).unwrap();
        }
        for y in &ys {
            expected += cross_entropy(y, 2).unwrap();
        }
        expected /= 2.0;
        assert!((joint - expected).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let spec = LossSpec::default();
        assert!(frame_loss(&[vec![0.0, 0.0]], &[vec![0.0]], 2, 0, &spec).is_err());
    }

    #[test]
    fn gradcheck_default_routing_passes() {
        let report = gradcheck(tiny_dims(), FeedbackRouting::cell_candidate_both(), 7, 3).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} blocks {:?}",
            report.max_rel_error,
            report.blocks
        );
    }

    #[test]
    fn gradcheck_no_routing_passes() {
        let report = gradcheck(tiny_dims(), FeedbackRouting::none(), 6, 5).unwrap();
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn gradcheck_rejects_big_cells() {
        let mut dims = tiny_dims();
        dims.cell = 64;
        assert!(gradcheck(dims, FeedbackRouting::none(), 4, 1).is_err());
    }

    #[test]
    fn zero_task_weight_and_zero_cross_give_zero_branch_grads() {
        let dims = tiny_dims();
        let languages = vec!["L0".into(), "L1".into()];
        let speakers = vec!["a".into(), "b".into(), "c".into()];
        let model = init_multitask(
            dims,
            FeedbackRouting::none(),
            0.3,
            0.0,
            11,
            None,
            languages,
            speakers,
        )
        .unwrap();
        let frames = Mat::from_fn(5, 3, |t, d| ((t + d) as f64).sin());
        let spec = LossSpec {
            lambda_lre: 1.0,
            lambda_sre: 0.0,
        };
        let (_, grads) = backward_multitask(&model, &frames, 0, 1, &spec, 0.2).unwrap();
        for (_, m) in grads.sre.blocks() {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
        // LRE branch must have some signal
        assert!(grads
            .lre
            .blocks()
            .iter()
            .any(|(_, m)| m.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn zero_task_weight_with_cross_still_reaches_other_branch() {
        let dims = tiny_dims();
        let languages = vec!["L0".into(), "L1".into()];
        let speakers = vec!["a".into(), "b".into(), "c".into()];
        let model = init_multitask(
            dims,
            FeedbackRouting::cell_candidate_both(),
            0.3,
            0.2,
            13,
            None,
            languages,
            speakers,
        )
        .unwrap();
        let frames = Mat::from_fn(6, 3, |t, d| ((2 * t + d) as f64 * 0.4).cos());
        let spec = LossSpec {
            lambda_lre: 1.0,
            lambda_sre: 0.0,
        };
        let (_, grads) = backward_multitask(&model, &frames, 1, 0, &spec, 1.0 / 6.0).unwrap();
        // the loss reaches the speaker branch through the feedback path
        let sre_nonzero = grads
            .sre
            .blocks()
            .iter()
            .any(|(_, m)| m.data().iter().any(|&v| v != 0.0));
        assert!(sre_nonzero);

        // and finite differences agree on a couple of speaker-branch entries
        let eps = 1e-4;
        let mut m1 = model.clone();
        let orig = m1.sre.w_cx.at(0, 0);
        m1.sre.w_cx.set(0, 0, orig + eps);
        let up = model_loss(&m1, &frames, 1, 0, &spec, 1.0 / 6.0).unwrap();
        m1.sre.w_cx.set(0, 0, orig - eps);
        let down = model_loss(&m1, &frames, 1, 0, &spec, 1.0 / 6.0).unwrap();
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.sre.w_cx.at(0, 0);
        assert!(
            (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6) < 1e-4
        );
    }

    #[test]
    fn sgd_momentum_matches_hand_recursion() {
        let mut p = Mat::from_vec(1, 2, vec![1.0, -2.0]);
        let g1 = Mat::from_vec(1, 2, vec![0.5, 0.1]);
        let g2 = Mat::from_vec(1, 2, vec![-0.2, 0.3]);
        let mut v = Mat::zeros(1, 2);
        let (lr, mom) = (0.1, 0.9);
        sgd_step(&mut p, &g1, &mut v, lr, mom);
        sgd_step(&mut p, &g2, &mut v, lr, mom);
        // hand recursion
        let mut hp = [1.0, -2.0];
        let mut hv = [0.0, 0.0];
        for g in [[0.5, 0.1], [-0.2, 0.3]] {
            for k in 0..2 {
                hv[k] = mom * hv[k] - lr * g[k];
                hp[k] += hv[k];
            }
        }
        assert_eq!(p.data(), &hp);
    }

    #[test]
    fn sgd_no_momentum_subtracts_gradient() {
        let mut p = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        let g = Mat::from_vec(1, 2, vec![0.25, -0.5]);
        let mut v = Mat::zeros(1, 2);
        sgd_step(&mut p, &g, &mut v, 1.0, 0.0);
        assert_eq!(p.data(), &[0.75, 1.5]);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = Mat::from_vec(1, 2, vec![3.0, 4.0]);
        let g = Mat::zeros(1, 2);
        let mut v = Mat::zeros(1, 2);
        sgd_step(&mut p, &g, &mut v, 0.5, 0.9);
        assert_eq!(p.data(), &[3.0, 4.0]);
    }

    #[test]
    fn zero_lr_training_is_a_no_op() {
        let dims = crate::lstmp::LstmpDims {
            input: 3,
            cell: 4,
            rproj: 2,
            pproj: 2,
            out: 2,
        };
        let mut params = crate::lstmp::init_params(dims, 0.2, 9).unwrap();
        let before = params.clone();
        let frames = Mat::from_fn(8, 3, |t, d| ((t + d) as f64 * 0.3).sin());
        let opt = OptimizerSpec {
            learning_rate: 0.0,
            epochs: 2,
            ..OptimizerSpec::default()
        };
        let trace = train_single(&mut params, &[(&frames, 0), (&frames, 1)], &opt).unwrap();
        assert_eq!(params, before);
        assert!((trace[0] - trace[1]).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let dims = tiny_dims();
        let languages = vec!["L0".into(), "L1".into()];
        let speakers = vec!["a".into(), "b".into(), "c".into()];
        let frames: Vec<Mat> = (0..4)
            .map(|u| Mat::from_fn(7, 3, |t, d| ((u * 31 + t * 3 + d) as f64 * 0.21).sin()))
            .collect();
        let data: Vec<(&Mat, usize, usize)> = frames
            .iter()
            .enumerate()
            .map(|(u, f)| (f, u % 2, u % 3))
            .collect();
        let opt = OptimizerSpec {
            epochs: 3,
            ..OptimizerSpec::default()
        };
        let build = || {
            init_multitask(
                dims,
                FeedbackRouting::cell_candidate_both(),
                0.2,
                0.1,
                17,
                None,
                languages.clone(),
                speakers.clone(),
            )
            .unwrap()
        };
        let mut m1 = build();
        let mut m2 = build();
        let t1 = train_multitask(&mut m1, &data, &LossSpec::default(), &opt).unwrap();
        let t2 = train_multitask(&mut m2, &data, &LossSpec::default(), &opt).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
    }
}
