//! Single-task recurrent LSTM with a recurrent projection `r` and a
//! non-recurrent projection `p`. Peephole connections are diagonal
//! (stored as cell-sized column vectors).

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::{sigmoid, Mat};

/// Layer sizes of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmpDims {
    pub input: usize,
    pub cell: usize,
    pub rproj: usize,
    pub pproj: usize,
    pub out: usize,
}

impl LstmpDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input", self.input),
            ("cell", self.cell),
            ("rproj", self.rproj),
            ("pproj", self.pproj),
            ("out", self.out),
        ] {
            if v == 0 {
                return Err(CoreError::validation(format!("dimension `{name}` must be >= 1")));
            }
        }
        Ok(())
    }
}

/// All weights and biases of one projected-LSTM branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmpParams {
    pub dims: LstmpDims,
    pub w_ix: Mat,
    pub w_fx: Mat,
    pub w_cx: Mat,
    pub w_ox: Mat,
    pub w_ir: Mat,
    pub w_fr: Mat,
    pub w_cr: Mat,
    pub w_or: Mat,
    // diagonal peepholes, cell x 1
    pub w_ic: Mat,
    pub w_fc: Mat,
    pub w_oc: Mat,
    pub b_i: Mat,
    pub b_f: Mat,
    pub b_c: Mat,
    pub b_o: Mat,
    pub w_rm: Mat,
    pub w_pm: Mat,
    pub w_yr: Mat,
    pub w_yp: Mat,
    pub b_y: Mat,
}

/// Per-step carry: cell state and recurrent projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmpState {
    pub c: Vec<f64>,
    pub r: Vec<f64>,
}

impl LstmpState {
    pub fn zero(dims: &LstmpDims) -> LstmpState {
        LstmpState {
            c: vec![0.0; dims.cell],
            r: vec![0.0; dims.rproj],
        }
    }
}

/// Everything one time step produces. `g_pre` is the cell-candidate
/// pre-activation, `g` its tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g_pre: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

/// Optional cell-sized addends injected into gate pre-activations by the
/// multi-task wrapper. A `None` field leaves that pre-activation untouched.
#[derive(Debug, Clone, Default)]
pub struct GateInjection {
    pub input_gate: Option<Vec<f64>>,
    pub forget_gate: Option<Vec<f64>>,
    pub output_gate: Option<Vec<f64>>,
    pub cell_candidate: Option<Vec<f64>>,
}

impl LstmpParams {
    pub fn zeros(dims: LstmpDims) -> LstmpParams {
        let d = &dims;
        LstmpParams {
            dims,
            w_ix: Mat::zeros(d.cell, d.input),
            w_fx: Mat::zeros(d.cell, d.input),
            w_cx: Mat::zeros(d.cell, d.input),
            w_ox: Mat::zeros(d.cell, d.input),
            w_ir: Mat::zeros(d.cell, d.rproj),
            w_fr: Mat::zeros(d.cell, d.rproj),
            w_cr: Mat::zeros(d.cell, d.rproj),
            w_or: Mat::zeros(d.cell, d.rproj),
            w_ic: Mat::zeros(d.cell, 1),
            w_fc: Mat::zeros(d.cell, 1),
            w_oc: Mat::zeros(d.cell, 1),
            b_i: Mat::zeros(d.cell, 1),
            b_f: Mat::zeros(d.cell, 1),
            b_c: Mat::zeros(d.cell, 1),
            b_o: Mat::zeros(d.cell, 1),
            w_rm: Mat::zeros(d.rproj, d.cell),
            w_pm: Mat::zeros(d.pproj, d.cell),
            w_yr: Mat::zeros(d.out, d.rproj),
            w_yp: Mat::zeros(d.out, d.pproj),
            b_y: Mat::zeros(d.out, 1),
        }
    }

    pub fn zeros_like(&self) -> LstmpParams {
        LstmpParams::zeros(self.dims)
    }

    /// Parameter blocks in a fixed order, used by the optimizer, the
    /// gradient checker and the serializer.
    pub fn blocks(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("W_ix", &self.w_ix),
            ("W_fx", &self.w_fx),
            ("W_cx", &self.w_cx),
            ("W_ox", &self.w_ox),
            ("W_ir", &self.w_ir),
            ("W_fr", &self.w_fr),
            ("W_cr", &self.w_cr),
            ("W_or", &self.w_or),
            ("W_ic", &self.w_ic),
            ("W_fc", &self.w_fc),
            ("W_oc", &self.w_oc),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
            ("W_rm", &self.w_rm),
            ("W_pm", &self.w_pm),
            ("W_yr", &self.w_yr),
            ("W_yp", &self.w_yp),
            ("b_y", &self.b_y),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("W_ix", &mut self.w_ix),
            ("W_fx", &mut self.w_fx),
            ("W_cx", &mut self.w_cx),
            ("W_ox", &mut self.w_ox),
            ("W_ir", &mut self.w_ir),
            ("W_fr", &mut self.w_fr),
            ("W_cr", &mut self.w_cr),
            ("W_or", &mut self.w_or),
            ("W_ic", &mut self.w_ic),
            ("W_fc", &mut self.w_fc),
            ("W_oc", &mut self.w_oc),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_c", &mut self.b_c),
            ("b_o", &mut self.b_o),
            ("W_rm", &mut self.w_rm),
            ("W_pm", &mut self.w_pm),
            ("W_yr", &mut self.w_yr),
            ("W_yp", &mut self.w_yp),
            ("b_y", &mut self.b_y),
        ]
    }
}

/// Uniform random initialization in [-init_scale, +init_scale],
/// deterministic in `seed`.
pub fn init_params(dims: LstmpDims, init_scale: f64, seed: u64) -> Result<LstmpParams> {
    dims.validate()?;
    if !(init_scale >= 0.0) {
        return Err(CoreError::validation("init_scale must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-init_scale, init_scale);
    let mut params = LstmpParams::zeros(dims);
    for (_, block) in params.blocks_mut() {
        for v in block.data_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

fn check_input_dim(params: &LstmpParams, x: &[f64]) -> Result<()> {
    if x.len() != params.dims.input {
        return Err(CoreError::dims(format!(
            "input vector has dim {}, model expects {}",
            x.len(),
            params.dims.input
        )));
    }
    Ok(())
}

/// One recursion step. `inj` carries cross-task addends for the
/// multi-task model; single-task callers pass `None`.
pub fn step_with_injection(
    params: &LstmpParams,
    state: &LstmpState,
    x: &[f64],
    inj: Option<&GateInjection>,
) -> Result<(LstmpState, StepOutput)> {
    check_input_dim(params, x)?;
    let cell = params.dims.cell;

    let mut a_i = params.b_i.data().to_vec();
    params.w_ix.matvec_acc(x, &mut a_i);
    params.w_ir.matvec_acc(&state.r, &mut a_i);
    for k in 0..cell {
        a_i[k] += params.w_ic.data()[k] * state.c[k];
    }

    let mut a_f = params.b_f.data().to_vec();
    params.w_fx.matvec_acc(x, &mut a_f);
    params.w_fr.matvec_acc(&state.r, &mut a_f);
    for k in 0..cell {
        a_f[k] += params.w_fc.data()[k] * state.c[k];
    }

    let mut g_pre = params.b_c.data().to_vec();
    params.w_cx.matvec_acc(x, &mut g_pre);
    params.w_cr.matvec_acc(&state.r, &mut g_pre);

    if let Some(inj) = inj {
        if let Some(e) = &inj.input_gate {
            crate::linalg::add_assign(&mut a_i, e);
        }
        if let Some(e) = &inj.forget_gate {
            crate::linalg::add_assign(&mut a_f, e);
        }
        if let Some(e) = &inj.cell_candidate {
            crate::linalg::add_assign(&mut g_pre, e);
        }
    }

    let i: Vec<f64> = a_i.iter().map(|&z| sigmoid(z)).collect();
    let f: Vec<f64> = a_f.iter().map(|&z| sigmoid(z)).collect();
    let g: Vec<f64> = g_pre.iter().map(|&z| z.tanh()).collect();

    let mut c = vec![0.0; cell];
    for k in 0..cell {
        c[k] = f[k] * state.c[k] + i[k] * g[k];
    }

    let mut a_o = params.b_o.data().to_vec();
    params.w_ox.matvec_acc(x, &mut a_o);
    params.w_or.matvec_acc(&state.r, &mut a_o);
    for k in 0..cell {
        a_o[k] += params.w_oc.data()[k] * c[k];
    }
    if let Some(inj) = inj {
        if let Some(e) = &inj.output_gate {
            crate::linalg::add_assign(&mut a_o, e);
        }
    }
    let o: Vec<f64> = a_o.iter().map(|&z| sigmoid(z)).collect();

    let mut m = vec![0.0; cell];
    for k in 0..cell {
        m[k] = o[k] * c[k].tanh();
    }

    let r = params.w_rm.matvec(&m);
    let p = params.w_pm.matvec(&m);

    let mut y = params.b_y.data().to_vec();
    params.w_yr.matvec_acc(&r, &mut y);
    params.w_yp.matvec_acc(&p, &mut y);

    if c.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(CoreError::numeric(
            "non-finite value in cell state or output during recursion step",
        ));
    }

    let new_state = LstmpState { c: c.clone(), r: r.clone() };
    Ok((
        new_state,
        StepOutput {
            i,
            f,
            o,
            g_pre,
            g,
            c,
            m,
            r,
            p,
            y,
        },
    ))
}

/// One recursion step without cross-task feedback.
pub fn step(params: &LstmpParams, state: &LstmpState, x: &[f64]) -> Result<(LstmpState, StepOutput)> {
    step_with_injection(params, state, x, None)
}

/// Unrolls the recursion over a T x D frame matrix from the zero state.
pub fn forward_sequence(params: &LstmpParams, frames: &Mat) -> Result<Vec<StepOutput>> {
    if frames.cols() != params.dims.input {
        return Err(CoreError::dims(format!(
            "sequence dim {} does not match model input dim {}",
            frames.cols(),
            params.dims.input
        )));
    }
    let mut state = LstmpState::zero(&params.dims);
    let mut outputs = Vec::with_capacity(frames.rows());
    for t in 0..frames.rows() {
        let (next, out) = step(params, &state, frames.row(t))
            .map_err(|e| CoreError::numeric(format!("step t={t}: {e}")))?;
        state = next;
        outputs.push(out);
    }
    Ok(outputs)
}
