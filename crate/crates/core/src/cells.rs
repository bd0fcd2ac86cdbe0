//! The S-RNN, the LSTM, its ablations and the coupled-gate cell.
//!
//! All gated variants share one step function. A variant only decides which
//! projections exist and how the content and output layers are formed:
//!
//! | variant                 | content c̃            | gates see h | output h       |
//! |-------------------------|----------------------|-------------|----------------|
//! | `Lstm`                  | tanh(W h + W x + b)  | yes         | o ∘ tanh(c)    |
//! | `LstmMinusSrnn`         | W_cx x               | yes         | o ∘ tanh(c)    |
//! | `LstmMinusSrnnMinusOut` | W_cx x               | yes         | tanh(c)        |
//! | `LstmMinusSrnnMinusHidden` | W_cx x            | no          | o ∘ tanh(c)    |
//! | `CoupledGate`           | tanh(W h + W x + b)  | yes, f = 1−i | o ∘ tanh(c)   |
//!
//! `Srnn` is the plain `h = tanh(W_hh h + W_hx x + b_h)` recurrence with no
//! memory cell. Ablated blocks are `None` inside [`CellParams`]; asking for
//! one by name is an [`Error::AbsentBlock`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{init_params, sigmoid_scalar, InitScheme, Matrix, Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Lstm,
    LstmMinusSrnn,
    LstmMinusSrnnMinusOut,
    LstmMinusSrnnMinusHidden,
    Srnn,
    CoupledGate,
}

impl Variant {
    /// Presentation order of the ablation tables, with the coupled-gate cell
    /// appended.
    pub const ALL: [Variant; 6] = [
        Variant::Lstm,
        Variant::LstmMinusSrnn,
        Variant::LstmMinusSrnnMinusOut,
        Variant::LstmMinusSrnnMinusHidden,
        Variant::Srnn,
        Variant::CoupledGate,
    ];

    pub const GATED: [Variant; 5] = [
        Variant::Lstm,
        Variant::LstmMinusSrnn,
        Variant::LstmMinusSrnnMinusOut,
        Variant::LstmMinusSrnnMinusHidden,
        Variant::CoupledGate,
    ];

    /// Stable numeric tag used by checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            Variant::Srnn => 0,
            Variant::Lstm => 1,
            Variant::LstmMinusSrnn => 2,
            Variant::LstmMinusSrnnMinusOut => 3,
            Variant::LstmMinusSrnnMinusHidden => 4,
            Variant::CoupledGate => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    /// Identifier used in configs, file names and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Srnn => "srnn",
            Variant::Lstm => "lstm",
            Variant::LstmMinusSrnn => "lstm-srnn",
            Variant::LstmMinusSrnnMinusOut => "lstm-srnn-out",
            Variant::LstmMinusSrnnMinusHidden => "lstm-srnn-hidden",
            Variant::CoupledGate => "coupled",
        }
    }

    /// Row label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Srnn => "- GATES",
            Variant::Lstm => "LSTM",
            Variant::LstmMinusSrnn => "- S-RNN",
            Variant::LstmMinusSrnnMinusOut => "- S-RNN - OUT",
            Variant::LstmMinusSrnnMinusHidden => "- S-RNN - HIDDEN",
            Variant::CoupledGate => "COUPLED",
        }
    }

    pub fn has_memory_cell(self) -> bool {
        self != Variant::Srnn
    }

    fn content_is_linear(self) -> bool {
        matches!(
            self,
            Variant::LstmMinusSrnn | Variant::LstmMinusSrnnMinusOut | Variant::LstmMinusSrnnMinusHidden
        )
    }

    fn gates_see_hidden(self) -> bool {
        self != Variant::LstmMinusSrnnMinusHidden
    }

    fn has_forget_gate(self) -> bool {
        matches!(
            self,
            Variant::Lstm | Variant::LstmMinusSrnn | Variant::LstmMinusSrnnMinusOut | Variant::LstmMinusSrnnMinusHidden
        )
    }

    fn has_output_gate(self) -> bool {
        matches!(
            self,
            Variant::Lstm | Variant::LstmMinusSrnn | Variant::LstmMinusSrnnMinusHidden | Variant::CoupledGate
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().to_ascii_lowercase().as_str() {
            "srnn" | "s-rnn" | "gates" | "lstm-gates" => Variant::Srnn,
            "lstm" => Variant::Lstm,
            "lstm-srnn" | "-srnn" => Variant::LstmMinusSrnn,
            "lstm-srnn-out" | "-srnn-out" => Variant::LstmMinusSrnnMinusOut,
            "lstm-srnn-hidden" | "-srnn-hidden" => Variant::LstmMinusSrnnMinusHidden,
            "coupled" | "coupled-gate" | "cifg" => Variant::CoupledGate,
            other => return Err(Error::Config(format!("unknown variant `{other}`"))),
        };
        Ok(v)
    }
}

/// Affine map `W_h·h + W_x·x + b` with optional recurrent and bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    letter: char,
    wh: Option<Matrix>,
    wx: Matrix,
    b: Option<Vector>,
}

impl Projection {
    fn zeros(letter: char, input_dim: usize, hidden_dim: usize, recurrent: bool, bias: bool) -> Self {
        Projection {
            letter,
            wh: recurrent.then(|| Matrix::zeros(hidden_dim, hidden_dim)),
            wx: Matrix::zeros(hidden_dim, input_dim),
            b: bias.then(|| Vector::zeros(hidden_dim)),
        }
    }

    pub fn wh(&self) -> Option<&Matrix> {
        self.wh.as_ref()
    }

    pub fn wh_mut(&mut self) -> Option<&mut Matrix> {
        self.wh.as_mut()
    }

    pub fn wx(&self) -> &Matrix {
        &self.wx
    }

    pub fn wx_mut(&mut self) -> &mut Matrix {
        &mut self.wx
    }

    pub fn b(&self) -> Option<&Vector> {
        self.b.as_ref()
    }

    pub fn b_mut(&mut self) -> Option<&mut Vector> {
        self.b.as_mut()
    }

    /// Pre-activations for a batch of `(h, x)` pairs.
    pub(crate) fn forward_batch(&self, hs: &[&[f64]], xs: &[&[f64]]) -> Vec<Vector> {
        let rows = self.wx.rows();
        let mut pre: Vec<Vector> = (0..xs.len())
            .map(|_| match &self.b {
                Some(b) => b.clone(),
                None => Vector::zeros(rows),
            })
            .collect();
        if let Some(wh) = &self.wh {
            wh.gemv_many_acc(hs, &mut pre);
        }
        for (x, p) in xs.iter().zip(pre.iter_mut()) {
            self.wx.gemv_acc(x, p);
        }
        pre
    }

    /// Accumulates parameter gradients into `grad` and input gradients into
    /// `dh` / `dx`, one entry per batch element.
    pub(crate) fn backward_batch(
        &self,
        grad: &mut Projection,
        dpre: &[&[f64]],
        hs: &[&[f64]],
        xs: &[&[f64]],
        dh: &mut [Vector],
        dx: Option<&mut [Vector]>,
    ) {
        for (d, x) in dpre.iter().zip(xs) {
            grad.wx.rank1_acc(d, x);
        }
        if let (Some(wh), Some(gwh)) = (&self.wh, &mut grad.wh) {
            gwh.rank1_many_acc(dpre, hs);
            wh.gemv_t_many_acc(dpre, dh);
        }
        if let Some(gb) = &mut grad.b {
            for d in dpre {
                for (g, v) in gb.iter_mut().zip(d.iter()) {
                    *g += v;
                }
            }
        }
        if let Some(dx) = dx {
            for (d, out) in dpre.iter().zip(dx.iter_mut()) {
                self.wx.gemv_t_acc(d, out);
            }
        }
    }

    fn block_names(&self) -> [String; 3] {
        let l = self.letter;
        [format!("W_{l}h"), format!("W_{l}x"), format!("b_{l}")]
    }

    fn blocks(&self) -> Vec<(String, &[f64])> {
        let [nh, nx, nb] = self.block_names();
        let mut out = Vec::with_capacity(3);
        if let Some(wh) = &self.wh {
            out.push((nh, wh.as_slice()));
        }
        out.push((nx, self.wx.as_slice()));
        if let Some(b) = &self.b {
            out.push((nb, b.as_slice()));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let [nh, nx, nb] = self.block_names();
        let mut out = Vec::with_capacity(3);
        if let Some(wh) = &mut self.wh {
            out.push((nh, wh.as_mut_slice()));
        }
        out.push((nx, self.wx.as_mut_slice()));
        if let Some(b) = &mut self.b {
            out.push((nb, &mut b[..]));
        }
        out
    }
}

/// Every weight matrix and bias of one cell. Which projections exist is fixed
/// by the variant at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    variant: Variant,
    input_dim: usize,
    hidden_dim: usize,
    content: Projection,
    input: Option<Projection>,
    forget: Option<Projection>,
    output: Option<Projection>,
}

impl CellParams {
    pub fn zeros(variant: Variant, input_dim: usize, hidden_dim: usize) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        if variant == Variant::Srnn {
            return CellParams {
                variant,
                input_dim,
                hidden_dim,
                content: Projection::zeros('h', d, h, true, true),
                input: None,
                forget: None,
                output: None,
            };
        }
        let linear = variant.content_is_linear();
        let rec = variant.gates_see_hidden();
        CellParams {
            variant,
            input_dim,
            hidden_dim,
            content: Projection::zeros('c', d, h, !linear, !linear),
            input: Some(Projection::zeros('i', d, h, rec, true)),
            forget: variant
                .has_forget_gate()
                .then(|| Projection::zeros('f', d, h, rec, true)),
            output: variant
                .has_output_gate()
                .then(|| Projection::zeros('o', d, h, rec, true)),
        }
    }

    /// Xavier-uniform weights, zero biases except the forget-gate bias,
    /// which starts at 1.
    pub fn init(variant: Variant, input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut p = CellParams::zeros(variant, input_dim, hidden_dim);
        for proj in p.projections_mut() {
            if let Some(wh) = &mut proj.wh {
                *wh = init_params(rng, hidden_dim, hidden_dim, InitScheme::XavierUniform);
            }
            proj.wx = init_params(rng, hidden_dim, input_dim, InitScheme::XavierUniform);
        }
        if let Some(b) = p.forget.as_mut().and_then(|f| f.b.as_mut()) {
            b.iter_mut().for_each(|v| *v = 1.0);
        }
        p
    }

    /// Overwrites the forget-gate bias. The coupled cell has no forget
    /// block, so its input-gate bias becomes `-bias`, which starts the
    /// implied forget gate `1 - i` at the same `σ(bias)`. No-op for S-RNN.
    pub fn set_forget_bias(&mut self, bias: f64) {
        let (target, value) = if let Some(f) = self.forget.as_mut() {
            (f.b.as_mut(), bias)
        } else if self.variant == Variant::CoupledGate {
            (self.input.as_mut().and_then(|i| i.b.as_mut()), -bias)
        } else {
            (None, 0.0)
        };
        if let Some(b) = target {
            b.iter_mut().for_each(|v| *v = value);
        }
    }

    /// Same shapes, all zeros. Used as the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        CellParams::zeros(self.variant, self.input_dim, self.hidden_dim)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Content layer projection, or the hidden projection of the S-RNN.
    pub fn content(&self) -> &Projection {
        &self.content
    }

    pub fn content_mut(&mut self) -> &mut Projection {
        &mut self.content
    }

    pub fn input_gate(&self) -> Result<&Projection> {
        self.input.as_ref().ok_or_else(|| self.absent("W_ix"))
    }

    pub fn input_gate_mut(&mut self) -> Result<&mut Projection> {
        let err = self.absent("W_ix");
        self.input.as_mut().ok_or(err)
    }

    pub fn forget_gate(&self) -> Result<&Projection> {
        self.forget.as_ref().ok_or_else(|| self.absent("W_fx"))
    }

    pub fn forget_gate_mut(&mut self) -> Result<&mut Projection> {
        let err = self.absent("W_fx");
        self.forget.as_mut().ok_or(err)
    }

    pub fn output_gate(&self) -> Result<&Projection> {
        self.output.as_ref().ok_or_else(|| self.absent("W_ox"))
    }

    pub fn output_gate_mut(&mut self) -> Result<&mut Projection> {
        let err = self.absent("W_ox");
        self.output.as_mut().ok_or(err)
    }

    fn absent(&self, block: &str) -> Error {
        Error::AbsentBlock {
            block: block.to_string(),
            variant: self.variant,
        }
    }

    fn projections(&self) -> impl Iterator<Item = &Projection> {
        std::iter::once(&self.content)
            .chain(self.input.as_ref())
            .chain(self.forget.as_ref())
            .chain(self.output.as_ref())
    }

    fn projections_mut(&mut self) -> impl Iterator<Item = &mut Projection> {
        std::iter::once(&mut self.content)
            .chain(self.input.as_mut())
            .chain(self.forget.as_mut())
            .chain(self.output.as_mut())
    }

    /// Named parameter blocks in canonical order (content, input, forget,
    /// output; within each `W_*h`, `W_*x`, `b_*`).
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        self.projections().flat_map(|p| p.blocks()).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.projections_mut().flat_map(|p| p.blocks_mut()).collect()
    }

    pub fn block(&self, name: &str) -> Result<&[f64]> {
        self.blocks()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, data)| data)
            .ok_or_else(|| self.absent(name))
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let err = self.absent(name);
        self.blocks_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, data)| data)
            .ok_or(err)
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Scalar count of [`CellParams`] for a variant, from the block shapes.
pub fn param_count(variant: Variant, input_dim: usize, hidden_dim: usize) -> usize {
    let (d, h) = (input_dim, hidden_dim);
    let recurrent = h * h + h * d + h;
    let input_only = h * d + h;
    let linear = h * d;
    match variant {
        Variant::Srnn => recurrent,
        Variant::Lstm => 4 * recurrent,
        Variant::LstmMinusSrnn => linear + 3 * recurrent,
        Variant::LstmMinusSrnnMinusOut => linear + 2 * recurrent,
        Variant::LstmMinusSrnnMinusHidden => linear + 3 * input_only,
        Variant::CoupledGate => 3 * recurrent,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vector,
    /// Memory cell; `None` for the S-RNN.
    pub c: Option<Vector>,
}

impl CellState {
    pub fn zeros(params: &CellParams) -> Self {
        let h = params.hidden_dim;
        CellState {
            h: Vector::zeros(h),
            c: params.variant.has_memory_cell().then(|| Vector::zeros(h)),
        }
    }
}

/// Memory-cell part of a step record.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryTrace {
    pub c_prev: Vector,
    pub c: Vector,
    pub i: Vector,
    pub pre_i: Vector,
    pub f: Vector,
    /// `None` when `f = 1 − i`.
    pub pre_f: Option<Vector>,
    pub o: Option<Vector>,
    pub pre_o: Option<Vector>,
}

/// Everything one step computed. For the S-RNN `c_tilde` is the new hidden
/// state itself and `memory` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub pre_content: Vector,
    pub c_tilde: Vector,
    pub memory: Option<MemoryTrace>,
    pub h: Vector,
}

impl StepTrace {
    pub fn state(&self) -> CellState {
        CellState {
            h: self.h.clone(),
            c: self.memory.as_ref().map(|m| m.c.clone()),
        }
    }
}

pub fn step(params: &CellParams, prev: &CellState, x: &Vector) -> Result<(CellState, StepTrace)> {
    step_at(params, prev, x, 0)
}

fn check_dims(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { op, expected, actual });
    }
    Ok(())
}

pub(crate) fn step_at(
    params: &CellParams,
    prev: &CellState,
    x: &Vector,
    timestep: usize,
) -> Result<(CellState, StepTrace)> {
    let mut out = step_batch(params, &[prev], &[x], timestep)?;
    Ok(out.pop().expect("one step per input"))
}

/// One step for several independent sequences in lockstep. Each result is
/// bit-identical to stepping that sequence alone.
pub(crate) fn step_batch(
    params: &CellParams,
    prevs: &[&CellState],
    xs: &[&Vector],
    timestep: usize,
) -> Result<Vec<(CellState, StepTrace)>> {
    for (prev, x) in prevs.iter().zip(xs) {
        check_dims("step input", params.input_dim, x.len())?;
        check_dims("step hidden state", params.hidden_dim, prev.h.len())?;
        if !x.is_finite() {
            return Err(Error::NonFiniteInput { timestep });
        }
        if params.variant != Variant::Srnn {
            let c = prev.c.as_ref().map_or(0, |c| c.len());
            check_dims("step memory cell", params.hidden_dim, c)?;
        }
    }
    let hs: Vec<&[f64]> = prevs.iter().map(|p| &p.h[..]).collect();
    let xr: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
    let project = |p: Option<&Projection>| p.map(|p| p.forward_batch(&hs, &xr).into_iter());
    let mut pre_content = params.content.forward_batch(&hs, &xr).into_iter();
    let mut pre_i = project(params.input.as_ref());
    let mut pre_f = project(params.forget.as_ref());
    let mut pre_o = project(params.output.as_ref());

    let mut out = Vec::with_capacity(xs.len());
    for (prev, x) in prevs.iter().zip(xs) {
        let pre_content = pre_content.next().expect("batch-sized");
        let next = |it: &mut Option<std::vec::IntoIter<Vector>>| it.as_mut().map(|i| i.next().expect("batch-sized"));
        out.push(finish_step(
            params,
            prev,
            x,
            pre_content,
            next(&mut pre_i),
            next(&mut pre_f),
            next(&mut pre_o),
        ));
    }
    Ok(out)
}

/// Elementwise part of a step, given every pre-activation.
fn finish_step(
    params: &CellParams,
    prev: &CellState,
    x: &Vector,
    pre_content: Vector,
    pre_i: Option<Vector>,
    pre_f: Option<Vector>,
    pre_o: Option<Vector>,
) -> (CellState, StepTrace) {
    if params.variant == Variant::Srnn {
        let h: Vector = pre_content.iter().map(|v| v.tanh()).collect::<Vec<_>>().into();
        let trace = StepTrace {
            x: x.clone(),
            h_prev: prev.h.clone(),
            pre_content,
            c_tilde: h.clone(),
            memory: None,
            h: h.clone(),
        };
        return (CellState { h, c: None }, trace);
    }
    let c_prev = prev.c.as_ref().expect("checked by caller");

    let c_tilde: Vector = if params.variant.content_is_linear() {
        pre_content.clone()
    } else {
        pre_content.iter().map(|v| v.tanh()).collect::<Vec<_>>().into()
    };

    let pre_i = pre_i.expect("gated variant has an input gate");
    let i = squash(&pre_i);
    let f: Vector = match &pre_f {
        Some(pre) => squash(pre),
        None => i.iter().map(|v| 1.0 - v).collect::<Vec<_>>().into(),
    };

    let c: Vector = (0..params.hidden_dim)
        .map(|k| cell_update(i[k], c_tilde[k], f[k], c_prev[k]))
        .collect::<Vec<_>>()
        .into();

    let (o, h) = match &pre_o {
        Some(pre) => {
            let o = squash(pre);
            let h: Vector = o
                .iter()
                .zip(c.iter())
                .map(|(o, c)| o * c.tanh())
                .collect::<Vec<_>>()
                .into();
            (Some(o), h)
        }
        None => (None, c.iter().map(|v| v.tanh()).collect::<Vec<_>>().into()),
    };

    let trace = StepTrace {
        x: x.clone(),
        h_prev: prev.h.clone(),
        pre_content,
        c_tilde,
        memory: Some(MemoryTrace {
            c_prev: c_prev.clone(),
            c: c.clone(),
            i,
            pre_i,
            f,
            pre_f,
            o,
            pre_o,
        }),
        h: h.clone(),
    };
    (CellState { h, c: Some(c) }, trace)
}

/// `c = i·c̃ + f·c_prev` for one coordinate; shared with trace recomputation.
#[inline]
pub fn cell_update(i: f64, c_tilde: f64, f: f64, c_prev: f64) -> f64 {
    i * c_tilde + f * c_prev
}

fn squash(pre: &Vector) -> Vector {
    pre.iter().map(|&v| sigmoid_scalar(v)).collect::<Vec<_>>().into()
}

pub fn unroll(params: &CellParams, init: &CellState, xs: &[Vector]) -> Result<Vec<StepTrace>> {
    let mut out = unroll_batch(params, &[init], &[xs])?;
    Ok(out.pop().expect("one sequence"))
}

/// Unrolls equal-length sequences in lockstep; `out[b]` equals
/// `unroll(params, inits[b], seqs[b])`.
pub fn unroll_batch(params: &CellParams, inits: &[&CellState], seqs: &[&[Vector]]) -> Result<Vec<Vec<StepTrace>>> {
    check_dims("batch initial states", seqs.len(), inits.len())?;
    let n = seqs.first().map_or(0, |s| s.len());
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    for s in seqs {
        check_dims("batch sequence length", n, s.len())?;
    }
    let mut traces: Vec<Vec<StepTrace>> = seqs.iter().map(|_| Vec::with_capacity(n)).collect();
    let mut states: Vec<CellState> = inits.iter().map(|s| (*s).clone()).collect();
    for t in 0..n {
        let prevs: Vec<&CellState> = states.iter().collect();
        let xs: Vec<&Vector> = seqs.iter().map(|s| &s[t]).collect();
        let stepped = step_batch(params, &prevs, &xs, t)?;
        for (b, (next, trace)) in stepped.into_iter().enumerate() {
            traces[b].push(trace);
            states[b] = next;
        }
    }
    Ok(traces)
}

/// Forward traces over `xs` and backward traces over `xs` reversed. The
/// backward traces stay in processing order: `bwd[k]` read `xs[n-1-k]`.
pub fn unroll_bidirectional_traces(
    params_fwd: &CellParams,
    params_bwd: &CellParams,
    xs: &[Vector],
) -> Result<(Vec<StepTrace>, Vec<StepTrace>)> {
    check_dims("bidirectional input", params_fwd.input_dim, params_bwd.input_dim)?;
    check_dims("bidirectional hidden", params_fwd.hidden_dim, params_bwd.hidden_dim)?;
    let fwd = unroll(params_fwd, &CellState::zeros(params_fwd), xs)?;
    let reversed: Vec<Vector> = xs.iter().rev().cloned().collect();
    let bwd = unroll(params_bwd, &CellState::zeros(params_bwd), &reversed)?;
    Ok((fwd, bwd))
}

/// `out[t] = concat(h_fwd[t], h_bwd[t])`, both aligned to input position `t`.
pub fn unroll_bidirectional(params_fwd: &CellParams, params_bwd: &CellParams, xs: &[Vector]) -> Result<Vec<Vector>> {
    let (fwd, bwd) = unroll_bidirectional_traces(params_fwd, params_bwd, xs)?;
    let n = xs.len();
    Ok((0..n).map(|t| Vector::concat(&fwd[t].h, &bwd[n - 1 - t].h)).collect())
}
