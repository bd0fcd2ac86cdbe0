//! Stacked, optionally bidirectional recurrent networks with a dense head.

use crate::cells::{step, unroll_batch, CellParams, CellState, StepTrace, Variant};
use crate::error::{Error, Result};
use crate::numerics::{init_params, InitScheme, Matrix, Rng, Vector};
use crate::params::ParamSet;
use crate::tasks::TokenPredictor;
use crate::training::bptt::backprop_batch;
use crate::training::loss::log_softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub layers: usize,
    /// 1 or 2.
    pub directions: usize,
}

impl Architecture {
    pub fn new(variant: Variant, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Architecture {
            variant,
            input_dim,
            hidden_dim,
            output_dim,
            layers: 1,
            directions: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if !(1..=2).contains(&self.directions) {
            return Err(Error::Config(format!(
                "directions must be 1 or 2, got {}",
                self.directions
            )));
        }
        Ok(())
    }

    pub fn bidirectional(&self) -> bool {
        self.directions == 2
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.feature_dim()
        }
    }

    /// Width of one layer's output: `hidden_dim · directions`.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dim * self.directions
    }
}

/// Affine readout `y = W·h + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vector,
}

impl Dense {
    pub fn forward(&self, h: &[f64]) -> Vector {
        let mut out = self.b.clone();
        self.w.gemv_acc(h, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and `Wᵀ·dy` into `dh`.
    pub fn backward(&self, grad: &mut Dense, dy: &[f64], h: &[f64], dh: &mut [f64]) {
        grad.w.rank1_acc(dy, h);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        self.w.gemv_t_acc(dy, dh);
    }

    pub fn forward_many(&self, hs: &[&[f64]]) -> Vec<Vector> {
        let mut out = vec![self.b.clone(); hs.len()];
        self.w.gemv_many_acc(hs, &mut out);
        out
    }

    /// Batched [`Dense::backward`]; `dhs[k]` receives `Wᵀ·dys[k]`.
    pub fn backward_many(&self, grad: &mut Dense, dys: &[&[f64]], hs: &[&[f64]], dhs: &mut [Vector]) {
        grad.w.rank1_many_acc(dys, hs);
        for dy in dys {
            for (g, d) in grad.b.iter_mut().zip(dy.iter()) {
                *g += d;
            }
        }
        self.w.gemv_t_many_acc(dys, dhs);
    }
}

const DIRECTION_NAMES: [&str; 2] = ["fwd", "bwd"];

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    /// Layer-major: `cells[layer · directions + direction]`.
    cells: Vec<CellParams>,
    head: Dense,
}

impl Network {
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut cells = Vec::with_capacity(arch.layers * arch.directions);
        for layer in 0..arch.layers {
            for _ in 0..arch.directions {
                cells.push(CellParams::init(
                    arch.variant,
                    arch.layer_input_dim(layer),
                    arch.hidden_dim,
                    rng,
                ));
            }
        }
        let w = init_params(rng, arch.output_dim, arch.feature_dim(), InitScheme::XavierUniform);
        Ok(Network {
            arch,
            cells,
            head: Dense {
                w,
                b: Vector::zeros(arch.output_dim),
            },
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut cells = Vec::new();
        for layer in 0..arch.layers {
            for _ in 0..arch.directions {
                cells.push(CellParams::zeros(
                    arch.variant,
                    arch.layer_input_dim(layer),
                    arch.hidden_dim,
                ));
            }
        }
        Ok(Network {
            arch,
            cells,
            head: Dense {
                w: Matrix::zeros(arch.output_dim, arch.feature_dim()),
                b: Vector::zeros(arch.output_dim),
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        ParamSet::zero(&mut z);
        z
    }

    /// See [`CellParams::set_forget_bias`]; applies to every cell.
    pub fn set_forget_bias(&mut self, bias: f64) {
        self.cells.iter_mut().for_each(|c| c.set_forget_bias(bias));
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn cell(&self, layer: usize, direction: usize) -> &CellParams {
        &self.cells[layer * self.arch.directions + direction]
    }

    pub fn cell_mut(&mut self, layer: usize, direction: usize) -> &mut CellParams {
        &mut self.cells[layer * self.arch.directions + direction]
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    pub fn zero_state(&self) -> NetworkState {
        NetworkState {
            cells: self.cells.iter().map(CellState::zeros).collect(),
        }
    }

    /// Runs every layer over `xs`. Backward directions always start from a
    /// zero state; `init` only seeds the forward directions.
    pub fn forward(&self, init: &NetworkState, xs: &[Vector]) -> Result<NetworkTrace> {
        let mut out = self.forward_batch(&[init], &[xs])?;
        Ok(out.pop().expect("one sequence"))
    }

    /// [`Network::forward`] for equal-length sequences in lockstep.
    pub fn forward_batch(&self, inits: &[&NetworkState], seqs: &[&[Vector]]) -> Result<Vec<NetworkTrace>> {
        for init in inits {
            if init.cells.len() != self.cells.len() {
                return Err(Error::DimensionMismatch {
                    op: "network state",
                    expected: self.cells.len(),
                    actual: init.cells.len(),
                });
            }
        }
        let dirs = self.arch.directions;
        let mut traces: Vec<NetworkTrace> = seqs.iter().map(|_| NetworkTrace { layers: Vec::new() }).collect();
        let mut inputs: Vec<Vec<Vector>> = Vec::new();
        for layer in 0..self.arch.layers {
            let xs_l: Vec<&[Vector]> = if layer == 0 {
                seqs.to_vec()
            } else {
                inputs.iter().map(|v| &v[..]).collect()
            };
            let fwd_inits: Vec<&CellState> = inits.iter().map(|s| &s.cells[layer * dirs]).collect();
            let fwd = unroll_batch(self.cell(layer, 0), &fwd_inits, &xs_l)?;
            let bwd = if self.arch.bidirectional() {
                let cell = self.cell(layer, 1);
                let zero = CellState::zeros(cell);
                let reversed: Vec<Vec<Vector>> = xs_l.iter().map(|x| x.iter().rev().cloned().collect()).collect();
                let rev_refs: Vec<&[Vector]> = reversed.iter().map(|v| &v[..]).collect();
                let zeros = vec![&zero; seqs.len()];
                unroll_batch(cell, &zeros, &rev_refs)?.into_iter().map(Some).collect()
            } else {
                vec![None; seqs.len()]
            };
            inputs.clear();
            for ((trace, fwd), bwd) in traces.iter_mut().zip(fwd).zip(bwd) {
                let lt = LayerTrace { fwd, bwd };
                inputs.push(lt.outputs());
                trace.layers.push(lt);
            }
        }
        Ok(traces)
    }

    /// Gradients for `d_top`, the loss gradient on each top-layer output,
    /// accumulated into `grad`. State entering the sequence is treated as a
    /// constant (truncated BPTT).
    pub fn backward(&self, trace: &NetworkTrace, d_top: &[Vector], grad: &mut Network) -> Result<()> {
        self.backward_batch(&[trace], &[d_top], grad)
    }

    /// [`Network::backward`] for traces from one `forward_batch` call.
    pub fn backward_batch(&self, traces: &[&NetworkTrace], d_tops: &[&[Vector]], grad: &mut Network) -> Result<()> {
        let h = self.arch.hidden_dim;
        let dirs = self.arch.directions;
        let batch = traces.len();
        let mut d_out: Vec<Vec<Vector>> = d_tops.iter().map(|d| d.to_vec()).collect();
        for layer in (0..self.arch.layers).rev() {
            let n = traces[0].layers[layer].fwd.len();
            for d in &d_out {
                if d.len() != n {
                    return Err(Error::DimensionMismatch {
                        op: "network upstream gradients",
                        expected: n,
                        actual: d.len(),
                    });
                }
            }
            let want_dx = layer > 0;
            let fwd: Vec<&[StepTrace]> = traces.iter().map(|t| &t.layers[layer].fwd[..]).collect();
            let up_f: Vec<Vec<Vector>> = d_out
                .iter()
                .map(|d| d.iter().map(|v| Vector::from(&v[..h])).collect())
                .collect();
            let up_refs: Vec<&[Vector]> = up_f.iter().map(|v| &v[..]).collect();
            let back = backprop_batch(
                &self.cells[layer * dirs],
                &fwd,
                &up_refs,
                &mut grad.cells[layer * dirs],
                want_dx,
            )?;
            let mut d_in: Vec<Vec<Vector>> = back.into_iter().map(|b| b.dx).collect();
            if self.arch.bidirectional() {
                let bwd: Vec<&[StepTrace]> = traces
                    .iter()
                    .map(|t| t.layers[layer].bwd.as_deref().expect("bidirectional trace"))
                    .collect();
                let up_b: Vec<Vec<Vector>> = d_out
                    .iter()
                    .map(|d| (0..n).map(|k| Vector::from(&d[n - 1 - k][h..])).collect())
                    .collect();
                let up_refs: Vec<&[Vector]> = up_b.iter().map(|v| &v[..]).collect();
                let back = backprop_batch(
                    &self.cells[layer * dirs + 1],
                    &bwd,
                    &up_refs,
                    &mut grad.cells[layer * dirs + 1],
                    want_dx,
                )?;
                if want_dx {
                    for (b, bk) in back.into_iter().enumerate() {
                        for (k, dx) in bk.dx.into_iter().enumerate() {
                            for (a, v) in d_in[b][n - 1 - k].iter_mut().zip(dx.iter()) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            debug_assert!(!want_dx || d_in.len() == batch);
            d_out = d_in;
        }
        Ok(())
    }

    /// Advances the forward stack by one input and returns the head output.
    pub fn step(&self, state: &mut NetworkState, x: &Vector) -> Result<Vector> {
        if self.arch.bidirectional() {
            return Err(Error::Config("stepwise prediction needs a unidirectional model".into()));
        }
        let mut input = x.clone();
        for (cell, st) in self.cells.iter().zip(state.cells.iter_mut()) {
            let (next, _) = step(cell, st, &input)?;
            input = next.h.clone();
            *st = next;
        }
        Ok(self.head.forward(&input))
    }

    /// Head input for sequence classification: the top forward state after
    /// the last step, joined with the top backward state after the first.
    pub fn sequence_features(&self, trace: &NetworkTrace) -> Vector {
        let top = trace.layers.last().expect("at least one layer");
        let fwd = &top.fwd.last().expect("nonempty trace").h;
        match &top.bwd {
            Some(bwd) => Vector::concat(fwd, &bwd.last().expect("nonempty trace").h),
            None => fwd.clone(),
        }
    }

    /// Spreads a gradient on `sequence_features` back onto per-step outputs.
    pub fn sequence_feature_grad(&self, trace: &NetworkTrace, d_features: &[f64]) -> Vec<Vector> {
        let n = trace.len();
        let h = self.arch.hidden_dim;
        let mut d = vec![Vector::zeros(self.arch.feature_dim()); n];
        d[n - 1][..h].copy_from_slice(&d_features[..h]);
        if self.arch.bidirectional() {
            d[0][h..].copy_from_slice(&d_features[h..]);
        }
        d
    }
}

impl ParamSet for Network {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let dirs = self.arch.directions;
        let mut out = Vec::new();
        for (idx, cell) in self.cells.iter().enumerate() {
            let prefix = format!("l{}.{}.", idx / dirs, DIRECTION_NAMES[idx % dirs]);
            out.extend(cell.blocks().into_iter().map(|(n, b)| (format!("{prefix}{n}"), b)));
        }
        out.push(("head.W".into(), self.head.w.as_slice()));
        out.push(("head.b".into(), &self.head.b[..]));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let dirs = self.arch.directions;
        let mut out = Vec::new();
        for (idx, cell) in self.cells.iter_mut().enumerate() {
            let prefix = format!("l{}.{}.", idx / dirs, DIRECTION_NAMES[idx % dirs]);
            out.extend(cell.blocks_mut().into_iter().map(|(n, b)| (format!("{prefix}{n}"), b)));
        }
        out.push(("head.W".into(), self.head.w.as_mut_slice()));
        out.push(("head.b".into(), &mut self.head.b[..]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    /// Same layout as the network's cells.
    pub cells: Vec<CellState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub fwd: Vec<StepTrace>,
    /// In processing order: entry `k` consumed input `n − 1 − k`.
    pub bwd: Option<Vec<StepTrace>>,
}

impl LayerTrace {
    /// Output at each input position, backward half re-aligned to the input.
    pub fn outputs(&self) -> Vec<Vector> {
        let n = self.fwd.len();
        match &self.bwd {
            Some(bwd) => (0..n)
                .map(|t| Vector::concat(&self.fwd[t].h, &bwd[n - 1 - t].h))
                .collect(),
            None => self.fwd.iter().map(|t| t.h.clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTrace {
    pub layers: Vec<LayerTrace>,
}

impl NetworkTrace {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fwd.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn top_outputs(&self) -> Vec<Vector> {
        self.layers.last().map(LayerTrace::outputs).unwrap_or_default()
    }

    /// Forward-direction state after the last step, for carrying into the
    /// next segment. Backward directions are reset to zero.
    pub fn final_state(&self) -> NetworkState {
        let mut cells = Vec::new();
        for lt in &self.layers {
            cells.push(lt.fwd.last().expect("nonempty trace").state());
            if let Some(bwd) = &lt.bwd {
                let s = bwd.last().expect("nonempty trace").state();
                cells.push(CellState {
                    h: Vector::zeros(s.h.len()),
                    c: s.c.map(|c| Vector::zeros(c.len())),
                });
            }
        }
        NetworkState { cells }
    }
}

/// Token-level language model view of a unidirectional network whose input
/// and output dimensions both equal the vocabulary size.
pub struct LmPredictor<'a> {
    network: &'a Network,
    state: NetworkState,
}

impl<'a> LmPredictor<'a> {
    pub fn new(network: &'a Network) -> Result<Self> {
        let arch = network.arch();
        if arch.bidirectional() || arch.input_dim != arch.output_dim {
            return Err(Error::Config(
                "language modelling needs a unidirectional model with input_dim = output_dim".into(),
            ));
        }
        Ok(LmPredictor {
            network,
            state: network.zero_state(),
        })
    }
}

impl TokenPredictor for LmPredictor<'_> {
    fn vocab_size(&self) -> usize {
        self.network.arch().output_dim
    }

    fn reset(&mut self) {
        self.state = self.network.zero_state();
    }

    fn observe(&mut self, token: usize) -> Result<Vector> {
        let v = self.vocab_size();
        if token >= v {
            return Err(Error::TargetOutOfRange {
                target: token,
                classes: v,
            });
        }
        let logits = self.network.step(&mut self.state, &Vector::one_hot(v, token))?;
        Ok(log_softmax(&logits))
    }
}
