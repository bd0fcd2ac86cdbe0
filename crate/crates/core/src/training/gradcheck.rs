//! Central finite differences against [`bptt`](super::bptt).
//!
//! The probe loss is a fixed random linear functional of every hidden
//! state, `L = Σ_s Σ_t r_{s,t}·h_{s,t}`. It reaches every step with a nonzero
//! upstream gradient while keeping `|L|` small, since the central difference
//! loses about `ulp(L)/ε` to roundoff. Besides the parameter blocks the check
//! covers the inputs (`x`) and the initial state (`h0`, `c0`).

use crate::cells::{unroll, CellParams, CellState};
use crate::error::Result;
use crate::numerics::{Rng, Vector};

use super::bptt::{backprop_cell, Gradients};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Relative errors use `max(|a|, |n|, RELATIVE_FLOOR)` as denominator.
pub const RELATIVE_FLOOR: f64 = 1e-8;
pub const LARGE_PARAM_WARNING: usize = 10_000;

#[derive(Clone, Debug)]
pub struct GradCheckBatch {
    pub init: CellState,
    pub sequences: Vec<Vec<Vector>>,
    /// One hidden-sized direction per step of every sequence.
    pub probes: Vec<Vec<Vector>>,
}

impl GradCheckBatch {
    pub fn random(params: &CellParams, len: usize, batch: usize, rng: &mut Rng) -> Self {
        let (d, h) = (params.input_dim(), params.hidden_dim());
        let mut vec_in = |n: usize, s: f64| -> Vector { (0..n).map(|_| rng.uniform(-s, s)).collect::<Vec<_>>().into() };
        let init = CellState {
            h: vec_in(h, 0.5),
            c: params.variant().has_memory_cell().then(|| vec_in(h, 1.0)),
        };
        let sequences = (0..batch).map(|_| (0..len).map(|_| vec_in(d, 1.0)).collect()).collect();
        let probes = (0..batch).map(|_| (0..len).map(|_| vec_in(h, 1.0)).collect()).collect();
        GradCheckBatch {
            init,
            sequences,
            probes,
        }
    }
}

/// Loss of one sequence with its traces.
fn sequence_loss(
    params: &CellParams,
    init: &CellState,
    xs: &[Vector],
    probes: &[Vector],
) -> Result<(f64, Vec<crate::cells::StepTrace>)> {
    let traces = unroll(params, init, xs)?;
    let loss = traces
        .iter()
        .zip(probes)
        .map(|(trace, r)| trace.h.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok((loss, traces))
}

pub fn batch_loss(params: &CellParams, batch: &GradCheckBatch) -> Result<f64> {
    batch_loss_from(params, &batch.init, &batch.sequences, batch)
}

fn batch_loss_from(
    params: &CellParams,
    init: &CellState,
    sequences: &[Vec<Vector>],
    batch: &GradCheckBatch,
) -> Result<f64> {
    let mut total = 0.0;
    for (xs, rs) in sequences.iter().zip(&batch.probes) {
        total += sequence_loss(params, init, xs, rs)?.0;
    }
    Ok(total)
}

/// Analytic gradients of [`batch_loss`]; `inputs` holds every sequence's
/// input gradients back to back.
pub fn batch_gradients(params: &CellParams, batch: &GradCheckBatch) -> Result<Gradients> {
    let mut grad = params.zeros_like();
    let h = params.hidden_dim();
    let mut inputs = Vec::new();
    let mut h0 = Vector::zeros(h);
    let mut c0 = batch.init.c.as_ref().map(|_| Vector::zeros(h));
    for (xs, rs) in batch.sequences.iter().zip(&batch.probes) {
        let (_, traces) = sequence_loss(params, &batch.init, xs, rs)?;
        let back = backprop_cell(params, &traces, rs, &mut grad, true)?;
        inputs.extend(back.dx);
        for k in 0..h {
            h0[k] += back.dh0[k];
        }
        if let (Some(acc), Some(dc)) = (c0.as_mut(), back.dc0) {
            for k in 0..h {
                acc[k] += dc[k];
            }
        }
    }
    Ok(Gradients {
        params: grad,
        inputs,
        h0,
        c0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub epsilon: f64,
    pub threshold: f64,
    pub passed: bool,
    pub warnings: Vec<String>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }

    pub fn failing(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| !(b.max_relative_error < self.threshold))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn grad_check(params: &CellParams, batch: &GradCheckBatch, epsilon: f64) -> Result<GradCheckReport> {
    grad_check_with(params, batch, epsilon, DEFAULT_THRESHOLD, |_| {})
}

/// As [`grad_check`], letting `tamper` alter the analytic gradients before
/// comparison (fault injection).
pub fn grad_check_with(
    params: &CellParams,
    batch: &GradCheckBatch,
    epsilon: f64,
    threshold: f64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let mut analytic = batch_gradients(params, batch)?;
    tamper(&mut analytic);

    let mut warnings = Vec::new();
    let n_params = params.num_params();
    if n_params > LARGE_PARAM_WARNING {
        warnings.push(format!(
            "{n_params} parameters: finite differences need {} forward passes",
            2 * n_params
        ));
    }

    let mut blocks = Vec::new();
    let track = |name: &str, errors: Vec<(f64, f64)>, blocks: &mut Vec<BlockCheck>| {
        let mut check = BlockCheck {
            name: name.to_string(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, (a, n)) in errors.into_iter().enumerate() {
            let e = relative_error(a, n);
            if e > check.max_relative_error || e.is_nan() {
                check.max_relative_error = e;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = n;
            }
        }
        blocks.push(check);
    };

    let names: Vec<String> = params.blocks().into_iter().map(|(n, _)| n).collect();
    let analytic_blocks = analytic.params.blocks();
    for (name, (_, grad_block)) in names.iter().zip(&analytic_blocks) {
        let mut probe = params.clone();
        let mut pairs = Vec::with_capacity(grad_block.len());
        for (k, &a) in grad_block.iter().enumerate() {
            let base = probe.block(name)?[k];
            probe.block_mut(name)?[k] = base + epsilon;
            let plus = batch_loss(&probe, batch)?;
            probe.block_mut(name)?[k] = base - epsilon;
            let minus = batch_loss(&probe, batch)?;
            probe.block_mut(name)?[k] = base;
            pairs.push((a, (plus - minus) / (2.0 * epsilon)));
        }
        track(name, pairs, &mut blocks);
    }

    let mut pairs = Vec::new();
    let mut seqs = batch.sequences.clone();
    let mut flat = 0;
    for s in 0..seqs.len() {
        for t in 0..seqs[s].len() {
            for k in 0..seqs[s][t].len() {
                let base = seqs[s][t][k];
                seqs[s][t][k] = base + epsilon;
                let plus = batch_loss_from(params, &batch.init, &seqs, batch)?;
                seqs[s][t][k] = base - epsilon;
                let minus = batch_loss_from(params, &batch.init, &seqs, batch)?;
                seqs[s][t][k] = base;
                pairs.push((analytic.inputs[flat][k], (plus - minus) / (2.0 * epsilon)));
            }
            flat += 1;
        }
    }
    track("x", pairs, &mut blocks);

    let mut init = batch.init.clone();
    let mut pairs = Vec::new();
    for k in 0..init.h.len() {
        let base = init.h[k];
        init.h[k] = base + epsilon;
        let plus = batch_loss_from(params, &init, &batch.sequences, batch)?;
        init.h[k] = base - epsilon;
        let minus = batch_loss_from(params, &init, &batch.sequences, batch)?;
        init.h[k] = base;
        pairs.push((analytic.h0[k], (plus - minus) / (2.0 * epsilon)));
    }
    track("h0", pairs, &mut blocks);

    if let (Some(dc0), Some(_)) = (&analytic.c0, &batch.init.c) {
        let mut pairs = Vec::new();
        for k in 0..dc0.len() {
            let c = init.c.as_mut().expect("gated state");
            let base = c[k];
            c[k] = base + epsilon;
            let plus = batch_loss_from(params, &init, &batch.sequences, batch)?;
            init.c.as_mut().expect("gated state")[k] = base - epsilon;
            let minus = batch_loss_from(params, &init, &batch.sequences, batch)?;
            init.c.as_mut().expect("gated state")[k] = base;
            pairs.push((dc0[k], (plus - minus) / (2.0 * epsilon)));
        }
        track("c0", pairs, &mut blocks);
    }

    let passed = blocks.iter().all(|b| b.max_relative_error < threshold);
    Ok(GradCheckReport {
        blocks,
        epsilon,
        threshold,
        passed,
        warnings,
    })
}
