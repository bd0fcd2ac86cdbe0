//! Reverse-mode gradients through an unrolled cell.

use crate::cells::{CellParams, StepTrace, Variant};
use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Gradients of a scalar loss: parameter blocks shaped like the cell, plus
/// the inputs and the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: CellParams,
    pub inputs: Vec<Vector>,
    pub h0: Vector,
    pub c0: Option<Vector>,
}

pub(crate) struct CellBackward {
    pub dx: Vec<Vector>,
    pub dh0: Vector,
    pub dc0: Option<Vector>,
}

/// Exact adjoint of `unroll`: `dloss_dh[t]` is the direct loss gradient on
/// the output `h_t`; recurrent contributions are added here.
pub fn bptt(params: &CellParams, traces: &[StepTrace], dloss_dh: &[Vector]) -> Result<Gradients> {
    let mut grad = params.zeros_like();
    let back = backprop_cell(params, traces, dloss_dh, &mut grad, true)?;
    Ok(Gradients {
        params: grad,
        inputs: back.dx,
        h0: back.dh0,
        c0: back.dc0,
    })
}

fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| &x[..]).collect()
}

fn incomplete(timestep: usize, what: &str) -> Error {
    Error::Config(format!("trace at timestep {timestep} is missing {what}"))
}

/// Accumulates into `grad`; input gradients are only formed when `want_dx`.
pub(crate) fn backprop_cell(
    params: &CellParams,
    traces: &[StepTrace],
    dloss_dh: &[Vector],
    grad: &mut CellParams,
    want_dx: bool,
) -> Result<CellBackward> {
    let mut out = backprop_batch(params, &[traces], &[dloss_dh], grad, want_dx)?;
    Ok(out.pop().expect("one sequence"))
}

/// Adjoint of `unroll_batch`: equal-length sequences walked backwards in
/// lockstep, parameter gradients summed over the batch.
pub(crate) fn backprop_batch(
    params: &CellParams,
    traces: &[&[StepTrace]],
    dloss_dh: &[&[Vector]],
    grad: &mut CellParams,
    want_dx: bool,
) -> Result<Vec<CellBackward>> {
    let batch = traces.len();
    if dloss_dh.len() != batch {
        return Err(Error::DimensionMismatch {
            op: "bptt batch",
            expected: batch,
            actual: dloss_dh.len(),
        });
    }
    let n = traces.first().map_or(0, |t| t.len());
    for (tr, up) in traces.iter().zip(dloss_dh) {
        if tr.len() != n || up.len() != n {
            return Err(Error::DimensionMismatch {
                op: "bptt upstream gradients",
                expected: n,
                actual: if tr.len() != n { tr.len() } else { up.len() },
            });
        }
    }
    let h = params.hidden_dim();
    let d = params.input_dim();
    let variant = params.variant();
    let gated = variant.has_memory_cell();
    let linear_content = matches!(
        variant,
        Variant::LstmMinusSrnn | Variant::LstmMinusSrnnMinusOut | Variant::LstmMinusSrnnMinusHidden
    );
    let coupled = gated && params.forget_gate().is_err();
    let has_output = gated && params.output_gate().is_ok();

    let mut dx_all: Vec<Vec<Vector>> = (0..batch)
        .map(|_| if want_dx { vec![Vector::zeros(0); n] } else { Vec::new() })
        .collect();
    let mut dh_next = vec![Vector::zeros(h); batch];
    let mut dc_next = vec![Vector::zeros(h); batch];

    for t in (0..n).rev() {
        let step: Vec<&StepTrace> = traces.iter().map(|tr| &tr[t]).collect();
        let mut dh_prev = vec![Vector::zeros(h); batch];
        let mut dx: Vec<Vector> = if want_dx {
            vec![Vector::zeros(d); batch]
        } else {
            Vec::new()
        };
        let hs: Vec<&[f64]> = step.iter().map(|tr| &tr.h_prev[..]).collect();
        let xs: Vec<&[f64]> = step.iter().map(|tr| &tr.x[..]).collect();

        let mut dh_all = Vec::with_capacity(batch);
        for b in 0..batch {
            if dloss_dh[b][t].len() != h {
                return Err(Error::DimensionMismatch {
                    op: "bptt upstream gradient",
                    expected: h,
                    actual: dloss_dh[b][t].len(),
                });
            }
            let mut dh = dloss_dh[b][t].clone();
            for k in 0..h {
                dh[k] += dh_next[b][k];
            }
            dh_all.push(dh);
        }

        if !gated {
            let dpre: Vec<Vec<f64>> = (0..batch)
                .map(|b| {
                    (0..h)
                        .map(|k| dh_all[b][k] * (1.0 - step[b].h[k] * step[b].h[k]))
                        .collect()
                })
                .collect();
            let dpre: Vec<&[f64]> = dpre.iter().map(|v| &v[..]).collect();
            params.content().backward_batch(
                grad.content_mut(),
                &dpre,
                &hs,
                &xs,
                &mut dh_prev,
                want_dx.then_some(&mut dx[..]),
            );
        } else {
            let mut dpre_i = Vec::with_capacity(batch);
            let mut dpre_f = Vec::with_capacity(batch);
            let mut dpre_c = Vec::with_capacity(batch);
            let mut dpre_o = Vec::with_capacity(batch);
            for b in 0..batch {
                let mem = step[b]
                    .memory
                    .as_ref()
                    .ok_or_else(|| incomplete(t, "memory-cell fields"))?;
                if has_output != mem.o.is_some() {
                    return Err(incomplete(t, "output gate values"));
                }
                let dh = &dh_all[b];
                let mut dc = dc_next[b].clone();
                match &mem.o {
                    Some(o) => {
                        let mut dpo = Vec::with_capacity(h);
                        for k in 0..h {
                            let tc = mem.c[k].tanh();
                            dc[k] += dh[k] * o[k] * (1.0 - tc * tc);
                            dpo.push(dh[k] * tc * o[k] * (1.0 - o[k]));
                        }
                        dpre_o.push(dpo);
                    }
                    None => {
                        for k in 0..h {
                            let tc = mem.c[k].tanh();
                            dc[k] += dh[k] * (1.0 - tc * tc);
                        }
                    }
                }
                let mut di_v = Vec::with_capacity(h);
                let mut df_v = Vec::with_capacity(if coupled { 0 } else { h });
                let mut dct_v = Vec::with_capacity(h);
                let mut dc_prev = Vector::zeros(h);
                for k in 0..h {
                    let (i, f, ct) = (mem.i[k], mem.f[k], step[b].c_tilde[k]);
                    let df = dc[k] * mem.c_prev[k];
                    let mut di = dc[k] * ct;
                    if coupled {
                        di -= df;
                    } else {
                        df_v.push(df * f * (1.0 - f));
                    }
                    di_v.push(di * i * (1.0 - i));
                    let dct = dc[k] * i;
                    dct_v.push(if linear_content { dct } else { dct * (1.0 - ct * ct) });
                    dc_prev[k] = dc[k] * f;
                }
                dpre_i.push(di_v);
                dpre_f.push(df_v);
                dpre_c.push(dct_v);
                dc_next[b] = dc_prev;
            }

            params.content().backward_batch(
                grad.content_mut(),
                &slices(&dpre_c),
                &hs,
                &xs,
                &mut dh_prev,
                want_dx.then_some(&mut dx[..]),
            );
            params.input_gate()?.backward_batch(
                grad.input_gate_mut()?,
                &slices(&dpre_i),
                &hs,
                &xs,
                &mut dh_prev,
                want_dx.then_some(&mut dx[..]),
            );
            if !coupled {
                params.forget_gate()?.backward_batch(
                    grad.forget_gate_mut()?,
                    &slices(&dpre_f),
                    &hs,
                    &xs,
                    &mut dh_prev,
                    want_dx.then_some(&mut dx[..]),
                );
            }
            if has_output {
                params.output_gate()?.backward_batch(
                    grad.output_gate_mut()?,
                    &slices(&dpre_o),
                    &hs,
                    &xs,
                    &mut dh_prev,
                    want_dx.then_some(&mut dx[..]),
                );
            }
        }

        dh_next = dh_prev;
        if want_dx {
            for (b, v) in dx.into_iter().enumerate() {
                dx_all[b][t] = v;
            }
        }
    }

    Ok(dx_all
        .into_iter()
        .zip(dh_next)
        .zip(dc_next)
        .map(|((dx, dh0), dc0)| CellBackward {
            dx,
            dh0,
            dc0: gated.then_some(dc0),
        })
        .collect())
}
