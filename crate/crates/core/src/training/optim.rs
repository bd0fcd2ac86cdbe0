use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    /// `v ← μ·v + g; θ ← θ − lr·v`. With `μ = 0` this is plain SGD.
    Sgd {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

/// Per-block moment buffers, aligned with the parameter blocks by index and
/// checked by name and length on every step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    step: u64,
    names: Vec<String>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(optimizer: &Optimizer, params: &impl ParamSet) -> Self {
        let blocks = params.blocks();
        let names = blocks.iter().map(|(n, _)| n.clone()).collect();
        let zeros = || blocks.iter().map(|(_, b)| vec![0.0; b.len()]).collect::<Vec<_>>();
        let second = match optimizer {
            Optimizer::Adam { .. } => zeros(),
            Optimizer::Sgd { .. } => Vec::new(),
        };
        OptimizerState {
            step: 0,
            names,
            first: zeros(),
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(
        &mut self,
        optimizer: &Optimizer,
        params: &mut impl ParamSet,
        grads: &impl ParamSet,
        lr: f64,
    ) -> Result<()> {
        let grad_blocks = grads.blocks();
        let mut param_blocks = params.blocks_mut();
        if param_blocks.len() != self.names.len() || grad_blocks.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                op: "optimizer blocks",
                expected: self.names.len(),
                actual: grad_blocks.len().min(param_blocks.len()),
            });
        }
        self.step += 1;
        for (b, ((pname, p), (gname, g))) in param_blocks.iter_mut().zip(&grad_blocks).enumerate() {
            if *pname != self.names[b] || *gname != self.names[b] || p.len() != g.len() {
                return Err(Error::Config(format!(
                    "optimizer block {b} mismatch: state `{}`, params `{pname}`, grads `{gname}`",
                    self.names[b]
                )));
            }
            match *optimizer {
                Optimizer::Sgd { momentum } => {
                    let v = &mut self.first[b];
                    for k in 0..p.len() {
                        v[k] = momentum * v[k] + g[k];
                        p[k] -= lr * v[k];
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let (m, s) = (&mut self.first[b], &mut self.second[b]);
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for k in 0..p.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        s[k] = beta2 * s[k] + (1.0 - beta2) * g[k] * g[k];
                        let m_hat = m[k] / c1;
                        let s_hat = s[k] / c2;
                        p[k] -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipOutcome {
    /// Global norm before clipping.
    pub norm: f64,
    pub scale: f64,
}

/// Rescales all blocks so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut impl ParamSet, max_norm: f64) -> Result<ClipOutcome> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {max_norm}")));
    }
    let mut sq = 0.0;
    for (name, block) in grads.blocks() {
        let block_sq: f64 = block.iter().map(|g| g * g).sum();
        if !block_sq.is_finite() {
            return Err(Error::NonFiniteGradient { block: name });
        }
        sq += block_sq;
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFiniteGradient {
            block: "<global>".to_string(),
        });
    }
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    if scale != 1.0 {
        grads.scale(scale);
    }
    Ok(ClipOutcome { norm, scale })
}
