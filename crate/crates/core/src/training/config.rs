use crate::error::{Error, Result};

use super::optim::Optimizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Never,
    EveryEpoch,
    /// Whenever the validation metric fails to improve on its best.
    OnPlateau,
}

impl std::str::FromStr for Decay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "never" | "none" => Ok(Decay::Never),
            "epoch" | "every-epoch" => Ok(Decay::EveryEpoch),
            "plateau" => Ok(Decay::OnPlateau),
            other => Err(Error::Config(format!("unknown decay schedule `{other}`"))),
        }
    }
}

impl Decay {
    pub fn name(self) -> &'static str {
        match self {
            Decay::Never => "never",
            Decay::EveryEpoch => "epoch",
            Decay::OnPlateau => "plateau",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
    /// Truncation length for language modelling; synthetic tasks unroll
    /// whole sequences.
    pub bptt_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier applied to the learning rate by `decay`.
    pub lr_decay: f64,
    pub decay: Decay,
    /// Stop once the held-out accuracy reaches this value (synthetic tasks).
    pub stop_accuracy: Option<f64>,
    /// Cap on updates per epoch; `None` uses the full training split.
    pub max_batches: Option<usize>,
}

impl TrainingConfig {
    /// SGD, lr 1.0, clip 5, halve on a validation plateau.
    pub fn language_model() -> Self {
        TrainingConfig {
            learning_rate: 1.0,
            optimizer: Optimizer::sgd(),
            clip_norm: 5.0,
            bptt_len: 35,
            batch_size: 20,
            epochs: 3,
            seed: 0,
            lr_decay: 0.5,
            decay: Decay::OnPlateau,
            stop_accuracy: None,
            max_batches: None,
        }
    }

    /// Adam on whole sequences with a fixed learning rate.
    pub fn sequence_task() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            optimizer: Optimizer::adam(),
            clip_norm: 5.0,
            bptt_len: 1,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            lr_decay: 1.0,
            decay: Decay::Never,
            stop_accuracy: None,
            max_batches: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.bptt_len == 0 {
            return fail("bptt_len must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.max_batches == Some(0) {
            return fail("max_batches must be positive when set".into());
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                fail(format!("momentum must be in [0, 1), got {momentum}"))
            }
            Optimizer::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                fail("adam needs beta1, beta2 in [0, 1) and eps > 0".into())
            }
            _ => Ok(()),
        }
    }

    /// One-line description written at the top of every metrics file.
    pub fn describe(&self) -> String {
        let opt = match self.optimizer {
            Optimizer::Sgd { momentum } => format!("sgd(momentum={momentum})"),
            Optimizer::Adam { beta1, beta2, eps } => format!("adam(beta1={beta1},beta2={beta2},eps={eps})"),
        };
        format!(
            "optimizer={opt} lr={} clip_norm={} bptt_len={} batch_size={} epochs={} seed={} lr_decay={} decay={}",
            self.learning_rate,
            self.clip_norm,
            self.bptt_len,
            self.batch_size,
            self.epochs,
            self.seed,
            self.lr_decay,
            self.decay.name()
        )
    }
}
