//! Epoch loops for language modelling and synthetic sequence tasks.

use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{LmPredictor, Network, NetworkState, NetworkTrace};
use crate::numerics::{Rng, Vector};
use crate::params::ParamSet;
use crate::tasks::{batch_iter, mean_cross_entropy, Corpus, Sample, SyntheticDataset, SyntheticKind, Target};

use super::config::{Decay, TrainingConfig};
use super::loss::{softmax_xent, squared_error};
use super::optim::{clip_global_norm, OptimizerState};

/// Adding-task predictions within this distance of the target count as correct.
pub const ADDING_TOLERANCE: f64 = 0.04;

/// Sequences evaluated together in lockstep.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Starts at 1.
    pub epoch: usize,
    pub split: Split,
    /// Mean loss per token (language modelling) or per sequence.
    pub loss: f64,
    /// Perplexity for language modelling, accuracy for synthetic tasks.
    pub metric: f64,
    pub wallclock_seconds: f64,
    /// Mean pre-clip gradient norm over the epoch's updates; 0 for
    /// evaluation rows.
    pub grad_norm_mean: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,perplexity_or_accuracy,wallclock_seconds,grad_norm_mean,lr";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.17e},{:.17e},{:.3},{:.17e},{:.17e}",
            self.epoch, self.split, self.loss, self.metric, self.wallclock_seconds, self.grad_norm_mean, self.lr
        )
    }
}

/// Metrics file contents: a `#` comment describing the configuration, the
/// header, then one row per record.
pub fn metrics_csv(config: &TrainingConfig, records: &[EpochRecord]) -> String {
    let mut out = format!("# {}\n{METRICS_HEADER}\n", config.describe());
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best held-out epoch (the initial ones if no epoch ran).
    pub best: Network,
    pub best_epoch: Option<usize>,
    /// Parameters after the last update.
    pub last: Network,
    pub records: Vec<EpochRecord>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// The held-out metric at the best epoch.
    pub fn best_metric(&self) -> Option<f64> {
        let epoch = self.best_epoch?;
        self.records
            .iter()
            .find(|r| r.epoch == epoch && r.split != Split::Train)
            .map(|r| r.metric)
    }
}

fn divergence(err: Error) -> Result<String> {
    match err {
        Error::NonFiniteGradient { block } => Ok(format!("non-finite gradient in `{block}`")),
        Error::NonFiniteInput { timestep } => Ok(format!("non-finite activation at timestep {timestep}")),
        other => Err(other),
    }
}

/// Validation perplexity of a unidirectional LM, state carried across the
/// whole split.
pub fn evaluate_language_model(network: &Network, tokens: &[usize]) -> Result<(f64, f64)> {
    let loss = mean_cross_entropy(&mut LmPredictor::new(network)?, tokens)?;
    Ok((loss, loss.exp()))
}

/// Truncated BPTT over `batch_size` contiguous streams with state carried
/// between windows. The loss of a window is summed over time and averaged
/// over streams.
pub fn train_language_model(
    mut network: Network,
    corpus: &Corpus,
    config: &TrainingConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = network.arch().output_dim;
    if network.arch().input_dim != vocab || vocab < corpus.vocab.size() {
        return Err(Error::Config(format!(
            "language model needs input and output size ≥ vocabulary size {}",
            corpus.vocab.size()
        )));
    }
    LmPredictor::new(&network)?;
    let batches = batch_iter(corpus.train(), config.bptt_len, config.batch_size)?;
    let per_epoch = config
        .max_batches
        .map_or(batches.num_batches(), |m| m.min(batches.num_batches()));

    let mut opt = OptimizerState::new(&config.optimizer, &network);
    let mut grad = network.zeros_like();
    let mut lr = config.learning_rate;
    let mut records = Vec::new();
    let mut best = network.clone();
    let mut best_epoch = None;
    let mut best_ppl = f64::INFINITY;
    let start = Instant::now();
    let scale = 1.0 / config.batch_size as f64;

    for epoch in 1..=config.epochs {
        let mut states = vec![network.zero_state(); config.batch_size];
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut tokens = 0usize;
        for batch in batch_iter(corpus.train(), config.bptt_len, config.batch_size)?.take(per_epoch) {
            ParamSet::zero(&mut grad);
            let mut window_loss = 0.0;
            let step = (|| -> Result<()> {
                let seqs: Vec<Vec<Vector>> = batch
                    .inputs
                    .iter()
                    .map(|ids| ids.iter().map(|&t| Vector::one_hot(vocab, t)).collect())
                    .collect();
                let seq_refs: Vec<&[Vector]> = seqs.iter().map(|s| &s[..]).collect();
                let inits: Vec<&NetworkState> = states.iter().collect();
                let traces = network.forward_batch(&inits, &seq_refs)?;
                let outputs: Vec<Vec<Vector>> = traces.iter().map(|t| t.top_outputs()).collect();
                let flat: Vec<&[f64]> = outputs.iter().flat_map(|o| o.iter().map(|h| &h[..])).collect();
                let logits = network.head().forward_many(&flat);
                let targets = batch.targets.iter().flatten();
                let mut dys = Vec::with_capacity(flat.len());
                for (l, &y) in logits.iter().zip(targets) {
                    let (loss, mut dy) = softmax_xent(l, y)?;
                    window_loss += loss;
                    dy.iter_mut().for_each(|g| *g *= scale);
                    dys.push(dy);
                }
                let dy_refs: Vec<&[f64]> = dys.iter().map(|d| &d[..]).collect();
                let mut dh = vec![Vector::zeros(network.arch().hidden_dim); flat.len()];
                let head = network.head().clone();
                head.backward_many(grad.head_mut(), &dy_refs, &flat, &mut dh);
                let d_tops: Vec<&[Vector]> = dh.chunks(config.bptt_len).collect();
                let trace_refs: Vec<&NetworkTrace> = traces.iter().collect();
                network.backward_batch(&trace_refs, &d_tops, &mut grad)?;
                for (state, trace) in states.iter_mut().zip(&traces) {
                    *state = trace.final_state();
                }
                Ok(())
            })();
            let clipped = step.and_then(|()| {
                if !window_loss.is_finite() {
                    return Err(Error::NonFiniteGradient { block: "loss".into() });
                }
                clip_global_norm(&mut grad, config.clip_norm)
            });
            let clip = match clipped {
                Ok(c) => c,
                Err(e) => {
                    let reason = divergence(e)?;
                    return Ok(TrainOutcome {
                        best,
                        best_epoch,
                        last: network,
                        records,
                        status: RunStatus::Diverged { epoch, reason },
                    });
                }
            };
            opt.apply(&config.optimizer, &mut network, &grad, lr)?;
            norm_sum += clip.norm;
            loss_sum += window_loss;
            tokens += config.batch_size * config.bptt_len;
        }

        let train_loss = loss_sum / tokens as f64;
        let train = EpochRecord {
            epoch,
            split: Split::Train,
            loss: train_loss,
            metric: train_loss.exp(),
            wallclock_seconds: start.elapsed().as_secs_f64(),
            grad_norm_mean: norm_sum / per_epoch as f64,
            lr,
        };
        observer(&train);
        records.push(train);

        let (valid_loss, valid_ppl) = match evaluate_language_model(&network, corpus.valid()) {
            Ok(v) => v,
            Err(e) => {
                let reason = divergence(e)?;
                return Ok(TrainOutcome {
                    best,
                    best_epoch,
                    last: network,
                    records,
                    status: RunStatus::Diverged { epoch, reason },
                });
            }
        };
        let valid = EpochRecord {
            epoch,
            split: Split::Valid,
            loss: valid_loss,
            metric: valid_ppl,
            wallclock_seconds: start.elapsed().as_secs_f64(),
            grad_norm_mean: 0.0,
            lr,
        };
        observer(&valid);
        records.push(valid);

        if !valid_ppl.is_finite() {
            return Ok(TrainOutcome {
                best,
                best_epoch,
                last: network,
                records,
                status: RunStatus::Diverged {
                    epoch,
                    reason: "non-finite validation perplexity".into(),
                },
            });
        }
        let improved = valid_ppl < best_ppl;
        if improved {
            best_ppl = valid_ppl;
            best = network.clone();
            best_epoch = Some(epoch);
        }
        match config.decay {
            Decay::EveryEpoch => lr *= config.lr_decay,
            Decay::OnPlateau if !improved => lr *= config.lr_decay,
            _ => {}
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: network,
        records,
        status: RunStatus::Completed,
    })
}

/// Summed loss and number of correct predictions over `samples`, run in
/// lockstep; optionally accumulates gradients scaled by `scale`.
fn sequence_step(network: &Network, samples: &[&Sample], grad: Option<(&mut Network, f64)>) -> Result<(f64, usize)> {
    let zero = network.zero_state();
    let inits = vec![&zero; samples.len()];
    let seqs: Vec<&[Vector]> = samples.iter().map(|s| &s.inputs[..]).collect();
    let traces = network.forward_batch(&inits, &seqs)?;
    let features: Vec<Vector> = traces.iter().map(|t| network.sequence_features(t)).collect();
    let feature_refs: Vec<&[f64]> = features.iter().map(|f| &f[..]).collect();
    let outs = network.head().forward_many(&feature_refs);
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut dys = Vec::with_capacity(samples.len());
    for (s, out) in samples.iter().zip(&outs) {
        let (l, dy, ok) = match s.target {
            Target::Class(c) => {
                let (l, dy) = softmax_xent(out, c)?;
                let argmax = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k);
                (l, dy, argmax == Some(c))
            }
            Target::Real(r) => {
                let (l, dy) = squared_error(&out[..1], &[r]);
                (l, dy, (out[0] - r).abs() < ADDING_TOLERANCE)
            }
        };
        loss += l;
        correct += ok as usize;
        dys.push(dy);
    }
    if let Some((grad, scale)) = grad {
        for dy in &mut dys {
            dy.iter_mut().for_each(|g| *g *= scale);
        }
        let dy_refs: Vec<&[f64]> = dys.iter().map(|d| &d[..]).collect();
        let mut d_features = vec![Vector::zeros(network.arch().feature_dim()); samples.len()];
        network
            .head()
            .backward_many(grad.head_mut(), &dy_refs, &feature_refs, &mut d_features);
        let d_tops: Vec<Vec<Vector>> = traces
            .iter()
            .zip(&d_features)
            .map(|(t, d)| network.sequence_feature_grad(t, d))
            .collect();
        let d_top_refs: Vec<&[Vector]> = d_tops.iter().map(|d| &d[..]).collect();
        let trace_refs: Vec<&NetworkTrace> = traces.iter().collect();
        network.backward_batch(&trace_refs, &d_top_refs, grad)?;
    }
    Ok((loss, correct))
}

/// Mean loss and accuracy over a dataset.
pub fn evaluate_sequence_task(network: &Network, data: &SyntheticDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let samples: Vec<&Sample> = data.samples.iter().collect();
    for chunk in samples.chunks(EVAL_BATCH) {
        let (l, ok) = sequence_step(network, chunk, None)?;
        loss += l;
        correct += ok;
    }
    let n = data.samples.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn check_task_shape(network: &Network, data: &SyntheticDataset) -> Result<()> {
    let arch = network.arch();
    let spec = &data.spec;
    if arch.input_dim != spec.input_dim() || arch.output_dim != spec.output_dim() {
        return Err(Error::Config(format!(
            "task needs input {} / output {}, model has {} / {}",
            spec.input_dim(),
            spec.output_dim(),
            arch.input_dim,
            arch.output_dim
        )));
    }
    if spec.kind == SyntheticKind::Recall && data.samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// Full-sequence training with the loss at the last step, minibatches
/// reshuffled every epoch. Held-out accuracy is reported under `Test`.
pub fn train_sequence_task(
    mut network: Network,
    train: &SyntheticDataset,
    test: &SyntheticDataset,
    config: &TrainingConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_task_shape(&network, train)?;
    check_task_shape(&network, test)?;
    let mut rng = Rng::derive(config.seed, 1);
    let mut opt = OptimizerState::new(&config.optimizer, &network);
    let mut grad = network.zeros_like();
    let mut lr = config.learning_rate;
    let mut records = Vec::new();
    let mut best = network.clone();
    let mut best_epoch = None;
    let mut best_acc = f64::NEG_INFINITY;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut batches = train.batches(config.batch_size, &mut rng);
        if let Some(m) = config.max_batches {
            batches.truncate(m);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut norm_sum = 0.0;
        for idxs in &batches {
            ParamSet::zero(&mut grad);
            let scale = 1.0 / idxs.len() as f64;
            let batch: Vec<&Sample> = idxs.iter().map(|&i| &train.samples[i]).collect();
            let mut batch_loss = 0.0;
            let result = sequence_step(&network, &batch, Some((&mut grad, scale))).map(|(l, ok)| {
                batch_loss = l;
                correct += ok;
            });
            let clipped = result.and_then(|()| {
                if !batch_loss.is_finite() {
                    return Err(Error::NonFiniteGradient { block: "loss".into() });
                }
                clip_global_norm(&mut grad, config.clip_norm)
            });
            let clip = match clipped {
                Ok(c) => c,
                Err(e) => {
                    let reason = divergence(e)?;
                    return Ok(TrainOutcome {
                        best,
                        best_epoch,
                        last: network,
                        records,
                        status: RunStatus::Diverged { epoch, reason },
                    });
                }
            };
            opt.apply(&config.optimizer, &mut network, &grad, lr)?;
            loss_sum += batch_loss;
            seen += idxs.len();
            norm_sum += clip.norm;
        }
        let train_rec = EpochRecord {
            epoch,
            split: Split::Train,
            loss: loss_sum / seen.max(1) as f64,
            metric: correct as f64 / seen.max(1) as f64,
            wallclock_seconds: start.elapsed().as_secs_f64(),
            grad_norm_mean: norm_sum / batches.len().max(1) as f64,
            lr,
        };
        observer(&train_rec);
        records.push(train_rec);

        let (test_loss, test_acc) = evaluate_sequence_task(&network, test)?;
        let test_rec = EpochRecord {
            epoch,
            split: Split::Test,
            loss: test_loss,
            metric: test_acc,
            wallclock_seconds: start.elapsed().as_secs_f64(),
            grad_norm_mean: 0.0,
            lr,
        };
        observer(&test_rec);
        records.push(test_rec);

        let improved = test_acc > best_acc;
        if improved {
            best_acc = test_acc;
            best = network.clone();
            best_epoch = Some(epoch);
        }
        match config.decay {
            Decay::EveryEpoch => lr *= config.lr_decay,
            Decay::OnPlateau if !improved => lr *= config.lr_decay,
            _ => {}
        }
        if config.stop_accuracy.is_some_and(|s| test_acc >= s) {
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: network,
        records,
        status: RunStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::Variant;
    use crate::model::Architecture;
    use crate::tasks::{make_synthetic, SplitRatios, SyntheticSpec};

    fn tiny_corpus() -> Corpus {
        let text = "the cat sat on the mat. the dog sat on the log. ".repeat(22);
        Corpus::from_text(&text[..1024], SplitRatios::default()).unwrap()
    }

    fn lm(corpus: &Corpus, variant: Variant, hidden: usize, seed: u64) -> Network {
        let v = corpus.vocab.size();
        Network::init(Architecture::new(variant, v, hidden, v), &mut Rng::new(seed)).unwrap()
    }

    fn lm_config() -> TrainingConfig {
        TrainingConfig {
            bptt_len: 16,
            batch_size: 4,
            epochs: 5,
            ..TrainingConfig::language_model()
        }
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let corpus = tiny_corpus();
        let net = lm(&corpus, Variant::Lstm, 8, 1);
        let config = TrainingConfig {
            epochs: 0,
            ..lm_config()
        };
        let out = train_language_model(net.clone(), &corpus, &config, &mut |_| {}).unwrap();
        assert_eq!(out.last, net);
        assert!(out.records.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn smoke_training_loss_decreases() {
        let corpus = tiny_corpus();
        let out = train_language_model(lm(&corpus, Variant::Lstm, 16, 2), &corpus, &lm_config(), &mut |_| {}).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        let train: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.loss)
            .collect();
        assert_eq!(train.len(), 5);
        assert!(train.windows(2).all(|w| w[1] < w[0]), "{train:?}");
    }

    #[test]
    fn same_seed_same_stream() {
        let corpus = tiny_corpus();
        let run = || {
            let out = train_language_model(
                lm(&corpus, Variant::CoupledGate, 8, 3),
                &corpus,
                &lm_config(),
                &mut |_| {},
            )
            .unwrap();
            let rows: Vec<(f64, f64, f64)> = out
                .records
                .iter()
                .map(|r| (r.loss, r.metric, r.grad_norm_mean))
                .collect();
            (rows, out.last)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn observer_sees_every_record() {
        let corpus = tiny_corpus();
        let mut seen = Vec::new();
        let out = train_language_model(lm(&corpus, Variant::Srnn, 8, 4), &corpus, &lm_config(), &mut |r| {
            seen.push(r.clone())
        })
        .unwrap();
        assert_eq!(seen, out.records);
        let csv = metrics_csv(&lm_config(), &out.records);
        assert!(csv.starts_with("# optimizer=sgd"));
        assert_eq!(csv.lines().nth(1), Some(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 2 + out.records.len());
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let corpus = tiny_corpus();
        let mut net = lm(&corpus, Variant::Srnn, 8, 5);
        net.head_mut().w.as_mut_slice()[0] = f64::NAN;
        let out = train_language_model(net, &corpus, &lm_config(), &mut |_| {}).unwrap();
        assert!(
            matches!(out.status, RunStatus::Diverged { epoch: 1, .. }),
            "{:?}",
            out.status
        );
    }

    #[test]
    fn best_checkpoint_tracks_validation() {
        let corpus = tiny_corpus();
        let out = train_language_model(lm(&corpus, Variant::Lstm, 8, 6), &corpus, &lm_config(), &mut |_| {}).unwrap();
        let epoch = out.best_epoch.unwrap();
        let (_, ppl) = evaluate_language_model(&out.best, corpus.valid()).unwrap();
        assert_eq!(Some(ppl), out.best_metric());
        let valid: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == Split::Valid)
            .map(|r| r.metric)
            .collect();
        assert_eq!(valid.iter().copied().fold(f64::INFINITY, f64::min), valid[epoch - 1]);
    }

    #[test]
    fn echo_recall_is_learned() {
        let train = make_synthetic(&SyntheticSpec::recall(0, 4, 256, 1)).unwrap();
        let test = make_synthetic(&SyntheticSpec::recall(0, 4, 128, 2)).unwrap();
        let arch = Architecture::new(Variant::Lstm, train.spec.input_dim(), 8, 4);
        let net = Network::init(arch, &mut Rng::new(1)).unwrap();
        let config = TrainingConfig {
            epochs: 10,
            stop_accuracy: Some(1.0),
            ..TrainingConfig::sequence_task()
        };
        let out = train_sequence_task(net, &train, &test, &config, &mut |_| {}).unwrap();
        assert_eq!(out.best_metric(), Some(1.0));
        assert!(out.records.len() < 20, "early stop did not trigger");
    }

    #[test]
    fn adding_task_runs_bidirectionally() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Adding,
            seq_len: 6,
            delay: 2,
            alphabet_size: 0,
            count: 64,
            seed: 3,
        };
        let train = make_synthetic(&spec).unwrap();
        let test = make_synthetic(&SyntheticSpec { seed: 4, ..spec }).unwrap();
        let arch = Architecture {
            directions: 2,
            ..Architecture::new(Variant::CoupledGate, 2, 6, 1)
        };
        let net = Network::init(arch, &mut Rng::new(2)).unwrap();
        let config = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::sequence_task()
        };
        let out = train_sequence_task(net, &train, &test, &config, &mut |_| {}).unwrap();
        let losses: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.loss)
            .collect();
        assert!(losses[2] < losses[0]);
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let train = make_synthetic(&SyntheticSpec::recall(1, 3, 8, 1)).unwrap();
        let net = Network::init(Architecture::new(Variant::Lstm, 4, 3, 3), &mut Rng::new(0)).unwrap();
        let config = TrainingConfig::sequence_task();
        assert!(matches!(
            train_sequence_task(net, &train, &train, &config, &mut |_| {}),
            Err(Error::Config(_))
        ));
    }
}
