//! Single runs, sweeps and checkpoint evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use weightcell::cells::Variant;
use weightcell::checkpoint::Checkpoint;
use weightcell::model::{Architecture, Network};
use weightcell::numerics::Rng;
use weightcell::params::ParamSet;
use weightcell::tasks::{load_text_corpus_with, make_synthetic, Corpus, SyntheticDataset, SyntheticKind};
use weightcell::training::{
    evaluate_language_model, evaluate_sequence_task, metrics_csv, train_language_model, train_sequence_task,
    EpochRecord, RunStatus, TrainOutcome,
};

use crate::config::{KeyValues, RunConfig, Task};
use crate::error::CliError;
use crate::report::{AblationReport, RunEntry};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ck";

/// Inputs shared by every run of a sweep.
pub enum TaskData {
    Lm(Corpus),
    Synthetic {
        train: SyntheticDataset,
        test: SyntheticDataset,
    },
}

impl TaskData {
    pub fn load(config: &RunConfig) -> Result<Self, CliError> {
        match config.task {
            Task::Lm => {
                let path = config.corpus.as_ref().expect("validated: lm has a corpus");
                Ok(TaskData::Lm(load_text_corpus_with(path, config.splits)?))
            }
            Task::Synthetic(kind) => Ok(TaskData::Synthetic {
                train: make_synthetic(&config.synthetic_spec(kind, config.train_count, config.data_seed))?,
                test: make_synthetic(&test_spec(config, kind))?,
            }),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            TaskData::Lm(c) => (c.vocab.size(), c.vocab.size()),
            TaskData::Synthetic { train, .. } => (train.spec.input_dim(), train.spec.output_dim()),
        }
    }
}

/// The held-out set is drawn from the next data seed.
fn test_spec(config: &RunConfig, kind: SyntheticKind) -> weightcell::tasks::SyntheticSpec {
    config.synthetic_spec(kind, config.test_count, config.data_seed.wrapping_add(1))
}

pub fn architecture(config: &RunConfig, data: &TaskData, variant: Variant) -> Architecture {
    let (input_dim, output_dim) = data.dims();
    Architecture {
        variant,
        input_dim,
        hidden_dim: config.hidden_dim,
        output_dim,
        layers: config.layers,
        directions: config.directions,
    }
}

/// Output root: `WEIGHTCELL_OUT` if set, else the config's `output_dir`.
pub fn output_root(config: &RunConfig) -> PathBuf {
    match std::env::var_os("WEIGHTCELL_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output_dir.clone(),
    }
}

pub fn run_dir(root: &Path, variant: Variant, seed: u64) -> PathBuf {
    root.join(format!("{}-seed{seed}", variant.name()))
}

pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub dir: PathBuf,
    pub params: usize,
    pub learning_rate: f64,
    pub outcome: TrainOutcome,
}

/// Trains one `(variant, seed)` into `dir`: echoed config, metrics CSV and
/// the best checkpoint.
pub fn run_one(
    config: &RunConfig,
    data: &TaskData,
    variant: Variant,
    seed: u64,
    dir: &Path,
) -> Result<RunResult, CliError> {
    let training = config.training_for(variant, seed);
    if let Some(lr) = config.lr_override(variant) {
        eprintln!(
            "*** lr override: {} trains with learning_rate {lr} (shared value {}) ***",
            variant.name(),
            config.training.learning_rate
        );
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let echo = config.echo(variant, seed);
    write(&dir.join(CONFIG_FILE), echo.as_bytes())?;

    let arch = architecture(config, data, variant);
    let mut network = Network::init(arch, &mut Rng::new(seed))?;
    if let Some(b) = config.forget_bias {
        network.set_forget_bias(b);
    }
    let params = network.num_params();
    let tag = format!("[{} seed {seed}]", variant.name());
    let mut log = |r: &EpochRecord| {
        eprintln!(
            "{tag} epoch {} {} loss {:.4} {} {:.4} ({:.1}s)",
            r.epoch,
            r.split,
            r.loss,
            match config.task {
                Task::Lm => "ppl",
                Task::Synthetic(_) => "acc",
            },
            r.metric,
            r.wallclock_seconds
        )
    };
    let outcome = match data {
        TaskData::Lm(corpus) => train_language_model(network, corpus, &training, &mut log)?,
        TaskData::Synthetic { train, test } => train_sequence_task(network, train, test, &training, &mut log)?,
    };
    write(
        &dir.join(METRICS_FILE),
        metrics_csv(&training, &outcome.records).as_bytes(),
    )?;

    let mut ck = Checkpoint::new(outcome.best.clone());
    if let TaskData::Lm(corpus) = data {
        ck = ck.with_vocab(corpus.vocab.clone());
    }
    ck.meta.push(("config".into(), echo));
    if let Some(epoch) = outcome.best_epoch {
        ck.meta.push(("best_epoch".into(), epoch.to_string()));
    }
    ck.save(&dir.join(CHECKPOINT_FILE))?;

    Ok(RunResult {
        variant,
        seed,
        dir: dir.to_path_buf(),
        params,
        learning_rate: training.learning_rate,
        outcome,
    })
}

/// `train`: one variant, one seed.
pub fn cmd_train(config: &RunConfig) -> Result<RunResult, CliError> {
    if config.variants.len() != 1 || config.seeds.len() != 1 {
        return Err(CliError::Usage(
            "train runs one variant and one seed; use `ablate` for sweeps".into(),
        ));
    }
    let (variant, seed) = (config.variants[0], config.seeds[0]);
    let data = TaskData::load(config)?;
    let dir = run_dir(&output_root(config), variant, seed);
    let result = run_one(config, &data, variant, seed, &dir)?;
    if let RunStatus::Diverged { epoch, reason } = &result.outcome.status {
        return Err(CliError::Diverged(format!(
            "{} seed {seed} at epoch {epoch}: {reason} (metrics in {})",
            variant.name(),
            dir.display()
        )));
    }
    Ok(result)
}

/// `ablate`: every `(variant, seed)` pair with up to `jobs` runs at once.
/// Failed runs are recorded and the sweep continues.
pub fn cmd_ablate(config: &RunConfig, jobs: usize) -> Result<(AblationReport, Vec<RunResult>), CliError> {
    let data = TaskData::load(config)?;
    let root = output_root(config);
    fs::create_dir_all(&root).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", root.display())))?;
    let cells: Vec<(Variant, u64)> = config
        .variants
        .iter()
        .flat_map(|&v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let slots: Mutex<Vec<Option<Result<RunResult, CliError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = cells.get(k) else {
                    break;
                };
                let result = run_one(config, &data, variant, seed, &run_dir(&root, variant, seed));
                slots.lock().expect("no panics while holding the lock")[k] = Some(result);
            });
        }
    });

    let mut entries = Vec::new();
    let mut results = Vec::new();
    for ((variant, seed), slot) in cells.iter().zip(slots.into_inner().expect("workers joined")) {
        let (variant, seed) = (*variant, *seed);
        match slot.expect("every cell ran") {
            Ok(r) => {
                entries.push(RunEntry {
                    variant,
                    seed,
                    params: r.params,
                    learning_rate: r.learning_rate,
                    metric: r.outcome.best_metric(),
                    status: match &r.outcome.status {
                        RunStatus::Completed => "completed".into(),
                        RunStatus::Diverged { epoch, reason } => {
                            format!("diverged at epoch {epoch}: {reason}")
                        }
                    },
                });
                results.push(r);
            }
            Err(e) => {
                eprintln!("[{} seed {seed}] failed: {e}", variant.name());
                entries.push(RunEntry {
                    variant,
                    seed,
                    params: 0,
                    learning_rate: config.training_for(variant, seed).learning_rate,
                    metric: None,
                    status: format!("error: {e}"),
                })
            }
        }
    }
    let report = AblationReport::new(config.task, entries, &config.lr_overrides);
    write(&root.join("ablation.csv"), report.to_csv().as_bytes())?;
    write(&root.join("ablation_summary.csv"), report.summary_csv().as_bytes())?;
    write(&root.join("ablation.txt"), report.to_table().as_bytes())?;
    Ok((report, results))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub split: &'static str,
    pub loss: f64,
    /// Perplexity for language models, accuracy for synthetic tasks.
    pub metric: f64,
    pub metric_name: &'static str,
}

/// Evaluates a checkpoint. The task comes from the config stored in the
/// checkpoint, with `overrides` applied on top.
pub fn cmd_eval(checkpoint: &Path, overrides: Option<KeyValues>, split: &str) -> Result<Evaluation, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut kv = match ck.meta("config") {
        Some(text) => KeyValues::parse(text, &format!("{} (stored config)", checkpoint.display()))?,
        None => KeyValues::default(),
    };
    if let Some(extra) = overrides {
        for (k, v) in extra.iter() {
            kv.set(k, v)?;
        }
    }
    let variant = ck.network.variant();
    kv.set("variant", variant.name())?;
    let config = RunConfig::from_kv(&kv)?;
    let data = TaskData::load(&config)?;
    let expected = architecture(&config, &data, variant);
    if ck.network.arch().input_dim != expected.input_dim || ck.network.arch().output_dim != expected.output_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects input {} / output {}, task provides {} / {}",
            ck.network.arch().input_dim,
            ck.network.arch().output_dim,
            expected.input_dim,
            expected.output_dim
        )));
    }
    match &data {
        TaskData::Lm(corpus) => {
            if ck.vocab.as_ref() != Some(&corpus.vocab) {
                return Err(CliError::Usage(
                    "corpus vocabulary differs from the checkpoint's".into(),
                ));
            }
            let tokens = match split {
                "train" => corpus.train(),
                "valid" => corpus.valid(),
                "test" => corpus.test(),
                other => return Err(CliError::Usage(format!("unknown split `{other}` (train, valid, test)"))),
            };
            let (loss, ppl) = evaluate_language_model(&ck.network, tokens)?;
            Ok(Evaluation {
                split: split_name(split),
                loss,
                metric: ppl,
                metric_name: "perplexity",
            })
        }
        TaskData::Synthetic { train, test } => {
            let set = match split {
                "train" => train,
                "test" | "valid" => test,
                other => return Err(CliError::Usage(format!("unknown split `{other}` (train, test)"))),
            };
            let (loss, acc) = evaluate_sequence_task(&ck.network, set)?;
            let split = if split == "train" { "train" } else { "test" };
            Ok(Evaluation {
                split,
                loss,
                metric: acc,
                metric_name: "accuracy",
            })
        }
    }
}

fn split_name(s: &str) -> &'static str {
    match s {
        "train" => "train",
        "valid" => "valid",
        _ => "test",
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}
