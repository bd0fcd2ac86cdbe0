//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use weightcell::cells::Variant;
use weightcell::tasks::{SplitRatios, SyntheticKind, SyntheticSpec};
use weightcell::training::{Decay, Optimizer, TrainingConfig};

use crate::error::CliError;

/// Keys accepted besides `lr_override.<variant>`.
const KEYS: &[&str] = &[
    "variant",
    "variants",
    "task",
    "corpus",
    "train_fraction",
    "valid_fraction",
    "hidden_dim",
    "layers",
    "directions",
    "seeds",
    "output_dir",
    "learning_rate",
    "optimizer",
    "momentum",
    "clip_norm",
    "bptt_len",
    "batch_size",
    "epochs",
    "lr_decay",
    "decay",
    "stop_accuracy",
    "max_batches",
    "delay",
    "alphabet_size",
    "seq_len",
    "train_count",
    "test_count",
    "data_seed",
    "forget_bias",
];

const LR_OVERRIDE: &str = "lr_override.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Lm,
    Synthetic(SyntheticKind),
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Lm => "lm",
            Task::Synthetic(SyntheticKind::Recall) => "recall",
            Task::Synthetic(SyntheticKind::Adding) => "adding",
        }
    }
}

/// Raw pairs; later assignments to a key win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pairs: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut kv = KeyValues::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value, got `{line}`", n + 1)))?;
            kv.set(k.trim(), v.trim())?;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        KeyValues::parse(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let known = KEYS.contains(&key)
            || key
                .strip_prefix(LR_OVERRIDE)
                .is_some_and(|v| v.parse::<Variant>().is_ok());
        if !known {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        self.pairs.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("bad value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variants: Vec<Variant>,
    pub task: Task,
    pub corpus: Option<PathBuf>,
    pub splits: SplitRatios,
    pub hidden_dim: usize,
    pub layers: usize,
    pub directions: usize,
    pub training: TrainingConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub lr_overrides: Vec<(Variant, f64)>,
    pub delay: usize,
    pub alphabet_size: usize,
    pub seq_len: Option<usize>,
    pub train_count: usize,
    pub test_count: usize,
    pub data_seed: u64,
    /// Replaces the initial forget-gate bias of every memory cell.
    pub forget_bias: Option<f64>,
}

impl RunConfig {
    /// Resolves defaults. `variant` (or `variants`) is required; language
    /// modelling also needs `corpus`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, CliError> {
        let variants: Vec<Variant> = match (kv.get("variants"), kv.get("variant")) {
            (Some(list), _) | (None, Some(list)) => list
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<_, _>>()?,
            (None, None) => return Err(CliError::Usage("missing required key `variant`".into())),
        };
        if variants.is_empty() {
            return Err(CliError::Usage("missing required key `variant`".into()));
        }

        let task = match kv.get("task").unwrap_or("lm") {
            "lm" => Task::Lm,
            other => Task::Synthetic(
                other
                    .parse::<SyntheticKind>()
                    .map_err(|_| CliError::Usage(format!("unknown task `{other}` (lm, recall, adding)")))?,
            ),
        };
        let corpus = kv.get("corpus").map(PathBuf::from);
        if task == Task::Lm && corpus.is_none() {
            return Err(CliError::Usage("missing required key `corpus` for task lm".into()));
        }

        let mut training = match task {
            Task::Lm => TrainingConfig::language_model(),
            Task::Synthetic(_) => TrainingConfig::sequence_task(),
        };
        if let Some(name) = kv.get("optimizer") {
            training.optimizer = match name {
                "sgd" => Optimizer::sgd(),
                "adam" => Optimizer::adam(),
                other => return Err(CliError::Usage(format!("unknown optimizer `{other}` (sgd, adam)"))),
            };
        }
        if let Some(m) = kv.parsed::<f64>("momentum")? {
            match &mut training.optimizer {
                Optimizer::Sgd { momentum } => *momentum = m,
                Optimizer::Adam { .. } => {
                    return Err(CliError::Usage("`momentum` only applies to optimizer=sgd".into()))
                }
            }
        }
        if let Some(v) = kv.parsed("learning_rate")? {
            training.learning_rate = v;
        }
        if let Some(v) = kv.parsed("clip_norm")? {
            training.clip_norm = v;
        }
        if let Some(v) = kv.parsed("bptt_len")? {
            training.bptt_len = v;
        }
        if let Some(v) = kv.parsed("batch_size")? {
            training.batch_size = v;
        }
        if let Some(v) = kv.parsed("epochs")? {
            training.epochs = v;
        }
        if let Some(v) = kv.parsed("lr_decay")? {
            training.lr_decay = v;
        }
        if let Some(v) = kv.get("decay") {
            training.decay = v.parse::<Decay>().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(v) = kv.get("stop_accuracy") {
            training.stop_accuracy = optional(v, "stop_accuracy")?;
        }
        if let Some(v) = kv.get("max_batches") {
            training.max_batches = optional(v, "max_batches")?;
        }

        let seeds = match kv.get("seeds") {
            Some(list) => list
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<u64>()
                        .map_err(|e| CliError::Usage(format!("bad seed `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![0],
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("`seeds` must list at least one seed".into()));
        }

        let mut lr_overrides = Vec::new();
        for v in Variant::ALL {
            if let Some(lr) = kv.parsed::<f64>(&format!("{LR_OVERRIDE}{}", v.name()))? {
                lr_overrides.push((v, lr));
            }
        }

        let defaults = SplitRatios::default();
        let config = RunConfig {
            variants,
            task,
            corpus,
            splits: SplitRatios {
                train: kv.parsed("train_fraction")?.unwrap_or(defaults.train),
                valid: kv.parsed("valid_fraction")?.unwrap_or(defaults.valid),
            },
            hidden_dim: kv.parsed("hidden_dim")?.unwrap_or(128),
            layers: kv.parsed("layers")?.unwrap_or(1),
            directions: kv.parsed("directions")?.unwrap_or(1),
            training,
            seeds,
            output_dir: kv
                .get("output_dir")
                .map_or_else(|| PathBuf::from("runs"), PathBuf::from),
            lr_overrides,
            delay: kv.parsed("delay")?.unwrap_or(50),
            alphabet_size: kv.parsed("alphabet_size")?.unwrap_or(8),
            seq_len: kv.parsed("seq_len")?,
            train_count: kv.parsed("train_count")?.unwrap_or(10_000),
            test_count: kv.parsed("test_count")?.unwrap_or(1_000),
            data_seed: kv.parsed("data_seed")?.unwrap_or(1),
            forget_bias: kv.parsed("forget_bias")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.hidden_dim == 0 || self.layers == 0 {
            return Err(CliError::Usage("hidden_dim and layers must be at least 1".into()));
        }
        if !(1..=2).contains(&self.directions) {
            return Err(CliError::Usage(format!(
                "directions must be 1 or 2, got {}",
                self.directions
            )));
        }
        if self.task == Task::Lm && self.directions == 2 {
            return Err(CliError::Usage("a language model cannot be bidirectional".into()));
        }
        if let Task::Synthetic(kind) = self.task {
            self.synthetic_spec(kind, self.train_count, self.data_seed)
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.forget_bias.is_some_and(|b| !b.is_finite()) {
            return Err(CliError::Usage("forget_bias must be finite".into()));
        }
        for (v, lr) in &self.lr_overrides {
            if !(*lr > 0.0 && lr.is_finite()) {
                return Err(CliError::Usage(format!("lr_override.{} must be positive", v.name())));
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self, kind: SyntheticKind, count: usize, seed: u64) -> SyntheticSpec {
        let seq_len = self.seq_len.unwrap_or(match kind {
            SyntheticKind::Recall => self.delay + 2,
            SyntheticKind::Adding => self.delay + 10,
        });
        SyntheticSpec {
            kind,
            seq_len,
            delay: self.delay,
            alphabet_size: self.alphabet_size,
            count,
            seed,
        }
    }

    pub fn lr_override(&self, variant: Variant) -> Option<f64> {
        self.lr_overrides.iter().find(|(v, _)| *v == variant).map(|(_, lr)| *lr)
    }

    /// Training settings for one run, with any per-variant override applied.
    pub fn training_for(&self, variant: Variant, seed: u64) -> TrainingConfig {
        let mut t = self.training.clone();
        t.seed = seed;
        if let Some(lr) = self.lr_override(variant) {
            t.learning_rate = lr;
        }
        t
    }

    /// Self-contained config for a single `(variant, seed)` run.
    pub fn echo(&self, variant: Variant, seed: u64) -> String {
        let t = &self.training;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("variant", variant.name().into());
        put("seeds", seed.to_string());
        put("task", self.task.name().into());
        if let Some(c) = &self.corpus {
            let c = fs::canonicalize(c).unwrap_or_else(|_| c.clone());
            put("corpus", c.display().to_string());
            put("train_fraction", self.splits.train.to_string());
            put("valid_fraction", self.splits.valid.to_string());
        }
        put("hidden_dim", self.hidden_dim.to_string());
        put("layers", self.layers.to_string());
        put("directions", self.directions.to_string());
        if let Some(b) = self.forget_bias {
            put("forget_bias", b.to_string());
        }
        put("output_dir", self.output_dir.display().to_string());
        match t.optimizer {
            Optimizer::Sgd { momentum } => {
                put("optimizer", "sgd".into());
                put("momentum", momentum.to_string());
            }
            Optimizer::Adam { .. } => put("optimizer", "adam".into()),
        }
        put("learning_rate", t.learning_rate.to_string());
        if let Some(lr) = self.lr_override(variant) {
            put(&format!("{LR_OVERRIDE}{}", variant.name()), lr.to_string());
        }
        put("clip_norm", t.clip_norm.to_string());
        put("bptt_len", t.bptt_len.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("lr_decay", t.lr_decay.to_string());
        put("decay", t.decay.name().into());
        put(
            "stop_accuracy",
            t.stop_accuracy.map_or("none".into(), |v| v.to_string()),
        );
        put("max_batches", t.max_batches.map_or("none".into(), |v| v.to_string()));
        if let Task::Synthetic(kind) = self.task {
            let spec = self.synthetic_spec(kind, self.train_count, self.data_seed);
            put("delay", self.delay.to_string());
            put("alphabet_size", self.alphabet_size.to_string());
            put("seq_len", spec.seq_len.to_string());
            put("train_count", self.train_count.to_string());
            put("test_count", self.test_count.to_string());
            put("data_seed", self.data_seed.to_string());
        }
        s
    }
}

fn optional<T: std::str::FromStr>(v: &str, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if v == "none" {
        return Ok(None);
    }
    v.parse::<T>()
        .map(Some)
        .map_err(|e| CliError::Usage(format!("bad value `{v}` for `{key}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(text, "test").unwrap()
    }

    #[test]
    fn comments_and_blank_lines() {
        let kv = kv("# header\n\nvariant = lstm  # trailing\ncorpus=a.txt\n");
        assert_eq!(kv.get("variant"), Some("lstm"));
        assert_eq!(kv.get("corpus"), Some("a.txt"));
    }

    #[test]
    fn missing_variant_is_named() {
        let err = RunConfig::from_kv(&kv("corpus = a.txt")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`variant`"));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(KeyValues::parse("hiden_dim = 3", "t").is_err());
        assert!(KeyValues::parse("lr_override.gru = 3", "t").is_err());
    }

    #[test]
    fn override_wins() {
        let mut k = kv("variant = lstm\ncorpus = a\nepochs = 4");
        k.apply("epochs=1").unwrap();
        assert_eq!(RunConfig::from_kv(&k).unwrap().training.epochs, 1);
    }

    #[test]
    fn lr_override_applies_to_one_variant() {
        let c = RunConfig::from_kv(&kv("variants = lstm, srnn\ncorpus = a\nlr_override.srnn = 0.1")).unwrap();
        assert_eq!(c.training_for(Variant::Srnn, 3).learning_rate, 0.1);
        assert_eq!(c.training_for(Variant::Lstm, 3).learning_rate, 1.0);
        assert_eq!(c.training_for(Variant::Lstm, 3).seed, 3);
    }

    #[test]
    fn echo_reproduces_run() {
        let c = RunConfig::from_kv(&kv(
            "variants = lstm, coupled\ntask = recall\ndelay = 5\nseeds = 1,2\nmax_batches = 3\nforget_bias = 2.5",
        ))
        .unwrap();
        let back = RunConfig::from_kv(&kv(&c.echo(Variant::CoupledGate, 2))).unwrap();
        assert_eq!(back.variants, vec![Variant::CoupledGate]);
        assert_eq!(back.seeds, vec![2]);
        assert_eq!(back.forget_bias, Some(2.5));
        assert_eq!(
            back.training_for(Variant::CoupledGate, 2),
            c.training_for(Variant::CoupledGate, 2)
        );
        assert_eq!(
            back.synthetic_spec(SyntheticKind::Recall, 10, 1),
            c.synthetic_spec(SyntheticKind::Recall, 10, 1)
        );
    }

    #[test]
    fn lm_requires_corpus() {
        assert!(RunConfig::from_kv(&kv("variant = lstm"))
            .unwrap_err()
            .to_string()
            .contains("corpus"));
    }
}
