//! Character corpora, contiguous LM batching and synthetic memory probes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

/// Character vocabulary ordered by first occurrence in the training split.
/// The id one past the last character is reserved for unknown characters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_text(text: impl IntoIterator<Item = char>) -> Self {
        let mut chars = Vec::new();
        let mut index = HashMap::new();
        for c in text {
            index.entry(c).or_insert_with(|| {
                chars.push(c);
                chars.len() - 1
            });
        }
        Vocab { chars, index }
    }

    /// Rebuilds a vocabulary from its id-ordered characters.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if index.len() != chars.len() {
            return Err(Error::Config("vocabulary contains duplicate characters".into()));
        }
        Ok(Vocab { chars, index })
    }

    /// Number of ids, including the unknown id.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn unknown_id(&self) -> usize {
        self.chars.len()
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.chars.len())
    }

    pub fn token(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Printable label for heatmaps and logs.
    pub fn label(&self, id: usize) -> String {
        match self.token(id) {
            Some('\n') => "\\n".into(),
            Some('\t') => "\\t".into(),
            Some(' ') => "␣".into(),
            Some(c) => c.to_string(),
            None => "<unk>".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, valid: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub token_ids: Vec<usize>,
    pub vocab: Vocab,
    pub splits: Splits,
}

impl Corpus {
    /// Contiguous train/valid/test split, vocabulary from the train part.
    pub fn from_text(text: &str, ratios: SplitRatios) -> Result<Self> {
        if !(ratios.train > 0.0 && ratios.valid >= 0.0 && ratios.train + ratios.valid <= 1.0) {
            return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
        }
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let n_train = (n as f64 * ratios.train).floor() as usize;
        let n_valid = ((n as f64 * ratios.valid).floor() as usize).min(n - n_train);
        let vocab = Vocab::from_text(chars[..n_train].iter().copied());
        let token_ids = chars.iter().map(|&c| vocab.id(c)).collect();
        Ok(Corpus {
            token_ids,
            vocab,
            splits: Splits {
                train: 0..n_train,
                valid: n_train..n_train + n_valid,
                test: n_train + n_valid..n,
            },
        })
    }

    pub fn train(&self) -> &[usize] {
        &self.token_ids[self.splits.train.clone()]
    }

    pub fn valid(&self) -> &[usize] {
        &self.token_ids[self.splits.valid.clone()]
    }

    pub fn test(&self) -> &[usize] {
        &self.token_ids[self.splits.test.clone()]
    }
}

pub fn load_text_corpus(path: &Path) -> Result<Corpus> {
    load_text_corpus_with(path, SplitRatios::default())
}

pub fn load_text_corpus_with(path: &Path, ratios: SplitRatios) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    if text.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    Corpus::from_text(&text, ratios)
}

/// One truncated-BPTT window per stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    /// `batch_size × bptt_len` token ids.
    pub inputs: Vec<Vec<usize>>,
    /// `inputs` shifted one position ahead.
    pub targets: Vec<Vec<usize>>,
}

/// The corpus cut into `batch_size` contiguous streams; batch `k` holds
/// window `k` of every stream, so the state left by batch `k` is the right
/// initial state for batch `k + 1`. The ragged tail is dropped.
#[derive(Clone, Debug)]
pub struct BatchIter<'a> {
    tokens: &'a [usize],
    stream_len: usize,
    bptt_len: usize,
    batch_size: usize,
    num_batches: usize,
    next: usize,
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.num_batches
    }

    /// Tokens fed as inputs per epoch: `batch_size · bptt_len · num_batches`.
    pub fn tokens_per_epoch(&self) -> usize {
        self.batch_size * self.bptt_len * self.num_batches
    }
}

impl Iterator for BatchIter<'_> {
    type Item = TokenBatch;

    fn next(&mut self) -> Option<TokenBatch> {
        if self.next >= self.num_batches {
            return None;
        }
        let start = self.next * self.bptt_len;
        self.next += 1;
        let window = |offset: usize| {
            (0..self.batch_size)
                .map(|b| {
                    let s = b * self.stream_len + start + offset;
                    self.tokens[s..s + self.bptt_len].to_vec()
                })
                .collect()
        };
        Some(TokenBatch {
            inputs: window(0),
            targets: window(1),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.num_batches - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

pub fn batch_iter(tokens: &[usize], bptt_len: usize, batch_size: usize) -> Result<BatchIter<'_>> {
    if bptt_len == 0 || batch_size == 0 {
        return Err(Error::Config("bptt_len and batch_size must be positive".into()));
    }
    let required = batch_size * (bptt_len + 1);
    if tokens.len() < required {
        return Err(Error::CorpusTooSmall {
            required,
            actual: tokens.len(),
        });
    }
    let stream_len = tokens.len() / batch_size;
    Ok(BatchIter {
        tokens,
        stream_len,
        bptt_len,
        batch_size,
        num_batches: (stream_len - 1) / bptt_len,
        next: 0,
    })
}

/// A model that consumes one token and predicts the next.
pub trait TokenPredictor {
    fn vocab_size(&self) -> usize;
    fn reset(&mut self);
    /// Log-probabilities of the next token after consuming `token`.
    fn observe(&mut self, token: usize) -> Result<Vector>;
}

/// Mean next-token cross-entropy over `tokens` from a fresh state.
pub fn mean_cross_entropy(model: &mut impl TokenPredictor, tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::CorpusTooSmall {
            required: 2,
            actual: tokens.len(),
        });
    }
    model.reset();
    let mut total = 0.0;
    for pair in tokens.windows(2) {
        let log_probs = model.observe(pair[0])?;
        let next = *log_probs.get(pair[1]).ok_or(Error::TargetOutOfRange {
            target: pair[1],
            classes: log_probs.len(),
        })?;
        total -= next;
    }
    Ok(total / (tokens.len() - 1) as f64)
}

pub fn perplexity(model: &mut impl TokenPredictor, tokens: &[usize]) -> Result<f64> {
    Ok(mean_cross_entropy(model, tokens)?.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    Recall,
    Adding,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall" => Ok(SyntheticKind::Recall),
            "adding" => Ok(SyntheticKind::Adding),
            other => Err(Error::Config(format!("unknown synthetic task `{other}`"))),
        }
    }
}

/// `seq_len` is the full sequence length; `delay` the number of steps
/// between the symbol (or first operand) and the query (second operand).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub seq_len: usize,
    pub delay: usize,
    pub alphabet_size: usize,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Symbol first, `delay` noise steps, then the query.
    pub fn recall(delay: usize, alphabet_size: usize, count: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Recall,
            seq_len: delay + 2,
            delay,
            alphabet_size,
            count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay + 2 > self.seq_len {
            return Err(Error::Config(format!(
                "delay {} needs seq_len ≥ {}, got {}",
                self.delay,
                self.delay + 2,
                self.seq_len
            )));
        }
        if self.kind == SyntheticKind::Recall && self.alphabet_size < 2 {
            return Err(Error::Config("alphabet_size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            SyntheticKind::Recall => self.alphabet_size + 2,
            SyntheticKind::Adding => 2,
        }
    }

    /// Classes for recall, one regression output for adding.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            SyntheticKind::Recall => self.alphabet_size,
            SyntheticKind::Adding => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Real(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vector>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    /// Sample indices in shuffled minibatches; the last batch may be short.
    pub fn batches(&self, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        rng.shuffle(&mut order);
        order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,target,inputs\n");
        let a = self.spec.alphabet_size;
        for (idx, sample) in self.samples.iter().enumerate() {
            let target = match sample.target {
                Target::Class(c) => c.to_string(),
                Target::Real(r) => format!("{r}"),
            };
            let steps: Vec<String> = sample
                .inputs
                .iter()
                .map(|x| match self.spec.kind {
                    SyntheticKind::Recall => {
                        if x[a + 1] != 0.0 {
                            "?".to_string()
                        } else {
                            let sym = x[..a].iter().position(|v| *v != 0.0).unwrap_or(0);
                            if x[a] != 0.0 {
                                format!("*{sym}")
                            } else {
                                sym.to_string()
                            }
                        }
                    }
                    SyntheticKind::Adding => format!("{}:{}", x[0], x[1]),
                })
                .collect();
            let _ = writeln!(out, "{idx},{target},{}", steps.join(" "));
        }
        out
    }
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let mut rng = Rng::new(spec.seed);
    match spec.kind {
        SyntheticKind::Recall => make_recall(spec, &mut rng),
        SyntheticKind::Adding => make_adding(spec, &mut rng),
    }
}

/// Each sequence: optional leading noise, the marked symbol, `delay` noise
/// symbols, then the query step. Inputs are one-hot over the alphabet plus a
/// marker channel and a query channel. Targets are stratified so every
/// symbol is the answer `count / alphabet_size` times (±1).
pub fn make_recall(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticDataset> {
    spec.validate()?;
    let a = spec.alphabet_size;
    let dim = spec.input_dim();
    let mut targets: Vec<usize> = (0..spec.count).map(|i| i % a).collect();
    rng.shuffle(&mut targets);
    let lead = spec.seq_len - spec.delay - 2;
    let samples = targets
        .into_iter()
        .map(|symbol| {
            let mut inputs = Vec::with_capacity(spec.seq_len);
            let noise = |inputs: &mut Vec<Vector>, rng: &mut Rng| {
                inputs.push(Vector::one_hot(dim, rng.below(a)));
            };
            for _ in 0..lead {
                noise(&mut inputs, rng);
            }
            let mut marked = Vector::one_hot(dim, symbol);
            marked[a] = 1.0;
            inputs.push(marked);
            for _ in 0..spec.delay {
                noise(&mut inputs, rng);
            }
            inputs.push(Vector::one_hot(dim, a + 1));
            Sample {
                inputs,
                target: Target::Class(symbol),
            }
        })
        .collect();
    Ok(SyntheticDataset { spec: *spec, samples })
}

/// Values in `[0, 1)` with two marked positions `delay + 1` apart; the
/// target is the sum of the two marked values.
pub fn make_adding(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticDataset> {
    spec.validate()?;
    let samples = (0..spec.count)
        .map(|_| {
            let first = rng.below(spec.seq_len - spec.delay - 1);
            let second = first + spec.delay + 1;
            let mut total = 0.0;
            let inputs = (0..spec.seq_len)
                .map(|t| {
                    let value = rng.next_f64();
                    let marked = t == first || t == second;
                    if marked {
                        total += value;
                    }
                    Vector::from(vec![value, if marked { 1.0 } else { 0.0 }])
                })
                .collect();
            Sample {
                inputs,
                target: Target::Real(total),
            }
        })
        .collect();
    Ok(SyntheticDataset { spec: *spec, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn abab_vocab() {
        let f = write_temp(b"abab");
        let corpus = load_text_corpus(f.path()).unwrap();
        assert_eq!(corpus.vocab.id('a'), 0);
        assert_eq!(corpus.vocab.id('b'), 1);
        assert_eq!(corpus.vocab.size(), 3);
        assert_eq!(corpus.token_ids, vec![0, 1, 0, 1]);
        assert_eq!(corpus.splits.train, 0..3);
    }

    #[test]
    fn unseen_characters_map_to_unknown() {
        let text = "aaaaaaaabz";
        let corpus = Corpus::from_text(text, SplitRatios::default()).unwrap();
        assert_eq!(corpus.splits.valid, 8..9);
        assert_eq!(corpus.valid(), &[corpus.vocab.unknown_id()]);
        assert_eq!(corpus.test(), &[corpus.vocab.unknown_id()]);
        assert_eq!(corpus.vocab.label(corpus.vocab.unknown_id()), "<unk>");
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write_temp("the quick brown fox\njumps over the lazy dog\n".as_bytes());
        assert_eq!(load_text_corpus(f.path()).unwrap(), load_text_corpus(f.path()).unwrap());
    }

    #[test]
    fn load_errors_name_the_path() {
        let f = write_temp(b"");
        let err = load_text_corpus(f.path()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
        assert!(err.to_string().contains(&f.path().display().to_string()));
        let missing = Path::new("/nonexistent/corpus.txt");
        let err = load_text_corpus(missing).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.txt"));
    }

    #[test]
    fn single_stream_single_window() {
        let tokens: Vec<usize> = (0..10).collect();
        let batches: Vec<_> = batch_iter(&tokens, 9, 1).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].inputs[0], (0..9).collect::<Vec<_>>());
        assert_eq!(batches[0].targets[0], (1..10).collect::<Vec<_>>());
    }

    #[test]
    fn streams_reassemble() {
        let tokens: Vec<usize> = (0..103).collect();
        let iter = batch_iter(&tokens, 4, 3).unwrap();
        // 103 / 3 = 34 per stream, (34 - 1) / 4 = 8 windows.
        assert_eq!(iter.num_batches(), 8);
        assert_eq!(iter.tokens_per_epoch(), 3 * 4 * 8);
        let batches: Vec<_> = iter.collect();
        for b in 0..3 {
            let joined: Vec<usize> = batches.iter().flat_map(|x| x.inputs[b].clone()).collect();
            assert_eq!(joined, tokens[b * 34..b * 34 + 32].to_vec());
            let shifted: Vec<usize> = batches.iter().flat_map(|x| x.targets[b].clone()).collect();
            assert_eq!(shifted, tokens[b * 34 + 1..b * 34 + 33].to_vec());
        }
    }

    #[test]
    fn too_small_corpus() {
        let tokens = vec![0usize; 10];
        assert!(matches!(
            batch_iter(&tokens, 4, 3),
            Err(Error::CorpusTooSmall {
                required: 15,
                actual: 10
            })
        ));
    }

    struct Uniform(usize);

    impl TokenPredictor for Uniform {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn reset(&mut self) {}
        fn observe(&mut self, _: usize) -> Result<Vector> {
            Ok(Vector::filled(self.0, -(self.0 as f64).ln()))
        }
    }

    /// Predicts the successor of the alternating corpus with probability 1 − δ.
    struct Alternating;

    impl TokenPredictor for Alternating {
        fn vocab_size(&self) -> usize {
            2
        }
        fn reset(&mut self) {}
        fn observe(&mut self, token: usize) -> Result<Vector> {
            let sure = (1.0 - 1e-9f64).ln();
            let unsure = 1e-9f64.ln();
            Ok(if token == 0 {
                vec![unsure, sure]
            } else {
                vec![sure, unsure]
            }
            .into())
        }
    }

    #[test]
    fn perplexity_reference_models() {
        let tokens: Vec<usize> = (0..500).map(|i| (i * 7) % 13).collect();
        let ppl = perplexity(&mut Uniform(13), &tokens).unwrap();
        assert!((ppl - 13.0).abs() < 0.13);

        let alt: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let ppl = perplexity(&mut Alternating, &alt).unwrap();
        assert!((1.0..1.0 + 1e-6).contains(&ppl));
        assert!(perplexity(&mut Uniform(3), &[1]).is_err());
    }

    fn stats(spec: &SyntheticSpec) -> Vec<usize> {
        let data = make_synthetic(spec).unwrap();
        let mut counts = vec![0; spec.alphabet_size];
        for s in &data.samples {
            if let Target::Class(c) = s.target {
                counts[c] += 1;
            }
        }
        counts
    }

    #[test]
    fn recall_layout() {
        let spec = SyntheticSpec::recall(3, 4, 10, 1);
        let data = make_synthetic(&spec).unwrap();
        let s = &data.samples[0];
        assert_eq!(s.inputs.len(), 5);
        let Target::Class(sym) = s.target else { panic!() };
        assert_eq!(s.inputs[0][sym], 1.0);
        assert_eq!(s.inputs[0][4], 1.0);
        for x in &s.inputs[1..4] {
            assert_eq!(x[4] + x[5], 0.0);
            assert_eq!(x.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(s.inputs[4], Vector::one_hot(6, 5));

        let echo = make_synthetic(&SyntheticSpec::recall(0, 3, 5, 2)).unwrap();
        assert_eq!(echo.samples[0].inputs.len(), 2);
    }

    #[test]
    fn recall_targets_are_balanced() {
        let counts = stats(&SyntheticSpec::recall(10, 2, 1000, 42));
        for c in counts {
            assert!((c as f64 - 500.0).abs() <= 25.0);
        }
        let counts = stats(&SyntheticSpec::recall(5, 8, 10_000, 3));
        // Balanced within 3σ of a multinomial draw, σ = sqrt(n p (1-p)).
        let sigma = (10_000.0f64 * 0.125 * 0.875).sqrt();
        for c in &counts {
            assert!((*c as f64 - 1250.0).abs() <= 3.0 * sigma);
        }
        // Majority-class baseline is therefore 1/8.
        let majority = *counts.iter().max().unwrap() as f64 / 10_000.0;
        let sd = (0.125f64 * 0.875 / 10_000.0).sqrt();
        assert!((majority - 0.125).abs() <= 3.0 * sd);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec::recall(5, 1, 10, 0);
        assert!(spec.validate().is_err());
        spec.alphabet_size = 3;
        spec.seq_len = 6;
        assert!(spec.validate().is_err());
        spec.seq_len = 9;
        let data = make_synthetic(&spec).unwrap();
        // Leading noise shifts the symbol so exactly `delay` steps follow it.
        let Target::Class(sym) = data.samples[0].target else {
            panic!()
        };
        assert_eq!(data.samples[0].inputs[2][spec.alphabet_size], 1.0);
        assert_eq!(data.samples[0].inputs[2][sym], 1.0);
    }

    #[test]
    fn adding_targets() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Adding,
            seq_len: 20,
            delay: 7,
            alphabet_size: 0,
            count: 50,
            seed: 4,
        };
        let data = make_synthetic(&spec).unwrap();
        for s in &data.samples {
            let marked: Vec<usize> = (0..20).filter(|&t| s.inputs[t][1] == 1.0).collect();
            assert_eq!(marked.len(), 2);
            assert_eq!(marked[1] - marked[0], 8);
            let Target::Real(r) = s.target else { panic!() };
            assert_eq!(r, s.inputs[marked[0]][0] + s.inputs[marked[1]][0]);
        }
    }

    #[test]
    fn synthetic_csv() {
        let data = make_synthetic(&SyntheticSpec::recall(2, 3, 4, 9)).unwrap();
        let csv = data.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        let fields: Vec<&str> = lines[1].split(',').collect();
        let steps: Vec<&str> = fields[2].split(' ').collect();
        assert_eq!(steps.len(), 4);
        assert_eq!(steps[0], format!("*{}", fields[1]));
        assert_eq!(steps[3], "?");
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let data = make_synthetic(&SyntheticSpec::recall(2, 3, 25, 9)).unwrap();
        let batches = data.batches(8, &mut Rng::new(1));
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }
}
