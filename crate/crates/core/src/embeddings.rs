//! Skip-gram word embeddings trained with negative sampling, centroid and
//! cosine helpers, and the word2vec text/binary formats.

use std::cell::Cell;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Words kept after the frequency cutoff, indexed by descending frequency
/// (ties broken lexicographically).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from token lists, keeping words seen at least
    /// `min_count` times.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: u64) -> Result<Self> {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for w in sentence {
                *freq.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        if kept.is_empty() {
            return Err(Error::config(format!(
                "vocabulary is empty after applying min_count {min_count}"
            )));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words: Vec<String> = kept.iter().map(|(w, _)| w.to_string()).collect();
        let counts = kept.iter().map(|&(_, c)| c).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self {
            words,
            counts,
            index,
            min_count,
        })
    }

    /// Vocabulary for vectors read from disk, where frequencies are unknown.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self {
            counts: vec![0; words.len()],
            words,
            index,
            min_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    /// Negative samples per positive pair.
    pub negative_samples: usize,
    pub epochs: usize,
    pub initial_learning_rate: f32,
    pub seed: u64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    /// Worker threads. 1 gives bit-reproducible training; more threads
    /// update the shared matrices without locks and are not reproducible.
    pub threads: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            min_count: 5,
            negative_samples: 5,
            epochs: 5,
            initial_learning_rate: 0.025,
            seed: 1,
            subsample: 0.0,
            threads: 1,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("embedding dim must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::config("embedding window must be >= 1"));
        }
        if self.negative_samples == 0 {
            return Err(Error::config("negative_samples must be >= 1"));
        }
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate.is_finite()) {
            return Err(Error::config("initial_learning_rate must be positive"));
        }
        if !(self.subsample >= 0.0 && self.subsample.is_finite()) {
            return Err(Error::config("subsample must be >= 0"));
        }
        Ok(())
    }

    /// Short stamp used in output file names, e.g. `s100_w5_f1_k3`.
    pub fn stamp(&self) -> String {
        format!(
            "s{}_w{}_f{}_k{}",
            self.dim, self.window, self.min_count, self.negative_samples
        )
    }
}

/// Dense word vectors plus the vocabulary they are indexed by.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    dim: usize,
    /// Row-major V x dim word vectors.
    input: Vec<f32>,
    /// Context vectors, only present on freshly trained models.
    output: Option<Vec<f32>>,
    config: Option<EmbeddingConfig>,
}

/// Mean of in-vocabulary word vectors; `degenerate` when no token was
/// found.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

impl EmbeddingModel {
    pub fn from_parts(vocab: Vocabulary, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim must be >= 1"));
        }
        if vectors.len() != vocab.len() * dim {
            return Err(Error::format(format!(
                "expected {} x {} values, got {}",
                vocab.len(),
                dim,
                vectors.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| !v.is_finite()) {
            return Err(Error::format(format!("non-finite vector value {v}")));
        }
        Ok(Self {
            vocab,
            dim,
            input: vectors,
            output: None,
            config: None,
        })
    }

    /// Random initialization used before training: input vectors uniform in
    /// `[-0.5/dim, 0.5/dim)`, context vectors zero.
    pub fn initialize(vocab: Vocabulary, config: &EmbeddingConfig) -> Self {
        let dim = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input = (0..vocab.len() * dim)
            .map(|_| (rng.gen::<f32>() - 0.5) / dim as f32)
            .collect();
        let output = Some(vec![0.0; vocab.len() * dim]);
        Self {
            vocab,
            dim,
            input,
            output,
            config: Some(config.clone()),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn config(&self) -> Option<&EmbeddingConfig> {
        self.config.as_ref()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.input
    }

    pub fn context_vectors(&self) -> Option<&[f32]> {
        self.output.as_deref()
    }

    pub fn vector_at(&self, index: usize) -> &[f32] {
        &self.input[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.vocab.index_of(word).map(|i| self.vector_at(i))
    }

    /// Word vector widened to f64.
    pub fn vector_f64(&self, word: &str) -> Option<Vec<f64>> {
        self.vector(word).map(|v| v.iter().map(|&x| x as f64).collect())
    }

    /// Arithmetic mean of the vectors of in-vocabulary tokens. Unknown
    /// tokens are skipped; if none is known the zero vector is returned
    /// with `degenerate` set.
    pub fn centroid<S: AsRef<str>>(&self, tokens: &[S]) -> Centroid {
        let mut sum = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vector(t.as_ref()) {
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += x as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Centroid {
                vector: sum,
                degenerate: true,
            };
        }
        for s in &mut sum {
            *s /= n as f64;
        }
        Centroid {
            vector: sum,
            degenerate: false,
        }
    }

    /// Drops the context vectors, keeping only what features need.
    pub fn into_inference(mut self) -> Self {
        self.output = None;
        self
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(file).map_err(|e| Error::io(path, e))
    }

    /// Writes the `V dim` header followed by one `word f1 ... fdim` line per
    /// word.
    pub fn write_text(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            w.write_all(word.as_bytes())?;
            for x in self.vector_at(i) {
                write!(w, " {x}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(BufReader::new(file))
    }

    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("missing header"))?
            .map_err(|e| Error::format(e.to_string()))?;
        let (n_words, dim) = parse_header(&header)?;
        let mut words = Vec::with_capacity(n_words);
        let mut vectors = Vec::with_capacity(n_words * dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if words.len() == n_words {
                return Err(Error::format(format!(
                    "header declares {n_words} words but more rows follow"
                )));
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap().to_string();
            let before = vectors.len();
            for f in fields {
                let x: f32 = f.parse().map_err(|_| {
                    Error::format(format!("row {}: bad value {f:?}", i + 2))
                })?;
                vectors.push(x);
            }
            if vectors.len() - before != dim {
                return Err(Error::format(format!(
                    "row {}: expected {dim} values, got {}",
                    i + 2,
                    vectors.len() - before
                )));
            }
            words.push(word);
        }
        if words.len() != n_words {
            return Err(Error::format(format!(
                "header declares {n_words} words but {} rows follow",
                words.len()
            )));
        }
        Self::from_parts(Vocabulary::from_words(words)?, dim, vectors)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(file).map_err(|e| Error::io(path, e))
    }

    /// Writes the `V dim` header, then for each word its bytes, one space
    /// and `dim` little-endian f32 values.
    pub fn write_binary(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            w.write_all(word.as_bytes())?;
            w.write_all(b" ")?;
            for x in self.vector_at(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file), None)
    }

    /// Reads the binary format. Newlines between entries, as written by the
    /// original word2vec tool, are accepted. `limit` keeps only the first
    /// `limit` words.
    pub fn read_binary(mut reader: impl BufRead, limit: Option<usize>) -> Result<Self> {
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::format(e.to_string()))?;
        let (declared, dim) = parse_header(&header)?;
        let n_words = limit.map_or(declared, |l| l.min(declared));
        let mut words = Vec::with_capacity(n_words);
        let mut vectors = Vec::with_capacity(n_words * dim);
        let mut word_buf = Vec::new();
        let mut vec_buf = vec![0u8; dim * 4];
        for i in 0..n_words {
            word_buf.clear();
            // skip separators left over from the previous entry
            loop {
                let buf = reader.fill_buf().map_err(|e| Error::format(e.to_string()))?;
                match buf.first() {
                    Some(b'\n') | Some(b'\r') => reader.consume(1),
                    Some(_) => break,
                    None => {
                        return Err(Error::format(format!(
                            "header declares {declared} words but file ends after {i}"
                        )))
                    }
                }
            }
            reader
                .read_until(b' ', &mut word_buf)
                .map_err(|e| Error::format(e.to_string()))?;
            if word_buf.pop() != Some(b' ') {
                return Err(Error::format(format!("entry {i}: truncated word")));
            }
            let word = String::from_utf8_lossy(&word_buf).into_owned();
            reader
                .read_exact(&mut vec_buf)
                .map_err(|_| Error::format(format!("entry {i} ({word}): truncated vector")))?;
            vectors.extend(
                vec_buf
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            words.push(word);
        }
        Self::from_parts(Vocabulary::from_words(words)?, dim, vectors)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let parse = |s: Option<&str>| -> Result<usize> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("bad header {:?}", line.trim_end())))
    };
    let n = parse(it.next())?;
    let dim = parse(it.next())?;
    if dim == 0 || it.next().is_some() {
        return Err(Error::format(format!("bad header {:?}", line.trim_end())));
    }
    Ok((n, dim))
}

/// `u.v / (|u| |v|)`, or 0 when either vector has zero norm.
///
/// Panics if the dimensions differ.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different dimensions");
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// `1 - cosine_similarity(u, v)`, or 1 when either vector has zero norm.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    1.0 - cosine_similarity(u, v)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SGNS objective for one center word, one observed context and a set of
/// negative contexts: `log s(u.v) + sum log s(-u.v')`.
pub fn sgns_objective(center: &[f64], context: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let mut obj = sigmoid(dot(center, context)).ln();
    for n in negatives {
        obj += sigmoid(-dot(center, n)).ln();
    }
    obj
}

/// Gradient of [`sgns_objective`] with respect to each of its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradient {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn sgns_gradient(center: &[f64], context: &[f64], negatives: &[Vec<f64>]) -> SgnsGradient {
    let dim = center.len();
    let mut g_center = vec![0.0; dim];
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|n| (n.as_slice(), 0.0)));
    let mut g_targets = Vec::new();
    for (t, label) in targets {
        let g = label - sigmoid(dot(center, t));
        for (gc, &x) in g_center.iter_mut().zip(t) {
            *gc += g * x;
        }
        g_targets.push(center.iter().map(|&c| g * c).collect::<Vec<_>>());
    }
    let context_grad = g_targets.remove(0);
    SgnsGradient {
        center: g_center,
        context: context_grad,
        negatives: g_targets,
    }
}

/// Element storage shared by the single-threaded and lock-free training
/// paths.
trait Store {
    fn load(&self, i: usize) -> f32;
    fn store(&self, i: usize, v: f32);
}

impl Store for [Cell<f32>] {
    #[inline]
    fn load(&self, i: usize) -> f32 {
        self[i].get()
    }
    #[inline]
    fn store(&self, i: usize, v: f32) {
        self[i].set(v)
    }
}

impl Store for [AtomicU32] {
    #[inline]
    fn load(&self, i: usize) -> f32 {
        f32::from_bits(self[i].load(Ordering::Relaxed))
    }
    #[inline]
    fn store(&self, i: usize, v: f32) {
        self[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

/// One ascent step on the SGNS objective for `center` against the labelled
/// `targets` (1 for the observed context, 0 for negatives).
fn sgns_step<S: Store + ?Sized>(
    input: &S,
    output: &S,
    dim: usize,
    center: usize,
    targets: &[(usize, f32)],
    lr: f32,
    center_grad: &mut [f32],
) {
    let c_off = center * dim;
    center_grad.fill(0.0);
    for &(t, label) in targets {
        let t_off = t * dim;
        let mut d = 0.0f32;
        for k in 0..dim {
            d += input.load(c_off + k) * output.load(t_off + k);
        }
        let g = (label - 1.0 / (1.0 + (-d).exp())) * lr;
        for (k, cg) in center_grad.iter_mut().enumerate() {
            let o = output.load(t_off + k);
            *cg += g * o;
            output.store(t_off + k, o + g * input.load(c_off + k));
        }
    }
    for (k, cg) in center_grad.iter().enumerate() {
        input.store(c_off + k, input.load(c_off + k) + cg);
    }
}

/// Draws words from the unigram distribution raised to the 3/4 power.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    pub fn probability(&self, index: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let lo = if index == 0 { 0.0 } else { self.cumulative[index - 1] };
        (self.cumulative[index] - lo) / total
    }
}

fn structure_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 2 * chunk as u64);
    rng
}

fn negative_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + 2 * chunk as u64);
    rng
}

/// Per-sentence draws that decide which positions survive subsampling and
/// how wide each position's window is.
struct SentencePlan {
    kept: Vec<u32>,
    spans: Vec<usize>,
}

impl SentencePlan {
    fn new() -> Self {
        Self {
            kept: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng, sentence: &[u32], window: usize, keep: Option<&[f64]>) {
        self.kept.clear();
        self.spans.clear();
        for &w in sentence {
            if let Some(keep) = keep {
                if keep[w as usize] < rng.gen::<f64>() {
                    continue;
                }
            }
            self.kept.push(w);
        }
        for _ in 0..self.kept.len() {
            self.spans.push(rng.gen_range(1..=window));
        }
    }

    fn pair_count(&self) -> u64 {
        let n = self.kept.len();
        (0..n)
            .map(|i| {
                let b = self.spans[i];
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(n - 1);
                (hi - lo) as u64
            })
            .sum()
    }
}

struct Trainer<'a> {
    sentences: &'a [Vec<u32>],
    config: &'a EmbeddingConfig,
    keep: Option<Vec<f64>>,
    sampler: NegativeSampler,
}

impl Trainer<'_> {
    fn count_pairs(&self, chunk: usize, range: std::ops::Range<usize>) -> u64 {
        let mut rng = structure_rng(self.config.seed, chunk);
        let mut plan = SentencePlan::new();
        let mut total = 0;
        for _ in 0..self.config.epochs {
            for s in &self.sentences[range.clone()] {
                plan.draw(&mut rng, s, self.config.window, self.keep.as_deref());
                total += plan.pair_count();
            }
        }
        total
    }

    fn run_chunk<S: Store + ?Sized>(
        &self,
        chunk: usize,
        range: std::ops::Range<usize>,
        input: &S,
        output: &S,
        done: &AtomicU64,
        total: u64,
    ) {
        let cfg = self.config;
        let dim = cfg.dim;
        let mut rng = structure_rng(cfg.seed, chunk);
        let mut neg_rng = negative_rng(cfg.seed, chunk);
        let mut plan = SentencePlan::new();
        let mut targets = Vec::with_capacity(cfg.negative_samples + 1);
        let mut grad = vec![0.0f32; dim];
        let floor = cfg.initial_learning_rate * 1e-4;
        for _ in 0..cfg.epochs {
            for s in &self.sentences[range.clone()] {
                plan.draw(&mut rng, s, cfg.window, self.keep.as_deref());
                let n = plan.kept.len();
                for i in 0..n {
                    let b = plan.spans[i];
                    let lo = i.saturating_sub(b);
                    let hi = (i + b).min(n - 1);
                    let center = plan.kept[i] as usize;
                    for j in lo..=hi {
                        if j == i {
                            continue;
                        }
                        let context = plan.kept[j] as usize;
                        targets.clear();
                        targets.push((context, 1.0));
                        for _ in 0..cfg.negative_samples {
                            let neg = self.sampler.sample(&mut neg_rng);
                            if neg != context {
                                targets.push((neg, 0.0));
                            }
                        }
                        let progress = done.fetch_add(1, Ordering::Relaxed) as f64 / total as f64;
                        let lr = (cfg.initial_learning_rate * (1.0 - progress) as f32).max(floor);
                        sgns_step(input, output, dim, center, &targets, lr, &mut grad);
                    }
                }
            }
        }
    }
}

/// Worker-thread ceiling from the `CQA_RANK_THREADS` environment variable.
pub fn thread_cap() -> Option<usize> {
    std::env::var("CQA_RANK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Trains skip-gram embeddings with negative sampling.
///
/// Each center/context pair inside a window whose radius is drawn
/// uniformly from `1..=window` gets one SGD step; the learning rate decays
/// linearly over the total number of pairs down to `1e-4` of its initial
/// value. Single-threaded training is bit-reproducible for a given seed.
pub fn train_skipgram<S: AsRef<str>>(corpus: &[Vec<S>], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let vocab = Vocabulary::build(corpus, config.min_count)?;
    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|w| vocab.index_of(w.as_ref()).map(|i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() > 1)
        .collect();
    let mut model = EmbeddingModel::initialize(vocab, config);
    if config.epochs == 0 || sentences.is_empty() {
        return Ok(model);
    }

    let counts = model.vocab.counts();
    let keep = (config.subsample > 0.0).then(|| {
        let total: u64 = counts.iter().sum();
        let threshold = config.subsample * total as f64;
        counts
            .iter()
            .map(|&c| ((c as f64 / threshold).sqrt() + 1.0) * threshold / c as f64)
            .collect()
    });
    let trainer = Trainer {
        sentences: &sentences,
        config,
        keep,
        sampler: NegativeSampler::new(counts),
    };

    let threads = config
        .threads
        .max(1)
        .min(thread_cap().unwrap_or(usize::MAX))
        .min(sentences.len());
    let chunk_len = sentences.len().div_ceil(threads);
    let ranges: Vec<_> = (0..threads)
        .map(|t| (t * chunk_len)..((t + 1) * chunk_len).min(sentences.len()))
        .collect();
    let total: u64 = ranges
        .iter()
        .enumerate()
        .map(|(t, r)| trainer.count_pairs(t, r.clone()))
        .sum();
    if total == 0 {
        return Ok(model);
    }
    let done = AtomicU64::new(0);
    let output = model.output.as_mut().expect("fresh model has context vectors");

    if threads == 1 {
        let input = Cell::from_mut(model.input.as_mut_slice()).as_slice_of_cells();
        let output = Cell::from_mut(output.as_mut_slice()).as_slice_of_cells();
        trainer.run_chunk(0, ranges[0].clone(), input, output, &done, total);
    } else {
        let input: Vec<AtomicU32> = model.input.iter().map(|x| AtomicU32::new(x.to_bits())).collect();
        let out: Vec<AtomicU32> = output.iter().map(|x| AtomicU32::new(x.to_bits())).collect();
        std::thread::scope(|scope| {
            for (t, r) in ranges.iter().enumerate() {
                let (trainer, input, out, done) = (&trainer, &input[..], &out[..], &done);
                let r = r.clone();
                scope.spawn(move || trainer.run_chunk(t, r, input, out, done, total));
            }
        });
        model.input = input.into_iter().map(|a| f32::from_bits(a.into_inner())).collect();
        *output = out.into_iter().map(|a| f32::from_bits(a.into_inner())).collect();
    }

    if model.input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "embedding training diverged (non-finite vectors); lower the learning rate".into(),
        ));
    }
    Ok(model)
}
