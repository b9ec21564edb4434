//! Latent Dirichlet allocation trained by collapsed Gibbs sampling, topic
//! inference for unseen documents and topic-distribution similarity.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::embeddings::cosine_similarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub topics: usize,
    /// Document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub infer_iterations: usize,
    pub seed: u64,
    /// Record the training log-likelihood every this many sweeps (0 = never).
    pub loglik_every: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 100,
            alpha: None,
            beta: 0.01,
            iterations: 500,
            infer_iterations: 50,
            seed: 1,
            loglik_every: 10,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// Topic-word counts from the final training sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    topics: usize,
    alpha: f64,
    beta: f64,
    /// Row-major topics x vocab counts.
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

/// Per-document topic proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution {
    pub probs: Vec<f64>,
    /// No token of the document was in the model vocabulary.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LdaTrace {
    /// `(sweep, log p(w, z))` pairs.
    pub log_likelihood: Vec<(usize, f64)>,
}

struct Sampler {
    topics: usize,
    vocab: usize,
    alpha: f64,
    beta: f64,
    docs: Vec<Vec<u32>>,
    z: Vec<Vec<u16>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
}

impl Sampler {
    fn sweep(&mut self, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let k = self.topics;
        let vbeta = self.vocab as f64 * self.beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.z[d][i] as usize;
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * self.vocab + w] -= 1;
                self.topic_totals[old] -= 1;
                let mut total = 0.0;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (self.doc_topic[d * k + t] as f64 + self.alpha)
                        * (self.topic_word[t * self.vocab + w] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + vbeta);
                    total += *wt;
                }
                let new = draw(rng, weights, total);
                self.z[d][i] = new as u16;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * self.vocab + w] += 1;
                self.topic_totals[new] += 1;
            }
        }
    }

    /// Collapsed joint log-likelihood `log p(w | z) + log p(z)`.
    fn log_likelihood(&self) -> f64 {
        let (k, v) = (self.topics, self.vocab);
        let mut ll = k as f64 * (ln_gamma(v as f64 * self.beta) - v as f64 * ln_gamma(self.beta));
        for t in 0..k {
            for w in 0..v {
                ll += ln_gamma(self.topic_word[t * v + w] as f64 + self.beta);
            }
            ll -= ln_gamma(self.topic_totals[t] as f64 + v as f64 * self.beta);
        }
        let n_docs = self.docs.len() as f64;
        ll += n_docs * (ln_gamma(k as f64 * self.alpha) - k as f64 * ln_gamma(self.alpha));
        for (d, doc) in self.docs.iter().enumerate() {
            for t in 0..k {
                ll += ln_gamma(self.doc_topic[d * k + t] as f64 + self.alpha);
            }
            ll -= ln_gamma(doc.len() as f64 + k as f64 * self.alpha);
        }
        ll
    }
}

fn draw(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (t, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return t;
        }
    }
    weights.len() - 1
}

/// Trains LDA with collapsed Gibbs sampling, sampling each token from
/// `(n_dk + alpha)(n_kw + beta) / (n_k + V beta)`.
pub fn train_lda<S: AsRef<str>>(docs: &[Vec<S>], config: &LdaConfig) -> Result<(LdaModel, LdaTrace)> {
    let k = config.topics;
    if k < 2 {
        return Err(Error::config("LDA needs at least 2 topics"));
    }
    if k > u16::MAX as usize {
        return Err(Error::config("LDA topic count too large"));
    }
    let alpha = config.alpha();
    if !(alpha > 0.0 && config.beta > 0.0) {
        return Err(Error::config("LDA alpha and beta must be positive"));
    }
    let mut words = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let encoded: Vec<Vec<u32>> = docs
        .iter()
        .map(|doc| {
            doc.iter()
                .map(|w| {
                    let w = w.as_ref();
                    let next = words.len();
                    *index.entry(w.to_string()).or_insert_with(|| {
                        words.push(w.to_string());
                        next
                    }) as u32
                })
                .collect()
        })
        .collect();
    if words.is_empty() {
        return Err(Error::config("LDA training corpus has no tokens"));
    }
    let v = words.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler {
        topics: k,
        vocab: v,
        alpha,
        beta: config.beta,
        z: Vec::with_capacity(encoded.len()),
        doc_topic: vec![0; encoded.len() * k],
        topic_word: vec![0; k * v],
        topic_totals: vec![0; k],
        docs: Vec::new(),
    };
    for (d, doc) in encoded.iter().enumerate() {
        let zs: Vec<u16> = doc
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                sampler.doc_topic[d * k + t] += 1;
                sampler.topic_word[t * v + w as usize] += 1;
                sampler.topic_totals[t] += 1;
                t as u16
            })
            .collect();
        sampler.z.push(zs);
    }
    sampler.docs = encoded;

    let mut trace = LdaTrace::default();
    let mut weights = vec![0.0; k];
    for sweep in 1..=config.iterations {
        sampler.sweep(&mut rng, &mut weights);
        if config.loglik_every > 0 && sweep % config.loglik_every == 0 {
            let ll = sampler.log_likelihood();
            if !ll.is_finite() {
                return Err(Error::Numerical(format!("LDA log-likelihood not finite at sweep {sweep}")));
            }
            trace.log_likelihood.push((sweep, ll));
        }
    }

    let model = LdaModel {
        topics: k,
        alpha,
        beta: config.beta,
        topic_word: sampler.topic_word,
        topic_totals: sampler.topic_totals,
        words,
        index,
    };
    debug_assert!(model.counts_consistent());
    Ok((model, trace))
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn topic_word_count(&self, topic: usize, word: &str) -> Option<u32> {
        self.index
            .get(word)
            .map(|&w| self.topic_word[topic * self.words.len() + w])
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    /// `topic_totals[k]` equals the row sum of `topic_word` for every topic.
    pub fn counts_consistent(&self) -> bool {
        let v = self.words.len();
        (0..self.topics).all(|t| {
            self.topic_word[t * v..(t + 1) * v]
                .iter()
                .map(|&c| c as u64)
                .sum::<u64>()
                == self.topic_totals[t]
        })
    }

    /// Gibbs-samples topic assignments for a new document with the
    /// topic-word counts held fixed, and averages
    /// `(n_dk + alpha) / (n_d + K alpha)` over the second half of the
    /// sweeps. Documents without known words get the uniform distribution.
    pub fn infer<S: AsRef<str>>(&self, tokens: &[S], iterations: usize, seed: u64) -> TopicDistribution {
        let k = self.topics;
        let v = self.words.len();
        let doc: Vec<usize> = tokens
            .iter()
            .filter_map(|t| self.index.get(t.as_ref()).copied())
            .collect();
        if doc.is_empty() {
            return TopicDistribution {
                probs: vec![1.0 / k as f64; k],
                degenerate: true,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = doc
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let vbeta = v as f64 * self.beta;
        let norm = doc.len() as f64 + k as f64 * self.alpha;
        let smoothed = |counts: &[u32]| -> Vec<f64> {
            counts
                .iter()
                .map(|&c| (c as f64 + self.alpha) / norm)
                .collect()
        };
        let burn_in = iterations / 2;
        let mut acc = vec![0.0; k];
        let mut samples = 0usize;
        let mut weights = vec![0.0; k];
        for sweep in 0..iterations {
            for (i, &w) in doc.iter().enumerate() {
                counts[z[i]] -= 1;
                let mut total = 0.0;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (counts[t] as f64 + self.alpha)
                        * (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + vbeta);
                    total += *wt;
                }
                let t = draw(&mut rng, &weights, total);
                z[i] = t;
                counts[t] += 1;
            }
            if sweep >= burn_in {
                for (a, p) in acc.iter_mut().zip(smoothed(&counts)) {
                    *a += p;
                }
                samples += 1;
            }
        }
        let mut probs = if samples == 0 {
            smoothed(&counts)
        } else {
            acc.iter().map(|a| a / samples as f64).collect()
        };
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        TopicDistribution {
            probs,
            degenerate: false,
        }
    }

    /// Saves the count matrix to `path` (header `K V alpha beta`, then K rows
    /// of V counts) and the vocabulary, one word per line, to
    /// [`LdaModel::vocab_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_counts(file).map_err(|e| Error::io(path, e))?;
        let vpath = Self::vocab_path(path);
        let mut vocab = String::new();
        for w in &self.words {
            vocab.push_str(w);
            vocab.push('\n');
        }
        fs::write(&vpath, vocab).map_err(|e| Error::io(&vpath, e))
    }

    pub fn vocab_path(model_path: &Path) -> PathBuf {
        let mut s = model_path.as_os_str().to_owned();
        s.push(".vocab");
        PathBuf::from(s)
    }

    pub fn write_counts(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        let v = self.words.len();
        writeln!(w, "{} {} {} {}", self.topics, v, self.alpha, self.beta)?;
        for t in 0..self.topics {
            let row = &self.topic_word[t * v..(t + 1) * v];
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{c}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let vpath = Self::vocab_path(path);
        let vocab = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        let words = vocab.lines().map(String::from).collect();
        Self::read_counts(BufReader::new(file), words)
    }

    pub fn read_counts(reader: impl BufRead, words: Vec<String>) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("LDA model: missing header"))?
            .map_err(|e| Error::format(e.to_string()))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::format(format!("LDA model: bad header {header:?}"));
        if f.len() != 4 {
            return Err(bad());
        }
        let k: usize = f[0].parse().map_err(|_| bad())?;
        let v: usize = f[1].parse().map_err(|_| bad())?;
        let alpha: f64 = f[2].parse().map_err(|_| bad())?;
        let beta: f64 = f[3].parse().map_err(|_| bad())?;
        if k < 2 || alpha.is_nan() || alpha <= 0.0 || beta.is_nan() || beta <= 0.0 {
            return Err(bad());
        }
        if words.len() != v {
            return Err(Error::format(format!(
                "LDA model: header says V = {v} but vocabulary has {} words",
                words.len()
            )));
        }
        let mut topic_word = Vec::with_capacity(k * v);
        let mut rows = 0;
        for line in lines {
            let line = line.map_err(|e| Error::format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = topic_word.len();
            for c in line.split_whitespace() {
                topic_word.push(
                    c.parse::<u32>()
                        .map_err(|_| Error::format(format!("LDA model: bad count {c:?}")))?,
                );
            }
            if topic_word.len() - before != v {
                return Err(Error::format(format!("LDA model: row {rows} does not have {v} counts")));
            }
            rows += 1;
        }
        if rows != k {
            return Err(Error::format(format!("LDA model: expected {k} rows, found {rows}")));
        }
        let topic_totals = (0..k)
            .map(|t| topic_word[t * v..(t + 1) * v].iter().map(|&c| c as u64).sum())
            .collect();
        let mut index = HashMap::with_capacity(v);
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format(format!("LDA model: duplicate word {w:?}")));
            }
        }
        Ok(Self {
            topics: k,
            alpha,
            beta,
            topic_word,
            topic_totals,
            words,
            index,
        })
    }
}

/// Cosine similarity between two topic distributions.
pub fn topic_similarity(p: &TopicDistribution, q: &TopicDistribution) -> f64 {
    cosine_similarity(&p.probs, &q.probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> TopicDistribution {
        TopicDistribution {
            probs: p.to_vec(),
            degenerate: false,
        }
    }

    #[test]
    fn similarity_examples() {
        let p = dist(&[0.3, 0.7]);
        assert!((topic_similarity(&p, &p) - 1.0).abs() < 1e-12);
        assert_eq!(topic_similarity(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])), 0.0);
        let s = topic_similarity(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0]));
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    fn cfg(iterations: usize) -> LdaConfig {
        LdaConfig {
            topics: 2,
            iterations,
            infer_iterations: 20,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(train_lda(&empty, &cfg(5)), Err(Error::Config(_))));
        assert!(matches!(train_lda(&[Vec::<String>::new()], &cfg(5)), Err(Error::Config(_))));
        let one = LdaConfig { topics: 1, ..cfg(5) };
        assert!(matches!(train_lda(&[vec!["a"]], &one), Err(Error::Config(_))));
    }

    #[test]
    fn identical_one_word_docs() {
        let docs = vec![vec!["x"]; 10];
        let (m, _) = train_lda(&docs, &cfg(20)).unwrap();
        assert!(m.counts_consistent());
        let d = m.infer(&["x"], 10, 1);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_keeps_random_init() {
        let docs = vec![vec!["a", "b", "c"], vec!["c", "d"]];
        let (m, trace) = train_lda(&docs, &cfg(0)).unwrap();
        assert!(trace.log_likelihood.is_empty());
        assert_eq!(m.topic_totals().iter().sum::<u64>(), 5);
        assert!(m.counts_consistent());
        for iters in [0, 1, 7] {
            let d = m.infer(&["a", "d"], iters, 2);
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn empty_document_is_uniform() {
        let (m, _) = train_lda(&[vec!["a", "b"]], &cfg(2)).unwrap();
        let d = m.infer::<&str>(&[], 10, 0);
        assert!(d.degenerate);
        assert_eq!(d.probs, [0.5, 0.5]);
        assert!(m.infer(&["zzz"], 10, 0).degenerate);
    }

    #[test]
    fn deterministic_for_seed() {
        let docs = vec![vec!["a", "b", "a"], vec!["c", "d", "c"], vec!["a", "c"]];
        let (a, ta) = train_lda(&docs, &cfg(30)).unwrap();
        let (b, tb) = train_lda(&docs, &cfg(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.infer(&["a", "c"], 10, 4), b.infer(&["a", "c"], 10, 4));
    }

    #[test]
    fn model_file_round_trip() {
        let docs = vec![vec!["a", "b", "a"], vec!["c", "d", "c"]];
        let (m, _) = train_lda(&docs, &cfg(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lda.model");
        m.save(&p).unwrap();
        let back = LdaModel::load(&p).unwrap();
        assert_eq!(back, m);
        let header = fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("2 4 25 0.01\n"));
        assert!(LdaModel::read_counts("2 2 1 1\n1 2\n".as_bytes(), vec!["a".into(), "b".into()]).is_err());
    }
}
