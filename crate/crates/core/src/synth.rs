//! Synthetic CQA data with a planted relevance signal.
//!
//! Words are made-up syllable strings, so they survive tokenization and
//! never collide with stopwords. Each word carries a fixed Penn Treebank
//! tag so POS features have something to work with.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_dataset, Comment, Dataset, DatasetFormat, Label, Question, RelatedQuestionSet, RelatedThread, Thread,
    TokenizerConfig,
};
use crate::error::{Error, Result};

/// Which feature family the labels depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Good comments reuse the question's topic words; Bad comments use a
    /// vocabulary the questions never touch.
    #[default]
    Topical,
    /// Questions are drawn from a neutral vocabulary. Good and Bad comments
    /// use two disjoint vocabularies that occur in separate contexts of the
    /// unannotated corpus, so only the comment centroid itself tells them
    /// apart.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub threads: usize,
    pub seed: u64,
    pub signal: Signal,
    pub format: DatasetFormat,
    pub topics: usize,
    pub words_per_topic: usize,
    pub min_comments: usize,
    pub max_comments: usize,
    /// Sentences per vocabulary group in the unannotated corpus.
    pub unannotated_per_group: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            threads: 50,
            seed: 7,
            signal: Signal::Topical,
            format: DatasetFormat::SubtaskA,
            topics: 8,
            words_per_topic: 24,
            min_comments: 5,
            max_comments: 10,
            unannotated_per_group: 300,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_comments < 5 || self.max_comments < self.min_comments {
            return Err(Error::config("comments per thread must satisfy 5 <= min <= max"));
        }
        if self.topics < 2 || self.words_per_topic < 5 {
            return Err(Error::config("need at least 2 topics of 5 words"));
        }
        if self.topics > 100 || self.words_per_topic > 100 {
            return Err(Error::config("at most 100 topics of 100 words"));
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 10] = ["ba", "ko", "ri", "tu", "me", "sa", "lo", "vi", "ne", "du"];
const TAGS: [&str; 6] = ["NN", "NNS", "VB", "VBZ", "JJ", "RB"];
const CATEGORIES: [&str; 5] = ["Travel", "Housing", "Work", "Health", "Leisure"];

fn word(prefix: char, group: usize, index: usize) -> String {
    let mut w = String::new();
    w.push(prefix);
    for d in [group / 10, group % 10, index / 10, index % 10] {
        w.push_str(SYLLABLES[d]);
    }
    w
}

fn tag_of(w: &str) -> &'static str {
    let h = w.bytes().fold(0usize, |a, b| a.wrapping_mul(31).wrapping_add(b as usize));
    TAGS[h % TAGS.len()]
}

struct Vocab {
    topics: Vec<Vec<String>>,
    neutral: Vec<String>,
    bad: Vec<String>,
    good: Vec<String>,
}

impl Vocab {
    fn new(cfg: &SynthConfig) -> Self {
        let n = cfg.words_per_topic;
        Self {
            topics: (0..cfg.topics)
                .map(|t| (0..n).map(|j| word('k', t, j)).collect())
                .collect(),
            neutral: (0..n).map(|j| word('n', 0, j)).collect(),
            bad: (0..n).map(|j| word('s', 0, j)).collect(),
            good: (0..n).map(|j| word('g', 0, j)).collect(),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, pools: &[(&[String], f64)], len: usize) -> Vec<String> {
    let total: f64 = pools.iter().map(|(_, w)| w).sum();
    (0..len)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = pools[pools.len() - 1].0;
            for (p, w) in pools {
                if u < *w {
                    pick = p;
                    break;
                }
                u -= w;
            }
            pick.choose(rng).expect("non-empty pool").clone()
        })
        .collect()
}

fn text(words: &[String], question: bool, rng: &mut ChaCha8Rng) -> String {
    let mut s = words.join(" ");
    if question || rng.gen_bool(0.2) {
        s.push('?');
    } else {
        s.push('.');
    }
    s
}

fn tagged(words: &[String]) -> Vec<(String, String)> {
    words.iter().map(|w| (w.clone(), tag_of(w).to_string())).collect()
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    vocab: Vocab,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn question(&mut self, id: &str, topic: usize) -> Question {
        let v = &self.vocab;
        let pool: Vec<(&[String], f64)> = match self.cfg.signal {
            Signal::Topical => vec![(&v.topics[topic], 0.8), (&v.neutral, 0.2)],
            Signal::Centroid => vec![(&v.neutral, 1.0)],
        };
        let slen = self.rng.gen_range(3..=6);
        let blen = self.rng.gen_range(10..=20);
        let subject = draw(&mut self.rng, &pool, slen);
        let body = draw(&mut self.rng, &pool, blen);
        let mut pos = tagged(&body);
        pos.push(("?".into(), ".".into()));
        Question {
            id: id.to_string(),
            author_id: format!("u{}", self.rng.gen_range(0..40)),
            subject_raw: text(&subject, false, &mut self.rng).trim_end_matches('.').to_string(),
            body_raw: text(&body, true, &mut self.rng),
            category: CATEGORIES[self.rng.gen_range(0..CATEGORIES.len())].to_string(),
            pos_tags: Some(pos),
            subject_tokens: Vec::new(),
            body_tokens: Vec::new(),
        }
    }

    fn comment(&mut self, id: String, rank: u32, q_author: &str, topic: usize, label: Label) -> Comment {
        let v = &self.vocab;
        let other = (topic + 1 + self.rng.gen_range(0..self.cfg.topics - 1)) % self.cfg.topics;
        let pool: Vec<(&[String], f64)> = match (self.cfg.signal, label) {
            (Signal::Topical, Label::Good) => vec![(&v.topics[topic], 0.7), (&v.neutral, 0.3)],
            (Signal::Topical, Label::PotentiallyUseful) => vec![(&v.topics[other], 0.7), (&v.neutral, 0.3)],
            (Signal::Topical, Label::Bad) => vec![(&v.bad, 0.7), (&v.neutral, 0.3)],
            (Signal::Centroid, Label::Good) => vec![(&v.good, 0.7), (&v.neutral, 0.3)],
            (Signal::Centroid, _) => vec![(&v.bad, 0.7), (&v.neutral, 0.3)],
        };
        let len = self.rng.gen_range(6..=15);
        let words = draw(&mut self.rng, &pool, len);
        let author = if self.rng.gen_bool(0.1) {
            q_author.to_string()
        } else {
            format!("u{}", self.rng.gen_range(0..40))
        };
        Comment {
            id,
            author_id: author,
            raw_text: text(&words, false, &mut self.rng),
            rank_in_thread: rank,
            gold_label: Some(label),
            pos_tags: Some(tagged(&words)),
            tokens: Vec::new(),
        }
    }

    fn labels(&mut self, n: usize) -> Vec<Label> {
        // at least one Good and one non-Good per thread
        let mut ls: Vec<Label> = (0..n)
            .map(|i| match i {
                0 => Label::Good,
                1 => Label::Bad,
                _ => match self.rng.gen_range(0..10) {
                    0..=3 => Label::Good,
                    4..=5 => Label::PotentiallyUseful,
                    _ => Label::Bad,
                },
            })
            .collect();
        ls.shuffle(&mut self.rng);
        ls
    }

    fn thread(&mut self, qid: &str, topic: usize) -> Thread {
        let question = self.question(qid, topic);
        let n = self.rng.gen_range(self.cfg.min_comments..=self.cfg.max_comments);
        let labels = self.labels(n);
        let comments = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| self.comment(format!("{qid}_C{}", i + 1), i as u32 + 1, &question.author_id, topic, l))
            .collect();
        Thread { question, comments }
    }

    fn unannotated(&mut self) -> Vec<String> {
        let v = &self.vocab;
        let mut groups: Vec<&[String]> = match self.cfg.signal {
            Signal::Topical => v.topics.iter().map(Vec::as_slice).collect(),
            Signal::Centroid => vec![],
        };
        groups.push(&v.bad);
        if self.cfg.signal == Signal::Centroid {
            groups.push(&v.good);
        }
        let mut lines = Vec::new();
        for g in groups {
            for _ in 0..self.cfg.unannotated_per_group {
                let len = self.rng.gen_range(8..=15);
                let words = draw(&mut self.rng, &[(g, 0.85), (&v.neutral, 0.15)], len);
                lines.push(words.join(" "));
            }
        }
        for _ in 0..self.cfg.unannotated_per_group {
            let len = self.rng.gen_range(8..=15);
            lines.push(draw(&mut self.rng, &[(&v.neutral, 1.0)], len).join(" "));
        }
        lines.shuffle(&mut self.rng);
        lines
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Unannotated forum text, one sentence per line.
    pub unannotated: Vec<String>,
}

/// Generates a dataset and a matching unannotated corpus. Tokens are left
/// empty; call [`Dataset::preprocess`] before extracting features.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut g = Gen {
        cfg,
        vocab: Vocab::new(cfg),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let dataset = match cfg.format {
        DatasetFormat::SubtaskA => Dataset::SubtaskA(
            (0..cfg.threads)
                .map(|i| {
                    let topic = g.rng.gen_range(0..cfg.topics);
                    g.thread(&format!("Q{}", i + 1), topic)
                })
                .collect(),
        ),
        DatasetFormat::SubtaskC => Dataset::SubtaskC(
            (0..cfg.threads)
                .map(|i| {
                    let oid = format!("OQ{}", i + 1);
                    let topic = g.rng.gen_range(0..cfg.topics);
                    let original = g.question(&oid, topic);
                    let related = (1..=10u32)
                        .map(|r| {
                            // better-ranked related threads are more often on topic
                            let on_topic = g.rng.gen_bool(1.0 - r as f64 / 12.0);
                            let t = if on_topic { topic } else { g.rng.gen_range(0..cfg.topics) };
                            let thread = g.thread(&format!("{oid}_R{r}"), t);
                            let labels: BTreeMap<String, Label> = thread
                                .comments
                                .iter()
                                .map(|c| {
                                    let good = t == topic && c.gold_label == Some(Label::Good);
                                    (c.id.clone(), if good { Label::Good } else { Label::Bad })
                                })
                                .collect();
                            RelatedThread {
                                thread,
                                search_rank: r,
                                labels,
                            }
                        })
                        .collect();
                    RelatedQuestionSet {
                        original_question: original,
                        related,
                    }
                })
                .collect(),
        ),
    };
    let unannotated = g.unannotated();
    Ok(SynthData { dataset, unannotated })
}

impl SynthData {
    pub fn preprocessed(mut self) -> Self {
        self.dataset.preprocess(&TokenizerConfig::default());
        self
    }

    /// Writes `<stem>.jsonl` and `<stem>.unannotated.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data = dir.join(format!("{stem}.jsonl"));
        let text = dir.join(format!("{stem}.unannotated.txt"));
        save_dataset(&data, &self.dataset)?;
        let mut body = self.unannotated.join("\n");
        body.push('\n');
        fs::write(&text, body).map_err(|e| Error::io(&text, e))?;
        Ok((data, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        let Dataset::SubtaskA(threads) = &a.dataset else { panic!() };
        assert_eq!(threads.len(), 50);
        assert!(threads.iter().all(|t| t.comments.len() >= 5));
        let b = generate(&cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        crate::corpus::write_dataset(&mut x, &a.dataset).unwrap();
        crate::corpus::write_dataset(&mut y, &b.dataset).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.unannotated, b.unannotated);
    }

    #[test]
    fn words_survive_preprocessing() {
        let d = generate(&SynthConfig { threads: 3, ..Default::default() }).unwrap().preprocessed();
        let Dataset::SubtaskA(threads) = &d.dataset else { panic!() };
        for t in threads {
            assert_eq!(t.question.body_tokens.len(), t.question.pos_tags.as_ref().unwrap().len());
            for c in &t.comments {
                assert_eq!(c.tokens.len(), c.pos_tags.as_ref().unwrap().len());
            }
        }
    }

    #[test]
    fn subtask_c_shape() {
        let cfg = SynthConfig {
            threads: 4,
            format: DatasetFormat::SubtaskC,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        let Dataset::SubtaskC(sets) = &d.dataset else { panic!() };
        assert_eq!(sets.len(), 4);
        assert!(sets.iter().all(|s| s.related.len() == 10));
    }
}
