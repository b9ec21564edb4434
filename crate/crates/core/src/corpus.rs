//! Forum thread data model, JSONL ingestion and the text preprocessing
//! pipeline.
//!
//! Preprocessing runs four fixed stages:
//!
//! 1. placeholder replacement (URLs, then numbers, then images, then
//!    emoticons),
//! 2. tokenization into maximal runs of `[A-Za-z_]`,
//! 3. lowercasing,
//! 4. stopword removal.
//!
//! The patterns used in stage 1 are:
//!
//! | kind     | pattern                                                                   |
//! |----------|---------------------------------------------------------------------------|
//! | URL      | `[A-Za-z][A-Za-z0-9+.-]*://\S+` or `www\.\S+` (case-insensitive)           |
//! | number   | `[0-9]+(\.[0-9]+)?`                                                       |
//! | image    | `<img ...>`, `[img]...[/img]`, or a filename ending in jpg/jpeg/png/gif/bmp/webp |
//! | emoticon | one of [`EMOTICONS`]                                                      |
//!
//! Each match is replaced by its placeholder surrounded by single spaces so
//! it always forms a token of its own.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comment relevance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Good,
    PotentiallyUseful,
    Bad,
}

impl Label {
    /// Binary view used for ranking and classification: only `Good` is
    /// relevant.
    pub fn is_good(self) -> bool {
        self == Label::Good
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    #[serde(rename = "cid")]
    pub id: String,
    #[serde(rename = "author")]
    pub author_id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    #[serde(rename = "rank")]
    pub rank_in_thread: u32,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Label>,
    #[serde(rename = "pos", default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<(String, String)>>,
    #[serde(skip)]
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    #[serde(rename = "qid")]
    pub id: String,
    #[serde(rename = "qauthor")]
    pub author_id: String,
    #[serde(rename = "subject")]
    pub subject_raw: String,
    #[serde(rename = "body")]
    pub body_raw: String,
    pub category: String,
    /// POS annotations of the question body.
    #[serde(rename = "qpos", default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<(String, String)>>,
    #[serde(skip)]
    pub subject_tokens: Vec<String>,
    #[serde(skip)]
    pub body_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    #[serde(flatten)]
    pub question: Question,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedThread {
    pub thread: Thread,
    pub search_rank: u32,
    /// Comment labels with respect to the original question, keyed by
    /// comment id.
    pub labels: BTreeMap<String, Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedQuestionSet {
    #[serde(rename = "orig")]
    pub original_question: Question,
    pub related: Vec<RelatedThread>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    #[serde(rename = "subtask_a", alias = "A")]
    SubtaskA,
    #[serde(rename = "subtask_c", alias = "C")]
    SubtaskC,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    SubtaskA(Vec<Thread>),
    SubtaskC(Vec<RelatedQuestionSet>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::SubtaskA(t) => t.len(),
            Dataset::SubtaskC(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn format(&self) -> DatasetFormat {
        match self {
            Dataset::SubtaskA(_) => DatasetFormat::SubtaskA,
            Dataset::SubtaskC(_) => DatasetFormat::SubtaskC,
        }
    }

    pub fn preprocess(&mut self, config: &TokenizerConfig) {
        match self {
            Dataset::SubtaskA(threads) => {
                for t in threads {
                    t.preprocess(config);
                }
            }
            Dataset::SubtaskC(sets) => {
                for s in sets {
                    s.original_question.preprocess(config);
                    for r in &mut s.related {
                        r.thread.preprocess(config);
                    }
                }
            }
        }
    }

    /// Distinct question categories, sorted.
    pub fn categories(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        match self {
            Dataset::SubtaskA(threads) => {
                for t in threads {
                    set.insert(t.question.category.clone());
                }
            }
            Dataset::SubtaskC(sets) => {
                for s in sets {
                    set.insert(s.original_question.category.clone());
                }
            }
        }
        set.into_iter().collect()
    }
}

/// Placeholders and stopword list used by [`preprocess`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub url_token: String,
    pub num_token: String,
    pub img_token: String,
    pub emo_token: String,
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            url_token: "TOKEN_URL".into(),
            num_token: "TOKEN_NUM".into(),
            img_token: "TOKEN_IMG".into(),
            emo_token: "TOKEN_EMO".into(),
            stopwords: default_stopwords(),
        }
    }
}

impl TokenizerConfig {
    /// Default placeholders with an empty stopword set.
    pub fn without_stopwords() -> Self {
        Self {
            stopwords: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .collect();
        self
    }

    /// Placeholders must be made of `[A-Za-z_]` so they survive tokenization.
    pub fn validate(&self) -> Result<()> {
        for t in [
            &self.url_token,
            &self.num_token,
            &self.img_token,
            &self.emo_token,
        ] {
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_alphabetic() || b == b'_') {
                return Err(Error::config(format!(
                    "replacement token {t:?} must consist of letters and underscores"
                )));
            }
        }
        Ok(())
    }
}

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// The bundled 127-word English stopword list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS)
}

fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Reads a one-word-per-line stopword file. Entries are lowercased, blank
/// lines ignored.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

/// Emoticons replaced by the emoticon placeholder, matched literally.
pub const EMOTICONS: &[&str] = &[
    ">:-(", ">:(", ":'-(", ":'(", ":-)", ":)", ":-(", ":(", ";-)", ";)", ";-(", ";(", ":-D",
    ":D", ";D", "=D", ":-P", ":P", ":-p", ":p", ";-P", ";P", ":-O", ":O", ":-|", ":|", ":-/",
    ":/", ":-\\", ":\\", ":-*", ":*", ":-]", ":]", ":-[", ":[", ":-$", ":$", "=)", "=(",
    "^_^", "^^", "-_-", "(:", "):",
];

struct Patterns {
    url: Regex,
    number: Regex,
    image: Regex,
    emoticon: Regex,
    token: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let mut emos: Vec<&str> = EMOTICONS.to_vec();
        // longest first so ":-)" wins over ":)"-style prefixes
        emos.sort_by_key(|e| std::cmp::Reverse(e.len()));
        let alternation = emos
            .iter()
            .map(|e| regex::escape(e))
            .collect::<Vec<_>>()
            .join("|");
        Patterns {
            url: Regex::new(r"(?i)(?:[a-z][a-z0-9+.\-]*://|www\.)\S+").unwrap(),
            number: Regex::new(r"[0-9]+(?:\.[0-9]+)?").unwrap(),
            image: Regex::new(
                r"(?i)<img[^>]*>|\[img\].*?\[/img\]|[a-z0-9_\-]+\.(?:jpe?g|png|gif|bmp|webp)\b",
            )
            .unwrap(),
            emoticon: Regex::new(&alternation).unwrap(),
            token: Regex::new(r"[A-Za-z_]+").unwrap(),
        }
    })
}

/// Runs the full four-stage pipeline over `raw`.
pub fn preprocess(raw: &str, config: &TokenizerConfig) -> Vec<String> {
    let replaced = replace_placeholders(raw, config);
    patterns()
        .token
        .find_iter(&replaced)
        .map(|m| m.as_str().to_lowercase())
        .filter(|t| !config.stopwords.contains(t))
        .collect()
}

/// Stage 1 only: substitutes placeholders for URLs, numbers, images and
/// emoticons, in that order.
pub fn replace_placeholders(raw: &str, config: &TokenizerConfig) -> String {
    let p = patterns();
    let pad = |t: &str| format!(" {t} ");
    let s = p.url.replace_all(raw, pad(&config.url_token).as_str());
    let s = p.number.replace_all(&s, pad(&config.num_token).as_str());
    let s = p.image.replace_all(&s, pad(&config.img_token).as_str());
    let s = p.emoticon.replace_all(&s, pad(&config.emo_token).as_str());
    s.into_owned()
}

/// Lowercases POS-tagged words and drops pairs whose word did not survive
/// preprocessing, so every tagged token is also in `tokens`.
fn normalize_pos(tags: &mut Option<Vec<(String, String)>>, tokens: &[String]) {
    if let Some(pairs) = tags {
        let present: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        pairs.retain_mut(|(w, _)| {
            *w = w.to_lowercase();
            present.contains(w.as_str())
        });
    }
}

impl Question {
    pub fn preprocess(&mut self, config: &TokenizerConfig) {
        self.subject_tokens = preprocess(&self.subject_raw, config);
        self.body_tokens = preprocess(&self.body_raw, config);
        normalize_pos(&mut self.pos_tags, &self.body_tokens);
    }
}

impl Comment {
    pub fn preprocess(&mut self, config: &TokenizerConfig) {
        self.tokens = preprocess(&self.raw_text, config);
        normalize_pos(&mut self.pos_tags, &self.tokens);
    }
}

impl Thread {
    pub fn preprocess(&mut self, config: &TokenizerConfig) {
        self.question.preprocess(config);
        for c in &mut self.comments {
            c.preprocess(config);
        }
    }

    /// Sorts comments by rank and checks ids and ranks.
    fn normalize(&mut self) -> Result<()> {
        self.comments.sort_by_key(|c| c.rank_in_thread);
        let mut seen = HashSet::new();
        for (i, c) in self.comments.iter().enumerate() {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::integrity(format!(
                    "thread {}: duplicate comment id {}",
                    self.question.id, c.id
                )));
            }
            if c.rank_in_thread as usize != i + 1 {
                return Err(Error::integrity(format!(
                    "thread {}: comment ranks must be exactly 1..{} (found {} at position {})",
                    self.question.id,
                    self.comments.len(),
                    c.rank_in_thread,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn check_question(q: &Question, line: usize) -> Result<()> {
    if q.category.trim().is_empty() {
        return Err(Error::Schema {
            line,
            message: format!("question {} has an empty category", q.id),
        });
    }
    Ok(())
}

fn check_set(set: &mut RelatedQuestionSet, line: usize) -> Result<()> {
    check_question(&set.original_question, line)?;
    let mut ranks = HashSet::new();
    for r in &mut set.related {
        check_question(&r.thread.question, line)?;
        r.thread.normalize()?;
        if !ranks.insert(r.search_rank) {
            return Err(Error::integrity(format!(
                "original question {}: duplicate search rank {}",
                set.original_question.id, r.search_rank
            )));
        }
        if r.search_rank < 1 {
            return Err(Error::integrity(format!(
                "original question {}: search rank must be >= 1",
                set.original_question.id
            )));
        }
        for c in &r.thread.comments {
            if !r.labels.contains_key(&c.id) {
                return Err(Error::integrity(format!(
                    "original question {}: no label for comment {}",
                    set.original_question.id, c.id
                )));
            }
        }
    }
    Ok(())
}

fn parse_lines<T, F>(reader: impl BufRead, mut check: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&mut T, usize) -> Result<()>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut item: T = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        check(&mut item, line_no)?;
        out.push(item);
    }
    Ok(out)
}

/// Parses JSONL thread data from any reader.
pub fn read_dataset(reader: impl BufRead, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::SubtaskA => parse_lines(reader, |t: &mut Thread, line| {
            check_question(&t.question, line)?;
            t.normalize()
        })
        .map(Dataset::SubtaskA),
        DatasetFormat::SubtaskC => parse_lines(reader, check_set).map(Dataset::SubtaskC),
    }
}

/// Loads a JSONL dataset. Tokens are left empty until
/// [`Dataset::preprocess`] is called.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), format)
}

/// Writes a dataset in canonical JSONL form (one record per line, fields in
/// schema order, absent optionals omitted).
pub fn write_dataset(writer: impl Write, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io_err = |e| Error::io("<dataset output>", e);
    match dataset {
        Dataset::SubtaskA(threads) => {
            for t in threads {
                serde_json::to_writer(&mut w, t)?;
                w.write_all(b"\n").map_err(io_err)?;
            }
        }
        Dataset::SubtaskC(sets) => {
            for s in sets {
                serde_json::to_writer(&mut w, s)?;
                w.write_all(b"\n").map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(file, dataset)
}

/// Reads a plain-text corpus (one sentence per line) and preprocesses each
/// line. Empty results are dropped.
pub fn read_text_corpus(path: impl AsRef<Path>, config: &TokenizerConfig) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks = preprocess(&line, config);
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}
