//! Question-comment feature extraction.
//!
//! Every feature belongs to one [`FeatureGroup`]; groups are the unit that
//! is switched on and off for ablations. A [`FeatureSchema`] pins the
//! column order so training and test matrices always line up.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{cluster_similarity, ClusterModel};
use crate::corpus::{Comment, Dataset, Label, Question};
use crate::embeddings::{cosine_similarity, Centroid, EmbeddingModel};
use crate::error::{Error, Result};
use crate::topics::{topic_similarity, LdaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    QuestionToComment,
    Maximized,
    Aligned,
    PosSim,
    WordClusters,
    LdaSim,
    Metadata,
    MetaCategories,
    RawVectors,
}

impl FeatureGroup {
    /// All groups in schema order.
    pub const ALL: [FeatureGroup; 9] = [
        FeatureGroup::QuestionToComment,
        FeatureGroup::Maximized,
        FeatureGroup::Aligned,
        FeatureGroup::PosSim,
        FeatureGroup::WordClusters,
        FeatureGroup::LdaSim,
        FeatureGroup::Metadata,
        FeatureGroup::MetaCategories,
        FeatureGroup::RawVectors,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FeatureGroup::QuestionToComment => "question_to_comment",
            FeatureGroup::Maximized => "maximized",
            FeatureGroup::Aligned => "aligned",
            FeatureGroup::PosSim => "pos_sim",
            FeatureGroup::WordClusters => "word_clusters",
            FeatureGroup::LdaSim => "lda_sim",
            FeatureGroup::Metadata => "metadata",
            FeatureGroup::MetaCategories => "meta_categories",
            FeatureGroup::RawVectors => "raw_vectors",
        }
    }

    /// Label used in ablation tables.
    pub fn title(self) -> &'static str {
        match self {
            FeatureGroup::QuestionToComment => "Quest. to Comment sim",
            FeatureGroup::Maximized => "Maximized similarity",
            FeatureGroup::Aligned => "Aligned similarity",
            FeatureGroup::PosSim => "POS sim",
            FeatureGroup::WordClusters => "Word Clusters similarity",
            FeatureGroup::LdaSim => "LDA sim",
            FeatureGroup::Metadata => "Metadata",
            FeatureGroup::MetaCategories => "Meta categories",
            FeatureGroup::RawVectors => "Word Vectors",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(
            self,
            FeatureGroup::QuestionToComment
                | FeatureGroup::Maximized
                | FeatureGroup::Aligned
                | FeatureGroup::PosSim
                | FeatureGroup::RawVectors
        )
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let g = match norm.as_str() {
            "questiontocomment" | "qc" | "qcsim" => FeatureGroup::QuestionToComment,
            "maximized" | "maximizedsim" => FeatureGroup::Maximized,
            "aligned" | "alignedsim" => FeatureGroup::Aligned,
            "possim" | "pos" => FeatureGroup::PosSim,
            "wordclusters" | "wc" | "wcsim" => FeatureGroup::WordClusters,
            "ldasim" | "lda" => FeatureGroup::LdaSim,
            "metadata" | "meta" => FeatureGroup::Metadata,
            "metacategories" | "metacat" | "categories" => FeatureGroup::MetaCategories,
            "rawvectors" | "wordvectors" | "vectors" => FeatureGroup::RawVectors,
            _ => return Err(Error::config(format!("unknown feature group {s:?}"))),
        };
        Ok(g)
    }
}

pub type GroupSet = BTreeSet<FeatureGroup>;

pub fn all_groups() -> GroupSet {
    FeatureGroup::ALL.into_iter().collect()
}

/// Named group selections: `all` and `primary-submission` (all groups
/// except POS similarity and question categories).
pub fn preset(name: &str) -> Result<GroupSet> {
    match name {
        "all" => Ok(all_groups()),
        "primary-submission" => {
            let mut g = all_groups();
            g.remove(&FeatureGroup::PosSim);
            g.remove(&FeatureGroup::MetaCategories);
            Ok(g)
        }
        other => Err(Error::config(format!("unknown feature preset {other:?}"))),
    }
}

/// Either a preset name or an explicit list of groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSelection {
    Preset(String),
    Groups(Vec<String>),
}

impl Default for GroupSelection {
    fn default() -> Self {
        GroupSelection::Preset("all".into())
    }
}

impl GroupSelection {
    pub fn resolve(&self) -> Result<GroupSet> {
        match self {
            GroupSelection::Preset(p) => preset(p),
            GroupSelection::Groups(list) => list.iter().map(|s| s.parse()).collect(),
        }
    }
}

/// The 12-tag universal part-of-speech set.
pub const UNIVERSAL_TAGS: [&str; 12] = [
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", ".", "X",
];

/// Maps a Penn Treebank tag (or an already-universal tag) to the universal
/// tagset.
pub fn universal_tag(tag: &str) -> Option<&'static str> {
    let t = match tag {
        "NN" | "NNS" | "NNP" | "NNPS" | "NP" | "NOUN" => "NOUN",
        "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ" | "MD" | "VP" | "VERB" => "VERB",
        "JJ" | "JJR" | "JJS" | "ADJ" => "ADJ",
        "RB" | "RBR" | "RBS" | "WRB" | "ADV" => "ADV",
        "PRP" | "PRP$" | "WP" | "WP$" | "PRON" => "PRON",
        "DT" | "PDT" | "WDT" | "EX" | "DET" => "DET",
        "IN" | "ADP" => "ADP",
        "CD" | "NUM" => "NUM",
        "CC" | "CONJ" => "CONJ",
        "RP" | "TO" | "POS" | "PRT" => "PRT",
        "." | "," | ":" | "``" | "''" | "(" | ")" | "-LRB-" | "-RRB-" | "#" | "$" | "!" | "?" => ".",
        "FW" | "LS" | "SYM" | "UH" | "X" => "X",
        _ => return None,
    };
    Some(t)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub group: FeatureGroup,
    pub name: String,
}

/// Ordered feature columns for one group selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub groups: Vec<FeatureGroup>,
    pub dim: usize,
    pub tagset: Vec<String>,
    pub categories: Vec<String>,
    pub columns: Vec<Column>,
}

pub const MAXIMIZED_TOP_N: [usize; 4] = [1, 2, 3, 5];

fn pos_column(tag: &str) -> String {
    match tag {
        "." => "pos_sim_PUNCT".to_string(),
        t => format!("pos_sim_{t}"),
    }
}

impl FeatureSchema {
    /// Builds the schema for `groups`. `dim` is the embedding size (only
    /// used by raw vectors), `categories` the question categories seen in
    /// training data.
    pub fn new(groups: &GroupSet, dim: usize, tagset: &[String], categories: &[String]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::config("at least one feature group must be enabled"));
        }
        let mut columns = Vec::new();
        let mut push = |group, name: String| columns.push(Column { group, name });
        for &g in groups {
            match g {
                FeatureGroup::QuestionToComment => {
                    push(g, "qc_body_sim".into());
                    push(g, "qc_subject_sim".into());
                }
                FeatureGroup::Maximized => {
                    for n in MAXIMIZED_TOP_N {
                        push(g, format!("max_sim_top{n}"));
                    }
                }
                FeatureGroup::Aligned => push(g, "aligned_sim".into()),
                FeatureGroup::PosSim => {
                    for t in tagset {
                        push(g, pos_column(t));
                    }
                }
                FeatureGroup::WordClusters => push(g, "wc_sim".into()),
                FeatureGroup::LdaSim => push(g, "lda_sim".into()),
                FeatureGroup::Metadata => {
                    for n in METADATA_NAMES {
                        push(g, n.into());
                    }
                }
                FeatureGroup::MetaCategories => {
                    for c in categories {
                        push(g, format!("cat={c}"));
                    }
                }
                FeatureGroup::RawVectors => {
                    for i in 0..dim {
                        push(g, format!("q_vec_{i}"));
                    }
                    for i in 0..dim {
                        push(g, format!("c_vec_{i}"));
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("duplicate feature name {:?}", c.name)));
            }
        }
        Ok(Self {
            groups: groups.iter().copied().collect(),
            dim,
            tagset: tagset.to_vec(),
            categories: categories.to_vec(),
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn group_set(&self) -> GroupSet {
        self.groups.iter().copied().collect()
    }

    /// Hex SHA-256 over the ordered `group/name` column list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.group.key().as_bytes());
            h.update(b"/");
            h.update(c.name.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Column indices belonging to `groups`, in schema order.
    pub fn indices_for(&self, groups: &GroupSet) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| groups.contains(&c.group))
            .map(|(i, _)| i)
            .collect()
    }

    /// Schema restricted to `groups`, which must be enabled here.
    pub fn restrict(&self, groups: &GroupSet) -> Result<Self> {
        if let Some(g) = groups.iter().find(|g| !self.groups.contains(g)) {
            return Err(Error::config(format!("group {g} is not part of this schema")));
        }
        Self::new(groups, self.dim, &self.tagset, &self.categories)
    }

    /// Iterates `(group, name, value)` triples of a vector built with this
    /// schema.
    pub fn entries<'a>(&'a self, v: &'a FeatureVector) -> impl Iterator<Item = (FeatureGroup, &'a str, f64)> {
        self.columns
            .iter()
            .zip(&v.values)
            .map(|(c, &x)| (c.group, c.name.as_str(), x))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        #[derive(Serialize)]
        struct Out<'a> {
            hash: String,
            #[serde(flatten)]
            schema: &'a FeatureSchema,
        }
        let json = serde_json::to_string_pretty(&Out { hash: self.hash(), schema: self })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct In {
            hash: Option<String>,
            #[serde(flatten)]
            schema: FeatureSchema,
        }
        let parsed: In = serde_json::from_str(&text)?;
        if let Some(h) = parsed.hash {
            if h != parsed.schema.hash() {
                return Err(Error::integrity(format!(
                    "schema file {} has a stale hash",
                    path.display()
                )));
            }
        }
        Ok(parsed.schema)
    }
}

const METADATA_NAMES: [&str; 6] = [
    "has_qmark",
    "answer_len",
    "question_len",
    "len_ratio",
    "same_author",
    "rank",
];

/// Values for one question-comment pair, ordered by a [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// POS features were requested but one side had no annotations.
    pub pos_missing: bool,
}

/// Body-to-comment and subject-to-comment centroid similarities.
pub fn qc_similarity(q: &Question, c: &Comment, emb: &EmbeddingModel) -> [f64; 2] {
    let cc = emb.centroid(&c.tokens);
    let body = emb.centroid(&q.body_tokens);
    let subj = emb.centroid(&q.subject_tokens);
    [centroid_sim(&body, &cc), centroid_sim(&subj, &cc)]
}

fn centroid_sim(a: &Centroid, b: &Centroid) -> f64 {
    if a.degenerate || b.degenerate {
        0.0
    } else {
        cosine_similarity(&a.vector, &b.vector)
    }
}

/// Mean of the `n` largest values for each `n` in `ns`; averages over what
/// exists when fewer are available, 0 for no values.
pub fn top_n_means(mut sims: Vec<f64>, ns: &[usize]) -> Vec<f64> {
    sims.sort_by(|a, b| b.total_cmp(a));
    ns.iter()
        .map(|&n| {
            let take = n.min(sims.len());
            if take == 0 {
                0.0
            } else {
                sims[..take].iter().sum::<f64>() / take as f64
            }
        })
        .collect()
}

/// Per-token similarity of comment words to the question-body centroid,
/// reduced to top-N means.
pub fn maximized_similarity<S: AsRef<str>>(
    body_centroid: &Centroid,
    c_tokens: &[S],
    emb: &EmbeddingModel,
    ns: &[usize],
) -> Vec<f64> {
    if body_centroid.degenerate {
        return vec![0.0; ns.len()];
    }
    let sims = c_tokens
        .iter()
        .filter_map(|t| emb.vector_f64(t.as_ref()))
        .map(|v| cosine_similarity(&v, &body_centroid.vector))
        .collect();
    top_n_means(sims, ns)
}

/// For each known question word, its best cosine match among known comment
/// words; the mean of these maxima. Not symmetric in its arguments.
pub fn aligned_similarity<S: AsRef<str>, T: AsRef<str>>(q_tokens: &[S], c_tokens: &[T], emb: &EmbeddingModel) -> f64 {
    let qv: Vec<Vec<f64>> = q_tokens.iter().filter_map(|t| emb.vector_f64(t.as_ref())).collect();
    let cv: Vec<Vec<f64>> = c_tokens.iter().filter_map(|t| emb.vector_f64(t.as_ref())).collect();
    if qv.is_empty() || cv.is_empty() {
        return 0.0;
    }
    let total: f64 = qv
        .iter()
        .map(|q| {
            cv.iter()
                .map(|c| cosine_similarity(q, c))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / qv.len() as f64
}

/// Maps input tags onto the configured tagset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TagMapping {
    /// Collapse Penn Treebank tags to the universal tagset.
    #[default]
    Universal,
    /// Use tags exactly as given.
    Identity,
}

impl TagMapping {
    fn map(self, tag: &str) -> Option<&str> {
        match self {
            TagMapping::Universal => universal_tag(tag),
            TagMapping::Identity => Some(tag),
        }
    }
}

fn tagged_centroids(
    pairs: &[(String, String)],
    emb: &EmbeddingModel,
    tagset: &[String],
    mapping: TagMapping,
) -> Vec<Centroid> {
    tagset
        .iter()
        .map(|tag| {
            let words: Vec<&str> = pairs
                .iter()
                .filter(|(_, t)| mapping.map(t) == Some(tag.as_str()))
                .map(|(w, _)| w.as_str())
                .collect();
            emb.centroid(&words)
        })
        .collect()
}

/// Per-tag similarity between the centroid of question-body words with
/// that tag and the centroid of comment words with that tag. The flag is
/// set (and all values are 0) when either side lacks annotations.
pub fn pos_similarity(
    q: &Question,
    c: &Comment,
    emb: &EmbeddingModel,
    tagset: &[String],
    mapping: TagMapping,
) -> (Vec<f64>, bool) {
    match (&q.pos_tags, &c.pos_tags) {
        (Some(qp), Some(cp)) => {
            let qc = tagged_centroids(qp, emb, tagset, mapping);
            let cc = tagged_centroids(cp, emb, tagset, mapping);
            (qc.iter().zip(&cc).map(|(a, b)| centroid_sim(a, b)).collect(), false)
        }
        _ => (vec![0.0; tagset.len()], true),
    }
}

/// `[has_qmark, answer_len, question_len, len_ratio, same_author, rank]`.
///
/// The question mark test runs on the raw comment text, lengths count
/// preprocessed tokens and `len_ratio = question_len / (answer_len + 1)`.
pub fn metadata_features(q: &Question, c: &Comment) -> [f64; 6] {
    let answer_len = c.tokens.len() as f64;
    let question_len = q.body_tokens.len() as f64;
    [
        c.raw_text.contains('?') as u8 as f64,
        answer_len,
        question_len,
        question_len / (answer_len + 1.0),
        (q.author_id == c.author_id) as u8 as f64,
        c.rank_in_thread as f64,
    ]
}

/// One-hot question category over `categories`; unseen categories give all
/// zeros.
pub fn category_features(q: &Question, categories: &[String]) -> Vec<f64> {
    categories
        .iter()
        .map(|c| (*c == q.category) as u8 as f64)
        .collect()
}

/// Question-body centroid followed by comment centroid.
pub fn raw_vector_features(q: &Question, c: &Comment, emb: &EmbeddingModel) -> Vec<f64> {
    let mut v = emb.centroid(&q.body_tokens).vector;
    v.extend(emb.centroid(&c.tokens).vector);
    v
}

/// Models consulted by the extractor. Only those required by the enabled
/// groups need to be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureModels<'a> {
    pub embeddings: Option<&'a EmbeddingModel>,
    pub clusters: Option<&'a ClusterModel>,
    pub lda: Option<&'a LdaModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub tag_mapping: TagMapping,
    pub lda_infer_iterations: usize,
    pub seed: u64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            tag_mapping: TagMapping::Universal,
            lda_infer_iterations: 50,
            seed: 1,
        }
    }
}

/// Per-question values shared by every comment of the thread.
pub struct QuestionContext {
    body: Option<Centroid>,
    subject: Option<Centroid>,
    topics: Option<crate::topics::TopicDistribution>,
    clusters: Option<crate::clustering::ClusterBag>,
}

pub struct Extractor<'a> {
    schema: FeatureSchema,
    groups: GroupSet,
    models: FeatureModels<'a>,
    opts: ExtractOptions,
}

impl<'a> Extractor<'a> {
    pub fn new(schema: FeatureSchema, models: FeatureModels<'a>, opts: ExtractOptions) -> Result<Self> {
        let groups = schema.group_set();
        for &g in &groups {
            if g.needs_embeddings() {
                let emb = models
                    .embeddings
                    .ok_or_else(|| Error::config(format!("group {g} needs an embedding model")))?;
                if g == FeatureGroup::RawVectors && emb.dim() != schema.dim {
                    return Err(Error::config(format!(
                        "schema expects {}-dim vectors, embedding model has {}",
                        schema.dim,
                        emb.dim()
                    )));
                }
            }
        }
        if groups.contains(&FeatureGroup::WordClusters) && models.clusters.is_none() {
            return Err(Error::config("group word_clusters needs a cluster model"));
        }
        if groups.contains(&FeatureGroup::LdaSim) && models.lda.is_none() {
            return Err(Error::config("group lda_sim needs an LDA model"));
        }
        Ok(Self {
            schema,
            groups,
            models,
            opts,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn prepare(&self, q: &Question) -> QuestionContext {
        let emb = self.models.embeddings;
        QuestionContext {
            body: emb.map(|e| e.centroid(&q.body_tokens)),
            subject: emb.map(|e| e.centroid(&q.subject_tokens)),
            topics: self
                .models
                .lda
                .filter(|_| self.groups.contains(&FeatureGroup::LdaSim))
                .map(|m| m.infer(&q.body_tokens, self.opts.lda_infer_iterations, self.opts.seed)),
            clusters: self.models.clusters.map(|m| m.bag(&q.body_tokens)),
        }
    }

    pub fn extract(&self, ctx: &QuestionContext, q: &Question, c: &Comment) -> FeatureVector {
        let mut values = Vec::with_capacity(self.schema.len());
        let mut pos_missing = false;
        let emb = self.models.embeddings;
        let comment_centroid = emb.map(|e| e.centroid(&c.tokens));
        for &g in &self.groups {
            match g {
                FeatureGroup::QuestionToComment => {
                    let cc = comment_centroid.as_ref().unwrap();
                    values.push(centroid_sim(ctx.body.as_ref().unwrap(), cc));
                    values.push(centroid_sim(ctx.subject.as_ref().unwrap(), cc));
                }
                FeatureGroup::Maximized => values.extend(maximized_similarity(
                    ctx.body.as_ref().unwrap(),
                    &c.tokens,
                    emb.unwrap(),
                    &MAXIMIZED_TOP_N,
                )),
                FeatureGroup::Aligned => {
                    values.push(aligned_similarity(&q.body_tokens, &c.tokens, emb.unwrap()))
                }
                FeatureGroup::PosSim => {
                    let (v, missing) =
                        pos_similarity(q, c, emb.unwrap(), &self.schema.tagset, self.opts.tag_mapping);
                    pos_missing = missing;
                    values.extend(v);
                }
                FeatureGroup::WordClusters => {
                    let m = self.models.clusters.unwrap();
                    values.push(cluster_similarity(ctx.clusters.as_ref().unwrap(), &m.bag(&c.tokens)));
                }
                FeatureGroup::LdaSim => {
                    let m = self.models.lda.unwrap();
                    let ct = m.infer(&c.tokens, self.opts.lda_infer_iterations, self.opts.seed);
                    values.push(topic_similarity(ctx.topics.as_ref().unwrap(), &ct));
                }
                FeatureGroup::Metadata => values.extend(metadata_features(q, c)),
                FeatureGroup::MetaCategories => {
                    values.extend(category_features(q, &self.schema.categories))
                }
                FeatureGroup::RawVectors => {
                    values.extend_from_slice(&ctx.body.as_ref().unwrap().vector);
                    values.extend_from_slice(&comment_centroid.as_ref().unwrap().vector);
                }
            }
        }
        debug_assert_eq!(values.len(), self.schema.len());
        FeatureVector { values, pos_missing }
    }

    /// Features for a single pair.
    pub fn assemble(&self, q: &Question, c: &Comment) -> FeatureVector {
        self.extract(&self.prepare(q), q, c)
    }

    /// Extracts one row per comment. Subtask C rows pair every related
    /// comment with the original question and carry labels relative to it.
    pub fn extract_dataset(&self, dataset: &Dataset) -> Vec<FeatureRow> {
        match dataset {
            Dataset::SubtaskA(threads) => threads
                .par_iter()
                .flat_map_iter(|t| {
                    let ctx = self.prepare(&t.question);
                    t.comments
                        .iter()
                        .map(|c| FeatureRow {
                            query_id: t.question.id.clone(),
                            thread_id: t.question.id.clone(),
                            comment_id: c.id.clone(),
                            rank: c.rank_in_thread,
                            search_rank: 1,
                            label: c.gold_label,
                            values: self.extract(&ctx, &t.question, c).values,
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
            Dataset::SubtaskC(sets) => sets
                .par_iter()
                .flat_map_iter(|s| {
                    let q = &s.original_question;
                    let ctx = self.prepare(q);
                    s.related
                        .iter()
                        .flat_map(|r| {
                            r.thread.comments.iter().map(|c| FeatureRow {
                                query_id: q.id.clone(),
                                thread_id: r.thread.question.id.clone(),
                                comment_id: c.id.clone(),
                                rank: c.rank_in_thread,
                                search_rank: r.search_rank,
                                label: r.labels.get(&c.id).copied(),
                                values: self.extract(&ctx, q, c).values,
                            })
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
        }
    }
}

/// Free-function form: builds an extractor for `schema` and assembles one
/// pair.
pub fn assemble(
    q: &Question,
    c: &Comment,
    models: FeatureModels<'_>,
    schema: &FeatureSchema,
    opts: &ExtractOptions,
) -> Result<FeatureVector> {
    let ex = Extractor::new(schema.clone(), models, opts.clone())?;
    Ok(ex.assemble(q, c))
}

/// One matrix row keyed by query and comment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Thread question id (subtask A) or original question id (subtask C).
    pub query_id: String,
    pub thread_id: String,
    pub comment_id: String,
    pub rank: u32,
    pub search_rank: u32,
    pub label: Option<Label>,
    pub values: Vec<f64>,
}

impl FeatureRow {
    /// Keeps only the columns at `indices`.
    pub fn select(&self, indices: &[usize]) -> FeatureRow {
        FeatureRow {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            ..self.clone()
        }
    }
}

const KEY_COLUMNS: [&str; 6] = ["query_id", "thread_id", "comment_id", "rank", "search_rank", "label"];

fn label_str(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::Good) => "Good",
        Some(Label::PotentiallyUseful) => "PotentiallyUseful",
        Some(Label::Bad) => "Bad",
        None => "",
    }
}

fn parse_label(s: &str) -> Result<Option<Label>> {
    Ok(match s {
        "Good" => Some(Label::Good),
        "PotentiallyUseful" => Some(Label::PotentiallyUseful),
        "Bad" => Some(Label::Bad),
        "" => None,
        other => return Err(Error::format(format!("unknown label {other:?}"))),
    })
}

/// Writes rows as CSV: key columns, then one column per schema feature.
pub fn write_matrix(path: impl AsRef<Path>, schema: &FeatureSchema, rows: &[FeatureRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = KEY_COLUMNS.iter().copied().chain(schema.names()).collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.query_id.clone(),
            r.thread_id.clone(),
            r.comment_id.clone(),
            r.rank.to_string(),
            r.search_rank.to_string(),
            label_str(r.label).to_string(),
        ];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_matrix`], checking its header against
/// `schema`.
pub fn read_matrix(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let expected: Vec<&str> = KEY_COLUMNS.iter().copied().chain(schema.names()).collect();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::integrity(format!(
            "{}: feature columns do not match the schema",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<u32> {
            rec[i]
                .parse()
                .map_err(|_| Error::format(format!("bad integer {:?}", &rec[i])))
        };
        let values = (KEY_COLUMNS.len()..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("bad feature value {:?}", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            query_id: rec[0].to_string(),
            thread_id: rec[1].to_string(),
            comment_id: rec[2].to_string(),
            rank: num(3)?,
            search_rank: num(4)?,
            label: parse_label(&rec[5])?,
            values,
        });
    }
    Ok(rows)
}

/// Per-column minimum and maximum learned on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_scaler<R: AsRef<[f64]>>(rows: &[R]) -> ScalerParams {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for r in rows {
        for (j, &x) in r.as_ref().iter().enumerate() {
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    ScalerParams { min, max }
}

impl ScalerParams {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Min-max scales `x`, clamping to `[0, 1]`. Constant columns map to 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.min.len(), "scaler dimension mismatch");
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    ((v - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn apply_scaler(params: &ScalerParams, x: &[f64]) -> Vec<f64> {
    params.apply(x)
}

/// Number of rows per category, used when the schema is built from
/// training data.
pub fn category_counts(dataset: &Dataset) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    match dataset {
        Dataset::SubtaskA(ts) => {
            for t in ts {
                *m.entry(t.question.category.clone()).or_default() += t.comments.len();
            }
        }
        Dataset::SubtaskC(ss) => {
            for s in ss {
                let n = s.related.iter().map(|r| r.thread.comments.len()).sum::<usize>();
                *m.entry(s.original_question.category.clone()).or_default() += n;
            }
        }
    }
    m
}

pub fn default_tagset() -> Vec<String> {
    UNIVERSAL_TAGS.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::Vocabulary;

    fn emb(words: &[(&str, [f32; 2])]) -> EmbeddingModel {
        let vocab = Vocabulary::from_words(words.iter().map(|(w, _)| w.to_string()).collect()).unwrap();
        EmbeddingModel::from_parts(vocab, 2, words.iter().flat_map(|(_, v)| *v).collect()).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn question(body: &str, subject: &str) -> Question {
        Question {
            id: "q".into(),
            author_id: "qa".into(),
            subject_raw: subject.into(),
            body_raw: body.into(),
            category: "Cat".into(),
            pos_tags: None,
            subject_tokens: toks(subject),
            body_tokens: toks(body),
        }
    }

    fn comment(text: &str) -> Comment {
        Comment {
            id: "c".into(),
            author_id: "ca".into(),
            raw_text: text.into(),
            rank_in_thread: 1,
            gold_label: None,
            pos_tags: None,
            tokens: toks(text),
        }
    }

    fn toy() -> EmbeddingModel {
        emb(&[("a", [1.0, 0.0]), ("b", [1.0, 1.0]), ("x", [0.0, 1.0]), ("y", [-1.0, 0.2])])
    }

    #[test]
    fn qc_similarity_examples() {
        let m = toy();
        let s = qc_similarity(&question("a b", "x"), &comment("a b"), &m);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(qc_similarity(&question("a", "a"), &comment("zz qq"), &m), [0.0, 0.0]);
        let s = qc_similarity(&question("a", "a"), &comment("b"), &m);
        assert!((s[0] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn maximized_examples() {
        let m = toy();
        let c = m.centroid(&["a"]);
        assert_eq!(maximized_similarity(&c, &["a"], &m, &MAXIMIZED_TOP_N), [1.0; 4]);
        assert_eq!(maximized_similarity(&c, &Vec::<String>::new(), &m, &MAXIMIZED_TOP_N), [0.0; 4]);
        let v = top_n_means(vec![0.1, 0.9, 0.5], &MAXIMIZED_TOP_N);
        let expect = [0.9, 0.7, 0.5, 0.5];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_examples_and_direction() {
        let m = toy();
        assert!((aligned_similarity(&["a", "b"], &["b", "a", "x"], &m) - 1.0).abs() < 1e-12);
        let orth = emb(&[("q", [1.0, 0.0]), ("c1", [0.0, 1.0]), ("c2", [0.0, -2.0])]);
        assert_eq!(aligned_similarity(&["q"], &["c1", "c2"], &orth), 0.0);
        assert_eq!(aligned_similarity(&["zz"], &["a"], &m), 0.0);
        // q = {a, x}, c = {a}: a aligns perfectly, x is orthogonal -> 0.5;
        // reversed, the single word a finds itself -> 1.0
        let fwd = aligned_similarity(&["a", "x"], &["a"], &m);
        let rev = aligned_similarity(&["a"], &["a", "x"], &m);
        assert!((fwd - 0.5).abs() < 1e-12);
        assert!((rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pos_examples() {
        let m = emb(&[("pool", [1.0, 0.5]), ("swim", [0.0, 1.0])]);
        let tagset = default_tagset();
        let mut q = question("pool", "");
        let mut c = comment("pool");
        let (v, missing) = pos_similarity(&q, &c, &m, &tagset, TagMapping::Universal);
        assert!(missing);
        assert!(v.iter().all(|&x| x == 0.0));
        q.pos_tags = Some(vec![("pool".into(), "NN".into())]);
        c.pos_tags = Some(vec![("pool".into(), "NNS".into()), ("blah".into(), "WEIRD".into())]);
        let (v, missing) = pos_similarity(&q, &c, &m, &tagset, TagMapping::Universal);
        assert!(!missing);
        assert!((v[0] - 1.0).abs() < 1e-12, "NOUN");
        assert_eq!(v[1], 0.0, "VERB");
    }

    #[test]
    fn metadata_examples() {
        let q = question("a b c d e f g h i j", "s");
        let mut c = comment("Really? No idea.");
        c.tokens = toks("one two three four");
        c.rank_in_thread = 3;
        let m = metadata_features(&q, &c);
        assert_eq!(m[0], 1.0);
        assert_eq!(m[1], 4.0);
        assert_eq!(m[2], 10.0);
        assert_eq!(m[3], 2.0);
        assert_eq!(m[4], 0.0);
        assert_eq!(m[5], 3.0);
        c.author_id = q.author_id.clone();
        assert_eq!(metadata_features(&q, &c)[4], 1.0);
        assert_eq!(category_features(&q, &["A".into(), "Cat".into()]), [0.0, 1.0]);
    }

    #[test]
    fn raw_vector_examples() {
        let m = emb(&[("a", [1.0, 0.0]), ("b", [0.0, 1.0])]);
        assert_eq!(raw_vector_features(&question("a", ""), &comment("b"), &m), [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(raw_vector_features(&question("a", ""), &comment("zz"), &m), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn schema_counts_and_ablation() {
        let tags = default_tagset();
        let cats: Vec<String> = vec!["A".into(), "B".into(), "C".into()];
        let dim = 7;
        let full = FeatureSchema::new(&all_groups(), dim, &tags, &cats).unwrap();
        assert_eq!(full.len(), 2 * dim + tags.len() + 4 + 2 + 1 + 1 + 1 + 6 + cats.len());
        for g in FeatureGroup::ALL {
            let mut minus = all_groups();
            minus.remove(&g);
            let s = FeatureSchema::new(&minus, dim, &tags, &cats).unwrap();
            let only = FeatureSchema::new(&GroupSet::from([g]), dim, &tags, &cats).unwrap();
            assert_eq!(s.len(), full.len() - only.len(), "{g}");
        }
        assert!(matches!(FeatureSchema::new(&GroupSet::new(), dim, &tags, &cats), Err(Error::Config(_))));
        assert_ne!(full.hash(), full.restrict(&preset("primary-submission").unwrap()).unwrap().hash());
    }

    #[test]
    fn assemble_respects_enabled_groups() {
        let m = toy();
        let q = question("a b", "x");
        let c = comment("a y?");
        let only_meta = FeatureSchema::new(&GroupSet::from([FeatureGroup::Metadata]), 2, &[], &[]).unwrap();
        let v = assemble(&q, &c, FeatureModels::default(), &only_meta, &ExtractOptions::default()).unwrap();
        assert_eq!(v.values.len(), 6);
        let all = FeatureSchema::new(&all_groups(), 2, &default_tagset(), &["Cat".into()]).unwrap();
        let err = assemble(
            &q,
            &c,
            FeatureModels { embeddings: Some(&m), ..Default::default() },
            &all,
            &ExtractOptions::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn group_names_parse() {
        assert_eq!("WC".parse::<FeatureGroup>().unwrap(), FeatureGroup::WordClusters);
        assert_eq!("meta_categories".parse::<FeatureGroup>().unwrap(), FeatureGroup::MetaCategories);
        assert_eq!("Word Vectors".parse::<FeatureGroup>().unwrap(), FeatureGroup::RawVectors);
        assert!("nope".parse::<FeatureGroup>().is_err());
        for g in FeatureGroup::ALL {
            assert_eq!(g.key().parse::<FeatureGroup>().unwrap(), g);
        }
    }

    #[test]
    fn scaler_examples() {
        let p = fit_scaler(&[vec![2.0, 5.0], vec![4.0, 5.0]]);
        assert_eq!(p.apply(&[2.0, 5.0]), [0.0, 0.0]);
        assert_eq!(p.apply(&[4.0, 5.0]), [1.0, 0.0]);
        assert_eq!(p.apply(&[6.0, 9.0]), [1.0, 0.0]);
        assert_eq!(p.apply(&[3.0, 1.0]), [0.5, 0.0]);
        assert!(p.max.iter().zip(&p.min).all(|(a, b)| a >= b));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let schema = FeatureSchema::new(&GroupSet::from([FeatureGroup::Metadata]), 2, &[], &[]).unwrap();
        let rows = vec![FeatureRow {
            query_id: "Q1".into(),
            thread_id: "Q1".into(),
            comment_id: "Q1_C1".into(),
            rank: 1,
            search_rank: 1,
            label: Some(Label::PotentiallyUseful),
            values: vec![1.0, 0.1 + 0.2, 3.0, 1.0 / 3.0, 0.0, 1.0],
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_matrix(&p, &schema, &rows).unwrap();
        assert_eq!(read_matrix(&p, &schema).unwrap(), rows);
        let other = FeatureSchema::new(&GroupSet::from([FeatureGroup::Aligned]), 2, &[], &[]).unwrap();
        assert!(matches!(read_matrix(&p, &other), Err(Error::Integrity(_))));
        let sp = dir.path().join("schema.json");
        schema.save(&sp).unwrap();
        assert_eq!(FeatureSchema::load(&sp).unwrap(), schema);
    }
}
