//! End-to-end pipeline driven by one JSON configuration.
//!
//! Each stage reads the outputs of earlier stages from the work directory,
//! so stages can be run one at a time or chained with [`Pipeline::run_all`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, ClusterModel, KMeansConfig};
use crate::corpus::{load_dataset, load_stopwords, preprocess, Dataset, DatasetFormat, Label, TokenizerConfig};
use crate::embeddings::{train_skipgram, EmbeddingConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::features::{
    default_tagset, read_matrix, write_matrix, ExtractOptions, Extractor, FeatureGroup, FeatureModels, FeatureSchema,
    GroupSelection, TagMapping,
};
use crate::model::{cross_validate_c, fit_scaled, CvResult, LogRegModel, TrainOptions};
use crate::ranking::ablation::{ablation_run, format_table, parse_removal, AblationRow, AblationSetup};
use crate::ranking::{
    evaluate, lists_from_predictions, predict_rows, rank_rows, read_predictions, save_predictions, CombinerConfig,
    EvalOptions, EvalReport,
};
use crate::synth::{generate, Signal, SynthConfig};
use crate::topics::{train_lda, LdaConfig, LdaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Annotated dataset (JSONL).
    pub train: Option<PathBuf>,
    /// Held-out dataset; when absent the training data is split.
    pub test: Option<PathBuf>,
    /// Unannotated forum text, one sentence per line.
    pub unannotated: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Pretrained word2vec file used instead of training embeddings
    /// (`.bin` is read as binary, anything else as text).
    pub embeddings: Option<PathBuf>,
    /// Word vectors to cluster; defaults to the feature embeddings.
    pub cluster_embeddings: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            unannotated: None,
            stopwords: None,
            embeddings: None,
            cluster_embeddings: None,
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub groups: GroupSelection,
    /// Defaults to the 12 universal tags.
    pub tagset: Option<Vec<String>>,
    pub tag_mapping: TagMapping,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            groups: GroupSelection::default(),
            tagset: None,
            tag_mapping: TagMapping::Universal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub subtask: DatasetFormat,
    /// Seeds every stochastic stage; the `seed` fields of the nested
    /// configurations are ignored.
    pub seed: u64,
    /// Share of queries held out when no test file is given.
    pub test_fraction: f64,
    pub remove_stopwords: bool,
    /// Also drop stopwords from the embedding-training corpus (kept by
    /// default; LDA and features always use the filtered tokens).
    pub embedding_stopwords: bool,
    pub embedding: EmbeddingConfig,
    /// Embedding sweep as `dim:window:min_count:negative_samples` entries.
    pub grid: Vec<String>,
    pub kmeans: KMeansConfig,
    pub lda: LdaConfig,
    pub features: FeatureSettings,
    pub train: TrainOptions,
    /// Skip cross-validation and train with this cost.
    pub fixed_c: Option<f64>,
    pub eval: EvalOptions,
    pub combiner: CombinerConfig,
    /// Ablation removal sets such as `"word_clusters & meta_categories"`.
    pub ablation: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            subtask: DatasetFormat::SubtaskA,
            seed: 1,
            test_fraction: 0.3,
            remove_stopwords: true,
            embedding_stopwords: false,
            embedding: EmbeddingConfig::default(),
            grid: Vec::new(),
            kmeans: KMeansConfig::default(),
            lda: LdaConfig::default(),
            features: FeatureSettings::default(),
            train: TrainOptions::default(),
            fixed_c: None,
            eval: EvalOptions::default(),
            combiner: CombinerConfig::default(),
            ablation: Vec::new(),
        }
    }
}

/// Sets `key` (dot-separated) in a JSON object to `raw`, parsed as JSON
/// when possible and as a plain string otherwise.
pub fn set_json_key(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key {key:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
        if entry.is_null() {
            *entry = serde_json::Value::Object(Default::default());
        }
        cur = entry;
    }
    unreachable!()
}

impl PipelineConfig {
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        if v.is_null() {
            v = serde_json::Value::Object(Default::default());
        }
        for (k, raw) in overrides {
            set_json_key(&mut v, k, raw)?;
        }
        let cfg: PipelineConfig =
            serde_json::from_value(v).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must be in (0, 1)"));
        }
        self.embedding_config().validate()?;
        self.train.validate()?;
        self.features.groups.resolve()?;
        for g in &self.grid {
            parse_grid_entry(g, &self.embedding)?;
        }
        for a in &self.ablation {
            parse_removal(a)?;
        }
        if let Some(c) = self.fixed_c {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("fixed_c must be positive"));
            }
        }
        Ok(())
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            seed: self.seed,
            threads: self.embedding.threads.min(crate::embeddings::thread_cap().unwrap_or(usize::MAX)),
            ..self.embedding.clone()
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            seed: self.seed,
            ..self.lda.clone()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            tag_mapping: self.features.tag_mapping,
            lda_infer_iterations: self.lda.infer_iterations,
            seed: self.seed,
        }
    }
}

/// Parses a `dim:window:min_count:negative_samples` sweep entry.
pub fn parse_grid_entry(entry: &str, base: &EmbeddingConfig) -> Result<EmbeddingConfig> {
    let nums: Vec<usize> = entry
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("grid entry {entry:?} is not dim:window:min_count:skip")))?;
    let [dim, window, min_count, negative_samples] = nums[..] else {
        return Err(Error::config(format!("grid entry {entry:?} needs exactly 4 numbers")));
    };
    let cfg = EmbeddingConfig {
        dim,
        window,
        min_count: min_count as u64,
        negative_samples,
        ..base.clone()
    };
    cfg.validate()
        .map_err(|e| Error::config(format!("grid entry {entry:?}: {e}")))?;
    Ok(cfg)
}

/// Outcome of a stage that may skip existing outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Produced {
    pub path: PathBuf,
    pub skipped: bool,
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| Error::config(format!("configuration has no {what} path")))?;
    if !p.exists() {
        return Err(Error::io(
            &p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(p)
}

fn dataset_documents(ds: &Dataset) -> Vec<Vec<String>> {
    let mut docs = Vec::new();
    let push_thread = |t: &crate::corpus::Thread, docs: &mut Vec<Vec<String>>| {
        let mut q = t.question.subject_tokens.clone();
        q.extend(t.question.body_tokens.iter().cloned());
        docs.push(q);
        docs.extend(t.comments.iter().map(|c| c.tokens.clone()));
    };
    match ds {
        Dataset::SubtaskA(ts) => {
            for t in ts {
                push_thread(t, &mut docs);
            }
        }
        Dataset::SubtaskC(ss) => {
            for s in ss {
                let mut q = s.original_question.subject_tokens.clone();
                q.extend(s.original_question.body_tokens.iter().cloned());
                docs.push(q);
                for r in &s.related {
                    push_thread(&r.thread, &mut docs);
                }
            }
        }
    }
    docs.retain(|d| !d.is_empty());
    docs
}

/// Splits a dataset by query: a seeded shuffle, then the first
/// `round(fraction · n)` queries go to the test side.
pub fn split_dataset(ds: Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::DegenerateData("need at least 2 queries to split".into()));
    }
    let n_test = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    fn part<T>(items: Vec<T>, is_test: &[bool]) -> (Vec<T>, Vec<T>) {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, x) in items.into_iter().enumerate() {
            if is_test[i] {
                te.push(x);
            } else {
                tr.push(x);
            }
        }
        (tr, te)
    }
    Ok(match ds {
        Dataset::SubtaskA(ts) => {
            let (a, b) = part(ts, &is_test);
            (Dataset::SubtaskA(a), Dataset::SubtaskA(b))
        }
        Dataset::SubtaskC(ss) => {
            let (a, b) = part(ss, &is_test);
            (Dataset::SubtaskC(a), Dataset::SubtaskC(b))
        }
    })
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn work(&self, rel: &str) -> PathBuf {
        self.config.paths.work_dir.join(rel)
    }

    pub fn tokenizer(&self) -> Result<TokenizerConfig> {
        let base = TokenizerConfig::default();
        let cfg = if !self.config.remove_stopwords {
            TokenizerConfig::without_stopwords()
        } else if let Some(p) = &self.config.paths.stopwords {
            TokenizerConfig {
                stopwords: load_stopwords(p)?,
                ..base
            }
        } else {
            base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Tokenizer for the embedding-training corpus.
    pub fn embedding_tokenizer(&self) -> Result<TokenizerConfig> {
        if self.config.embedding_stopwords {
            self.tokenizer()
        } else {
            Ok(TokenizerConfig::without_stopwords())
        }
    }

    pub fn tokens_path(&self) -> PathBuf {
        self.work("unannotated.tokens.txt")
    }

    pub fn embedding_path(&self, cfg: &EmbeddingConfig) -> PathBuf {
        self.work(&format!("embeddings/sgns_{}.bin", cfg.stamp()))
    }

    fn embedding_stamp(&self, pretrained: Option<&Path>) -> String {
        match pretrained {
            Some(p) => p.file_stem().map_or("pretrained".into(), |s| s.to_string_lossy().into_owned()),
            None => self.config.embedding_config().stamp(),
        }
    }

    pub fn cluster_path_for(&self, stamp: &str) -> PathBuf {
        self.work(&format!("clusters/kmeans_{stamp}_k{}.txt", self.config.kmeans.k))
    }

    pub fn cluster_path(&self) -> PathBuf {
        let src = self
            .config
            .paths
            .cluster_embeddings
            .as_deref()
            .or(self.config.paths.embeddings.as_deref());
        self.cluster_path_for(&self.embedding_stamp(src))
    }

    pub fn lda_path(&self) -> PathBuf {
        self.work(&format!("lda/lda_k{}.txt", self.config.lda.topics))
    }

    pub fn schema_path(&self) -> PathBuf {
        self.work("features/schema.json")
    }

    pub fn matrix_path(&self, split: &str) -> PathBuf {
        self.work(&format!("features/{split}.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.work("model.json")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.work("predictions.tsv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.work("report.json")
    }

    /// Tokenizes the unannotated corpus line by line (one output line per
    /// input line, tokens separated by spaces) with the embedding tokenizer.
    pub fn preprocess(&self) -> Result<Produced> {
        let input = require(&self.config.paths.unannotated, "unannotated corpus")?;
        let tok = self.embedding_tokenizer()?;
        let out = self.tokens_path();
        ensure_dir(&self.config.paths.work_dir)?;
        let f = fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
        let mut buf = String::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&input, e))?;
            buf.push_str(&preprocess(&line, &tok).join(" "));
            buf.push('\n');
        }
        fs::write(&out, buf).map_err(|e| Error::io(&out, e))?;
        Ok(Produced { path: out, skipped: false })
    }

    fn load_split(&self) -> Result<(Dataset, Dataset)> {
        let tok = self.tokenizer()?;
        let train_path = require(&self.config.paths.train, "training dataset")?;
        let mut train = load_dataset(&train_path, self.config.subtask)?;
        train.preprocess(&tok);
        match &self.config.paths.test {
            Some(_) => {
                let test_path = require(&self.config.paths.test, "test dataset")?;
                let mut test = load_dataset(&test_path, self.config.subtask)?;
                test.preprocess(&tok);
                Ok((train, test))
            }
            None => split_dataset(train, self.config.test_fraction, self.config.seed),
        }
    }

    /// Unannotated sentences plus every question and comment of the
    /// annotated data (text only, no labels), tokenized for embedding
    /// training.
    pub fn text_corpus(&self) -> Result<Vec<Vec<String>>> {
        self.corpus_with(&self.embedding_tokenizer()?)
    }

    fn corpus_with(&self, tok: &TokenizerConfig) -> Result<Vec<Vec<String>>> {
        let mut docs: Vec<Vec<String>> = Vec::new();
        let tokens = self.tokens_path();
        if tokens.exists() {
            // the cached file may still hold stopwords
            let text = fs::read_to_string(&tokens).map_err(|e| Error::io(&tokens, e))?;
            docs.extend(
                text.lines()
                    .map(|l| {
                        l.split_whitespace()
                            .filter(|w| !tok.stopwords.contains(*w))
                            .map(String::from)
                            .collect::<Vec<_>>()
                    })
                    .filter(|d| !d.is_empty()),
            );
        } else if self.config.paths.unannotated.is_some() {
            let p = require(&self.config.paths.unannotated, "unannotated corpus")?;
            docs.extend(crate::corpus::read_text_corpus(&p, tok)?);
        }
        for p in [&self.config.paths.train, &self.config.paths.test].into_iter().flatten() {
            let mut ds = load_dataset(p, self.config.subtask)?;
            ds.preprocess(tok);
            docs.extend(dataset_documents(&ds));
        }
        if docs.is_empty() {
            return Err(Error::config("no text available: set paths.unannotated or paths.train"));
        }
        Ok(docs)
    }

    fn embedding_configs(&self) -> Result<Vec<EmbeddingConfig>> {
        let base = self.config.embedding_config();
        if self.config.grid.is_empty() {
            return Ok(vec![base]);
        }
        self.config.grid.iter().map(|g| parse_grid_entry(g, &base)).collect()
    }

    /// Trains one embedding per grid entry (or the configured one), skipping
    /// outputs that already exist unless `force`.
    pub fn train_embeddings(&self, force: bool) -> Result<Vec<Produced>> {
        let configs = self.embedding_configs()?;
        let mut corpus = None;
        let mut out = Vec::new();
        for cfg in configs {
            let path = self.embedding_path(&cfg);
            if path.exists() && !force {
                out.push(Produced { path, skipped: true });
                continue;
            }
            if corpus.is_none() {
                corpus = Some(self.text_corpus()?);
            }
            let model = train_skipgram(corpus.as_ref().unwrap(), &cfg)?;
            ensure_dir(path.parent().unwrap())?;
            model.save_binary(&path)?;
            out.push(Produced { path, skipped: false });
        }
        Ok(out)
    }

    fn load_word2vec(path: &Path) -> Result<EmbeddingModel> {
        if path.extension().is_some_and(|e| e == "bin") {
            EmbeddingModel::load_binary(path)
        } else {
            EmbeddingModel::load_text(path)
        }
    }

    pub fn load_embeddings(&self) -> Result<EmbeddingModel> {
        let path = match &self.config.paths.embeddings {
            Some(_) => require(&self.config.paths.embeddings, "embeddings")?,
            None => self.embedding_path(&self.config.embedding_config()),
        };
        if !path.exists() {
            return Err(Error::config(format!(
                "embeddings {} not found; run train-embeddings first",
                path.display()
            )));
        }
        Self::load_word2vec(&path)
    }

    /// Clusters the configured embedding, or every grid embedding.
    pub fn cluster(&self, force: bool) -> Result<Vec<Produced>> {
        let sources: Vec<(PathBuf, String)> = if let Some(p) = &self.config.paths.cluster_embeddings {
            vec![(p.clone(), self.embedding_stamp(Some(p)))]
        } else if let Some(p) = &self.config.paths.embeddings {
            vec![(p.clone(), self.embedding_stamp(Some(p)))]
        } else {
            self.embedding_configs()?
                .into_iter()
                .map(|c| (self.embedding_path(&c), c.stamp()))
                .collect()
        };
        let mut out = Vec::new();
        for (src, stamp) in sources {
            let path = self.cluster_path_for(&stamp);
            if path.exists() && !force {
                out.push(Produced { path, skipped: true });
                continue;
            }
            if !src.exists() {
                return Err(Error::config(format!(
                    "embeddings {} not found; run train-embeddings first",
                    src.display()
                )));
            }
            let emb = Self::load_word2vec(&src)?;
            let m = kmeans(&emb, self.config.kmeans.k, self.config.kmeans.max_iters, self.config.seed)?;
            ensure_dir(path.parent().unwrap())?;
            m.save(&path)?;
            out.push(Produced { path, skipped: false });
        }
        Ok(out)
    }

    pub fn train_lda(&self, force: bool) -> Result<Produced> {
        let path = self.lda_path();
        if path.exists() && !force {
            return Ok(Produced { path, skipped: true });
        }
        let docs = self.corpus_with(&self.tokenizer()?)?;
        let (model, trace) = train_lda(&docs, &self.config.lda_config())?;
        if let (Some(first), Some(last)) = (trace.log_likelihood.first(), trace.log_likelihood.last()) {
            log::info!(
                "LDA log-likelihood {:.1} at sweep {} -> {:.1} at sweep {}",
                first.1,
                first.0,
                last.1,
                last.0
            );
        }
        ensure_dir(path.parent().unwrap())?;
        model.save(&path)?;
        Ok(Produced { path, skipped: false })
    }

    /// Builds feature matrices for the train and test sides plus the schema.
    pub fn extract(&self) -> Result<(FeatureSchema, usize, usize)> {
        let groups = self.config.features.groups.resolve()?;
        let (train, test) = self.load_split()?;
        let needs_emb = groups.iter().any(|g| g.needs_embeddings());
        let emb = if needs_emb { Some(self.load_embeddings()?) } else { None };
        let clusters = if groups.contains(&FeatureGroup::WordClusters) {
            let p = self.cluster_path();
            if !p.exists() {
                return Err(Error::config(format!("clusters {} not found; run cluster first", p.display())));
            }
            Some(ClusterModel::load(&p)?)
        } else {
            None
        };
        let lda = if groups.contains(&FeatureGroup::LdaSim) {
            let p = self.lda_path();
            if !p.exists() {
                return Err(Error::config(format!("LDA model {} not found; run train-lda first", p.display())));
            }
            Some(LdaModel::load(&p)?)
        } else {
            None
        };
        let tagset = self.config.features.tagset.clone().unwrap_or_else(default_tagset);
        let schema = FeatureSchema::new(
            &groups,
            emb.as_ref().map_or(0, |e| e.dim()),
            &tagset,
            &train.categories(),
        )?;
        let models = FeatureModels {
            embeddings: emb.as_ref(),
            clusters: clusters.as_ref(),
            lda: lda.as_ref(),
        };
        let ex = Extractor::new(schema.clone(), models, self.config.extract_options())?;
        let train_rows = ex.extract_dataset(&train);
        let test_rows = ex.extract_dataset(&test);
        ensure_dir(&self.work("features"))?;
        schema.save(self.schema_path())?;
        write_matrix(self.matrix_path("train"), &schema, &train_rows)?;
        write_matrix(self.matrix_path("test"), &schema, &test_rows)?;
        Ok((schema, train_rows.len(), test_rows.len()))
    }

    fn load_features(&self, split: &str) -> Result<(FeatureSchema, Vec<crate::features::FeatureRow>)> {
        let sp = self.schema_path();
        if !sp.exists() {
            return Err(Error::config("feature schema not found; run extract first"));
        }
        let schema = FeatureSchema::load(&sp)?;
        let rows = read_matrix(self.matrix_path(split), &schema)?;
        Ok((schema, rows))
    }

    /// Fits the classifier; the cost comes from `fixed_c` or
    /// cross-validation.
    pub fn train(&self) -> Result<(LogRegModel, Option<CvResult>)> {
        let (schema, rows) = self.load_features("train")?;
        let opts = self.config.train_options();
        let y: Vec<bool> = rows
            .iter()
            .map(|r| {
                r.label
                    .map(Label::is_good)
                    .ok_or_else(|| Error::integrity(format!("training comment {} has no label", r.comment_id)))
            })
            .collect::<Result<_>>()?;
        let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
        let (c, cv) = match self.config.fixed_c {
            Some(c) => (c, None),
            None => {
                let scaler = crate::features::fit_scaler(&raw);
                let x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
                let cv = cross_validate_c(&x, &y, &opts)?;
                (cv.best_c, Some(cv))
            }
        };
        let model = fit_scaled(&raw, &y, c, &opts, &schema.hash())?;
        model.save(self.model_path())?;
        if let Some(cv) = &cv {
            let p = self.work("cv.json");
            fs::write(&p, serde_json::to_string_pretty(cv)? + "\n").map_err(|e| Error::io(&p, e))?;
        }
        Ok((model, cv))
    }

    /// Scores the test matrix and writes the prediction file. Refuses to
    /// run when the model was trained on a different schema.
    pub fn predict(&self) -> Result<PathBuf> {
        let mp = self.model_path();
        if !mp.exists() {
            return Err(Error::config("no trained model found; run train first"));
        }
        let model = LogRegModel::load(&mp)?;
        let (schema, rows) = self.load_features("test")?;
        if model.schema_hash != schema.hash() {
            return Err(Error::integrity(
                "model was trained on a different feature schema; re-run train",
            ));
        }
        if model.dim() != schema.len() {
            return Err(Error::integrity("model dimension does not match the feature schema"));
        }
        let probs = predict_rows(&model, &rows);
        let combiner = self.config.combiner.build();
        let lists = rank_rows(&rows, &probs, self.config.subtask, combiner.as_ref());
        let out = self.predictions_path();
        save_predictions(&out, &lists)?;
        Ok(out)
    }

    /// Scores the prediction file against the gold labels of the test
    /// matrix and writes the JSON report.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let pp = self.predictions_path();
        if !pp.exists() {
            return Err(Error::config("no predictions found; run predict first"));
        }
        let lines = read_predictions(&pp)?;
        let (_, rows) = self.load_features("test")?;
        let gold: BTreeMap<(String, String), Label> = rows
            .iter()
            .filter_map(|r| r.label.map(|l| ((r.query_id.clone(), r.comment_id.clone()), l)))
            .collect();
        let lists = lists_from_predictions(&lines, &gold);
        let report = evaluate(&lists, self.config.eval)?;
        let rp = self.report_path();
        fs::write(&rp, report.to_json()? + "\n").map_err(|e| Error::io(&rp, e))?;
        Ok(report)
    }

    /// Retrains and evaluates once per removal set (the all-features row is
    /// always included) and writes the table.
    pub fn ablate(&self) -> Result<(Vec<AblationRow>, String)> {
        let (schema, train) = self.load_features("train")?;
        let (_, test) = self.load_features("test")?;
        let mut sets = vec![Default::default()];
        for a in &self.config.ablation {
            let s = parse_removal(a)?;
            if !sets.contains(&s) {
                sets.push(s);
            }
        }
        let opts = self.config.train_options();
        let setup = AblationSetup {
            schema: &schema,
            train: &train,
            test: &test,
            subtask: self.config.subtask,
            train_options: &opts,
            fixed_c: self.config.fixed_c,
            eval: self.config.eval,
            combiner: self.config.combiner.clone(),
        };
        let rows = ablation_run(&setup, &sets)?;
        let table = format_table(&rows);
        let tp = self.work("ablation.txt");
        fs::write(&tp, &table).map_err(|e| Error::io(&tp, e))?;
        let jp = self.work("ablation.json");
        fs::write(&jp, serde_json::to_string_pretty(&rows)? + "\n").map_err(|e| Error::io(&jp, e))?;
        Ok((rows, table))
    }

    /// Every stage in order; returns the evaluation report.
    pub fn run_all(&self) -> Result<EvalReport> {
        let groups = self.config.features.groups.resolve()?;
        if self.config.paths.unannotated.is_some() {
            self.preprocess()?;
        }
        let wants_vectors = groups.iter().any(|g| g.needs_embeddings())
            || groups.contains(&FeatureGroup::WordClusters) && self.config.paths.cluster_embeddings.is_none();
        if wants_vectors && self.config.paths.embeddings.is_none() {
            self.train_embeddings(false)?;
        }
        if groups.contains(&FeatureGroup::WordClusters) {
            self.cluster(false)?;
        }
        if groups.contains(&FeatureGroup::LdaSim) {
            self.train_lda(false)?;
        }
        self.extract()?;
        self.train()?;
        self.predict()?;
        self.evaluate()
    }
}

/// Writes a synthetic dataset (`synth.jsonl`), its unannotated corpus
/// (`synth.unannotated.txt`) and a matching pipeline configuration
/// (`config.json`) into `out_dir`.
pub fn cmd_synth(
    seed: u64,
    n_threads: usize,
    out_dir: impl AsRef<Path>,
    signal: Signal,
    format: DatasetFormat,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let out_dir = out_dir.as_ref();
    let data = generate(&SynthConfig {
        threads: n_threads,
        seed,
        signal,
        format,
        ..Default::default()
    })?;
    let (ds, text) = data.save(out_dir, "synth")?;
    let cfg = synth_pipeline_config(&ds, &text, &out_dir.join("work"), seed, format);
    let cp = out_dir.join("config.json");
    let mut f = fs::File::create(&cp).map_err(|e| Error::io(&cp, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&cp, e))?;
    Ok((ds, text, cp))
}

/// A configuration sized for the synthetic corpus.
pub fn synth_pipeline_config(
    dataset: &Path,
    unannotated: &Path,
    work_dir: &Path,
    seed: u64,
    format: DatasetFormat,
) -> PipelineConfig {
    PipelineConfig {
        paths: Paths {
            train: Some(dataset.to_path_buf()),
            unannotated: Some(unannotated.to_path_buf()),
            work_dir: work_dir.to_path_buf(),
            ..Default::default()
        },
        subtask: format,
        seed,
        embedding: EmbeddingConfig {
            dim: 30,
            window: 5,
            min_count: 2,
            epochs: 5,
            ..Default::default()
        },
        kmeans: KMeansConfig { k: 20, max_iters: 50 },
        lda: LdaConfig {
            topics: 10,
            alpha: Some(0.5),
            iterations: 100,
            infer_iterations: 20,
            ..Default::default()
        },
        ablation: FeatureGroup::ALL.iter().map(|g| g.key().to_string()).collect(),
        ..Default::default()
    }
}

/// One-line summary of produced files.
pub fn describe(produced: &[Produced]) -> String {
    let mut s = String::new();
    for p in produced {
        let verb = if p.skipped { "kept existing" } else { "wrote" };
        let _ = writeln!(s, "{verb} {}", p.path.display());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"seed": 3}"#,
            &[
                ("embedding.dim".into(), "20".into()),
                ("paths.work_dir".into(), "/tmp/x".into()),
                ("features.groups".into(), "primary-submission".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.embedding.dim, 20);
        assert_eq!(cfg.embedding_config().seed, 3);
        assert_eq!(cfg.paths.work_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.features.groups.resolve().unwrap().len(), 7);
        assert!(matches!(PipelineConfig::from_json(r#"{"bogus": 1}"#, &[]), Err(Error::Config(_))));
        assert!(matches!(
            PipelineConfig::from_json("{}", &[("grid".into(), r#"["1:2:3"]"#.into())]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn grid_entries() {
        let base = EmbeddingConfig::default();
        let c = parse_grid_entry("200:10:5:3", &base).unwrap();
        assert_eq!((c.dim, c.window, c.min_count, c.negative_samples), (200, 10, 5, 3));
        assert!(parse_grid_entry("0:10:5:3", &base).is_err());
        assert!(parse_grid_entry("a:b", &base).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let data = generate(&SynthConfig { threads: 10, ..Default::default() }).unwrap();
        let (a, b) = split_dataset(data.dataset.clone(), 0.3, 5).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, _) = split_dataset(data.dataset, 0.3, 5).unwrap();
        assert_eq!(a, a2);
    }
}
