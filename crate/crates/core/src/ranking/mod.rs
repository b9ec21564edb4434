//! Rankings, MAP/accuracy evaluation and prediction files.

pub mod ablation;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetFormat, Label};
use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::model::{predict_good, LogRegModel};

pub use ablation::{ablation_run, format_table, AblationRow, AblationSetup};

/// One comment with its model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub thread_id: String,
    pub comment_id: String,
    pub search_rank: u32,
    pub rank_in_thread: u32,
    /// Probability of the Good class.
    pub prob: f64,
    /// Ranking score: `prob` for subtask A, combined for subtask C.
    pub score: f64,
    pub gold: Option<Label>,
}

impl RankedItem {
    pub fn predicted_good(&self) -> bool {
        predict_good(self.prob)
    }
}

/// Comments of one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub items: Vec<RankedItem>,
}

/// Sorts by score, descending; ties keep the original order
/// (search rank, then position in the thread).
pub fn rank_thread(query_id: &str, mut items: Vec<RankedItem>) -> RankedList {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.search_rank.cmp(&b.search_rank))
            .then(a.rank_in_thread.cmp(&b.rank_in_thread))
    });
    RankedList {
        query_id: query_id.to_string(),
        items,
    }
}

/// Merges a comment's Good probability with the search rank of its
/// related thread.
pub trait SubtaskCCombiner: Send + Sync {
    fn combine(&self, prob_good: f64, search_rank: u32) -> f64;
}

/// `prob × 1/search_rank`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Product;

impl SubtaskCCombiner for Product {
    fn combine(&self, prob_good: f64, search_rank: u32) -> f64 {
        assert!(search_rank >= 1, "search rank must be at least 1");
        prob_good / search_rank as f64
    }
}

/// `weight × prob + (1 − weight) × 1/search_rank`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSum {
    pub weight: f64,
}

impl SubtaskCCombiner for WeightedSum {
    fn combine(&self, prob_good: f64, search_rank: u32) -> f64 {
        assert!(search_rank >= 1, "search rank must be at least 1");
        self.weight * prob_good + (1.0 - self.weight) / search_rank as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    #[default]
    Product,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinerConfig {
    pub kind: CombinerKind,
    /// Probability weight for the weighted sum.
    pub weight: f64,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            kind: CombinerKind::Product,
            weight: 0.5,
        }
    }
}

impl CombinerConfig {
    pub fn build(&self) -> Box<dyn SubtaskCCombiner> {
        match self.kind {
            CombinerKind::Product => Box::new(Product),
            CombinerKind::WeightedSum => Box::new(WeightedSum { weight: self.weight }),
        }
    }
}

/// Subtask C score with the default product rule.
pub fn subtask_c_score(prob_good: f64, search_rank: u32) -> f64 {
    Product.combine(prob_good, search_rank)
}

/// Scores rows and groups them into ranked lists, one per query in order of
/// first appearance.
pub fn rank_rows(
    rows: &[FeatureRow],
    probs: &[f64],
    subtask: DatasetFormat,
    combiner: &dyn SubtaskCCombiner,
) -> Vec<RankedList> {
    assert_eq!(rows.len(), probs.len(), "one probability per row");
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<RankedItem>> = HashMap::new();
    for (r, &p) in rows.iter().zip(probs) {
        let score = match subtask {
            DatasetFormat::SubtaskA => p,
            DatasetFormat::SubtaskC => combiner.combine(p, r.search_rank),
        };
        let entry = groups.entry(&r.query_id).or_insert_with(|| {
            order.push(&r.query_id);
            Vec::new()
        });
        entry.push(RankedItem {
            thread_id: r.thread_id.clone(),
            comment_id: r.comment_id.clone(),
            search_rank: r.search_rank,
            rank_in_thread: r.rank,
            prob: p,
            score,
            gold: r.label,
        });
    }
    order
        .into_iter()
        .map(|q| rank_thread(q, groups.remove(q).unwrap()))
        .collect()
}

/// Probabilities for raw (unscaled) rows.
pub fn predict_rows(model: &LogRegModel, rows: &[FeatureRow]) -> Vec<f64> {
    rows.par_iter().map(|r| model.predict_raw(&r.values)).collect()
}

/// Average precision of a relevance vector in ranked order; `None` when
/// nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

fn relevance(list: &RankedList) -> Result<Vec<bool>> {
    list.items
        .iter()
        .map(|it| {
            it.gold.map(Label::is_good).ok_or_else(|| {
                Error::integrity(format!(
                    "comment {} of query {} has no gold label",
                    it.comment_id, list.query_id
                ))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Queries without any Good comment count as AP 0 instead of being
    /// skipped.
    pub include_empty_queries: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    /// `None` for queries without Good comments.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub acc: f64,
    pub per_query: Vec<QueryScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_ap(aps: &[Option<f64>], opts: EvalOptions) -> Result<f64> {
    let used: Vec<f64> = aps
        .iter()
        .filter_map(|ap| match ap {
            Some(v) => Some(*v),
            None if opts.include_empty_queries => Some(0.0),
            None => None,
        })
        .collect();
    if used.is_empty() {
        return Err(Error::DegenerateData("no query has a Good comment".into()));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

pub fn map_score(lists: &[RankedList], opts: EvalOptions) -> Result<f64> {
    let aps = lists
        .par_iter()
        .map(|l| relevance(l).map(|r| average_precision(&r)))
        .collect::<Result<Vec<_>>>()?;
    mean_ap(&aps, opts)
}

/// Fraction of positions where the prediction matches the gold label.
pub fn accuracy(predicted: &[bool], gold: &[bool]) -> Result<f64> {
    assert_eq!(predicted.len(), gold.len(), "prediction/gold length mismatch");
    if gold.is_empty() {
        return Err(Error::DegenerateData("accuracy over an empty set".into()));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn evaluate(lists: &[RankedList], opts: EvalOptions) -> Result<EvalReport> {
    let rel = lists
        .par_iter()
        .map(relevance)
        .collect::<Result<Vec<_>>>()?;
    let per_query: Vec<QueryScore> = lists
        .iter()
        .zip(&rel)
        .map(|(l, r)| QueryScore {
            query_id: l.query_id.clone(),
            ap: average_precision(r),
        })
        .collect();
    let aps: Vec<Option<f64>> = per_query.iter().map(|q| q.ap).collect();
    let map = mean_ap(&aps, opts)?;
    let predicted: Vec<bool> = lists
        .iter()
        .flat_map(|l| l.items.iter().map(RankedItem::predicted_good))
        .collect();
    let gold: Vec<bool> = rel.into_iter().flatten().collect();
    Ok(EvalReport {
        map,
        acc: accuracy(&predicted, &gold)?,
        per_query,
    })
}

/// Mean MAP over `shuffles` uniformly random orderings of every list.
pub fn random_baseline_map(lists: &[RankedList], shuffles: usize, seed: u64, opts: EvalOptions) -> Result<f64> {
    let rel = lists.iter().map(relevance).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..shuffles {
        let aps: Vec<Option<f64>> = rel
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.shuffle(&mut rng);
                average_precision(&r)
            })
            .collect();
        total += mean_ap(&aps, opts)?;
    }
    Ok(total / shuffles.max(1) as f64)
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLine {
    pub query_id: String,
    pub comment_id: String,
    pub rank: usize,
    pub score: f64,
    pub good: bool,
}

/// Writes `query_id\tcomment_id\trank\tscore\tlabel` lines, rank 1-based
/// within the query, score with six decimals.
pub fn write_predictions(w: &mut impl Write, lists: &[RankedList]) -> std::io::Result<()> {
    for l in lists {
        for (i, it) in l.items.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}\t{}",
                l.query_id,
                it.comment_id,
                i + 1,
                it.score,
                it.predicted_good()
            )?;
        }
    }
    Ok(())
}

pub fn save_predictions(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_predictions(&mut buf, lists).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionLine>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Schema {
            line: n + 1,
            message: format!("{what} in prediction line {line:?}"),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        out.push(PredictionLine {
            query_id: cols[0].to_string(),
            comment_id: cols[1].to_string(),
            rank: cols[2].parse().map_err(|_| bad("bad rank"))?,
            score: cols[3].parse().map_err(|_| bad("bad score"))?,
            good: cols[4].parse().map_err(|_| bad("bad label"))?,
        });
    }
    Ok(out)
}

/// Rebuilds ranked lists from prediction lines (ordered by their rank
/// column) and attaches gold labels keyed by `(query_id, comment_id)`.
pub fn lists_from_predictions(
    lines: &[PredictionLine],
    gold: &BTreeMap<(String, String), Label>,
) -> Vec<RankedList> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&PredictionLine>> = HashMap::new();
    for l in lines {
        groups
            .entry(&l.query_id)
            .or_insert_with(|| {
                order.push(&l.query_id);
                Vec::new()
            })
            .push(l);
    }
    order
        .into_iter()
        .map(|q| {
            let mut ls = groups.remove(q).unwrap();
            ls.sort_by_key(|l| l.rank);
            RankedList {
                query_id: q.to_string(),
                items: ls
                    .into_iter()
                    .map(|l| RankedItem {
                        thread_id: String::new(),
                        comment_id: l.comment_id.clone(),
                        search_rank: 1,
                        rank_in_thread: l.rank as u32,
                        prob: if l.good { 1.0 } else { 0.0 },
                        score: l.score,
                        gold: gold.get(&(l.query_id.clone(), l.comment_id.clone())).copied(),
                    })
                    .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(cid: &str, rank: u32, score: f64, gold: Label) -> RankedItem {
        RankedItem {
            thread_id: "T".into(),
            comment_id: cid.into(),
            search_rank: 1,
            rank_in_thread: rank,
            prob: score,
            score,
            gold: Some(gold),
        }
    }

    #[test]
    fn rank_thread_examples() {
        let r = rank_thread("q", vec![item("c1", 1, 0.1, Label::Bad), item("c2", 2, 0.9, Label::Good)]);
        assert_eq!(r.items[0].comment_id, "c2");
        let r = rank_thread("q", vec![item("c2", 2, 0.5, Label::Bad), item("c1", 1, 0.5, Label::Bad)]);
        assert_eq!(r.items[0].comment_id, "c1");
        assert_eq!(rank_thread("q", vec![item("c", 1, 0.3, Label::Bad)]).items.len(), 1);
    }

    #[test]
    fn subtask_c_examples() {
        assert_eq!(subtask_c_score(0.8, 1), 0.8);
        assert!((subtask_c_score(0.8, 4) - 0.2).abs() < 1e-15);
        assert_eq!(subtask_c_score(0.0, 7), 0.0);
        assert_eq!(WeightedSum { weight: 1.0 }.combine(0.3, 5), 0.3);
    }

    #[test]
    #[should_panic(expected = "search rank")]
    fn subtask_c_rank_zero_panics() {
        subtask_c_score(0.5, 0);
    }

    #[test]
    fn map_examples() {
        let l = |labels: &[Label]| RankedList {
            query_id: "q".into(),
            items: labels
                .iter()
                .enumerate()
                .map(|(i, &g)| item(&format!("c{i}"), i as u32 + 1, 1.0 - i as f64 / 10.0, g))
                .collect(),
        };
        let opts = EvalOptions::default();
        assert_eq!(map_score(&[l(&[Label::Good, Label::Bad])], opts).unwrap(), 1.0);
        assert_eq!(map_score(&[l(&[Label::Bad, Label::Good])], opts).unwrap(), 0.5);
        let both = [l(&[Label::Good, Label::Bad]), l(&[Label::PotentiallyUseful, Label::Good])];
        assert_eq!(map_score(&both, opts).unwrap(), 0.75);
        let with_empty = [l(&[Label::Good]), l(&[Label::Bad])];
        assert_eq!(map_score(&with_empty, opts).unwrap(), 1.0);
        let incl = EvalOptions { include_empty_queries: true };
        assert_eq!(map_score(&with_empty, incl).unwrap(), 0.5);
        let mut missing = l(&[Label::Good]);
        missing.items[0].gold = None;
        assert!(matches!(map_score(&[missing], opts), Err(Error::Integrity(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(accuracy(&[true, true], &[true, false]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn prediction_file_round_trip() {
        let lists = vec![rank_thread(
            "Q1",
            vec![item("Q1_C1", 1, 0.25, Label::Bad), item("Q1_C2", 2, 0.875, Label::Good)],
        )];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &lists).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "Q1\tQ1_C2\t1\t0.875000\ttrue\nQ1\tQ1_C1\t2\t0.250000\tfalse\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.tsv");
        fs::write(&p, &buf).unwrap();
        let lines = read_predictions(&p).unwrap();
        let back = lists_from_predictions(&lines, &BTreeMap::new());
        let ids: Vec<&str> = back[0].items.iter().map(|i| i.comment_id.as_str()).collect();
        assert_eq!(ids, ["Q1_C2", "Q1_C1"]);
    }
}
