//! K-means over word vectors and cluster-bag similarity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_similarity, EmbeddingModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            max_iters: 100,
        }
    }
}

/// Result of clustering a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Row-major k x dim centroids.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    /// Inertia after every assignment step, starting with the assignment to
    /// the initial centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ start.
///
/// `points` is row-major `n x dim`. Points are processed in lexicographic
/// order internally, so permuting the input changes at most the cluster
/// labels, never the partition.
pub fn kmeans_points(points: &[f64], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::config("point matrix does not match dimension"));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} must be in 1..={n}")));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(row(a), row(b)));
    let sorted: Vec<f64> = order.iter().flat_map(|&i| row(i).iter().copied()).collect();
    let srow = |i: usize| &sorted[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(srow(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(srow(i), srow(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > u && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(srow(pick));
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(srow(i), srow(pick)));
        }
    }

    let assign = |centroids: &[f64]| -> Vec<(usize, f64)> {
        (0..n)
            .into_par_iter()
            .map(|i| nearest(srow(i), centroids, dim))
            .collect()
    };

    let mut assigned = assign(&centroids);
    let mut labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    let mut history = vec![assigned.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        // update step
        let mut sums = vec![0.0; k * dim];
        let mut sizes = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sizes[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(srow(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                for d in 0..dim {
                    centroids[j * dim + d] = sums[j * dim + d] / sizes[j] as f64;
                }
            }
        }
        // repair empty clusters with the point farthest from its centroid
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[labels[i]] > 1)
                .map(|i| (i, sq_dist(srow(i), &centroids[labels[i] * dim..(labels[i] + 1) * dim])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((i, _)) = far {
                sizes[labels[i]] -= 1;
                sizes[j] = 1;
                labels[i] = j;
                centroids[j * dim..(j + 1) * dim].copy_from_slice(srow(i));
            }
        }

        assigned = assign(&centroids);
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        history.push(assigned.iter().map(|a| a.1).sum());
        let changed = new_labels != labels;
        labels = new_labels;
        if !changed {
            break;
        }
    }

    if centroids.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("k-means produced non-finite centroids".into()));
    }

    let mut out_labels = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        out_labels[orig] = labels[pos];
    }
    Ok(KMeansResult {
        centroids,
        labels: out_labels,
        inertia_history: history,
        iterations,
    })
}

/// Word-to-cluster assignment over an embedding vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major k x dim centroids; empty for models read from a cluster
    /// file, which stores assignments only.
    pub centroids: Vec<f64>,
    pub assignment: IndexMap<String, usize>,
}

/// Sparse per-cluster token counts.
pub type ClusterBag = BTreeMap<usize, u32>;

/// Clusters every vocabulary word of `model` into `k` groups.
pub fn kmeans(model: &EmbeddingModel, k: usize, max_iters: usize, seed: u64) -> Result<ClusterModel> {
    if k > model.len() {
        return Err(Error::config(format!(
            "k = {k} exceeds vocabulary size {}",
            model.len()
        )));
    }
    let points: Vec<f64> = model.vectors().iter().map(|&x| x as f64).collect();
    let result = kmeans_points(&points, model.dim(), k, max_iters, seed)?;
    let assignment = model
        .vocabulary()
        .words()
        .iter()
        .cloned()
        .zip(result.labels.iter().copied())
        .collect();
    Ok(ClusterModel {
        k,
        dim: model.dim(),
        centroids: result.centroids,
        assignment,
    })
}

impl ClusterModel {
    pub fn cluster_of(&self, word: &str) -> Option<usize> {
        self.assignment.get(word).copied()
    }

    /// Counts tokens per cluster; unknown tokens are skipped.
    pub fn bag<S: AsRef<str>>(&self, tokens: &[S]) -> ClusterBag {
        cluster_bag(tokens, self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| Error::io(path, e))
    }

    /// Header `k dim`, then one `word<TAB>cluster_id` line per word.
    pub fn write(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{} {}", self.k, self.dim)?;
        for (word, c) in &self.assignment {
            writeln!(w, "{word}\t{c}")?;
        }
        w.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("cluster file: missing header"))?
            .map_err(|e| Error::format(e.to_string()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(format!("cluster file: bad header {header:?}")))?;
        let [k, dim] = nums[..] else {
            return Err(Error::format(format!("cluster file: bad header {header:?}")));
        };
        let mut assignment = IndexMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let (word, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(format!("cluster file line {}: expected word<TAB>id", i + 2)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("cluster file line {}: bad cluster id", i + 2)))?;
            if id >= k {
                return Err(Error::format(format!(
                    "cluster file line {}: cluster {id} out of range for k = {k}",
                    i + 2
                )));
            }
            if assignment.insert(word.to_string(), id).is_some() {
                return Err(Error::format(format!("cluster file: duplicate word {word:?}")));
            }
        }
        Ok(Self {
            k,
            dim,
            centroids: Vec::new(),
            assignment,
        })
    }
}

pub fn cluster_bag<S: AsRef<str>>(tokens: &[S], model: &ClusterModel) -> ClusterBag {
    let mut bag = ClusterBag::new();
    for t in tokens {
        if let Some(c) = model.cluster_of(t.as_ref()) {
            *bag.entry(c).or_default() += 1;
        }
    }
    bag
}

/// Cosine similarity of two sparse count vectors; 0 if either is empty.
pub fn cluster_similarity(a: &ClusterBag, b: &ClusterBag) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let keys: std::collections::BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    let u: Vec<f64> = keys.iter().map(|k| *a.get(k).unwrap_or(&0) as f64).collect();
    let v: Vec<f64> = keys.iter().map(|k| *b.get(k).unwrap_or(&0) as f64).collect();
    cosine_similarity(&u, &v)
}
