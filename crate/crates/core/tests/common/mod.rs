//! Generators and slow-but-sure oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sentences drawn from two disjoint 10-word vocabularies
/// (`alphaa..alphaj`, `betaa..betaj`), one cluster per sentence.
pub fn two_cluster_corpus(sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    (0..sentences)
        .map(|i| {
            let prefix = if i % 2 == 0 { "alpha" } else { "beta" };
            let len = r.gen_range(6..=12);
            (0..len)
                .map(|_| format!("{prefix}{}", letter_index(r.gen_range(0..10))))
                .collect()
        })
        .collect()
}

/// Letters-only spelling of `i`: `a..z`, then `ba, bb, ...`.
pub fn letter_index(i: usize) -> String {
    let ch = |d: usize| (b'a' + d as u8) as char;
    if i < 26 {
        ch(i).to_string()
    } else {
        format!("{}{}", letter_index(i / 26), ch(i % 26))
    }
}

/// Documents from two topics with disjoint vocabularies; returns the
/// documents and the generating topic of each.
pub fn two_topic_corpus(docs: usize, len: usize, vocab: usize, seed: u64) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut topics = Vec::new();
    for d in 0..docs {
        let t = d % 2;
        let prefix = ["sun", "rain"][t];
        out.push(
            (0..len)
                .map(|_| format!("{prefix}{}", letter_index(r.gen_range(0..vocab))))
                .collect(),
        );
        topics.push(t);
    }
    (out, topics)
}

/// Row-major 2-D points from two Gaussian-ish blobs whose centers are
/// `separation` apart (unit spread). Returns points and blob labels.
pub fn two_blobs(n_per: usize, separation: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for b in 0..2 {
        for _ in 0..n_per {
            let cx = b as f64 * separation;
            pts.push(cx + r.gen_range(-0.5..0.5));
            pts.push(r.gen_range(-0.5..0.5));
            labels.push(b);
        }
    }
    (pts, labels)
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Labels with both classes present.
pub fn random_labels(n: usize, r: &mut ChaCha8Rng) -> Vec<bool> {
    loop {
        let y: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        if y.iter().any(|&v| v) && y.iter().any(|&v| !v) {
            return y;
        }
    }
}

/// Average precision by explicit counting at each relevant position.
pub fn brute_force_ap(relevant: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = (0..relevant.len()).filter(|&i| relevant[i]).collect();
    if positions.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &k in &positions {
        let mut above = 0usize;
        for j in 0..=k {
            if relevant[j] {
                above += 1;
            }
        }
        total += above as f64 / (k + 1) as f64;
    }
    Some(total / positions.len() as f64)
}

/// Independent logistic objective `½‖w‖² + C Σ log(1+exp(−y(w·x+b)))`
/// with an unregularized intercept; parameters `[w.., b]`.
pub fn oracle_objective(x: &[Vec<f64>], y: &[bool], c: f64, theta: &[f64]) -> f64 {
    let d = theta.len() - 1;
    let mut f = 0.0;
    for j in 0..d {
        f += 0.5 * theta[j] * theta[j];
    }
    for (row, &lab) in x.iter().zip(y) {
        let s = if lab { 1.0 } else { -1.0 };
        let mut z = theta[d];
        for j in 0..d {
            z += theta[j] * row[j];
        }
        let m = s * z;
        // log(1 + e^-m), written out for both signs
        f += c * if m > 0.0 { (1.0 + (-m).exp()).ln() } else { -m + (1.0 + m.exp()).ln() };
    }
    f
}

pub fn oracle_gradient(x: &[Vec<f64>], y: &[bool], c: f64, theta: &[f64]) -> Vec<f64> {
    let d = theta.len() - 1;
    let mut g: Vec<f64> = theta.to_vec();
    g[d] = 0.0;
    for (row, &lab) in x.iter().zip(y) {
        let s = if lab { 1.0 } else { -1.0 };
        let mut z = theta[d];
        for j in 0..d {
            z += theta[j] * row[j];
        }
        let coef = -c * s / (1.0 + (s * z).exp());
        for j in 0..d {
            g[j] += coef * row[j];
        }
        g[d] += coef;
    }
    g
}

/// Plain gradient descent with step `1/L` run to a tiny gradient norm.
pub fn gradient_descent_oracle(x: &[Vec<f64>], y: &[bool], c: f64) -> Vec<f64> {
    let d = x[0].len();
    // L ≤ 1 + C/4 · ‖[X 1]‖_F²
    let frob: f64 = x.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).sum();
    let step = 1.0 / (1.0 + 0.25 * c * frob);
    let mut theta = vec![0.0; d + 1];
    for _ in 0..2_000_000 {
        let g = oracle_gradient(x, y, c, &theta);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-11 {
            break;
        }
        for j in 0..=d {
            theta[j] -= step * g[j];
        }
    }
    theta
}
