//! Recognition scores: top-k accuracy, one-vs-rest ROC AUC and AP over
//! class scores, and retrieval AP over embedding distances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::formats::EmbeddingSet;

/// M×C class scores with ground-truth class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: Vec<String>,
    scores: Vec<f64>,
    labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(classes: Vec<String>, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let c = classes.len();
        if c == 0 || scores.len() != c * labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} rows x {c} classes",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("label index {bad} out of range for {c} classes")));
        }
        Ok(ScoreMatrix {
            classes,
            scores,
            labels,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.classes.len();
        &self.scores[i * c..(i + 1) * c]
    }

    fn column(&self, class: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i)[class]).collect()
    }
}

/// Fraction of rows whose true class ranks within the top `k`; equal scores
/// rank by class order.
pub fn topk_accuracy(scores: &ScoreMatrix, k: usize) -> Result<f64> {
    let c = scores.classes.len();
    if k == 0 || k > c {
        return Err(Error::InvalidArgument(format!("k must lie in [1, {c}], got {k}")));
    }
    if scores.rows() == 0 {
        return Err(Error::Metric("no rows to score".into()));
    }
    let hits = (0..scores.rows())
        .filter(|&i| {
            let row = scores.row(i);
            let t = scores.labels[i];
            let rank = (0..c)
                .filter(|&j| row[j] > row[t] || (row[j] == row[t] && j < t))
                .count();
            rank < k
        })
        .count();
    Ok(hits as f64 / scores.rows() as f64)
}

/// Macro-averaged score with per-class detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAveraged {
    pub value: f64,
    pub per_class: BTreeMap<String, f64>,
    /// Classes left out because they had no positives (or no negatives).
    pub skipped: Vec<String>,
}

fn per_class(scores: &ScoreMatrix, f: impl Fn(&[f64], &[bool]) -> f64) -> Result<ClassAveraged> {
    let mut present: Vec<usize> = scores.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Metric("at least two classes must be present".into()));
    }
    let mut out = BTreeMap::new();
    let mut skipped = Vec::new();
    for (c, name) in scores.classes.iter().enumerate() {
        let positive: Vec<bool> = scores.labels.iter().map(|&l| l == c).collect();
        let p = positive.iter().filter(|&&b| b).count();
        if p == 0 || p == positive.len() {
            skipped.push(name.clone());
            continue;
        }
        out.insert(name.clone(), f(&scores.column(c), &positive));
    }
    let value = out.values().sum::<f64>() / out.len() as f64;
    Ok(ClassAveraged {
        value,
        per_class: out,
        skipped,
    })
}

/// One-vs-rest AUC via the Mann–Whitney statistic with mid-ranks.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let np = positive.iter().filter(|&&b| b).count() as f64;
    let nn = positive.len() as f64 - np;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

pub fn roc_auc_macro(scores: &ScoreMatrix) -> Result<ClassAveraged> {
    per_class(scores, binary_auc)
}

/// Sum of precision at each positive, in descending score order (row
/// order on ties), over the number of positives.
fn binary_ap(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / hits as f64
}

pub fn classification_ap(scores: &ScoreMatrix) -> Result<ClassAveraged> {
    per_class(scores, binary_ap)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Row-major M×M Euclidean distance matrix.
pub fn pairwise_distances(emb: &EmbeddingSet) -> Vec<f64> {
    let m = emb.len();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = l2(emb.vector(i), emb.vector(j));
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    d
}

/// AP of one probe against every other vector. The gallery is ranked by
/// distance, ties by instance id; AP is normalized by the number of
/// same-class gallery entries.
pub fn retrieval_ap(probe: usize, emb: &EmbeddingSet) -> Result<f64> {
    if probe >= emb.len() {
        return Err(Error::InvalidArgument(format!("probe {probe} out of range")));
    }
    let q = emb.vector(probe);
    let mut gallery: Vec<(f64, &str, bool)> = (0..emb.len())
        .filter(|&i| i != probe)
        .map(|i| (l2(q, emb.vector(i)), emb.ids()[i].as_str(), emb.labels()[i] == emb.labels()[probe]))
        .collect();
    gallery.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, g) in gallery.iter().enumerate() {
        if g.2 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAp(emb.ids()[probe].clone()));
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapReport {
    pub value: f64,
    pub probes: usize,
    /// Probes left out because their class has no other member.
    pub excluded: Vec<String>,
}

/// Retrieval AP averaged over every vector as probe.
pub fn mean_rap(emb: &EmbeddingSet) -> Result<RapReport> {
    let results: Vec<(usize, Result<f64>)> = (0..emb.len())
        .into_par_iter()
        .map(|i| (i, retrieval_ap(i, emb)))
        .collect();
    let mut sum = 0.0;
    let mut probes = 0;
    let mut excluded = Vec::new();
    for (i, r) in results {
        match r {
            Ok(ap) => {
                sum += ap;
                probes += 1;
            }
            Err(Error::UndefinedAp(_)) => excluded.push(emb.ids()[i].clone()),
            Err(e) => return Err(e),
        }
    }
    if probes == 0 {
        return Err(Error::Metric("no probe has a same-class gallery entry".into()));
    }
    Ok(RapReport {
        value: sum / probes as f64,
        probes,
        excluded,
    })
}

/// Share of same-class gallery entries for a balanced random ranking: the
/// class prevalence.
pub fn prevalence_baseline(emb: &EmbeddingSet) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in emb.labels() {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let m = emb.len() as f64;
    counts.values().map(|&n| (n as f64 / m).powi(2)).sum()
}
