//! Clustering agreement (NMI, AMI, ARI) and topic quality (C_v, TD).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Sliding window width used by C_v.
pub const CV_WINDOW: usize = 110;
const NPMI_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("labelings differ in length: {pred} predicted vs {gold} gold")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("labelings are empty")]
    Empty,
    #[error("topic {0} has no words")]
    EmptyTopic(usize),
    #[error("no topics given")]
    NoTopics,
    #[error("reference corpus is empty")]
    EmptyCorpus,
}

/// Counts of items per (predicted cluster, gold cluster).
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    total: u64,
}

fn index_labels<T: Hash + Eq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (idx, ids.len())
}

impl ContingencyTable {
    pub fn new<A: Hash + Eq, B: Hash + Eq>(pred: &[A], gold: &[B]) -> Result<Self, MetricsError> {
        if pred.len() != gold.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                gold: gold.len(),
            });
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let (p, np) = index_labels(pred);
        let (g, ng) = index_labels(gold);
        let mut counts = vec![vec![0u64; ng]; np];
        for (&i, &j) in p.iter().zip(&g) {
            counts[i][j] += 1;
        }
        let rows = counts.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..ng).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            rows,
            cols,
            total: pred.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.rows
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.cols
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Both labelings induce the same partition.
    pub fn is_relabeling(&self) -> bool {
        self.rows.len() == self.cols.len()
            && self
                .counts
                .iter()
                .all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
    }

    fn marginal_entropy(sums: &[u64], n: f64) -> f64 {
        sums.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    pub fn pred_entropy(&self) -> f64 {
        Self::marginal_entropy(&self.rows, self.total as f64)
    }

    pub fn gold_entropy(&self) -> f64 {
        Self::marginal_entropy(&self.cols, self.total as f64)
    }

    pub fn mutual_information(&self) -> f64 {
        let n = self.total as f64;
        let mut mi = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c / n * (n * c / (self.rows[i] as f64 * self.cols[j] as f64)).ln();
                }
            }
        }
        mi.max(0.0)
    }

    /// Expected mutual information under random permutation with fixed
    /// marginals.
    pub fn expected_mutual_information(&self) -> f64 {
        let n = self.total as usize;
        let mut lf = vec![0.0f64; n + 1];
        for k in 1..=n {
            lf[k] = lf[k - 1] + (k as f64).ln();
        }
        let nf = n as f64;
        let mut emi = 0.0;
        for &a in &self.rows {
            let a = a as usize;
            for &b in &self.cols {
                let b = b as usize;
                let lo = (a + b).saturating_sub(n).max(1);
                let hi = a.min(b);
                let fixed = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
                for k in lo..=hi {
                    let kf = k as f64;
                    let log_p = fixed - lf[k] - lf[a - k] - lf[b - k] - lf[n + k - a - b];
                    emi += kf / nf * (nf * kf / (a as f64 * b as f64)).ln() * log_p.exp();
                }
            }
        }
        emi
    }
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi<A: Hash + Eq, B: Hash + Eq>(pred: &[A], gold: &[B]) -> Result<f64, MetricsError> {
    let t = ContingencyTable::new(pred, gold)?;
    if t.is_relabeling() {
        return Ok(1.0);
    }
    let (hp, hg) = (t.pred_entropy(), t.gold_entropy());
    if hp == 0.0 || hg == 0.0 {
        return Ok(0.0);
    }
    Ok((t.mutual_information() / (hp * hg).sqrt()).clamp(0.0, 1.0))
}

/// Adjusted mutual information, normalized by the arithmetic mean of the
/// entropies.
pub fn ami<A: Hash + Eq, B: Hash + Eq>(pred: &[A], gold: &[B]) -> Result<f64, MetricsError> {
    let t = ContingencyTable::new(pred, gold)?;
    if t.is_relabeling() {
        return Ok(1.0);
    }
    let mi = t.mutual_information();
    let emi = t.expected_mutual_information();
    let denom = 0.5 * (t.pred_entropy() + t.gold_entropy()) - emi;
    if denom.abs() < f64::EPSILON {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}

fn pairs(c: u64) -> i128 {
    let c = c as i128;
    c * (c - 1) / 2
}

/// Adjusted Rand index, computed from exact pair counts.
pub fn ari<A: Hash + Eq, B: Hash + Eq>(pred: &[A], gold: &[B]) -> Result<f64, MetricsError> {
    let t = ContingencyTable::new(pred, gold)?;
    if t.is_relabeling() {
        return Ok(1.0);
    }
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: i128 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = t.cols.iter().map(|&c| pairs(c)).sum();
    let all = pairs(t.total);
    let num = 2 * (index * all - sa * sb);
    let den = (sa + sb) * all - 2 * sa * sb;
    if den == 0 {
        return Ok(0.0);
    }
    Ok(num as f64 / den as f64)
}

/// Keyword lists, one per topic, with duplicates inside a list removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSet {
    topics: Vec<Vec<String>>,
}

impl TopicSet {
    pub fn new(topics: Vec<Vec<String>>) -> Result<Self, MetricsError> {
        if topics.is_empty() {
            return Err(MetricsError::NoTopics);
        }
        let mut clean = Vec::with_capacity(topics.len());
        for (i, words) in topics.into_iter().enumerate() {
            let mut seen = HashSet::new();
            let list: Vec<String> = words
                .into_iter()
                .map(|w| w.trim().to_lowercase())
                .filter(|w| !w.is_empty() && seen.insert(w.clone()))
                .collect();
            if list.is_empty() {
                return Err(MetricsError::EmptyTopic(i));
            }
            clean.push(list);
        }
        Ok(Self { topics: clean })
    }

    pub fn topics(&self) -> &[Vec<String>] {
        &self.topics
    }
}

/// Distinct words over total words across all topics.
pub fn topic_diversity(topics: &TopicSet) -> f64 {
    let total: usize = topics.topics.iter().map(Vec::len).sum();
    let distinct: HashSet<&String> = topics.topics.iter().flatten().collect();
    distinct.len() as f64 / total as f64
}

/// Boolean co-occurrence counts over sliding windows of a corpus.
struct WindowCounts {
    windows: usize,
    single: HashMap<String, usize>,
    joint: HashMap<(String, String), usize>,
}

impl WindowCounts {
    fn build(corpus: &[String], vocabulary: &HashSet<String>, width: usize) -> Self {
        let mut counts = WindowCounts {
            windows: 0,
            single: HashMap::new(),
            joint: HashMap::new(),
        };
        for doc in corpus {
            let tokens = text::tokenize(doc);
            if tokens.is_empty() {
                continue;
            }
            let starts = if tokens.len() <= width {
                1
            } else {
                tokens.len() - width + 1
            };
            for s in 0..starts {
                let end = (s + width).min(tokens.len());
                let mut present: Vec<&String> = tokens[s..end]
                    .iter()
                    .filter(|t| vocabulary.contains(*t))
                    .collect();
                present.sort();
                present.dedup();
                counts.windows += 1;
                for (i, a) in present.iter().enumerate() {
                    *counts.single.entry((*a).clone()).or_insert(0) += 1;
                    for b in &present[i + 1..] {
                        *counts
                            .joint
                            .entry(((*a).clone(), (*b).clone()))
                            .or_insert(0) += 1;
                    }
                }
            }
        }
        counts
    }

    fn p(&self, w: &str) -> f64 {
        *self.single.get(w).unwrap_or(&0) as f64 / self.windows as f64
    }

    fn p_joint(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return self.p(a);
        }
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        *self.joint.get(&key).unwrap_or(&0) as f64 / self.windows as f64
    }

    fn npmi(&self, a: &str, b: &str) -> f64 {
        let pab = self.p_joint(a, b) + NPMI_EPSILON;
        let denom = -pab.ln();
        if denom <= NPMI_EPSILON {
            // Both words occur in every window.
            return 1.0;
        }
        let pmi = (pab / ((self.p(a) + NPMI_EPSILON) * (self.p(b) + NPMI_EPSILON))).ln();
        pmi / denom
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn topic_coherence(words: &[String], counts: &WindowCounts) -> f64 {
    if words.len() == 1 {
        return 1.0;
    }
    let vectors: Vec<Vec<f64>> = words
        .iter()
        .map(|a| words.iter().map(|b| counts.npmi(a, b)).collect())
        .collect();
    let mut topic = vec![0.0; words.len()];
    for v in &vectors {
        for (t, x) in topic.iter_mut().zip(v) {
            *t += x;
        }
    }
    vectors.iter().map(|v| cosine(v, &topic)).sum::<f64>() / words.len() as f64
}

/// C_v coherence per topic against a reference corpus.
pub fn cv_per_topic(
    topics: &TopicSet,
    corpus: &[String],
    window: usize,
) -> Result<Vec<f64>, MetricsError> {
    let vocabulary: HashSet<String> = topics.topics.iter().flatten().cloned().collect();
    let counts = WindowCounts::build(corpus, &vocabulary, window.max(1));
    if counts.windows == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(topics
        .topics
        .iter()
        .map(|t| topic_coherence(t, &counts))
        .collect())
}

/// Mean C_v coherence over topics.
pub fn cv_coherence(
    topics: &TopicSet,
    corpus: &[String],
    window: usize,
) -> Result<f64, MetricsError> {
    let per = cv_per_topic(topics, corpus, window)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementScores {
    pub block: usize,
    pub items: usize,
    /// Items dropped because they had no gold label.
    pub excluded: usize,
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
}

impl AgreementScores {
    pub fn compute(
        block: usize,
        pred: &[String],
        gold: &[String],
        excluded: usize,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            block,
            items: pred.len(),
            excluded,
            nmi: nmi(pred, gold)?,
            ami: ami(pred, gold)?,
            ari: ari(pred, gold)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScores {
    pub day: usize,
    pub topics: usize,
    pub cv: f64,
    pub td: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub nmi: Option<f64>,
    pub ami: Option<f64>,
    pub ari: Option<f64>,
    pub cv: Option<f64>,
    pub td: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// How each score is normalized, so numbers stay comparable.
    pub normalization: String,
    pub blocks: Vec<AgreementScores>,
    pub days: Vec<TopicScores>,
    pub averages: Averages,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvaluationReport {
    pub fn new(blocks: Vec<AgreementScores>, days: Vec<TopicScores>) -> Self {
        let averages = Averages {
            nmi: mean(blocks.iter().map(|b| b.nmi)),
            ami: mean(blocks.iter().map(|b| b.ami)),
            ari: mean(blocks.iter().map(|b| b.ari)),
            cv: mean(days.iter().map(|d| d.cv)),
            td: mean(days.iter().map(|d| d.td)),
        };
        Self {
            normalization: "NMI: geometric mean of entropies; AMI: arithmetic mean of entropies, \
                            permutation-model expectation; C_v: boolean sliding window"
                .into(),
            blocks,
            days,
            averages,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.normalization);
        if !self.blocks.is_empty() {
            let _ = writeln!(
                out,
                "{:>6} {:>7} {:>8} {:>7} {:>7} {:>7}",
                "block", "items", "excluded", "NMI", "AMI", "ARI"
            );
            for b in &self.blocks {
                let _ = writeln!(
                    out,
                    "{:>6} {:>7} {:>8} {:>7.4} {:>7.4} {:>7.4}",
                    b.block, b.items, b.excluded, b.nmi, b.ami, b.ari
                );
            }
        }
        if !self.days.is_empty() {
            let _ = writeln!(out, "{:>6} {:>7} {:>7} {:>7}", "day", "topics", "C_v", "TD");
            for d in &self.days {
                let _ = writeln!(
                    out,
                    "{:>6} {:>7} {:>7.4} {:>7.4}",
                    d.day, d.topics, d.cv, d.td
                );
            }
        }
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let a = &self.averages;
        let _ = writeln!(
            out,
            "mean NMI {} AMI {} ARI {} C_v {} TD {}",
            fmt(a.nmi),
            fmt(a.ami),
            fmt(a.ari),
            fmt(a.cv),
            fmt(a.td)
        );
        out
    }
}
