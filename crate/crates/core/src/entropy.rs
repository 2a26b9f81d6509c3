//! Two-dimensional structural entropy of weighted graphs and its greedy
//! minimization by repeated community merges.
//!
//! A 2D encoding tree has the root, one middle node per community, and one
//! leaf per graph node. For a community `α` with volume `vol(α)` and cut
//! `g(α)`, and a graph of total volume `V`,
//!
//! ```text
//! H = -Σ_α (g(α)/V)·log2(vol(α)/V) - Σ_α Σ_{v∈α} (d(v)/V)·log2(d(v)/vol(α))
//! ```
//!
//! Merging two communities only changes their own terms, so the change can
//! be computed from their volumes, cuts, and the weight between them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Merges must lower entropy by more than this to be taken.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Largest graph the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("communities do not partition the node set: {0}")]
    NotAPartition(String),
    #[error("degree-0 node {0} shares a community with other nodes")]
    IsolatedInCommunity(usize),
    #[error("exhaustive search refused for {0} nodes (limit {BRUTE_FORCE_MAX_NODES})")]
    TooLarge(usize),
    #[error("community index {0} out of range")]
    NoSuchCommunity(usize),
    #[error("malformed edge list line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Undirected graph with positive edge weights and cached degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<BTreeMap<usize, f64>>,
    degree: Vec<f64>,
    volume: f64,
}

impl WeightedGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![BTreeMap::new(); nodes],
            degree: vec![0.0; nodes],
            volume: 0.0,
        }
    }

    /// Add `w` to the weight of edge `{u, v}`.
    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) -> Result<(), EntropyError> {
        let n = self.node_count();
        for x in [u, v] {
            if x >= n {
                return Err(EntropyError::NodeOutOfRange(x));
            }
        }
        if u == v {
            return Err(EntropyError::SelfLoop(u));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(EntropyError::BadWeight(w));
        }
        *self.adj[u].entry(v).or_insert(0.0) += w;
        *self.adj[v].entry(u).or_insert(0.0) += w;
        self.degree[u] += w;
        self.degree[v] += w;
        self.volume += 2.0 * w;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.degree[v]
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[v].iter().map(|(&u, &w)| (u, w))
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adj.get(u)?.get(&v).copied()
    }

    /// Edges with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, nbrs) in self.adj.iter().enumerate() {
            for (&v, &w) in nbrs.range(u + 1..) {
                out.push((u, v, w));
            }
        }
        out
    }

    /// Node count on the first line, then one `u v w` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.node_count());
        for (u, v, w) in self.edges() {
            let _ = writeln!(out, "{u} {v} {w}");
        }
        out
    }

    pub fn from_edge_list(s: &str) -> Result<Self, EntropyError> {
        let mut graph: Option<WeightedGraph> = None;
        for (i, raw) in s.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let fmt_err = |reason: String| EntropyError::Format { line, reason };
            match graph.as_mut() {
                None => {
                    let n = text
                        .parse::<usize>()
                        .map_err(|e| fmt_err(format!("bad node count: {e}")))?;
                    graph = Some(WeightedGraph::new(n));
                }
                Some(g) => {
                    let parts: Vec<&str> = text.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(fmt_err(format!("expected `u v w`, got `{text}`")));
                    }
                    let u = parts[0].parse().map_err(|e| fmt_err(format!("{e}")))?;
                    let v = parts[1].parse().map_err(|e| fmt_err(format!("{e}")))?;
                    let w = parts[2].parse().map_err(|e| fmt_err(format!("{e}")))?;
                    g.add_edge(u, v, w)?;
                }
            }
        }
        graph.ok_or(EntropyError::Format {
            line: 0,
            reason: "missing node-count header".into(),
        })
    }
}

/// Height-2 encoding tree, stored as the partition its middle layer induces.
/// Communities are kept sorted internally and ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodingTree {
    communities: Vec<Vec<usize>>,
}

impl EncodingTree {
    pub fn new(mut communities: Vec<Vec<usize>>) -> Self {
        for c in &mut communities {
            c.sort_unstable();
        }
        communities.retain(|c| !c.is_empty());
        communities.sort();
        Self { communities }
    }

    pub fn singletons(n: usize) -> Self {
        Self::new((0..n).map(|v| vec![v]).collect())
    }

    pub fn communities(&self) -> &[Vec<usize>] {
        &self.communities
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    /// Community index of every node.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (c, members) in self.communities.iter().enumerate() {
            for &v in members {
                if v < n {
                    out[v] = c;
                }
            }
        }
        out
    }

    fn validate(&self, n: usize) -> Result<(), EntropyError> {
        let mut seen = vec![false; n];
        for c in &self.communities {
            for &v in c {
                if v >= n {
                    return Err(EntropyError::NotAPartition(format!(
                        "node {v} out of range"
                    )));
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(EntropyError::NotAPartition(format!("node {v} repeated")));
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(EntropyError::NotAPartition(format!("node {v} missing"))),
            None => Ok(()),
        }
    }
}

/// Pairs of nodes that may never share a community.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeConstraint {
    forbidden: HashSet<(usize, usize)>,
}

impl MergeConstraint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forbid(&mut self, u: usize, v: usize) {
        if u != v {
            self.forbidden.insert((u.min(v), u.max(v)));
        }
    }

    /// Forbid every pair within `nodes`.
    pub fn forbid_all_pairs(&mut self, nodes: &[usize]) {
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                self.forbid(u, v);
            }
        }
    }

    pub fn is_forbidden(&self, u: usize, v: usize) -> bool {
        self.forbidden.contains(&(u.min(v), u.max(v)))
    }

    pub fn is_empty(&self) -> bool {
        self.forbidden.is_empty()
    }

    fn constrained_nodes(&self) -> HashSet<usize> {
        self.forbidden.iter().flat_map(|&(u, v)| [u, v]).collect()
    }

    /// Whether some community of `tree` holds a forbidden pair.
    pub fn violated_by(&self, tree: &EncodingTree) -> bool {
        tree.communities.iter().any(|c| {
            c.iter()
                .enumerate()
                .any(|(i, &u)| c[i + 1..].iter().any(|&v| self.is_forbidden(u, v)))
        })
    }
}

/// Volume and cut of one community.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityStats {
    pub volume: f64,
    pub cut: f64,
}

/// `x · log2(ratio)`, taken as 0 when `x` is 0.
fn xlog2(x: f64, ratio: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * ratio.log2()
    }
}

fn community_stats(graph: &WeightedGraph, members: &[usize], inside: &[bool]) -> CommunityStats {
    let mut volume = 0.0;
    let mut cut = 0.0;
    for &v in members {
        volume += graph.degree(v);
        for (u, w) in graph.neighbors(v) {
            if !inside[u] {
                cut += w;
            }
        }
    }
    CommunityStats { volume, cut }
}

/// Structural entropy of `graph` under the 2D tree `tree`. Zero for graphs
/// without edges.
pub fn structural_entropy(graph: &WeightedGraph, tree: &EncodingTree) -> Result<f64, EntropyError> {
    let n = graph.node_count();
    tree.validate(n)?;
    let total = graph.volume();
    let mut inside = vec![false; n];
    let mut h = 0.0;
    for members in tree.communities() {
        if members.len() > 1 {
            if let Some(&v) = members.iter().find(|&&v| graph.degree(v) == 0.0) {
                return Err(EntropyError::IsolatedInCommunity(v));
            }
        }
        if total == 0.0 {
            continue;
        }
        for &v in members {
            inside[v] = true;
        }
        let stats = community_stats(graph, members, &inside);
        for &v in members {
            inside[v] = false;
        }
        h -= xlog2(stats.cut, stats.volume / total) / total;
        for &v in members {
            let d = graph.degree(v);
            h -= xlog2(d, d / stats.volume) / total;
        }
    }
    Ok(h)
}

/// Entropy change from merging two communities, given their statistics and
/// the total weight of edges between them.
pub fn merge_delta_from_stats(
    total: f64,
    a: CommunityStats,
    b: CommunityStats,
    between: f64,
) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let volume = a.volume + b.volume;
    let cut = (a.cut + b.cut - 2.0 * between).max(0.0);
    let before_cut = xlog2(a.cut, a.volume / total) + xlog2(b.cut, b.volume / total);
    let after_cut = xlog2(cut, volume / total);
    let leaves = xlog2(a.volume, volume / a.volume) + xlog2(b.volume, volume / b.volume);
    (before_cut - after_cut + leaves) / total
}

/// `H(after merging c1 and c2) - H(before)` for communities of `tree`.
pub fn merge_delta(
    graph: &WeightedGraph,
    tree: &EncodingTree,
    c1: usize,
    c2: usize,
) -> Result<f64, EntropyError> {
    let n = graph.node_count();
    tree.validate(n)?;
    let comms = tree.communities();
    let (a, b) = match (comms.get(c1), comms.get(c2)) {
        (Some(a), Some(b)) if c1 != c2 => (a, b),
        (None, _) => return Err(EntropyError::NoSuchCommunity(c1)),
        _ => return Err(EntropyError::NoSuchCommunity(c2)),
    };
    let mut inside = vec![false; n];
    let mut stats = |members: &[usize]| {
        for &v in members {
            inside[v] = true;
        }
        let s = community_stats(graph, members, &inside);
        for &v in members {
            inside[v] = false;
        }
        s
    };
    let (sa, sb) = (stats(a), stats(b));
    let in_b: HashSet<usize> = b.iter().copied().collect();
    let between: f64 = a
        .iter()
        .flat_map(|&v| graph.neighbors(v))
        .filter(|(u, _)| in_b.contains(u))
        .map(|(_, w)| w)
        .sum();
    Ok(merge_delta_from_stats(graph.volume(), sa, sb, between))
}

struct Community {
    members: Vec<usize>,
    constrained: Vec<usize>,
    stats: CommunityStats,
}

/// Result of a greedy run, with the entropy after every merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeTrace {
    pub tree: EncodingTree,
    /// Entropy of the singleton tree followed by the entropy after each merge.
    pub entropies: Vec<f64>,
}

/// Greedy minimization from the all-singleton tree: repeatedly merge the
/// admissible pair of edge-connected communities with the most negative
/// delta until no merge lowers entropy.
pub fn minimize(graph: &WeightedGraph, constraints: &MergeConstraint) -> EncodingTree {
    minimize_traced(graph, constraints).tree
}

pub fn minimize_traced(graph: &WeightedGraph, constraints: &MergeConstraint) -> MinimizeTrace {
    let n = graph.node_count();
    let total = graph.volume();
    let constrained_nodes = constraints.constrained_nodes();
    let mut comms: Vec<Option<Community>> = (0..n)
        .map(|v| {
            let d = graph.degree(v);
            Some(Community {
                members: vec![v],
                constrained: if constrained_nodes.contains(&v) {
                    vec![v]
                } else {
                    vec![]
                },
                stats: CommunityStats { volume: d, cut: d },
            })
        })
        .collect();
    let mut links: Vec<BTreeMap<usize, f64>> =
        (0..n).map(|v| graph.neighbors(v).collect()).collect();
    let mut current = structural_entropy(graph, &EncodingTree::singletons(n))
        .expect("singleton tree is always valid");
    let mut entropies = vec![current];

    let admissible = |a: &Community, b: &Community| {
        a.constrained.iter().all(|&u| {
            b.constrained
                .iter()
                .all(|&v| !constraints.is_forbidden(u, v))
        })
    };

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            let Some(ci) = comms[i].as_ref() else {
                continue;
            };
            for (&j, &between) in links[i].range(i + 1..) {
                let cj = comms[j]
                    .as_ref()
                    .expect("links only reference live communities");
                if !admissible(ci, cj) {
                    continue;
                }
                let delta = merge_delta_from_stats(total, ci.stats, cj.stats, between);
                if best.is_none_or(|(d, _, _)| delta < d) {
                    best = Some((delta, i, j));
                }
            }
        }
        let Some((delta, i, j)) = best else { break };
        if delta >= -MERGE_TOLERANCE {
            break;
        }
        let absorbed = comms[j].take().expect("live community");
        let between = links[i].remove(&j).unwrap_or(0.0);
        let absorbed_links = std::mem::take(&mut links[j]);
        for (k, w) in absorbed_links {
            if k == i {
                continue;
            }
            links[k].remove(&j);
            *links[k].entry(i).or_insert(0.0) += w;
            *links[i].entry(k).or_insert(0.0) += w;
        }
        let keep = comms[i].as_mut().expect("live community");
        keep.members.extend(absorbed.members);
        keep.constrained.extend(absorbed.constrained);
        keep.stats = CommunityStats {
            volume: keep.stats.volume + absorbed.stats.volume,
            cut: (keep.stats.cut + absorbed.stats.cut - 2.0 * between).max(0.0),
        };
        current += delta;
        entropies.push(current);
    }

    MinimizeTrace {
        tree: EncodingTree::new(comms.into_iter().flatten().map(|c| c.members).collect()),
        entropies,
    }
}

/// Exhaustive search over all set partitions (graphs of at most ten nodes).
/// Ties go to fewer communities, then the lexicographically smallest.
pub fn brute_force_minimize(graph: &WeightedGraph) -> Result<EncodingTree, EntropyError> {
    brute_force_minimize_constrained(graph, &MergeConstraint::new())
}

pub fn brute_force_minimize_constrained(
    graph: &WeightedGraph,
    constraints: &MergeConstraint,
) -> Result<EncodingTree, EntropyError> {
    let n = graph.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(EntropyError::TooLarge(n));
    }
    if n == 0 {
        return Ok(EncodingTree::new(Vec::new()));
    }
    let mut best: Option<(f64, EncodingTree)> = None;
    // Restricted growth strings enumerate each set partition exactly once.
    let mut rgs = vec![0usize; n];
    loop {
        let k = rgs.iter().max().expect("n > 0") + 1;
        let mut groups = vec![Vec::new(); k];
        for (v, &g) in rgs.iter().enumerate() {
            groups[g].push(v);
        }
        let tree = EncodingTree::new(groups);
        if !constraints.violated_by(&tree) {
            if let Ok(h) = structural_entropy(graph, &tree) {
                let better = match &best {
                    None => true,
                    Some((bh, bt)) => {
                        h < bh - MERGE_TOLERANCE
                            || ((h - bh).abs() <= MERGE_TOLERANCE
                                && (tree.len(), &tree.communities) < (bt.len(), &bt.communities))
                    }
                };
                if better {
                    best = Some((h, tree));
                }
            }
        }
        // Next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(best.expect("singleton partition is always valid").1);
            }
            let prefix_max = rgs[..i].iter().max().copied().unwrap_or(0);
            if rgs[i] <= prefix_max {
                rgs[i] += 1;
                for x in &mut rgs[i + 1..] {
                    *x = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}
