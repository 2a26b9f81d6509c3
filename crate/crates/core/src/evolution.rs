//! Cross-day event alignment: per-day keyword graphs over knowledge-base
//! snapshots, partitioned by constrained structural-entropy minimization,
//! with inherited nodes carrying identity from one day to the next.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed_batch, Embedding, EmbeddingProvider};
use crate::entropy::{minimize, MergeConstraint, WeightedGraph};
use crate::kb::KnowledgeBase;

/// Keywords kept per aligned event.
pub const ALIGNED_KEYWORDS: usize = 15;
/// Default number of aligned events kept in the stream-graph export.
pub const DEFAULT_TOP_N: usize = 30;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("no snapshots given")]
    Empty,
    #[error("day sequence has a gap: day {after} is followed by day {next}")]
    Gap { after: usize, next: usize },
    #[error("day {day} failed: {message}")]
    Day {
        day: usize,
        message: String,
        partial: Box<EvolutionTimeline>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeOrigin {
    /// An event from the day's knowledge base.
    Ordinary,
    /// A previous day's aligned event.
    Inherited { id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventNode {
    pub origin: NodeOrigin,
    pub name: String,
    /// Lowercased, deduplicated.
    pub keywords: Vec<String>,
    pub embedding: Embedding,
}

impl EventNode {
    pub fn is_inherited(&self) -> bool {
        matches!(self.origin, NodeOrigin::Inherited { .. })
    }

    fn inherited_id(&self) -> Option<&str> {
        match &self.origin {
            NodeOrigin::Inherited { id } => Some(id),
            NodeOrigin::Ordinary => None,
        }
    }
}

fn normalize_keywords(raw: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.iter()
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty() && seen.insert(k.clone()))
        .collect()
}

/// Event graph of one day: nodes in table order, ordinary events first.
#[derive(Debug, Clone)]
pub struct DayGraph {
    pub graph: WeightedGraph,
    pub nodes: Vec<EventNode>,
}

impl DayGraph {
    pub fn inherited_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_inherited())
            .collect()
    }

    /// Every pair of inherited nodes is forbidden from sharing a community.
    pub fn constraints(&self) -> MergeConstraint {
        let mut c = MergeConstraint::new();
        c.forbid_all_pairs(&self.inherited_indices());
        c
    }
}

/// Nodes are the snapshot's events plus the inherited nodes; two nodes are
/// linked when their keyword sets intersect, weighted by embedding cosine.
/// Links with non-positive cosine are dropped.
pub fn build_graph(kb: &KnowledgeBase, inherited: &[EventNode]) -> Result<DayGraph, String> {
    let mut nodes: Vec<EventNode> = kb
        .records()
        .map(|r| EventNode {
            origin: NodeOrigin::Ordinary,
            name: r.name.clone(),
            keywords: normalize_keywords(&r.keywords),
            embedding: r.embedding.clone(),
        })
        .collect();
    nodes.extend(inherited.iter().cloned());
    let mut graph = WeightedGraph::new(nodes.len());
    let sets: Vec<HashSet<&str>> = nodes
        .iter()
        .map(|n| n.keywords.iter().map(String::as_str).collect())
        .collect();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if sets[i].is_disjoint(&sets[j]) {
                continue;
            }
            let w = cosine(&nodes[i].embedding, &nodes[j].embedding)
                .map_err(|e| format!("{} vs {}: {e}", nodes[i].name, nodes[j].name))?;
            if w > 0.0 {
                graph.add_edge(i, j, w).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(DayGraph { graph, nodes })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlignedKind {
    New,
    Evolved { parent: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedEvent {
    pub id: String,
    pub day: usize,
    pub kind: AlignedKind,
    pub name: String,
    /// Names of the ordinary member events.
    pub members: Vec<String>,
    pub keywords: Vec<String>,
}

/// Communities of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayAlignment {
    pub events: Vec<AlignedEvent>,
    /// Inherited ids whose community gained no ordinary member.
    pub unsupported: Vec<String>,
}

/// Strip the ` (n)` suffix used to disambiguate repeated names.
fn base_name(name: &str) -> &str {
    if let Some(stripped) = name.strip_suffix(')') {
        if let Some((base, n)) = stripped.rsplit_once(" (") {
            if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                return base;
            }
        }
    }
    name
}

/// Most frequent item, ties to the lexicographically smallest.
fn most_frequent<'a>(items: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in items {
        *counts.entry(s).or_insert(0) += 1;
    }
    let max = *counts.values().max()?;
    counts
        .into_iter()
        .find(|&(_, c)| c == max)
        .map(|(s, _)| s.to_string())
}

/// Top keywords by frequency over the given keyword lists, ties lexicographic.
pub fn top_keywords<'a>(
    lists: impl IntoIterator<Item = &'a [String]>,
    limit: usize,
) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for list in lists {
        for k in list {
            *counts.entry(k.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(limit)
        .map(|(k, _)| k.to_string())
        .collect()
}

/// Partition the day graph under the no-merge constraint and turn each
/// community with an ordinary member into an aligned event.
pub fn align_day(day: usize, graph: &DayGraph) -> DayAlignment {
    let tree = minimize(&graph.graph, &graph.constraints());
    let mut events = Vec::new();
    let mut unsupported = Vec::new();
    let mut fresh = 0;
    for community in tree.communities() {
        let (inherited, ordinary): (Vec<&EventNode>, Vec<&EventNode>) = community
            .iter()
            .map(|&i| &graph.nodes[i])
            .partition(|n| n.is_inherited());
        debug_assert!(
            inherited.len() <= 1,
            "constraint admits one inherited node per community"
        );
        let parent = inherited
            .first()
            .and_then(|n| n.inherited_id())
            .map(str::to_string);
        if ordinary.is_empty() {
            unsupported.extend(parent);
            continue;
        }
        let (id, kind) = match parent {
            Some(p) => (p.clone(), AlignedKind::Evolved { parent: p }),
            None => {
                fresh += 1;
                (format!("E{day}.{fresh}"), AlignedKind::New)
            }
        };
        let mut members: Vec<String> = ordinary.iter().map(|n| n.name.clone()).collect();
        members.sort();
        events.push(AlignedEvent {
            id,
            day,
            kind,
            name: most_frequent(members.iter().map(|m| base_name(m))).unwrap_or_default(),
            keywords: top_keywords(
                ordinary.iter().map(|n| n.keywords.as_slice()),
                ALIGNED_KEYWORDS,
            ),
            members,
        });
    }
    DayAlignment {
        events,
        unsupported,
    }
}

/// One inherited node per aligned event, embedded from its joined keywords.
/// Events that cannot be embedded are skipped with a warning.
pub fn apply_inheritance(
    aligned: &[AlignedEvent],
    embedder: &dyn EmbeddingProvider,
) -> Vec<EventNode> {
    let mut out = Vec::with_capacity(aligned.len());
    for event in aligned {
        if event.keywords.is_empty() {
            log::warn!("aligned event {} has no keywords; not inherited", event.id);
            continue;
        }
        match embed_batch(embedder, &[event.keywords.join(", ")]) {
            Ok(mut v) => out.push(EventNode {
                origin: NodeOrigin::Inherited {
                    id: event.id.clone(),
                },
                name: event.name.clone(),
                keywords: event.keywords.clone(),
                embedding: v.remove(0),
            }),
            Err(e) => log::warn!("aligned event {} not inherited: {e}", event.id),
        }
    }
    out
}

/// Record the end of every event whose inherited node found no support.
pub fn apply_forgetting(
    day: usize,
    alignment: &DayAlignment,
    lifespans: &mut BTreeMap<String, Lifespan>,
) {
    for id in &alignment.unsupported {
        if let Some(span) = lifespans.get_mut(id) {
            span.end.get_or_insert(day);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifespan {
    pub start: usize,
    /// First day the event lacked support.
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: usize,
    pub events: Vec<AlignedEvent>,
    /// Ids offered to this day as inherited nodes.
    pub inherited: Vec<String>,
    pub forgotten: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTimeline {
    pub days: Vec<DayRecord>,
    pub lifespans: BTreeMap<String, Lifespan>,
}

#[derive(Serialize)]
struct Appearance<'a> {
    day: usize,
    kind: &'a AlignedKind,
    name: &'a str,
    keywords: &'a [String],
    members: &'a [String],
}

#[derive(Serialize)]
struct EventView<'a> {
    id: &'a str,
    lifespan: Lifespan,
    appearances: Vec<Appearance<'a>>,
}

#[derive(Serialize)]
struct TimelineView<'a> {
    events: Vec<EventView<'a>>,
    days: &'a [DayRecord],
}

impl EvolutionTimeline {
    /// All appearances of one aligned id, in day order.
    pub fn appearances(&self, id: &str) -> Vec<&AlignedEvent> {
        self.days
            .iter()
            .flat_map(|d| d.events.iter().filter(|e| e.id == id))
            .collect()
    }

    /// Per-event view (id, lifespan, per-day kind, keywords and members) followed by the raw per-day records.
    pub fn to_json(&self) -> String {
        let events = self
            .lifespans
            .iter()
            .map(|(id, span)| EventView {
                id,
                lifespan: *span,
                appearances: self
                    .appearances(id)
                    .into_iter()
                    .map(|e| Appearance {
                        day: e.day,
                        kind: &e.kind,
                        name: &e.name,
                        keywords: &e.keywords,
                        members: &e.members,
                    })
                    .collect(),
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&TimelineView {
            events,
            days: &self.days,
        })
        .expect("timeline serializes");
        s.push('\n');
        s
    }

    /// `day,aligned_id,intensity` rows for the `top_n` aligned events with the
    /// highest total intensity. Intensity is the number of messages labeled
    /// with a member event's name that day; days without label counts fall
    /// back to the member count.
    pub fn stream_graph_csv(
        &self,
        label_counts: &BTreeMap<usize, HashMap<String, usize>>,
        top_n: usize,
    ) -> String {
        let mut rows: Vec<(usize, &str, usize)> = Vec::new();
        for record in &self.days {
            let counts = label_counts.get(&record.day);
            for e in &record.events {
                let intensity = match counts {
                    Some(c) => e
                        .members
                        .iter()
                        .map(|m| c.get(m).copied().unwrap_or(0))
                        .sum(),
                    None => e.members.len(),
                };
                rows.push((record.day, &e.id, intensity));
            }
        }
        let mut totals: HashMap<&str, usize> = HashMap::new();
        for &(_, id, x) in &rows {
            *totals.entry(id).or_insert(0) += x;
        }
        let mut ranked: Vec<(&str, usize)> = totals.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let keep: HashSet<&str> = ranked.into_iter().take(top_n).map(|(id, _)| id).collect();
        let mut out = String::from("day,aligned_id,intensity\n");
        for (day, id, x) in rows.into_iter().filter(|(_, id, _)| keep.contains(id)) {
            let _ = writeln!(out, "{day},{id},{x}");
        }
        out
    }
}

/// Align every day in order, inheriting from the previous day and
/// forgetting unsupported events. Snapshots must cover consecutive days.
pub fn run_evolution(
    snapshots: &[KnowledgeBase],
    embedder: &dyn EmbeddingProvider,
) -> Result<EvolutionTimeline, EvolutionError> {
    if snapshots.is_empty() {
        return Err(EvolutionError::Empty);
    }
    for w in snapshots.windows(2) {
        if w[1].block() != w[0].block() + 1 {
            return Err(EvolutionError::Gap {
                after: w[0].block(),
                next: w[1].block(),
            });
        }
    }
    let mut timeline = EvolutionTimeline::default();
    let mut inherited: Vec<EventNode> = Vec::new();
    for kb in snapshots {
        let day = kb.block();
        let graph = match build_graph(kb, &inherited) {
            Ok(g) => g,
            Err(message) => {
                return Err(EvolutionError::Day {
                    day,
                    message,
                    partial: Box::new(timeline),
                })
            }
        };
        let alignment = align_day(day, &graph);
        for e in &alignment.events {
            timeline.lifespans.entry(e.id.clone()).or_insert(Lifespan {
                start: day,
                end: None,
            });
        }
        apply_forgetting(day, &alignment, &mut timeline.lifespans);
        let offered = inherited
            .iter()
            .filter_map(|n| n.inherited_id().map(str::to_string))
            .collect();
        inherited = apply_inheritance(&alignment.events, embedder);
        timeline.days.push(DayRecord {
            day,
            events: alignment.events,
            inherited: offered,
            forgotten: alignment.unsupported,
        });
    }
    Ok(timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::kb::{event_encoding_text, EventRecord};

    fn kws(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn kb(day: usize, events: &[(&str, &[&str])]) -> KnowledgeBase {
        let h = HashEmbedder::new(64);
        let mut kb = KnowledgeBase::new(day);
        for (name, words) in events {
            let words = kws(words);
            kb.insert_event(EventRecord {
                name: name.to_string(),
                embedding: h.embed_one(&event_encoding_text(name, &words)),
                keywords: words,
                created_at_block: day,
                refresh_count: 0,
            });
        }
        kb
    }

    fn inherited(id: &str, words: &[&str]) -> EventNode {
        let words = kws(words);
        EventNode {
            origin: NodeOrigin::Inherited { id: id.into() },
            name: id.into(),
            embedding: HashEmbedder::new(64).embed_one(&words.join(", ")),
            keywords: words,
        }
    }

    #[test]
    fn edges_need_shared_keywords() {
        let g = build_graph(
            &kb(
                1,
                &[
                    ("A", &["nilam", "storm"]),
                    ("B", &["Nilam"]),
                    ("C", &["quake"]),
                ],
            ),
            &[],
        )
        .unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.graph.edge_count(), 1);
        let w = g.graph.weight(0, 1).unwrap();
        let expected = cosine(&g.nodes[0].embedding, &g.nodes[1].embedding).unwrap();
        assert_eq!(w, expected);
        assert!(g.graph.weight(0, 2).is_none());
    }

    #[test]
    fn empty_inputs_give_empty_alignment() {
        let g = build_graph(&KnowledgeBase::new(1), &[]).unwrap();
        assert_eq!(g.graph.node_count(), 0);
        let a = align_day(1, &g);
        assert!(a.events.is_empty() && a.unsupported.is_empty());
    }

    #[test]
    fn keywords_come_from_ordinary_members_only() {
        let day = kb(2, &[("A", &["nilam", "storm"]), ("B", &["nilam", "coast"])]);
        let g = build_graph(&day, &[inherited("E1.1", &["nilam", "ghost"])]).unwrap();
        let a = align_day(2, &g);
        let evolved = a
            .events
            .iter()
            .find(|e| e.id == "E1.1")
            .expect("evolved event");
        assert_eq!(
            evolved.kind,
            AlignedKind::Evolved {
                parent: "E1.1".into()
            }
        );
        assert!(!evolved.keywords.contains(&"ghost".to_string()));
        assert!(evolved.keywords.contains(&"nilam".to_string()));
    }

    #[test]
    fn inherited_nodes_never_share_a_community() {
        let day = kb(
            3,
            &[("A", &["x", "y"]), ("B", &["x", "y"]), ("C", &["x", "y"])],
        );
        let g = build_graph(
            &day,
            &[inherited("P", &["x", "y"]), inherited("Q", &["x", "y"])],
        )
        .unwrap();
        let a = align_day(3, &g);
        let ids: HashSet<&str> = a.events.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids.len(), a.events.len());
        assert!(!g
            .constraints()
            .violated_by(&minimize(&g.graph, &g.constraints())));
    }

    #[test]
    fn lonely_inherited_node_is_forgotten() {
        let day = kb(
            2,
            &[
                ("A", &["a", "b"]),
                ("B", &["a", "b"]),
                ("C", &["c", "d"]),
                ("D", &["c", "d"]),
            ],
        );
        let g = build_graph(&day, &[inherited("E1.9", &["gone"])]).unwrap();
        let a = align_day(2, &g);
        assert_eq!(a.unsupported, vec!["E1.9".to_string()]);
        let mut spans = BTreeMap::from([(
            "E1.9".to_string(),
            Lifespan {
                start: 1,
                end: None,
            },
        )]);
        apply_forgetting(2, &a, &mut spans);
        assert_eq!(spans["E1.9"].end, Some(2));
    }

    #[test]
    fn inheritance_is_one_to_one() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i:02}")).collect();
        let lists: Vec<Vec<String>> = vec![words.clone()];
        let top = top_keywords(lists.iter().map(Vec::as_slice), ALIGNED_KEYWORDS);
        assert_eq!(top.len(), 15);
        let aligned: Vec<AlignedEvent> = (0..3)
            .map(|i| AlignedEvent {
                id: format!("E1.{i}"),
                day: 1,
                kind: AlignedKind::New,
                name: "n".into(),
                members: vec!["n".into()],
                keywords: top.clone(),
            })
            .collect();
        let nodes = apply_inheritance(&aligned, &HashEmbedder::new(32));
        assert_eq!(nodes.len(), 3);
        assert!(nodes
            .iter()
            .all(|n| n.keywords.len() == 15 && n.is_inherited()));
    }

    #[test]
    fn keyword_ranking_and_names() {
        let lists = [kws(&["b", "a", "c"]), kws(&["c", "b"])];
        assert_eq!(
            top_keywords(lists.iter().map(Vec::as_slice), 2),
            kws(&["b", "c"])
        );
        assert_eq!(base_name("Nilam (2)"), "Nilam");
        assert_eq!(base_name("Nilam (x)"), "Nilam (x)");
        assert_eq!(most_frequent(["b", "a", "b", "a"]).as_deref(), Some("a"));
    }

    #[test]
    fn single_day_is_all_new() {
        let t = run_evolution(
            &[kb(1, &[("A", &["a"]), ("B", &["b"])])],
            &HashEmbedder::new(32),
        )
        .unwrap();
        assert_eq!(t.days.len(), 1);
        assert!(t.days[0].events.iter().all(|e| e.kind == AlignedKind::New));
    }

    #[test]
    fn gaps_are_rejected() {
        let err = run_evolution(&[kb(1, &[]), kb(3, &[])], &HashEmbedder::new(32)).unwrap_err();
        assert!(matches!(err, EvolutionError::Gap { after: 1, next: 3 }));
    }

    #[test]
    fn csv_top_n() {
        let ev = |id: &str, members: &[&str]| AlignedEvent {
            id: id.into(),
            day: 1,
            kind: AlignedKind::New,
            name: id.into(),
            members: kws(members),
            keywords: kws(&["k"]),
        };
        let t = EvolutionTimeline {
            days: vec![DayRecord {
                day: 1,
                events: vec![ev("E1.1", &["A"]), ev("E1.2", &["B", "C"])],
                inherited: vec![],
                forgotten: vec![],
            }],
            lifespans: BTreeMap::new(),
        };
        let counts = BTreeMap::from([(
            1,
            HashMap::from([("A".to_string(), 5), ("B".to_string(), 1)]),
        )]);
        assert_eq!(
            t.stream_graph_csv(&counts, 30),
            "day,aligned_id,intensity\n1,E1.1,5\n1,E1.2,1\n"
        );
        assert_eq!(
            t.stream_graph_csv(&counts, 1),
            "day,aligned_id,intensity\n1,E1.1,5\n"
        );
        assert_eq!(
            t.stream_graph_csv(&BTreeMap::new(), 30),
            "day,aligned_id,intensity\n1,E1.1,1\n1,E1.2,2\n"
        );
    }
}
