//! Key message sampling: near-duplicate anchors and
//! representativeness/diversity-balanced selection within each anchor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnchorMode, PipelineConfig};
use crate::embedding::{cosine, embed_batch, Embedding, EmbeddingError, EmbeddingProvider};
use crate::model::MessageBlock;

/// Separator between key messages in an aggregated text.
pub const AGGREGATE_SEPARATOR: &str = "\n";

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("anchor {0} has a zero centroid")]
    ZeroCentroid(usize),
    #[error("member index {member} out of range for anchor {anchor}")]
    NoSuchMember { anchor: usize, member: usize },
    #[error("expected one embedding per message ({messages}), got {embeddings}")]
    EmbeddingCount { messages: usize, embeddings: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A group of near-duplicate messages from one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: usize,
    pub member_ids: Vec<String>,
    /// Positions of the members in the block, ascending.
    pub member_positions: Vec<usize>,
    pub member_embeddings: Vec<Embedding>,
    pub centroid: Embedding,
}

impl Anchor {
    fn founded_by(id: usize, message_id: &str, position: usize, z: &Embedding) -> Self {
        Self {
            id,
            member_ids: vec![message_id.to_string()],
            member_positions: vec![position],
            member_embeddings: vec![z.clone()],
            centroid: z.clone(),
        }
    }

    fn push(&mut self, message_id: &str, position: usize, z: &Embedding) {
        self.member_ids.push(message_id.to_string());
        self.member_positions.push(position);
        self.member_embeddings.push(z.clone());
        self.centroid = Embedding::mean(&self.member_embeddings).expect("non-empty anchor");
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    fn admits(&self, z: &Embedding, tau: f64, max_size: usize, mode: AnchorMode) -> bool {
        if self.len() >= max_size {
            return false;
        }
        match mode {
            AnchorMode::Online => cosine(z, &self.centroid).is_ok_and(|s| s >= tau),
            AnchorMode::Strict => self
                .member_embeddings
                .iter()
                .all(|m| cosine(z, m).is_ok_and(|s| s >= tau)),
        }
    }
}

/// Single pass over the block in ingestion order: each message joins the
/// first anchor that admits it, or founds a new one.
pub fn build_anchors(
    block: &MessageBlock,
    embeddings: &[Embedding],
    tau: f64,
    max_size: usize,
    mode: AnchorMode,
) -> Result<Vec<Anchor>, SamplingError> {
    if embeddings.len() != block.len() {
        return Err(SamplingError::EmbeddingCount {
            messages: block.len(),
            embeddings: embeddings.len(),
        });
    }
    let mut anchors: Vec<Anchor> = Vec::new();
    for (pos, (msg, z)) in block.messages.iter().zip(embeddings).enumerate() {
        match anchors
            .iter_mut()
            .find(|a| a.admits(z, tau, max_size, mode))
        {
            Some(anchor) => anchor.push(&msg.id, pos, z),
            None => {
                let id = anchors.len();
                anchors.push(Anchor::founded_by(id, &msg.id, pos, z));
            }
        }
    }
    Ok(anchors)
}

fn member(anchor: &Anchor, m: usize) -> Result<&Embedding, SamplingError> {
    anchor
        .member_embeddings
        .get(m)
        .ok_or(SamplingError::NoSuchMember {
            anchor: anchor.id,
            member: m,
        })
}

/// Cosine between a member and its anchor's centroid.
pub fn representativeness(m: usize, anchor: &Anchor) -> Result<f64, SamplingError> {
    let z = member(anchor, m)?;
    match cosine(z, &anchor.centroid) {
        Err(EmbeddingError::ZeroNorm) if anchor.centroid.norm() == 0.0 => {
            Err(SamplingError::ZeroCentroid(anchor.id))
        }
        other => Ok(other?),
    }
}

/// Mean cosine between a member and the other members of its anchor.
/// Zero for singleton anchors.
pub fn mean_pairwise_similarity(m: usize, anchor: &Anchor) -> Result<f64, SamplingError> {
    let z = member(anchor, m)?;
    let n = anchor.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (j, other) in anchor.member_embeddings.iter().enumerate() {
        if j != m {
            sum += cosine(z, other)?;
        }
    }
    Ok(sum / (n - 1) as f64)
}

/// Novelty of a member relative to the rest of its anchor:
/// `1 - mean pairwise similarity`, in [0, 2]. Zero for singleton anchors.
pub fn diversity(m: usize, anchor: &Anchor) -> Result<f64, SamplingError> {
    if anchor.len() < 2 {
        member(anchor, m)?;
        return Ok(0.0);
    }
    Ok(1.0 - mean_pairwise_similarity(m, anchor)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberScore {
    pub id: String,
    pub rep: f64,
    pub div: f64,
    pub score: f64,
}

/// The key messages chosen from one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySample {
    pub anchor_id: usize,
    /// In descending score order.
    pub selected_ids: Vec<String>,
    pub aggregated_text: String,
    pub scores: Vec<MemberScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiversityMode {
    #[default]
    Novelty,
    /// Raw mean pairwise similarity.
    AsPrinted,
}

/// Indices by descending score; equal scores keep their original order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Rank members by `lambda * rep + (1 - lambda) * div` and keep the top `p`.
/// `texts` is the full block text list, indexed by member position.
pub fn select_key_messages(
    anchor: &Anchor,
    texts: &[&str],
    lambda: f64,
    p: usize,
    mode: DiversityMode,
) -> Result<KeySample, SamplingError> {
    let mut scores = Vec::with_capacity(anchor.len());
    for m in 0..anchor.len() {
        let rep = representativeness(m, anchor)?;
        let div = match mode {
            DiversityMode::Novelty => diversity(m, anchor)?,
            DiversityMode::AsPrinted => mean_pairwise_similarity(m, anchor)?,
        };
        scores.push(MemberScore {
            id: anchor.member_ids[m].clone(),
            rep,
            div,
            score: lambda * rep + (1.0 - lambda) * div,
        });
    }
    let combined: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let mut order = rank_by_score(&combined);
    order.truncate(p);
    let selected_ids = order
        .iter()
        .map(|&m| anchor.member_ids[m].clone())
        .collect();
    let aggregated_text = order
        .iter()
        .map(|&m| texts[anchor.member_positions[m]])
        .collect::<Vec<_>>()
        .join(AGGREGATE_SEPARATOR);
    Ok(KeySample {
        anchor_id: anchor.id,
        selected_ids,
        aggregated_text,
        scores,
    })
}

/// Anchors and key samples of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBlock {
    pub block_index: usize,
    pub anchors: Vec<Anchor>,
    pub samples: Vec<KeySample>,
}

impl SampledBlock {
    /// Messages per anchor.
    pub fn compression_ratio(&self) -> f64 {
        let messages: usize = self.anchors.iter().map(Anchor::len).sum();
        messages as f64 / self.anchors.len().max(1) as f64
    }

    /// One JSON line per anchor with members, selection, and scores.
    pub fn dump_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            anchor_id: usize,
            member_ids: &'a [String],
            selected_ids: &'a [String],
            aggregated_text: &'a str,
            scores: &'a [MemberScore],
        }
        let mut out = String::new();
        for (a, s) in self.anchors.iter().zip(&self.samples) {
            let row = Row {
                anchor_id: a.id,
                member_ids: &a.member_ids,
                selected_ids: &s.selected_ids,
                aggregated_text: &s.aggregated_text,
                scores: &s.scores,
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}

/// Embed a block, build its anchors, and select key messages.
pub fn sample_block<P: EmbeddingProvider + ?Sized>(
    block: &MessageBlock,
    embedder: &P,
    config: &PipelineConfig,
) -> Result<SampledBlock, SamplingError> {
    let texts: Vec<String> = block.messages.iter().map(|m| m.text.clone()).collect();
    let embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        embed_batch(embedder, &texts)?
    };
    let anchors = build_anchors(
        block,
        &embeddings,
        config.tau,
        config.max_anchor_size,
        config.anchor_mode,
    )?;
    let mode = if config.div_as_printed {
        DiversityMode::AsPrinted
    } else {
        DiversityMode::Novelty
    };
    let text_refs = block.texts();
    let samples = anchors
        .iter()
        .map(|a| select_key_messages(a, &text_refs, config.lambda, config.p, mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampledBlock {
        block_index: block.index,
        anchors,
        samples,
    })
}
