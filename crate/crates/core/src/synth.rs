//! Synthetic labeled message streams for offline end-to-end runs.
//!
//! Every event draws its words from a private vocabulary whose tokens hash
//! to buckets no other event uses, so under [`HashEmbedder`] of the same
//! dimension messages of different events have cosine exactly zero.

use std::collections::HashSet;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::HashEmbedder;
use crate::model::{Message, MessageBlock};
use crate::text;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ru", "te", "zo", "vi", "na", "pe", "qu", "sa", "do", "fi", "gu", "ha", "jo",
    "ke", "li", "mo", "nu", "po", "ri", "su", "ta", "vo", "we", "xi", "ya", "ze", "bo",
];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic stream parameter: {0}")]
    Invalid(String),
    #[error("cannot reserve {needed} private buckets in dimension {dim}")]
    VocabularyExhausted { needed: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub events: usize,
    pub messages_per_event: usize,
    /// Probability that a message repeats an earlier message of its event.
    pub duplicate_rate: f64,
    pub days: usize,
    /// Private words per event.
    pub vocabulary: usize,
    /// Words per generated message.
    pub words_per_message: usize,
    /// Words shared by all events; any value above zero breaks separation.
    pub shared_words: usize,
    /// Must match the embedder dimension for the separation guarantee.
    pub hash_dim: usize,
    pub seed: u64,
    pub start_day: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            events: 5,
            messages_per_event: 200,
            duplicate_rate: 0.5,
            days: 1,
            vocabulary: 40,
            words_per_message: 5,
            shared_words: 0,
            hash_dim: HashEmbedder::DEFAULT_DIM,
            seed: 0,
            start_day: NaiveDate::from_ymd_opt(2012, 10, 10).expect("valid date"),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.events == 0 || self.messages_per_event == 0 || self.days == 0 {
            return bad("events, messages per event and days must be positive");
        }
        if !(0.0..1.0).contains(&self.duplicate_rate) {
            return bad("duplicate rate must lie in [0, 1)");
        }
        if self.vocabulary < 3
            || self.words_per_message == 0
            || self.words_per_message > self.vocabulary
        {
            return bad("need vocabulary >= 3 and 0 < words per message <= vocabulary");
        }
        Ok(())
    }
}

/// A generated event: its gold label and private vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub label: String,
    pub vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub events: Vec<SynthEvent>,
    pub shared: Vec<String>,
    pub blocks: Vec<MessageBlock>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

/// Draw `groups` word lists of `size` words each, where no two lists (and
/// no list and `shared`) hash a word into the same bucket.
fn disjoint_vocabularies(
    rng: &mut ChaCha8Rng,
    groups: usize,
    size: usize,
    shared: usize,
    dim: usize,
) -> Result<(Vec<Vec<String>>, Vec<String>), SynthError> {
    let needed = groups * size + shared;
    if needed > dim {
        return Err(SynthError::VocabularyExhausted { needed, dim });
    }
    let hasher = HashEmbedder::new(dim);
    let mut owner: Vec<Option<usize>> = vec![None; dim];
    let mut words: HashSet<String> = HashSet::new();
    let mut lists = vec![Vec::with_capacity(size); groups + 1];
    let target = |g: usize| if g == groups { shared } else { size };
    let mut attempts = 0usize;
    for (g, list) in lists.iter_mut().enumerate() {
        while list.len() < target(g) {
            attempts += 1;
            if attempts > needed * 1000 {
                return Err(SynthError::VocabularyExhausted { needed, dim });
            }
            let w = pseudo_word(rng);
            if text::is_stopword(&w) || words.contains(&w) {
                continue;
            }
            let b = hasher.bucket(&w);
            match owner[b] {
                Some(o) if o != g => continue,
                _ => {
                    owner[b] = Some(g);
                    words.insert(w.clone());
                    list.push(w);
                }
            }
        }
    }
    let shared_words = lists.pop().expect("shared list");
    Ok((lists, shared_words))
}

/// Generate a labeled stream. Each event's messages are spread evenly over
/// the days; within a day, messages of all events are interleaved.
pub fn generate(config: &SynthConfig) -> Result<SynthStream, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (vocabularies, shared) = disjoint_vocabularies(
        &mut rng,
        config.events,
        config.vocabulary,
        config.shared_words,
        config.hash_dim,
    )?;
    let events: Vec<SynthEvent> = vocabularies
        .into_iter()
        .map(|vocabulary| {
            let mut label = String::new();
            for w in &vocabulary[..2] {
                let mut c = w.chars();
                if !label.is_empty() {
                    label.push(' ');
                }
                label.extend(c.next().map(|f| f.to_ascii_uppercase()));
                label.push_str(c.as_str());
            }
            SynthEvent { label, vocabulary }
        })
        .collect();

    let mut per_day: Vec<Vec<(usize, String)>> = vec![Vec::new(); config.days];
    for (e, event) in events.iter().enumerate() {
        let mut history: Vec<String> = Vec::new();
        for k in 0..config.messages_per_event {
            let day = k * config.days / config.messages_per_event;
            let text = if !history.is_empty() && rng.random::<f64>() < config.duplicate_rate {
                history[rng.random_range(0..history.len())].clone()
            } else {
                let mut pool: Vec<&String> = event.vocabulary.iter().chain(&shared).collect();
                pool.shuffle(&mut rng);
                let t = pool[..config.words_per_message]
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                history.push(t.clone());
                t
            };
            per_day[day].push((e, text));
        }
    }

    let mut next_id = 0usize;
    let mut blocks = Vec::with_capacity(config.days);
    for (d, mut items) in per_day.into_iter().enumerate() {
        items.shuffle(&mut rng);
        let date = config.start_day + Duration::days(d as i64);
        let midnight = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"));
        let messages = items
            .into_iter()
            .enumerate()
            .map(|(i, (e, text))| {
                next_id += 1;
                Message {
                    id: format!("m{next_id:06}"),
                    text,
                    timestamp: Some(midnight + Duration::seconds(i as i64)),
                    gold_label: Some(events[e].label.clone()),
                }
            })
            .collect();
        blocks.push(MessageBlock {
            index: d + 1,
            day: Some(date),
            messages,
        });
    }
    Ok(SynthStream {
        events,
        shared,
        blocks,
    })
}
