//! Offline providers: a gold-label oracle and a request recorder.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{prompts, ChatProvider, ChatRequest, LlmError, Role, Task};
use crate::text;

/// Deterministic stand-in for both model roles, driven by gold labels.
///
/// Evaluation replies name the gold label of the first message id in the
/// request metadata and list the text's most frequent terms. Detection
/// replies pick the candidate equal to that gold label, or `Others`; with
/// probability `noise_rate` the reply is instead a uniformly random
/// candidate. Randomness is derived from the seed and the request content,
/// so replies do not depend on call order.
pub struct MockOracle {
    gold: HashMap<String, String>,
    noise_rate: f64,
    seed: u64,
    evaluation_calls: AtomicUsize,
    detection_calls: AtomicUsize,
}

impl MockOracle {
    pub fn new(
        gold: HashMap<String, String>,
        noise_rate: f64,
        seed: u64,
    ) -> Result<Self, LlmError> {
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(LlmError::InvalidRequest(format!(
                "noise rate {noise_rate} not in [0,1]"
            )));
        }
        Ok(Self {
            gold,
            noise_rate,
            seed,
            evaluation_calls: AtomicUsize::new(0),
            detection_calls: AtomicUsize::new(0),
        })
    }

    pub fn evaluation_calls(&self) -> usize {
        self.evaluation_calls.load(Ordering::SeqCst)
    }

    pub fn detection_calls(&self) -> usize {
        self.detection_calls.load(Ordering::SeqCst)
    }

    fn gold_of(&self, request: &ChatRequest) -> Result<&str, LlmError> {
        let id = request
            .metadata
            .message_ids
            .first()
            .ok_or_else(|| LlmError::InvalidRequest("no message ids in metadata".into()))?;
        self.gold
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| LlmError::UnknownMessage(id.clone()))
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for id in &request.metadata.message_ids {
            h.update(id.as_bytes());
            h.update([0]);
        }
        for m in &request.messages {
            h.update(m.content.as_bytes());
            h.update([1]);
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn user_text(request: &ChatRequest) -> &str {
        request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

impl ChatProvider for MockOracle {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let gold = self.gold_of(request)?;
        let input = Self::user_text(request);
        match request.task {
            Task::Evaluation => {
                self.evaluation_calls.fetch_add(1, Ordering::SeqCst);
                let keywords = text::top_terms(input, 10);
                Ok(json!({ "EVENT-NAME": gold, "KEYWORDS": keywords }).to_string())
            }
            Task::Detection => {
                self.detection_calls.fetch_add(1, Ordering::SeqCst);
                let system = request
                    .messages
                    .iter()
                    .find(|m| m.role == Role::System)
                    .map(|m| m.content.as_str())
                    .unwrap_or("");
                let candidates = prompts::parse_knowledge(system);
                let mut rng = self.rng_for(request);
                let corrupt = rng.random::<f64>() < self.noise_rate;
                let event = if corrupt && !candidates.is_empty() {
                    candidates[rng.random_range(0..candidates.len())].clone()
                } else if candidates.iter().any(|c| c == gold) {
                    gold.to_string()
                } else {
                    "Others".to_string()
                };
                Ok(json!({ "INPUT": input, "EVENT": event }).to_string())
            }
        }
    }
}

/// Wraps a provider and keeps every request it forwards.
pub struct RecordingProvider<P> {
    inner: P,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("recorder lock").clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.requests
            .lock()
            .expect("recorder lock")
            .push(request.clone());
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{detect_event, evaluate_event, Decision};

    fn oracle(noise: f64, seed: u64) -> MockOracle {
        let gold = [("m1", "Nilam"), ("m2", "Sandy"), ("m3", "Nilam")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        MockOracle::new(gold, noise, seed).unwrap()
    }

    fn ids(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn cands(names: &[&str]) -> Vec<(String, Vec<String>)> {
        names
            .iter()
            .map(|n| (n.to_string(), vec!["kw".to_string()]))
            .collect()
    }

    #[test]
    fn evaluation_names_gold_of_first_id() {
        let o = oracle(0.0, 1);
        let r = evaluate_event(&o, "storm nilam storm coast", &ids(&["m2", "m1"])).unwrap();
        assert_eq!(r.event_name, "Sandy");
        assert_eq!(r.keywords, vec!["storm", "nilam", "coast"]);
        assert_eq!(o.evaluation_calls(), 1);
    }

    #[test]
    fn detection_picks_gold_or_others() {
        let o = oracle(0.0, 1);
        let r = detect_event(&o, "x", &cands(&["Sandy", "Nilam"]), &ids(&["m1"])).unwrap();
        assert_eq!(r.decision, Decision::Existing("Nilam".into()));
        let r = detect_event(&o, "x", &cands(&["Sandy"]), &ids(&["m1"])).unwrap();
        assert_eq!(r.decision, Decision::Others);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let o = oracle(0.0, 1);
        assert_eq!(
            evaluate_event(&o, "x", &ids(&["zzz"])),
            Err(LlmError::UnknownMessage("zzz".into()))
        );
    }

    #[test]
    fn rejects_bad_noise_rate() {
        assert!(MockOracle::new(HashMap::new(), 1.5, 0).is_err());
    }

    #[test]
    fn full_noise_ignores_gold() {
        let o = oracle(1.0, 7);
        let c = cands(&["A", "B", "C", "D"]);
        let mut picks = std::collections::HashSet::new();
        for i in 0..40 {
            let r = detect_event(&o, &format!("text {i}"), &c, &ids(&["m1"])).unwrap();
            match r.decision {
                Decision::Existing(n) => {
                    picks.insert(n);
                }
                Decision::Others => panic!("full noise always answers a candidate"),
            }
        }
        assert!(picks.len() > 1);
    }

    #[test]
    fn same_seed_same_replies() {
        let c = cands(&["A", "Nilam", "C"]);
        let run = |seed| {
            let o = oracle(0.5, seed);
            (0..30)
                .map(|i| {
                    detect_event(&o, &format!("t{i}"), &c, &ids(&["m1"]))
                        .unwrap()
                        .decision
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
