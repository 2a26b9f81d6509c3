//! Prompt texts for the two model roles. These bytes go on the wire
//! unchanged, apart from the `{knowledge}` substitution.

/// System prompt of the Evaluation-LLM (event name and keyword extraction).
pub const EVALUATION_PROMPT: &str = "You are an event analysis assistant. Your task is to infer the event names discussed in the provided social media comments and extract keywords related to the event.

First, carefully read all the COMMENTS and understand the core content they discuss.

Second, summarize a concise and accurate EVENT NAME based on the COMMENTS.

Third, extract no more than 10 KEYWORDS related to the event from the comments, which should cover the core theme, characters, location, time, or other vital information about the event. Each KEYWORD must be a single word that appears in the COMMENTS.

Answer in JSON format, including EVENT-NAME (str) and KEYWORDS (list) attributes. Other than that, the answer must not include any other information.";

/// System prompt template of the Detection-LLM.
pub const DETECTION_PROMPT: &str = "The knowledge base contains EVENTs and corresponding KEYWORDs.

You are a social media comment classifier determining which one EVENT the INPUT belongs to in the knowledge base.

Answer in JSON format, including INPUT and EVENT attributes. Other than that, the answer must not include any other information.

When all knowledge base content is irrelevant to the INPUT, your EVENT answer must be 'Others'.

When the knowledge base is empty, your EVENT answer must be 'Others'.

Answers don't need to consider chat history.

Here is the knowledge base:

{knowledge}

The above is the knowledge base.";

pub const KNOWLEDGE_SLOT: &str = "{knowledge}";

/// Follow-up sent once when a reply is not valid JSON.
pub const JSON_REPAIR_PROMPT: &str = "Answer in JSON format only";

/// One `EVENT: name; KEYWORDS: k1, k2` line per candidate.
pub fn render_knowledge(candidates: &[(String, Vec<String>)]) -> String {
    candidates
        .iter()
        .map(|(name, kws)| format!("EVENT: {name}; KEYWORDS: {}", kws.join(", ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn detection_prompt(candidates: &[(String, Vec<String>)]) -> String {
    DETECTION_PROMPT.replacen(KNOWLEDGE_SLOT, &render_knowledge(candidates), 1)
}

/// Inverse of [`render_knowledge`] over a filled detection prompt.
pub fn parse_knowledge(prompt: &str) -> Vec<String> {
    let start = "Here is the knowledge base:\n\n";
    let end = "\n\nThe above is the knowledge base.";
    let Some(from) = prompt.find(start).map(|i| i + start.len()) else {
        return Vec::new();
    };
    let Some(to) = prompt.rfind(end) else {
        return Vec::new();
    };
    if to < from {
        return Vec::new();
    }
    prompt[from..to]
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("EVENT: ")?;
            let cut = rest.rfind("; KEYWORDS:").unwrap_or(rest.len());
            Some(rest[..cut].to_string())
        })
        .collect()
}
