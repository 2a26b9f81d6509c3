//! Recovering a JSON object from free-form model output.

use serde_json::{Map, Value};

fn strip_think_blocks(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_fences(s: &str) -> String {
    s.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// End offset (exclusive) of the balanced object starting at `start`.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced JSON object in `reply`, after removing reasoning blocks
/// and code fences.
pub fn extract_object(reply: &str) -> Option<Map<String, Value>> {
    let cleaned = strip_fences(&strip_think_blocks(reply));
    let mut from = 0;
    while let Some(off) = cleaned[from..].find('{') {
        let start = from + off;
        if let Some(end) = balanced_end(&cleaned, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&cleaned[start..end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

fn canonical_key(k: &str) -> String {
    k.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_uppercase)
        .collect()
}

/// Field lookup ignoring case and separators (`EVENT-NAME` = `event_name`).
pub fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    let want = canonical_key(name);
    obj.iter()
        .find(|(k, _)| canonical_key(k) == want)
        .map(|(_, v)| v)
}

pub fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// A keyword list given either as an array or a comma-separated string.
pub fn as_list(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items.iter().filter_map(as_text).collect(),
        Value::String(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
        _ => Vec::new(),
    }
}
