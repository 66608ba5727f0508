use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no ```{tag} fenced block found in the reply")]
pub struct NoBlockFound {
    pub tag: String,
}

struct Block<'a> {
    info: &'a str,
    body: &'a str,
}

/// Splits on ``` fences, pairing them in order. An unclosed trailing fence
/// is ignored.
fn blocks(text: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(close) = after.find("```") else { break };
        let inner = &after[..close];
        let info_len = inner.find(|c: char| c.is_whitespace()).unwrap_or(inner.len());
        let (info, body) = inner.split_at(info_len);
        out.push(Block { info, body: body.trim() });
        rest = &after[close + 3..];
    }
    out
}

/// Content of the last fenced block labelled `tag` (case-insensitive),
/// otherwise of the last unlabelled block.
pub fn extract_fenced(text: &str, tag: &str) -> Result<String, NoBlockFound> {
    let all = blocks(text);
    all.iter()
        .rev()
        .find(|b| b.info.eq_ignore_ascii_case(tag))
        .or_else(|| all.iter().rev().find(|b| b.info.is_empty()))
        .map(|b| b.body.to_string())
        .ok_or_else(|| NoBlockFound { tag: tag.to_string() })
}

/// Picks the answer literal out of a direct-answer reply: a fenced block if
/// there is one, else the last line that looks like a list or tuple, else the
/// last non-empty line with any `Answer:` label removed.
pub fn extract_answer_text(text: &str) -> String {
    if let Some(b) = blocks(text).into_iter().next_back() {
        return b.body.to_string();
    }
    let strip = |line: &str| {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        for label in ["final answer:", "answer:"] {
            if lower.starts_with(label) {
                return t[label.len()..].trim().to_string();
            }
        }
        t.to_string()
    };
    let lines: Vec<String> = text.lines().map(strip).filter(|l| !l.is_empty()).collect();
    lines
        .iter()
        .rev()
        .find(|l| l.starts_with('[') || l.starts_with('('))
        .or_else(|| lines.last())
        .cloned()
        .unwrap_or_default()
}
