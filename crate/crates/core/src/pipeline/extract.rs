//! Candidate patch extraction from raw model replies.

use serde::{Deserialize, Serialize};

use crate::metric::is_c_keyword;
use crate::scan::{ident_before, is_ident_byte, CodeMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    WellFormed,
    Recovered,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub code: Option<String>,
    pub extraction_status: ExtractionStatus,
}

impl CandidatePatch {
    pub fn none() -> Self {
        Self { code: None, extraction_status: ExtractionStatus::None }
    }

    pub fn code(&self) -> Option<&str> {
        self.code.as_deref()
    }
}

/// Pulls the candidate function out of a reply.
///
/// The first closed fenced block with non-blank content wins. Failing
/// that, the longest brace-balanced region that starts at a C function
/// signature is taken as a recovered patch.
pub fn extract_patch(response: &str) -> CandidatePatch {
    if let Some(code) = first_fenced_block(response) {
        return CandidatePatch { code: Some(code), extraction_status: ExtractionStatus::WellFormed };
    }
    match longest_function(response) {
        Some(code) => CandidatePatch { code: Some(code), extraction_status: ExtractionStatus::Recovered },
        None => CandidatePatch::none(),
    }
}

fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.split_inclusive('\n');
    while let Some(line) = lines.next() {
        if !line.trim_start().starts_with("```") {
            continue;
        }
        let mut body = String::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") {
                closed = true;
                break;
            }
            body.push_str(inner);
        }
        if !closed {
            return None;
        }
        let body = body.strip_suffix('\n').map(|b| b.strip_suffix('\r').unwrap_or(b)).unwrap_or(&body);
        if !body.trim().is_empty() {
            return Some(body.to_string());
        }
    }
    None
}

fn longest_function(text: &str) -> Option<String> {
    let mask = CodeMask::new(text);
    let b = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    for open in (0..b.len()).filter(|&i| b[i] == b'{' && mask.is_code(i)) {
        let Some(start) = signature_start(text, &mask, open) else { continue };
        let Some(close) = mask.matching_close(text, open) else { continue };
        let len = close + 1 - start;
        if best.is_none_or(|(s, e)| len > e - s) {
            best = Some((start, close + 1));
        }
    }
    best.map(|(s, e)| text[s..e].to_string())
}

/// Start of a function signature whose body opens at `open`, if any.
///
/// The signature is `specifiers name ( params )` where the specifiers are
/// identifiers and `*` on the line of the name, or on the previous line
/// when the name starts its line.
fn signature_start(text: &str, mask: &CodeMask, open: usize) -> Option<usize> {
    let b = text.as_bytes();
    let close_paren = mask.prev_significant(text, open)?;
    if b[close_paren] != b')' {
        return None;
    }
    let open_paren = mask.matching_open(text, close_paren)?;
    let mut name_end = open_paren;
    while name_end > 0 && (b[name_end - 1] == b' ' || b[name_end - 1] == b'\t') {
        name_end -= 1;
    }
    let (name_start, name_end) = ident_before(text, name_end)?;
    if is_c_keyword(&text[name_start..name_end]) {
        return None;
    }

    let line_start = text[..name_start].rfind('\n').map_or(0, |i| i + 1);
    let mut start = specifier_run_start(text, line_start, name_start);
    let mut has_type = start < name_start;
    if start == line_start && text[line_start..name_start].trim().is_empty() && line_start > 0 {
        // `static int\nname(...)`: take the previous line if it is all specifiers.
        let prev_end = line_start - 1;
        let prev_start = text[..prev_end].rfind('\n').map_or(0, |i| i + 1);
        if specifier_run_start(text, prev_start, prev_end) == prev_start && !text[prev_start..prev_end].trim().is_empty() {
            start = prev_start;
            has_type = true;
        }
    }
    if !has_type {
        return None;
    }
    let first = (start..name_start).find(|&i| !b[i].is_ascii_whitespace()).unwrap_or(name_start);
    Some(first)
}

/// Leftmost position in `[from, to]` from which everything up to `to` is
/// identifiers, `*` and blanks. Prose before the signature on the same
/// line stops the run, so only the trailing words are kept.
fn specifier_run_start(text: &str, from: usize, to: usize) -> usize {
    let b = text.as_bytes();
    let mut i = to;
    while i > from {
        let c = b[i - 1];
        if is_ident_byte(c) || c == b'*' || c == b' ' || c == b'\t' || c == b'\r' {
            i -= 1;
        } else {
            break;
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block() {
        let r = "Here you go:\n```c\nint f(void) {\n  return 1;\n}\n```\nDone.";
        let p = extract_patch(r);
        assert_eq!(p.extraction_status, ExtractionStatus::WellFormed);
        assert_eq!(p.code(), Some("int f(void) {\n  return 1;\n}"));
    }

    #[test]
    fn first_of_several_blocks() {
        let r = "```c\nint a(void) { return 1; }\n```\nor\n```c\nint b(void) { return 2; }\n```";
        assert_eq!(extract_patch(r).code(), Some("int a(void) { return 1; }"));
    }

    #[test]
    fn prose_only() {
        assert_eq!(extract_patch("I cannot fix this."), CandidatePatch::none());
        assert_eq!(extract_patch(""), CandidatePatch::none());
    }

    #[test]
    fn unfenced_function_is_recovered() {
        let r = "The fix adds a bounds check:\n\nstatic int get(const int *a, size_t n, size_t i)\n{\n  if (i >= n) return -1;\n  return a[i];\n}\n\nThis prevents the read.";
        let p = extract_patch(r);
        assert_eq!(p.extraction_status, ExtractionStatus::Recovered);
        assert_eq!(p.code(), Some("static int get(const int *a, size_t n, size_t i)\n{\n  if (i >= n) return -1;\n  return a[i];\n}"));
    }

    #[test]
    fn return_type_on_previous_line() {
        let r = "static int\nget(int i)\n{\n  return i;\n}";
        assert_eq!(extract_patch(r).code(), Some(r));
    }

    #[test]
    fn control_flow_braces_are_not_signatures() {
        assert_eq!(extract_patch("if (x) { y(); }"), CandidatePatch::none());
    }

    #[test]
    fn unclosed_fence_falls_back_to_recovery() {
        let r = "```c\nint f(int a) {\n  return a;\n}\n";
        let p = extract_patch(r);
        assert_eq!(p.extraction_status, ExtractionStatus::Recovered);
        assert_eq!(p.code(), Some("int f(int a) {\n  return a;\n}"));
    }
}
