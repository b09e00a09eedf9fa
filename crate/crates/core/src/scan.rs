//! Lexical masking of C text for brace matching.
//!
//! Bytes inside comments, string and character literals, and preprocessor
//! directive lines (with backslash continuations) are marked as non-code.
//! Brace and paren matching then only looks at code bytes.

#[derive(Debug, Clone)]
pub(crate) struct CodeMask {
    code: Vec<bool>,
}

impl CodeMask {
    pub(crate) fn new(text: &str) -> Self {
        let b = text.as_bytes();
        let mut code = vec![true; b.len()];
        let mut i = 0;
        let mut line_start = true;
        while i < b.len() {
            let c = b[i];
            if line_start && (c == b' ' || c == b'\t') {
                i += 1;
                continue;
            }
            if line_start && c == b'#' {
                // Directive runs to an unescaped newline.
                let start = i;
                while i < b.len() && b[i] != b'\n' {
                    if b[i] == b'\\' && i + 1 < b.len() && b[i + 1] == b'\n' {
                        i += 2;
                        continue;
                    }
                    if b[i] == b'/' && b.get(i + 1) == Some(&b'*') {
                        i = skip_block_comment(b, i);
                        continue;
                    }
                    i += 1;
                }
                code[start..i].iter_mut().for_each(|m| *m = false);
                continue;
            }
            line_start = false;
            match c {
                b'\n' => {
                    line_start = true;
                    i += 1;
                }
                b'/' if b.get(i + 1) == Some(&b'/') => {
                    let start = i;
                    while i < b.len() && b[i] != b'\n' {
                        i += 1;
                    }
                    code[start..i].iter_mut().for_each(|m| *m = false);
                }
                b'/' if b.get(i + 1) == Some(&b'*') => {
                    let start = i;
                    i = skip_block_comment(b, i);
                    code[start..i].iter_mut().for_each(|m| *m = false);
                }
                b'"' | b'\'' => {
                    let start = i;
                    i += 1;
                    while i < b.len() && b[i] != c && b[i] != b'\n' {
                        if b[i] == b'\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    i = (i + 1).min(b.len());
                    code[start..i].iter_mut().for_each(|m| *m = false);
                }
                _ => i += 1,
            }
        }
        Self { code }
    }

    pub(crate) fn is_code(&self, at: usize) -> bool {
        self.code.get(at).copied().unwrap_or(false)
    }

    /// Index of the bracket closing the one at `open`, skipping non-code.
    pub(crate) fn matching_close(&self, text: &str, open: usize) -> Option<usize> {
        let b = text.as_bytes();
        let (o, c) = match b.get(open)? {
            b'{' => (b'{', b'}'),
            b'(' => (b'(', b')'),
            b'[' => (b'[', b']'),
            _ => return None,
        };
        let mut depth = 0usize;
        for i in open..b.len() {
            if !self.code[i] {
                continue;
            }
            if b[i] == o {
                depth += 1;
            } else if b[i] == c {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
        }
        None
    }

    /// Index of the bracket opening the one at `close`, skipping non-code.
    pub(crate) fn matching_open(&self, text: &str, close: usize) -> Option<usize> {
        let b = text.as_bytes();
        let (o, c) = match b.get(close)? {
            b'}' => (b'{', b'}'),
            b')' => (b'(', b')'),
            b']' => (b'[', b']'),
            _ => return None,
        };
        let mut depth = 0usize;
        for i in (0..=close).rev() {
            if !self.code[i] {
                continue;
            }
            if b[i] == c {
                depth += 1;
            } else if b[i] == o {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
        }
        None
    }

    /// Next code byte at or after `from` that is not whitespace.
    pub(crate) fn next_significant(&self, text: &str, from: usize) -> Option<usize> {
        let b = text.as_bytes();
        (from..b.len()).find(|&i| self.code[i] && !b[i].is_ascii_whitespace())
    }

    /// Last code byte before `until` that is not whitespace.
    pub(crate) fn prev_significant(&self, text: &str, until: usize) -> Option<usize> {
        let b = text.as_bytes();
        (0..until.min(b.len())).rev().find(|&i| self.code[i] && !b[i].is_ascii_whitespace())
    }
}

fn skip_block_comment(b: &[u8], start: usize) -> usize {
    let mut i = start + 2;
    while i + 1 < b.len() {
        if b[i] == b'*' && b[i + 1] == b'/' {
            return i + 2;
        }
        i += 1;
    }
    b.len()
}

pub(crate) fn is_ident_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// Identifier ending just before `end` (exclusive), as a byte range.
pub(crate) fn ident_before(text: &str, end: usize) -> Option<(usize, usize)> {
    let b = text.as_bytes();
    let mut start = end;
    while start > 0 && is_ident_byte(b[start - 1]) {
        start -= 1;
    }
    (start < end && !b[start].is_ascii_digit()).then_some((start, end))
}
