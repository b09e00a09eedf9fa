//! A small total C lexer used by the n-gram components of the metric.
//!
//! Comments are treated as whitespace. Bytes that do not start any known
//! lexeme become single-character punctuation tokens, so lexing never fails.

use serde::{Deserialize, Serialize};

/// C11 reserved words.
pub const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Alignas", "_Alignof", "_Atomic", "_Bool",
    "_Complex", "_Generic", "_Imaginary", "_Noreturn", "_Static_assert", "_Thread_local",
];

pub fn is_c_keyword(word: &str) -> bool {
    C_KEYWORDS.contains(&word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Punctuation,
}

/// Lexemes of a snippet with a parallel list of kinds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
}

impl TokenSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, token: impl Into<String>, kind: TokenKind) {
        self.tokens.push(token.into());
        self.kinds.push(kind);
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn kinds(&self) -> &[TokenKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TokenKind)> {
        self.tokens.iter().map(String::as_str).zip(self.kinds.iter().copied())
    }

    /// Lexemes joined with single spaces.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }
}

// Longest first so that maximal munch falls out of a linear scan.
const OPERATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "^=", "|=", "##",
];

pub fn tokenize_code(source: &str) -> TokenSequence {
    let bytes = source.as_bytes();
    let mut out = TokenSequence::new();
    let mut i = 0;

    while i < bytes.len() {
        let b = bytes[i];

        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }

        if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i = match source[i + 2..].find("*/") {
                Some(end) => i + 2 + end + 2,
                None => bytes.len(),
            };
            continue;
        }

        if b.is_ascii_alphabetic() || b == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            // Encoding prefixes glue onto the following literal: L"..", u8'..'.
            if i < bytes.len()
                && (bytes[i] == b'"' || bytes[i] == b'\'')
                && matches!(&source[start..i], "L" | "u" | "U" | "u8")
            {
                let end = scan_quoted(bytes, i);
                out.push(&source[start..end], TokenKind::Literal);
                i = end;
                continue;
            }
            let word = &source[start..i];
            let kind = if is_c_keyword(word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            out.push(word, kind);
            continue;
        }

        if b.is_ascii_digit()
            || (b == b'.' && bytes.get(i + 1).is_some_and(|c| c.is_ascii_digit()))
        {
            let end = scan_number(bytes, i);
            out.push(&source[i..end], TokenKind::Literal);
            i = end;
            continue;
        }

        if b == b'"' || b == b'\'' {
            let end = scan_quoted(bytes, i);
            out.push(&source[i..end], TokenKind::Literal);
            i = end;
            continue;
        }

        if let Some(op) = OPERATORS.iter().find(|op| source[i..].starts_with(*op)) {
            out.push(*op, TokenKind::Punctuation);
            i += op.len();
            continue;
        }

        // Any other scalar value, including non-ASCII, is one punctuation token.
        let ch = source[i..].chars().next().expect("index is on a char boundary");
        out.push(ch.to_string(), TokenKind::Punctuation);
        i += ch.len_utf8();
    }

    out
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
            i += 1;
        } else if (c == b'+' || c == b'-')
            && i > start
            && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P')
            && !is_hex_prefixed(&bytes[start..i], bytes[i - 1])
        {
            i += 1;
        } else {
            break;
        }
    }
    i
}

// In `0x1e+2` the `e` is a hex digit, not an exponent marker.
fn is_hex_prefixed(number: &[u8], marker: u8) -> bool {
    let hex = number.len() > 1 && number[0] == b'0' && matches!(number[1], b'x' | b'X');
    hex && matches!(marker, b'e' | b'E')
}

/// Returns the index one past the closing quote, or the end of the line for
/// an unterminated literal.
fn scan_quoted(bytes: &[u8], start: usize) -> usize {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return i,
            c if c == quote => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len()
}
