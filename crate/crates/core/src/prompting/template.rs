//! Placeholder substitution for prompt templates.
//!
//! `{name}` is replaced by the bound value, `{{` and `}}` produce literal
//! braces. A lone brace that does not open a valid placeholder name is kept
//! verbatim, so templates may contain C code or JSON. Substituted values are
//! never rescanned.

use std::collections::BTreeSet;

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    source: String,
}

impl Template {
    pub fn new(name: impl Into<String>, source: impl Into<String>) -> Self {
        Self { name: name.into(), source: source.into() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Names of every placeholder the template references.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        scan(&self.source, |piece| {
            if let Piece::Placeholder(name) = piece {
                names.insert(name.to_string());
            }
        });
        names
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.source.len() + 256);
        let mut missing = None;
        scan(&self.source, |piece| match piece {
            Piece::Text(text) => out.push_str(text),
            Piece::Placeholder(name) => match bindings.iter().find(|(k, _)| *k == name) {
                Some((_, value)) => out.push_str(value),
                None => {
                    missing.get_or_insert_with(|| name.to_string());
                }
            },
        });
        match missing {
            Some(placeholder) => Err(PromptError::UnboundPlaceholder {
                template: self.name.clone(),
                placeholder,
            }),
            None => Ok(out),
        }
    }
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn scan<'a>(source: &'a str, mut emit: impl FnMut(Piece<'a>)) {
    let mut rest = source;
    while let Some(pos) = rest.find(['{', '}']) {
        emit(Piece::Text(&rest[..pos]));
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            emit(Piece::Text(&tail[..1]));
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if is_placeholder_name(name) {
                    emit(Piece::Placeholder(name));
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        emit(Piece::Text(&tail[..1]));
        rest = &tail[1..];
    }
    emit(Piece::Text(rest));
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
        && !name.starts_with('_')
}
