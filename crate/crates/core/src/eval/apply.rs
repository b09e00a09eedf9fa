//! Function-level patching of whole C source files.
//!
//! Definitions are found by lexical scanning at brace depth zero, with
//! comments, literals and preprocessor lines masked out. A definition runs
//! from the first code byte after the previous top-level `;` or `}` to the
//! brace closing its body.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scan::{is_ident_byte, CodeMask};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("no definition of {0} found")]
    NotFound(String),
    #[error("{name} is defined {count} times")]
    Multiple { name: String, count: usize },
    #[error("unbalanced braces in the definition of {0}")]
    Unbalanced(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub start: usize,
    /// Exclusive; one past the closing brace.
    pub end: usize,
}

/// Byte span of the single definition of `function_name`.
pub fn locate_function(source: &str, function_name: &str) -> Result<FunctionSpan, ApplyError> {
    let mask = CodeMask::new(source);
    let b = source.as_bytes();
    let name = function_name.as_bytes();
    let mut spans = Vec::new();
    let mut unbalanced = false;

    let mut depth = 0i64;
    let mut boundary = 0usize;
    let mut i = 0usize;
    while i < b.len() {
        if !mask.is_code(i) {
            i += 1;
            continue;
        }
        match b[i] {
            b'{' | b'(' | b'[' => depth += 1,
            b'}' | b')' | b']' => {
                depth -= 1;
                if depth == 0 && b[i] == b'}' {
                    boundary = i + 1;
                }
            }
            b';' if depth == 0 => boundary = i + 1,
            _ => {}
        }
        let at_word = depth == 0
            && b[i..].starts_with(name)
            && (i == 0 || !is_ident_byte(b[i - 1]))
            && b.get(i + name.len()).is_none_or(|c| !is_ident_byte(*c));
        if at_word {
            match definition_body(source, &mask, i + name.len()) {
                Some(Ok((_, close))) => {
                    let start = mask.next_significant(source, boundary).unwrap_or(i);
                    spans.push(FunctionSpan { start, end: close + 1 });
                    // Resume after the body; the depth is back to zero there.
                    boundary = close + 1;
                    i = close + 1;
                    continue;
                }
                Some(Err(())) => unbalanced = true,
                None => {}
            }
            i += name.len();
            continue;
        }
        i += 1;
    }

    match spans.len() {
        1 => Ok(spans[0]),
        0 if unbalanced => Err(ApplyError::Unbalanced(function_name.to_string())),
        0 => Err(ApplyError::NotFound(function_name.to_string())),
        count => Err(ApplyError::Multiple { name: function_name.to_string(), count }),
    }
}

/// If `after_name` is followed by a parameter list and a body, the body's
/// brace positions; `Some(Err)` when the body never closes.
fn definition_body(source: &str, mask: &CodeMask, after_name: usize) -> Option<Result<(usize, usize), ()>> {
    let b = source.as_bytes();
    let open_paren = mask.next_significant(source, after_name)?;
    if b[open_paren] != b'(' {
        return None;
    }
    let mut at = mask.matching_close(source, open_paren)? + 1;
    // Skip attribute-like trailers such as `__attribute__((noinline))`.
    loop {
        let next = mask.next_significant(source, at)?;
        match b[next] {
            b'{' => {
                return Some(match mask.matching_close(source, next) {
                    Some(close) => Ok((next, close)),
                    None => Err(()),
                });
            }
            c if is_ident_byte(c) => {
                let mut end = next;
                while end < b.len() && is_ident_byte(b[end]) {
                    end += 1;
                }
                at = end;
                if let Some(p) = mask.next_significant(source, at) {
                    if b[p] == b'(' {
                        at = mask.matching_close(source, p)? + 1;
                    }
                }
            }
            _ => return None,
        }
    }
}

/// Replaces the definition of `function_name` with `patch`, leaving every
/// other byte untouched.
pub fn apply_patch(source_file: &str, function_name: &str, patch: &str) -> Result<String, ApplyError> {
    let span = locate_function(source_file, function_name)?;
    let mut out = String::with_capacity(source_file.len() - (span.end - span.start) + patch.len());
    out.push_str(&source_file[..span.start]);
    out.push_str(patch);
    out.push_str(&source_file[span.end..]);
    Ok(out)
}

/// Patches `path` and writes the result next to it with a `.patched`
/// suffix, or over it when `in_place` is set. Returns the written path.
pub fn apply_patch_to_file(path: &Path, function_name: &str, patch: &str, in_place: bool) -> Result<PathBuf, ApplyError> {
    let io = |e: std::io::Error, p: &Path| ApplyError::Io { path: p.display().to_string(), reason: e.to_string() };
    let source = std::fs::read_to_string(path).map_err(|e| io(e, path))?;
    let patched = apply_patch(&source, function_name, patch)?;
    let target = if in_place {
        path.to_path_buf()
    } else {
        let mut name = path.as_os_str().to_owned();
        name.push(".patched");
        PathBuf::from(name)
    };
    std::fs::write(&target, patched).map_err(|e| io(e, &target))?;
    Ok(target)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStatus {
    pub command: String,
    pub exit_code: Option<i32>,
    pub success: bool,
}

/// Runs a user-supplied build command through `sh -c` in `dir`.
pub fn run_build_command(command: &str, dir: &Path) -> Result<BuildStatus, ApplyError> {
    let status = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(dir)
        .status()
        .map_err(|e| ApplyError::Io { path: dir.display().to_string(), reason: e.to_string() })?;
    Ok(BuildStatus { command: command.to_string(), exit_code: status.code(), success: status.success() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = "#include <stdio.h>\n\
/* helper { */\n\
static int helper(int x);\n\
\n\
static int target(int x)\n\
{\n\
    const char *s = \"}\";\n\
    return helper(x) + s[0];\n\
}\n\
\n\
int helper(int x) { return x; }\n";

    #[test]
    fn only_function_is_replaced_entirely() {
        let src = "int f(void) { return 1; }";
        assert_eq!(apply_patch(src, "f", "int f(void) { return 2; }").unwrap(), "int f(void) { return 2; }");
    }

    #[test]
    fn surrounding_bytes_are_untouched() {
        let patch = "static int target(int x)\n{\n    return helper(x);\n}";
        let out = apply_patch(FILE, "target", patch).unwrap();
        let span = locate_function(FILE, "target").unwrap();
        assert_eq!(&out[..span.start], &FILE[..span.start]);
        assert!(out.ends_with(&FILE[span.end..]));
        assert_eq!(&FILE[span.start..span.start + 10], "static int");
    }

    #[test]
    fn prototypes_and_calls_are_not_definitions() {
        let span = locate_function(FILE, "helper").unwrap();
        assert!(FILE[span.start..span.end].starts_with("int helper(int x) {"));
    }

    #[test]
    fn missing_function() {
        assert_eq!(apply_patch(FILE, "nothing", "x"), Err(ApplyError::NotFound("nothing".into())));
    }

    #[test]
    fn duplicate_definitions() {
        let src = "int f(void) { return 1; }\n#if 0\nint f(void) { return 2; }\n#endif\n";
        assert!(matches!(apply_patch(src, "f", "x"), Err(ApplyError::Multiple { count: 2, .. })));
    }

    #[test]
    fn unclosed_body() {
        assert_eq!(apply_patch("int f(void) { if (x) {", "f", "x"), Err(ApplyError::Unbalanced("f".into())));
    }

    #[test]
    fn attribute_trailer() {
        let src = "int g(void) __attribute__((noinline)) { return 0; }\n";
        assert_eq!(locate_function(src, "g").unwrap(), FunctionSpan { start: 0, end: src.len() - 1 });
    }

    #[test]
    fn file_output_suffix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.c");
        std::fs::write(&path, FILE).unwrap();
        let out = apply_patch_to_file(&path, "helper", "int helper(int x) { return -x; }", false).unwrap();
        assert_eq!(out, dir.path().join("a.c.patched"));
        assert_eq!(std::fs::read_to_string(&path).unwrap(), FILE);
        let out = apply_patch_to_file(&path, "helper", "int helper(int x) { return -x; }", true).unwrap();
        assert_eq!(out, path);
        assert!(std::fs::read_to_string(&path).unwrap().contains("return -x;"));
    }

    #[test]
    fn build_command_status() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_build_command("true", dir.path()).unwrap().success);
        let failed = run_build_command("exit 3", dir.path()).unwrap();
        assert_eq!(failed.exit_code, Some(3));
        assert!(!failed.success);
    }
}
