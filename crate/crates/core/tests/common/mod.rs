//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use vulnrepair::corpus::{GroundTruth, VulnRecord};
use vulnrepair::metric::parse_c;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Vec<T> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).unwrap_or_else(|e| panic!("{}:{}: {e}", path.display(), n + 1)))
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
pub struct MetricPair {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

/// Component scores from the independent implementation.
#[derive(Debug, Clone, Deserialize)]
pub struct OracleScores {
    pub id: String,
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: Option<f64>,
    pub dataflow: Option<f64>,
    pub composite: f64,
    pub candidate_tokens: Vec<String>,
    pub reference_tokens: Vec<String>,
    pub candidate_edges: Vec<(String, String, usize)>,
    pub reference_edges: Vec<(String, String, usize)>,
}

pub fn metric_pairs() -> Vec<MetricPair> {
    read_jsonl(&fixture_dir().join("metric_pairs.jsonl"))
}

pub fn metric_oracle() -> Vec<OracleScores> {
    let path = fixture_dir().join("metric_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// The first 25 pairs are vulnerable/fixed versions of distinct functions.
pub fn fixed_snippets() -> Vec<String> {
    metric_pairs().into_iter().take(25).map(|p| p.reference).collect()
}

pub fn c_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixture_dir().join("c_files"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "c"))
        .collect();
    files.sort();
    files
}

/// `(name, text, start, end)` of every function definition in `source`,
/// in source order, as seen by the parser.
pub fn function_definitions(source: &str) -> Vec<(String, String, usize, usize)> {
    let tree = parse_c(source).unwrap();
    let mut out = Vec::new();
    for id in tree.preorder() {
        if tree.kind(id) != "function_definition" {
            continue;
        }
        let mut decl = tree.child_by_field(id, "declarator");
        let mut name = None;
        while let Some(d) = decl {
            if tree.kind(d) == "identifier" {
                name = tree.text(d).map(str::to_string);
                break;
            }
            decl = tree.child_by_field(d, "declarator");
        }
        let node = tree.node(id);
        if let Some(name) = name {
            out.push((name, source[node.start_byte..node.end_byte].to_string(), node.start_byte, node.end_byte));
        }
    }
    out
}

/// Renames every `identifier` consistently to a fresh name. Fields, types
/// and keywords are untouched.
pub fn rename_identifiers(source: &str) -> String {
    let tree = parse_c(source).unwrap();
    let mut names: HashMap<String, String> = HashMap::new();
    let mut spans = Vec::new();
    for id in tree.preorder() {
        let node = tree.node(id);
        if node.kind != "identifier" || node.missing || node.start_byte == node.end_byte {
            continue;
        }
        let old = &source[node.start_byte..node.end_byte];
        let fresh = names.len();
        let new = names.entry(old.to_string()).or_insert_with(|| format!("r{fresh}_{}", old.len()));
        spans.push((node.start_byte, node.end_byte, new.clone()));
    }
    spans.sort();
    let mut out = source.to_string();
    for (start, end, new) in spans.into_iter().rev() {
        out.replace_range(start..end, &new);
    }
    out
}

/// Records built from the first `n` vulnerable/fixed pairs.
pub fn pair_records(n: usize) -> Vec<VulnRecord> {
    metric_pairs()
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, p)| VulnRecord {
            cve_id: format!("CVE-2021-{:04}", 100 + i),
            cwe_id: ["CWE-125", "CWE-787", "CWE-476"][i % 3].to_string(),
            function_name: function_definitions(&p.candidate)
                .first()
                .map(|f| f.0.clone())
                .unwrap_or_else(|| format!("fn_{i}")),
            file_path: format!("src/mod{i}.c"),
            before_code: p.candidate,
            after_code: GroundTruth::new(p.reference),
            cve_description: format!("Memory safety flaw number {i} in a parser."),
            cwe_description: "Improper bounds handling.".to_string(),
            language: "C".to_string(),
        })
        .collect()
}

/// A random but well-formed C function over a small variable pool.
pub fn generate_function(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars = ["a", "b", "n", "len", "idx", "tmp"];
    let params = rng.gen_range(1..=3);
    let mut src = String::from("int f(");
    src.push_str(&(0..params).map(|i| format!("int {}", vars[i])).collect::<Vec<_>>().join(", "));
    src.push_str(")\n{\n");
    for v in &vars[params..] {
        src.push_str(&format!("    int {v} = {};\n", rng.gen_range(0..9)));
    }
    let mut body = String::new();
    statements(&mut rng, &vars, 2, 5, &mut body);
    src.push_str(&body);
    src.push_str(&format!("    return {};\n}}\n", vars[rng.gen_range(0..vars.len())]));
    src
}

fn expr(rng: &mut ChaCha8Rng, vars: &[&str]) -> String {
    let v = |rng: &mut ChaCha8Rng| vars[rng.gen_range(0..vars.len())].to_string();
    match rng.gen_range(0..4) {
        0 => v(rng),
        1 => rng.gen_range(0..100).to_string(),
        2 => format!("{} {} {}", v(rng), ["+", "-", "*", "&"][rng.gen_range(0..4)], v(rng)),
        _ => format!("{} {} {}", v(rng), ["<", ">=", "==", "!="][rng.gen_range(0..4)], rng.gen_range(0..10)),
    }
}

fn statements(rng: &mut ChaCha8Rng, vars: &[&str], depth: usize, most: usize, out: &mut String) {
    let count = rng.gen_range(1..=most);
    let pad = "    ".repeat(depth - 1);
    for _ in 0..count {
        let target = vars[rng.gen_range(0..vars.len())];
        match if depth > 3 { rng.gen_range(0..3) } else { rng.gen_range(0..6) } {
            0 => out.push_str(&format!("{pad}{target} = {};\n", expr(rng, vars))),
            1 => out.push_str(&format!("{pad}{target} += {};\n", expr(rng, vars))),
            2 => out.push_str(&format!("{pad}{target}++;\n")),
            3 => {
                out.push_str(&format!("{pad}if ({}) {{\n", expr(rng, vars)));
                statements(rng, vars, depth + 1, 2, out);
                if rng.gen_bool(0.5) {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    statements(rng, vars, depth + 1, 2, out);
                }
                out.push_str(&format!("{pad}}}\n"));
            }
            4 => {
                out.push_str(&format!("{pad}while ({target} < {}) {{\n", rng.gen_range(1..50)));
                statements(rng, vars, depth + 1, 2, out);
                out.push_str(&format!("{pad}    {target}++;\n{pad}}}\n"));
            }
            _ => {
                out.push_str(&format!("{pad}for (int i = 0; i < {}; i++) {{\n", expr(rng, vars)));
                statements(rng, vars, depth + 1, 2, out);
                out.push_str(&format!("{pad}}}\n"));
            }
        }
    }
}

/// An OpenAI-style chat endpoint on localhost that answers each request
/// with `reply(request_json)`. Status codes other than 200 may be scripted
/// for the first requests.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(statuses: Vec<u16>, reply: F) -> Self
    where
        F: Fn(&serde_json::Value) -> String + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        let reply = Arc::new(reply);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let status = statuses.get(n).copied().unwrap_or(200);
                let _ = serve(stream, status, reply.as_ref());
            }
        });
        Self { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, status: u16, reply: &dyn Fn(&serde_json::Value) -> String) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let payload = if status == 200 {
        let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
        serde_json::json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply(&request)}, "finish_reason": "stop"}]
        })
        .to_string()
    } else {
        format!("{{\"error\":\"scripted {status}\"}}")
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

/// A deterministic "model": echoes the last fenced block of the newest user
/// message with a marker comment naming the turn.
pub fn echo_reply(request: &serde_json::Value) -> String {
    let messages = request["messages"].as_array().cloned().unwrap_or_default();
    let turn = messages.iter().filter(|m| m["role"] == "user").count();
    let last = messages.iter().rev().find(|m| m["role"] == "user").and_then(|m| m["content"].as_str()).unwrap_or("");
    let code = last
        .split("```c\n")
        .nth(1)
        .and_then(|rest| rest.split("\n```").next())
        .unwrap_or("int f(void) { return 0; }");
    let patched = match code.find('{') {
        Some(i) => format!("{}{{\n    /* checked at turn {turn} */{}", &code[..i], &code[i + 1..]),
        None => code.to_string(),
    };
    format!("Here is the repaired function.\n\n```c\n{patched}\n```\n")
}

/// Column values for one `method_change` row of the fixture database.
pub struct DbChange<'a> {
    pub cve: &'a str,
    pub function: &'a str,
    pub code: &'a str,
    pub before: &'a str,
    pub language: &'a str,
    pub file_change_id: &'a str,
}

/// Writes a database with the CVEfixes tables the ingester reads.
pub fn build_cvefixes_db(
    path: &Path,
    changes: &[DbChange<'_>],
    classifications: &[(&str, &str)],
    cves: &[(&str, &str)],
    cwes: &[(&str, &str, &str)],
) {
    let conn = rusqlite::Connection::open(path).unwrap();
    conn.execute_batch(
        "CREATE TABLE fixes (cve_id TEXT, hash TEXT, repo_url TEXT);
         CREATE TABLE file_change (file_change_id TEXT, hash TEXT, filename TEXT, old_path TEXT,
                                   new_path TEXT, programming_language TEXT, diff TEXT);
         CREATE TABLE method_change (method_change_id TEXT, file_change_id TEXT, name TEXT,
                                     signature TEXT, code TEXT, before_change TEXT);
         CREATE TABLE cwe_classification (cve_id TEXT, cwe_id TEXT);
         CREATE TABLE cve (cve_id TEXT, description TEXT, published_date TEXT);
         CREATE TABLE cwe (cwe_id TEXT, cwe_name TEXT, description TEXT);",
    )
    .unwrap();
    let mut seen = std::collections::HashSet::new();
    for (i, c) in changes.iter().enumerate() {
        let hash = format!("h-{}", c.cve);
        if seen.insert(c.cve.to_string()) {
            conn.execute("INSERT INTO fixes VALUES (?1, ?2, 'https://example.org/repo')", [c.cve, &hash]).unwrap();
        }
        if seen.insert(format!("fc:{}", c.file_change_id)) {
            let path = format!("src/{}.c", c.file_change_id);
            conn.execute(
                "INSERT INTO file_change VALUES (?1, ?2, ?3, ?4, ?4, ?5, '')",
                [c.file_change_id, &hash, &format!("{}.c", c.file_change_id), &path, c.language],
            )
            .unwrap();
        }
        conn.execute(
            "INSERT INTO method_change VALUES (?1, ?2, ?3, '', ?4, ?5)",
            [&format!("m{i}"), c.file_change_id, c.function, c.code, c.before],
        )
        .unwrap();
    }
    for (cve, cwe) in classifications {
        conn.execute("INSERT INTO cwe_classification VALUES (?1, ?2)", [cve, cwe]).unwrap();
    }
    for (cve, desc) in cves {
        conn.execute("INSERT INTO cve VALUES (?1, ?2, '2020-01-01')", [cve, desc]).unwrap();
    }
    for (id, name, desc) in cwes {
        conn.execute("INSERT INTO cwe VALUES (?1, ?2, ?3)", [id, name, desc]).unwrap();
    }
}
