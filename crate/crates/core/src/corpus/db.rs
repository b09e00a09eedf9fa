//! Extraction of function pairs from a CVEfixes SQLite database.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rusqlite::{Connection, OpenFlags};
use serde::Serialize;

use super::{pair_candidates, ChangeRow, CorpusError, CorpusFilter, Rejection, VulnRecord};

/// Tables and columns read from the database.
const REQUIRED: &[(&str, &[&str])] = &[
    ("fixes", &["cve_id", "hash"]),
    ("file_change", &["file_change_id", "hash", "filename", "old_path", "new_path", "programming_language"]),
    ("method_change", &["file_change_id", "name", "code", "before_change"]),
    ("cwe_classification", &["cve_id", "cwe_id"]),
    ("cve", &["cve_id", "description"]),
    ("cwe", &["cwe_id", "cwe_name", "description"]),
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub change_rows: usize,
    pub cves_without_cwe: usize,
    pub cves_with_excluded_cwe: usize,
    pub paired: usize,
    pub rejected: BTreeMap<String, usize>,
    pub below_min_pairs: usize,
    pub kept: usize,
}

pub fn ingest_database(db_path: &Path, filter: &CorpusFilter) -> Result<Vec<VulnRecord>, CorpusError> {
    ingest_database_with_stats(db_path, filter).map(|(records, _)| records)
}

pub fn ingest_database_with_stats(
    db_path: &Path,
    filter: &CorpusFilter,
) -> Result<(Vec<VulnRecord>, IngestStats), CorpusError> {
    filter.validate()?;
    let conn = open_read_only(db_path)?;
    check_schema(&conn)?;

    let mut stats = IngestStats::default();
    let cwes = cwe_by_cve(&conn)?;
    let rows = change_rows(&conn, &filter.target_language)?;
    stats.change_rows = rows.len();

    let mut usable = Vec::with_capacity(rows.len());
    let mut seen_missing = std::collections::HashSet::new();
    let mut seen_excluded = std::collections::HashSet::new();
    for raw in rows {
        let Some(labels) = cwes.get(&raw.cve_id) else {
            seen_missing.insert(raw.cve_id.clone());
            continue;
        };
        // A CVE carrying any low-information label is dropped as a whole.
        if labels.iter().any(|(id, _)| filter.is_excluded_cwe(id)) {
            seen_excluded.insert(raw.cve_id.clone());
            continue;
        }
        let (cwe_id, cwe_description) = labels[0].clone();
        usable.push(ChangeRow { cwe_id, cwe_description, ..raw });
    }
    stats.cves_without_cwe = seen_missing.len();
    stats.cves_with_excluded_cwe = seen_excluded.len();

    let paired = pair_candidates(usable);
    stats.paired = paired.len();
    let before_min = paired.len();
    let (mut kept, rejected) = filter.apply(paired);
    for (_, why) in &rejected {
        *stats.rejected.entry(rejection_label(why).to_string()).or_default() += 1;
    }
    stats.below_min_pairs = before_min - rejected.len() - kept.len();
    kept.sort_by_key(|a| a.key());
    stats.kept = kept.len();
    Ok((kept, stats))
}

fn rejection_label(why: &Rejection) -> &'static str {
    match why {
        Rejection::Language(_) => "language",
        Rejection::ExcludedCwe(_) => "excluded_cwe",
        Rejection::EmptyCode => "empty_code",
        Rejection::IdenticalCode => "identical_code",
        Rejection::OverTokenLimit { .. } => "over_token_limit",
    }
}

fn open_read_only(path: &Path) -> Result<Connection, CorpusError> {
    let unreadable = |reason: String| CorpusError::Unreadable { path: path.to_path_buf(), reason };
    if !path.is_file() {
        return Err(unreadable("no such file".into()));
    }
    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| unreadable(e.to_string()))?;
    // Opening is lazy; touching the schema surfaces non-database files.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
        .map_err(|e| unreadable(e.to_string()))?;
    Ok(conn)
}

fn check_schema(conn: &Connection) -> Result<(), CorpusError> {
    for (table, columns) in REQUIRED {
        let mut stmt = conn.prepare("SELECT name FROM pragma_table_info(?1)")?;
        let present: Vec<String> = stmt
            .query_map([table], |r| r.get::<_, String>(0))?
            .collect::<Result<_, _>>()?;
        if present.is_empty() {
            return Err(CorpusError::Schema { table: table.to_string(), detail: "table is missing".into() });
        }
        let missing: Vec<&str> = columns
            .iter()
            .copied()
            .filter(|c| !present.iter().any(|p| p.eq_ignore_ascii_case(c)))
            .collect();
        if !missing.is_empty() {
            return Err(CorpusError::Schema {
                table: table.to_string(),
                detail: format!("missing column(s) {}", missing.join(", ")),
            });
        }
    }
    Ok(())
}

/// CWE labels per CVE, sorted by id so the first is deterministic.
fn cwe_by_cve(conn: &Connection) -> Result<HashMap<String, Vec<(String, String)>>, CorpusError> {
    let mut stmt = conn.prepare(
        "SELECT DISTINCT cc.cve_id, cc.cwe_id, \
                COALESCE(NULLIF(TRIM(w.description), ''), w.cwe_name, '') \
         FROM cwe_classification cc LEFT JOIN cwe w ON w.cwe_id = cc.cwe_id \
         ORDER BY cc.cve_id, cc.cwe_id",
    )?;
    let mut map: HashMap<String, Vec<(String, String)>> = HashMap::new();
    let rows = stmt.query_map([], |r| {
        Ok((text(r, 0)?, text(r, 1)?, text(r, 2)?))
    })?;
    for row in rows {
        let (cve, cwe, desc) = row?;
        map.entry(cve).or_default().push((cwe.trim().to_string(), desc));
    }
    Ok(map)
}

fn change_rows(conn: &Connection, language: &str) -> Result<Vec<ChangeRow>, CorpusError> {
    let mut stmt = conn.prepare(
        "SELECT DISTINCT f.cve_id, fc.file_change_id, mc.name, mc.code, mc.before_change, \
                fc.old_path, fc.new_path, fc.filename, fc.programming_language, \
                COALESCE(c.description, '') \
         FROM method_change mc \
         JOIN file_change fc ON fc.file_change_id = mc.file_change_id \
         JOIN fixes f ON f.hash = fc.hash \
         LEFT JOIN cve c ON c.cve_id = f.cve_id \
         WHERE LOWER(fc.programming_language) = LOWER(?1) \
         ORDER BY f.cve_id, mc.name",
    )?;
    let rows = stmt.query_map([language], |r| {
        let old_path = text(r, 5)?;
        let new_path = text(r, 6)?;
        let filename = text(r, 7)?;
        let file_path = [old_path, new_path, filename]
            .into_iter()
            .find(|p| !p.is_empty() && p != "None")
            .unwrap_or_default();
        Ok(ChangeRow {
            cve_id: text(r, 0)?,
            cwe_id: String::new(),
            function_name: text(r, 2)?,
            file_path,
            code: text(r, 3)?,
            before_change: parse_flag(&text(r, 4)?),
            cve_description: clean_cve_description(&text(r, 9)?),
            cwe_description: String::new(),
            language: text(r, 8)?,
        })
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

/// Reads a column as text whatever its storage class; NULL becomes "".
fn text(row: &rusqlite::Row<'_>, idx: usize) -> rusqlite::Result<String> {
    use rusqlite::types::ValueRef;
    Ok(match row.get_ref(idx)? {
        ValueRef::Null => String::new(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => f.to_string(),
        ValueRef::Text(t) | ValueRef::Blob(t) => String::from_utf8_lossy(t).into_owned(),
    })
}

fn parse_flag(value: &str) -> bool {
    matches!(value.trim().to_ascii_lowercase().as_str(), "true" | "1" | "yes" | "t")
}

/// CVEfixes stores NVD descriptions as a python-literal list of
/// `{'lang': .., 'value': ..}` dicts; pull out the English value.
pub(crate) fn clean_cve_description(raw: &str) -> String {
    let trimmed = raw.trim();
    if !trimmed.starts_with("[{") {
        return trimmed.to_string();
    }
    for (key, quote) in [("'value': '", '\''), ("\"value\": \"", '"'), ("'value': \"", '"')] {
        if let Some(start) = trimmed.find(key) {
            let body = &trimmed[start + key.len()..];
            let mut out = String::new();
            let mut chars = body.chars();
            while let Some(c) = chars.next() {
                match c {
                    '\\' => {
                        if let Some(next) = chars.next() {
                            out.push(next);
                        }
                    }
                    c if c == quote => return out,
                    c => out.push(c),
                }
            }
            return out;
        }
    }
    trimmed.to_string()
}
