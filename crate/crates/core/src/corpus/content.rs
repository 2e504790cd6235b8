//! Database cell values, read from SQLite files or JSON value dumps.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use super::schema::{ColumnRef, Schema};
use super::CorpusError;

pub const DEFAULT_VALUE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentConfig {
    /// Maximum number of distinct values kept per column.
    pub max_values_per_column: usize,
}

impl Default for ContentConfig {
    fn default() -> Self {
        ContentConfig {
            max_values_per_column: DEFAULT_VALUE_CAP,
        }
    }
}

/// Distinct cell values per column, first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentStore {
    values: BTreeMap<ColumnRef, Vec<String>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.values.values().all(Vec::is_empty)
    }

    pub fn values(&self, col: ColumnRef) -> &[String] {
        self.values.get(&col).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn columns(&self) -> impl Iterator<Item = (ColumnRef, &[String])> {
        self.values.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// Adds values to a column, skipping duplicates and empty strings.
    pub fn extend<I, S>(&mut self, col: ColumnRef, values: I, cap: usize)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entry = self.values.entry(col).or_default();
        let mut seen: HashSet<String> = entry.iter().cloned().collect();
        for v in values {
            if entry.len() >= cap {
                break;
            }
            let v = v.into();
            if v.is_empty() {
                continue;
            }
            if seen.insert(v.clone()) {
                entry.push(v);
            }
        }
    }

    pub fn get(&self, schema: &Schema, table: &str, column: &str) -> Option<&[String]> {
        let col = schema.column_by_name(table, column)?;
        self.values.get(&col).map(Vec::as_slice)
    }
}

/// Renders a float in plain decimal form: no exponent, no trailing zeros,
/// no leading `+`.
pub fn canonical_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    // Display for f64 is the shortest round-trip form and never uses exponents.
    format!("{x}")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValueDump {
    pub db_id: String,
    pub columns: Vec<DumpColumn>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DumpColumn {
    pub table: String,
    pub column: String,
    pub values: Vec<serde_json::Value>,
}

fn dump_value(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(match n.as_i64() {
            Some(i) => i.to_string(),
            None => canonical_real(n.as_f64().unwrap_or(f64::NAN)),
        }),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn content_from_dump(schema: &Schema, dump: &ValueDump, config: &ContentConfig) -> Result<ContentStore, CorpusError> {
    if dump.db_id != schema.db_id {
        return Err(CorpusError::ContentMismatch {
            db_id: schema.db_id.clone(),
            detail: format!("value dump is for database `{}`", dump.db_id),
        });
    }
    let mut store = ContentStore::new();
    for col in &dump.columns {
        let col_ref = schema.column_by_name(&col.table, &col.column).ok_or_else(|| {
            CorpusError::ContentMismatch {
                db_id: schema.db_id.clone(),
                detail: format!("column `{}.{}` is not in the schema", col.table, col.column),
            }
        })?;
        store.extend(
            col_ref,
            col.values.iter().filter_map(dump_value),
            config.max_values_per_column,
        );
    }
    Ok(store)
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

pub fn content_from_sqlite(schema: &Schema, path: &Path, config: &ContentConfig) -> Result<ContentStore, CorpusError> {
    let unreadable = |e: rusqlite::Error| CorpusError::UnreadableSource {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(unreadable)?;
    let mut store = ContentStore::new();
    for col_ref in schema.column_refs() {
        let table = &schema.tables[col_ref.table];
        let column = &table.columns[col_ref.column];
        let sql = format!(
            "SELECT DISTINCT {} FROM {}",
            quote_ident(&column.name),
            quote_ident(&table.name)
        );
        let mismatch = |e: rusqlite::Error| CorpusError::ContentMismatch {
            db_id: schema.db_id.clone(),
            detail: format!("{}.{}: {e}", table.name, column.name),
        };
        let mut stmt = conn.prepare(&sql).map_err(mismatch)?;
        let mut rows = stmt.query([]).map_err(mismatch)?;
        let mut values = Vec::new();
        while let Some(row) = rows.next().map_err(unreadable)? {
            let rendered = match row.get_ref(0).map_err(unreadable)? {
                ValueRef::Null | ValueRef::Blob(_) => continue,
                ValueRef::Integer(i) => i.to_string(),
                ValueRef::Real(x) => canonical_real(x),
                ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
            };
            values.push(rendered);
            if values.len() >= config.max_values_per_column * 2 {
                break;
            }
        }
        store.extend(col_ref, values, config.max_values_per_column);
    }
    Ok(store)
}

fn is_sqlite(path: &Path) -> bool {
    let mut header = [0u8; 16];
    match fs::File::open(path) {
        Ok(mut f) => {
            use std::io::Read;
            f.read_exact(&mut header).is_ok() && &header == b"SQLite format 3\0"
        }
        Err(_) => false,
    }
}

/// Loads cell values for `schema` from an SQLite database or a JSON value dump.
///
/// A dump file may hold a single dump object or an array of them; only the
/// dump whose `db_id` matches the schema is used.
pub fn load_content(schema: &Schema, source: impl AsRef<Path>, config: &ContentConfig) -> Result<ContentStore, CorpusError> {
    let path = source.as_ref();
    if is_sqlite(path) {
        return content_from_sqlite(schema, path, config);
    }
    let text = fs::read_to_string(path).map_err(|e| CorpusError::UnreadableSource {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let bad_json = |e: serde_json::Error| CorpusError::UnreadableSource {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad_json)?;
    let dumps: Vec<ValueDump> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value).map_err(bad_json)?,
        other => vec![serde_json::from_value(other).map_err(bad_json)?],
    };
    match dumps.iter().find(|d| d.db_id == schema.db_id) {
        Some(dump) => content_from_dump(schema, dump, config),
        None if dumps.len() == 1 => content_from_dump(schema, &dumps[0], config),
        None => Ok(ContentStore::new()),
    }
}

/// Locates the content source for `db_id` under `root`. A file is used as
/// is; a directory is searched for `{db}/{db}.sqlite`, `{db}.sqlite` and
/// `{db}.json`, in that order.
pub fn find_content_source(root: &Path, db_id: &str) -> Option<PathBuf> {
    if root.is_file() {
        return Some(root.to_path_buf());
    }
    [
        root.join(db_id).join(format!("{db_id}.sqlite")),
        root.join(format!("{db_id}.sqlite")),
        root.join(format!("{db_id}.json")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schema::{Column, SqlType, Table};

    fn schema() -> Schema {
        Schema {
            db_id: "hr".into(),
            tables: vec![Table {
                name: "employee".into(),
                columns: vec![
                    Column {
                        name: "city".into(),
                        sql_type: SqlType::Text,
                    },
                    Column {
                        name: "age".into(),
                        sql_type: SqlType::Number,
                    },
                ],
                primary_key_indices: vec![],
            }],
            foreign_keys: vec![],
        }
    }

    #[test]
    fn dump_values_are_deduplicated() {
        let dump: ValueDump = serde_json::from_value(serde_json::json!({
            "db_id": "hr",
            "columns": [{"table": "employee", "column": "city",
                         "values": ["New York", "Boston", "New York"]}]
        }))
        .unwrap();
        let store = content_from_dump(&schema(), &dump, &ContentConfig::default()).unwrap();
        assert_eq!(store.values(ColumnRef::new(0, 0)), ["New York", "Boston"]);
    }

    #[test]
    fn unknown_dump_column_is_a_mismatch() {
        let dump: ValueDump = serde_json::from_value(serde_json::json!({
            "db_id": "hr",
            "columns": [{"table": "employee", "column": "zipcode", "values": ["1"]}]
        }))
        .unwrap();
        let err = content_from_dump(&schema(), &dump, &ContentConfig::default()).unwrap_err();
        assert!(matches!(err, CorpusError::ContentMismatch { .. }));
    }

    #[test]
    fn cap_keeps_first_seen() {
        let mut store = ContentStore::new();
        store.extend(ColumnRef::new(0, 0), ["c", "a", "c", "b"], 2);
        assert_eq!(store.values(ColumnRef::new(0, 0)), ["c", "a"]);
    }

    #[test]
    fn canonical_numbers() {
        assert_eq!(canonical_real(30.0), "30");
        assert_eq!(canonical_real(2.50), "2.5");
        assert_eq!(canonical_real(-0.0), "0");
        assert_eq!(canonical_real(1e21), "1000000000000000000000");
        assert_eq!(canonical_real(0.1), "0.1");
    }

    #[test]
    fn content_source_lookup_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        assert_eq!(find_content_source(root, "hr"), None);
        fs::write(root.join("hr.json"), "{}").unwrap();
        assert_eq!(find_content_source(root, "hr"), Some(root.join("hr.json")));
        fs::write(root.join("hr.sqlite"), "").unwrap();
        assert_eq!(find_content_source(root, "hr"), Some(root.join("hr.sqlite")));
        fs::create_dir(root.join("hr")).unwrap();
        fs::write(root.join("hr").join("hr.sqlite"), "").unwrap();
        assert_eq!(find_content_source(root, "hr"), Some(root.join("hr").join("hr.sqlite")));
        let file = root.join("hr.json");
        assert_eq!(find_content_source(&file, "other"), Some(file.clone()));
    }
}
