//! Database schemas in the Spider `tables.json` layout.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::CorpusError;

/// Coarse column type as recorded by Spider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqlType {
    Text,
    Number,
    Time,
    Boolean,
    Others,
}

impl SqlType {
    pub fn from_spider(name: &str) -> Self {
        match name.trim().to_ascii_lowercase().as_str() {
            "text" => SqlType::Text,
            "number" => SqlType::Number,
            "time" => SqlType::Time,
            "boolean" => SqlType::Boolean,
            _ => SqlType::Others,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SqlType::Text => "text",
            SqlType::Number => "number",
            SqlType::Time => "time",
            SqlType::Boolean => "boolean",
            SqlType::Others => "others",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub sql_type: SqlType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    /// Local column indices, in the order Spider lists them.
    pub primary_key_indices: Vec<usize>,
}

/// A column addressed as (table, local index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: usize,
    pub column: usize,
}

impl ColumnRef {
    pub fn new(table: usize, column: usize) -> Self {
        ColumnRef { table, column }
    }
}

/// A directed foreign-key constraint `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl Schema {
    pub fn column(&self, col: ColumnRef) -> Option<&Column> {
        self.tables.get(col.table)?.columns.get(col.column)
    }

    /// All columns in table-major order.
    pub fn column_refs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.tables.iter().enumerate().flat_map(|(t, table)| {
            (0..table.columns.len()).map(move |c| ColumnRef::new(t, c))
        })
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Position of a column in table-major order (the `*` column is not counted).
    pub fn flat_index(&self, col: ColumnRef) -> usize {
        self.tables[..col.table]
            .iter()
            .map(|t| t.columns.len())
            .sum::<usize>()
            + col.column
    }

    pub fn is_primary_key(&self, col: ColumnRef) -> bool {
        self.tables
            .get(col.table)
            .is_some_and(|t| t.primary_key_indices.contains(&col.column))
    }

    pub fn has_foreign_key(&self, from: ColumnRef, to: ColumnRef) -> bool {
        self.foreign_keys
            .iter()
            .any(|fk| fk.from == from && fk.to == to)
    }

    /// True when some column of `from_table` references a column of `to_table`.
    pub fn tables_linked(&self, from_table: usize, to_table: usize) -> bool {
        self.foreign_keys
            .iter()
            .any(|fk| fk.from.table == from_table && fk.to.table == to_table)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let name = name.to_lowercase();
        self.tables
            .iter()
            .position(|t| t.name.to_lowercase() == name)
    }

    pub fn column_by_name(&self, table: &str, column: &str) -> Option<ColumnRef> {
        let t = self.table_index(table)?;
        let column = column.to_lowercase();
        let c = self.tables[t]
            .columns
            .iter()
            .position(|c| c.name.to_lowercase() == column)?;
        Some(ColumnRef::new(t, c))
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let malformed = |field: &str, detail: String| CorpusError::MalformedSchema {
            db_id: self.db_id.clone(),
            field: field.to_string(),
            detail,
        };
        let mut names = HashSet::new();
        for table in &self.tables {
            if !names.insert(table.name.to_lowercase()) {
                return Err(malformed(
                    "table_names_original",
                    format!("duplicate table name `{}`", table.name),
                ));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if col.name.trim().is_empty() {
                    return Err(malformed(
                        "column_names_original",
                        format!("empty column name in table `{}`", table.name),
                    ));
                }
                if !cols.insert(col.name.to_lowercase()) {
                    return Err(malformed(
                        "column_names_original",
                        format!("duplicate column `{}` in table `{}`", col.name, table.name),
                    ));
                }
            }
            if let Some(pk) = table
                .primary_key_indices
                .iter()
                .find(|&&pk| pk >= table.columns.len())
            {
                return Err(malformed(
                    "primary_keys",
                    format!("index {pk} outside table `{}`", table.name),
                ));
            }
        }
        for fk in &self.foreign_keys {
            if self.column(fk.from).is_none() || self.column(fk.to).is_none() {
                return Err(malformed("foreign_keys", format!("dangling pair {fk:?}")));
            }
            if fk.from.table == fk.to.table {
                return Err(malformed(
                    "foreign_keys",
                    format!("pair {fk:?} stays inside one table"),
                ));
            }
        }
        Ok(())
    }

    /// Export in the Spider `tables.json` object layout.
    pub fn to_spider_json(&self) -> Value {
        let mut column_names = vec![json!([-1, "*"])];
        let mut column_types = vec![json!("text")];
        for (t, table) in self.tables.iter().enumerate() {
            for col in &table.columns {
                column_names.push(json!([t, col.name]));
                column_types.push(json!(col.sql_type.as_str()));
            }
        }
        let global = |c: ColumnRef| self.flat_index(c) + 1;
        let primary_keys: Vec<Value> = self
            .tables
            .iter()
            .enumerate()
            .flat_map(|(t, table)| {
                table
                    .primary_key_indices
                    .iter()
                    .map(move |&c| ColumnRef::new(t, c))
            })
            .map(|c| json!(global(c)))
            .collect();
        let foreign_keys: Vec<Value> = self
            .foreign_keys
            .iter()
            .map(|fk| json!([global(fk.from), global(fk.to)]))
            .collect();
        let mut obj = Map::new();
        obj.insert("db_id".into(), json!(self.db_id));
        obj.insert(
            "table_names_original".into(),
            json!(self.tables.iter().map(|t| &t.name).collect::<Vec<_>>()),
        );
        obj.insert("column_names_original".into(), Value::Array(column_names));
        obj.insert("column_types".into(), Value::Array(column_types));
        obj.insert("primary_keys".into(), Value::Array(primary_keys));
        obj.insert("foreign_keys".into(), Value::Array(foreign_keys));
        Value::Object(obj)
    }
}

fn field<'a>(obj: &'a Map<String, Value>, db_id: &str, name: &str) -> Result<&'a Value, CorpusError> {
    obj.get(name).ok_or_else(|| CorpusError::MalformedSchema {
        db_id: db_id.to_string(),
        field: name.to_string(),
        detail: "missing".into(),
    })
}

fn typed<T: for<'de> Deserialize<'de>>(value: &Value, db_id: &str, name: &str) -> Result<T, CorpusError> {
    T::deserialize(value).map_err(|e| CorpusError::MalformedSchema {
        db_id: db_id.to_string(),
        field: name.to_string(),
        detail: e.to_string(),
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PrimaryKeyEntry {
    Single(usize),
    Composite(Vec<usize>),
}

/// Parses one Spider schema object.
pub fn schema_from_spider(value: &Value) -> Result<Schema, CorpusError> {
    let obj = value.as_object().ok_or_else(|| CorpusError::MalformedSchema {
        db_id: "<unknown>".into(),
        field: "<root>".into(),
        detail: "schema entry is not an object".into(),
    })?;
    let db_id: String = match obj.get("db_id") {
        Some(v) => typed(v, "<unknown>", "db_id")?,
        None => {
            return Err(CorpusError::MalformedSchema {
                db_id: "<unknown>".into(),
                field: "db_id".into(),
                detail: "missing".into(),
            })
        }
    };
    let table_names: Vec<String> =
        typed(field(obj, &db_id, "table_names_original")?, &db_id, "table_names_original")?;
    let column_names: Vec<(i64, String)> =
        typed(field(obj, &db_id, "column_names_original")?, &db_id, "column_names_original")?;
    let column_types: Vec<String> =
        typed(field(obj, &db_id, "column_types")?, &db_id, "column_types")?;
    let primary_keys: Vec<PrimaryKeyEntry> =
        typed(field(obj, &db_id, "primary_keys")?, &db_id, "primary_keys")?;
    let foreign_keys: Vec<(usize, usize)> =
        typed(field(obj, &db_id, "foreign_keys")?, &db_id, "foreign_keys")?;

    let malformed = |field: &str, detail: String| CorpusError::MalformedSchema {
        db_id: db_id.clone(),
        field: field.to_string(),
        detail,
    };
    if column_types.len() != column_names.len() {
        return Err(malformed(
            "column_types",
            format!(
                "{} types for {} columns",
                column_types.len(),
                column_names.len()
            ),
        ));
    }

    let mut tables: Vec<Table> = table_names
        .iter()
        .map(|name| Table {
            name: name.clone(),
            columns: Vec::new(),
            primary_key_indices: Vec::new(),
        })
        .collect();
    // global Spider index -> (table, local); None for `*`
    let mut global: Vec<Option<ColumnRef>> = Vec::with_capacity(column_names.len());
    for (g, ((t, name), ty)) in column_names.iter().zip(&column_types).enumerate() {
        if *t < 0 {
            global.push(None);
            continue;
        }
        let t = *t as usize;
        let table = tables.get_mut(t).ok_or_else(|| {
            malformed(
                "column_names_original",
                format!("column {g} references table {t}"),
            )
        })?;
        global.push(Some(ColumnRef::new(t, table.columns.len())));
        table.columns.push(Column {
            name: name.clone(),
            sql_type: SqlType::from_spider(ty),
        });
    }
    let resolve = |g: usize, field: &str| -> Result<ColumnRef, CorpusError> {
        global
            .get(g)
            .copied()
            .flatten()
            .ok_or_else(|| malformed(field, format!("column index {g} does not name a real column")))
    };

    for entry in primary_keys {
        let ids = match entry {
            PrimaryKeyEntry::Single(g) => vec![g],
            PrimaryKeyEntry::Composite(gs) => gs,
        };
        for g in ids {
            let col = resolve(g, "primary_keys")?;
            let pks = &mut tables[col.table].primary_key_indices;
            if !pks.contains(&col.column) {
                pks.push(col.column);
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut fks = Vec::new();
    for (a, b) in foreign_keys {
        let from = resolve(a, "foreign_keys")?;
        let to = resolve(b, "foreign_keys")?;
        if from.table == to.table {
            log::warn!("{db_id}: dropping same-table foreign key {a} -> {b}");
            continue;
        }
        let fk = ForeignKey { from, to };
        if seen.insert(fk) {
            fks.push(fk);
        }
    }

    let schema = Schema {
        db_id,
        tables,
        foreign_keys: fks,
    };
    schema.validate()?;
    Ok(schema)
}

pub fn parse_schemas(text: &str) -> Result<Vec<Schema>, CorpusError> {
    let entries: Vec<Value> =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedSchema {
            db_id: "<file>".into(),
            field: "<root>".into(),
            detail: e.to_string(),
        })?;
    entries.iter().map(schema_from_spider).collect()
}

/// Loads every schema from a Spider `tables.json` file.
pub fn load_schemas(path: impl AsRef<Path>) -> Result<Vec<Schema>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_schemas(&text)
}

pub fn schemas_to_json(schemas: &[Schema]) -> Value {
    Value::Array(schemas.iter().map(Schema::to_spider_json).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dorm_fragment() -> Value {
        json!({
            "db_id": "dorm_1",
            "table_names_original": ["Dorm_amenity", "Has_amenity", "Dorm"],
            "column_names_original": [
                [-1, "*"], [0, "amenid"], [0, "amenity_name"],
                [1, "dormid"], [1, "amenid"], [2, "dormid"], [2, "dorm_name"]
            ],
            "column_types": ["text", "number", "text", "number", "number", "number", "text"],
            "primary_keys": [1, 5],
            "foreign_keys": [[4, 1], [3, 5]]
        })
    }

    #[test]
    fn star_column_is_dropped_and_indices_remapped() {
        let schema = schema_from_spider(&dorm_fragment()).unwrap();
        assert_eq!(schema.tables[0].columns.len(), 2);
        assert_eq!(schema.tables[0].primary_key_indices, vec![0]);
        assert_eq!(schema.tables[2].primary_key_indices, vec![0]);
        assert_eq!(
            schema.foreign_keys[0],
            ForeignKey {
                from: ColumnRef::new(1, 1),
                to: ColumnRef::new(0, 0)
            }
        );
        assert_eq!(schema.column_count(), 6);
    }

    #[test]
    fn missing_field_names_db_and_field() {
        let mut v = dorm_fragment();
        v.as_object_mut().unwrap().remove("column_types");
        match schema_from_spider(&v) {
            Err(CorpusError::MalformedSchema { db_id, field, .. }) => {
                assert_eq!(db_id, "dorm_1");
                assert_eq!(field, "column_types");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_foreign_key_is_rejected() {
        let mut v = dorm_fragment();
        v["foreign_keys"] = json!([[4, 42]]);
        let err = schema_from_spider(&v).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedSchema { ref field, .. } if field == "foreign_keys"));
    }

    #[test]
    fn star_as_primary_key_is_rejected() {
        let mut v = dorm_fragment();
        v["primary_keys"] = json!([0]);
        assert!(schema_from_spider(&v).is_err());
    }

    #[test]
    fn composite_primary_keys_are_accepted() {
        let mut v = dorm_fragment();
        v["primary_keys"] = json!([[3, 4], 1]);
        let schema = schema_from_spider(&v).unwrap();
        assert_eq!(schema.tables[1].primary_key_indices, vec![0, 1]);
    }

    #[test]
    fn same_table_foreign_key_is_dropped() {
        let mut v = dorm_fragment();
        v["foreign_keys"] = json!([[2, 1], [4, 1]]);
        let schema = schema_from_spider(&v).unwrap();
        assert_eq!(schema.foreign_keys.len(), 1);
    }

    #[test]
    fn duplicate_table_names_after_lowercasing() {
        let mut v = dorm_fragment();
        v["table_names_original"] = json!(["Dorm", "Has_amenity", "dorm"]);
        assert!(schema_from_spider(&v).is_err());
    }

    #[test]
    fn export_reloads_equal() {
        let schema = schema_from_spider(&dorm_fragment()).unwrap();
        let again = schema_from_spider(&schema.to_spider_json()).unwrap();
        assert_eq!(schema, again);
    }
}
