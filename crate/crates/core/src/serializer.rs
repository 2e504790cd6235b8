//! Linearization of questions, schema and matched values into one token
//! sequence, keeping track of which item every token came from.
//!
//! Single turn:
//!
//! ```text
//! q1 q2 ... | db_id | t1 : c11 [ v , v' ] , c12 | t2 : c21 , ...
//! ```
//!
//! Multi turn appends the history newest-first after a `||` marker:
//!
//! ```text
//! <current question> | db_id | ... || <turn t-1> | <turn t-2> | ...
//! ```

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{ColumnRef, QuestionTurn, Schema};

pub const DEFAULT_TOKEN_BUDGET: usize = 512;

pub const DELIMITERS: [&str; 6] = ["|", ":", ",", "[", "]", "||"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializeError {
    #[error("question turn {0} has no tokens")]
    EmptyQuestion(usize),
    #[error("value match references unknown column {0:?}")]
    UnknownColumn(ColumnRef),
    #[error("current turn {current} outside 1..={turns}")]
    TurnOutOfRange { current: usize, turns: usize },
    #[error("token budget {budget} is smaller than the {needed} tokens needed without history")]
    BudgetTooSmall { needed: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    QuestionToken,
    DbName,
    TableName,
    ColumnName,
    Value,
    Delimiter,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::QuestionToken => "question_token",
            ItemKind::DbName => "db_name",
            ItemKind::TableName => "table_name",
            ItemKind::ColumnName => "column_name",
            ItemKind::Value => "value",
            ItemKind::Delimiter => "delimiter",
        }
    }
}

/// Where an item comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemSource {
    /// Word `word` (0-based) of question turn `turn` (1-based).
    Question { turn: usize, word: usize },
    Database,
    Table(usize),
    Column(ColumnRef),
    /// A matched cell value, owned by `column`.
    Value { column: ColumnRef },
    Delimiter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub source: ItemSource,
    /// Token range inside [`SerializedInput::tokens`].
    pub span: Range<usize>,
    /// Original (un-lowercased) text of the item.
    pub text: String,
}

impl Item {
    pub fn kind(&self) -> ItemKind {
        match self.source {
            ItemSource::Question { .. } => ItemKind::QuestionToken,
            ItemSource::Database => ItemKind::DbName,
            ItemSource::Table(_) => ItemKind::TableName,
            ItemSource::Column(_) => ItemKind::ColumnName,
            ItemSource::Value { .. } => ItemKind::Value,
            ItemSource::Delimiter => ItemKind::Delimiter,
        }
    }

    pub fn turn(&self) -> Option<usize> {
        match self.source {
            ItemSource::Question { turn, .. } => Some(turn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedInput {
    pub tokens: Vec<String>,
    pub items: Vec<Item>,
    pub token_to_item: Vec<usize>,
    /// Byte range of each token inside [`SerializedInput::text`].
    pub offsets: Vec<Range<usize>>,
}

impl SerializedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Question turns present in the sequence, in order of appearance.
    pub fn turns(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for item in &self.items {
            if let Some(t) = item.turn() {
                if out.last() != Some(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// Item index of every question word, keyed by (turn, word).
    pub fn question_items(&self) -> BTreeMap<(usize, usize), usize> {
        self.items
            .iter()
            .enumerate()
            .filter_map(|(i, item)| match item.source {
                ItemSource::Question { turn, word } => Some(((turn, word), i)),
                _ => None,
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let items: Vec<Value> = self
            .items
            .iter()
            .map(|item| {
                let (table, column, turn) = match &item.source {
                    ItemSource::Question { turn, .. } => (None, None, Some(*turn)),
                    ItemSource::Table(t) => (Some(*t), None, None),
                    ItemSource::Column(c) | ItemSource::Value { column: c } => {
                        (Some(c.table), Some(c.column), None)
                    }
                    ItemSource::Database | ItemSource::Delimiter => (None, None, None),
                };
                json!({
                    "kind": item.kind(),
                    "table": table,
                    "column": column,
                    "turn": turn,
                    "span": [item.span.start, item.span.end],
                    "text": item.text,
                })
            })
            .collect();
        json!({
            "tokens": self.tokens,
            "items": items,
            "token_to_item": self.token_to_item,
        })
    }
}

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    items: Vec<Item>,
    token_to_item: Vec<usize>,
}

impl Builder {
    fn push(&mut self, source: ItemSource, text: &str, tokens: Vec<String>) {
        debug_assert!(!tokens.is_empty());
        let idx = self.items.len();
        let start = self.tokens.len();
        for tok in tokens {
            self.tokens.push(tok);
            self.token_to_item.push(idx);
        }
        self.items.push(Item {
            source,
            span: start..self.tokens.len(),
            text: text.to_string(),
        });
    }

    fn delimiter(&mut self, d: &str) {
        self.push(ItemSource::Delimiter, d, vec![d.to_string()]);
    }

    fn question(&mut self, turn: &QuestionTurn) {
        for (word, tok) in turn.tokens.iter().enumerate() {
            self.push(
                ItemSource::Question {
                    turn: turn.turn_index,
                    word,
                },
                &turn.text[tok.start..tok.end],
                vec![tok.text.clone()],
            );
        }
    }

    fn name(&mut self, source: ItemSource, name: &str) {
        let tokens: Vec<String> = name.to_lowercase().split_whitespace().map(str::to_string).collect();
        let tokens = if tokens.is_empty() { vec![name.to_lowercase()] } else { tokens };
        self.push(source, name, tokens);
    }

    fn schema(&mut self, schema: &Schema, values: &BTreeMap<ColumnRef, Vec<&str>>) {
        self.delimiter("|");
        self.name(ItemSource::Database, &schema.db_id);
        for (t, table) in schema.tables.iter().enumerate() {
            self.delimiter("|");
            self.name(ItemSource::Table(t), &table.name);
            self.delimiter(":");
            for (c, col) in table.columns.iter().enumerate() {
                if c > 0 {
                    self.delimiter(",");
                }
                let col_ref = ColumnRef::new(t, c);
                self.name(ItemSource::Column(col_ref), &col.name);
                if let Some(vals) = values.get(&col_ref) {
                    self.delimiter("[");
                    for (k, v) in vals.iter().enumerate() {
                        if k > 0 {
                            self.delimiter(",");
                        }
                        let toks = v.split_whitespace().map(str::to_string).collect();
                        self.push(ItemSource::Value { column: col_ref }, v, toks);
                    }
                    self.delimiter("]");
                }
            }
        }
    }

    fn finish(self) -> SerializedInput {
        let mut offsets = Vec::with_capacity(self.tokens.len());
        let mut pos = 0;
        for tok in &self.tokens {
            offsets.push(pos..pos + tok.len());
            pos += tok.len() + 1;
        }
        SerializedInput {
            tokens: self.tokens,
            items: self.items,
            token_to_item: self.token_to_item,
            offsets,
        }
    }
}

/// Groups value matches per column in first-match order, dropping duplicates
/// and values with no printable tokens.
fn group_values<'a>(
    schema: &Schema,
    value_matches: &'a [(ColumnRef, String)],
) -> Result<BTreeMap<ColumnRef, Vec<&'a str>>, SerializeError> {
    let mut grouped: BTreeMap<ColumnRef, Vec<&str>> = BTreeMap::new();
    for (col, value) in value_matches {
        if schema.column(*col).is_none() {
            return Err(SerializeError::UnknownColumn(*col));
        }
        if value.split_whitespace().next().is_none() {
            continue;
        }
        let vals = grouped.entry(*col).or_default();
        if !vals.contains(&value.as_str()) {
            vals.push(value);
        }
    }
    Ok(grouped)
}

fn core(question: &QuestionTurn, schema: &Schema, value_matches: &[(ColumnRef, String)]) -> Result<Builder, SerializeError> {
    if question.is_empty() {
        return Err(SerializeError::EmptyQuestion(question.turn_index));
    }
    let values = group_values(schema, value_matches)?;
    let mut b = Builder::default();
    b.question(question);
    b.schema(schema, &values);
    Ok(b)
}

pub fn serialize_single(
    question: &QuestionTurn,
    schema: &Schema,
    value_matches: &[(ColumnRef, String)],
) -> Result<SerializedInput, SerializeError> {
    Ok(core(question, schema, value_matches)?.finish())
}

/// Number of history turns (newest first) that fit next to a core of
/// `core_len` tokens. Each kept turn costs its words plus one delimiter.
pub fn history_fit(core_len: usize, history_lens: &[usize], budget: usize) -> usize {
    let mut total = core_len;
    let mut kept = 0;
    for len in history_lens {
        total += len + 1;
        if total > budget {
            break;
        }
        kept += 1;
    }
    kept
}

/// Serializes turn `current` (1-based) with as much history as `token_budget` allows.
pub fn serialize_multi(
    turns: &[QuestionTurn],
    current: usize,
    schema: &Schema,
    value_matches: &[(ColumnRef, String)],
    token_budget: usize,
) -> Result<SerializedInput, SerializeError> {
    if current == 0 || current > turns.len() {
        return Err(SerializeError::TurnOutOfRange {
            current,
            turns: turns.len(),
        });
    }
    let mut b = core(&turns[current - 1], schema, value_matches)?;
    if b.tokens.len() > token_budget {
        return Err(SerializeError::BudgetTooSmall {
            needed: b.tokens.len(),
            budget: token_budget,
        });
    }
    let history: Vec<&QuestionTurn> = turns[..current - 1].iter().rev().filter(|t| !t.is_empty()).collect();
    let lens: Vec<usize> = history.iter().map(|t| t.len()).collect();
    let kept = history_fit(b.tokens.len(), &lens, token_budget);
    for (k, turn) in history.iter().take(kept).enumerate() {
        b.delimiter(if k == 0 { "||" } else { "|" });
        b.question(turn);
    }
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Column, SqlType, Table};

    fn employee() -> Schema {
        let col = |n: &str, t| Column {
            name: n.into(),
            sql_type: t,
        };
        Schema {
            db_id: "employee_hire_evaluation".into(),
            tables: vec![Table {
                name: "employee".into(),
                columns: vec![
                    col("Employee_ID", SqlType::Number),
                    col("Name", SqlType::Text),
                    col("Age", SqlType::Number),
                    col("City", SqlType::Text),
                ],
                primary_key_indices: vec![0],
            }],
            foreign_keys: vec![],
        }
    }

    #[test]
    fn single_turn_template() {
        let q = QuestionTurn::new(1, "find all employees who are under age 30");
        let s = serialize_single(&q, &employee(), &[]).unwrap();
        assert_eq!(
            s.text(),
            "find all employees who are under age 30 | employee_hire_evaluation | employee : employee_id , name , age , city"
        );
    }

    #[test]
    fn values_follow_their_column() {
        let q = QuestionTurn::new(1, "employees from new york or boston");
        let matches = vec![
            (ColumnRef::new(0, 3), "New York".to_string()),
            (ColumnRef::new(0, 3), "Boston".to_string()),
            (ColumnRef::new(0, 3), "New York".to_string()),
        ];
        let s = serialize_single(&q, &employee(), &matches).unwrap();
        assert!(s.text().ends_with("city [ New York , Boston ]"), "{}", s.text());
        let value_items: Vec<&Item> = s.items.iter().filter(|i| i.kind() == ItemKind::Value).collect();
        assert_eq!(value_items.len(), 2);
        assert_eq!(value_items[0].span.len(), 2);
    }

    #[test]
    fn minimal_schema() {
        let schema = Schema {
            db_id: "db".into(),
            tables: vec![Table {
                name: "t1".into(),
                columns: vec![Column {
                    name: "c11".into(),
                    sql_type: SqlType::Text,
                }],
                primary_key_indices: vec![],
            }],
            foreign_keys: vec![],
        };
        let s = serialize_single(&QuestionTurn::new(1, "Q"), &schema, &[]).unwrap();
        assert_eq!(s.text(), "q | db | t1 : c11");
    }

    #[test]
    fn unknown_value_column_is_rejected() {
        let q = QuestionTurn::new(1, "x");
        let err = serialize_single(&q, &employee(), &[(ColumnRef::new(3, 0), "v".into())]).unwrap_err();
        assert_eq!(err, SerializeError::UnknownColumn(ColumnRef::new(3, 0)));
    }

    #[test]
    fn history_is_newest_first() {
        let turns = vec![
            QuestionTurn::new(1, "one"),
            QuestionTurn::new(2, "two two"),
            QuestionTurn::new(3, "three"),
        ];
        let s = serialize_multi(&turns, 3, &employee(), &[], DEFAULT_TOKEN_BUDGET).unwrap();
        assert!(s.text().ends_with("city || two two | one"), "{}", s.text());
        assert_eq!(s.turns(), vec![3, 2, 1]);
    }

    #[test]
    fn first_turn_equals_single() {
        let turns = vec![QuestionTurn::new(1, "one"), QuestionTurn::new(2, "two")];
        let multi = serialize_multi(&turns, 1, &employee(), &[], 100).unwrap();
        let single = serialize_single(&turns[0], &employee(), &[]).unwrap();
        assert_eq!(multi, single);
    }

    #[test]
    fn budget_too_small() {
        let turns = vec![QuestionTurn::new(1, "one")];
        let err = serialize_multi(&turns, 1, &employee(), &[], 5).unwrap_err();
        assert!(matches!(err, SerializeError::BudgetTooSmall { needed: 13, budget: 5 }));
    }

    #[test]
    fn history_fit_counts_delimiters() {
        assert_eq!(history_fit(10, &[2, 3], 12), 0);
        assert_eq!(history_fit(10, &[2, 3], 13), 1);
        assert_eq!(history_fit(10, &[2, 3], 17), 2);
        assert_eq!(history_fit(10, &[], 10), 0);
    }
}
