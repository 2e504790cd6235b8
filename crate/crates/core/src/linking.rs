//! Schema linking and database-content matching between question words and
//! schema items.

use std::collections::HashMap;
use std::ops::Range;

use serde::Serialize;

use crate::corpus::{is_punct, ColumnRef, ContentStore, Schema, SqlType};

/// Longest question n-gram considered for any match.
pub const MAX_NGRAM: usize = 5;

/// Minimum length (in characters) of a question n-gram accepted as a
/// substring match against a cell value.
pub const MIN_SUBSTRING_CHARS: usize = 4;

/// Minimum length of a schema word that a longer question word may extend
/// and still count as a partial match ("arrangements" for `arrange`).
pub const MIN_PREFIX_CHARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkLabel {
    ExactMatch,
    PartialMatch,
    NoMatch,
    ValueMatch,
}

/// A table or a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemaItem {
    Table(usize),
    Column(ColumnRef),
}

/// Removes a plural ending: `-ies` → `-y`, `-es` after a sibilant, otherwise
/// a final `-s` that is not part of `-ss`, `-us` or `-is`.
pub fn strip_plural(word: &str) -> String {
    let n = word.len();
    if n > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..n - 3]);
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes"] {
        if n > suffix.len() && word.ends_with(suffix) {
            return word[..n - 2].to_string();
        }
    }
    if n > 2 && word.ends_with('s') && !["ss", "us", "is"].iter().any(|e| word.ends_with(e)) {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

/// Canonical form of one word for matching: lowercased, punctuation removed,
/// plural ending stripped.
pub fn normalize_word(word: &str) -> String {
    let cleaned: String = word
        .chars()
        .filter(|c| !is_punct(*c))
        .flat_map(char::to_lowercase)
        .collect();
    strip_plural(&cleaned)
}

/// Whether normalized question word `tok` matches schema word `w` for a
/// partial link: equal, or `w` (at least [`MIN_PREFIX_CHARS`] long) starts `tok`.
pub fn word_part_of(tok: &str, w: &str) -> bool {
    tok == w || (w.chars().count() >= MIN_PREFIX_CHARS && tok.starts_with(w))
}

/// Words of a schema name: split on `_` and whitespace, lowercased.
pub fn name_words(name: &str) -> Vec<String> {
    name.split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Normalized words of a phrase, with punctuation-only words dropped.
pub fn normalized_phrase(words: &[&str]) -> Vec<String> {
    words
        .iter()
        .map(|w| normalize_word(w))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Exact/partial/no-match labels for every (question word, schema item) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaLinks {
    n_tokens: usize,
    n_tables: usize,
    /// Flat column index (table-major) per column.
    column_offsets: Vec<usize>,
    /// `[token][table]`
    tables: Vec<LinkLabel>,
    /// `[token][flat column]`
    columns: Vec<LinkLabel>,
    n_columns: usize,
}

impl SchemaLinks {
    fn empty(n_tokens: usize, schema: &Schema) -> Self {
        let mut column_offsets = Vec::with_capacity(schema.tables.len());
        let mut acc = 0;
        for t in &schema.tables {
            column_offsets.push(acc);
            acc += t.columns.len();
        }
        SchemaLinks {
            n_tokens,
            n_tables: schema.tables.len(),
            column_offsets,
            tables: vec![LinkLabel::NoMatch; n_tokens * schema.tables.len()],
            columns: vec![LinkLabel::NoMatch; n_tokens * acc],
            n_columns: acc,
        }
    }

    pub fn token_count(&self) -> usize {
        self.n_tokens
    }

    fn slot(&self, token: usize, item: SchemaItem) -> Option<usize> {
        if token >= self.n_tokens {
            return None;
        }
        match item {
            SchemaItem::Table(t) if t < self.n_tables => Some(token * self.n_tables + t),
            SchemaItem::Column(c) => {
                let off = *self.column_offsets.get(c.table)?;
                let flat = off + c.column;
                let next = self
                    .column_offsets
                    .get(c.table + 1)
                    .copied()
                    .unwrap_or(self.n_columns);
                (flat < next).then_some(token * self.n_columns + flat)
            }
            _ => None,
        }
    }

    /// Label for the question→schema direction.
    pub fn label(&self, token: usize, item: SchemaItem) -> Option<LinkLabel> {
        let slot = self.slot(token, item)?;
        Some(match item {
            SchemaItem::Table(_) => self.tables[slot],
            SchemaItem::Column(_) => self.columns[slot],
        })
    }

    /// Label for the schema→question direction; it mirrors [`SchemaLinks::label`].
    pub fn reverse_label(&self, item: SchemaItem, token: usize) -> Option<LinkLabel> {
        self.label(token, item)
    }

    fn set(&mut self, token: usize, item: SchemaItem, label: LinkLabel) {
        let slot = self.slot(token, item).expect("slot in range");
        match item {
            SchemaItem::Table(_) => self.tables[slot] = label,
            SchemaItem::Column(_) => self.columns[slot] = label,
        }
    }

    /// All schema items in table-then-column order.
    pub fn schema_items(&self) -> Vec<SchemaItem> {
        let mut out: Vec<SchemaItem> = (0..self.n_tables).map(SchemaItem::Table).collect();
        for t in 0..self.n_tables {
            let start = self.column_offsets[t];
            let end = self.column_offsets.get(t + 1).copied().unwrap_or(self.n_columns);
            out.extend((0..end - start).map(|c| SchemaItem::Column(ColumnRef::new(t, c))));
        }
        out
    }

    /// Every pair that carries something other than `NoMatch`.
    pub fn matches(&self) -> Vec<(usize, SchemaItem, LinkLabel)> {
        let items = self.schema_items();
        let mut out = Vec::new();
        for token in 0..self.n_tokens {
            for &item in &items {
                let label = self.label(token, item).unwrap();
                if label != LinkLabel::NoMatch {
                    out.push((token, item, label));
                }
            }
        }
        out
    }
}

fn schema_item_names(schema: &Schema) -> Vec<(SchemaItem, Vec<String>)> {
    let mut out = Vec::new();
    for (t, table) in schema.tables.iter().enumerate() {
        out.push((SchemaItem::Table(t), &table.name));
    }
    for c in schema.column_refs() {
        out.push((SchemaItem::Column(c), &schema.column(c).unwrap().name));
    }
    out.into_iter()
        .map(|(item, name)| {
            let words: Vec<String> = name_words(name).iter().map(|w| normalize_word(w)).collect();
            (item, words)
        })
        .collect()
}

/// Labels every (question word, schema item) pair.
///
/// Words inside a question n-gram that spells a whole name (n ≤ 5) are
/// exact matches for that item; other words that equal or extend one word of
/// the name are partial matches.
pub fn link_schema(question_tokens: &[String], schema: &Schema) -> SchemaLinks {
    let mut links = SchemaLinks::empty(question_tokens.len(), schema);
    let normalized: Vec<String> = question_tokens.iter().map(|t| normalize_word(t)).collect();
    for (item, words) in schema_item_names(schema) {
        let k = words.len();
        if k == 0 || words.iter().any(String::is_empty) {
            continue;
        }
        let mut exact = vec![false; normalized.len()];
        if k <= MAX_NGRAM && k <= normalized.len() {
            for start in 0..=normalized.len() - k {
                if normalized[start..start + k] == words[..] {
                    exact[start..start + k].iter_mut().for_each(|e| *e = true);
                }
            }
        }
        for (i, tok) in normalized.iter().enumerate() {
            if exact[i] {
                links.set(i, item, LinkLabel::ExactMatch);
            } else if !tok.is_empty() && words.iter().any(|w| word_part_of(tok, w)) {
                links.set(i, item, LinkLabel::PartialMatch);
            }
        }
    }
    links
}

/// A question span that matches a cell value of a text column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ValueMatch {
    pub span: Range<usize>,
    pub column: ColumnRef,
    pub value: String,
}

/// The fuzzy equality used for content matching: the normalized word
/// sequences are equal, or the raw n-gram (at least
/// [`MIN_SUBSTRING_CHARS`] characters) occurs inside the value.
pub fn fuzzy_value_match(ngram: &[&str], value: &str) -> bool {
    let norm = normalized_phrase(ngram);
    if norm.is_empty() {
        return false;
    }
    let value_words: Vec<String> = crate::corpus::tokenize_question(value)
        .into_iter()
        .map(|t| t.text)
        .collect();
    let value_refs: Vec<&str> = value_words.iter().map(String::as_str).collect();
    if normalized_phrase(&value_refs) == norm {
        return true;
    }
    let raw = ngram.join(" ").to_lowercase();
    raw.chars().count() >= MIN_SUBSTRING_CHARS && value.to_lowercase().contains(&raw)
}

struct IndexedValue<'a> {
    text: &'a str,
    lowered: String,
}

/// Precomputed lookup structure over the text columns of one database.
pub struct ValueIndex<'a> {
    /// normalized phrase → first (column, value) in column order
    by_phrase: HashMap<Vec<String>, Vec<(ColumnRef, &'a str)>>,
    columns: Vec<(ColumnRef, Vec<IndexedValue<'a>>)>,
}

impl<'a> ValueIndex<'a> {
    pub fn new(schema: &Schema, content: &'a ContentStore) -> Self {
        let mut by_phrase: HashMap<Vec<String>, Vec<(ColumnRef, &'a str)>> = HashMap::new();
        let mut columns = Vec::new();
        for (col, values) in content.columns() {
            match schema.column(col) {
                Some(c) if c.sql_type == SqlType::Text => {}
                _ => continue,
            }
            let mut indexed = Vec::with_capacity(values.len());
            for v in values {
                let words: Vec<String> = crate::corpus::tokenize_question(v)
                    .into_iter()
                    .map(|t| t.text)
                    .collect();
                let refs: Vec<&str> = words.iter().map(String::as_str).collect();
                let phrase = normalized_phrase(&refs);
                if !phrase.is_empty() {
                    let slot = by_phrase.entry(phrase).or_default();
                    if !slot.iter().any(|(c, _)| *c == col) {
                        slot.push((col, v.as_str()));
                    }
                }
                indexed.push(IndexedValue {
                    text: v,
                    lowered: v.to_lowercase(),
                });
            }
            columns.push((col, indexed));
        }
        ValueIndex { by_phrase, columns }
    }

    /// First value of `col` (in content order) that fuzzily matches `ngram`.
    fn first_match(&self, ngram: &[&str], col: ColumnRef, values: &[IndexedValue<'a>]) -> Option<&'a str> {
        let norm = normalized_phrase(ngram);
        if norm.is_empty() {
            return None;
        }
        let raw = ngram.join(" ").to_lowercase();
        let substring_ok = raw.chars().count() >= MIN_SUBSTRING_CHARS;
        let phrase_hit = self
            .by_phrase
            .get(&norm)
            .and_then(|hits| hits.iter().find(|(c, _)| *c == col));
        if !substring_ok {
            return phrase_hit.map(|(_, v)| *v);
        }
        // a substring hit may come earlier in content order than the phrase hit
        let phrase_text = phrase_hit.map(|(_, v)| *v);
        for v in values {
            if Some(v.text) == phrase_text || v.lowered.contains(&raw) {
                return Some(v.text);
            }
        }
        phrase_text
    }

    /// Maximal matching spans per column, sorted by (start, end, column).
    /// A span's first and last tokens are words.
    pub fn matches(&self, question_tokens: &[String]) -> Vec<ValueMatch> {
        let words: Vec<&str> = question_tokens.iter().map(String::as_str).collect();
        // spans start and end on a word, never on punctuation
        let is_word: Vec<bool> = words.iter().map(|w| !normalize_word(w).is_empty()).collect();
        let mut out = Vec::new();
        for (col, values) in &self.columns {
            let mut found: Vec<(Range<usize>, &str)> = Vec::new();
            for start in 0..words.len() {
                if !is_word[start] {
                    continue;
                }
                for len in 1..=MAX_NGRAM.min(words.len() - start) {
                    let span = start..start + len;
                    if !is_word[span.end - 1] {
                        continue;
                    }
                    if let Some(v) = self.first_match(&words[span.clone()], *col, values) {
                        found.push((span, v));
                    }
                }
            }
            // keep spans not strictly contained in another matching span
            let maximal: Vec<&(Range<usize>, &str)> = found
                .iter()
                .filter(|(s, _)| {
                    !found.iter().any(|(o, _)| {
                        o.start <= s.start && s.end <= o.end && o.len() > s.len()
                    })
                })
                .collect();
            out.extend(maximal.into_iter().map(|(span, v)| ValueMatch {
                span: span.clone(),
                column: *col,
                value: v.to_string(),
            }));
        }
        out.sort_by(|a, b| {
            (a.span.start, a.span.end, a.column).cmp(&(b.span.start, b.span.end, b.column))
        });
        out
    }
}

/// Finds question spans that mention cell values of text columns.
pub fn match_values(question_tokens: &[String], schema: &Schema, content: &ContentStore) -> Vec<ValueMatch> {
    ValueIndex::new(schema, content).matches(question_tokens)
}

/// Distinct (column, value) pairs in first-match order, ready for serialization.
pub fn value_insertions(matches: &[ValueMatch]) -> Vec<(ColumnRef, String)> {
    let mut out: Vec<(ColumnRef, String)> = Vec::new();
    for m in matches {
        if !out.iter().any(|(c, v)| *c == m.column && *v == m.value) {
            out.push((m.column, m.value.clone()));
        }
    }
    out
}
