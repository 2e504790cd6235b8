//! Interaction graph construction: one relation label for every ordered pair
//! of items in a serialized input.
//!
//! Cells start from the kind-pair default returned by [`base_relation`] and
//! are then overwritten family by family in increasing priority, so a later
//! family always wins over an earlier one:
//!
//! 1. schema structure (same-table, has/primary key, foreign keys)
//! 2. column/value ownership
//! 3. schema linking (partial, exact, then value matches)
//! 4. question-question: distance / none-syntax inside a turn, syntax edges,
//!    co-mention, coreference
//! 5. identities on the diagonal
//!
//! Any cell in a delimiter row or column stays `No-Relation`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde_json::{json, Value};
use thiserror::Error;

use crate::annotations::{CorefLink, DependencyEdge};
use crate::corpus::{ColumnRef, Schema};
use crate::linking::{LinkLabel, SchemaItem, SchemaLinks, ValueMatch};
use crate::relation::RelationType;
use crate::serializer::{ItemSource, SerializedInput};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("relation matrix of side {size} needs {expected} cells, got {got}")]
    BadMatrix { size: usize, expected: usize, got: usize },
    #[error("relation id {0} outside the vocabulary")]
    IdOutOfRange(u16),
}

/// A square matrix of relation ids, row = head, column = tail.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationMatrix {
    size: usize,
    ids: Vec<u16>,
}

impl RelationMatrix {
    pub fn filled(size: usize, relation: RelationType) -> Self {
        RelationMatrix {
            size,
            ids: vec![relation.id(); size * size],
        }
    }

    pub fn from_ids(size: usize, ids: Vec<u16>) -> Result<Self, GraphError> {
        if ids.len() != size * size {
            return Err(GraphError::BadMatrix {
                size,
                expected: size * size,
                got: ids.len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= RelationType::COUNT) {
            return Err(GraphError::IdOutOfRange(bad));
        }
        Ok(RelationMatrix { size, ids })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn id(&self, head: usize, tail: usize) -> u16 {
        self.ids[head * self.size + tail]
    }

    pub fn get(&self, head: usize, tail: usize) -> RelationType {
        RelationType::from_id(self.id(head, tail)).expect("ids are validated on construction")
    }

    pub fn set(&mut self, head: usize, tail: usize, relation: RelationType) {
        self.ids[head * self.size + tail] = relation.id();
    }

    pub fn row(&self, head: usize) -> &[u16] {
        &self.ids[head * self.size..(head + 1) * self.size]
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }
}

/// Everything besides the serialized input and schema that feeds the graph.
#[derive(Debug, Clone, Default)]
pub struct GraphEvidence {
    /// Schema links per question turn.
    pub links: BTreeMap<usize, SchemaLinks>,
    /// Value matches tagged with the turn they were found in.
    pub value_matches: Vec<(usize, ValueMatch)>,
    pub dependencies: Vec<DependencyEdge>,
    pub corefs: Vec<CorefLink>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    pub input: SerializedInput,
    pub matrix: RelationMatrix,
}

impl InteractionGraph {
    pub fn len(&self) -> usize {
        self.matrix.size()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.size() == 0
    }

    pub fn get(&self, head: usize, tail: usize) -> RelationType {
        self.matrix.get(head, tail)
    }

    /// Cells that differ from the kind-pair default.
    pub fn sparse_cells(&self) -> Vec<(usize, usize, RelationType)> {
        let items = &self.input.items;
        let mut out = Vec::new();
        for i in 0..items.len() {
            for j in 0..items.len() {
                let r = self.matrix.get(i, j);
                if r != base_relation(&items[i].source, &items[j].source) {
                    out.push((i, j, r));
                }
            }
        }
        out
    }

    /// Items, sparse cells and histogram as a JSON document.
    pub fn to_json(&self) -> Value {
        let serialized = self.input.to_json();
        let cells: Vec<Value> = self
            .sparse_cells()
            .into_iter()
            .map(|(i, j, r)| json!({"i": i, "j": j, "relation": r.name()}))
            .collect();
        json!({
            "n": self.len(),
            "tokens": serialized["tokens"],
            "items": serialized["items"],
            "cells": cells,
            "histogram": histogram_json(&relation_histogram(&self.matrix)),
        })
    }
}

/// Rebuilds the dense matrix from item sources and the sparse cell list.
pub fn densify(items: &[ItemSource], cells: &[(usize, usize, RelationType)]) -> Result<RelationMatrix, GraphError> {
    let n = items.len();
    let mut m = RelationMatrix::filled(n, RelationType::NoRelation);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, base_relation(&items[i], &items[j]));
        }
    }
    for &(i, j, r) in cells {
        if i >= n || j >= n {
            return Err(GraphError::InconsistentInputs(format!("cell ({i}, {j}) outside {n} items")));
        }
        m.set(i, j, r);
    }
    Ok(m)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Question,
    Table,
    Column,
    /// Database name and inserted values: schema-side items that are
    /// neither tables nor columns.
    Other,
    Delimiter,
}

fn class(source: &ItemSource) -> Class {
    match source {
        ItemSource::Question { .. } => Class::Question,
        ItemSource::Table(_) => Class::Table,
        ItemSource::Column(_) => Class::Column,
        ItemSource::Database | ItemSource::Value { .. } => Class::Other,
        ItemSource::Delimiter => Class::Delimiter,
    }
}

/// Default label of an off-diagonal cell, determined by the item kinds alone.
pub fn base_relation(head: &ItemSource, tail: &ItemSource) -> RelationType {
    use Class::*;
    use RelationType as R;
    match (class(head), class(tail)) {
        (Delimiter, _) | (_, Delimiter) => R::NoRelation,
        (Question, Question) => R::QqGeneric,
        (Question, Table) => R::QtNoMatch,
        (Question, Column) => R::QcNoMatch,
        (Question, Other) => R::QuestionStarGeneric,
        (Table, Question) => R::TqNoMatch,
        (Column, Question) => R::CqNoMatch,
        (Other, Question) => R::StarQuestionGeneric,
        (Table, Table) => R::TtGeneric,
        (Table, Column) => R::TcGeneric,
        (Table, Other) => R::TableStarGeneric,
        (Column, Table) => R::CtGeneric,
        (Column, Column) => R::CcGeneric,
        (Column, Other) => R::ColumnStarGeneric,
        (Other, Table) => R::StarTableGeneric,
        (Other, Column) => R::StarColumnGeneric,
        (Other, Other) => R::NoRelation,
    }
}

/// Label on the diagonal for an item of this kind.
pub fn identity_relation(source: &ItemSource) -> RelationType {
    match class(source) {
        Class::Question => RelationType::QqIdentity,
        Class::Table => RelationType::TtIdentity,
        Class::Column => RelationType::CcIdentity,
        Class::Other => RelationType::StarStarIdentity,
        Class::Delimiter => RelationType::NoRelation,
    }
}

fn inconsistent(msg: impl Into<String>) -> GraphError {
    GraphError::InconsistentInputs(msg.into())
}

/// Item indices grouped by what they stand for.
struct ItemIndex {
    tables: HashMap<usize, usize>,
    columns: HashMap<ColumnRef, usize>,
    values: Vec<(usize, ColumnRef)>,
    /// turn → item index per word
    turns: BTreeMap<usize, Vec<usize>>,
}

fn index_items(input: &SerializedInput, schema: &Schema) -> Result<ItemIndex, GraphError> {
    let mut idx = ItemIndex {
        tables: HashMap::new(),
        columns: HashMap::new(),
        values: Vec::new(),
        turns: BTreeMap::new(),
    };
    let mut words: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (i, item) in input.items.iter().enumerate() {
        match &item.source {
            ItemSource::Table(t) => {
                if *t >= schema.tables.len() {
                    return Err(inconsistent(format!("item {i} names table {t} absent from the schema")));
                }
                idx.tables.insert(*t, i);
            }
            ItemSource::Column(c) => {
                if schema.column(*c).is_none() {
                    return Err(inconsistent(format!("item {i} names column {c:?} absent from the schema")));
                }
                idx.columns.insert(*c, i);
            }
            ItemSource::Value { column } => {
                if schema.column(*column).is_none() {
                    return Err(inconsistent(format!("value item {i} owned by unknown column {column:?}")));
                }
                idx.values.push((i, *column));
            }
            ItemSource::Question { turn, word } => {
                words.entry(*turn).or_default().insert(*word, i);
            }
            ItemSource::Database | ItemSource::Delimiter => {}
        }
    }
    for (turn, ws) in words {
        if ws.keys().copied().ne(0..ws.len()) {
            return Err(inconsistent(format!("turn {turn} words are not contiguous")));
        }
        idx.turns.insert(turn, ws.into_values().collect());
    }
    Ok(idx)
}

/// Assigns exactly one relation to every ordered pair of items.
pub fn build_graph(input: &SerializedInput, schema: &Schema, evidence: &GraphEvidence) -> Result<InteractionGraph, GraphError> {
    use RelationType as R;
    let items = &input.items;
    let n = items.len();
    let idx = index_items(input, schema)?;

    // validate evidence against the turns that are actually present
    for (turn, words) in &idx.turns {
        let links = evidence
            .links
            .get(turn)
            .ok_or_else(|| inconsistent(format!("no schema links for turn {turn}")))?;
        if links.token_count() != words.len() {
            return Err(inconsistent(format!(
                "links for turn {turn} cover {} words, input has {}",
                links.token_count(),
                words.len()
            )));
        }
    }
    let turn_len = |turn: usize| idx.turns.get(&turn).map(Vec::len);
    for (turn, m) in &evidence.value_matches {
        if schema.column(m.column).is_none() {
            return Err(inconsistent(format!("value match on unknown column {:?}", m.column)));
        }
        if let Some(len) = turn_len(*turn) {
            if m.span.is_empty() || m.span.end > len {
                return Err(inconsistent(format!("value span {:?} outside turn {turn}", m.span)));
            }
        }
    }
    for e in &evidence.dependencies {
        if let Some(len) = turn_len(e.turn) {
            if e.head >= len || e.dependent >= len || e.head == e.dependent {
                return Err(inconsistent(format!("dependency edge {e:?} outside turn {}", e.turn)));
            }
        }
    }
    for link in &evidence.corefs {
        for m in [link.mention, link.antecedent] {
            if let Some(len) = turn_len(m.turn) {
                if m.start >= m.end || m.end > len {
                    return Err(inconsistent(format!("coreference span {m:?} outside turn {}", m.turn)));
                }
            }
        }
    }

    let mut m = RelationMatrix::filled(n, R::NoRelation);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, base_relation(&items[i].source, &items[j].source));
        }
    }

    // schema structure
    for (t, table) in schema.tables.iter().enumerate() {
        let cols: Vec<(usize, usize)> = (0..table.columns.len())
            .filter_map(|c| idx.columns.get(&ColumnRef::new(t, c)).map(|&i| (c, i)))
            .collect();
        for &(_, a) in &cols {
            for &(_, b) in &cols {
                m.set(a, b, R::CcSameTable);
            }
        }
        if let Some(&ti) = idx.tables.get(&t) {
            for &(c, ci) in &cols {
                let pk = table.primary_key_indices.contains(&c);
                m.set(ti, ci, if pk { R::TcPk } else { R::TcHas });
                m.set(ci, ti, if pk { R::CtPk } else { R::CtHas });
            }
        }
    }
    let fk_items: Vec<(usize, usize)> = schema
        .foreign_keys
        .iter()
        .filter_map(|fk| Some((*idx.columns.get(&fk.from)?, *idx.columns.get(&fk.to)?)))
        .collect();
    for &(a, b) in &fk_items {
        m.set(b, a, R::CcFkr);
    }
    for &(a, b) in &fk_items {
        m.set(a, b, R::CcFk);
    }
    let table_pairs: BTreeSet<(usize, usize)> = schema
        .foreign_keys
        .iter()
        .map(|fk| (fk.from.table, fk.to.table))
        .collect();
    for &(a, b) in &table_pairs {
        let (Some(&ta), Some(&tb)) = (idx.tables.get(&a), idx.tables.get(&b)) else {
            continue;
        };
        if table_pairs.contains(&(b, a)) {
            m.set(ta, tb, R::TtFkb);
            m.set(tb, ta, R::TtFkb);
        } else {
            m.set(ta, tb, R::TtFk);
            m.set(tb, ta, R::TtFkr);
        }
    }

    // column ↔ inserted value
    for &(vi, owner) in &idx.values {
        if let Some(&ci) = idx.columns.get(&owner) {
            m.set(ci, vi, R::HasDbContent);
            m.set(vi, ci, R::HasDbContentR);
        }
    }

    // schema linking
    for (turn, words) in &idx.turns {
        let links = &evidence.links[turn];
        for (w, &qi) in words.iter().enumerate() {
            for (&t, &ti) in &idx.tables {
                match links.label(w, SchemaItem::Table(t)) {
                    Some(LinkLabel::ExactMatch) => {
                        m.set(qi, ti, R::QtExactMatch);
                        m.set(ti, qi, R::TqExactMatch);
                    }
                    Some(LinkLabel::PartialMatch) => {
                        m.set(qi, ti, R::QtPartialMatch);
                        m.set(ti, qi, R::TqPartialMatch);
                    }
                    _ => {}
                }
            }
            for (&c, &ci) in &idx.columns {
                match links.label(w, SchemaItem::Column(c)) {
                    Some(LinkLabel::ExactMatch) => {
                        m.set(qi, ci, R::QcExactMatch);
                        m.set(ci, qi, R::CqExactMatch);
                    }
                    Some(LinkLabel::PartialMatch) => {
                        m.set(qi, ci, R::QcPartialMatch);
                        m.set(ci, qi, R::CqPartialMatch);
                    }
                    _ => {}
                }
            }
        }
    }
    for (turn, vm) in &evidence.value_matches {
        let (Some(words), Some(&ci)) = (idx.turns.get(turn), idx.columns.get(&vm.column)) else {
            continue;
        };
        for &qi in &words[vm.span.clone()] {
            m.set(qi, ci, R::QcValueMatch);
            m.set(ci, qi, R::CqValueMatch);
        }
    }

    // question-question
    for words in idx.turns.values() {
        for (a, &qa) in words.iter().enumerate() {
            for (b, &qb) in words.iter().enumerate() {
                let d = b as isize - a as isize;
                m.set(qa, qb, RelationType::distance(d).unwrap_or(R::NoneSyntax));
            }
        }
    }
    for e in &evidence.dependencies {
        if let Some(words) = idx.turns.get(&e.turn) {
            m.set(words[e.head], words[e.dependent], R::ForwardSyntax);
            m.set(words[e.dependent], words[e.head], R::BackwardSyntax);
        }
    }
    let span_items = |turn: usize, start: usize, end: usize| -> Option<&[usize]> {
        idx.turns.get(&turn).map(|w| &w[start..end])
    };
    for link in &evidence.corefs {
        let (Some(_), Some(_)) = (idx.turns.get(&link.mention.turn), idx.turns.get(&link.antecedent.turn)) else {
            continue;
        };
        for mention in [link.mention, link.antecedent] {
            let span = span_items(mention.turn, mention.start, mention.end).unwrap();
            for &a in span {
                for &b in span {
                    m.set(a, b, R::CoRelations);
                }
            }
        }
    }
    for link in &evidence.corefs {
        let (Some(ms), Some(ant)) = (
            span_items(link.mention.turn, link.mention.start, link.mention.end),
            span_items(link.antecedent.turn, link.antecedent.start, link.antecedent.end),
        ) else {
            continue;
        };
        for &a in ms {
            for &b in ant {
                m.set(a, b, R::CorefRelations);
            }
        }
    }

    for (i, item) in items.iter().enumerate() {
        m.set(i, i, identity_relation(&item.source));
    }

    Ok(InteractionGraph {
        input: input.clone(),
        matrix: m,
    })
}

/// Count of every relation over all n² cells.
pub fn relation_histogram(matrix: &RelationMatrix) -> BTreeMap<RelationType, usize> {
    let mut counts = [0usize; RelationType::COUNT];
    for &id in matrix.ids() {
        counts[id as usize] += 1;
    }
    RelationType::ALL
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(r, c)| (*r, c))
        .collect()
}

pub fn histogram_json(hist: &BTreeMap<RelationType, usize>) -> Value {
    let map: serde_json::Map<String, Value> = hist
        .iter()
        .map(|(r, c)| (r.name().to_string(), json!(c)))
        .collect();
    Value::Object(map)
}
