//! Fixture loading and brute-force reference evaluators shared by the
//! integration tests.
//!
//! The evaluators below do not call into the library's linking, matching or
//! graph code. They re-derive every label from the rules directly, cell by
//! cell, so agreement with the library is meaningful.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use relgraph::annotations::{load_coreference, load_dependencies, CorefBank, CorefLink, DependencyBank, DependencyEdge};
use relgraph::corpus::{
    find_content_source, load_content, load_interactions, load_schemas, ColumnRef, ContentConfig, ContentStore,
    DataMode, Interaction, Schema, SqlType,
};
use relgraph::pipeline::{compile_interaction, CompiledTurn, Options, Resources};
use relgraph::serializer::{ItemSource, SerializedInput};
use relgraph::{RelationMatrix, RelationType};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Fixture directory of the core crate, for test targets in other crates.
pub fn fixture(name: &str) -> PathBuf {
    let own = fixtures().join(name);
    if own.exists() {
        return own;
    }
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub struct Corpus {
    pub schemas: BTreeMap<String, Schema>,
    pub contents: BTreeMap<String, ContentStore>,
    pub deps: DependencyBank,
    pub coref: CorefBank,
}

impl Corpus {
    pub fn load() -> Self {
        let schemas: BTreeMap<String, Schema> = load_schemas(fixture("tables.json"))
            .unwrap()
            .into_iter()
            .map(|s| (s.db_id.clone(), s))
            .collect();
        let mut contents = BTreeMap::new();
        for (db, schema) in &schemas {
            if let Some(src) = find_content_source(&fixture("content"), db) {
                contents.insert(db.clone(), load_content(schema, src, &ContentConfig::default()).unwrap());
            }
        }
        Corpus {
            schemas,
            contents,
            deps: load_dependencies(fixture("sparc.conllu")).unwrap(),
            coref: load_coreference(fixture("sparc_coref.json")).unwrap(),
        }
    }

    pub fn schema(&self, db: &str) -> &Schema {
        &self.schemas[db]
    }

    pub fn content(&self, db: &str) -> Option<&ContentStore> {
        self.contents.get(db)
    }
}

/// One compiled turn together with everything it was built from.
pub struct Case {
    pub name: String,
    pub interaction: Interaction,
    pub turn: CompiledTurn,
    pub with_content: bool,
}

/// All graph fixtures: every single-turn example with content, every
/// multi-turn interaction with parses and coreference chains, and the
/// multi-turn interactions again with the pronoun heuristic and no content.
pub fn graph_cases(corpus: &Corpus) -> Vec<Case> {
    let mut out = Vec::new();
    let single = load_interactions(fixture("spider.json"), DataMode::SingleTurn).unwrap();
    for (idx, inter) in single.into_iter().enumerate() {
        let schema = corpus.schema(&inter.db_id);
        let res = Resources {
            content: corpus.content(&inter.db_id),
            ..Resources::schema_only(schema)
        };
        let turns = compile_interaction(&inter, &idx.to_string(), &res, &Options::default()).unwrap();
        for t in turns {
            out.push(Case {
                name: format!("single/{idx:05}_{:02}", t.turn),
                interaction: inter.clone(),
                turn: t,
                with_content: true,
            });
        }
    }
    let multi = load_interactions(fixture("sparc.json"), DataMode::MultiTurn).unwrap();
    let opts = Options {
        mode: DataMode::MultiTurn,
        ..Options::default()
    };
    for (idx, inter) in multi.iter().enumerate() {
        let schema = corpus.schema(&inter.db_id);
        let annotated = Resources {
            schema,
            content: corpus.content(&inter.db_id),
            dependencies: Some(&corpus.deps),
            coreference: Some(&corpus.coref),
        };
        for t in compile_interaction(inter, &idx.to_string(), &annotated, &opts).unwrap() {
            out.push(Case {
                name: format!("multi/{idx:05}_{:02}", t.turn),
                interaction: inter.clone(),
                turn: t,
                with_content: true,
            });
        }
        let bare = Resources::schema_only(schema);
        for t in compile_interaction(inter, &idx.to_string(), &bare, &opts).unwrap() {
            out.push(Case {
                name: format!("multi-fallback/{idx:05}_{:02}", t.turn),
                interaction: inter.clone(),
                turn: t,
                with_content: false,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// linking reference

const PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~“”‘’…«»";

fn depluralize(w: &str) -> String {
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    for suf in ["sses", "shes", "ches", "xes", "zes"] {
        if n > suf.len() && w.ends_with(suf) {
            return w[..n - 2].to_string();
        }
    }
    if n > 2 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        return w[..n - 1].to_string();
    }
    w.to_string()
}

pub fn canon(word: &str) -> String {
    let stripped: String = word.to_lowercase().chars().filter(|c| !PUNCT.contains(*c)).collect();
    depluralize(&stripped)
}

fn canon_phrase<'a>(words: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    words.into_iter().map(canon).filter(|w| !w.is_empty()).collect()
}

/// `None` = no match, `Some(true)` = exact, `Some(false)` = partial.
pub type RefLabel = Option<bool>;

/// Label of question word `i` against a schema name, by enumerating every
/// n-gram (n ≤ 5) of the question.
pub fn reference_link(words: &[String], name: &str, i: usize) -> RefLabel {
    let name_words: Vec<String> = name
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(canon)
        .collect();
    if name_words.is_empty() || name_words.iter().any(String::is_empty) {
        return None;
    }
    let q: Vec<String> = words.iter().map(|w| canon(w)).collect();
    for n in 1..=5usize {
        for s in 0..q.len() {
            if s + n > q.len() || !(s..s + n).contains(&i) {
                continue;
            }
            if q[s..s + n] == name_words[..] {
                return Some(true);
            }
        }
    }
    let tok = &q[i];
    if tok.is_empty() {
        return None;
    }
    let partial = name_words
        .iter()
        .any(|w| tok == w || (w.chars().count() >= 4 && tok.starts_with(w.as_str())));
    partial.then_some(false)
}

fn reference_fuzzy(ngram: &[String], value: &str) -> bool {
    let q = canon_phrase(ngram.iter().map(String::as_str));
    if q.is_empty() {
        return false;
    }
    if canon_phrase(value.split_whitespace()) == q {
        return true;
    }
    let raw = ngram.join(" ").to_lowercase();
    raw.chars().count() >= 4 && value.to_lowercase().contains(&raw)
}

/// Every maximal (span, column, first matching value) over all n-grams and
/// all text-column values, sorted by (start, end, column).
pub fn reference_values(words: &[String], schema: &Schema, content: &ContentStore) -> Vec<(usize, usize, ColumnRef, String)> {
    let is_word: Vec<bool> = words.iter().map(|w| !canon(w).is_empty()).collect();
    let mut out = Vec::new();
    for (col, values) in content.columns() {
        if schema.column(col).map(|c| c.sql_type) != Some(SqlType::Text) {
            continue;
        }
        let mut hits = Vec::new();
        for s in 0..words.len() {
            for e in s + 1..=words.len().min(s + 5) {
                if !is_word[s] || !is_word[e - 1] {
                    continue;
                }
                if let Some(v) = values.iter().find(|v| reference_fuzzy(&words[s..e], v)) {
                    hits.push((s, e, v.clone()));
                }
            }
        }
        for (s, e, v) in &hits {
            let inside_longer = hits
                .iter()
                .any(|(os, oe, _)| os <= s && e <= oe && oe - os > e - s);
            if !inside_longer {
                out.push((*s, *e, col, v.clone()));
            }
        }
    }
    out.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    out
}

// ---------------------------------------------------------------------------
// graph reference

pub struct GraphInputs<'a> {
    pub schema: &'a Schema,
    pub content: Option<&'a ContentStore>,
    pub interaction: &'a Interaction,
    pub dependencies: &'a [DependencyEdge],
    pub corefs: &'a [CorefLink],
}

fn name_of(schema: &Schema, src: &ItemSource) -> Option<String> {
    match src {
        ItemSource::Table(t) => Some(schema.tables[*t].name.clone()),
        ItemSource::Column(c) => Some(schema.tables[c.table].columns[c.column].name.clone()),
        _ => None,
    }
}

fn fk(schema: &Schema, a: ColumnRef, b: ColumnRef) -> bool {
    schema.foreign_keys.iter().any(|f| f.from == a && f.to == b)
}

fn table_fk(schema: &Schema, a: usize, b: usize) -> bool {
    schema.foreign_keys.iter().any(|f| f.from.table == a && f.to.table == b)
}

fn in_span(m: &relgraph::annotations::Mention, turn: usize, word: usize) -> bool {
    m.turn == turn && m.start <= word && word < m.end
}

/// Per-turn words and value matches, computed once per input.
pub struct Prepared<'a> {
    pub inputs: &'a GraphInputs<'a>,
    words: BTreeMap<usize, Vec<String>>,
    values: BTreeMap<usize, Vec<(usize, usize, ColumnRef, String)>>,
    /// Coreference links whose two turns are both in the sequence.
    active: Vec<CorefLink>,
}

impl<'a> Prepared<'a> {
    pub fn new(g: &'a GraphInputs<'a>, input: &SerializedInput) -> Self {
        let present = input.turns();
        let mut words = BTreeMap::new();
        let mut values = BTreeMap::new();
        for &t in &present {
            let w = g.interaction.turns[t - 1].words();
            let v = match g.content {
                Some(c) => reference_values(&w, g.schema, c),
                None => Vec::new(),
            };
            words.insert(t, w);
            values.insert(t, v);
        }
        let active = g
            .corefs
            .iter()
            .filter(|l| present.contains(&l.mention.turn) && present.contains(&l.antecedent.turn))
            .copied()
            .collect();
        Prepared {
            inputs: g,
            words,
            values,
            active,
        }
    }
}

/// The relation of one cell, from the first rule whose guard holds.
pub fn reference_cell(p: &Prepared<'_>, input: &SerializedInput, i: usize, j: usize) -> RelationType {
    use ItemSource as S;
    use RelationType as R;
    let g = p.inputs;
    let (a, b) = (&input.items[i].source, &input.items[j].source);
    let schema = g.schema;
    let q_vs_schema = |turn: usize, word: usize, item: &ItemSource| -> (bool, RefLabel) {
        let value = match item {
            S::Column(c) => p.values[&turn]
                .iter()
                .any(|(s, e, col, _)| col == c && *s <= word && word < *e),
            _ => false,
        };
        (value, reference_link(&p.words[&turn], &name_of(schema, item).unwrap(), word))
    };

    if i == j {
        return match a {
            S::Question { .. } => R::QqIdentity,
            S::Table(_) => R::TtIdentity,
            S::Column(_) => R::CcIdentity,
            S::Database | S::Value { .. } => R::StarStarIdentity,
            S::Delimiter => R::NoRelation,
        };
    }
    match (a, b) {
        (S::Delimiter, _) | (_, S::Delimiter) => R::NoRelation,
        (&S::Question { turn: ta, word: wa }, &S::Question { turn: tb, word: wb }) => {
            if p.active
                .iter()
                .any(|l| in_span(&l.mention, ta, wa) && in_span(&l.antecedent, tb, wb))
            {
                return R::CorefRelations;
            }
            let co = p.active.iter().any(|l| {
                [l.mention, l.antecedent]
                    .iter()
                    .any(|m| in_span(m, ta, wa) && in_span(m, tb, wb))
            });
            if co {
                return R::CoRelations;
            }
            let edge = |h: usize, d: usize| {
                g.dependencies
                    .iter()
                    .any(|e| e.turn == ta && ta == tb && e.head == h && e.dependent == d)
            };
            if edge(wa, wb) {
                return R::ForwardSyntax;
            }
            if edge(wb, wa) {
                return R::BackwardSyntax;
            }
            if ta != tb {
                return R::QqGeneric;
            }
            match wb as isize - wa as isize {
                -2 => R::QqDistMinus2,
                -1 => R::QqDistMinus1,
                1 => R::QqDistPlus1,
                2 => R::QqDistPlus2,
                _ => R::NoneSyntax,
            }
        }
        (&S::Question { turn, word }, S::Table(_)) => match q_vs_schema(turn, word, b).1 {
            Some(true) => R::QtExactMatch,
            Some(false) => R::QtPartialMatch,
            None => R::QtNoMatch,
        },
        (S::Table(_), &S::Question { turn, word }) => match q_vs_schema(turn, word, a).1 {
            Some(true) => R::TqExactMatch,
            Some(false) => R::TqPartialMatch,
            None => R::TqNoMatch,
        },
        (&S::Question { turn, word }, S::Column(_)) => match q_vs_schema(turn, word, b) {
            (true, _) => R::QcValueMatch,
            (_, Some(true)) => R::QcExactMatch,
            (_, Some(false)) => R::QcPartialMatch,
            _ => R::QcNoMatch,
        },
        (S::Column(_), &S::Question { turn, word }) => match q_vs_schema(turn, word, a) {
            (true, _) => R::CqValueMatch,
            (_, Some(true)) => R::CqExactMatch,
            (_, Some(false)) => R::CqPartialMatch,
            _ => R::CqNoMatch,
        },
        (S::Question { .. }, _) => R::QuestionStarGeneric,
        (_, S::Question { .. }) => R::StarQuestionGeneric,
        (&S::Table(x), &S::Table(y)) => {
            let (f, r) = (table_fk(schema, x, y), table_fk(schema, y, x));
            match (f, r) {
                (true, true) => R::TtFkb,
                (true, false) => R::TtFk,
                (false, true) => R::TtFkr,
                _ => R::TtGeneric,
            }
        }
        (&S::Table(t), &S::Column(c)) => {
            if c.table != t {
                R::TcGeneric
            } else if schema.tables[t].primary_key_indices.contains(&c.column) {
                R::TcPk
            } else {
                R::TcHas
            }
        }
        (&S::Column(c), &S::Table(t)) => {
            if c.table != t {
                R::CtGeneric
            } else if schema.tables[t].primary_key_indices.contains(&c.column) {
                R::CtPk
            } else {
                R::CtHas
            }
        }
        (&S::Column(x), &S::Column(y)) => {
            if fk(schema, x, y) {
                R::CcFk
            } else if fk(schema, y, x) {
                R::CcFkr
            } else if x.table == y.table {
                R::CcSameTable
            } else {
                R::CcGeneric
            }
        }
        (&S::Column(c), &S::Value { column }) if c == column => R::HasDbContent,
        (&S::Value { column }, &S::Column(c)) if c == column => R::HasDbContentR,
        (S::Column(_), _) => R::ColumnStarGeneric,
        (_, S::Column(_)) => R::StarColumnGeneric,
        (S::Table(_), _) => R::TableStarGeneric,
        (_, S::Table(_)) => R::StarTableGeneric,
        _ => R::NoRelation,
    }
}

pub fn reference_matrix(g: &GraphInputs<'_>, input: &SerializedInput) -> RelationMatrix {
    let p = Prepared::new(g, input);
    let n = input.items.len();
    let mut m = RelationMatrix::filled(n, RelationType::NoRelation);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, reference_cell(&p, input, i, j));
        }
    }
    m
}

/// First differing cell, described for an assertion message.
pub fn first_difference(input: &SerializedInput, got: &RelationMatrix, want: &RelationMatrix) -> Option<String> {
    let n = got.size();
    if n != want.size() {
        return Some(format!("sizes differ: {n} vs {}", want.size()));
    }
    for i in 0..n {
        for j in 0..n {
            if got.get(i, j) != want.get(i, j) {
                return Some(format!(
                    "cell ({i}, {j}) `{}` -> `{}`: built {}, expected {}",
                    input.items[i].text,
                    input.items[j].text,
                    got.get(i, j),
                    want.get(i, j)
                ));
            }
        }
    }
    None
}

pub fn check_case(corpus: &Corpus, case: &Case) -> Option<String> {
    let db = &case.interaction.db_id;
    let g = GraphInputs {
        schema: corpus.schema(db),
        content: if case.with_content { corpus.content(db) } else { None },
        interaction: &case.interaction,
        dependencies: &case.turn.evidence.dependencies,
        corefs: &case.turn.evidence.corefs,
    };
    let want = reference_matrix(&g, &case.turn.input);
    first_difference(&case.turn.input, &case.turn.graph.matrix, &want)
}
