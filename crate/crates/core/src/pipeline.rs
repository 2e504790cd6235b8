//! One interaction turn from raw inputs to its interaction graph.

use serde_json::{json, Value};
use thiserror::Error;

use crate::annotations::{fallback_coref, AnnotationError, CorefBank, DependencyBank};
use crate::corpus::{ContentStore, CorpusError, DataMode, Interaction, Schema};
use crate::graph::{build_graph, GraphError, GraphEvidence, InteractionGraph};
use crate::linking::{link_schema, match_values, value_insertions, LinkLabel, SchemaItem, ValueMatch};
use crate::propagation::PropagationError;
use crate::serializer::{serialize_multi, serialize_single, SerializeError, SerializedInput, DEFAULT_TOKEN_BUDGET};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Options {
    pub mode: DataMode,
    pub token_budget: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            mode: DataMode::SingleTurn,
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

/// Database-level inputs plus optional annotation banks. Supplying a
/// coreference bank disables the built-in pronoun heuristic.
#[derive(Debug, Clone, Copy)]
pub struct Resources<'a> {
    pub schema: &'a Schema,
    pub content: Option<&'a ContentStore>,
    pub dependencies: Option<&'a DependencyBank>,
    pub coreference: Option<&'a CorefBank>,
}

impl<'a> Resources<'a> {
    pub fn schema_only(schema: &'a Schema) -> Self {
        Resources {
            schema,
            content: None,
            dependencies: None,
            coreference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledTurn {
    /// 1-based turn index.
    pub turn: usize,
    pub input: SerializedInput,
    pub evidence: GraphEvidence,
    pub graph: InteractionGraph,
}

/// Annotation evidence for the whole interaction: dependency edges and
/// coreference links of every turn.
pub fn annotate(
    interaction: &Interaction,
    interaction_id: &str,
    res: &Resources<'_>,
) -> Result<GraphEvidence, PipelineError> {
    let mut ev = GraphEvidence::default();
    if let Some(bank) = res.dependencies {
        ev.dependencies = bank.edges_for(interaction_id, &interaction.turns)?;
    }
    ev.corefs = match res.coreference {
        Some(bank) => bank.links_for(interaction_id, &interaction.turns)?,
        None => fallback_coref(&interaction.turns, res.schema),
    };
    Ok(ev)
}

fn turn_values(interaction: &Interaction, turn: usize, res: &Resources<'_>) -> Vec<ValueMatch> {
    match res.content {
        Some(content) => match_values(&interaction.turns[turn - 1].words(), res.schema, content),
        None => Vec::new(),
    }
}

/// Compiles turn `current` (1-based). Values matched in the current turn are
/// inserted into the schema block; schema links and value-match relations are
/// computed for every turn that ends up in the sequence.
pub fn compile_turn(
    interaction: &Interaction,
    current: usize,
    annotations: &GraphEvidence,
    res: &Resources<'_>,
    options: &Options,
) -> Result<CompiledTurn, PipelineError> {
    if res.schema.db_id != interaction.db_id {
        return Err(PipelineError::UnknownDatabase(interaction.db_id.clone()));
    }
    let turns = &interaction.turns;
    if current == 0 || current > turns.len() {
        return Err(SerializeError::TurnOutOfRange {
            current,
            turns: turns.len(),
        }
        .into());
    }
    let current_values = turn_values(interaction, current, res);
    let insertions = value_insertions(&current_values);
    let input = match options.mode {
        DataMode::SingleTurn => serialize_single(&turns[current - 1], res.schema, &insertions)?,
        DataMode::MultiTurn => serialize_multi(&turns[..current], current, res.schema, &insertions, options.token_budget)?,
    };

    let mut evidence = GraphEvidence {
        dependencies: annotations.dependencies.clone(),
        corefs: annotations.corefs.clone(),
        ..GraphEvidence::default()
    };
    for turn in input.turns() {
        let words = turns[turn - 1].words();
        evidence.links.insert(turn, link_schema(&words, res.schema));
        let matches = if turn == current {
            current_values.clone()
        } else {
            turn_values(interaction, turn, res)
        };
        evidence.value_matches.extend(matches.into_iter().map(|m| (turn, m)));
    }
    let graph = build_graph(&input, res.schema, &evidence)?;
    Ok(CompiledTurn {
        turn: current,
        input,
        evidence,
        graph,
    })
}

/// Every turn of an interaction, in order.
pub fn compile_interaction(
    interaction: &Interaction,
    interaction_id: &str,
    res: &Resources<'_>,
    options: &Options,
) -> Result<Vec<CompiledTurn>, PipelineError> {
    let annotations = annotate(interaction, interaction_id, res)?;
    (1..=interaction.turns.len())
        .map(|t| compile_turn(interaction, t, &annotations, res, options))
        .collect()
}

/// Schema links and value matches of a compiled turn as JSON:
/// `{db_id, turn, exact: [...], partial: [...], values: [...]}`. Link entries
/// carry the question turn, word index, word and schema item; value entries
/// carry the turn, word span, column and matched cell value.
pub fn link_report(compiled: &CompiledTurn, schema: &Schema, interaction: &Interaction) -> Value {
    let item_name = |item: SchemaItem| match item {
        SchemaItem::Table(t) => schema.tables[t].name.to_lowercase(),
        SchemaItem::Column(c) => format!(
            "{}.{}",
            schema.tables[c.table].name.to_lowercase(),
            schema.tables[c.table].columns[c.column].name.to_lowercase()
        ),
    };
    let mut exact = Vec::new();
    let mut partial = Vec::new();
    for (&turn, links) in &compiled.evidence.links {
        let words = interaction.turns[turn - 1].words();
        for (token, item, label) in links.matches() {
            let entry = json!({
                "turn": turn,
                "token": token,
                "word": words[token],
                "kind": if matches!(item, SchemaItem::Table(_)) { "table" } else { "column" },
                "item": item_name(item),
            });
            match label {
                LinkLabel::ExactMatch => exact.push(entry),
                LinkLabel::PartialMatch => partial.push(entry),
                _ => {}
            }
        }
    }
    let values: Vec<Value> = compiled
        .evidence
        .value_matches
        .iter()
        .map(|(turn, m)| {
            let words = interaction.turns[turn - 1].words();
            json!({
                "turn": turn,
                "start": m.span.start,
                "end": m.span.end,
                "text": words[m.span.clone()].join(" "),
                "column": item_name(SchemaItem::Column(m.column)),
                "value": m.value,
            })
        })
        .collect();
    json!({
        "db_id": schema.db_id,
        "turn": compiled.turn,
        "exact": exact,
        "partial": partial,
        "values": values,
    })
}
