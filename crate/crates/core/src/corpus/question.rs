//! Questions and dialogue interactions (Spider, SParC, CoSQL).

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::de::{Deserializer, SeqAccess, Visitor};
use serde::Serialize;
use serde_json::Value;

use super::CorpusError;

/// A lowercased word token with its byte range in the original question text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTurn {
    /// 1-based position inside the interaction.
    pub turn_index: usize,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl QuestionTurn {
    pub fn new(turn_index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize_question(&text);
        QuestionTurn {
            turn_index,
            text,
            tokens,
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub db_id: String,
    pub turns: Vec<QuestionTurn>,
    /// Gold SQL per turn, carried through untouched.
    pub gold_sql: Vec<Option<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    SingleTurn,
    MultiTurn,
}

pub(crate) fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '«' | '»')
}

/// Lowercase, split on whitespace, then peel leading and trailing punctuation
/// off each chunk as one-character tokens.
pub fn tokenize_question(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut push = |start: usize, end: usize| {
        tokens.push(Token {
            text: text[start..end].to_lowercase(),
            start,
            end,
        })
    };
    let mut chunks = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                chunks.push((s, i));
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        chunks.push((s, text.len()));
    }
    for (start, end) in chunks {
        let chunk = &text[start..end];
        let mut lead = Vec::new();
        let mut body_start = start;
        for (i, c) in chunk.char_indices() {
            if is_punct(c) {
                lead.push((start + i, start + i + c.len_utf8()));
                body_start = start + i + c.len_utf8();
            } else {
                break;
            }
        }
        let mut trail = Vec::new();
        let mut body_end = end;
        if body_start < end {
            for (i, c) in text[body_start..end].char_indices().rev() {
                if is_punct(c) {
                    let at = body_start + i;
                    trail.push((at, at + c.len_utf8()));
                    body_end = at;
                } else {
                    break;
                }
            }
        }
        for (s, e) in lead {
            push(s, e);
        }
        if body_start < body_end {
            push(body_start, body_end);
        }
        for (s, e) in trail.into_iter().rev() {
            push(s, e);
        }
    }
    tokens
}

fn malformed(index: usize, detail: impl Into<String>) -> CorpusError {
    CorpusError::MalformedExample {
        index,
        detail: detail.into(),
    }
}

fn make_turn(index: usize, turn_index: usize, text: &str) -> Result<QuestionTurn, CorpusError> {
    let turn = QuestionTurn::new(turn_index, text);
    if turn.is_empty() {
        return Err(malformed(index, format!("turn {turn_index} has an empty utterance")));
    }
    Ok(turn)
}

fn str_field<'a>(value: &'a Value, index: usize, name: &str) -> Result<&'a str, CorpusError> {
    value
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(index, format!("missing string field `{name}`")))
}

/// Converts one raw JSON example into an interaction.
pub fn interaction_from_json(value: &Value, index: usize, mode: DataMode) -> Result<Interaction, CorpusError> {
    match mode {
        DataMode::SingleTurn => {
            let db_id = str_field(value, index, "db_id")?;
            let question = str_field(value, index, "question")?;
            let gold = value.get("query").and_then(Value::as_str).map(str::to_string);
            Ok(Interaction {
                db_id: db_id.to_string(),
                turns: vec![make_turn(index, 1, question)?],
                gold_sql: vec![gold],
            })
        }
        DataMode::MultiTurn => {
            let db_id = str_field(value, index, "database_id")?;
            let utterances = value
                .get("interaction")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(index, "missing array field `interaction`"))?;
            if utterances.is_empty() {
                return Err(malformed(index, "interaction has no turns"));
            }
            let mut turns = Vec::with_capacity(utterances.len());
            let mut gold_sql = Vec::with_capacity(utterances.len());
            for (k, u) in utterances.iter().enumerate() {
                let text = str_field(u, index, "utterance")?;
                turns.push(make_turn(index, k + 1, text)?);
                gold_sql.push(u.get("query").and_then(Value::as_str).map(str::to_string));
            }
            Ok(Interaction {
                db_id: db_id.to_string(),
                turns,
                gold_sql,
            })
        }
    }
}

struct ExampleVisitor<'f, F> {
    mode: DataMode,
    sink: &'f mut F,
}

impl<'de, F> Visitor<'de> for ExampleVisitor<'_, F>
where
    F: FnMut(usize, Result<Interaction, CorpusError>),
{
    type Value = usize;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a JSON array of examples")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<usize, A::Error> {
        let mut index = 0;
        while let Some(raw) = seq.next_element::<Value>()? {
            (self.sink)(index, interaction_from_json(&raw, index, self.mode));
            index += 1;
        }
        Ok(index)
    }
}

/// Streams examples one at a time; `sink` sees every example (or its error)
/// in file order. Returns the number of examples.
pub fn stream_interactions<F>(path: impl AsRef<Path>, mode: DataMode, mut sink: F) -> Result<usize, CorpusError>
where
    F: FnMut(usize, Result<Interaction, CorpusError>),
{
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    let count = de
        .deserialize_seq(ExampleVisitor {
            mode,
            sink: &mut sink,
        })
        .map_err(|e| CorpusError::Json {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    de.end().map_err(|e| CorpusError::Json {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(count)
}

/// Loads all interactions; the first malformed example aborts the load.
pub fn load_interactions(path: impl AsRef<Path>, mode: DataMode) -> Result<Vec<Interaction>, CorpusError> {
    let mut out = Vec::new();
    let mut first_error = None;
    stream_interactions(path, mode, |_, res| match res {
        Ok(i) => out.push(i),
        Err(e) => {
            first_error.get_or_insert(e);
        }
    })?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
