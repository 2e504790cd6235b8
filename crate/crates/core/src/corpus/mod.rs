//! Loading of schemas, questions and database content.

mod content;
mod question;
mod schema;

use std::path::Path;

use thiserror::Error;

pub use content::{
    canonical_real, content_from_dump, content_from_sqlite, find_content_source, load_content, ContentConfig, ContentStore, DumpColumn,
    ValueDump, DEFAULT_VALUE_CAP,
};
pub use question::{
    interaction_from_json, load_interactions, stream_interactions, tokenize_question, DataMode, Interaction,
    QuestionTurn, Token,
};
pub(crate) use question::is_punct;
pub use schema::{
    load_schemas, parse_schemas, schema_from_spider, schemas_to_json, Column, ColumnRef, ForeignKey, Schema, SqlType,
    Table,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed schema `{db_id}`, field `{field}`: {detail}")]
    MalformedSchema {
        db_id: String,
        field: String,
        detail: String,
    },
    #[error("malformed example #{index}: {detail}")]
    MalformedExample { index: usize, detail: String },
    #[error("content for `{db_id}` does not match its schema: {detail}")]
    ContentMismatch { db_id: String, detail: String },
    #[error("cannot read content source {path}: {detail}")]
    UnreadableSource { path: String, detail: String },
    #[error("invalid JSON in {path}: {detail}")]
    Json { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
