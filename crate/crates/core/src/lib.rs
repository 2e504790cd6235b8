//! Compiles text-to-SQL inputs into interaction graphs and provides a
//! reference implementation of relation-aware self-attention.
//!
//! The graph side is discrete: [`corpus`] loads schemas, questions and cell
//! values, [`serializer`] linearizes them, [`linking`] and [`annotations`]
//! produce relation evidence, [`graph`] assigns one [`RelationType`] to every
//! item pair and [`propagation`] expands that matrix to subword level.
//! [`attention`] consumes the matrices and is generic over the float type.

pub mod annotations;
pub mod attention;
pub mod corpus;
pub mod graph;
pub mod linking;
pub mod pipeline;
pub mod propagation;
pub mod rasm;
pub mod relation;
pub mod serializer;

pub use graph::{build_graph, InteractionGraph, RelationMatrix};
pub use relation::RelationType;
pub use serializer::SerializedInput;

pub type Matrix64 = attention::Matrix<f64>;
pub type Matrix32 = attention::Matrix<f32>;
pub type Encoder64 = attention::Encoder<f64>;
pub type Encoder32 = attention::Encoder<f32>;
pub type Tables64 = attention::RelationEmbeddingTables<f64>;
pub type Tables32 = attention::RelationEmbeddingTables<f32>;
