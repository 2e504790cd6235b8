//! Subword tokenization of items and propagation of item relations to the
//! subtoken level.
//!
//! A relation between items H and T is copied onto every (h, t) pair of their
//! subtokens, so the subtoken matrix is block-constant with one block per
//! item pair.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{InteractionGraph, RelationMatrix};
use crate::relation::RelationType;
use crate::serializer::{ItemKind, SerializedInput};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PropagationError {
    #[error("alignment mismatch: {0}")]
    AlignmentError(String),
    #[error("item {0} has no subtokens")]
    CoverageError(usize),
    #[error("subtoken map covers {map} items, graph has {graph}")]
    ItemCountMismatch { map: usize, graph: usize },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

/// Anything that splits one word into subword pieces.
pub trait SubwordTokenizer {
    fn tokenize_word(&self, word: &str) -> Vec<String>;
}

/// Greedy longest-match tokenizer over a plain piece vocabulary. Input is
/// lowercased; characters that no piece covers fall back to single bytes.
#[derive(Debug, Clone, Default)]
pub struct GreedyTokenizer {
    pieces: HashSet<String>,
    max_piece_bytes: usize,
}

impl GreedyTokenizer {
    pub fn new<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pieces: HashSet<String> = pieces
            .into_iter()
            .map(Into::into)
            .filter(|p| !p.is_empty())
            .collect();
        let max_piece_bytes = pieces.iter().map(String::len).max().unwrap_or(0);
        GreedyTokenizer {
            pieces,
            max_piece_bytes,
        }
    }

    /// Reads a vocabulary with one piece per line.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PropagationError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PropagationError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(Self::from_vocab_text(&text))
    }

    pub fn from_vocab_text(text: &str) -> Self {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

fn byte_fallback(c: char, out: &mut Vec<String>) {
    if c.is_ascii() {
        out.push(c.to_string());
    } else {
        let mut buf = [0u8; 4];
        for b in c.encode_utf8(&mut buf).bytes() {
            out.push(format!("<0x{b:02X}>"));
        }
    }
}

impl SubwordTokenizer for GreedyTokenizer {
    fn tokenize_word(&self, word: &str) -> Vec<String> {
        let word = word.to_lowercase();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < word.len() {
            let rest = &word[pos..];
            let mut limit = rest.len().min(self.max_piece_bytes);
            let mut found = None;
            while limit > 0 {
                if rest.is_char_boundary(limit) && self.pieces.contains(&rest[..limit]) {
                    found = Some(limit);
                    break;
                }
                limit -= 1;
            }
            match found {
                Some(len) => {
                    out.push(rest[..len].to_string());
                    pos += len;
                }
                None => {
                    let c = rest.chars().next().expect("non-empty rest");
                    byte_fallback(c, &mut out);
                    pos += c.len_utf8();
                }
            }
        }
        out
    }
}

/// Subtoken pieces of one item and where they start in the flat sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPieces {
    pub pieces: Vec<String>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubtokenMap {
    pub items: Vec<ItemPieces>,
}

impl SubtokenMap {
    /// Lays out per-item piece lists contiguously.
    pub fn from_pieces(per_item: Vec<Vec<String>>) -> Self {
        let mut offset = 0;
        let items = per_item
            .into_iter()
            .map(|pieces| {
                let item = ItemPieces { pieces, offset };
                offset += item.pieces.len();
                item
            })
            .collect();
        SubtokenMap { items }
    }

    /// Total number of subtokens.
    pub fn len(&self) -> usize {
        self.items.iter().map(|i| i.pieces.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subtokens(&self) -> Vec<&str> {
        self.items
            .iter()
            .flat_map(|i| i.pieces.iter().map(String::as_str))
            .collect()
    }

    /// Owning item of every subtoken position.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for (i, item) in self.items.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, item.pieces.len()));
        }
        out
    }
}

/// Tokenizes each item on its own. Multi-word items are tokenized word by
/// word; delimiters always stay a single piece.
pub fn tokenize<T: SubwordTokenizer + ?Sized>(input: &SerializedInput, tokenizer: &T) -> SubtokenMap {
    let per_item = input
        .items
        .iter()
        .map(|item| {
            let words = &input.tokens[item.span.clone()];
            if item.kind() == ItemKind::Delimiter {
                return words.to_vec();
            }
            words.iter().flat_map(|w| tokenizer.tokenize_word(w)).collect()
        })
        .collect();
    SubtokenMap::from_pieces(per_item)
}

/// Replicates every item-level relation over the subtoken block of its
/// (head, tail) item pair.
pub fn propagate_matrix(matrix: &RelationMatrix, map: &SubtokenMap) -> Result<RelationMatrix, PropagationError> {
    if map.items.len() != matrix.size() {
        return Err(PropagationError::ItemCountMismatch {
            map: map.items.len(),
            graph: matrix.size(),
        });
    }
    if let Some(i) = map.items.iter().position(|i| i.pieces.is_empty()) {
        return Err(PropagationError::CoverageError(i));
    }
    let owners = map.owners();
    let m = owners.len();
    let mut ids = Vec::with_capacity(m * m);
    for &h in &owners {
        let row = matrix.row(h);
        ids.extend(owners.iter().map(|&t| row[t]));
    }
    Ok(RelationMatrix::from_ids(m, ids).expect("ids copied from a valid matrix"))
}

pub fn propagate(graph: &InteractionGraph, map: &SubtokenMap) -> Result<RelationMatrix, PropagationError> {
    propagate_matrix(&graph.matrix, map)
}

#[derive(Deserialize)]
struct AlignmentFile {
    items: Vec<Vec<String>>,
}

/// Parses an externally produced alignment (`{"items": [["amen", "id"], ...]}`)
/// for `input`.
pub fn parse_alignment(text: &str, input: &SerializedInput) -> Result<SubtokenMap, PropagationError> {
    let file: AlignmentFile =
        serde_json::from_str(text).map_err(|e| PropagationError::AlignmentError(e.to_string()))?;
    if file.items.len() != input.items.len() {
        return Err(PropagationError::AlignmentError(format!(
            "{} item piece lists for {} items",
            file.items.len(),
            input.items.len()
        )));
    }
    if let Some(i) = file.items.iter().position(Vec::is_empty) {
        return Err(PropagationError::AlignmentError(format!("item {i} has zero pieces")));
    }
    Ok(SubtokenMap::from_pieces(file.items))
}

pub fn load_alignment(path: impl AsRef<Path>, input: &SerializedInput) -> Result<SubtokenMap, PropagationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PropagationError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_alignment(&text, input)
}

/// Histogram of `matrix` propagated through blocks of the given sizes,
/// computed without materializing the subtoken matrix.
pub fn weighted_histogram(matrix: &RelationMatrix, block_sizes: &[usize]) -> [usize; RelationType::COUNT] {
    let mut counts = [0usize; RelationType::COUNT];
    for (h, &sh) in block_sizes.iter().enumerate() {
        for (t, &st) in block_sizes.iter().enumerate() {
            counts[matrix.id(h, t) as usize] += sh * st;
        }
    }
    counts
}
