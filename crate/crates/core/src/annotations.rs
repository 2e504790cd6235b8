//! Question dependency edges and cross-turn coreference links.
//!
//! Both come from external tools (a dependency parser writing CoNLL-U and a
//! coreference resolver writing mention chains). When no coreference file is
//! available, [`fallback_coref`] supplies a deterministic pronoun heuristic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{QuestionTurn, Schema};
use crate::linking::{link_schema, LinkLabel, SchemaLinks};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("interaction `{interaction}`: {detail}")]
    AlignmentError { interaction: String, detail: String },
    #[error("interaction `{interaction}`: dependency edges do not form a forest in turn {turn}")]
    NotAForest { interaction: String, turn: usize },
    #[error("interaction `{interaction}`: mention turn {turn} span {start}..{end} out of range")]
    SpanOutOfRange {
        interaction: String,
        turn: usize,
        start: usize,
        end: usize,
    },
    #[error("{path}, line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

/// A label-free dependency edge inside one turn (0-based word indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DependencyEdge {
    pub turn: usize,
    pub head: usize,
    pub dependent: usize,
}

/// One CoNLL-U sentence reduced to what the graph needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencySentence {
    pub forms: Vec<String>,
    /// 1-based CoNLL-U head per word, 0 for the root.
    pub heads: Vec<usize>,
}

/// Parsed dependency annotations keyed by interaction id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyBank {
    pub interactions: BTreeMap<String, Vec<DependencySentence>>,
}

fn read(path: &Path) -> Result<String, AnnotationError> {
    fs::read_to_string(path).map_err(|e| AnnotationError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Parses CoNLL-U text. A `# interaction_id = X` comment starts a new group;
/// sentences before any such comment belong to interaction `"0"`.
pub fn parse_conllu(text: &str, origin: &str) -> Result<DependencyBank, AnnotationError> {
    let mut bank = DependencyBank::default();
    let mut current = String::from("0");
    let mut sentence = DependencySentence {
        forms: Vec::new(),
        heads: Vec::new(),
    };
    let flush = |bank: &mut DependencyBank, current: &str, sentence: &mut DependencySentence| {
        if !sentence.forms.is_empty() {
            bank.interactions
                .entry(current.to_string())
                .or_default()
                .push(std::mem::replace(
                    sentence,
                    DependencySentence {
                        forms: Vec::new(),
                        heads: Vec::new(),
                    },
                ));
        }
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            flush(&mut bank, &current, &mut sentence);
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("interaction_id") {
                flush(&mut bank, &current, &mut sentence);
                current = rest.trim_start().trim_start_matches('=').trim().to_string();
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let parse_err = |detail: String| AnnotationError::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            detail,
        };
        if cols.len() < 7 {
            return Err(parse_err(format!("expected at least 7 columns, found {}", cols.len())));
        }
        // multi-word token ranges and empty nodes carry no head of their own
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("bad ID `{}`", cols[0])))?;
        if id != sentence.forms.len() + 1 {
            return Err(parse_err(format!("ID {id} out of sequence")));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(format!("bad HEAD `{}`", cols[6])))?;
        sentence.forms.push(cols[1].to_string());
        sentence.heads.push(head);
    }
    flush(&mut bank, &current, &mut sentence);
    Ok(bank)
}

pub fn load_dependencies(path: impl AsRef<Path>) -> Result<DependencyBank, AnnotationError> {
    let path = path.as_ref();
    parse_conllu(&read(path)?, &path.display().to_string())
}

fn is_forest(heads: &[usize]) -> bool {
    let n = heads.len();
    for start in 0..n {
        let mut node = start;
        let mut steps = 0;
        while heads[node] != 0 {
            node = heads[node] - 1;
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    true
}

impl DependencyBank {
    /// Edges for one interaction, checked against its turns: one sentence per
    /// turn, equal word counts, every head in range, no cycles.
    pub fn edges_for(&self, interaction: &str, turns: &[QuestionTurn]) -> Result<Vec<DependencyEdge>, AnnotationError> {
        let align = |detail: String| AnnotationError::AlignmentError {
            interaction: interaction.to_string(),
            detail,
        };
        let sentences = self
            .interactions
            .get(interaction)
            .ok_or_else(|| align("no dependency sentences".into()))?;
        if sentences.len() != turns.len() {
            return Err(align(format!(
                "{} sentences for {} turns",
                sentences.len(),
                turns.len()
            )));
        }
        let mut edges = Vec::new();
        for (sentence, turn) in sentences.iter().zip(turns) {
            if sentence.forms.len() != turn.len() {
                return Err(align(format!(
                    "turn {} has {} tokens but the parse has {}",
                    turn.turn_index,
                    turn.len(),
                    sentence.forms.len()
                )));
            }
            let n = sentence.heads.len();
            for (dep, &head) in sentence.heads.iter().enumerate() {
                if head > n || head == dep + 1 {
                    return Err(align(format!(
                        "turn {}: word {} has invalid head {head}",
                        turn.turn_index,
                        dep + 1
                    )));
                }
            }
            if !is_forest(&sentence.heads) {
                return Err(AnnotationError::NotAForest {
                    interaction: interaction.to_string(),
                    turn: turn.turn_index,
                });
            }
            edges.extend(sentence.heads.iter().enumerate().filter(|(_, &h)| h != 0).map(
                |(dep, &head)| DependencyEdge {
                    turn: turn.turn_index,
                    head: head - 1,
                    dependent: dep,
                },
            ));
        }
        Ok(edges)
    }
}

/// A token span `[start, end)` inside one turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
pub struct Mention {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn contains(&self, turn: usize, word: usize) -> bool {
        self.turn == turn && self.start <= word && word < self.end
    }
}

/// `mention` refers back to `antecedent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorefLink {
    pub mention: Mention,
    pub antecedent: Mention,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorefBank {
    pub interactions: BTreeMap<String, Vec<Vec<Mention>>>,
}

#[derive(Deserialize)]
struct RawCorefDoc {
    interaction_id: Value,
    chains: Vec<Vec<Mention>>,
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses coreference chains: a single document, an array of documents, or
/// one document per line.
pub fn parse_coreference(text: &str, origin: &str) -> Result<CorefBank, AnnotationError> {
    let parse_err = |line: usize, e: serde_json::Error| AnnotationError::Parse {
        path: origin.to_string(),
        line,
        detail: e.to_string(),
    };
    let docs: Vec<RawCorefDoc> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(0, e))?,
        Ok(v) => vec![serde_json::from_value(v).map_err(|e| parse_err(0, e))?],
        Err(_) => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
            .collect::<Result<_, _>>()?,
    };
    let mut bank = CorefBank::default();
    for doc in docs {
        bank.interactions
            .entry(id_string(&doc.interaction_id))
            .or_default()
            .extend(doc.chains);
    }
    Ok(bank)
}

pub fn load_coreference(path: impl AsRef<Path>) -> Result<CorefBank, AnnotationError> {
    let path = path.as_ref();
    parse_coreference(&read(path)?, &path.display().to_string())
}

/// Expands a chain into links from every later mention to the earliest one.
pub fn chain_links(chain: &[Mention]) -> Vec<CorefLink> {
    let mut sorted = chain.to_vec();
    sorted.sort();
    sorted.dedup();
    let Some((&first, rest)) = sorted.split_first() else {
        return Vec::new();
    };
    rest.iter()
        .map(|&mention| CorefLink {
            mention,
            antecedent: first,
        })
        .collect()
}

impl CorefBank {
    /// Links for one interaction, with every span checked against the turns.
    /// An interaction absent from the file has no links.
    pub fn links_for(&self, interaction: &str, turns: &[QuestionTurn]) -> Result<Vec<CorefLink>, AnnotationError> {
        let Some(chains) = self.interactions.get(interaction) else {
            return Ok(Vec::new());
        };
        let mut links = Vec::new();
        for chain in chains {
            for m in chain {
                let len = turns
                    .iter()
                    .find(|t| t.turn_index == m.turn)
                    .map(QuestionTurn::len);
                match len {
                    Some(len) if m.start < m.end && m.end <= len => {}
                    _ => {
                        return Err(AnnotationError::SpanOutOfRange {
                            interaction: interaction.to_string(),
                            turn: m.turn,
                            start: m.start,
                            end: m.end,
                        })
                    }
                }
            }
            links.extend(chain_links(chain));
        }
        Ok(links)
    }
}

pub const PRONOUNS: [&str; 7] = ["they", "them", "their", "it", "its", "these", "those"];

/// Closed-class words never taken as antecedents.
const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "by", "with", "from", "and", "or", "is", "are", "was",
    "were", "be", "has", "have", "had", "do", "does", "did", "what", "which", "who", "whom", "whose", "that", "this",
    "how", "many", "much", "all", "each", "every", "any", "some", "as", "than", "there", "where", "when", "not", "no",
    "i", "me", "my", "you", "your", "he", "she", "his", "her", "we", "our", "us",
];

fn is_candidate(word: &str, turn_links: &SchemaLinks, idx: usize) -> bool {
    if PRONOUNS.contains(&word) || FUNCTION_WORDS.contains(&word) {
        return false;
    }
    if !word.chars().any(char::is_alphanumeric) {
        return false;
    }
    turn_links
        .schema_items()
        .into_iter()
        .any(|item| matches!(turn_links.label(idx, item), Some(LinkLabel::ExactMatch | LinkLabel::PartialMatch)))
}

/// Links every pronoun to the closest preceding content word that matches a
/// schema item, searching back through earlier turns. Pronouns without such a
/// word get no link.
pub fn fallback_coref(turns: &[QuestionTurn], schema: &Schema) -> Vec<CorefLink> {
    let links: Vec<SchemaLinks> = turns.iter().map(|t| link_schema(&t.words(), schema)).collect();
    // (turn, word) of every candidate antecedent, in reading order
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for (turn, turn_links) in turns.iter().zip(&links) {
        for (w, tok) in turn.tokens.iter().enumerate() {
            if PRONOUNS.contains(&tok.text.as_str()) {
                if let Some(&(at, aw)) = candidates.last() {
                    out.push(CorefLink {
                        mention: Mention {
                            turn: turn.turn_index,
                            start: w,
                            end: w + 1,
                        },
                        antecedent: Mention {
                            turn: at,
                            start: aw,
                            end: aw + 1,
                        },
                    });
                }
            } else if is_candidate(&tok.text, turn_links, w) {
                candidates.push((turn.turn_index, w));
            }
        }
    }
    out
}
