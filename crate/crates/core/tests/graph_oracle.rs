mod common;

use std::time::Instant;

use common::{check_case, graph_cases, Corpus};
use relgraph::graph::densify;
use relgraph::rasm::{read_rasm, write_rasm};
use relgraph::serializer::ItemSource;
use relgraph::RelationType;

#[test]
fn every_fixture_matches_the_reference_evaluator() {
    let corpus = Corpus::load();
    let start = Instant::now();
    let cases = graph_cases(&corpus);
    let build_time = start.elapsed();
    assert!(cases.len() >= 20, "only {} fixtures", cases.len());
    for case in &cases {
        if let Some(diff) = check_case(&corpus, case) {
            panic!("{}: {diff}", case.name);
        }
    }
    assert!(build_time.as_secs_f64() < 5.0, "building took {build_time:?}");
}

#[test]
fn sparse_export_and_rasm_round_trip() {
    let corpus = Corpus::load();
    for case in graph_cases(&corpus) {
        let graph = &case.turn.graph;
        let sources: Vec<ItemSource> = graph.input.items.iter().map(|i| i.source.clone()).collect();
        assert_eq!(densify(&sources, &graph.sparse_cells()).unwrap(), graph.matrix, "{}", case.name);
        let mut buf = Vec::new();
        write_rasm(&mut buf, &graph.matrix).unwrap();
        assert_eq!(read_rasm(&buf[..]).unwrap(), graph.matrix, "{}", case.name);
    }
}

fn question_item(case: &common::Case, turn: usize, word: usize) -> usize {
    case.turn
        .graph
        .input
        .items
        .iter()
        .position(|i| i.source == ItemSource::Question { turn, word })
        .unwrap_or_else(|| panic!("{}: no item for turn {turn} word {word}", case.name))
}

#[test]
fn dorm_transcript_coreference_cells() {
    let corpus = Corpus::load();
    let cases = graph_cases(&corpus);
    let third = cases.iter().find(|c| c.name == "multi/00000_03").unwrap();
    let g = &third.turn.graph;
    let students = question_item(third, 1, 2);
    let their = question_item(third, 1, 5);
    let they2 = question_item(third, 2, 3);
    let they3 = question_item(third, 3, 2);
    for mention in [their, they2, they3] {
        assert_eq!(g.get(mention, students), RelationType::CorefRelations);
    }
    // links run from the mention to the antecedent only
    assert_eq!(g.get(students, they3), RelationType::QqGeneric);

    // without a coreference file the pronoun heuristic links "they" back to "students"
    let fallback = cases.iter().find(|c| c.name == "multi-fallback/00000_02").unwrap();
    let s = question_item(fallback, 1, 2);
    let t = question_item(fallback, 2, 3);
    assert_eq!(fallback.turn.graph.get(t, s), RelationType::CorefRelations);
}

#[test]
fn dorm_transcript_syntax_cells() {
    let corpus = Corpus::load();
    let cases = graph_cases(&corpus);
    let first = cases.iter().find(|c| c.name == "multi/00000_01").unwrap();
    let g = &first.turn.graph;
    // "list" heads "students" three words away, beyond the distance window
    let list = question_item(first, 1, 0);
    let ids = question_item(first, 1, 6);
    assert_eq!(g.get(list, ids), RelationType::ForwardSyntax);
    assert_eq!(g.get(ids, list), RelationType::BackwardSyntax);
    let along = question_item(first, 1, 3);
    assert_eq!(g.get(list, along), RelationType::NoneSyntax);
}

#[test]
fn fixtures_exercise_the_label_vocabulary() {
    let corpus = Corpus::load();
    let mut seen = std::collections::BTreeSet::new();
    for case in graph_cases(&corpus) {
        seen.extend(case.turn.graph.matrix.ids().iter().copied());
    }
    let missing: Vec<&str> = RelationType::ALL
        .iter()
        .filter(|r| !seen.contains(&r.id()))
        .map(|r| r.name())
        .collect();
    assert!(missing.is_empty(), "labels never produced: {missing:?}");
}
