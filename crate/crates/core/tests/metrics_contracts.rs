mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_ner::corpus::{OntologySchema, Span};
use rnnt_ner::metrics::{global_f1, local_f1, per_ontology_report, Averaging};

fn random_spans(rng: &mut impl Rng) -> Vec<Span> {
    (0..rng.gen_range(0..6))
        .map(|_| {
            let start = rng.gen_range(0..8);
            Span { ontology: rng.gen_range(0..2), label: rng.gen_range(0..2), start, end: start + rng.gen_range(0..3) }
        })
        .collect()
}

#[test]
fn local_never_exceeds_global() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let (p, g) = (random_spans(&mut rng), random_spans(&mut rng));
        let (l, gl) = (local_f1(&p, &g), global_f1(&p, &g));
        assert!(l.f1() <= gl.f1() + 1e-12);
        assert!(l.total().tp <= gl.total().tp);
    }
}

#[test]
fn location_mismatch_scores_zero_local_one_global() {
    let gold = [Span { ontology: 1, label: 0, start: 6, end: 9 }];
    let pred = [Span { ontology: 1, label: 0, start: 7, end: 9 }];
    assert_eq!(local_f1(&pred, &gold).f1(), 0.0);
    assert_eq!(global_f1(&pred, &gold).f1(), 1.0);
}

#[test]
fn duplicate_predictions_match_once() {
    let gold = [Span { ontology: 0, label: 1, start: 2, end: 3 }];
    let pred = [gold[0], gold[0]];
    let r = local_f1(&pred, &gold).total();
    assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
}

#[test]
fn report_header_matches_golden() {
    let schema = OntologySchema::medical_default();
    let r = local_f1(&[], &[]);
    let mut buf = Vec::new();
    per_ontology_report(&r, &schema, Averaging::Micro).write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let golden = std::fs::read_to_string(common::fixture("report_header.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), golden.trim_end());
    assert_eq!(text.lines().nth(1).unwrap().split(',').next(), Some("overall"));
    assert_eq!(text.lines().count(), 1 + 1 + schema.ontologies.len());
}
