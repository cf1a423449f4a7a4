//! Span-level precision, recall and F1.
//!
//! *Local* matching requires identical ontology, label, start and end;
//! *global* matching only compares `(ontology, label)` as multisets. Both
//! match one-to-one, so local true positives never exceed global ones.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{OntologySchema, Span};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Match counts keyed by `(ontology, label)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanMatchResult {
    pub by_label: BTreeMap<(usize, usize), Counts>,
}

impl SpanMatchResult {
    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for v in self.by_label.values() {
            c.add(v);
        }
        c
    }

    pub fn precision(&self) -> f64 {
        self.total().precision()
    }

    pub fn recall(&self) -> f64 {
        self.total().recall()
    }

    pub fn f1(&self) -> f64 {
        self.total().f1()
    }

    pub fn ontology(&self, ontology: usize) -> Counts {
        let mut c = Counts::default();
        for (_, v) in self.by_label.range((ontology, 0)..(ontology + 1, 0)) {
            c.add(v);
        }
        c
    }

    /// Adds another evaluation's counts, e.g. across documents.
    pub fn merge(&mut self, other: &SpanMatchResult) {
        for (k, v) in &other.by_label {
            self.by_label.entry(*k).or_default().add(v);
        }
    }
}

fn multiset<K: Ord>(keys: impl Iterator<Item = K>) -> BTreeMap<K, u64> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn match_on<K: Ord + Copy>(pred: &[Span], gold: &[Span], key: impl Fn(&Span) -> K, label: impl Fn(&K) -> (usize, usize)) -> SpanMatchResult {
    let p = multiset(pred.iter().map(&key));
    let g = multiset(gold.iter().map(&key));
    let mut out = SpanMatchResult::default();
    for (k, &np) in &p {
        let ng = g.get(k).copied().unwrap_or(0);
        let c = out.by_label.entry(label(k)).or_default();
        c.tp += np.min(ng);
        c.fp += np.saturating_sub(ng);
    }
    for (k, &ng) in &g {
        let np = p.get(k).copied().unwrap_or(0);
        out.by_label.entry(label(k)).or_default().fn_ += ng.saturating_sub(np);
    }
    out
}

/// Exact label-and-location matching.
pub fn local_f1(pred: &[Span], gold: &[Span]) -> SpanMatchResult {
    match_on(pred, gold, |s| (s.ontology, s.label, s.start, s.end), |k| (k.0, k.1))
}

/// Label-only multiset matching.
pub fn global_f1(pred: &[Span], gold: &[Span]) -> SpanMatchResult {
    match_on(pred, gold, |s| (s.ontology, s.label), |k| *k)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scope: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ReportRow {
    fn from_counts(scope: String, c: Counts) -> Self {
        Self { scope, tp: c.tp, fp: c.fp, fn_: c.fn_, precision: c.precision(), recall: c.recall(), f1: c.f1() }
    }
}

pub const REPORT_COLUMNS: [&str; 7] = ["scope", "tp", "fp", "fn", "precision", "recall", "f1"];

/// Overall row first, then one row per ontology in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyReport {
    pub averaging: Averaging,
    pub rows: Vec<ReportRow>,
}

pub fn per_ontology_report(result: &SpanMatchResult, schema: &OntologySchema, averaging: Averaging) -> OntologyReport {
    let per: Vec<ReportRow> = schema
        .ontologies
        .iter()
        .enumerate()
        .map(|(o, ont)| ReportRow::from_counts(ont.name.clone(), result.ontology(o)))
        .collect();
    let overall = match averaging {
        Averaging::Micro => ReportRow::from_counts("overall".into(), result.total()),
        Averaging::Macro => {
            let n = per.len().max(1) as f64;
            let total = result.total();
            ReportRow {
                scope: "overall".into(),
                tp: total.tp,
                fp: total.fp,
                fn_: total.fn_,
                precision: per.iter().map(|r| r.precision).sum::<f64>() / n,
                recall: per.iter().map(|r| r.recall).sum::<f64>() / n,
                f1: per.iter().map(|r| r.f1).sum::<f64>() / n,
            }
        }
    };
    let mut rows = vec![overall];
    rows.extend(per);
    OntologyReport { averaging, rows }
}

impl OntologyReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", REPORT_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.scope, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
