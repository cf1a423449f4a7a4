//! Synthetic nested-NER corpora, gold alignments, segment cutting and
//! JSON-lines persistence.

mod alignment;
mod generate;
mod io;
mod schema;
mod segment;

pub use alignment::{spans_to_alignment, token_spans, GoldAlignment, OrderingPolicy};
pub use generate::{generate_corpus, GeneratorConfig, Vocabulary};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CorpusHeader, CORPUS_FORMAT, CORPUS_VERSION};
pub use schema::{Ontology, OntologySchema, SCHEMA_FORMAT_VERSION};
pub use segment::{random_segment, BoundaryPolicy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An annotated entity; `start..=end` are 0-based token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub ontology: usize,
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks span bounds, schema membership, and that spans of one ontology
    /// are either nested or disjoint.
    pub fn validate(&self, schema: &OntologySchema) -> Result<()> {
        for s in &self.spans {
            if s.start > s.end || s.end >= self.tokens.len() {
                return Err(Error::contract(format!(
                    "{}: span {}..={} outside {} tokens",
                    self.id,
                    s.start,
                    s.end,
                    self.tokens.len()
                )));
            }
            if !schema.contains_label(s.ontology, s.label) {
                return Err(Error::contract(format!(
                    "{}: label {} not in ontology {}",
                    self.id, s.label, s.ontology
                )));
            }
        }
        for (i, a) in self.spans.iter().enumerate() {
            for b in &self.spans[i + 1..] {
                if a.ontology == b.ontology && a.overlaps(b) && !a.contains(b) && !b.contains(a) {
                    return Err(Error::contract(format!(
                        "{}: spans {}..={} and {}..={} of one ontology cross",
                        self.id, a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spans sorted by `(start, end, ontology, label)`.
    pub fn sorted_spans(&self) -> Vec<Span> {
        let mut spans = self.spans.clone();
        spans.sort_by_key(|s| (s.start, s.end, s.ontology, s.label));
        spans
    }
}
