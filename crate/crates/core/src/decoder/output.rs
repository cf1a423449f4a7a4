//! JSON-lines decode records.
//!
//! One object per decoded sequence:
//!
//! ```json
//! {"id":"conv-0007","frames":312,"score":-4.21,
//!  "labels":[3,17],"emit_frames":[40,43],
//!  "spans":[{"ontology":"symptom","label":"back_pain","start":39,"end":42,"closed":true}],
//!  "diagnostics":[]}
//! ```
//!
//! `emit_frames` are 1-based input positions; span `start`/`end` are 0-based
//! inclusive token indices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub ontology: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub frames: usize,
    pub score: f64,
    pub labels: Vec<usize>,
    pub emit_frames: Vec<usize>,
    pub spans: Vec<SpanRecord>,
    pub diagnostics: Vec<String>,
}

impl DecodeRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("decode record serialises")
    }
}
