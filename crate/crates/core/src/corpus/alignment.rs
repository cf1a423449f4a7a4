use serde::{Deserialize, Serialize};

use super::{LabeledSequence, OntologySchema, Span};
use crate::decoder::DecodedSpan;
use crate::error::{Error, Result};
use crate::lattice::AlignmentPath;

/// Order of emissions that fall on the same token.
///
/// In every policy a token first closes spans that started earlier, then
/// opens spans starting there, then closes spans that start and end there.
/// The policies differ only in how begin labels at one token are sorted;
/// both keep outer spans ahead of inner spans of the same ontology so the
/// decoder's last-opened-first-closed pairing recovers the original spans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingPolicy {
    /// Longest span first, then ontology id, then label id.
    #[default]
    OutermostFirst,
    /// Ontology id first, then longest span, then label id.
    OntologyFirst,
}

/// Target label sequence and the path placing each label on its token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAlignment {
    pub targets: Vec<usize>,
    pub path: AlignmentPath,
}

impl GoldAlignment {
    /// 1-based frame of each target label.
    pub fn emit_frames(&self) -> Vec<usize> {
        self.path.label_frames().into_iter().map(|f| f + 1).collect()
    }
}

/// Begin label at each span's first token, end-marker at its last token.
pub fn spans_to_alignment(
    seq: &LabeledSequence,
    schema: &OntologySchema,
    policy: OrderingPolicy,
) -> Result<GoldAlignment> {
    let frames = seq.len();
    if frames == 0 {
        return Err(Error::contract(format!("{}: empty sequence has no alignment", seq.id)));
    }
    seq.validate(schema)?;
    // (token, phase, sort key..., output id)
    let mut events: Vec<(usize, u8, [usize; 3], usize)> = Vec::with_capacity(2 * seq.spans.len());
    for s in &seq.spans {
        let longest_first = usize::MAX - s.len();
        let key = match policy {
            OrderingPolicy::OutermostFirst => [longest_first, s.ontology, s.label],
            OrderingPolicy::OntologyFirst => [s.ontology, longest_first, s.label],
        };
        events.push((s.start, 1, key, schema.begin_id(s.ontology, s.label)));
        let end_phase = if s.start == s.end { 2 } else { 0 };
        events.push((s.end, end_phase, [s.ontology, 0, 0], schema.end_id(s.ontology)));
    }
    events.sort();
    let mut per_frame = vec![0usize; frames];
    for e in &events {
        per_frame[e.0] += 1;
    }
    Ok(GoldAlignment {
        targets: events.iter().map(|e| e.3).collect(),
        path: AlignmentPath::from_emission_counts(&per_frame)?,
    })
}

/// Converts decoder spans (1-based frames) to token spans.
pub fn token_spans(decoded: &[DecodedSpan]) -> Vec<Span> {
    decoded
        .iter()
        .map(|d| Span {
            ontology: d.ontology,
            label: d.label,
            start: d.start_frame.saturating_sub(1),
            end: d.end_frame.saturating_sub(1),
        })
        .collect()
}
