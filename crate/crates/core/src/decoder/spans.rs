use serde::{Deserialize, Serialize};

/// What an output label id means for span reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRole {
    /// Opens a span of `label` in `ontology`.
    Begin { ontology: usize, label: usize },
    /// Closes the innermost open span of `ontology`.
    End { ontology: usize },
}

/// Role of every output label id, indexed by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSchema {
    pub roles: Vec<LabelRole>,
}

impl SpanSchema {
    pub fn new(roles: Vec<LabelRole>) -> Self {
        Self { roles }
    }

    pub fn role(&self, id: usize) -> Option<LabelRole> {
        self.roles.get(id).copied()
    }
}

/// A span recovered from decoded labels; frames are 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecodedSpan {
    pub ontology: usize,
    pub label: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    /// False when no end-marker arrived and the span was closed at the last frame.
    pub closed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanExtraction {
    pub spans: Vec<DecodedSpan>,
    /// Human-readable notes about spurious or unknown markers.
    pub diagnostics: Vec<String>,
}

/// Pairs begin labels with end-markers of the same ontology.
///
/// Each ontology keeps its own stack of open spans; an end-marker closes the
/// most recently opened one. Spans left open are closed at `frames` and
/// flagged. Output is sorted by `(start, end, ontology, label)`.
pub fn extract_spans(labels: &[usize], emit_frames: &[usize], frames: usize, schema: &SpanSchema) -> SpanExtraction {
    let mut out = SpanExtraction::default();
    let mut open: Vec<Vec<(usize, usize)>> = Vec::new();
    for (i, (&id, &frame)) in labels.iter().zip(emit_frames).enumerate() {
        match schema.role(id) {
            Some(LabelRole::Begin { ontology, label }) => {
                if open.len() <= ontology {
                    open.resize_with(ontology + 1, Vec::new);
                }
                open[ontology].push((label, frame));
            }
            Some(LabelRole::End { ontology }) => match open.get_mut(ontology).and_then(Vec::pop) {
                Some((label, start)) => out.spans.push(DecodedSpan {
                    ontology,
                    label,
                    start_frame: start,
                    end_frame: frame,
                    closed: true,
                }),
                None => out
                    .diagnostics
                    .push(format!("spurious end-marker for ontology {ontology} at position {i}, frame {frame}")),
            },
            None => out.diagnostics.push(format!("unknown label id {id} at position {i}")),
        }
    }
    for (ontology, stack) in open.into_iter().enumerate() {
        for (label, start) in stack {
            out.diagnostics
                .push(format!("span of ontology {ontology} opened at frame {start} never closed"));
            out.spans.push(DecodedSpan {
                ontology,
                label,
                start_frame: start,
                end_frame: frames.max(start),
                closed: false,
            });
        }
    }
    out.spans
        .sort_by_key(|s| (s.start_frame, s.end_frame, s.ontology, s.label, !s.closed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // ontology 0: labels 0,1 begin; id 2 ends. ontology 1: label 0 begins (id 3); id 4 ends.
    fn schema() -> SpanSchema {
        SpanSchema::new(vec![
            LabelRole::Begin { ontology: 0, label: 0 },
            LabelRole::Begin { ontology: 0, label: 1 },
            LabelRole::End { ontology: 0 },
            LabelRole::Begin { ontology: 1, label: 0 },
            LabelRole::End { ontology: 1 },
        ])
    }

    #[test]
    fn empty_labels_give_no_spans() {
        let out = extract_spans(&[], &[], 5, &schema());
        assert!(out.spans.is_empty() && out.diagnostics.is_empty());
    }

    #[test]
    fn single_span() {
        let out = extract_spans(&[1, 2], &[1, 4], 4, &schema());
        assert_eq!(
            out.spans,
            vec![DecodedSpan { ontology: 0, label: 1, start_frame: 1, end_frame: 4, closed: true }]
        );
    }

    #[test]
    fn interleaved_ontologies() {
        // ont0 label0 opens @2, ont1 opens @3, ont0 closes @5, ont1 closes @6
        let out = extract_spans(&[0, 3, 2, 4], &[2, 3, 5, 6], 8, &schema());
        assert_eq!(
            out.spans,
            vec![
                DecodedSpan { ontology: 0, label: 0, start_frame: 2, end_frame: 5, closed: true },
                DecodedSpan { ontology: 1, label: 0, start_frame: 3, end_frame: 6, closed: true },
            ]
        );
    }

    #[test]
    fn same_ontology_nesting_is_lifo() {
        let out = extract_spans(&[0, 1, 2, 2], &[1, 2, 3, 5], 5, &schema());
        assert_eq!(out.spans.len(), 2);
        assert_eq!((out.spans[0].label, out.spans[0].start_frame, out.spans[0].end_frame), (0, 1, 5));
        assert_eq!((out.spans[1].label, out.spans[1].start_frame, out.spans[1].end_frame), (1, 2, 3));
    }

    #[test]
    fn spurious_and_unclosed_markers() {
        let out = extract_spans(&[4, 0, 9], &[1, 2, 3], 7, &schema());
        assert_eq!(out.diagnostics.len(), 3);
        assert_eq!(
            out.spans,
            vec![DecodedSpan { ontology: 0, label: 0, start_frame: 2, end_frame: 7, closed: false }]
        );
    }
}
