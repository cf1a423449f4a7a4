use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSequence, Span};

/// What happens to spans that cross a segment boundary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    #[default]
    Drop,
    Clip,
}

/// Cuts a window of uniformly random length in `[min_len, max_len]` at a
/// uniformly random offset. Sequences shorter than `min_len` come back whole.
pub fn random_segment<R: Rng + ?Sized>(
    seq: &LabeledSequence,
    min_len: usize,
    max_len: usize,
    boundary: BoundaryPolicy,
    rng: &mut R,
) -> LabeledSequence {
    let n = seq.len();
    if n <= min_len {
        return seq.clone();
    }
    let len = rng.gen_range(min_len..=max_len.min(n).max(min_len));
    let start = rng.gen_range(0..=n - len);
    let end = start + len; // exclusive
    let spans = seq
        .spans
        .iter()
        .filter_map(|s| {
            if s.start >= start && s.end < end {
                Some(Span { start: s.start - start, end: s.end - start, ..*s })
            } else if boundary == BoundaryPolicy::Clip && s.start < end && s.end >= start {
                Some(Span {
                    start: s.start.max(start) - start,
                    end: s.end.min(end - 1) - start,
                    ..*s
                })
            } else {
                None
            }
        })
        .collect();
    LabeledSequence {
        id: format!("{}@{}+{}", seq.id, start, len),
        tokens: seq.tokens[start..end].to_vec(),
        spans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(len: usize, spans: Vec<Span>) -> LabeledSequence {
        LabeledSequence { id: "s".into(), tokens: (0..len as u32).collect(), spans }
    }

    #[test]
    fn short_sequence_returned_whole() {
        let s = seq(10, vec![Span { ontology: 0, label: 0, start: 2, end: 4 }]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_segment(&s, 20, 30, BoundaryPolicy::Drop, &mut rng), s);
    }

    #[test]
    fn contained_spans_shift_and_crossing_spans_drop_or_clip() {
        let s = seq(100, vec![
            Span { ontology: 0, label: 0, start: 0, end: 99 },
            Span { ontology: 1, label: 1, start: 50, end: 52 },
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let cut = random_segment(&s, 10, 20, BoundaryPolicy::Drop, &mut rng);
            let offset = cut.tokens[0] as usize;
            assert!((10..=20).contains(&cut.len()));
            for sp in &cut.spans {
                assert_eq!((sp.ontology, sp.start + offset, sp.end + offset), (1, 50, 52));
            }
            let clipped = random_segment(&s, 10, 20, BoundaryPolicy::Clip, &mut rng);
            let outer = clipped.spans.iter().find(|sp| sp.ontology == 0).unwrap();
            assert_eq!((outer.start, outer.end), (0, clipped.len() - 1));
        }
    }
}
