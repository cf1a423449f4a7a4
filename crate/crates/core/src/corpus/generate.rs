use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledSequence, OntologySchema, Span};
use crate::error::{Error, Result};

/// Knobs for the synthetic conversation generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Mean sequence length in tokens.
    pub mean_length: f64,
    /// Log-normal shape; larger values give a longer tail.
    pub length_sigma: f64,
    pub min_length: usize,
    pub max_length: usize,
    /// Mean number of filler tokens between mentions.
    pub mean_gap: f64,
    /// Probability that a mention wraps another mention (cross-ontology nesting).
    pub composite_rate: f64,
    /// Probability that a composite whose inner and outer ontologies coincide
    /// is kept nested; otherwise it is emitted as two flat mentions.
    pub nesting_rate: f64,
    /// Number of distinct filler words.
    pub filler_words: usize,
    /// Synonymous head words per label.
    pub synonyms: usize,
    /// Shared modifier words per ontology.
    pub modifiers: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mean_length: 300.0,
            length_sigma: 0.6,
            min_length: 20,
            max_length: 1600,
            mean_gap: 10.0,
            composite_rate: 0.25,
            nesting_rate: 0.2,
            filler_words: 300,
            synonyms: 3,
            modifiers: 3,
        }
    }
}

impl GeneratorConfig {
    /// Longest mention the generator can produce, in tokens.
    pub fn max_mention_len(&self) -> usize {
        // cue + (modifier + head + head) + modifier
        5
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Generation(m.to_string()));
        if self.min_length == 0 || self.min_length > self.max_length {
            return err("need 1 <= min_length <= max_length");
        }
        if !(self.mean_length.is_finite() && self.mean_length >= 1.0) {
            return err("mean_length must be >= 1");
        }
        if self.max_length < self.max_mention_len() {
            return err("max_length shorter than the longest mention");
        }
        if !(self.length_sigma.is_finite() && self.length_sigma >= 0.0) {
            return err("length_sigma must be >= 0");
        }
        if !(self.mean_gap.is_finite() && self.mean_gap >= 0.0) {
            return err("mean_gap must be >= 0");
        }
        for (name, p) in [("composite_rate", self.composite_rate), ("nesting_rate", self.nesting_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Generation(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.filler_words == 0 || self.synonyms == 0 || self.modifiers == 0 {
            return err("word inventories must be non-empty");
        }
        Ok(())
    }
}

/// Word inventory: filler words, per-ontology modifiers, and per-label head
/// and cue words. Ids are dense and deterministic given schema and config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    filler: Vec<u32>,
    /// `[ontology][k]`
    modifiers: Vec<Vec<u32>>,
    /// `[ontology][label][k]`
    heads: Vec<Vec<Vec<u32>>>,
    /// `[ontology][label]`
    cues: Vec<Vec<u32>>,
}

impl Vocabulary {
    pub fn build(schema: &OntologySchema, cfg: &GeneratorConfig) -> Self {
        let mut words = Vec::new();
        let mut push = |w: String| {
            words.push(w);
            (words.len() - 1) as u32
        };
        let filler = (0..cfg.filler_words).map(|i| push(format!("w{i:03}"))).collect();
        let mut modifiers = Vec::new();
        let mut heads = Vec::new();
        let mut cues = Vec::new();
        for ont in &schema.ontologies {
            modifiers.push((0..cfg.modifiers).map(|k| push(format!("{}~mod{k}", ont.tag))).collect());
            let mut ont_heads = Vec::new();
            let mut ont_cues = Vec::new();
            for label in &ont.labels {
                ont_heads.push((0..cfg.synonyms).map(|k| push(format!("{}:{label}~{k}", ont.tag))).collect());
                ont_cues.push(push(format!("{}:{label}^", ont.tag)));
            }
            heads.push(ont_heads);
            cues.push(ont_cues);
        }
        Self { words, filler, modifiers, heads, cues }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<oov>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

struct Mention {
    tokens: Vec<u32>,
    /// Spans relative to the mention start.
    spans: Vec<Span>,
}

struct Generator<'a> {
    schema: &'a OntologySchema,
    cfg: &'a GeneratorConfig,
    vocab: &'a Vocabulary,
    cumulative: Vec<f64>,
}

impl Generator<'_> {
    fn ontology(&self, rng: &mut ChaCha8Rng) -> usize {
        let x: f64 = rng.gen();
        self.cumulative.iter().position(|&c| x < c).unwrap_or(self.cumulative.len() - 1)
    }

    fn label(&self, rng: &mut ChaCha8Rng, ontology: usize) -> usize {
        rng.gen_range(0..self.schema.ontologies[ontology].labels.len())
    }

    fn flat(&self, rng: &mut ChaCha8Rng, ontology: usize, label: usize) -> Mention {
        let heads = &self.vocab.heads[ontology][label];
        let mut tokens = Vec::with_capacity(3);
        if rng.gen_bool(0.3) {
            tokens.push(*self.vocab.modifiers[ontology].choose(rng).unwrap());
        }
        tokens.push(*heads.choose(rng).unwrap());
        if rng.gen_bool(0.3) {
            tokens.push(*heads.choose(rng).unwrap());
        }
        let end = tokens.len() - 1;
        Mention { tokens, spans: vec![Span { ontology, label, start: 0, end }] }
    }

    /// One or two mentions laid out back to back.
    fn mentions(&self, rng: &mut ChaCha8Rng) -> Vec<Mention> {
        let outer = self.ontology(rng);
        let outer_label = self.label(rng, outer);
        if !rng.gen_bool(self.cfg.composite_rate) {
            return vec![self.flat(rng, outer, outer_label)];
        }
        let inner = self.ontology(rng);
        let inner_label = self.label(rng, inner);
        let inner_mention = self.flat(rng, inner, inner_label);
        if inner == outer && !rng.gen_bool(self.cfg.nesting_rate) {
            // same ontology without nesting: side by side instead
            return vec![self.flat(rng, outer, outer_label), inner_mention];
        }
        let mut tokens = vec![self.vocab.cues[outer][outer_label]];
        tokens.extend(&inner_mention.tokens);
        if rng.gen_bool(0.5) {
            tokens.push(*self.vocab.modifiers[outer].choose(rng).unwrap());
        }
        let mut spans = vec![Span { ontology: outer, label: outer_label, start: 0, end: tokens.len() - 1 }];
        spans.extend(inner_mention.spans.iter().map(|s| Span { start: s.start + 1, end: s.end + 1, ..*s }));
        vec![Mention { tokens, spans }]
    }

    fn sequence(&self, rng: &mut ChaCha8Rng, id: String) -> Result<LabeledSequence> {
        let target = self.length(rng)?;
        let gap = Geometric::new(1.0 / (self.cfg.mean_gap + 1.0))
            .map_err(|e| Error::Generation(e.to_string()))?;
        let mut tokens: Vec<u32> = Vec::with_capacity(target);
        let mut spans = Vec::new();
        loop {
            let n = gap.sample(rng) as usize;
            for _ in 0..n.min(target - tokens.len()) {
                tokens.push(*self.vocab.filler.choose(rng).unwrap());
            }
            if tokens.len() >= target {
                break;
            }
            for m in self.mentions(rng) {
                if tokens.len() + m.tokens.len() > target {
                    break;
                }
                let offset = tokens.len();
                spans.extend(m.spans.iter().map(|s| Span { start: s.start + offset, end: s.end + offset, ..*s }));
                tokens.extend(&m.tokens);
                // a filler token keeps back-to-back mentions apart
                if tokens.len() < target {
                    tokens.push(*self.vocab.filler.choose(rng).unwrap());
                }
            }
            if target - tokens.len() < self.cfg.max_mention_len() {
                while tokens.len() < target {
                    tokens.push(*self.vocab.filler.choose(rng).unwrap());
                }
                break;
            }
        }
        let seq = LabeledSequence { id, tokens, spans };
        Ok(LabeledSequence { spans: seq.sorted_spans(), ..seq })
    }

    fn length(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        let sigma = self.cfg.length_sigma;
        let mu = self.cfg.mean_length.ln() - sigma * sigma / 2.0;
        let dist = LogNormal::new(mu, sigma).map_err(|e| Error::Generation(e.to_string()))?;
        let len = dist.sample(rng).round() as usize;
        Ok(len.clamp(self.cfg.min_length, self.cfg.max_length))
    }
}

/// Generates `size` synthetic conversations. Output is a pure function of
/// `(schema, cfg, size, seed)`.
pub fn generate_corpus(
    schema: &OntologySchema,
    cfg: &GeneratorConfig,
    size: usize,
    seed: u64,
) -> Result<(Vocabulary, Vec<LabeledSequence>)> {
    schema.validate()?;
    cfg.validate()?;
    let vocab = Vocabulary::build(schema, cfg);
    let mut acc = 0.0;
    let cumulative = schema
        .proportions()
        .into_iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let gen = Generator { schema, cfg, vocab: &vocab, cumulative };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..size)
        .map(|i| gen.sequence(&mut rng, format!("seq-{i:06}")))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab, sequences))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig { mean_length: 60.0, max_length: 200, ..GeneratorConfig::default() }
    }

    #[test]
    fn empty_corpus() {
        let (_, seqs) = generate_corpus(&OntologySchema::medical_default(), &small(), 0, 1).unwrap();
        assert!(seqs.is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let schema = OntologySchema::medical_default();
        let a = generate_corpus(&schema, &small(), 5, 42).unwrap();
        let b = generate_corpus(&schema, &small(), 5, 42).unwrap();
        let c = generate_corpus(&schema, &small(), 5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn generated_sequences_are_well_formed() {
        let schema = OntologySchema::medical_default();
        let (vocab, seqs) = generate_corpus(&schema, &small(), 30, 7).unwrap();
        for s in &seqs {
            s.validate(&schema).unwrap();
            assert!(s.tokens.iter().all(|&t| (t as usize) < vocab.len()));
            assert!((small().min_length..=small().max_length).contains(&s.len()));
        }
        assert!(seqs.iter().map(|s| s.spans.len()).sum::<usize>() > 30);
    }

    #[test]
    fn infeasible_configs_rejected() {
        let schema = OntologySchema::medical_default();
        let cfg = GeneratorConfig { min_length: 50, max_length: 10, ..small() };
        assert!(matches!(generate_corpus(&schema, &cfg, 1, 0), Err(Error::Generation(_))));
        let cfg = GeneratorConfig { min_length: 1, max_length: 3, ..small() };
        assert!(matches!(generate_corpus(&schema, &cfg, 1, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn zero_nesting_rate_keeps_ontologies_flat() {
        let schema = OntologySchema::medical_default();
        let cfg = GeneratorConfig { nesting_rate: 0.0, composite_rate: 0.8, ..small() };
        let (_, seqs) = generate_corpus(&schema, &cfg, 40, 3).unwrap();
        let mut cross_nested = 0;
        for s in &seqs {
            for (i, a) in s.spans.iter().enumerate() {
                for b in &s.spans[i + 1..] {
                    if a.overlaps(b) {
                        assert_ne!(a.ontology, b.ontology, "{}: {a:?} {b:?}", s.id);
                        cross_nested += 1;
                    }
                }
            }
        }
        assert!(cross_nested > 0);
    }
}
