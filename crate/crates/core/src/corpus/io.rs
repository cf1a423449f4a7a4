//! JSON-lines corpus files.
//!
//! The first line is a header record, every further line one sequence:
//!
//! ```json
//! {"format":"rnnt-ner-corpus","version":1,"vocab_size":342,"pseudo_labeled":false}
//! {"id":"seq-000000","tokens":[12,7,301],"spans":[{"ontology":1,"label":0,"start":1,"end":2}]}
//! ```
//!
//! An empty file is an empty corpus.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledSequence;
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "rnnt-ner-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub vocab_size: usize,
    pub pseudo_labeled: bool,
}

impl CorpusHeader {
    pub fn new(vocab_size: usize, pseudo_labeled: bool) -> Self {
        Self { format: CORPUS_FORMAT.into(), version: CORPUS_VERSION, vocab_size, pseudo_labeled }
    }
}

pub fn write_corpus<W: Write>(mut out: W, header: &CorpusHeader, seqs: &[LabeledSequence]) -> Result<()> {
    writeln!(out, "{}", to_line(header)?)?;
    for s in seqs {
        writeln!(out, "{}", to_line(s)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(path: &Path, header: &CorpusHeader, seqs: &[LabeledSequence]) -> Result<()> {
    write_corpus(BufWriter::new(File::create(path)?), header, seqs)
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<(Option<CorpusHeader>, Vec<LabeledSequence>)> {
    let mut header = None;
    let mut seqs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse { line: lineno, message: e.to_string() };
        if lineno == 1 {
            let h: CorpusHeader = serde_json::from_str(&line).map_err(parse_err)?;
            if h.format != CORPUS_FORMAT || h.version != CORPUS_VERSION {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unsupported corpus format {} v{}", h.format, h.version),
                });
            }
            header = Some(h);
            continue;
        }
        seqs.push(serde_json::from_str(&line).map_err(parse_err)?);
    }
    Ok((header, seqs))
}

pub fn load_corpus(path: &Path) -> Result<(Option<CorpusHeader>, Vec<LabeledSequence>)> {
    read_corpus(BufReader::new(File::open(path)?))
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    #[test]
    fn empty_input_is_empty_corpus() {
        let (h, seqs) = read_corpus(&b""[..]).unwrap();
        assert!(h.is_none() && seqs.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!(
            "{}\n{}\n{{not json\n",
            serde_json::to_string(&CorpusHeader::new(5, false)).unwrap(),
            r#"{"id":"a","tokens":[1],"spans":[]}"#
        );
        match read_corpus(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_in_memory() {
        let seqs = vec![LabeledSequence {
            id: "x".into(),
            tokens: vec![3, 1, 4],
            spans: vec![Span { ontology: 0, label: 1, start: 1, end: 2 }],
        }];
        let header = CorpusHeader::new(10, true);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &header, &seqs).unwrap();
        let (h, back) = read_corpus(&buf[..]).unwrap();
        assert_eq!(h, Some(header));
        assert_eq!(back, seqs);
    }
}
