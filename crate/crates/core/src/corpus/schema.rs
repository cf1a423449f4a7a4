use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{LabelRole, SpanSchema};
use crate::error::{Error, Result};

pub const SCHEMA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub name: String,
    /// Short tag used in label names, e.g. `sym` in `sym:back_pain`.
    pub tag: String,
    pub labels: Vec<String>,
    /// Relative frequency of spans from this ontology.
    pub weight: f64,
}

/// Ontologies and the joint output vocabulary they induce.
///
/// Output ids are assigned ontology by ontology: one begin id per label, then
/// the ontology's end-marker. Blank is not part of this vocabulary; models
/// place it after the last id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologySchema {
    pub format_version: u32,
    pub ontologies: Vec<Ontology>,
}

impl OntologySchema {
    pub fn new(ontologies: Vec<Ontology>) -> Result<Self> {
        let schema = Self { format_version: SCHEMA_FORMAT_VERSION, ontologies };
        schema.validate()?;
        Ok(schema)
    }

    /// Five clinical ontologies weighted 100 : 64 : 42 : 38 : 6.
    pub fn medical_default() -> Self {
        let make = |name: &str, tag: &str, labels: &[&str], weight: f64| Ontology {
            name: name.into(),
            tag: tag.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            weight,
        };
        Self::new(vec![
            make("medications", "med", &["analgesic", "antibiotic", "statin", "inhaler"], 100.0),
            make("symptoms", "sym", &["back_pain", "headache", "cough", "fatigue"], 64.0),
            make("conditions", "cond", &["chronic", "acute", "recurrent"], 42.0),
            make("diagnoses", "dx", &["diabetes", "asthma", "hypertension"], 38.0),
            make("treatments", "tx", &["physiotherapy", "surgery"], 6.0),
        ])
        .expect("built-in schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SCHEMA_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {}",
                self.format_version
            )));
        }
        if self.ontologies.is_empty() {
            return Err(Error::Config("schema has no ontologies".into()));
        }
        let mut names = HashSet::new();
        let mut tags = HashSet::new();
        for o in &self.ontologies {
            if !names.insert(o.name.as_str()) || !tags.insert(o.tag.as_str()) {
                return Err(Error::Config(format!("duplicate ontology name or tag `{}`", o.name)));
            }
            if o.labels.is_empty() {
                return Err(Error::Config(format!("ontology `{}` has no labels", o.name)));
            }
            let unique: HashSet<_> = o.labels.iter().collect();
            if unique.len() != o.labels.len() {
                return Err(Error::Config(format!("ontology `{}` repeats a label", o.name)));
            }
            if !(o.weight.is_finite() && o.weight > 0.0) {
                return Err(Error::Config(format!("ontology `{}` needs a positive weight", o.name)));
            }
        }
        Ok(())
    }

    pub fn num_ontologies(&self) -> usize {
        self.ontologies.len()
    }

    fn offset(&self, ontology: usize) -> usize {
        self.ontologies[..ontology].iter().map(|o| o.labels.len() + 1).sum()
    }

    /// Size of the output vocabulary (begin labels and end-markers, no blank).
    pub fn num_outputs(&self) -> usize {
        self.offset(self.ontologies.len())
    }

    pub fn begin_id(&self, ontology: usize, label: usize) -> usize {
        self.offset(ontology) + label
    }

    pub fn end_id(&self, ontology: usize) -> usize {
        self.offset(ontology) + self.ontologies[ontology].labels.len()
    }

    pub fn contains_label(&self, ontology: usize, label: usize) -> bool {
        self.ontologies.get(ontology).is_some_and(|o| label < o.labels.len())
    }

    pub fn span_schema(&self) -> SpanSchema {
        let mut roles = Vec::with_capacity(self.num_outputs());
        for (o, ont) in self.ontologies.iter().enumerate() {
            roles.extend((0..ont.labels.len()).map(|l| LabelRole::Begin { ontology: o, label: l }));
            roles.push(LabelRole::End { ontology: o });
        }
        SpanSchema::new(roles)
    }

    /// `sym:back_pain` for begin ids, `sym_end` for end-markers.
    pub fn output_name(&self, id: usize) -> Option<String> {
        match self.span_schema().role(id)? {
            LabelRole::Begin { ontology, label } => {
                let o = &self.ontologies[ontology];
                Some(format!("{}:{}", o.tag, o.labels[label]))
            }
            LabelRole::End { ontology } => Some(format!("{}_end", self.ontologies[ontology].tag)),
        }
    }

    /// Ontology proportions implied by the weights.
    pub fn proportions(&self) -> Vec<f64> {
        let total: f64 = self.ontologies.iter().map(|o| o.weight).sum();
        self.ontologies.iter().map(|o| o.weight / total).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
