use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membership::DomainId;

/// Token-embedding sequence `[w_start, w_1, …, w_n, w_end]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSequence {
    /// `data` holds `valid_len × dim` floats; at least the two boundary
    /// vectors must be present.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                op: "embedding sequence",
                lhs: vec![data.len()],
                rhs: vec![dim],
            });
        }
        let len = data.len() / dim;
        if len < 2 {
            return Err(Error::input(format!(
                "embedding sequence needs at least the two boundary vectors, got {len}"
            )));
        }
        Ok(EmbeddingSequence { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("ragged embedding rows"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn valid_len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Drops the final interior tokens so that `valid_len <= max_len`,
    /// keeping the end boundary vector.
    pub fn truncated(&self, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::input(format!("max_len must be at least 2, got {max_len}")));
        }
        let len = self.valid_len();
        if len <= max_len {
            return Ok(self.clone());
        }
        let mut data = self.data[..(max_len - 1) * self.dim].to_vec();
        data.extend_from_slice(self.token(len - 1));
        Ok(EmbeddingSequence { dim: self.dim, data })
    }
}

/// One news item.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsRecord {
    pub id: String,
    pub text: Option<String>,
    pub embeddings: Option<EmbeddingSequence>,
    pub domain: Option<DomainId>,
    /// `Some(true)` = fake. Unlabeled items are allowed on disk; training
    /// and evaluation reject them.
    pub fake: Option<bool>,
    /// True mixture proportions of a generated multi-domain item.
    pub mixture: Option<BTreeMap<DomainId, f64>>,
}

impl NewsRecord {
    pub fn new(id: impl Into<String>) -> Self {
        NewsRecord {
            id: id.into(),
            text: None,
            embeddings: None,
            domain: None,
            fake: None,
            mixture: None,
        }
    }

    pub fn is_mixed(&self) -> bool {
        self.mixture.as_ref().is_some_and(|m| m.len() > 1)
    }

    pub fn embeddings(&self) -> Result<&EmbeddingSequence> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| Error::input(format!("record {} has no embeddings; run `embed` first", self.id)))
    }

    pub fn fake_label(&self) -> Result<bool> {
        self.fake
            .ok_or_else(|| Error::input(format!("record {} has no fake label", self.id)))
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.text.is_none() && self.embeddings.is_none() {
            return Err(Error::input(format!(
                "record {} has neither text nor embeddings",
                self.id
            )));
        }
        Ok(())
    }
}

/// Provenance of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub seed: u64,
    pub spec: super::SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub dim: usize,
    pub records: Vec<NewsRecord>,
    pub synthetic: Option<SyntheticMeta>,
}

impl Corpus {
    /// Checks record invariants and the shared embedding dim. `dim` is
    /// taken from the first embedded record when zero.
    pub fn new(name: impl Into<String>, dim: usize, records: Vec<NewsRecord>) -> Result<Self> {
        let mut corpus = Corpus {
            name: name.into(),
            dim,
            records,
            synthetic: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub(crate) fn validate(&mut self) -> Result<()> {
        for r in &self.records {
            r.check()?;
            if let Some(e) = &r.embeddings {
                if self.dim == 0 {
                    self.dim = e.dim();
                } else if e.dim() != self.dim {
                    return Err(Error::Integrity(format!(
                        "record {} has dim {}, corpus dim is {}",
                        r.id,
                        e.dim(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same records with the single domain labels removed.
    pub fn strip_domains(&self) -> Corpus {
        let mut out = self.clone();
        for r in &mut out.records {
            r.domain = None;
        }
        out
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            name: self.name.clone(),
            dim: self.dim,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            synthetic: self.synthetic.clone(),
        }
    }

    /// Ids of records lacking a domain label.
    pub fn missing_domains(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.domain.is_none())
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn missing_fake_labels(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.fake.is_none())
            .map(|r| r.id.as_str())
            .collect()
    }

    /// Fills missing embeddings with [`super::toy_embed`].
    pub fn ensure_embeddings(&mut self, dim: usize, max_len: usize) -> Result<usize> {
        if self.dim != 0 && self.dim != dim {
            return Err(Error::Integrity(format!(
                "corpus dim is {}, requested {dim}",
                self.dim
            )));
        }
        let mut filled = 0;
        for r in &mut self.records {
            if r.embeddings.is_none() {
                let text = r.text.as_deref().unwrap_or_default();
                let e = super::toy_embed(text, dim, max_len)
                    .map_err(|e| Error::input(format!("record {}: {e}", r.id)))?;
                r.embeddings = Some(e);
                filled += 1;
            }
        }
        self.dim = dim;
        Ok(filled)
    }

    /// Truncates sequences longer than `max_len`, keeping the final row.
    pub fn clip_embeddings(&mut self, max_len: usize) -> Result<usize> {
        let mut clipped = 0;
        for r in &mut self.records {
            if let Some(e) = &r.embeddings {
                if e.valid_len() > max_len {
                    r.embeddings = Some(e.truncated(max_len)?);
                    clipped += 1;
                }
            }
        }
        Ok(clipped)
    }
}

/// Shortens a list of ids for error messages.
pub(crate) fn id_list(ids: &[&str]) -> String {
    const SHOW: usize = 10;
    let head = ids.iter().take(SHOW).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        format!("{head}, … ({} total)", ids.len())
    } else {
        head
    }
}
