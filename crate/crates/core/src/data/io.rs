use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::SyntheticMeta;
use super::{Corpus, EmbeddingSequence, NewsRecord};
use crate::error::{Error, Result};
use crate::membership::DomainId;

const SIDECAR_MAGIC: &[u8; 4] = b"FUDE";
const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    name: String,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    corpus: CorpusHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<DomainId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fake: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mixture: Option<BTreeMap<DomainId, f64>>,
}

/// Embedding sidecar path for a corpus file: same stem, `.fude` extension.
pub fn sidecar_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("fude")
}

/// Reads a JSON-lines corpus and, when present, its embedding sidecar.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if records.is_empty() && header.is_none() && line.trim_start().starts_with("{\"corpus\"") {
            let h: HeaderLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            header = Some(h.corpus);
            continue;
        }
        let r: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let fake = match r.fake {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(v) => return Err(parse_err(format!("fake label must be 0 or 1, got {v}"))),
        };
        if seen.insert(r.id.clone(), records.len()).is_some() {
            return Err(parse_err(format!("duplicate record id {}", r.id)));
        }
        records.push(NewsRecord {
            id: r.id,
            text: r.text,
            embeddings: None,
            domain: r.domain,
            fake,
            mixture: r.mixture,
        });
    }

    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        for (id, seq) in read_sidecar(&sidecar)? {
            let idx = *seen
                .get(&id)
                .ok_or_else(|| Error::Integrity(format!("{}: unknown record id {id}", sidecar.display())))?;
            let rec = &mut records[idx];
            if rec.embeddings.is_some() {
                return Err(Error::Integrity(format!("{}: duplicate id {id}", sidecar.display())));
            }
            rec.embeddings = Some(seq);
        }
    }

    let (name, dim, synthetic) = match header {
        Some(h) => (h.name, h.dim, h.synthetic),
        None => (
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            0,
            None,
        ),
    };
    let mut corpus = Corpus {
        name,
        dim,
        records,
        synthetic,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Writes the corpus file and, if any record carries embeddings, the sidecar.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = HeaderLine {
        corpus: CorpusHeader {
            name: corpus.name.clone(),
            dim: corpus.dim,
            synthetic: corpus.synthetic.clone(),
        },
    };
    let to_io = |e: serde_json::Error| Error::io(path, e.into());
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for r in &corpus.records {
        r.check()?;
        let line = RecordLine {
            id: r.id.clone(),
            text: r.text.clone(),
            domain: r.domain,
            fake: r.fake.map(u8::from),
            mixture: r.mixture.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(to_io)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = sidecar_path(path);
    let embedded: Vec<(&str, &EmbeddingSequence)> = corpus
        .records
        .iter()
        .filter_map(|r| r.embeddings.as_ref().map(|e| (r.id.as_str(), e)))
        .collect();
    if embedded.is_empty() {
        if sidecar.exists() {
            fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        }
        return Ok(());
    }
    write_sidecar(&sidecar, &embedded)
}

pub fn write_sidecar(path: &Path, entries: &[(&str, &EmbeddingSequence)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (id, seq) in entries {
        let id_bytes = id.as_bytes();
        let id_len = u16::try_from(id_bytes.len())
            .map_err(|_| Error::input(format!("record id longer than 65535 bytes: {id}")))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id_bytes);
        buf.extend_from_slice(&(seq.valid_len() as u32).to_le_bytes());
        buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
        for x in seq.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Little-endian reader over a byte buffer with truncation checks.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "{}: truncated at byte {}",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Integrity(format!("{}: invalid UTF-8 at byte {}", self.what, self.pos)))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Integrity("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Integrity(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn read_sidecar(path: &Path) -> Result<Vec<(String, EmbeddingSequence)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    let mut r = Reader::new(&bytes, &what);
    if r.take(4)? != SIDECAR_MAGIC {
        return Err(Error::Integrity(format!("{what}: not an embedding sidecar")));
    }
    let version = r.u32()?;
    if version != SIDECAR_VERSION {
        return Err(Error::Integrity(format!("{what}: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id = r.string(id_len)?;
        let len = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let data = r.f32s(len * dim)?;
        let seq = EmbeddingSequence::new(dim, data)
            .map_err(|e| Error::Integrity(format!("{what}: record {id}: {e}")))?;
        out.push((id, seq));
    }
    r.finish()?;
    Ok(out)
}
