//! Corpus representation, JSONL I/O and the pairwise entity feature store.
//!
//! Corpus file: line 1 is a header `{"format_version":1,"d_local":..,"d_pair":..}`,
//! every further non-blank line is one document. Pairwise file: one
//! `{"a":..,"b":..,"f":[..]}` record per line, keyed by the unordered pair.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    #[serde(rename = "entity")]
    pub entity_id: String,
    #[serde(rename = "f")]
    pub local_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mention {
    pub mention_id: String,
    #[serde(rename = "gold")]
    pub gold_index: usize,
    pub candidates: Vec<Candidate>,
}

impl Mention {
    pub fn gold(&self) -> &Candidate {
        &self.candidates[self.gold_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn entity(&self, position: usize, candidate: usize) -> &str {
        &self.mentions[position].candidates[candidate].entity_id
    }

    pub fn gold_assignment(&self) -> Vec<usize> {
        self.mentions.iter().map(|m| m.gold_index).collect()
    }

    /// Number of full assignments, saturating at `u128::MAX`.
    pub fn sequence_count(&self) -> u128 {
        self.mentions
            .iter()
            .fold(1u128, |acc, m| acc.saturating_mul(m.candidates.len() as u128))
    }

    /// Checks every type invariant against the corpus dimensions.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        let fail = |msg: String| Err(Error::Invalid(format!("doc {}: {}", self.doc_id, msg)));
        if self.mentions.is_empty() {
            return fail("empty document".into());
        }
        let mut mention_ids = HashSet::new();
        for mention in &self.mentions {
            let mid = &mention.mention_id;
            if !mention_ids.insert(mid.as_str()) {
                return fail(format!("duplicate mention_id {mid}"));
            }
            if mention.candidates.is_empty() {
                return fail(format!("mention {mid}: no candidates"));
            }
            if mention.gold_index >= mention.candidates.len() {
                return fail(format!(
                    "mention {mid}: gold index out of range ({} >= {})",
                    mention.gold_index,
                    mention.candidates.len()
                ));
            }
            let mut entities = HashSet::new();
            for cand in &mention.candidates {
                if !entities.insert(cand.entity_id.as_str()) {
                    return fail(format!("mention {mid}: duplicate candidate {}", cand.entity_id));
                }
                if cand.local_features.len() != dims.local {
                    return fail(format!(
                        "mention {mid}: local feature dimension mismatch for {} ({} != {})",
                        cand.entity_id,
                        cand.local_features.len(),
                        dims.local
                    ));
                }
                if cand.local_features.iter().any(|v| !v.is_finite()) {
                    return fail(format!("mention {mid}: non-finite feature for {}", cand.entity_id));
                }
            }
        }
        Ok(())
    }
}

/// Corpus-level feature dimensions: local block `D_L` and pairwise block `D_E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub local: usize,
    pub pair: usize,
}

impl Dims {
    pub fn new(local: usize, pair: usize) -> Result<Self> {
        if local == 0 || pair == 0 {
            return Err(Error::Invalid(format!(
                "dimensions must be positive (d_local={local}, d_pair={pair})"
            )));
        }
        Ok(Dims { local, pair })
    }

    /// Length of a joint feature vector: `D_L + 2·D_E`.
    pub fn joint(&self) -> usize {
        self.local + 2 * self.pair
    }
}

/// Records which generator produced a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prng: String,
    pub seed: u64,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    d_local: usize,
    d_pair: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    a: String,
    b: String,
    f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct PairEntry {
    a: String,
    b: String,
    values: Vec<f64>,
}

/// Symmetric map from unordered entity pairs to `D_E`-length vectors.
/// Absent pairs read as the zero vector.
#[derive(Debug, Clone)]
pub struct PairwiseFeatureStore {
    dim: usize,
    ids: HashMap<String, u32>,
    index: HashMap<(u32, u32), usize>,
    entries: Vec<PairEntry>,
    zero: Vec<f64>,
}

impl PartialEq for PairwiseFeatureStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.entries == other.entries
    }
}

impl PairwiseFeatureStore {
    pub fn new(dim: usize) -> Self {
        PairwiseFeatureStore {
            dim,
            ids: HashMap::new(),
            index: HashMap::new(),
            entries: Vec::new(),
            zero: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn intern(&mut self, entity: &str) -> u32 {
        if let Some(&id) = self.ids.get(entity) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(entity.to_owned(), id);
        id
    }

    fn key(x: u32, y: u32) -> (u32, u32) {
        if x <= y {
            (x, y)
        } else {
            (y, x)
        }
    }

    pub fn insert(&mut self, a: &str, b: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Invalid(format!(
                "pairwise dimension mismatch for {{{a}, {b}}}: {} != {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite pairwise feature for {{{a}, {b}}}")));
        }
        let key = Self::key(self.intern(a), self.intern(b));
        if self.index.contains_key(&key) {
            return Err(Error::Invalid(format!("duplicate pairwise key {{{a}, {b}}}")));
        }
        self.index.insert(key, self.entries.len());
        self.entries.push(PairEntry {
            a: a.to_owned(),
            b: b.to_owned(),
            values,
        });
        Ok(())
    }

    /// The stored vector for `{a, b}` in either order, or zeros.
    pub fn lookup(&self, a: &str, b: &str) -> &[f64] {
        let (Some(&x), Some(&y)) = (self.ids.get(a), self.ids.get(b)) else {
            return &self.zero;
        };
        match self.index.get(&Self::key(x, y)) {
            Some(&i) => &self.entries[i].values,
            None => &self.zero,
        }
    }

    /// Entries in insertion order as `(a, b, values)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[f64])> {
        self.entries
            .iter()
            .map(|e| (e.a.as_str(), e.b.as_str(), e.values.as_slice()))
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), path, dim)
    }

    pub fn from_reader(reader: impl BufRead, path: &Path, dim: usize) -> Result<Self> {
        let mut store = PairwiseFeatureStore::new(dim);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: line_no,
                message,
            };
            let rec: PairRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if rec.f.len() != dim {
                return Err(parse_err(format!(
                    "pairwise dimension mismatch: expected {dim}, found {}",
                    rec.f.len()
                )));
            }
            store
                .insert(&rec.a, &rec.b, rec.f)
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            let rec = PairRecord {
                a: e.a.clone(),
                b: e.b.clone(),
                f: e.values.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_to(w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub pairwise: Arc<PairwiseFeatureStore>,
    pub dims: Dims,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(documents: Vec<Document>, pairwise: Arc<PairwiseFeatureStore>, dims: Dims) -> Result<Self> {
        let ds = Dataset {
            documents,
            pairwise,
            dims,
            provenance: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        Dims::new(self.dims.local, self.dims.pair)?;
        if self.pairwise.dim() != self.dims.pair {
            return Err(Error::Invalid(format!(
                "pairwise dimension mismatch: store has {}, corpus declares {}",
                self.pairwise.dim(),
                self.dims.pair
            )));
        }
        self.documents.iter().try_for_each(|d| d.validate(self.dims))
    }

    pub fn n_mentions(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Writes the corpus JSONL (header plus one line per document).
    pub fn write_corpus_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            d_local: self.dims.local,
            d_pair: self.dims.pair,
            generator: self.provenance.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_corpus(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_corpus_to(w))
    }
}

pub(crate) fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Parses a corpus without a pairwise file; the store is empty with the
/// declared `D_E`.
pub fn load_corpus(path: &Path) -> Result<Dataset> {
    load_corpus_with(path, None)
}

/// Loads a corpus and (optionally) its pairwise feature file.
pub fn load_dataset(corpus_path: &Path, pairwise_path: Option<&Path>) -> Result<Dataset> {
    let header = read_header(corpus_path)?;
    let store = match pairwise_path {
        Some(p) => PairwiseFeatureStore::load(p, header.d_pair)?,
        None => PairwiseFeatureStore::new(header.d_pair),
    };
    load_corpus_with(corpus_path, Some(Arc::new(store)))
}

/// Loads a corpus sharing an already-loaded pairwise store.
pub fn load_corpus_with(path: &Path, store: Option<Arc<PairwiseFeatureStore>>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path, store)
}

fn read_header(path: &Path) -> Result<Header> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    parse_header(&first, path)
}

fn parse_header(line: &str, path: &Path) -> Result<Header> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_owned(),
        line: 1,
        message,
    };
    let header: Header = serde_json::from_str(line).map_err(|e| parse_err(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(parse_err(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    Dims::new(header.d_local, header.d_pair).map_err(|e| parse_err(e.to_string()))?;
    Ok(header)
}

pub fn parse_corpus(reader: impl BufRead, path: &Path, store: Option<Arc<PairwiseFeatureStore>>) -> Result<Dataset> {
    let path: PathBuf = path.to_owned();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => parse_header(&line.map_err(|e| Error::io(&path, e))?, &path)?,
        None => {
            return Err(Error::Parse {
                path,
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let dims = Dims {
        local: header.d_local,
        pair: header.d_pair,
    };
    let store = store.unwrap_or_else(|| Arc::new(PairwiseFeatureStore::new(dims.pair)));
    if store.dim() != dims.pair {
        return Err(Error::Invalid(format!(
            "pairwise dimension mismatch: store has {}, corpus declares {}",
            store.dim(),
            dims.pair
        )));
    }

    let mut documents = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        doc.validate(dims).map_err(|e| Error::Parse {
            path: path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        documents.push(doc);
    }

    Ok(Dataset {
        documents,
        pairwise: store,
        dims,
        provenance: header.generator,
    })
}
