//! Fixed-dimension embeddings for reports and files, and the concatenated
//! per-candidate rows that form the reranker's state.
//!
//! The native encoder is signed feature hashing over tf-idf weights.
//! Externally computed embeddings can be imported from a `RLEMB1` file
//! instead.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{BugReport, Snapshot};
use crate::error::{Error, Result};
use crate::retrieval::CandidateSet;
use crate::textproc::{strip_comments, tokenize};

/// Dense real vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let denom = self.l2_norm() * other.l2_norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Report embedding concatenated with one candidate file embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatRow {
    pub values: Vec<f64>,
    pub relevant: bool,
    pub path: String,
}

/// Per-term document frequencies over a snapshot.
#[derive(Debug, Clone, Default)]
pub struct DocFrequencies {
    pub n_docs: usize,
    df: HashMap<String, u32>,
}

impl DocFrequencies {
    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        let mut df: HashMap<String, u32> = HashMap::new();
        for file in snapshot.files() {
            let tokens = tokenize(&strip_comments(&file.content));
            for term in tokens.unique() {
                *df.entry(term.to_string()).or_insert(0) += 1;
            }
        }
        DocFrequencies {
            n_docs: snapshot.len(),
            df,
        }
    }

    pub fn df(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Smoothed inverse document frequency; defined for unseen terms.
    pub fn idf(&self, term: &str) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df(term) as f64)).ln() + 1.0
    }
}

fn fnv1a(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x0100_0000_01b3);
    for &b in token.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of tf-idf weights into `d` buckets, then
/// L2-normalized. The zero vector stays zero. `d` must be a power of two
/// of at least 8.
pub fn encode_hashed_tfidf(
    text: &str,
    d: usize,
    stats: &DocFrequencies,
    seed: u64,
) -> Result<Embedding> {
    if d < 8 || !d.is_power_of_two() {
        return Err(Error::Config(format!(
            "embedding dimension {d} must be a power of two >= 8"
        )));
    }
    let tokens = tokenize(text);
    let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
    for tok in tokens.iter() {
        *tf.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut values = vec![0.0; d];
    for (term, count) in tf {
        let h = fnv1a(term, seed);
        let bucket = (h as usize) & (d - 1);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign * count as f64 * stats.idf(term);
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Ok(Embedding { values })
}

const EMB_MAGIC: &str = "RLEMB1";

/// Load externally computed embeddings: header `RLEMB1 <d>`, then
/// `<id>\t<v1> <v2> ...` lines.
pub fn load_external_embeddings(path: &Path) -> Result<BTreeMap<String, Embedding>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty embedding file".into()))??;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(EMB_MAGIC) {
        return Err(Error::Format(format!(
            "bad embedding header in {}",
            path.display()
        )));
    }
    let d: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("embedding header missing dimension".into()))?;
    let mut table = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 2,
            message: "expected <id>\\t<values>".into(),
        })?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 2,
                    message: format!("bad float '{v}': {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                id: id.to_string(),
                expected: d,
                found: values.len(),
            });
        }
        if table
            .insert(id.to_string(), Embedding { values })
            .is_some()
        {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(table)
}

pub fn write_external_embeddings(
    table: &BTreeMap<String, Embedding>,
    d: usize,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{EMB_MAGIC} {d}")?;
    for (id, emb) in table {
        if emb.dim() != d {
            return Err(Error::DimensionMismatch {
                id: id.clone(),
                expected: d,
                found: emb.dim(),
            });
        }
        let values: Vec<String> = emb.values.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{id}\t{}", values.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Embedding source for one snapshot: either the native hashed tf-idf
/// encoder or an imported table keyed by report id / file path.
pub enum Encoder {
    Hashed {
        d: usize,
        seed: u64,
        stats: DocFrequencies,
        files: BTreeMap<String, Embedding>,
    },
    External {
        d: usize,
        table: BTreeMap<String, Embedding>,
    },
}

impl Encoder {
    /// Build the native encoder for a snapshot, pre-embedding every file.
    pub fn hashed(snapshot: &Snapshot, d: usize, seed: u64) -> Result<Encoder> {
        let stats = DocFrequencies::from_snapshot(snapshot);
        let mut files = BTreeMap::new();
        for file in snapshot.files() {
            let emb = encode_hashed_tfidf(&strip_comments(&file.content), d, &stats, seed)?;
            files.insert(file.path.clone(), emb);
        }
        Ok(Encoder::Hashed {
            d,
            seed,
            stats,
            files,
        })
    }

    pub fn external(table: BTreeMap<String, Embedding>) -> Result<Encoder> {
        let d = table
            .values()
            .next()
            .map(Embedding::dim)
            .ok_or_else(|| Error::Format("external embedding table is empty".into()))?;
        for (id, emb) in &table {
            if emb.dim() != d {
                return Err(Error::DimensionMismatch {
                    id: id.clone(),
                    expected: d,
                    found: emb.dim(),
                });
            }
        }
        Ok(Encoder::External { d, table })
    }

    pub fn dim(&self) -> usize {
        match self {
            Encoder::Hashed { d, .. } | Encoder::External { d, .. } => *d,
        }
    }

    pub fn embed_report(&self, report: &BugReport) -> Result<Embedding> {
        match self {
            Encoder::Hashed { d, seed, stats, .. } => {
                encode_hashed_tfidf(&report.full_text(), *d, stats, *seed)
            }
            Encoder::External { table, .. } => table
                .get(&report.id)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(report.id.clone())),
        }
    }

    pub fn embed_path(&self, path: &str) -> Result<Embedding> {
        match self {
            Encoder::Hashed { files, .. } => files
                .get(path)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(path.to_string())),
            Encoder::External { table, .. } => table
                .get(path)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(path.to_string())),
        }
    }
}

/// One `ConcatRow` per candidate, in candidate order, with relevance
/// labels copied through.
pub fn build_rows(
    report: &BugReport,
    candidates: &CandidateSet,
    encoder: &Encoder,
) -> Result<Vec<ConcatRow>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let report_emb = encoder.embed_report(report)?;
    let mut rows = Vec::with_capacity(candidates.len());
    for entry in &candidates.entries {
        let file_emb = encoder.embed_path(&entry.path)?;
        let mut values = Vec::with_capacity(report_emb.dim() + file_emb.dim());
        values.extend_from_slice(&report_emb.values);
        values.extend_from_slice(&file_emb.values);
        rows.push(ConcatRow {
            values,
            relevant: entry.relevant,
            path: entry.path.clone(),
        });
    }
    Ok(rows)
}
