//! Inverted index with BM25 scoring, top-k shortlisting, and binary
//! index persistence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{BugReport, Snapshot};
use crate::error::{Error, Result};
use crate::textproc::{strip_comments, tokenize, TokenStream};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
/// Shortlist size; also the action-space cap of the reranking MDP.
pub const DEFAULT_K: usize = 31;

const INDEX_MAGIC: &[u8; 5] = b"RLIX1";

/// Postings over comment-stripped, tokenized file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    doc_paths: Vec<String>,
    k1: f64,
    b: f64,
}

/// One shortlisted file with its retrieval score and ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntry {
    pub path: String,
    pub score: f64,
    pub relevant: bool,
}

/// The top-k BM25 shortlist for one report; the MDP's action space.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub report_id: String,
    pub entries: Vec<CandidateEntry>,
    pub k: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn any_relevant(&self) -> bool {
        self.entries.iter().any(|e| e.relevant)
    }
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_paths.len()
    }

    pub fn doc_path(&self, doc: usize) -> &str {
        &self.doc_paths[doc]
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }
}

/// Build an index over a snapshot with default BM25 parameters.
pub fn build_index(snapshot: &Snapshot) -> Result<InvertedIndex> {
    build_index_with_params(snapshot, DEFAULT_K1, DEFAULT_B)
}

pub fn build_index_with_params(snapshot: &Snapshot, k1: f64, b: f64) -> Result<InvertedIndex> {
    if snapshot.is_empty() {
        return Err(Error::EmptySnapshot);
    }
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(snapshot.len());
    let mut doc_paths = Vec::with_capacity(snapshot.len());
    for (ord, file) in snapshot.files().enumerate() {
        let tokens = tokenize(&strip_comments(&file.content));
        doc_lengths.push(tokens.len() as u32);
        doc_paths.push(file.path.clone());
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for tok in tokens.iter() {
            *tf.entry(tok.as_str()).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings
                .entry(term.to_string())
                .or_default()
                .push((ord as u32, count));
        }
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_length = total as f64 / doc_lengths.len() as f64;
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_paths,
        k1,
        b,
    })
}

fn idf(n_docs: usize, df: usize) -> f64 {
    (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

fn tf_norm(tf: f64, k1: f64, b: f64, len: f64, avg_len: f64) -> f64 {
    tf / (tf + k1 * (1.0 - b + b * len / avg_len))
}

/// BM25 score of one document for a query.
pub fn bm25_score(index: &InvertedIndex, query: &TokenStream, doc: usize) -> f64 {
    let terms: BTreeSet<&str> = query.unique();
    let n = index.doc_count();
    let len = index.doc_lengths[doc] as f64;
    let mut score = 0.0;
    for term in terms {
        if let Some(list) = index.postings.get(term) {
            if let Ok(pos) = list.binary_search_by_key(&(doc as u32), |&(d, _)| d) {
                let tf = list[pos].1 as f64;
                score += idf(n, list.len())
                    * tf_norm(tf, index.k1, index.b, len, index.avg_doc_length);
            }
        }
    }
    score
}

/// Score every document for a query in one postings sweep. Terms are
/// visited in sorted order so per-document sums accumulate exactly as in
/// `bm25_score`.
pub fn score_all(index: &InvertedIndex, query: &TokenStream) -> Vec<f64> {
    let mut scores = vec![0.0; index.doc_count()];
    let n = index.doc_count();
    for term in query.unique() {
        if let Some(list) = index.postings.get(term) {
            let idf = idf(n, list.len());
            for &(doc, tf) in list {
                let len = index.doc_lengths[doc as usize] as f64;
                scores[doc as usize] +=
                    idf * tf_norm(tf as f64, index.k1, index.b, len, index.avg_doc_length);
            }
        }
    }
    scores
}

/// Top-k documents for a report's full text, with ground-truth relevance
/// labels. Only documents matching at least one query term (score > 0)
/// are returned, so the set can be shorter than `k`.
pub fn shortlist(index: &InvertedIndex, report: &BugReport, k: usize) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::Config("shortlist k must be at least 1".into()));
    }
    let query = tokenize(&report.full_text());
    let scores = score_all(index, &query);
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > 0.0)
        .map(|(d, &s)| (d, s))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.doc_paths[a.0].cmp(&index.doc_paths[b.0]))
    });
    ranked.truncate(k);
    let fixed: HashSet<&str> = report.fixed_files.iter().map(String::as_str).collect();
    let entries = ranked
        .into_iter()
        .map(|(doc, score)| CandidateEntry {
            path: index.doc_paths[doc].clone(),
            score,
            relevant: fixed.contains(index.doc_paths[doc].as_str()),
        })
        .collect();
    Ok(CandidateSet {
        report_id: report.id.clone(),
        entries,
        k,
    })
}

/// Persist the index: `RLIX1` magic, then length-prefixed fields,
/// little-endian.
pub fn save_index(index: &InvertedIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&index.k1.to_le_bytes())?;
    w.write_all(&index.b.to_le_bytes())?;
    w.write_all(&(index.doc_paths.len() as u64).to_le_bytes())?;
    for (path, len) in index.doc_paths.iter().zip(&index.doc_lengths) {
        write_str(&mut w, path)?;
        w.write_all(&(*len as u64).to_le_bytes())?;
    }
    w.write_all(&index.avg_doc_length.to_le_bytes())?;
    w.write_all(&(index.postings.len() as u64).to_le_bytes())?;
    for (term, list) in &index.postings {
        write_str(&mut w, term)?;
        w.write_all(&(list.len() as u64).to_le_bytes())?;
        for &(doc, tf) in list {
            w.write_all(&(doc as u64).to_le_bytes())?;
            w.write_all(&(tf as u64).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Format(format!(
            "unknown index magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let k1 = read_f64(&mut r)?;
    let b = read_f64(&mut r)?;
    let n_docs = read_u64(&mut r)? as usize;
    let mut doc_paths = Vec::with_capacity(n_docs);
    let mut doc_lengths = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        doc_paths.push(read_str(&mut r)?);
        doc_lengths.push(read_u64(&mut r)? as u32);
    }
    let avg_doc_length = read_f64(&mut r)?;
    let n_terms = read_u64(&mut r)? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = read_str(&mut r)?;
        let n_post = read_u64(&mut r)? as usize;
        let mut list = Vec::with_capacity(n_post);
        for _ in 0..n_post {
            let doc = read_u64(&mut r)?;
            let tf = read_u64(&mut r)?;
            if doc >= n_docs as u64 {
                return Err(Error::Format(format!(
                    "posting references document {doc} beyond count {n_docs}"
                )));
            }
            list.push((doc as u32, tf as u32));
        }
        postings.insert(term, list);
    }
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_paths,
        k1,
        b,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("non-UTF8 string in index: {e}")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceFile;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn snapshot(files: &[(&str, &str)]) -> Snapshot {
        let mut s = Snapshot::new("v1");
        for (path, content) in files {
            s.insert(SourceFile {
                path: (*path).into(),
                content: (*content).into(),
            });
        }
        s
    }

    fn report(id: &str, text: &str, fixed: &[&str]) -> BugReport {
        BugReport {
            id: id.into(),
            summary: text.into(),
            description: String::new(),
            report_time: 1,
            version_id: "v1".into(),
            fixed_files: fixed.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Naive scorer: recomputes tf and df by scanning token lists.
    /// Independent of the index structure.
    fn brute_scores(docs: &[(String, Vec<String>)], query: &TokenStream, k1: f64, b: f64) -> Vec<f64> {
        let n = docs.len();
        let avg: f64 = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n as f64;
        let terms = query.unique();
        docs.iter()
            .map(|(_, tokens)| {
                let mut score = 0.0;
                for term in &terms {
                    let tf = tokens.iter().filter(|t| t.as_str() == *term).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let df = docs
                        .iter()
                        .filter(|(_, ts)| ts.iter().any(|t| t.as_str() == *term))
                        .count() as f64;
                    let idf = (1.0 + (n as f64 - df + 0.5) / (df + 0.5)).ln();
                    score += idf * tf / (tf + k1 * (1.0 - b + b * tokens.len() as f64 / avg));
                }
                score
            })
            .collect()
    }

    #[test]
    fn build_counts_terms_and_docs() {
        let snap = snapshot(&[
            ("a", "alpha beta gamma"),
            ("b", "delta epsilon zeta"),
            ("c", "eta theta iota kappa"),
        ]);
        let index = build_index(&snap).unwrap();
        assert_eq!(index.doc_count(), 3);
        assert_eq!(index.term_count(), 10);
    }

    #[test]
    fn empty_snapshot_rejected() {
        assert!(matches!(
            build_index(&Snapshot::new("v1")),
            Err(Error::EmptySnapshot)
        ));
    }

    #[test]
    fn empty_file_never_retrieved() {
        let snap = snapshot(&[("a", "alpha beta"), ("empty", "")]);
        let index = build_index(&snap).unwrap();
        assert_eq!(index.doc_length(0), 2);
        assert_eq!(index.doc_length(1), 0);
        let r = report("r", "alpha beta", &["a"]);
        let cs = shortlist(&index, &r, 31).unwrap();
        assert_eq!(cs.entries.len(), 1);
        assert_eq!(cs.entries[0].path, "a");
    }

    #[test]
    fn single_doc_single_term_golden() {
        // One doc, one term, tf=1, len=avglen:
        // idf = ln(1 + 0.5/1.5), norm = 1/(1 + k1)
        let snap = snapshot(&[("a", "alpha")]);
        let index = build_index(&snap).unwrap();
        let score = bm25_score(&index, &tokenize("alpha"), 0);
        let expected = (4.0f64 / 3.0).ln() / 2.2;
        assert!((score - expected).abs() < 1e-6, "score {score} vs {expected}");
        assert!((score - 0.130_764_578).abs() < 1e-6);
    }

    #[test]
    fn absent_terms_contribute_zero() {
        let snap = snapshot(&[("a", "alpha beta"), ("b", "gamma")]);
        let index = build_index(&snap).unwrap();
        for doc in 0..2 {
            assert_eq!(bm25_score(&index, &tokenize("missing words"), doc), 0.0);
        }
    }

    #[test]
    fn shortlist_single_matching_file_ranks_first() {
        let snap = snapshot(&[("a", "alpha beta"), ("b", "gamma delta"), ("c", "epsilon")]);
        let index = build_index(&snap).unwrap();
        let cs = shortlist(&index, &report("r", "gamma", &["b"]), 31).unwrap();
        assert_eq!(cs.entries[0].path, "b");
        assert!(cs.entries[0].relevant);
    }

    #[test]
    fn shortlist_truncates_to_snapshot_size() {
        let files: Vec<(String, String)> = (0..20)
            .map(|i| (format!("f{i:02}"), format!("shared tok{i}")))
            .collect();
        let refs: Vec<(&str, &str)> = files
            .iter()
            .map(|(p, c)| (p.as_str(), c.as_str()))
            .collect();
        let index = build_index(&snapshot(&refs)).unwrap();
        let cs = shortlist(&index, &report("r", "shared", &["f00"]), 31).unwrap();
        assert_eq!(cs.entries.len(), 20);
    }

    #[test]
    fn rebuild_identical_serialization() {
        let snap = snapshot(&[("a", "alpha beta"), ("b", "beta gamma")]);
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("one.rlix");
        let p2 = dir.path().join("two.rlix");
        save_index(&build_index(&snap).unwrap(), &p1).unwrap();
        save_index(&build_index(&snap).unwrap(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let snap = snapshot(&[("a", "alpha beta gamma"), ("b", "beta")]);
        let index = build_index(&snap).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("index.rlix");
        save_index(&index, &path).unwrap();
        assert_eq!(load_index(&path).unwrap(), index);
    }

    #[test]
    fn load_rejects_unknown_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.rlix");
        fs::write(&path, b"NOPE!rest").unwrap();
        assert!(matches!(load_index(&path), Err(Error::Format(_))));
    }

    fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize) -> Vec<(String, Vec<String>)> {
        let vocab: Vec<String> = (0..60).map(|i| format!("tok{i:02}")).collect();
        (0..n_docs)
            .map(|i| {
                let len = rng.random_range(0..30);
                let tokens: Vec<String> = (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                    .collect();
                (format!("doc{i:03}"), tokens)
            })
            .collect()
    }

    #[test]
    fn brute_force_scorer_matches_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let docs = random_corpus(&mut rng, 5);
        let refs: Vec<(String, String)> = docs
            .iter()
            .map(|(p, t)| (p.clone(), t.join(" ")))
            .collect();
        let pairs: Vec<(&str, &str)> = refs.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
        let index = build_index(&snapshot(&pairs)).unwrap();
        for _ in 0..100 {
            let q_len = rng.random_range(1..6);
            let query_text: Vec<String> = (0..q_len)
                .map(|_| format!("tok{:02}", rng.random_range(0..60)))
                .collect();
            let query = tokenize(&query_text.join(" "));
            let brute = brute_scores(&docs, &query, DEFAULT_K1, DEFAULT_B);
            for doc in 0..docs.len() {
                let s = bm25_score(&index, &query, doc);
                assert!((s - brute[doc]).abs() < 1e-9, "doc {doc}: {s} vs {}", brute[doc]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scores_non_negative(seed in 0u64..1000, q in "[a-z]{2,12}( [a-z]{2,12}){0,4}") {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let docs = random_corpus(&mut rng, 8);
            let refs: Vec<(String, String)> = docs.iter().map(|(p, t)| (p.clone(), t.join(" "))).collect();
            let pairs: Vec<(&str, &str)> = refs.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
            let index = build_index(&snapshot(&pairs)).unwrap();
            let query = tokenize(&q);
            for doc in 0..docs.len() {
                prop_assert!(bm25_score(&index, &query, doc) >= 0.0);
            }
        }

        #[test]
        fn candidate_ordering_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let docs = random_corpus(&mut rng, 30);
            let refs: Vec<(String, String)> = docs.iter().map(|(p, t)| (p.clone(), t.join(" "))).collect();
            let pairs: Vec<(&str, &str)> = refs.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
            let index = build_index(&snapshot(&pairs)).unwrap();
            let r = report("r", "tok00 tok01 tok02 tok03", &["doc000"]);
            let cs = shortlist(&index, &r, 10).unwrap();
            prop_assert!(cs.entries.len() <= 10);
            for pair in cs.entries.windows(2) {
                prop_assert!(
                    pair[0].score > pair[1].score
                        || (pair[0].score == pair[1].score && pair[0].path < pair[1].path)
                );
            }
        }
    }

    #[test]
    fn tf_monotonicity() {
        // Higher tf for the query term, other factors equal, scores higher.
        let snap = snapshot(&[
            ("a", "alpha beta gamma delta"),
            ("b", "alpha alpha beta gamma"),
        ]);
        let index = build_index(&snap).unwrap();
        let q = tokenize("alpha");
        assert!(bm25_score(&index, &q, 1) > bm25_score(&index, &q, 0));
    }
}
