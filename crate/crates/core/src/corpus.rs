//! Corpus ingestion, chronological splitting, and synthetic corpus
//! generation with known ground truth.
//!
//! On disk a corpus is a `bugs.jsonl` manifest (one JSON object per line)
//! next to `snapshots/<version_id>/...` file trees mirroring repository
//! paths.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bug report with ground-truth fix locations.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BugReport {
    pub id: String,
    pub summary: String,
    pub description: String,
    /// UTC seconds since epoch; strictly positive.
    pub report_time: u64,
    /// Key of the snapshot this report was filed against.
    pub version_id: String,
    /// Repository-relative paths of the files changed by the fix.
    pub fixed_files: Vec<String>,
}

impl BugReport {
    /// Summary and description joined; the query text used everywhere.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.summary, self.description)
    }
}

/// A single file within a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
}

/// All source files at one repository version.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub version_id: String,
    files: BTreeMap<String, SourceFile>,
}

impl Snapshot {
    pub fn new(version_id: impl Into<String>) -> Self {
        Snapshot {
            version_id: version_id.into(),
            files: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, file: SourceFile) {
        self.files.insert(file.path.clone(), file);
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.get(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    /// Files in path order.
    pub fn files(&self) -> impl Iterator<Item = &SourceFile> {
        self.files.values()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// Validated set of bug reports plus the snapshots they reference.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub reports: Vec<BugReport>,
    pub snapshots: BTreeMap<String, Snapshot>,
}

impl Corpus {
    pub fn report(&self, id: &str) -> Option<&BugReport> {
        self.reports.iter().find(|r| r.id == id)
    }

    pub fn snapshot(&self, version_id: &str) -> Option<&Snapshot> {
        self.snapshots.get(version_id)
    }

    pub fn snapshot_for(&self, report: &BugReport) -> Option<&Snapshot> {
        self.snapshots.get(&report.version_id)
    }

    /// Check every invariant: unique report ids, resolvable version ids,
    /// non-empty fixed_files that exist in their snapshot, positive times.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut dangling: Vec<String> = Vec::new();
        let mut details: Vec<String> = Vec::new();
        for report in &self.reports {
            if !seen.insert(report.id.as_str()) {
                return Err(Error::DuplicateId(report.id.clone()));
            }
            if report.report_time == 0 {
                return Err(Error::Validation(format!(
                    "report '{}' has non-positive report_time",
                    report.id
                )));
            }
            if report.fixed_files.is_empty() {
                return Err(Error::Validation(format!(
                    "report '{}' has no fixed_files",
                    report.id
                )));
            }
            match self.snapshots.get(&report.version_id) {
                None => {
                    dangling.push(report.id.clone());
                    details.push(format!(
                        "report '{}': unknown snapshot '{}'",
                        report.id, report.version_id
                    ));
                }
                Some(snapshot) => {
                    for path in &report.fixed_files {
                        if !snapshot.contains(path) {
                            dangling.push(report.id.clone());
                            details.push(format!(
                                "report '{}': fixed file '{}' missing from snapshot '{}'",
                                report.id, path, report.version_id
                            ));
                        }
                    }
                }
            }
        }
        if !dangling.is_empty() {
            dangling.dedup();
            return Err(Error::DanglingReference {
                report_ids: dangling,
                details: details.join("; "),
            });
        }
        Ok(())
    }
}

/// Chronological train/test partition of report ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub ratio: f64,
}

/// Load and validate a corpus from `root/bugs.jsonl` and
/// `root/snapshots/<version_id>/` trees.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let manifest = root.join("bugs.jsonl");
    if !manifest.is_file() {
        return Err(Error::MissingManifest(manifest));
    }
    let reader = BufReader::new(fs::File::open(&manifest)?);
    let mut reports = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: BugReport = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: manifest.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        reports.push(report);
    }

    let mut snapshots = BTreeMap::new();
    let snap_root = root.join("snapshots");
    if snap_root.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&snap_root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let version_id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Validation(format!("bad snapshot dir {}", dir.display())))?
                .to_string();
            let mut snapshot = Snapshot::new(version_id.clone());
            read_tree(&dir, &dir, &mut snapshot)?;
            snapshots.insert(version_id, snapshot);
        }
    }

    let corpus = Corpus { reports, snapshots };
    corpus.validate()?;
    Ok(corpus)
}

fn read_tree(root: &Path, dir: &Path, snapshot: &mut Snapshot) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            read_tree(root, &entry, snapshot)?;
        } else {
            let rel = entry
                .strip_prefix(root)
                .expect("entry under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let bytes = fs::read(&entry)?;
            snapshot.insert(SourceFile {
                path: rel,
                content: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
    }
    Ok(())
}

/// Write a corpus in the on-disk layout `load_corpus` reads.
pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut manifest = fs::File::create(root.join("bugs.jsonl"))?;
    for report in &corpus.reports {
        let line = serde_json::to_string(report)
            .map_err(|e| Error::Format(format!("serializing report: {e}")))?;
        manifest.write_all(line.as_bytes())?;
        manifest.write_all(b"\n")?;
    }
    for snapshot in corpus.snapshots.values() {
        let snap_dir = root.join("snapshots").join(&snapshot.version_id);
        for file in snapshot.files() {
            let path = snap_dir.join(&file.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, file.content.as_bytes())?;
        }
    }
    Ok(())
}

/// Sort reports by `(report_time, id)` and put the first
/// `ceil(ratio * n)` into the train side.
pub fn chronological_split(corpus: &Corpus, ratio: f64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0,1)")));
    }
    let n = corpus.reports.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 reports to split, have {n}"
        )));
    }
    let mut order: Vec<&BugReport> = corpus.reports.iter().collect();
    order.sort_by(|a, b| {
        a.report_time
            .cmp(&b.report_time)
            .then_with(|| a.id.cmp(&b.id))
    });
    // Small guard so an exact integer product never rounds up.
    let n_train = ((ratio * n as f64) - 1e-9).ceil() as usize;
    let (train, test) = order.split_at(n_train.min(n));
    Ok(Split {
        train: train.iter().map(|r| r.id.clone()).collect(),
        test: test.iter().map(|r| r.id.clone()).collect(),
        ratio,
    })
}

/// Parameters for the synthetic corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_files: usize,
    pub n_bugs: usize,
    pub relevant_per_bug: usize,
    pub vocab_size: usize,
    /// Fraction of report tokens drawn from its relevant files.
    pub overlap: f64,
    /// Fraction of report tokens drawn from the global vocabulary.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_files: 100,
            n_bugs: 60,
            relevant_per_bug: 2,
            vocab_size: 500,
            overlap: 0.85,
            noise: 0.05,
            seed: 7,
        }
    }
}

const FILE_CORE_WORDS: usize = 24;
const FILE_TOKENS: usize = 96;
const REPORT_TOKENS: usize = 32;
const SUMMARY_TOKENS: usize = 8;
const DECOY_DISTINCT: usize = 14;
const DECOY_REPEATS: usize = 2;
const MARKER_WORDS: usize = 12;
const MARKERS_PER_DECOY: usize = 6;
/// Markers repeat more than bait so they carry comparable tf-idf mass
/// despite their lower rarity.
const MARKER_REPEATS: usize = 3;
const FILLER_WORDS: usize = 200;

/// Generate a deterministic corpus with known ground truth.
///
/// Reports draw `overlap` of their tokens from their designated relevant
/// files and `noise` from the global vocabulary; the remainder comes from
/// a filler pool disjoint from the code vocabulary.
///
/// Part of the file population is short "decoy" files that lexically
/// shadow one bug each: they match more distinct report tokens than any
/// single relevant file, so a plain lexical ranking puts them on top,
/// but they are never fix sites. Decoys share a small marker vocabulary
/// (think generated code or changelog boilerplate) that never occurs in
/// report text, which gives a learnable file-side signal for demoting
/// them.
pub fn generate_synthetic(params: &SynthParams) -> Result<Corpus> {
    validate_params(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let vocab = gen_words(&mut rng, params.vocab_size, &HashSet::new());
    let vocab_set: HashSet<String> = vocab.iter().cloned().collect();
    let filler = gen_words(&mut rng, FILLER_WORDS, &vocab_set);
    let mut avoid: HashSet<String> = vocab_set.clone();
    avoid.extend(filler.iter().cloned());
    let markers = gen_words(&mut rng, MARKER_WORDS, &avoid);

    let n_decoys = params.n_bugs.min(params.n_files / 2);
    let n_base = params.n_files - n_decoys;
    if n_base < params.relevant_per_bug {
        return Err(Error::Config(format!(
            "n_files: {} leaves too few non-decoy files for relevant_per_bug {}",
            params.n_files, params.relevant_per_bug
        )));
    }

    // Base files: token soup over a per-file core drawn from the vocabulary.
    let mut snapshot = Snapshot::new("v1");
    let mut base_contents: Vec<Vec<String>> = Vec::with_capacity(n_base);
    for i in 0..n_base {
        let core: Vec<&String> = (0..FILE_CORE_WORDS)
            .map(|_| &vocab[rng.random_range(0..vocab.len())])
            .collect();
        let tokens: Vec<String> = (0..FILE_TOKENS)
            .map(|_| core[rng.random_range(0..core.len())].clone())
            .collect();
        snapshot.insert(SourceFile {
            path: file_path(i),
            content: layout_tokens(&tokens),
        });
        base_contents.push(tokens);
    }

    // Reports plus one decoy file per early bug.
    let mut reports = Vec::with_capacity(params.n_bugs);
    for j in 0..params.n_bugs {
        let mut relevant: Vec<usize> = Vec::new();
        while relevant.len() < params.relevant_per_bug {
            let f = rng.random_range(0..n_base);
            if !relevant.contains(&f) {
                relevant.push(f);
            }
        }
        relevant.sort_unstable();

        let pool: Vec<&String> = relevant
            .iter()
            .flat_map(|&f| base_contents[f].iter())
            .collect();
        let n_overlap = (params.overlap * REPORT_TOKENS as f64).floor() as usize;
        let n_noise =
            ((params.noise * REPORT_TOKENS as f64).floor() as usize).min(REPORT_TOKENS - n_overlap);
        let n_filler = REPORT_TOKENS - n_overlap - n_noise;

        let mut tokens: Vec<String> = Vec::with_capacity(REPORT_TOKENS);
        for _ in 0..n_overlap {
            tokens.push(pool[rng.random_range(0..pool.len())].clone());
        }
        for _ in 0..n_noise {
            tokens.push(vocab[rng.random_range(0..vocab.len())].clone());
        }
        for _ in 0..n_filler {
            tokens.push(filler[rng.random_range(0..filler.len())].clone());
        }
        tokens.shuffle(&mut rng);

        if j < n_decoys {
            // Bait: distinct report tokens, more than either relevant
            // file holds alone.
            let mut bait: Vec<String> = Vec::new();
            let signal: Vec<&String> = tokens
                .iter()
                .filter(|t| vocab_set.contains(*t))
                .collect();
            let source: Vec<&String> = if signal.is_empty() {
                pool.clone()
            } else {
                signal
            };
            let mut distinct: Vec<&String> = Vec::new();
            for w in &source {
                if !distinct.contains(w) {
                    distinct.push(w);
                }
            }
            while bait.len() < DECOY_DISTINCT.min(distinct.len()).max(1) {
                let w = distinct[rng.random_range(0..distinct.len())];
                if !bait.iter().any(|b| b == w) {
                    bait.push((*w).clone());
                }
            }
            let mut decoy_markers: Vec<String> = Vec::new();
            while decoy_markers.len() < MARKERS_PER_DECOY {
                let w = &markers[rng.random_range(0..markers.len())];
                if !decoy_markers.contains(w) {
                    decoy_markers.push(w.clone());
                }
            }
            let mut decoy_tokens =
                Vec::with_capacity(bait.len() * DECOY_REPEATS + decoy_markers.len() * MARKER_REPEATS);
            for _ in 0..DECOY_REPEATS {
                decoy_tokens.extend(bait.iter().cloned());
            }
            for _ in 0..MARKER_REPEATS {
                decoy_tokens.extend(decoy_markers.iter().cloned());
            }
            snapshot.insert(SourceFile {
                path: file_path(n_base + j),
                content: layout_tokens(&decoy_tokens),
            });
        }

        let summary = tokens[..SUMMARY_TOKENS.min(tokens.len())].join(" ");
        let description = tokens[SUMMARY_TOKENS.min(tokens.len())..].join(" ");
        reports.push(BugReport {
            id: format!("bug-{j:04}"),
            summary,
            description,
            report_time: 1_600_000_000 + j as u64 * 86_400,
            version_id: "v1".into(),
            fixed_files: relevant.iter().map(|&f| file_path(f)).collect(),
        });
    }

    let mut snapshots = BTreeMap::new();
    snapshots.insert("v1".to_string(), snapshot);
    let corpus = Corpus { reports, snapshots };
    corpus.validate()?;
    Ok(corpus)
}

fn validate_params(p: &SynthParams) -> Result<()> {
    if p.relevant_per_bug < 1 {
        return Err(Error::Config("relevant_per_bug: must be at least 1".into()));
    }
    if p.n_files < p.relevant_per_bug {
        return Err(Error::Config(format!(
            "n_files: {} is below relevant_per_bug {}",
            p.n_files, p.relevant_per_bug
        )));
    }
    if p.n_bugs == 0 {
        return Err(Error::Config("n_bugs: must be positive".into()));
    }
    if p.vocab_size < FILE_CORE_WORDS {
        return Err(Error::Config(format!(
            "vocab_size: {} is below the per-file core of {FILE_CORE_WORDS}",
            p.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&p.overlap) {
        return Err(Error::Config(format!("overlap: {} not in [0,1]", p.overlap)));
    }
    if !(0.0..=1.0).contains(&p.noise) {
        return Err(Error::Config(format!("noise: {} not in [0,1]", p.noise)));
    }
    Ok(())
}

fn file_path(i: usize) -> String {
    format!("src/file_{i:04}.java")
}

fn layout_tokens(tokens: &[String]) -> String {
    let mut out = String::new();
    for chunk in tokens.chunks(8) {
        out.push_str(&chunk.join(" "));
        out.push('\n');
    }
    out
}

fn gen_words(rng: &mut ChaCha8Rng, n: usize, avoid: &HashSet<String>) -> Vec<String> {
    let mut words = Vec::with_capacity(n);
    let mut seen: HashSet<String> = HashSet::new();
    while words.len() < n {
        let len = rng.random_range(4..=8);
        let w: String = (0..len)
            .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
            .collect();
        if !avoid.contains(&w) && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}
