//! Shared fixtures for the engine benchmarks.

use bugrank::corpus::{generate_synthetic, Corpus, SynthParams};
use bugrank::encoder::{build_rows, ConcatRow, Encoder};
use bugrank::retrieval::{build_index, shortlist, InvertedIndex};

pub fn bench_corpus() -> Corpus {
    generate_synthetic(&SynthParams {
        n_files: 120,
        n_bugs: 40,
        ..SynthParams::default()
    })
    .expect("valid params")
}

pub fn bench_index(corpus: &Corpus) -> InvertedIndex {
    build_index(corpus.snapshots.values().next().expect("one snapshot")).expect("non-empty")
}

/// Candidate rows for the first report, embedded at dimension `d`.
pub fn bench_rows(corpus: &Corpus, d: usize, k: usize) -> Vec<ConcatRow> {
    let report = &corpus.reports[0];
    let snapshot = corpus.snapshot_for(report).expect("validated");
    let index = build_index(snapshot).expect("non-empty");
    let candidates = shortlist(&index, report, k).expect("k >= 1");
    let encoder = Encoder::hashed(snapshot, d, 0).expect("valid dim");
    build_rows(report, &candidates, &encoder).expect("non-empty candidates")
}
