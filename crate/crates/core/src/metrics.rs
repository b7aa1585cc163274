//! Ranking metrics: reciprocal rank, average precision, MRR/MAP/Top-K,
//! and the conservative lower-bound treatment of gate-filtered reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relevance of one report's files in rank order, plus whether the
/// report was filtered out by the gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedResult {
    pub report_id: String,
    /// Position i holds the relevance of the file ranked i+1.
    pub relevance: Vec<bool>,
    /// Gate-negative report: contributes zero under the lower bound.
    pub filtered: bool,
}

impl RankedResult {
    pub fn ranked(report_id: impl Into<String>, relevance: Vec<bool>) -> Self {
        RankedResult {
            report_id: report_id.into(),
            relevance,
            filtered: false,
        }
    }

    pub fn filtered(report_id: impl Into<String>) -> Self {
        RankedResult {
            report_id: report_id.into(),
            relevance: Vec::new(),
            filtered: true,
        }
    }
}

/// Aggregate evaluation over a report set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub map: f64,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub n_reports: usize,
    pub n_filtered: usize,
}

impl EvalReport {
    /// Aligned text table with the standard column order.
    pub fn to_table(&self) -> String {
        format!(
            "{:<8}{:<8}{:<8}{:<8}{:<8}\n{:<8.4}{:<8.4}{:<8.4}{:<8.4}{:<8.4}",
            "Top1", "Top5", "Top10", "MAP", "MRR", self.top1, self.top5, self.top10, self.map,
            self.mrr
        )
    }
}

/// 1 / rank of the first relevant entry; 0 when none is relevant.
pub fn reciprocal_rank(relevance: &[bool]) -> f64 {
    relevance
        .iter()
        .position(|&r| r)
        .map(|p| 1.0 / (p + 1) as f64)
        .unwrap_or(0.0)
}

/// Mean precision over the relevant positions; 0 when none is relevant.
/// The denominator is the number of relevant entries within the ranked
/// vector, which is truncated at the shortlist size.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn top_k(relevance: &[bool], k: usize) -> bool {
    relevance.iter().take(k).any(|&r| r)
}

/// MRR, MAP, and Top-K over a result set.
///
/// With `adjust_lower_bound` filtered reports count as zero contributions;
/// without it they are dropped from the denominator.
pub fn evaluate(results: &[RankedResult], adjust_lower_bound: bool) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::EmptyEval);
    }
    let n_filtered = results.iter().filter(|r| r.filtered).count();
    let counted: Vec<&RankedResult> = if adjust_lower_bound {
        results.iter().collect()
    } else {
        results.iter().filter(|r| !r.filtered).collect()
    };
    if counted.is_empty() {
        return Err(Error::EmptyEval);
    }
    let n = counted.len() as f64;
    let mut report = EvalReport {
        mrr: 0.0,
        map: 0.0,
        top1: 0.0,
        top5: 0.0,
        top10: 0.0,
        n_reports: results.len(),
        n_filtered,
    };
    for result in counted {
        if result.filtered {
            continue; // zero contribution under the lower bound
        }
        report.mrr += reciprocal_rank(&result.relevance);
        report.map += average_precision(&result.relevance);
        report.top1 += top_k(&result.relevance, 1) as u8 as f64;
        report.top5 += top_k(&result.relevance, 5) as u8 as f64;
        report.top10 += top_k(&result.relevance, 10) as u8 as f64;
    }
    report.mrr /= n;
    report.map /= n;
    report.top1 /= n;
    report.top5 /= n;
    report.top10 /= n;
    Ok(report)
}
