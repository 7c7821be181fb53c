//! Transcription metrics: Levenshtein edit operations and the corpus-level
//! character error, correct, and accuracy rates derived from them.

use std::fmt;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditOps {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditOps {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment between reference and hypothesis. On
/// equal-cost alternatives the backtrace prefers substitution, then
/// deletion, then insertion, so counts are deterministic.
pub fn edit_ops<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dist = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dist[at(i, 0)] = i;
    }
    for j in 0..=m {
        dist[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let sub = dist[at(i - 1, j - 1)] + cost;
            let del = dist[at(i - 1, j)] + 1;
            let ins = dist[at(i, j - 1)] + 1;
            dist[at(i, j)] = sub.min(del).min(ins);
        }
    }

    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[at(i, j)];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dist[at(i - 1, j - 1)] + cost == here {
                if cost == 1 {
                    ops.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[at(i - 1, j)] + 1 == here {
            ops.deletions += 1;
            i -= 1;
            continue;
        }
        ops.insertions += 1;
        j -= 1;
    }
    ops
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub cer: f64,
    pub cr: f64,
    pub ar: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_length: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cer {:.6} cr {:.6} ar {:.6} (sub {} del {} ins {} over {} ref chars)",
            self.cer, self.cr, self.ar, self.substitutions, self.deletions, self.insertions, self.ref_length
        )
    }
}

impl MetricReport {
    /// Rates from aggregate counts:
    /// `cer = (sub+del+ins)/ref`, `cr = (ref-del-sub)/ref`,
    /// `ar = (ref-del-sub-ins)/ref`.
    pub fn from_counts(ops: EditOps, ref_length: usize) -> Self {
        let n = ref_length as f64;
        let (s, d, i) = (
            ops.substitutions as f64,
            ops.deletions as f64,
            ops.insertions as f64,
        );
        MetricReport {
            cer: if ref_length == 0 { if ops.total() == 0 { 0.0 } else { 1.0 } } else { (s + d + i) / n },
            cr: if ref_length == 0 { 1.0 } else { (n - d - s) / n },
            ar: if ref_length == 0 { if i == 0.0 { 1.0 } else { 0.0 } } else { (n - d - s - i) / n },
            substitutions: ops.substitutions,
            deletions: ops.deletions,
            insertions: ops.insertions,
            ref_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSizeMismatch {
    pub refs: usize,
    pub hyps: usize,
}

impl fmt::Display for CorpusSizeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "corpus sizes differ: {} references vs {} hypotheses", self.refs, self.hyps)
    }
}

impl std::error::Error for CorpusSizeMismatch {}

/// Aggregates edit counts over parallel corpora (weighted by line length,
/// not averaged per line) and derives the rates.
pub fn report<T: PartialEq>(
    references: &[Vec<T>],
    hypotheses: &[Vec<T>],
) -> Result<MetricReport, CorpusSizeMismatch> {
    if references.len() != hypotheses.len() {
        return Err(CorpusSizeMismatch { refs: references.len(), hyps: hypotheses.len() });
    }
    let mut ops = EditOps::default();
    let mut ref_length = 0;
    for (r, h) in references.iter().zip(hypotheses) {
        let e = edit_ops(r, h);
        ops.substitutions += e.substitutions;
        ops.deletions += e.deletions;
        ops.insertions += e.insertions;
        ref_length += r.len();
    }
    Ok(MetricReport::from_counts(ops, ref_length))
}
