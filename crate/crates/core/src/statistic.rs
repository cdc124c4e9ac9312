//! Symmetrized log-odds statistic for one projection and its average over
//! projections.
//!
//! For a class `g` with members `S_g` and complement `S_gc` among the rows
//! that have an out-of-bag probability, the class term is
//! `mean_{S_g} logit(p_g) - mean_{S_gc} logit(p_g)`; the projection statistic
//! sums the terms over classes.

use crate::error::{PklmError, Result};
use crate::forest::OobProbabilities;

pub const PROB_FLOOR: f64 = 1e-9;

/// Clamps a probability into `[1e-9, 1 - 1e-9]` before taking logs.
#[inline]
pub fn truncate_prob(x: f64) -> f64 {
    x.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Largest magnitude any single class term can reach.
pub fn class_term_bound() -> f64 {
    2.0 * logit(1.0 - PROB_FLOOR)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectionStatistic {
    pub value: f64,
    /// `(class, U_g - U_gc)` for every class whose two sides were non-empty.
    pub per_class_terms: Vec<(usize, f64)>,
    pub n_used_rows: usize,
}

/// Truncated log-odds of every covered row, computed once per projection and
/// reused for the observed labels and every permutation.
#[derive(Debug, Clone)]
pub struct LogOddsTable {
    n_classes: usize,
    /// Row-major, covered rows only.
    values: Vec<f64>,
    /// Index into the original rows for each stored row.
    rows: Vec<usize>,
    /// Per class, sum of log-odds over all covered rows.
    totals: Vec<f64>,
}

impl LogOddsTable {
    pub fn new(probs: &OobProbabilities) -> Self {
        let k = probs.n_classes();
        let mut values = Vec::with_capacity(probs.n_rows() * k);
        let mut rows = Vec::with_capacity(probs.n_rows());
        let mut totals = vec![0.0; k];
        for i in 0..probs.n_rows() {
            if let Some(p) = probs.row(i) {
                rows.push(i);
                for (g, &pg) in p.iter().enumerate() {
                    let v = logit(truncate_prob(pg));
                    values.push(v);
                    totals[g] += v;
                }
            }
        }
        Self {
            n_classes: k,
            values,
            rows,
            totals,
        }
    }

    pub fn n_covered(&self) -> usize {
        self.rows.len()
    }

    /// Sums class terms for a labeling of the original rows; `None` labels
    /// belong to every complement and no class. Classes with an empty side
    /// are skipped.
    pub fn statistic(&self, labels: &[Option<usize>]) -> Result<ProjectionStatistic> {
        let k = self.n_classes;
        let mut in_sum = vec![0.0; k];
        let mut in_count = vec![0usize; k];
        for (r, &i) in self.rows.iter().enumerate() {
            if let Some(g) = labels[i] {
                if g >= k {
                    return Err(PklmError::InvalidData(format!("label {g} out of range")));
                }
                in_sum[g] += self.values[r * k + g];
                in_count[g] += 1;
            }
        }
        let n = self.rows.len();
        let mut per_class_terms = Vec::with_capacity(k);
        for g in 0..k {
            let (c, rest) = (in_count[g], n - in_count[g]);
            if c == 0 || rest == 0 {
                continue;
            }
            let term = in_sum[g] / c as f64 - (self.totals[g] - in_sum[g]) / rest as f64;
            per_class_terms.push((g, term));
        }
        if per_class_terms.is_empty() {
            return Err(PklmError::NoValidClassTerm);
        }
        Ok(ProjectionStatistic {
            value: per_class_terms.iter().map(|t| t.1).sum(),
            per_class_terms,
            n_used_rows: n,
        })
    }
}

/// `U_g - U_gc` for class `g` over explicit index sets; uncovered rows are
/// dropped from both sides first.
pub fn class_term(
    g: usize,
    probs: &OobProbabilities,
    in_class: &[usize],
    out_class: &[usize],
) -> Result<f64> {
    let side_mean = |set: &[usize]| {
        let vals: Vec<f64> = set
            .iter()
            .filter_map(|&i| probs.row(i))
            .map(|p| logit(truncate_prob(p[g])))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    match (side_mean(in_class), side_mean(out_class)) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(PklmError::EmptyClassSide(g)),
    }
}

pub fn projection_statistic(
    labels: &[Option<usize>],
    probs: &OobProbabilities,
) -> Result<ProjectionStatistic> {
    if labels.len() != probs.n_rows() {
        return Err(PklmError::InvalidData(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.n_rows()
        )));
    }
    LogOddsTable::new(probs).statistic(labels)
}

/// One-sided `U_g` with the prior offset, used for consistency checks of
/// the divergence estimate.
pub fn one_sided_term(probs_g: &[f64], prior_g: f64) -> f64 {
    let offset = logit(prior_g);
    probs_g.iter().map(|&p| logit(truncate_prob(p)) - offset).sum::<f64>() / probs_g.len() as f64
}

/// Mean of the retained projection statistics.
pub fn aggregate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(PklmError::NoProjections);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
