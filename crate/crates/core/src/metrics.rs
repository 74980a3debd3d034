//! Peak accuracy and detection scoring.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("overall score of an empty run list is undefined")]
    EmptyRuns,
}

/// Gap between the best value found and the optimum value.
pub fn epsilon_f(f_best: f64, f_star: f64) -> f64 {
    f_best - f_star
}

/// A reported solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Reported {
    pub x: DVector<f64>,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub minimum: usize,
    pub reported: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub n_reported: usize,
    pub matched: Vec<Match>,
    pub n_true: usize,
}

/// One-to-one greedy matching of reported solutions to true minima.
///
/// Pairs are accepted in order of increasing distance when they lie within
/// `radius`, the reported fitness is within `f_tol` of `bias`, and neither
/// side is matched yet. When `radius` does not exceed half the smallest
/// distance between true minima, every reported point is eligible for at
/// most one minimum and the greedy count is the maximum matching.
pub fn match_peaks(
    reported: &[Reported],
    true_minima: &[DVector<f64>],
    bias: f64,
    radius: f64,
    f_tol: f64,
) -> DetectionReport {
    let mut pairs = Vec::new();
    for (r, rep) in reported.iter().enumerate() {
        if (rep.fitness - bias).abs() > f_tol {
            continue;
        }
        for (m, t) in true_minima.iter().enumerate() {
            let distance = (&rep.x - t).norm();
            if distance <= radius {
                pairs.push(Match { minimum: m, reported: r, distance });
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.minimum.cmp(&b.minimum))
            .then(a.reported.cmp(&b.reported))
    });
    let mut used_min = vec![false; true_minima.len()];
    let mut used_rep = vec![false; reported.len()];
    let mut matched = Vec::new();
    for p in pairs {
        if !used_min[p.minimum] && !used_rep[p.reported] {
            used_min[p.minimum] = true;
            used_rep[p.reported] = true;
            matched.push(p);
        }
    }
    DetectionReport {
        n_reported: reported.len(),
        matched,
        n_true: true_minima.len(),
    }
}

/// `(precision, recall)`. An empty report has precision 1 and recall 0.
pub fn precision_recall(report: &DetectionReport) -> (f64, f64) {
    let hits = report.matched.len() as f64;
    let precision = if report.n_reported == 0 {
        1.0
    } else {
        hits / report.n_reported as f64
    };
    (precision, hits / report.n_true as f64)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub epsilon_f: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub evals_used: usize,
}

impl RunMetrics {
    pub fn new(f_best: f64, f_star: f64, report: &DetectionReport, evals_used: usize) -> Self {
        let (precision, recall) = precision_recall(report);
        Self {
            epsilon_f: epsilon_f(f_best, f_star),
            precision,
            recall,
            f1: f1(precision, recall),
            evals_used,
        }
    }
}

/// Aggregate score: mean of `f1 / (1 + max(0, ε_f))` over runs.
///
/// This is a local stand-in that rewards both detection and accuracy; it is
/// not the competition's scoring formula.
pub fn overall_score(runs: &[RunMetrics]) -> Result<f64, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let total: f64 = runs.iter().map(|r| r.f1 / (1.0 + r.epsilon_f.max(0.0))).sum();
    Ok(total / runs.len() as f64)
}
