//! Estimation-accuracy and prediction metrics: integrated squared error for
//! coefficient and survival functions, and the Brier score over a follow-up
//! window.

use crate::numeric::trapezoid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("grid mismatch: estimate has {estimate} points, truth has {truth}")]
    GridMismatch { estimate: usize, truth: usize },
    #[error("metric inputs must be non-empty")]
    Empty,
    #[error("no subject is classifiable anywhere in the window")]
    NoClassifiableSubjects,
}

/// Evaluation window: an even grid of `n_t` times over [0, t_max].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricWindow {
    pub t_max: f64,
    pub n_t: usize,
}

impl Default for MetricWindow {
    fn default() -> Self {
        MetricWindow {
            t_max: 120.0,
            n_t: 121,
        }
    }
}

impl MetricWindow {
    pub fn grid(&self) -> Vec<f64> {
        crate::numeric::linspace(0.0, self.t_max, self.n_t)
    }
}

/// Integrated squared error ∫ (estimate − truth)² by trapezoid over a shared
/// grid. The study runner averages this across replicates.
pub fn mise(grid: &[f64], estimate: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    if estimate.len() != truth.len() || grid.len() != estimate.len() {
        return Err(MetricError::GridMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    if grid.is_empty() {
        return Err(MetricError::Empty);
    }
    let sq: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .collect();
    Ok(trapezoid(grid, &sq))
}

/// Survival-function ISE averaged across subjects over the window grid.
/// `estimates` and `truths` hold one curve per subject on `grid`.
pub fn survival_mise(
    grid: &[f64],
    estimates: &[Vec<f64>],
    truths: &[Vec<f64>],
) -> Result<f64, MetricError> {
    if estimates.len() != truths.len() {
        return Err(MetricError::GridMismatch {
            estimate: estimates.len(),
            truth: truths.len(),
        });
    }
    if estimates.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        total += mise(grid, e, t)?;
    }
    Ok(total / estimates.len() as f64)
}

/// Brier score without censoring weights: at each grid time t the predicted
/// event probability 1 − Ŝ_i(t) is compared with the observed outcome, and
/// subjects censored before t are excluded from that time's average; the
/// per-time means are then averaged over the window. Note this drops
/// early-censored subjects rather than reweighting them (no IPCW).
pub fn brier(
    predicted_survival: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    window: &MetricWindow,
) -> Result<f64, MetricError> {
    let n = times.len();
    if predicted_survival.len() != n || events.len() != n {
        return Err(MetricError::GridMismatch {
            estimate: predicted_survival.len(),
            truth: n,
        });
    }
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let grid = window.grid();
    let mut grid_total = 0.0;
    let mut used_times = 0usize;
    let mut skipped = 0usize;
    for (j, &t) in grid.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            let outcome = if times[i] <= t && events[i] {
                1.0
            } else if times[i] > t {
                0.0
            } else {
                continue; // censored before t: status at t unknown
            };
            let p_event = 1.0 - predicted_survival[i][j];
            sum += (p_event - outcome) * (p_event - outcome);
            count += 1;
        }
        if count == 0 {
            skipped += 1;
            continue;
        }
        grid_total += sum / count as f64;
        used_times += 1;
    }
    if skipped > 0 {
        log::warn!("brier: {skipped} window times had an empty risk set and were skipped");
    }
    if used_times == 0 {
        return Err(MetricError::NoClassifiableSubjects);
    }
    Ok(grid_total / used_times as f64)
}
