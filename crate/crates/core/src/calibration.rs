//! Isotonic score calibration and grid construction for replayed streams.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eprocess::ThresholdGrid;
use crate::error::{CsaError, Result};
use crate::streams::Round;

/// Step-function fit of failure probability on raw score.
///
/// `breakpoints[i]` is the smallest raw score of block `i`; a score maps to
/// the last block starting at or below it (the first block if none does).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicModel {
    pub fn predict(&self, score: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= score);
        self.values[idx.saturating_sub(1)]
    }

    /// Replaces every round's score by its calibrated failure probability.
    pub fn calibrate(&self, rounds: &[Round]) -> Vec<Round> {
        rounds
            .iter()
            .map(|r| Round::new(self.predict(r.score), r.verifier_pass))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.breakpoints.is_empty() || model.breakpoints.len() != model.values.len() {
            return Err(CsaError::Degenerate("isotonic model needs matching, non-empty knots".into()));
        }
        Ok(model)
    }
}

/// Pool-adjacent-violators fit. Pairs are `(raw score, failed)`.
pub fn fit_isotonic(pairs: &[(f64, bool)]) -> Result<IsotonicModel> {
    if pairs.is_empty() {
        return Err(CsaError::Degenerate("isotonic fit needs at least one pair".into()));
    }
    if let Some(&(s, _)) = pairs.iter().find(|(s, _)| !(0.0..=1.0).contains(s)) {
        return Err(CsaError::param("score", format!("must lie in [0, 1], got {s}")));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // (start score, label sum, weight); tied scores start pooled.
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for &(s, y) in &sorted {
        let y = if y { 1.0 } else { 0.0 };
        match blocks.last_mut() {
            Some(last) if last.0 == s => {
                last.1 += y;
                last.2 += 1.0;
            }
            _ => blocks.push((s, y, 1.0)),
        }
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (a, b) = (blocks[n - 2], blocks[n - 1]);
            if a.1 / a.2 < b.1 / b.2 {
                break;
            }
            blocks[n - 2] = (a.0, a.1 + b.1, a.2 + b.2);
            blocks.pop();
        }
    }
    Ok(IsotonicModel {
        breakpoints: blocks.iter().map(|b| b.0).collect(),
        values: blocks.iter().map(|b| b.1 / b.2).collect(),
    })
}

/// Nearest-rank quantile of sorted data.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// `m` cutoffs from the `lo_q` to the `hi_q` quantile of `scores`.
///
/// Spacing is geometric; if rounding collapses points it falls back to linear
/// spacing on the same endpoints. A non-positive lower endpoint moves to the
/// smallest positive score, and an upper endpoint at 1 moves just below it.
pub fn build_grid(scores: &[f64], m: usize, lo_q: f64, hi_q: f64) -> Result<ThresholdGrid> {
    if m < 2 {
        return Err(CsaError::param("m", "grid needs at least 2 points"));
    }
    if !(0.0..=1.0).contains(&lo_q) || !(0.0..=1.0).contains(&hi_q) || lo_q >= hi_q {
        return Err(CsaError::param("lo_q", "quantile levels must satisfy 0 <= lo_q < hi_q <= 1"));
    }
    if scores.is_empty() {
        return Err(CsaError::Degenerate("no scores to build a grid from".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut lo = nearest_rank(&sorted, lo_q);
    if lo <= 0.0 {
        lo = sorted
            .iter()
            .copied()
            .find(|&s| s > 0.0)
            .ok_or_else(|| CsaError::Degenerate("no positive scores".into()))?;
    }
    let mut hi = nearest_rank(&sorted, hi_q);
    if hi >= 1.0 {
        hi = 1.0 - f64::EPSILON;
    }
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(CsaError::Degenerate(format!("quantile endpoints {lo} and {hi} do not span a range")));
    }
    let last = (m - 1) as f64;
    let ratio = hi / lo;
    let geometric: Vec<f64> = (0..m)
        .map(|i| match i {
            0 => lo,
            i if i == m - 1 => hi,
            i => lo * ratio.powf(i as f64 / last),
        })
        .collect();
    if let Ok(grid) = ThresholdGrid::new(dedup(geometric)).and_then(|g| full(g, m)) {
        return Ok(grid);
    }
    let linear: Vec<f64> = (0..m)
        .map(|i| if i == m - 1 { hi } else { lo + (hi - lo) * i as f64 / last })
        .collect();
    ThresholdGrid::new(dedup(linear)).and_then(|g| full(g, m))
}

fn dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.dedup();
    v
}

fn full(grid: ThresholdGrid, m: usize) -> Result<ThresholdGrid> {
    if grid.len() == m {
        Ok(grid)
    } else {
        Err(CsaError::Degenerate(format!("only {} distinct cutoffs out of {m}", grid.len())))
    }
}
