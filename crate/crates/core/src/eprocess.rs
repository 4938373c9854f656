//! Per-threshold e-process arithmetic.
//!
//! Each grid cutoff `q` carries a test supermartingale against the null
//! "releasing everything at or below `q` fails at rate at least `alpha`".
//! The process multiplies by `1 - lambda * x` each time the gate at `q` is
//! open, where `x = (1 - V) - alpha` is the excess-risk increment and
//! `lambda` is a predictable bet. Values are kept in natural-log space.
//!
//! With `lambda <= 1 / (2 (1 - alpha))` and `|x| <= 1 - alpha` every factor is
//! at least `1/2`, so `log_e` stays finite.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_open, CsaError, Result};

/// Sorted list of candidate score cutoffs in the open unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(CsaError::InvalidGrid("grid must hold at least one cutoff".into()));
        }
        for (i, &q) in thresholds.iter().enumerate() {
            if !(q > 0.0 && q < 1.0) {
                return Err(CsaError::InvalidGrid(format!(
                    "cutoff {i} = {q} is outside (0, 1)"
                )));
            }
        }
        if let Some(i) = thresholds.windows(2).position(|w| w[0] >= w[1]) {
            return Err(CsaError::InvalidGrid(format!(
                "cutoffs must be strictly increasing (index {} = {}, index {} = {})",
                i,
                thresholds[i],
                i + 1,
                thresholds[i + 1]
            )));
        }
        Ok(Self { thresholds })
    }

    /// The evenly spaced grid `i / (m + 1)` for `i = 1..=m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(CsaError::InvalidGrid("grid must hold at least one cutoff".into()));
        }
        let denom = (m + 1) as f64;
        Self::new((1..=m).map(|i| i as f64 / denom).collect())
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn get(&self, idx: usize) -> Option<f64> {
        self.thresholds.get(idx).copied()
    }

    /// Index of the first cutoff with `q >= score`; every cutoff from there on
    /// has an open gate for this score. Returns `len()` when none is open.
    pub fn first_open(&self, score: f64) -> usize {
        self.thresholds.partition_point(|&q| q < score)
    }

    /// Index of the largest cutoff `<= value`, if any.
    pub fn floor_index(&self, value: f64) -> Option<usize> {
        self.thresholds.partition_point(|&q| q <= value).checked_sub(1)
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = CsaError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(grid: ThresholdGrid) -> Self {
        grid.thresholds
    }
}

/// Excess-risk increment `A((1 - V) - alpha)`, one of `{-alpha, 0, 1 - alpha}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment(f64);

impl Increment {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Increment for one threshold given its gate and the verifier outcome.
pub fn increment(acted: bool, verifier_pass: bool, alpha: f64) -> Increment {
    if !acted {
        Increment(0.0)
    } else if verifier_pass {
        Increment(-alpha)
    } else {
        Increment(1.0 - alpha)
    }
}

/// Upper clip for the dense adaptive bet, `1 / (2 (1 - alpha))`.
pub fn dense_bet_cap(alpha: f64) -> f64 {
    0.5 / (1.0 - alpha)
}

/// Running-mean plug-in bet `clip(-mean / (1 - alpha)^2, 0, cap)`, zero before
/// the first update.
pub fn plug_in_bet(sum_x: f64, n: u64, alpha: f64, cap: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mean = sum_x / n as f64;
    let one_minus = 1.0 - alpha;
    (-mean / (one_minus * one_minus)).clamp(0.0, cap)
}

/// Adaptive bet with the dense clip.
pub fn adaptive_bet(sum_x: f64, n: u64, alpha: f64) -> f64 {
    plug_in_bet(sum_x, n, alpha, dense_bet_cap(alpha))
}

/// How bets are chosen for every threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
pub enum BetRule {
    /// Running-mean plug-in over the current epoch.
    #[default]
    Adaptive,
    /// Constant bet, used by the fixed-lambda ablation.
    Fixed(f64),
}

impl BetRule {
    pub fn validate(&self, alpha: f64) -> Result<()> {
        match *self {
            BetRule::Adaptive => Ok(()),
            BetRule::Fixed(lambda) => {
                let cap = dense_bet_cap(alpha);
                if (0.0..=cap).contains(&lambda) {
                    Ok(())
                } else {
                    Err(CsaError::param(
                        "lambda",
                        format!("fixed bet must lie in [0, {cap}], got {lambda}"),
                    ))
                }
            }
        }
    }

    /// Bet for a threshold with running sums `(sum_x, n)` under clip `cap`.
    pub fn bet(&self, sum_x: f64, n: u64, alpha: f64, cap: f64) -> f64 {
        match *self {
            BetRule::Adaptive => plug_in_bet(sum_x, n, alpha, cap),
            BetRule::Fixed(lambda) => lambda.min(cap),
        }
    }
}

/// Accumulator for one threshold's e-process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ThresholdState {
    /// Natural log of the e-value.
    pub log_e: f64,
    /// Sum of increments since the epoch start.
    pub sum_x: f64,
    /// Number of updates since the epoch start.
    pub n: u64,
    pub certified: bool,
}

impl ThresholdState {
    pub fn e_value(&self) -> f64 {
        self.log_e.exp()
    }

    /// Applies one factor `1 - lambda * x`. Fails if the factor is not positive.
    pub fn update(&mut self, lambda: f64, x: f64) -> Result<()> {
        let factor = 1.0 - lambda * x;
        if factor <= 0.0 || !factor.is_finite() {
            return Err(CsaError::NonPositiveFactor { lambda, x, factor });
        }
        // ln_1p keeps precision for the tiny factors produced by small bets.
        self.log_e += (-lambda * x).ln_1p();
        self.sum_x += x;
        self.n += 1;
        Ok(())
    }

    /// `true` iff the e-value has reached `1 / delta_q`.
    pub fn passes(&self, delta_q: f64) -> bool {
        self.log_e >= certification_level(delta_q)
    }
}

/// Functional form of [`ThresholdState::update`].
pub fn eprocess_update(state: ThresholdState, lambda: f64, x: Increment) -> Result<ThresholdState> {
    let mut next = state;
    next.update(lambda, x.value())?;
    Ok(next)
}

/// Level `ln(1 / delta_q)` the log e-value must reach.
pub fn certification_level(delta_q: f64) -> f64 {
    -delta_q.ln()
}

pub fn certify_check(state: &ThresholdState, delta_q: f64) -> Result<bool> {
    check_unit_open("delta_q", delta_q)?;
    Ok(state.passes(delta_q))
}
