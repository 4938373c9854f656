//! Comparison policies on the same decide/observe protocol as the controller.

use std::collections::VecDeque;

use statrs::function::beta::beta_reg;

use crate::calibration::nearest_rank;
use crate::controller::{Decision, ReleasePolicy};
use crate::eprocess::ThresholdGrid;
use crate::error::{check_unit_open, CsaError, Result};
use crate::streams::Round;

pub const ACI_WINDOW: usize = 500;
pub const ACI_DEFAULT_GAMMA: f64 = 0.005;

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAct;

impl ReleasePolicy for AlwaysAct {
    fn decide(&self, _score: f64) -> Decision {
        Decision {
            acted: true,
            deployed_q: Some(1.0),
        }
    }

    fn observe(&mut self, _round: &Round, _acted: bool) -> Result<()> {
        Ok(())
    }
}

/// Releases iff `score <= q0`; `None` abstains on every round.
#[derive(Debug, Clone, Copy)]
pub struct FixedThreshold {
    pub q0: Option<f64>,
}

impl FixedThreshold {
    pub fn new(q0: f64) -> Self {
        Self { q0: Some(q0) }
    }
}

impl ReleasePolicy for FixedThreshold {
    fn decide(&self, score: f64) -> Decision {
        Decision {
            acted: self.q0.is_some_and(|q| score <= q),
            deployed_q: self.q0,
        }
    }

    fn observe(&mut self, _round: &Round, _acted: bool) -> Result<()> {
        Ok(())
    }
}

/// Deploys the largest grid cutoff whose raw failure rate over the last
/// `window` released rounds at or below it is at most `alpha`. Cutoffs with
/// no such rounds count as rate 0, so an empty history deploys the top cutoff.
#[derive(Debug, Clone)]
pub struct NaiveTuning {
    grid: ThresholdGrid,
    alpha: f64,
    window: Option<usize>,
    history: VecDeque<(usize, bool)>,
    bin_n: Vec<u64>,
    bin_fail: Vec<u64>,
    deployed: Option<usize>,
}

impl NaiveTuning {
    pub fn new(grid: ThresholdGrid, alpha: f64, window: Option<usize>) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        if window == Some(0) {
            return Err(CsaError::param("window", "must be at least 1"));
        }
        let m = grid.len();
        Ok(Self {
            deployed: Some(m - 1),
            grid,
            alpha,
            window,
            history: VecDeque::new(),
            bin_n: vec![0; m + 1],
            bin_fail: vec![0; m + 1],
        })
    }

    fn retune(&mut self) {
        let (mut n, mut f) = (0u64, 0u64);
        let mut best = None;
        for k in 0..self.grid.len() {
            n += self.bin_n[k];
            f += self.bin_fail[k];
            if n == 0 || f as f64 <= self.alpha * n as f64 {
                best = Some(k);
            }
        }
        self.deployed = best;
    }
}

impl ReleasePolicy for NaiveTuning {
    fn decide(&self, score: f64) -> Decision {
        let deployed_q = self.deployed.and_then(|i| self.grid.get(i));
        Decision {
            acted: deployed_q.is_some_and(|q| score <= q),
            deployed_q,
        }
    }

    fn observe(&mut self, round: &Round, acted: bool) -> Result<()> {
        if !acted {
            return Ok(());
        }
        let bin = self.grid.first_open(round.score);
        let failed = !round.verifier_pass;
        self.history.push_back((bin, failed));
        self.bin_n[bin] += 1;
        self.bin_fail[bin] += u64::from(failed);
        if let Some(w) = self.window {
            while self.history.len() > w {
                let (b, f) = self.history.pop_front().expect("non-empty");
                self.bin_n[b] -= 1;
                self.bin_fail[b] -= u64::from(f);
            }
        }
        self.retune();
        Ok(())
    }
}

/// One adaptive-level step: `alpha_t + gamma (alpha - err)`.
pub fn aci_step(alpha_t: f64, gamma: f64, alpha: f64, err: bool) -> f64 {
    alpha_t + gamma * (alpha - if err { 1.0 } else { 0.0 })
}

/// Adaptive level tracking. Releases iff the score is at most the empirical
/// `alpha_t`-quantile of the last [`ACI_WINDOW`] scores; an error is a
/// released round that fails the verifier.
#[derive(Debug, Clone)]
pub struct Aci {
    alpha: f64,
    gamma: f64,
    alpha_t: f64,
    recent: VecDeque<f64>,
    cutoff: Option<f64>,
}

impl Aci {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(CsaError::param("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(Self {
            alpha,
            gamma,
            alpha_t: alpha,
            recent: VecDeque::with_capacity(ACI_WINDOW + 1),
            cutoff: None,
        })
    }

    pub fn alpha_t(&self) -> f64 {
        self.alpha_t
    }

    fn recompute(&mut self) {
        let level = self.alpha_t.clamp(0.0, 1.0);
        self.cutoff = if self.alpha_t >= 1.0 {
            Some(1.0)
        } else if self.alpha_t <= 0.0 || self.recent.is_empty() {
            None
        } else {
            let mut s: Vec<f64> = self.recent.iter().copied().collect();
            s.sort_by(f64::total_cmp);
            Some(nearest_rank(&s, level))
        };
    }
}

impl ReleasePolicy for Aci {
    fn decide(&self, score: f64) -> Decision {
        Decision {
            acted: self.cutoff.is_some_and(|q| score <= q),
            deployed_q: self.cutoff,
        }
    }

    fn observe(&mut self, round: &Round, acted: bool) -> Result<()> {
        self.alpha_t = aci_step(self.alpha_t, self.gamma, self.alpha, acted && !round.verifier_pass);
        self.recent.push_back(round.score);
        if self.recent.len() > ACI_WINDOW {
            self.recent.pop_front();
        }
        self.recompute();
        Ok(())
    }
}

/// One-sided Clopper-Pearson upper bound at level `delta` for `k` failures in
/// `n` trials: the `u` with `P(Bin(n, u) <= k) = delta`.
pub fn clopper_pearson_upper(k: u64, n: u64, delta: f64) -> f64 {
    if n == 0 || k >= n {
        return 1.0;
    }
    // P(Bin(n,u) <= k) = 1 - I_u(k+1, n-k), decreasing in u.
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let target = 1.0 - delta;
    let (mut lo, mut hi) = (k as f64 / n as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    hi
}

/// Largest grid cutoff whose Clopper-Pearson bound on the failure rate among
/// calibration items at or below it is at most `alpha`; `None` refuses.
pub fn offline_calibrated(cal: &[Round], delta: f64, alpha: f64, grid: &ThresholdGrid) -> Result<Option<usize>> {
    check_unit_open("delta", delta)?;
    check_unit_open("alpha", alpha)?;
    let m = grid.len();
    let mut bin_n = vec![0u64; m + 1];
    let mut bin_f = vec![0u64; m + 1];
    for r in cal {
        let b = grid.first_open(r.score);
        bin_n[b] += 1;
        bin_f[b] += u64::from(!r.verifier_pass);
    }
    let (mut n, mut k) = (0, 0);
    let mut best = None;
    for i in 0..m {
        n += bin_n[i];
        k += bin_f[i];
        if n > 0 && clopper_pearson_upper(k, n, delta) <= alpha {
            best = Some(i);
        }
    }
    Ok(best)
}
