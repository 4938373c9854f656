//! Multi-epoch controller with a deterministic restart schedule.
//!
//! Epoch `j` runs a fresh single-epoch controller with per-threshold budget
//! `6 delta / (pi^2 m j^2)`, so the budgets over all epochs and thresholds sum
//! to `delta`. State is cleared before the first round of each new epoch.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::{run_policy, CertEvent, Controller, ControllerConfig, Decision, ReleasePolicy, RoundRecord};
use crate::error::{CsaError, Result};
use crate::streams::Round;

/// Per-threshold budget for epoch `j` (1-based) on a grid of `m` thresholds.
pub fn epoch_budget(j: u32, m: usize, delta: f64) -> f64 {
    6.0 * delta / (PI * PI * m as f64 * f64::from(j) * f64::from(j))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochSchedule {
    /// Epoch `j` starts at round `(j - 1) * rounds + 1`.
    FixedLength { rounds: u64 },
    /// Explicit 1-based start rounds; the first must be 1.
    Boundaries { starts: Vec<u64> },
}

impl EpochSchedule {
    pub fn single() -> Self {
        EpochSchedule::Boundaries { starts: vec![1] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EpochSchedule::FixedLength { rounds } => {
                if *rounds == 0 {
                    return Err(CsaError::param("rounds", "epoch length must be at least 1"));
                }
            }
            EpochSchedule::Boundaries { starts } => {
                if starts.first() != Some(&1) {
                    return Err(CsaError::param("starts", "first epoch must start at round 1"));
                }
                if starts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CsaError::param("starts", "epoch starts must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    /// Whether round `t` (1-based) opens a new epoch other than the first.
    pub fn is_restart(&self, t: u64) -> bool {
        if t <= 1 {
            return false;
        }
        match self {
            EpochSchedule::FixedLength { rounds } => (t - 1).is_multiple_of(*rounds),
            EpochSchedule::Boundaries { starts } => starts.binary_search(&t).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub start_round: u64,
    /// Last round of the epoch, or the last observed round for the open one.
    pub end_round: u64,
    pub delta_q: f64,
    pub certified: usize,
    pub first_cert_round: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EpochController {
    inner: Controller,
    schedule: EpochSchedule,
    start_round: u64,
    closed: Vec<EpochSummary>,
    past_certs: Vec<CertEvent>,
}

impl EpochController {
    pub fn new(config: ControllerConfig, schedule: EpochSchedule) -> Result<Self> {
        schedule.validate()?;
        let delta_q = epoch_budget(1, config.grid.len(), config.delta);
        Ok(Self {
            inner: Controller::with_budget(config, delta_q)?,
            schedule,
            start_round: 1,
            closed: Vec::new(),
            past_certs: Vec::new(),
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.inner
    }

    fn current_summary(&self) -> EpochSummary {
        let st = self.inner.state();
        EpochSummary {
            epoch: st.epoch,
            start_round: self.start_round,
            end_round: st.round,
            delta_q: self.inner.delta_q(),
            certified: st.certified_count(),
            first_cert_round: st.cert_round.iter().flatten().copied().min(),
        }
    }

    pub fn summaries(&self) -> Vec<EpochSummary> {
        let mut all = self.closed.clone();
        if self.inner.state().round >= self.start_round {
            all.push(self.current_summary());
        }
        all
    }

    fn reset_epoch(&mut self) -> Result<()> {
        self.closed.push(self.current_summary());
        self.past_certs.extend(self.inner.state().cert_events());
        let next = self.inner.state().epoch + 1;
        let cfg = self.inner.config();
        let delta_q = epoch_budget(next, cfg.grid.len(), cfg.delta);
        self.inner.reset(delta_q)?;
        self.start_round = self.inner.state().round + 1;
        Ok(())
    }
}

impl ReleasePolicy for EpochController {
    fn decide(&self, score: f64) -> Decision {
        self.inner.decide(score)
    }

    fn observe(&mut self, round: &Round, _acted: bool) -> Result<()> {
        self.inner.observe(round.score, round.verifier_pass)?;
        // The reset for round t+1 fires now so that its decision sees fresh state.
        if self.schedule.is_restart(self.inner.state().round + 1) {
            self.reset_epoch()?;
        }
        Ok(())
    }

    fn certifications(&self) -> Vec<CertEvent> {
        let mut all = self.past_certs.clone();
        all.extend(self.inner.state().cert_events());
        all
    }
}

#[derive(Debug, Clone)]
pub struct EpochRunOutput {
    pub trace: Vec<RoundRecord>,
    pub epochs: Vec<EpochSummary>,
    pub certifications: Vec<CertEvent>,
}

pub fn run_stream_epoch<I: IntoIterator<Item = Round>>(
    config: &ControllerConfig,
    schedule: &EpochSchedule,
    stream: I,
) -> Result<EpochRunOutput> {
    let mut ctl = EpochController::new(config.clone(), schedule.clone())?;
    let trace = run_policy(&mut ctl, stream)?;
    Ok(EpochRunOutput {
        trace,
        epochs: ctl.summaries(),
        certifications: ctl.certifications(),
    })
}
