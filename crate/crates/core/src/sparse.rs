//! Controller that queries the verifier only on a Bernoulli subsample.
//!
//! On each round a coin `B ~ Bernoulli(pi_t)` is drawn from its own RNG
//! stream. Queried rounds feed `x / pi_t`; unqueried rounds feed 0, which
//! leaves `log_e` unchanged but still counts toward the plug-in mean. Bets are
//! capped at `pi_min / (2 (1 - alpha))`, so every factor stays at least 1/2.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{CertEvent, Controller, ControllerConfig, Decision, ReleasePolicy, RoundRecord};
use crate::eprocess::increment;
use crate::error::{CsaError, Result};
use crate::seeds::{rng_for, Purpose};
use crate::streams::Round;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiStep {
    /// First round (1-based) at which `pi` applies.
    pub from: u64,
    pub pi: f64,
}

/// Query probability as a function of the round index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsePolicy {
    Constant { pi: f64 },
    Stepped { steps: Vec<PiStep> },
}

impl SparsePolicy {
    pub fn constant(pi: f64) -> Self {
        SparsePolicy::Constant { pi }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |pi: f64| {
            if pi > 0.0 && pi <= 1.0 {
                Ok(())
            } else {
                Err(CsaError::param("pi", format!("must lie in (0, 1], got {pi}")))
            }
        };
        match self {
            SparsePolicy::Constant { pi } => check(*pi),
            SparsePolicy::Stepped { steps } => {
                if steps.first().map(|s| s.from) != Some(1) {
                    return Err(CsaError::param("steps", "first step must start at round 1"));
                }
                if steps.windows(2).any(|w| w[1].from <= w[0].from) {
                    return Err(CsaError::param("steps", "step rounds must be strictly increasing"));
                }
                steps.iter().try_for_each(|s| check(s.pi))
            }
        }
    }

    pub fn pi_at(&self, t: u64) -> f64 {
        match self {
            SparsePolicy::Constant { pi } => *pi,
            SparsePolicy::Stepped { steps } => {
                let idx = steps.partition_point(|s| s.from <= t).max(1);
                steps[idx - 1].pi
            }
        }
    }

    pub fn pi_min(&self) -> f64 {
        match self {
            SparsePolicy::Constant { pi } => *pi,
            SparsePolicy::Stepped { steps } => steps.iter().map(|s| s.pi).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Importance-weighted increment.
pub fn sparse_increment(coin: bool, pi: f64, x: f64) -> f64 {
    if coin {
        x / pi
    } else {
        0.0
    }
}

pub fn sparse_bet_cap(pi_min: f64, alpha: f64) -> f64 {
    pi_min / (2.0 * (1.0 - alpha))
}

pub fn sparse_bet_clip(raw_lambda: f64, pi_min: f64, alpha: f64) -> f64 {
    raw_lambda.clamp(0.0, sparse_bet_cap(pi_min, alpha))
}

#[derive(Debug, Clone)]
pub struct SparseController {
    inner: Controller,
    policy: SparsePolicy,
    cap: f64,
    coins: ChaCha8Rng,
    calls: u64,
    last_coin: Option<bool>,
}

impl SparseController {
    pub fn new(config: ControllerConfig, policy: SparsePolicy, seed: u64) -> Result<Self> {
        policy.validate()?;
        let cap = sparse_bet_cap(policy.pi_min(), config.alpha);
        Ok(Self {
            inner: Controller::new(config)?,
            policy,
            cap,
            coins: rng_for(seed, Purpose::Coins),
            calls: 0,
            last_coin: None,
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.inner
    }

    pub fn verifier_calls(&self) -> u64 {
        self.calls
    }

    pub fn last_coin(&self) -> Option<bool> {
        self.last_coin
    }
}

impl ReleasePolicy for SparseController {
    fn decide(&self, score: f64) -> Decision {
        self.inner.decide(score)
    }

    fn observe(&mut self, round: &Round, _acted: bool) -> Result<()> {
        let t = self.inner.state().round + 1;
        let pi = self.policy.pi_at(t);
        // Always draw so the coin sequence does not depend on pi's history.
        let u: f64 = self.coins.gen();
        let coin = u < pi;
        self.last_coin = Some(coin);
        let x_tilde = if coin {
            self.calls += 1;
            sparse_increment(true, pi, increment(true, round.verifier_pass, self.inner.config().alpha).value())
        } else {
            0.0
        };
        self.inner.observe_increment(round.score, Some(x_tilde), self.cap)
    }

    fn certifications(&self) -> Vec<CertEvent> {
        self.inner.state().cert_events()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSummary {
    pub rounds: u64,
    pub verifier_calls: u64,
    pub certified: usize,
    pub first_cert_round: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SparseRunOutput {
    pub trace: Vec<RoundRecord>,
    pub summary: SparseSummary,
    pub certifications: Vec<CertEvent>,
}

pub fn run_stream_sparse<I: IntoIterator<Item = Round>>(
    config: &ControllerConfig,
    policy: &SparsePolicy,
    stream: I,
    seed: u64,
) -> Result<SparseRunOutput> {
    let mut ctl = SparseController::new(config.clone(), policy.clone(), seed)?;
    let mut trace = Vec::new();
    for round in stream {
        let decision = ctl.decide(round.score);
        ctl.observe(&round, decision.acted)?;
        trace.push(RoundRecord {
            t: ctl.inner.state().round,
            score: round.score,
            deployed_q: decision.deployed_q,
            acted: decision.acted,
            verifier_pass: round.verifier_pass,
            coin: ctl.last_coin,
        });
    }
    let st = ctl.inner.state();
    Ok(SparseRunOutput {
        summary: SparseSummary {
            rounds: st.round,
            verifier_calls: ctl.calls,
            certified: st.certified_count(),
            first_cert_round: st.cert_round.iter().flatten().copied().min(),
        },
        certifications: ctl.certifications(),
        trace,
    })
}
