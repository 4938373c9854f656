//! Single-epoch selective-acting controller.
//!
//! Every round the controller releases iff a certified cutoff exists and the
//! score is at or below the largest one. The verifier outcome is then fed to
//! every threshold whose gate is open (`q >= score`), whether or not the round
//! was released, and certifications are refreshed.

use serde::{Deserialize, Serialize};

use crate::eprocess::{certification_level, dense_bet_cap, increment, BetRule, ThresholdGrid, ThresholdState};
use crate::error::{check_unit_open, CsaError, Result};
use crate::streams::Round;

/// How the total error budget `delta` is split across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScheme {
    /// `delta / (2m)` per threshold.
    #[default]
    EqualHalved,
    /// `delta / m` per threshold.
    Equal,
}

impl BudgetScheme {
    pub fn per_threshold(self, delta: f64, m: usize) -> f64 {
        match self {
            BudgetScheme::EqualHalved => delta / (2.0 * m as f64),
            BudgetScheme::Equal => delta / m as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub alpha: f64,
    pub delta: f64,
    pub grid: ThresholdGrid,
    #[serde(default)]
    pub budget_scheme: BudgetScheme,
    /// Accepted rounds excluded from pathwise evaluation.
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default)]
    pub bet: BetRule,
}

impl ControllerConfig {
    pub fn new(alpha: f64, delta: f64, grid: ThresholdGrid) -> Self {
        Self {
            alpha,
            delta,
            grid,
            budget_scheme: BudgetScheme::default(),
            burn_in: 0,
            bet: BetRule::Adaptive,
        }
    }

    /// Desk-scale defaults: alpha 0.30, delta 0.05, grid `i/21`, burn-in 500.
    pub fn stationary_default() -> Self {
        let mut cfg = Self::new(0.30, 0.05, ThresholdGrid::uniform(20).expect("static grid"));
        cfg.burn_in = 500;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_open("alpha", self.alpha)?;
        check_unit_open("delta", self.delta)?;
        self.bet.validate(self.alpha)
    }

    pub fn delta_q(&self) -> f64 {
        self.budget_scheme.per_threshold(self.delta, self.grid.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub thresholds: Vec<ThresholdState>,
    /// Index of the deployed cutoff; `None` abstains on everything.
    pub deployed: Option<usize>,
    /// Round (1-based, global) at which each threshold was certified.
    pub cert_round: Vec<Option<u64>>,
    /// Rounds observed so far.
    pub round: u64,
    /// 1-based epoch index.
    pub epoch: u32,
}

impl ControllerState {
    pub fn initial(m: usize) -> Self {
        Self {
            thresholds: vec![ThresholdState::default(); m],
            deployed: None,
            cert_round: vec![None; m],
            round: 0,
            epoch: 1,
        }
    }

    pub fn certified_count(&self) -> usize {
        self.thresholds.iter().filter(|s| s.certified).count()
    }

    pub fn decide(&self, grid: &ThresholdGrid, score: f64) -> Decision {
        let deployed_q = self.deployed.and_then(|i| grid.get(i));
        Decision {
            acted: deployed_q.is_some_and(|q| score <= q),
            deployed_q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub acted: bool,
    pub deployed_q: Option<f64>,
}

/// One round of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub score: f64,
    pub deployed_q: Option<f64>,
    pub acted: bool,
    pub verifier_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coin: Option<bool>,
}

/// The shared round protocol: decide on the score, then learn from the round.
pub trait ReleasePolicy {
    fn decide(&self, score: f64) -> Decision;

    fn observe(&mut self, round: &Round, acted: bool) -> Result<()>;

    /// Every certification made so far, for policies that certify.
    fn certifications(&self) -> Vec<CertEvent> {
        Vec::new()
    }
}

/// Threshold `index` became certified at global round `round`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertEvent {
    pub index: usize,
    pub round: u64,
}

impl ControllerState {
    pub fn cert_events(&self) -> Vec<CertEvent> {
        let mut events: Vec<CertEvent> = self
            .cert_round
            .iter()
            .enumerate()
            .filter_map(|(index, r)| r.map(|round| CertEvent { index, round }))
            .collect();
        events.sort_by_key(|e| (e.round, e.index));
        events
    }
}

/// Runs any policy over a stream and records the trace.
pub fn run_policy<P, I>(policy: &mut P, stream: I) -> Result<Vec<RoundRecord>>
where
    P: ReleasePolicy + ?Sized,
    I: IntoIterator<Item = Round>,
{
    let mut trace = Vec::new();
    for (i, round) in stream.into_iter().enumerate() {
        let decision = policy.decide(round.score);
        policy.observe(&round, decision.acted)?;
        trace.push(RoundRecord {
            t: i as u64 + 1,
            score: round.score,
            deployed_q: decision.deployed_q,
            acted: decision.acted,
            verifier_pass: round.verifier_pass,
            coin: None,
        });
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    delta_q: f64,
    level: f64,
    state: ControllerState,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        let delta_q = config.delta_q();
        Self::with_budget(config, delta_q)
    }

    /// Controller with an explicit per-threshold budget, ignoring the scheme.
    pub fn with_budget(config: ControllerConfig, delta_q: f64) -> Result<Self> {
        config.validate()?;
        check_unit_open("delta_q", delta_q)?;
        let m = config.grid.len();
        Ok(Self {
            delta_q,
            level: certification_level(delta_q),
            state: ControllerState::initial(m),
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn into_state(self) -> ControllerState {
        self.state
    }

    pub fn delta_q(&self) -> f64 {
        self.delta_q
    }

    pub fn decide(&self, score: f64) -> Decision {
        self.state.decide(&self.config.grid, score)
    }

    /// Feeds one verifier outcome to every open threshold.
    pub fn observe(&mut self, score: f64, verifier_pass: bool) -> Result<()> {
        let x = increment(true, verifier_pass, self.config.alpha).value();
        let cap = dense_bet_cap(self.config.alpha);
        self.observe_increment(score, Some(x), cap)
    }

    /// Advances one round. `x = None` means the round carries no update (its
    /// gate-open thresholds are left untouched); otherwise every threshold
    /// with `q >= score` receives increment `x` with bets clipped to `cap`.
    pub(crate) fn observe_increment(&mut self, score: f64, x: Option<f64>, cap: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CsaError::param("score", format!("must lie in [0, 1], got {score}")));
        }
        self.state.round += 1;
        let Some(x) = x else {
            return Ok(());
        };
        let alpha = self.config.alpha;
        let bet = self.config.bet;
        let start = self.config.grid.first_open(score);
        let round = self.state.round;
        for (k, th) in self.state.thresholds.iter_mut().enumerate().skip(start) {
            let lambda = bet.bet(th.sum_x, th.n, alpha, cap);
            th.update(lambda, x)?;
            if !th.certified && th.log_e >= self.level {
                th.certified = true;
                self.state.cert_round[k] = Some(round);
            }
        }
        self.state.deployed = self.state.thresholds.iter().rposition(|s| s.certified);
        Ok(())
    }

    /// Clears every threshold and moves to the next epoch with a new budget.
    pub fn reset(&mut self, delta_q: f64) -> Result<()> {
        check_unit_open("delta_q", delta_q)?;
        let m = self.config.grid.len();
        let round = self.state.round;
        let epoch = self.state.epoch + 1;
        self.state = ControllerState {
            round,
            epoch,
            ..ControllerState::initial(m)
        };
        self.delta_q = delta_q;
        self.level = certification_level(delta_q);
        Ok(())
    }
}

impl ReleasePolicy for Controller {
    fn decide(&self, score: f64) -> Decision {
        Controller::decide(self, score)
    }

    fn observe(&mut self, round: &Round, _acted: bool) -> Result<()> {
        Controller::observe(self, round.score, round.verifier_pass)
    }

    fn certifications(&self) -> Vec<CertEvent> {
        self.state.cert_events()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<RoundRecord>,
    pub final_state: ControllerState,
}

pub fn run_stream<I: IntoIterator<Item = Round>>(config: &ControllerConfig, stream: I) -> Result<RunOutput> {
    let mut ctl = Controller::new(config.clone())?;
    let trace = run_policy(&mut ctl, stream)?;
    Ok(RunOutput {
        trace,
        final_state: ctl.into_state(),
    })
}

/// Rebuilds the final state by feeding a recorded trace back through `observe`.
pub fn replay_trace(config: &ControllerConfig, trace: &[RoundRecord]) -> Result<ControllerState> {
    let mut ctl = Controller::new(config.clone())?;
    for rec in trace {
        ctl.observe(rec.score, rec.verifier_pass)?;
    }
    Ok(ctl.into_state())
}
