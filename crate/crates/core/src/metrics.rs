//! Per-run and aggregate metrics over round traces.

use serde::{Deserialize, Serialize};

use crate::controller::{CertEvent, RoundRecord};
use crate::eprocess::ThresholdGrid;
use crate::error::{CsaError, Result};
use crate::streams::Oracle;

/// Streaming selective-risk counter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RiskAccumulator {
    pub released: u64,
    pub failed: u64,
}

impl RiskAccumulator {
    pub fn push(&mut self, acted: bool, verifier_pass: bool) {
        if acted {
            self.released += 1;
            self.failed += u64::from(!verifier_pass);
        }
    }

    pub fn risk(&self) -> f64 {
        self.failed as f64 / self.released.max(1) as f64
    }
}

/// `(R, N)`: failure rate among released rounds and the release count.
pub fn selective_risk(trace: &[RoundRecord]) -> (f64, u64) {
    let mut acc = RiskAccumulator::default();
    for r in trace {
        acc.push(r.acted, r.verifier_pass);
    }
    (acc.risk(), acc.released)
}

/// Running `(N_t, R_t)` after every round.
pub fn running_risk(trace: &[RoundRecord]) -> Vec<(u64, f64)> {
    let mut acc = RiskAccumulator::default();
    trace
        .iter()
        .map(|r| {
            acc.push(r.acted, r.verifier_pass);
            (acc.released, acc.risk())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathMode {
    /// Crossing of `alpha` itself.
    Strict,
    /// Crossing of `alpha + sqrt(ln(1/delta) / N_t)`.
    Slack { delta: f64 },
}

impl PathMode {
    fn bound(self, alpha: f64, n: u64) -> f64 {
        match self {
            PathMode::Strict => alpha,
            PathMode::Slack { delta } => alpha + ((1.0 / delta).ln() / n.max(1) as f64).sqrt(),
        }
    }
}

/// Whether the running risk exceeds the bound at some round with `N_t >= burn_in`.
pub fn pathwise_violation(trace: &[RoundRecord], alpha: f64, burn_in: u64, mode: PathMode) -> bool {
    running_risk(trace)
        .into_iter()
        .any(|(n, r)| n >= burn_in.max(1) && r > mode.bound(alpha, n))
}

/// Largest running risk over rounds with `N_t >= burn_in`, if any.
pub fn max_running_risk(trace: &[RoundRecord], burn_in: u64) -> Option<f64> {
    running_risk(trace)
        .into_iter()
        .filter(|&(n, _)| n >= burn_in.max(1))
        .map(|(_, r)| r)
        .reduce(f64::max)
}

/// Certifications of thresholds that were unsafe at their certification round.
pub fn false_certifications(events: &[CertEvent], grid: &ThresholdGrid, oracle: &Oracle, alpha: f64) -> u64 {
    events
        .iter()
        .filter(|e| grid.get(e.index).is_some_and(|q| !oracle.is_safe(q, alpha, e.round)))
        .count() as u64
}

/// Releases the oracle grid cutoff would have made minus the releases made.
pub fn utility_gap(trace: &[RoundRecord], grid: &ThresholdGrid, oracle: &Oracle, alpha: f64) -> i64 {
    trace
        .iter()
        .map(|r| {
            let opt = oracle
                .grid_frontier(grid, alpha, r.t)
                .and_then(|k| grid.get(k))
                .is_some_and(|q| r.score <= q);
            i64::from(opt) - i64::from(r.acted)
        })
        .sum()
}

/// What a summary needs beyond the trace.
#[derive(Debug, Clone, Copy)]
pub struct MetricContext<'a> {
    pub alpha: f64,
    pub delta: f64,
    pub burn_in: u64,
    pub grid: Option<&'a ThresholdGrid>,
    pub oracle: Option<&'a Oracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    pub final_risk: f64,
    pub n_released: u64,
    pub action_rate: f64,
    pub pathv_strict: bool,
    pub pathv_slack: bool,
    pub max_risk: Option<f64>,
    pub certified: usize,
    /// First certification round per grid threshold.
    pub first_cert_round: Vec<Option<u64>>,
    pub false_certs: Option<u64>,
    pub gap: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_calls: Option<u64>,
}

impl RunSummary {
    /// Earliest certification of any threshold.
    pub fn first_cert(&self) -> Option<u64> {
        self.first_cert_round.iter().flatten().copied().min()
    }

    /// Mean certification round over thresholds that certified.
    pub fn mean_cert_delay(&self) -> Option<f64> {
        let rounds: Vec<u64> = self.first_cert_round.iter().flatten().copied().collect();
        (!rounds.is_empty()).then(|| rounds.iter().sum::<u64>() as f64 / rounds.len() as f64)
    }
}

pub fn summarize(trace: &[RoundRecord], certs: &[CertEvent], ctx: &MetricContext<'_>) -> RunSummary {
    let (final_risk, n) = selective_risk(trace);
    let rounds = trace.len() as u64;
    let m = ctx.grid.map_or(0, ThresholdGrid::len);
    let mut first = vec![None; m];
    for e in certs {
        if let Some(slot) = first.get_mut(e.index) {
            if slot.is_none_or(|r| e.round < r) {
                *slot = Some(e.round);
            }
        }
    }
    let with_oracle = ctx.grid.zip(ctx.oracle);
    RunSummary {
        rounds,
        final_risk,
        n_released: n,
        action_rate: n as f64 / rounds.max(1) as f64,
        pathv_strict: pathwise_violation(trace, ctx.alpha, ctx.burn_in, PathMode::Strict),
        pathv_slack: pathwise_violation(trace, ctx.alpha, ctx.burn_in, PathMode::Slack { delta: ctx.delta }),
        max_risk: max_running_risk(trace, ctx.burn_in),
        certified: first.iter().filter(|f| f.is_some()).count(),
        first_cert_round: first,
        false_certs: with_oracle.map(|(g, o)| false_certifications(certs, g, o, ctx.alpha)),
        gap: with_oracle.map(|(g, o)| utility_gap(trace, g, o, ctx.alpha)),
        verifier_calls: trace
            .first()
            .and_then(|r| r.coin)
            .map(|_| trace.iter().filter(|r| r.coin == Some(true)).count() as u64),
    }
}

/// Mean and 95% normal half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci: f64,
}

fn estimate(xs: &[f64]) -> Option<Estimate> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ci = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Some(Estimate { mean, ci })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub risk: Estimate,
    pub risk_max: f64,
    pub action_rate: Estimate,
    pub pathv_strict_frac: f64,
    pub pathv_slack_frac: f64,
    pub pathv_strict_count: usize,
    pub max_risk_max: Option<f64>,
    pub certified: Estimate,
    /// Mean over runs of each run's mean certification round.
    pub mean_delay: Option<Estimate>,
    /// Mean over runs of the earliest certification round.
    pub first_cert: Option<Estimate>,
    pub false_certs_total: Option<u64>,
    pub gap: Option<Estimate>,
    pub verifier_calls: Option<Estimate>,
}

pub fn aggregate(summaries: &[RunSummary]) -> Result<Aggregate> {
    if summaries.is_empty() {
        return Err(CsaError::Degenerate("cannot aggregate zero runs".into()));
    }
    let col = |f: &dyn Fn(&RunSummary) -> f64| summaries.iter().map(f).collect::<Vec<f64>>();
    let opt_col = |f: &dyn Fn(&RunSummary) -> Option<f64>| summaries.iter().filter_map(f).collect::<Vec<f64>>();
    let n = summaries.len();
    let strict = summaries.iter().filter(|s| s.pathv_strict).count();
    let slack = summaries.iter().filter(|s| s.pathv_slack).count();
    let false_certs = summaries
        .iter()
        .map(|s| s.false_certs)
        .collect::<Option<Vec<u64>>>()
        .map(|v| v.iter().sum());
    Ok(Aggregate {
        n_runs: n,
        risk: estimate(&col(&|s| s.final_risk)).expect("non-empty"),
        risk_max: col(&|s| s.final_risk).into_iter().fold(f64::NEG_INFINITY, f64::max),
        action_rate: estimate(&col(&|s| s.action_rate)).expect("non-empty"),
        pathv_strict_frac: strict as f64 / n as f64,
        pathv_slack_frac: slack as f64 / n as f64,
        pathv_strict_count: strict,
        max_risk_max: opt_col(&|s| s.max_risk).into_iter().reduce(f64::max),
        certified: estimate(&col(&|s| s.certified as f64)).expect("non-empty"),
        mean_delay: estimate(&opt_col(&|s| s.mean_cert_delay())),
        first_cert: estimate(&opt_col(&|s| s.first_cert().map(|r| r as f64))),
        false_certs_total: false_certs,
        gap: estimate(&opt_col(&|s| s.gap.map(|g| g as f64))),
        verifier_calls: estimate(&opt_col(&|s| s.verifier_calls.map(|c| c as f64))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::run_stream;
    use crate::streams::StreamSpec;
    use crate::ControllerConfig;
    use proptest::prelude::*;

    fn rec(t: u64, score: f64, acted: bool, pass: bool) -> RoundRecord {
        RoundRecord {
            t,
            score,
            deployed_q: None,
            acted,
            verifier_pass: pass,
            coin: None,
        }
    }

    fn trace_of(v: &[(bool, bool)]) -> Vec<RoundRecord> {
        v.iter().enumerate().map(|(i, &(a, p))| rec(i as u64 + 1, 0.5, a, p)).collect()
    }

    #[test]
    fn risk_examples() {
        assert_eq!(selective_risk(&trace_of(&[(false, false); 5])), (0.0, 0));
        let t = trace_of(&[(true, true), (true, true), (true, false), (true, true), (false, false)]);
        assert_eq!(selective_risk(&t), (0.25, 4));
        assert_eq!(selective_risk(&trace_of(&[(true, true); 7])), (0.0, 7));
    }

    #[test]
    fn pathv_examples() {
        let below = trace_of(&[(true, true); 50]);
        assert!(!pathwise_violation(&below, 0.3, 10, PathMode::Strict));
        assert!(!pathwise_violation(&below, 0.3, 10, PathMode::Slack { delta: 0.05 }));

        // N = 100 with 35 failures: risk 0.35 = 0.3 + 0.5/sqrt(100); ln(20) > 0.25.
        let mut v = vec![(true, false); 35];
        v.extend(vec![(true, true); 65]);
        v.rotate_left(35);
        let t = trace_of(&v);
        assert_eq!(selective_risk(&t), (0.35, 100));
        assert!(pathwise_violation(&t, 0.3, 100, PathMode::Strict));
        assert!(!pathwise_violation(&t, 0.3, 100, PathMode::Slack { delta: 0.05 }));
    }

    #[test]
    fn burn_in_gates_max_risk() {
        let t = trace_of(&[(true, false), (true, true), (true, true), (true, true)]);
        assert_eq!(max_running_risk(&t, 1), Some(1.0));
        assert_eq!(max_running_risk(&t, 4), Some(0.25));
        assert_eq!(max_running_risk(&t, 5), None);
    }

    #[test]
    fn gap_examples() {
        let grid = ThresholdGrid::uniform(20).unwrap();
        let oracle = Oracle::stationary(0.5);
        let rounds = StreamSpec::stationary(0.5, 3000).build(1).unwrap();
        let abstain: Vec<RoundRecord> = rounds
            .iter()
            .enumerate()
            .map(|(i, r)| rec(i as u64 + 1, r.score, false, r.verifier_pass))
            .collect();
        let expect = rounds.iter().filter(|r| r.score <= 15.0 / 21.0).count() as i64;
        assert_eq!(utility_gap(&abstain, &grid, &oracle, 0.3), expect);
        assert!((expect as f64 / 3000.0 - 15.0 / 21.0).abs() < 0.03);
        let optimal: Vec<RoundRecord> = abstain.iter().map(|r| RoundRecord { acted: r.score <= 15.0 / 21.0, ..*r }).collect();
        assert_eq!(utility_gap(&optimal, &grid, &oracle, 0.3), 0);
    }

    #[test]
    fn false_cert_counting() {
        let grid = ThresholdGrid::uniform(20).unwrap();
        let oracle = Oracle::stationary(0.5);
        let events = [CertEvent { index: 14, round: 5 }, CertEvent { index: 15, round: 9 }, CertEvent { index: 3, round: 1 }];
        assert_eq!(false_certifications(&events, &grid, &oracle, 0.3), 1);
    }

    #[test]
    fn aggregate_examples() {
        assert!(aggregate(&[]).is_err());
        let cfg = ControllerConfig::stationary_default();
        let out = run_stream(&cfg, StreamSpec::stationary(0.5, 3000).build(2).unwrap()).unwrap();
        let grid = cfg.grid.clone();
        let oracle = Oracle::stationary(0.5);
        let ctx = MetricContext {
            alpha: 0.3,
            delta: 0.05,
            burn_in: 500,
            grid: Some(&grid),
            oracle: Some(&oracle),
        };
        let s = summarize(&out.trace, &out.final_state.cert_events(), &ctx);
        assert_eq!(s.first_cert_round, out.final_state.cert_round);
        assert_eq!(s.false_certs, Some(0));
        assert!(s.gap.unwrap() >= 0);
        let a = aggregate(std::slice::from_ref(&s)).unwrap();
        assert_eq!(a.risk.mean, s.final_risk);
        assert_eq!(a.action_rate.mean, s.action_rate);
        assert_eq!(a.risk.ci, 0.0);

        let mut s2 = s.clone();
        s2.final_risk = 0.3;
        let mut s1 = s;
        s1.final_risk = 0.1;
        let a = aggregate(&[s1, s2]).unwrap();
        assert!((a.risk.mean - 0.2).abs() < 1e-15);
        assert_eq!(a.risk_max, 0.3);
    }

    proptest! {
        #[test]
        fn streaming_matches_batch(v in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let t = trace_of(&v);
            let running = running_risk(&t);
            for k in 0..t.len() {
                prop_assert_eq!(running[k], {
                    let (r, n) = selective_risk(&t[..=k]);
                    (n, r)
                });
            }
        }

        #[test]
        fn strict_dominates_slack(v in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..200), b in 0u64..50) {
            let t = trace_of(&v);
            if !pathwise_violation(&t, 0.3, b, PathMode::Strict) {
                let slack = PathMode::Slack { delta: 0.05 };
                prop_assert!(!pathwise_violation(&t, 0.3, b, slack));
            }
        }
    }
}
