//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are fixed below.

use std::process::ExitCode;
use std::time::Instant;

use csa_core::controller::{run_policy, Controller, ControllerConfig};
use csa_core::epoch::{epoch_budget, run_stream_epoch, EpochSchedule};
use csa_core::eprocess::{adaptive_bet, increment, ThresholdState};
use csa_core::runner::{preset, run_experiment, ConditionResult, ResultBundle};
use csa_core::seeds::{replication_seed, rng_for, Purpose};
use csa_core::streams::StreamSpec;
use csa_core::{Round, ThresholdGrid};
use rand::Rng;

const PP: f64 = 0.01;
const RISK_TOL: f64 = 2.0 * PP;
const AR_TOL: f64 = 5.0 * PP;
const ALPHA: f64 = 0.30;
const DELTA: f64 = 0.05;

const C1_RISK: f64 = 0.191;
const C1_AR: f64 = 0.598;
const C1_MAX: f64 = 0.26;

const C3_RISK: f64 = 0.190;
const C3_AR: f64 = 0.598;
const C3_CERT: f64 = 14.0;
const C3_CERT_TOL: f64 = 1.5;
const C3_DELAY: f64 = 337.0;
const C3_DELAY_REL: f64 = 0.40;

const C4_RISK: [f64; 4] = [0.167, 0.195, 0.204, 0.207];
const C4_AR: [f64; 4] = [0.581, 0.602, 0.606, 0.607];

const C5_RISK: [f64; 7] = [0.118, 0.143, 0.175, 0.191, 0.190, 0.189, 0.187];

const C6_RISK: [f64; 6] = [0.191, 0.196, 0.201, 0.205, 0.211, 0.217];
const C6_AR: [f64; 6] = [0.598, 0.563, 0.520, 0.463, 0.401, 0.350];

const C7_SLOPE: (f64, f64) = (-2.5, -1.5);

const C8_BAND: (f64, f64) = (0.6, 1.6);
const C8_T: f64 = 3000.0;

const C9_EPOCHS: u32 = 10_000;

const C10_ACI_MIN: usize = 5;
const C10_BASE_TOL: f64 = 1.0 * PP;

const C11_PATHS: usize = 10_000;
const C11_LEN: usize = 3000;

const C12_ROUNDS: usize = 1_000_000;
const C12_BUDGET_US: f64 = 50.0;

struct Outcome {
    pass: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            detail: String::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            self.pass = false;
            self.notes.push(format!("miss: {what}"));
        }
    }

    fn info(&mut self, what: String) {
        self.notes.push(what);
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol + 1e-12
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn run(name: &str) -> ResultBundle {
    run_experiment(&preset(name).expect("preset"), None).expect("run")
}

fn label<'a>(c: &'a ConditionResult, key: &str) -> &'a str {
    c.labels.iter().find(|l| l.key == key).map_or("", |l| l.value.as_str())
}

fn c1() -> Outcome {
    let b = run("stationary");
    let a = &b.conditions[0].aggregate;
    let mut o = Outcome::new();
    o.check(within(a.risk.mean, C1_RISK, RISK_TOL), format!("mean risk {} vs {}", pct(a.risk.mean), pct(C1_RISK)));
    o.check(a.risk_max <= C1_MAX, format!("max final risk {} > {}", pct(a.risk_max), pct(C1_MAX)));
    o.check(within(a.action_rate.mean, C1_AR, AR_TOL), format!("AR {} vs {}", pct(a.action_rate.mean), pct(C1_AR)));
    o.check(a.pathv_strict_count == 0, format!("strict PathV {}/{}", a.pathv_strict_count, a.n_runs));
    o.detail = format!(
        "risk {} max {} AR {} PathV {}/{} (post-burn-in max running risk {})",
        pct(a.risk.mean),
        pct(a.risk_max),
        pct(a.action_rate.mean),
        a.pathv_strict_count,
        a.n_runs,
        pct(a.max_risk_max.unwrap_or(0.0))
    );
    o
}

fn c2() -> Outcome {
    let b = run("false_cert");
    let a = &b.conditions[0].aggregate;
    let events = a.false_certs_total.expect("oracle stream");
    let bound = (DELTA * a.n_runs as f64).floor() as u64;
    let mut o = Outcome::new();
    o.check(events <= bound, format!("{events} false certifications > {bound}"));
    o.detail = format!("{events} false certifications over {} seeds (bound {bound}, expected 0)", a.n_runs);
    o
}

fn c3() -> Outcome {
    let b = run("ablation_lambda");
    let mut o = Outcome::new();
    let mut parts = Vec::new();
    for c in &b.conditions {
        let lam = label(c, "lambda");
        let a = &c.aggregate;
        let delay = a.mean_delay.map(|e| e.mean);
        parts.push(format!(
            "{lam}: {}/{}/{:.1}/{}",
            pct(a.risk.mean),
            pct(a.action_rate.mean),
            a.certified.mean,
            delay.map_or("-".into(), |d| format!("{d:.0}"))
        ));
        let full = |o: &mut Outcome| {
            o.check(within(a.risk.mean, C3_RISK, RISK_TOL), format!("{lam} risk {}", pct(a.risk.mean)));
            o.check(within(a.action_rate.mean, C3_AR, AR_TOL), format!("{lam} AR {}", pct(a.action_rate.mean)));
            o.check(within(a.certified.mean, C3_CERT, C3_CERT_TOL), format!("{lam} certified {:.2}", a.certified.mean));
            o.check(
                delay.is_some_and(|d| within(d, C3_DELAY, C3_DELAY_REL * C3_DELAY)),
                format!("{lam} mean delay {delay:?}"),
            );
        };
        match lam {
            "adaptive" | "0.5" => full(&mut o),
            "0.01" => o.check(a.certified.mean == 0.0, format!("0.01 certified {:.2}", a.certified.mean)),
            _ => {}
        }
    }
    o.detail = format!("risk/AR/certified/delay {}", parts.join("; "));
    o
}

fn c4() -> Outcome {
    let b = run("ablation_grid");
    let mut o = Outcome::new();
    let mut parts = Vec::new();
    for (i, c) in b.conditions.iter().enumerate() {
        let m = label(c, "m");
        let a = &c.aggregate;
        let fcr = a.false_certs_total.unwrap_or(u64::MAX);
        parts.push(format!("m={m}: {}/{} FCR {fcr}", pct(a.risk.mean), pct(a.action_rate.mean)));
        o.check(within(a.risk.mean, C4_RISK[i], RISK_TOL), format!("m={m} risk {} vs {}", pct(a.risk.mean), pct(C4_RISK[i])));
        o.check(
            within(a.action_rate.mean, C4_AR[i], AR_TOL),
            format!("m={m} AR {} vs {}", pct(a.action_rate.mean), pct(C4_AR[i])),
        );
        o.check(fcr == 0, format!("m={m} false certifications {fcr}"));
    }
    o.detail = parts.join("; ");
    o
}

fn c5() -> Outcome {
    let b = run("stress_bias");
    let mut o = Outcome::new();
    let mut parts = Vec::new();
    for (i, c) in b.conditions.iter().enumerate() {
        let bias = label(c, "b");
        let r = c.aggregate.risk.mean;
        parts.push(format!("b={bias}: {}", pct(r)));
        o.check(within(r, C5_RISK[i], RISK_TOL), format!("b={bias} risk {} vs {}", pct(r), pct(C5_RISK[i])));
        o.check(r <= ALPHA, format!("b={bias} risk {} above alpha", pct(r)));
    }
    o.detail = parts.join("; ");
    o
}

fn c6() -> Outcome {
    let b = run("stress_noise");
    let mut o = Outcome::new();
    let mut parts = Vec::new();
    for (i, c) in b.conditions.iter().enumerate() {
        let p = label(c, "p");
        let a = &c.aggregate;
        parts.push(format!("p={p}: {}/{}", pct(a.risk.mean), pct(a.action_rate.mean)));
        o.check(within(a.risk.mean, C6_RISK[i], RISK_TOL), format!("p={p} risk {} vs {}", pct(a.risk.mean), pct(C6_RISK[i])));
        o.check(
            within(a.action_rate.mean, C6_AR[i], AR_TOL),
            format!("p={p} AR {} vs {}", pct(a.action_rate.mean), pct(C6_AR[i])),
        );
    }
    o.detail = format!("risk/AR {}", parts.join("; "));
    o
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn c7() -> Outcome {
    let b = run("delay_rate");
    let rows = &b.conditions[0].thresholds;
    let mut o = Outcome::new();
    let mut all = Vec::new();
    let mut noisy = Vec::new();
    let tau = 0.5;
    for r in rows {
        let (Some(delay), Some(bound)) = (r.mean_delay, r.bound) else {
            continue;
        };
        o.check(delay <= bound, format!("q={:.4} delay {delay:.0} > bound {bound:.0}", r.q));
        all.push((r.margin.ln(), delay.ln()));
        if r.q > tau {
            noisy.push((r.margin.ln(), delay.ln()));
        }
    }
    let s = slope(&all);
    o.check(
        (C7_SLOPE.0..=C7_SLOPE.1).contains(&s),
        format!("slope {s:.2} outside [{}, {}]", C7_SLOPE.0, C7_SLOPE.1),
    );
    o.info(format!("diagnostic: slope over q > tau only = {:.2} ({} points)", slope(&noisy), noisy.len()));
    o.detail = format!("slope {s:.2} over {} safe grid points; all delays within bound: {}", all.len(), {
        rows.iter().all(|r| r.mean_delay.zip(r.bound).is_none_or(|(d, b)| d <= b))
    });
    o
}

fn c8() -> Outcome {
    let b = run("sparse_sweep");
    let mut o = Outcome::new();
    let base = b.conditions[0].aggregate.first_cert.expect("dense run certifies").mean;
    let mut parts = Vec::new();
    for c in &b.conditions {
        let pi: f64 = label(c, "pi").parse().expect("numeric pi");
        let a = &c.aggregate;
        parts.push(format!("pi={pi}: x{:.2} risk {}", a.first_cert.map_or(f64::NAN, |e| e.mean / base), pct(a.risk.mean)));
        o.check(a.risk.mean <= ALPHA, format!("pi={pi} risk {}", pct(a.risk.mean)));
        let sd = (pi * (1.0 - pi) * C8_T).sqrt();
        for s in &c.summaries {
            let calls = s.verifier_calls.expect("sparse run") as f64;
            o.check((calls - pi * C8_T).abs() <= 3.0 * sd + 1e-9, format!("pi={pi} calls {calls}"));
        }
        if pi < 1.0 {
            let mult = a.first_cert.map_or(f64::INFINITY, |e| e.mean / base);
            o.check(
                mult >= C8_BAND.0 / pi && mult <= C8_BAND.1 / pi,
                format!("pi={pi} multiplier {mult:.2} outside [{:.2}, {:.2}]", C8_BAND.0 / pi, C8_BAND.1 / pi),
            );
        }
    }
    o.detail = parts.join("; ");
    o
}

fn c9() -> Outcome {
    let mut o = Outcome::new();
    let (m, delta) = (20usize, DELTA);
    let mut total = 0.0;
    for j in 1..=C9_EPOCHS {
        total += (0..m).map(|_| epoch_budget(j, m, delta)).sum::<f64>();
    }
    o.check(total < delta, format!("partial sum {total} >= {delta}"));
    let cfg = ControllerConfig::stationary_default();
    let mut identical = 0;
    for rep in 0..10 {
        let rounds = StreamSpec::stationary(0.5, 3000).build(replication_seed(99, rep)).expect("stream");
        let epoch = run_stream_epoch(&cfg, &EpochSchedule::single(), rounds.clone()).expect("epoch run");
        let mut plain = Controller::with_budget(cfg.clone(), epoch_budget(1, m, delta)).expect("controller");
        let trace = run_policy(&mut plain, rounds).expect("run");
        identical += usize::from(trace == epoch.trace);
    }
    o.check(identical == 10, format!("single-epoch traces identical in {identical}/10 seeds"));
    o.detail = format!("sum over {C9_EPOCHS} epochs = {total:.12} < {delta}; single-epoch equivalence {identical}/10");
    o
}

fn c10() -> Outcome {
    let cfg = preset("shift_orderings").expect("preset");
    let b = run_experiment(&cfg, None).expect("run");
    let mut o = Outcome::new();
    let cell = |m: &str| {
        b.conditions
            .iter()
            .find(|c| label(c, "ordering") == "easy_hard" && label(c, "method") == m)
            .expect("cell")
    };
    let count = |m: &str| cell(m).summaries.iter().filter(|s| s.pathv_strict).count();
    let (csa, always, aci) = (count("csa"), count("always_act"), count("aci"));
    let n = cell("csa").summaries.len();
    o.check(csa == 0, format!("CSA strict PathV {csa}/{n}"));
    o.check(always == n, format!("Always-Act strict PathV {always}/{n}"));
    o.check(aci >= C10_ACI_MIN, format!("ACI strict PathV {aci}/{n}"));
    // Base failure rate of each replication's stream, computed from the data.
    let spec = csa_core::runner::ExperimentConfig::resolve(&cfg).expect("resolve");
    let easy = spec
        .iter()
        .find(|r| r.labels.iter().any(|l| l.value == "easy_hard") && r.method.name() == "always_act")
        .expect("resolved cell");
    let mut worst: f64 = 0.0;
    for (s, &seed) in cell("always_act").summaries.iter().zip(&b.provenance.seeds) {
        let rounds = easy.stream.build(seed).expect("stream");
        let base = rounds.iter().filter(|r| !r.verifier_pass).count() as f64 / rounds.len() as f64;
        worst = worst.max((s.final_risk - base).abs());
    }
    o.check(worst <= C10_BASE_TOL, format!("Always-Act risk off base rate by {}", pct(worst)));
    o.info(format!("final risk: CSA {} Always-Act {} ACI {}", pct(cell("csa").aggregate.risk.mean), pct(cell("always_act").aggregate.risk.mean), pct(cell("aci").aggregate.risk.mean)));
    o.detail = format!("easy_hard strict PathV: CSA {csa}/{n}, Always-Act {always}/{n}, ACI {aci}/{n}; Always-Act vs base rate max gap {}", pct(worst));
    o
}

fn c11() -> Outcome {
    let mut o = Outcome::new();
    let mut parts = Vec::new();
    for delta in [0.05f64, 0.1] {
        let level = (1.0 / delta).ln();
        let mut crossed = 0usize;
        for path in 0..C11_PATHS {
            let mut rng = rng_for(replication_seed(11, path as u64), Purpose::Data);
            let mut st = ThresholdState::default();
            for _ in 0..C11_LEN {
                let fail = rng.gen::<f64>() < ALPHA;
                let x = increment(true, !fail, ALPHA).value();
                let lam = adaptive_bet(st.sum_x, st.n, ALPHA);
                st.update(lam, x).expect("positive factor");
                if st.log_e >= level {
                    crossed += 1;
                    break;
                }
            }
        }
        let freq = crossed as f64 / C11_PATHS as f64;
        let sigma = (delta * (1.0 - delta) / C11_PATHS as f64).sqrt();
        o.check(freq <= delta + 3.0 * sigma, format!("delta={delta} crossing freq {freq:.4}"));
        parts.push(format!("delta={delta}: {freq:.4} <= {:.4}", delta + 3.0 * sigma));
    }
    o.detail = format!("sup-crossing frequency over {C11_PATHS} paths x {C11_LEN} rounds: {}", parts.join("; "));
    o
}

fn c12() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ControllerConfig::new(ALPHA, DELTA, ThresholdGrid::uniform(15).expect("grid"));
    let mut ctl = Controller::new(cfg).expect("controller");
    let mut rng = rng_for(12, Purpose::Data);
    let rounds: Vec<Round> = (0..C12_ROUNDS)
        .map(|_| {
            let s: f64 = rng.gen();
            Round::new(s, s < 0.5)
        })
        .collect();
    let start = Instant::now();
    let mut acted = 0u64;
    for r in &rounds {
        acted += u64::from(ctl.decide(r.score).acted);
        ctl.observe(r.score, r.verifier_pass).expect("observe");
    }
    let us = start.elapsed().as_secs_f64() * 1e6 / C12_ROUNDS as f64;
    o.check(us < C12_BUDGET_US, format!("{us:.3} us per round"));
    o.detail = format!("{us:.3} us per decide+observe round at m=15 over {C12_ROUNDS} rounds ({acted} released)");
    o
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("C1  risk control", c1),
        ("C2  no false certification", c2),
        ("C3  adaptive vs fixed bet", c3),
        ("C4  grid-size ablation", c4),
        ("C5  surrogate-bias stress", c5),
        ("C6  noisy-verifier stress", c6),
        ("C7  certification-delay rate", c7),
        ("C8  sparse-verifier scaling", c8),
        ("C9  epoch budget conservation", c9),
        ("C10 baseline separation", c10),
        ("C11 Ville crossing frequency", c11),
        ("C12 per-round cost", c12),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        for n in &o.notes {
            println!("       {n}");
        }
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
