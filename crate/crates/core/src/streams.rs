//! Synthetic round streams, stress transforms and replay files.
//!
//! A round is a `(score, verifier_pass)` pair. Scores are predictable: the
//! generator draws the score first and derives the verifier outcome from it.
//! Smaller scores mean more confident.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_open, CsaError, Result};
use crate::seeds::{rng_for, Purpose};

/// Tolerance when comparing a conditional failure rate against `alpha`, so
/// that exact-boundary cutoffs such as `q* = 15/21` count as safe.
pub const SAFETY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub score: f64,
    pub verifier_pass: bool,
}

impl Round {
    pub fn new(score: f64, verifier_pass: bool) -> Self {
        Self {
            score,
            verifier_pass,
        }
    }
}

/// `s ~ Uniform(0, 1)`, pass iff `s < tau`.
#[derive(Debug, Clone)]
pub struct Stationary {
    tau: f64,
    remaining: usize,
    rng: ChaCha8Rng,
}

impl Iterator for Stationary {
    type Item = Round;

    fn next(&mut self) -> Option<Round> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let score: f64 = self.rng.gen();
        Some(Round::new(score, score < self.tau))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarySpec {
    pub tau: f64,
    pub alpha: f64,
    pub len: usize,
}

pub fn gen_stationary(spec: &StationarySpec, seed: u64) -> Result<Stationary> {
    check_unit_open("tau", spec.tau)?;
    Ok(Stationary {
        tau: spec.tau,
        remaining: spec.len,
        rng: rng_for(seed, Purpose::Data),
    })
}

/// Verifier cutoff ramps linearly from `tau0` to `tau_max` over `ramp_rounds`.
#[derive(Debug, Clone)]
pub struct Monotone {
    ramp: TauRamp,
    t: u64,
    len: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRamp {
    pub tau0: f64,
    pub tau_max: f64,
    pub ramp_rounds: u64,
}

impl TauRamp {
    /// Cutoff in force at 1-based round `t`.
    pub fn tau_at(&self, t: u64) -> f64 {
        if self.ramp_rounds == 0 {
            return self.tau_max;
        }
        let frac = (t as f64 / self.ramp_rounds as f64).min(1.0);
        self.tau0 + (self.tau_max - self.tau0) * frac
    }
}

impl Iterator for Monotone {
    type Item = Round;

    fn next(&mut self) -> Option<Round> {
        if self.t >= self.len {
            return None;
        }
        self.t += 1;
        let score: f64 = self.rng.gen();
        Some(Round::new(score, score < self.ramp.tau_at(self.t)))
    }
}

pub fn gen_monotone(tau0: f64, tau_max: f64, ramp_rounds: u64, len: usize, seed: u64) -> Result<Monotone> {
    check_unit_open("tau0", tau0)?;
    check_unit_open("tau_max", tau_max)?;
    if tau_max < tau0 {
        return Err(CsaError::param("tau_max", "must be >= tau0 for a monotone ramp"));
    }
    Ok(Monotone {
        ramp: TauRamp {
            tau0,
            tau_max,
            ramp_rounds,
        },
        t: 0,
        len: len as u64,
        rng: rng_for(seed, Purpose::Data),
    })
}

pub fn clip_score(score: f64) -> f64 {
    score.clamp(0.01, 0.99)
}

/// Adds a constant bias to every score, clipped to `[0.01, 0.99]`. The
/// verifier outcome is untouched.
pub fn apply_bias<I: Iterator<Item = Round>>(stream: I, b: f64) -> impl Iterator<Item = Round> {
    stream.map(move |r| {
        if b == 0.0 {
            r
        } else {
            Round::new(clip_score(r.score + b), r.verifier_pass)
        }
    })
}

/// Flips each verifier outcome independently with probability `p`.
pub fn apply_flip<I: Iterator<Item = Round>>(
    stream: I,
    p: f64,
    seed: u64,
) -> Result<impl Iterator<Item = Round>> {
    if !(0.0..=0.5).contains(&p) {
        return Err(CsaError::param("p", format!("flip probability must lie in [0, 0.5], got {p}")));
    }
    let mut rng = rng_for(seed, Purpose::VerifierNoise);
    Ok(stream.map(move |r| {
        // One draw per round keeps the noise sequence aligned across p values.
        let u: f64 = rng.gen();
        if u < p {
            Round::new(r.score, !r.verifier_pass)
        } else {
            r
        }
    }))
}

/// Adversarial re-orderings of a finite round set.
///
/// These constructions are fixed stand-ins for named shift cells:
/// `EasyHard` sorts by ascending score, `QuartileRev` emits score quartiles
/// from hardest to easiest (shuffled inside each quartile), and
/// `WindowOutrun` alternates windows of [`WINDOW_WIDTH`] rounds drawn from the
/// lower and upper score halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Iid,
    EasyHard,
    QuartileRev,
    WindowOutrun,
}

pub const WINDOW_WIDTH: usize = 100;

impl Ordering {
    pub const ALL: [Ordering; 4] = [
        Ordering::Iid,
        Ordering::EasyHard,
        Ordering::QuartileRev,
        Ordering::WindowOutrun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ordering::Iid => "iid",
            Ordering::EasyHard => "easy_hard",
            Ordering::QuartileRev => "quartile_rev",
            Ordering::WindowOutrun => "window_outrun",
        }
    }
}

fn sort_by_score(records: &mut [Round]) {
    records.sort_by(|a, b| a.score.total_cmp(&b.score));
}

pub fn apply_ordering(mut records: Vec<Round>, ordering: Ordering, seed: u64) -> Vec<Round> {
    let mut rng = rng_for(seed, Purpose::Ordering);
    match ordering {
        Ordering::Iid => {
            records.shuffle(&mut rng);
            records
        }
        Ordering::EasyHard => {
            sort_by_score(&mut records);
            records
        }
        Ordering::QuartileRev => {
            sort_by_score(&mut records);
            let n = records.len();
            let mut out = Vec::with_capacity(n);
            for k in (0..4).rev() {
                let mut block = records[k * n / 4..(k + 1) * n / 4].to_vec();
                block.shuffle(&mut rng);
                out.extend(block);
            }
            out
        }
        Ordering::WindowOutrun => {
            sort_by_score(&mut records);
            let mut high = records.split_off(records.len() / 2);
            let mut low = records;
            low.shuffle(&mut rng);
            high.shuffle(&mut rng);
            let mut out = Vec::with_capacity(low.len() + high.len());
            let mut lows = low.chunks(WINDOW_WIDTH);
            let mut highs = high.chunks(WINDOW_WIDTH);
            loop {
                let a = lows.next();
                let b = highs.next();
                if a.is_none() && b.is_none() {
                    break;
                }
                out.extend(a.into_iter().flatten());
                out.extend(b.into_iter().flatten());
            }
            out
        }
    }
}

/// Score-shift or verifier-noise stress applied on top of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StressTransform {
    ScoreBias { b: f64 },
    VerifierFlip { p: f64 },
    Ordering { name: Ordering },
}

/// Where rounds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    Stationary { tau: f64, len: usize },
    Monotone { tau0: f64, tau_max: f64, ramp_rounds: u64, len: usize },
    Replay { path: String },
}

/// A source plus the transforms applied to it, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub source: Source,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<StressTransform>,
}

impl StreamSpec {
    pub fn stationary(tau: f64, len: usize) -> Self {
        Self {
            source: Source::Stationary { tau, len },
            transforms: Vec::new(),
        }
    }

    pub fn with(mut self, transform: StressTransform) -> Self {
        self.transforms.push(transform);
        self
    }

    /// Generates or loads the rounds for one replication.
    pub fn build(&self, seed: u64) -> Result<Vec<Round>> {
        let base: Vec<Round> = match &self.source {
            Source::Stationary { tau, len } => gen_stationary(
                &StationarySpec {
                    tau: *tau,
                    alpha: 0.0,
                    len: *len,
                },
                seed,
            )?
            .collect(),
            Source::Monotone {
                tau0,
                tau_max,
                ramp_rounds,
                len,
            } => gen_monotone(*tau0, *tau_max, *ramp_rounds, *len, seed)?.collect(),
            Source::Replay { path } => read_replay(path)?,
        };
        self.transform(base, seed)
    }

    /// Applies this spec's transforms to an existing round set.
    pub fn transform(&self, mut rounds: Vec<Round>, seed: u64) -> Result<Vec<Round>> {
        for t in &self.transforms {
            rounds = match *t {
                StressTransform::ScoreBias { b } => apply_bias(rounds.into_iter(), b).collect(),
                StressTransform::VerifierFlip { p } => apply_flip(rounds.into_iter(), p, seed)?.collect(),
                StressTransform::Ordering { name } => apply_ordering(rounds, name, seed),
            };
        }
        Ok(rounds)
    }

    /// Analytic oracle, available for synthetic sources whose transforms keep
    /// a closed form (bias and flips do; orderings do not).
    pub fn oracle(&self) -> Option<Oracle> {
        let frontier = match self.source {
            Source::Stationary { tau, .. } => TauRamp {
                tau0: tau,
                tau_max: tau,
                ramp_rounds: 0,
            },
            Source::Monotone {
                tau0,
                tau_max,
                ramp_rounds,
                ..
            } => TauRamp {
                tau0,
                tau_max,
                ramp_rounds,
            },
            Source::Replay { .. } => return None,
        };
        let mut oracle = Oracle::new(frontier);
        for t in &self.transforms {
            match *t {
                StressTransform::ScoreBias { b } => oracle.bias += b,
                StressTransform::VerifierFlip { p } => {
                    oracle.flip = oracle.flip + p - 2.0 * oracle.flip * p;
                }
                StressTransform::Ordering { .. } => return None,
            }
        }
        Some(oracle)
    }
}

/// Closed-form conditional failure rates for the uniform-score generators.
///
/// For a raw cutoff `c` on the uniform score and verifier cutoff `tau`,
/// `r(c) = max(0, (c - tau) / c)`. A score bias `b` maps a deployed cutoff
/// `q` to the raw cutoff `q - b`; a symmetric flip with probability `p` maps
/// `r` to `p + (1 - 2p) r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub tau: TauRamp,
    pub bias: f64,
    pub flip: f64,
}

impl Oracle {
    pub fn new(tau: TauRamp) -> Self {
        Self {
            tau,
            bias: 0.0,
            flip: 0.0,
        }
    }

    pub fn stationary(tau: f64) -> Self {
        Self::new(TauRamp {
            tau0: tau,
            tau_max: tau,
            ramp_rounds: 0,
        })
    }

    /// Raw-score cutoff equivalent to deployed cutoff `q`.
    fn raw_cutoff(&self, q: f64) -> f64 {
        if self.bias == 0.0 {
            return q;
        }
        if q >= 0.99 {
            1.0
        } else if q < 0.01 {
            0.0
        } else {
            (q - self.bias).clamp(0.0, 1.0)
        }
    }

    /// `P(s <= q)` for the deployed score.
    pub fn open_prob(&self, q: f64) -> f64 {
        self.raw_cutoff(q).clamp(0.0, 1.0)
    }

    /// Conditional observed failure rate `P(V = 0 | S <= q)` at round `t`.
    pub fn fail_rate(&self, q: f64, t: u64) -> f64 {
        let c = self.raw_cutoff(q);
        if c <= 0.0 {
            return 0.0;
        }
        let tau = self.tau.tau_at(t);
        let r = if c <= tau { 0.0 } else { (c - tau) / c };
        self.flip + (1.0 - 2.0 * self.flip) * r
    }

    /// `E[X_t(q)] = P(S <= q) (r(q) - alpha)`.
    pub fn expected_increment(&self, q: f64, alpha: f64, t: u64) -> f64 {
        self.open_prob(q) * (self.fail_rate(q, t) - alpha)
    }

    pub fn is_safe(&self, q: f64, alpha: f64, t: u64) -> bool {
        self.open_prob(q) == 0.0 || self.fail_rate(q, t) <= alpha + SAFETY_TOL
    }

    /// Safe-side margin `max(0, -E[X_t(q)])`.
    pub fn margin(&self, q: f64, alpha: f64, t: u64) -> f64 {
        (-self.expected_increment(q, alpha, t)).max(0.0)
    }

    /// Continuous frontier `q_t* = sup{q : r_t(q) <= alpha}` (capped at 1).
    pub fn frontier(&self, alpha: f64, t: u64) -> Option<f64> {
        let inner = (alpha - self.flip) / (1.0 - 2.0 * self.flip);
        if inner < 0.0 {
            return None;
        }
        let c = if inner >= 1.0 {
            1.0
        } else {
            self.tau.tau_at(t) / (1.0 - inner)
        };
        Some((c + self.bias).min(1.0))
    }

    /// Index of the largest safe grid point at round `t`.
    pub fn grid_frontier(&self, grid: &crate::ThresholdGrid, alpha: f64, t: u64) -> Option<usize> {
        grid.as_slice()
            .iter()
            .rposition(|&q| self.is_safe(q, alpha, t))
    }
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub t: u64,
    pub score: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// Reads a JSON-lines replay file. Blank lines are skipped.
pub fn read_replay_records(path: impl AsRef<Path>) -> Result<Vec<ReplayRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records: Vec<ReplayRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| CsaError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let invalid = |message: String| CsaError::Validation {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(invalid(format!("score {} is outside [0, 1]", rec.score)));
        }
        if let Some(prev) = records.last() {
            if rec.t <= prev.t {
                return Err(invalid(format!(
                    "t must be strictly increasing ({} follows {})",
                    rec.t, prev.t
                )));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn read_replay(path: impl AsRef<Path>) -> Result<Vec<Round>> {
    Ok(read_replay_records(path)?
        .into_iter()
        .map(|r| Round::new(r.score, r.pass))
        .collect())
}

pub fn write_replay_records(records: &[ReplayRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rounds with 1-based round indices.
pub fn write_replay(rounds: &[Round], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<ReplayRecord> = rounds
        .iter()
        .enumerate()
        .map(|(i, r)| ReplayRecord {
            t: i as u64 + 1,
            score: r.score,
            pass: r.verifier_pass,
            features: None,
        })
        .collect();
    write_replay_records(&records, path)
}
