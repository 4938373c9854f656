//! Experiment configs, seeded parallel replications, result bundles and
//! their file forms.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{offline_calibrated, Aci, AlwaysAct, FixedThreshold, NaiveTuning, ACI_DEFAULT_GAMMA};
use crate::controller::{run_policy, BudgetScheme, Controller, ControllerConfig, ReleasePolicy, RoundRecord};
use crate::epoch::{EpochController, EpochSchedule};
use crate::eprocess::{BetRule, ThresholdGrid};
use crate::error::{CsaError, Result};
use crate::metrics::{aggregate, running_risk, summarize, Aggregate, MetricContext, RunSummary};
use crate::seeds::{replication_seed, rng_for, Purpose};
use crate::sparse::{run_stream_sparse, SparsePolicy};
use crate::streams::{Ordering, Source, StreamSpec, StressTransform};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Description of the slack-mode pathwise bound used in every summary.
pub const SLACK_BOUND: &str = "alpha + sqrt(ln(1/delta) / max(N_t, 1))";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// `i / (m + 1)` for `i = 1..=m`.
    Uniform { m: usize },
    Explicit { values: Vec<f64> },
}

impl GridSpec {
    pub fn build(&self) -> Result<ThresholdGrid> {
        match self {
            GridSpec::Uniform { m } => ThresholdGrid::uniform(*m),
            GridSpec::Explicit { values } => ThresholdGrid::new(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Csa,
    CsaEpoch { schedule: EpochSchedule },
    CsaSparse { policy: SparsePolicy },
    AlwaysAct,
    FixedThreshold { q0: f64 },
    NaiveTuning {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<usize>,
    },
    Aci {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    OfflineCalibrated { n_cal: usize },
}

fn default_gamma() -> f64 {
    ACI_DEFAULT_GAMMA
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Csa => "csa",
            Method::CsaEpoch { .. } => "csa_epoch",
            Method::CsaSparse { .. } => "csa_sparse",
            Method::AlwaysAct => "always_act",
            Method::FixedThreshold { .. } => "fixed_threshold",
            Method::NaiveTuning { .. } => "naive_tuning",
            Method::Aci { .. } => "aci",
            Method::OfflineCalibrated { .. } => "offline_calibrated",
        }
    }

    /// Validity class: finite-horizon offline (`fh`), long-run average (`lra`),
    /// anytime pathwise (`anytime`) or none.
    pub fn framework(&self) -> &'static str {
        match self {
            Method::Csa | Method::CsaEpoch { .. } | Method::CsaSparse { .. } => "anytime",
            Method::Aci { .. } => "lra",
            Method::OfflineCalibrated { .. } => "fh",
            Method::AlwaysAct | Method::FixedThreshold { .. } | Method::NaiveTuning { .. } => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSettings {
    pub alpha: f64,
    pub delta: f64,
    pub grid: GridSpec,
    #[serde(default)]
    pub budget_scheme: BudgetScheme,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default)]
    pub bet: BetRule,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            alpha: 0.30,
            delta: 0.05,
            grid: GridSpec::Uniform { m: 20 },
            budget_scheme: BudgetScheme::EqualHalved,
            burn_in: 500,
            bet: BetRule::Adaptive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Replication `r` uses sub-seed `f(base, r)`.
    Replications { base: u64, n_reps: u64 },
    /// Each listed value is used directly as a replication seed.
    List { seeds: Vec<u64> },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Replications { base, n_reps } => (0..*n_reps).map(|r| replication_seed(*base, r)).collect(),
            SeedSpec::List { seeds } => seeds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub key: String,
    pub value: String,
}

/// One row of an experiment: labels plus overrides of the base settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default)]
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bet: Option<BetRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamSpec>,
    /// Applied after the base stream's own transforms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<StressTransform>,
}

impl Condition {
    fn labelled(key: &str, value: impl ToString) -> Self {
        Self {
            labels: vec![Label {
                key: key.into(),
                value: value.to_string(),
            }],
            ..Default::default()
        }
    }

    fn label(mut self, key: &str, value: impl ToString) -> Self {
        self.labels.push(Label {
            key: key.into(),
            value: value.to_string(),
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    RiskMean,
    RiskMax,
    RiskCi,
    ArMean,
    ArCi,
    CertifiedMean,
    MeanDelay,
    FirstCertMean,
    /// First-certification mean relative to the first condition's.
    DelayMultiplier,
    PathvStrict,
    PathvSlack,
    MaxRisk,
    FalseCerts,
    GapMean,
    VerifierCallsMean,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::RiskMean => "risk_mean",
            Column::RiskMax => "risk_max",
            Column::RiskCi => "risk_ci",
            Column::ArMean => "ar_mean",
            Column::ArCi => "ar_ci",
            Column::CertifiedMean => "certified_mean",
            Column::MeanDelay => "mean_delay",
            Column::FirstCertMean => "first_cert_mean",
            Column::DelayMultiplier => "delay_multiplier",
            Column::PathvStrict => "pathv_strict",
            Column::PathvSlack => "pathv_slack",
            Column::MaxRisk => "max_risk",
            Column::FalseCerts => "false_certs",
            Column::GapMean => "gap_mean",
            Column::VerifierCallsMean => "verifier_calls_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TableSpec {
    /// One row per condition.
    Conditions { columns: Vec<Column> },
    /// One row per condition and grid threshold: margin, delay and bound.
    PerThreshold,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec::Conditions {
            columns: vec![
                Column::RiskMean,
                Column::RiskMax,
                Column::ArMean,
                Column::CertifiedMean,
                Column::MeanDelay,
                Column::PathvStrict,
                Column::FalseCerts,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    #[serde(default)]
    pub controller: ControllerSettings,
    pub stream: StreamSpec,
    pub seeds: SeedSpec,
    /// Empty means a single unlabelled condition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub table: TableSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Everything needed to run one replication of one condition.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub labels: Vec<Label>,
    pub method: Method,
    pub controller: ControllerConfig,
    pub stream: StreamSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CsaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CsaError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let canon = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&canon)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.seeds().is_empty() {
            return Err(CsaError::Config("at least one replication seed is required".into()));
        }
        if let SeedSpec::List { seeds } = &self.seeds {
            if seeds.iter().any(|&s| s > i64::MAX as u64) {
                return Err(CsaError::Config("listed seeds must fit in a signed 64-bit integer".into()));
            }
        }
        if let SeedSpec::Replications { base, .. } = &self.seeds {
            if *base > i64::MAX as u64 {
                return Err(CsaError::Config("base seed must fit in a signed 64-bit integer".into()));
            }
        }
        for r in self.resolve()? {
            r.controller.validate()?;
            match &r.method {
                Method::CsaEpoch { schedule } => schedule.validate()?,
                Method::CsaSparse { policy } => policy.validate()?,
                Method::OfflineCalibrated { .. } if matches!(r.stream.source, Source::Replay { .. }) => {
                    return Err(CsaError::Config("offline_calibrated needs a generated stream".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Vec<Resolved>> {
        let default = [Condition::default()];
        let conditions: &[Condition] = if self.conditions.is_empty() {
            &default
        } else {
            &self.conditions
        };
        conditions
            .iter()
            .map(|c| {
                let s = &self.controller;
                let grid = c.grid.as_ref().unwrap_or(&s.grid).build()?;
                let controller = ControllerConfig {
                    alpha: s.alpha,
                    delta: s.delta,
                    grid,
                    budget_scheme: s.budget_scheme,
                    burn_in: s.burn_in,
                    bet: c.bet.unwrap_or(s.bet),
                };
                let mut stream = c.stream.clone().unwrap_or_else(|| self.stream.clone());
                stream.transforms.extend(c.transforms.iter().copied());
                Ok(Resolved {
                    labels: c.labels.clone(),
                    method: c.method.clone().unwrap_or_else(|| self.method.clone()),
                    controller,
                    stream,
                })
            })
            .collect()
    }
}

fn sub_seed(seed: u64, purpose: Purpose) -> u64 {
    rng_for(seed, purpose).next_u64()
}

fn with_len(spec: &StreamSpec, n: usize) -> StreamSpec {
    let mut spec = spec.clone();
    match &mut spec.source {
        Source::Stationary { len, .. } | Source::Monotone { len, .. } => *len = n,
        Source::Replay { .. } => {}
    }
    spec
}

/// Trace, certifications and summary of one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub trace: Vec<RoundRecord>,
    pub summary: RunSummary,
}

pub fn run_replication(r: &Resolved, seed: u64) -> Result<Replication> {
    let rounds = r.stream.build(seed)?;
    let cfg = &r.controller;
    let (trace, certs) = match &r.method {
        Method::Csa => {
            let mut p = Controller::new(cfg.clone())?;
            let trace = run_policy(&mut p, rounds)?;
            (trace, p.certifications())
        }
        Method::CsaEpoch { schedule } => {
            let mut p = EpochController::new(cfg.clone(), schedule.clone())?;
            let trace = run_policy(&mut p, rounds)?;
            (trace, p.certifications())
        }
        Method::CsaSparse { policy } => {
            let out = run_stream_sparse(cfg, policy, rounds, sub_seed(seed, Purpose::Coins))?;
            (out.trace, out.certifications)
        }
        other => {
            let mut policy: Box<dyn ReleasePolicy> = match other {
                Method::AlwaysAct => Box::new(AlwaysAct),
                Method::FixedThreshold { q0 } => Box::new(FixedThreshold::new(*q0)),
                Method::NaiveTuning { window } => Box::new(NaiveTuning::new(cfg.grid.clone(), cfg.alpha, *window)?),
                Method::Aci { gamma } => Box::new(Aci::new(cfg.alpha, *gamma)?),
                Method::OfflineCalibrated { n_cal } => {
                    let cal = with_len(&r.stream, *n_cal).build(sub_seed(seed, Purpose::Calibration))?;
                    let pick = offline_calibrated(&cal, cfg.delta, cfg.alpha, &cfg.grid)?;
                    Box::new(FixedThreshold {
                        q0: pick.and_then(|k| cfg.grid.get(k)),
                    })
                }
                _ => unreachable!("controller methods handled above"),
            };
            let trace = run_policy(policy.as_mut(), rounds)?;
            (trace, Vec::new())
        }
    };
    let oracle = r.stream.oracle();
    let ctx = MetricContext {
        alpha: cfg.alpha,
        delta: cfg.delta,
        burn_in: cfg.burn_in,
        grid: Some(&cfg.grid),
        oracle: oracle.as_ref(),
    };
    let mut summary = summarize(&trace, &certs, &ctx);
    if !matches!(r.method, Method::Csa | Method::CsaEpoch { .. } | Method::CsaSparse { .. }) {
        summary.first_cert_round.clear();
    }
    Ok(Replication { trace, summary })
}

/// Per-round means over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub risk: Vec<f64>,
    pub action_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub q: f64,
    pub margin: f64,
    pub delta_q: f64,
    pub bound: Option<f64>,
    pub certified_frac: f64,
    /// Mean first-certification round over replications that certified.
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub labels: Vec<Label>,
    pub method: String,
    pub framework: String,
    pub summaries: Vec<RunSummary>,
    pub aggregate: Aggregate,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<ThresholdRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub slack_bound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub name: String,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub conditions: Vec<ConditionResult>,
}

impl ResultBundle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn mean_trajectory(traces: &[Vec<RoundRecord>]) -> Trajectory {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    let mut risk = vec![0.0; len];
    let mut ar = vec![0.0; len];
    let mut count = vec![0u32; len];
    for trace in traces {
        for (i, (n, r)) in running_risk(trace).into_iter().enumerate() {
            risk[i] += r;
            ar[i] += n as f64 / (i + 1) as f64;
            count[i] += 1;
        }
    }
    for i in 0..len {
        let c = f64::from(count[i].max(1));
        risk[i] /= c;
        ar[i] /= c;
    }
    Trajectory { risk, action_rate: ar }
}

fn threshold_rows(r: &Resolved, summaries: &[RunSummary]) -> Vec<ThresholdRow> {
    let cfg = &r.controller;
    let oracle = r.stream.oracle();
    let delta_q = cfg.delta_q();
    cfg.grid
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            let margin = oracle.map_or(0.0, |o| o.margin(q, cfg.alpha, 1));
            let delays: Vec<f64> = summaries
                .iter()
                .filter_map(|s| s.first_cert_round.get(k).copied().flatten())
                .map(|d| d as f64)
                .collect();
            ThresholdRow {
                q,
                margin,
                delta_q,
                bound: (margin > 0.0).then(|| 4.0 * ((1.0 / delta_q).ln() + 1.0) / (margin * margin)),
                certified_frac: delays.len() as f64 / summaries.len().max(1) as f64,
                mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
            }
        })
        .collect()
}

/// Runs every (condition, seed) pair, on `threads` workers if given.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ResultBundle> {
    config.validate()?;
    let resolved = config.resolve()?;
    let seeds = config.seeds.seeds();
    let jobs: Vec<(usize, u64)> = (0..resolved.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let work = || -> Result<Vec<Replication>> {
        jobs.par_iter()
            .map(|&(c, s)| run_replication(&resolved[c], s))
            .collect()
    };
    let reps = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CsaError::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let per_thresholds = matches!(config.table, TableSpec::PerThreshold);
    let mut conditions = Vec::with_capacity(resolved.len());
    for (c, chunk) in reps.chunks(seeds.len()).enumerate() {
        let r = &resolved[c];
        let summaries: Vec<RunSummary> = chunk.iter().map(|x| x.summary.clone()).collect();
        let traces: Vec<Vec<RoundRecord>> = chunk.iter().map(|x| x.trace.clone()).collect();
        conditions.push(ConditionResult {
            labels: r.labels.clone(),
            method: r.method.name().into(),
            framework: r.method.framework().into(),
            aggregate: aggregate(&summaries)?,
            trajectory: mean_trajectory(&traces),
            thresholds: if per_thresholds {
                threshold_rows(r, &summaries)
            } else {
                Vec::new()
            },
            summaries,
        });
    }
    Ok(ResultBundle {
        name: config.name.clone(),
        provenance: Provenance {
            config_hash: config.hash()?,
            seeds,
            version: VERSION.into(),
            slack_bound: SLACK_BOUND.into(),
        },
        config: config.clone(),
        conditions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    SummaryJson,
    TableCsv,
    TrajectoryCsv,
}

impl EmitFormat {
    pub const ALL: [EmitFormat; 3] = [EmitFormat::SummaryJson, EmitFormat::TableCsv, EmitFormat::TrajectoryCsv];

    pub fn name(self) -> &'static str {
        match self {
            EmitFormat::SummaryJson => "summary-json",
            EmitFormat::TableCsv => "table-csv",
            EmitFormat::TrajectoryCsv => "trajectory-csv",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            EmitFormat::SummaryJson => "summary.json",
            EmitFormat::TableCsv => "table.csv",
            EmitFormat::TrajectoryCsv => "trajectory.csv",
        }
    }
}

impl std::str::FromStr for EmitFormat {
    type Err = CsaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CsaError::param("format", format!("unknown format `{s}`")))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn column_value(col: Column, c: &ConditionResult, base_first: Option<f64>) -> String {
    let a = &c.aggregate;
    match col {
        Column::RiskMean => a.risk.mean.to_string(),
        Column::RiskMax => a.risk_max.to_string(),
        Column::RiskCi => a.risk.ci.to_string(),
        Column::ArMean => a.action_rate.mean.to_string(),
        Column::ArCi => a.action_rate.ci.to_string(),
        Column::CertifiedMean => a.certified.mean.to_string(),
        Column::MeanDelay => fmt_opt(a.mean_delay.map(|e| e.mean)),
        Column::FirstCertMean => fmt_opt(a.first_cert.map(|e| e.mean)),
        Column::DelayMultiplier => fmt_opt(a.first_cert.zip(base_first).map(|(e, b)| e.mean / b)),
        Column::PathvStrict => a.pathv_strict_count.to_string(),
        Column::PathvSlack => c.summaries.iter().filter(|s| s.pathv_slack).count().to_string(),
        Column::MaxRisk => fmt_opt(a.max_risk_max),
        Column::FalseCerts => a.false_certs_total.map_or_else(String::new, |v| v.to_string()),
        Column::GapMean => fmt_opt(a.gap.map(|e| e.mean)),
        Column::VerifierCallsMean => fmt_opt(a.verifier_calls.map(|e| e.mean)),
    }
}

fn label_keys(bundle: &ResultBundle) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for c in &bundle.conditions {
        for l in &c.labels {
            if !keys.contains(&l.key) {
                keys.push(l.key.clone());
            }
        }
    }
    keys
}

fn label_values(keys: &[String], c: &ConditionResult) -> Vec<String> {
    keys.iter()
        .map(|k| c.labels.iter().find(|l| &l.key == k).map_or_else(String::new, |l| l.value.clone()))
        .collect()
}

/// CSV table with one row per condition (or per condition and threshold).
pub fn table_csv(bundle: &ResultBundle) -> Result<String> {
    let keys = label_keys(bundle);
    let mut w = csv::Writer::from_writer(Vec::new());
    match &bundle.config.table {
        TableSpec::Conditions { columns } => {
            let mut header = keys.clone();
            header.extend(columns.iter().map(|c| c.name().to_string()));
            w.write_record(&header)?;
            let base_first = bundle
                .conditions
                .first()
                .and_then(|c| c.aggregate.first_cert)
                .map(|e| e.mean);
            for c in &bundle.conditions {
                let mut row = label_values(&keys, c);
                row.extend(columns.iter().map(|&col| column_value(col, c, base_first)));
                w.write_record(&row)?;
            }
        }
        TableSpec::PerThreshold => {
            let mut header = keys.clone();
            header.extend(["q", "margin", "delta_q", "bound", "certified_frac", "mean_delay"].map(String::from));
            w.write_record(&header)?;
            for c in &bundle.conditions {
                for t in &c.thresholds {
                    let mut row = label_values(&keys, c);
                    row.extend([
                        t.q.to_string(),
                        t.margin.to_string(),
                        t.delta_q.to_string(),
                        fmt_opt(t.bound),
                        t.certified_frac.to_string(),
                        fmt_opt(t.mean_delay),
                    ]);
                    w.write_record(&row)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CsaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-round mean running risk and action rate for every condition.
pub fn trajectory_csv(bundle: &ResultBundle) -> Result<String> {
    let keys = label_keys(bundle);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = keys.clone();
    header.extend(["t", "risk", "action_rate"].map(String::from));
    w.write_record(&header)?;
    for c in &bundle.conditions {
        let labels = label_values(&keys, c);
        for (i, (r, a)) in c.trajectory.risk.iter().zip(&c.trajectory.action_rate).enumerate() {
            let mut row = labels.clone();
            row.extend([(i + 1).to_string(), r.to_string(), a.to_string()]);
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CsaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render(bundle: &ResultBundle, format: EmitFormat) -> Result<String> {
    match format {
        EmitFormat::SummaryJson => Ok(serde_json::to_string_pretty(bundle)?),
        EmitFormat::TableCsv => table_csv(bundle),
        EmitFormat::TrajectoryCsv => trajectory_csv(bundle),
    }
}

/// Writes `format` into `dir` and returns the file path.
pub fn emit(bundle: &ResultBundle, format: EmitFormat, dir: impl AsRef<Path>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.as_ref())?;
    let path = dir.as_ref().join(format.file_name());
    std::fs::write(&path, render(bundle, format)?)?;
    Ok(path)
}

/// Fixed-width text view of the condition table.
pub fn table_text(bundle: &ResultBundle) -> Result<String> {
    let csv = table_csv(bundle)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv.as_bytes());
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(short).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let ncol = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..ncol)
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    Ok(out)
}

fn short(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') => format!("{v:.4}"),
        _ => cell.to_string(),
    }
}

pub const PRESETS: [&str; 10] = [
    "stationary",
    "false_cert",
    "delay_rate",
    "ablation_grid",
    "ablation_lambda",
    "stress_bias",
    "stress_noise",
    "sparse_sweep",
    "shift_orderings",
    "epoch_demo",
];

const BASE_SEED: u64 = 20_240_601;

fn desk(name: &str, n_reps: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        method: Method::Csa,
        controller: ControllerSettings::default(),
        stream: StreamSpec::stationary(0.5, 3000),
        seeds: SeedSpec::Replications { base: BASE_SEED, n_reps },
        conditions: Vec::new(),
        table: TableSpec::default(),
        out_dir: None,
    }
}

/// Built-in experiment by name.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use Column::*;
    let mut cfg = desk(name, 50);
    match name {
        "stationary" => {
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, RiskMax, ArMean, CertifiedMean, MeanDelay, PathvStrict, MaxRisk, FalseCerts, GapMean],
            };
        }
        "false_cert" => {
            cfg.seeds = SeedSpec::Replications {
                base: BASE_SEED,
                n_reps: 500,
            };
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, ArMean, CertifiedMean, FalseCerts],
            };
        }
        "delay_rate" => {
            cfg.seeds = SeedSpec::Replications {
                base: BASE_SEED,
                n_reps: 200,
            };
            cfg.table = TableSpec::PerThreshold;
        }
        "ablation_grid" => {
            cfg.conditions = [10, 25, 50, 100]
                .map(|m| Condition {
                    grid: Some(GridSpec::Uniform { m }),
                    ..Condition::labelled("m", m)
                })
                .to_vec();
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, ArMean, CertifiedMean, FalseCerts],
            };
        }
        "ablation_lambda" => {
            let mut conds = vec![Condition {
                bet: Some(BetRule::Adaptive),
                ..Condition::labelled("lambda", "adaptive")
            }];
            for l in [0.01, 0.05, 0.10, 0.25, 0.50] {
                conds.push(Condition {
                    bet: Some(BetRule::Fixed(l)),
                    ..Condition::labelled("lambda", l)
                });
            }
            cfg.conditions = conds;
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, ArMean, CertifiedMean, MeanDelay],
            };
        }
        "stress_bias" => {
            cfg.conditions = [-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15]
                .map(|b| Condition {
                    transforms: vec![StressTransform::ScoreBias { b }],
                    ..Condition::labelled("b", b)
                })
                .to_vec();
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, RiskMax, ArMean],
            };
        }
        "stress_noise" => {
            cfg.conditions = [0.0, 0.02, 0.05, 0.10, 0.15, 0.20]
                .map(|p| Condition {
                    transforms: vec![StressTransform::VerifierFlip { p }],
                    ..Condition::labelled("p", p)
                })
                .to_vec();
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, RiskMax, ArMean],
            };
        }
        "sparse_sweep" => {
            cfg.seeds = SeedSpec::Replications {
                base: BASE_SEED,
                n_reps: 20,
            };
            cfg.conditions = [1.0, 0.5, 0.2, 0.1]
                .map(|pi| Condition {
                    method: Some(Method::CsaSparse {
                        policy: SparsePolicy::constant(pi),
                    }),
                    ..Condition::labelled("pi", pi)
                })
                .to_vec();
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, RiskMax, ArMean, FirstCertMean, DelayMultiplier, VerifierCallsMean, FalseCerts],
            };
        }
        "shift_orderings" => {
            cfg.seeds = SeedSpec::Replications {
                base: BASE_SEED,
                n_reps: 10,
            };
            let methods = [
                Method::Csa,
                Method::CsaEpoch {
                    schedule: EpochSchedule::FixedLength { rounds: 1500 },
                },
                Method::AlwaysAct,
                Method::NaiveTuning { window: None },
                Method::Aci { gamma: ACI_DEFAULT_GAMMA },
                Method::OfflineCalibrated { n_cal: 2000 },
            ];
            let mut conds = Vec::new();
            for ordering in Ordering::ALL {
                for m in &methods {
                    conds.push(Condition {
                        method: Some(m.clone()),
                        transforms: vec![StressTransform::Ordering { name: ordering }],
                        ..Condition::labelled("ordering", ordering.name()).label("method", m.name())
                    });
                }
            }
            cfg.conditions = conds;
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, RiskMax, ArMean, PathvStrict, PathvSlack],
            };
        }
        "epoch_demo" => {
            cfg.seeds = SeedSpec::Replications {
                base: BASE_SEED,
                n_reps: 100,
            };
            cfg.stream = StreamSpec {
                source: Source::Monotone {
                    tau0: 0.4,
                    tau_max: 0.6,
                    ramp_rounds: 3000,
                    len: 3000,
                },
                transforms: Vec::new(),
            };
            cfg.conditions = vec![
                Condition {
                    method: Some(Method::CsaEpoch {
                        schedule: EpochSchedule::single(),
                    }),
                    ..Condition::labelled("epochs", 1)
                },
                Condition {
                    method: Some(Method::CsaEpoch {
                        schedule: EpochSchedule::FixedLength { rounds: 1500 },
                    }),
                    ..Condition::labelled("epochs", 2)
                },
            ];
            cfg.table = TableSpec::Conditions {
                columns: vec![RiskMean, ArMean, CertifiedMean, FalseCerts, GapMean, PathvStrict],
            };
        }
        _ => {
            return Err(CsaError::UnknownPreset {
                name: name.into(),
                available: PRESETS.join(", "),
            })
        }
    }
    Ok(cfg)
}
