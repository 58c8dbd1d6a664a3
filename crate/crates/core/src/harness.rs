//! Monte-Carlo experiment driver.
//!
//! An [`ExperimentConfig`] names one study; [`run_experiment`] draws one
//! instance per `(K, run)` cell, runs the study's algorithms on it and
//! returns flat [`MetricsRow`]s, and [`summarize`] folds rows into the
//! aggregate records the figures and tables are drawn from. Both tables are
//! written as CSV by [`write_outputs`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admission::{admissible, run_lqmd, run_nlpd, AdmissionConfig, AdmissionResult};
use crate::error::{JpacError, Result};
use crate::kernel::{multistart_solve, AugmentedProblem, MultistartResult, SolverConfig};
use crate::network::{normalize, select_alpha, AlphaRule, NormalizedProblem};
use crate::oracle::{
    default_q_grid, enumerate_l0, estimate_qbar, optimum_allocation, EnumerationResult, QbarStatus,
    ENUMERATION_MAX_LINKS,
};
use crate::rng::child_seed;
use crate::scenario::{generate, ScenarioConfig};

/// Fixed column order of the rows CSV.
pub const ROWS_HEADER: [&str; 11] = [
    "experiment",
    "K",
    "q",
    "algorithm",
    "seed",
    "supported",
    "power_mw",
    "runtime_ms",
    "match",
    "qbar",
    "error",
];

pub const SUMMARY_HEADER: [&str; 6] = ["experiment", "K", "q", "algorithm", "metric", "value"];

/// Coordinate shrink factor of the second deployment in the scaling study.
pub const SETUP2_SCALE: f64 = 0.707;

/// Relative power tolerance for counting a solution as the benchmark optimum.
pub const POWER_MATCH_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RecoverQbar,
    ApproxCompare,
    DeflateCompare,
    QSensitivity,
    ScalingRatio,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::RecoverQbar => "recover-qbar",
            Self::ApproxCompare => "approx-compare",
            Self::DeflateCompare => "deflate-compare",
            Self::QSensitivity => "q-sensitivity",
            Self::ScalingRatio => "scaling-ratio",
        }
    }

    fn default_k_list(self) -> Vec<usize> {
        match self {
            Self::RecoverQbar | Self::ApproxCompare => vec![5],
            Self::DeflateCompare | Self::QSensitivity => vec![5, 10, 15, 20],
            Self::ScalingRatio => vec![5, 10],
        }
    }

    fn default_q_list(self) -> Vec<f64> {
        match self {
            Self::RecoverQbar => default_q_grid(),
            Self::ApproxCompare => vec![0.1],
            Self::DeflateCompare | Self::ScalingRatio => vec![0.5],
            Self::QSensitivity => vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }

    fn default_starts(self) -> usize {
        match self {
            Self::RecoverQbar | Self::ApproxCompare => 100,
            _ => 5,
        }
    }

    /// Whether the study runs LQMD, which needs `q < 1`.
    fn uses_lqmd(self) -> bool {
        matches!(self, Self::DeflateCompare | Self::QSensitivity | Self::ScalingRatio)
    }

    /// Whether the study calls the exhaustive ℓ0 oracle.
    fn uses_enumeration(self) -> bool {
        matches!(self, Self::RecoverQbar | Self::ApproxCompare)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Experiment {
    type Err = JpacError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| JpacError::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// One study, as read from a JSON config file. Missing lists and counts fall
/// back to per-experiment desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(rename = "K_list", default, skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_list: Option<Vec<f64>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Deployment parameters; `K` and `seed` are overwritten per cell.
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_output_path")]
    pub output_path: PathBuf,
    /// Fill the `runtime_ms` column. Turn off for byte-reproducible tables.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
    /// Write per-iteration solver traces of the ℓq solves as JSON lines.
    #[serde(default)]
    pub traces: bool,
}

fn default_runs() -> usize {
    100
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_output_path() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            k_list: None,
            runs: default_runs(),
            q_list: None,
            n: None,
            epsilon: default_epsilon(),
            seed: 0,
            scenario: ScenarioConfig::default(),
            output_path: default_output_path(),
            record_runtime: true,
            traces: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn k_list(&self) -> Vec<usize> {
        self.k_list.clone().unwrap_or_else(|| self.experiment.default_k_list())
    }

    pub fn q_list(&self) -> Vec<f64> {
        self.q_list.clone().unwrap_or_else(|| self.experiment.default_q_list())
    }

    pub fn starts(&self) -> usize {
        self.n.unwrap_or_else(|| self.experiment.default_starts())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            trace: self.traces,
            ..SolverConfig::default()
        }
    }

    /// Copy with every default filled in, as written next to the outputs.
    pub fn resolved(&self) -> Self {
        Self {
            k_list: Some(self.k_list()),
            q_list: Some(self.q_list()),
            n: Some(self.starts()),
            ..self.clone()
        }
    }

    /// `runs = 0` is accepted and yields a header-only table.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(JpacError::InvalidParameter(msg));
        let ks = self.k_list();
        if ks.is_empty() || ks.contains(&0) {
            return bad("K_list must be nonempty with every K >= 1".into());
        }
        if self.experiment.uses_enumeration() {
            if let Some(&k) = ks.iter().find(|&&k| k > ENUMERATION_MAX_LINKS) {
                return bad(format!(
                    "{} enumerates subsets; K = {k} exceeds {ENUMERATION_MAX_LINKS}",
                    self.experiment
                ));
            }
        }
        let qs = self.q_list();
        if qs.is_empty() {
            return bad("q_list must be nonempty".into());
        }
        for &q in &qs {
            if !(q > 0.0 && q <= 1.0) {
                return bad(format!("q = {q} outside (0, 1]"));
            }
            if self.experiment.uses_lqmd() && q >= 1.0 {
                return bad(format!("{} runs LQMD, which needs q < 1", self.experiment));
            }
        }
        if self.starts() == 0 {
            return bad("N must be at least 1".into());
        }
        self.solver().validate()?;
        ScenarioConfig {
            k: 1,
            ..self.scenario.clone()
        }
        .validate()
    }
}

/// One algorithm on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: Experiment,
    #[serde(rename = "K")]
    pub k: usize,
    pub q: Option<f64>,
    pub algorithm: String,
    /// Scenario seed of the instance; `jpac generate --seed` reproduces it.
    pub seed: u64,
    pub supported: Option<usize>,
    pub power_mw: Option<f64>,
    pub runtime_ms: Option<f64>,
    #[serde(rename = "match")]
    pub match_benchmark: Option<bool>,
    pub qbar: Option<f64>,
    pub error: Option<String>,
}

impl MetricsRow {
    fn new(experiment: Experiment, k: usize, q: Option<f64>, algorithm: &str, seed: u64) -> Self {
        Self {
            experiment,
            k,
            q,
            algorithm: algorithm.to_string(),
            seed,
            supported: None,
            power_mw: None,
            runtime_ms: None,
            match_benchmark: None,
            qbar: None,
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn sort_key(&self, other: &Self) -> Ordering {
        self.k
            .cmp(&other.k)
            .then_with(|| cmp_q(self.q, other.q))
            .then_with(|| self.algorithm.cmp(&other.algorithm))
            .then_with(|| self.seed.cmp(&other.seed))
    }
}

fn cmp_q(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

/// Scenario seed of cell `(k, run)`.
pub fn instance_seed(master: u64, k: usize, run: usize) -> u64 {
    child_seed(child_seed(master, k as u64), run as u64)
}

/// Rows and summary of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    /// JSON lines of solver iterations, when traces were requested.
    pub traces: Vec<String>,
}

impl ExperimentOutput {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }
}

/// Runs every `(K, run)` cell in parallel and returns rows sorted by
/// `(K, q, algorithm, seed)`. Failures inside a cell become rows with the
/// `error` column set; only an invalid config is an `Err`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = config
        .k_list()
        .into_iter()
        .flat_map(|k| (0..config.runs).map(move |run| (k, run)))
        .collect();
    let results: Vec<(Vec<MetricsRow>, Vec<String>)> = cells
        .par_iter()
        .map(|&(k, run)| run_cell(config, k, instance_seed(config.seed, k, run)))
        .collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        traces.extend(t);
    }
    rows.sort_by(|a, b| a.sort_key(b));
    let summary = summarize(&rows)?;
    Ok(ExperimentOutput {
        config: config.resolved(),
        rows,
        summary,
        traces,
    })
}

struct Cell<'a> {
    config: &'a ExperimentConfig,
    k: usize,
    seed: u64,
    rows: Vec<MetricsRow>,
    traces: Vec<String>,
}

impl Cell<'_> {
    fn timed<T>(&self, f: impl FnOnce() -> Result<T>) -> (Result<T>, Option<f64>) {
        let start = Instant::now();
        let out = f();
        let ms = (start.elapsed().as_secs_f64() * 1e6).round() / 1e3;
        (out, self.config.record_runtime.then_some(ms))
    }

    fn push(&mut self, q: Option<f64>, algorithm: &str, fill: impl FnOnce(&mut MetricsRow) -> Result<()>) {
        let mut row = MetricsRow::new(self.config.experiment, self.k, q, algorithm, self.seed);
        if let Err(e) = fill(&mut row) {
            row.supported = None;
            row.power_mw = None;
            row.match_benchmark = None;
            row.qbar = None;
            row.error = Some(e.to_string());
        }
        self.rows.push(row);
    }

    fn record_traces(&mut self, q: f64, algorithm: &str, result: &MultistartResult) {
        if !self.config.traces {
            return;
        }
        for start in &result.starts {
            if let Ok(success) = &start.result {
                for record in &success.trace {
                    let line = serde_json::json!({
                        "K": self.k,
                        "seed": self.seed,
                        "q": q,
                        "algorithm": algorithm,
                        "start": start.start,
                        "iter": record.iter,
                        "f": record.f,
                        "phi": record.phi,
                        "norm_g": record.norm_g,
                    });
                    self.traces.push(line.to_string());
                }
            }
        }
    }
}

fn run_cell(config: &ExperimentConfig, k: usize, seed: u64) -> (Vec<MetricsRow>, Vec<String>) {
    let mut cell = Cell {
        config,
        k,
        seed,
        rows: Vec::new(),
        traces: Vec::new(),
    };
    let scenario = ScenarioConfig {
        k,
        seed,
        ..config.scenario.clone()
    };
    let problem = generate(&scenario).and_then(|inst| normalize(&inst));
    match config.experiment {
        Experiment::ApproxCompare => approx_compare(&mut cell, problem),
        Experiment::RecoverQbar => recover_qbar(&mut cell, problem),
        Experiment::DeflateCompare => deflate_compare(&mut cell, problem),
        Experiment::QSensitivity => q_sensitivity(&mut cell, problem),
        Experiment::ScalingRatio => {
            let near = ScenarioConfig {
                distance_scale: scenario.distance_scale * SETUP2_SCALE,
                ..scenario.clone()
            };
            let problem2 = generate(&near).and_then(|inst| normalize(&inst));
            scaling_ratio(&mut cell, problem, problem2)
        }
    }
    (cell.rows, cell.traces)
}

fn with_default_alpha(problem: &NormalizedProblem) -> Result<NormalizedProblem> {
    let alpha = select_alpha(problem, &AlphaRule::default())?;
    problem.clone().with_alpha(alpha)
}

fn cloned_err<T>(r: &Result<T>) -> Result<&T> {
    r.as_ref().map_err(|e| JpacError::InvalidInstance(e.to_string()))
}

/// Links supported by a relaxation's power vector, revalidated exactly: the
/// thresholded support if it is exactly admissible, otherwise the links
/// whose SINR target `x` itself meets.
pub fn revalidated_support(problem: &NormalizedProblem, support: &[usize], x: &DVector<f64>) -> Result<Vec<usize>> {
    // The empty set is trivially supportable.
    if support.is_empty() || admissible(problem, support)?.is_some() {
        return Ok(support.to_vec());
    }
    let residual = problem.residual(x);
    Ok((0..problem.len()).filter(|&i| residual[i] <= 0.0).collect())
}

fn power_mw(problem: &NormalizedProblem, x: &DVector<f64>) -> f64 {
    problem.budgets().dot(x) * 1e3
}

/// Benchmark match as tabulated: same support and total power within
/// [`POWER_MATCH_TOL`] relative.
pub fn matches_benchmark(support: &[usize], power: f64, benchmark: &[usize], benchmark_power: f64) -> bool {
    support == benchmark && (power - benchmark_power).abs() <= POWER_MATCH_TOL * benchmark_power.abs().max(f64::MIN_POSITIVE)
}

fn approx_compare(cell: &mut Cell, problem: Result<NormalizedProblem>) {
    let problem = problem.and_then(|p| with_default_alpha(&p));
    let (bench, ms) = cell.timed(|| {
        let p = cloned_err(&problem)?;
        let opt = enumerate_l0(p)?;
        let x = optimum_allocation(p, &opt)?;
        Ok((opt, x))
    });
    let bench: Result<(EnumerationResult, f64)> = bench.map(|(opt, x)| {
        let p = problem.as_ref().expect("benchmark succeeded");
        let power = power_mw(p, &x);
        (opt, power)
    });
    cell.push(None, "benchmark", |row| {
        let (opt, power) = cloned_err(&bench)?;
        row.supported = Some(opt.best_support.len());
        row.power_mw = Some(*power);
        row.runtime_ms = ms;
        row.match_benchmark = Some(true);
        Ok(())
    });

    let starts = cell.config.starts();
    let mut runs: Vec<(f64, &str, usize)> = cell.config.q_list().into_iter().map(|q| (q, "lq", starts)).collect();
    runs.push((1.0, "l1", 1));
    let solver = cell.config.solver();
    for (q, name, n) in runs {
        let (sol, ms) = cell.timed(|| {
            let p = cloned_err(&problem)?;
            multistart_solve(&AugmentedProblem::new(p, q)?, &solver, n, cell.seed)
        });
        if let Ok(sol) = &sol {
            cell.record_traces(q, name, sol);
        }
        let bench = &bench;
        let problem = &problem;
        cell.push(Some(q), name, |row| {
            let p = cloned_err(problem)?;
            let sol = sol?;
            let support = revalidated_support(p, &sol.best_support, &sol.best_x)?;
            let power = power_mw(p, &sol.best_x);
            row.supported = Some(support.len());
            row.power_mw = Some(power);
            row.runtime_ms = ms;
            if let Ok((opt, bench_power)) = bench {
                row.match_benchmark = Some(matches_benchmark(&support, power, &opt.best_support, *bench_power));
            }
            Ok(())
        });
    }
}

fn recover_qbar(cell: &mut Cell, problem: Result<NormalizedProblem>) {
    let solver = cell.config.solver();
    let grid = cell.config.q_list();
    let starts = cell.config.starts();
    let (est, ms) = cell.timed(|| {
        let p = cloned_err(&problem)?;
        estimate_qbar(p, starts, &grid, &solver, &AlphaRule::default(), cell.seed)
    });
    let problem = &problem;
    cell.push(None, "qbar-search", |row| {
        let est = est?;
        let p = cloned_err(problem)?.clone().with_alpha(est.alpha)?;
        let x = optimum_allocation(&p, &est.optimum)?;
        row.supported = Some(est.optimum.best_support.len());
        row.power_mw = Some(power_mw(&p, &x));
        row.runtime_ms = ms;
        row.match_benchmark = Some(est.status == QbarStatus::Success);
        row.qbar = Some(est.qbar);
        Ok(())
    });
}

fn admission_config(cell: &Cell) -> AdmissionConfig {
    AdmissionConfig {
        solver: SolverConfig {
            trace: false,
            ..cell.config.solver()
        },
        alpha_rule: AlphaRule::default(),
        seed: cell.seed,
    }
}

fn fill_admission(
    row: &mut MetricsRow,
    problem: &NormalizedProblem,
    result: Result<AdmissionResult>,
    ms: Option<f64>,
) -> Result<()> {
    let result = result?;
    let local: Vec<usize> = result
        .admitted
        .iter()
        .map(|&id| problem.position_of(id).expect("admitted ids come from the problem"))
        .collect();
    if !local.is_empty() && admissible(problem, &local)?.is_none() {
        return Err(JpacError::NotAdmissible(result.admitted));
    }
    row.supported = Some(result.admitted.len());
    row.power_mw = Some(result.total_power_w() * 1e3);
    row.runtime_ms = ms;
    Ok(())
}

fn lqmd_rows(cell: &mut Cell, problem: &Result<NormalizedProblem>, qs: &[f64], name: &str) {
    let config = admission_config(cell);
    let starts = cell.config.starts();
    for &q in qs {
        let (result, ms) = cell.timed(|| run_lqmd(cloned_err(problem)?, q, starts, &config));
        cell.push(Some(q), name, |row| fill_admission(row, cloned_err(problem)?, result, ms));
    }
}

fn deflate_compare(cell: &mut Cell, problem: Result<NormalizedProblem>) {
    let config = admission_config(cell);
    let (result, ms) = cell.timed(|| {
        let p = with_default_alpha(cloned_err(&problem)?)?;
        run_nlpd(&p, &config)
    });
    cell.push(None, "nlpd", |row| fill_admission(row, cloned_err(&problem)?, result, ms));
    let qs = cell.config.q_list();
    lqmd_rows(cell, &problem, &qs, "lqmd");
}

fn q_sensitivity(cell: &mut Cell, problem: Result<NormalizedProblem>) {
    let qs = cell.config.q_list();
    lqmd_rows(cell, &problem, &qs, "lqmd");
}

fn scaling_ratio(cell: &mut Cell, setup1: Result<NormalizedProblem>, setup2: Result<NormalizedProblem>) {
    let qs = cell.config.q_list();
    lqmd_rows(cell, &setup1, &qs, "lqmd-setup1");
    lqmd_rows(cell, &setup2, &qs, "lqmd-setup2");
}

/// One aggregate value. `algorithm` names a single algorithm, or a pair such
/// as `lqmd-vs-nlpd` for comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub experiment: Experiment,
    #[serde(rename = "K")]
    pub k: usize,
    pub q: Option<f64>,
    pub algorithm: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub records: Vec<SummaryRecord>,
    /// Failed rows left out of every aggregate.
    pub skipped: usize,
}

impl Summary {
    pub fn get(&self, k: usize, q: Option<f64>, algorithm: &str, metric: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.k == k && cmp_q(r.q, q) == Ordering::Equal && r.algorithm == algorithm && r.metric == metric)
            .map(|r| r.value)
    }
}

#[derive(Default)]
struct Group<'a> {
    ok: Vec<&'a MetricsRow>,
    total: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Key ordering `q` with `None` first so `BTreeMap` iteration is stable.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QKey(Option<f64>);

impl Eq for QKey {}

impl PartialOrd for QKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QKey {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_q(self.0, other.0)
    }
}

/// Aggregates rows of a single experiment.
///
/// Every experiment gets per-`(K, q, algorithm)` row counts, failures and
/// mean supported count and power. On top of that:
/// `approx-compare` adds the match rate; `recover-qbar` the success rate and
/// mean q̄ over successes; `deflate-compare` pairs each LQMD row with the NLPD
/// row of the same instance for win/lose/equal counts and the mean powers
/// over equal-cardinality pairs; `q-sensitivity` adds `D(K, q)`;
/// `scaling-ratio` pairs the two setups and reports per-pair mean ratios and
/// ratios of means.
pub fn summarize(rows: &[MetricsRow]) -> Result<Summary> {
    let Some(first) = rows.first() else {
        return Ok(Summary::default());
    };
    let experiment = first.experiment;
    if let Some(other) = rows.iter().find(|r| r.experiment != experiment) {
        return Err(JpacError::MixedExperiments(
            experiment.to_string(),
            other.experiment.to_string(),
        ));
    }

    let mut groups: BTreeMap<(usize, QKey, &str), Group> = BTreeMap::new();
    for row in rows {
        let g = groups.entry((row.k, QKey(row.q), row.algorithm.as_str())).or_default();
        g.total += 1;
        if !row.failed() {
            g.ok.push(row);
        }
    }

    let mut records = Vec::new();
    let mut emit = |k: usize, q: Option<f64>, algorithm: &str, metric: &str, value: f64| {
        records.push(SummaryRecord {
            experiment,
            k,
            q,
            algorithm: algorithm.to_string(),
            metric: metric.to_string(),
            value,
        });
    };

    for ((k, QKey(q), algorithm), g) in &groups {
        emit(*k, *q, algorithm, "rows", g.total as f64);
        emit(*k, *q, algorithm, "failed", (g.total - g.ok.len()) as f64);
        if let Some(m) = mean(g.ok.iter().filter_map(|r| r.supported.map(|s| s as f64))) {
            emit(*k, *q, algorithm, "mean_supported", m);
        }
        if let Some(m) = mean(g.ok.iter().filter_map(|r| r.power_mw)) {
            emit(*k, *q, algorithm, "mean_power_mw", m);
        }
        match experiment {
            Experiment::ApproxCompare => {
                if let Some(m) = mean(g.ok.iter().filter_map(|r| r.match_benchmark.map(f64::from))) {
                    emit(*k, *q, algorithm, "match_rate", m);
                }
            }
            Experiment::RecoverQbar => {
                if let Some(m) = mean(g.ok.iter().filter_map(|r| r.match_benchmark.map(f64::from))) {
                    emit(*k, *q, algorithm, "success_rate", m);
                }
                let hits = g.ok.iter().filter(|r| r.match_benchmark == Some(true));
                if let Some(m) = mean(hits.filter_map(|r| r.qbar)) {
                    emit(*k, *q, algorithm, "mean_qbar", m);
                }
            }
            _ => {}
        }
    }

    let ok_rows = |k: usize, algorithm: &str, q: Option<f64>| -> BTreeMap<u64, &MetricsRow> {
        groups
            .get(&(k, QKey(q), algorithm))
            .map(|g| g.ok.iter().map(|r| (r.seed, *r)).collect())
            .unwrap_or_default()
    };
    let lqmd_qs = |algorithm: &str| -> Vec<(usize, Option<f64>)> {
        groups
            .keys()
            .filter(|(_, _, a)| *a == algorithm)
            .map(|(k, q, _)| (*k, q.0))
            .collect()
    };

    match experiment {
        Experiment::DeflateCompare => {
            for (k, q) in lqmd_qs("lqmd") {
                let lqmd = ok_rows(k, "lqmd", q);
                let nlpd = ok_rows(k, "nlpd", None);
                let pairs: Vec<(&MetricsRow, &MetricsRow)> = lqmd
                    .iter()
                    .filter_map(|(seed, l)| nlpd.get(seed).map(|n| (*l, *n)))
                    .filter(|(l, n)| l.supported.is_some() && n.supported.is_some())
                    .collect();
                let (wins, losses, equal) = win_counts(pairs.iter().map(|(l, n)| (l.supported.unwrap(), n.supported.unwrap())));
                let name = "lqmd-vs-nlpd";
                emit(k, q, name, "pairs", pairs.len() as f64);
                emit(k, q, name, "lqmd_wins", wins as f64);
                emit(k, q, name, "nlpd_wins", losses as f64);
                emit(k, q, name, "equal", equal as f64);
                let equal_pairs: Vec<_> = pairs.iter().filter(|(l, n)| l.supported == n.supported).collect();
                if let Some(m) = mean(equal_pairs.iter().filter_map(|(l, _)| l.power_mw)) {
                    emit(k, q, name, "equal_mean_power_lqmd_mw", m);
                }
                if let Some(m) = mean(equal_pairs.iter().filter_map(|(_, n)| n.power_mw)) {
                    emit(k, q, name, "equal_mean_power_nlpd_mw", m);
                }
            }
        }
        Experiment::QSensitivity => {
            let ks: Vec<usize> = groups.keys().map(|(k, _, _)| *k).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            for k in ks {
                let means: Vec<(Option<f64>, f64)> = groups
                    .iter()
                    .filter(|((gk, _, a), _)| *gk == k && *a == "lqmd")
                    .filter_map(|((_, q, _), g)| mean(g.ok.iter().filter_map(|r| r.supported.map(|s| s as f64))).map(|m| (q.0, m)))
                    .collect();
                let best = means.iter().map(|(_, m)| *m).fold(f64::NEG_INFINITY, f64::max);
                for (q, m) in means {
                    emit(k, q, "lqmd", "D", m - best);
                }
            }
        }
        Experiment::ScalingRatio => {
            for (k, q) in lqmd_qs("lqmd-setup1") {
                let s1 = ok_rows(k, "lqmd-setup1", q);
                let s2 = ok_rows(k, "lqmd-setup2", q);
                let pairs: Vec<(&MetricsRow, &MetricsRow)> = s1
                    .iter()
                    .filter_map(|(seed, a)| s2.get(seed).map(|b| (*a, *b)))
                    .collect();
                let name = "setup1-vs-setup2";
                emit(k, q, name, "pairs", pairs.len() as f64);
                let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
                    (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                    _ => None,
                };
                let count = |r: &MetricsRow| r.supported.map(|s| s as f64);
                if let Some(m) = mean(pairs.iter().filter_map(|(a, b)| ratio(count(a), count(b)))) {
                    emit(k, q, name, "count_ratio_mean", m);
                }
                if let Some(m) = mean(pairs.iter().filter_map(|(a, b)| ratio(a.power_mw, b.power_mw))) {
                    emit(k, q, name, "power_ratio_mean", m);
                }
                let m1 = mean(pairs.iter().filter_map(|(a, _)| count(a)));
                let m2 = mean(pairs.iter().filter_map(|(_, b)| count(b)));
                if let Some(r) = ratio(m1, m2) {
                    emit(k, q, name, "count_ratio_of_means", r);
                }
                let p1 = mean(pairs.iter().filter_map(|(a, _)| a.power_mw));
                let p2 = mean(pairs.iter().filter_map(|(_, b)| b.power_mw));
                if let Some(r) = ratio(p1, p2) {
                    emit(k, q, name, "power_ratio_of_means", r);
                }
            }
        }
        _ => {}
    }

    let skipped = rows.iter().filter(|r| r.failed()).count();
    Ok(Summary { records, skipped })
}

/// `(first wins, second wins, ties)` over paired supported counts.
pub fn win_counts(pairs: impl Iterator<Item = (usize, usize)>) -> (usize, usize, usize) {
    pairs.fold((0, 0, 0), |(w, l, e), (a, b)| match a.cmp(&b) {
        Ordering::Greater => (w + 1, l, e),
        Ordering::Less => (w, l + 1, e),
        Ordering::Equal => (w, l, e + 1),
    })
}

pub fn write_rows<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    out.write_record(ROWS_HEADER)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    if header != ROWS_HEADER {
        return Err(JpacError::InvalidParameter(format!("unexpected rows header {header:?}")));
    }
    input.deserialize().map(|r| r.map_err(JpacError::from)).collect()
}

/// Writes the summary records followed by a `skipped` record.
pub fn write_summary<W: Write>(writer: W, summary: &Summary, experiment: Experiment) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    out.write_record(SUMMARY_HEADER)?;
    for record in &summary.records {
        out.serialize(record)?;
    }
    out.write_record([experiment.name(), "", "", "", "skipped", &summary.skipped.to_string()])?;
    out.flush()?;
    Ok(())
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub rows: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub traces: Option<PathBuf>,
}

/// Writes `rows.csv`, `summary.csv`, the resolved `config.json` and, if
/// traces were recorded, `traces.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<OutputPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = OutputPaths {
        rows: dir.join("rows.csv"),
        summary: dir.join("summary.csv"),
        config: dir.join("config.json"),
        traces: output.config.traces.then(|| dir.join("traces.jsonl")),
    };
    write_rows(std::fs::File::create(&paths.rows)?, &output.rows)?;
    write_summary(
        std::fs::File::create(&paths.summary)?,
        &output.summary,
        output.config.experiment,
    )?;
    std::fs::write(&paths.config, serde_json::to_string_pretty(&output.config)? + "\n")?;
    if let Some(path) = &paths.traces {
        let mut text = output.traces.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(path, text)?;
    }
    Ok(paths)
}
