//! Exact supportability primitives and the deflation algorithms.
//!
//! Both NLPD and LQMD share one skeleton:
//!
//! 1. drop strong interferers until the cheap necessary condition holds;
//! 2. if the remaining set is admissible, stop deflating;
//! 3. otherwise solve a power-control relaxation on the remaining links
//!    (ℓ1 for NLPD, multistart ℓq for LQMD) and drop the link that the
//!    residual-weighted interference score singles out, then repeat;
//! 4. try to re-admit removed links one at a time.
//!
//! Admissibility is always decided exactly, by solving `A_SS x_S = b_S`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JpacError, Result};
use crate::kernel::{multistart_solve, AugmentedProblem, SolverConfig};
use crate::network::{select_alpha, AlphaRule, NormalizedProblem};
use crate::rng::child_seed;

/// Slack allowed when checking `0 <= x_S <= e` and `(A_SS)⁻¹ >= 0`.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

/// Minimum-power solution on an admissible set.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissible {
    /// `x_S = A_SS⁻¹ b_S`, clipped to `[0, 1]`, in the order of the queried set.
    pub x: DVector<f64>,
    /// Smallest entry of `A_SS⁻¹`.
    pub inverse_min: f64,
}

/// Decides whether the local index set `set` can be supported simultaneously
/// and, if so, returns its minimum-power allocation.
///
/// The set is admissible exactly when `A_SS` is invertible with
/// `0 <= A_SS⁻¹ b_S <= e`; the nonnegativity of `A_SS⁻¹` is checked as well.
pub fn admissible(problem: &NormalizedProblem, set: &[usize]) -> Result<Option<Admissible>> {
    if set.is_empty() {
        return Err(JpacError::EmptySet);
    }
    let k = problem.len();
    if let Some(&bad) = set.iter().find(|&&i| i >= k) {
        return Err(JpacError::InvalidParameter(format!("link index {bad} out of range")));
    }
    let n = set.len();
    let a = problem.a();
    let b = problem.b();
    let sub = DMatrix::from_fn(n, n, |r, c| a[(set[r], set[c])]);
    let rhs = DVector::from_fn(n, |r, _| b[set[r]]);
    Ok(admissible_block(sub, &rhs))
}

fn admissible_block(sub: DMatrix<f64>, rhs: &DVector<f64>) -> Option<Admissible> {
    let n = sub.nrows();
    let lu = sub.lu();
    let x = lu.solve(rhs)?;
    if !x.iter().all(|&v| v >= -ADMISSIBILITY_TOL && v <= 1.0 + ADMISSIBILITY_TOL) {
        return None;
    }
    let inverse = lu.solve(&DMatrix::identity(n, n))?;
    let inverse_min = inverse.min();
    if !inverse_min.is_finite() || inverse_min < -ADMISSIBILITY_TOL {
        return None;
    }
    Some(Admissible {
        x: x.map(|v| v.clamp(0.0, 1.0)),
        inverse_min,
    })
}

/// Full-length normalized power vector supporting `set` at minimum power
/// (zeros off the set).
pub fn min_power_allocation(problem: &NormalizedProblem, set: &[usize]) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(problem.len());
    if set.is_empty() {
        return Ok(x);
    }
    let sol = admissible(problem, set)?.ok_or_else(|| JpacError::NotAdmissible(set.to_vec()))?;
    for (r, &i) in set.iter().enumerate() {
        x[i] = sol.x[r];
    }
    Ok(x)
}

/// Fixed-point power update `x⁺ = b_S + (I - A)_SS x` run to an
/// infinity-norm change of at most `tol`. Returns `x_S` in the order of `set`.
pub fn foschini_miljanic(
    problem: &NormalizedProblem,
    set: &[usize],
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    if set.is_empty() {
        return Err(JpacError::EmptySet);
    }
    let n = set.len();
    if x0.len() != n {
        return Err(JpacError::DimensionMismatch(format!(
            "start has length {}, expected {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|&v| v < 0.0) {
        return Err(JpacError::InvalidParameter("start must be nonnegative".into()));
    }
    let a = problem.a();
    let b = problem.b();
    let cross = DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            0.0
        } else {
            -a[(set[r], set[c])]
        }
    });
    let b_s = DVector::from_fn(n, |r, _| b[set[r]]);
    let mut x = x0.clone();
    for _ in 0..max_iter {
        let next = &b_s + &cross * &x;
        let change = (&next - &x).amax();
        x = next;
        if change <= tol {
            return Ok(x);
        }
    }
    Err(JpacError::IterationLimit(max_iter))
}

/// Cheap necessary condition for all links to be supportable:
/// `(μ⁺)ᵀe - (μ⁻ + e)ᵀb >= 0` with `μ = Aᵀe`.
pub fn necessary_condition(problem: &NormalizedProblem) -> bool {
    necessary_condition_value(problem) >= 0.0
}

pub fn necessary_condition_value(problem: &NormalizedProblem) -> f64 {
    let a = problem.a();
    let b = problem.b();
    (0..problem.len())
        .map(|j| {
            let mu = a.column(j).sum();
            mu.max(0.0) - ((-mu).max(0.0) + 1.0) * b[j]
        })
        .sum()
}

/// Total interference caused and received plus own noise, per link.
pub fn preprocess_scores(problem: &NormalizedProblem) -> Vec<f64> {
    let a = problem.a();
    let k = problem.len();
    (0..k)
        .map(|i| {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| a[(i, j)].abs() + a[(j, i)].abs()).sum();
            off + problem.b()[i]
        })
        .collect()
}

/// First index of the maximum; ties go to the smallest index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Removes the strongest interferer until the necessary condition holds,
/// never removing the last link. Returns the reduced problem and the removed
/// original link ids in removal order.
pub fn preprocess(problem: &NormalizedProblem) -> Result<(NormalizedProblem, Vec<usize>)> {
    let mut current = problem.clone();
    let mut removed = Vec::new();
    while current.len() >= 2 && !necessary_condition(&current) {
        let k0 = argmax(&preprocess_scores(&current));
        removed.push(current.link_ids()[k0]);
        let keep: Vec<usize> = (0..current.len()).filter(|&i| i != k0).collect();
        current = current.restrict(&keep)?;
    }
    Ok((current, removed))
}

/// Residual-weighted interference scores
/// `Σ_{j≠k} (|a_kj| r_j + |a_jk| r_k)` with `r = max(b - A x, 0)`.
pub fn removal_scores(problem: &NormalizedProblem, x: &DVector<f64>) -> Result<Vec<f64>> {
    let k = problem.len();
    if x.len() != k {
        return Err(JpacError::DimensionMismatch(format!(
            "power vector has length {}, expected {k}",
            x.len()
        )));
    }
    let a = problem.a();
    let r = problem.residual(x).map(|v| v.max(0.0));
    Ok((0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs() * r[j] + a[(j, i)].abs() * r[i])
                .sum()
        })
        .collect())
}

/// Local index of the link to drop given an approximate power vector.
pub fn removal_candidate(problem: &NormalizedProblem, x: &DVector<f64>) -> Result<usize> {
    Ok(argmax(&removal_scores(problem, x)?))
}

/// Re-admits removed links (original ids) one at a time, scanning in
/// reverse removal order and repeating until a full pass admits nothing.
/// Returns the final admitted ids (ascending) and the re-admitted ids in
/// admission order.
pub fn postprocess(
    problem: &NormalizedProblem,
    admitted: &[usize],
    removed: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let local = |id: usize| {
        problem
            .position_of(id)
            .ok_or_else(|| JpacError::InvalidParameter(format!("unknown link id {id}")))
    };
    let mut set: Vec<usize> = admitted.iter().map(|&id| local(id)).collect::<Result<_>>()?;
    let mut pending: Vec<usize> = removed.iter().rev().map(|&id| local(id)).collect::<Result<_>>()?;
    let mut readmitted = Vec::new();
    loop {
        let mut changed = false;
        let mut still_pending = Vec::with_capacity(pending.len());
        for r in pending {
            let mut trial = set.clone();
            trial.push(r);
            if admissible(problem, &trial)?.is_some() {
                set = trial;
                readmitted.push(problem.link_ids()[r]);
                changed = true;
            } else {
                still_pending.push(r);
            }
        }
        pending = still_pending;
        if !changed || pending.is_empty() {
            break;
        }
    }
    let mut ids: Vec<usize> = set.iter().map(|&i| problem.link_ids()[i]).collect();
    ids.sort_unstable();
    Ok((ids, readmitted))
}

/// Which step removed a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalStage {
    Preprocess,
    Deflate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub link: usize,
    pub stage: RemovalStage,
    /// Score of the removed link under the rule that selected it.
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmissionStats {
    pub solver_calls: usize,
    pub total_iterations: usize,
    pub deflation_rounds: usize,
}

/// Outcome of a deflation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionResult {
    /// Admitted original link ids, ascending.
    pub admitted: Vec<usize>,
    /// Transmit power of each admitted link in watts, aligned with `admitted`.
    pub powers_w: Vec<f64>,
    pub removal_trace: Vec<Removal>,
    pub readmitted: Vec<usize>,
    pub stats: AdmissionStats,
}

impl AdmissionResult {
    pub fn total_power_w(&self) -> f64 {
        self.powers_w.iter().sum()
    }

    pub fn to_document(&self) -> AdmissionDocument {
        AdmissionDocument {
            admitted: self.admitted.clone(),
            powers_mw: self.powers_w.iter().map(|p| p * 1e3).collect(),
            removal_trace: self
                .removal_trace
                .iter()
                .map(|r| RemovalEntry {
                    link: r.link,
                    stage: r.stage,
                })
                .collect(),
            readmitted: self.readmitted.clone(),
            stats: self.stats.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

/// Wire form of [`AdmissionResult`]; powers in milliwatts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDocument {
    pub admitted: Vec<usize>,
    pub powers_mw: Vec<f64>,
    pub removal_trace: Vec<RemovalEntry>,
    pub readmitted: Vec<usize>,
    pub stats: AdmissionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalEntry {
    pub link: usize,
    pub stage: RemovalStage,
}

/// Settings shared by both deflation algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmissionConfig {
    pub solver: SolverConfig,
    pub alpha_rule: AlphaRule,
    /// Master seed for LQMD's random starts; round `r` uses child stream `r`.
    pub seed: u64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            alpha_rule: AlphaRule::default(),
            seed: 0,
        }
    }
}

/// Power-control relaxation used inside the deflation loop.
enum PowerControl {
    /// ℓ1 relaxation, single default start, fixed α from the input problem.
    L1,
    /// ℓq relaxation with α re-selected each round and `starts` interior points.
    Lq { q: f64, starts: usize },
}

/// NLPD: deflation driven by the ℓ1 (LP) relaxation. The problem must carry α.
pub fn run_nlpd(problem: &NormalizedProblem, config: &AdmissionConfig) -> Result<AdmissionResult> {
    problem.require_alpha()?;
    deflate(problem, config, PowerControl::L1)
}

/// LQMD: deflation driven by multistart ℓq minimization.
pub fn run_lqmd(
    problem: &NormalizedProblem,
    q: f64,
    starts: usize,
    config: &AdmissionConfig,
) -> Result<AdmissionResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(JpacError::InvalidParameter(format!("LQMD needs q in (0, 1), got {q}")));
    }
    if starts == 0 {
        return Err(JpacError::InvalidParameter("start count must be at least 1".into()));
    }
    deflate(problem, config, PowerControl::Lq { q, starts })
}

fn deflate(
    problem: &NormalizedProblem,
    config: &AdmissionConfig,
    control: PowerControl,
) -> Result<AdmissionResult> {
    let mut stats = AdmissionStats::default();
    let mut trace = Vec::new();

    let scores = preprocess_scores(problem);
    let (mut current, pre_removed) = preprocess(problem)?;
    for id in &pre_removed {
        let local = problem.position_of(*id).expect("removed link comes from the problem");
        trace.push(Removal {
            link: *id,
            stage: RemovalStage::Preprocess,
            score: scores[local],
        });
    }

    let mut surviving: Vec<usize> = Vec::new();
    loop {
        let all: Vec<usize> = (0..current.len()).collect();
        if admissible(&current, &all)?.is_some() {
            surviving = current.link_ids().to_vec();
            break;
        }
        let x = match control {
            PowerControl::L1 => {
                let aug = AugmentedProblem::new(&current, 1.0)?;
                let sol = multistart_solve(&aug, &config.solver, 1, 0)?;
                stats.total_iterations += sol.total_iterations();
                sol.best_x
            }
            PowerControl::Lq { q, starts } => {
                let alpha = select_alpha(&current, &config.alpha_rule)?;
                let current_alpha = current.clone().with_alpha(alpha)?;
                let aug = AugmentedProblem::new(&current_alpha, q)?;
                let seed = child_seed(config.seed, stats.deflation_rounds as u64);
                let sol = multistart_solve(&aug, &config.solver, starts, seed)?;
                stats.total_iterations += sol.total_iterations();
                sol.best_x
            }
        };
        stats.solver_calls += 1;
        stats.deflation_rounds += 1;
        let removal = removal_scores(&current, &x)?;
        let k0 = argmax(&removal);
        trace.push(Removal {
            link: current.link_ids()[k0],
            stage: RemovalStage::Deflate,
            score: removal[k0],
        });
        if current.len() == 1 {
            break;
        }
        let keep: Vec<usize> = (0..current.len()).filter(|&i| i != k0).collect();
        current = current.restrict(&keep)?;
    }

    let removed: Vec<usize> = trace.iter().map(|r| r.link).collect();
    let (admitted, readmitted) = postprocess(problem, &surviving, &removed)?;
    let local: Vec<usize> = admitted
        .iter()
        .map(|&id| problem.position_of(id).expect("admitted link comes from the problem"))
        .collect();
    let x = min_power_allocation(problem, &local)?;
    let powers_w = local.iter().map(|&i| x[i] * problem.budgets()[i]).collect();
    Ok(AdmissionResult {
        admitted,
        powers_w,
        removal_trace: trace,
        readmitted,
        stats,
    })
}
