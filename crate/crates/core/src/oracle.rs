//! Exact references for small instances.
//!
//! [`enumerate_l0`] solves the sparse ℓ0 admission problem by sweeping every
//! link subset, [`lp_exact`] solves the ℓ1 relaxation as an LP by vertex
//! enumeration, and [`estimate_qbar`] searches a descending grid for the
//! largest exponent whose multistart ℓq solution reproduces the ℓ0 optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admission::{admissible, min_power_allocation};
use crate::error::{JpacError, Result};
use crate::kernel::{multistart_solve, AugmentedProblem, SolverConfig};
use crate::network::{select_alpha, AlphaRule, NormalizedProblem};

pub const ENUMERATION_MAX_LINKS: usize = 20;
pub const LP_MAX_LINKS: usize = 8;
/// Residuals at or below this count as zero in the ℓ0 objective.
pub const L0_ZERO_TOL: f64 = 1e-9;
/// Power match tolerance when comparing a recovered solution to the optimum.
pub const MATCH_TOL: f64 = 1e-3;

/// Global optimum of `min ‖b - Ax‖₀ + α p̄ᵀx` over `0 <= x <= e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    /// Supported local indices, ascending.
    pub best_support: Vec<usize>,
    pub best_x: Vec<f64>,
    pub objective: f64,
    /// False when another support reaches the same objective within 1e-9.
    pub is_unique_support: bool,
}

impl EnumerationResult {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.best_x)
    }
}

/// `‖b - Ax‖₀ + α p̄ᵀx` with zero counted at [`L0_ZERO_TOL`].
pub fn l0_objective(problem: &NormalizedProblem, x: &DVector<f64>, alpha: f64) -> f64 {
    let nonzero = problem.residual(x).iter().filter(|&&r| r.abs() > L0_ZERO_TOL).count();
    nonzero as f64 + alpha * problem.budgets().dot(x)
}

/// Sweeps all `2^K` link subsets. Admissibility is closed under taking
/// subsets, so a set with an inadmissible one-smaller subset is skipped
/// without a solve. Ties prefer the larger set, then the lower power, then
/// the lexicographically smaller set.
pub fn enumerate_l0(problem: &NormalizedProblem) -> Result<EnumerationResult> {
    let k = problem.len();
    if k > ENUMERATION_MAX_LINKS {
        return Err(JpacError::GuardExceeded {
            size: k,
            guard: ENUMERATION_MAX_LINKS,
        });
    }
    let alpha = problem.require_alpha()?;
    let budgets = problem.budgets();
    let count = 1usize << k;
    let mut feasible = vec![false; count];
    feasible[0] = true;

    // (objective, support, x, power)
    let mut candidates: Vec<(f64, Vec<usize>, DVector<f64>, f64)> = Vec::new();
    let zero = DVector::zeros(k);
    candidates.push((l0_objective(problem, &zero, alpha), Vec::new(), zero, 0.0));

    for mask in 1..count {
        let children_ok = (0..k)
            .filter(|&i| mask & (1 << i) != 0)
            .all(|i| feasible[mask & !(1 << i)]);
        if !children_ok {
            continue;
        }
        let set: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let Some(sol) = admissible(problem, &set)? else {
            continue;
        };
        feasible[mask] = true;
        let mut x = DVector::zeros(k);
        for (r, &i) in set.iter().enumerate() {
            x[i] = sol.x[r];
        }
        let power = budgets.dot(&x);
        candidates.push((l0_objective(problem, &x, alpha), set, x, power));
    }

    let better = |a: &(f64, Vec<usize>, DVector<f64>, f64), b: &(f64, Vec<usize>, DVector<f64>, f64)| {
        if (a.0 - b.0).abs() > 1e-12 {
            return a.0 < b.0;
        }
        if a.1.len() != b.1.len() {
            return a.1.len() > b.1.len();
        }
        if a.3 != b.3 {
            return a.3 < b.3;
        }
        a.1 < b.1
    };
    let mut best = 0;
    for i in 1..candidates.len() {
        if better(&candidates[i], &candidates[best]) {
            best = i;
        }
    }
    let (objective, support, x, _) = &candidates[best];
    let is_unique_support = candidates
        .iter()
        .enumerate()
        .all(|(i, c)| i == best || (c.0 - objective).abs() > 1e-9);
    Ok(EnumerationResult {
        best_support: support.clone(),
        best_x: x.iter().copied().collect(),
        objective: *objective,
        is_unique_support,
    })
}

/// Exact optimum of the ℓ1 relaxation written as an LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// `eᵀ(b - Ax) + α p̄ᵀx`.
    pub objective: f64,
    pub vertices_checked: usize,
}

/// `eᵀ(b - Ax) + α p̄ᵀx`.
pub fn lp_objective(problem: &NormalizedProblem, x: &DVector<f64>, alpha: f64) -> f64 {
    problem.residual(x).sum() + alpha * problem.budgets().dot(x)
}

/// Solves `min eᵀ(b - Ax) + α p̄ᵀx  s.t.  Ax <= b, 0 <= x <= e` by
/// enumerating the vertices of the feasible polytope.
///
/// A vertex fixes each coordinate at 0, at 1, or leaves it free, and makes
/// as many rows of `Ax <= b` active as there are free coordinates. Every
/// such choice with a nonsingular active block is solved, infeasible points
/// are discarded, and the best survivor wins (ties to the lexicographically
/// smallest `x`).
pub fn lp_exact(problem: &NormalizedProblem) -> Result<LpSolution> {
    let k = problem.len();
    if k > LP_MAX_LINKS {
        return Err(JpacError::GuardExceeded {
            size: k,
            guard: LP_MAX_LINKS,
        });
    }
    let alpha = problem.require_alpha()?;
    let a = problem.a();
    let b = problem.b();
    const FEAS_TOL: f64 = 1e-9;

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut checked = 0usize;
    let assignments = 3usize.pow(k as u32);
    for code in 0..assignments {
        // 0: x_i = 0, 1: x_i = 1, 2: free
        let mut state = vec![0u8; k];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..k).filter(|&i| state[i] == 2).collect();
        let mut base = DVector::zeros(k);
        for i in 0..k {
            if state[i] == 1 {
                base[i] = 1.0;
            }
        }
        for rows in combinations(k, free.len()) {
            checked += 1;
            let mut x = base.clone();
            if !free.is_empty() {
                let n = free.len();
                let block = DMatrix::from_fn(n, n, |r, c| a[(rows[r], free[c])]);
                let fixed = a * &base;
                let rhs = DVector::from_fn(n, |r, _| b[rows[r]] - fixed[rows[r]]);
                let Some(sol) = block.lu().solve(&rhs) else {
                    continue;
                };
                for (c, &i) in free.iter().enumerate() {
                    x[i] = sol[c];
                }
            }
            if x.iter().any(|&v| !(v >= -FEAS_TOL && v <= 1.0 + FEAS_TOL)) {
                continue;
            }
            if problem.residual(&x).iter().any(|&r| r < -FEAS_TOL) {
                continue;
            }
            let x = x.map(|v| v.clamp(0.0, 1.0));
            let value = lp_objective(problem, &x, alpha);
            let replace = match &best {
                None => true,
                Some((bv, bx)) => {
                    if (value - bv).abs() > 1e-12 * (1.0 + bv.abs()) {
                        value < *bv
                    } else {
                        lexicographically_less(&x, bx)
                    }
                }
            };
            if replace {
                best = Some((value, x));
            }
        }
    }
    let (objective, x) = best.expect("x = 0 is always a feasible vertex");
    Ok(LpSolution {
        x: x.iter().copied().collect(),
        objective,
        vertices_checked: checked,
    })
}

fn lexicographically_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > 1e-12 {
            return x < y;
        }
    }
    false
}

/// All `r`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(r);
    fn rec(start: usize, n: usize, r: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == r {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            if n - i < r - current.len() {
                break;
            }
            current.push(i);
            rec(i + 1, n, r, current, out);
            current.pop();
        }
    }
    rec(0, n, r, &mut current, &mut out);
    out
}

/// Whether a rounded ℓq solution reproduces the ℓ0 optimum: equal supports
/// and powers within [`MATCH_TOL`] in the infinity norm.
pub fn matches_optimum(support: &[usize], x: &DVector<f64>, optimum: &EnumerationResult) -> bool {
    support == optimum.best_support.as_slice() && (x - optimum.x()).amax() <= MATCH_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QbarStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QbarEstimate {
    /// Largest grid exponent that recovered the optimum, or 0 on failure.
    pub qbar: f64,
    pub status: QbarStatus,
    pub alpha: f64,
    pub optimum: EnumerationResult,
    /// Grid points tried before stopping.
    pub tried: usize,
}

/// The default exponent grid `{0.01, 0.02, ..., 1}`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Scans `grid` from the largest exponent down and returns the first one
/// whose `starts`-start multistart solution matches the enumerated optimum.
/// Every grid point reuses `seed`, so dropping grid points below the answer
/// cannot change it.
pub fn estimate_qbar(
    problem: &NormalizedProblem,
    starts: usize,
    grid: &[f64],
    config: &SolverConfig,
    rule: &AlphaRule,
    seed: u64,
) -> Result<QbarEstimate> {
    if grid.is_empty() {
        return Err(JpacError::InvalidParameter("exponent grid is empty".into()));
    }
    if let Some(q) = grid.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
        return Err(JpacError::InvalidParameter(format!("grid exponent {q} outside (0, 1]")));
    }
    let alpha = select_alpha(problem, rule)?;
    let problem = problem.clone().with_alpha(alpha)?;
    let optimum = enumerate_l0(&problem)?;
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
    order.dedup();
    for (tried, &q) in order.iter().enumerate() {
        let aug = AugmentedProblem::new(&problem, q)?;
        let sol = multistart_solve(&aug, config, starts, seed)?;
        if matches_optimum(&sol.best_support, &sol.best_x, &optimum) {
            return Ok(QbarEstimate {
                qbar: q,
                status: QbarStatus::Success,
                alpha,
                optimum,
                tried: tried + 1,
            });
        }
    }
    Ok(QbarEstimate {
        qbar: 0.0,
        status: QbarStatus::Failure,
        alpha,
        optimum,
        tried: order.len(),
    })
}

/// Minimum-power allocation of the enumerated optimum, as a full vector.
pub fn optimum_allocation(problem: &NormalizedProblem, optimum: &EnumerationResult) -> Result<DVector<f64>> {
    min_power_allocation(problem, &optimum.best_support)
}
