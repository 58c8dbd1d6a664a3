use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::problem::{potential_log, AugmentedProblem};
use crate::error::{JpacError, Result};

/// Step radius giving the guaranteed potential decrease `2 - √3`.
pub const DEFAULT_BETA: f64 = 1.0 - 0.577_350_269_189_625_8;

/// Guaranteed per-iteration potential decrease `β - β²/(2(1-β))` at the default β.
pub fn guaranteed_decrease(beta: f64) -> f64 {
    beta - beta * beta / (2.0 * (1.0 - beta))
}

const RIDGE_RETRIES: usize = 3;
/// Relative drift in `Ã w = b̃` tolerated before a restoring correction.
const DRIFT_TOL: f64 = 1e-13;
const ABSOLUTE_ITER_CAP: usize = 100_000;

/// Tuning of the potential-reduction solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Target accuracy ε of the certificates.
    pub epsilon: f64,
    /// Radius of the scaled step, `0 < β < 1`.
    pub beta: f64,
    /// Constant `C` of the iteration cap `C (K / min{ε, q}) ln(1/ε)`.
    pub cap_constant: f64,
    /// Hard ceiling on iterations regardless of the formula.
    pub absolute_cap: usize,
    /// Residual threshold deciding that a link is supported after rounding.
    pub zero_tol: f64,
    /// Random starts draw `ξ` from `[init_margin, 1 - init_margin]`.
    pub init_margin: f64,
    /// Keep one trace record per iteration.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            beta: DEFAULT_BETA,
            cap_constant: 10.0,
            absolute_cap: ABSOLUTE_ITER_CAP,
            zero_tol: 1e-6,
            init_margin: 1e-3,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(JpacError::InvalidParameter(format!(
                "epsilon = {} must lie in (0, 1)",
                self.epsilon
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(JpacError::InvalidParameter(format!("beta = {}", self.beta)));
        }
        if !(self.cap_constant > 0.0) || self.absolute_cap == 0 {
            return Err(JpacError::InvalidParameter("iteration cap must be positive".into()));
        }
        if !(self.zero_tol >= 0.0) {
            return Err(JpacError::InvalidParameter(format!("zero_tol = {}", self.zero_tol)));
        }
        if !(self.init_margin > 0.0 && self.init_margin < 0.5) {
            return Err(JpacError::InvalidParameter(format!(
                "init_margin = {}",
                self.init_margin
            )));
        }
        Ok(())
    }

    /// Potential weight `ρ = max{6K/ε, 2K/q}`, which satisfies both
    /// `ρ > K/q` and `ρ >= 6K/ε`.
    pub fn rho(&self, links: usize, q: f64) -> f64 {
        let k = links as f64;
        (6.0 * k / self.epsilon).max(2.0 * k / q)
    }

    /// `C (K / min{ε, q}) ln(1/ε)`, clipped to the absolute cap.
    pub fn iteration_cap(&self, links: usize, q: f64) -> usize {
        let k = links as f64;
        let bound = self.cap_constant * (k / self.epsilon.min(q)) * (1.0 / self.epsilon).ln();
        (bound.ceil() as usize).clamp(1, self.absolute_cap)
    }

    /// Potential level below which `f(w) <= ε` is guaranteed:
    /// `(ρ - K/q) ln ε + (K/q) ln K + K ln 4`.
    pub fn optimality_threshold(&self, links: usize, q: f64, rho: f64) -> f64 {
        let k = links as f64;
        (rho - k / q) * self.epsilon.ln() + (k / q) * k.ln() + k * 4f64.ln()
    }
}

/// Interior iterate of the potential-reduction method.
#[derive(Debug, Clone)]
pub struct IterateState {
    /// `(w₁; w₂; w₃)`, strictly positive in exact arithmetic; entries below
    /// the double range read as 0.
    pub w: DVector<f64>,
    /// `ln w`, the authoritative copy of the iterate.
    pub log_w: DVector<f64>,
    pub f_value: f64,
    pub potential: f64,
    pub rho: f64,
    pub beta: f64,
    pub iteration: usize,
}

impl IterateState {
    pub fn new(problem: &AugmentedProblem, w: DVector<f64>, rho: f64, beta: f64) -> Result<Self> {
        let potential = problem.potential(&w, rho)?;
        let f_value = problem.objective(&w)?;
        Ok(Self {
            log_w: w.map(f64::ln),
            w,
            f_value,
            potential,
            rho,
            beta,
            iteration: 0,
        })
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// `f(w) <= ε` certified by the potential threshold.
    EpsOptimal,
    /// `‖g(w)‖ <= 1`: nonnegative dual residual and complementarity gap `<= ε`.
    EpsKkt,
    IterationCap,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::EpsOptimal => "eps-optimal",
            Termination::EpsKkt => "eps-kkt",
            Termination::IterationCap => "iteration-cap",
        };
        f.write_str(s)
    }
}

/// Multiplier evidence attached to a returned iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktCertificate {
    pub lambda: Vec<f64>,
    /// `min_n [∇f(w) - Ãᵀλ]_n`.
    pub dual_residual: f64,
    /// `wᵀ(∇f(w) - Ãᵀλ) / f(w)` (lower objective bound 0, upper bound f(w)).
    pub comp_gap: f64,
    /// The gap with the numerator `Σ_n (q w_n^q - [Ãᵀλ]_n w_n)` taken
    /// literally over all 3K components, kept for comparison.
    pub comp_gap_literal: f64,
    /// `max_n (ρ/f) w_n [∇f - Ãᵀλ]_n`; at most 2 on an ε-KKT return.
    pub max_scaled_complementarity: f64,
    /// `min_n (ρ/f) w_n [∇f - Ãᵀλ]_n`; at least 0 on an ε-KKT return.
    pub min_scaled_complementarity: f64,
    pub epsilon: f64,
    pub f_value: f64,
    pub norm_g: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl KktCertificate {
    /// Checks the invariants that the termination class promises.
    pub fn is_sound(&self) -> bool {
        match self.termination {
            Termination::EpsKkt => self.dual_residual >= -1e-8 && self.comp_gap <= self.epsilon,
            Termination::EpsOptimal => self.f_value <= self.epsilon,
            Termination::IterationCap => true,
        }
    }
}

/// One line of the optional JSON-lines solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f: f64,
    pub phi: f64,
    pub norm_g: f64,
}

/// Direction data computed at an iterate.
#[derive(Debug, Clone)]
struct Projection {
    lambda: DVector<f64>,
    /// `∇f - Ãᵀλ`.
    reduced: DVector<f64>,
    /// `W (∇f - Ãᵀλ)`.
    w_reduced: DVector<f64>,
    g: DVector<f64>,
    norm_g: f64,
}

/// Result of a single [`reduction_step`].
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Step {
        state: IterateState,
        norm_g: f64,
        /// `φ(w) - φ(w⁺)`.
        decrease: f64,
    },
    Converged(KktCertificate),
}

/// Solves `(Ã W² Ãᵀ) λ = Ã W (W∇f - (f/ρ) e)` and forms
/// `g = e - (ρ/f) W (∇f - Ãᵀλ)`.
fn project(problem: &AugmentedProblem, state: &IterateState) -> Result<Projection> {
    let (w, f, rho) = (&state.w, state.f_value, state.rho);
    let w_grad = problem.scaled_gradient_log(&state.log_w);
    let normal = normal_matrix(problem, w);

    let u = w.component_mul(&w_grad) - w * (f / rho);
    let rhs = problem.apply(&u);
    let lambda = solve_spd(normal, &rhs)?;

    let at_lambda = problem.apply_transpose(&lambda);
    let reduced = problem.gradient_log(&state.log_w) - &at_lambda;
    // W(∇f - Ãᵀλ), formed without multiplying 0 by an infinite gradient.
    let w_reduced = &w_grad - w.component_mul(&at_lambda);
    let scale = rho / f;
    let g = w_reduced.map(|v| 1.0 - scale * v);
    let norm_g = g.norm();
    Ok(Projection {
        lambda,
        reduced,
        w_reduced,
        g,
        norm_g,
    })
}

/// `Ã W² Ãᵀ`, assembled blockwise.
fn normal_matrix(problem: &AugmentedProblem, w: &DVector<f64>) -> DMatrix<f64> {
    let k = problem.links();
    let d = w.map(|v| v * v);
    let a = problem.a();
    let d1 = d.rows(0, k);
    let d2 = d.rows(k, k);
    let d3 = d.rows(2 * k, k);

    // Ã D Ãᵀ = | A D₁ Aᵀ + D₂   A D₁    |
    //          | D₁ Aᵀ          D₁ + D₃ |
    let a_d1 = DMatrix::from_fn(k, k, |i, j| a[(i, j)] * d1[j]);
    let mut normal = DMatrix::zeros(2 * k, 2 * k);
    let top_left = &a_d1 * a.transpose();
    normal.view_mut((0, 0), (k, k)).copy_from(&top_left);
    normal.view_mut((0, k), (k, k)).copy_from(&a_d1);
    normal.view_mut((k, 0), (k, k)).copy_from(&a_d1.transpose());
    for i in 0..k {
        normal[(i, i)] += d2[i];
        normal[(k + i, k + i)] = d1[i] + d3[i];
    }

    normal
}

/// Cholesky solve with escalating diagonal ridge on failure.
fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(chol.solve(rhs));
    }
    let n = matrix.nrows();
    let base = 1e-12 * matrix.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut ridge = base;
    for _ in 0..RIDGE_RETRIES {
        let mut shifted = matrix.clone();
        for i in 0..n {
            shifted[(i, i)] += ridge;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(chol.solve(rhs));
        }
        ridge *= 100.0;
    }
    Err(JpacError::SingularSystem {
        retries: RIDGE_RETRIES,
    })
}

fn certificate(
    problem: &AugmentedProblem,
    state: &IterateState,
    proj: &Projection,
    epsilon: f64,
    termination: Termination,
) -> KktCertificate {
    let w = &state.w;
    let f = state.f_value;
    let q = problem.q();
    let scaled: Vec<f64> = proj.w_reduced.iter().map(|v| state.rho / f * v).collect();
    let at_lambda = problem.apply_transpose(&proj.lambda);
    let literal: f64 = state
        .log_w
        .iter()
        .zip(w.iter())
        .zip(at_lambda.iter())
        .map(|((lw, wn), an)| q * (q * lw).exp() - an * wn)
        .sum();
    KktCertificate {
        lambda: proj.lambda.iter().copied().collect(),
        dual_residual: proj.reduced.min(),
        comp_gap: proj.w_reduced.sum() / f,
        comp_gap_literal: literal / f,
        max_scaled_complementarity: scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_scaled_complementarity: scaled.iter().copied().fold(f64::INFINITY, f64::min),
        epsilon,
        f_value: f,
        norm_g: proj.norm_g,
        iterations: state.iteration,
        termination,
    }
}

/// One potential-reduction iteration.
///
/// Returns [`StepOutcome::Converged`] with an ε-KKT certificate when
/// `‖g(w)‖ <= 1`; otherwise moves to `w⁺ = w ∘ (e + β g/‖g‖)`.
pub fn reduction_step(
    state: &IterateState,
    problem: &AugmentedProblem,
    epsilon: f64,
) -> Result<StepOutcome> {
    let proj = project(problem, state)?;
    if proj.norm_g <= 1.0 {
        return Ok(StepOutcome::Converged(certificate(
            problem,
            state,
            &proj,
            epsilon,
            Termination::EpsKkt,
        )));
    }
    let (next, decrease) = advance(state, problem, &proj)?;
    Ok(StepOutcome::Step {
        state: next,
        norm_g: proj.norm_g,
        decrease,
    })
}

/// Takes the scaled step and returns the new state with `φ(w) - φ(w⁺)`.
///
/// The step is multiplicative, `ln w⁺ = ln w + ln(e + β g/‖g‖)`, and
/// `‖β g/‖g‖‖ = β < 1` keeps the logarithm finite.
fn advance(state: &IterateState, problem: &AugmentedProblem, proj: &Projection) -> Result<(IterateState, f64)> {
    let breakdown = |detail: String| JpacError::NumericalBreakdown {
        iteration: state.iteration,
        detail,
    };
    if !proj.norm_g.is_finite() {
        return Err(breakdown(format!("‖g‖ = {}", proj.norm_g)));
    }
    let step = state.beta / proj.norm_g;
    let mut log_w = DVector::from_fn(state.log_w.len(), |n, _| state.log_w[n] + (step * proj.g[n]).ln_1p());
    restore_feasibility(problem, &mut log_w)?;
    if let Some(v) = log_w.iter().find(|v| !v.is_finite()) {
        return Err(breakdown(format!("ln w component {v}")));
    }
    let f_value = problem.objective_log(&log_w);
    let potential = potential_log(f_value, &log_w, state.rho);
    if !(f_value > 0.0) || !potential.is_finite() {
        return Err(breakdown(format!("f = {f_value:e}, potential {potential}")));
    }
    let next = IterateState {
        w: log_w.map(f64::exp),
        log_w,
        f_value,
        potential,
        rho: state.rho,
        beta: state.beta,
        iteration: state.iteration + 1,
    };
    Ok((next, state.potential - potential))
}

/// Rounding in the multiplicative update slowly pulls `Ã w` away from `b̃`.
/// Once the drift passes [`DRIFT_TOL`], apply the least-norm correction in
/// W-scaled coordinates, `w ← w ∘ (e - W Ãᵀ (Ã W² Ãᵀ)⁻¹ r)`, which moves
/// each entry by a tiny relative amount and so keeps `w > 0`.
fn restore_feasibility(problem: &AugmentedProblem, log_w: &mut DVector<f64>) -> Result<()> {
    let w = log_w.map(f64::exp);
    if !(problem.feasibility_error(&w) > DRIFT_TOL) {
        return Ok(());
    }
    let r = problem.apply(&w) - problem.b_tilde();
    let mu = solve_spd(normal_matrix(problem, &w), &r)?;
    let rel = w.component_mul(&problem.apply_transpose(&mu));
    if rel.amax() < 0.5 {
        for (lw, d) in log_w.iter_mut().zip(rel.iter()) {
            *lw += (-d).ln_1p();
        }
    }
    Ok(())
}

/// Outcome of [`solve_potential_reduction`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub w: DVector<f64>,
    pub certificate: KktCertificate,
    /// Smallest potential decrease over all accepted steps (`+∞` if none).
    pub min_decrease: f64,
    pub trace: Vec<TraceRecord>,
}

impl Solution {
    /// Normalized power block `w₁`.
    pub fn power(&self) -> DVector<f64> {
        let k = self.w.len() / 3;
        self.w.rows(0, k).into_owned()
    }
}

/// Runs potential reduction from a strictly feasible `w_init` until the
/// potential certifies ε-optimality, `‖g‖ <= 1` certifies an ε-KKT point,
/// or the iteration cap is reached.
pub fn solve_potential_reduction(
    problem: &AugmentedProblem,
    config: &SolverConfig,
    w_init: DVector<f64>,
) -> Result<Solution> {
    config.validate()?;
    let k = problem.links();
    let q = problem.q();
    if w_init.iter().any(|&v| !(v > 0.0)) {
        return Err(JpacError::NotInterior("initial point is not strictly positive".into()));
    }
    let infeasibility = problem.feasibility_error(&w_init);
    if infeasibility > 1e-10 {
        return Err(JpacError::NotInterior(format!(
            "initial point violates the equality constraints by {infeasibility:e}"
        )));
    }
    let rho = config.rho(k, q);
    let threshold = config.optimality_threshold(k, q, rho);
    let cap = config.iteration_cap(k, q);
    let mut state = IterateState::new(problem, w_init, rho, config.beta)?;
    let mut trace = Vec::new();
    let mut min_decrease = f64::INFINITY;

    loop {
        let proj = project(problem, &state)?;
        if config.trace {
            trace.push(TraceRecord {
                iter: state.iteration,
                f: state.f_value,
                phi: state.potential,
                norm_g: proj.norm_g,
            });
        }
        let termination = if state.potential <= threshold && state.f_value <= config.epsilon {
            Some(Termination::EpsOptimal)
        } else if proj.norm_g <= 1.0 {
            Some(Termination::EpsKkt)
        } else if state.iteration >= cap {
            Some(Termination::IterationCap)
        } else {
            None
        };
        if let Some(termination) = termination {
            let certificate = certificate(problem, &state, &proj, config.epsilon, termination);
            return Ok(Solution {
                w: state.w,
                certificate,
                min_decrease,
                trace,
            });
        }
        let (next, decrease) = advance(&state, problem, &proj)?;
        min_decrease = min_decrease.min(decrease);
        state = next;
    }
}
