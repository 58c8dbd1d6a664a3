use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::problem::AugmentedProblem;
use super::solver::{solve_potential_reduction, KktCertificate, SolverConfig, TraceRecord};
use crate::error::{JpacError, Result};
use crate::rng::child_stream;

/// Power vector recovered from an iterate together with its supported links.
#[derive(Debug, Clone, PartialEq)]
pub struct Rounded {
    /// `clip(w₁, 0, 1)`.
    pub x: DVector<f64>,
    /// Local indices `k` with `[b - A x]_k <= zero_tol`, ascending.
    pub support: Vec<usize>,
}

/// Maps an iterate back to the power variable and reads off the support.
pub fn round_to_power(w: &DVector<f64>, problem: &AugmentedProblem, zero_tol: f64) -> Rounded {
    let k = problem.links();
    let x = w.rows(0, k).map(|v| v.clamp(0.0, 1.0));
    let residual = problem.b() - problem.a() * &x;
    let support = (0..k).filter(|&i| residual[i] <= zero_tol).collect();
    Rounded { x, support }
}

/// Thresholded ℓ0 score split into `(unsupported count, α p̄ᵀx)`.
///
/// Since `α p̄ᵀx < 1` on the box, ordering these pairs lexicographically is
/// the same as ordering the scalar score `count + α p̄ᵀx`.
pub fn support_score(rounded: &Rounded, problem: &AugmentedProblem) -> (usize, f64) {
    let unsupported = problem.links() - rounded.support.len();
    (unsupported, problem.cost().dot(&rounded.x))
}

/// Per-start record of a multistart run.
#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub start: usize,
    pub result: std::result::Result<StartSuccess, String>,
}

#[derive(Debug, Clone)]
pub struct StartSuccess {
    pub rounded: Rounded,
    pub unsupported: usize,
    pub power_cost: f64,
    pub certificate: KktCertificate,
    pub min_decrease: f64,
    pub trace: Vec<TraceRecord>,
}

/// Best rounded solution over all starts.
#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best_x: DVector<f64>,
    pub best_support: Vec<usize>,
    /// `#{k: [b - A x]_k > τ} + α p̄ᵀx`.
    pub score: f64,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
}

impl MultistartResult {
    pub fn certificates(&self) -> impl Iterator<Item = &KktCertificate> {
        self.starts
            .iter()
            .filter_map(|s| s.result.as_ref().ok().map(|r| &r.certificate))
    }

    pub fn total_iterations(&self) -> usize {
        self.certificates().map(|c| c.iterations).sum()
    }
}

/// Runs the solver from the default interior point and `n - 1` random
/// interior points and keeps the lowest thresholded ℓ0 score. Ties go to
/// the lower power cost, then the lower start index. Start `i > 0` draws its
/// `ξ` from child stream `i` of `seed`, so results do not depend on how the
/// starts are scheduled across threads.
pub fn multistart_solve(
    problem: &AugmentedProblem,
    config: &SolverConfig,
    n: usize,
    seed: u64,
) -> Result<MultistartResult> {
    if n == 0 {
        return Err(JpacError::InvalidParameter("start count must be at least 1".into()));
    }
    config.validate()?;
    let k = problem.links();
    let run = |start: usize| -> StartOutcome {
        let init = if start == 0 {
            Ok(problem.default_interior_point())
        } else {
            let mut rng = child_stream(seed, start as u64);
            let lo = config.init_margin;
            let xi = DVector::from_fn(k, |_, _| rng.gen_range(lo..=1.0 - lo));
            problem.random_interior_point(&xi, config.init_margin)
        };
        let result = init
            .and_then(|w| solve_potential_reduction(problem, config, w))
            .map(|sol| {
                let rounded = round_to_power(&sol.w, problem, config.zero_tol);
                let (unsupported, power_cost) = support_score(&rounded, problem);
                StartSuccess {
                    rounded,
                    unsupported,
                    power_cost,
                    certificate: sol.certificate,
                    min_decrease: sol.min_decrease,
                    trace: sol.trace,
                }
            })
            .map_err(|e| e.to_string());
        StartOutcome { start, result }
    };
    let starts: Vec<StartOutcome> = if n == 1 {
        vec![run(0)]
    } else {
        (0..n).into_par_iter().map(run).collect()
    };

    let best = starts
        .iter()
        .filter_map(|s| s.result.as_ref().ok().map(|r| (s.start, r)))
        .min_by(|(ia, a), (ib, b)| {
            a.unsupported
                .cmp(&b.unsupported)
                .then(a.power_cost.partial_cmp(&b.power_cost).unwrap_or(Ordering::Equal))
                .then(ia.cmp(ib))
        });
    let Some((best_start, best)) = best else {
        let last = starts
            .iter()
            .rev()
            .find_map(|s| s.result.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(JpacError::NoSuccessfulStart(last));
    };
    Ok(MultistartResult {
        best_x: best.rounded.x.clone(),
        best_support: best.rounded.support.clone(),
        score: best.unsupported as f64 + best.power_cost,
        best_start,
        starts,
    })
}

/// Appends the trace of every successful start, in start order, as JSON lines.
pub fn write_trace(path: &Path, result: &MultistartResult) -> Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for start in &result.starts {
        if let Ok(success) = &start.result {
            for record in &success.trace {
                serde_json::to_writer(&mut buf, record)?;
                buf.push(b'\n');
            }
        }
    }
    file.write_all(&buf)?;
    Ok(())
}
