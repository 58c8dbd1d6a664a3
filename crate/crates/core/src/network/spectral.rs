use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RESTARTS: usize = 10;
const MAX_ITER: usize = 10_000;
const REL_TOL: f64 = 1e-12;
const DENSE_FALLBACK_MAX: usize = 64;

/// Spectral radius of a square nonnegative matrix.
///
/// Runs power iteration on the shifted matrix `M + I` (primitive whenever `M`
/// is irreducible, so periodic patterns such as bipartite interference still
/// converge) and tracks the Collatz-Wielandt bracket
/// `min_i (Mx)_i/x_i <= ρ(M) <= max_i (Mx)_i/x_i` for a positive iterate `x`.
/// Stops when the bracket is tight. If no restart closes the bracket, falls
/// back to a dense eigenvalue solve for `n <= 64`, or returns the best upper
/// bound otherwise.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "spectral radius needs a square matrix");
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut best_upper = f64::INFINITY;
    for restart in 0..RESTARTS {
        let start = if restart == 0 {
            DVector::from_element(n, 1.0)
        } else {
            DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5))
        };
        match shifted_power_iteration(m, start) {
            Ok(r) => return r,
            Err(upper) => best_upper = best_upper.min(upper),
        }
    }
    if n <= DENSE_FALLBACK_MAX {
        dense_spectral_radius(m)
    } else {
        best_upper
    }
}

/// `Ok(ρ)` on convergence, `Err(best upper bound)` otherwise.
fn shifted_power_iteration(m: &DMatrix<f64>, mut x: DVector<f64>) -> Result<f64, f64> {
    let mut upper = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mx = m * &x;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for i in 0..x.len() {
            let ratio = mx[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        upper = upper.min(hi);
        if hi - lo <= REL_TOL * hi.max(f64::MIN_POSITIVE) {
            return Ok(0.5 * (hi + lo));
        }
        let mut next = mx + &x;
        let norm = next.max();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(upper);
        }
        next /= norm;
        // Underflowing components make the bracket meaningless.
        if next.iter().any(|&v| v < 1e-200) {
            return Err(upper);
        }
        x = next;
    }
    Err(upper)
}

fn dense_spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
