use nalgebra::{DMatrix, DVector};

use crate::error::{JpacError, Result};
use crate::network::NormalizedProblem;

/// Slack-augmented form of the ℓq power-control problem:
///
/// ```text
/// min  f(w) = c̃ᵀw₁ + Σ_k [w₂]_k^q
/// s.t. Ã w = b̃,  w ≥ 0,
///
///      Ã = | A  I  0 |     b̃ = | b |     c̃ = α p̄
///          | I  0  I |         | e |
/// ```
///
/// `w = (w₁; w₂; w₃)`: normalized powers, SINR slacks `b - A w₁`, and
/// budget slacks `e - w₁`. Ã is never materialized in the solver; products
/// with it are evaluated blockwise.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    q: f64,
}

impl AugmentedProblem {
    pub fn new(problem: &NormalizedProblem, q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(JpacError::InvalidParameter(format!(
                "exponent q = {q} must lie in (0, 1]"
            )));
        }
        let alpha = problem.require_alpha()?;
        Ok(Self {
            a: problem.a().clone(),
            b: problem.b().clone(),
            c: problem.budgets() * alpha,
            q,
        })
    }

    /// Number of links K; `w` has length 3K.
    pub fn links(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn cost(&self) -> &DVector<f64> {
        &self.c
    }

    /// Dense `2K x 3K` constraint matrix.
    pub fn a_tilde(&self) -> DMatrix<f64> {
        let k = self.links();
        let mut m = DMatrix::zeros(2 * k, 3 * k);
        m.view_mut((0, 0), (k, k)).copy_from(&self.a);
        for i in 0..k {
            m[(i, k + i)] = 1.0;
            m[(k + i, i)] = 1.0;
            m[(k + i, 2 * k + i)] = 1.0;
        }
        m
    }

    pub fn b_tilde(&self) -> DVector<f64> {
        let k = self.links();
        let mut v = DVector::from_element(2 * k, 1.0);
        v.rows_mut(0, k).copy_from(&self.b);
        v
    }

    /// `Ã w`, evaluated blockwise.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let k = self.links();
        let (w1, w2, w3) = (w.rows(0, k), w.rows(k, k), w.rows(2 * k, k));
        let mut out = DVector::zeros(2 * k);
        out.rows_mut(0, k).copy_from(&(&self.a * w1 + w2));
        out.rows_mut(k, k).copy_from(&(w1 + w3));
        out
    }

    /// `Ãᵀ λ`, evaluated blockwise.
    pub fn apply_transpose(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let k = self.links();
        let (l1, l2) = (lambda.rows(0, k), lambda.rows(k, k));
        let mut out = DVector::zeros(3 * k);
        out.rows_mut(0, k).copy_from(&(self.a.tr_mul(&l1) + l2));
        out.rows_mut(k, k).copy_from(&l1);
        out.rows_mut(2 * k, k).copy_from(&l2);
        out
    }

    /// `max_i |Ã w - b̃|_i / max(1, (|Ã| w)_i)`.
    ///
    /// Rows of `A` can reach 1e7 or more under strong interference, where an
    /// absolute residual is dominated by rounding in `Ã w` itself, so each row
    /// is measured against its own magnitude.
    pub fn feasibility_error(&self, w: &DVector<f64>) -> f64 {
        let k = self.links();
        let r = self.apply(w) - self.b_tilde();
        let (w1, w2, w3) = (w.rows(0, k), w.rows(k, k), w.rows(2 * k, k));
        let top = self.a.abs() * w1.abs() + w2.abs();
        let bottom = w1.abs() + w3.abs();
        (0..2 * k)
            .map(|i| {
                let scale = if i < k { top[i] } else { bottom[i - k] };
                r[i].abs() / scale.max(1.0)
            })
            .fold(0.0, f64::max)
    }

    fn check_len(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != 3 * self.links() {
            return Err(JpacError::DimensionMismatch(format!(
                "iterate has length {}, expected {}",
                w.len(),
                3 * self.links()
            )));
        }
        Ok(())
    }

    fn check_interior(&self, w: &DVector<f64>) -> Result<()> {
        self.check_len(w)?;
        if let Some(n) = w.iter().position(|&v| !(v > 0.0)) {
            return Err(JpacError::NotInterior(format!("w[{n}] = {}", w[n])));
        }
        Ok(())
    }

    /// `f(w) = c̃ᵀw₁ + Σ [w₂]_k^q`. Only the slack block needs to be positive.
    pub fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_len(w)?;
        let k = self.links();
        let w2 = w.rows(k, k);
        if let Some(n) = w2.iter().position(|&v| v < 0.0) {
            return Err(JpacError::NotInterior(format!("slack w2[{n}] = {}", w2[n])));
        }
        let linear = self.c.dot(&w.rows(0, k));
        let lq: f64 = w2.iter().map(|&v| v.powf(self.q)).sum();
        Ok(linear + lq)
    }

    /// `∇f(w) = (c̃; q w₂^(q-1); 0)`.
    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(w)?;
        let k = self.links();
        let mut g = DVector::zeros(3 * k);
        g.rows_mut(0, k).copy_from(&self.c);
        for i in 0..k {
            let s = w[k + i];
            if !(s > 0.0) {
                return Err(JpacError::NotInterior(format!("slack w2[{i}] = {s}")));
            }
            g[k + i] = self.q * s.powf(self.q - 1.0);
        }
        Ok(g)
    }

    /// Potential `ρ ln f(w) - Σ ln w_n` over all 3K components.
    pub fn potential(&self, w: &DVector<f64>, rho: f64) -> Result<f64> {
        self.check_interior(w)?;
        let f = self.objective(w)?;
        Ok(potential_value(f, w, rho))
    }

    /// `m = min{b, e}` componentwise.
    fn half_box(&self) -> DVector<f64> {
        self.b.map(|v| v.min(1.0))
    }

    /// Interior point built from `x = ξ ∘ min{b, e}`.
    fn point_from_power(&self, x: DVector<f64>) -> DVector<f64> {
        let k = self.links();
        let mut w = DVector::zeros(3 * k);
        let slack = &self.b - &self.a * &x;
        w.rows_mut(k, k).copy_from(&slack);
        w.rows_mut(2 * k, k).copy_from(&x.map(|v| 1.0 - v));
        w.rows_mut(0, k).copy_from(&x);
        w
    }

    /// `w⁰ = (m/2; b - A m/2; e - m/2)` with `m = min{b, e}`.
    pub fn default_interior_point(&self) -> DVector<f64> {
        self.point_from_power(self.half_box() * 0.5)
    }

    /// `w(ξ) = (ξ∘m; b - A(ξ∘m); e - ξ∘m)`; every `ξ_k` must lie in
    /// `[margin, 1 - margin]`.
    pub fn random_interior_point(&self, xi: &DVector<f64>, margin: f64) -> Result<DVector<f64>> {
        let k = self.links();
        if xi.len() != k {
            return Err(JpacError::DimensionMismatch(format!(
                "xi has length {}, expected {k}",
                xi.len()
            )));
        }
        if !(margin >= 0.0 && margin < 0.5) {
            return Err(JpacError::InvalidParameter(format!("margin = {margin}")));
        }
        if let Some(i) = xi.iter().position(|&v| !(v >= margin && v <= 1.0 - margin)) {
            return Err(JpacError::InvalidParameter(format!(
                "xi[{i}] = {} outside [{margin}, {}]",
                xi[i],
                1.0 - margin
            )));
        }
        let w = self.point_from_power(self.half_box().component_mul(xi));
        self.check_interior(&w)?;
        Ok(w)
    }
}

pub(crate) fn potential_value(f: f64, w: &DVector<f64>, rho: f64) -> f64 {
    rho * f.ln() - w.iter().map(|v| v.ln()).sum::<f64>()
}

// Log-coordinate forms used by the solver. Slack components of an ε-KKT
// point at small q sit near ε^(1/q), far below the smallest double, so the
// solver carries ln w and only forms the products it needs in closed form.
impl AugmentedProblem {
    /// `f` at `w = exp(log_w)`.
    pub(crate) fn objective_log(&self, log_w: &DVector<f64>) -> f64 {
        let k = self.links();
        let linear: f64 = (0..k).map(|i| self.c[i] * log_w[i].exp()).sum();
        let lq: f64 = (0..k).map(|i| (self.q * log_w[k + i]).exp()).sum();
        linear + lq
    }

    /// `W ∇f(w) = (c̃ ∘ w₁; q w₂^q; 0)` at `w = exp(log_w)`.
    pub(crate) fn scaled_gradient_log(&self, log_w: &DVector<f64>) -> DVector<f64> {
        let k = self.links();
        let mut s = DVector::zeros(3 * k);
        for i in 0..k {
            s[i] = self.c[i] * log_w[i].exp();
            s[k + i] = self.q * (self.q * log_w[k + i]).exp();
        }
        s
    }

    /// `∇f(w)` at `w = exp(log_w)`; slack entries may be `+∞`.
    pub(crate) fn gradient_log(&self, log_w: &DVector<f64>) -> DVector<f64> {
        let k = self.links();
        let mut g = DVector::zeros(3 * k);
        g.rows_mut(0, k).copy_from(&self.c);
        for i in 0..k {
            g[k + i] = self.q * ((self.q - 1.0) * log_w[k + i]).exp();
        }
        g
    }
}

pub(crate) fn potential_log(f: f64, log_w: &DVector<f64>, rho: f64) -> f64 {
    rho * f.ln() - log_w.sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_link(alpha: f64, q: f64) -> AugmentedProblem {
        let p = NormalizedProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            Some(alpha),
        )
        .unwrap();
        AugmentedProblem::new(&p, q).unwrap()
    }

    pub(crate) fn worked_example(q: f64) -> AugmentedProblem {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0, -1.0, -1.0, 1.0]);
        let p = NormalizedProblem::new(
            a,
            DVector::from_element(3, 0.5),
            DVector::from_element(3, 1.0),
            Some(1.0 / 15.0),
        )
        .unwrap();
        AugmentedProblem::new(&p, q).unwrap()
    }

    #[test]
    fn single_link_blocks() {
        let p = single_link(0.2, 0.5);
        assert_eq!(p.a_tilde(), DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0]));
        assert_eq!(p.b_tilde().as_slice(), &[1.0, 1.0]);
        assert_eq!(p.cost().as_slice(), &[0.2]);
    }

    #[test]
    fn worked_example_blocks() {
        let p = worked_example(0.5);
        let at = p.a_tilde();
        assert_eq!(at.shape(), (6, 9));
        assert_eq!(at.view((0, 0), (3, 3)), *p.a());
        assert_eq!(at.view((0, 3), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert_eq!(at.view((3, 0), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert_eq!(at.view((3, 6), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert!(at.view((0, 6), (3, 3)).iter().all(|&v| v == 0.0));
        assert!(at.view((3, 3), (3, 3)).iter().all(|&v| v == 0.0));
        let w = DVector::from_fn(9, |i, _| 0.1 * (i as f64 + 1.0));
        assert!((p.apply(&w) - &at * &w).amax() < 1e-15);
        let l = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert!((p.apply_transpose(&l) - at.transpose() * &l).amax() < 1e-15);
    }

    #[test]
    fn rejects_bad_exponent_or_missing_alpha() {
        let p = NormalizedProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        assert!(AugmentedProblem::new(&p, 0.5).is_err());
        let p = p.with_alpha(0.1).unwrap();
        assert!(AugmentedProblem::new(&p, 0.0).is_err());
        assert!(AugmentedProblem::new(&p, 1.5).is_err());
    }

    #[test]
    fn objective_and_gradient_power_rule() {
        let p = single_link(0.2, 0.5);
        let w = DVector::from_vec(vec![0.0, 4.0, 1.0]);
        assert!((p.objective(&w).unwrap() - 2.0).abs() < 1e-15);
        assert!((p.gradient(&w).unwrap()[1] - 0.25).abs() < 1e-15);

        let lin = worked_example(1.0);
        let w = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!((lin.objective(&w).unwrap() - 3.0).abs() < 1e-15);
        let g = lin.gradient(&w).unwrap();
        assert_eq!(g.rows(3, 3).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.rows(6, 3).as_slice(), &[0.0, 0.0, 0.0]);

        let boundary = DVector::from_vec(vec![0.5, 0.0, 0.5]);
        assert!(p.gradient(&boundary).is_err());
    }

    #[test]
    fn potential_vanishes_at_ones() {
        let lin = single_link(0.2, 1.0);
        // w = e gives f = 0.2 + 1, so scale the check by hand.
        let w = DVector::from_element(3, 1.0);
        let f = lin.objective(&w).unwrap();
        assert!((lin.potential(&w, 7.0).unwrap() - 7.0 * f.ln()).abs() < 1e-14);
        assert_eq!(potential_value(1.0, &w, 123.0), 0.0);
        assert!(lin.potential(&DVector::from_vec(vec![0.0, 1.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn default_interior_points() {
        let p = single_link(0.2, 0.5);
        assert_eq!(p.default_interior_point().as_slice(), &[0.5, 0.5, 0.5]);

        let p = worked_example(0.5);
        let w0 = p.default_interior_point();
        let expected = [0.25, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 0.75, 0.75];
        for (a, b) in w0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(p.feasibility_error(&w0) < 1e-15);
    }

    #[test]
    fn random_interior_point_worked_example() {
        let p = worked_example(0.5);
        let xi = DVector::from_vec(vec![0.2, 0.4, 0.6]);
        let w = p.random_interior_point(&xi, 1e-3).unwrap();
        let expected = [0.1, 0.2, 0.3, 0.7, 0.6, 0.5, 0.9, 0.8, 0.7];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let half = p.random_interior_point(&DVector::from_element(3, 0.5), 1e-3).unwrap();
        assert_eq!(half, p.default_interior_point());
        assert!(p.random_interior_point(&DVector::from_element(3, 1.0), 1e-3).is_err());
        assert!(p.random_interior_point(&DVector::from_element(2, 0.5), 1e-3).is_err());
    }
}
