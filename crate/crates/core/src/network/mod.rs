//! Physical interference model and its normalized sparse form.
//!
//! A [`NetworkInstance`] holds the raw channel: gains `g[k][j]` from
//! transmitter `j` to receiver `k`, noise powers, SINR targets and power
//! budgets, all in linear units (watts). [`normalize`] maps it to the
//! `(A, b, p̄)` triple in which link `k` meets its target exactly when
//! `[A x - b]_k >= 0` for the normalized power `x = p / p̄`.

mod spectral;

pub use spectral::spectral_radius;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JpacError, Result};

/// Version tag written into every instance/problem document.
pub const DOCUMENT_VERSION: u32 = 1;

/// Transmitter and receiver positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub transmitters: Vec<[f64; 2]>,
    pub receivers: Vec<[f64; 2]>,
}

/// A K-link interference channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    gains: DMatrix<f64>,
    noise: DVector<f64>,
    sinr_targets: DVector<f64>,
    budgets: DVector<f64>,
    geometry: Option<Geometry>,
}

impl NetworkInstance {
    /// Validates and builds an instance. `gains[(k, j)]` is the gain from
    /// transmitter `j` to receiver `k`.
    pub fn new(
        gains: DMatrix<f64>,
        noise: DVector<f64>,
        sinr_targets: DVector<f64>,
        budgets: DVector<f64>,
        geometry: Option<Geometry>,
    ) -> Result<Self> {
        let k = gains.nrows();
        if k == 0 {
            return Err(JpacError::InvalidInstance("no links".into()));
        }
        if gains.ncols() != k {
            return Err(JpacError::DimensionMismatch(format!(
                "gain matrix is {}x{}",
                gains.nrows(),
                gains.ncols()
            )));
        }
        for (name, v) in [
            ("noise", &noise),
            ("sinr_targets", &sinr_targets),
            ("budgets", &budgets),
        ] {
            if v.len() != k {
                return Err(JpacError::DimensionMismatch(format!(
                    "{name} has length {}, expected {k}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(JpacError::InvalidInstance(format!(
                    "{name}[{i}] = {} is not strictly positive",
                    v[i]
                )));
            }
        }
        for kk in 0..k {
            for j in 0..k {
                let g = gains[(kk, j)];
                if !(g.is_finite() && g >= 0.0) {
                    return Err(JpacError::InvalidInstance(format!(
                        "gain ({kk}, {j}) = {g} is negative or not finite"
                    )));
                }
            }
            if gains[(kk, kk)] <= 0.0 {
                return Err(JpacError::InvalidInstance(format!(
                    "direct gain of link {kk} is not positive"
                )));
            }
        }
        if let Some(geo) = &geometry {
            if geo.transmitters.len() != k || geo.receivers.len() != k {
                return Err(JpacError::DimensionMismatch(
                    "geometry does not match the link count".into(),
                ));
            }
        }
        Ok(Self {
            gains,
            noise,
            sinr_targets,
            budgets,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.gains.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }

    pub fn noise(&self) -> &DVector<f64> {
        &self.noise
    }

    pub fn sinr_targets(&self) -> &DVector<f64> {
        &self.sinr_targets
    }

    pub fn budgets(&self) -> &DVector<f64> {
        &self.budgets
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        self.geometry.as_ref()
    }

    /// Reads an instance from its JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDocument::from(self))?)
    }
}

/// Wire form of [`NetworkInstance`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub gains: Vec<Vec<f64>>,
    pub noise_w: Vec<f64>,
    pub sinr_targets_linear: Vec<f64>,
    pub budgets_w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
}

impl From<&NetworkInstance> for InstanceDocument {
    fn from(inst: &NetworkInstance) -> Self {
        Self {
            version: DOCUMENT_VERSION,
            k: inst.len(),
            gains: matrix_rows(&inst.gains),
            noise_w: inst.noise.iter().copied().collect(),
            sinr_targets_linear: inst.sinr_targets.iter().copied().collect(),
            budgets_w: inst.budgets.iter().copied().collect(),
            geometry: inst.geometry.clone(),
        }
    }
}

impl TryFrom<InstanceDocument> for NetworkInstance {
    type Error = JpacError;

    fn try_from(doc: InstanceDocument) -> Result<Self> {
        if doc.version != DOCUMENT_VERSION {
            return Err(JpacError::UnsupportedVersion(doc.version));
        }
        let gains = matrix_from_rows(&doc.gains, doc.k)?;
        NetworkInstance::new(
            gains,
            DVector::from_vec(doc.noise_w),
            DVector::from_vec(doc.sinr_targets_linear),
            DVector::from_vec(doc.budgets_w),
            doc.geometry,
        )
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], k: usize) -> Result<DMatrix<f64>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(JpacError::DimensionMismatch(format!(
            "matrix is not {k}x{k}"
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

/// Per-link SINR `g_kk p_k / (η_k + Σ_{j≠k} g_kj p_j)` for power vector `p` (watts).
pub fn sinr(instance: &NetworkInstance, p: &DVector<f64>) -> Result<DVector<f64>> {
    let k = instance.len();
    if p.len() != k {
        return Err(JpacError::DimensionMismatch(format!(
            "power vector has length {}, expected {k}",
            p.len()
        )));
    }
    let g = &instance.gains;
    Ok(DVector::from_fn(k, |i, _| {
        let interference: f64 = (0..k).filter(|&j| j != i).map(|j| g[(i, j)] * p[j]).sum();
        g[(i, i)] * p[i] / (instance.noise[i] + interference)
    }))
}

/// The `(A, b, p̄, α)` form of the admission problem.
///
/// Rows may be a subset of the original links after [`NormalizedProblem::restrict`];
/// `link_ids[i]` names the original link behind row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    budgets: DVector<f64>,
    alpha: Option<f64>,
    link_ids: Vec<usize>,
}

impl NormalizedProblem {
    /// Builds a problem from raw parts, checking the structural invariants
    /// (unit diagonal, non-positive off-diagonals, positive `b` and budgets).
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        budgets: DVector<f64>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let k = a.nrows();
        let ids = (0..k).collect();
        Self::with_ids(a, b, budgets, alpha, ids)
    }

    pub fn with_ids(
        a: DMatrix<f64>,
        b: DVector<f64>,
        budgets: DVector<f64>,
        alpha: Option<f64>,
        link_ids: Vec<usize>,
    ) -> Result<Self> {
        let k = a.nrows();
        if k == 0 {
            return Err(JpacError::EmptySet);
        }
        if a.ncols() != k || b.len() != k || budgets.len() != k || link_ids.len() != k {
            return Err(JpacError::DimensionMismatch(
                "A, b, budgets and link ids must agree on K".into(),
            ));
        }
        for i in 0..k {
            if a[(i, i)] != 1.0 {
                return Err(JpacError::InvalidInstance(format!(
                    "A[{i},{i}] = {} is not 1",
                    a[(i, i)]
                )));
            }
            for j in 0..k {
                if i != j && !(a[(i, j)] <= 0.0 && a[(i, j)].is_finite()) {
                    return Err(JpacError::InvalidInstance(format!(
                        "A[{i},{j}] = {} is not a finite non-positive entry",
                        a[(i, j)]
                    )));
                }
            }
            if !(b[i] > 0.0 && b[i].is_finite()) {
                return Err(JpacError::InvalidInstance(format!("b[{i}] = {}", b[i])));
            }
            if !(budgets[i] > 0.0 && budgets[i].is_finite()) {
                return Err(JpacError::InvalidInstance(format!(
                    "budget[{i}] = {}",
                    budgets[i]
                )));
            }
        }
        let problem = Self {
            a,
            b,
            budgets,
            alpha: None,
            link_ids,
        };
        match alpha {
            Some(alpha) => problem.with_alpha(alpha),
            None => Ok(problem),
        }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn budgets(&self) -> &DVector<f64> {
        &self.budgets
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn link_ids(&self) -> &[usize] {
        &self.link_ids
    }

    /// `α₁ = 1 / eᵀp̄`, the exclusive upper bound on the power weight.
    pub fn alpha_upper(&self) -> f64 {
        1.0 / self.budgets.sum()
    }

    /// Returns a copy with the power weight set; requires `0 < α < α₁`.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        let upper = self.alpha_upper();
        if !(alpha > 0.0 && alpha < upper) {
            return Err(JpacError::InvalidParameter(format!(
                "alpha = {alpha} must lie in (0, {upper})"
            )));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn require_alpha(&self) -> Result<f64> {
        self.alpha
            .ok_or_else(|| JpacError::InvalidParameter("alpha has not been selected".into()))
    }

    /// Residual `b - A x`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * x
    }

    /// `I - A`, the nonnegative normalized cross-interference matrix.
    pub fn interference(&self) -> DMatrix<f64> {
        DMatrix::identity(self.len(), self.len()) - &self.a
    }

    /// Sub-problem on the local row indices in `set` (order preserved,
    /// duplicates rejected). `α` carries over unchanged.
    pub fn restrict(&self, set: &[usize]) -> Result<Self> {
        if set.is_empty() {
            return Err(JpacError::EmptySet);
        }
        let k = self.len();
        let mut seen = vec![false; k];
        for &i in set {
            if i >= k || seen[i] {
                return Err(JpacError::InvalidParameter(format!(
                    "index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        let n = set.len();
        Ok(Self {
            a: DMatrix::from_fn(n, n, |r, c| self.a[(set[r], set[c])]),
            b: DVector::from_fn(n, |r, _| self.b[set[r]]),
            budgets: DVector::from_fn(n, |r, _| self.budgets[set[r]]),
            alpha: self.alpha,
            link_ids: set.iter().map(|&i| self.link_ids[i]).collect(),
        })
    }

    /// Local row index of original link `id`, if still present.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.link_ids.iter().position(|&l| l == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemDocument = serde_json::from_str(text)?;
        if doc.version != DOCUMENT_VERSION {
            return Err(JpacError::UnsupportedVersion(doc.version));
        }
        let a = matrix_from_rows(&doc.a, doc.k)?;
        Self::with_ids(
            a,
            DVector::from_vec(doc.b),
            DVector::from_vec(doc.budgets_w),
            doc.alpha,
            doc.link_ids,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ProblemDocument {
            version: DOCUMENT_VERSION,
            k: self.len(),
            a: matrix_rows(&self.a),
            b: self.b.iter().copied().collect(),
            budgets_w: self.budgets.iter().copied().collect(),
            alpha: self.alpha,
            link_ids: self.link_ids.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Wire form of [`NormalizedProblem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub budgets_w: Vec<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub link_ids: Vec<usize>,
}

/// Normalizes a physical instance:
/// `a_kj = -γ_k g_kj p̄_j / (g_kk p̄_k)` off the diagonal, `a_kk = 1`,
/// `b_k = γ_k η_k / (g_kk p̄_k)`.
pub fn normalize(instance: &NetworkInstance) -> Result<NormalizedProblem> {
    let k = instance.len();
    let g = &instance.gains;
    let gamma = &instance.sinr_targets;
    let pbar = &instance.budgets;
    for i in 0..k {
        if g[(i, i)] <= 0.0 {
            return Err(JpacError::InvalidInstance(format!(
                "direct gain of link {i} is not positive"
            )));
        }
    }
    let a = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            -gamma[i] * g[(i, j)] * pbar[j] / (g[(i, i)] * pbar[i])
        }
    });
    let b = DVector::from_fn(k, |i, _| gamma[i] * instance.noise[i] / (g[(i, i)] * pbar[i]));
    NormalizedProblem::new(a, b, pbar.clone(), None)
}

/// Constants of the α-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRule {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Never-over-removal bound; when absent the `ρ(I - A) < 1` branch
    /// falls back to `c2 α₁`.
    pub alpha2: Option<f64>,
}

impl Default for AlphaRule {
    fn default() -> Self {
        Self {
            c1: 0.2,
            c2: 0.2,
            c3: 4.0,
            alpha2: None,
        }
    }
}

/// Picks the power weight α:
/// `c1 α₁` when `ρ(I - A) >= 1`, otherwise `min{c2 α₁, c3 α₂}`.
pub fn select_alpha(problem: &NormalizedProblem, rule: &AlphaRule) -> Result<f64> {
    let AlphaRule { c1, c2, c3, alpha2 } = *rule;
    if !(c1 > 0.0 && c1 < 1.0 && c2 > 0.0 && c2 < 1.0 && c3 > c2) {
        return Err(JpacError::InvalidParameter(format!(
            "alpha constants c1={c1}, c2={c2}, c3={c3} violate 0<c1,c2<1, c3>c2"
        )));
    }
    if let Some(a2) = alpha2 {
        if !(a2 > 0.0 && a2.is_finite()) {
            return Err(JpacError::InvalidParameter(format!("alpha2 = {a2}")));
        }
    }
    let alpha1 = problem.alpha_upper();
    let radius = spectral_radius(&problem.interference());
    let alpha = if radius >= 1.0 {
        c1 * alpha1
    } else {
        match alpha2 {
            Some(a2) => (c2 * alpha1).min(c3 * a2),
            None => c2 * alpha1,
        }
    };
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_example() -> NormalizedProblem {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0, -1.0, -1.0, 1.0]);
        NormalizedProblem::new(a, DVector::from_element(3, 0.5), DVector::from_element(3, 1.0), None)
            .unwrap()
    }

    #[test]
    fn single_link_sinr_is_direct_ratio() {
        let inst = NetworkInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 5.0),
            None,
        )
        .unwrap();
        let s = sinr(&inst, &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(s[0], 2.0);
        let zero = sinr(&inst, &DVector::zeros(1)).unwrap();
        assert_eq!(zero[0], 0.0);
        assert!(sinr(&inst, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn single_link_normalization() {
        let inst = NetworkInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        let p = normalize(&inst).unwrap();
        assert_eq!(p.a()[(0, 0)], 1.0);
        assert_eq!(p.b()[0], 1.0);
    }

    #[test]
    fn instance_rejects_bad_data() {
        let ok_vec = DVector::from_element(2, 1.0);
        let zero_diag = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        assert!(NetworkInstance::new(zero_diag, ok_vec.clone(), ok_vec.clone(), ok_vec.clone(), None).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        assert!(NetworkInstance::new(neg, ok_vec.clone(), ok_vec.clone(), ok_vec.clone(), None).is_err());
        let good = DMatrix::identity(2, 2);
        let bad_noise = DVector::from_vec(vec![1.0, 0.0]);
        assert!(NetworkInstance::new(good.clone(), bad_noise, ok_vec.clone(), ok_vec.clone(), None).is_err());
        assert!(NetworkInstance::new(good, DVector::from_element(3, 1.0), ok_vec.clone(), ok_vec, None).is_err());
    }

    #[test]
    fn restrict_extracts_submatrix() {
        let p = worked_example();
        let full = p.restrict(&[0, 1, 2]).unwrap();
        assert_eq!(full, p);
        let sub = p.restrict(&[0, 1]).unwrap();
        assert_eq!(sub.a(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(sub.b().as_slice(), &[0.5, 0.5]);
        assert_eq!(sub.link_ids(), &[0, 1]);
        assert!(matches!(p.restrict(&[]), Err(JpacError::EmptySet)));
        assert!(p.restrict(&[0, 0]).is_err());
        assert!(p.restrict(&[3]).is_err());
    }

    #[test]
    fn restrict_composes_through_link_ids() {
        let p = worked_example();
        let twice = p.restrict(&[1, 2]).unwrap().restrict(&[1]).unwrap();
        let once = p.restrict(&[2]).unwrap();
        assert_eq!(twice, once);
        assert_eq!(twice.link_ids(), &[2]);
        assert_eq!(p.restrict(&[2, 1]).unwrap().position_of(1), Some(1));
    }

    #[test]
    fn alpha_for_worked_example_uses_first_branch() {
        let p = worked_example();
        let alpha = select_alpha(&p, &AlphaRule::default()).unwrap();
        assert!((alpha - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_falls_back_without_alpha2() {
        let p = NormalizedProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        let alpha = select_alpha(&p, &AlphaRule::default()).unwrap();
        assert!((alpha - 0.2).abs() < 1e-15);
        let with_a2 = AlphaRule {
            alpha2: Some(0.01),
            ..AlphaRule::default()
        };
        assert!((select_alpha(&p, &with_a2).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn alpha_rule_validates_constants() {
        let p = worked_example();
        for rule in [
            AlphaRule { c1: 0.0, ..AlphaRule::default() },
            AlphaRule { c2: 1.0, ..AlphaRule::default() },
            AlphaRule { c3: 0.1, ..AlphaRule::default() },
            AlphaRule { alpha2: Some(-1.0), ..AlphaRule::default() },
        ] {
            assert!(select_alpha(&p, &rule).is_err());
        }
        assert!(p.clone().with_alpha(1.0 / 3.0).is_err());
        assert!(p.with_alpha(0.0).is_err());
    }

    #[test]
    fn documents_round_trip() {
        let p = worked_example().with_alpha(0.05).unwrap();
        let back = NormalizedProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);

        let inst = NetworkInstance::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.5, 2.0]),
            DVector::from_element(2, 1e-12),
            DVector::from_element(2, 1.5),
            DVector::from_vec(vec![0.1, 0.2]),
            Some(Geometry {
                transmitters: vec![[0.0, 0.0], [1.0, 1.0]],
                receivers: vec![[0.5, 0.0], [1.0, 1.5]],
            }),
        )
        .unwrap();
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"version\": 1"));
        assert!(text.contains("\"noise_w\""));
        assert_eq!(NetworkInstance::from_json(&text).unwrap(), inst);
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            NetworkInstance::from_json(&bumped),
            Err(JpacError::UnsupportedVersion(2))
        ));
    }
}
