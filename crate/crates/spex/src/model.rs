//! The parameter vector, its bijective map to unconstrained space, latent
//! factor blocks, and the tail-dependence classifier.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpexError};
use crate::margins::BetaCoefficients;

/// Relative tolerance at which a classification inequality counts as an
/// exact boundary case.
const BOUNDARY_TOL: f64 = 1e-12;

/// Cross-field dependence specification.
#[derive(Debug, Clone, PartialEq)]
pub enum CoregSpec {
    /// p = 2: L = [[1, 0], [ρ, √(1−ρ²)]]; ρ may be sampled.
    Rho12(f64),
    /// General p: a fixed unit-row-norm lower-triangular matrix.
    Fixed(DMatrix<f64>),
}

/// Model hyperparameters θ with a per-entry fixed mask.
///
/// Flat ordering: α₁..α_p, γ₁..γ_p, δᵁ, δᴸ, λ₁..λ_p, then ρ₁₂ iff p = 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta_upper: f64,
    pub delta_lower: f64,
    pub lambda: Vec<f64>,
    pub coreg: CoregSpec,
    pub fixed_mask: Vec<bool>,
}

/// How a flat entry maps to the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// (0, ∞) via log.
    Positive,
    /// [0, 1] via logit.
    UnitInterval,
    /// [−1, 1] via the rescaled logit ρ* = logit((ρ+1)/2).
    SymmetricInterval,
}

/// θ* = g(θ) restricted to the non-fixed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedParameters {
    pub values: Vec<f64>,
}

impl ParameterVector {
    /// All-free parameter vector for p fields (ρ₁₂ only when p = 2).
    pub fn new(
        alpha: Vec<f64>,
        gamma: Vec<f64>,
        delta_upper: f64,
        delta_lower: f64,
        lambda: Vec<f64>,
        coreg: CoregSpec,
    ) -> Result<ParameterVector> {
        let p = alpha.len();
        let n_flat = 3 * p + 2 + usize::from(p == 2);
        let pv = ParameterVector {
            alpha,
            gamma,
            delta_upper,
            delta_lower,
            lambda,
            coreg,
            fixed_mask: vec![false; n_flat],
        };
        pv.validate()?;
        Ok(pv)
    }

    pub fn n_fields(&self) -> usize {
        self.alpha.len()
    }

    pub fn flat_len(&self) -> usize {
        let p = self.n_fields();
        3 * p + 2 + usize::from(p == 2)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_fields();
        if p == 0 {
            return Err(SpexError::Domain("need at least one field".into()));
        }
        if self.gamma.len() != p || self.lambda.len() != p {
            return Err(SpexError::Domain("alpha/gamma/lambda length mismatch".into()));
        }
        if self.fixed_mask.len() != self.flat_len() {
            return Err(SpexError::Domain(format!(
                "fixed_mask has {} entries, expected {}",
                self.fixed_mask.len(),
                self.flat_len()
            )));
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(SpexError::Domain(format!("alpha{}={a} must be positive", i + 1)));
            }
        }
        for (i, &g) in self.gamma.iter().enumerate() {
            if !(0.0..=1.0).contains(&g) {
                return Err(SpexError::Domain(format!("gamma{}={g} outside [0,1]", i + 1)));
            }
        }
        for (name, v) in [("delta_u", self.delta_upper), ("delta_l", self.delta_lower)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpexError::Domain(format!("{name}={v} outside [0,1]")));
            }
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(SpexError::Domain(format!("lambda{}={l} must be positive", i + 1)));
            }
        }
        match &self.coreg {
            CoregSpec::Rho12(r) => {
                if p != 2 {
                    return Err(SpexError::Domain("rho12 parameterization requires p = 2".into()));
                }
                if !(-1.0..=1.0).contains(r) {
                    return Err(SpexError::Domain(format!("rho12={r} outside [-1,1]")));
                }
            }
            CoregSpec::Fixed(l) => {
                if l.nrows() != p || l.ncols() != p {
                    return Err(SpexError::Domain("coregionalization matrix shape mismatch".into()));
                }
            }
        }
        Ok(())
    }

    /// Column names matching the flat ordering (used by chain CSV output).
    pub fn param_names(&self) -> Vec<String> {
        let p = self.n_fields();
        let mut names = Vec::with_capacity(self.flat_len());
        for i in 1..=p {
            names.push(format!("alpha{i}"));
        }
        for i in 1..=p {
            names.push(format!("gamma{i}"));
        }
        names.push("delta_u".into());
        names.push("delta_l".into());
        for i in 1..=p {
            names.push(format!("lambda{i}"));
        }
        if p == 2 {
            names.push("rho12".into());
        }
        names
    }

    pub fn flat_values(&self) -> Vec<f64> {
        let p = self.n_fields();
        let mut v = Vec::with_capacity(self.flat_len());
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.gamma);
        v.push(self.delta_upper);
        v.push(self.delta_lower);
        v.extend_from_slice(&self.lambda);
        if p == 2 {
            if let CoregSpec::Rho12(r) = self.coreg {
                v.push(r);
            } else {
                v.push(0.0);
            }
        }
        v
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) {
        let p = self.n_fields();
        if idx < p {
            self.alpha[idx] = value;
        } else if idx < 2 * p {
            self.gamma[idx - p] = value;
        } else if idx == 2 * p {
            self.delta_upper = value;
        } else if idx == 2 * p + 1 {
            self.delta_lower = value;
        } else if idx < 3 * p + 2 {
            self.lambda[idx - 2 * p - 2] = value;
        } else {
            self.coreg = CoregSpec::Rho12(value);
        }
    }

    pub fn transform_kind(&self, idx: usize) -> TransformKind {
        let p = self.n_fields();
        if idx < p {
            TransformKind::Positive
        } else if idx < 2 * p + 2 {
            TransformKind::UnitInterval
        } else if idx < 3 * p + 2 {
            TransformKind::Positive
        } else {
            TransformKind::SymmetricInterval
        }
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.flat_len()).filter(|&i| !self.fixed_mask[i]).collect()
    }

    /// Number of non-fixed parameters M.
    pub fn n_free(&self) -> usize {
        self.fixed_mask.iter().filter(|&&f| !f).count()
    }

    /// Fix the named parameters at their current values.
    pub fn fix(&mut self, names: &[&str]) -> Result<()> {
        let all = self.param_names();
        for want in names {
            let idx = all
                .iter()
                .position(|n| n == want)
                .ok_or_else(|| SpexError::Domain(format!("unknown parameter name {want}")))?;
            self.fixed_mask[idx] = true;
        }
        Ok(())
    }

    /// θ* = g(θ) over the free entries: log for positive, logit for [0,1],
    /// rescaled logit for ρ₁₂. Free entries must be strictly interior.
    pub fn to_unconstrained(&self) -> Result<TransformedParameters> {
        self.validate()?;
        let flat = self.flat_values();
        let names = self.param_names();
        let mut values = Vec::with_capacity(self.n_free());
        for idx in self.free_indices() {
            let v = flat[idx];
            let t = match self.transform_kind(idx) {
                TransformKind::Positive => v.ln(),
                TransformKind::UnitInterval => {
                    if v <= 0.0 || v >= 1.0 {
                        return Err(SpexError::Domain(format!(
                            "{}={v} on the boundary of [0,1]; fix it or move it interior",
                            names[idx]
                        )));
                    }
                    logit(v)
                }
                TransformKind::SymmetricInterval => {
                    if v <= -1.0 || v >= 1.0 {
                        return Err(SpexError::Domain(format!(
                            "{}={v} on the boundary of [-1,1]; fix it or move it interior",
                            names[idx]
                        )));
                    }
                    logit((v + 1.0) / 2.0)
                }
            };
            values.push(t);
        }
        Ok(TransformedParameters { values })
    }

    /// g⁻¹(θ*): rebuild a full parameter vector, taking fixed entries from
    /// `self` and free entries from `theta_star`.
    pub fn from_unconstrained(&self, theta_star: &TransformedParameters) -> Result<ParameterVector> {
        let free = self.free_indices();
        if theta_star.values.len() != free.len() {
            return Err(SpexError::Domain(format!(
                "theta* has {} entries, expected {}",
                theta_star.values.len(),
                free.len()
            )));
        }
        let mut out = self.clone();
        for (&idx, &t) in free.iter().zip(&theta_star.values) {
            let v = match self.transform_kind(idx) {
                TransformKind::Positive => t.exp(),
                TransformKind::UnitInterval => sigmoid(t),
                TransformKind::SymmetricInterval => 2.0 * sigmoid(t) - 1.0,
            };
            out.set_flat(idx, v);
        }
        Ok(out)
    }

    /// log |d g⁻¹/dθ*| summed over the free coordinates.
    pub fn log_jacobian(&self, theta_star: &TransformedParameters) -> f64 {
        let mut acc = 0.0;
        for (&idx, &t) in self.free_indices().iter().zip(&theta_star.values) {
            acc += match self.transform_kind(idx) {
                TransformKind::Positive => t,
                TransformKind::UnitInterval => {
                    let s = sigmoid(t);
                    (s * (1.0 - s)).ln()
                }
                TransformKind::SymmetricInterval => {
                    let s = sigmoid(t);
                    (2.0 * s * (1.0 - s)).ln()
                }
            };
        }
        acc
    }

    /// Beta coefficients of field `i` (0-based).
    pub fn betas(&self, i: usize) -> BetaCoefficients {
        BetaCoefficients::from_field_params(
            self.alpha[i],
            self.gamma[i],
            self.delta_upper,
            self.delta_lower,
        )
    }

    /// The coregionalization matrix L as a dense lower-triangular matrix.
    pub fn coreg_matrix(&self) -> DMatrix<f64> {
        match &self.coreg {
            CoregSpec::Rho12(r) => {
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, *r, (1.0 - r * r).max(0.0).sqrt()])
            }
            CoregSpec::Fixed(l) => l.clone(),
        }
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Latent blocks
// ---------------------------------------------------------------------------

/// One replicate's latent exponentials, laid out as
/// [R₀ᵁ, R₀ᴸ, R₁ᵁ, R₁ᴸ, …, R_pᵁ, R_pᴸ].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    values: Vec<f64>,
}

/// Dimension of one latent block: 2(p+1).
pub fn latent_block_dim(p: usize) -> usize {
    2 * (p + 1)
}

impl LatentBlock {
    pub fn from_values(values: Vec<f64>) -> Result<LatentBlock> {
        if values.len() < 4 || values.len() % 2 != 0 {
            return Err(SpexError::Domain("latent block needs 2(p+1) entries".into()));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SpexError::Domain("latent exponentials must be positive".into()));
        }
        Ok(LatentBlock { values })
    }

    /// All latents at the prior mean R = 1.
    pub fn ones(p: usize) -> LatentBlock {
        LatentBlock { values: vec![1.0; latent_block_dim(p)] }
    }

    /// Independent unit-rate exponential draws.
    pub fn prior_draw<R: rand::Rng>(p: usize, rng: &mut R) -> LatentBlock {
        let values = (0..latent_block_dim(p)).map(|_| crate::math::exp1(rng)).collect();
        LatentBlock { values }
    }

    pub fn n_fields(&self) -> usize {
        self.values.len() / 2 - 1
    }

    pub fn shared_upper(&self) -> f64 {
        self.values[0]
    }

    pub fn shared_lower(&self) -> f64 {
        self.values[1]
    }

    pub fn own_upper(&self, i: usize) -> f64 {
        self.values[2 + 2 * i]
    }

    pub fn own_lower(&self, i: usize) -> f64 {
        self.values[3 + 2 * i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// T_i = αᵢ{γᵢ[δᵁR₀ᵁ + (1−δᵁ)Rᵢᵁ] − (1−γᵢ)[δᴸR₀ᴸ + (1−δᴸ)Rᵢᴸ]}.
    pub fn latent_sum(&self, betas: &BetaCoefficients, i: usize) -> f64 {
        betas.shared_upper * self.shared_upper() + betas.own_upper * self.own_upper(i)
            - betas.shared_lower * self.shared_lower()
            - betas.own_lower * self.own_lower(i)
    }
}

// ---------------------------------------------------------------------------
// Tail classification
// ---------------------------------------------------------------------------

/// Extremal dependence class of one tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailClass {
    #[serde(rename = "AD")]
    AsymptoticDependence,
    #[serde(rename = "AI")]
    AsymptoticIndependence,
    #[serde(rename = "BOUNDARY")]
    Boundary,
}

/// One within-field classification with the evaluated condition values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldTail {
    pub field: usize,
    pub label: TailClass,
    /// Left side of the strict inequality, e.g. max(δᵁ, 1−δᵁ).
    pub condition_lhs: f64,
    /// Right side, e.g. 1/(αᵢγᵢ); infinite when the latent term is absent.
    pub condition_rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One cross-field classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossTail {
    pub fields: (usize, usize),
    pub label: TailClass,
    pub condition_lhs: f64,
    pub condition_rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-field and per-pair tail dependence labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub upper: Vec<FieldTail>,
    pub lower: Vec<FieldTail>,
    pub cross_upper: Vec<CrossTail>,
    pub cross_lower: Vec<CrossTail>,
}

fn compare_strict(lhs: f64, rhs: f64) -> TailClass {
    if rhs.is_infinite() {
        return TailClass::AsymptoticIndependence;
    }
    if (lhs - rhs).abs() <= BOUNDARY_TOL * lhs.abs().max(rhs.abs()).max(1.0) {
        TailClass::Boundary
    } else if lhs > rhs {
        TailClass::AsymptoticDependence
    } else {
        TailClass::AsymptoticIndependence
    }
}

/// Tail-dependence classification:
/// field i upper is AD iff max(δᵁ, 1−δᵁ) > 1/(αᵢγᵢ), lower analogously with
/// αᵢ(1−γᵢ); the cross pair (i₁,i₂) upper is AD iff
/// δᵁ > max{(α₁γ₁)⁻¹, (α₂γ₂)⁻¹, 1/2}, lower analogously. Equalities within
/// relative tolerance 1e−12 are reported as BOUNDARY.
pub fn classify_tails(theta: &ParameterVector) -> Result<TailReport> {
    theta.validate()?;
    let p = theta.n_fields();

    let weight = |i: usize, upper: bool| {
        if upper {
            theta.alpha[i] * theta.gamma[i]
        } else {
            theta.alpha[i] * (1.0 - theta.gamma[i])
        }
    };
    let delta = |upper: bool| if upper { theta.delta_upper } else { theta.delta_lower };

    let field_tail = |i: usize, upper: bool| {
        let w = weight(i, upper);
        let d = delta(upper);
        let lhs = d.max(1.0 - d);
        if w == 0.0 {
            return FieldTail {
                field: i + 1,
                label: TailClass::AsymptoticIndependence,
                condition_lhs: lhs,
                condition_rhs: f64::INFINITY,
                note: Some(format!(
                    "gamma{} makes the {} latent term vanish",
                    i + 1,
                    if upper { "upper" } else { "lower" }
                )),
            };
        }
        let rhs = 1.0 / w;
        FieldTail {
            field: i + 1,
            label: compare_strict(lhs, rhs),
            condition_lhs: lhs,
            condition_rhs: rhs,
            note: None,
        }
    };

    let cross_tail = |i1: usize, i2: usize, upper: bool| {
        let (w1, w2) = (weight(i1, upper), weight(i2, upper));
        let d = delta(upper);
        if w1 == 0.0 || w2 == 0.0 {
            return CrossTail {
                fields: (i1 + 1, i2 + 1),
                label: TailClass::AsymptoticIndependence,
                condition_lhs: d,
                condition_rhs: f64::INFINITY,
                note: Some("a latent term is absent; the shared factor cannot dominate".into()),
            };
        }
        let rhs = (1.0 / w1).max(1.0 / w2).max(0.5);
        CrossTail {
            fields: (i1 + 1, i2 + 1),
            label: compare_strict(d, rhs),
            condition_lhs: d,
            condition_rhs: rhs,
            note: None,
        }
    };

    let mut report = TailReport {
        upper: Vec::with_capacity(p),
        lower: Vec::with_capacity(p),
        cross_upper: Vec::new(),
        cross_lower: Vec::new(),
    };
    for i in 0..p {
        report.upper.push(field_tail(i, true));
        report.lower.push(field_tail(i, false));
    }
    for i1 in 0..p {
        for i2 in (i1 + 1)..p {
            report.cross_upper.push(cross_tail(i1, i2, true));
            report.cross_lower.push(cross_tail(i1, i2, false));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    pub fn theta_4_1() -> ParameterVector {
        ParameterVector::new(
            vec![4.0, 4.0],
            vec![0.4, 0.6],
            0.8,
            0.6,
            vec![0.6, 0.3],
            CoregSpec::Rho12(-0.7),
        )
        .unwrap()
    }

    fn theta_case1() -> ParameterVector {
        ParameterVector::new(
            vec![4.0, 5.0],
            vec![0.6, 0.2],
            0.4,
            0.7,
            vec![0.7, 0.3],
            CoregSpec::Rho12(0.7),
        )
        .unwrap()
    }

    fn theta_case2() -> ParameterVector {
        ParameterVector::new(
            vec![4.0, 5.0],
            vec![0.4, 0.3],
            0.4,
            0.8,
            vec![0.7, 0.3],
            CoregSpec::Rho12(-1.0),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_trivial_values() {
        let mut theta = theta_4_1();
        theta.alpha = vec![1.0, 1.0];
        theta.gamma = vec![0.5, 0.5];
        let star = theta.to_unconstrained().unwrap();
        assert_eq!(star.values[0], 0.0); // log 1
        assert_eq!(star.values[2], 0.0); // logit 0.5
    }

    #[test]
    fn round_trip_property() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let theta = ParameterVector::new(
                vec![rng.gen_range(0.1..8.0), rng.gen_range(0.1..8.0)],
                vec![rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)],
                rng.gen_range(0.01..0.99),
                rng.gen_range(0.01..0.99),
                vec![rng.gen_range(0.05..5.0), rng.gen_range(0.05..5.0)],
                CoregSpec::Rho12(rng.gen_range(-0.99..0.99)),
            )
            .unwrap();
            let star = theta.to_unconstrained().unwrap();
            let back = theta.from_unconstrained(&star).unwrap();
            for (a, b) in theta.flat_values().iter().zip(back.flat_values()) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "round trip: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn rho_round_trip() {
        let mut theta = theta_4_1();
        theta.coreg = CoregSpec::Rho12(-0.7);
        let star = theta.to_unconstrained().unwrap();
        let back = theta.from_unconstrained(&star).unwrap();
        if let CoregSpec::Rho12(r) = back.coreg {
            assert!((r + 0.7).abs() < 1e-12);
        } else {
            panic!("lost rho parameterization");
        }
    }

    #[test]
    fn boundary_values_rejected_unless_fixed() {
        let mut theta = theta_case2(); // rho12 = -1 is a boundary value
        assert!(theta.to_unconstrained().is_err());
        // fixing the boundary entry makes the transform valid for the rest
        theta.fix(&["rho12"]).unwrap();
        assert!(theta.to_unconstrained().is_ok());
    }

    #[test]
    fn jacobian_trivial_values() {
        // a single log coordinate at θ* = 0 contributes 0
        let mut theta = theta_4_1();
        let n = theta.flat_len();
        theta.fixed_mask = vec![true; n];
        theta.fixed_mask[0] = false; // only alpha1 free
        theta.alpha[0] = 1.0;
        let star = theta.to_unconstrained().unwrap();
        assert_eq!(theta.log_jacobian(&star), 0.0);

        // a single logit coordinate at θ* = 0 contributes log(1/4)
        let mut theta = theta_4_1();
        theta.fixed_mask = vec![true; n];
        theta.fixed_mask[2] = false; // only gamma1 free
        theta.gamma[0] = 0.5;
        let star = theta.to_unconstrained().unwrap();
        assert!((theta.log_jacobian(&star) - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_difference_volume() {
        // compare against central differences of g⁻¹ coordinatewise
        let theta = theta_4_1();
        let star = theta.to_unconstrained().unwrap();
        let h = 1e-6;
        let mut fd_log_sum = 0.0;
        for m in 0..star.values.len() {
            let mut hi = star.clone();
            let mut lo = star.clone();
            hi.values[m] += h;
            lo.values[m] -= h;
            let vh = theta.from_unconstrained(&hi).unwrap().flat_values();
            let vl = theta.from_unconstrained(&lo).unwrap().flat_values();
            let idx = theta.free_indices()[m];
            fd_log_sum += ((vh[idx] - vl[idx]) / (2.0 * h)).ln();
        }
        assert!((fd_log_sum - theta.log_jacobian(&star)).abs() < 1e-6);
    }

    #[test]
    fn classify_simulation_study_settings() {
        // U: AD, AD with cross AD; L: AD, AI with cross AI
        let report = classify_tails(&theta_4_1()).unwrap();
        assert_eq!(report.upper[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.upper[1].label, TailClass::AsymptoticDependence);
        assert_eq!(report.cross_upper[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.lower[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.lower[1].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.cross_lower[0].label, TailClass::AsymptoticIndependence);
    }

    #[test]
    fn classify_case1_upper() {
        // U: AD, AI with cross AI (lower-tail cross intentionally not pinned)
        let report = classify_tails(&theta_case1()).unwrap();
        assert_eq!(report.upper[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.upper[1].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.cross_upper[0].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.lower[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.lower[1].label, TailClass::AsymptoticDependence);
    }

    #[test]
    fn classify_case2() {
        // U: AI, AI with cross AI; L: AD, AD with cross AD
        let report = classify_tails(&theta_case2()).unwrap();
        assert_eq!(report.upper[0].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.upper[1].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.cross_upper[0].label, TailClass::AsymptoticIndependence);
        assert_eq!(report.lower[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.lower[1].label, TailClass::AsymptoticDependence);
        assert_eq!(report.cross_lower[0].label, TailClass::AsymptoticDependence);
    }

    #[test]
    fn classify_boundary_at_half() {
        // δᵁ = 0.5 exactly with both fields individually AD: the cross
        // condition δᵁ > 1/2 fails by equality
        let theta = ParameterVector::new(
            vec![10.0, 10.0],
            vec![0.5, 0.5],
            0.5,
            0.6,
            vec![1.0, 1.0],
            CoregSpec::Rho12(0.0),
        )
        .unwrap();
        let report = classify_tails(&theta).unwrap();
        assert_eq!(report.upper[0].label, TailClass::AsymptoticDependence);
        assert_eq!(report.upper[1].label, TailClass::AsymptoticDependence);
        assert_eq!(report.cross_upper[0].label, TailClass::Boundary);
    }

    #[test]
    fn classify_gamma_degeneracy() {
        // γ₁ = 0 removes the upper latent term of field 1
        let theta = ParameterVector::new(
            vec![4.0, 4.0],
            vec![0.0, 0.6],
            0.8,
            0.6,
            vec![0.6, 0.3],
            CoregSpec::Rho12(0.0),
        )
        .unwrap();
        let report = classify_tails(&theta).unwrap();
        assert_eq!(report.upper[0].label, TailClass::AsymptoticIndependence);
        assert!(report.upper[0].note.is_some());
        assert_eq!(report.cross_upper[0].label, TailClass::AsymptoticIndependence);
    }

    #[test]
    fn classify_permutation_invariance_and_structure() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..200 {
            let a = [rng.gen_range(0.2..8.0), rng.gen_range(0.2..8.0)];
            let g = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let du = rng.gen_range(0.05..0.95);
            let dl = rng.gen_range(0.05..0.95);
            let theta = ParameterVector::new(
                a.to_vec(),
                g.to_vec(),
                du,
                dl,
                vec![0.5, 0.5],
                CoregSpec::Rho12(0.0),
            )
            .unwrap();
            let swapped = ParameterVector::new(
                vec![a[1], a[0]],
                vec![g[1], g[0]],
                du,
                dl,
                vec![0.5, 0.5],
                CoregSpec::Rho12(0.0),
            )
            .unwrap();
            let r1 = classify_tails(&theta).unwrap();
            let r2 = classify_tails(&swapped).unwrap();
            assert_eq!(r1.upper[0].label, r2.upper[1].label);
            assert_eq!(r1.lower[1].label, r2.lower[0].label);
            assert_eq!(r1.cross_upper[0].label, r2.cross_upper[0].label);
            // structural: cross-AD implies both marginal AD in that tail
            if r1.cross_upper[0].label == TailClass::AsymptoticDependence {
                assert_eq!(r1.upper[0].label, TailClass::AsymptoticDependence);
                assert_eq!(r1.upper[1].label, TailClass::AsymptoticDependence);
            }
            if r1.cross_lower[0].label == TailClass::AsymptoticDependence {
                assert_eq!(r1.lower[0].label, TailClass::AsymptoticDependence);
                assert_eq!(r1.lower[1].label, TailClass::AsymptoticDependence);
            }
        }
    }

    #[test]
    fn latent_block_layout() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let block = LatentBlock::prior_draw(2, &mut rng);
        assert_eq!(block.values().len(), 6);
        assert_eq!(block.n_fields(), 2);
        assert!(block.values().iter().all(|&v| v > 0.0));
        let ones = LatentBlock::ones(2);
        let theta = theta_4_1();
        // T_i at R = 1: β₀ᵁ + βᵢᵁ − β₀ᴸ − βᵢᴸ = αᵢ(γᵢ − (1−γᵢ)) = αᵢ(2γᵢ−1)
        let t0 = ones.latent_sum(&theta.betas(0), 0);
        assert!((t0 - 4.0 * (2.0 * 0.4 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fix_by_name() {
        let mut theta = theta_4_1();
        theta.fix(&["alpha1", "alpha2", "delta_u", "delta_l"]).unwrap();
        assert_eq!(theta.n_free(), 5);
        let names = theta.param_names();
        let free = theta.free_indices();
        let free_names: Vec<&String> = free.iter().map(|&i| &names[i]).collect();
        assert_eq!(free_names, ["gamma1", "gamma2", "lambda1", "lambda2", "rho12"]);
        assert!(theta.fix(&["nonsense"]).is_err());
    }
}
