//! Closed-form univariate distributions of the model.
//!
//! Each field decomposes as X = T + W where T is a signed combination of four
//! unit-rate exponentials weighted by the beta coefficients and W is standard
//! Laplace(0,1). Both tails of T and X are finite mixtures of exponentials,
//! so the CDFs and densities are exact; quantiles are inverted numerically
//! with bracketed Brent.

use crate::error::{Result, SpexError};
use crate::math::brent::brent_root;
use crate::math::normal::{normal_quantile, quantile_from_log_tail};

const LN_2: f64 = std::f64::consts::LN_2;

/// Relative tolerance below which two coefficients count as coincident.
const DEGENERACY_TOL: f64 = 1e-8;
/// Relative nudge applied to a coincident coefficient before evaluation.
const PERTURBATION: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Laplace margin
// ---------------------------------------------------------------------------

/// Standard Laplace(0,1) CDF: [1 + sign(w)(1 − exp(−|w|))]/2.
pub fn laplace_cdf(w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(SpexError::Domain(format!("laplace_cdf: non-finite input {w}")));
    }
    Ok(laplace_cdf_raw(w))
}

#[inline]
pub(crate) fn laplace_cdf_raw(w: f64) -> f64 {
    if w < 0.0 {
        0.5 * w.exp()
    } else {
        1.0 - 0.5 * (-w).exp()
    }
}

/// Laplace(0,1) quantile, the exact inverse of [`laplace_cdf`].
pub fn laplace_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SpexError::Domain(format!("laplace_quantile: u={u} outside (0,1)")));
    }
    Ok(if u < 0.5 { (2.0 * u).ln() } else { -(2.0 * (1.0 - u)).ln() })
}

/// log Laplace(0,1) density: −|w| − ln 2.
#[inline]
pub(crate) fn laplace_log_pdf(w: f64) -> f64 {
    -w.abs() - LN_2
}

/// z = Φ⁻¹(F_W(w)): the normal score of a Laplace variate, computed through
/// the complementary tail so it never forms 1 − p. Stable for any |w|.
pub fn normal_score_of_laplace(w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let a = w.abs();
    // lower-tail probability of -a is exp(-a)/2
    let mag = if a >= 1.9 {
        quantile_from_log_tail(-a - LN_2)
    } else {
        -normal_quantile(0.5 * (-a).exp())
    };
    mag.copysign(w)
}

/// W = F_W⁻¹(Φ(z)): back-transform of a standard normal variate to the
/// Laplace scale, via erfc so deep tails keep full relative accuracy.
pub fn laplace_from_normal(z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let a = z.abs();
    let tail = crate::math::normal::erfc(a * std::f64::consts::FRAC_1_SQRT_2);
    let mag = if tail > 0.0 {
        -tail.ln()
    } else {
        // erfc underflowed (|z| ≳ 38.6): asymptotic -ln erfc(x) ≈ x² + ln(x√π)
        0.5 * a * a + (a * (std::f64::consts::PI / 2.0).sqrt()).ln()
    };
    mag.copysign(z)
}

// ---------------------------------------------------------------------------
// Beta coefficients and the marginal spec
// ---------------------------------------------------------------------------

/// Weights of the four latent exponentials in one field's T term:
/// T = shared_upper·R₀ᵁ + own_upper·Rᵢᵁ − shared_lower·R₀ᴸ − own_lower·Rᵢᴸ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BetaCoefficients {
    pub shared_upper: f64,
    pub own_upper: f64,
    pub shared_lower: f64,
    pub own_lower: f64,
}

impl BetaCoefficients {
    /// Recompute from one field's parameters:
    /// shared_upper = αγδᵁ, own_upper = αγ(1−δᵁ),
    /// shared_lower = α(1−γ)δᴸ, own_lower = α(1−γ)(1−δᴸ).
    pub fn from_field_params(alpha: f64, gamma: f64, delta_upper: f64, delta_lower: f64) -> Self {
        BetaCoefficients {
            shared_upper: alpha * gamma * delta_upper,
            own_upper: alpha * gamma * (1.0 - delta_upper),
            shared_lower: alpha * (1.0 - gamma) * delta_lower,
            own_lower: alpha * (1.0 - gamma) * (1.0 - delta_lower),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shared_upper", self.shared_upper),
            ("own_upper", self.own_upper),
            ("shared_lower", self.shared_lower),
            ("own_lower", self.own_lower),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SpexError::Domain(format!(
                    "beta coefficient {name}={v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Which generic-case condition failed and was repaired by perturbation.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DegenerateFlag {
    /// A coefficient was (numerically) zero.
    ZeroCoefficient(&'static str),
    /// A coefficient coincided with 1, the Laplace scale.
    UnitCoefficient(&'static str),
    /// Two same-side coefficients coincided.
    EqualPair(&'static str, &'static str),
}

/// Finite exponential mixture for one tail: Σⱼ coefⱼ·exp(−x/scaleⱼ), x ≥ 0.
#[derive(Debug, Clone)]
struct TailExpansion {
    scales: [f64; 3],
    coefs: [f64; 3],
    len: usize,
}

impl TailExpansion {
    /// Tail coefficients of S = Σ pos_j·E_j − Σ neg_m·E'_m at x ≥ 0:
    /// Pr(S > x) = Σ_j cⱼ e^(−x/pos_j) with
    /// cⱼ = Π_{k≠j} pos_j/(pos_j − pos_k) · Π_m pos_j/(pos_j + neg_m).
    fn from_scales(pos: &[f64], neg: &[f64]) -> TailExpansion {
        let mut scales = [0.0; 3];
        let mut coefs = [0.0; 3];
        for (j, &s) in pos.iter().enumerate() {
            let mut c = 1.0;
            for (k, &t) in pos.iter().enumerate() {
                if k != j {
                    c *= s / (s - t);
                }
            }
            for &r in neg {
                c *= s / (s + r);
            }
            scales[j] = s;
            coefs[j] = c;
        }
        TailExpansion { scales, coefs, len: pos.len() }
    }

    /// Σ coefⱼ·e^(−x/scaleⱼ) for x ≥ 0.
    fn survival(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.len {
            acc += self.coefs[j] * (-x / self.scales[j]).exp();
        }
        acc
    }

    /// −d/dx survival(x) = Σ (coefⱼ/scaleⱼ)·e^(−x/scaleⱼ) for x ≥ 0.
    fn density(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.len {
            acc += self.coefs[j] / self.scales[j] * (-x / self.scales[j]).exp();
        }
        acc
    }

    fn max_scale(&self) -> f64 {
        self.scales[..self.len].iter().cloned().fold(0.0, f64::max)
    }

    fn abs_coef_sum(&self) -> f64 {
        self.coefs[..self.len].iter().map(|c| c.abs()).sum()
    }
}

/// One field's marginal machinery: exact betas, the (possibly perturbed)
/// evaluation betas, and the precomputed tail expansions of F_T and F_X.
#[derive(Debug, Clone)]
pub struct MarginalSpec {
    pub betas: BetaCoefficients,
    pub degenerate_flags: Vec<DegenerateFlag>,
    eval_betas: BetaCoefficients,
    x_right: TailExpansion,
    x_left: TailExpansion,
    t_right: TailExpansion,
    t_left: TailExpansion,
}

impl MarginalSpec {
    pub fn new(betas: BetaCoefficients) -> Result<MarginalSpec> {
        betas.validate()?;
        let (eval, flags) = regularize(betas)?;
        if !flags.is_empty() {
            log::warn!(
                "degenerate marginal coefficients {betas:?}: {flags:?}; \
                 perturbed before evaluation (CDF error below 1e-6)"
            );
        }
        let pos = [eval.shared_upper, eval.own_upper];
        let neg = [eval.shared_lower, eval.own_lower];
        let pos_x = [eval.shared_upper, eval.own_upper, 1.0];
        let neg_x = [eval.shared_lower, eval.own_lower, 1.0];
        Ok(MarginalSpec {
            betas,
            degenerate_flags: flags,
            eval_betas: eval,
            x_right: TailExpansion::from_scales(&pos_x, &neg_x),
            x_left: TailExpansion::from_scales(&neg_x, &pos_x),
            t_right: TailExpansion::from_scales(&pos, &neg),
            t_left: TailExpansion::from_scales(&neg, &pos),
        })
    }

    pub fn from_field_params(
        alpha: f64,
        gamma: f64,
        delta_upper: f64,
        delta_lower: f64,
    ) -> Result<MarginalSpec> {
        MarginalSpec::new(BetaCoefficients::from_field_params(alpha, gamma, delta_upper, delta_lower))
    }

    /// CDF of the latent sum T at `t`.
    pub fn latent_sum_cdf(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(SpexError::Domain(format!("latent_sum_cdf: non-finite t={t}")));
        }
        let v = if t < 0.0 { self.t_left.survival(-t) } else { 1.0 - self.t_right.survival(t) };
        Ok(v.clamp(0.0, 1.0))
    }

    /// Marginal CDF of X = T + W at `x`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(SpexError::Domain(format!("marginal_cdf: non-finite x={x}")));
        }
        Ok(self.cdf_raw(x))
    }

    #[inline]
    pub(crate) fn cdf_raw(&self, x: f64) -> f64 {
        let v = if x < 0.0 { self.x_left.survival(-x) } else { 1.0 - self.x_right.survival(x) };
        v.clamp(0.0, 1.0)
    }

    /// Marginal density of X at `x`; at the Laplace kink x = 0 the average of
    /// the two one-sided derivatives.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(SpexError::Domain(format!("marginal_pdf: non-finite x={x}")));
        }
        Ok(self.pdf_raw(x))
    }

    #[inline]
    pub(crate) fn pdf_raw(&self, x: f64) -> f64 {
        let v = if x < 0.0 {
            self.x_left.density(-x)
        } else if x > 0.0 {
            self.x_right.density(x)
        } else {
            0.5 * (self.x_left.density(0.0) + self.x_right.density(0.0))
        };
        v.max(0.0)
    }

    #[inline]
    pub(crate) fn log_pdf_raw(&self, x: f64) -> f64 {
        self.pdf_raw(x).ln()
    }

    /// Quantile of X: the `x` with |cdf(x) − u| < 1e−10, via bracketed Brent.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(SpexError::Domain(format!("marginal_quantile: u={u} outside (0,1)")));
        }
        self.quantile_from(u, f64::NEG_INFINITY)
    }

    /// Quantiles of an ascending slice of probabilities; each inversion
    /// reuses the previous root as the lower bracket end.
    pub fn quantiles_sorted(&self, us: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(us.len());
        let mut prev = f64::NEG_INFINITY;
        for &u in us {
            if !(u > 0.0 && u < 1.0) {
                return Err(SpexError::Domain(format!("marginal_quantile: u={u} outside (0,1)")));
            }
            let x = self.quantile_from(u, prev)?;
            prev = x;
            out.push(x);
        }
        Ok(out)
    }

    const QUANTILE_FTOL: f64 = 1e-10;

    fn quantile_from(&self, u: f64, warm_lo: f64) -> Result<f64> {
        let tail0 = self.x_right.survival(0.0); // 1 − F(0)
        if u >= 1.0 - tail0 {
            // positive side; objective g(x) = (1−u) − Pr(X > x), increasing
            let one_minus_u = 1.0 - u;
            let g = |x: f64| one_minus_u - self.x_right.survival(x);
            let mut lo = if warm_lo.is_finite() && warm_lo > 0.0 { warm_lo } else { 0.0 };
            let mut g_lo = g(lo);
            if g_lo.abs() <= Self::QUANTILE_FTOL {
                return Ok(lo);
            }
            if g_lo > 0.0 {
                // warm start overshot by rounding; fall back to 0
                lo = 0.0;
                g_lo = g(lo);
                if g_lo.abs() <= Self::QUANTILE_FTOL {
                    return Ok(lo);
                }
            }
            // initial bracket from the dominant exponential term
            let smax = self.x_right.max_scale();
            let csum = self.x_right.abs_coef_sum().max(1.0);
            let mut hi = (smax * (csum / one_minus_u).ln()).max(lo + 1.0);
            let mut g_hi = g(hi);
            let mut tries = 0;
            while g_hi < 0.0 {
                hi = hi * 2.0 + 1.0;
                g_hi = g(hi);
                tries += 1;
                if tries > 200 {
                    return Err(SpexError::RootFinding(
                        "marginal_quantile: upper bracket not found (CDF not reaching u)".into(),
                    ));
                }
            }
            brent_root(g, lo, hi, g_lo, g_hi, Self::QUANTILE_FTOL, 200)
        } else {
            // negative side; objective g(x) = Pr(X ≤ x) − u, increasing
            let g = |x: f64| self.x_left.survival(-x) - u;
            let hi = 0.0;
            let g_hi = g(hi);
            if g_hi.abs() <= Self::QUANTILE_FTOL {
                return Ok(hi);
            }
            let smax = self.x_left.max_scale();
            let csum = self.x_left.abs_coef_sum().max(1.0);
            let mut lo = -(smax * (csum / u).ln()).max(1.0);
            if warm_lo.is_finite() && warm_lo < 0.0 {
                lo = lo.min(warm_lo);
            }
            let mut g_lo = g(lo);
            let mut tries = 0;
            while g_lo > 0.0 {
                lo = lo * 2.0 - 1.0;
                g_lo = g(lo);
                tries += 1;
                if tries > 200 {
                    return Err(SpexError::RootFinding(
                        "marginal_quantile: lower bracket not found (CDF not reaching u)".into(),
                    ));
                }
            }
            brent_root(g, lo, hi, g_lo, g_hi, Self::QUANTILE_FTOL, 200)
        }
    }

    /// The betas actually used for evaluation (perturbed iff flags nonempty).
    pub fn eval_betas(&self) -> BetaCoefficients {
        self.eval_betas
    }
}

/// Detect coefficient coincidences that break the generic closed form and
/// nudge the offending entries until every required pair is separated.
fn regularize(betas: BetaCoefficients) -> Result<(BetaCoefficients, Vec<DegenerateFlag>)> {
    const NAMES: [&str; 4] = ["shared_upper", "own_upper", "shared_lower", "own_lower"];
    let mut b = [betas.shared_upper, betas.own_upper, betas.shared_lower, betas.own_lower];
    let mut flags = Vec::new();

    let close = |a: f64, c: f64| (a - c).abs() <= DEGENERACY_TOL * a.abs().max(c.abs()).max(1.0);
    let bump = |v: f64, round: f64| v + PERTURBATION * round * (1.0 + v.abs());

    for round in 1..=8 {
        let mut dirty = false;
        for (i, name) in NAMES.iter().enumerate() {
            if b[i].abs() < 1e-12 {
                if round == 1 {
                    flags.push(DegenerateFlag::ZeroCoefficient(name));
                }
                b[i] = bump(b[i], round as f64);
                dirty = true;
            }
        }
        // separate same-side pairs and coincidences with the Laplace scale 1
        for (i, j) in [(0usize, 1usize), (2, 3)] {
            if close(b[i], b[j]) {
                if round == 1 {
                    flags.push(DegenerateFlag::EqualPair(NAMES[i], NAMES[j]));
                }
                b[j] = bump(b[j], round as f64);
                dirty = true;
            }
        }
        for (i, name) in NAMES.iter().enumerate() {
            if close(b[i], 1.0) {
                if round == 1 {
                    flags.push(DegenerateFlag::UnitCoefficient(name));
                }
                b[i] = bump(b[i], round as f64);
                dirty = true;
            }
        }
        if !dirty {
            let eval = BetaCoefficients {
                shared_upper: b[0],
                own_upper: b[1],
                shared_lower: b[2],
                own_lower: b[3],
            };
            return Ok((eval, flags));
        }
    }
    Err(SpexError::UnsupportedConfiguration(format!(
        "could not separate coincident coefficients after perturbation: {betas:?}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn spec_4_1_field1() -> MarginalSpec {
        MarginalSpec::from_field_params(4.0, 0.4, 0.8, 0.6).unwrap()
    }

    fn symmetric_spec() -> MarginalSpec {
        // γ = 0.5, δᵁ = δᴸ, same α makes X symmetric about 0
        MarginalSpec::from_field_params(2.0, 0.5, 0.3, 0.3).unwrap()
    }

    #[test]
    fn laplace_cdf_examples() {
        assert_eq!(laplace_cdf(0.0).unwrap(), 0.5);
        assert!((laplace_cdf(1e4).unwrap() - 1.0).abs() < 1e-300);
        assert!((laplace_cdf(LN_2).unwrap() - 0.75).abs() < 1e-15);
        assert!(laplace_cdf(f64::NAN).is_err());
        assert!(laplace_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn laplace_cdf_symmetry() {
        for &w in &[0.1, 0.5, 1.0, 3.0, 10.0] {
            let a = laplace_cdf(-w).unwrap();
            let b = laplace_cdf(w).unwrap();
            assert!((a - (1.0 - b)).abs() < 1e-15);
        }
    }

    #[test]
    fn laplace_quantile_examples() {
        assert_eq!(laplace_quantile(0.5).unwrap(), 0.0);
        assert!((laplace_quantile(0.75).unwrap() - LN_2).abs() < 1e-15);
        assert!((laplace_quantile(0.25).unwrap() + LN_2).abs() < 1e-15);
        assert!(laplace_quantile(0.0).is_err());
        assert!(laplace_quantile(1.0).is_err());
    }

    #[test]
    fn laplace_round_trip() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let w = laplace_quantile(u).unwrap();
            let back = laplace_cdf(w).unwrap();
            assert!(((back - u) / u).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn normal_score_round_trip() {
        for &w in &[-500.0, -40.0, -3.0, -0.5, 0.0, 0.5, 3.0, 40.0, 500.0] {
            let z = normal_score_of_laplace(w);
            let back = laplace_from_normal(z);
            assert!(
                (back - w).abs() <= 1e-8 * w.abs().max(1.0),
                "w={w}: z={z}, back={back}"
            );
        }
    }

    // Frozen values computed independently from the tail-expansion algebra
    // (hypoexponential coefficients) in double precision.
    #[test]
    fn latent_sum_cdf_frozen_values() {
        let s = spec_4_1_field1();
        let cases = [
            (-2.0, 0.24397951062639522),
            (-0.5, 0.53639145407951982),
            (0.0, 0.6566080977845683),
            (0.5, 0.76057331859938271),
            (1.5, 0.88906797142863969),
            (4.0, 0.98424675813448081),
        ];
        for (t, expected) in cases {
            let v = s.latent_sum_cdf(t).unwrap();
            assert!((v - expected).abs() < 1e-13, "t={t}: {v} vs {expected}");
        }
    }

    #[test]
    fn latent_sum_cdf_limits_and_monotonicity() {
        let s = spec_4_1_field1();
        assert_eq!(s.latent_sum_cdf(-1e9).unwrap(), 0.0);
        assert_eq!(s.latent_sum_cdf(1e9).unwrap(), 1.0);
        let mut prev = 0.0;
        for i in 0..=4000 {
            let t = -40.0 + i as f64 * 0.02;
            let v = s.latent_sum_cdf(t).unwrap();
            assert!(v >= prev - 1e-14, "non-monotone at t={t}");
            prev = v;
        }
    }

    #[test]
    fn latent_sum_cdf_monte_carlo() {
        // 10^6-draw check at a handful of points (the full 10^7 oracle runs
        // in the acceptance suite)
        let s = spec_4_1_field1();
        let b = s.betas;
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut samples: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let e = [0; 4].map(|_| -rng.gen::<f64>().ln());
            samples
                .push(b.shared_upper * e[0] + b.own_upper * e[1] - b.shared_lower * e[2] - b.own_lower * e[3]);
        }
        samples.sort_by(|a, c| a.partial_cmp(c).unwrap());
        for &t in &[-1.5, -0.3, 0.0, 0.5, 2.0] {
            let emp = samples.partition_point(|&v| v <= t) as f64 / n as f64;
            let model = s.latent_sum_cdf(t).unwrap();
            let se = (model * (1.0 - model) / n as f64).sqrt();
            assert!(
                (emp - model).abs() < 3.5 * se,
                "t={t}: emp={emp}, model={model}, se={se}"
            );
        }
    }

    #[test]
    fn marginal_cdf_frozen_values() {
        let s = spec_4_1_field1();
        let cases = [
            (-3.0, 0.17457251179038547),
            (-1.0, 0.44725828577853877),
            (0.0, 0.6272071382139095),
            (1.0, 0.78064406883621418),
            (2.5, 0.9145646856315689),
        ];
        for (x, expected) in cases {
            let v = s.cdf(x).unwrap();
            assert!((v - expected).abs() < 1e-13, "x={x}: {v} vs {expected}");
        }
        // a second parameter set (Case 2 field 2)
        let s2 = MarginalSpec::from_field_params(5.0, 0.3, 0.4, 0.8).unwrap();
        assert!((s2.cdf(1.0).unwrap() - 0.84691096300274582).abs() < 1e-13);
        assert!((s2.cdf(-2.0).unwrap() - 0.42936782409888102).abs() < 1e-13);
    }

    #[test]
    fn marginal_cdf_symmetric_at_zero() {
        let s = symmetric_spec();
        assert!((s.cdf(0.0).unwrap() - 0.5).abs() < 1e-14);
        for &x in &[0.3, 1.0, 2.7] {
            let a = s.cdf(-x).unwrap();
            let b = s.cdf(x).unwrap();
            assert!((a - (1.0 - b)).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn marginal_cdf_monte_carlo() {
        let s = spec_4_1_field1();
        let b = s.betas;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mut count_le_1 = 0u64;
        for _ in 0..n {
            let e = [0; 6].map(|_| -rng.gen::<f64>().ln());
            let t = b.shared_upper * e[0] + b.own_upper * e[1]
                - b.shared_lower * e[2]
                - b.own_lower * e[3];
            let w = e[4] - e[5];
            if t + w <= 1.0 {
                count_le_1 += 1;
            }
        }
        let emp = count_le_1 as f64 / n as f64;
        let model = s.cdf(1.0).unwrap();
        let se = (model * (1.0 - model) / n as f64).sqrt();
        assert!((emp - model).abs() < 3.5 * se, "emp={emp}, model={model}");
    }

    #[test]
    fn marginal_pdf_frozen_and_symmetry() {
        let s = spec_4_1_field1();
        let cases = [
            (-1.0, 0.17541315923563738),
            (0.0, 0.17517842381139187),
            (0.7, 0.14398562853936075),
            (2.0, 0.076383126804720522),
        ];
        for (x, expected) in cases {
            let v = s.pdf(x).unwrap();
            assert!((v - expected).abs() < 1e-13, "x={x}: {v} vs {expected}");
        }
        let sym = symmetric_spec();
        for &x in &[0.5, 1.0, 2.0] {
            assert!((sym.pdf(x).unwrap() - sym.pdf(-x).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn marginal_pdf_matches_finite_differences() {
        let s = spec_4_1_field1();
        let h = 1e-5;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: f64 = rng.gen_range(-8.0..8.0);
            if x.abs() < 10.0 * h {
                continue; // kink at 0 excluded by the contract
            }
            let fd = (s.cdf(x + h).unwrap() - s.cdf(x - h).unwrap()) / (2.0 * h);
            let an = s.pdf(x).unwrap();
            assert!((fd - an).abs() < 1e-6, "x={x}: fd={fd}, an={an}");
        }
    }

    #[test]
    fn marginal_pdf_integrates_to_one() {
        // adaptive Simpson as an independent quadrature oracle
        fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, a, m, fa, flm, fm, tol / 2.0, depth - 1)
                    + simpson(f, m, b, fm, frm, fb, tol / 2.0, depth - 1)
            }
        }
        for spec in [spec_4_1_field1(), symmetric_spec()] {
            let alpha = 4.0f64; // upper bound on both specs' alpha
            let (a, b) = (-50.0 * alpha, 50.0 * alpha);
            let f = |x: f64| spec.pdf_raw(x);
            // split at the kink
            let left = simpson(&f, a, 0.0, f(a), f(0.5 * a), spec.x_left.density(0.0), 1e-10, 40);
            let right = simpson(&f, 0.0, b, spec.x_right.density(0.0), f(0.5 * b), f(b), 1e-10, 40);
            let total = left + right;
            assert!((total - 1.0).abs() < 1e-6, "integral={total}");
        }
    }

    #[test]
    fn marginal_quantile_round_trip() {
        let s = spec_4_1_field1();
        for i in 1..=999 {
            let u = i as f64 / 1000.0;
            let x = s.quantile(u).unwrap();
            let back = s.cdf(x).unwrap();
            assert!((back - u).abs() < 1e-8, "u={u}: x={x}, back={back}");
        }
        // deep tails
        for &u in &[1e-3, 1e-6, 1.0 - 1e-6, 1.0 - 1e-3] {
            let x = s.quantile(u).unwrap();
            assert!((s.cdf(x).unwrap() - u).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn marginal_quantile_symmetric_median() {
        let s = symmetric_spec();
        assert!(s.quantile(0.5).unwrap().abs() < 1e-8);
    }

    #[test]
    fn marginal_quantile_deterministic() {
        let s = spec_4_1_field1();
        assert_eq!(s.quantile(0.9).unwrap(), s.quantile(0.9).unwrap());
        assert!(s.quantile(0.0).is_err());
        assert!(s.quantile(1.0).is_err());
    }

    #[test]
    fn quantiles_sorted_matches_pointwise() {
        let s = spec_4_1_field1();
        let us: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        let batch = s.quantiles_sorted(&us).unwrap();
        for (u, x) in us.iter().zip(&batch) {
            assert!((s.cdf(*x).unwrap() - u).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn degenerate_configurations_are_flagged_and_close() {
        // δᵁ = 0.5 makes shared_upper == own_upper exactly
        let s = MarginalSpec::from_field_params(4.0, 0.4, 0.5, 0.6).unwrap();
        assert!(s
            .degenerate_flags
            .iter()
            .any(|f| matches!(f, DegenerateFlag::EqualPair(_, _))));
        // perturbed evaluation must stay within 1e-6 of a fine MC estimate
        let b = s.betas;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 2_000_000;
        let mut cnt = 0u64;
        for _ in 0..n {
            let e = [0; 6].map(|_| -rng.gen::<f64>().ln());
            let t = b.shared_upper * e[0] + b.own_upper * e[1]
                - b.shared_lower * e[2]
                - b.own_lower * e[3];
            if t + e[4] - e[5] <= 0.8 {
                cnt += 1;
            }
        }
        let emp = cnt as f64 / n as f64;
        let v = s.cdf(0.8).unwrap();
        assert!((v - emp).abs() < 4.0 * (0.25f64 / n as f64).sqrt() + 1e-6);
    }

    #[test]
    fn unit_coefficient_perturbation() {
        // α=2, γ=0.5, δᵁ=... shared_upper = 2·0.5·1.0 = 1.0 exactly
        let s = MarginalSpec::from_field_params(2.0, 0.5, 1.0, 0.6).unwrap();
        assert!(s
            .degenerate_flags
            .iter()
            .any(|f| matches!(f, DegenerateFlag::ZeroCoefficient(_))
                || matches!(f, DegenerateFlag::UnitCoefficient(_))));
        // CDF still a valid monotone distribution
        let mut prev: f64 = 0.0;
        for i in 0..=800 {
            let x = -20.0 + i as f64 * 0.05;
            let v = s.cdf(x).unwrap();
            assert!((0.0..=1.0).contains(&v));
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn tiny_alpha_limit_behaves() {
        // α → 0: X ≈ W, so F_X ≈ Laplace CDF
        let s = MarginalSpec::from_field_params(1e-8, 0.5, 0.5, 0.5).unwrap();
        for &x in &[-3.0, -1.0, 0.0, 1.0, 3.0] {
            let a = s.cdf(x).unwrap();
            let b = laplace_cdf(x).unwrap();
            assert!((a - b).abs() < 1e-5, "x={x}: {a} vs {b}");
        }
    }
}
