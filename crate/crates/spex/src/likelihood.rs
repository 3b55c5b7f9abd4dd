//! Conditional Gaussian-copula likelihood, priors, the joint log-posterior
//! over (θ*, R*₁..R*ₙ), and its analytic gradient in the transformed latents.
//!
//! Conditioning on θ and the latent blocks, the copula of each replicate is
//! Gaussian with correlation Σ (the LMC matrix), evaluated at
//! z = Φ⁻¹(F_W(w)) with w = (F^X)⁻¹(u) − T(R). The log-likelihood per
//! replicate is
//!
//!   log φ_pd(z; Σ) + Σ_ij [ log f_W(w_ij) − log f^X((F^X)⁻¹(u_ij)) − log φ(z_ij) ]
//!
//! and latents carry the log-scale prior Σ (R* − exp R*) per coordinate.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Result, SpexError};
use crate::margins::{laplace_log_pdf, normal_score_of_laplace, MarginalSpec};
use crate::math::normal::LN_SQRT_2PI;
use crate::model::{
    latent_block_dim, LatentBlock, ParameterVector, TransformKind, TransformedParameters,
};
use crate::spatial::CovarianceModel;

const LN_2: f64 = std::f64::consts::LN_2;

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

/// Prior family of one hyperparameter on its natural scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorFamily {
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl PriorFamily {
    fn log_density(&self, v: f64) -> f64 {
        match *self {
            PriorFamily::Exponential { rate } => {
                if v < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * v
                }
            }
            PriorFamily::Uniform { lo, hi } => {
                if v < lo || v > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
        }
    }

    fn median(&self) -> f64 {
        match *self {
            PriorFamily::Exponential { rate } => LN_2 / rate,
            PriorFamily::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Per-parameter priors aligned with the flat θ ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub families: Vec<PriorFamily>,
}

impl PriorSpec {
    /// The defaults: unit-rate exponentials on positive-domain parameters,
    /// uniform on bounded ones.
    pub fn default_for(theta: &ParameterVector) -> PriorSpec {
        let families = (0..theta.flat_len())
            .map(|idx| match theta.transform_kind(idx) {
                TransformKind::Positive => PriorFamily::Exponential { rate: 1.0 },
                TransformKind::UnitInterval => PriorFamily::Uniform { lo: 0.0, hi: 1.0 },
                TransformKind::SymmetricInterval => PriorFamily::Uniform { lo: -1.0, hi: 1.0 },
            })
            .collect();
        PriorSpec { families }
    }

    pub fn validate_for(&self, theta: &ParameterVector) -> Result<()> {
        if self.families.len() != theta.flat_len() {
            return Err(SpexError::Config(format!(
                "prior spec has {} entries, parameter vector has {}",
                self.families.len(),
                theta.flat_len()
            )));
        }
        Ok(())
    }

    /// Prior median for every flat entry (used for chain initialization).
    pub fn medians(&self) -> Vec<f64> {
        self.families.iter().map(|f| f.median()).collect()
    }

    /// log π(θ*) = Σ_free [log π(θ_m)] + log|dg⁻¹/dθ*|.
    pub fn log_prior_star(
        &self,
        theta: &ParameterVector,
        theta_star: &TransformedParameters,
    ) -> f64 {
        let flat = theta.flat_values();
        let mut acc = 0.0;
        for &idx in theta.free_indices().iter() {
            acc += self.families[idx].log_density(flat[idx]);
        }
        acc + theta.log_jacobian(theta_star)
    }
}

// ---------------------------------------------------------------------------
// Posterior engine
// ---------------------------------------------------------------------------

/// Everything that depends on θ alone, rebuilt on each θ proposal and reused
/// across latent-only updates.
#[derive(Debug, Clone)]
pub struct ThetaCache {
    pub theta: ParameterVector,
    pub theta_star: TransformedParameters,
    cov: CovarianceModel,
    marginals: Vec<MarginalSpec>,
    /// Per field: quantiles x = (F^X)⁻¹(u), site-major d·n.
    x: Vec<Vec<f64>>,
    /// Per replicate: Σ_ij log f^X(x_ij) (independent of the latents).
    sum_log_fx_rep: Vec<f64>,
    log_prior_theta_star: f64,
}

/// Scratch buffers so repeated posterior evaluations allocate nothing.
#[derive(Debug, Clone)]
pub struct Workspace {
    z: DVector<f64>,
    y: DVector<f64>,
    w: Vec<f64>,
    dll_dt: Vec<f64>,
}

impl Workspace {
    pub fn new(p: usize, d: usize) -> Workspace {
        Workspace {
            z: DVector::zeros(p * d),
            y: DVector::zeros(p * d),
            w: vec![0.0; p * d],
            dll_dt: vec![0.0; p],
        }
    }
}

/// Value of one posterior evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorValue {
    pub log_posterior: f64,
    pub log_likelihood: f64,
}

/// Evaluates the joint posterior over (θ*, stacked R*) for one dataset.
pub struct PosteriorEngine<'a> {
    data: &'a Dataset,
    priors: &'a PriorSpec,
    template: ParameterVector,
    /// Per field: index order sorting that field's u values ascending.
    sort_idx: Vec<Vec<usize>>,
}

impl<'a> PosteriorEngine<'a> {
    /// `template` supplies the fixed-mask and the values of fixed entries.
    pub fn new(
        data: &'a Dataset,
        priors: &'a PriorSpec,
        template: ParameterVector,
    ) -> Result<PosteriorEngine<'a>> {
        template.validate()?;
        priors.validate_for(&template)?;
        if template.n_fields() != data.n_fields() {
            return Err(SpexError::Data(format!(
                "parameter vector has {} fields, dataset has {}",
                template.n_fields(),
                data.n_fields()
            )));
        }
        let sort_idx = (0..data.n_fields())
            .map(|i| {
                let us = data.u.field_values(i);
                let mut idx: Vec<usize> = (0..us.len()).collect();
                idx.sort_by(|&a, &b| us[a].partial_cmp(&us[b]).unwrap());
                idx
            })
            .collect();
        Ok(PosteriorEngine { data, priors, template, sort_idx })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn template(&self) -> &ParameterVector {
        &self.template
    }

    /// Stacked latent dimension Q = 2(p+1)·n.
    pub fn latent_dim(&self) -> usize {
        latent_block_dim(self.data.n_fields()) * self.data.n_reps()
    }

    /// Build the θ-dependent cache: covariance, marginals, data quantiles.
    pub fn theta_cache(&self, theta_star: &TransformedParameters) -> Result<ThetaCache> {
        let theta = self.template.from_unconstrained(theta_star)?;
        self.theta_cache_natural(theta, theta_star.clone())
    }

    /// Cache for a natural-scale θ (fixed entries must match the template).
    pub fn theta_cache_for(&self, theta: &ParameterVector) -> Result<ThetaCache> {
        let star = theta.to_unconstrained()?;
        self.theta_cache_natural(theta.clone(), star)
    }

    fn theta_cache_natural(
        &self,
        theta: ParameterVector,
        theta_star: TransformedParameters,
    ) -> Result<ThetaCache> {
        theta.validate()?;
        let p = self.data.n_fields();
        let d = self.data.n_sites();
        let n = self.data.n_reps();
        let cov = CovarianceModel::assemble_lmc(&self.data.sites, &theta.lambda, &theta.coreg_matrix())?;
        let marginals: Vec<MarginalSpec> =
            (0..p).map(|i| MarginalSpec::new(theta.betas(i))).collect::<Result<_>>()?;

        let mut x = vec![vec![0.0; d * n]; p];
        let mut sum_log_fx_rep = vec![0.0; n];
        let mut sorted_u = Vec::with_capacity(d * n);
        for i in 0..p {
            let us = self.data.u.field_values(i);
            sorted_u.clear();
            sorted_u.extend(self.sort_idx[i].iter().map(|&o| us[o]));
            let sorted_x = marginals[i].quantiles_sorted(&sorted_u)?;
            for (&orig, &xv) in self.sort_idx[i].iter().zip(&sorted_x) {
                x[i][orig] = xv;
                sum_log_fx_rep[orig % n] += marginals[i].log_pdf_raw(xv);
            }
        }
        let log_prior_theta_star = self.priors.log_prior_star(&theta, &theta_star);
        Ok(ThetaCache { theta, theta_star, cov, marginals, x, sum_log_fx_rep, log_prior_theta_star })
    }

    /// Joint log-posterior at (cache.θ, R*); optionally the gradient in R*
    /// and the per-replicate components (likelihood + latent prior).
    ///
    /// Returns −∞ (with unspecified gradient contents) for numerically
    /// unusable states.
    pub fn eval(
        &self,
        cache: &ThetaCache,
        r_star: &[f64],
        ws: &mut Workspace,
        mut grad: Option<&mut [f64]>,
        mut per_rep: Option<&mut [f64]>,
    ) -> PosteriorValue {
        let p = self.data.n_fields();
        let d = self.data.n_sites();
        let n = self.data.n_reps();
        let block = latent_block_dim(p);
        debug_assert_eq!(r_star.len(), block * n);
        if let Some(g) = grad.as_deref() {
            debug_assert_eq!(g.len(), block * n);
        }

        let bad = PosteriorValue {
            log_posterior: f64::NEG_INFINITY,
            log_likelihood: f64::NEG_INFINITY,
        };

        let mut log_lik = 0.0;
        let mut latent_prior = 0.0;
        let pd = p * d;
        let const_gauss = -0.5 * cache.cov.log_det() - pd as f64 * LN_SQRT_2PI;

        for k in 0..n {
            let rs = &r_star[k * block..(k + 1) * block];
            if rs.iter().any(|&v| !(-700.0..=700.0).contains(&v)) {
                return bad;
            }
            // natural-scale latents and the block's T values
            let shared_upper = rs[0].exp();
            let shared_lower = rs[1].exp();
            let mut prior_k = rs[0] - shared_upper + rs[1] - shared_lower;
            let mut sum_logfw = 0.0;
            let mut sum_logphi_z = 0.0;
            for i in 0..p {
                let own_upper = rs[2 + 2 * i].exp();
                let own_lower = rs[3 + 2 * i].exp();
                prior_k += rs[2 + 2 * i] - own_upper + rs[3 + 2 * i] - own_lower;
                let b = cache.marginals[i].betas;
                let t = b.shared_upper * shared_upper + b.own_upper * own_upper
                    - b.shared_lower * shared_lower
                    - b.own_lower * own_lower;
                let xs = &cache.x[i];
                for j in 0..d {
                    let w = xs[j * n + k] - t;
                    let z = normal_score_of_laplace(w);
                    ws.w[i * d + j] = w;
                    ws.z[i * d + j] = z;
                    sum_logfw += laplace_log_pdf(w);
                    sum_logphi_z += -0.5 * z * z - LN_SQRT_2PI;
                }
            }
            // Gaussian copula quadratic form via one triangular solve
            ws.y.copy_from(&ws.z);
            let y = &mut ws.y;
            cache.cov.forward_solve(y);
            let quad = y.norm_squared();
            let log_phi_pd = const_gauss - 0.5 * quad;
            let loglik_k = log_phi_pd + sum_logfw - cache.sum_log_fx_rep[k] - sum_logphi_z;
            if !loglik_k.is_finite() || !prior_k.is_finite() {
                return bad;
            }
            log_lik += loglik_k;
            latent_prior += prior_k;
            if let Some(pr) = per_rep.as_deref_mut() {
                pr[k] = loglik_k + prior_k;
            }

            if let Some(g) = grad.as_deref_mut() {
                // s = Σ⁻¹ z, then chain through w, T and R* per coordinate
                cache.cov.backward_solve(y);
                for i in 0..p {
                    let mut acc = 0.0;
                    for j in 0..d {
                        let w = ws.w[i * d + j];
                        let z = ws.z[i * d + j];
                        // dz/dw = f_W(w)/φ(z)
                        let dzdw = (laplace_log_pdf(w) + 0.5 * z * z + LN_SQRT_2PI).exp();
                        let dll_dw = (z - y[i * d + j]) * dzdw - w.signum();
                        acc -= dll_dw; // dw/dT = −1
                    }
                    ws.dll_dt[i] = acc;
                }
                let g_k = &mut g[k * block..(k + 1) * block];
                let mut g_shared_upper = 0.0;
                let mut g_shared_lower = 0.0;
                for i in 0..p {
                    let b = cache.marginals[i].betas;
                    g_shared_upper += b.shared_upper * ws.dll_dt[i];
                    g_shared_lower += -b.shared_lower * ws.dll_dt[i];
                    let own_upper = rs[2 + 2 * i].exp();
                    let own_lower = rs[3 + 2 * i].exp();
                    g_k[2 + 2 * i] = b.own_upper * ws.dll_dt[i] * own_upper + 1.0 - own_upper;
                    g_k[3 + 2 * i] = -b.own_lower * ws.dll_dt[i] * own_lower + 1.0 - own_lower;
                }
                g_k[0] = g_shared_upper * shared_upper + 1.0 - shared_upper;
                g_k[1] = g_shared_lower * shared_lower + 1.0 - shared_lower;
            }
        }

        let log_posterior = log_lik + latent_prior + cache.log_prior_theta_star;
        if !log_posterior.is_finite() {
            return bad;
        }
        PosteriorValue { log_posterior, log_likelihood: log_lik }
    }
}

// ---------------------------------------------------------------------------
// Spec-level convenience entry points
// ---------------------------------------------------------------------------

fn latents_to_r_star(latents: &[LatentBlock]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for b in latents {
        for &v in b.values() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SpexError::Domain("latent values must be positive".into()));
            }
            out.push(v.ln());
        }
    }
    Ok(out)
}

/// Conditional Gaussian-copula log-likelihood at natural-scale (θ, R).
pub fn log_likelihood(
    data: &Dataset,
    theta: &ParameterVector,
    latents: &[LatentBlock],
) -> Result<f64> {
    if latents.len() != data.n_reps() {
        return Err(SpexError::Data(format!(
            "{} latent blocks for {} replicates",
            latents.len(),
            data.n_reps()
        )));
    }
    let priors = PriorSpec::default_for(theta);
    let engine = PosteriorEngine::new(data, &priors, theta.clone())?;
    let cache = engine.theta_cache_for(theta)?;
    let r_star = latents_to_r_star(latents)?;
    let mut ws = Workspace::new(data.n_fields(), data.n_sites());
    let v = engine.eval(&cache, &r_star, &mut ws, None, None);
    if !v.log_likelihood.is_finite() {
        return Err(SpexError::Domain("log-likelihood is not finite at this state".into()));
    }
    Ok(v.log_likelihood)
}

/// Joint log-posterior log π(θ*, R* | u) at natural-scale inputs.
pub fn log_posterior(
    data: &Dataset,
    theta: &ParameterVector,
    latents: &[LatentBlock],
    priors: &PriorSpec,
) -> Result<f64> {
    let engine = PosteriorEngine::new(data, priors, theta.clone())?;
    let cache = engine.theta_cache_for(theta)?;
    let r_star = latents_to_r_star(latents)?;
    let mut ws = Workspace::new(data.n_fields(), data.n_sites());
    let v = engine.eval(&cache, &r_star, &mut ws, None, None);
    Ok(v.log_posterior)
}

/// ∇_{R*} log π(θ*, R* | u), flattened replicate-major.
pub fn grad_latent(
    data: &Dataset,
    theta: &ParameterVector,
    latents: &[LatentBlock],
    priors: &PriorSpec,
) -> Result<Vec<f64>> {
    let engine = PosteriorEngine::new(data, priors, theta.clone())?;
    let cache = engine.theta_cache_for(theta)?;
    let r_star = latents_to_r_star(latents)?;
    let mut ws = Workspace::new(data.n_fields(), data.n_sites());
    let mut grad = vec![0.0; r_star.len()];
    let v = engine.eval(&cache, &r_star, &mut ws, Some(&mut grad), None);
    if !v.log_posterior.is_finite() {
        return Err(SpexError::Domain("posterior not finite; gradient undefined".into()));
    }
    Ok(grad)
}
