//! Blockwise MCMC: adaptive random-walk Metropolis–Hastings on θ*, adaptive
//! MALA on the stacked latent vector R*, with burn-in step-size adaptation.
//!
//! Per iteration: (1) propose θ*′ ~ N(θ*, σ²_RW·I) and accept with the
//! posterior ratio; (2) propose R*′ ~ N(R* + (σ²_MALA/2)·∇log π, σ²_MALA·I)
//! and accept with the ratio including the asymmetric forward/backward
//! proposal densities. During burn-in both step sizes are re-tuned every N₀
//! iterations by σ ↦ σ·exp((a₀ − a*)/b); they are frozen afterwards.

use std::io::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SpexError};
use crate::likelihood::{PosteriorEngine, PriorSpec, ThetaCache, Workspace};
use crate::math::stats::{mean, quantile, variance};
use crate::model::{latent_block_dim, LatentBlock, ParameterVector, TransformedParameters};

/// Target acceptance rate of the random-walk block (Roberts et al. 1997).
pub const TARGET_RATE_RW: f64 = 0.234;
/// Target acceptance rate of the MALA block (Roberts & Rosenthal 1998).
pub const TARGET_RATE_MALA: f64 = 0.574;

/// How the latent vector is proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentBlocking {
    /// One MALA block over all Q = 2(p+1)n coordinates (the default).
    Stacked,
    /// n independent MALA blocks (one per replicate) sharing one step size.
    PerReplicate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total iterations N.
    pub n_iter: usize,
    /// Burn-in iterations N_b.
    pub burnin: usize,
    /// Adaptation interval N₀.
    pub adapt_every: usize,
    /// Adaptation scale b.
    pub adapt_scale: f64,
    pub target_rate_rw: f64,
    pub target_rate_mala: f64,
    /// Initial step sizes.
    pub sigma_rw: f64,
    pub sigma_mala: f64,
    /// Post-burn-in storage stride.
    pub thinning: usize,
    pub seed: u64,
    pub store_latents: bool,
    pub latent_blocking: LatentBlocking,
}

impl SamplerConfig {
    pub fn new(n_iter: usize, burnin: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_iter,
            burnin,
            adapt_every: 100,
            adapt_scale: 10.0,
            target_rate_rw: TARGET_RATE_RW,
            target_rate_mala: TARGET_RATE_MALA,
            sigma_rw: 0.1,
            sigma_mala: 0.1,
            thinning: 10,
            seed,
            store_latents: false,
            latent_blocking: LatentBlocking::Stacked,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adapt_every > 0 && self.adapt_every < self.burnin && self.burnin < self.n_iter) {
            return Err(SpexError::Config(format!(
                "need N0 < burnin < n_iter, got {} / {} / {}",
                self.adapt_every, self.burnin, self.n_iter
            )));
        }
        if self.sigma_rw <= 0.0 || self.sigma_mala <= 0.0 || self.adapt_scale <= 0.0 {
            return Err(SpexError::Config("step sizes and adapt scale must be positive".into()));
        }
        for t in [self.target_rate_rw, self.target_rate_mala] {
            if !(0.0 < t && t < 1.0) {
                return Err(SpexError::Config(format!("target rate {t} outside (0,1)")));
            }
        }
        if self.thinning == 0 {
            return Err(SpexError::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stored chain with acceptance history and convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub param_names: Vec<String>,
    pub fixed: Vec<bool>,
    /// Post-burn-in natural-scale samples, one row per stored iteration.
    pub samples: Vec<Vec<f64>>,
    /// Stored latent vectors (log scale), present only when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_samples: Option<Vec<Vec<f64>>>,
    /// Acceptance rate per adaptation window, whole run.
    pub accept_rw: Vec<f64>,
    pub accept_mala: Vec<f64>,
    pub post_burnin_rate_rw: f64,
    pub post_burnin_rate_mala: f64,
    pub final_sigma_rw: f64,
    pub final_sigma_mala: f64,
    /// Effective sample size per parameter (NaN for fixed parameters).
    pub ess: Vec<f64>,
    /// Split-chain potential scale reduction per parameter.
    pub split_rhat: Vec<f64>,
    pub nonfinite_gradient_rejections: usize,
    pub n_iter: usize,
    pub burnin: usize,
    pub thinning: usize,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Kernel operations
// ---------------------------------------------------------------------------

/// θ*′ = θ* + σ·ε with ε standard normal; the symmetric RW kernel.
pub fn rw_propose<R: Rng>(theta_star: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    theta_star.iter().map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// R*′ = R* + (σ²/2)·grad + σ·ε; the Langevin-drift proposal.
pub fn mala_propose<R: Rng>(r_star: &[f64], grad: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let half_s2 = 0.5 * sigma * sigma;
    r_star
        .iter()
        .zip(grad)
        .map(|(&v, &g)| v + half_s2 * g + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// log q_MALA(to | from) up to the additive constant that cancels in the
/// forward/backward ratio.
pub fn mala_log_density(to: &[f64], from: &[f64], grad_from: &[f64], sigma: f64) -> f64 {
    let half_s2 = 0.5 * sigma * sigma;
    let mut quad = 0.0;
    for ((&t, &f), &g) in to.iter().zip(from).zip(grad_from) {
        let diff = t - f - half_s2 * g;
        quad += diff * diff;
    }
    -quad / (2.0 * sigma * sigma)
}

/// σ′ = σ·exp((a₀ − a*)/b).
pub fn adapt_sigma(sigma: f64, observed_rate: f64, target_rate: f64, scale: f64) -> f64 {
    sigma * ((observed_rate - target_rate) / scale).exp()
}

// ---------------------------------------------------------------------------
// Chain driver
// ---------------------------------------------------------------------------

/// θ₀ at the prior medians (free entries) and R₀ at the prior mean R = 1.
pub fn default_init(
    template: &ParameterVector,
    priors: &PriorSpec,
    n_reps: usize,
) -> (ParameterVector, Vec<LatentBlock>) {
    let medians = priors.medians();
    let mut theta = template.clone();
    for idx in template.free_indices() {
        theta.set_flat(idx, medians[idx]);
    }
    let latents = vec![LatentBlock::ones(template.n_fields()); n_reps];
    (theta, latents)
}

struct WindowCounter {
    accepted: usize,
    proposed: usize,
}

impl WindowCounter {
    fn new() -> Self {
        WindowCounter { accepted: 0, proposed: 0 }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn reset(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// Run Algorithm 1. Deterministic given `cfg.seed`.
pub fn run_chain(
    data: &Dataset,
    theta0: &ParameterVector,
    r0: &[LatentBlock],
    priors: &PriorSpec,
    cfg: &SamplerConfig,
) -> Result<ChainOutput> {
    cfg.validate()?;
    if r0.len() != data.n_reps() {
        return Err(SpexError::Sampler(format!(
            "{} initial latent blocks for {} replicates",
            r0.len(),
            data.n_reps()
        )));
    }
    let engine = PosteriorEngine::new(data, priors, theta0.clone())?;
    let p = data.n_fields();
    let n = data.n_reps();
    let block = latent_block_dim(p);
    let q = block * n;
    let m_free = theta0.n_free();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut ws = Workspace::new(p, data.n_sites());

    // state
    let mut theta_star: Vec<f64> = theta0.to_unconstrained()?.values;
    let mut cache: ThetaCache = engine.theta_cache_for(theta0)?;
    let mut r_star: Vec<f64> = Vec::with_capacity(q);
    for b in r0 {
        if b.values().len() != block {
            return Err(SpexError::Sampler("latent block has wrong dimension".into()));
        }
        r_star.extend(b.values().iter().map(|&v| v.ln()));
    }
    let mut grad = vec![0.0; q];
    let mut per_rep = vec![0.0; n];
    let mut value = engine.eval(&cache, &r_star, &mut ws, Some(&mut grad), Some(&mut per_rep));
    if !value.log_posterior.is_finite() {
        return Err(SpexError::Sampler(
            "initial state has non-finite log-posterior; adjust the starting point".into(),
        ));
    }

    let mut sigma_rw = cfg.sigma_rw;
    let mut sigma_mala = cfg.sigma_mala;
    let mut window_rw = WindowCounter::new();
    let mut window_mala = WindowCounter::new();
    let mut post_rw = WindowCounter::new();
    let mut post_mala = WindowCounter::new();
    let mut accept_rw_history = Vec::new();
    let mut accept_mala_history = Vec::new();
    let mut nonfinite_gradient_rejections = 0usize;

    let n_stored = (cfg.n_iter - cfg.burnin) / cfg.thinning;
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(n_stored);
    let mut latent_samples: Option<Vec<Vec<f64>>> =
        cfg.store_latents.then(|| Vec::with_capacity(n_stored));

    // MALA scratch
    let mut grad_prop = vec![0.0; q];
    let mut per_rep_prop = vec![0.0; n];

    for t in 1..=cfg.n_iter {
        // Block 1: random walk on θ*
        if m_free > 0 {
            window_rw.proposed += 1;
            if t > cfg.burnin {
                post_rw.proposed += 1;
            }
            let proposal = rw_propose(&theta_star, sigma_rw, &mut rng);
            let accept_u: f64 = rng.gen();
            let prop_star = TransformedParameters { values: proposal.clone() };
            if let Ok(prop_cache) = engine.theta_cache(&prop_star) {
                let prop_value = engine.eval(&prop_cache, &r_star, &mut ws, None, None);
                if prop_value.log_posterior.is_finite()
                    && accept_u.ln() <= prop_value.log_posterior - value.log_posterior
                {
                    theta_star = proposal;
                    cache = prop_cache;
                    value = prop_value;
                    window_rw.accepted += 1;
                    if t > cfg.burnin {
                        post_rw.accepted += 1;
                    }
                    // gradient refers to the old θ; refresh it (cheap relative
                    // to the cache rebuild that already happened)
                    let v = engine.eval(
                        &cache,
                        &r_star,
                        &mut ws,
                        Some(&mut grad),
                        Some(&mut per_rep),
                    );
                    debug_assert!(v.log_posterior.is_finite());
                    value = v;
                }
            }
        }

        // Block 2: MALA on R*
        match cfg.latent_blocking {
            LatentBlocking::Stacked => {
                window_mala.proposed += 1;
                if t > cfg.burnin {
                    post_mala.proposed += 1;
                }
                let proposal = mala_propose(&r_star, &grad, sigma_mala, &mut rng);
                let accept_u: f64 = rng.gen();
                let prop_value = engine.eval(
                    &cache,
                    &proposal,
                    &mut ws,
                    Some(&mut grad_prop),
                    Some(&mut per_rep_prop),
                );
                let grad_ok =
                    prop_value.log_posterior.is_finite() && grad_prop.iter().all(|g| g.is_finite());
                if prop_value.log_posterior.is_finite() && !grad_ok {
                    nonfinite_gradient_rejections += 1;
                }
                if grad_ok {
                    let log_fwd = mala_log_density(&proposal, &r_star, &grad, sigma_mala);
                    let log_bwd = mala_log_density(&r_star, &proposal, &grad_prop, sigma_mala);
                    let log_alpha =
                        prop_value.log_posterior - value.log_posterior + log_bwd - log_fwd;
                    if accept_u.ln() <= log_alpha {
                        r_star = proposal;
                        value = prop_value;
                        std::mem::swap(&mut grad, &mut grad_prop);
                        std::mem::swap(&mut per_rep, &mut per_rep_prop);
                        window_mala.accepted += 1;
                        if t > cfg.burnin {
                            post_mala.accepted += 1;
                        }
                    }
                }
            }
            LatentBlocking::PerReplicate => {
                let proposal = mala_propose(&r_star, &grad, sigma_mala, &mut rng);
                let prop_value = engine.eval(
                    &cache,
                    &proposal,
                    &mut ws,
                    Some(&mut grad_prop),
                    Some(&mut per_rep_prop),
                );
                let usable = prop_value.log_posterior.is_finite()
                    && grad_prop.iter().all(|g| g.is_finite());
                if !usable && prop_value.log_posterior.is_finite() {
                    nonfinite_gradient_rejections += 1;
                }
                // replicate blocks have independent posteriors given θ, so
                // accept/reject each block on its own terms
                for k in 0..n {
                    window_mala.proposed += 1;
                    if t > cfg.burnin {
                        post_mala.proposed += 1;
                    }
                    let accept_u: f64 = rng.gen();
                    if !usable {
                        continue;
                    }
                    let lo = k * block;
                    let hi = lo + block;
                    let log_fwd = mala_log_density(
                        &proposal[lo..hi],
                        &r_star[lo..hi],
                        &grad[lo..hi],
                        sigma_mala,
                    );
                    let log_bwd = mala_log_density(
                        &r_star[lo..hi],
                        &proposal[lo..hi],
                        &grad_prop[lo..hi],
                        sigma_mala,
                    );
                    let log_alpha = per_rep_prop[k] - per_rep[k] + log_bwd - log_fwd;
                    if accept_u.ln() <= log_alpha {
                        r_star[lo..hi].copy_from_slice(&proposal[lo..hi]);
                        grad[lo..hi].copy_from_slice(&grad_prop[lo..hi]);
                        per_rep[k] = per_rep_prop[k];
                        window_mala.accepted += 1;
                        if t > cfg.burnin {
                            post_mala.accepted += 1;
                        }
                    }
                }
                value = engine.eval(&cache, &r_star, &mut ws, None, None);
            }
        }

        // adaptive step-size rule, frozen after burn-in
        if t % cfg.adapt_every == 0 {
            let rate_rw = window_rw.rate();
            let rate_mala = window_mala.rate();
            accept_rw_history.push(rate_rw);
            accept_mala_history.push(rate_mala);
            if t <= cfg.burnin {
                if m_free > 0 {
                    sigma_rw = adapt_sigma(sigma_rw, rate_rw, cfg.target_rate_rw, cfg.adapt_scale);
                }
                sigma_mala =
                    adapt_sigma(sigma_mala, rate_mala, cfg.target_rate_mala, cfg.adapt_scale);
            }
            window_rw.reset();
            window_mala.reset();
        }

        // post-burn-in storage
        if t > cfg.burnin && (t - cfg.burnin) % cfg.thinning == 0 {
            samples.push(cache.theta.flat_values());
            if let Some(ls) = latent_samples.as_mut() {
                ls.push(r_star.clone());
            }
        }
    }

    let n_params = theta0.flat_len();
    let mut ess = vec![f64::NAN; n_params];
    let mut split_rhat = vec![f64::NAN; n_params];
    for j in 0..n_params {
        if theta0.fixed_mask[j] {
            continue;
        }
        let series: Vec<f64> = samples.iter().map(|row| row[j]).collect();
        ess[j] = effective_sample_size(&series);
        split_rhat[j] = split_chain_rhat(&series);
    }

    Ok(ChainOutput {
        param_names: theta0.param_names(),
        fixed: theta0.fixed_mask.clone(),
        samples,
        latent_samples,
        accept_rw: accept_rw_history,
        accept_mala: accept_mala_history,
        post_burnin_rate_rw: post_rw.rate(),
        post_burnin_rate_mala: post_mala.rate(),
        final_sigma_rw: sigma_rw,
        final_sigma_mala: sigma_mala,
        ess,
        split_rhat,
        nonfinite_gradient_rejections,
        n_iter: cfg.n_iter,
        burnin: cfg.burnin,
        thinning: cfg.thinning,
        seed: cfg.seed,
    })
}

// ---------------------------------------------------------------------------
// Convergence diagnostics
// ---------------------------------------------------------------------------

/// Effective sample size via Geyer's initial positive sequence.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 8 {
        return f64::NAN;
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return f64::NAN;
    }
    let autocov = |lag: usize| -> f64 {
        series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64
    };
    let mut iat = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        iat += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / iat).min(n as f64)
}

/// Split-chain potential scale reduction (two halves of one chain).
pub fn split_chain_rhat(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 8 {
        return f64::NAN;
    }
    let half = n / 2;
    let a = &series[..half];
    let b = &series[n - half..];
    let (ma, mb) = (mean(a), mean(b));
    let w = 0.5 * (variance(a) + variance(b));
    if w <= 0.0 {
        return f64::NAN;
    }
    let grand = 0.5 * (ma + mb);
    let bvar = half as f64 * ((ma - grand).powi(2) + (mb - grand).powi(2));
    let var_plus = (half as f64 - 1.0) / half as f64 * w + bvar / half as f64;
    (var_plus / w).sqrt()
}

// ---------------------------------------------------------------------------
// Artifact serialization
// ---------------------------------------------------------------------------

/// Per-parameter posterior summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub fixed: bool,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub ess: f64,
    pub split_rhat: f64,
}

/// JSON summary sidecar of a fitted chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub spec_version: String,
    pub seed: u64,
    pub n_iter: usize,
    pub burnin: usize,
    pub thinning: usize,
    pub n_samples: usize,
    pub params: Vec<ParamSummary>,
    pub accept_rw: Vec<f64>,
    pub accept_mala: Vec<f64>,
    pub post_burnin_rate_rw: f64,
    pub post_burnin_rate_mala: f64,
    pub final_sigma_rw: f64,
    pub final_sigma_mala: f64,
    pub nonfinite_gradient_rejections: usize,
}

impl ChainOutput {
    /// Equal-tailed credible interval of one parameter.
    pub fn credible_interval(&self, name: &str, level: f64) -> Result<(f64, f64)> {
        let j = self
            .param_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SpexError::Domain(format!("unknown parameter {name}")))?;
        let series: Vec<f64> = self.samples.iter().map(|row| row[j]).collect();
        let tail = 0.5 * (1.0 - level);
        Ok((quantile(&series, tail), quantile(&series, 1.0 - tail)))
    }

    /// Posterior median of every parameter (fixed ones keep their value).
    pub fn posterior_median(&self) -> Vec<f64> {
        (0..self.param_names.len())
            .map(|j| {
                let series: Vec<f64> = self.samples.iter().map(|row| row[j]).collect();
                quantile(&series, 0.5)
            })
            .collect()
    }

    /// Write the natural-scale sample matrix as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", self.param_names.join(","))?;
        for row in &self.samples {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> ChainSummary {
        let params = (0..self.param_names.len())
            .map(|j| {
                let series: Vec<f64> = self.samples.iter().map(|row| row[j]).collect();
                ParamSummary {
                    name: self.param_names[j].clone(),
                    fixed: self.fixed[j],
                    mean: mean(&series),
                    sd: if series.len() > 1 { variance(&series).sqrt() } else { 0.0 },
                    q025: quantile(&series, 0.025),
                    median: quantile(&series, 0.5),
                    q975: quantile(&series, 0.975),
                    ess: self.ess[j],
                    split_rhat: self.split_rhat[j],
                }
            })
            .collect();
        ChainSummary {
            spec_version: crate::data::SPEC_VERSION.to_string(),
            seed: self.seed,
            n_iter: self.n_iter,
            burnin: self.burnin,
            thinning: self.thinning,
            n_samples: self.samples.len(),
            params,
            accept_rw: self.accept_rw.clone(),
            accept_mala: self.accept_mala.clone(),
            post_burnin_rate_rw: self.post_burnin_rate_rw,
            post_burnin_rate_mala: self.post_burnin_rate_mala,
            final_sigma_rw: self.final_sigma_rw,
            final_sigma_mala: self.final_sigma_mala,
            nonfinite_gradient_rejections: self.nonfinite_gradient_rejections,
        }
    }
}
