//! Exact sampling from the model: latent exponentials, correlated Gaussian
//! field via the LMC Cholesky factor, Laplace back-transform, and uniform
//! scores through the closed-form marginal CDF.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Panel;
use crate::error::{Result, SpexError};
use crate::margins::{laplace_from_normal, MarginalSpec};
use crate::math::exp1;
use crate::model::{LatentBlock, ParameterVector};
use crate::spatial::{CovarianceModel, SiteSet};

/// Largest representable score below 1; outputs are clamped inside (0,1).
const U_HI: f64 = 1.0 - 1.1e-16;
const U_LO: f64 = 1e-300;

/// Default cap on the dense Cholesky dimension pd.
pub const DEFAULT_CHOLESKY_CAP: usize = 4000;

#[derive(Debug, Clone, Copy)]
pub struct SimulateOptions {
    /// Reject site sets with pd above this bound.
    pub cholesky_cap: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions { cholesky_cap: DEFAULT_CHOLESKY_CAP }
    }
}

/// Simulated replicates on the model scale (X), the uniform scale (U), and
/// the latent blocks that generated them.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub x: Panel,
    pub u: Panel,
    pub latents: Vec<LatentBlock>,
    pub seed: u64,
}

/// Per-replicate RNG substream: replicate k uses stream k+1 of the seeded
/// generator, so replicates can be generated independently in any order.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

/// Draw `n` replicates of the p-field model at the given sites.
///
/// Per replicate: a latent block of 2(p+1) unit exponentials, a pd-dim
/// correlated Gaussian via the precomputed Cholesky factor, the Laplace
/// back-transform W = F_W⁻¹(Φ(W′)), X_i(s_j) = T_i + W_i(s_j), and
/// U = F_i^X(X). Deterministic given the seed.
pub fn simulate(
    theta: &ParameterVector,
    sites: &SiteSet,
    n: usize,
    seed: u64,
) -> Result<SimulationOutput> {
    simulate_with_options(theta, sites, n, seed, SimulateOptions::default())
}

pub fn simulate_with_options(
    theta: &ParameterVector,
    sites: &SiteSet,
    n: usize,
    seed: u64,
    options: SimulateOptions,
) -> Result<SimulationOutput> {
    theta.validate()?;
    if n == 0 {
        return Err(SpexError::Domain("need at least one replicate".into()));
    }
    let p = theta.n_fields();
    let d = sites.len();
    if p * d > options.cholesky_cap {
        return Err(SpexError::SizeLimit(format!(
            "pd = {} exceeds the dense Cholesky cap {}; raise the cap or coarsen the site set",
            p * d,
            options.cholesky_cap
        )));
    }

    // Sample in a canonical (coordinate-sorted) site order so permuting the
    // input sites permutes outputs identically under the same seed.
    let mut canonical: Vec<usize> = (0..d).collect();
    canonical.sort_by(|&a, &b| {
        sites.coords()[a].partial_cmp(&sites.coords()[b]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut slot_of = vec![0usize; d]; // original site -> canonical slot
    for (slot, &orig) in canonical.iter().enumerate() {
        slot_of[orig] = slot;
    }
    let sorted_sites = SiteSet::new(canonical.iter().map(|&j| sites.coords()[j].clone()).collect())?;

    let cov = CovarianceModel::assemble_lmc(&sorted_sites, &theta.lambda, &theta.coreg_matrix())?;
    let marginals: Vec<MarginalSpec> =
        (0..p).map(|i| MarginalSpec::new(theta.betas(i))).collect::<Result<_>>()?;

    let mut x = Panel::zeros(p, d, n);
    let mut u = Panel::zeros(p, d, n);
    let mut latents = Vec::with_capacity(n);
    let g = cov.cholesky();

    for k in 0..n {
        let mut rng = replicate_rng(seed, k);
        let block = LatentBlock::prior_draw(p, &mut rng);
        let eps = DVector::from_fn(p * d, |_, _| StandardNormal.sample(&mut rng));
        let w_gauss = g * eps;
        for i in 0..p {
            let t = block.latent_sum(&theta.betas(i), i);
            for j in 0..d {
                let w = laplace_from_normal(w_gauss[i * d + slot_of[j]]);
                let xv = t + w;
                x.set(i, j, k, xv);
                u.set(i, j, k, marginals[i].cdf_raw(xv).clamp(U_LO, U_HI));
            }
        }
        latents.push(block);
    }
    Ok(SimulationOutput { x, u, latents, seed })
}

/// One replicate on a fine grid, uniform scale (for field maps).
pub fn simulate_grid(
    theta: &ParameterVector,
    grid: &SiteSet,
    seed: u64,
    options: SimulateOptions,
) -> Result<SimulationOutput> {
    simulate_with_options(theta, grid, 1, seed, options)
}

/// Cheap single-pair sampler used by the χ Monte Carlo estimators: draws
/// values of all p fields at two sites distance `h` apart, on the uniform
/// scale, reusing preassembled marginals and covariance.
pub struct PairSimulator {
    cov: CovarianceModel,
    marginals: Vec<MarginalSpec>,
    betas: Vec<crate::margins::BetaCoefficients>,
    p: usize,
}

impl PairSimulator {
    pub fn new(theta: &ParameterVector, h: f64) -> Result<PairSimulator> {
        theta.validate()?;
        let sites = SiteSet::pair_at_distance(h)?;
        let cov = CovarianceModel::assemble_lmc(&sites, &theta.lambda, &theta.coreg_matrix())?;
        let p = theta.n_fields();
        let marginals: Vec<MarginalSpec> =
            (0..p).map(|i| MarginalSpec::new(theta.betas(i))).collect::<Result<_>>()?;
        let betas = (0..p).map(|i| theta.betas(i)).collect();
        Ok(PairSimulator { cov, marginals, betas, p })
    }

    /// One draw: out[i * 2 + j] = U_i(s_j) for j ∈ {0, 1}.
    pub fn draw<R: rand::Rng>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 2 * self.p);
        let mut shared = [0.0; 2];
        shared[0] = exp1(rng);
        shared[1] = exp1(rng);
        let mut own = vec![[0.0; 2]; self.p];
        for o in own.iter_mut() {
            o[0] = exp1(rng);
            o[1] = exp1(rng);
        }
        let eps = DVector::from_fn(2 * self.p, |_, _| StandardNormal.sample(rng));
        let w_gauss = self.cov.cholesky() * eps;
        for i in 0..self.p {
            let b = &self.betas[i];
            let t = b.shared_upper * shared[0] + b.own_upper * own[i][0]
                - b.shared_lower * shared[1]
                - b.own_lower * own[i][1];
            for j in 0..2 {
                let w = laplace_from_normal(w_gauss[i * 2 + j]);
                out[i * 2 + j] = self.marginals[i].cdf_raw(t + w).clamp(U_LO, U_HI);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::stats::{kendall_tau, ks_statistic_uniform};
    use crate::model::CoregSpec;
    use rand::Rng;

    fn theta_p1(alpha: f64, lambda: f64) -> ParameterVector {
        ParameterVector::new(
            vec![alpha],
            vec![0.5],
            0.5,
            0.5,
            vec![lambda],
            CoregSpec::Fixed(nalgebra::DMatrix::identity(1, 1)),
        )
        .unwrap()
    }

    fn theta_4_1() -> ParameterVector {
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

    #[test]
    fn deterministic_given_seed() {
        let theta = theta_4_1();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let sites = SiteSet::random_unit_square(4, &mut rng).unwrap();
        let a = simulate(&theta, &sites, 5, 99).unwrap();
        let b = simulate(&theta, &sites, 5, 99).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.x, b.x);
        let c = simulate(&theta, &sites, 5, 100).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn u_is_cdf_of_x() {
        let theta = theta_4_1();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let sites = SiteSet::random_unit_square(3, &mut rng).unwrap();
        let out = simulate(&theta, &sites, 10, 7).unwrap();
        for i in 0..2 {
            let spec = MarginalSpec::new(theta.betas(i)).unwrap();
            for j in 0..3 {
                for k in 0..10 {
                    let u = out.u.get(i, j, k);
                    let x = out.x.get(i, j, k);
                    assert!((u - spec.cdf(x).unwrap()).abs() < 1e-15);
                    assert!(u > 0.0 && u < 1.0);
                }
            }
        }
    }

    #[test]
    fn replicates_use_independent_substreams() {
        // extending a run leaves the earlier replicates untouched
        let theta = theta_p1(2.0, 1.0);
        let sites = SiteSet::new(vec![vec![0.0, 0.0]]).unwrap();
        let short = simulate(&theta, &sites, 3, 5).unwrap();
        let long = simulate(&theta, &sites, 6, 5).unwrap();
        for k in 0..3 {
            assert_eq!(short.u.get(0, 0, k), long.u.get(0, 0, k));
        }
    }

    #[test]
    fn uniform_margins_pass_ks() {
        // d=1, p=1: the probability integral transform makes U exactly uniform
        let theta = theta_p1(3.0, 1.0);
        let sites = SiteSet::new(vec![vec![0.0, 0.0]]).unwrap();
        let n = 100_000;
        let out = simulate(&theta, &sites, n, 31).unwrap();
        let us: Vec<f64> = (0..n).map(|k| out.u.get(0, 0, k)).collect();
        let d_stat = ks_statistic_uniform(&us);
        let crit = 1.6276 / (n as f64).sqrt(); // 1% two-sided critical value
        assert!(d_stat < crit, "KS statistic {d_stat} ≥ {crit}");
    }

    #[test]
    fn alpha_to_zero_matches_gaussian_copula_tau() {
        // α → 0: X ≈ W whose copula at distance h is Gaussian with
        // correlation exp(-h/λ); Kendall's τ = (2/π)·asin(ρ)
        let theta = theta_p1(1e-8, 0.5);
        let h = 0.3;
        let sites = SiteSet::new(vec![vec![0.0, 0.0], vec![h, 0.0]]).unwrap();
        let n = 50_000;
        let out = simulate(&theta, &sites, n, 13).unwrap();
        let a: Vec<f64> = (0..n).map(|k| out.u.get(0, 0, k)).collect();
        let b: Vec<f64> = (0..n).map(|k| out.u.get(0, 1, k)).collect();
        let rho = (-h / 0.5f64).exp();
        let expected = 2.0 / std::f64::consts::PI * rho.asin();
        let tau = kendall_tau(&a, &b);
        assert!((tau - expected).abs() < 0.012, "tau={tau}, expected={expected}");
    }

    #[test]
    fn site_permutation_permutes_outputs() {
        let theta = theta_4_1();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let coords: Vec<Vec<f64>> =
            (0..4).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let sites = SiteSet::new(coords.clone()).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted = SiteSet::new(perm.iter().map(|&j| coords[j].clone()).collect()).unwrap();
        let a = simulate(&theta, &sites, 4, 17).unwrap();
        let b = simulate(&theta, &permuted, 4, 17).unwrap();
        // sampling happens in canonical coordinate order, so the value at a
        // location is independent of the input ordering
        for k in 0..4 {
            assert_eq!(a.latents[k], b.latents[k]);
            for i in 0..2 {
                for (r, &orig) in perm.iter().enumerate() {
                    assert_eq!(b.u.get(i, r, k), a.u.get(i, orig, k));
                    assert_eq!(b.x.get(i, r, k), a.x.get(i, orig, k));
                }
            }
        }
    }

    #[test]
    fn grid_simulation_in_range() {
        let theta = theta_4_1();
        let grid = SiteSet::unit_grid(8, 8).unwrap();
        let out = simulate_grid(&theta, &grid, 21, SimulateOptions::default()).unwrap();
        assert_eq!(out.u.n_sites(), 64);
        assert_eq!(out.u.n_reps(), 1);
        for j in 0..64 {
            for i in 0..2 {
                let v = out.u.get(i, j, 0);
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn grid_cap_enforced() {
        let theta = theta_4_1();
        let grid = SiteSet::unit_grid(50, 50).unwrap();
        let err =
            simulate_grid(&theta, &grid, 1, SimulateOptions { cholesky_cap: 1000 }).unwrap_err();
        assert!(err.to_string().contains("cap"), "{err}");
    }

    #[test]
    fn single_point_grid_equals_simulate() {
        let theta = theta_4_1();
        let sites = SiteSet::new(vec![vec![0.5, 0.5]]).unwrap();
        let a = simulate_grid(&theta, &sites, 9, SimulateOptions::default()).unwrap();
        let b = simulate(&theta, &sites, 1, 9).unwrap();
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn perfectly_coregionalized_fields_share_w() {
        // ρ₁₂ = 1 with λ₁ = λ₂: W′ of the two fields coincide up to the
        // PD-repair jitter, so X differs only by the latent shifts
        let theta = ParameterVector::new(
            vec![2.0, 2.0],
            vec![0.4, 0.4],
            0.6,
            0.6,
            vec![0.5, 0.5],
            CoregSpec::Rho12(1.0),
        )
        .unwrap();
        let sites = SiteSet::unit_grid(3, 3).unwrap();
        let out = simulate(&theta, &sites, 3, 41).unwrap();
        for k in 0..3 {
            let t1 = out.latents[k].latent_sum(&theta.betas(0), 0);
            let t2 = out.latents[k].latent_sum(&theta.betas(1), 1);
            for j in 0..9 {
                let w1 = out.x.get(0, j, k) - t1;
                let w2 = out.x.get(1, j, k) - t2;
                assert!((w1 - w2).abs() < 1e-3, "w1={w1}, w2={w2}");
            }
        }
    }

    #[test]
    fn within_field_chi_decreases_with_distance() {
        // AD-configured θ: empirical χ(h, 0.9) nonincreasing in h up to noise
        let theta = theta_4_1();
        let sites =
            SiteSet::new(vec![vec![0.0, 0.0], vec![0.2, 0.0], vec![0.9, 0.0]]).unwrap();
        let n = 40_000;
        let out = simulate(&theta, &sites, n, 23).unwrap();
        let chi = |j1: usize, j2: usize| {
            let mut joint = 0u32;
            let mut cond = 0u32;
            for k in 0..n {
                let a = out.u.get(0, j1, k) > 0.9;
                let b = out.u.get(0, j2, k) > 0.9;
                if b {
                    cond += 1;
                    if a {
                        joint += 1;
                    }
                }
            }
            joint as f64 / cond as f64
        };
        let (chi_short, chi_long) = (chi(0, 1), chi(0, 2));
        assert!(
            chi_short > chi_long - 0.02,
            "chi(0.2)={chi_short} not above chi(0.9)={chi_long}"
        );
    }
}
