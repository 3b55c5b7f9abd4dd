//! Spatial correlation, the Linear Model of Coregionalization cross-covariance
//! assembly, and Cholesky factorization of the pd×pd latent correlation matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpexError};

/// Jitter ladder for positive-definiteness repair: start value and cap.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Site coordinates and their pairwise Euclidean distance matrix.
#[derive(Debug, Clone)]
pub struct SiteSet {
    coords: Vec<Vec<f64>>,
    distances: DMatrix<f64>,
}

impl SiteSet {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<SiteSet> {
        if coords.is_empty() {
            return Err(SpexError::Data("site set must be non-empty".into()));
        }
        let dim = coords[0].len();
        if dim == 0 {
            return Err(SpexError::Data("site coordinates must have at least one dimension".into()));
        }
        for (j, c) in coords.iter().enumerate() {
            if c.len() != dim {
                return Err(SpexError::Data(format!(
                    "site {j} has {} coordinates, expected {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(SpexError::Data(format!("site {j} has non-finite coordinates")));
            }
        }
        let d = coords.len();
        let mut distances = DMatrix::zeros(d, d);
        for j1 in 0..d {
            for j2 in (j1 + 1)..d {
                let h = coords[j1]
                    .iter()
                    .zip(&coords[j2])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                distances[(j1, j2)] = h;
                distances[(j2, j1)] = h;
            }
        }
        Ok(SiteSet { coords, distances })
    }

    /// `d` sites drawn uniformly on the unit square.
    pub fn random_unit_square<R: rand::Rng>(d: usize, rng: &mut R) -> Result<SiteSet> {
        let coords = (0..d).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        SiteSet::new(coords)
    }

    /// Regular nx×ny grid over [0,1]².
    pub fn unit_grid(nx: usize, ny: usize) -> Result<SiteSet> {
        if nx == 0 || ny == 0 {
            return Err(SpexError::Data("grid dimensions must be positive".into()));
        }
        let mut coords = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let x = if nx == 1 { 0.5 } else { ix as f64 / (nx - 1) as f64 };
                let y = if ny == 1 { 0.5 } else { iy as f64 / (ny - 1) as f64 };
                coords.push(vec![x, y]);
            }
        }
        SiteSet::new(coords)
    }

    /// Two sites exactly `h` apart (used by the model-based χ estimators).
    pub fn pair_at_distance(h: f64) -> Result<SiteSet> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(SpexError::Data(format!("pair distance h={h} must be nonnegative")));
        }
        SiteSet::new(vec![vec![0.0, 0.0], vec![h, 0.0]])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn distance(&self, j1: usize, j2: usize) -> f64 {
        self.distances[(j1, j2)]
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }
}

/// Convert lon/lat coordinates (degrees) to kilometers via a local
/// equirectangular projection about the domain centroid.
pub fn project_local_km(lonlat: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    const EARTH_RADIUS_KM: f64 = 6371.0;
    if lonlat.is_empty() {
        return Err(SpexError::Data("no coordinates to project".into()));
    }
    for (j, c) in lonlat.iter().enumerate() {
        if c.len() != 2 {
            return Err(SpexError::Data(format!("site {j}: lon/lat needs exactly 2 coordinates")));
        }
    }
    let n = lonlat.len() as f64;
    let lon0 = lonlat.iter().map(|c| c[0]).sum::<f64>() / n;
    let lat0 = lonlat.iter().map(|c| c[1]).sum::<f64>() / n;
    let cos_lat0 = lat0.to_radians().cos();
    Ok(lonlat
        .iter()
        .map(|c| {
            vec![
                EARTH_RADIUS_KM * (c[0] - lon0).to_radians() * cos_lat0,
                EARTH_RADIUS_KM * (c[1] - lat0).to_radians(),
            ]
        })
        .collect())
}

/// Isotropic exponential correlation: entries exp(−h/λ).
pub fn exp_correlation(distances: &DMatrix<f64>, range: f64) -> Result<DMatrix<f64>> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(SpexError::Domain(format!("correlation range λ={range} must be positive")));
    }
    Ok(distances.map(|h| (-h / range).exp()))
}

/// Assembled pd×pd latent Gaussian correlation structure and its Cholesky
/// factor. Immutable after assembly.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub ranges: Vec<f64>,
    pub coreg: DMatrix<f64>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl CovarianceModel {
    /// Σ with block (i1,i2) = Σ_f L[i1,f]·L[i2,f]·c_f(H), Cholesky-factorized.
    ///
    /// Rows of `coreg` must have unit Euclidean norm so the diagonal of Σ is
    /// exactly one.
    pub fn assemble_lmc(sites: &SiteSet, ranges: &[f64], coreg: &DMatrix<f64>) -> Result<Self> {
        let p = ranges.len();
        let d = sites.len();
        if p == 0 {
            return Err(SpexError::Domain("need at least one field".into()));
        }
        if coreg.nrows() != p || coreg.ncols() != p {
            return Err(SpexError::Domain(format!(
                "coregionalization matrix is {}x{}, expected {p}x{p}",
                coreg.nrows(),
                coreg.ncols()
            )));
        }
        for i in 0..p {
            for f in (i + 1)..p {
                if coreg[(i, f)] != 0.0 {
                    return Err(SpexError::Domain(
                        "coregionalization matrix must be lower triangular".into(),
                    ));
                }
            }
            let norm: f64 = (0..p).map(|f| coreg[(i, f)] * coreg[(i, f)]).sum();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(SpexError::Domain(format!(
                    "row {i} of the coregionalization matrix has squared norm {norm}, expected 1"
                )));
            }
        }

        let fields: Vec<DMatrix<f64>> =
            ranges.iter().map(|&l| exp_correlation(sites.distances(), l)).collect::<Result<_>>()?;

        let m = p * d;
        let mut sigma = DMatrix::zeros(m, m);
        for i1 in 0..p {
            for i2 in 0..=i1 {
                // accumulate Σ_f L[i1,f] L[i2,f] c_f over shared factors
                let mut block = DMatrix::zeros(d, d);
                for f in 0..=i2.min(i1) {
                    let w = coreg[(i1, f)] * coreg[(i2, f)];
                    if w != 0.0 {
                        block += &fields[f] * w;
                    }
                }
                for j1 in 0..d {
                    for j2 in 0..d {
                        sigma[(i1 * d + j1, i2 * d + j2)] = block[(j1, j2)];
                        sigma[(i2 * d + j2, i1 * d + j1)] = block[(j1, j2)];
                    }
                }
            }
        }
        for j in 0..m {
            sigma[(j, j)] = 1.0;
        }

        let (chol, jitter) = factorize_with_jitter(&sigma)?;
        let log_det = 2.0 * (0..m).map(|j| chol[(j, j)].ln()).sum::<f64>();
        Ok(CovarianceModel { ranges: ranges.to_vec(), coreg: coreg.clone(), sigma, chol, log_det, jitter })
    }

    /// p = 2 convenience constructor: L = [[1, 0], [ρ, √(1−ρ²)]].
    pub fn assemble_bivariate(
        sites: &SiteSet,
        range1: f64,
        range2: f64,
        rho12: f64,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho12) {
            return Err(SpexError::Domain(format!("rho12={rho12} outside [-1,1]")));
        }
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, rho12, (1.0 - rho12 * rho12).sqrt()]);
        Self::assemble_lmc(sites, &[range1, range2], &l)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower-triangular Cholesky factor G with GGᵀ = Σ (+ jitter·I if needed).
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Jitter added to the diagonal before factorization succeeded (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solve G y = z in place (forward substitution with the Cholesky factor).
    pub fn forward_solve(&self, z: &mut DVector<f64>) {
        let g = &self.chol;
        let m = g.nrows();
        for r in 0..m {
            let mut acc = z[r];
            for c in 0..r {
                acc -= g[(r, c)] * z[c];
            }
            z[r] = acc / g[(r, r)];
        }
    }

    /// Solve Gᵀ x = y in place (back substitution), so that the composition
    /// with [`forward_solve`] applies Σ⁻¹.
    pub fn backward_solve(&self, y: &mut DVector<f64>) {
        let g = &self.chol;
        let m = g.nrows();
        for r in (0..m).rev() {
            let mut acc = y[r];
            for c in (r + 1)..m {
                acc -= g[(c, r)] * y[c];
            }
            y[r] = acc / g[(r, r)];
        }
    }
}

fn factorize_with_jitter(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(chol) = nalgebra::Cholesky::new(sigma.clone()) {
        return Ok((chol.unpack(), 0.0));
    }
    let m = sigma.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut jittered = sigma.clone();
        for j in 0..m {
            jittered[(j, j)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(jittered) {
            return Ok((chol.unpack(), jitter));
        }
        jitter *= 2.0;
    }
    let min_eig = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Err(SpexError::Assembly(format!(
        "matrix not positive definite after jitter up to {JITTER_MAX:e}; smallest eigenvalue {min_eig:e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_sites(d: usize, seed: u64) -> SiteSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        SiteSet::random_unit_square(d, &mut rng).unwrap()
    }

    #[test]
    fn distance_matrix_properties() {
        let s = random_sites(6, 1);
        let h = s.distances();
        for j in 0..6 {
            assert_eq!(h[(j, j)], 0.0);
            for k in 0..6 {
                assert_eq!(h[(j, k)], h[(k, j)]);
                assert!(h[(j, k)] >= 0.0);
                for l in 0..6 {
                    assert!(h[(j, k)] <= h[(j, l)] + h[(l, k)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn exp_correlation_examples() {
        let s = random_sites(4, 2);
        let c = exp_correlation(s.distances(), 0.5).unwrap();
        for j in 0..4 {
            assert_eq!(c[(j, j)], 1.0);
            for k in 0..4 {
                assert!(c[(j, k)] > 0.0 && c[(j, k)] <= 1.0);
            }
        }
        // h = λ gives e^{-1}
        let two = SiteSet::new(vec![vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let c = exp_correlation(two.distances(), 0.5).unwrap();
        assert!((c[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        // λ → ∞ gives 1
        let c = exp_correlation(two.distances(), 1e12).unwrap();
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
        assert!(exp_correlation(two.distances(), 0.0).is_err());
        assert!(exp_correlation(two.distances(), -1.0).is_err());
    }

    /// Entrywise check against the bivariate block formulas:
    /// Σ'₁ = c₁(H), Σ'₂ = ρ²c₁(H) + (1−ρ²)c₂(H), Σ'₁₂ = ρ·c₁(H).
    fn check_bivariate_blocks(sites: &SiteSet, l1: f64, l2: f64, rho: f64, tol: f64) {
        let d = sites.len();
        let cov = CovarianceModel::assemble_bivariate(sites, l1, l2, rho).unwrap();
        let c1 = exp_correlation(sites.distances(), l1).unwrap();
        let c2 = exp_correlation(sites.distances(), l2).unwrap();
        let s = cov.sigma();
        for j in 0..d {
            for k in 0..d {
                let e11 = c1[(j, k)];
                let e22 = rho * rho * c1[(j, k)] + (1.0 - rho * rho) * c2[(j, k)];
                let e12 = rho * c1[(j, k)];
                assert!((s[(j, k)] - e11).abs() < tol, "Σ'_1[{j},{k}]");
                assert!((s[(d + j, d + k)] - e22).abs() < tol, "Σ'_2[{j},{k}]");
                assert!((s[(j, d + k)] - e12).abs() < tol, "Σ'_12[{j},{k}]");
                assert!((s[(d + j, k)] - rho * c1[(k, j)]).abs() < tol, "Σ'_21[{j},{k}]");
            }
        }
    }

    #[test]
    fn bivariate_blocks_match_formulas() {
        let sites = random_sites(5, 3);
        check_bivariate_blocks(&sites, 0.7, 0.3, 0.7, 1e-12);
        check_bivariate_blocks(&sites, 0.6, 0.3, -0.7, 1e-12);
    }

    #[test]
    fn bivariate_rho_zero_is_block_diagonal() {
        let sites = random_sites(4, 4);
        let cov = CovarianceModel::assemble_bivariate(&sites, 0.5, 0.9, 0.0).unwrap();
        let d = sites.len();
        let s = cov.sigma();
        for j in 0..d {
            for k in 0..d {
                assert_eq!(s[(j, d + k)], 0.0);
            }
        }
    }

    #[test]
    fn bivariate_cross_block_diagonal_is_rho() {
        let sites = random_sites(2, 5);
        let cov = CovarianceModel::assemble_bivariate(&sites, 0.7, 0.3, 0.7).unwrap();
        let d = 2;
        let s = cov.sigma();
        let c1 = exp_correlation(sites.distances(), 0.7).unwrap();
        for j in 0..d {
            assert!((s[(j, d + j)] - 0.7).abs() < 1e-15);
        }
        assert!((s[(0, d + 1)] - 0.7 * c1[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn bivariate_perfect_negative_coregionalization() {
        // ρ = −1: field 2 is the negated field 1
        let sites = random_sites(3, 6);
        check_bivariate_blocks(&sites, 0.4, 0.8, -1.0, 1e-12);
        let cov = CovarianceModel::assemble_bivariate(&sites, 0.4, 0.8, -1.0).unwrap();
        assert!(cov.jitter() > 0.0); // singular Σ requires repair
    }

    #[test]
    fn cholesky_reconstructs_sigma() {
        let sites = random_sites(6, 7);
        let cov = CovarianceModel::assemble_bivariate(&sites, 0.6, 0.3, -0.7).unwrap();
        let g = cov.cholesky();
        let recon = g * g.transpose();
        let mut max_err: f64 = 0.0;
        for j in 0..cov.dim() {
            for k in 0..cov.dim() {
                max_err = max_err.max((recon[(j, k)] - cov.sigma()[(j, k)]).abs());
            }
        }
        assert!(max_err < 1e-10, "‖GGᵀ − Σ‖_max = {max_err}");
    }

    #[test]
    fn solves_invert_sigma() {
        let sites = random_sites(5, 8);
        let cov = CovarianceModel::assemble_bivariate(&sites, 0.5, 0.25, 0.4).unwrap();
        let m = cov.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let z = DVector::from_fn(m, |_, _| rng.gen::<f64>() - 0.5);
        let mut y = z.clone();
        cov.forward_solve(&mut y);
        cov.backward_solve(&mut y);
        let back = cov.sigma() * &y;
        for j in 0..m {
            assert!((back[j] - z[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn general_p_three_fields() {
        let sites = random_sites(3, 10);
        // unit-row-norm lower-triangular 3x3
        let mut l = DMatrix::zeros(3, 3);
        l[(0, 0)] = 1.0;
        l[(1, 0)] = 0.6;
        l[(1, 1)] = 0.8;
        l[(2, 0)] = 0.3;
        l[(2, 1)] = 0.4;
        l[(2, 2)] = (1.0f64 - 0.09 - 0.16).sqrt();
        let cov = CovarianceModel::assemble_lmc(&sites, &[0.5, 0.7, 0.2], &l).unwrap();
        assert_eq!(cov.dim(), 9);
        for j in 0..9 {
            assert_eq!(cov.sigma()[(j, j)], 1.0);
        }
        // eigenvalues of the pre-jitter matrix must be ≥ −1e−10
        let eigs = cov.sigma().clone().symmetric_eigen().eigenvalues;
        assert!(eigs.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn rejects_bad_coregionalization() {
        let sites = random_sites(2, 11);
        let bad_norm = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!(CovarianceModel::assemble_lmc(&sites, &[0.5, 0.5], &bad_norm).is_err());
        let not_lower = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.0, 1.0]);
        assert!(CovarianceModel::assemble_lmc(&sites, &[0.5, 0.5], &not_lower).is_err());
    }

    #[test]
    fn local_km_projection() {
        // 1 degree of latitude ≈ 111.2 km
        let pts = vec![vec![-87.0, 32.0], vec![-87.0, 33.0]];
        let proj = project_local_km(&pts).unwrap();
        let dy = (proj[1][1] - proj[0][1]).abs();
        assert!((dy - 111.19).abs() < 0.5, "dy={dy}");
        assert_eq!(proj[0][0], proj[1][0]);
    }
}
