//! Empirical and model-based sub-asymptotic tail-dependence measures
//! χ(h, u) for within-field and cross-field pairs, with 95% envelopes, plus
//! model selection over a fixed-parameter grid.
//!
//! χᵁ(h, u) = Pr(U_{i₁}(s₁) > u | U_{i₂}(s₂) > u) at separation h; the lower
//! version conditions on being below u. Estimates pool both conditioning
//! directions of a pair.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ChiDesign, Dataset};
use crate::error::{Result, SpexError};
use crate::math::stats::{quantile, wilson_interval};
use crate::model::ParameterVector;
use crate::sampler::ChainOutput;
use crate::simulate::PairSimulator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

/// Field pair under study (1-based field numbers in display form).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Within(usize),
    Cross(usize, usize),
}

impl PairKind {
    pub fn label(&self) -> String {
        match *self {
            PairKind::Within(i) => format!("{}-{}", i + 1, i + 1),
            PairKind::Cross(i1, i2) => format!("{}-{}", i1 + 1, i2 + 1),
        }
    }

    fn fields(&self) -> (usize, usize) {
        match *self {
            PairKind::Within(i) => (i, i),
            PairKind::Cross(i1, i2) => (i1, i2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbscissaType {
    Distance,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Empirical,
    Model,
}

/// One point of a χ curve; `estimate` is None when the conditioning set was
/// empty (missing, not zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiPoint {
    pub abscissa: f64,
    pub estimate: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

/// A χ curve over distance (fixed threshold) or threshold (fixed distance).
#[derive(Debug, Clone, PartialEq)]
pub struct ChiCurve {
    pub tail: Tail,
    pub pair: PairKind,
    pub abscissa_type: AbscissaType,
    pub points: Vec<ChiPoint>,
    pub estimator: Estimator,
}

impl ChiCurve {
    /// Tidy CSV: `tail,pair,abscissa_type,abscissa,estimate,lo,hi,estimator`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W, with_header: bool) -> Result<()> {
        if with_header {
            writeln!(out, "tail,pair,abscissa_type,abscissa,estimate,lo,hi,estimator")?;
        }
        let tail = match self.tail {
            Tail::Upper => "upper",
            Tail::Lower => "lower",
        };
        let est = match self.estimator {
            Estimator::Empirical => "empirical",
            Estimator::Model => "model",
        };
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for pt in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                tail,
                self.pair.label(),
                match self.abscissa_type {
                    AbscissaType::Distance => "distance",
                    AbscissaType::Threshold => "threshold",
                },
                pt.abscissa,
                fmt(pt.estimate),
                fmt(pt.lo),
                fmt(pt.hi),
                est
            )?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f, true)
    }
}

// ---------------------------------------------------------------------------
// Empirical estimator
// ---------------------------------------------------------------------------

#[inline]
fn exceeds(v: f64, u: f64, tail: Tail) -> bool {
    match tail {
        Tail::Upper => v > u,
        Tail::Lower => v < u,
    }
}

struct PairCounts {
    joint2: u64,
    trials: u64,
}

fn count_pair(
    data: &Dataset,
    field_a: usize,
    site_a: usize,
    field_b: usize,
    site_b: usize,
    u: f64,
    tail: Tail,
    acc: &mut PairCounts,
) {
    for k in 0..data.n_reps() {
        let a = exceeds(data.u.get(field_a, site_a, k), u, tail);
        let b = exceeds(data.u.get(field_b, site_b, k), u, tail);
        if a && b {
            acc.joint2 += 2;
        }
        acc.trials += u64::from(a) + u64::from(b);
    }
}

/// Site-pair observations of one pair kind with their separation distances.
fn pair_observations(data: &Dataset, pair: PairKind) -> Result<Vec<(f64, usize, usize, usize, usize)>> {
    let d = data.n_sites();
    let (i1, i2) = pair.fields();
    if i1 >= data.n_fields() || i2 >= data.n_fields() {
        return Err(SpexError::Domain(format!(
            "pair {} outside the dataset's {} fields",
            pair.label(),
            data.n_fields()
        )));
    }
    let mut obs = Vec::new();
    match pair {
        PairKind::Within(i) => {
            for j1 in 0..d {
                for j2 in (j1 + 1)..d {
                    obs.push((data.sites.distance(j1, j2), i, j1, i, j2));
                }
            }
        }
        PairKind::Cross(a, b) => {
            for j1 in 0..d {
                for j2 in j1..d {
                    obs.push((data.sites.distance(j1, j2), a, j1, b, j2));
                    if j1 != j2 {
                        obs.push((data.sites.distance(j1, j2), a, j2, b, j1));
                    }
                }
            }
        }
    }
    if obs.is_empty() {
        return Err(SpexError::Data("no site pairs available for this pair kind".into()));
    }
    obs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Ok(obs)
}

/// Empirical χ(h, u) over equal-count distance bins, pooling all site pairs
/// in a bin, all replicates, and both conditioning directions; binomial
/// (Wilson) 95% envelope on the pooled counts.
pub fn empirical_chi(
    data: &Dataset,
    tail: Tail,
    pair: PairKind,
    u: f64,
    n_bins: usize,
) -> Result<ChiCurve> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SpexError::Domain(format!("threshold u={u} outside (0,1)")));
    }
    if n_bins == 0 {
        return Err(SpexError::Domain("need at least one distance bin".into()));
    }
    let obs = pair_observations(data, pair)?;
    // equal-count bins over distinct pair positions
    let n_bins = n_bins.min(obs.len());
    let mut points = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let lo = b * obs.len() / n_bins;
        let hi = (b + 1) * obs.len() / n_bins;
        let chunk = &obs[lo..hi];
        let mut acc = PairCounts { joint2: 0, trials: 0 };
        let mut dist_sum = 0.0;
        for &(h, fa, sa, fb, sb) in chunk {
            count_pair(data, fa, sa, fb, sb, u, tail, &mut acc);
            dist_sum += h;
        }
        let abscissa = dist_sum / chunk.len() as f64;
        if acc.trials == 0 {
            points.push(ChiPoint { abscissa, estimate: None, lo: None, hi: None });
        } else {
            let est = acc.joint2 as f64 / acc.trials as f64;
            let (lo, hi) = wilson_interval(acc.joint2, acc.trials, 1.96);
            points.push(ChiPoint {
                abscissa,
                estimate: Some(est),
                lo: Some(lo.min(est)),
                hi: Some(hi.max(est)),
            });
        }
    }
    Ok(ChiCurve {
        tail,
        pair,
        abscissa_type: AbscissaType::Distance,
        points,
        estimator: Estimator::Empirical,
    })
}

// ---------------------------------------------------------------------------
// Model-based estimators
// ---------------------------------------------------------------------------

/// χ of one pair kind at the given thresholds from `mc` simulated pair
/// replicates; returns per-threshold (estimate, trials).
fn simulate_chi<R: rand::Rng>(
    sim: &PairSimulator,
    pair: PairKind,
    tail: Tail,
    us: &[f64],
    mc: usize,
    rng: &mut R,
    p: usize,
) -> Vec<(Option<f64>, u64)> {
    let mut joint2 = vec![0u64; us.len()];
    let mut trials = vec![0u64; us.len()];
    let mut draw = vec![0.0; 2 * p];
    let (i1, i2) = pair.fields();
    for _ in 0..mc {
        sim.draw(rng, &mut draw);
        // the two site assignments of the pair (identical for within pairs
        // evaluated at the same sites, distinct for cross pairs)
        let assignments: &[(f64, f64)] = &match pair {
            PairKind::Within(i) => [(draw[i * 2], draw[i * 2 + 1]); 1].to_vec(),
            PairKind::Cross(_, _) => {
                vec![(draw[i1 * 2], draw[i2 * 2 + 1]), (draw[i1 * 2 + 1], draw[i2 * 2])]
            }
        };
        for &(a, b) in assignments {
            for (ui, &u) in us.iter().enumerate() {
                let ea = exceeds(a, u, tail);
                let eb = exceeds(b, u, tail);
                if ea && eb {
                    joint2[ui] += 2;
                }
                trials[ui] += u64::from(ea) + u64::from(eb);
            }
        }
    }
    us.iter()
        .enumerate()
        .map(|(ui, _)| {
            if trials[ui] == 0 {
                (None, 0)
            } else {
                (Some(joint2[ui] as f64 / trials[ui] as f64), trials[ui])
            }
        })
        .collect()
}

/// Model-based χ at distance `h` over a threshold grid: for each posterior
/// sample simulate `mc` pair replicates, then report the posterior median
/// with a 2.5%/97.5% envelope across samples.
pub fn model_chi(
    theta_samples: &[ParameterVector],
    tail: Tail,
    pair: PairKind,
    h: f64,
    us: &[f64],
    mc: usize,
    seed: u64,
) -> Result<ChiCurve> {
    if theta_samples.is_empty() {
        return Err(SpexError::Domain("need at least one posterior sample".into()));
    }
    if mc < 10_000 {
        return Err(SpexError::Domain("model_chi requires mc >= 10000".into()));
    }
    let p = theta_samples[0].n_fields();
    let mut per_sample: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(theta_samples.len()); us.len()];
    for (s, theta) in theta_samples.iter().enumerate() {
        let sim = PairSimulator::new(theta, h)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        let ests = simulate_chi(&sim, pair, tail, us, mc, &mut rng, p);
        for (ui, (est, _)) in ests.into_iter().enumerate() {
            per_sample[ui].push(est);
        }
    }
    let points = us
        .iter()
        .zip(per_sample)
        .map(|(&u, ests)| {
            let vals: Vec<f64> = ests.into_iter().flatten().collect();
            if vals.is_empty() {
                ChiPoint { abscissa: u, estimate: None, lo: None, hi: None }
            } else {
                ChiPoint {
                    abscissa: u,
                    estimate: Some(quantile(&vals, 0.5)),
                    lo: Some(quantile(&vals, 0.025)),
                    hi: Some(quantile(&vals, 0.975)),
                }
            }
        })
        .collect();
    Ok(ChiCurve {
        tail,
        pair,
        abscissa_type: AbscissaType::Threshold,
        points,
        estimator: Estimator::Model,
    })
}

/// Single-θ Monte Carlo χ(h, u) with its binomial standard error.
pub fn true_chi(
    theta: &ParameterVector,
    tail: Tail,
    pair: PairKind,
    h: f64,
    u: f64,
    mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if mc < 100_000 {
        return Err(SpexError::Domain("true_chi requires mc >= 100000".into()));
    }
    let sim = PairSimulator::new(theta, h)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let ests = simulate_chi(&sim, pair, tail, &[u], mc, &mut rng, theta.n_fields());
    match ests[0] {
        (Some(est), trials) => {
            let se = (est * (1.0 - est) / trials as f64).sqrt();
            Ok((est, se))
        }
        _ => Err(SpexError::Domain("empty conditioning set in true_chi".into())),
    }
}

// ---------------------------------------------------------------------------
// Grid model selection
// ---------------------------------------------------------------------------

/// One fitted grid cell: its fixed parameters and the MCMC output.
#[derive(Debug, Clone)]
pub struct GridFit {
    pub label: String,
    pub chain: ChainOutput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub label: String,
    pub discrepancy: f64,
    pub cells_used: usize,
    pub cells_missing: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRanking {
    pub spec_version: String,
    pub entries: Vec<SelectionEntry>,
}

/// Rebuild a parameter vector from one chain row.
pub fn theta_from_chain_row(names: &[String], row: &[f64]) -> Result<ParameterVector> {
    let get = |name: &str| -> Result<f64> {
        names
            .iter()
            .position(|n| n == name)
            .map(|i| row[i])
            .ok_or_else(|| SpexError::Data(format!("chain is missing column {name}")))
    };
    let p = names.iter().filter(|n| n.starts_with("alpha")).count();
    if p == 0 {
        return Err(SpexError::Data("chain has no alpha columns".into()));
    }
    let alpha: Vec<f64> = (1..=p).map(|i| get(&format!("alpha{i}"))).collect::<Result<_>>()?;
    let gamma: Vec<f64> = (1..=p).map(|i| get(&format!("gamma{i}"))).collect::<Result<_>>()?;
    let lambda: Vec<f64> = (1..=p).map(|i| get(&format!("lambda{i}"))).collect::<Result<_>>()?;
    let coreg = if p == 2 {
        crate::model::CoregSpec::Rho12(get("rho12")?)
    } else if p == 1 {
        crate::model::CoregSpec::Fixed(nalgebra::DMatrix::identity(1, 1))
    } else {
        return Err(SpexError::Data(
            "chains with p > 2 need an external coregionalization matrix".into(),
        ));
    };
    ParameterVector::new(alpha, gamma, get("delta_u")?, get("delta_l")?, lambda, coreg)
}

/// Evenly spaced posterior subsample of a chain.
pub fn subsample_thetas(chain: &ChainOutput, count: usize) -> Result<Vec<ParameterVector>> {
    if chain.samples.is_empty() {
        return Err(SpexError::Data("chain has no stored samples".into()));
    }
    let count = count.max(1).min(chain.samples.len());
    (0..count)
        .map(|i| {
            let idx = i * chain.samples.len() / count;
            theta_from_chain_row(&chain.param_names, &chain.samples[idx])
        })
        .collect()
}

/// Aggregate discrepancy between model and empirical χ over a fixed design:
/// both tails × all pair kinds × 3 equal-count distance bins × the design's
/// threshold levels, equally weighted mean squared difference. Fits are
/// returned sorted ascending (ties keep input order).
pub fn grid_model_selection(
    fits: &[GridFit],
    data: &Dataset,
    design: &ChiDesign,
    seed: u64,
) -> Result<SelectionRanking> {
    if fits.is_empty() {
        return Err(SpexError::Domain("need at least one fit to rank".into()));
    }
    const SELECTION_H_BINS: usize = 3;
    let p = data.n_fields();
    let mut pairs = Vec::new();
    for i in 0..p {
        pairs.push(PairKind::Within(i));
    }
    for i1 in 0..p {
        for i2 in (i1 + 1)..p {
            pairs.push(PairKind::Cross(i1, i2));
        }
    }

    // empirical cells, shared by all fits
    struct Cell {
        tail: Tail,
        pair: PairKind,
        h: f64,
        u: f64,
        empirical: Option<f64>,
    }
    let mut cells = Vec::new();
    for &tail in &[Tail::Upper, Tail::Lower] {
        let us = match tail {
            Tail::Upper => &design.u_upper,
            Tail::Lower => &design.u_lower,
        };
        for &pair in &pairs {
            for &u in us {
                let curve = empirical_chi(data, tail, pair, u, SELECTION_H_BINS)?;
                for pt in curve.points {
                    cells.push(Cell { tail, pair, h: pt.abscissa, u, empirical: pt.estimate });
                }
            }
        }
    }

    let mut entries = Vec::with_capacity(fits.len());
    for (fit_idx, fit) in fits.iter().enumerate() {
        let thetas = subsample_thetas(&fit.chain, design.model_subsamples)?;
        let mut sum_sq = 0.0;
        let mut used = 0usize;
        let mut missing = 0usize;
        for cell in &cells {
            let Some(emp) = cell.empirical else {
                missing += 1;
                continue;
            };
            let curve = model_chi(
                &thetas,
                cell.tail,
                cell.pair,
                cell.h,
                &[cell.u],
                design.model_mc,
                seed ^ (fit_idx as u64) << 32,
            )?;
            match curve.points[0].estimate {
                Some(model) => {
                    sum_sq += (model - emp) * (model - emp);
                    used += 1;
                }
                None => missing += 1,
            }
        }
        if used == 0 {
            return Err(SpexError::Data("no usable cells for model selection".into()));
        }
        entries.push(SelectionEntry {
            label: fit.label.clone(),
            discrepancy: sum_sq / used as f64,
            cells_used: used,
            cells_missing: missing,
        });
    }
    // stable sort keeps input order on ties
    entries.sort_by(|a, b| a.discrepancy.partial_cmp(&b.discrepancy).unwrap());
    Ok(SelectionRanking { spec_version: crate::data::SPEC_VERSION.to_string(), entries })
}
