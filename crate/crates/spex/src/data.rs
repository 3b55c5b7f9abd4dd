//! Data ingestion, rank-based marginal standardization, optional harmonic
//! detrending, artifact serialization, and run configuration.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpexError};
use crate::model::{CoregSpec, ParameterVector};
use crate::spatial::{project_local_km, SiteSet};

/// Dense p×d×n value store, replicate index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n_fields: usize,
    n_sites: usize,
    n_reps: usize,
    values: Vec<f64>,
}

impl Panel {
    pub fn zeros(n_fields: usize, n_sites: usize, n_reps: usize) -> Panel {
        Panel { n_fields, n_sites, n_reps, values: vec![0.0; n_fields * n_sites * n_reps] }
    }

    #[inline]
    fn idx(&self, field: usize, site: usize, rep: usize) -> usize {
        (field * self.n_sites + site) * self.n_reps + rep
    }

    #[inline]
    pub fn get(&self, field: usize, site: usize, rep: usize) -> f64 {
        self.values[self.idx(field, site, rep)]
    }

    #[inline]
    pub fn set(&mut self, field: usize, site: usize, rep: usize, v: f64) {
        let i = self.idx(field, site, rep);
        self.values[i] = v;
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    /// All d·n values of one field, site-major.
    pub fn field_values(&self, field: usize) -> &[f64] {
        let start = field * self.n_sites * self.n_reps;
        &self.values[start..start + self.n_sites * self.n_reps]
    }

    /// The n values of one (field, site) cell.
    pub fn series(&self, field: usize, site: usize) -> &[f64] {
        let start = self.idx(field, site, 0);
        &self.values[start..start + self.n_reps]
    }
}

/// How the pseudo-uniform scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Raw,
    RankTransformed,
    ExternallyStandardized,
}

/// p fields × d sites × n replicates of pseudo-uniform scores with site
/// coordinates and labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub field_names: Vec<String>,
    pub site_names: Vec<String>,
    pub sites: SiteSet,
    pub replicate_labels: Vec<String>,
    pub u: Panel,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        field_names: Vec<String>,
        site_names: Vec<String>,
        sites: SiteSet,
        replicate_labels: Vec<String>,
        u: Panel,
        provenance: Provenance,
    ) -> Result<Dataset> {
        if field_names.len() != u.n_fields()
            || site_names.len() != u.n_sites()
            || replicate_labels.len() != u.n_reps()
            || sites.len() != u.n_sites()
        {
            return Err(SpexError::Data("dataset dimension mismatch".into()));
        }
        for i in 0..u.n_fields() {
            for &v in u.field_values(i) {
                if !(v > 0.0 && v < 1.0) {
                    return Err(SpexError::Data(format!(
                        "score {v} in field {} outside the open interval (0,1)",
                        field_names[i]
                    )));
                }
            }
        }
        Ok(Dataset { field_names, site_names, sites, replicate_labels, u, provenance })
    }

    pub fn n_fields(&self) -> usize {
        self.u.n_fields()
    }

    pub fn n_sites(&self) -> usize {
        self.u.n_sites()
    }

    pub fn n_reps(&self) -> usize {
        self.u.n_reps()
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Raw observation panel straight from CSV, before any transform.
#[derive(Debug, Clone)]
pub struct RawPanel {
    pub field_names: Vec<String>,
    pub site_names: Vec<String>,
    pub sites: SiteSet,
    pub replicate_labels: Vec<String>,
    pub values: Panel,
    /// Replicates dropped because of missing cells.
    pub dropped_replicates: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Reject inputs with any missing (field, site, replicate) cell instead
    /// of dropping incomplete replicates.
    pub require_complete: bool,
    /// Interpret site coordinates as lon/lat degrees and project to km.
    pub project_local_km: bool,
}

/// Read `field,site,replicate,value` observations and a `site,x,y` (or
/// `site,lon,lat`) coordinate table into a dense panel.
pub fn ingest_csv(
    observations: &Path,
    sites_path: &Path,
    options: IngestOptions,
) -> Result<RawPanel> {
    let (site_names, coords) = read_sites_csv(sites_path, options.project_local_km)?;
    let site_index: HashMap<&str, usize> =
        site_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(observations)?;
    {
        let headers = rdr.headers()?;
        let expect = ["field", "site", "replicate", "value"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(SpexError::Ingest(format!(
                "{}: header {:?}, expected {:?}",
                observations.display(),
                got,
                expect
            )));
        }
    }

    let mut field_names: Vec<String> = Vec::new();
    let mut field_index: HashMap<String, usize> = HashMap::new();
    let mut rep_labels: Vec<String> = Vec::new();
    let mut rep_index: HashMap<String, usize> = HashMap::new();
    // cell -> (value, 1-based data row where it first appeared)
    let mut cells: HashMap<(usize, usize, usize), (f64, usize)> = HashMap::new();

    for (row_0, record) in rdr.records().enumerate() {
        let row = row_0 + 2; // header is line 1
        let record = record?;
        if record.len() != 4 {
            return Err(SpexError::Ingest(format!(
                "{}:{row}: expected 4 columns, got {}",
                observations.display(),
                record.len()
            )));
        }
        let field = record[0].to_string();
        let site = record[1].to_string();
        let rep = record[2].to_string();
        let value: f64 = record[3].trim().parse().map_err(|_| {
            SpexError::Ingest(format!(
                "{}:{row}: non-numeric value {:?}",
                observations.display(),
                &record[3]
            ))
        })?;
        let fi = *field_index.entry(field.clone()).or_insert_with(|| {
            field_names.push(field);
            field_names.len() - 1
        });
        let si = *site_index.get(site.as_str()).ok_or_else(|| {
            SpexError::Ingest(format!(
                "{}:{row}: unknown site {site:?} (not in the sites file)",
                observations.display()
            ))
        })?;
        let ri = *rep_index.entry(rep.clone()).or_insert_with(|| {
            rep_labels.push(rep);
            rep_labels.len() - 1
        });
        if let Some((_, first_row)) = cells.get(&(fi, si, ri)) {
            return Err(SpexError::Ingest(format!(
                "{}:{row}: duplicate cell (field, site, replicate) already seen at row {first_row}",
                observations.display()
            )));
        }
        cells.insert((fi, si, ri), (value, row));
    }

    let p = field_names.len();
    let d = site_names.len();
    if p == 0 || rep_labels.is_empty() {
        return Err(SpexError::Ingest(format!("{}: no data rows", observations.display())));
    }

    // find replicates with complete p×d coverage
    let mut complete = Vec::new();
    let mut incomplete = Vec::new();
    for (ri, label) in rep_labels.iter().enumerate() {
        let full = (0..p).all(|fi| (0..d).all(|si| cells.contains_key(&(fi, si, ri))));
        if full {
            complete.push(ri);
        } else {
            incomplete.push(label.clone());
        }
    }
    if options.require_complete && !incomplete.is_empty() {
        return Err(SpexError::Ingest(format!(
            "{}: {} replicate(s) with missing cells under --require-complete (first: {:?})",
            observations.display(),
            incomplete.len(),
            incomplete[0]
        )));
    }
    if complete.is_empty() {
        return Err(SpexError::Ingest(format!(
            "{}: no complete replicates remain",
            observations.display()
        )));
    }
    if !incomplete.is_empty() {
        log::info!(
            "dropped {} incomplete replicate(s) of {}",
            incomplete.len(),
            rep_labels.len()
        );
    }

    let n = complete.len();
    let mut values = Panel::zeros(p, d, n);
    let mut labels = Vec::with_capacity(n);
    for (k, &ri) in complete.iter().enumerate() {
        labels.push(rep_labels[ri].clone());
        for fi in 0..p {
            for si in 0..d {
                values.set(fi, si, k, cells[&(fi, si, ri)].0);
            }
        }
    }
    Ok(RawPanel {
        field_names,
        site_names,
        sites: SiteSet::new(coords)?,
        replicate_labels: labels,
        values,
        dropped_replicates: incomplete.len(),
    })
}

fn read_sites_csv(path: &Path, project: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = rdr.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        let cartesian = got == ["site", "x", "y"];
        let geographic = got == ["site", "lon", "lat"];
        if !cartesian && !geographic {
            return Err(SpexError::Ingest(format!(
                "{}: header {:?}, expected [site,x,y] or [site,lon,lat]",
                path.display(),
                got
            )));
        }
        if geographic && !project {
            log::warn!("{}: lon/lat sites used without --project local-km", path.display());
        }
    }
    let mut names = Vec::new();
    let mut coords = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (row_0, record) in rdr.records().enumerate() {
        let row = row_0 + 2;
        let record = record?;
        let name = record[0].to_string();
        if let Some(first) = seen.get(&name) {
            return Err(SpexError::Ingest(format!(
                "{}:{row}: duplicate site {name:?} already seen at row {first}",
                path.display()
            )));
        }
        seen.insert(name.clone(), row);
        let x: f64 = record[1].trim().parse().map_err(|_| {
            SpexError::Ingest(format!("{}:{row}: non-numeric coordinate", path.display()))
        })?;
        let y: f64 = record[2].trim().parse().map_err(|_| {
            SpexError::Ingest(format!("{}:{row}: non-numeric coordinate", path.display()))
        })?;
        names.push(name);
        coords.push(vec![x, y]);
    }
    if names.is_empty() {
        return Err(SpexError::Ingest(format!("{}: no sites", path.display())));
    }
    let coords = if project { project_local_km(&coords)? } else { coords };
    Ok((names, coords))
}

// ---------------------------------------------------------------------------
// Rank transform
// ---------------------------------------------------------------------------

/// Pooled rank scores u = rank/(nd+1) per field, ranks computed jointly over
/// all sites and replicates; ties receive average ranks.
pub fn rank_transform(raw: &RawPanel) -> Result<Dataset> {
    rank_transform_impl(raw, false)
}

/// Site-wise rank scores u = rank/(n+1), for data whose margins differ by
/// site.
pub fn rank_transform_per_site(raw: &RawPanel) -> Result<Dataset> {
    rank_transform_impl(raw, true)
}

fn rank_transform_impl(raw: &RawPanel, per_site: bool) -> Result<Dataset> {
    let (p, d, n) = (raw.values.n_fields(), raw.values.n_sites(), raw.values.n_reps());
    let mut u = Panel::zeros(p, d, n);
    for fi in 0..p {
        if per_site {
            for si in 0..d {
                let ranks = average_ranks(raw.values.series(fi, si));
                for (k, r) in ranks.iter().enumerate() {
                    u.set(fi, si, k, r / (n as f64 + 1.0));
                }
            }
        } else {
            let ranks = average_ranks(raw.values.field_values(fi));
            let denom = (n * d) as f64 + 1.0;
            for si in 0..d {
                for k in 0..n {
                    u.set(fi, si, k, ranks[si * n + k] / denom);
                }
            }
        }
    }
    Dataset::new(
        raw.field_names.clone(),
        raw.site_names.clone(),
        raw.sites.clone(),
        raw.replicate_labels.clone(),
        u,
        Provenance::RankTransformed,
    )
}

/// 1-based ranks with average rank assigned to ties.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

// ---------------------------------------------------------------------------
// Harmonic detrend
// ---------------------------------------------------------------------------

/// Remove an annual harmonic signal per (field, site) by OLS on intercept +
/// Σ_{m=1..K} {sin, cos}(2πm·dayofyear/365.25). Replicate labels must parse
/// as ISO dates.
pub fn harmonic_detrend(raw: &RawPanel, n_harmonics: usize) -> Result<RawPanel> {
    if n_harmonics == 0 {
        return Err(SpexError::Config("number of harmonics K must be at least 1".into()));
    }
    let n = raw.values.n_reps();
    let n_coef = 2 * n_harmonics + 1;
    if n < n_coef {
        return Err(SpexError::Config(format!(
            "harmonic detrend needs at least {n_coef} replicates, have {n}"
        )));
    }
    let days: Vec<f64> = raw
        .replicate_labels
        .iter()
        .map(|label| {
            chrono::NaiveDate::parse_from_str(label, "%Y-%m-%d")
                .map(|date| chrono::Datelike::ordinal(&date) as f64)
                .map_err(|_| {
                    SpexError::Config(format!(
                        "replicate label {label:?} is not an ISO date (YYYY-MM-DD)"
                    ))
                })
        })
        .collect::<Result<_>>()?;

    let mut design = nalgebra::DMatrix::zeros(n, n_coef);
    for (k, &doy) in days.iter().enumerate() {
        design[(k, 0)] = 1.0;
        for m in 1..=n_harmonics {
            let ang = 2.0 * std::f64::consts::PI * m as f64 * doy / 365.25;
            design[(k, 2 * m - 1)] = ang.sin();
            design[(k, 2 * m)] = ang.cos();
        }
    }
    let svd = design.clone().svd(true, true);

    let mut out = raw.clone();
    for fi in 0..raw.values.n_fields() {
        for si in 0..raw.values.n_sites() {
            let y = nalgebra::DVector::from_column_slice(raw.values.series(fi, si));
            let coef = svd
                .solve(&y, 1e-12)
                .map_err(|e| SpexError::Config(format!("harmonic fit failed: {e}")))?;
            let fitted = &design * &coef;
            for k in 0..n {
                out.values.set(fi, si, k, y[k] - fitted[k]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Theta serialization and run configuration
// ---------------------------------------------------------------------------

/// Format version stamped on every JSON sidecar.
pub const SPEC_VERSION: &str = "1";

/// serde-friendly view of a [`ParameterVector`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaJson {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta_u: f64,
    pub delta_l: f64,
    pub lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho12: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coreg_rows: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub fixed: Vec<String>,
}

impl ThetaJson {
    pub fn from_theta(theta: &ParameterVector) -> ThetaJson {
        let names = theta.param_names();
        let fixed = theta
            .fixed_mask
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| names[i].clone())
            .collect();
        let (rho12, coreg_rows) = match &theta.coreg {
            CoregSpec::Rho12(r) => (Some(*r), None),
            CoregSpec::Fixed(l) => (
                None,
                Some((0..l.nrows()).map(|i| (0..l.ncols()).map(|j| l[(i, j)]).collect()).collect()),
            ),
        };
        ThetaJson {
            alpha: theta.alpha.clone(),
            gamma: theta.gamma.clone(),
            delta_u: theta.delta_upper,
            delta_l: theta.delta_lower,
            lambda: theta.lambda.clone(),
            rho12,
            coreg_rows,
            fixed,
        }
    }

    pub fn to_theta(&self) -> Result<ParameterVector> {
        let coreg = match (&self.rho12, &self.coreg_rows) {
            (Some(r), None) => CoregSpec::Rho12(*r),
            (None, Some(rows)) => {
                let p = rows.len();
                let mut l = nalgebra::DMatrix::zeros(p, p);
                for (i, row) in rows.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        l[(i, j)] = v;
                    }
                }
                CoregSpec::Fixed(l)
            }
            (None, None) if self.alpha.len() == 1 => {
                CoregSpec::Fixed(nalgebra::DMatrix::identity(1, 1))
            }
            _ => {
                return Err(SpexError::Config(
                    "theta must carry exactly one of rho12 / coreg_rows (p=1 may omit both)".into(),
                ))
            }
        };
        let mut theta = ParameterVector::new(
            self.alpha.clone(),
            self.gamma.clone(),
            self.delta_u,
            self.delta_l,
            self.lambda.clone(),
            coreg,
        )?;
        let fixed: Vec<&str> = self.fixed.iter().map(|s| s.as_str()).collect();
        theta.fix(&fixed)?;
        Ok(theta)
    }
}

/// Diagnostic design: distance bins and threshold levels for χ curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiDesign {
    #[serde(default = "default_h_bins")]
    pub h_bins: usize,
    #[serde(default = "default_u_lower")]
    pub u_lower: Vec<f64>,
    #[serde(default = "default_u_upper")]
    pub u_upper: Vec<f64>,
    /// Monte Carlo replicates per posterior sample in model-based χ.
    #[serde(default = "default_model_mc")]
    pub model_mc: usize,
    /// Number of posterior subsamples used for model-based χ.
    #[serde(default = "default_model_subsamples")]
    pub model_subsamples: usize,
}

fn default_h_bins() -> usize {
    12
}
fn default_u_lower() -> Vec<f64> {
    vec![0.05, 0.1]
}
fn default_u_upper() -> Vec<f64> {
    vec![0.9, 0.95]
}
fn default_model_mc() -> usize {
    10_000
}
fn default_model_subsamples() -> usize {
    50
}

impl Default for ChiDesign {
    fn default() -> Self {
        ChiDesign {
            h_bins: default_h_bins(),
            u_lower: default_u_lower(),
            u_upper: default_u_upper(),
            model_mc: default_model_mc(),
            model_subsamples: default_model_subsamples(),
        }
    }
}

/// Fixed-parameter grid for the two-step `select` protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub alpha: Vec<Vec<f64>>,
    pub delta_u: Vec<f64>,
    pub delta_l: Vec<f64>,
}

/// `select` run configuration, loadable from JSON with `ST_`-prefixed
/// environment overrides for scalar fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub design: ChiDesign,
    pub n_iter: usize,
    pub burnin: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    pub seed: u64,
    pub output_dir: String,
}

fn default_thinning() -> usize {
    10
}

impl RunConfig {
    /// Load from JSON, then apply `ST_SEED`, `ST_N_ITER`, `ST_BURNIN`,
    /// `ST_THINNING`, `ST_OUTPUT_DIR` environment overrides when present.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let Ok(v) = std::env::var("ST_SEED") {
            cfg.seed = v.parse().map_err(|_| SpexError::Config("ST_SEED not an integer".into()))?;
        }
        if let Ok(v) = std::env::var("ST_N_ITER") {
            cfg.n_iter =
                v.parse().map_err(|_| SpexError::Config("ST_N_ITER not an integer".into()))?;
        }
        if let Ok(v) = std::env::var("ST_BURNIN") {
            cfg.burnin =
                v.parse().map_err(|_| SpexError::Config("ST_BURNIN not an integer".into()))?;
        }
        if let Ok(v) = std::env::var("ST_THINNING") {
            cfg.thinning =
                v.parse().map_err(|_| SpexError::Config("ST_THINNING not an integer".into()))?;
        }
        if let Ok(v) = std::env::var("ST_OUTPUT_DIR") {
            cfg.output_dir = v;
        }
        if cfg.grid.alpha.is_empty() || cfg.grid.delta_u.is_empty() || cfg.grid.delta_l.is_empty()
        {
            return Err(SpexError::Config("select grid must be nonempty".into()));
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Artifact writers / readers
// ---------------------------------------------------------------------------

/// Write a value panel as `field,site,replicate,value` CSV.
pub fn write_panel_csv(
    path: &Path,
    panel: &Panel,
    field_names: &[String],
    site_names: &[String],
    replicate_labels: &[String],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "field,site,replicate,value")?;
    for fi in 0..panel.n_fields() {
        for si in 0..panel.n_sites() {
            for k in 0..panel.n_reps() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    field_names[fi],
                    site_names[si],
                    replicate_labels[k],
                    panel.get(fi, si, k)
                )?;
            }
        }
    }
    Ok(())
}

/// Write site coordinates as `site,x,y` CSV.
pub fn write_sites_csv(path: &Path, site_names: &[String], sites: &SiteSet) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "site,x,y")?;
    for (name, c) in site_names.iter().zip(sites.coords()) {
        writeln!(f, "{},{},{}", name, c[0], c[1])?;
    }
    Ok(())
}

/// Write any serializable sidecar as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Read a chain CSV (header of parameter names, one natural-scale sample per
/// row) back into names and rows.
pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (row_0, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(names.len());
        for v in record.iter() {
            row.push(v.trim().parse::<f64>().map_err(|_| {
                SpexError::Ingest(format!(
                    "{}:{}: non-numeric chain entry {v:?}",
                    path.display(),
                    row_0 + 2
                ))
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SpexError::Ingest(format!("{}: empty chain", path.display())));
    }
    Ok((names, rows))
}
