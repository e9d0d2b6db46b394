//! Batch experiment runner: seeded multi-run benchmarks of the tensor
//! solvers against ordinary kriging, hyperparameter grid searches,
//! search-ellipsoid tuning, and CSV/image report rendering.
//!
//! Every run is a pure function of the configuration. Wells for run
//! `k` are drawn with seed `base_seed + k`, shared across methods and
//! well counts (a paired design), so worker count and scheduling never
//! change a number.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{complete_plain, complete_smoothed, AdmmParams, ConvergenceTrace};
use crate::error::{Error, Result};
use crate::geodata::{
    self, active_cell_fraction, export_slice_image, load_field_with_manifest,
    load_spe10_porosity, mask_as_field, normalize, sample_wells, SliceAxis, WellPlan,
};
use crate::kriging::{
    fit_field_variogram, ordinary_krige, FieldVariogramConfig, FieldVariogramReport,
    SamplePoint, SearchEllipsoid, VariogramModel,
};
use crate::synthetic;
use crate::tensor::{project, project_complement, rse, Dims3, Field3, Mask3};

/// Where the ground-truth field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// SPE10 model-2 porosity file (fixed 60x220x85 shape, 20x20x2 ft
    /// cells).
    Spe10 { path: PathBuf },
    /// Any ASCII grid with a manifest sidecar; cell size comes from
    /// the manifest.
    AsciiGrid { path: PathBuf },
    /// Generated field with unit cell size.
    Synthetic(SyntheticSpec),
}

/// Seeded synthetic ground-truth families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SyntheticSpec {
    Tucker {
        dims: [usize; 3],
        ranks: [usize; 3],
        seed: u64,
    },
    Layered {
        dims: [usize; 3],
    },
    Bumps {
        dims: [usize; 3],
        n_bumps: usize,
        sigma: f64,
        seed: u64,
    },
}

impl SyntheticSpec {
    fn build(&self) -> Result<Field3> {
        let dims = match self {
            SyntheticSpec::Tucker { dims, .. }
            | SyntheticSpec::Layered { dims }
            | SyntheticSpec::Bumps { dims, .. } => Dims3::new(dims[0], dims[1], dims[2])?,
        };
        Ok(match *self {
            SyntheticSpec::Tucker { ranks, seed, .. } => synthetic::tucker(dims, ranks, seed),
            SyntheticSpec::Layered { .. } => synthetic::layered(dims),
            SyntheticSpec::Bumps {
                n_bumps,
                sigma,
                seed,
                ..
            } => synthetic::gaussian_bumps(dims, n_bumps, sigma, seed),
        })
    }
}

/// Which reconstruction methods a batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TensorPlain,
    TensorSmoothed,
    Kriging,
    #[default]
    All,
}

impl Method {
    /// Concrete methods, with `All` expanded.
    pub fn expand(self) -> Vec<Method> {
        match self {
            Method::All => vec![Method::TensorPlain, Method::TensorSmoothed, Method::Kriging],
            m => vec![m],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::TensorPlain => "tensor_plain",
            Method::TensorSmoothed => "tensor_smoothed",
            Method::Kriging => "kriging",
            Method::All => "all",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor_plain" => Ok(Method::TensorPlain),
            "tensor_smoothed" => Ok(Method::TensorSmoothed),
            "kriging" => Ok(Method::Kriging),
            "all" => Ok(Method::All),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected tensor_plain, tensor_smoothed, kriging, or all)"
            ))),
        }
    }
}

/// Kriging side of the configuration: either a fixed variogram model
/// or the parameters for fitting one from the ground truth, plus the
/// neighbor-search ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingConfig {
    /// Fixed model; when absent the model is fit from the full ground
    /// truth with `fit`.
    #[serde(default)]
    pub model: Option<VariogramModel>,
    #[serde(default)]
    pub fit: FieldVariogramConfig,
    #[serde(default = "default_ellipsoid")]
    pub ellipsoid: SearchEllipsoid,
}

fn default_ellipsoid() -> SearchEllipsoid {
    SearchEllipsoid {
        radii: [400.0, 400.0, 40.0],
        azimuth_deg: 0.0,
        dip_deg: 0.0,
        max_neighbors: 24,
        min_neighbors: 1,
    }
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            model: None,
            fit: FieldVariogramConfig::default(),
            ellipsoid: default_ellipsoid(),
        }
    }
}

fn default_wells() -> Vec<usize> {
    vec![100, 300, 500, 700]
}

fn default_n_seeds() -> usize {
    5
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_panel_layers() -> Vec<usize> {
    vec![12, 27, 50, 75]
}

/// Full description of a benchmark batch; JSON files mirror this
/// struct field-for-field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_wells")]
    pub wells: Vec<usize>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub admm: AdmmParams,
    #[serde(default)]
    pub kriging: KrigingConfig,
    /// Optional desk-scale subvolume (i, j, k); well counts are scaled
    /// by the lateral area ratio.
    #[serde(default)]
    pub crop: Option<[usize; 3]>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// z-layers rendered as image panels; out-of-range layers are
    /// skipped.
    #[serde(default = "default_panel_layers")]
    pub panel_layers: Vec<usize>,
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            wells: default_wells(),
            n_seeds: default_n_seeds(),
            base_seed: 0,
            method: Method::All,
            admm: AdmmParams::default(),
            kriging: KrigingConfig::default(),
            crop: None,
            out_dir: default_out_dir(),
            panel_layers: default_panel_layers(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wells.is_empty() {
            return Err(Error::Config("at least one well count is required".to_string()));
        }
        if self.wells.iter().any(|&w| w == 0) {
            return Err(Error::Config("well counts must be positive".to_string()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("at least one seed is required".to_string()));
        }
        self.admm.validate()?;
        self.kriging.ellipsoid.validate()?;
        if let Some(model) = &self.kriging.model {
            model.validate()?;
        }
        if let Some(crop) = self.crop {
            if crop.iter().any(|&c| c == 0) {
                return Err(Error::Config(format!("crop extents must be positive, got {crop:?}")));
            }
        }
        Ok(())
    }
}

/// Ground truth with its geometry and crop-adjusted well counts.
pub struct PreparedExperiment {
    pub truth: Field3,
    pub cell_ft: [f64; 3],
    /// Well counts after proportional crop scaling, same order as the
    /// config, deduplicated only by clamping to the lateral cell count.
    pub wells: Vec<usize>,
}

/// Loads the ground truth, applies the optional crop, and scales the
/// requested well counts by the lateral-area ratio (at least 1 well).
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment> {
    config.validate()?;
    let (full, cell_ft) = match &config.data {
        DataSource::Spe10 { path } => {
            let grid = load_spe10_porosity(path)?;
            (grid.porosity, geodata::SPE10_CELL_FT)
        }
        DataSource::AsciiGrid { path } => {
            let (field, manifest) = load_field_with_manifest(path)?;
            (field, manifest.cell_ft)
        }
        DataSource::Synthetic(spec) => (spec.build()?, [1.0, 1.0, 1.0]),
    };
    let full_dims = full.dims();
    let truth = match config.crop {
        Some([ci, cj, ck]) => full.crop(Dims3::new(
            ci.min(full_dims.i),
            cj.min(full_dims.j),
            ck.min(full_dims.k),
        )?)?,
        None => full,
    };
    let dims = truth.dims();
    let scale = (dims.i * dims.j) as f64 / (full_dims.i * full_dims.j) as f64;
    let lateral = dims.i * dims.j;
    let wells = config
        .wells
        .iter()
        .map(|&w| (((w as f64 * scale).round() as usize).max(1)).min(lateral))
        .collect();
    Ok(PreparedExperiment {
        truth,
        cell_ft,
        wells,
    })
}

/// One sample per observed cell of the wells' columns.
pub fn well_samples(truth: &Field3, plan: &WellPlan) -> Vec<SamplePoint> {
    let dims = truth.dims();
    let mut samples = Vec::with_capacity(plan.wells.len() * dims.k);
    for &(i, j) in &plan.wells {
        for k in 0..dims.k {
            samples.push(SamplePoint::at_cell(i, j, k, truth.get(i, j, k)));
        }
    }
    samples
}

/// Output of one reconstruction, before scoring.
pub struct SingleRun {
    pub field: Field3,
    /// ADMM iterations used (0 for kriging).
    pub iterations: usize,
    /// Cells kriging filled with the global mean for lack of
    /// neighbors (0 for tensor methods).
    pub fallback_cells: usize,
    pub trace: Option<ConvergenceTrace>,
}

/// Runs one concrete method on one mask.
///
/// Tensor methods are solved in z-score units (statistics from the
/// observed cells) and mapped back afterwards; the raw observed values
/// are then re-imposed so the output carries them bit-exactly. Kriging
/// works on raw values directly.
pub fn run_single(
    truth: &Field3,
    cell_ft: [f64; 3],
    plan: &WellPlan,
    mask: &Mask3,
    method: Method,
    admm: &AdmmParams,
    model: Option<&VariogramModel>,
    ellipsoid: &SearchEllipsoid,
) -> Result<SingleRun> {
    match method {
        Method::TensorPlain | Method::TensorSmoothed => {
            let (normed, norm) = normalize(truth, mask)?;
            let y = project(&normed, mask)?;
            let (xhat, trace) = if method == Method::TensorPlain {
                complete_plain(&y, mask, admm)?
            } else {
                complete_smoothed(&y, mask, admm)?
            };
            let denormed = geodata::denormalize(&xhat, &norm)?;
            // undo the round trip's last-bit rounding on observed cells
            let field = project_complement(&denormed, mask)?
                .scaled_add(1.0, &project(truth, mask)?)?;
            Ok(SingleRun {
                field,
                iterations: trace.len(),
                fallback_cells: 0,
                trace: Some(trace),
            })
        }
        Method::Kriging => {
            let model = model.ok_or_else(|| {
                Error::Config("kriging requires a variogram model".to_string())
            })?;
            let samples = well_samples(truth, plan);
            let (field, solved) =
                ordinary_krige(&samples, truth.dims(), cell_ft, model, ellipsoid)?;
            let fallback_cells = solved.dims().len() - solved.observed_count();
            Ok(SingleRun {
                field,
                iterations: 0,
                fallback_cells,
                trace: None,
            })
        }
        Method::All => Err(Error::Config(
            "method 'all' must be expanded before running".to_string(),
        )),
    }
}

/// Score and diagnostics of one (method, well count, seed) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: &'static str,
    pub n_wells: usize,
    /// Well-plan seed actually used (base_seed + run index).
    pub seed: u64,
    /// RSE over unobserved cells; `None` when the run failed.
    pub rse: Option<f64>,
    pub iterations: usize,
    pub wall_secs: f64,
    pub fallback_cells: usize,
    /// Observed-cell percentage of the mask.
    pub active_pct: f64,
    pub error: Option<String>,
    pub trace: Option<ConvergenceTrace>,
}

/// Mean/stddev of the successful runs of one (method, well count)
/// group. The standard deviation uses the sample convention (n − 1);
/// a single run reports 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: &'static str,
    pub n_wells: usize,
    pub mean_rse: f64,
    pub std_rse: f64,
    pub n_runs: usize,
}

/// Everything a batch produced.
pub struct ExperimentOutput {
    pub results: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    /// Present when the kriging model was fit from the ground truth.
    pub variogram: Option<FieldVariogramReport>,
}

/// The configured fixed variogram model, or one fit from the ground
/// truth when the config leaves the model unset.
pub fn resolve_kriging_model(
    config: &ExperimentConfig,
    truth: &Field3,
    cell_ft: [f64; 3],
) -> Result<(VariogramModel, Option<FieldVariogramReport>)> {
    match &config.kriging.model {
        Some(model) => Ok((*model, None)),
        None => {
            let report = fit_field_variogram(truth, cell_ft, &config.kriging.fit)?;
            Ok((report.model, Some(report)))
        }
    }
}

/// Runs the full (method x well count x seed) batch and aggregates
/// per-group statistics. Per-run failures are recorded in the result
/// list without aborting the batch. Deterministic for a fixed config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prepared = prepare(config)?;
    let truth = &prepared.truth;
    let methods = config.method.expand();
    let (model, variogram) = if methods.contains(&Method::Kriging) {
        let (m, r) = resolve_kriging_model(config, truth, prepared.cell_ft)?;
        (Some(m), r)
    } else {
        (None, None)
    };

    let mut jobs = Vec::new();
    for &method in &methods {
        for &wells in &prepared.wells {
            for run in 0..config.n_seeds {
                jobs.push((method, wells, config.base_seed + run as u64));
            }
        }
    }

    let mut results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(method, n_wells, seed)| {
            let started = Instant::now();
            let outcome = sample_wells(truth.dims(), n_wells, seed).and_then(|(plan, mask)| {
                if mask.is_all_observed() {
                    return Err(Error::MaskUnusable(
                        "no unobserved cells to score against".to_string(),
                    ));
                }
                let run = run_single(
                    truth,
                    prepared.cell_ft,
                    &plan,
                    &mask,
                    method,
                    &config.admm,
                    model.as_ref(),
                    &config.kriging.ellipsoid,
                )?;
                let score = rse(&run.field, truth, &mask)?;
                Ok((run, score, active_cell_fraction(&mask)))
            });
            let wall_secs = started.elapsed().as_secs_f64();
            match outcome {
                Ok((run, score, active_pct)) => RunResult {
                    method: method.name(),
                    n_wells,
                    seed,
                    rse: Some(score),
                    iterations: run.iterations,
                    wall_secs,
                    fallback_cells: run.fallback_cells,
                    active_pct,
                    error: None,
                    trace: run.trace,
                },
                Err(e) => RunResult {
                    method: method.name(),
                    n_wells,
                    seed,
                    rse: None,
                    iterations: 0,
                    wall_secs,
                    fallback_cells: 0,
                    active_pct: 0.0,
                    error: Some(e.to_string()),
                    trace: None,
                },
            }
        })
        .collect();
    results.sort_by(|a, b| {
        a.method
            .cmp(b.method)
            .then(a.n_wells.cmp(&b.n_wells))
            .then(a.seed.cmp(&b.seed))
    });
    let summary = summarize(&results);
    Ok(ExperimentOutput {
        results,
        summary,
        variogram,
    })
}

/// Groups successful runs by (method, well count) and reports
/// mean/sample-std RSE; fully failed groups are omitted.
pub fn summarize(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&'static str, usize)> = results
        .iter()
        .map(|r| (r.method, r.n_wells))
        .collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for (method, n_wells) in keys {
        let scores: Vec<f64> = results
            .iter()
            .filter(|r| r.method == method && r.n_wells == n_wells)
            .filter_map(|r| r.rse)
            .collect();
        if scores.is_empty() {
            continue;
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if scores.len() < 2 {
            0.0
        } else {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        rows.push(SummaryRow {
            method,
            n_wells,
            mean_rse: mean,
            std_rse: std,
            n_runs: scores.len(),
        });
    }
    rows
}

/// Summary table as CSV; no timing columns, so two runs of the same
/// config produce byte-identical text.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,wells,mean_rse,std_rse\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.method, r.n_wells, r.mean_rse, r.std_rse));
    }
    out
}

/// Per-run table as CSV, including timing and diagnostics.
pub fn runs_csv(results: &[RunResult]) -> String {
    let mut out = String::from(
        "method,wells,seed,rse,iterations,wall_secs,fallback_cells,active_pct,error\n",
    );
    for r in results {
        let rse_text = r.rse.map(|v| v.to_string()).unwrap_or_default();
        let error = r
            .error
            .as_deref()
            .unwrap_or("")
            .replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.n_wells,
            r.seed,
            rse_text,
            r.iterations,
            r.wall_secs,
            r.fallback_cells,
            r.active_pct,
            error
        ));
    }
    out
}

/// Hyperparameter grid for the tensor solvers: every (rho, alpha)
/// pair with `beta = beta_multiplier * rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub rhos: Vec<f64>,
    pub alphas: Vec<f64>,
    pub beta_multiplier: f64,
    /// Well-plan seeds each cell is scored on (mean RSE).
    pub seeds: Vec<u64>,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            rhos: vec![0.1, 0.5, 0.9, 1.001, 1.01, 1.1],
            alphas: vec![1e-3, 1e-2, 1e-1, 1.0, 1.1],
            beta_multiplier: 0.1,
            seeds: vec![0],
        }
    }
}

/// One scored grid cell; `diverged` marks cells that produced no
/// usable score (solver divergence or out-of-domain parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mean_rse: Option<f64>,
    pub diverged: bool,
    pub note: Option<String>,
}

pub struct GridSearchOutput {
    pub best: AdmmParams,
    pub cells: Vec<GridCell>,
    /// Well count the search ran at (first configured count).
    pub n_wells: usize,
}

/// Scores every grid cell on the configured selection seeds and
/// returns the lowest-mean-RSE parameters; exact ties prefer smaller
/// alpha, then smaller rho. Runs at the first configured well count.
/// Cells that diverge are excluded; if every cell diverges the search
/// fails.
pub fn grid_search(spec: &GridSearchSpec, config: &ExperimentConfig) -> Result<GridSearchOutput> {
    if spec.rhos.is_empty() || spec.alphas.is_empty() {
        return Err(Error::Config("grid search needs nonempty parameter grids".to_string()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("grid search needs at least one selection seed".to_string()));
    }
    if !(spec.beta_multiplier.is_finite() && spec.beta_multiplier >= 0.0) {
        return Err(Error::Config(format!(
            "beta multiplier must be finite and non-negative, got {}",
            spec.beta_multiplier
        )));
    }
    let method = match config.method {
        Method::TensorPlain => Method::TensorPlain,
        Method::Kriging => {
            return Err(Error::InvalidParameter(
                "grid search tunes the tensor solvers; method 'kriging' has no (rho, alpha) grid"
                    .to_string(),
            ))
        }
        _ => Method::TensorSmoothed,
    };
    let prepared = prepare(config)?;
    let n_wells = prepared.wells[0];

    let pairs: Vec<(f64, f64)> = spec
        .rhos
        .iter()
        .flat_map(|&rho| spec.alphas.iter().map(move |&alpha| (rho, alpha)))
        .collect();
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(rho, alpha)| {
            let params = AdmmParams {
                alpha,
                beta: spec.beta_multiplier * rho,
                rho,
                max_iters: config.admm.max_iters,
                rel_tol: config.admm.rel_tol,
            };
            let mut cell = GridCell {
                rho,
                alpha,
                beta: params.beta,
                mean_rse: None,
                diverged: false,
                note: None,
            };
            let mut total = 0.0;
            for &seed in &spec.seeds {
                let outcome = sample_wells(prepared.truth.dims(), n_wells, seed)
                    .and_then(|(plan, mask)| {
                        let run = run_single(
                            &prepared.truth,
                            prepared.cell_ft,
                            &plan,
                            &mask,
                            method,
                            &params,
                            None,
                            &config.kriging.ellipsoid,
                        )?;
                        rse(&run.field, &prepared.truth, &mask)
                    });
                match outcome {
                    Ok(score) => total += score,
                    Err(e) => {
                        cell.diverged = true;
                        cell.note = Some(e.to_string());
                        break;
                    }
                }
            }
            if !cell.diverged {
                cell.mean_rse = Some(total / spec.seeds.len() as f64);
            }
            cell
        })
        .collect();

    let best_cell = cells
        .iter()
        .filter(|c| c.mean_rse.is_some())
        .min_by(|a, b| {
            let (ra, rb) = (a.mean_rse.unwrap(), b.mean_rse.unwrap());
            ra.total_cmp(&rb)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.rho.total_cmp(&b.rho))
        });
    let Some(best_cell) = best_cell else {
        return Err(Error::AllDiverged(cells.len()));
    };
    let best = AdmmParams {
        alpha: best_cell.alpha,
        beta: best_cell.beta,
        rho: best_cell.rho,
        max_iters: config.admm.max_iters,
        rel_tol: config.admm.rel_tol,
    };
    Ok(GridSearchOutput {
        best,
        cells,
        n_wells,
    })
}

/// Grid-search score table as CSV.
pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("rho,alpha,beta,mean_rse,diverged,note\n");
    for c in cells {
        let rse_text = c.mean_rse.map(|v| v.to_string()).unwrap_or_default();
        let note = c.note.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.rho, c.alpha, c.beta, rse_text, c.diverged, note
        ));
    }
    out
}

/// Candidate grids for the kriging search ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidTuneSpec {
    /// Major-radius candidates (physical units).
    pub radii: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    /// Minor radius as a fraction of the major radius.
    pub minor_ratio: f64,
    /// Fixed vertical radius (physical units).
    pub vertical: f64,
    pub min_neighbors: usize,
    pub max_neighbors: usize,
    /// Well count the joint stage-1 (radius x azimuth) search runs at;
    /// crop scaling applies as for configured well counts.
    pub stage1_wells: usize,
    pub seeds: Vec<u64>,
}

impl Default for EllipsoidTuneSpec {
    fn default() -> Self {
        Self {
            radii: vec![200.0, 400.0, 800.0],
            azimuths_deg: vec![0.0, 45.0, 90.0, 135.0],
            minor_ratio: 0.5,
            vertical: 40.0,
            min_neighbors: 1,
            max_neighbors: 24,
            stage1_wells: 500,
            seeds: vec![0],
        }
    }
}

/// One scored stage-1 candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidScore {
    pub radius: f64,
    pub azimuth_deg: f64,
    pub mean_rse: Option<f64>,
}

/// Winning ellipsoid for one well count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunedEllipsoid {
    pub n_wells: usize,
    pub ellipsoid: SearchEllipsoid,
    pub mean_rse: f64,
}

pub struct EllipsoidTuneOutput {
    pub stage1: Vec<EllipsoidScore>,
    pub best_radius: f64,
    pub per_wells: Vec<TunedEllipsoid>,
}

/// Two-stage ellipsoid search: stage 1 scores every (radius, azimuth)
/// pair at the stage-1 well count; stage 2 fixes the winning radius
/// and refines the azimuth at each configured well count. Ties keep
/// the earlier candidate (radius-major enumeration order). The
/// returned radius is always a stage-1 candidate.
pub fn tune_ellipsoid(
    spec: &EllipsoidTuneSpec,
    config: &ExperimentConfig,
) -> Result<EllipsoidTuneOutput> {
    if spec.radii.is_empty() || spec.azimuths_deg.is_empty() {
        return Err(Error::Config("ellipsoid tuning needs nonempty grids".to_string()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("ellipsoid tuning needs at least one seed".to_string()));
    }
    if !(spec.minor_ratio.is_finite() && spec.minor_ratio > 0.0 && spec.minor_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "minor ratio must be in (0, 1], got {}",
            spec.minor_ratio
        )));
    }
    let prepared = prepare(config)?;
    let (model, _) = resolve_kriging_model(config, &prepared.truth, prepared.cell_ft)?;
    let dims = prepared.truth.dims();
    let lateral = dims.i * dims.j;
    let scale_wells = |w: usize| -> usize {
        // same proportional rule as prepare() applies to config wells
        let full = match config.crop {
            Some(_) => {
                let requested = &config.wells;
                // infer the ratio prepare() used from any entry
                if requested.is_empty() || prepared.wells.is_empty() {
                    1.0
                } else {
                    prepared.wells[0] as f64 / requested[0] as f64
                }
            }
            None => 1.0,
        };
        (((w as f64 * full).round() as usize).max(1)).min(lateral)
    };

    let make = |radius: f64, azimuth: f64| SearchEllipsoid {
        radii: [radius, spec.minor_ratio * radius, spec.vertical],
        azimuth_deg: azimuth,
        dip_deg: 0.0,
        max_neighbors: spec.max_neighbors,
        min_neighbors: spec.min_neighbors,
    };

    let score = |ellipsoid: &SearchEllipsoid, n_wells: usize| -> Option<f64> {
        let mut total = 0.0;
        for &seed in &spec.seeds {
            let outcome = sample_wells(dims, n_wells, seed).and_then(|(plan, mask)| {
                let run = run_single(
                    &prepared.truth,
                    prepared.cell_ft,
                    &plan,
                    &mask,
                    Method::Kriging,
                    &config.admm,
                    Some(&model),
                    ellipsoid,
                )?;
                rse(&run.field, &prepared.truth, &mask)
            });
            match outcome {
                Ok(s) => total += s,
                Err(_) => return None,
            }
        }
        Some(total / spec.seeds.len() as f64)
    };

    let stage1_wells = scale_wells(spec.stage1_wells);
    let candidates: Vec<(f64, f64)> = spec
        .radii
        .iter()
        .flat_map(|&r| spec.azimuths_deg.iter().map(move |&a| (r, a)))
        .collect();
    let stage1: Vec<EllipsoidScore> = candidates
        .par_iter()
        .map(|&(radius, azimuth_deg)| EllipsoidScore {
            radius,
            azimuth_deg,
            mean_rse: score(&make(radius, azimuth_deg), stage1_wells),
        })
        .collect();
    let best1 = stage1
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mean_rse.is_some())
        .min_by(|(ia, a), (ib, b)| {
            a.mean_rse
                .unwrap()
                .total_cmp(&b.mean_rse.unwrap())
                .then(ia.cmp(ib))
        });
    let Some((_, best1)) = best1 else {
        return Err(Error::AllDiverged(stage1.len()));
    };
    let best_radius = best1.radius;

    let mut per_wells = Vec::new();
    for &n_wells in &prepared.wells {
        let scored: Vec<(usize, f64, Option<f64>)> = spec
            .azimuths_deg
            .par_iter()
            .enumerate()
            .map(|(idx, &a)| (idx, a, score(&make(best_radius, a), n_wells)))
            .collect();
        let best = scored
            .iter()
            .filter(|(_, _, s)| s.is_some())
            .min_by(|(ia, _, a), (ib, _, b)| {
                a.unwrap().total_cmp(&b.unwrap()).then(ia.cmp(ib))
            });
        let Some(&(_, azimuth, Some(mean_rse))) = best else {
            return Err(Error::AllDiverged(scored.len()));
        };
        per_wells.push(TunedEllipsoid {
            n_wells,
            ellipsoid: make(best_radius, azimuth),
            mean_rse,
        });
    }
    Ok(EllipsoidTuneOutput {
        stage1,
        best_radius,
        per_wells,
    })
}

/// Writes the batch's artifacts into the configured output directory:
/// `summary.csv`, `runs.csv`, per-run convergence traces, the fitted
/// variogram (when one was fit), a config echo, and the slice-image
/// panels (truth / kriging / completion / mask) for each configured
/// z-layer and well count. Returns the files written.
///
/// Panels re-run one reconstruction per (well count, sub-image) at
/// `base_seed`; methods not selected by the config are skipped.
pub fn render_report(
    output: &ExperimentOutput,
    config: &ExperimentConfig,
) -> Result<Vec<PathBuf>> {
    if output.results.is_empty() {
        return Err(Error::InvalidParameter("no results to render".to_string()));
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let mut written = Vec::new();

    let summary_path = config.out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(&output.summary))?;
    written.push(summary_path);

    let runs_path = config.out_dir.join("runs.csv");
    std::fs::write(&runs_path, runs_csv(&output.results))?;
    written.push(runs_path);

    for result in &output.results {
        if let Some(trace) = &result.trace {
            let path = config.out_dir.join(format!(
                "trace_{}_w{}_s{}.csv",
                result.method, result.n_wells, result.seed
            ));
            trace.write_csv(&path)?;
            written.push(path);
        }
    }

    if let Some(report) = &output.variogram {
        let path = config.out_dir.join("variogram.json");
        std::fs::write(&path, serde_json::to_string_pretty(report)?)?;
        written.push(path);
    }

    let config_path = config.out_dir.join("config.json");
    std::fs::write(&config_path, config.to_json()?)?;
    written.push(config_path);

    written.extend(render_panels(config)?);
    Ok(written)
}

/// Renders the slice-image panels alone (see [`render_report`]).
pub fn render_panels(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&config.out_dir)?;
    let prepared = prepare(config)?;
    let truth = &prepared.truth;
    let dims = truth.dims();
    let layers: Vec<usize> = config
        .panel_layers
        .iter()
        .copied()
        .filter(|&z| z < dims.k)
        .collect();
    if layers.is_empty() {
        return Ok(Vec::new());
    }
    let methods = config.method.expand();
    let (model, _) = if methods.contains(&Method::Kriging) {
        let (m, r) = resolve_kriging_model(config, truth, prepared.cell_ft)?;
        (Some(m), r)
    } else {
        (None, None)
    };
    let vmin = truth.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = truth
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let (vmin, vmax) = if vmax > vmin { (vmin, vmax) } else { (vmin, vmin + 1.0) };

    let mut written = Vec::new();
    for &n_wells in &prepared.wells {
        let (plan, mask) = sample_wells(dims, n_wells, config.base_seed)?;
        let mut panels: Vec<(&str, Field3, f64, f64)> = vec![
            ("truth", truth.clone(), vmin, vmax),
            ("mask", mask_as_field(&mask), 0.0, 1.0),
        ];
        // One completion panel is enough; prefer the smoothed solver
        // when both tensor methods are selected.
        let mut panel_methods: Vec<(&str, Method)> = Vec::new();
        if methods.contains(&Method::Kriging) {
            panel_methods.push(("kriging", Method::Kriging));
        }
        if methods.contains(&Method::TensorSmoothed) {
            panel_methods.push(("completion", Method::TensorSmoothed));
        } else if methods.contains(&Method::TensorPlain) {
            panel_methods.push(("completion", Method::TensorPlain));
        }
        for &(label, method) in &panel_methods {
            let run = run_single(
                truth,
                prepared.cell_ft,
                &plan,
                &mask,
                method,
                &config.admm,
                model.as_ref(),
                &config.kriging.ellipsoid,
            )?;
            panels.push((label, run.field, vmin, vmax));
        }
        for &z in &layers {
            for (name, field, lo, hi) in &panels {
                let path = config
                    .out_dir
                    .join(format!("panel_z{z:02}_w{n_wells}_{name}.pgm"));
                export_slice_image(field, SliceAxis::Z, z, &path, *lo, *hi)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
