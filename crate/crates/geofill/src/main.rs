//! Command-line front end: reconstruction runs, kriging baselines,
//! benchmark batches, hyperparameter searches, and report rendering,
//! all driven by a JSON config file with flag overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use geofill::harness::{
    self, DataSource, EllipsoidTuneSpec, ExperimentConfig, GridSearchSpec, Method,
};
use geofill::{sample_wells, save_field_ascii, Error};

#[derive(Parser)]
#[command(
    name = "geofill",
    version,
    about = "Reconstructs sparsely observed 3D property fields by low-rank tensor completion, \
             with an ordinary-kriging baseline",
    after_help = "Exit codes: 0 success, 1 config error, 2 data error, 3 solver divergence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single tensor-completion run at the first configured well count.
    Reconstruct(RunArgs),
    /// Single ordinary-kriging run at the first configured well count.
    Krige(RunArgs),
    /// Full (method x wells x seeds) batch with CSV reports and panels.
    Benchmark(RunArgs),
    /// Exhaustive (rho, alpha) search; prints and saves the winner.
    Gridsearch(GridArgs),
    /// Two-stage search ellipsoid tuning for the kriging baseline.
    TuneEllipsoid(TuneArgs),
    /// Slice-image panels only, without re-running the batch.
    Render(RunArgs),
}

/// Flags shared by every subcommand; each one overrides the matching
/// config-file field when given.
#[derive(Args)]
struct RunArgs {
    /// JSON experiment config (same shape as the `config.json` echo).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path: `.dat` loads SPE10 porosity, anything else an
    /// ASCII grid with manifest sidecar.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated well counts, e.g. 100,300,500,700.
    #[arg(long, value_parser = parse_usize_list)]
    wells: Option<std::vec::Vec<usize>>,
    /// Number of seeds per (method, well count) group.
    #[arg(long)]
    seeds: Option<usize>,
    /// First seed; run k uses base_seed + k.
    #[arg(long)]
    base_seed: Option<u64>,
    /// tensor_plain | tensor_smoothed | kriging | all
    #[arg(long)]
    method: Option<String>,
    /// ADMM penalty parameter.
    #[arg(long)]
    rho: Option<f64>,
    /// Nuclear-norm weight (shrinkage threshold is alpha/rho).
    #[arg(long)]
    alpha: Option<f64>,
    /// Smoothing weight for the smoothed solver.
    #[arg(long)]
    beta: Option<f64>,
    /// Iteration budget per solve.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative-change stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Desk-scale crop `i,j,k`; well counts scale with lateral area.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<[usize; 3]>,
    /// Output directory for fields, CSVs, and panels.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the batch runner (no effect on results).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated rho grid (default 0.1,0.5,0.9,1.001,1.01,1.1).
    #[arg(long, value_parser = parse_f64_list)]
    rhos: Option<std::vec::Vec<f64>>,
    /// Comma-separated alpha grid (default 1e-3,1e-2,1e-1,1,1.1).
    #[arg(long, value_parser = parse_f64_list)]
    alphas: Option<std::vec::Vec<f64>>,
    /// Beta as a multiple of rho (default 0.1).
    #[arg(long)]
    beta_multiplier: Option<f64>,
    /// Comma-separated selection seeds (default 0).
    #[arg(long, value_parser = parse_u64_list)]
    grid_seeds: Option<std::vec::Vec<u64>>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated stage-1 major radii in feet.
    #[arg(long, value_parser = parse_f64_list)]
    radii: Option<std::vec::Vec<f64>>,
    /// Comma-separated azimuth candidates in degrees.
    #[arg(long, value_parser = parse_f64_list)]
    azimuths: Option<std::vec::Vec<f64>>,
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_crop(s: &str) -> Result<[usize; 3], String> {
    let parts = parse_usize_list(s)?;
    match parts.as_slice() {
        &[i, j, k] => Ok([i, j, k]),
        other => Err(format!("expected i,j,k, got {} values", other.len())),
    }
}

/// `.dat` is the SPE10 distribution format; everything else goes
/// through the ASCII-grid loader.
fn data_source_for(path: &Path) -> DataSource {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dat")) {
        DataSource::Spe10 {
            path: path.to_path_buf(),
        }
    } else {
        DataSource::AsciiGrid {
            path: path.to_path_buf(),
        }
    }
}

impl RunArgs {
    /// Config file (or a data-path default), with flag overrides
    /// applied and the result validated.
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match (&self.config, &self.data) {
            (Some(path), _) => ExperimentConfig::from_json_file(path)?,
            (None, Some(data)) => ExperimentConfig::new(data_source_for(data)),
            (None, None) => {
                return Err(Error::Config(
                    "either --config or --data is required".to_string(),
                ))
            }
        };
        if let (Some(_), Some(data)) = (&self.config, &self.data) {
            config.data = data_source_for(data);
        }
        if let Some(wells) = &self.wells {
            config.wells = wells.clone();
        }
        if let Some(seeds) = self.seeds {
            config.n_seeds = seeds;
        }
        if let Some(base) = self.base_seed {
            config.base_seed = base;
        }
        if let Some(method) = &self.method {
            config.method = Method::from_str(method)?;
        }
        if let Some(rho) = self.rho {
            config.admm.rho = rho;
        }
        if let Some(alpha) = self.alpha {
            config.admm.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            config.admm.beta = beta;
        }
        if let Some(iters) = self.max_iters {
            config.admm.max_iters = iters;
        }
        if let Some(tol) = self.tol {
            config.admm.rel_tol = tol;
        }
        if let Some(crop) = self.crop {
            config.crop = Some(crop);
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        if let Some(workers) = self.workers {
            // Ignore a second initialization (e.g. in tests); the pool
            // size never changes results, only wall time.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global();
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help / --version land here; real usage errors exit 1.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Reconstruct(args) => reconstruct(&args, false),
        Command::Krige(args) => reconstruct(&args, true),
        Command::Benchmark(args) => benchmark(&args),
        Command::Gridsearch(args) => gridsearch(&args),
        Command::TuneEllipsoid(args) => tune(&args),
        Command::Render(args) => render(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// One run at the first configured well count and the base seed;
/// writes the reconstructed field, the well plan, and (for tensor
/// methods) the convergence trace.
fn reconstruct(args: &RunArgs, krige: bool) -> Result<(), Error> {
    let mut config = args.resolve()?;
    if krige {
        config.method = Method::Kriging;
    } else if config.method == Method::All || config.method == Method::Kriging {
        config.method = Method::TensorSmoothed;
    }
    let prepared = harness::prepare(&config)?;
    let truth = &prepared.truth;
    let n_wells = prepared.wells[0];
    let (plan, mask) = sample_wells(truth.dims(), n_wells, config.base_seed)?;
    let model = if config.method == Method::Kriging {
        Some(harness::resolve_kriging_model(&config, truth, prepared.cell_ft)?.0)
    } else {
        None
    };
    let run = harness::run_single(
        truth,
        prepared.cell_ft,
        &plan,
        &mask,
        config.method,
        &config.admm,
        model.as_ref(),
        &config.kriging.ellipsoid,
    )?;
    let score = geofill::rse(&run.field, truth, &mask)?;

    std::fs::create_dir_all(&config.out_dir)?;
    let field_path = config.out_dir.join(format!("{}.txt", config.method.name()));
    save_field_ascii(&run.field, prepared.cell_ft, &field_path)?;
    plan.write_csv(&config.out_dir.join("wells.csv"))?;
    if let Some(trace) = &run.trace {
        trace.write_csv(&config.out_dir.join("trace.csv"))?;
    }

    println!(
        "{} wells={n_wells} seed={} rse={score:.6}{}",
        config.method.name(),
        config.base_seed,
        match config.method {
            Method::Kriging => format!(" fallback_cells={}", run.fallback_cells),
            _ => format!(" iterations={}", run.iterations),
        }
    );
    println!("wrote {}", field_path.display());
    Ok(())
}

fn benchmark(args: &RunArgs) -> Result<(), Error> {
    let config = args.resolve()?;
    let output = harness::run_experiment(&config)?;
    let files = harness::render_report(&output, &config)?;
    print!("{}", harness::summary_csv(&output.summary));
    println!("wrote {} files to {}", files.len(), config.out_dir.display());
    Ok(())
}

fn gridsearch(args: &GridArgs) -> Result<(), Error> {
    let config = args.run.resolve()?;
    let mut spec = GridSearchSpec::default();
    if let Some(rhos) = &args.rhos {
        spec.rhos = rhos.clone();
    }
    if let Some(alphas) = &args.alphas {
        spec.alphas = alphas.clone();
    }
    if let Some(mult) = args.beta_multiplier {
        spec.beta_multiplier = mult;
    }
    if let Some(seeds) = &args.grid_seeds {
        spec.seeds = seeds.clone();
    }
    let output = harness::grid_search(&spec, &config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(
        config.out_dir.join("grid.csv"),
        harness::grid_csv(&output.cells),
    )?;
    std::fs::write(
        config.out_dir.join("best_params.json"),
        serde_json::to_string_pretty(&output.best)?,
    )?;
    println!(
        "best: alpha={} rho={} beta={} (wells={})",
        output.best.alpha, output.best.rho, output.best.beta, output.n_wells
    );
    Ok(())
}

fn tune(args: &TuneArgs) -> Result<(), Error> {
    let config = args.run.resolve()?;
    let mut spec = EllipsoidTuneSpec::default();
    if let Some(radii) = &args.radii {
        spec.radii = radii.clone();
    }
    if let Some(azimuths) = &args.azimuths {
        spec.azimuths_deg = azimuths.clone();
    }
    let output = harness::tune_ellipsoid(&spec, &config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(
        config.out_dir.join("ellipsoids.json"),
        serde_json::to_string_pretty(&output.per_wells)?,
    )?;
    println!("stage 1 best radius: {} ft", output.best_radius);
    for tuned in &output.per_wells {
        println!(
            "wells={}: azimuth={} deg rse={:.4}",
            tuned.n_wells, tuned.ellipsoid.azimuth_deg, tuned.mean_rse
        );
    }
    Ok(())
}

fn render(args: &RunArgs) -> Result<(), Error> {
    let config = args.resolve()?;
    let files = harness::render_panels(&config)?;
    for file in &files {
        println!("{}", file.display());
    }
    println!("{} panels", files.len());
    Ok(())
}
