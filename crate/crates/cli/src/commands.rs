use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elastic_changepoint::changepoint::{
    cross_sectional_test, ElasticAnalysis, Method, TestConfig,
};
use elastic_changepoint::fpca::ComponentSelector;
use elastic_changepoint::function::{box_smooth, resample, FunctionSample, SmoothingConfig};
use elastic_changepoint::karcher::{
    karcher_mean_align, AlignConfig, AlignmentResult, Initializer, PrefixMode,
};
use elastic_changepoint::par::{self, Execution};
use elastic_changepoint::simgen::{self, Design, SimSpec};

use crate::dataset::{write_table_file, Dataset, Format};
use crate::document::{segment_values, ConfigEcho, ResultDocument};
use crate::error::{CliError, CliResult};
use crate::summary::{summarize, BenchRow};

/// Environment variable overriding the default number of Monte-Carlo draws.
pub const MC_REPS_ENV: &str = "ELASTIC_CP_MC_REPS";

#[derive(Debug, Parser)]
#[command(name = "elastic-cp", version, about = "Amplitude and phase changepoint tests for samples of functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a dataset for a mean change and write a JSON result document.
    Detect(DetectArgs),
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
    /// Run methods over simulated replicates and tabulate detections.
    Benchmark(BenchmarkArgs),
    /// Align a dataset to its Karcher mean and write the aligned functions,
    /// warps and mean.
    Align(AlignArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrefixArg {
    Global,
    Realign,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    NearestToMean,
    ElasticMedoid,
}

#[derive(Debug, Clone, Args)]
pub struct AlignOpts {
    /// Relative objective decrease that stops the alignment.
    #[arg(long, default_value_t = 1e-4)]
    pub align_tol: f64,
    #[arg(long, default_value_t = 20)]
    pub align_max_iter: usize,
    #[arg(long, value_enum, default_value = "nearest-to-mean")]
    pub initializer: InitArg,
    /// Run on one thread.
    #[arg(long)]
    pub sequential: bool,
}

impl AlignOpts {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn config(&self) -> AlignConfig {
        AlignConfig {
            tol: self.align_tol,
            max_iter: self.align_max_iter,
            initializer: match self.initializer {
                InitArg::NearestToMean => Initializer::NearestToMean,
                InitArg::ElasticMedoid => Initializer::ElasticMedoid,
            },
            execution: self.execution(),
            ..AlignConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TestOpts {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed of the Monte-Carlo limit law and permutations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = MC_REPS_ENV, default_value_t = 10_000)]
    pub mc_reps: usize,
    /// Points of the simulated Brownian bridges.
    #[arg(long, default_value_t = 1001)]
    pub mc_grid: usize,
    /// Fixed number of principal components for PCA methods.
    #[arg(long, conflicts_with = "variance_fraction")]
    pub components: Option<usize>,
    /// Variance fraction that selects principal components.
    #[arg(long, default_value_t = 0.95)]
    pub variance_fraction: f64,
    #[arg(long, default_value_t = 50)]
    pub eigen_truncation: usize,
    /// Permutations for a p-value of the Λ₂ statistic.
    #[arg(long)]
    pub lambda2_permutations: Option<usize>,
    /// Center shooting vectors before horizontal fPCA.
    #[arg(long)]
    pub center_horizontal: bool,
    #[arg(long, value_enum, default_value = "global")]
    pub prefix_mode: PrefixArg,
    #[command(flatten)]
    pub align: AlignOpts,
}

impl TestOpts {
    pub fn config(&self) -> TestConfig {
        TestConfig {
            alpha: self.alpha,
            mc_reps: self.mc_reps,
            mc_grid: self.mc_grid,
            selector: match self.components {
                Some(d) => ComponentSelector::Fixed(d),
                None => ComponentSelector::Fraction(self.variance_fraction),
            },
            eigen_truncation: self.eigen_truncation,
            rng_seed: self.seed,
            lambda2_permutations: self.lambda2_permutations,
            center_horizontal: self.center_horizontal,
            align: self.align.config(),
            prefix_mode: match self.prefix_mode {
                PrefixArg::Global => PrefixMode::GlobalAlignment,
                PrefixArg::Realign => PrefixMode::Realign,
            },
            execution: self.align.execution(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Preprocess {
    /// Box-filter width in samples (odd).
    #[arg(long)]
    pub smooth_window: Option<usize>,
    #[arg(long, default_value_t = 1, requires = "smooth_window")]
    pub smooth_passes: usize,
    /// Resample every function to this many points before the analysis.
    #[arg(long)]
    pub resample: Option<usize>,
}

impl Preprocess {
    fn smoothing(&self) -> CliResult<Option<SmoothingConfig>> {
        self.smooth_window
            .map(|w| SmoothingConfig::new(w, self.smooth_passes).map_err(CliError::from))
            .transpose()
    }

    /// Smooths, then resamples.
    pub fn apply(&self, data: Dataset) -> CliResult<Dataset> {
        let smoothing = self.smoothing()?;
        let labels = data.labels();
        let fs = data
            .into_functions()
            .into_iter()
            .zip(labels)
            .map(|(f, label)| {
                let f = match smoothing {
                    Some(cfg) => box_smooth(&f, cfg)?,
                    None => f,
                };
                let f = match self.resample {
                    Some(n) => resample(&f, n)?,
                    None => f,
                };
                Ok(FunctionSample::new(*f.grid(), f.into_values())?.with_label(label))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Dataset::new(fs)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// CSV (`t,label1,...`) or JSON dataset.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// elastic-amp, elastic-phase, elastic-amp-pca, elastic-phase-pca or
    /// cross-sectional.
    #[arg(long, default_value = "elastic-amp")]
    pub method: Method,
    #[command(flatten)]
    pub test: TestOpts,
    #[command(flatten)]
    pub preprocess: Preprocess,
    /// Write the document here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for CSV files behind the usual plots.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Amplitude,
    Phase,
    Sensitivity,
    /// The amplitude design without a change.
    Null,
}

#[derive(Debug, Clone, Args)]
pub struct SimOpts {
    #[arg(long, value_enum, default_value = "amplitude")]
    pub design: DesignArg,
    #[arg(long, default_value_t = 75)]
    pub n: usize,
    /// Last pre-change function.
    #[arg(long, default_value_t = 30)]
    pub changepoint: usize,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    /// Generate the design without its change.
    #[arg(long)]
    pub no_change: bool,
}

impl SimOpts {
    pub fn spec(&self, seed: u64) -> SimSpec {
        let design = match self.design {
            DesignArg::Amplitude | DesignArg::Null => Design::Amplitude,
            DesignArg::Phase => Design::Phase,
            DesignArg::Sensitivity => Design::Sensitivity,
        };
        SimSpec {
            design,
            n: self.n,
            changepoint: self.changepoint,
            num_points: self.points,
            seed,
            change: !(self.no_change || self.design == DesignArg::Null),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; the CSV goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimOpts,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated methods; defaults to the design's elastic test and
    /// cross-sectional.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Seed of replicate 0; replicate r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[command(flatten)]
    pub test: TestOpts,
    /// Per-replicate CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub preprocess: Preprocess,
    #[command(flatten)]
    pub align: AlignOpts,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Detect(a) => cmd_detect(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
        Command::Benchmark(a) => cmd_benchmark(&a, stdout),
        Command::Align(a) => cmd_align(&a, stdout),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn write_alignment(dir: &Path, data: &Dataset, ar: &AlignmentResult) -> CliResult<()> {
    let grid = data.grid();
    let t = grid.original_points();
    let labels = data.labels();
    let aligned: Vec<&[f64]> = ar.aligned_f.iter().map(FunctionSample::values).collect();
    write_table_file(&dir.join("aligned.csv"), "t", &t, &labels, &aligned)?;
    let warps: Vec<Vec<f64>> = ar.warps.iter().map(|g| g.original_values()).collect();
    let warp_cols: Vec<&[f64]> = warps.iter().map(Vec::as_slice).collect();
    write_table_file(&dir.join("warps.csv"), "t", &t, &labels, &warp_cols)?;
    let mean = ar.mean_function();
    write_table_file(&dir.join("mean.csv"), "t", &t, &["karcher_mean".into()], &[mean.values()])
}

pub fn cmd_detect(args: &DetectArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = args.test.config();
    cfg.validate()?;
    let raw = Dataset::read(&args.input, args.format)?;
    let data = args.preprocess.apply(raw)?;
    let (result, alignment) = match args.method {
        Method::CrossSectional => (cross_sectional_test(data.functions(), &cfg)?, None),
        m => {
            let an = ElasticAnalysis::new(data.functions(), &cfg)?;
            (an.run(m)?, Some(an))
        }
    };
    let echo = ConfigEcho {
        test: cfg,
        smoothing: args.preprocess.smoothing()?,
        resample: args.preprocess.resample,
    };
    let doc = ResultDocument::new(&result, &data, Some(args.input.display().to_string()), echo);
    let json = doc.to_json();
    match &args.out {
        Some(path) => fs::write(path, &json)?,
        None => stdout.write_all(json.as_bytes())?,
    }

    if let Some(dir) = &args.plot_data {
        ensure_dir(dir)?;
        let ks: Vec<f64> = (1..=data.len()).map(|k| k as f64).collect();
        write_table_file(&dir.join("cusum.csv"), "k", &ks, &["cusum".into()], &[&result.cusum_trace])?;
        let grid = data.grid();
        if let (Some(b), Some(a), Some(d)) = (&result.mean_before, &result.mean_after, &doc.delta_hat) {
            let (b, a) = (segment_values(b, &grid), segment_values(a, &grid));
            write_table_file(
                &dir.join("segments.csv"),
                "t",
                &grid.original_points(),
                &["mean_before".into(), "mean_after".into(), "delta_hat".into()],
                &[&b, &a, d],
            )?;
        }
        if let Some(an) = &alignment {
            write_alignment(dir, &data, an.alignment())?;
        }
    }
    if result.degenerate {
        return Err(CliError::Degenerate(format!(
            "{}: the sample has no variation; statistic set to 0 and p-value to 1",
            result.method
        )));
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = args.sim.spec(args.seed);
    let data = Dataset::new(simgen::generate(&spec)?)?;
    let echo = format!(
        "design={} n={} changepoint={} points={} seed={} change={}",
        spec.design, spec.n, spec.changepoint, spec.num_points, spec.seed, spec.change
    );
    match &args.out {
        Some(path) => {
            data.write(path, args.format)?;
            writeln!(stdout, "{echo}")?;
        }
        None => {
            match args.format.unwrap_or(Format::Csv) {
                Format::Csv => data.to_csv(&mut *stdout)?,
                Format::Json => data.to_json(&mut *stdout)?,
            }
            eprintln!("{echo}");
        }
    }
    Ok(())
}

/// Elastic method compared in benchmarks when none is given.
pub fn default_methods(design: DesignArg) -> Vec<Method> {
    let elastic = match design {
        DesignArg::Amplitude | DesignArg::Null => Method::ElasticAmp,
        DesignArg::Phase => Method::ElasticPhase,
        DesignArg::Sensitivity => Method::ElasticAmpPca,
    };
    vec![elastic, Method::CrossSectional]
}

/// Runs `methods` on replicates `0..reps`; replicates run in parallel.
pub fn benchmark_rows(
    sim: &SimOpts,
    reps: usize,
    data_seed: u64,
    methods: &[Method],
    cfg: &TestConfig,
) -> CliResult<Vec<BenchRow>> {
    // each replicate is one task; the analyses inside run sequentially
    let inner = TestConfig {
        execution: Execution::Sequential,
        align: AlignConfig {
            execution: Execution::Sequential,
            ..cfg.align
        },
        ..*cfg
    };
    let per_rep = par::try_map_range(cfg.execution, reps, |r| -> CliResult<Vec<BenchRow>> {
        let spec = sim.spec(simgen::replicate_seed(data_seed, r));
        let fs = simgen::generate(&spec)?;
        let mut rows = Vec::with_capacity(methods.len());
        // the alignment is shared; its time is charged to every elastic method
        let mut analysis: Option<(ElasticAnalysis, f64)> = None;
        for &m in methods {
            let (result, secs) = if m == Method::CrossSectional {
                let start = Instant::now();
                let res = cross_sectional_test(&fs, &inner);
                (res, start.elapsed().as_secs_f64())
            } else {
                if analysis.is_none() {
                    let start = Instant::now();
                    let a = ElasticAnalysis::new(&fs, &inner)?;
                    analysis = Some((a, start.elapsed().as_secs_f64()));
                }
                let (a, align_secs) = analysis.as_ref().expect("analysis just set");
                let start = Instant::now();
                let res = a.run(m);
                (res, align_secs + start.elapsed().as_secs_f64())
            };
            let row = match result {
                Ok(res) => BenchRow {
                    replicate: r,
                    seed: spec.seed,
                    method: m,
                    detected: res.p_value <= cfg.alpha,
                    k_star: res.k_star,
                    p_value: res.p_value,
                    runtime_ms: secs * 1e3,
                },
                // PCA tests on data without variance: treat as no detection
                Err(elastic_changepoint::error::Error::DegenerateData(_)) => BenchRow {
                    replicate: r,
                    seed: spec.seed,
                    method: m,
                    detected: false,
                    k_star: None,
                    p_value: 1.0,
                    runtime_ms: secs * 1e3,
                },
                Err(e) => return Err(e.into()),
            };
            rows.push(row);
        }
        Ok(rows)
    })?;
    Ok(per_rep.into_iter().flatten().collect())
}

pub fn cmd_benchmark(args: &BenchmarkArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if args.reps == 0 {
        return Err(CliError::input("--reps must be at least 1"));
    }
    let cfg = args.test.config();
    cfg.validate()?;
    args.sim.spec(args.data_seed).validate()?;
    let methods = args.methods.clone().unwrap_or_else(|| default_methods(args.sim.design));
    if methods.is_empty() {
        return Err(CliError::input("no methods given"));
    }
    let rows = benchmark_rows(&args.sim, args.reps, args.data_seed, &methods, &cfg)?;
    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_path(path)?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    writeln!(stdout, "method,reps,detections,detection_rate,median_k_star,iqr_k_star")?;
    for s in summarize(&rows, &methods) {
        let fmt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(
            stdout,
            "{},{},{},{},{},{}",
            s.method,
            s.reps,
            s.detections,
            s.detection_rate,
            fmt(s.median_k_star),
            fmt(s.iqr_k_star)
        )?;
    }
    Ok(())
}

pub fn cmd_align(args: &AlignArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let raw = Dataset::read(&args.input, args.format)?;
    let data = args.preprocess.apply(raw)?;
    let ar = karcher_mean_align(data.functions(), &args.align.config())?;
    ensure_dir(&args.out_dir)?;
    write_alignment(&args.out_dir, &data, &ar)?;
    writeln!(
        stdout,
        "aligned {} functions in {} iterations (converged: {})",
        ar.len(),
        ar.iterations,
        ar.converged
    )?;
    Ok(())
}
