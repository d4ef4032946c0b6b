//! `multistep`: design generation, fitting, prediction, bound reports and benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multistep::bench::{run_bench, BenchConfig, BenchDesign, BenchSelection};
use multistep::bounds::{bound_report, BoundInputs};
use multistep::design::{generate_net, nest, read_numeric_csv, write_numeric_csv, Scramble};
use multistep::linalg::{AssemblyMode, AssemblyOptions, SolveOptions};
use multistep::select::SearchSpec;
use multistep::testfns::TestFunction;
use multistep::{
    fit, Criterion, Error, FitOptions, Kernel, KernelFamily, KernelSchedule, MultiStepModel, NestedDesign,
    RescaledKernel, Rescaling, Result, SelectionSpec,
};

#[derive(Parser)]
#[command(name = "multistep", version, about = "Multi-step kernel interpolation emulators")]
struct Cli {
    /// Worker threads for benchmark fan-out.
    #[arg(long, global = true, env = "MULTISTEP_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scrambled (0,m,s)-net in base b with a stage sidecar.
    GenDesign(GenDesign),
    /// Fit a multi-step interpolator and save it as JSON.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Eigenvalue, conditioning and error-bound report for a saved model.
    Bounds(BoundsArgs),
    /// Fit one through J stages on a test function and report test error.
    Bench(BenchArgs),
    /// Evaluate a built-in test function at one point.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDesign {
    #[arg(long)]
    base: u32,
    #[arg(long)]
    m: u32,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated nested stage sizes; defaults to one stage.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<usize>>,
    /// Raw net points without scrambling.
    #[arg(long)]
    no_scramble: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Select {
    Loo,
    Kfold,
    Ml,
    Reml,
    Sparsity,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Assembly {
    Auto,
    Dense,
    Sparse,
}

impl From<Assembly> for AssemblyMode {
    fn from(a: Assembly) -> Self {
        match a {
            Assembly::Auto => AssemblyMode::Auto,
            Assembly::Dense => AssemblyMode::Dense,
            Assembly::Sparse => AssemblyMode::Sparse,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Design CSV (stage sidecar read when present).
    #[arg(long)]
    design: PathBuf,
    /// Values CSV: `x1..xd,y` rows matching the design, or a single `y` column.
    #[arg(long)]
    values: PathBuf,
    #[arg(long, default_value = "wendland-smooth")]
    kernel: String,
    #[arg(long, value_enum, default_value_t = Select::Loo)]
    select: Select,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    /// Nonzero budget for `--select sparsity`.
    #[arg(long, default_value_t = 1e5)]
    budget: f64,
    /// Per-stage scalar widths for `--select fixed` (one value applies to all stages).
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long, default_value_t = 12)]
    grid_size: usize,
    #[arg(long, default_value_t = 20)]
    refine_steps: usize,
    #[arg(long)]
    tensor_grid: bool,
    /// Restrict selection to scalar re-scalings.
    #[arg(long)]
    isotropic: bool,
    /// Normalize stage variances by the number of new points.
    #[arg(long)]
    reml: bool,
    /// Retry failed factorizations with a small diagonal jitter.
    #[arg(long)]
    jitter: bool,
    #[arg(long, value_enum, default_value_t = Assembly::Auto)]
    assembly: Assembly,
    #[arg(long, default_value_t = multistep::linalg::DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the selection trace JSON here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Points CSV with `x1..xd` columns.
    #[arg(long)]
    points: PathBuf,
    /// Add a predictive variance column.
    #[arg(long)]
    variance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-15)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Kernel evaluation error scale D.
    #[arg(long)]
    d_scale: Option<f64>,
    /// Per-stage relative matrix perturbations.
    #[arg(long, value_delimiter = ',')]
    delta_a: Option<Vec<f64>>,
    /// Use eigenvalue bounds instead of computed eigenvalues.
    #[arg(long)]
    use_bounds: bool,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Preset: franke, franke-classic, schwefel, schwefel-full, michalewicz.
    #[arg(long)]
    preset: Option<String>,
    /// Test function when no preset is given.
    #[arg(long)]
    function: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    base: Option<u32>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<usize>>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long, value_enum)]
    select: Option<Select>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    test_seed: Option<u64>,
    /// Subset of stage counts to run.
    #[arg(long, value_delimiter = ',')]
    stage_counts: Option<Vec<usize>>,
    #[arg(long)]
    no_bounds: bool,
    /// Allow designs above the desk-scale size limit.
    #[arg(long)]
    full_scale: bool,
    /// Memory budget in bytes.
    #[arg(long)]
    memory_budget: Option<usize>,
    /// Leave wall-clock fields out so repeated runs are byte-identical.
    #[arg(long)]
    omit_timings: bool,
    #[arg(long)]
    report: PathBuf,
    /// Stage count vs log10 MSPE CSV.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    function: String,
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = match cli.command {
        Command::GenDesign(a) => gen_design(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Bounds(a) => bounds_cmd(a),
        Command::Bench(a) => bench_cmd(a, jobs),
        Command::Eval(a) => eval_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn gen_design(a: GenDesign) -> Result<ExitCode> {
    let scramble = if a.no_scramble {
        Scramble::None
    } else {
        Scramble::Owen { seed: a.seed }
    };
    let design = generate_net(a.base, a.m, a.s, scramble)?;
    let n = design.len();
    let stages = a.stages.unwrap_or_else(|| vec![n]);
    nest(design, &stages)?.write(&a.out)?;
    println!("wrote {n} points in {} stage(s) to {}", stages.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_values(path: &Path, nd: &NestedDesign) -> Result<Vec<f64>> {
    let d = nd.dim();
    let (rows, _) = read_numeric_csv(path, None)?;
    let n = nd.design().len();
    if rows.len() != n {
        return Err(Error::Argument(format!(
            "{}: {} value rows for {n} design points",
            path.display(),
            rows.len()
        )));
    }
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 1 {
        return Ok(rows.into_iter().map(|r| r[0]).collect());
    }
    if cols != d + 1 {
        return Err(Error::Argument(format!(
            "{}: expected {} columns (x1..x{d},y) or 1, found {cols}",
            path.display(),
            d + 1
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        let p = nd.design().point(i);
        if row[..d].iter().zip(p).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Argument(format!(
                "{} line {}: coordinates do not match design point {}",
                path.display(),
                i + 2,
                i + 1
            )));
        }
    }
    Ok(rows.into_iter().map(|r| r[d]).collect())
}

fn selection_spec(a: &FitArgs) -> SelectionSpec {
    let criterion = match a.select {
        Select::Loo => Criterion::Loo,
        Select::Kfold => Criterion::Kfold {
            folds: a.folds,
            seed: a.fold_seed,
        },
        Select::Ml => Criterion::Ml,
        Select::Reml => Criterion::Reml,
        Select::Sparsity | Select::Fixed => Criterion::FixedSparsity { budget: a.budget },
    };
    SelectionSpec {
        criterion,
        search: SearchSpec {
            lower: a.lower,
            upper: a.upper,
            grid_size: a.grid_size,
            refine_steps: a.refine_steps,
            tensor_grid: a.tensor_grid,
            anisotropic: !a.isotropic,
        },
    }
}

fn fit_cmd(a: FitArgs) -> Result<ExitCode> {
    let nd = NestedDesign::read(&a.design)?;
    let y = read_values(&a.values, &nd)?;
    let family: KernelFamily = a.kernel.parse()?;
    let base = Kernel::new(family, nd.dim())?;
    let schedule = match a.select {
        Select::Fixed => {
            let theta = a
                .theta
                .clone()
                .ok_or_else(|| Error::Argument("--select fixed needs --theta".into()))?;
            let per_stage: Vec<f64> = match theta.len() {
                1 => vec![theta[0]; nd.stages()],
                k if k == nd.stages() => theta,
                k => {
                    return Err(Error::Argument(format!(
                        "{k} --theta values for {} stages",
                        nd.stages()
                    )))
                }
            };
            let ks = per_stage
                .into_iter()
                .map(|t| RescaledKernel::new(base.clone(), Rescaling::Scalar(t)))
                .collect::<Result<Vec<_>>>()?;
            KernelSchedule::Explicit(ks)
        }
        _ => KernelSchedule::Selected {
            base,
            spec: selection_spec(&a),
        },
    };
    let opts = FitOptions {
        assembly: AssemblyOptions {
            mode: a.assembly.into(),
            ..AssemblyOptions::default()
        },
        solve: SolveOptions {
            tol: a.tol,
            jitter: a.jitter,
            ..SolveOptions::default()
        },
        reml: a.reml,
    };
    let mut model = fit(&nd, &y, &schedule, &opts)?;
    model.set_design_ref(a.design.display().to_string());
    model.save(&a.out)?;
    if let Some(t) = &a.trace {
        let text = serde_json::to_string_pretty(&model.meta().selection).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(t, text + "\n")?;
    }
    for (j, s) in model.stages().iter().enumerate() {
        println!(
            "stage {}: n = {}, rescale = {}, sigma2 = {:e}",
            j + 1,
            s.n,
            serde_json::to_string(&s.kernel.rescale).unwrap_or_default(),
            s.sigma2
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn predict_cmd(a: PredictArgs) -> Result<ExitCode> {
    let model = MultiStepModel::load(&a.model)?;
    let d = model.dim();
    let (rows, _) = read_numeric_csv(&a.points, None)?;
    if let Some(r) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Argument(format!(
            "{} line {}: expected {d} coordinates, found {}",
            a.points.display(),
            r + 2,
            rows[r].len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("mean".into());
    let out: Vec<Vec<f64>> = if a.variance {
        header.push("variance".into());
        let engine = model.variance_engine()?;
        rows.iter()
            .map(|r| {
                let p = engine.predict(r)?;
                let mut row = r.clone();
                row.push(p.mean);
                row.push(p.variance);
                Ok(row)
            })
            .collect::<Result<_>>()?
    } else {
        let mean = model.predict_batch(&flat)?;
        rows.iter()
            .zip(mean)
            .map(|(r, m)| {
                let mut row = r.clone();
                row.push(m);
                row
            })
            .collect()
    };
    write_numeric_csv(&a.out, &header, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn bounds_cmd(a: BoundsArgs) -> Result<ExitCode> {
    let model = MultiStepModel::load(&a.model)?;
    let inputs = BoundInputs {
        delta: a.delta,
        delta_a: a.delta_a,
        d_scale: a.d_scale,
        r: a.r,
        use_bounds: a.use_bounds,
    };
    let report = bound_report(&model, &inputs)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&a.report, text + "\n")?;
    match (&report.numeric_bound, &report.infeasible) {
        (Some(b), _) => println!("numeric bound {:e} ({} terms)", b.value, b.terms.len()),
        (None, Some(why)) => println!("numeric bound infeasible: {why}"),
        _ => {}
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_cmd(a: BenchArgs, jobs: usize) -> Result<ExitCode> {
    let mut config = match (&a.preset, &a.function) {
        (Some(p), _) => BenchConfig::preset(p, a.seed)?,
        (None, Some(f)) => {
            let function: TestFunction = f.parse()?;
            let d = function.dim();
            let mut c = BenchConfig::franke(function, a.seed);
            let base = a.base.unwrap_or(5);
            let m = a.m.unwrap_or(4);
            c.design = BenchDesign::Net { base, m, s: d, seed: a.seed };
            let n = (base as usize).pow(m);
            c.stage_sizes = vec![n];
            c
        }
        (None, None) => return Err(Error::Argument("bench needs --preset or --function".into())),
    };
    if a.preset.is_some() && (a.base.is_some() || a.m.is_some()) {
        if let BenchDesign::Net { base, m, s, seed } = config.design {
            let base = a.base.unwrap_or(base);
            let m = a.m.unwrap_or(m);
            config.design = BenchDesign::Net { base, m, s, seed };
            config.stage_sizes = vec![(base as usize).pow(m)];
        }
    }
    if let Some(s) = a.stages {
        config.stage_sizes = s;
    }
    if let Some(k) = &a.kernel {
        config.kernel = k.parse()?;
    }
    if let Some(sel) = a.select {
        let criterion = match sel {
            Select::Loo => Criterion::Loo,
            Select::Kfold => Criterion::Kfold { folds: 10, seed: 0 },
            Select::Ml => Criterion::Ml,
            Select::Reml => Criterion::Reml,
            Select::Sparsity | Select::Fixed => Criterion::FixedSparsity {
                budget: a.budget.unwrap_or(1e5),
            },
        };
        config.selection = BenchSelection::Criterion {
            spec: SelectionSpec::new(criterion),
        };
    } else if let (Some(b), BenchSelection::Criterion { spec }) = (a.budget, &mut config.selection) {
        if let Criterion::FixedSparsity { budget } = &mut spec.criterion {
            *budget = b;
        }
    }
    if let Some(t) = a.test_size {
        config.test_size = t;
    }
    if let Some(t) = a.test_seed {
        config.test_seed = t;
    }
    if let Some(m) = a.memory_budget {
        config.memory_budget = m;
    }
    config.stage_counts = a.stage_counts;
    config.bounds = !a.no_bounds;
    config.full_scale |= a.full_scale;
    config.report_path = Some(a.report.clone());
    config.plot_path = a.plot.clone();
    let mut report = run_bench(&config, jobs)?;
    if a.omit_timings {
        report = report.without_timings();
    }
    report.write_outputs(&config)?;
    for r in &report.runs {
        match (r.mspe, &r.error) {
            (Some(e), _) => println!("{} stage(s): MSPE {e:e}", r.stages),
            (None, Some(why)) => println!("{} stage(s): failed: {why}", r.stages),
            _ => {}
        }
    }
    if report.all_failed() {
        eprintln!("error: every fit failed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    let f: TestFunction = a.function.parse()?;
    println!("{}", f.eval(&a.point)?);
    Ok(ExitCode::SUCCESS)
}
