use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use groupfair::baselines::RegularizerConfig;
use groupfair::data::{load_configured, train_test_split, DatasetConfig};
use groupfair::eta::{self, FitConfig};
use groupfair::frontier::{self, ConstraintKind, FrontierConfig, Method, NuGrid};
use groupfair::groups::SchemeKind;
use groupfair::solver::{DualRule, SolverConfig, StepRule};
use groupfair::theory::theory_report;

#[derive(Parser, Debug)]
#[command(
    name = "groupfair",
    version,
    about = "Group-fair classification with overlapping groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every method across a slack grid and write a frontier CSV.
    Frontier(FrontierArgs),
    /// Summarize a frontier CSV.
    Report(ReportArgs),
    /// Check the exact results on the three-attribute example.
    VerifyTheory(TheoryArgs),
    /// Fit the class-probability model and save it as text.
    FitEta(FitEtaArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SchemeArg {
    Unrestricted,
    Independent,
    Intersectional,
    Gerrymandering,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ConstraintArg {
    Dp,
    Eo,
    DpWeighted,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Plugin,
    Werm,
    Regularizer,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DualArg {
    Projected,
    Exponentiated,
}

#[derive(Args, Debug)]
struct FrontierArgs {
    #[arg(long)]
    data_config: PathBuf,
    #[arg(long, value_enum, default_value = "independent")]
    scheme: SchemeArg,
    /// Attribute index used by the unrestricted scheme.
    #[arg(long, default_value_t = 0)]
    attribute: usize,
    #[arg(long, value_enum, default_value = "dp")]
    constraint: ConstraintArg,
    /// Repeat or comma-separate; defaults to all three.
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<MethodArg>,
    /// `lo:hi:count`, log-spaced.
    #[arg(long, default_value = "0.001:1:20")]
    nu_grid: NuGrid,
    #[arg(long = "B", default_value_t = 50.0)]
    bound: f64,
    #[arg(long = "T", default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Fixed dual step size.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Use the step 1/(B√T) instead of `--step`.
    #[arg(long)]
    inverse_sqrt_step: bool,
    #[arg(long, value_enum, default_value = "projected")]
    dual: DualArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write one solver trace CSV per cell here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Frontier CSV written by `frontier`.
    input: PathBuf,
    /// Summary table destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Long-format CSV; defaults to `<input>.long.csv`.
    #[arg(long)]
    long_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `theory_report.txt` and `theory_cells.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitEtaArgs {
    #[arg(long)]
    data_config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long)]
    out: PathBuf,
}

fn scheme_kind(arg: SchemeArg, attribute: usize) -> SchemeKind {
    match arg {
        SchemeArg::Unrestricted => SchemeKind::Unrestricted(attribute),
        SchemeArg::Independent => SchemeKind::Independent,
        SchemeArg::Intersectional => SchemeKind::Intersectional,
        SchemeArg::Gerrymandering => SchemeKind::Gerrymandering,
    }
}

fn run_frontier(args: FrontierArgs) -> Result<()> {
    let data = DatasetConfig::load(&args.data_config)
        .with_context(|| format!("reading {}", args.data_config.display()))?;
    let methods = if args.method.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.method
            .iter()
            .map(|m| match m {
                MethodArg::Plugin => Method::Plugin,
                MethodArg::Werm => Method::Werm,
                MethodArg::Regularizer => Method::Regularizer,
            })
            .collect()
    };
    let step = if args.inverse_sqrt_step {
        StepRule::InverseSqrt
    } else {
        StepRule::Fixed(args.step)
    };
    let cfg = FrontierConfig {
        data,
        scheme: scheme_kind(args.scheme, args.attribute),
        constraint: match args.constraint {
            ConstraintArg::Dp => ConstraintKind::Dp,
            ConstraintArg::Eo => ConstraintKind::Eo,
            ConstraintArg::DpWeighted => ConstraintKind::DpWeighted,
        },
        methods,
        grid: args.nu_grid,
        solver: SolverConfig {
            iterations: args.iterations,
            bound: args.bound,
            buffer: args.eps,
            step,
            dual: match args.dual {
                DualArg::Projected => DualRule::ProjectedGradient,
                DualArg::Exponentiated => DualRule::ExponentiatedGradient,
            },
            seed: args.seed,
            ..SolverConfig::default()
        },
        regularizer: RegularizerConfig {
            seed: args.seed,
            ..RegularizerConfig::default()
        },
        trace_dir: args.trace_dir,
    };
    let run = frontier::run_frontier(&cfg, &args.out)?;
    let failed = run.rows.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{}: {} cells computed, {} reused, {} failed rows -> {}",
        cfg.data.name,
        run.computed,
        run.reused,
        failed,
        args.out.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn run_report(args: ReportArgs) -> Result<()> {
    let report = frontier::report_file(&args.input)
        .with_context(|| format!("summarizing {}", args.input.display()))?;
    let text = report.render();
    match &args.out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    let long = args
        .long_out
        .unwrap_or_else(|| with_suffix(&args.input, ".long.csv"));
    report.write_long_csv(BufWriter::new(File::create(&long)?))?;
    info!("long-format table written to {}", long.display());
    Ok(())
}

fn run_theory(args: TheoryArgs) -> Result<bool> {
    let report = theory_report(args.trials, args.seed)?;
    let text = report.render();
    print!("{text}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("theory_report.txt"), &text)?;
        report.write_decisions_csv(&dir.join("theory_cells.csv"))?;
    }
    Ok(report.checks().iter().all(|c| c.passed))
}

fn run_fit_eta(args: FitEtaArgs) -> Result<()> {
    let cfg = DatasetConfig::load(&args.data_config)
        .with_context(|| format!("reading {}", args.data_config.display()))?;
    let loaded = load_configured(&cfg)?;
    let (train, test) = train_test_split(&loaded.dataset, cfg.split.test_fraction, cfg.split.seed)?;
    let fit_cfg = FitConfig {
        learning_rate: args.learning_rate,
        iterations: args.iterations,
        l2: args.l2,
        seed: args.seed,
    };
    let model = eta::fit(&train, &fit_cfg)?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        let probs = model.predict_dataset(ds)?;
        let hits = probs
            .iter()
            .zip(ds.labels())
            .filter(|(p, &y)| groupfair::matrix::argmax(p) == y)
            .count();
        let nll = probs
            .iter()
            .zip(ds.labels())
            .map(|(p, &y)| -p[y].max(1e-300).ln())
            .sum::<f64>()
            / ds.len() as f64;
        println!(
            "{name}: n={} accuracy {:.4} log-loss {:.4}",
            ds.len(),
            hits as f64 / ds.len() as f64,
            nll
        );
    }
    model.save(&args.out)?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Frontier(a) => run_frontier(a).map(|_| true),
        Command::Report(a) => run_report(a).map(|_| true),
        Command::VerifyTheory(a) => run_theory(a),
        Command::FitEta(a) => run_fit_eta(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some theory checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
