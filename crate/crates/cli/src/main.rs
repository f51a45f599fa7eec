use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scalegan_core::checkpoint;
use scalegan_core::config::{RunConfig, PRESETS};
use scalegan_core::oracle::{run_verification, VerifyOptions};
use scalegan_core::par::Execution;
use scalegan_core::sweep::{run_sweep, SweepOptions, SWEEPS};
use scalegan_core::trainer;
use scalegan_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "scalegan", version, about = "Scale-GAN toy experiments and theory checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its directory.
    Train(TrainArgs),
    /// Run a named parameter grid over several seeds.
    Sweep(SweepArgs),
    /// Run the optimal-discriminator invariant suite and print a JSON report.
    VerifyTheory(VerifyArgs),
    /// Continue a run from a checkpoint.
    Resume(ResumeArgs),
    /// Recompute metrics for a checkpoint.
    Eval(EvalArgs),
    /// List presets and sweeps.
    Presets,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override (dotted path or unique leaf name); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory (default: `$SCALEGAN_OUT/<name>/seed_<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    name: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Maximum concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Run grid points one after another on the calling thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// λ for the bias-bound checks.
    #[arg(long, default_value_t = 0.0027)]
    lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    /// Multiplies every tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// `check=value` tolerance override; repeatable.
    #[arg(long = "tolerance", value_name = "CHECK=VALUE")]
    tolerance: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances for the uniqueness scan.
    #[arg(long, default_value_t = 1000)]
    uniqueness_instances: usize,
    #[arg(long, default_value_t = 1_000_000)]
    scan_points: usize,
    #[arg(long, default_value_t = 10_000)]
    q_steps: usize,
    #[arg(long)]
    sequential: bool,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    checkpoint: PathBuf,
    /// Run directory to append to (default: the checkpoint's run directory).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Stop at this iteration (default: the configured budget).
    #[arg(long)]
    until: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn output_root() -> PathBuf {
    std::env::var_os("SCALEGAN_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Core(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Core(Error::Io { path: parent.into(), source: e }))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Core(Error::Io { path: path.into(), source: e }))
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let base = match (&a.preset, &a.config) {
        (_, Some(path)) => RunConfig::load(path)?,
        (Some(p), None) => RunConfig::preset(p)?,
        (None, None) => return Err(Failure::Usage("train needs --preset or --config".into())),
    };
    let mut cfg = base.with_overrides(&a.set)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let dir = a
        .out
        .unwrap_or_else(|| output_root().join(&cfg.name).join(format!("seed_{}", cfg.seed)));
    let sum = trainer::run(&cfg, &dir)?;
    if let Some(r) = sum.final_record() {
        println!(
            "{}: iter {} precision {:.4} recall {:.4} T {}",
            dir.display(),
            r.iteration,
            r.precision,
            r.recall,
            r.current_t
        );
    } else {
        println!("{}", dir.display());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let root = a.out.unwrap_or_else(|| output_root().join(format!("sweep_{}", a.name)));
    let opts = SweepOptions {
        seeds: a.seeds,
        overrides: a.set,
        jobs: a.jobs,
        execution: if a.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let rows = run_sweep(&a.name, &root, &opts)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{}: {} runs, {} failed",
        root.join("summary.csv").display(),
        rows.len(),
        failed
    );
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let mut opts = VerifyOptions {
        seed: a.seed,
        lambda: a.lambda,
        delta: a.delta,
        tolerance_scale: a.tolerance_scale,
        uniqueness_instances: a.uniqueness_instances,
        scan_points: a.scan_points,
        q_steps: a.q_steps,
        execution: if a.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        ..Default::default()
    };
    for t in &a.tolerance {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--tolerance expects CHECK=VALUE, got `{t}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("--tolerance value for `{k}` is not a number")))?;
        opts.tolerances.insert(k.to_string(), v);
    }
    let report = run_verification(&opts)?;
    let text = to_json(&report)?;
    println!("{text}");
    if let Some(path) = &a.out {
        write_text(path, &(text + "\n"))?;
    }
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("FAIL {}: measured {:e} vs tolerance {:e}", c.name, c.measured, c.tolerance);
    }
    if report.all_passed {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn resume(a: ResumeArgs) -> Result<(), Failure> {
    let dir = match a.run_dir {
        Some(d) => d,
        None => a
            .checkpoint
            .parent()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .ok_or_else(|| Failure::Usage("cannot infer run directory; pass --run-dir".into()))?,
    };
    let sum = trainer::resume(&a.checkpoint, &dir, &a.set, a.until)?;
    let last = sum.final_record().map(|r| r.iteration).unwrap_or_default();
    println!("{}: resumed, last evaluation at iter {last}", dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let overrides: Vec<String> = a.samples.map(|n| format!("eval.samples={n}")).into_iter().collect();
    let state = checkpoint::load_with_overrides(&a.checkpoint, &overrides)?;
    let rec = state.evaluate()?;
    println!("{}", to_json(&rec)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::VerifyTheory(a) => verify(a),
        Command::Resume(a) => resume(a),
        Command::Eval(a) => eval(a),
        Command::Presets => {
            println!("presets: {}", PRESETS.join(", "));
            println!("sweeps: {}", SWEEPS.join(", "));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalAbort { .. } => ExitCode::from(EXIT_NUMERICAL),
                _ => ExitCode::from(EXIT_CONFIG),
            }
        }
    }
}
