use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xgbod::config::RunConfig;
use xgbod::data::{generate_synthetic, split_train_test, write_csv, Preset, SyntheticSpec, PRESETS};
use xgbod::detectors::build_grid;
use xgbod::eval::experiment::trial_seed;
use xgbod::eval::{run_experiment, ExperimentReport, Mode};
use xgbod::seed::derive_seed;
use xgbod::tos::{build_tos, write_roc_csv, write_scores_csv};
use xgbod::Error;

#[derive(Parser)]
#[command(name = "xgbod", version, about = "Outlier detection by boosting over transformed outlier scores")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset as CSV.
    Synth(SynthArgs),
    /// Export train/test TOS matrices for one dataset.
    Tos(TosArgs),
    /// Run Experiment I (exp1) or Experiment I plus the selection sweep (exp2).
    Experiment(ExperimentArgs),
    /// Print the text summary of a saved report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Named preset; see --list.
    #[arg(long, conflicts_with_all = ["n", "d", "fraction"])]
    preset: Option<String>,
    /// List presets and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Outlier fraction in (0, 0.5].
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Number of axes along which outliers are shifted (default: all).
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TosArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset name, required when the config lists several.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exp1,
    Exp2,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "exp1")]
    mode: ModeArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Path of a report.json written by `experiment`.
    #[arg(long)]
    render: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::SpecParse(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("error: cannot configure {w} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Tos(a) => tos(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn synth(a: SynthArgs) -> xgbod::Result<u8> {
    if a.list {
        for p in PRESETS {
            println!("{:<24} n={:<6} d={:<4} outliers={}", p.name, p.n, p.d, p.outliers);
        }
        return Ok(0);
    }
    let out = a.out.ok_or_else(|| Error::Config("synth: --out is required".into()))?;
    let ds = match &a.preset {
        Some(name) => Preset::by_name(name)
            .ok_or_else(|| Error::Config(format!("synth: unknown preset '{name}' (see --list)")))?
            .generate(a.seed)?,
        None => {
            let (Some(n), Some(d), Some(fraction)) = (a.n, a.d, a.fraction) else {
                return Err(Error::Config("synth: give --preset or all of --n, --d, --fraction".into()));
            };
            let spec = SyntheticSpec {
                n,
                d,
                outlier_fraction: fraction,
                separation: a.separation,
                informative_dims: a.informative.unwrap_or(d),
                seed: a.seed,
            };
            spec.validate().map_err(|e| Error::Config(format!("synth: {e}")))?;
            generate_synthetic(&spec, "synthetic")?
        }
    };
    write_csv(&ds, &out)?;
    let outliers = ds.n_outliers();
    println!(
        "{}: n={} d={} outliers={} ({:.1}%)",
        out.display(),
        ds.n_rows(),
        ds.n_features(),
        outliers,
        100.0 * outliers as f64 / ds.n_rows() as f64
    );
    Ok(0)
}

fn load_config(path: &Path, seed: Option<u64>) -> xgbod::Result<RunConfig> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        config.master_seed = s;
    }
    Ok(config)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn tos(a: TosArgs) -> xgbod::Result<u8> {
    let mut config = load_config(&a.config, a.seed)?;
    if let Some(name) = &a.dataset {
        config.datasets.retain(|d| &d.display_name() == name);
        if config.datasets.is_empty() {
            return Err(Error::Config(format!("tos: no dataset named '{name}' in the config")));
        }
    } else if config.datasets.len() > 1 {
        return Err(Error::Config("tos: the config lists several datasets; pick one with --dataset".into()));
    }
    let ds = config.datasets[0].load(&base_dir(&a.config), config.master_seed)?;
    let seed = trial_seed(config.master_seed, 0, ds.name());
    let (train, test) = split_train_test(&ds, config.train_fraction, derive_seed(seed, "split"))?;
    let specs = build_grid(&config.grid, derive_seed(seed, "grid"))?;
    let tos = build_tos(&specs, &train, &test)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_scores_csv(a.out.join("tos_train.csv"), tos.train_scores().view(), tos.specs())?;
    write_scores_csv(a.out.join("tos_test.csv"), tos.test_scores().view(), tos.specs())?;
    write_roc_csv(a.out.join("tos_roc.csv"), &tos)?;
    println!(
        "{}: {} TOS columns ({} skipped), {} train rows, {} test rows -> {}",
        ds.name(),
        tos.n_columns(),
        tos.skipped().len(),
        train.n_rows(),
        test.n_rows(),
        a.out.display()
    );
    Ok(0)
}

fn experiment(a: ExperimentArgs) -> xgbod::Result<u8> {
    let config = load_config(&a.config, a.seed)?;
    let out = a.out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let datasets = config.load_datasets(&base_dir(&a.config))?;
    let mode = match a.mode {
        ModeArg::Exp1 => Mode::Exp1,
        ModeArg::Exp2 => Mode::Exp2,
    };
    let report = run_experiment(&config, &datasets, mode)?;
    report.write_all(&out)?;
    print!("{}", report.render_summary());
    println!("wrote {}", out.display());
    Ok(if report.failures > 0 { 1 } else { 0 })
}

fn report(a: ReportArgs) -> xgbod::Result<u8> {
    let text = std::fs::read_to_string(&a.render).map_err(|e| Error::io(&a.render, e))?;
    let report = ExperimentReport::from_json(&text)?;
    let summary = report.render_summary();
    match a.out {
        Some(p) => std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))?,
        None => print!("{summary}"),
    }
    Ok(0)
}
