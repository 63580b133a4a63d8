use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mu_estimate::config::ExperimentConfig;
use mu_estimate::experiment::{self, FIGURES};
use mu_estimate::{Error, ErrorClass, Execution};

#[derive(Parser)]
#[command(
    name = "mu-estimate",
    version,
    about = "Estimate source-condition smoothness from Landweber traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Override noise.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override landweber.iters
    #[arg(long)]
    iters: Option<usize>,
    /// Override noise.level (relative)
    #[arg(long)]
    noise: Option<f64>,
    /// Run everything on the calling thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one config; writes the trace CSV and JSON report
    Estimate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reproduce a canonical figure's data (or `all`)
    Figures {
        name: String,
        out_dir: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Predicted vs observed Tikhonov rates, one row per config
    TikhonovTable {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Spectral summability test of the configured data
    SvdCheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &Path, o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.noise.seed = s;
    }
    if let Some(k) = o.iters {
        cfg.landweber.iters = k;
    }
    if let Some(l) = o.noise {
        cfg.noise.level = l;
    }
    if o.sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exec_for(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v:.6}"))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Estimate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let report = experiment::run_estimate(&cfg)?;
            println!(
                "mu_hat={} c_hat={} window={} verdict={}",
                fmt_opt(report["mu_hat"].as_f64()),
                fmt_opt(report["c_hat"].as_f64()),
                report["window"],
                report["verdict"].as_str().unwrap_or("?"),
            );
            println!("trace:  {}", cfg.resolve(&cfg.output.trace).display());
            println!("report: {}", cfg.resolve(&cfg.output.report).display());
        }
        Command::Figures {
            name,
            out_dir,
            sequential,
        } => {
            let names: Vec<&str> = if name == "all" {
                FIGURES.to_vec()
            } else {
                vec![name.as_str()]
            };
            let mut first_err = None;
            for res in experiment::run_figures(&names, &out_dir, exec_for(sequential)) {
                match res {
                    Ok(f) => println!(
                        "{}: mu_hat={} verdict={} -> {}, {}",
                        f.name,
                        fmt_opt(f.report["mu_hat"].as_f64()),
                        f.report["verdict"].as_str().unwrap_or("?"),
                        f.track_csv.display(),
                        f.bounds_csv.display()
                    ),
                    Err(e) => {
                        eprintln!("error: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::TikhonovTable {
            configs,
            out,
            overrides,
        } => {
            let cfgs = configs
                .iter()
                .map(|p| load(p, &overrides))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = experiment::tikhonov_table(&cfgs, exec_for(overrides.sequential));
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path)?;
                    experiment::write_tikhonov_table(f, &rows)?;
                    println!("table: {}", path.display());
                }
                None => experiment::write_tikhonov_table(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::SvdCheck { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let report = experiment::svd_check(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
