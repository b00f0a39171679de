use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semicomp_cli::commands::{
    self, CompensateOptions, FitOptions, Outcome, PredictOptions, SimulateOptions, ValidateOptions,
};
use semicomp_cli::CliError;

#[derive(Parser)]
#[command(name = "semicomp")]
#[command(about = "Counterfactual restricted mean durations in lower rank, higher rank and retirement")]
#[command(version)]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Check a dataset against its sidecar; exits 1 if any invariant fails
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
    },

    /// Fit the promotion and retirement models and write model.json
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },

    /// Restricted mean durations with standard errors, plus state probability curves
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        /// Model from `fit`; refits the data when omitted
        #[arg(long)]
        model: Option<PathBuf>,
        /// Restriction window `tau0,tau1` (numbers or YYYY-MM-DD); defaults to the sidecar's
        #[arg(long)]
        window: Option<String>,
        /// Counterfactual assignment `column=value` (repeatable); `none` keeps observed covariates.
        /// Defaults to zeroing the protected column
        #[arg(long)]
        policy: Vec<String>,
        /// Only these subject ids (comma separated)
        #[arg(long, value_delimiter = ',')]
        subjects: Vec<String>,
        /// Report durations in months (30.4375 days)
        #[arg(long)]
        months: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },

    /// Compensatory damages from predicted durations and a pay schedule
    Compensate {
        /// means.csv from `predict`
        #[arg(long)]
        means: PathBuf,
        /// curves.csv from `predict` (required for a piecewise schedule)
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Pay schedule JSON
        #[arg(long)]
        schedule: PathBuf,
        /// Actual earnings CSV `subject_id,amount`
        #[arg(long)]
        actual: Option<PathBuf>,
        /// Outside estimates CSV `subject_id,amount` to compare against
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },

    /// Run a Monte Carlo study (the frailty-free reference design by default)
    Simulate {
        /// Study configuration JSON
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Subjects per replicate
        #[arg(long)]
        n: Option<usize>,
        /// Gamma frailty variance
        #[arg(long)]
        frailty: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },

    /// Write the bundled synthetic dataset and sidecar
    Example {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Regenerate from the generator instead of copying the bundled files
        #[arg(long, hide = true)]
        regenerate: bool,
    },
}

fn report(outcome: Outcome) {
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", outcome.summary.trim_end());
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let outcome = match cli.command {
        Commands::Validate { data, sidecar } => {
            let r = commands::validate(&ValidateOptions { data, sidecar })?;
            println!("{r}");
            return Ok(if r.is_valid() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Commands::Fit { data, sidecar, out_dir } => commands::fit(&FitOptions { data, sidecar, out_dir })?,
        Commands::Predict {
            data,
            sidecar,
            model,
            window,
            policy,
            subjects,
            months,
            out_dir,
        } => commands::predict(&PredictOptions {
            data,
            sidecar,
            model,
            window,
            policy,
            subjects,
            months,
            out_dir,
        })?,
        Commands::Compensate {
            means,
            curves,
            schedule,
            actual,
            compare,
            out_dir,
        } => commands::compensate(&CompensateOptions {
            means,
            curves,
            schedule,
            actual,
            compare,
            out_dir,
        })?,
        Commands::Simulate {
            config,
            replicates,
            n,
            frailty,
            seed,
            out_dir,
        } => commands::simulate(&SimulateOptions {
            config,
            replicates,
            n,
            frailty_variance: frailty,
            seed,
            out_dir,
        })?,
        Commands::Example { out_dir, regenerate } => {
            if regenerate {
                let (data, sidecar) = commands::generate_example()?;
                semicomp_cli::write_file(&out_dir.join(commands::EXAMPLE_DATA), data.as_bytes())?;
                semicomp_cli::write_file(&out_dir.join(commands::EXAMPLE_SIDECAR), sidecar.as_bytes())?;
                Outcome {
                    summary: format!("regenerated example in {}", out_dir.display()),
                    warnings: Vec::new(),
                }
            } else {
                commands::example(&out_dir)?
            }
        }
    };
    report(outcome);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
