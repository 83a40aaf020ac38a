use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unfoldcov::cli::{
    parse_methods, prepare_scenario, run_fits, run_scenario, write_inputs, RunConfig, RunReport,
};
use unfoldcov::covest::Method;
use unfoldcov::{Error, Result};

/// Regularized unfolding with nuisance parameters and covariance estimation.
#[derive(Parser)]
#[command(name = "unfoldcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every τ and estimate covariances with every selected method.
    Run(Flags),
    /// Write the nominal response, background and pseudo-data.
    GenResponse(Flags),
    /// Run the nominal fits only.
    Fit(Flags),
    /// Run the selected toy methods only.
    Toys(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run config file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods: inverse_hessian, frequentist_toys, hybrid_toys.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Pseudo-experiments per toy method.
    #[arg(long)]
    toys: Option<usize>,
}

impl Flags {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(threads) = self.threads {
            config.threads = Some(threads);
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(methods) = &self.methods {
            config.methods = parse_methods(methods)?;
        }
        if let Some(toys) = self.toys {
            config.toys = toys;
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_report(report: &RunReport) {
    for row in report.summary_rows() {
        println!(
            "{} tau={} {:<16} avg_sigma_rel={:.6} avg_rho={:.4} chi2/ndf={:.4} T={}",
            row.scenario, row.tau, row.method, row.avg_sigma_rel, row.avg_global_corr, row.chi2_ndf, row.t_used
        );
    }
    for d in &report.relative_differences {
        println!(
            "tau={} {} vs {}: mean |diagonal difference| {:.2}%",
            d.tau, d.method, d.baseline, d.mean_abs_diagonal
        );
    }
    println!("wrote {}", report.root.join("report.json").display());
}

fn execute(command: Command) -> Result<()> {
    let (flags, stage) = match &command {
        Command::Run(f) => (f, "run"),
        Command::GenResponse(f) => (f, "gen-response"),
        Command::Fit(f) => (f, "fit"),
        Command::Toys(f) => (f, "toys"),
    };
    let mut config = flags.load()?;
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match stage {
        "gen-response" => {
            let prepared = prepare_scenario(&config)?;
            for path in write_inputs(&config, &prepared)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        "fit" => {
            let prepared = prepare_scenario(&config)?;
            for (tau, fit) in run_fits(&config, &prepared)? {
                println!(
                    "tau={} phi={:.6} iterations={} mu_hat={:?} theta_hat={:?}",
                    tau.label, fit.phi_value, fit.n_iterations, fit.mu_hat, fit.theta_hat
                );
            }
            Ok(())
        }
        _ => {
            if stage == "toys" {
                config.methods.retain(|m| *m != Method::InverseHessian);
                if config.methods.is_empty() {
                    return Err(Error::Config("toys needs frequentist_toys or hybrid_toys".into()));
                }
            }
            print_report(&run_scenario(&config)?);
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
