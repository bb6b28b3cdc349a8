use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relay_vi::harness::{perfect_csi_path, run_experiment, write_outputs, ExperimentConfig, Preset};
use relay_vi::selftest;

#[derive(Parser)]
#[command(name = "relay-vi", version, about = "AF relay OFDM simulator with variational channel estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write per-iteration metrics as CSV.
    Simulate {
        /// JSON experiment description; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in system preset, used when no config file is given.
        #[arg(long, value_parser = ["dualhop", "threehop"])]
        preset: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        /// SNR in dB; repeat for several points.
        #[arg(long = "snr")]
        snr: Vec<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (stdout if omitted and the config has none).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> relay_vi::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            runs,
            snr,
            iters,
            seed,
            out,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, Some(p)) => ExperimentConfig::preset(p.parse::<Preset>()?),
                (None, None) => ExperimentConfig::default(),
            };
            if config.is_some() {
                if let Some(p) = &preset {
                    // a preset alongside a config replaces only the system description
                    let base = ExperimentConfig::preset(p.parse::<Preset>()?);
                    cfg.links = base.links;
                    cfg.kappa = base.kappa;
                }
            }
            if let Some(r) = runs {
                cfg.n_runs = r;
            }
            if !snr.is_empty() {
                cfg.snr_db = snr;
            }
            if let Some(i) = iters {
                cfg.n_iters = i;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = Some(o.to_string_lossy().into_owned());
            }
            cfg.validate()?;
            let result = run_experiment(&cfg)?;
            match &cfg.output {
                Some(path) => {
                    let path = PathBuf::from(path);
                    write_outputs(&result, &path)?;
                    eprintln!(
                        "wrote {} and {}",
                        path.display(),
                        perfect_csi_path(&path).display()
                    );
                }
                None => {
                    print!("{}", relay_vi::harness::metrics_csv(&result.records));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let report = selftest::run_all();
            for line in &report {
                println!("{line}");
            }
            Ok(if report.iter().all(|l| l.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
