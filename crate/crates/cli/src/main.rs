use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use axnorm::characterization::{characterize, CharacterizationRecord, ErrorMoments};
use axnorm::network::NetworkDescriptor;
use axnorm::predictor::{lipschitz_bound_note, predict_network_with};
use axnorm::{Error, Result};
use axnorm_cli::config::{ModelArg, RunConfig};
use axnorm_cli::plotdata::{emit_plotdata, PlotInput};
use axnorm_cli::rank::{rank_multipliers, RankedMultiplierTable};
use axnorm_cli::sweep::{run_sweep, SweepResult};
use axnorm_cli::toy::{train_model, ToyContext};
use axnorm_cli::validate::validate_formula;

/// Error propagation from approximate multipliers through GEMM-based networks.
///
/// Every command writes CSV (numbers in shortest round-trip form) and JSON
/// into --out. Output bytes depend only on the configuration and seeds, not
/// on --threads. Rank correlations use average ranks for ties.
#[derive(Parser)]
#[command(name = "axnorm", version)]
struct Cli {
    /// JSON run configuration; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (and the sweep seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "axnorm-out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo error moments of one multiplier.
    Characterize {
        /// exact | mitchell | mbm:<0-15> | mbm-<bits> | normal:<mu>:<sigma>
        #[arg(long)]
        model: Option<ModelArg>,
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Closed-form distortion of a network for given error moments.
    Predict {
        #[arg(long, requires = "sigma", conflicts_with = "moments", allow_hyphen_values = true)]
        mu: Option<f64>,
        #[arg(long, requires = "mu", allow_hyphen_values = true)]
        sigma: Option<f64>,
        /// characterization.json written by `characterize`.
        #[arg(long)]
        moments: Option<PathBuf>,
        /// Network descriptor JSON; the toy CNN if omitted.
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Compare predicted and measured GEMM distortion (exit 1 on failure).
    Validate,
    /// Train the toy CNN and save it under <out>/model.
    Train,
    /// Accuracy and distortion over a (mu, sigma) grid on the toy CNN.
    Sweep {
        /// Saved model directory; trains from the config if omitted.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Rank multipliers by predicted distortion and measure them on the toy CNN.
    Rank {
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Surface CSVs and a manifest from a sweep.json or rank.json.
    Plotdata {
        #[arg(long)]
        input: PathBuf,
    },
}

fn write(path: PathBuf, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, body)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn timed<T>(phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    eprintln!("{phase}: {:.3}s", start.elapsed().as_secs_f64());
    out
}

fn toy_context(cfg: &RunConfig, model_dir: Option<PathBuf>) -> Result<ToyContext> {
    match model_dir.or_else(|| cfg.model_dir.clone()) {
        Some(dir) => timed("load model", || ToyContext::load(&dir, &cfg.toy)),
        None => timed("train model", || ToyContext::train(&cfg.toy)),
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Pass,
    ValidationFailed,
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.sweep.seeds = vec![seed];
    }
    let seed = cfg.seed;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::Characterize { model, samples } => {
            let model = model.map(|m| m.0).unwrap_or(cfg.characterize.model);
            let samples = samples.unwrap_or(cfg.characterize.samples);
            let dist = cfg.characterize.distribution.with_seed(seed);
            let moments = timed("characterize", || characterize(&model, &dist, samples))?;
            let rec = CharacterizationRecord::new(model, dist, moments);
            write(
                out.join("characterization.csv"),
                format!(
                    "model,mu,sigma,sample_count,mu_stderr,seed\n{},{:?},{:?},{},{:?},{}\n",
                    model.label(),
                    rec.mu,
                    rec.sigma,
                    rec.sample_count,
                    rec.mu_stderr,
                    rec.seed
                ),
            )?;
            write_json(out.join("characterization.json"), &rec)?;
        }
        Command::Predict {
            mu,
            sigma,
            moments,
            network,
        } => {
            let moments = match (mu, sigma, moments) {
                (Some(mu), Some(sigma), None) => ErrorMoments::known(mu, sigma)?,
                (None, None, Some(path)) => {
                    let rec: CharacterizationRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    rec.moments()?
                }
                _ => return Err(Error::Domain("give either --mu and --sigma or --moments".into())),
            };
            let net = match network {
                Some(path) => serde_json::from_str::<NetworkDescriptor>(&std::fs::read_to_string(path)?)?,
                None => cfg.prediction_network(),
            };
            let report = lipschitz_bound_note(predict_network_with(&net, &moments, cfg.inverse_view)?);
            println!("accumulated {:?} (capped inverse {:?})", report.accumulated, report.inverse_scaled);
            write(out.join("prediction.csv"), report.to_csv())?;
            write_json(out.join("prediction.json"), &report)?;
        }
        Command::Validate => {
            let v = &cfg.validate;
            let dims: Vec<_> = v.cases.iter().map(|c| c.dims).collect();
            let moments = v
                .cases
                .iter()
                .map(|c| ErrorMoments::known(c.mu, c.sigma))
                .collect::<Result<Vec<_>>>()?;
            let report = timed("validate", || validate_formula(&dims, &moments, v.trials, seed, v.tolerance))?;
            write(out.join("validation.csv"), report.to_csv())?;
            write_json(out.join("validation.json"), &report)?;
            let failed = report.rows.iter().filter(|r| !r.pass).count();
            println!("{} of {} cases within tolerance", report.rows.len() - failed, report.rows.len());
            if !report.pass {
                return Ok(Outcome::ValidationFailed);
            }
        }
        Command::Train => {
            let (model, eval) = timed("train", || train_model(&cfg.toy))?;
            let ctx = ToyContext::new(model, eval, cfg.toy.train.min_accuracy)?;
            ctx.model.save(out.join("model"))?;
            println!("exact accuracy on {} held-out items: {:?}", ctx.eval.len(), ctx.baseline_accuracy);
            eprintln!("wrote {}", out.join("model").display());
        }
        Command::Sweep { model_dir } => {
            let ctx = toy_context(&cfg, model_dir)?;
            let result = timed("sweep", || run_sweep(&ctx, &cfg.sweep))?;
            write(out.join("sweep.csv"), result.to_csv())?;
            write_json(out.join("sweep.json"), &result)?;
        }
        Command::Rank { model_dir } => {
            let ctx = toy_context(&cfg, model_dir)?;
            let r = &cfg.rank;
            let dist = r.distribution.with_seed(seed);
            let table = timed("rank", || rank_multipliers(&r.models, &dist, r.samples, &ctx, seed))?;
            write(out.join("rank.csv"), table.to_csv())?;
            write_json(out.join("rank.json"), &table)?;
        }
        Command::Plotdata { input } => plotdata(&cfg, &input, out)?,
    }
    Ok(Outcome::Pass)
}

fn plotdata(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    let dir = out.join("plot");
    #[derive(Serialize)]
    struct Manifest<'a, T: Serialize> {
        source: String,
        seeds: &'a [u64],
        result: &'a T,
        config: &'a RunConfig,
    }
    let source = input.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let files = if let Ok(sweep) = serde_json::from_str::<SweepResult>(&text) {
        let m = Manifest {
            source,
            seeds: &sweep.grid.seeds,
            result: &sweep.grid,
            config: cfg,
        };
        emit_plotdata(PlotInput::Sweep(&sweep), cfg.inverse_view, &m, &dir)?
    } else {
        let table: RankedMultiplierTable = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{} is neither a sweep nor a rank result: {e}", input.display())))?;
        let m = Manifest {
            source,
            seeds: &[cfg.seed],
            result: &table.rows.iter().map(|r| r.model).collect::<Vec<_>>(),
            config: cfg,
        };
        emit_plotdata(PlotInput::Rank(&table), cfg.inverse_view, &m, &dir)?
    };
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Domain(_) | Error::Dimension(_) | Error::Format(_) | Error::Json(_) | Error::Precondition(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
