//! `cgclab` command-line front end.
//!
//! Exit codes: 0 ok, 1 i/o or internal failure, 2 bad config or input,
//! 3 degenerate training (more than half the epochs formed no clusters),
//! 4 runs that cannot be compared.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cgclab::centroids::ThresholdSchedule;
use cgclab::datagen::{generate, Dataset, DatasetSpec};
use cgclab::report::{self, compare_runs, load_run, write_comparison, write_run};
use cgclab::trainer::{train, Ablation, TrainConfig};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Lib(cgclab::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Incompatible(_) => 4,
            CliError::Lib(_) => 1,
        }
    }
}

impl From<cgclab::Error> for CliError {
    fn from(e: cgclab::Error) -> Self {
        use cgclab::Error as E;
        match e {
            E::Config(_) | E::Format { .. } | E::Json(_) | E::Split(_) => {
                CliError::Config(e.to_string())
            }
            E::Incompatible(_) => CliError::Incompatible(e.to_string()),
            other => CliError::Lib(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cgclab",
    version,
    about = "Confidence-guided clustering experiments",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run, or one run per value of a sweep.
    Train(Box<TrainArgs>),
    /// Merge run directories into comparison tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iters_per_epoch: Option<usize>,
    #[arg(long)]
    batch_identities: Option<usize>,
    #[arg(long)]
    batch_instances: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    /// One run per listed beta, e.g. `0,0.2,0.4,0.6,0.8,1`.
    #[arg(long, value_delimiter = ',', conflicts_with = "sweep_delta")]
    sweep_beta: Option<Vec<f64>>,
    /// Five runs: linear, dynamic and constant -0.1 / 0 / 0.1 thresholds.
    #[arg(long)]
    sweep_delta: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid {what} {}: {e}", path.display())))
}

fn cmd_generate(spec: &Path, out: &Path) -> Result<(), CliError> {
    let spec: DatasetSpec = read_json(spec, "spec")?;
    let ds = generate(&spec)?;
    ds.save_dir(out)?;
    println!("{}", ds.fingerprint());
    Ok(())
}

impl TrainArgs {
    fn base_config(&self) -> Result<TrainConfig, CliError> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_json(p, "config")?,
            None => TrainConfig::default(),
        };
        c = c.with_ablation(self.ablation);
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field { c.$field = v.clone(); }
            )*};
        }
        set!(
            seed,
            epochs,
            batch_identities,
            batch_instances,
            learning_rate,
            lr_decay_epochs,
            temperature,
            momentum,
            beta
        );
        if let Some(v) = self.iters_per_epoch {
            c.iters_per_epoch = Some(v);
        }
        if let Some(v) = self.eps {
            c.dbscan.eps = v;
        }
        if let Some(v) = self.min_pts {
            c.dbscan.min_pts = v;
        }
        Ok(c)
    }

    /// `(label, config)` for every run this invocation performs.
    fn plan(&self) -> Result<Vec<(String, TrainConfig)>, CliError> {
        let base = self.base_config()?;
        let runs = if let Some(betas) = &self.sweep_beta {
            betas
                .iter()
                .map(|&b| {
                    (
                        format!("beta_{b}"),
                        TrainConfig {
                            beta: b,
                            ..base.clone()
                        },
                    )
                })
                .collect()
        } else if self.sweep_delta {
            if !base.use_cgc {
                return Err(CliError::Config(format!(
                    "--sweep-delta needs an ablation with confidence-guided centroids, got {}",
                    self.ablation.name()
                )));
            }
            let linear = base.schedule;
            let t = base.epochs;
            [
                (
                    "linear",
                    ThresholdSchedule::linear(linear.delta0, linear.offset, t),
                ),
                ("dynamic", ThresholdSchedule::dynamic(linear.delta0, t)),
                ("constant_-0.1", ThresholdSchedule::constant(-0.1)),
                ("constant_0", ThresholdSchedule::constant(0.0)),
                ("constant_0.1", ThresholdSchedule::constant(0.1)),
            ]
            .into_iter()
            .map(|(name, schedule)| {
                (
                    format!("delta_{name}"),
                    TrainConfig {
                        schedule,
                        ..base.clone()
                    },
                )
            })
            .collect()
        } else {
            vec![(self.ablation.name().to_string(), base)]
        };
        for (_, c) in &runs {
            c.validate()?;
        }
        Ok(runs)
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let runs = args.plan()?;
    if !args.data.is_dir() {
        return Err(CliError::Config(format!(
            "dataset directory {} not found",
            args.data.display()
        )));
    }
    let dataset = Dataset::load_dir(&args.data)?;
    let single = runs.len() == 1;
    let results: Vec<Result<(String, PathBuf, usize, usize), CliError>> = runs
        .par_iter()
        .map(|(label, config)| {
            let dir = if single {
                args.out.clone()
            } else {
                args.out.join(label)
            };
            let outcome = train(&dataset, config)?;
            let manifest = write_run(&dir, label, &dataset, config, &outcome)?;
            let map = outcome.final_metrics().map_or(f64::NAN, |m| m.map);
            println!(
                "{label}\t{}\tmAP={map:.4}\t{}",
                manifest.run_id,
                dir.display()
            );
            Ok((
                label.clone(),
                dir,
                outcome.degenerate_epochs(),
                config.epochs,
            ))
        })
        .collect();
    let mut storms = Vec::new();
    for r in results {
        let (label, dir, degenerate, epochs) = r?;
        if 2 * degenerate > epochs {
            storms.push(format!(
                "{label} ({degenerate}/{epochs} epochs, {})",
                dir.display()
            ));
        }
    }
    if !storms.is_empty() {
        return Err(CliError::Degenerate(format!(
            "no clusters formed in most epochs: {}",
            storms.join(", ")
        )));
    }
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let records = runs
        .iter()
        .map(|d| {
            if d.join(report::MANIFEST_FILE).is_file() {
                Ok(load_run(d)?)
            } else {
                Err(CliError::Config(format!(
                    "{} is not a run directory",
                    d.display()
                )))
            }
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let cmp = compare_runs(&records)?;
    write_comparison(out, &cmp)?;
    println!("run\tablation\tbeta\tschedule\tmAP\ttop1\ttop5\ttop10");
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for r in &cmp.ablation {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.run,
            r.ablation,
            r.beta,
            r.schedule,
            f(r.map),
            f(r.top1),
            f(r.top5),
            f(r.top10)
        );
    }
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CGCLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "CGCLAB_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Generate { spec, out } => cmd_generate(spec, out),
        Command::Train(args) => cmd_train(args),
        Command::Report { runs, out } => cmd_report(runs, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
