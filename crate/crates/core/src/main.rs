use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use fedherd::{runner, Error, ExperimentConfig};

/// Run federated training experiments and write per-round metrics.
#[derive(Debug, Parser)]
#[command(name = "fedherd", version)]
struct Cli {
    /// Config file with `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fedavg, bherd, grab, fednova, fednova-bherd, scaffold, scaffold-bherd, centralized
    #[arg(long)]
    strategy: Option<String>,
    /// Data distribution: 1 IID, 2 label-sorted, 3 mixed
    #[arg(long)]
    case: Option<String>,
    /// Fraction of local gradients kept by herding, in (0, 1]
    #[arg(long)]
    alpha: Option<String>,
    /// Local epochs per round
    #[arg(long)]
    epochs: Option<String>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<String>,
    /// Number of clients
    #[arg(long)]
    clients: Option<String>,
    /// Global rounds
    #[arg(long)]
    rounds: Option<String>,
    /// Learning rate
    #[arg(long)]
    lr: Option<String>,
    /// Reshuffle local batches every round: on or off
    #[arg(long)]
    rr: Option<String>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// mnist or synth
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with the four MNIST IDX files
    #[arg(long = "mnist-dir")]
    mnist_dir: Option<String>,
    /// L2 regularization strength
    #[arg(long)]
    lambda: Option<String>,
    /// Record drift and gradient-error probes: on or off
    #[arg(long)]
    probes: Option<String>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<String>,
    /// Any config key, as KEY=VALUE (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Cli {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>, Error> {
        let named = [
            ("strategy", &self.strategy),
            ("case", &self.case),
            ("alpha", &self.alpha),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("clients", &self.clients),
            ("rounds", &self.rounds),
            ("lr", &self.lr),
            ("rr", &self.rr),
            ("runs", &self.runs),
            ("seed", &self.seed),
            ("out", &self.out),
            ("dataset", &self.dataset),
            ("mnist_dir", &self.mnist_dir),
            ("lambda", &self.lambda),
            ("probes", &self.probes),
            ("threads", &self.threads),
        ];
        let mut pairs: Vec<(String, String)> = named
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                key: "--set".into(),
                value: kv.clone(),
                allowed: "KEY=VALUE".into(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        base.with_pairs(self.flag_pairs()?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = cli.resolve().and_then(|cfg| runner::run(&cfg));
    match outcome {
        Ok(summary) => {
            println!(
                "{} run(s) of {} rounds written to {} in {:.2?}",
                summary.runs,
                summary.rows.len(),
                summary.config.out.display(),
                summary.wall_time
            );
            if let Some(last) = summary.rows.last() {
                println!(
                    "final round {}: loss {:.6} ± {:.6}, accuracy {:.4} ± {:.4}",
                    last.round,
                    last.loss.mean,
                    last.loss.std,
                    last.accuracy.mean,
                    last.accuracy.std
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
