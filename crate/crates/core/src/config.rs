//! Experiment configuration: flat `key = value` text, validated on load.
//!
//! Command-line flags are turned into the same key/value pairs and applied
//! after the file, so flags win.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{PartitionCase, SynthSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    FedAvg,
    BHerd,
    Grab,
    FedNova,
    FedNovaBHerd,
    Scaffold,
    ScaffoldBHerd,
    /// Plain SGD on a single client holding the whole training set.
    Centralized,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::FedAvg,
        Strategy::BHerd,
        Strategy::Grab,
        Strategy::FedNova,
        Strategy::FedNovaBHerd,
        Strategy::Scaffold,
        Strategy::ScaffoldBHerd,
        Strategy::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::BHerd => "bherd",
            Strategy::Grab => "grab",
            Strategy::FedNova => "fednova",
            Strategy::FedNovaBHerd => "fednova-bherd",
            Strategy::Scaffold => "scaffold",
            Strategy::ScaffoldBHerd => "scaffold-bherd",
            Strategy::Centralized => "centralized",
        }
    }

    /// Whether local gradients go through greedy herding before aggregation.
    pub fn herds(self) -> bool {
        matches!(
            self,
            Strategy::BHerd | Strategy::FedNovaBHerd | Strategy::ScaffoldBHerd
        )
    }

    pub fn uses_control_variates(self) -> bool {
        matches!(self, Strategy::Scaffold | Strategy::ScaffoldBHerd)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::config("strategy", s, Strategy::ALL.map(Strategy::name).join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Directory holding the four standard IDX files.
    Mnist { dir: PathBuf },
    Synth {
        spec: SynthSpec,
        test_per_class: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub dataset: DatasetSource,
    pub case: PartitionCase,
    pub clients: usize,
    pub batch: usize,
    pub epochs: f64,
    pub rounds: usize,
    pub alpha: f64,
    pub lr: f64,
    pub rr: bool,
    pub lambda: f64,
    pub seed: u64,
    pub runs: usize,
    pub out: PathBuf,
    /// Record drift, gradient-error and global-gradient probes each round.
    pub probes: bool,
    /// Worker threads for client computation; 0 picks the machine default.
    pub threads: usize,
}

pub const DEFAULT_SYNTH: SynthSpec = SynthSpec {
    classes: 10,
    per_class: 1000,
    dim: 50,
    spread: 1.0,
};

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: Strategy::BHerd,
            dataset: DatasetSource::Mnist {
                dir: PathBuf::from("data/mnist"),
            },
            case: PartitionCase::Iid,
            clients: 5,
            batch: 100,
            epochs: 1.0,
            rounds: 500,
            alpha: 0.5,
            lr: 1e-4,
            rr: false,
            lambda: 0.0,
            seed: 0,
            runs: 1,
            out: PathBuf::from("out"),
            probes: false,
            threads: 0,
        }
    }
}

/// Keys accepted in config files and `--set`.
pub const KEYS: [&str; 23] = [
    "strategy",
    "model",
    "dataset",
    "mnist_dir",
    "synth_classes",
    "synth_per_class",
    "synth_dim",
    "synth_spread",
    "synth_test_per_class",
    "case",
    "clients",
    "batch",
    "epochs",
    "rounds",
    "alpha",
    "lr",
    "rr",
    "lambda",
    "seed",
    "runs",
    "out",
    "probes",
    "threads",
];

fn parse_num<T: FromStr>(key: &str, value: &str, allowed: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, value, allowed))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, value, "on, off")),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Builder state; synthetic parameters are kept even while `dataset = mnist`
/// so key order in a file does not matter.
#[derive(Clone, Debug)]
struct Draft {
    cfg: ExperimentConfig,
    use_synth: bool,
    mnist_dir: PathBuf,
    synth: SynthSpec,
    synth_test_per_class: usize,
}

impl Draft {
    fn from_config(cfg: &ExperimentConfig) -> Self {
        let (use_synth, mnist_dir, synth, synth_test_per_class) = match &cfg.dataset {
            DatasetSource::Mnist { dir } => (false, dir.clone(), DEFAULT_SYNTH, 200),
            DatasetSource::Synth {
                spec,
                test_per_class,
            } => (true, PathBuf::from("data/mnist"), *spec, *test_per_class),
        };
        Draft {
            cfg: cfg.clone(),
            use_synth,
            mnist_dir,
            synth,
            synth_test_per_class,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cfg;
        match key {
            "strategy" => c.strategy = value.parse()?,
            "model" => {
                if value != "svm" {
                    return Err(Error::config(key, value, "svm"));
                }
            }
            "dataset" => {
                self.use_synth = match value {
                    "mnist" => false,
                    "synth" => true,
                    _ => return Err(Error::config(key, value, "mnist, synth")),
                }
            }
            "mnist_dir" => self.mnist_dir = PathBuf::from(value),
            "synth_classes" => self.synth.classes = parse_num(key, value, "integer in 2..=256")?,
            "synth_per_class" => self.synth.per_class = parse_num(key, value, "integer >= 1")?,
            "synth_dim" => self.synth.dim = parse_num(key, value, "integer >= 1")?,
            "synth_spread" => self.synth.spread = parse_num(key, value, "real > 0")?,
            "synth_test_per_class" => {
                self.synth_test_per_class = parse_num(key, value, "integer >= 1")?
            }
            "case" => {
                let n: u8 = parse_num(key, value, "1, 2, 3")?;
                c.case = PartitionCase::from_number(n)
                    .ok_or_else(|| Error::config(key, value, "1, 2, 3"))?;
            }
            "clients" => c.clients = parse_num(key, value, "integer >= 1")?,
            "batch" => c.batch = parse_num(key, value, "integer >= 1")?,
            "epochs" => c.epochs = parse_num(key, value, "real > 0")?,
            "rounds" => c.rounds = parse_num(key, value, "integer >= 0")?,
            "alpha" => c.alpha = parse_num(key, value, "(0, 1]")?,
            "lr" => c.lr = parse_num(key, value, "real > 0")?,
            "rr" => c.rr = parse_switch(key, value)?,
            "lambda" => c.lambda = parse_num(key, value, "real >= 0")?,
            "seed" => c.seed = parse_num(key, value, "unsigned 64-bit integer")?,
            "runs" => c.runs = parse_num(key, value, "integer >= 1")?,
            "out" => c.out = PathBuf::from(value),
            "probes" => c.probes = parse_switch(key, value)?,
            "threads" => c.threads = parse_num(key, value, "integer >= 0")?,
            _ => {
                return Err(Error::config(
                    key,
                    value,
                    format!("known keys: {}", KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ExperimentConfig> {
        self.cfg.dataset = if self.use_synth {
            DatasetSource::Synth {
                spec: self.synth,
                test_per_class: self.synth_test_per_class,
            }
        } else {
            DatasetSource::Mnist {
                dir: self.mnist_dir,
            }
        };
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(&format!("line {}", lineno + 1), line, "`key = value`"))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl ExperimentConfig {
    /// Applies `pairs` in order on top of `self`, then validates.
    pub fn with_pairs<K, V>(&self, pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut draft = Draft::from_config(self);
        for (k, v) in pairs {
            draft.set(k.as_ref(), v.as_ref())?;
        }
        draft.finish()
    }

    /// Parses a config file body over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        ExperimentConfig::default().with_pairs(parse_pairs(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", self.alpha, "(0, 1]"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients", self.clients, "integer >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", self.batch, "integer >= 1"));
        }
        if !(self.epochs > 0.0 && self.epochs.is_finite()) {
            return Err(Error::config("epochs", self.epochs, "finite real > 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", self.lr, "finite real > 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", self.lambda, "finite real >= 0"));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", self.runs, "integer >= 1"));
        }
        if self.strategy == Strategy::Centralized && self.clients != 1 {
            return Err(Error::config(
                "clients",
                self.clients,
                "1 (centralized training uses a single client)",
            ));
        }
        if let DatasetSource::Synth {
            spec,
            test_per_class,
        } = &self.dataset
        {
            if spec.classes < 2 || spec.classes > 256 {
                return Err(Error::config("synth_classes", spec.classes, "2..=256"));
            }
            if spec.per_class == 0 {
                return Err(Error::config(
                    "synth_per_class",
                    spec.per_class,
                    "integer >= 1",
                ));
            }
            if spec.dim == 0 {
                return Err(Error::config("synth_dim", spec.dim, "integer >= 1"));
            }
            if !(spec.spread > 0.0 && spec.spread.is_finite()) {
                return Err(Error::config(
                    "synth_spread",
                    spec.spread,
                    "finite real > 0",
                ));
            }
            if *test_per_class == 0 {
                return Err(Error::config(
                    "synth_test_per_class",
                    test_per_class,
                    "integer >= 1",
                ));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` listing; parsing it back yields `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("strategy", self.strategy.to_string()),
            ("model", "svm".to_string()),
        ];
        match &self.dataset {
            DatasetSource::Mnist { dir } => {
                out.push(("dataset", "mnist".into()));
                out.push(("mnist_dir", dir.display().to_string()));
            }
            DatasetSource::Synth {
                spec,
                test_per_class,
            } => {
                out.push(("dataset", "synth".into()));
                out.push(("synth_classes", spec.classes.to_string()));
                out.push(("synth_per_class", spec.per_class.to_string()));
                out.push(("synth_dim", spec.dim.to_string()));
                out.push(("synth_spread", spec.spread.to_string()));
                out.push(("synth_test_per_class", test_per_class.to_string()));
            }
        }
        out.extend([
            ("case", self.case.number().to_string()),
            ("clients", self.clients.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("rounds", self.rounds.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lr", self.lr.to_string()),
            ("rr", switch(self.rr).to_string()),
            ("lambda", self.lambda.to_string()),
            ("seed", self.seed.to_string()),
            ("runs", self.runs.to_string()),
            ("out", self.out.display().to_string()),
            ("probes", switch(self.probes).to_string()),
            ("threads", self.threads.to_string()),
        ]);
        out
    }

    pub fn echo(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
