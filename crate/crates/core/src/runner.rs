//! Multi-run driver and on-disk outputs.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.echo          resolved configuration, `key = value`
//! run_<k>/metrics.csv  one row per round for the run with seed `seed + k`
//! summary.csv          per-round mean and population std across runs
//! ```
//!
//! Numbers are written in shortest round-trip form, so every metrics row
//! parses back to the record that produced it. Wall-clock times are not
//! written, which keeps output trees byte-identical between repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{load_mnist_idx, synth_dataset, synth_test_dataset};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, ExperimentData};
use crate::metrics::RoundRecord;
use crate::models::LabelMap;

/// Loads or generates the train/test sets for a run seed.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentData> {
    let (train, test) = match &cfg.dataset {
        DatasetSource::Mnist { dir } => (
            load_mnist_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?,
            load_mnist_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?,
        ),
        DatasetSource::Synth {
            spec,
            test_per_class,
        } => (
            synth_dataset(spec, seed)?,
            synth_test_dataset(spec, *test_per_class, seed)?,
        ),
    };
    Ok(ExperimentData {
        train,
        test,
        label_map: LabelMap::EvenOdd,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join_indices(ix: &[usize]) -> String {
    ix.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn metrics_header(clients: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "loss".into(), "accuracy".into()];
    h.extend((1..=clients).map(|i| format!("distance_{i}")));
    h.extend(["delta_t".into(), "sigma2".into(), "grad_norm_sq".into()]);
    h.extend((1..=clients).map(|i| format!("selected_{i}")));
    h
}

/// Writes per-round records; the header always announces `clients` columns.
pub fn write_metrics(path: &Path, clients: usize, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(clients))?;
    for r in records {
        if r.distance.len() != clients || r.selected.len() != clients {
            return Err(Error::Logic(format!(
                "round {} carries {} distances for {clients} clients",
                r.round,
                r.distance.len()
            )));
        }
        let mut row = vec![
            r.round.to_string(),
            r.loss.to_string(),
            r.accuracy.to_string(),
        ];
        row.extend(r.distance.iter().map(|d| opt(*d)));
        row.extend([opt(r.delta), opt(r.sigma2), opt(r.grad_norm_sq)]);
        row.extend(r.selected.iter().map(|s| join_indices(s)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        file: path.display().to_string(),
        field,
        detail: detail.into(),
    }
}

fn parse_opt(path: &Path, field: &'static str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| bad(path, field, format!("not a number: {s}")))
}

fn parse_f64(path: &Path, field: &'static str, s: &str) -> Result<f64> {
    parse_opt(path, field, s)?.ok_or_else(|| bad(path, field, "missing value"))
}

/// Reads a metrics file back; returns the client count and the records.
pub fn read_metrics(path: &Path) -> Result<(usize, Vec<RoundRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let clients = header.iter().filter(|h| h.starts_with("distance_")).count();
    let expected = metrics_header(clients);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(
            path,
            "header",
            format!("expected {}", expected.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let round = cell(0)
            .parse()
            .map_err(|_| bad(path, "t", format!("not a round index: {}", cell(0))))?;
        let distance = (0..clients)
            .map(|i| parse_opt(path, "distance", cell(3 + i)))
            .collect::<Result<Vec<_>>>()?;
        let base = 3 + clients;
        let selected = (0..clients)
            .map(|i| {
                let s = cell(base + 3 + i);
                if s.is_empty() {
                    return Ok(Vec::new());
                }
                s.split(';')
                    .map(|x| {
                        x.parse()
                            .map_err(|_| bad(path, "selected", format!("bad index {x}")))
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(RoundRecord {
            round,
            loss: parse_f64(path, "loss", cell(1))?,
            accuracy: parse_f64(path, "accuracy", cell(2))?,
            distance,
            selected,
            delta: parse_opt(path, "delta_t", cell(base))?,
            sigma2: parse_opt(path, "sigma2", cell(base + 1))?,
            grad_norm_sq: parse_opt(path, "grad_norm_sq", cell(base + 2))?,
            wall_time: Duration::ZERO,
        });
    }
    Ok((clients, records))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub round: usize,
    pub loss: MeanStd,
    pub accuracy: MeanStd,
    /// Per client; `None` where no run produced a distance.
    pub distance: Vec<Option<MeanStd>>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub runs: usize,
    pub rows: Vec<SummaryRow>,
    pub wall_time: Duration,
}

/// Aggregates equally long record streams, one per run.
pub fn summarize(runs: &[Vec<RoundRecord>], clients: usize) -> Result<Vec<SummaryRow>> {
    let rounds = runs.first().map_or(0, Vec::len);
    if runs.iter().any(|r| r.len() != rounds) {
        return Err(Error::Logic("runs recorded different round counts".into()));
    }
    let mut rows = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let at: Vec<&RoundRecord> = runs.iter().map(|r| &r[t]).collect();
        let loss: Vec<f64> = at.iter().map(|r| r.loss).collect();
        let acc: Vec<f64> = at.iter().map(|r| r.accuracy).collect();
        let distance = (0..clients)
            .map(|i| {
                let d: Vec<f64> = at
                    .iter()
                    .filter_map(|r| r.distance.get(i).copied().flatten())
                    .collect();
                MeanStd::of(&d)
            })
            .collect();
        rows.push(SummaryRow {
            round: at[0].round,
            loss: MeanStd::of(&loss).expect("at least one run"),
            accuracy: MeanStd::of(&acc).expect("at least one run"),
            distance,
        });
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, clients: usize, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "t".to_string(),
        "loss_mean".into(),
        "loss_std".into(),
        "accuracy_mean".into(),
        "accuracy_std".into(),
    ];
    for i in 1..=clients {
        header.push(format!("distance_{i}_mean"));
        header.push(format!("distance_{i}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.round.to_string(),
            r.loss.mean.to_string(),
            r.loss.std.to_string(),
            r.accuracy.mean.to_string(),
            r.accuracy.std.to_string(),
        ];
        for d in &r.distance {
            row.push(opt(d.map(|m| m.mean)));
            row.push(opt(d.map(|m| m.std)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("run_{k}"))
}

/// Executes `cfg.runs` runs with seeds `seed, seed + 1, ...` and writes all outputs.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.echo"), cfg.echo())?;

    let mut all = Vec::with_capacity(cfg.runs);
    for k in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(k as u64);
        let run_cfg = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let wrap = |e: Error| Error::InRun {
            run: k,
            source: Box::new(e),
        };
        let data = load_data(&run_cfg, seed).map_err(wrap)?;
        let result = run_experiment(&run_cfg, &data).map_err(wrap)?;
        let dir = run_dir(&cfg.out, k);
        fs::create_dir_all(&dir)?;
        write_metrics(&dir.join("metrics.csv"), cfg.clients, &result.records)?;
        if let Some(last) = result.records.last() {
            info!(
                "run {k} (seed {seed}): round {} loss {:.6} accuracy {:.4}",
                last.round, last.loss, last.accuracy
            );
        }
        all.push(result.records);
    }

    let rows = summarize(&all, cfg.clients)?;
    write_summary(&cfg.out.join("summary.csv"), cfg.clients, &rows)?;
    Ok(RunSummary {
        config: cfg.clone(),
        runs: cfg.runs,
        rows,
        wall_time: started.elapsed(),
    })
}
