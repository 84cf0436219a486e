#![allow(dead_code)]

use fedherd::config::DEFAULT_SYNTH;
use fedherd::data::{synth_dataset, synth_test_dataset, PartitionCase, SynthSpec};
use fedherd::federation::ExperimentData;
use fedherd::models::LabelMap;
use fedherd::{DatasetSource, ExperimentConfig, ParamVector, Strategy};

/// Small synthetic problem: 10 classes x `per_class` samples in `dim` features.
pub fn small_spec(per_class: usize, dim: usize) -> SynthSpec {
    SynthSpec {
        classes: 10,
        per_class,
        dim,
        spread: 1.0,
    }
}

pub fn data_for(spec: &SynthSpec, seed: u64) -> ExperimentData {
    ExperimentData {
        train: synth_dataset(spec, seed).unwrap(),
        test: synth_test_dataset(spec, 20, seed).unwrap(),
        label_map: LabelMap::EvenOdd,
    }
}

pub fn config(strategy: Strategy, spec: SynthSpec) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        dataset: DatasetSource::Synth {
            spec,
            test_per_class: 20,
        },
        case: PartitionCase::Iid,
        clients: 5,
        batch: 10,
        rounds: 10,
        lr: 1e-3,
        threads: 1,
        ..ExperimentConfig::default()
    }
}

/// 10k-sample synthetic set, five label-sorted clients, alpha 0.5, 100 rounds.
pub fn reference_setup(strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        dataset: DatasetSource::Synth {
            spec: DEFAULT_SYNTH,
            test_per_class: 200,
        },
        case: PartitionCase::LabelSorted,
        clients: 5,
        batch: 100,
        epochs: 1.0,
        rounds: 100,
        alpha: 0.5,
        lr: 1e-4,
        ..ExperimentConfig::default()
    }
}

pub fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = b.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Weighted parameter average, accumulated left to right.
pub fn weighted_average(vectors: &[ParamVector], weights: &[f64]) -> ParamVector {
    let dim = vectors[0].len();
    let mut acc = vec![0.0; dim];
    for (v, p) in vectors.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += p * x;
        }
    }
    ParamVector::new(acc).unwrap()
}
