//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Every experiment uses the 10k-sample synthetic data set.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fedherd::data::{PartitionCase, SynthSpec};
use fedherd::federation::{run_experiment, Federation};
use fedherd::metrics::{grad_norm_trend, RoundRecord};
use fedherd::models::{svm_loss_grad, Batch, SvmModel};
use fedherd::numerics::{Purpose, RngStream};
use fedherd::runner::{self, load_data};
use fedherd::selection::{grab_select, herding_order, GradientBuffer};
use fedherd::{DatasetSource, ExperimentConfig, ParamVector, Strategy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(v: Verdict, elapsed: Duration, budget: Option<Duration>) -> Verdict {
    match budget {
        Some(b) if elapsed > b => verdict(false, format!("{}; over the {:?} budget", v.detail, b)),
        _ => v,
    }
}

fn records(cfg: &ExperimentConfig, seed: u64) -> Vec<RoundRecord> {
    let cfg = ExperimentConfig {
        seed,
        ..cfg.clone()
    };
    let data = load_data(&cfg, seed).unwrap();
    run_experiment(&cfg, &data).unwrap().records
}

fn final_loss(cfg: &ExperimentConfig, seed: u64) -> f64 {
    records(cfg, seed).last().unwrap().loss
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> ParamVector {
    ParamVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn parameter_average_identity() -> Verdict {
    let spec = small_spec(100, 20);
    let cases = [
        PartitionCase::Iid,
        PartitionCase::LabelSorted,
        PartitionCase::Mixed,
    ];
    let mut rng = RngStream::new(1, Purpose::Test, 0, 0).rng();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let seed = rng.random_range(0..1000);
        let data = data_for(&spec, seed);
        let cfg = ExperimentConfig {
            alpha: 1.0,
            epochs: 1.0,
            clients: [1, 3, 5][i % 3],
            case: cases[(i / 3) % 3],
            seed,
            ..config(Strategy::BHerd, spec)
        };
        let mut fed = Federation::new(&cfg, &data).unwrap();
        let p = fed.client_weights();
        let target = rng.random_range(1..=5);
        for _ in 1..target {
            fed.step().unwrap();
        }
        let out = fed.step().unwrap();
        let finals: Vec<ParamVector> = out
            .clients
            .iter()
            .map(|c| c.local.final_weights.clone())
            .collect();
        worst = worst.max(rel_err(
            &fed.global().weights,
            &weighted_average(&finals, &p),
        ));
    }
    verdict(
        worst <= 1e-10,
        format!("max relative error {worst:.2e} over 20 rounds"),
    )
}

fn full_herding_matches_fedavg() -> Verdict {
    let base = ExperimentConfig {
        rounds: 50,
        threads: 1,
        ..reference_setup(Strategy::FedAvg)
    };
    let herd = ExperimentConfig {
        strategy: Strategy::BHerd,
        alpha: 1.0,
        ..base.clone()
    };
    let data = load_data(&base, base.seed).unwrap();
    let mut a = Federation::new(&base, &data).unwrap();
    let mut b = Federation::new(&herd, &data).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..base.rounds {
        a.step().unwrap();
        b.step().unwrap();
        worst = worst.max(rel_err(&b.global().weights, &a.global().weights));
    }
    verdict(
        worst <= 1e-6,
        format!("max relative weight difference {worst:.2e} over 50 rounds"),
    )
}

fn herding_checks() -> Verdict {
    let mut rng = RngStream::new(3, Purpose::Test, 0, 0).rng();

    // (a) every greedy step picks a minimizer among the remaining candidates
    let mut greedy_ok = true;
    for _ in 0..100 {
        let tau = rng.random_range(1..=50);
        let dim = rng.random_range(1..=20);
        let alpha = rng.random_range(0.05..=1.0);
        let grads: Vec<ParamVector> = (0..tau).map(|_| random_vector(&mut rng, dim)).collect();
        let buf = GradientBuffer::new(grads.clone()).unwrap();
        let order = herding_order(&buf, alpha).unwrap().order;
        let mut mu = vec![0.0; dim];
        for g in &grads {
            for (m, x) in mu.iter_mut().zip(g.as_slice()) {
                *m += x / tau as f64;
            }
        }
        let z: Vec<Vec<f64>> = grads
            .iter()
            .map(|g| g.as_slice().iter().zip(&mu).map(|(x, m)| x - m).collect())
            .collect();
        let norm_with = |s: &[f64], j: usize| {
            s.iter()
                .zip(&z[j])
                .map(|(a, b)| (a + b) * (a + b))
                .sum::<f64>()
                .sqrt()
        };
        let mut s = vec![0.0; dim];
        let mut left: Vec<usize> = (0..tau).collect();
        for &pick in &order {
            let best = left
                .iter()
                .map(|&j| norm_with(&s, j))
                .fold(f64::INFINITY, f64::min);
            if !left.contains(&pick) || norm_with(&s, pick) > best + 1e-12 * (1.0 + best) {
                greedy_ok = false;
            }
            left.retain(|&j| j != pick);
            for (a, b) in s.iter_mut().zip(&z[pick]) {
                *a += b;
            }
        }
    }

    // (b) the full centered sum vanishes
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let tau = rng.random_range(1..=50);
        let dim = rng.random_range(1..=20);
        let grads: Vec<ParamVector> = (0..tau).map(|_| random_vector(&mut rng, dim)).collect();
        let buf = GradientBuffer::new(grads).unwrap();
        let out = herding_order(&buf, 1.0).unwrap();
        let mu = buf.mean().unwrap();
        let mut s = vec![0.0; dim];
        let mut total = 0.0;
        for &i in &out.order {
            let z = buf.grads()[i].sub(&mu).unwrap();
            total += z.l2_norm().unwrap();
            for (a, b) in s.iter_mut().zip(z.as_slice()) {
                *a += b;
            }
        }
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if total > 0.0 {
            worst_ratio = worst_ratio.max(norm / total);
        }
    }

    // (c) selected counts over a grid
    let mut count_ok = true;
    for tau in 1..=60usize {
        let grads: Vec<ParamVector> = (0..tau).map(|_| random_vector(&mut rng, 3)).collect();
        let buf = GradientBuffer::new(grads).unwrap();
        for alpha in [0.01, 0.1, 0.25, 0.3, 1.0 / 3.0, 0.5, 0.75, 0.9, 1.0] {
            let want = ((alpha * tau as f64).round() as usize).clamp(1, tau);
            if herding_order(&buf, alpha).unwrap().order.len() != want {
                count_ok = false;
            }
        }
    }

    verdict(
        greedy_ok && worst_ratio <= 1e-9 && count_ok,
        format!(
            "greedy steps optimal: {greedy_ok}; max centered-sum ratio {worst_ratio:.2e}; counts match: {count_ok}"
        ),
    )
}

fn gradient_matches_finite_differences() -> Verdict {
    let mut rng = RngStream::new(4, Purpose::Test, 0, 0).rng();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let features = rng.random_range(1..=20);
        let n = rng.random_range(1..=16);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..features).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let batch = Batch::new(rows.iter().map(Vec::as_slice).collect(), targets).unwrap();
        let lambda = if draw % 2 == 0 { 0.0 } else { 0.1 };
        let w = random_vector(&mut rng, features + 1);
        let (_, grad) = svm_loss_grad(&SvmModel::new(w.clone(), lambda), &batch).unwrap();
        for j in 0..=features {
            let shifted = |d: f64| {
                let mut v = w.clone().into_inner();
                v[j] += d;
                let m = SvmModel::new(ParamVector::new(v).unwrap(), lambda);
                svm_loss_grad(&m, &batch).unwrap().0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = grad.as_slice()[j];
            worst = worst.max((fd - g).abs() / g.abs().max(1e-3));
        }
    }
    verdict(
        worst <= 1e-5,
        format!("max per-coordinate relative error {worst:.2e} on 20 draws"),
    )
}

fn herding_beats_fedavg_non_iid() -> Verdict {
    let herd = reference_setup(Strategy::BHerd);
    let avg = reference_setup(Strategy::FedAvg);
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..SEEDS {
        let (a, b) = (final_loss(&herd, seed), final_loss(&avg, seed));
        if a <= b {
            wins += 1;
        }
        gaps.push(format!("{:+.1e}", a - b));
    }
    verdict(
        wins >= 8,
        format!(
            "BHerd final loss <= FedAvg in {wins}/10 seeds (differences {})",
            gaps.join(" ")
        ),
    )
}

fn alpha_ordering() -> Verdict {
    let at = |alpha: f64| ExperimentConfig {
        alpha,
        ..reference_setup(Strategy::BHerd)
    };
    let mut good = 0;
    for seed in 0..SEEDS {
        let low = final_loss(&at(0.1), seed);
        let mid = final_loss(&at(0.5), seed);
        let full = final_loss(&at(1.0), seed);
        if mid <= full && low > mid.max(full) {
            good += 1;
        }
    }
    verdict(good >= 8, format!("ordering holds in {good}/10 seeds"))
}

fn distance_decays() -> Verdict {
    let mut per_case = Vec::new();
    let mut pass = true;
    for case in [PartitionCase::Iid, PartitionCase::LabelSorted] {
        let cfg = ExperimentConfig {
            case,
            ..reference_setup(Strategy::BHerd)
        };
        let mut good = 0;
        for seed in 0..SEEDS {
            let recs = records(&cfg, seed);
            let window = recs.len() / 10;
            let mean = |rs: &[RoundRecord], i: usize| {
                rs.iter().map(|r| r.distance[i].unwrap()).sum::<f64>() / rs.len() as f64
            };
            let decays = (0..cfg.clients)
                .all(|i| mean(&recs[recs.len() - window..], i) < mean(&recs[..window], i));
            if decays {
                good += 1;
            }
        }
        pass &= good >= 8;
        per_case.push(format!("case {}: {good}/10 seeds", case.number()));
    }
    verdict(
        pass,
        format!("every client's distance decays in {}", per_case.join(", ")),
    )
}

fn reshuffling_insensitive() -> Verdict {
    let off = ExperimentConfig {
        case: PartitionCase::Iid,
        ..reference_setup(Strategy::BHerd)
    };
    let on = ExperimentConfig {
        rr: true,
        ..off.clone()
    };
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let a = records(&on, seed).last().unwrap().accuracy;
        let b = records(&off, seed).last().unwrap().accuracy;
        worst = worst.max((a - b).abs());
        if (a - b).abs() < 0.02 {
            good += 1;
        }
    }
    verdict(
        good >= 8,
        format!(
            "accuracy gap < 2 pp in {good}/10 seeds (max {:.2} pp)",
            worst * 100.0
        ),
    )
}

fn gradient_norm_trend() -> Verdict {
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Synth {
            spec: SynthSpec {
                spread: 0.1,
                ..fedherd::config::DEFAULT_SYNTH
            },
            test_per_class: 200,
        },
        rounds: 200,
        probes: true,
        ..reference_setup(Strategy::BHerd)
    };
    let mut good = 0;
    for seed in 0..SEEDS {
        if grad_norm_trend(&records(&cfg, seed)).unwrap().decreasing() {
            good += 1;
        }
    }
    verdict(
        good == 10,
        format!("second-half mean below first-half mean in {good}/10 seeds"),
    )
}

/// Second transcription of the online balancing rule, on plain vectors.
fn online_balance_reference(stream: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>, f64) {
    let tau = stream.len();
    let dim = stream[0].len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut mu = vec![0.0; dim];
    let mut s = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut kept = Vec::new();
    for (lambda, grad) in stream.iter().enumerate() {
        for j in 0..dim {
            mu[j] += grad[j] / tau as f64;
        }
        let z: Vec<f64> = (0..dim).map(|j| grad[j] - mu[j]).collect();
        let plus: Vec<f64> = (0..dim).map(|j| s[j] + z[j]).collect();
        let minus: Vec<f64> = (0..dim).map(|j| s[j] - z[j]).collect();
        if norm(&plus) < norm(&minus) {
            s = plus;
            for j in 0..dim {
                g[j] += grad[j];
            }
            kept.push(lambda);
        } else {
            s = minus;
        }
    }
    let alpha = kept.len() as f64 / tau as f64;
    (g, kept, alpha)
}

fn online_balance_transcription() -> Verdict {
    let mut rng = RngStream::new(10, Purpose::Test, 0, 0).rng();
    let mut mismatches = 0;
    for _ in 0..50 {
        let tau = rng.random_range(1..=60);
        let dim = rng.random_range(1..=16);
        let stream: Vec<ParamVector> = (0..tau).map(|_| random_vector(&mut rng, dim)).collect();
        let plain: Vec<Vec<f64>> = stream.iter().map(|v| v.as_slice().to_vec()).collect();
        let got = grab_select(&stream, tau).unwrap();
        let (g, kept, alpha) = online_balance_reference(&plain);
        if got.selected != kept || got.alpha != alpha || got.g.as_slice() != &g[..] {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{} of 50 streams match exactly", 50 - mismatches),
    )
}

fn thread_count_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for strategy in [
        Strategy::BHerd,
        Strategy::Grab,
        Strategy::ScaffoldBHerd,
        Strategy::FedNovaBHerd,
    ] {
        let run = |threads: usize| {
            let out = dir.path().join(format!("{strategy}-{threads}"));
            let cfg = ExperimentConfig {
                rounds: 20,
                runs: 2,
                seed: 5,
                probes: true,
                case: PartitionCase::Mixed,
                threads,
                out: out.clone(),
                ..reference_setup(strategy)
            };
            runner::run(&cfg).unwrap();
            out
        };
        let (a, b) = (run(1), run(2));
        for file in ["run_0/metrics.csv", "run_1/metrics.csv", "summary.csv"] {
            if fs::read(a.join(file)).unwrap() != fs::read(b.join(file)).unwrap() {
                differing.push(format!("{strategy}/{file}"));
            }
        }
    }
    let detail = if differing.is_empty() {
        "all CSVs byte-identical with 1 and 2 worker threads".to_string()
    } else {
        format!("differing: {}", differing.join(", "))
    };
    verdict(differing.is_empty(), detail)
}

type Check = fn() -> Verdict;

fn main() -> ExitCode {
    let criteria: [(usize, &str, Check, Option<u64>); 11] = [
        (
            1,
            "full selection equals parameter averaging",
            parameter_average_identity,
            Some(10),
        ),
        (
            2,
            "full selection reduces to FedAvg",
            full_herding_matches_fedavg,
            Some(30),
        ),
        (3, "herding correctness", herding_checks, Some(10)),
        (
            4,
            "squared-hinge gradient",
            gradient_matches_finite_differences,
            Some(5),
        ),
        (
            5,
            "non-IID advantage over FedAvg",
            herding_beats_fedavg_non_iid,
            Some(300),
        ),
        (6, "alpha ordering", alpha_ordering, None),
        (7, "selection distance decays", distance_decays, None),
        (
            8,
            "reshuffling has little effect",
            reshuffling_insensitive,
            None,
        ),
        (
            9,
            "global gradient norm trends down",
            gradient_norm_trend,
            None,
        ),
        (
            10,
            "online balancing transcription",
            online_balance_transcription,
            Some(5),
        ),
        (
            11,
            "determinism across thread counts",
            thread_count_determinism,
            None,
        ),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let v = check();
        let elapsed = started.elapsed();
        let v = within_budget(v, elapsed, budget.map(Duration::from_secs));
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {}  {name}: {} ({:.1?})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
