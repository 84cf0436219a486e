//! Per-round diagnostics: selection distance, drift and gradient-error probes,
//! and the global-gradient trend.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::numerics::ParamVector;
use crate::selection::{GradientBuffer, SelectionOutcome};

/// Everything recorded for one global round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// One-based round index `t`.
    pub round: usize,
    /// Global training loss of the aggregated model `w_{t+1}`.
    pub loss: f64,
    /// Test accuracy of `w_{t+1}`.
    pub accuracy: f64,
    /// Per-client selection distance; `None` when a client selected nothing.
    pub distance: Vec<Option<f64>>,
    /// Per-client selected buffer indices in selection order.
    pub selected: Vec<Vec<usize>>,
    /// Largest distance of any local iterate from `w_t` (probes only).
    pub delta: Option<f64>,
    /// Largest per-client batch-gradient variance at frozen `w_t` (probes only).
    pub sigma2: Option<f64>,
    /// Squared norm of the global gradient at `w_t` (probes only).
    pub grad_norm_sq: Option<f64>,
    /// Not persisted.
    pub wall_time: Duration,
}

/// `|g/k - mean(buffer)|`, with `k` the number of selected gradients.
pub fn distance_to_mean(g: &ParamVector, selected: usize, buf: &GradientBuffer) -> Result<f64> {
    if selected == 0 {
        return Err(Error::Logic(
            "selection distance of an empty selection".into(),
        ));
    }
    let mean = buf.mean()?;
    g.scaled(1.0 / selected as f64)?.sub(&mean)?.l2_norm()
}

pub fn selection_distance(outcome: &SelectionOutcome, buf: &GradientBuffer) -> Result<f64> {
    distance_to_mean(&outcome.g, outcome.selected(), buf)
}

/// Drift and gradient-error probes for one round.
///
/// `trajectories[i]` holds client `i`'s local iterates `w^1 .. w^tau`;
/// `frozen[i]` its batch gradients all evaluated at `w_t`. Returns
/// `(max_{i,l} |w_t - w^l|, max_i mean_l |grad_l - mean_l grad_l|^2)`.
pub fn probe_round(
    w_t: &ParamVector,
    trajectories: &[Vec<ParamVector>],
    frozen: &[Vec<ParamVector>],
) -> Result<(f64, f64)> {
    let mut delta = 0.0_f64;
    for iterate in trajectories.iter().flatten() {
        delta = delta.max(w_t.sub(iterate)?.l2_norm()?);
    }
    let mut sigma2 = 0.0_f64;
    for grads in frozen {
        if grads.is_empty() {
            continue;
        }
        let buf = GradientBuffer::new(grads.clone())?;
        let mean = buf.mean()?;
        let mut acc = 0.0;
        for g in grads {
            let d = g.sub(&mean)?.l2_norm()?;
            acc += d * d;
        }
        sigma2 = sigma2.max(acc / grads.len() as f64);
    }
    Ok((delta, sigma2))
}

/// `sum_i p_i * mean(frozen[i])`: the global gradient at the frozen weights.
pub fn global_gradient(frozen: &[Vec<ParamVector>], weights: &[f64]) -> Result<ParamVector> {
    if frozen.len() != weights.len() || frozen.is_empty() {
        return Err(Error::Aggregation(format!(
            "{} gradient sets for {} client weights",
            frozen.len(),
            weights.len()
        )));
    }
    let mut acc: Option<ParamVector> = None;
    for (grads, &p) in frozen.iter().zip(weights) {
        let mean = GradientBuffer::new(grads.clone())?.mean()?;
        match acc.as_mut() {
            None => acc = Some(mean.scaled(p)?),
            Some(a) => a.add_scaled(p, &mean)?,
        }
    }
    Ok(acc.expect("at least one client"))
}

/// Mean of a series over its first and second halves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrendSummary {
    pub first_half: f64,
    pub second_half: f64,
}

impl TrendSummary {
    pub fn decreasing(&self) -> bool {
        self.second_half < self.first_half
    }
}

pub const MIN_TREND_ROUNDS: usize = 20;

/// Half-means of a squared-gradient-norm series (at least 20 values).
pub fn trend_of(values: &[f64]) -> Result<TrendSummary> {
    if values.len() < MIN_TREND_ROUNDS {
        return Err(Error::InsufficientData(format!(
            "{} rounds recorded, need at least {MIN_TREND_ROUNDS}",
            values.len()
        )));
    }
    let mid = values.len() / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(TrendSummary {
        first_half: mean(&values[..mid]),
        second_half: mean(&values[mid..]),
    })
}

/// Half-means of `|grad F(w_t)|^2` over a run recorded with probes on.
pub fn grad_norm_trend(records: &[RoundRecord]) -> Result<TrendSummary> {
    let values: Vec<f64> = records.iter().filter_map(|r| r.grad_norm_sq).collect();
    if values.len() != records.len() {
        return Err(Error::InsufficientData(
            "global gradient norm missing from some rounds (enable probes)".into(),
        ));
    }
    trend_of(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{herding_order, select_all};
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn three() -> GradientBuffer {
        GradientBuffer::new(vec![pv(&[1.0, 0.0]), pv(&[-1.0, 0.0]), pv(&[0.0, 2.0])]).unwrap()
    }

    #[test]
    fn full_selection_has_no_distance() {
        let buf = three();
        let d = selection_distance(&select_all(&buf).unwrap(), &buf).unwrap();
        assert!(d <= 1e-12 * buf.mean().unwrap().l2_norm().unwrap());
    }

    #[test]
    fn identical_gradients_zero_distance() {
        let buf = GradientBuffer::new(vec![pv(&[0.3, -0.7]); 9]).unwrap();
        for alpha in [0.1, 0.5, 1.0] {
            let d = selection_distance(&herding_order(&buf, alpha).unwrap(), &buf).unwrap();
            assert!(d < 1e-15);
        }
    }

    #[test]
    fn hand_computed_distance() {
        let buf = three();
        let out = SelectionOutcome {
            order: vec![0, 1],
            g: pv(&[0.0, 0.0]),
            tau: 3,
        };
        let d = selection_distance(&out, &buf).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        assert!(distance_to_mean(&pv(&[0.0, 0.0]), 0, &buf).is_err());
    }

    #[test]
    fn probe_degenerate_cases() {
        let w = pv(&[1.0, 2.0]);
        let traj = vec![vec![w.clone(), w.clone()], vec![w.clone()]];
        let frozen = vec![vec![pv(&[0.5, 0.5])], vec![pv(&[3.0, -1.0])]];
        let (delta, sigma2) = probe_round(&w, &traj, &frozen).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(sigma2, 0.0);
    }

    #[test]
    fn probe_values() {
        let w = pv(&[0.0, 0.0]);
        let traj = vec![vec![w.clone(), pv(&[3.0, 4.0])], vec![pv(&[1.0, 0.0])]];
        let frozen = vec![
            vec![pv(&[1.0, 0.0]), pv(&[-1.0, 0.0])],
            vec![pv(&[2.0, 0.0]), pv(&[0.0, 0.0])],
        ];
        let (delta, sigma2) = probe_round(&w, &traj, &frozen).unwrap();
        assert_eq!(delta, 5.0);
        assert_eq!(sigma2, 1.0);
        let g = global_gradient(&frozen, &[0.5, 0.5]).unwrap();
        assert_eq!(g, pv(&[0.5, 0.0]));
    }

    #[test]
    fn trend_examples() {
        let flat = trend_of(&[2.0; 30]).unwrap();
        assert_eq!(flat.first_half, flat.second_half);
        let decay: Vec<f64> = (1..=40).map(|t| 1.0 / t as f64).collect();
        assert!(trend_of(&decay).unwrap().decreasing());
        assert!(matches!(
            trend_of(&[1.0; 19]),
            Err(Error::InsufficientData(_))
        ));
    }

    proptest! {
        #[test]
        fn distance_ignores_selection_order(
            seed in prop::collection::vec(-3.0f64..3.0, 12),
            mut picks in Just(vec![0usize, 3, 5]).prop_shuffle(),
        ) {
            let buf = GradientBuffer::new(seed.chunks(2).map(pv).collect()).unwrap();
            let mut sorted = picks.clone();
            sorted.sort_unstable();
            let g = ParamVector::sum_of(2, sorted.iter().map(|&i| &buf.grads()[i])).unwrap();
            let a = SelectionOutcome { order: sorted, g: g.clone(), tau: 6 };
            picks.rotate_left(1);
            let b = SelectionOutcome { order: picks, g, tau: 6 };
            prop_assert_eq!(
                selection_distance(&a, &buf).unwrap(),
                selection_distance(&b, &buf).unwrap()
            );
        }
    }
}
