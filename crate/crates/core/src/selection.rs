//! Ordering and subset selection over a client's per-step gradients.
//!
//! [`herding_order`] is the offline greedy herding pass: center every gradient
//! on the buffer mean, then repeatedly take the unused gradient that keeps the
//! running centered sum smallest. [`GrabSelector`] is the online sign-balancing
//! pass, which centers against a running mean and keeps a gradient only when
//! adding it shrinks the balance vector.

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Raw gradients of one local round, in the order they were computed.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    grads: Vec<ParamVector>,
}

impl GradientBuffer {
    pub fn new(grads: Vec<ParamVector>) -> Result<Self> {
        if let Some(first) = grads.first() {
            for g in &grads[1..] {
                first.check_dim(g)?;
            }
        }
        Ok(GradientBuffer { grads })
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads.first().map_or(0, ParamVector::len)
    }

    pub fn grads(&self) -> &[ParamVector] {
        &self.grads
    }

    /// Sum of every gradient, in buffer order.
    pub fn sum(&self) -> Result<ParamVector> {
        ParamVector::sum_of(self.dim(), &self.grads)
    }

    /// Buffer mean.
    pub fn mean(&self) -> Result<ParamVector> {
        if self.is_empty() {
            return Err(Error::Logic("mean of an empty gradient buffer".into()));
        }
        self.sum()?.scaled(1.0 / self.len() as f64)
    }
}

/// Result of selecting a subset of a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    /// Chosen buffer indices in selection order.
    pub order: Vec<usize>,
    /// Sum of the chosen raw gradients, accumulated in ascending buffer index.
    pub g: ParamVector,
    /// Buffer length the selection was drawn from.
    pub tau: usize,
}

impl SelectionOutcome {
    pub fn selected(&self) -> usize {
        self.order.len()
    }

    pub fn fraction(&self) -> f64 {
        self.order.len() as f64 / self.tau as f64
    }
}

/// `clamp(round(alpha * tau), 1, tau)` with half-away-from-zero rounding.
pub fn selection_count(alpha: f64, tau: usize) -> usize {
    ((alpha * tau as f64).round() as usize).clamp(1, tau.max(1))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("alpha", alpha, "(0, 1]"))
    }
}

fn sum_in_index_order(buf: &GradientBuffer, order: &[usize]) -> Result<ParamVector> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    ParamVector::sum_of(buf.dim(), sorted.iter().map(|&i| &buf.grads[i]))
}

/// Greedy herding selection of `clamp(round(alpha * tau), 1, tau)` gradients.
///
/// Ties in the argmin go to the lowest buffer index.
pub fn herding_order(buf: &GradientBuffer, alpha: f64) -> Result<SelectionOutcome> {
    check_alpha(alpha)?;
    if buf.is_empty() {
        return Err(Error::Logic("herding over an empty gradient buffer".into()));
    }
    let tau = buf.len();
    let dim = buf.dim();
    let k = selection_count(alpha, tau);

    let mean = buf.mean()?;
    let centered: Vec<Vec<f64>> = buf
        .grads
        .iter()
        .map(|g| {
            g.as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(a, m)| a - m)
                .collect()
        })
        .collect();

    let mut running = vec![0.0; dim];
    let mut used = vec![false; tau];
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (idx, z) in centered.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let cost: f64 = running
                .iter()
                .zip(z)
                .map(|(s, zi)| (s + zi) * (s + zi))
                .sum();
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((idx, cost));
            }
        }
        let (pick, _) = best.expect("k <= tau leaves a candidate");
        used[pick] = true;
        for (s, zi) in running.iter_mut().zip(&centered[pick]) {
            *s += zi;
        }
        order.push(pick);
    }

    let g = sum_in_index_order(buf, &order)?;
    Ok(SelectionOutcome { order, g, tau })
}

/// Keeps every gradient, in buffer order.
pub fn select_all(buf: &GradientBuffer) -> Result<SelectionOutcome> {
    if buf.is_empty() {
        return Err(Error::Logic(
            "selection over an empty gradient buffer".into(),
        ));
    }
    Ok(SelectionOutcome {
        order: (0..buf.len()).collect(),
        g: buf.sum()?,
        tau: buf.len(),
    })
}

/// Online sign-balancing selector for a stream of `tau` gradients.
#[derive(Clone, Debug)]
pub struct GrabSelector {
    tau: usize,
    seen: usize,
    mean: ParamVector,
    balance: ParamVector,
    g: ParamVector,
    selected: Vec<usize>,
}

/// What the online selector produced for one local round.
#[derive(Clone, Debug, PartialEq)]
pub struct GrabOutcome {
    pub g: ParamVector,
    /// Selected fraction `selected / tau`.
    pub alpha: f64,
    /// Stream positions that were kept, ascending.
    pub selected: Vec<usize>,
    pub tau: usize,
}

impl GrabSelector {
    pub fn new(tau: usize, dim: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Logic("online selection needs tau >= 1".into()));
        }
        Ok(GrabSelector {
            tau,
            seen: 0,
            mean: ParamVector::zeros(dim),
            balance: ParamVector::zeros(dim),
            g: ParamVector::zeros(dim),
            selected: Vec::new(),
        })
    }

    /// Feeds the next gradient; returns whether it was selected.
    pub fn push(&mut self, grad: &ParamVector) -> Result<bool> {
        if self.seen == self.tau {
            return Err(Error::Logic(format!(
                "online selector received more than the declared {} gradients",
                self.tau
            )));
        }
        let tau = self.tau as f64;
        let share =
            ParamVector::from_vec_unchecked(grad.as_slice().iter().map(|x| x / tau).collect());
        self.mean.add_scaled(1.0, &share)?;
        let centered = grad.sub(&self.mean)?;
        let mut plus = self.balance.clone();
        plus.add_scaled(1.0, &centered)?;
        let mut minus = self.balance.clone();
        minus.add_scaled(-1.0, &centered)?;
        let take = plus.norm_sq().sqrt() < minus.norm_sq().sqrt();
        if take {
            self.balance = plus;
            self.g.add_scaled(1.0, grad)?;
            self.selected.push(self.seen);
        } else {
            self.balance = minus;
        }
        self.seen += 1;
        Ok(take)
    }

    pub fn finish(self) -> Result<GrabOutcome> {
        if self.seen != self.tau {
            return Err(Error::Logic(format!(
                "online selector saw {} of {} gradients",
                self.seen, self.tau
            )));
        }
        Ok(GrabOutcome {
            alpha: self.selected.len() as f64 / self.tau as f64,
            g: self.g,
            selected: self.selected,
            tau: self.tau,
        })
    }
}

/// Runs [`GrabSelector`] over a complete stream of `tau` gradients.
pub fn grab_select<'a, I>(stream: I, tau: usize) -> Result<GrabOutcome>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut it = stream.into_iter().peekable();
    let dim = it.peek().map_or(0, |g| g.len());
    let mut sel = GrabSelector::new(tau, dim)?;
    for g in it {
        sel.push(g)?;
    }
    sel.finish()
}
