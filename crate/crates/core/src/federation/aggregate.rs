//! Server-side update rules. Client contributions are always folded in
//! ascending client order.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::ParamVector;
use crate::selection::{GrabOutcome, GradientBuffer, SelectionOutcome};

fn check_counts(what: &str, got: usize, weights: &[f64]) -> Result<()> {
    if got != weights.len() || got == 0 {
        return Err(Error::Aggregation(format!(
            "{got} {what} for {} clients",
            weights.len()
        )));
    }
    Ok(())
}

/// `sum_i p_i * v_i`
fn weighted_sum<'a, I>(w_t: &ParamVector, items: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (f64, &'a ParamVector)>,
{
    let mut acc = ParamVector::zeros(w_t.len());
    for (p, v) in items {
        acc.add_scaled(p, v)?;
    }
    Ok(acc)
}

fn step(w_t: &ParamVector, scale: f64, direction: &ParamVector) -> Result<ParamVector> {
    let mut w = w_t.clone();
    w.add_scaled(-scale, direction)?;
    Ok(w)
}

/// `w_t - lr * sum_i p_i * sum(buffer_i)`
pub fn aggregate_fedavg(
    w_t: &ParamVector,
    buffers: &[GradientBuffer],
    weights: &[f64],
    lr: f64,
) -> Result<ParamVector> {
    check_counts("gradient buffers", buffers.len(), weights)?;
    let sums = buffers
        .iter()
        .map(GradientBuffer::sum)
        .collect::<Result<Vec<_>>>()?;
    let dir = weighted_sum(w_t, weights.iter().copied().zip(&sums))?;
    step(w_t, lr, &dir)
}

/// `w_t - lr * E / alpha * sum_i p_i * g_i` over herded selections.
pub fn aggregate_bherd(
    w_t: &ParamVector,
    outcomes: &[SelectionOutcome],
    weights: &[f64],
    lr: f64,
    alpha: f64,
    epochs: f64,
) -> Result<ParamVector> {
    check_counts("selection outcomes", outcomes.len(), weights)?;
    let dir = weighted_sum(
        w_t,
        weights.iter().copied().zip(outcomes.iter().map(|o| &o.g)),
    )?;
    step(w_t, lr * epochs / alpha, &dir)
}

/// Result of the online-selection aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct GrabStep {
    pub weights: ParamVector,
    /// `sum_i p_i * alpha_i`
    pub alpha_t: f64,
    /// True when nothing was selected anywhere and `w_t` was kept.
    pub skipped: bool,
}

/// `w_t - lr / alpha_t * sum_i p_i * g_i` with `alpha_t = sum_i p_i * alpha_i`.
/// A round where no client selected anything leaves the weights unchanged.
pub fn aggregate_grab(
    w_t: &ParamVector,
    outcomes: &[GrabOutcome],
    weights: &[f64],
    lr: f64,
) -> Result<GrabStep> {
    check_counts("selection outcomes", outcomes.len(), weights)?;
    let alpha_t: f64 = weights.iter().zip(outcomes).map(|(p, o)| p * o.alpha).sum();
    if alpha_t == 0.0 {
        warn!("no client selected a gradient this round; keeping the current weights");
        return Ok(GrabStep {
            weights: w_t.clone(),
            alpha_t,
            skipped: true,
        });
    }
    let dir = weighted_sum(
        w_t,
        weights.iter().copied().zip(outcomes.iter().map(|o| &o.g)),
    )?;
    Ok(GrabStep {
        weights: step(w_t, lr / alpha_t, &dir)?,
        alpha_t,
        skipped: false,
    })
}

/// One client's input to normalized averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct NovaContribution {
    /// Summed step directions.
    pub g: ParamVector,
    /// Number of directions summed into `g`.
    pub steps: usize,
}

/// Normalized averaging: `d_i = g_i / steps_i`, `tau_eff = sum_i p_i * steps_i`,
/// `w_t - lr * scale * tau_eff * sum_i p_i * d_i`.
///
/// `scale` is 1 for the plain rule and `E / alpha` when the contributions
/// come from herded selections.
pub fn aggregate_fednova(
    w_t: &ParamVector,
    contributions: &[NovaContribution],
    weights: &[f64],
    lr: f64,
    scale: f64,
) -> Result<ParamVector> {
    check_counts("contributions", contributions.len(), weights)?;
    if let Some(i) = contributions.iter().position(|c| c.steps == 0) {
        return Err(Error::config(
            "steps",
            0,
            format!(">= 1 (client {} contributed no steps)", i + 1),
        ));
    }
    let tau_eff: f64 = weights
        .iter()
        .zip(contributions)
        .map(|(p, c)| p * c.steps as f64)
        .sum();
    let mut dir = ParamVector::zeros(w_t.len());
    for (p, c) in weights.iter().zip(contributions) {
        dir.add_scaled(p / c.steps as f64, &c.g)?;
    }
    step(w_t, lr * scale * tau_eff, &dir)
}

/// `w_t + sum_i p_i * (w_i - w_t)`: averaging of local parameter deltas.
pub fn aggregate_deltas(
    w_t: &ParamVector,
    finals: &[ParamVector],
    weights: &[f64],
) -> Result<ParamVector> {
    check_counts("local models", finals.len(), weights)?;
    let mut acc = ParamVector::zeros(w_t.len());
    for (p, w) in weights.iter().zip(finals) {
        acc.add_scaled(*p, &w.sub(w_t)?)?;
    }
    let mut out = w_t.clone();
    out.add_scaled(1.0, &acc)?;
    Ok(out)
}

/// Client control-variate refresh:
/// `c_i + (w_t - w_final) / (tau * lr) - c`.
pub fn refresh_client_control(
    client_control: &ParamVector,
    server_control: &ParamVector,
    w_t: &ParamVector,
    w_final: &ParamVector,
    tau: usize,
    lr: f64,
) -> Result<ParamVector> {
    let mut c = client_control.clone();
    c.add_scaled(-1.0, server_control)?;
    c.add_scaled(1.0 / (tau as f64 * lr), &w_t.sub(w_final)?)?;
    Ok(c)
}

/// Server control-variate refresh: `c + (1/N) * sum_i (c_i_new - c_i_old)`.
pub fn refresh_server_control(
    server_control: &ParamVector,
    old: &[ParamVector],
    new: &[ParamVector],
) -> Result<ParamVector> {
    if old.len() != new.len() || old.is_empty() {
        return Err(Error::Aggregation(format!(
            "{} old and {} new client controls",
            old.len(),
            new.len()
        )));
    }
    let n = old.len() as f64;
    let mut c = server_control.clone();
    for (o, nw) in old.iter().zip(new) {
        c.add_scaled(1.0 / n, &nw.sub(o)?)?;
    }
    Ok(c)
}
