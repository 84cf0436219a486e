use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{svm_loss_grad, Batch, LabelMap, SvmModel};
use crate::numerics::ParamVector;
use crate::selection::GradientBuffer;

/// Weights whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Output of one client's local SGD pass.
#[derive(Clone, Debug)]
pub struct LocalRun {
    /// Step directions in iteration order: raw gradients, or corrected
    /// directions when a control-variate correction is applied.
    pub buffer: GradientBuffer,
    /// `w^{tau+1}`.
    pub final_weights: ParamVector,
    /// `w^1 .. w^tau`, the points where gradients were taken, when requested.
    pub trajectory: Option<Vec<ParamVector>>,
}

/// Runs local SGD for one client over a fixed dataset and label mapping.
#[derive(Clone, Copy, Debug)]
pub struct LocalTrainer<'a> {
    pub dataset: &'a Dataset,
    pub label_map: LabelMap,
    pub lr: f64,
    pub lambda: f64,
}

impl LocalTrainer<'_> {
    pub fn gradient(&self, weights: &ParamVector, batch: &[usize]) -> Result<ParamVector> {
        let model = SvmModel::new(weights.clone(), self.lambda);
        let b = Batch::from_indices(self.dataset, batch, self.label_map);
        Ok(svm_loss_grad(&model, &b)?.1)
    }

    /// `w^{l+1} = w^l - lr * d_l` for each batch, starting at `w_t`, where
    /// `d_l` is the batch gradient plus `correction` when given.
    ///
    /// `round` and `client` are one-based and only label errors.
    pub fn run(
        &self,
        w_t: &ParamVector,
        batches: &[Vec<usize>],
        correction: Option<&ParamVector>,
        keep_trajectory: bool,
        round: usize,
        client: usize,
    ) -> Result<LocalRun> {
        if batches.is_empty() {
            return Err(Error::Round {
                round,
                client,
                step: 0,
                detail: "no local batches".into(),
            });
        }
        let ctx = |step: usize, e: Error| Error::Round {
            round,
            client,
            step,
            detail: e.to_string(),
        };
        let mut w = w_t.clone();
        let mut grads = Vec::with_capacity(batches.len());
        let mut trajectory = keep_trajectory.then(|| Vec::with_capacity(batches.len()));
        for (l, batch) in batches.iter().enumerate() {
            let step = l + 1;
            if let Some(t) = trajectory.as_mut() {
                t.push(w.clone());
            }
            let mut dir = self.gradient(&w, batch).map_err(|e| ctx(step, e))?;
            if let Some(c) = correction {
                dir.add_scaled(1.0, c).map_err(|e| ctx(step, e))?;
            }
            w.add_scaled(-self.lr, &dir).map_err(|e| ctx(step, e))?;
            let norm = w.norm_sq().sqrt();
            if norm.is_nan() || norm > DIVERGENCE_NORM {
                return Err(ctx(
                    step,
                    Error::Logic(format!("local weights diverged (norm {norm:e})")),
                ));
            }
            grads.push(dir);
        }
        Ok(LocalRun {
            buffer: GradientBuffer::new(grads)?,
            final_weights: w,
            trajectory,
        })
    }
}
