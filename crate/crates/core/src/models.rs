//! Linear SVM with squared hinge loss.
//!
//! Parameters are `f + 1` long; the last entry multiplies a constant-1
//! feature and acts as the bias. With `lambda > 0` the bias is regularized
//! together with the weights.

use crate::data::{Dataset, DatasetShard};
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Maps a class label to a binary target in `{-1, +1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMap {
    /// Even classes are `+1`, odd classes `-1`.
    EvenOdd,
    /// The given class is `+1`, everything else `-1`.
    OneVsRest(u8),
}

impl LabelMap {
    pub fn target(self, label: u8) -> f64 {
        let positive = match self {
            LabelMap::EvenOdd => label.is_multiple_of(2),
            LabelMap::OneVsRest(c) => label == c,
        };
        if positive {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub weights: ParamVector,
    pub lambda: f64,
}

impl SvmModel {
    pub fn zeros(features: usize, lambda: f64) -> Self {
        SvmModel {
            weights: ParamVector::zeros(features + 1),
            lambda,
        }
    }

    pub fn new(weights: ParamVector, lambda: f64) -> Self {
        SvmModel { weights, lambda }
    }

    pub fn features(&self) -> usize {
        self.weights.len() - 1
    }

    fn check_features(&self, dim: usize) -> Result<()> {
        if dim + 1 != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len() - 1,
                found: dim,
            });
        }
        Ok(())
    }

    /// `w . [x, 1]`
    pub fn score(&self, x: &[f64]) -> f64 {
        let w = self.weights.as_slice();
        let (bias, lin) = w.split_last().expect("model has a bias entry");
        lin.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
    }
}

/// Borrowed feature rows with binary targets.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    rows: Vec<&'a [f64]>,
    targets: Vec<f64>,
}

impl<'a> Batch<'a> {
    pub fn new(rows: Vec<&'a [f64]>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                found: targets.len(),
            });
        }
        if let Some(t) = targets.iter().find(|&&t| t != 1.0 && t != -1.0) {
            return Err(Error::Logic(format!("binary target {t} is not +1 or -1")));
        }
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(Error::Dimension {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(Batch { rows, targets })
    }

    pub fn from_indices(ds: &'a Dataset, indices: &[usize], map: LabelMap) -> Self {
        Batch {
            rows: indices.iter().map(|&i| ds.row(i)).collect(),
            targets: indices.iter().map(|&i| map.target(ds.label(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Mean squared hinge loss over the batch plus `lambda/2 * |w|^2`, and its gradient.
pub fn svm_loss_grad(model: &SvmModel, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Logic("empty batch".into()));
    }
    model.check_features(batch.rows[0].len())?;
    let dim = model.weights.len();
    let mut grad = vec![0.0; dim];
    let mut loss = 0.0;
    for (x, &y) in batch.rows.iter().zip(&batch.targets) {
        let slack = 1.0 - y * model.score(x);
        if slack > 0.0 {
            loss += 0.5 * slack * slack;
            let coef = -slack * y;
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g += coef * xi;
            }
            grad[dim - 1] += coef;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    if model.lambda != 0.0 {
        loss += 0.5 * model.lambda * model.weights.norm_sq();
        for (g, w) in grad.iter_mut().zip(model.weights.as_slice()) {
            *g += model.lambda * w;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("svm loss".into()));
    }
    let grad = ParamVector::from_vec_unchecked(grad);
    grad.ensure_finite("svm gradient")?;
    Ok((loss, grad))
}

fn mean_loss_over(model: &SvmModel, ds: &Dataset, indices: &[usize], map: LabelMap) -> f64 {
    let total: f64 = indices
        .iter()
        .map(|&i| {
            let slack = 1.0 - map.target(ds.label(i)) * model.score(ds.row(i));
            if slack > 0.0 {
                0.5 * slack * slack
            } else {
                0.0
            }
        })
        .sum();
    total / indices.len() as f64 + 0.5 * model.lambda * model.weights.norm_sq()
}

/// Fraction of samples whose predicted sign matches the mapped target;
/// a zero score predicts `+1`.
pub fn accuracy(model: &SvmModel, test: &Dataset, map: LabelMap) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Logic("empty test set".into()));
    }
    model.check_features(test.dim())?;
    let correct = (0..test.len())
        .filter(|&i| {
            let pred = if model.score(test.row(i)) >= 0.0 {
                1.0
            } else {
                -1.0
            };
            pred == map.target(test.label(i))
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Average loss over every sample of one client's shard at fixed weights.
pub fn shard_loss(
    model: &SvmModel,
    ds: &Dataset,
    shard: &DatasetShard,
    map: LabelMap,
) -> Result<f64> {
    if shard.is_empty() {
        return Err(Error::Logic(format!(
            "client {} has no samples",
            shard.owner + 1
        )));
    }
    model.check_features(ds.dim())?;
    Ok(mean_loss_over(model, ds, &shard.indices, map))
}

/// `sum_i p_i * F_i(w)` with `p_i = |D_i| / |D|` over the given shards.
pub fn global_loss(
    model: &SvmModel,
    ds: &Dataset,
    shards: &[DatasetShard],
    map: LabelMap,
) -> Result<f64> {
    let total: usize = shards.iter().map(DatasetShard::len).sum();
    let mut acc = 0.0;
    for shard in shards {
        acc += shard.len() as f64 / total as f64 * shard_loss(model, ds, shard, map)?;
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite("global loss".into()));
    }
    Ok(acc)
}
