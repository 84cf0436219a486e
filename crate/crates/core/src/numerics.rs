//! Dense parameter vectors and keyed random streams.
//!
//! Every reduction walks its inputs in ascending index order so that two runs
//! over the same data produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Flat model parameter or gradient vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.ensure_finite("parameter vector")?;
        Ok(v)
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub(crate) fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// `self += a * x` in place.
    pub fn add_scaled(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (y, xi) in self.0.iter_mut().zip(&x.0) {
            *y += a * xi;
        }
        self.ensure_finite("add_scaled")
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    pub fn scaled(&self, a: f64) -> Result<ParamVector> {
        let v = ParamVector(self.0.iter().map(|x| a * x).collect());
        v.ensure_finite("scale")?;
        Ok(v)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> Result<f64> {
        l2_norm(self)
    }

    /// Squared norm without the finiteness check; callers guarantee finite input.
    pub(crate) fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// Elementwise sum in slice order.
    pub fn sum_of<'a, I>(dim: usize, vectors: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut acc = ParamVector::zeros(dim);
        for v in vectors {
            acc.check_dim(v)?;
            for (a, x) in acc.0.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        acc.ensure_finite("vector sum")?;
        Ok(acc)
    }
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    let mut out = y.clone();
    out.add_scaled(a, x)?;
    Ok(out)
}

/// Euclidean norm. Falls back to a rescaled pass when the plain sum of
/// squares overflows or underflows.
pub fn l2_norm(x: &ParamVector) -> Result<f64> {
    x.ensure_finite("l2_norm input")?;
    let sq = x.norm_sq();
    if sq.is_finite() && sq > f64::MIN_POSITIVE {
        return Ok(sq.sqrt());
    }
    let scale = x.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = x.0.iter().map(|v| (v / scale) * (v / scale)).sum();
    Ok(scale * sum.sqrt())
}

/// What a random stream is used for. The tag is part of the stream key, so
/// draws for one purpose never perturb another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    ClassMeans,
    TrainSamples,
    TestSamples,
    Partition,
    BatchOrder,
    Reshuffle,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ClassMeans => 1,
            Purpose::TrainSamples => 2,
            Purpose::TestSamples => 3,
            Purpose::Partition => 4,
            Purpose::BatchOrder => 5,
            Purpose::Reshuffle => 6,
            Purpose::Test => 99,
        }
    }
}

/// Key of an independent random stream: `(seed, purpose, round, client)`.
///
/// The generator is seeded directly from the key, so a stream's contents do
/// not depend on which thread draws it or on how many other streams exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
    pub round: u64,
    pub client: u64,
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose, round: u64, client: u64) -> Self {
        RngStream {
            seed,
            purpose,
            round,
            client,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.purpose.tag().to_le_bytes());
        key[16..24].copy_from_slice(&self.round.to_le_bytes());
        key[24..32].copy_from_slice(&self.client.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}
