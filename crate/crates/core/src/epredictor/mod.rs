//! Conformal e-predictors.
//!
//! A conformal e-predictor maps a finite sequence of observations to a
//! sequence of nonnegative numbers of the same length that average to one,
//! and does so equivariantly: permuting the input permutes the output.
//!
//! Predictors here are built from a [`ScoreFunction`], a nonconformity score
//! `s(z, bag)` that sees the other observations only as a multiset. For a
//! sequence `z_1..z_m` the raw scores are `s_i = s(z_i, bag of the others)`
//! and the e-vector is
//!
//! ```text
//! alpha_i = m * s_i / sum_j s_j        (all ones when the sum is zero)
//! ```
//!
//! The denominator is an exact sum rounded once (see [`ExactSum`]), so the
//! e-vector is bit-for-bit equivariant and the online e-value stream agrees
//! exactly with recomputation from scratch.
//!
//! [`ExactSum`]: crate::exact_sum::ExactSum

mod scores;
mod stream;

pub use scores::{knn_score, BuiltinPredictor, ConstantScore, DistanceToMeanScore, KnnScore};
pub use stream::{stream_e_values, EValueStream, IncrementalScores};

use crate::error::{Error, Result};
use crate::exact_sum::ExactSum;
use crate::scalar::Scalar;

/// A point of the observation space: a fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    values: Vec<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Euclidean distance. In one dimension this is `|a - b|`.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// A multiset of observations of one dimension.
///
/// Items are kept in insertion order internally, but every score function is
/// required to ignore that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag<T> {
    items: Vec<Observation<T>>,
}

impl<T> Default for Bag<T> {
    fn default() -> Self {
        Self { items: Vec::new() }
    }
}

impl<T: Scalar> Bag<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations(items: Vec<Observation<T>>) -> Result<Self> {
        check_dims(&items)?;
        Ok(Self { items })
    }

    pub fn insert(&mut self, z: Observation<T>) -> Result<()> {
        if let Some(first) = self.items.first() {
            if first.dim() != z.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: z.dim(),
                });
            }
        }
        self.items.push(z);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(Observation::dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation<T>> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Observation<T>] {
        &self.items
    }

    /// The bag of all elements of `seq` except position `skip`.
    pub fn others(seq: &[Observation<T>], skip: usize) -> Self {
        let items = seq
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, z)| z.clone())
            .collect();
        Self { items }
    }
}

/// The output of an e-predictor on a sequence of length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EVector<T>(Vec<T>);

impl<T: Scalar> EVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<T> {
        self.0.last().copied()
    }

    pub fn mean(&self) -> T {
        let sum = self.0.iter().fold(T::zero(), |acc, &a| acc + a);
        sum / T::from_count(self.0.len())
    }
}

/// A single e-value `E_n`. Nonnegative and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EValue<T>(T);

impl<T: Scalar> EValue<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() && value >= T::zero() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidEValue(value.widen()))
        }
    }

    pub fn get(self) -> T {
        self.0
    }
}

/// A nonconformity score `s(z, bag)`.
///
/// Implementations must return finite nonnegative values and must depend on
/// `bag` only through its multiset content, bit-exactly. The batch and
/// incremental hooks have defaults derived from [`ScoreFunction::score`];
/// overriding them is a performance matter and must not change results.
pub trait ScoreFunction<T: Scalar>: Send + Sync {
    fn score(&self, z: &Observation<T>, bag: &Bag<T>) -> T;

    /// `s(z_i, bag of the others)` for every position of `seq`.
    fn batch_scores(&self, seq: &[Observation<T>]) -> Vec<T> {
        (0..seq.len())
            .map(|i| self.score(&seq[i], &Bag::others(seq, i)))
            .collect()
    }

    /// State that scores a growing sequence one observation at a time.
    fn incremental(&self) -> Box<dyn IncrementalScores<T> + '_> {
        Box::new(stream::Recompute::new(self))
    }
}

fn check_dims<T: Scalar>(seq: &[Observation<T>]) -> Result<()> {
    if let Some(first) = seq.first() {
        if let Some(bad) = seq.iter().find(|z| z.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: bad.dim(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_score<T: Scalar>(s: T) -> Result<T> {
    if s.is_finite() && s >= T::zero() {
        Ok(s)
    } else {
        Err(Error::InvalidScore(s.widen()))
    }
}

/// Sum of scores, exact then rounded once.
pub(crate) fn canonical_total<T: Scalar>(scores: &[T]) -> T {
    T::narrow(
        scores
            .iter()
            .map(|s| s.widen())
            .collect::<ExactSum>()
            .value(),
    )
}

/// `m * s / total`, or one when the total vanishes.
///
/// Scaling before dividing makes equal scores yield exactly one: both
/// `m * s` and the exact total round to the same double.
pub(crate) fn normalized<T: Scalar>(m: usize, score: T, total: T) -> T {
    if total.is_zero() {
        return T::one();
    }
    let m = T::from_count(m);
    let scaled = score * m;
    if scaled.is_finite() {
        scaled / total
    } else {
        score / total * m
    }
}

/// Applies the e-predictor built from `predictor` to `seq`.
pub fn evaluate_batch<T, S>(predictor: &S, seq: &[Observation<T>]) -> Result<EVector<T>>
where
    T: Scalar,
    S: ScoreFunction<T> + ?Sized,
{
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    check_dims(seq)?;
    let scores = predictor.batch_scores(seq);
    for &s in &scores {
        check_score(s)?;
    }
    let total = canonical_total(&scores);
    if !total.is_finite() {
        return Err(Error::InvalidScore(total.widen()));
    }
    let m = seq.len();
    Ok(EVector(
        scores.iter().map(|&s| normalized(m, s, total)).collect(),
    ))
}

/// `f(bag, z)`: the last entry of the e-vector of `(bag..., z)`.
pub fn conformal_e<T, S>(predictor: &S, bag: &Bag<T>, z: &Observation<T>) -> Result<EValue<T>>
where
    T: Scalar,
    S: ScoreFunction<T> + ?Sized,
{
    let mut seq = Vec::with_capacity(bag.len() + 1);
    seq.extend(bag.iter().cloned());
    seq.push(z.clone());
    let alphas = evaluate_batch(predictor, &seq)?;
    EValue::new(alphas.last().expect("nonempty sequence"))
}
