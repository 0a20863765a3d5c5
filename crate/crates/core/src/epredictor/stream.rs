use std::collections::VecDeque;

use super::EValue;
use super::{canonical_total, check_score, evaluate_batch, normalized, Observation, ScoreFunction};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scores of a sequence that grows by one observation per call.
pub trait IncrementalScores<T: Scalar>: Send {
    /// Appends `z` and returns its score against everything before it together
    /// with the exactly summed (then rounded) total of all current scores.
    fn push(&mut self, z: Observation<T>) -> (T, T);
}

/// Fallback: rescore the whole stored prefix at every step.
pub(crate) struct Recompute<'a, T, S: ?Sized> {
    predictor: &'a S,
    seq: Vec<Observation<T>>,
}

impl<'a, T, S: ?Sized> Recompute<'a, T, S> {
    pub(crate) fn new(predictor: &'a S) -> Self {
        Self {
            predictor,
            seq: Vec::new(),
        }
    }
}

impl<T, S> IncrementalScores<T> for Recompute<'_, T, S>
where
    T: Scalar,
    S: ScoreFunction<T> + ?Sized,
{
    fn push(&mut self, z: Observation<T>) -> (T, T) {
        self.seq.push(z);
        let scores = self.predictor.batch_scores(&self.seq);
        (*scores.last().unwrap(), canonical_total(&scores))
    }
}

enum Mode<'p, T: Scalar> {
    Full(Box<dyn IncrementalScores<T> + 'p>),
    Window {
        past: VecDeque<Observation<T>>,
        capacity: usize,
    },
}

/// Online e-values `E_n = f(bag of Z_1..Z_{n-1}, Z_n)`.
///
/// The default mode conditions on the full prefix. [`EValueStream::windowed`]
/// bounds the bag to the most recent observations instead; that is a
/// departure from the definition and each step rescores the whole window.
pub struct EValueStream<'p, T: Scalar> {
    predictor: &'p dyn ScoreFunction<T>,
    mode: Mode<'p, T>,
    dim: Option<usize>,
    steps: usize,
}

impl<'p, T: Scalar> EValueStream<'p, T> {
    pub fn new(predictor: &'p dyn ScoreFunction<T>) -> Self {
        Self {
            predictor,
            mode: Mode::Full(predictor.incremental()),
            dim: None,
            steps: 0,
        }
    }

    /// Conditions each e-value on at most `capacity` preceding observations.
    pub fn windowed(predictor: &'p dyn ScoreFunction<T>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidWindow);
        }
        Ok(Self {
            predictor,
            mode: Mode::Window {
                past: VecDeque::with_capacity(capacity + 1),
                capacity,
            },
            dim: None,
            steps: 0,
        })
    }

    /// Number of observations consumed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn push(&mut self, z: Observation<T>) -> Result<EValue<T>> {
        match self.dim {
            Some(expected) if expected != z.dim() => {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: z.dim(),
                })
            }
            _ => self.dim = Some(z.dim()),
        }
        let e = match &mut self.mode {
            Mode::Full(scores) => {
                let (s, total) = scores.push(z);
                check_score(s)?;
                if !total.is_finite() {
                    return Err(Error::InvalidScore(total.widen()));
                }
                normalized(self.steps + 1, s, total)
            }
            Mode::Window { past, capacity } => {
                past.push_back(z);
                let alphas = evaluate_batch(self.predictor, past.make_contiguous())?;
                if past.len() > *capacity {
                    past.pop_front();
                }
                alphas.last().unwrap()
            }
        };
        self.steps += 1;
        EValue::new(e)
    }
}

/// Runs [`EValueStream`] over a whole sequence.
pub fn stream_e_values<T, I>(predictor: &dyn ScoreFunction<T>, stream: I) -> Result<Vec<EValue<T>>>
where
    T: Scalar,
    I: IntoIterator<Item = Observation<T>>,
{
    let mut online = EValueStream::new(predictor);
    stream.into_iter().map(|z| online.push(z)).collect()
}
