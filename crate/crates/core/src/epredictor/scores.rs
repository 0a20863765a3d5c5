use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::ops::Bound;

use super::stream::IncrementalScores;
use super::{distance, Bag, Observation, ScoreFunction};
use crate::error::{Error, Result};
use crate::exact_sum::ExactSum;
use crate::scalar::{cmp_finite, Scalar};

/// Mean of an ascending run of distances, summed smallest first.
fn mean_ascending<T: Scalar>(sorted: &[T]) -> T {
    if sorted.is_empty() {
        return T::zero();
    }
    let sum = sorted.iter().fold(T::zero(), |acc, &d| acc + d);
    sum / T::from_count(sorted.len())
}

fn smallest_k<T: Scalar>(mut dists: Vec<T>, k: usize) -> Vec<T> {
    if dists.len() > k {
        dists.select_nth_unstable_by(k - 1, cmp_finite);
        dists.truncate(k);
    }
    dists.sort_unstable_by(cmp_finite);
    dists
}

/// Mean Euclidean distance from `z` to its `k` nearest members of `bag`.
///
/// With fewer than `k` members the mean runs over the whole bag; an empty bag
/// scores 0.
pub fn knn_score<T: Scalar>(z: &Observation<T>, bag: &Bag<T>, k: usize) -> T {
    if k == 0 {
        return T::zero();
    }
    let dists = bag
        .iter()
        .map(|b| distance(z.values(), b.values()))
        .collect();
    mean_ascending(&smallest_k(dists, k))
}

/// k-nearest-neighbour nonconformity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnScore {
    k: usize,
}

impl KnnScore {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl<T: Scalar> ScoreFunction<T> for KnnScore {
    fn score(&self, z: &Observation<T>, bag: &Bag<T>) -> T {
        knn_score(z, bag, self.k)
    }

    fn batch_scores(&self, seq: &[Observation<T>]) -> Vec<T> {
        (0..seq.len())
            .map(|i| {
                let dists = seq
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, b)| distance(seq[i].values(), b.values()))
                    .collect();
                mean_ascending(&smallest_k(dists, self.k))
            })
            .collect()
    }

    fn incremental(&self) -> Box<dyn IncrementalScores<T> + '_> {
        Box::new(KnnIncremental::new(self.k))
    }
}

/// Distance from `z` to the mean of the bag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DistanceToMeanScore;

fn coordinate_totals<'a, T: Scalar>(
    dim: usize,
    items: impl Iterator<Item = &'a Observation<T>>,
) -> Vec<ExactSum> {
    let mut totals = vec![ExactSum::new(); dim];
    for z in items {
        for (acc, v) in totals.iter_mut().zip(z.values()) {
            acc.add(v.widen());
        }
    }
    totals
}

/// Scores of every member of `seq` against the mean of the others, given the
/// exact coordinate totals over all of `seq`.
fn distance_to_rest_mean<T: Scalar>(seq: &[Observation<T>], totals: &[ExactSum]) -> Vec<T> {
    let m = seq.len();
    if m < 2 {
        return vec![T::zero(); m];
    }
    let rest = T::from_count(m - 1);
    let splits: Vec<Split> = totals.iter().map(Split::new).collect();
    seq.iter()
        .map(|z| {
            let mean: Vec<T> = splits
                .iter()
                .zip(totals)
                .zip(z.values())
                .map(|((split, acc), v)| T::narrow(split.minus(acc, v.widen())) / rest)
                .collect();
            distance(z.values(), &mean)
        })
        .collect()
}

/// An exact total split as `hi + lo + tail` with `hi = round(total)`,
/// `lo = round(total - hi)` and `|tail| <= ulp(lo) / 2`.
struct Split {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn ulp(x: f64) -> f64 {
    let a = x.abs();
    f64::from_bits(a.to_bits() + 1) - a
}

impl Split {
    fn new(acc: &ExactSum) -> Self {
        let hi = acc.value();
        let lo = if hi.is_finite() {
            acc.rounded_minus(hi)
        } else {
            0.0
        };
        Self { hi, lo }
    }

    /// `round(total - v)`, identical to [`ExactSum::rounded_minus`].
    ///
    /// The fast path returns `r` only when the exact difference lies
    /// strictly inside the rounding interval of `r`; otherwise the
    /// accumulator decides.
    fn minus(&self, acc: &ExactSum, v: f64) -> f64 {
        if self.hi.is_finite() {
            let (s, e1) = two_sum(self.hi, -v);
            let (w, e2) = two_sum(e1, self.lo);
            let (r, d) = two_sum(s, w);
            // total - v = r + d + e2 + tail
            let tail = if self.lo == 0.0 { 0.0 } else { ulp(self.lo) };
            let bound = d.abs() + e2.abs() + tail;
            let mut spacing = ulp(r);
            // The gap below a power of two is half the gap above it.
            if r.to_bits() & ((1 << 52) - 1) == 0 {
                spacing /= 2.0;
            }
            if r.is_finite() && spacing.is_finite() && r != 0.0 && bound < spacing / 2.0 {
                return r;
            }
        }
        acc.rounded_minus(v)
    }
}

impl<T: Scalar> ScoreFunction<T> for DistanceToMeanScore {
    fn score(&self, z: &Observation<T>, bag: &Bag<T>) -> T {
        if bag.is_empty() {
            return T::zero();
        }
        let n = T::from_count(bag.len());
        let mean: Vec<T> = coordinate_totals(z.dim(), bag.iter())
            .iter()
            .map(|acc| T::narrow(acc.value()) / n)
            .collect();
        distance(z.values(), &mean)
    }

    fn batch_scores(&self, seq: &[Observation<T>]) -> Vec<T> {
        let Some(first) = seq.first() else {
            return Vec::new();
        };
        distance_to_rest_mean(seq, &coordinate_totals(first.dim(), seq.iter()))
    }

    fn incremental(&self) -> Box<dyn IncrementalScores<T> + '_> {
        Box::new(DistanceToMeanIncremental::default())
    }
}

/// Scores every observation 1, so every e-value is 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConstantScore;

impl<T: Scalar> ScoreFunction<T> for ConstantScore {
    fn score(&self, _z: &Observation<T>, _bag: &Bag<T>) -> T {
        T::one()
    }

    fn incremental(&self) -> Box<dyn IncrementalScores<T> + '_> {
        Box::new(ConstantIncremental { seen: 0 })
    }
}

/// The predictors selectable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinPredictor {
    Knn(KnnScore),
    DistanceToMean,
    Constant,
}

impl BuiltinPredictor {
    pub fn knn(k: usize) -> Result<Self> {
        KnnScore::new(k).map(Self::Knn)
    }

    /// One instance of every built-in, kNN with the given `k`.
    pub fn all(k: usize) -> [Self; 3] {
        [
            Self::Knn(KnnScore::new(k.max(1)).unwrap()),
            Self::DistanceToMean,
            Self::Constant,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Knn(_) => "knn",
            Self::DistanceToMean => "dist-mean",
            Self::Constant => "const",
        }
    }
}

impl<T: Scalar> ScoreFunction<T> for BuiltinPredictor {
    fn score(&self, z: &Observation<T>, bag: &Bag<T>) -> T {
        match self {
            Self::Knn(p) => p.score(z, bag),
            Self::DistanceToMean => DistanceToMeanScore.score(z, bag),
            Self::Constant => ConstantScore.score(z, bag),
        }
    }

    fn batch_scores(&self, seq: &[Observation<T>]) -> Vec<T> {
        match self {
            Self::Knn(p) => p.batch_scores(seq),
            Self::DistanceToMean => DistanceToMeanScore.batch_scores(seq),
            Self::Constant => ScoreFunction::<T>::batch_scores(&ConstantScore, seq),
        }
    }

    fn incremental(&self) -> Box<dyn IncrementalScores<T> + '_> {
        match self {
            Self::Knn(p) => p.incremental(),
            Self::DistanceToMean => Box::new(DistanceToMeanIncremental::default()),
            Self::Constant => Box::new(ConstantIncremental { seen: 0 }),
        }
    }
}

struct ConstantIncremental {
    seen: usize,
}

impl<T: Scalar> IncrementalScores<T> for ConstantIncremental {
    fn push(&mut self, _z: Observation<T>) -> (T, T) {
        self.seen += 1;
        (T::one(), T::from_count(self.seen))
    }
}

#[derive(Default)]
struct DistanceToMeanIncremental<T> {
    seq: Vec<Observation<T>>,
    totals: Vec<ExactSum>,
}

impl<T: Scalar> IncrementalScores<T> for DistanceToMeanIncremental<T> {
    fn push(&mut self, z: Observation<T>) -> (T, T) {
        if self.totals.is_empty() {
            self.totals = vec![ExactSum::new(); z.dim()];
        }
        for (acc, v) in self.totals.iter_mut().zip(z.values()) {
            acc.add(v.widen());
        }
        self.seq.push(z);
        // every mean moves with the new point, so all scores are recomputed
        let scores = distance_to_rest_mean(&self.seq, &self.totals);
        let total = super::canonical_total(&scores);
        (*scores.last().unwrap(), total)
    }
}

/// Totally ordered key for the one-dimensional neighbour index.
#[derive(Clone, Copy, Debug)]
struct Key<T>(T, usize);

impl<T: Scalar> PartialEq for Key<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Key<T> {}

impl<T: Scalar> PartialOrd for Key<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Key<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_finite(&self.0, &other.0).then(self.1.cmp(&other.1))
    }
}

/// Incremental kNN scores over a growing sequence.
///
/// Each point keeps the mean distance to its `k` nearest others; the exact
/// total of all scores is updated by removing stale scores and adding fresh
/// ones. One-dimensional streams use an ordered index so that only the `k`
/// neighbours on either side of a new point are revisited. Higher dimensions
/// keep a sorted list of the `k` smallest distances per point.
struct KnnIncremental<T> {
    k: usize,
    points: Vec<Observation<T>>,
    scores: Vec<T>,
    total: ExactSum,
    line: BTreeSet<Key<T>>,
    nearest: Vec<Vec<T>>,
}

impl<T: Scalar> KnnIncremental<T> {
    fn new(k: usize) -> Self {
        Self {
            k,
            points: Vec::new(),
            scores: Vec::new(),
            total: ExactSum::new(),
            line: BTreeSet::new(),
            nearest: Vec::new(),
        }
    }

    fn one_dimensional(&self) -> bool {
        self.points.first().is_some_and(|p| p.dim() == 1)
    }

    fn set_score(&mut self, i: usize, score: T) {
        self.total.sub(self.scores[i].widen());
        self.total.add(score.widen());
        self.scores[i] = score;
    }

    fn rebuild(&mut self) {
        let n = self.points.len();
        self.total = ExactSum::new();
        self.nearest.clear();
        self.scores.clear();
        for i in 0..n {
            let dists = (0..n)
                .filter(|&j| j != i)
                .map(|j| distance(self.points[i].values(), self.points[j].values()))
                .collect();
            let near = smallest_k(dists, self.k);
            let s = mean_ascending(&near);
            self.total.add(s.widen());
            self.scores.push(s);
            if !self.one_dimensional() {
                self.nearest.push(near);
            }
        }
    }

    /// Distances from the point at `key` to its `k` nearest on the line.
    fn line_neighbours(&self, key: Key<T>) -> Vec<T> {
        let x = key.0;
        let mut left = self
            .line
            .range(..key)
            .rev()
            .take(self.k)
            .map(|q| (x - q.0).abs())
            .peekable();
        let mut right = self
            .line
            .range((Bound::Excluded(key), Bound::Unbounded))
            .take(self.k)
            .map(|q| (x - q.0).abs())
            .peekable();
        let mut out = Vec::with_capacity(self.k);
        while out.len() < self.k {
            let next = match (left.peek(), right.peek()) {
                (Some(l), Some(r)) => {
                    if l <= r {
                        left.next()
                    } else {
                        right.next()
                    }
                }
                (Some(_), None) => left.next(),
                (None, Some(_)) => right.next(),
                (None, None) => None,
            };
            match next {
                Some(d) => out.push(d),
                None => break,
            }
        }
        out
    }

    fn push_line(&mut self, key: Key<T>) -> T {
        let affected: Vec<Key<T>> = self
            .line
            .range(..key)
            .rev()
            .take(self.k)
            .chain(
                self.line
                    .range((Bound::Excluded(key), Bound::Unbounded))
                    .take(self.k),
            )
            .copied()
            .collect();
        self.line.insert(key);
        for other in affected {
            let s = mean_ascending(&self.line_neighbours(other));
            self.set_score(other.1, s);
        }
        mean_ascending(&self.line_neighbours(key))
    }

    fn push_general(&mut self, z: &Observation<T>) -> T {
        let k = self.k;
        let mut dists = Vec::with_capacity(self.points.len());
        for j in 0..self.points.len() {
            let d = distance(z.values(), self.points[j].values());
            dists.push(d);
            let near = &mut self.nearest[j];
            if d < near[k - 1] {
                let at = near.partition_point(|&x| x <= d);
                near.insert(at, d);
                near.truncate(k);
                let s = mean_ascending(near);
                self.set_score(j, s);
            }
        }
        let near = smallest_k(dists, k);
        let s = mean_ascending(&near);
        self.nearest.push(near);
        s
    }
}

impl<T: Scalar> IncrementalScores<T> for KnnIncremental<T> {
    fn push(&mut self, z: Observation<T>) -> (T, T) {
        let index = self.points.len();
        // While the bag is no larger than k every point averages over all
        // others, so each arrival changes every score.
        if index <= self.k {
            if z.dim() == 1 {
                self.line.insert(Key(z.values()[0], index));
            }
            self.points.push(z);
            self.rebuild();
        } else {
            let s = if self.one_dimensional() {
                self.push_line(Key(z.values()[0], index))
            } else {
                self.push_general(&z)
            };
            self.points.push(z);
            self.scores.push(s);
            self.total.add(s.widen());
        }
        (self.scores[index], T::narrow(self.total.value()))
    }
}
