//! Slow reference evaluations of the stopping rules.
//!
//! Everything here recomputes sums and products from scratch for every
//! candidate time and works in exact dyadic arithmetic: every finite double is
//! `m * 2^e` for integers `m`, `e`, and such numbers are closed under `+` and
//! `*`. Threshold comparisons are therefore exact, which makes these functions
//! ground truth for the floating point engines in [`crate::detector`] and lets
//! the two dominance arguments behind the false-alarm bounds be checked
//! mechanically:
//!
//! * forward Roberts–Shiryaev raises no more alarms over `1..=N` than the
//!   Shiryaev–Roberts procedure run backwards from `N` (and every forward
//!   alarm interval contains a backward stopping time);
//! * the `k`-th Roberts–Shiryaev alarm never comes after the `k`-th MUSUC
//!   alarm.

use std::cmp::Ordering;

use num_bigint::BigUint;
use num_traits::Zero;

use crate::detector::AlarmLog;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A nonnegative dyadic rational `mantissa * 2^exponent`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Dyadic {
    mantissa: BigUint,
    exponent: i64,
}

impl Dyadic {
    fn zero() -> Self {
        Self {
            mantissa: BigUint::zero(),
            exponent: 0,
        }
    }

    fn one() -> Self {
        Self {
            mantissa: BigUint::from(1u8),
            exponent: 0,
        }
    }

    fn from_f64(x: f64) -> Self {
        debug_assert!(x.is_finite() && x >= 0.0);
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, exponent) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1 << 52), biased - 1075)
        };
        Self {
            mantissa: BigUint::from(mantissa),
            exponent,
        }
    }

    fn mul(&self, other: &Self) -> Self {
        Self {
            mantissa: &self.mantissa * &other.mantissa,
            exponent: self.exponent + other.exponent,
        }
    }

    fn aligned(&self, exponent: i64) -> BigUint {
        &self.mantissa << (self.exponent - exponent) as u64
    }

    fn add(&self, other: &Self) -> Self {
        if self.mantissa.is_zero() {
            return other.clone();
        }
        if other.mantissa.is_zero() {
            return self.clone();
        }
        let exponent = self.exponent.min(other.exponent);
        Self {
            mantissa: self.aligned(exponent) + other.aligned(exponent),
            exponent,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        match (self.mantissa.is_zero(), other.mantissa.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        let top = |d: &Dyadic| d.exponent + d.mantissa.bits() as i64;
        top(self).cmp(&top(other)).then_with(|| {
            let exponent = self.exponent.min(other.exponent);
            self.aligned(exponent).cmp(&other.aligned(exponent))
        })
    }

    fn at_least(&self, other: &Self) -> bool {
        self.cmp(other) != Ordering::Less
    }
}

fn exact<T: Scalar>(values: &[T]) -> Vec<Dyadic> {
    values.iter().map(|v| Dyadic::from_f64(v.widen())).collect()
}

fn check_forward_input<T: Scalar>(e: &[T], c: T) -> Result<()> {
    if !(c.is_finite() && c > T::one()) {
        return Err(Error::InvalidThreshold(c.widen()));
    }
    if let Some(&bad) = e.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
        return Err(Error::InvalidEValue(bad.widen()));
    }
    Ok(())
}

/// `sum_{i} prod_{j <= i} run[j]` over the whole slice.
fn sum_of_prefix_products(run: &[Dyadic]) -> Dyadic {
    let mut product = Dyadic::one();
    let mut sum = Dyadic::zero();
    for e in run {
        product = product.mul(e);
        sum = sum.add(&product);
    }
    sum
}

fn product(run: &[Dyadic]) -> Dyadic {
    run.iter().fold(Dyadic::one(), |acc, e| acc.mul(e))
}

/// Forward alarm times for a run statistic evaluated on `e[start..n]`.
fn forward_alarms(e: &[Dyadic], c: &Dyadic, statistic: fn(&[Dyadic]) -> Dyadic) -> Vec<u64> {
    let mut alarms = Vec::new();
    let mut start = 0;
    'runs: loop {
        for n in start + 1..=e.len() {
            if statistic(&e[start..n]).at_least(c) {
                alarms.push(n as u64);
                start = n;
                continue 'runs;
            }
        }
        return alarms;
    }
}

/// Roberts–Shiryaev alarm times evaluated literally from the definition.
pub fn brute_force_rs<T: Scalar>(e: &[T], c: T) -> Result<AlarmLog> {
    check_forward_input(e, c)?;
    let alarms = forward_alarms(
        &exact(e),
        &Dyadic::from_f64(c.widen()),
        sum_of_prefix_products,
    );
    AlarmLog::new(alarms, e.len() as u64)
}

/// MUSUC alarm times evaluated literally from the definition.
pub fn brute_force_musuc<T: Scalar>(e: &[T], c: T) -> Result<AlarmLog> {
    check_forward_input(e, c)?;
    let alarms = forward_alarms(&exact(e), &Dyadic::from_f64(c.widen()), product);
    AlarmLog::new(alarms, e.len() as u64)
}

/// Shiryaev–Roberts run backwards in time over a fixed horizon `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReversedRun {
    /// `N`.
    pub n_horizon: u64,
    /// The positive stopping times `tau_1 > tau_2 > ...`; `tau_0 = N + 1` and
    /// the terminal zero are implicit.
    pub tau_times: Vec<u64>,
}

impl ReversedRun {
    /// `A'_N`, the number of positive stopping times.
    pub fn alarm_count(&self) -> u64 {
        self.tau_times.len() as u64
    }
}

/// `tau_k = max{ n < tau_{k-1} : sum_{i=n}^{tau_{k-1}-1} e_n ... e_i >= c }`
/// with `max(empty) = 0`, starting from `tau_0 = N + 1`.
///
/// Only defined for strictly positive e-values.
pub fn reversed_sr<T: Scalar>(e: &[T], c: T) -> Result<ReversedRun> {
    check_forward_input(e, c)?;
    if let Some((index, &value)) = e.iter().enumerate().find(|(_, v)| **v <= T::zero()) {
        return Err(Error::NonPositiveEValue {
            index,
            value: value.widen(),
        });
    }
    let exact_e = exact(e);
    let c = Dyadic::from_f64(c.widen());
    let n_horizon = e.len();
    let mut tau_times = Vec::new();
    let mut previous = n_horizon + 1;
    loop {
        // 1-based n in 1..previous, scanned downward: the first hit is the max
        let hit = (1..previous)
            .rev()
            .find(|&n| sum_of_prefix_products(&exact_e[n - 1..previous - 1]).at_least(&c));
        match hit {
            Some(n) => {
                tau_times.push(n as u64);
                previous = n;
            }
            None => break,
        }
    }
    Ok(ReversedRun {
        n_horizon: n_horizon as u64,
        tau_times,
    })
}

/// Whether `A_N <= A'_N` for the forward and reversed procedures.
pub fn check_dominance_rs<T: Scalar>(e: &[T], c: T) -> Result<bool> {
    let forward = brute_force_rs(e, c)?;
    let reversed = reversed_sr(e, c)?;
    Ok(forward.count() <= reversed.alarm_count())
}

/// Whether each forward interval `{sigma_k + 1, ..., sigma_{k+1}}` inside the
/// horizon contains at least one reversed stopping time.
pub fn check_interval_coverage<T: Scalar>(e: &[T], c: T) -> Result<bool> {
    let forward = brute_force_rs(e, c)?;
    let reversed = reversed_sr(e, c)?;
    let mut lower = 1;
    for &sigma in forward.alarm_times() {
        let covered = reversed
            .tau_times
            .iter()
            .any(|&tau| lower <= tau && tau <= sigma);
        if !covered {
            return Ok(false);
        }
        lower = sigma + 1;
    }
    Ok(true)
}

/// A `k` for which the `k`-th MUSUC alarm precedes the `k`-th
/// Roberts–Shiryaev alarm (or the latter does not exist).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominanceViolation {
    pub k: usize,
    pub rs_alarm: Option<u64>,
    pub musuc_alarm: u64,
    /// For `k > 1` with `sigma_{k-1} < sigma'_{k-1}`: whether
    /// `prod_{i = sigma_{k-1}+1}^{sigma'_{k-1}} e_i < 1`, the condition any
    /// violation would require.
    pub product_below_one: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MusucDominance {
    pub rs: AlarmLog,
    pub musuc: AlarmLog,
    pub violation: Option<DominanceViolation>,
}

impl MusucDominance {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

/// Compares Roberts–Shiryaev and MUSUC alarm times alarm by alarm.
pub fn musuc_dominance<T: Scalar>(e: &[T], c: T) -> Result<MusucDominance> {
    let rs = brute_force_rs(e, c)?;
    let musuc = brute_force_musuc(e, c)?;
    let exact_e = exact(e);
    let violation = musuc
        .alarm_times()
        .iter()
        .enumerate()
        .find_map(|(i, &musuc_alarm)| {
            let rs_alarm = rs.alarm_times().get(i).copied();
            if rs_alarm.is_some_and(|t| t <= musuc_alarm) {
                return None;
            }
            let product_below_one = (i > 0)
                .then(|| (rs.alarm_times()[i - 1], musuc.alarm_times()[i - 1]))
                .filter(|(s, s_prime)| s < s_prime)
                .map(|(s, s_prime)| {
                    product(&exact_e[s as usize..s_prime as usize]).cmp(&Dyadic::one())
                        == Ordering::Less
                });
            Some(DominanceViolation {
                k: i + 1,
                rs_alarm,
                musuc_alarm,
                product_below_one,
            })
        });
    Ok(MusucDominance {
        rs,
        musuc,
        violation,
    })
}

/// Whether `sigma_k <= sigma'_k` for every MUSUC alarm `sigma'_k`.
pub fn check_dominance_musuc<T: Scalar>(e: &[T], c: T) -> Result<bool> {
    Ok(musuc_dominance(e, c)?.holds())
}
