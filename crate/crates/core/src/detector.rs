//! Online stopping rules over an e-value stream.
//!
//! Both procedures split time into runs that start right after the previous
//! alarm. Within a run starting at `s` they track the run product
//! `P_n = E_s * ... * E_n`:
//!
//! * Roberts–Shiryaev alarms at the first `n` with `P_s + ... + P_n >= c`;
//! * MUSUC alarms at the first `n` with `P_n >= c`.
//!
//! The run product is held as an integer mantissa and a binary exponent, so it
//! never overflows or underflows and each multiplication rounds exactly like a
//! plain floating point product would. The running sum lives in linear space
//! and saturates at `2c`; once past the threshold its value no longer matters.
//!
//! A zero e-value pins the run product at zero until the next alarm. MUSUC
//! then cannot alarm in that run, while Roberts–Shiryaev still can from the
//! sum accumulated so far.

use std::cmp::Ordering;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::epredictor::{EValueStream, Observation, ScoreFunction};
use crate::error::{Error, Result};
use crate::scalar::{scale_by_pow2, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    RobertsShiryaev,
    Musuc,
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RobertsShiryaev => "rs",
            Self::Musuc => "musuc",
        })
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs" => Ok(Self::RobertsShiryaev),
            "musuc" => Ok(Self::Musuc),
            other => Err(Error::Config(format!("unknown procedure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig<T> {
    threshold: T,
    procedure: Procedure,
    floor: Option<T>,
}

impl<T: Scalar> DetectorConfig<T> {
    /// `threshold` is the parameter `c`; it must be finite and exceed 1.
    pub fn new(threshold: T, procedure: Procedure) -> Result<Self> {
        if !(threshold.is_finite() && threshold > T::one()) {
            return Err(Error::InvalidThreshold(threshold.widen()));
        }
        Ok(Self {
            threshold,
            procedure,
            floor: None,
        })
    }

    pub fn roberts_shiryaev(threshold: T) -> Result<Self> {
        Self::new(threshold, Procedure::RobertsShiryaev)
    }

    pub fn musuc(threshold: T) -> Result<Self> {
        Self::new(threshold, Procedure::Musuc)
    }

    /// Replaces each e-value `e` by `max(e, floor)`. Off by default.
    pub fn with_floor(mut self, floor: T) -> Result<Self> {
        if !(floor.is_finite() && floor > T::zero()) {
            return Err(Error::Config(format!(
                "e-value floor must be positive, got {floor}"
            )));
        }
        self.floor = Some(floor);
        Ok(self)
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn procedure(&self) -> Procedure {
        self.procedure
    }

    pub fn floor(&self) -> Option<T> {
        self.floor
    }
}

/// A nonnegative product `mantissa * 2^exponent` with an integer mantissa.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunProduct {
    mantissa: u64,
    exponent: i64,
}

fn decode<T: Scalar>(x: T) -> RunProduct {
    let (mantissa, exponent, _) = x.integer_decode();
    RunProduct {
        mantissa,
        exponent: i64::from(exponent),
    }
}

impl RunProduct {
    /// The empty product.
    pub fn one<T: Scalar>() -> Self {
        decode(T::one())
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0
    }

    pub fn times<T: Scalar>(self, e: T) -> Self {
        let factor = decode(e);
        if self.is_zero() || factor.is_zero() {
            return RunProduct {
                mantissa: 0,
                exponent: 0,
            };
        }
        // Both mantissas fit the type exactly; their product rounds once.
        let m = T::from_u64(self.mantissa).unwrap() * T::from_u64(factor.mantissa).unwrap();
        let rounded = decode(m);
        RunProduct {
            mantissa: rounded.mantissa,
            exponent: self.exponent + factor.exponent + rounded.exponent,
        }
    }

    pub fn to_scalar<T: Scalar>(self) -> T {
        if self.is_zero() {
            return T::zero();
        }
        scale_by_pow2(T::from_u64(self.mantissa).unwrap(), self.exponent)
    }

    /// Natural logarithm; `-inf` for the zero product.
    pub fn ln<T: Scalar>(self) -> T {
        if self.is_zero() {
            return T::neg_infinity();
        }
        T::from_u64(self.mantissa).unwrap().ln()
            + T::from_i64(self.exponent).unwrap() * T::from_f64(std::f64::consts::LN_2).unwrap()
    }

    /// Exact comparison with a finite nonnegative scalar.
    pub fn cmp_scalar<T: Scalar>(self, x: T) -> Ordering {
        let other = decode(x);
        match (self.is_zero(), other.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        let width = |m: u64| i64::from(64 - m.leading_zeros());
        let top = |p: RunProduct| p.exponent + width(p.mantissa);
        top(self).cmp(&top(other)).then_with(|| {
            let align = |m: u64| m << m.leading_zeros();
            align(self.mantissa).cmp(&align(other.mantissa))
        })
    }
}

/// Statistics of the current run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState<T> {
    product: RunProduct,
    sum_stat: T,
    steps_in_run: u64,
}

impl<T: Scalar> Default for DetectorState<T> {
    fn default() -> Self {
        Self {
            product: RunProduct::one::<T>(),
            sum_stat: T::zero(),
            steps_in_run: 0,
        }
    }
}

impl<T: Scalar> DetectorState<T> {
    pub fn product(&self) -> RunProduct {
        self.product
    }

    pub fn log_product(&self) -> T {
        self.product.ln()
    }

    /// Roberts–Shiryaev sum, saturated at twice the threshold.
    pub fn sum_stat(&self) -> T {
        self.sum_stat
    }

    pub fn steps_in_run(&self) -> u64 {
        self.steps_in_run
    }
}

fn prepare<T: Scalar>(e: T, config: &DetectorConfig<T>, expected: Procedure) -> Result<T> {
    if config.procedure != expected {
        return Err(Error::Config(format!(
            "{expected} step called with a {} configuration",
            config.procedure
        )));
    }
    let e = crate::epredictor::EValue::new(e)?.get();
    Ok(match config.floor {
        Some(floor) => e.max(floor),
        None => e,
    })
}

/// One Roberts–Shiryaev update. Returns the new state and whether it alarmed.
pub fn rs_step<T: Scalar>(
    state: DetectorState<T>,
    e: T,
    config: &DetectorConfig<T>,
) -> Result<(DetectorState<T>, bool)> {
    let e = prepare(e, config, Procedure::RobertsShiryaev)?;
    let c = config.threshold;
    let product = state.product.times(e);
    let sum_stat = (state.sum_stat + product.to_scalar::<T>()).min(c + c);
    if sum_stat >= c {
        return Ok((DetectorState::default(), true));
    }
    Ok((
        DetectorState {
            product,
            sum_stat,
            steps_in_run: state.steps_in_run + 1,
        },
        false,
    ))
}

/// One MUSUC update. Returns the new state and whether it alarmed.
pub fn musuc_step<T: Scalar>(
    state: DetectorState<T>,
    e: T,
    config: &DetectorConfig<T>,
) -> Result<(DetectorState<T>, bool)> {
    let e = prepare(e, config, Procedure::Musuc)?;
    let product = state.product.times(e);
    if product.cmp_scalar(config.threshold) != Ordering::Less {
        return Ok((DetectorState::default(), true));
    }
    Ok((
        DetectorState {
            product,
            sum_stat: state.sum_stat,
            steps_in_run: state.steps_in_run + 1,
        },
        false,
    ))
}

/// Realised alarm times `sigma_1 < sigma_2 < ...` over a horizon of `n` steps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmLog {
    alarm_times: Vec<u64>,
    horizon: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub k: u64,
    pub sigma: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub n: u64,
    #[serde(rename = "A_n")]
    pub a_n: u64,
    pub freq: f64,
}

impl AlarmLog {
    pub fn new(alarm_times: Vec<u64>, horizon: u64) -> Result<Self> {
        let increasing = alarm_times.windows(2).all(|w| w[0] < w[1]);
        let in_range = alarm_times.iter().all(|&t| t >= 1 && t <= horizon);
        if !(increasing && in_range) {
            return Err(Error::Config(
                "alarm times must be strictly increasing and within 1..=horizon".into(),
            ));
        }
        Ok(Self {
            alarm_times,
            horizon,
        })
    }

    pub fn alarm_times(&self) -> &[u64] {
        &self.alarm_times
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `A_n = max{k : sigma_k <= n}`.
    pub fn count_at(&self, n: u64) -> u64 {
        self.alarm_times.partition_point(|&t| t <= n) as u64
    }

    /// `A_n` at the horizon.
    pub fn count(&self) -> u64 {
        self.count_at(self.horizon)
    }

    /// The log as it stood after the first `n` steps.
    pub fn truncated(&self, n: u64) -> Self {
        let n = n.min(self.horizon);
        Self {
            alarm_times: self.alarm_times[..self.count_at(n) as usize].to_vec(),
            horizon: n,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = AlarmRecord> + '_ {
        self.alarm_times
            .iter()
            .enumerate()
            .map(|(i, &sigma)| AlarmRecord {
                k: i as u64 + 1,
                sigma,
            })
    }

    pub fn summary(&self) -> SummaryRecord {
        SummaryRecord {
            n: self.horizon,
            a_n: self.count(),
            freq: alarm_frequency(self),
        }
    }

    /// One JSON line per alarm, then the summary line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &self.summary())?;
        out.write_all(b"\n")
    }
}

/// `A_n / n`, taken as 0 for an empty horizon.
pub fn alarm_frequency(log: &AlarmLog) -> f64 {
    if log.horizon == 0 {
        return 0.0;
    }
    log.count() as f64 / log.horizon as f64
}

/// A detector fed one e-value at a time.
#[derive(Debug, Clone)]
pub struct Detector<T> {
    config: DetectorConfig<T>,
    state: DetectorState<T>,
    log: AlarmLog,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: DetectorConfig<T>) -> Self {
        Self {
            config,
            state: DetectorState::default(),
            log: AlarmLog::default(),
        }
    }

    pub fn config(&self) -> &DetectorConfig<T> {
        &self.config
    }

    pub fn state(&self) -> &DetectorState<T> {
        &self.state
    }

    pub fn log(&self) -> &AlarmLog {
        &self.log
    }

    pub fn into_log(self) -> AlarmLog {
        self.log
    }

    /// Consumes `E_n`; returns the alarm record if step `n` is an alarm time.
    pub fn observe(&mut self, e: T) -> Result<Option<AlarmRecord>> {
        let (state, alarm) = match self.config.procedure {
            Procedure::RobertsShiryaev => rs_step(self.state, e, &self.config)?,
            Procedure::Musuc => musuc_step(self.state, e, &self.config)?,
        };
        self.state = state;
        self.log.horizon += 1;
        if !alarm {
            return Ok(None);
        }
        self.log.alarm_times.push(self.log.horizon);
        Ok(Some(AlarmRecord {
            k: self.log.alarm_times.len() as u64,
            sigma: self.log.horizon,
        }))
    }
}

/// Alarm log of a detector over a precomputed e-value sequence.
pub fn detect_on_e_values<T: Scalar>(
    e_values: &[T],
    config: DetectorConfig<T>,
) -> Result<AlarmLog> {
    let mut detector = Detector::new(config);
    for &e in e_values {
        detector.observe(e)?;
    }
    Ok(detector.into_log())
}

/// Conformal e-values of `stream` piped into the configured stopping rule.
pub fn run_detector<T, I>(
    predictor: &dyn ScoreFunction<T>,
    stream: I,
    config: DetectorConfig<T>,
) -> Result<AlarmLog>
where
    T: Scalar,
    I: IntoIterator<Item = Observation<T>>,
{
    let mut e_values = EValueStream::new(predictor);
    let mut detector = Detector::new(config);
    for z in stream {
        detector.observe(e_values.push(z)?.get())?;
    }
    Ok(detector.into_log())
}
