//! Monte Carlo harness: stream generators, the false-alarm validity
//! experiment and an exploratory detection-delay benchmark.
//!
//! Every trial draws its stream from a ChaCha generator seeded with the
//! scenario seed and switched to a stream id equal to the trial index, so
//! results do not depend on how trials are scheduled across threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{AlarmLog, Detector, DetectorConfig, Procedure};
use crate::epredictor::{EValueStream, Observation, ScoreFunction};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Marginal law of each coordinate of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Constant {
        value: f64,
    },
    /// Gaussian whose mean moves by `slope` per step, counted from the first
    /// step the distribution is in force.
    MeanDrift {
        mean: f64,
        std: f64,
        slope: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match *self {
            Self::Gaussian { mean, std } => finite(&[mean, std]) && std >= 0.0,
            Self::Uniform { low, high } => finite(&[low, high]) && low < high,
            Self::Constant { value } => value.is_finite(),
            Self::MeanDrift { mean, std, slope } => finite(&[mean, std, slope]) && std >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid distribution parameters: {self}"
            )))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, elapsed: u64) -> f64 {
        match *self {
            Self::Gaussian { mean, std } => Normal::new(mean, std).unwrap().sample(rng),
            Self::Uniform { low, high } => Uniform::new(low, high).unwrap().sample(rng),
            Self::Constant { value } => value,
            Self::MeanDrift { mean, std, slope } => Normal::new(mean + slope * elapsed as f64, std)
                .unwrap()
                .sample(rng),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Gaussian { mean, std } => write!(f, "gaussian:{mean},{std}"),
            Self::Uniform { low, high } => write!(f, "uniform:{low},{high}"),
            Self::Constant { value } => write!(f, "constant:{value}"),
            Self::MeanDrift { mean, std, slope } => write!(f, "drift:{mean},{std},{slope}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// `gaussian:MEAN,STD`, `uniform:LOW,HIGH`, `constant:VALUE` or
    /// `drift:MEAN,STD,SLOPE`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse distribution {s:?}"));
        let (kind, params) = s.split_once(':').ok_or_else(bad)?;
        let params: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let dist = match (kind.trim(), params.as_slice()) {
            ("gaussian", &[mean, std]) => Self::Gaussian { mean, std },
            ("uniform", &[low, high]) => Self::Uniform { low, high },
            ("constant", &[value]) => Self::Constant { value },
            ("drift", &[mean, std, slope]) => Self::MeanDrift { mean, std, slope },
            _ => return Err(bad()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// An IID null, optionally followed by a different regime from `change_at` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub pre_change: Distribution,
    pub change_at: Option<u64>,
    pub post_change: Option<Distribution>,
    pub n: u64,
    pub dim: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn iid(pre_change: Distribution, n: u64, seed: u64) -> Self {
        Self {
            pre_change,
            change_at: None,
            post_change: None,
            n,
            dim: 1,
            seed,
        }
    }

    pub fn with_change(mut self, change_at: u64, post_change: Distribution) -> Self {
        self.change_at = Some(change_at);
        self.post_change = Some(post_change);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pre_change.validate()?;
        if let Some(post) = &self.post_change {
            post.validate()?;
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        match (self.change_at, self.post_change) {
            (Some(nu), Some(_)) if nu >= 1 && nu <= self.n => Ok(()),
            (Some(nu), Some(_)) => Err(Error::Config(format!(
                "change point {nu} outside 1..={}",
                self.n
            ))),
            (None, None) => Ok(()),
            _ => Err(Error::Config(
                "change point and post-change distribution go together".into(),
            )),
        }
    }

    fn rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }

    /// The stream of trial `trial`.
    pub fn trial_stream<T: Scalar>(&self, trial: u64) -> Result<Vec<Observation<T>>> {
        self.validate()?;
        let mut rng = self.rng(trial);
        (1..=self.n)
            .map(|t| {
                let (dist, elapsed) = match (self.change_at, &self.post_change) {
                    (Some(nu), Some(post)) if t >= nu => (post, t - nu),
                    _ => (&self.pre_change, t - 1),
                };
                let values = (0..self.dim)
                    .map(|_| T::narrow(dist.sample(&mut rng, elapsed)))
                    .collect();
                Observation::new(values)
            })
            .collect()
    }
}

/// The stream for a scenario (trial 0).
pub fn generate_stream<T: Scalar>(spec: &ScenarioSpec) -> Result<Vec<Observation<T>>> {
    spec.trial_stream(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub alarm_log: AlarmLog,
    pub frequency: f64,
    /// `sigma_j - nu` for the first alarm `sigma_j >= nu`.
    pub first_alarm_after_change: Option<u64>,
}

impl TrialReport {
    fn new(alarm_log: AlarmLog, change_at: Option<u64>) -> Self {
        let first_alarm_after_change = change_at.and_then(|nu| {
            alarm_log
                .alarm_times()
                .iter()
                .find(|&&sigma| sigma >= nu)
                .map(|&sigma| sigma - nu)
        });
        Self {
            frequency: crate::detector::alarm_frequency(&alarm_log),
            alarm_log,
            first_alarm_after_change,
        }
    }
}

/// Runs several detectors on the same e-value stream of one trial.
pub fn run_trial<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    configs: &[DetectorConfig<T>],
    trial: u64,
) -> Result<Vec<TrialReport>> {
    let stream = spec.trial_stream::<T>(trial)?;
    let mut e_values = EValueStream::new(predictor);
    let mut detectors: Vec<Detector<T>> = configs.iter().copied().map(Detector::new).collect();
    for z in stream {
        let e = e_values.push(z)?.get();
        for detector in &mut detectors {
            detector.observe(e)?;
        }
    }
    Ok(detectors
        .into_iter()
        .map(|d| TrialReport::new(d.into_log(), spec.change_at))
        .collect())
}

fn run_trials<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    configs: &[DetectorConfig<T>],
    trials: u64,
) -> Result<Vec<Vec<TrialReport>>> {
    if trials == 0 {
        return Err(Error::Config("number of trials must be positive".into()));
    }
    spec.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(spec, predictor, configs, trial))
        .collect()
}

/// Empirical check of `P(A_n / n > 1/c + epsilon) <= epsilon` under the null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub procedure: Procedure,
    pub trials: u64,
    pub n: u64,
    pub c: f64,
    pub epsilon: f64,
    /// Fraction of trials with `A_n / n > 1/c + epsilon`.
    pub exceed_fraction: f64,
    pub bound: f64,
    pub mean_frequency: f64,
    pub max_frequency: f64,
    #[serde(skip)]
    pub frequencies: Vec<f64>,
}

impl ValidityReport {
    /// Per-trial alarm frequencies as CSV (`trial,frequency`).
    pub fn write_frequencies_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(e.to_string());
        writer.write_record(["trial", "frequency"]).map_err(io)?;
        for (trial, f) in self.frequencies.iter().enumerate() {
            writer
                .write_record([trial.to_string(), f.to_string()])
                .map_err(io)?;
        }
        writer.flush().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Validity experiment for several stopping rules sharing each trial's
/// e-values.
pub fn validity_experiments<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    configs: &[DetectorConfig<T>],
    trials: u64,
    epsilon: f64,
) -> Result<Vec<ValidityReport>> {
    if spec.change_at.is_some() {
        return Err(Error::Config(
            "validity experiments need a scenario without a change point".into(),
        ));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let runs = run_trials(spec, predictor, configs, trials)?;
    Ok(configs
        .iter()
        .enumerate()
        .map(|(i, config)| {
            let c = config.threshold().widen();
            let bound = 1.0 / c;
            let frequencies: Vec<f64> = runs.iter().map(|r| r[i].frequency).collect();
            let exceeded = frequencies.iter().filter(|&&f| f > bound + epsilon).count();
            ValidityReport {
                procedure: config.procedure(),
                trials,
                n: spec.n,
                c,
                epsilon,
                exceed_fraction: exceeded as f64 / trials as f64,
                bound,
                mean_frequency: frequencies.iter().sum::<f64>() / trials as f64,
                max_frequency: frequencies.iter().copied().fold(0.0, f64::max),
                frequencies,
            }
        })
        .collect())
}

pub fn validity_experiment<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    config: DetectorConfig<T>,
    trials: u64,
    epsilon: f64,
) -> Result<ValidityReport> {
    Ok(validity_experiments(spec, predictor, &[config], trials, epsilon)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayQuantiles {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Detection delays after the change point. Exploratory only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub exploratory: bool,
    pub procedure: Procedure,
    pub c: f64,
    pub trials: u64,
    pub change_at: u64,
    pub n: u64,
    /// Trials with an alarm at or after the change point.
    pub detected: u64,
    pub mean_delay: Option<f64>,
    pub median_delay: Option<f64>,
    pub quantiles: Option<DelayQuantiles>,
    pub delays: Vec<Option<u64>>,
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn delay_experiment<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    config: DetectorConfig<T>,
    trials: u64,
) -> Result<DelaySummary> {
    let Some(change_at) = spec.change_at else {
        return Err(Error::Config(
            "delay experiments need a scenario with a change point".into(),
        ));
    };
    let runs = run_trials(spec, predictor, &[config], trials)?;
    let delays: Vec<Option<u64>> = runs.iter().map(|r| r[0].first_alarm_after_change).collect();
    let mut observed: Vec<f64> = delays.iter().flatten().map(|&d| d as f64).collect();
    observed.sort_by(f64::total_cmp);
    let (mean_delay, median_delay, quantiles) = if observed.is_empty() {
        (None, None, None)
    } else {
        let q = |p| quantile(&observed, p);
        (
            Some(observed.iter().sum::<f64>() / observed.len() as f64),
            Some(q(0.5)),
            Some(DelayQuantiles {
                p10: q(0.1),
                p25: q(0.25),
                p50: q(0.5),
                p75: q(0.75),
                p90: q(0.9),
            }),
        )
    };
    Ok(DelaySummary {
        exploratory: true,
        procedure: config.procedure(),
        c: config.threshold().widen(),
        trials,
        change_at,
        n: spec.n,
        detected: observed.len() as u64,
        mean_delay,
        median_delay,
        quantiles,
        delays,
    })
}

/// Sample mean of `E_n` across trials, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EValueMean {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates `E[E_n]` at the requested steps over independent trials of `spec`.
pub fn e_value_means<T: Scalar>(
    spec: &ScenarioSpec,
    predictor: &dyn ScoreFunction<T>,
    trials: u64,
    at: &[usize],
) -> Result<Vec<EValueMean>> {
    if trials < 2 {
        return Err(Error::Config("need at least two trials".into()));
    }
    let horizon = at.iter().copied().max().unwrap_or(0);
    if at.contains(&0) || horizon as u64 > spec.n {
        return Err(Error::Config(format!("steps must lie in 1..={}", spec.n)));
    }
    let short = ScenarioSpec {
        n: horizon as u64,
        ..spec.clone()
    };
    let samples: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut online = EValueStream::new(predictor);
            let e: Vec<f64> = short
                .trial_stream::<T>(trial)?
                .into_iter()
                .map(|z| online.push(z).map(|v| v.get().widen()))
                .collect::<Result<_>>()?;
            Ok(at.iter().map(|&n| e[n - 1]).collect())
        })
        .collect::<Result<_>>()?;
    let count = trials as f64;
    Ok(at
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / count;
            let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (count - 1.0);
            EValueMean {
                n,
                mean,
                std_error: (var / count).sqrt(),
            }
        })
        .collect())
}
