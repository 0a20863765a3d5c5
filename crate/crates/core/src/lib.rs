//! Online detection of departures from the IID assumption.
//!
//! Observations are turned into conformal e-values `E_1, E_2, ...`
//! ([`epredictor`]), which feed one of two stopping rules ([`detector`]):
//!
//! * **Roberts–Shiryaev** alarms when the within-run sum of forward products
//!   `E_s + E_s E_{s+1} + ... + E_s ... E_n` reaches the threshold `c`;
//! * **MUSUC** alarms when the within-run product `E_s ... E_n` reaches `c`.
//!
//! Under an IID stream the long-run fraction of steps that raise an alarm is
//! at most `1/c` in probability for both rules. [`oracle`] holds exact
//! reference evaluations used to test the engines, and [`sim`] is a Monte
//! Carlo harness for the false-alarm bound and for detection delays.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common cases.
//!
//! ```
//! use driftguard::{run_detector, DetectorConfig64, KnnScore, Observation64};
//!
//! // Twenty bounded observations, then values that double at every step.
//! let stream = (0..60)
//!     .map(|i| if i < 20 { (i as f64 * 1.7).sin() } else { (i as f64).exp2() })
//!     .map(|x| Observation64::scalar(x).unwrap());
//! let knn = KnnScore::new(1).unwrap();
//! let log = run_detector(&knn, stream, DetectorConfig64::roberts_shiryaev(20.0).unwrap()).unwrap();
//! assert!(log.alarm_times().iter().all(|&t| t > 20));
//! assert!(log.count() > 0);
//! ```

#![forbid(unsafe_code)]

pub mod cli;
pub mod detector;
pub mod epredictor;
pub mod error;
pub mod exact_sum;
pub mod oracle;
pub mod scalar;
pub mod sim;

pub use detector::{
    alarm_frequency, detect_on_e_values, musuc_step, rs_step, run_detector, AlarmLog, AlarmRecord,
    Detector, DetectorConfig, DetectorState, Procedure, RunProduct, SummaryRecord,
};
pub use epredictor::{
    conformal_e, evaluate_batch, knn_score, stream_e_values, Bag, BuiltinPredictor, ConstantScore,
    DistanceToMeanScore, EValue, EValueStream, EVector, KnnScore, Observation, ScoreFunction,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Observation64 = Observation<f64>;
pub type Observation32 = Observation<f32>;
pub type Bag64 = Bag<f64>;
pub type Bag32 = Bag<f32>;
pub type EVector64 = EVector<f64>;
pub type EVector32 = EVector<f32>;
pub type EValue64 = EValue<f64>;
pub type EValue32 = EValue<f32>;
pub type DetectorConfig64 = DetectorConfig<f64>;
pub type DetectorConfig32 = DetectorConfig<f32>;
pub type DetectorState64 = DetectorState<f64>;
pub type DetectorState32 = DetectorState<f32>;
pub type Detector64 = Detector<f64>;
pub type Detector32 = Detector<f32>;
