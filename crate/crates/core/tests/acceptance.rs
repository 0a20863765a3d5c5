//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria can be selected by number:
//! `cargo test --test acceptance -- 2 5`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Stdio};
use std::time::Instant;

use driftguard::cli::parse_detect_output;
use driftguard::oracle::{
    brute_force_musuc, brute_force_rs, check_dominance_rs, check_interval_coverage, musuc_dominance,
};
use driftguard::sim::{self, Distribution, ScenarioSpec};
use driftguard::{
    detect_on_e_values, evaluate_batch, run_detector, stream_e_values, BuiltinPredictor,
    ConstantScore, DetectorConfig, KnnScore, Observation, ScoreFunction,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// A batch mixing continuous values, heavy ties and wide magnitudes.
fn random_batch(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Observation<f64>> {
    let style = rng.random_range(0..3);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    (0..len)
        .map(|_| {
            let values = (0..dim)
                .map(|_| match style {
                    0 => scale * rng.random_range(-1.0..1.0),
                    1 => rng.random_range(0..4) as f64,
                    _ => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-8..8)),
                })
                .collect();
            Observation::new(values).unwrap()
        })
        .collect()
}

fn predictor(rng: &mut ChaCha8Rng, i: usize) -> BuiltinPredictor {
    match i % 3 {
        0 => BuiltinPredictor::knn(rng.random_range(1..=5)).unwrap(),
        1 => BuiltinPredictor::DistanceToMean,
        _ => BuiltinPredictor::Constant,
    }
}

/// Positive e-values within `[1e-6, 1e6]`.
fn random_e(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let style = rng.random_range(0..3);
    (0..len)
        .map(|_| match style {
            0 => 10f64.powf(rng.random_range(-6.0..=6.0)),
            1 => [0.25, 0.5, 1.0, 2.0, 4.0][rng.random_range(0..5)],
            _ => rng.random_range(0.5..1.6),
        })
        .collect()
}

/// A threshold in the open interval (1, 50); integers half of the time.
fn random_c(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        return rng.random_range(2..50) as f64;
    }
    loop {
        let c = rng.random_range(1.0..50.0);
        if c > 1.0 {
            return c;
        }
    }
}

fn e_predictor_axioms() -> Outcome {
    let mut rng = rng(1);
    let batches = 1200;
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let len = rng.random_range(1..=200);
        let dim = rng.random_range(1..=5);
        let p = predictor(&mut rng, i);
        let seq = random_batch(&mut rng, len, dim);
        let alphas = evaluate_batch(&p, &seq).map_err(err)?.into_inner();
        ensure!(
            alphas.len() == len,
            "batch {i}: {} e-values for {len} observations",
            alphas.len()
        );
        ensure!(
            alphas.iter().all(|a| a.is_finite() && *a >= 0.0),
            "batch {i} ({}): negative or non-finite e-value",
            p.name()
        );
        let mean = alphas.iter().sum::<f64>() / len as f64;
        worst = worst.max((mean - 1.0).abs());
        ensure!(
            (mean - 1.0).abs() <= 1e-12,
            "batch {i} ({}): mean {mean:e}",
            p.name()
        );

        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<_> = order.iter().map(|&j| seq[j].clone()).collect();
        let permuted_alphas = evaluate_batch(&p, &permuted).map_err(err)?.into_inner();
        for (pos, &j) in order.iter().enumerate() {
            ensure!(
                permuted_alphas[pos].to_bits() == alphas[j].to_bits(),
                "batch {i} ({}): permutation changed e-value {j}: {} vs {}",
                p.name(),
                permuted_alphas[pos],
                alphas[j]
            );
        }
    }
    Ok(format!(
        "{batches} batches, max |mean - 1| = {worst:.2e}, equivariance bit-exact"
    ))
}

fn engine_oracle_equivalence() -> Outcome {
    let mut rng = rng(2);
    let sequences = 1500;
    let (mut rs_alarms, mut musuc_alarms) = (0, 0);
    for i in 0..sequences {
        let len = rng.random_range(1..=200);
        let e = random_e(&mut rng, len);
        let c = random_c(&mut rng);
        let rs =
            detect_on_e_values(&e, DetectorConfig::roberts_shiryaev(c).unwrap()).map_err(err)?;
        let rs_oracle = brute_force_rs(&e, c).map_err(err)?;
        ensure!(
            rs == rs_oracle,
            "sequence {i}, c = {c}: RS {:?} vs oracle {:?}",
            rs.alarm_times(),
            rs_oracle.alarm_times()
        );
        let musuc = detect_on_e_values(&e, DetectorConfig::musuc(c).unwrap()).map_err(err)?;
        let musuc_oracle = brute_force_musuc(&e, c).map_err(err)?;
        ensure!(
            musuc == musuc_oracle,
            "sequence {i}, c = {c}: MUSUC {:?} vs oracle {:?}",
            musuc.alarm_times(),
            musuc_oracle.alarm_times()
        );
        rs_alarms += rs.count();
        musuc_alarms += musuc.count();
    }
    Ok(format!(
        "{sequences} sequences, {rs_alarms} RS and {musuc_alarms} MUSUC alarms matched exactly"
    ))
}

fn rs_dominance_and_coverage() -> Outcome {
    let mut rng = rng(3);
    let sequences = 1000;
    for i in 0..sequences {
        let len = rng.random_range(1..=500);
        let e = random_e(&mut rng, len);
        let c = random_c(&mut rng);
        ensure!(
            check_dominance_rs(&e, c).map_err(err)?,
            "sequence {i}: A_N > A'_N (c = {c})"
        );
        ensure!(
            check_interval_coverage(&e, c).map_err(err)?,
            "sequence {i}: an alarm interval holds no reversed stopping time (c = {c})"
        );
    }
    Ok(format!("{sequences} sequences with N <= 500"))
}

fn musuc_dominance_check() -> Outcome {
    let mut rng = rng(4);
    let sequences = 1000;
    for i in 0..sequences {
        let len = rng.random_range(1..=500);
        let e = random_e(&mut rng, len);
        let c = random_c(&mut rng);
        let report = musuc_dominance(&e, c).map_err(err)?;
        ensure!(
            report.holds(),
            "sequence {i}, c = {c}: {:?}",
            report.violation
        );
    }
    Ok(format!("{sequences} sequences with N <= 500"))
}

fn constant_e_laws() -> Outcome {
    for c in 2u64..=50 {
        for n in [0u64, 1, c - 1, c, c + 1, 3 * c, 1000, 1001] {
            let stream = (0..n).map(|i| Observation::scalar((i % 7) as f64).unwrap());
            let rs = run_detector(
                &ConstantScore,
                stream.clone(),
                DetectorConfig::roberts_shiryaev(c as f64).unwrap(),
            )
            .map_err(err)?;
            let expected: Vec<u64> = (1..=n / c).map(|j| j * c).collect();
            ensure!(
                rs.alarm_times() == expected,
                "c = {c}, n = {n}: RS alarms {:?}",
                rs.alarm_times()
            );
            if n > 0 {
                let freq = driftguard::alarm_frequency(&rs);
                ensure!(
                    freq == (n / c) as f64 / n as f64,
                    "c = {c}, n = {n}: frequency {freq}"
                );
                ensure!(
                    freq <= 1.0 / c as f64,
                    "c = {c}, n = {n}: frequency above 1/c"
                );
            }
            let musuc = run_detector(
                &ConstantScore,
                stream,
                DetectorConfig::musuc(c as f64).unwrap(),
            )
            .map_err(err)?;
            ensure!(
                musuc.count() == 0,
                "c = {c}, n = {n}: MUSUC alarms {:?}",
                musuc.alarm_times()
            );
        }
    }
    Ok("c in 2..=50: RS alarms at multiples of c, MUSUC silent".into())
}

fn monte_carlo_validity() -> Outcome {
    let spec = ScenarioSpec::iid(
        Distribution::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
        20_000,
        20_260_401,
    );
    let configs = [
        DetectorConfig::roberts_shiryaev(20.0).unwrap(),
        DetectorConfig::musuc(20.0).unwrap(),
    ];
    let knn = KnnScore::new(1).unwrap();
    let reports = sim::validity_experiments(&spec, &knn, &configs, 500, 0.02).map_err(err)?;
    let mut detail = Vec::new();
    for r in &reports {
        ensure!(
            r.exceed_fraction <= 0.05,
            "{}: exceed fraction {} > 0.05",
            r.procedure,
            r.exceed_fraction
        );
        detail.push(format!(
            "{} exceed {} (mean freq {:.2e})",
            r.procedure, r.exceed_fraction, r.mean_frequency
        ));
    }
    Ok(format!("500 trials, n = 20000: {}", detail.join(", ")))
}

fn e_value_mean() -> Outcome {
    let spec = ScenarioSpec::iid(
        Distribution::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
        50,
        7,
    );
    let knn = KnnScore::new(1).unwrap();
    let means = sim::e_value_means::<f64>(&spec, &knn, 2000, &[2, 10, 50]).map_err(err)?;
    let mut detail = Vec::new();
    for m in &means {
        ensure!(
            (m.mean - 1.0).abs() <= 3.0 * m.std_error,
            "n = {}: mean {} is more than 3 standard errors ({}) from 1",
            m.n,
            m.mean,
            m.std_error
        );
        detail.push(format!("E_{} = {:.4} +/- {:.4}", m.n, m.mean, m.std_error));
    }
    Ok(format!("2000 trials: {}", detail.join(", ")))
}

fn stream_batch_consistency() -> Outcome {
    let mut rng = rng(8);
    let streams = 150;
    for i in 0..streams {
        let len = rng.random_range(1..=200);
        let dim = rng.random_range(1..=3);
        let p = predictor(&mut rng, i);
        let seq = random_batch(&mut rng, len, dim);
        let online = stream_e_values(&p as &dyn ScoreFunction<f64>, seq.clone()).map_err(err)?;
        for n in 1..=len {
            let batch = evaluate_batch(&p, &seq[..n]).map_err(err)?.last().unwrap();
            ensure!(
                online[n - 1].get().to_bits() == batch.to_bits(),
                "stream {i} ({}), step {n}: online {} vs batch {batch}",
                p.name(),
                online[n - 1].get()
            );
        }
    }
    Ok(format!("{streams} streams, every prefix bit-identical"))
}

fn run_cli(args: &[&str], input: &[u8]) -> Result<String, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_driftguard"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(err)?;
    child.stdin.take().unwrap().write_all(input).map_err(err)?;
    let out = child.wait_with_output().map_err(err)?;
    ensure!(
        out.status.success(),
        "driftguard {args:?} exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).map_err(err)
}

fn cli_round_trip() -> Outcome {
    let spec = ScenarioSpec {
        dim: 2,
        ..ScenarioSpec::iid(
            Distribution::Gaussian {
                mean: 0.0,
                std: 1.0,
            },
            1500,
            9,
        )
    }
    .with_change(
        300,
        Distribution::MeanDrift {
            mean: 0.0,
            std: 1.0,
            slope: 0.02,
        },
    );
    let stream = sim::generate_stream::<f64>(&spec).map_err(err)?;
    let mut csv = String::from("a,b\n");
    for z in &stream {
        csv.push_str(&format!("{},{}\n", z.values()[0], z.values()[1]));
    }
    let config = DetectorConfig::roberts_shiryaev(5.0).unwrap();
    let knn = KnnScore::new(2).unwrap();
    let expected = run_detector(&knn, stream.clone(), config).map_err(err)?;
    ensure!(
        expected.count() >= 3,
        "scenario raised only {} alarms",
        expected.count()
    );

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("stream.csv");
    std::fs::write(&path, &csv).map_err(err)?;
    let args = [
        "detect",
        "--input",
        path.to_str().unwrap(),
        "--k",
        "2",
        "--threshold",
        "5",
    ];
    let (alarms, summary) = parse_detect_output(&run_cli(&args, b"")?).map_err(err)?;
    let expected_records: Vec<_> = expected.records().collect();
    ensure!(
        alarms == expected_records,
        "CLI alarms differ from run_detector"
    );
    ensure!(
        summary == Some(expected.summary()),
        "summary {summary:?} vs {:?}",
        expected.summary()
    );

    let lines: Vec<&str> = csv.lines().collect();
    let mut rng = rng(10);
    for _ in 0..100 {
        let keep = rng.random_range(0..=stream.len());
        let prefix: String = lines[..=keep].iter().map(|l| format!("{l}\n")).collect();
        let args = ["detect", "--k", "2", "--threshold", "5"];
        let (alarms, summary) =
            parse_detect_output(&run_cli(&args, prefix.as_bytes())?).map_err(err)?;
        let truncated = expected.truncated(keep as u64);
        ensure!(
            alarms == truncated.records().collect::<Vec<_>>(),
            "prefix of {keep} records: alarms differ from the full run"
        );
        ensure!(
            summary == Some(truncated.summary()),
            "prefix of {keep} records: summary {summary:?}"
        );
    }
    Ok(format!(
        "{} alarms reproduced record-for-record; 100 truncation points consistent",
        expected.count()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("e-predictor axioms", e_predictor_axioms),
        ("engine/oracle equivalence", engine_oracle_equivalence),
        (
            "RS dominance and interval coverage",
            rs_dominance_and_coverage,
        ),
        ("MUSUC dominance", musuc_dominance_check),
        ("constant-E laws", constant_e_laws),
        (
            "Monte Carlo validity (Gaussian null, kNN)",
            monte_carlo_validity,
        ),
        ("E_n mean", e_value_mean),
        ("stream/batch consistency", stream_batch_consistency),
        ("CLI round-trip and online prefix", cli_round_trip),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{number}] {name}: {detail} ({secs:.1}s)"),
            Err(reason) => {
                failures += 1;
                println!("FAIL [{number}] {name}: {reason} ({secs:.1}s)");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
