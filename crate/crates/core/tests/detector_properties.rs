use driftguard::oracle::{
    brute_force_musuc, brute_force_rs, check_dominance_rs, check_interval_coverage,
    musuc_dominance, reversed_sr,
};
use driftguard::{
    detect_on_e_values, run_detector, AlarmLog, ConstantScore, Detector, DetectorConfig,
    Observation, Procedure,
};
use proptest::prelude::*;

fn e_values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            (-6.0f64..=6.0).prop_map(|x| 10f64.powf(x)),
            prop::sample::select(vec![0.25, 0.5, 1.0, 2.0, 4.0]),
            0.5f64..1.6,
        ],
        0..=max_len,
    )
}

fn threshold() -> impl Strategy<Value = f64> {
    prop_oneof![
        (2u32..50).prop_map(f64::from),
        (1.0f64..50.0).prop_filter("c > 1", |c| *c > 1.0)
    ]
}

fn config(procedure: Procedure, c: f64) -> DetectorConfig<f64> {
    DetectorConfig::new(c, procedure).unwrap()
}

proptest! {
    #[test]
    fn engines_match_exact_oracles(e in e_values(120), c in threshold()) {
        let rs = detect_on_e_values(&e, config(Procedure::RobertsShiryaev, c)).unwrap();
        prop_assert_eq!(rs, brute_force_rs(&e, c).unwrap());
        let musuc = detect_on_e_values(&e, config(Procedure::Musuc, c)).unwrap();
        prop_assert_eq!(musuc, brute_force_musuc(&e, c).unwrap());
    }

    #[test]
    fn single_precision_engines_match_exact_oracles(
        e in prop::collection::vec((-3.0f32..=3.0).prop_map(|x| 10f32.powf(x)), 0..100),
        c in 1.5f32..40.0,
    ) {
        for procedure in [Procedure::RobertsShiryaev, Procedure::Musuc] {
            let engine = detect_on_e_values(&e, DetectorConfig::new(c, procedure).unwrap()).unwrap();
            let oracle = match procedure {
                Procedure::RobertsShiryaev => brute_force_rs(&e, c).unwrap(),
                Procedure::Musuc => brute_force_musuc(&e, c).unwrap(),
            };
            prop_assert_eq!(engine, oracle);
        }
    }

    #[test]
    fn state_resets_after_each_alarm(e in e_values(100), c in threshold()) {
        for procedure in [Procedure::RobertsShiryaev, Procedure::Musuc] {
            let full = detect_on_e_values(&e, config(procedure, c)).unwrap();
            if let Some(&sigma) = full.alarm_times().first() {
                let rest = detect_on_e_values(&e[sigma as usize..], config(procedure, c)).unwrap();
                let shifted: Vec<u64> = rest.alarm_times().iter().map(|t| t + sigma).collect();
                prop_assert_eq!(&full.alarm_times()[1..], shifted.as_slice());
            }
        }
    }

    #[test]
    fn alarm_counts_are_prefix_consistent(e in e_values(100), c in threshold(), cut in 0usize..100) {
        let cut = cut.min(e.len());
        let full = detect_on_e_values(&e, config(Procedure::RobertsShiryaev, c)).unwrap();
        let prefix = detect_on_e_values(&e[..cut], config(Procedure::RobertsShiryaev, c)).unwrap();
        prop_assert_eq!(prefix, full.truncated(cut as u64));
    }

    #[test]
    fn forward_rs_is_dominated_by_reversed_sr(e in e_values(150), c in threshold()) {
        prop_assert!(check_dominance_rs(&e, c).unwrap());
        prop_assert!(check_interval_coverage(&e, c).unwrap());
    }

    #[test]
    fn rs_alarms_no_later_than_musuc(e in e_values(150), c in threshold()) {
        let report = musuc_dominance(&e, c).unwrap();
        prop_assert!(report.holds(), "{:?}", report.violation);
        prop_assert!(report.rs.count() >= report.musuc.count());
    }

    #[test]
    fn constant_e_law(c in 2u32..60, n in 0u64..400) {
        let stream = || (0..n).map(|i| Observation::scalar(i as f64).unwrap());
        let c = f64::from(c);
        let rs = run_detector(&ConstantScore, stream(), config(Procedure::RobertsShiryaev, c)).unwrap();
        let expected: Vec<u64> = (1..=n / c as u64).map(|j| j * c as u64).collect();
        prop_assert_eq!(rs.alarm_times(), expected.as_slice());
        let musuc = run_detector(&ConstantScore, stream(), config(Procedure::Musuc, c)).unwrap();
        prop_assert_eq!(musuc.count(), 0);
    }
}

#[test]
fn reversed_sr_hand_example() {
    let run = reversed_sr(&[1.0; 7], 3.0).unwrap();
    assert_eq!(run.tau_times, [5, 2]);
    assert_eq!(
        brute_force_rs(&[1.0; 7], 3.0).unwrap().alarm_times(),
        [3, 6]
    );
}

#[test]
fn zero_e_value_ends_the_product_but_not_the_run() {
    // A zero wipes out the run product; the RS sum keeps its earlier terms.
    let e = [2.0, 0.0, 5.0, 5.0];
    assert_eq!(
        detect_on_e_values(&e, config(Procedure::Musuc, 4.0))
            .unwrap()
            .alarm_times(),
        [] as [u64; 0]
    );
    assert_eq!(
        brute_force_musuc(&e, 4.0).unwrap().alarm_times(),
        [] as [u64; 0]
    );
    assert_eq!(
        detect_on_e_values(&e, config(Procedure::RobertsShiryaev, 4.0)).unwrap(),
        brute_force_rs(&e, 4.0).unwrap()
    );
    assert!(reversed_sr(&e, 4.0).is_err());
}

#[test]
fn huge_products_neither_overflow_nor_lose_alarms() {
    let e = vec![1e300; 50];
    let log = detect_on_e_values(&e, config(Procedure::Musuc, 1e10)).unwrap();
    assert_eq!(log.alarm_times(), (1..=50).collect::<Vec<u64>>().as_slice());
    let tiny = vec![1e-300; 50];
    let mut detector = Detector::new(config(Procedure::Musuc, 2.0));
    for &x in &tiny {
        detector.observe(x).unwrap();
    }
    // The run product sinks far below the subnormal range and climbs back to about 1.
    for &x in &e {
        assert!(detector.observe(x).unwrap().is_none());
    }
    assert_eq!(detector.log(), &AlarmLog::new(vec![], 100).unwrap());
}
