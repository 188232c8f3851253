use chromactl::config::AppConfig;
use chromactl::eval::{chart_eval, chart_targets, reliability_trials};
use chromactl::pipeline::MixOptions;

fn cfg(noise: bool) -> AppConfig {
    let mut c = AppConfig::default();
    c.history_path = String::new();
    c.device.noise_on = noise;
    c
}

#[test]
fn noise_off_chart_is_perfect() {
    let report = chart_eval(&cfg(false)).unwrap();
    assert_eq!(report.total, 90);
    assert_eq!(report.match_rate, 1.0);
    assert!(report.entries.iter().all(|e| e.residual.unwrap() < 1e-6));
}

#[test]
fn zero_threshold_never_matches() {
    for noise in [false, true] {
        let mut c = cfg(noise);
        c.match_threshold = 0.0;
        assert_eq!(chart_eval(&c).unwrap().match_rate, 0.0);
        assert_eq!(
            reliability_trials("make 5 ml of cyan", 5, &c, &MixOptions::default()).unwrap().success_rate,
            0.0
        );
    }
    let mut c = cfg(true);
    c.match_threshold = 2.0;
    assert_eq!(chart_eval(&c).unwrap_err().code(), "INVALID_OPTION");
}

#[test]
fn noisy_chart_meets_target() {
    let report = chart_eval(&cfg(true)).unwrap();
    assert!(report.match_rate >= 0.9, "{}", report.match_rate);
    assert_eq!(chart_eval(&cfg(true)).unwrap(), report);
}

#[test]
fn four_pump_chart() {
    let mut c = AppConfig::with_diluent();
    c.history_path = String::new();
    c.device.noise_on = false;
    assert_eq!(chart_targets(4).len(), 90);
    assert_eq!(chart_eval(&c).unwrap().match_rate, 1.0);
}

#[test]
fn reliability_basics() {
    let one = reliability_trials("make 5 ml of cyan", 1, &cfg(false), &MixOptions::default()).unwrap();
    assert_eq!(one.success_rate, 1.0);
    let a = reliability_trials("I need a bright orange", 50, &cfg(true), &MixOptions::default()).unwrap();
    let b = reliability_trials("I need a bright orange", 50, &cfg(true), &MixOptions::default()).unwrap();
    assert_eq!(a.success_rate, b.success_rate);
    assert_eq!(a.latencies_s.len(), 50);
    assert!(reliability_trials("cyan", 0, &cfg(true), &MixOptions::default()).is_err());
    let bad = reliability_trials("blorange", 3, &cfg(true), &MixOptions::default()).unwrap();
    assert_eq!(bad.success_rate, 0.0);
    assert_eq!(bad.errors, vec!["NO_COLOR_FOUND"; 3]);
}
