//! Evaluation harnesses: match rate over a procedural color chart, and
//! repeated-run reliability for a single request.

use chromactl_core::Color;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::history::History;
use crate::pipeline::{App, MixOptions, PipelineError};

/// Seed used to draw the chart's random targets.
pub const CHART_SEED: u64 = 90;
pub const CHART_SIZE: usize = 90;
const LEVELS: [f64; 6] = [0.15, 0.3, 0.45, 0.6, 0.75, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartTarget {
    pub label: String,
    pub color: Color,
}

fn quantized(ch: [f64; 3]) -> Color {
    let q = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    Color::from_rgb8(q(ch[0]), q(ch[1]), q(ch[2]))
}

/// The evaluation chart. Every target is 8-bit so it can be requested as
/// a hex literal, and every target is inside the rig's gamut.
///
/// Three pumps: the six primary and secondary corners, a 45-point grid
/// over the faces with one zero channel, and 39 seeded targets with one
/// zero channel and random intensities on the other two. Four pumps: a
/// 5 x 6 x 3 grid over the cube.
pub fn chart_targets(pump_count: usize) -> Vec<ChartTarget> {
    let mut out = Vec::with_capacity(CHART_SIZE);
    if pump_count == 4 {
        for (i, r) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            for (j, g) in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0].iter().enumerate() {
                for (k, b) in [0.1, 0.5, 0.9].iter().enumerate() {
                    out.push(ChartTarget {
                        label: format!("cube-{i}{j}{k}"),
                        color: quantized([*r, *g, *b]),
                    });
                }
            }
        }
        return out;
    }

    let corners = [
        ("cyan", [0.0, 1.0, 1.0]),
        ("magenta", [1.0, 0.0, 1.0]),
        ("yellow", [1.0, 1.0, 0.0]),
        ("red", [1.0, 0.0, 0.0]),
        ("green", [0.0, 1.0, 0.0]),
        ("blue", [0.0, 0.0, 1.0]),
    ];
    for (name, ch) in corners {
        out.push(ChartTarget {
            label: name.to_string(),
            color: quantized(ch),
        });
    }

    let mut pair = 0;
    for zero in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&c| c != zero).collect();
        for (a, &lo) in LEVELS.iter().enumerate() {
            for &hi in &LEVELS[a + 1..] {
                let (first, second) = if pair % 2 == 0 { (lo, hi) } else { (hi, lo) };
                let mut ch = [0.0; 3];
                ch[others[0]] = first;
                ch[others[1]] = second;
                out.push(ChartTarget {
                    label: format!("face{zero}-{pair}"),
                    color: quantized(ch),
                });
                pair += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(CHART_SEED);
    for i in 0..CHART_SIZE - out.len() {
        let zero = rng.random_range(0..3);
        let mut ch = [0.0; 3];
        for (c, v) in ch.iter_mut().enumerate() {
            if c != zero {
                *v = rng.random_range(0.05..0.95);
            }
        }
        out.push(ChartTarget {
            label: format!("mixed-{i}"),
            color: quantized(ch),
        });
    }
    out
}

/// Independent per-trial seed from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartEntry {
    pub label: String,
    pub target: Color,
    pub achieved: Option<Color>,
    pub distance: Option<f64>,
    pub residual: Option<f64>,
    pub matched: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReport {
    pub match_rate: f64,
    pub matched: usize,
    pub total: usize,
    pub threshold: f64,
    pub noise_on: bool,
    pub entries: Vec<ChartEntry>,
}

/// Evaluation threshold, and a config the pipeline accepts. The harnesses
/// allow a threshold of 0 (nothing matches), which a rig config does not.
fn split_threshold(cfg: &AppConfig) -> Result<(f64, AppConfig), PipelineError> {
    let threshold = cfg.match_threshold;
    if !(threshold >= 0.0 && threshold < 3f64.sqrt()) {
        return Err(PipelineError::InvalidOption(format!("threshold {threshold} must be in [0, sqrt 3)")));
    }
    let mut base = cfg.clone();
    if threshold == 0.0 {
        base.match_threshold = AppConfig::default().match_threshold;
    }
    Ok((threshold, base))
}

/// Run every chart target through the full mix pipeline on a fresh device
/// seeded from the configured seed and the target index.
pub fn chart_eval(cfg: &AppConfig) -> Result<ChartReport, PipelineError> {
    let (threshold, base) = split_threshold(cfg)?;
    let targets = chart_targets(cfg.mix.pump_count);
    let mut entries = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        let mut trial = base.clone();
        trial.device.seed = derive_seed(cfg.device.seed, i as u64);
        let app = App::new(trial, History::in_memory())?;
        let text = format!("{} ml of {}", cfg.default_volume_ml, t.color.to_hex());
        let entry = match app.mix(&text, &MixOptions::default()) {
            Ok(out) => ChartEntry {
                label: t.label.clone(),
                target: t.color,
                achieved: Some(out.record.achieved),
                distance: Some(out.record.distance),
                residual: out.record.plan.as_ref().map(|p| p.residual),
                matched: out.record.distance < threshold,
                error: None,
            },
            Err(e) => ChartEntry {
                label: t.label.clone(),
                target: t.color,
                achieved: None,
                distance: None,
                residual: None,
                matched: false,
                error: Some(e.code().to_string()),
            },
        };
        entries.push(entry);
    }
    let matched = entries.iter().filter(|e| e.matched).count();
    Ok(ChartReport {
        match_rate: matched as f64 / entries.len() as f64,
        matched,
        total: entries.len(),
        threshold,
        noise_on: cfg.device.noise_on,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub text: String,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Wall-clock translation time per run, seconds.
    pub latencies_s: Vec<f64>,
    pub max_latency_s: f64,
    /// Simulated dispense time per successful run, seconds.
    pub dispense_s: Vec<f64>,
    pub errors: Vec<String>,
}

/// Repeat one request `n` times, each on a fresh device whose seed is
/// derived from the configured seed, and count matched runs.
pub fn reliability_trials(text: &str, n: usize, cfg: &AppConfig, opts: &MixOptions) -> Result<ReliabilityReport, PipelineError> {
    if n == 0 {
        return Err(PipelineError::InvalidOption("n must be at least 1".into()));
    }
    let (threshold, base) = split_threshold(cfg)?;
    let mut successes = 0;
    let mut latencies_s = Vec::with_capacity(n);
    let mut dispense_s = Vec::new();
    let mut errors = Vec::new();
    for i in 0..n {
        let mut trial = base.clone();
        trial.device.seed = derive_seed(cfg.device.seed, i as u64);
        let app = App::new(trial, History::in_memory())?;
        match app.mix(text, opts) {
            Ok(out) => {
                latencies_s.push(out.translate_latency_s);
                dispense_s.push(out.record.result.duration_s);
                if out.record.distance < threshold {
                    successes += 1;
                }
            }
            Err(e) => errors.push(e.code().to_string()),
        }
    }
    let max_latency_s = latencies_s.iter().cloned().fold(0.0, f64::max);
    Ok(ReliabilityReport {
        text: text.to_string(),
        n,
        successes,
        success_rate: successes as f64 / n as f64,
        latencies_s,
        max_latency_s,
        dispense_s,
        errors,
    })
}
