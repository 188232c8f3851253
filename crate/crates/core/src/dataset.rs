//! Fine-tuning dataset export: prompts rendered from the request grammar,
//! completions produced by the rule-based pipeline.
//!
//! Records are written one JSON object per line with `prompt`,
//! `completion` and `meta` fields.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{Color, Modifier};
use crate::request::{color_names, render_sentence, understand, SENTENCE_TEMPLATES};
use crate::translate::{translate_request, validate_program, PipelineConfig};

const VOLUMES_ML: [f64; 9] = [1.0, 2.0, 2.5, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub target: Color,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub prompt: String,
    pub completion: String,
    pub meta: RecordMeta,
}

/// Build a record for one prompt, or `None` if the pipeline rejects it.
pub fn record_for(prompt: &str, cfg: &PipelineConfig) -> Option<DatasetRecord> {
    let state = cfg.fresh_state(0);
    let req = understand(prompt, cfg.default_volume_ml).ok()?;
    let t = translate_request(&req, cfg, &state).ok()?;
    let plan = t.plan?;
    Some(DatasetRecord {
        prompt: prompt.to_string(),
        completion: t.program.to_text(),
        meta: RecordMeta {
            target: plan.target,
            residual: plan.residual,
        },
    })
}

/// The worked examples shown to the language model.
pub fn few_shot_records(cfg: &PipelineConfig) -> Vec<DatasetRecord> {
    [
        "I need a bright orange",
        "make 5 ml of cyan",
        "give me 2 ml of dark teal please",
        "please mix 10 milliliters of #ff8000",
    ]
    .iter()
    .filter_map(|p| record_for(p, cfg))
    .collect()
}

fn sample_base(rng: &mut ChaCha8Rng) -> String {
    let names: Vec<&str> = color_names().collect();
    match rng.random_range(0..10) {
        0 => format!("#{:06x}", rng.random_range(0..=0xff_ffffu32)),
        1 => format!(
            "rgb({},{},{})",
            rng.random::<u8>(),
            rng.random::<u8>(),
            rng.random::<u8>()
        ),
        _ => names.choose(rng).expect("non-empty table").to_string(),
    }
}

fn sample_modifiers(rng: &mut ChaCha8Rng) -> Vec<Modifier> {
    let count = rng.random_range(0..=2);
    let mut out: Vec<Modifier> = Vec::with_capacity(count);
    while out.len() < count {
        let m = *Modifier::ALL.choose(rng).expect("non-empty");
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

/// `n` unique records, deterministic in `seed`.
pub fn generate_dataset(n: usize, seed: u64, cfg: &PipelineConfig) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let max_attempts = 100 * n.max(1);
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let base = sample_base(&mut rng);
        let modifiers = sample_modifiers(&mut rng);
        let volume = if rng.random_bool(0.3) {
            None
        } else {
            Some(*VOLUMES_ML.choose(&mut rng).expect("non-empty"))
        };
        let template = rng.random_range(0..SENTENCE_TEMPLATES.len());
        let prompt = render_sentence(template, &base, &modifiers, volume);
        if seen.contains(&prompt) {
            continue;
        }
        if let Some(rec) = record_for(&prompt, cfg) {
            seen.insert(prompt);
            out.push(rec);
        }
    }
    out
}

/// Newline-delimited JSON, one record per line.
pub fn write_jsonl<W: Write>(records: &[DatasetRecord], mut w: W) -> io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// True when the completion parses and passes the check on a fresh device.
pub fn record_is_valid(rec: &DatasetRecord, cfg: &PipelineConfig) -> bool {
    validate_program(&rec.completion, cfg, &cfg.fresh_state(0)).is_ok()
}
