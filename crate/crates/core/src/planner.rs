//! Mix planning: which fraction of each ink to dispense, and the pump flows,
//! setpoints and run time that realize those fractions.
//!
//! Forward model (clipped-linear subtractive mixing): for ink channel `ch`
//! with volume fraction `f_ch` and ink strength `s`, the channel density is
//! `min(1, s * f_ch)` and the resulting color is `1 - density`. An optional
//! fourth pump carries clear diluent and adds no density.
//!
//! With three inks, exactly reproducible colors have at least one zero
//! channel. Everything else is planned to the nearest reachable color and
//! the distance is reported as the plan residual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{color_distance, rgb_to_density, Color};
use crate::request::NormalizedRequest;
use crate::sim::{flow_rate, PumpModel};

const SIMPLEX_TOL: f64 = 1e-9;
/// Residuals closer than this are treated as ties.
const TIE_TOL: f64 = 1e-12;
/// Plans with a residual at or below this are reported as in gamut.
pub const GAMUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("fractions {0:?} are not on the probability simplex")]
    SimplexViolation(Vec<f64>),
    #[error("pump {pump} needs {required:.6} ml/s but tops out at {max:.6} ml/s")]
    InfeasibleFlow { pump: usize, required: f64, max: f64 },
    #[error("all fractions are zero")]
    ZeroTarget,
    #[error("flow {flow} ml/s outside [0, {max}] ml/s")]
    FlowOutOfRange { flow: f64, max: f64 },
    #[error("invalid mix configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    /// 3 inks (cyan, magenta, yellow), or 4 with a clear diluent last.
    pub pump_count: usize,
    pub ink_strength: f64,
    /// Flow of the pump with the largest fraction, ml/s.
    pub reference_flow: f64,
    pub grid_coarse: usize,
    pub grid_fine: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            pump_count: 3,
            ink_strength: 3.0,
            reference_flow: 0.2,
            grid_coarse: 50,
            grid_fine: 500,
        }
    }
}

impl MixConfig {
    pub fn with_diluent(mut self) -> Self {
        self.pump_count = 4;
        self
    }

    pub fn has_diluent(&self) -> bool {
        self.pump_count == 4
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.to_string()));
        if self.pump_count != 3 && self.pump_count != 4 {
            return bad("pump_count must be 3 or 4");
        }
        if !(self.ink_strength.is_finite() && self.ink_strength > 0.0) {
            return bad("ink_strength must be positive");
        }
        if !(self.reference_flow.is_finite() && self.reference_flow > 0.0) {
            return bad("reference_flow must be positive");
        }
        if self.grid_coarse == 0 || self.grid_fine == 0 || !self.grid_fine.is_multiple_of(self.grid_coarse) {
            return bad("grid_fine must be a positive multiple of grid_coarse");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub target: Color,
    pub total_volume_ml: f64,
    pub fractions: Vec<f64>,
    pub volumes_ml: Vec<f64>,
    /// Pump setpoints in volts.
    pub setpoints: Vec<f64>,
    /// Pump flows in ml/s.
    pub flows: Vec<f64>,
    pub duration_s: f64,
    pub predicted: Color,
    pub residual: f64,
    pub in_gamut: bool,
}

fn ink_channels(f: &[f64], s: f64) -> [f64; 3] {
    let ch = |x: f64| 1.0 - (s * x).min(1.0);
    [ch(f[0]), ch(f[1]), ch(f[2])]
}

fn on_simplex(f: &[f64]) -> bool {
    f.iter().all(|x| x.is_finite() && *x >= 0.0) && (f.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

/// Color produced by mixing inks in the given volume fractions.
pub fn mix_forward(f: &[f64], cfg: &MixConfig) -> Result<Color, PlanError> {
    if f.len() != cfg.pump_count || !on_simplex(f) {
        return Err(PlanError::SimplexViolation(f.to_vec()));
    }
    let [r, g, b] = ink_channels(f, cfg.ink_strength);
    Ok(Color::clamped(r, g, b))
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_to_simplex(u: &[f64]) -> Vec<f64> {
    if u.is_empty() {
        return Vec::new();
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    u.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Setpoint (volts) that makes `model` deliver `flow` ml/s.
pub fn setpoint_for_flow(model: &PumpModel, flow: f64) -> Result<f64, PlanError> {
    let max = flow_rate(model, model.v_max).unwrap_or(0.0);
    if !(flow.is_finite() && flow >= 0.0 && flow <= max * (1.0 + 1e-12)) {
        return Err(PlanError::FlowOutOfRange { flow, max });
    }
    if flow == 0.0 {
        return Ok(0.0);
    }
    Ok((model.v0 + (flow / model.k).sqrt()).min(model.v_max))
}

struct Search<'a> {
    cfg: &'a MixConfig,
    target: [f64; 3],
}

impl Search<'_> {
    fn objective(&self, f: &[f64]) -> f64 {
        let got = ink_channels(f, self.cfg.ink_strength);
        got.iter()
            .zip(self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Best grid point with resolution `1/n`, restricted to index bounds.
    /// Iterates in lexicographic order and keeps the first minimum.
    fn grid(&self, n: usize, lo: &[usize], hi: &[usize]) -> Option<(Vec<usize>, f64)> {
        let dims = self.cfg.pump_count;
        let mut idx = vec![0usize; dims];
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut f = vec![0.0; dims];
        self.grid_rec(n, lo, hi, 0, n, &mut idx, &mut f, &mut best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn grid_rec(
        &self,
        n: usize,
        lo: &[usize],
        hi: &[usize],
        depth: usize,
        remaining: usize,
        idx: &mut Vec<usize>,
        f: &mut Vec<f64>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let dims = idx.len();
        if depth == dims - 1 {
            if remaining < lo[depth] || remaining > hi[depth] {
                return;
            }
            idx[depth] = remaining;
            f[depth] = remaining as f64 / n as f64;
            let obj = self.objective(f);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                *best = Some((idx.clone(), obj));
            }
            return;
        }
        let upper = hi[depth].min(remaining);
        for i in lo[depth]..=upper {
            idx[depth] = i;
            f[depth] = i as f64 / n as f64;
            self.grid_rec(n, lo, hi, depth + 1, remaining - i, idx, f, best);
        }
    }

    fn coarse_then_fine(&self) -> Vec<f64> {
        let dims = self.cfg.pump_count;
        let nc = self.cfg.grid_coarse;
        let nf = self.cfg.grid_fine;
        let ratio = nf / nc;
        let (coarse, _) = self
            .grid(nc, &vec![0; dims], &vec![nc; dims])
            .expect("coarse grid is never empty");
        let lo: Vec<usize> = coarse.iter().map(|c| (c * ratio).saturating_sub(ratio)).collect();
        let hi: Vec<usize> = coarse.iter().map(|c| (c * ratio + ratio).min(nf)).collect();
        let (fine, _) = self.grid(nf, &lo, &hi).expect("fine window contains the coarse node");
        fine.iter().map(|&i| i as f64 / nf as f64).collect()
    }

    /// Closed-form candidates, one per set of saturated ink channels.
    ///
    /// Channels in the saturated set get at least `1/s` of the volume; the
    /// rest are placed at `target_density / s`, projected so that they fit
    /// in the volume left over. Leftover volume goes to the diluent if
    /// present, else to the last saturated channel.
    fn closed_form(&self) -> Vec<Vec<f64>> {
        let s = self.cfg.ink_strength;
        let diluent = self.cfg.has_diluent();
        let want: Vec<f64> = self.target.iter().map(|t| ((1.0 - t) / s).max(0.0)).collect();
        let mut out = Vec::new();
        for mask in 0u8..8 {
            let saturated: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
            let free: Vec<usize> = (0..3).filter(|i| mask & (1 << i) == 0).collect();
            let budget = 1.0 - saturated.len() as f64 / s;
            if budget < 0.0 {
                continue;
            }
            let slack_allowed = diluent || !saturated.is_empty();
            let u: Vec<f64> = free.iter().map(|&i| want[i]).collect();
            let sum: f64 = u.iter().sum();
            let placed: Vec<f64> = if slack_allowed && sum <= budget {
                u
            } else if budget == 0.0 {
                vec![0.0; u.len()]
            } else if u.is_empty() {
                continue;
            } else {
                let scaled: Vec<f64> = u.iter().map(|x| x / budget).collect();
                project_to_simplex(&scaled).into_iter().map(|x| x * budget).collect()
            };
            let mut f = vec![0.0; self.cfg.pump_count];
            for (&i, &x) in free.iter().zip(&placed) {
                f[i] = x.min(1.0 / s);
            }
            for &i in &saturated {
                f[i] = 1.0 / s;
            }
            let leftover = 1.0 - f.iter().sum::<f64>();
            if leftover < -SIMPLEX_TOL {
                continue;
            }
            let leftover = leftover.max(0.0);
            if diluent {
                f[3] += leftover;
            } else if let Some(&last) = saturated.last() {
                f[last] += leftover;
            } else if leftover > SIMPLEX_TOL {
                continue;
            }
            if on_simplex(&f) {
                out.push(f);
            }
        }
        out
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Fractions that best reproduce `target` under `cfg`.
pub fn plan_fractions(target: Color, cfg: &MixConfig) -> Result<Vec<f64>, PlanError> {
    cfg.validate()?;
    let s = cfg.ink_strength;
    let d = rgb_to_density(target).channels();
    if cfg.has_diluent() && d.iter().map(|x| x / s).sum::<f64>() <= 1.0 {
        let ink: Vec<f64> = d.iter().map(|x| x / s).collect();
        let dil = 1.0 - ink.iter().sum::<f64>();
        return Ok(vec![ink[0], ink[1], ink[2], dil.max(0.0)]);
    }

    let search = Search {
        cfg,
        target: target.channels(),
    };
    let mut best = search.coarse_then_fine();
    let mut best_res = search.objective(&best).sqrt();
    for cand in search.closed_form() {
        let res = search.objective(&cand).sqrt();
        if res < best_res - TIE_TOL || (res <= best_res + TIE_TOL && lex_less(&cand, &best)) {
            best = cand;
            best_res = res;
        }
    }
    Ok(best)
}

pub fn plan_mix(req: &NormalizedRequest, cfg: &MixConfig, models: &[PumpModel]) -> Result<MixPlan, PlanError> {
    if models.len() != cfg.pump_count {
        return Err(PlanError::InvalidConfig(format!(
            "{} pump models for {} pumps",
            models.len(),
            cfg.pump_count
        )));
    }
    let fractions = plan_fractions(req.target, cfg)?;
    let fmax = fractions.iter().cloned().fold(0.0, f64::max);
    if fmax <= 0.0 {
        return Err(PlanError::ZeroTarget);
    }

    let total = req.volume_ml;
    let volumes_ml: Vec<f64> = fractions.iter().map(|f| f * total).collect();
    let flows: Vec<f64> = fractions
        .iter()
        .map(|&f| if f == 0.0 { 0.0 } else { f / fmax * cfg.reference_flow })
        .collect();

    let mut setpoints = Vec::with_capacity(flows.len());
    for (i, (&q, model)) in flows.iter().zip(models).enumerate() {
        let max = flow_rate(model, model.v_max).unwrap_or(0.0);
        if q > max {
            return Err(PlanError::InfeasibleFlow {
                pump: i + 1,
                required: q,
                max,
            });
        }
        setpoints.push(setpoint_for_flow(model, q)?);
    }

    let total_flow: f64 = flows.iter().sum();
    let predicted = mix_forward(&fractions, cfg)?;
    let residual = color_distance(predicted, req.target);
    Ok(MixPlan {
        target: req.target,
        total_volume_ml: total,
        fractions,
        volumes_ml,
        setpoints,
        flows,
        duration_s: total / total_flow,
        predicted,
        residual,
        in_gamut: residual <= GAMUT_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::request::{understand, DEFAULT_VOLUME_ML};

    fn models(n: usize) -> Vec<PumpModel> {
        vec![PumpModel::default(); n]
    }

    fn request(target: Color, volume: f64) -> NormalizedRequest {
        NormalizedRequest {
            target,
            volume_ml: volume,
            source: crate::request::parse_request("cyan").unwrap(),
        }
    }

    #[test]
    fn forward_examples() {
        let cfg = MixConfig::default();
        assert_eq!(mix_forward(&[1.0, 0.0, 0.0], &cfg).unwrap(), Color::new(0.0, 1.0, 1.0).unwrap());
        let third = 1.0 / 3.0;
        assert_eq!(mix_forward(&[third, third, third], &cfg).unwrap(), Color::BLACK);
        let c = mix_forward(&[0.0, 0.1177, 0.8823], &cfg).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12 && (c.g - 0.6469).abs() < 1e-9 && c.b == 0.0);
        assert!(matches!(mix_forward(&[0.5, 0.6, 0.0], &cfg), Err(PlanError::SimplexViolation(_))));
        assert!(matches!(mix_forward(&[1.2, -0.2, 0.0], &cfg), Err(PlanError::SimplexViolation(_))));
    }

    #[test]
    fn diluent_adds_no_density() {
        let cfg = MixConfig::default().with_diluent();
        assert_eq!(mix_forward(&[0.0, 0.0, 0.0, 1.0], &cfg).unwrap(), Color::WHITE);
    }

    #[test]
    fn projection_examples() {
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(project_to_simplex(&[1.2, 0.1, 0.1]), vec![1.0, 0.0, 0.0]);
        let third = 1.0 / 3.0;
        let p = project_to_simplex(&[third, third, third]);
        for x in &p {
            assert!((x - third).abs() < 1e-15);
        }
    }

    #[test]
    fn setpoint_examples() {
        let m = PumpModel::default();
        assert_eq!(setpoint_for_flow(&m, 0.0).unwrap(), 0.0);
        assert!((setpoint_for_flow(&m, 0.2).unwrap() - (100.0 + 2000f64.sqrt())).abs() < 1e-12);
        assert!((setpoint_for_flow(&m, 0.2).unwrap() - 144.72).abs() < 0.01);
        assert!((setpoint_for_flow(&m, 0.08).unwrap() - 128.28).abs() < 0.01);
        assert!(matches!(setpoint_for_flow(&m, 5.0), Err(PlanError::FlowOutOfRange { .. })));
        assert!(matches!(setpoint_for_flow(&m, -0.1), Err(PlanError::FlowOutOfRange { .. })));
    }

    #[test]
    fn bright_orange_plan() {
        let req = understand("I need a bright orange", DEFAULT_VOLUME_ML).unwrap();
        let plan = plan_mix(&req, &MixConfig::default(), &models(3)).unwrap();
        assert_eq!(plan.fractions[0], 0.0);
        assert!((plan.fractions[1] - 0.1177).abs() < 1e-4);
        assert!((plan.fractions[2] - 0.8823).abs() < 1e-4);
        assert!(plan.residual < 1e-12);
        assert!(plan.in_gamut);
        assert_eq!(plan.flows[2], 0.2);
    }

    #[test]
    fn cyan_corner() {
        let req = understand("make 5 ml of cyan", DEFAULT_VOLUME_ML).unwrap();
        let plan = plan_mix(&req, &MixConfig::default(), &models(3)).unwrap();
        assert_eq!(plan.fractions, vec![1.0, 0.0, 0.0]);
        assert_eq!(plan.volumes_ml, vec![5.0, 0.0, 0.0]);
        assert_eq!(plan.residual, 0.0);
        assert_eq!(plan.flows, vec![0.2, 0.0, 0.0]);
        assert_eq!(plan.setpoints[1], 0.0);
        assert!((plan.duration_s - 25.0).abs() < 1e-12);
    }

    #[test]
    fn gray_is_out_of_gamut() {
        let gray = Color::new(0.5, 0.5, 0.5).unwrap();
        let plan = plan_mix(&request(gray, 5.0), &MixConfig::default(), &models(3)).unwrap();
        assert!((plan.residual - 0.5).abs() < 1e-12);
        assert!(!plan.in_gamut);
        let mut ch = plan.predicted.channels();
        ch.sort_by(f64::total_cmp);
        assert!(ch[0].abs() < 1e-12 && (ch[1] - 0.5).abs() < 1e-12 && (ch[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diluent_mode_is_exact() {
        let cfg = MixConfig::default().with_diluent();
        let gray = Color::new(0.5, 0.5, 0.5).unwrap();
        let plan = plan_mix(&request(gray, 5.0), &cfg, &models(4)).unwrap();
        assert!(plan.residual <= 1e-9);
        assert!((plan.fractions[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ratios_and_volumes() {
        let target = Color::new(0.3, 0.0, 0.7).unwrap();
        let plan = plan_mix(&request(target, 7.5), &MixConfig::default(), &models(3)).unwrap();
        assert!((plan.volumes_ml.iter().sum::<f64>() - 7.5).abs() < 1e-6);
        let fmax = plan.fractions.iter().cloned().fold(0.0, f64::max);
        let qmax = plan.flows.iter().cloned().fold(0.0, f64::max);
        assert_eq!(qmax, 0.2);
        for (f, q) in plan.fractions.iter().zip(&plan.flows) {
            assert!((q / qmax - f / fmax).abs() < 1e-9);
        }
        let total: f64 = plan.flows.iter().sum();
        assert!((plan.duration_s - 7.5 / total).abs() < 1e-12);
    }

    #[test]
    fn infeasible_flow_is_reported() {
        let weak = PumpModel {
            k: 1e-9,
            ..PumpModel::default()
        };
        let req = understand("cyan", 5.0).unwrap();
        let err = plan_mix(&req, &MixConfig::default(), &[weak, weak, weak]).unwrap_err();
        assert!(matches!(err, PlanError::InfeasibleFlow { pump: 1, .. }));
    }

    #[test]
    fn config_validation() {
        let mut cfg = MixConfig::default();
        cfg.grid_fine = 75;
        assert!(cfg.validate().is_err());
        cfg = MixConfig {
            pump_count: 5,
            ..MixConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
