//! Closed-loop scenarios: sense, optionally falsify, control, actuate, record.

use crate::apar::{evaluate_rules, AparMode, AparParams, AparReport};
use crate::attack::{
    offset_attack, run_stealthy_attack, AmbiguityConfig, AttackError, AttackSettings, MomentRelaxation, DEFAULT_ALPHA,
    DEFAULT_MAX_ITER,
};
use crate::io::{load_env_csv, synth_env, IoError, SynthEnv};
use crate::model::{
    balancing_flow, compute_power_coeffs, compute_thermal_coeffs, hvac_power, zone_step, BuildingParams, EnvSample,
    PowerCoeffs, SensorPair, ThermalCoeffs,
};
use crate::mpc::{solve_tracking_best_effort, MpcError, TrackingProblem, COMFORT_TOL};
use crate::resilient::{solve_resilient, ResilientProblem};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "HVAC_REDTEAM_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("non-finite prediction at step {0}")]
    NonFinitePrediction(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

impl SimError {
    pub fn name(&self) -> &'static str {
        match self {
            SimError::Config(_) => "ValidationError",
            SimError::Io(e) => e.name(),
            SimError::NonFinitePrediction(_) => "NonFinitePrediction",
            SimError::LengthMismatch(..) => "LengthMismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Pi,
    StandardMpc,
    ResilientMpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    #[default]
    None,
    Offset,
    Stealthy,
}

/// Overrides applied on top of the named preset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_air: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sa_nominal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_r_setpoint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_r_lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_r_ub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdot_lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdot_ub: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: BuildingParams) -> BuildingParams {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.r, self.r);
        set(&mut p.c, self.c);
        set(&mut p.cop, self.cop);
        set(&mut p.beta, self.beta);
        set(&mut p.c_air, self.c_air);
        set(&mut p.dt, self.dt);
        set(&mut p.t_sa_nominal, self.t_sa_nominal);
        set(&mut p.t_r_setpoint, self.t_r_setpoint);
        set(&mut p.t_r_lb, self.t_r_lb);
        set(&mut p.t_r_ub, self.t_r_ub);
        set(&mut p.mdot_lb, self.mdot_lb);
        set(&mut p.mdot_ub, self.mdot_ub);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSource {
    Constant {
        t_out: f64,
        q_ig_w: f64,
        #[serde(default)]
        q_rad_w: f64,
    },
    Synthetic(SynthEnv),
    File {
        path: PathBuf,
        /// Effective solar aperture times absorptance (m²).
        #[serde(default = "one")]
        solar_gain_m2: f64,
    },
}

impl Default for EnvSource {
    /// Holds the stable preset at 24 °C with the flow that draws exactly 55 kW.
    fn default() -> Self {
        EnvSource::Constant {
            t_out: 33.57,
            q_ig_w: 167_822.32,
            q_rad_w: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant { watts: f64 },
    /// Contract a PI baseline toward its mean by `factor`.
    Shaped { factor: f64 },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Constant { watts: 55_000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub epsilon: f64,
    pub gamma: f64,
    pub sigma_tr: f64,
    pub sigma_tsa: f64,
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            epsilon: tol,
            gamma: tol,
            sigma_tr: tol,
            sigma_tsa: tol,
        }
    }

    fn with_bounds(&self, p: &BuildingParams) -> AmbiguityConfig {
        AmbiguityConfig {
            epsilon: self.epsilon,
            gamma: self.gamma,
            sigma_tr: self.sigma_tr,
            sigma_tsa: self.sigma_tsa,
            t_r_lb: p.t_r_lb,
            t_r_ub: p.t_r_ub,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::uniform(0.3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetSpec {
    pub t_r: f64,
    pub t_sa: f64,
}

impl Default for OffsetSpec {
    fn default() -> Self {
        Self { t_r: -0.3, t_sa: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    /// kg/s per °C.
    pub kp: f64,
    /// kg/s per °C·s.
    pub ki: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self { kp: 0.5, ki: 0.01 }
    }
}

fn default_id() -> String {
    "scenario".into()
}
fn default_preset() -> String {
    "stable-default".into()
}
fn default_horizon() -> usize {
    10
}
fn default_duration() -> usize {
    200
}
fn default_market_steps() -> usize {
    10
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub env: EnvSource,
    /// Look-ahead steps T.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Simulated steps.
    #[serde(default = "default_duration")]
    pub duration: usize,
    pub controller: ControllerKind,
    #[serde(default)]
    pub attack: AttackKind,
    #[serde(default)]
    pub offset: OffsetSpec,
    #[serde(default)]
    pub ambiguity: Tolerances,
    #[serde(default)]
    pub attacker_relaxation: MomentRelaxation,
    #[serde(default)]
    pub defender_relaxation: MomentRelaxation,
    #[serde(default = "default_alpha")]
    pub attack_alpha: f64,
    #[serde(default = "default_max_iter")]
    pub attack_max_iter: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub target: TargetSpec,
    /// Steps over which the reference is held constant.
    #[serde(default = "default_market_steps")]
    pub market_steps: usize,
    #[serde(default)]
    pub apar: AparParams,
    #[serde(default)]
    pub apar_mode: AparMode,
    #[serde(default)]
    pub pi: PiGains,
    /// First-order actuator lag (s); 0 disables it.
    #[serde(default)]
    pub actuator_tau_s: f64,
    /// Starting zone temperature; the setpoint when absent.
    #[serde(default)]
    pub initial_t_r: Option<f64>,
    /// When false the solve-time columns are recorded as zero so that runs
    /// are byte-reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl ScenarioConfig {
    pub fn new(controller: ControllerKind) -> Self {
        serde_json::from_value(serde_json::json!({ "controller": controller })).expect("defaults are complete")
    }

    pub fn building(&self) -> Result<BuildingParams, SimError> {
        let base = BuildingParams::preset(&self.preset)
            .ok_or_else(|| SimError::Config(format!("unknown preset {:?}", self.preset)))?;
        let p = self.params.apply(base);
        p.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if !(p.dt > 0.0) {
            return Err(SimError::Config("dt must be > 0".into()));
        }
        Ok(p)
    }

    pub fn ambiguity_config(&self) -> Result<AmbiguityConfig, SimError> {
        let amb = self.ambiguity.with_bounds(&self.building()?);
        amb.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(amb)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        let p = self.building()?;
        self.ambiguity_config()?;
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.duration < self.horizon {
            return bad("duration must be >= horizon");
        }
        if self.market_steps == 0 {
            return bad("market_steps must be >= 1");
        }
        if self.attack == AttackKind::Stealthy && self.seed.is_none() {
            return bad("a seed is required for the stealthy attack");
        }
        if !(self.attack_alpha > 0.0) || self.attack_max_iter == 0 {
            return bad("attack_alpha must be > 0 and attack_max_iter >= 1");
        }
        if !(self.actuator_tau_s >= 0.0) {
            return bad("actuator_tau_s must be >= 0");
        }
        if let Some(t) = self.initial_t_r {
            if !t.is_finite() {
                return bad("initial_t_r must be finite");
            }
        }
        match self.target {
            TargetSpec::Constant { watts } if !(watts.is_finite() && watts >= 0.0) => {
                return bad("target watts must be finite and >= 0")
            }
            TargetSpec::Shaped { factor } if !(0.0..=0.15).contains(&factor) => {
                return bad("shaping factor must lie in [0, 0.15]")
            }
            _ => {}
        }
        if !(self.pi.kp >= 0.0 && self.pi.ki >= 0.0) {
            return bad("PI gains must be >= 0");
        }
        self.apar.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.apar_mode == AparMode::MechCooling100Oa && p.beta != 1.0 {
            log::warn!("100% outdoor-air APAR mode with damper at {}", p.beta);
        }
        Ok(())
    }

    /// Environment samples, padded by holding the last one to cover `n` steps.
    pub fn environment(&self, n: usize) -> Result<Vec<EnvSample>, SimError> {
        let p = self.building()?;
        let mut env = match &self.env {
            EnvSource::Constant { t_out, q_ig_w, q_rad_w } => vec![EnvSample::new(*t_out, *q_ig_w, *q_rad_w)],
            EnvSource::Synthetic(s) => synth_env(s, p.dt),
            EnvSource::File { path, solar_gain_m2 } => load_env_csv(path, p.dt, *solar_gain_m2)?,
        };
        for e in &env {
            e.validate().map_err(|e| SimError::Config(e.to_string()))?;
        }
        let last = *env.last().ok_or_else(|| SimError::Config("empty environment".into()))?;
        env.resize(n.max(env.len()), last);
        env.truncate(n);
        Ok(env)
    }
}

/// Per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    /// Zone temperature at the start of the step (°C).
    pub tr_true: f64,
    pub tr_sensor: f64,
    pub tsa_sensor: f64,
    /// Flow applied to the plant (kg/s).
    pub mdot: f64,
    pub p_w: f64,
    pub p_ref_w: f64,
    pub apar: AparReport,
    pub t_ctrl_s: f64,
    pub t_atk_s: f64,
    pub attack_iterations: Option<usize>,
    pub attack_converged: Option<bool>,
    /// ⟨Δṁ, Δṁ⟩ per attack iteration.
    pub attack_deltas: Vec<f64>,
    /// Set when a solver failed and a fallback action was applied.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AttackStats {
    pub attacked_steps: usize,
    pub converged_steps: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

impl AttackStats {
    pub fn converged_fraction(&self) -> f64 {
        if self.attacked_steps == 0 {
            1.0
        } else {
            self.converged_steps as f64 / self.attacked_steps as f64
        }
    }
}

/// Population mean/std of solve times (s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TimingStats {
    pub ctrl_mean_s: f64,
    pub ctrl_std_s: f64,
    pub atk_mean_s: f64,
    pub atk_std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub records: Vec<StepRecord>,
    pub rmse_w: f64,
    pub max_abs_err_w: f64,
    pub comfort_violations: usize,
    /// Steps where a solver failed and a fallback was used.
    pub flagged_steps: usize,
    pub attack: AttackStats,
    pub timing: TimingStats,
}

impl RunResult {
    pub fn powers(&self) -> (Vec<f64>, Vec<f64>) {
        self.records.iter().map(|r| (r.p_w, r.p_ref_w)).unzip()
    }

    /// Mean P − P^ref (W).
    pub fn bias_w(&self) -> f64 {
        let n = self.records.len().max(1) as f64;
        self.records.iter().map(|r| r.p_w - r.p_ref_w).sum::<f64>() / n
    }
}

pub fn rmse(actual: &[f64], reference: &[f64]) -> Result<f64, SimError> {
    if actual.len() != reference.len() || actual.is_empty() {
        return Err(SimError::LengthMismatch(actual.len(), reference.len()));
    }
    let ss: f64 = actual.iter().zip(reference).map(|(a, r)| (a - r) * (a - r)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn timing_stats(result: &RunResult) -> TimingStats {
    let ctrl: Vec<f64> = result.records.iter().map(|r| r.t_ctrl_s).collect();
    let atk: Vec<f64> = result.records.iter().map(|r| r.t_atk_s).collect();
    let (ctrl_mean_s, ctrl_std_s) = mean_std(&ctrl);
    let (atk_mean_s, atk_std_s) = mean_std(&atk);
    TimingStats {
        ctrl_mean_s,
        ctrl_std_s,
        atk_mean_s,
        atk_std_s,
    }
}

/// Pulls the baseline toward its mean by `factor`, then keeps every value
/// within ±15% of the baseline at that step.
pub fn make_target_profile(baseline: &[f64], factor: f64) -> Vec<f64> {
    debug_assert!((0.0..=0.15).contains(&factor));
    if baseline.is_empty() {
        return Vec::new();
    }
    let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
    baseline
        .iter()
        .map(|&b| {
            let t = b - factor * (b - mean);
            let (lo, hi) = (0.85 * b, 1.15 * b);
            t.clamp(lo.min(hi), lo.max(hi))
        })
        .collect()
}

/// Discrete PI on zone temperature with clamping anti-windup.
#[derive(Debug, Clone)]
pub struct PiController {
    gains: PiGains,
    setpoint: f64,
    dt: f64,
    lb: f64,
    ub: f64,
    integral: f64,
}

impl PiController {
    /// `bias` is the flow applied at zero error, usually the balancing flow.
    pub fn new(gains: PiGains, p: &BuildingParams, bias: f64) -> Self {
        Self {
            gains,
            setpoint: p.t_r_setpoint,
            dt: p.dt,
            lb: p.mdot_lb,
            ub: p.mdot_ub,
            integral: bias.clamp(p.mdot_lb, p.mdot_ub),
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn update(&mut self, t_r: f64) -> f64 {
        let e = t_r - self.setpoint;
        let next = self.integral + self.gains.ki * e * self.dt;
        let u = next + self.gains.kp * e;
        let winding = (u > self.ub && e > 0.0) || (u < self.lb && e < 0.0);
        if !winding {
            self.integral = next;
        }
        (self.integral + self.gains.kp * e).clamp(self.lb, self.ub)
    }
}

fn shift(plan: &[f64]) -> Vec<f64> {
    let mut v = plan[1..].to_vec();
    v.push(*plan.last().expect("non-empty plan"));
    v
}

struct Series {
    params: BuildingParams,
    env: Vec<EnvSample>,
    power: Vec<PowerCoeffs>,
    thermal: Vec<ThermalCoeffs>,
    p_ref: Vec<f64>,
}

fn prepare(cfg: &ScenarioConfig) -> Result<Series, SimError> {
    cfg.validate()?;
    let params = cfg.building()?;
    let n = cfg.duration + cfg.horizon;
    let env = cfg.environment(n)?;
    let power = env.iter().map(|e| compute_power_coeffs(&params, e)).collect();
    let thermal = env.iter().map(|e| compute_thermal_coeffs(&params, e)).collect();
    let raw = match cfg.target {
        TargetSpec::Constant { watts } => vec![watts; n],
        TargetSpec::Shaped { factor } => {
            let mut base_cfg = cfg.clone();
            base_cfg.controller = ControllerKind::Pi;
            base_cfg.attack = AttackKind::None;
            base_cfg.target = TargetSpec::Constant { watts: 0.0 };
            base_cfg.record_timing = false;
            let base = run_closed_loop(&base_cfg)?;
            let p: Vec<f64> = base.records.iter().map(|r| r.p_w).collect();
            let mut t = make_target_profile(&p, factor);
            let last = *t.last().expect("duration >= 1");
            t.resize(n, last);
            t
        }
    };
    // market cadence: hold the value dispatched at the start of each block
    let p_ref = (0..n).map(|k| raw[k - k % cfg.market_steps]).collect();
    Ok(Series {
        params,
        env,
        power,
        thermal,
        p_ref,
    })
}

pub fn run_pi_baseline(cfg: &ScenarioConfig) -> Result<RunResult, SimError> {
    if cfg.controller != ControllerKind::Pi {
        return Err(SimError::Config("PI baseline requires controller = pi".into()));
    }
    run_closed_loop(cfg)
}

pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<RunResult, SimError> {
    let s = prepare(cfg)?;
    let p = &s.params;
    let h = cfg.horizon;
    let amb = cfg.ambiguity_config()?;
    let settings = AttackSettings {
        alpha: cfg.attack_alpha,
        max_iter: cfg.attack_max_iter,
        relaxation: cfg.attacker_relaxation,
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));

    let mut t_r = cfg.initial_t_r.unwrap_or(p.t_r_setpoint);
    let setpoint = SensorPair::new(p.t_r_setpoint, p.t_sa_nominal);
    let bias = balancing_flow(&s.thermal[0], &setpoint).unwrap_or(0.5 * (p.mdot_lb + p.mdot_ub));
    let mut pi = PiController::new(cfg.pi, p, bias);
    let mut applied = bias.clamp(p.mdot_lb, p.mdot_ub);
    let mut plan: Option<Vec<f64>> = None;
    let mut records = Vec::with_capacity(cfg.duration);

    for k in 0..cfg.duration {
        let step_seed = seeds.next_u64();
        let truth = SensorPair::new(t_r, p.t_sa_nominal);
        let window = TrackingProblem {
            p_ref: s.p_ref[k..k + h].to_vec(),
            power: s.power[k..k + h].to_vec(),
            thermal: s.thermal[k..k + h].to_vec(),
            initial: truth,
            t_r_lb: p.t_r_lb,
            t_r_ub: p.t_r_ub,
            mdot_lb: p.mdot_lb,
            mdot_ub: p.mdot_ub,
            warm_start: None,
        };
        let mut flag: Option<String> = None;

        let clock = Instant::now();
        let (mut attack_iterations, mut attack_converged, mut attack_deltas) = (None, None, Vec::new());
        let sensors = match cfg.attack {
            AttackKind::None => truth,
            AttackKind::Offset => offset_attack(truth, cfg.offset.t_r, cfg.offset.t_sa),
            AttackKind::Stealthy => match run_stealthy_attack(truth, &window, &amb, step_seed, &settings)
                .or_else(|e| match e {
                    AttackError::NotConverged(o) => Ok(*o),
                    e => Err(e),
                }) {
                Ok(o) => {
                    attack_iterations = Some(o.iterations);
                    attack_converged = Some(o.converged);
                    attack_deltas = o.deltas;
                    o.falsified
                }
                Err(AttackError::Mpc(MpcError::NonFinitePrediction)) => return Err(SimError::NonFinitePrediction(k)),
                Err(e) => {
                    flag = Some(format!("attack failed: {e}"));
                    truth
                }
            },
        };
        let t_atk_s = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut problem = window.clone();
        problem.initial = sensors;
        problem.warm_start = plan.as_deref().map(shift);
        let command = match cfg.controller {
            ControllerKind::Pi => pi.update(sensors.t_r),
            ControllerKind::StandardMpc | ControllerKind::ResilientMpc => {
                let standard = match solve_tracking_best_effort(&problem) {
                    Ok((traj, _)) => Some(traj),
                    Err(MpcError::NonFinitePrediction) => return Err(SimError::NonFinitePrediction(k)),
                    Err(e) => {
                        flag = Some(format!("tracking failed: {e}"));
                        None
                    }
                };
                let chosen = if cfg.controller == ControllerKind::ResilientMpc {
                    let rp = ResilientProblem {
                        tracking: problem.clone(),
                        ambiguity: amb,
                        relaxation: cfg.defender_relaxation,
                        warm_start: standard.clone(),
                    };
                    match solve_resilient(&rp) {
                        Ok(sol) => Some(sol.mdot),
                        Err(e) => {
                            flag = Some(format!("resilient fallback: {e}"));
                            standard.map(|t| t.mdot)
                        }
                    }
                } else {
                    standard.map(|t| t.mdot)
                };
                match chosen {
                    Some(m) => {
                        let first = m[0];
                        plan = Some(m);
                        first
                    }
                    None => applied,
                }
            }
        };
        let t_ctrl_s = clock.elapsed().as_secs_f64();

        if cfg.actuator_tau_s > 0.0 {
            applied += p.dt / (cfg.actuator_tau_s + p.dt) * (command - applied);
        } else {
            applied = command;
        }
        let p_w = hvac_power(&s.power[k], applied, &truth);
        let apar = evaluate_rules(sensors, s.env[k].t_out, p.beta, &cfg.apar, cfg.apar_mode);
        records.push(StepRecord {
            step: k,
            time_s: k as f64 * p.dt,
            tr_true: t_r,
            tr_sensor: sensors.t_r,
            tsa_sensor: sensors.t_sa,
            mdot: applied,
            p_w,
            p_ref_w: s.p_ref[k],
            apar,
            t_ctrl_s: if cfg.record_timing { t_ctrl_s } else { 0.0 },
            t_atk_s: if cfg.record_timing { t_atk_s } else { 0.0 },
            attack_iterations,
            attack_converged,
            attack_deltas,
            flag,
        });
        t_r = zone_step(&s.thermal[k], applied, &truth);
        if !t_r.is_finite() {
            return Err(SimError::NonFinitePrediction(k));
        }
    }
    Ok(summarize(cfg, records))
}

fn summarize(cfg: &ScenarioConfig, records: Vec<StepRecord>) -> RunResult {
    let p = cfg.building().expect("validated");
    let (pw, pr): (Vec<f64>, Vec<f64>) = records.iter().map(|r| (r.p_w, r.p_ref_w)).unzip();
    let rmse_w = rmse(&pw, &pr).unwrap_or(0.0);
    let max_abs_err_w = pw.iter().zip(&pr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let comfort_violations = records
        .iter()
        .filter(|r| r.tr_true < p.t_r_lb - COMFORT_TOL || r.tr_true > p.t_r_ub + COMFORT_TOL)
        .count();
    let flagged_steps = records.iter().filter(|r| r.flag.is_some()).count();
    let iters: Vec<usize> = records.iter().filter_map(|r| r.attack_iterations).collect();
    let attack = AttackStats {
        attacked_steps: iters.len(),
        converged_steps: records.iter().filter(|r| r.attack_converged == Some(true)).count(),
        mean_iterations: if iters.is_empty() {
            0.0
        } else {
            iters.iter().sum::<usize>() as f64 / iters.len() as f64
        },
        max_iterations: iters.iter().copied().max().unwrap_or(0),
    };
    let mut result = RunResult {
        config: cfg.clone(),
        records,
        rmse_w,
        max_abs_err_w,
        comfort_violations,
        flagged_steps,
        attack,
        timing: TimingStats::default(),
    };
    result.timing = timing_stats(&result);
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tolerance: f64,
    pub rmse_standard_w: f64,
    pub rmse_resilient_w: f64,
}

fn sweep_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.parse().ok().filter(|&n: &usize| n > 0)
}

/// Runs the standard and resilient controllers at every tolerance level
/// (ε = γ = σ) with the base config's seed. Rows follow grid order.
pub fn sensitivity_sweep(base: &ScenarioConfig, grid: &[f64]) -> Result<Vec<SweepRow>, SimError> {
    if grid.is_empty() {
        return Err(SimError::Config("empty tolerance grid".into()));
    }
    let jobs: Vec<ScenarioConfig> = grid
        .iter()
        .flat_map(|&tol| {
            [ControllerKind::StandardMpc, ControllerKind::ResilientMpc].map(|c| {
                let mut cfg = base.clone();
                cfg.controller = c;
                cfg.ambiguity = Tolerances::uniform(tol);
                cfg
            })
        })
        .collect();
    let run = || jobs.par_iter().map(run_closed_loop).collect::<Result<Vec<_>, _>>();
    let results = match sweep_threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Config(e.to_string()))?
            .install(run),
        None => run(),
    }?;
    Ok(grid
        .iter()
        .zip(results.chunks(2))
        .map(|(&tolerance, pair)| SweepRow {
            tolerance,
            rmse_standard_w: pair[0].rmse_w,
            rmse_resilient_w: pair[1].rmse_w,
        })
        .collect())
}
