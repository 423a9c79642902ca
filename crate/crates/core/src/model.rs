//! Building and HVAC physics: parameters, aggregated coefficients, the scalar
//! zone/power models and the moment-space propagation of zone temperature.
//!
//! Everything here is a pure function of immutable values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance (°C²) on the variance and Cauchy–Schwarz checks.
pub const MOMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid building parameters: {0}")]
    InvalidParams(String),
    #[error("invalid environment sample: {0}")]
    InvalidEnv(String),
    #[error("moment drift: {what} violated by {amount:e}")]
    MomentDrift { what: &'static str, amount: f64 },
}

/// Physical constants of the single-zone building and its air handler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingParams {
    /// Wall thermal resistance (°C/W).
    pub r: f64,
    /// Zone air thermal capacitance (J/°C).
    pub c: f64,
    pub cop: f64,
    /// Outdoor-air damper position in [0, 1].
    pub beta: f64,
    /// Specific heat of air (J/(kg·°C)).
    pub c_air: f64,
    /// Step size (s).
    pub dt: f64,
    pub t_sa_nominal: f64,
    pub t_r_setpoint: f64,
    pub t_r_lb: f64,
    pub t_r_ub: f64,
    pub mdot_lb: f64,
    pub mdot_ub: f64,
}

impl BuildingParams {
    /// Table values as published. The explicit-Euler zone update is unstable
    /// with these (RC is ~0.036 s against a 30 s step).
    pub fn paper_literal() -> Self {
        Self {
            r: 1e-5,
            c: 3.6219e3,
            ..Self::stable_default()
        }
    }

    /// Same HVAC constants with an RC pair that discretizes stably at 30 s.
    pub fn stable_default() -> Self {
        Self {
            r: 0.01,
            c: 1e6,
            cop: 4.17,
            beta: 0.3,
            c_air: 1014.54,
            dt: 30.0,
            t_sa_nominal: 16.0,
            t_r_setpoint: 24.0,
            t_r_lb: 23.0,
            t_r_ub: 25.0,
            mdot_lb: 0.0,
            mdot_ub: 40.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "stable-default" => Some(Self::stable_default()),
            "paper-literal" => Some(Self::paper_literal()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        let all = [
            self.r,
            self.c,
            self.cop,
            self.beta,
            self.c_air,
            self.dt,
            self.t_sa_nominal,
            self.t_r_setpoint,
            self.t_r_lb,
            self.t_r_ub,
            self.mdot_lb,
            self.mdot_ub,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("non-finite parameter");
        }
        if self.r <= 0.0 {
            return fail("R must be > 0");
        }
        if self.c <= 0.0 {
            return fail("C must be > 0");
        }
        if self.cop <= 0.0 {
            return fail("COP must be > 0");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1]");
        }
        if self.c_air <= 0.0 {
            return fail("c_air must be > 0");
        }
        if self.dt < 0.0 {
            return fail("dt must be >= 0");
        }
        if !(self.t_r_lb < self.t_r_setpoint && self.t_r_setpoint < self.t_r_ub) {
            return fail("comfort bounds must satisfy T_r_lb < T_r_setpoint < T_r_ub");
        }
        if !(0.0 <= self.mdot_lb && self.mdot_lb < self.mdot_ub) {
            return fail("flow bounds must satisfy 0 <= mdot_lb < mdot_ub");
        }
        Ok(())
    }
}

/// One step of exogenous inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSample {
    /// Outdoor air temperature (°C).
    pub t_out: f64,
    /// Internal heat gain (W).
    pub q_ig: f64,
    /// Solar radiative gain (W).
    pub q_rad: f64,
}

impl EnvSample {
    pub fn new(t_out: f64, q_ig: f64, q_rad: f64) -> Self {
        Self { t_out, q_ig, q_rad }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t_out.is_finite() && self.q_ig.is_finite() && self.q_rad.is_finite()) {
            return Err(ModelError::InvalidEnv("non-finite value".into()));
        }
        if self.q_ig < 0.0 || self.q_rad < 0.0 {
            return Err(ModelError::InvalidEnv("heat gains must be >= 0".into()));
        }
        Ok(())
    }
}

/// Power model coefficients (W·s/kg and W·s/(kg·°C)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCoeffs {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

/// Zone update coefficients: `T' = c0 + c1 T + c2 m T + c3 m T_sa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl ThermalCoeffs {
    /// Multiplier on the current zone temperature at flow `mdot`.
    #[inline]
    pub fn pole(&self, mdot: f64) -> f64 {
        self.c1 + self.c2 * mdot
    }
}

/// Zone temperature and supply-air temperature readings (°C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPair {
    pub t_r: f64,
    pub t_sa: f64,
}

impl SensorPair {
    pub fn new(t_r: f64, t_sa: f64) -> Self {
        Self { t_r, t_sa }
    }
}

/// First and second moments of the (falsified) sensor distributions at one
/// step, in the order used by the attack program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub e_tr: f64,
    pub e_tr2: f64,
    pub e_tsa: f64,
    pub e_tsa2: f64,
    pub e_cross: f64,
}

impl MomentState {
    /// Moments of a point mass at `s`.
    pub fn point(s: SensorPair) -> Self {
        Self {
            e_tr: s.t_r,
            e_tr2: s.t_r * s.t_r,
            e_tsa: s.t_sa,
            e_tsa2: s.t_sa * s.t_sa,
            e_cross: s.t_r * s.t_sa,
        }
    }

    /// Moments of two independent normals.
    pub fn independent_normal(mu_tr: f64, sd_tr: f64, mu_tsa: f64, sd_tsa: f64) -> Self {
        Self {
            e_tr: mu_tr,
            e_tr2: mu_tr * mu_tr + sd_tr * sd_tr,
            e_tsa: mu_tsa,
            e_tsa2: mu_tsa * mu_tsa + sd_tsa * sd_tsa,
            e_cross: mu_tr * mu_tsa,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.e_tr, self.e_tr2, self.e_tsa, self.e_tsa2, self.e_cross]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            e_tr: x[0],
            e_tr2: x[1],
            e_tsa: x[2],
            e_tsa2: x[3],
            e_cross: x[4],
        }
    }

    pub fn var_tr(&self) -> f64 {
        self.e_tr2 - self.e_tr * self.e_tr
    }

    pub fn var_tsa(&self) -> f64 {
        self.e_tsa2 - self.e_tsa * self.e_tsa
    }

    pub fn cov(&self) -> f64 {
        self.e_cross - self.e_tr * self.e_tsa
    }

    /// Checks variance nonnegativity and Cauchy–Schwarz within `tol`.
    pub fn check(&self, tol: f64) -> Result<(), ModelError> {
        let (vr, vs) = (self.var_tr(), self.var_tsa());
        if vr < -tol {
            return Err(ModelError::MomentDrift {
                what: "Var[T_r] >= 0",
                amount: -vr,
            });
        }
        if vs < -tol {
            return Err(ModelError::MomentDrift {
                what: "Var[T_sa] >= 0",
                amount: -vs,
            });
        }
        let bound = vr.max(0.0).sqrt() * vs.max(0.0).sqrt() + tol;
        let excess = self.cov().abs() - bound;
        if excess > 0.0 {
            return Err(ModelError::MomentDrift {
                what: "Cauchy-Schwarz",
                amount: excess,
            });
        }
        Ok(())
    }
}

pub fn compute_power_coeffs(p: &BuildingParams, env: &EnvSample) -> PowerCoeffs {
    let k = p.c_air / p.cop;
    PowerCoeffs {
        b1: p.beta * env.t_out * k,
        b2: (1.0 - p.beta) * k,
        b3: -k,
    }
}

pub fn compute_thermal_coeffs(p: &BuildingParams, env: &EnvSample) -> ThermalCoeffs {
    let a = p.dt / (p.r * p.c);
    let k = p.dt * p.c_air / p.c;
    ThermalCoeffs {
        c0: a * env.t_out + p.dt / p.c * (env.q_ig + env.q_rad),
        c1: 1.0 - a,
        c2: -k,
        c3: k,
    }
}

/// Electrical HVAC power (W) at flow `mdot` (kg/s).
#[inline]
pub fn hvac_power(b: &PowerCoeffs, mdot: f64, s: &SensorPair) -> f64 {
    mdot * (b.b1 + b.b2 * s.t_r + b.b3 * s.t_sa)
}

/// Next-step zone temperature (°C).
#[inline]
pub fn zone_step(c: &ThermalCoeffs, mdot: f64, s: &SensorPair) -> f64 {
    c.c0 + c.c1 * s.t_r + c.c2 * mdot * s.t_r + c.c3 * mdot * s.t_sa
}

/// Propagates the five moments one step; supply-air moments are held fixed.
pub fn moment_step(c: &ThermalCoeffs, mdot: f64, x: &MomentState) -> Result<MomentState, ModelError> {
    let next = moment_step_unchecked(c, mdot, x);
    next.check(MOMENT_TOL * (1.0 + next.e_tr2.abs().max(next.e_tsa2.abs()) * 1e-6))?;
    Ok(next)
}

pub(crate) fn moment_step_unchecked(c: &ThermalCoeffs, mdot: f64, x: &MomentState) -> MomentState {
    let p = c.pole(mdot);
    let g = c.c3 * mdot;
    MomentState {
        e_tr: p * x.e_tr + g * x.e_tsa + c.c0,
        e_tr2: p * p * x.e_tr2
            + g * g * x.e_tsa2
            + 2.0 * c.c0 * p * x.e_tr
            + 2.0 * c.c0 * g * x.e_tsa
            + 2.0 * p * g * x.e_cross
            + c.c0 * c.c0,
        e_tsa: x.e_tsa,
        e_tsa2: x.e_tsa2,
        e_cross: p * x.e_cross + g * x.e_tsa2 + c.c0 * x.e_tsa,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// max over the flow interval of |c1 + c2·mdot|.
    pub max_abs_pole: f64,
    pub unstable: bool,
}

pub fn stability_report(c: &ThermalCoeffs, mdot_lb: f64, mdot_ub: f64) -> StabilityReport {
    // affine in mdot, so the max of |.| sits at an endpoint
    let max_abs_pole = c.pole(mdot_lb).abs().max(c.pole(mdot_ub).abs());
    StabilityReport {
        max_abs_pole,
        unstable: max_abs_pole >= 1.0,
    }
}

/// Flow that holds the zone at `t_r` for one step, if any.
pub fn balancing_flow(c: &ThermalCoeffs, s: &SensorPair) -> Option<f64> {
    let denom = c.c2 * s.t_r + c.c3 * s.t_sa;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((s.t_r - c.c0 - c.c1 * s.t_r) / denom)
}
