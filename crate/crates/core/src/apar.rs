//! Mechanical-cooling subset of the AHU performance assessment rules.
//!
//! Every rule is reported as a signed margin in °C: positive is safe, negative
//! raises the alarm. A margin of exactly zero counts as safe because the rules
//! fire on strict exceedance.

use crate::model::SensorPair;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AparError {
    #[error("invalid APAR parameters: {0}")]
    InvalidParams(String),
    #[error("safe region undefined for damper position {0}")]
    DegenerateRegion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AparParams {
    /// Supply-fan temperature rise (°C).
    pub dt_sf: f64,
    /// Return-fan temperature rise (°C).
    pub dt_rf: f64,
    pub eps_t: f64,
    /// Minimum outdoor/room temperature gap for the ventilation check (°C).
    pub dt_min: f64,
}

impl Default for AparParams {
    fn default() -> Self {
        Self {
            dt_sf: 1.1,
            dt_rf: 1.1,
            eps_t: 0.5,
            dt_min: 5.6,
        }
    }
}

impl AparParams {
    pub fn validate(&self) -> Result<(), AparError> {
        let vals = [self.dt_sf, self.dt_rf, self.eps_t, self.dt_min];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AparError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AparMode {
    /// Mechanical cooling with the damper at its minimum position.
    #[default]
    MechCoolingMinOa,
    /// Mechanical cooling with the damper fully open.
    MechCooling100Oa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AparRule {
    R8,
    R10,
    R11,
    R12,
    R18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AparReport {
    pub mode: AparMode,
    /// Rules 8 and 10 only apply with the damper fully open.
    pub r8: Option<f64>,
    pub r10: Option<f64>,
    /// Rules 11 and 16.
    pub r11: f64,
    /// Rules 12 and 17.
    pub r12: f64,
    pub r18: f64,
    pub triggered: Vec<AparRule>,
}

impl AparReport {
    pub fn margins(&self) -> [(AparRule, Option<f64>); 5] {
        [
            (AparRule::R8, self.r8),
            (AparRule::R10, self.r10),
            (AparRule::R11, Some(self.r11)),
            (AparRule::R12, Some(self.r12)),
            (AparRule::R18, Some(self.r18)),
        ]
    }

    pub fn is_safe(&self) -> bool {
        self.triggered.is_empty()
    }

    /// Smallest applicable margin.
    pub fn min_margin(&self) -> f64 {
        self.margins()
            .iter()
            .filter_map(|(_, m)| *m)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn mixed_air(t_o: f64, t_r: f64, beta: f64) -> f64 {
    beta * t_o + (1.0 - beta) * t_r
}

pub fn evaluate_rules(s: SensorPair, t_o: f64, beta: f64, p: &AparParams, mode: AparMode) -> AparReport {
    debug_assert!((0.0..=1.0).contains(&beta));
    let t_mix = mixed_air(t_o, s.t_r, beta);
    let full_oa = mode == AparMode::MechCooling100Oa;
    let r8 = full_oa.then_some(t_o - (s.t_sa - p.dt_sf - p.eps_t));
    let r10 = full_oa.then(|| p.eps_t - (t_o - t_mix).abs());
    let r11 = t_mix + p.dt_sf + p.eps_t - s.t_sa;
    let r12 = s.t_r - p.dt_rf + p.eps_t - s.t_sa;
    // Cooling requires outdoor air at least dt_min above the room.
    let r18 = (t_o - s.t_r) - p.dt_min;

    let mut report = AparReport {
        mode,
        r8,
        r10,
        r11,
        r12,
        r18,
        triggered: Vec::new(),
    };
    for (rule, m) in report.margins() {
        match m {
            Some(m) if m < 0.0 => report.triggered.push(rule),
            Some(0.0) => log::debug!("{rule:?} margin exactly zero, classified safe"),
            _ => {}
        }
    }
    report
}

/// `a · (T^r, T^sa) <= b`, one row per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeRegion {
    pub rows: Vec<([f64; 2], f64)>,
}

impl SafeRegion {
    pub fn slack(&self, s: SensorPair) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(a, b)| b - (a[0] * s.t_r + a[1] * s.t_sa))
            .collect()
    }

    pub fn contains(&self, s: SensorPair) -> bool {
        self.slack(s).iter().all(|&v| v >= 0.0)
    }
}

/// Stealth polyhedron for the minimum-outdoor-air mode. Rows are rules 11/16,
/// 12/17 and 18 in that order.
pub fn safe_region(t_o: f64, beta: f64, p: &AparParams) -> Result<SafeRegion, AparError> {
    p.validate()?;
    if !(0.0..1.0).contains(&beta) {
        return Err(AparError::DegenerateRegion(beta));
    }
    Ok(SafeRegion {
        rows: vec![
            ([beta - 1.0, 1.0], beta * t_o + p.dt_sf + p.eps_t),
            ([-1.0, 1.0], p.eps_t - p.dt_rf),
            ([1.0, 0.0], t_o - p.dt_min),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_fans() -> AparParams {
        AparParams {
            dt_sf: 1.0,
            dt_rf: 1.0,
            eps_t: 0.5,
            dt_min: 5.6,
        }
    }

    #[test]
    fn supply_above_room_triggers_r12() {
        let r = evaluate_rules(SensorPair::new(24.0, 25.0), 33.0, 0.3, &unit_fans(), AparMode::MechCoolingMinOa);
        assert!(r.triggered.contains(&AparRule::R12));
        assert!((r.r12 - (-1.5)).abs() < 1e-12);
    }

    #[test]
    fn nominal_point_is_safe() {
        let r = evaluate_rules(SensorPair::new(24.0, 16.0), 33.57, 0.3, &unit_fans(), AparMode::MechCoolingMinOa);
        assert!((mixed_air(33.57, 24.0, 0.3) - 26.871).abs() < 1e-9);
        assert!((r.r11 - 12.371).abs() < 1e-9);
        assert!(r.is_safe());
        assert!(r.r8.is_none() && r.r10.is_none());
    }

    #[test]
    fn full_outdoor_air_rules() {
        let r = evaluate_rules(SensorPair::new(24.0, 29.0), 30.0, 1.0, &unit_fans(), AparMode::MechCooling100Oa);
        assert!((r.r10.unwrap() - 0.5).abs() < 1e-12);
        // 30 - (29 - 1 - 0.5)
        assert!((r.r8.unwrap() - 2.5).abs() < 1e-12);
        assert!(!r.triggered.contains(&AparRule::R8));
        assert!(!r.triggered.contains(&AparRule::R10));
    }

    #[test]
    fn supply_warmer_than_outdoor_triggers_r8() {
        let r = evaluate_rules(SensorPair::new(24.0, 32.0), 30.0, 1.0, &unit_fans(), AparMode::MechCooling100Oa);
        assert!(r.triggered.contains(&AparRule::R8));
    }

    #[test]
    fn zero_margin_is_safe() {
        let p = unit_fans();
        // r12 margin is 24 - 1 + 0.5 - 23.5 = 0
        let r = evaluate_rules(SensorPair::new(24.0, 23.5), 40.0, 0.3, &p, AparMode::MechCoolingMinOa);
        assert_eq!(r.r12, 0.0);
        assert!(r.is_safe());
        assert!(safe_region(40.0, 0.3, &p).unwrap().contains(SensorPair::new(24.0, 23.5)));
    }

    #[test]
    fn region_examples() {
        let reg = safe_region(33.57, 0.3, &unit_fans()).unwrap();
        assert!(reg.slack(SensorPair::new(24.0, 16.0)).iter().all(|&v| v > 0.0));
        assert!(!reg.contains(SensorPair::new(24.0, 25.0)));
    }

    #[test]
    fn full_damper_region_is_degenerate() {
        assert_eq!(
            safe_region(30.0, 1.0, &unit_fans()),
            Err(AparError::DegenerateRegion(1.0))
        );
    }

    #[test]
    fn region_matches_rules_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mismatches = 0;
        for _ in 0..10_000 {
            let t_o = rng.random_range(20.0..40.0);
            let beta = rng.random_range(0.0..0.9);
            let p = AparParams {
                dt_sf: rng.random_range(0.0..2.0),
                dt_rf: rng.random_range(0.0..2.0),
                eps_t: rng.random_range(0.0..1.0),
                dt_min: rng.random_range(0.0..8.0),
            };
            let s = SensorPair::new(rng.random_range(15.0..35.0), rng.random_range(5.0..35.0));
            let rules = evaluate_rules(s, t_o, beta, &p, AparMode::MechCoolingMinOa).is_safe();
            if rules != safe_region(t_o, beta, &p).unwrap().contains(s) {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }

    proptest! {
        #[test]
        fn margins_are_affine(
            t_o in 20.0..40.0f64,
            beta in 0.0..1.0f64,
            a in (15.0..35.0f64, 5.0..35.0f64),
            b in (15.0..35.0f64, 5.0..35.0f64),
            full in any::<bool>(),
        ) {
            let mode = if full { AparMode::MechCooling100Oa } else { AparMode::MechCoolingMinOa };
            let beta = if full { 1.0 } else { beta };
            let p = AparParams::default();
            let ra = evaluate_rules(SensorPair::new(a.0, a.1), t_o, beta, &p, mode);
            let rb = evaluate_rules(SensorPair::new(b.0, b.1), t_o, beta, &p, mode);
            let mid = SensorPair::new(0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
            let rm = evaluate_rules(mid, t_o, beta, &p, mode);
            for ((_, ma), ((_, mb), (_, mm))) in ra.margins().iter().zip(rb.margins().iter().zip(rm.margins().iter())) {
                if let (Some(ma), Some(mb), Some(mm)) = (ma, mb, mm) {
                    prop_assert!((mm - 0.5 * (ma + mb)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn triggered_iff_negative(
            t_o in 20.0..40.0f64,
            tr in 15.0..35.0f64,
            tsa in 5.0..35.0f64,
        ) {
            let r = evaluate_rules(SensorPair::new(tr, tsa), t_o, 0.3, &AparParams::default(), AparMode::MechCoolingMinOa);
            for (rule, m) in r.margins() {
                let neg = m.is_some_and(|m| m < 0.0);
                prop_assert_eq!(neg, r.triggered.contains(&rule));
            }
        }
    }
}
