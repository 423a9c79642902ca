use super::IoError;
use crate::model::EnvSample;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvCsvRow {
    pub time_s: i64,
    pub t_out_c: f64,
    pub solar_j_per_m2: f64,
    #[serde(default)]
    pub q_ig_w: Option<f64>,
}

const BASE_HEADER: [&str; 3] = ["time_s", "t_out_c", "solar_j_per_m2"];

/// Reads an environment CSV and resamples it onto a `dt` grid starting at the
/// first row. Solar readings are hourly totals (J/m²) and become a heat gain
/// of `solar / 3600 * solar_gain_m2` watts.
pub fn load_env_csv(path: &Path, dt: f64, solar_gain_m2: f64) -> Result<Vec<EnvSample>, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_env_csv(&text, dt, solar_gain_m2)
}

pub fn parse_env_csv(text: &str, dt: f64, solar_gain_m2: f64) -> Result<Vec<EnvSample>, IoError> {
    if !(dt > 0.0) {
        return Err(IoError::Validation("dt must be > 0".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| IoError::Schema(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ok = header.len() >= 3
        && header.len() <= 4
        && header.iter().zip(BASE_HEADER).all(|(h, b)| h == b)
        && (header.len() == 3 || header[3] == "q_ig_w");
    if !ok {
        return Err(IoError::Schema(format!(
            "expected header time_s,t_out_c,solar_j_per_m2[,q_ig_w], got {}",
            header.join(",")
        )));
    }
    let mut rows: Vec<EnvCsvRow> = Vec::new();
    for (i, rec) in rdr.deserialize::<EnvCsvRow>().enumerate() {
        let row = rec.map_err(|e| IoError::Schema(format!("data row {}: {e}", i + 1)))?;
        let q = row.q_ig_w.unwrap_or(0.0);
        if !(row.t_out_c.is_finite() && row.solar_j_per_m2.is_finite() && q.is_finite()) {
            return Err(IoError::Schema(format!("data row {}: non-finite value", i + 1)));
        }
        if let Some(prev) = rows.last() {
            if row.time_s <= prev.time_s {
                return Err(IoError::NonMonotonicTime { row: i + 1 });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Schema("no data rows".into()));
    }

    let t0 = rows[0].time_s as f64;
    let span = rows[rows.len() - 1].time_s as f64 - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let sample = |r: &EnvCsvRow| [r.t_out_c, r.solar_j_per_m2, r.q_ig_w.unwrap_or(0.0)];
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 2 < rows.len() && (rows[j + 1].time_s as f64) < t {
            j += 1;
        }
        let v = if rows.len() == 1 {
            sample(&rows[0])
        } else {
            let (a, b) = (&rows[j], &rows[j + 1]);
            let w = ((t - a.time_s as f64) / (b.time_s - a.time_s) as f64).clamp(0.0, 1.0);
            let (va, vb) = (sample(a), sample(b));
            [0, 1, 2].map(|i| va[i] + w * (vb[i] - va[i]))
        };
        out.push(EnvSample::new(v[0], v[2], (v[1] / 3600.0 * solar_gain_m2).max(0.0)));
    }
    Ok(out)
}

/// Deterministic single-day profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEnv {
    pub day_length_s: f64,
    pub peak_t_out: f64,
    pub trough_t_out: f64,
    /// Solar heat gain at solar noon (W).
    pub peak_solar_w: f64,
    /// Length of the daylight window centred on solar noon (s).
    pub daylight_s: f64,
    /// Fraction of the day at which the outdoor temperature peaks.
    pub peak_fraction: f64,
    pub q_ig_w: f64,
}

impl Default for SynthEnv {
    fn default() -> Self {
        Self {
            day_length_s: 86_400.0,
            peak_t_out: 35.0,
            trough_t_out: 26.0,
            peak_solar_w: 20_000.0,
            daylight_s: 43_200.0,
            peak_fraction: 15.0 / 24.0,
            q_ig_w: 160_000.0,
        }
    }
}

/// One sample every `dt` seconds over one day, starting at midnight.
pub fn synth_env(s: &SynthEnv, dt: f64) -> Vec<EnvSample> {
    let n = (s.day_length_s / dt).round().max(1.0) as usize;
    let mean = 0.5 * (s.peak_t_out + s.trough_t_out);
    let amp = 0.5 * (s.peak_t_out - s.trough_t_out);
    let noon = 0.5 * s.day_length_s;
    let sunrise = noon - 0.5 * s.daylight_s;
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let phase = 2.0 * PI * (t / s.day_length_s - s.peak_fraction);
            let t_out = mean + amp * phase.cos();
            let u = (t - sunrise) / s.daylight_s;
            let solar = if (0.0..=1.0).contains(&u) {
                (s.peak_solar_w * (PI * u).sin()).max(0.0)
            } else {
                0.0
            };
            EnvSample::new(t_out, s.q_ig_w, solar)
        })
        .collect()
}
