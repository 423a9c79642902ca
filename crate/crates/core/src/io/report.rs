use super::IoError;
use crate::sim::{AttackStats, RunResult, ScenarioConfig, StepRecord, TimingStats};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const RUN_CSV_HEADER: &str = "time_s,tr_true_c,tr_sensor_c,tsa_sensor_c,mdot_kg_s,p_w,p_ref_w,\
apar_r8,apar_r10,apar_r11,apar_r12,apar_r18,t_ctrl_s,t_atk_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub scenario_id: String,
    pub rmse_w: f64,
    pub max_abs_err_w: f64,
    /// Only set when a paired baseline run is supplied.
    pub baseline_id: Option<String>,
    pub reduction_vs_baseline_pct: Option<f64>,
    pub comfort_violations: usize,
    pub flagged_steps: usize,
    pub attack: AttackStatsDoc,
    pub timing: TimingDoc,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackStatsDoc {
    pub attacked_steps: usize,
    pub converged_steps: usize,
    pub converged_fraction: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

impl From<AttackStats> for AttackStatsDoc {
    fn from(a: AttackStats) -> Self {
        Self {
            attacked_steps: a.attacked_steps,
            converged_steps: a.converged_steps,
            converged_fraction: a.converged_fraction(),
            mean_iterations: a.mean_iterations,
            max_iterations: a.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingDoc {
    pub ctrl_mean_s: f64,
    pub ctrl_std_s: f64,
    pub atk_mean_s: f64,
    pub atk_std_s: f64,
}

impl From<TimingStats> for TimingDoc {
    fn from(t: TimingStats) -> Self {
        Self {
            ctrl_mean_s: t.ctrl_mean_s,
            ctrl_std_s: t.ctrl_std_s,
            atk_mean_s: t.atk_mean_s,
            atk_std_s: t.atk_std_s,
        }
    }
}

pub fn metrics_doc(result: &RunResult, baseline: Option<&RunResult>) -> MetricsDoc {
    let reduction = baseline
        .filter(|b| b.rmse_w > 0.0)
        .map(|b| 100.0 * (1.0 - result.rmse_w / b.rmse_w));
    MetricsDoc {
        scenario_id: result.config.id.clone(),
        rmse_w: result.rmse_w,
        max_abs_err_w: result.max_abs_err_w,
        baseline_id: baseline.map(|b| b.config.id.clone()),
        reduction_vs_baseline_pct: reduction,
        comfort_violations: result.comfort_violations,
        flagged_steps: result.flagged_steps,
        attack: result.attack.into(),
        timing: result.timing.into(),
        config: result.config.clone(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.6}")).unwrap_or_default()
}

fn csv_row(r: &StepRecord) -> String {
    // powers, flows and times keep full precision so metrics can be recomputed
    format!(
        "{},{:.6},{:.6},{:.6},{},{},{},{},{},{:.6},{:.6},{:.6},{},{}",
        r.time_s,
        r.tr_true,
        r.tr_sensor,
        r.tsa_sensor,
        r.mdot,
        r.p_w,
        r.p_ref_w,
        opt(r.apar.r8),
        opt(r.apar.r10),
        r.apar.r11,
        r.apar.r12,
        r.apar.r18,
        r.t_ctrl_s,
        r.t_atk_s
    )
}

pub fn write_run_csv(result: &RunResult) -> String {
    let mut out = String::with_capacity(128 * (result.records.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in &result.records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

const W: f64 = 800.0;
const H: f64 = 320.0;
const PAD: f64 = 50.0;

fn line_chart(title: &str, y_label: &str, x: &[f64], series: &[Series]) -> String {
    let finite = series.iter().flat_map(|s| s.values.iter()).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x0 = x.first().copied().unwrap_or(0.0);
    let x1 = x.last().copied().unwrap_or(1.0).max(x0 + 1e-12);
    let px = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="end" dx="-4">{lo:.2}</text>"#, H - PAD);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{PAD}" text-anchor="end" dx="-4" dy="8">{hi:.2}</text>"#);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})">{y_label}</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#, W / 2.0, H - 12.0);
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = x
            .iter()
            .zip(&ser.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        let ly = PAD + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{}">{}</text>"#,
            W - PAD - 150.0,
            ser.color,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

fn plots(result: &RunResult) -> [(&'static str, String); 3] {
    let rec = &result.records;
    let x: Vec<f64> = rec.iter().map(|r| r.time_s).collect();
    let col = |f: fn(&StepRecord) -> f64| rec.iter().map(f).collect::<Vec<f64>>();
    let power = line_chart(
        "HVAC power vs reference",
        "W",
        &x,
        &[
            Series {
                label: "actual",
                color: "#1f77b4",
                values: col(|r| r.p_w),
            },
            Series {
                label: "reference",
                color: "#d62728",
                values: col(|r| r.p_ref_w),
            },
        ],
    );
    let sensors = line_chart(
        "Zone temperature: true vs sensor",
        "°C",
        &x,
        &[
            Series {
                label: "true",
                color: "#2ca02c",
                values: col(|r| r.tr_true),
            },
            Series {
                label: "sensor",
                color: "#ff7f0e",
                values: col(|r| r.tr_sensor),
            },
        ],
    );
    let apar = line_chart(
        "APAR margins (positive = safe)",
        "°C",
        &x,
        &[
            Series {
                label: "rule 11/16",
                color: "#1f77b4",
                values: col(|r| r.apar.r11),
            },
            Series {
                label: "rule 12/17",
                color: "#ff7f0e",
                values: col(|r| r.apar.r12),
            },
            Series {
                label: "rule 18",
                color: "#2ca02c",
                values: col(|r| r.apar.r18),
            },
        ],
    );
    [("power.svg", power), ("sensors.svg", sensors), ("apar.svg", apar)]
}

/// Writes `run.csv`, `metrics.json` and `plots/*.svg` into `outdir`.
pub fn emit_outputs(result: &RunResult, baseline: Option<&RunResult>, outdir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(outdir.join("plots"))?;
    std::fs::write(outdir.join("run.csv"), write_run_csv(result))?;
    let doc = metrics_doc(result, baseline);
    let json = serde_json::to_string_pretty(&doc).map_err(|e| IoError::Io(e.to_string()))?;
    std::fs::write(outdir.join("metrics.json"), json + "\n")?;
    for (name, svg) in plots(result) {
        std::fs::write(outdir.join("plots").join(name), svg)?;
    }
    Ok(())
}

/// One parsed row of `run.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct RunCsvRow {
    pub time_s: f64,
    pub tr_true_c: f64,
    pub tr_sensor_c: f64,
    pub tsa_sensor_c: f64,
    pub mdot_kg_s: f64,
    pub p_w: f64,
    pub p_ref_w: f64,
    pub apar_r8: Option<f64>,
    pub apar_r10: Option<f64>,
    pub apar_r11: f64,
    pub apar_r12: f64,
    pub apar_r18: f64,
    pub t_ctrl_s: f64,
    pub t_atk_s: f64,
}

pub fn parse_run_csv(text: &str) -> Result<Vec<RunCsvRow>, IoError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| IoError::Schema(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RUN_CSV_HEADER {
        return Err(IoError::Schema("unexpected run.csv header".into()));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| IoError::Schema(format!("data row {}: {e}", i + 1))))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<MetricsDoc, IoError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}
