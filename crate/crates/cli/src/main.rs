use clap::{Args, Parser, Subcommand};
use hvac_redteam::io::{emit_outputs, parse_config, parse_run_csv, read_metrics, IoError};
use hvac_redteam::sim::{
    rmse, run_closed_loop, sensitivity_sweep, AttackKind, ControllerKind, RunResult, ScenarioConfig, SimError,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hvac-redteam", version, about = "Attack/defense bench for HVAC power tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// PI temperature control, no attack.
    Baseline(Common),
    /// Standard MPC tracking, no attack.
    Track(Common),
    /// Standard MPC under the configured attack (stealthy if none is set).
    Attack(Common),
    /// Resilient MPC under the attack, paired with the standard MPC run.
    Defend(Common),
    /// Tolerance sweep for both MPC controllers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated tolerance levels (°C).
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
        grid: Vec<f64>,
    },
    /// Summarizes an output directory and checks run.csv against metrics.json.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config preset.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Io(IoError),
    Sim(SimError),
    Mismatch(String),
}

impl CliError {
    fn name(&self) -> &'static str {
        match self {
            CliError::Io(e) => e.name(),
            CliError::Sim(e) => e.name(),
            CliError::Mismatch(_) => "ReportMismatch",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(e) => e.fmt(f),
            CliError::Sim(e) => e.fmt(f),
            CliError::Mismatch(m) => f.write_str(m),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

impl Common {
    fn load(&self, controller: ControllerKind) -> Result<ScenarioConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&std::fs::read_to_string(path).map_err(IoError::from)?)?,
            None => ScenarioConfig::new(controller),
        };
        cfg.controller = controller;
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(preset) = &self.preset {
            cfg.preset = preset.clone();
        }
        Ok(cfg)
    }
}

fn run(cfg: &ScenarioConfig) -> Result<RunResult, CliError> {
    cfg.validate()?;
    let res = run_closed_loop(cfg)?;
    Ok(res)
}

fn summary(r: &RunResult) {
    println!(
        "{}: rmse {:.3} W, max |err| {:.3} W, comfort violations {}, flagged steps {}",
        r.config.id, r.rmse_w, r.max_abs_err_w, r.comfort_violations, r.flagged_steps
    );
}

fn with_attack(mut cfg: ScenarioConfig) -> ScenarioConfig {
    if cfg.attack == AttackKind::None {
        cfg.attack = AttackKind::Stealthy;
    }
    if cfg.seed.is_none() {
        cfg.seed = Some(0);
    }
    cfg
}

fn report(out: &Path) -> Result<(), CliError> {
    let metrics = read_metrics(&out.join("metrics.json"))?;
    let rows = parse_run_csv(&std::fs::read_to_string(out.join("run.csv")).map_err(IoError::from)?)?;
    let (p, r): (Vec<f64>, Vec<f64>) = rows.iter().map(|x| (x.p_w, x.p_ref_w)).unzip();
    let recomputed = rmse(&p, &r)?;
    let min_margin = rows
        .iter()
        .flat_map(|x| [x.apar_r8, x.apar_r10, Some(x.apar_r11), Some(x.apar_r12), Some(x.apar_r18)])
        .flatten()
        .fold(f64::INFINITY, f64::min);
    println!("scenario        {}", metrics.scenario_id);
    println!("steps           {}", rows.len());
    println!("rmse_w          {:.6}", metrics.rmse_w);
    println!("rmse_w (csv)    {recomputed:.6}");
    if let Some(red) = metrics.reduction_vs_baseline_pct {
        println!("reduction_pct   {red:.2} vs {}", metrics.baseline_id.as_deref().unwrap_or("?"));
    }
    println!("min APAR margin {min_margin:.6}");
    println!(
        "attack          {}/{} converged, mean {:.2} iterations",
        metrics.attack.converged_steps, metrics.attack.attacked_steps, metrics.attack.mean_iterations
    );
    println!(
        "timing          ctrl {:.4}±{:.4} s, attack {:.4}±{:.4} s",
        metrics.timing.ctrl_mean_s, metrics.timing.ctrl_std_s, metrics.timing.atk_mean_s, metrics.timing.atk_std_s
    );
    if (recomputed - metrics.rmse_w).abs() > 1e-9 * (1.0 + metrics.rmse_w) {
        return Err(CliError::Mismatch(format!(
            "run.csv RMSE {recomputed} differs from metrics.json {}",
            metrics.rmse_w
        )));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Baseline(c) => {
            let mut cfg = c.load(ControllerKind::Pi)?;
            cfg.attack = AttackKind::None;
            let res = run(&cfg)?;
            summary(&res);
            emit_outputs(&res, None, &c.out)?;
        }
        Command::Track(c) => {
            let mut cfg = c.load(ControllerKind::StandardMpc)?;
            cfg.attack = AttackKind::None;
            let res = run(&cfg)?;
            summary(&res);
            emit_outputs(&res, None, &c.out)?;
        }
        Command::Attack(c) => {
            let cfg = with_attack(c.load(ControllerKind::StandardMpc)?);
            let res = run(&cfg)?;
            summary(&res);
            emit_outputs(&res, None, &c.out)?;
        }
        Command::Defend(c) => {
            let cfg = with_attack(c.load(ControllerKind::ResilientMpc)?);
            let mut std_cfg = cfg.clone();
            std_cfg.controller = ControllerKind::StandardMpc;
            std_cfg.id = format!("{}-standard", cfg.id);
            let standard = run(&std_cfg)?;
            let res = run(&cfg)?;
            summary(&standard);
            summary(&res);
            emit_outputs(&standard, None, &c.out.join("standard"))?;
            emit_outputs(&res, Some(&standard), &c.out)?;
        }
        Command::Sweep { common, grid } => {
            let cfg = with_attack(common.load(ControllerKind::StandardMpc)?);
            cfg.validate()?;
            let rows = sensitivity_sweep(&cfg, &grid)?;
            let mut csv = String::from("tolerance_c,rmse_standard_w,rmse_resilient_w\n");
            for r in &rows {
                println!(
                    "tol {:.3}: standard {:.3} W, resilient {:.3} W",
                    r.tolerance, r.rmse_standard_w, r.rmse_resilient_w
                );
                csv.push_str(&format!("{},{},{}\n", r.tolerance, r.rmse_standard_w, r.rmse_resilient_w));
            }
            std::fs::create_dir_all(&common.out).map_err(IoError::from)?;
            std::fs::write(common.out.join("sweep.csv"), csv).map_err(IoError::from)?;
        }
        Command::Report { out } => report(&out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::FAILURE
        }
    }
}
