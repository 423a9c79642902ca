//! Acceptance checks. Runs as a plain binary so that the PASS/FAIL table is
//! always printed; exits nonzero if any criterion outside KNOWN_RED fails.

use hvac_redteam::apar::{evaluate_rules, safe_region, AparMode, AparParams};
use hvac_redteam::attack::{
    build_attack_program, solve_worst_case, AmbiguityConfig, AttackWindow, MomentRelaxation, DEFAULT_ALPHA,
};
use hvac_redteam::io::write_run_csv;
use hvac_redteam::model::{
    compute_power_coeffs, compute_thermal_coeffs, moment_step, zone_step, BuildingParams, EnvSample, MomentState,
    SensorPair,
};
use hvac_redteam::opt::solve_lp;
use hvac_redteam::sim::{
    run_closed_loop, sensitivity_sweep, AttackKind, ControllerKind, RunResult, ScenarioConfig, Tolerances,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Criteria that fail on this model and are reported without failing the run.
const KNOWN_RED: &[u32] = &[3, 9];

const SEED: u64 = 7;
const TARGET_W: f64 = 55_000.0;
const NOMINAL_RMSE_FRAC: f64 = 0.01;
const NOMINAL_RUNTIME_S: f64 = 60.0;
const ATTACK_RATIO: f64 = 5.0;
const DEFENSE_REDUCTION_PCT: f64 = 60.0;
const MAX_ATTACK_ITERS: usize = 10;
const MIN_CONVERGED: f64 = 0.95;
const DUALITY_TOL: f64 = 1e-6;
const DUALITY_RUNTIME_S: f64 = 30.0;
const MC_SAMPLES: usize = 1_000_000;
const MC_SE: f64 = 4.0;
const GRID: f64 = 1e-3;
const SWEEP: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
const SPREAD_MAX: f64 = 2.0;
const ZERO_AMB_TOL: f64 = 1e-4;
const ATTACK_STEP_S: f64 = 10.0;
const RESILIENT_STEP_S: f64 = 60.0;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn static_cfg(controller: ControllerKind, attack: AttackKind) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(controller);
    cfg.id = format!("static-{controller:?}-{attack:?}").to_lowercase();
    cfg.attack = attack;
    cfg.seed = Some(SEED);
    cfg
}

fn run(cfg: &ScenarioConfig) -> RunResult {
    run_closed_loop(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.id))
}

fn c1_nominal(clean: &RunResult, secs: f64) -> Outcome {
    let limit = NOMINAL_RMSE_FRAC * TARGET_W;
    Outcome {
        id: 1,
        pass: clean.rmse_w <= limit && secs <= NOMINAL_RUNTIME_S,
        detail: format!("rmse {:.3e} W (limit {limit} W), {secs:.2} s", clean.rmse_w),
    }
}

fn c2_attack(clean: &RunResult, attacked: &RunResult) -> Outcome {
    let ratio = attacked.rmse_w / clean.rmse_w.max(1e-9);
    let deepest = attacked
        .records
        .iter()
        .map(|r| r.p_w - r.p_ref_w)
        .fold(f64::INFINITY, f64::min);
    Outcome {
        id: 2,
        pass: attacked.rmse_w >= ATTACK_RATIO * clean.rmse_w && attacked.rmse_w > 0.0,
        detail: format!(
            "rmse {:.1} W vs clean {:.3e} W (ratio {ratio:.1e}); bias {:.1} W, deepest dip {:.1} W",
            attacked.rmse_w,
            clean.rmse_w,
            attacked.bias_w(),
            deepest
        ),
    }
}

fn c3_defense(standard: &RunResult, resilient: &RunResult) -> Outcome {
    let red = 100.0 * (1.0 - resilient.rmse_w / standard.rmse_w);
    Outcome {
        id: 3,
        pass: red >= DEFENSE_REDUCTION_PCT,
        detail: format!(
            "standard {:.1} W, resilient {:.1} W, reduction {red:.1}% (need {DEFENSE_REDUCTION_PCT}%), {} fallback steps",
            standard.rmse_w, resilient.rmse_w, resilient.flagged_steps
        ),
    }
}

fn c4_convergence(attacked: &RunResult) -> Outcome {
    // mean ⟨Δṁ,Δṁ⟩ at each iteration; a step that has already stopped
    // contributes its final (sub-threshold) value
    let steps: Vec<&Vec<f64>> = attacked.records.iter().map(|r| &r.attack_deltas).filter(|d| !d.is_empty()).collect();
    let first_below = (0..MAX_ATTACK_ITERS).find(|&k| {
        let avg = steps.iter().map(|d| d[k.min(d.len() - 1)]).sum::<f64>() / steps.len() as f64;
        avg < DEFAULT_ALPHA
    });
    let frac = attacked.attack.converged_fraction();
    Outcome {
        id: 4,
        pass: first_below.is_some() && frac >= MIN_CONVERGED,
        detail: format!(
            "mean delta below alpha after {} worst-case solves, converged {:.1}% of {} steps, mean {:.2} worst-case solves",
            first_below.map_or("never".into(), |k| (k + 1).to_string()),
            100.0 * frac,
            attacked.attack.attacked_steps,
            attacked.attack.mean_iterations
        ),
    }
}

fn random_env(rng: &mut ChaCha8Rng) -> (BuildingParams, EnvSample) {
    let p = BuildingParams {
        r: rng.random_range(0.005..0.05),
        c: rng.random_range(5e5..5e6),
        beta: rng.random_range(0.0..0.9),
        ..BuildingParams::stable_default()
    };
    let env = EnvSample::new(
        rng.random_range(25.0..40.0),
        rng.random_range(1e5..2e5),
        rng.random_range(0.0..2e4),
    );
    (p, env)
}

fn random_window(rng: &mut ChaCha8Rng, t: usize) -> (AttackWindow, Vec<f64>) {
    let mut win = AttackWindow {
        power: Vec::new(),
        thermal: Vec::new(),
        p_ref: Vec::new(),
    };
    let mut mdot = Vec::new();
    for _ in 0..t {
        let (p, env) = random_env(rng);
        win.power.push(compute_power_coeffs(&p, &env));
        win.thermal.push(compute_thermal_coeffs(&p, &env));
        win.p_ref.push(rng.random_range(20_000.0..80_000.0));
        mdot.push(rng.random_range(0.0..p.mdot_ub));
    }
    (win, mdot)
}

/// Tolerances for which the true point mass satisfies the variance caps.
fn random_ambiguity(rng: &mut ChaCha8Rng, s: SensorPair) -> AmbiguityConfig {
    let (eps, gam): (f64, f64) = (rng.random_range(0.0..0.4), rng.random_range(0.0..0.4));
    AmbiguityConfig {
        epsilon: eps,
        gamma: gam,
        sigma_tr: (2.0 * s.t_r * eps - eps * eps + rng.random_range(0.0..0.2)).sqrt(),
        sigma_tsa: (2.0 * s.t_sa * gam - gam * gam + rng.random_range(0.0..0.2)).sqrt(),
        t_r_lb: 0.0,
        t_r_ub: 60.0,
    }
}

fn c5_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for i in 0..100 {
        let t = [1, 2, 5][i % 3];
        let relax = if i % 2 == 0 { MomentRelaxation::Consistent } else { MomentRelaxation::Printed };
        let (win, mdot) = random_window(&mut rng, t);
        let s = SensorPair::new(rng.random_range(22.0..26.0), rng.random_range(13.0..18.0));
        let amb = random_ambiguity(&mut rng, s);
        let prog = build_attack_program(&win, &mdot, &amb, s, relax).expect("well-formed");
        if let Ok(sol) = solve_lp(&prog.lp, 1e-9, 1e-9) {
            solved += 1;
            worst = worst.max((sol.objective - sol.dual_objective).abs() / (1.0 + sol.objective.abs()));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome {
        id: 5,
        pass: solved == 100 && worst <= DUALITY_TOL && secs <= DUALITY_RUNTIME_S,
        detail: format!("{solved}/100 solved, worst relative gap {worst:.2e}, {secs:.2} s"),
    }
}

fn c6_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let (p, env) = random_env(&mut rng);
        let c = compute_thermal_coeffs(&p, &env);
        let m = rng.random_range(0.0..p.mdot_ub);
        let (mu_r, sd_r) = (rng.random_range(20.0..28.0), rng.random_range(0.0..0.6));
        let (mu_s, sd_s) = (rng.random_range(12.0..18.0), rng.random_range(0.0..0.6));
        let rho: f64 = rng.random_range(-0.9..0.9);
        let x = MomentState {
            e_cross: mu_r * mu_s + rho * sd_r * sd_s,
            ..MomentState::independent_normal(mu_r, sd_r, mu_s, sd_s)
        };
        let exact = moment_step(&c, m, &x).expect("valid moments").to_array();
        // sums and sums of squares of the five moment statistics
        let mut s1 = [0.0; 5];
        let mut s2 = [0.0; 5];
        for _ in 0..MC_SAMPLES {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let tr = mu_r + sd_r * z1;
            let tsa = mu_s + sd_s * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            let next = zone_step(&c, m, &SensorPair::new(tr, tsa));
            let stats = [next, next * next, tsa, tsa * tsa, next * tsa];
            for k in 0..5 {
                s1[k] += stats[k];
                s2[k] += stats[k] * stats[k];
            }
        }
        let n = MC_SAMPLES as f64;
        for k in 0..5 {
            let mean = s1[k] / n;
            let se = ((s2[k] / n - mean * mean).max(0.0) / n).sqrt();
            let z = (mean - exact[k]).abs() / (se + 1e-12 * exact[k].abs());
            worst_z = worst_z.max(z);
        }
    }
    Outcome {
        id: 6,
        pass: worst_z <= MC_SE,
        detail: format!("20 instances x {MC_SAMPLES} samples, worst deviation {worst_z:.2} standard errors"),
    }
}

/// Best objective over a mean grid, maximizing the second and cross moments
/// exactly at each grid point. Also returns the grid-resolution error bound.
fn brute_force(prog_c: &[f64; 5], v: f64, amb: &AmbiguityConfig, s: SensorPair) -> (f64, f64) {
    let (lr, ur) = (s.t_r - amb.epsilon, s.t_r + amb.epsilon);
    let (ls, us) = (s.t_sa - amb.gamma, s.t_sa + amb.gamma);
    let cap_r = amb.sigma_tr.powi(2) + lr * lr;
    let cap_s = amb.sigma_tsa.powi(2) + ls * ls;
    let ss = amb.sigma_tr * amb.sigma_tsa;
    let axis = |lo: f64, hi: f64| {
        let n = ((hi - lo) / GRID).ceil().max(1.0) as usize;
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    };
    let pick = |coef: f64, lo: f64, hi: f64| if coef >= 0.0 { hi } else { lo };
    let c = prog_c;
    let mut best = f64::NEG_INFINITY;
    for mr in axis(lr.max(amb.t_r_lb), ur.min(amb.t_r_ub)) {
        let lo_r = (2.0 * lr * mr - lr * lr).max(2.0 * ur * mr - ur * ur).max(0.0);
        if lo_r > cap_r {
            continue;
        }
        for ms in axis(ls, us) {
            let lo_s = (2.0 * ls * ms - ls * ls).max(2.0 * us * ms - us * us).max(0.0);
            if lo_s > cap_s {
                continue;
            }
            let lo_x = (ls * mr + lr * ms - lr * ls - ss).max(us * mr + ur * ms - ur * us - ss).max(0.0);
            let hi_x = (ls * mr + ur * ms - ur * ls + ss).min(us * mr + lr * ms - lr * us + ss);
            if lo_x > hi_x {
                continue;
            }
            let val = v
                + c[0] * mr
                + c[1] * pick(c[1], lo_r, cap_r)
                + c[2] * ms
                + c[3] * pick(c[3], lo_s, cap_s)
                + c[4] * pick(c[4], lo_x, hi_x);
            best = best.max(val);
        }
    }
    // Lipschitz bound of the inner maximum in each mean, half a cell per axis
    let (br, bs) = (lr.abs().max(ur.abs()), ls.abs().max(us.abs()));
    let lip_r = c[0].abs() + 2.0 * br * c[1].abs() + bs * c[4].abs();
    let lip_s = c[2].abs() + 2.0 * bs * c[3].abs() + br * c[4].abs();
    (best, 0.5 * GRID * (lip_r + lip_s))
}

fn c7_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..20 {
        let (win, mdot) = random_window(&mut rng, 1);
        let s = SensorPair::new(rng.random_range(22.0..26.0), rng.random_range(13.0..18.0));
        let amb = random_ambiguity(&mut rng, s);
        let prog = build_attack_program(&win, &mdot, &amb, s, MomentRelaxation::Consistent).expect("well-formed");
        let lp = solve_worst_case(&prog).expect("truth is feasible").value;
        let (grid, err) = brute_force(&prog.c[0], prog.v, &amb, s);
        let slack = 1e-7 * (1.0 + lp.abs());
        // grid points are feasible, so the LP can only be higher
        ok &= grid <= lp + slack && lp - grid <= err + slack;
        worst = worst.max((lp - grid) / err.max(1e-12));
    }
    Outcome {
        id: 7,
        pass: ok,
        detail: format!("20 instances, worst LP-grid gap {worst:.3} of the grid error bound"),
    }
}

fn c8_stealth(runs: &[&RunResult]) -> Outcome {
    let min_margin = runs
        .iter()
        .flat_map(|r| r.records.iter())
        .map(|r| r.apar.min_margin())
        .fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
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
        let by_rules = evaluate_rules(s, t_o, beta, &p, AparMode::MechCoolingMinOa).is_safe();
        if by_rules != safe_region(t_o, beta, &p).expect("beta < 1").contains(s) {
            mismatches += 1;
        }
    }
    Outcome {
        id: 8,
        pass: min_margin > 0.0 && mismatches == 0,
        detail: format!("min APAR margin {min_margin:.3} °C over attacked runs, {mismatches} region mismatches in 10^4"),
    }
}

fn c9_sweep() -> Outcome {
    let base = static_cfg(ControllerKind::StandardMpc, AttackKind::Stealthy);
    let rows = sensitivity_sweep(&base, &SWEEP).expect("sweep runs");
    let std: Vec<f64> = rows.iter().map(|r| r.rmse_standard_w).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.rmse_resilient_w).collect();
    let increasing = std.windows(2).all(|w| w[1] > w[0]);
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (std_spread, res_spread) = (spread(&std), spread(&res));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join("/");
    Outcome {
        id: 9,
        pass: increasing && res_spread <= SPREAD_MAX,
        detail: format!(
            "standard {} W (increasing: {increasing}, spread {std_spread:.2}), resilient {} W (spread {res_spread:.2}, limit {SPREAD_MAX})",
            fmt(&std),
            fmt(&res)
        ),
    }
}

fn c10_zero_ambiguity() -> Outcome {
    let mut worst: f64 = 0.0;
    for attack in [AttackKind::None, AttackKind::Offset] {
        let runs: Vec<RunResult> = [ControllerKind::StandardMpc, ControllerKind::ResilientMpc]
            .map(|c| {
                let mut cfg = static_cfg(c, attack);
                cfg.ambiguity = Tolerances::uniform(0.0);
                cfg.duration = 100;
                run(&cfg)
            })
            .into();
        for (a, b) in runs[0].records.iter().zip(&runs[1].records) {
            worst = worst.max((a.mdot - b.mdot).abs());
        }
    }
    Outcome {
        id: 10,
        pass: worst <= ZERO_AMB_TOL,
        detail: format!("max per-step flow difference {worst:.2e} kg/s"),
    }
}

fn c11_determinism() -> Outcome {
    let mut same = true;
    let mut checked = Vec::new();
    for c in [ControllerKind::StandardMpc, ControllerKind::ResilientMpc] {
        let mut cfg = static_cfg(c, AttackKind::Stealthy);
        cfg.record_timing = false;
        cfg.duration = 100;
        let a = write_run_csv(&run(&cfg));
        let b = write_run_csv(&run(&cfg));
        same &= a == b;
        checked.push(format!("{} ({} bytes)", cfg.id, a.len()));
    }
    Outcome {
        id: 11,
        pass: same,
        detail: format!("byte-identical run.csv: {same} for {}", checked.join(", ")),
    }
}

fn c12_timing(attacked: &RunResult, resilient: &RunResult) -> Outcome {
    let max_atk = attacked.records.iter().map(|r| r.t_atk_s).fold(0.0, f64::max);
    let max_res = resilient.records.iter().map(|r| r.t_ctrl_s).fold(0.0, f64::max);
    Outcome {
        id: 12,
        pass: max_atk <= ATTACK_STEP_S && max_res <= RESILIENT_STEP_S,
        detail: format!(
            "attack {:.4}±{:.4} s (max {max_atk:.3}), resilient {:.4}±{:.4} s (max {max_res:.3})",
            attacked.timing.atk_mean_s, attacked.timing.atk_std_s, resilient.timing.ctrl_mean_s, resilient.timing.ctrl_std_s
        ),
    }
}

fn main() {
    let clock = Instant::now();
    let clean = run(&static_cfg(ControllerKind::StandardMpc, AttackKind::None));
    let clean_s = clock.elapsed().as_secs_f64();
    let attacked = run(&static_cfg(ControllerKind::StandardMpc, AttackKind::Stealthy));
    let resilient = run(&static_cfg(ControllerKind::ResilientMpc, AttackKind::Stealthy));

    let outcomes = [
        c1_nominal(&clean, clean_s),
        c2_attack(&clean, &attacked),
        c3_defense(&attacked, &resilient),
        c4_convergence(&attacked),
        c5_duality(),
        c6_moments(),
        c7_brute_force(),
        c8_stealth(&[&attacked, &resilient]),
        c9_sweep(),
        c10_zero_ambiguity(),
        c11_determinism(),
        c12_timing(&attacked, &resilient),
    ];

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_RED.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2}: {tag:<12} {}", o.id, o.detail);
        if !o.pass && !known {
            unexpected.push(o.id);
        }
        if o.pass && known {
            println!("criterion {:>2}: now passes; remove it from KNOWN_RED", o.id);
        }
    }
    println!("acceptance finished in {:.1} s", clock.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
