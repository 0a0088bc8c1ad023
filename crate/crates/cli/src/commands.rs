//! Subcommand implementations: `train`, `gates`, `gradcheck`, `compare`.

use std::fmt::Write as _;
use std::path::PathBuf;

use policyopt_core::gates::{rho_grid, sample_gate_curves, GateConfig};
use policyopt_core::gradcheck::{run_gradcheck, GradCheckError, GradCheckSpec};
use policyopt_core::objectives::ObjectiveKind;
use policyopt_core::rng::derive_seed;
use policyopt_core::trainer::{train_with, MetricsRow, TrainError};

use crate::checkpoint::write_checkpoint;
use crate::config::{echo_config, load_config, parse_objective, ResolvedConfig};
use crate::error::CliError;
use crate::output::{fmt9, metrics_csv, write_file};

/// Reward level used for "updates to threshold" reporting.
const REWARD_THRESHOLD: f64 = 0.9;

/// Substream tag separating comparison cells; cells are keyed by
/// `(objective, seed)` so the same seed gives independent streams per
/// objective.
const STREAM_COMPARE: u64 = 3;

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `checkpoint_<update>.bin` every N update cycles.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            CliError::Validation(
                "no output directory: set output_dir in the config or pass --out".into(),
            )
        })?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    write_file(&out_dir.join("config_echo.json"), &echo_config(&cfg))?;

    let every = args.checkpoint_every.unwrap_or(0);
    let result = train_with(&cfg.train, |update, params| {
        if every > 0 && (update + 1) % every == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.bin", update + 1));
            write_checkpoint(&path, params).map_err(|e| e.to_string())?;
        }
        Ok(())
    });

    match result {
        Ok(run) => {
            write_file(&out_dir.join("metrics.csv"), &metrics_csv(&run.metrics))?;
            write_checkpoint(&out_dir.join("checkpoint.bin"), &run.final_params)?;
            let last = run.metrics.last();
            println!(
                "trained {} for {} updates ({} steps); final mean_reward {}",
                cfg.train.objective,
                cfg.train.total_updates,
                run.metrics.len(),
                last.map_or_else(|| "n/a".into(), |r| fmt9(r.mean_reward)),
            );
            println!("wrote {}", out_dir.join("metrics.csv").display());
            Ok(())
        }
        Err(TrainError::Diverged {
            update_index,
            metrics,
        }) => {
            // Keep the last good metrics on disk for post-mortems.
            write_file(&out_dir.join("metrics.csv"), &metrics_csv(&metrics))?;
            Err(CliError::Numeric(format!(
                "numeric divergence at update {update_index}; \
                 partial metrics written to {}",
                out_dir.join("metrics.csv").display()
            )))
        }
        Err(TrainError::InvalidConfig(msg)) => Err(CliError::Validation(msg)),
        Err(e) => Err(CliError::Numeric(e.to_string())),
    }
}

#[derive(Debug, clap::Args)]
pub struct GatesArgs {
    #[arg(long, default_value_t = 1.0)]
    pub tau_pos: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tau_neg: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eps_low: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eps_high: f64,
    /// Lower end of the ratio grid; must be positive.
    #[arg(long, default_value_t = 0.1)]
    pub rho_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub rho_max: f64,
    /// Number of grid rows; the point nearest 1 is snapped to exactly 1.
    #[arg(long, default_value_t = 121)]
    pub steps: usize,
    #[arg(long, default_value = "gates.csv")]
    pub out: PathBuf,
}

pub const GATES_CSV_HEADER: &str = "rho,clip_gate_pos,clip_gate_neg,soft_gate,\
soft_gate_derivative,sspo_gate,f_ratio,local_weight";

pub fn gates_csv(cfg: &GateConfig, rho_min: f64, rho_max: f64, steps: usize) -> String {
    let mut out = String::new();
    out.push_str(GATES_CSV_HEADER);
    out.push('\n');
    for rho in rho_grid(rho_min, rho_max, steps) {
        let s = sample_gate_curves(rho, cfg);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt9(s.rho),
            fmt9(s.clip_gate_pos),
            fmt9(s.clip_gate_neg),
            fmt9(s.soft_gate),
            fmt9(s.soft_gate_derivative),
            fmt9(s.sspo_gate),
            fmt9(s.f_ratio),
            fmt9(s.local_weight),
        );
    }
    out
}

pub fn cmd_gates(args: &GatesArgs) -> Result<(), CliError> {
    let grid_ok = args.rho_min > 0.0 && args.rho_max > args.rho_min && args.steps >= 2;
    if !grid_ok {
        return Err(CliError::Validation(format!(
            "invalid grid: need 0 < rho_min < rho_max and steps >= 2, \
             got rho_min={} rho_max={} steps={}",
            args.rho_min, args.rho_max, args.steps
        )));
    }
    let cfg = GateConfig::new(args.tau_pos, args.tau_neg, args.eps_low, args.eps_high)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_file(
        &args.out,
        &gates_csv(&cfg, args.rho_min, args.rho_max, args.steps),
    )?;
    println!("wrote {} ({} rows)", args.out.display(), args.steps);
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Objective kind: grpo, gspo, gmpo, sapo or sspo.
    #[arg(long)]
    pub objective: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-coordinate relative error tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub rtol: f64,
    /// Absolute error floor below which a coordinate always passes.
    #[arg(long, default_value_t = 1e-8)]
    pub atol: f64,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let kind = parse_objective(&args.objective)?;
    let report = run_gradcheck(
        kind,
        &GradCheckSpec::default(),
        args.rtol,
        args.atol,
        args.seed,
    )
    .map_err(|e| match e {
        GradCheckError::TooManyCoords { .. } => CliError::Validation(e.to_string()),
        GradCheckError::Eval(_) => CliError::Numeric(e.to_string()),
    })?;
    println!(
        "gradcheck objective={} seed={} rtol={} atol={}",
        kind, args.seed, args.rtol, args.atol
    );
    println!("  coords checked:      {}", report.coords_checked);
    println!("  skipped (clip kink): {}", report.skipped_kink_coords);
    println!("  untouched sampled:   {}", report.untouched_checked);
    println!("  max abs err:         {}", fmt9(report.max_abs_err));
    println!("  max rel err:         {}", fmt9(report.max_rel_err));
    println!(
        "  result:              {}",
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        let detail = report.worst.map_or_else(String::new, |w| {
            format!(
                " (worst coord {}: analytic {}, finite-diff {}, rel err {})",
                w.coord,
                fmt9(w.analytic),
                fmt9(w.finite_diff),
                fmt9(w.rel_err)
            )
        });
        Err(CliError::Numeric(format!(
            "gradient check failed for {kind} at rtol {}{detail}",
            args.rtol
        )))
    }
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    /// Path to the base JSON experiment config; `objective` and `seed` are
    /// overridden per cell.
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated objective kinds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "grpo,gspo,gmpo,sapo,sspo"
    )]
    pub objectives: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const SUMMARY_CSV_HEADER: &str = "objective,seed,final_mean_reward,\
best_mean_reward,updates_to_threshold,final_entropy,grad_norm_var,status";

struct CellSummary {
    objective: ObjectiveKind,
    seed: u64,
    final_mean_reward: f64,
    best_mean_reward: f64,
    updates_to_threshold: i64,
    final_entropy: f64,
    grad_norm_var: f64,
    status: String,
}

fn summarize(metrics: &[MetricsRow]) -> (f64, f64, i64, f64, f64) {
    if metrics.is_empty() {
        return (0.0, 0.0, -1, 0.0, 0.0);
    }
    let last = metrics.last().expect("non-empty");
    let best = metrics
        .iter()
        .map(|r| r.mean_reward)
        .fold(f64::NEG_INFINITY, f64::max);
    let to_threshold = metrics
        .iter()
        .find(|r| r.mean_reward >= REWARD_THRESHOLD)
        .map_or(-1, |r| r.update_index as i64);
    let n = metrics.len() as f64;
    let mean_gn = metrics.iter().map(|r| r.grad_norm).sum::<f64>() / n;
    let var_gn = metrics
        .iter()
        .map(|r| (r.grad_norm - mean_gn) * (r.grad_norm - mean_gn))
        .sum::<f64>()
        / n;
    (
        last.mean_reward,
        best,
        to_threshold,
        last.policy_entropy_mean,
        var_gn,
    )
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let base = load_config(&args.config)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| base.output_dir.clone())
        .ok_or_else(|| {
            CliError::Validation(
                "no output directory: set output_dir in the config or pass --out".into(),
            )
        })?;
    let cells_dir = out_dir.join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|e| CliError::io(&cells_dir, e))?;

    if args.objectives.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Validation(
            "compare needs at least one objective and one seed".into(),
        ));
    }
    let mut kinds: Vec<ObjectiveKind> = args
        .objectives
        .iter()
        .map(|s| parse_objective(s))
        .collect::<Result<_, _>>()?;
    kinds.sort_by_key(|k| ObjectiveKind::ALL.iter().position(|a| a == k));
    kinds.dedup();
    let mut seeds = args.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let mut summaries = Vec::new();
    for &kind in &kinds {
        let obj_index = ObjectiveKind::ALL
            .iter()
            .position(|&a| a == kind)
            .expect("known kind") as u64;
        for &seed in &seeds {
            let mut cell = base.clone();
            cell.train.objective = kind;
            cell.train.seed = derive_seed(seed, &[STREAM_COMPARE, obj_index]);
            let (metrics, status) = match policyopt_core::trainer::train(&cell.train) {
                Ok(run) => (run.metrics, "ok".to_string()),
                Err(TrainError::Diverged {
                    update_index,
                    metrics,
                }) => (metrics, format!("diverged@{update_index}")),
                Err(e) => (Vec::new(), sanitize(&format!("error: {e}"))),
            };
            write_file(
                &cells_dir.join(format!("metrics_{kind}_seed{seed}.csv")),
                &metrics_csv(&metrics),
            )?;
            let (final_r, best_r, to_thr, final_h, gn_var) = summarize(&metrics);
            summaries.push(CellSummary {
                objective: kind,
                seed,
                final_mean_reward: final_r,
                best_mean_reward: best_r,
                updates_to_threshold: to_thr,
                final_entropy: final_h,
                grad_norm_var: gn_var,
                status,
            });
        }
    }

    let mut csv = String::new();
    csv.push_str(SUMMARY_CSV_HEADER);
    csv.push('\n');
    for s in &summaries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s.objective,
            s.seed,
            fmt9(s.final_mean_reward),
            fmt9(s.best_mean_reward),
            s.updates_to_threshold,
            fmt9(s.final_entropy),
            fmt9(s.grad_norm_var),
            s.status,
        );
    }
    write_file(&out_dir.join("summary.csv"), &csv)?;

    let report = variance_report(&base, &summaries);
    write_file(&out_dir.join("variance_report.txt"), &report)?;
    print!("{report}");
    println!("wrote {}", out_dir.join("summary.csv").display());
    Ok(())
}

/// Gradient-norm variance comparison between sequence-level and token-level
/// weighting. The direction is recorded, never asserted.
fn variance_report(base: &ResolvedConfig, summaries: &[CellSummary]) -> String {
    let mut report = String::new();
    let _ = writeln!(
        report,
        "gradient-norm variance on task {} (per-step variance, mean over seeds)",
        base.train.task.kind.name()
    );
    let mean_for = |kinds: &[ObjectiveKind]| -> Option<f64> {
        let vals: Vec<f64> = summaries
            .iter()
            .filter(|s| kinds.contains(&s.objective) && s.status == "ok")
            .map(|s| s.grad_norm_var)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    for kind in ObjectiveKind::ALL {
        if let Some(v) = mean_for(&[kind]) {
            let _ = writeln!(report, "  {kind}: {}", fmt9(v));
        }
    }
    let seq = mean_for(&[ObjectiveKind::Gspo, ObjectiveKind::Sspo]);
    let tok = mean_for(&[ObjectiveKind::Grpo]);
    match (seq, tok) {
        (Some(s), Some(t)) => {
            let _ = writeln!(report, "sequence-level mean (gspo, sspo): {}", fmt9(s));
            let _ = writeln!(report, "token-level mean (grpo): {}", fmt9(t));
            let direction = if s < t {
                "sequence-level < token-level"
            } else if s > t {
                "sequence-level > token-level"
            } else {
                "sequence-level == token-level"
            };
            let _ = writeln!(report, "direction: {direction}");
        }
        _ => {
            let _ = writeln!(
                report,
                "direction: not applicable (need grpo plus gspo or sspo rows)"
            );
        }
    }
    report
}

fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n'], ";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates_csv_identities_at_unity() {
        let cfg = GateConfig::default_params();
        let csv = gates_csv(&cfg, 0.1, 3.0, 30);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], GATES_CSV_HEADER);
        assert_eq!(lines.len(), 31);
        let unity: Vec<&str> = lines
            .iter()
            .filter(|l| l.starts_with("1.00000000e0,"))
            .copied()
            .collect();
        assert_eq!(unity.len(), 1);
        let cols: Vec<&str> = unity[0].split(',').collect();
        // sspo_gate, f_ratio, local_weight and soft_gate_derivative are all 1.
        assert_eq!(cols[4], "1.00000000e0");
        assert_eq!(cols[5], "1.00000000e0");
        assert_eq!(cols[6], "1.00000000e0");
        assert_eq!(cols[7], "1.00000000e0");
    }

    #[test]
    fn gates_csv_value_at_rho_two() {
        let cfg = GateConfig::default_params();
        let csv = gates_csv(&cfg, 0.5, 2.0, 4);
        let row = csv.lines().last().unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        // exp(pi/4) at tau_pos = 1.
        assert_eq!(cols[5], "2.19328005e0");
    }

    #[test]
    fn summarize_handles_threshold_and_empty() {
        let (f, b, t, _, _) = summarize(&[]);
        assert_eq!((f, b, t), (0.0, 0.0, -1));
        let mk = |update_index, mean_reward, grad_norm| MetricsRow {
            update_index,
            mean_reward,
            objective_value: 0.0,
            policy_entropy_mean: 1.0,
            ratio_mean: 1.0,
            ratio_max: 1.0,
            intra_seq_dispersion_mean: 0.0,
            soft_clipped_fraction: 0.0,
            grad_norm,
        };
        let rows = vec![mk(0, 0.2, 1.0), mk(1, 0.95, 3.0), mk(2, 0.8, 2.0)];
        let (f, b, t, _, v) = summarize(&rows);
        assert_eq!(f, 0.8);
        assert_eq!(b, 0.95);
        assert_eq!(t, 1);
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }
}
