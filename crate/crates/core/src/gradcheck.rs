//! Finite-difference validation of the analytic objective gradients.
//!
//! Central differences with a per-coordinate step are compared against the
//! analytic gradient on seeded random off-policy instances. Coordinates
//! whose perturbation could cross a hard-clip kink are excluded: the
//! min/max subgradient convention makes the analytic gradient exactly zero
//! on clipped branches, while finite differences straddling the kink see
//! the bend. A sample of coordinates never touched by the batch must carry
//! an exactly-zero analytic gradient.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::gates::GateConfig;
use crate::group::{token_ratios, TrajectoryGroup};
use crate::objectives::{evaluate, EvalError, ObjectiveKind};
use crate::policy::PolicyParams;
use crate::rng::DetRng;

/// Half-width of the ratio band around a clip bound inside which
/// coordinates are skipped.
pub const KINK_BAND: f64 = 1e-3;

/// Relative scale of the central-difference step: `h = 1e-5 * max(1, |theta|)`.
pub const STEP_SCALE: f64 = 1e-5;

/// Most touched coordinates an instance may have; larger instances are
/// rejected rather than silently spot-checked.
pub const MAX_COORDS: usize = 5000;

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheckError {
    TooManyCoords { count: usize, max: usize },
    Eval(EvalError),
}

impl From<EvalError> for GradCheckError {
    fn from(e: EvalError) -> Self {
        GradCheckError::Eval(e)
    }
}

impl core::fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GradCheckError::TooManyCoords { count, max } => {
                write!(f, "instance touches {count} coordinates, limit {max}")
            }
            GradCheckError::Eval(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GradCheckError {}

/// Shape of the random instance a check runs on. Kept tiny so every touched
/// coordinate can be enumerated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSpec {
    pub vocab_size: usize,
    pub context_order: usize,
    pub prompt_buckets: usize,
    pub num_groups: usize,
    pub group_size: usize,
    pub max_len: usize,
    /// Half-width of the uniform logit perturbation applied to the behavior
    /// snapshot to make the instance off-policy.
    pub perturbation: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            vocab_size: 6,
            context_order: 1,
            prompt_buckets: 4,
            num_groups: 3,
            group_size: 4,
            max_len: 5,
            perturbation: 0.25,
        }
    }
}

/// Outcome of one finite-difference sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub kind: ObjectiveKind,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub skipped_kink_coords: usize,
    pub untouched_checked: usize,
    pub pass: bool,
    /// Worst coordinate by relative error among those exceeding `atol`.
    pub worst: Option<WorstCoord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstCoord {
    pub coord: usize,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

/// Central difference of a scalar function; used to self-test the oracle.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference of the objective value along one logit coordinate.
pub fn finite_diff_grad(
    kind: ObjectiveKind,
    groups: &[TrajectoryGroup],
    params: &PolicyParams,
    cfg: &GateConfig,
    coord: usize,
    h: f64,
) -> Result<f64, EvalError> {
    debug_assert!(h > 0.0);
    let mut plus = params.clone();
    plus.logits[coord] += h;
    let mut minus = params.clone();
    minus.logits[coord] -= h;
    let up = evaluate(kind, groups, &plus, cfg)?.value;
    let down = evaluate(kind, groups, &minus, cfg)?.value;
    Ok((up - down) / (2.0 * h))
}

/// A seeded random off-policy instance: behavior-sampled groups with random
/// rewards and normalized advantages, scored under perturbed parameters.
pub fn make_instance(spec: &GradCheckSpec, seed: u64) -> (Vec<TrajectoryGroup>, PolicyParams) {
    let mut rng = DetRng::from_key(seed, &[0x67c4]);
    let mut behavior =
        PolicyParams::zeros(spec.vocab_size, spec.context_order, spec.prompt_buckets)
            .expect("valid gradcheck shape");
    for x in behavior.logits.iter_mut() {
        *x = rng.next_range(-1.0, 1.0);
    }
    let mut groups = Vec::with_capacity(spec.num_groups);
    for _ in 0..spec.num_groups {
        let bucket = rng.next_below(spec.prompt_buckets);
        let mut trajs = Vec::with_capacity(spec.group_size);
        for _ in 0..spec.group_size {
            let mut t = behavior
                .sample_response(bucket, &[bucket], spec.max_len, &mut rng)
                .expect("sampling in range");
            t.reward = rng.next_f64();
            trajs.push(t);
        }
        let mut group = TrajectoryGroup::new(trajs).expect("well-formed group");
        group.normalize(1e-8).expect("group size >= 2");
        groups.push(group);
    }
    let mut current = behavior;
    for x in current.logits.iter_mut() {
        *x += rng.next_range(-spec.perturbation, spec.perturbation);
    }
    (groups, current)
}

/// Run the full check for one objective kind.
pub fn run_gradcheck(
    kind: ObjectiveKind,
    spec: &GradCheckSpec,
    rtol: f64,
    atol: f64,
    seed: u64,
) -> Result<GradCheckReport, GradCheckError> {
    let (groups, params) = make_instance(spec, seed);
    let analytic = evaluate(kind, &groups, &params, &GateConfig::default_params())?;
    let cfg = GateConfig::default_params();

    let touched_rows = touched_rows(&groups, &params);
    let kink_rows = kink_rows(kind, &groups, &params, &cfg);
    let vocab = params.vocab_size();

    let touched_coords: Vec<usize> = touched_rows
        .iter()
        .flat_map(|&row| (0..vocab).map(move |j| row * vocab + j))
        .collect();
    if touched_coords.len() > MAX_COORDS {
        return Err(GradCheckError::TooManyCoords {
            count: touched_coords.len(),
            max: MAX_COORDS,
        });
    }

    let mut coords_checked = 0usize;
    let mut skipped_kink_coords = 0usize;
    let mut max_rel_err = 0.0f64;
    let mut max_abs_err = 0.0f64;
    let mut pass = true;
    let mut worst: Option<WorstCoord> = None;

    for &coord in &touched_coords {
        if kink_rows.contains(&(coord / vocab)) {
            skipped_kink_coords += 1;
            continue;
        }
        let h = STEP_SCALE * params.logits[coord].abs().max(1.0);
        let fd = finite_diff_grad(kind, &groups, &params, &cfg, coord, h)?;
        let an = analytic.gradient[coord];
        let abs_err = (fd - an).abs();
        max_abs_err = max_abs_err.max(abs_err);
        coords_checked += 1;
        if abs_err <= atol {
            continue;
        }
        let rel_err = abs_err / an.abs().max(fd.abs());
        max_rel_err = max_rel_err.max(rel_err);
        if worst.is_none_or(|w| rel_err > w.rel_err) {
            worst = Some(WorstCoord {
                coord,
                analytic: an,
                finite_diff: fd,
                rel_err,
            });
        }
        if rel_err > rtol {
            pass = false;
        }
    }

    // Untouched coordinates must carry an exactly-zero analytic gradient.
    let mut rng = DetRng::from_key(seed, &[0x075c]);
    let total = params.logits.len();
    let mut untouched_checked = 0usize;
    for _ in 0..256 {
        if untouched_checked >= 64 {
            break;
        }
        let coord = rng.next_below(total);
        if touched_rows.contains(&(coord / vocab)) {
            continue;
        }
        untouched_checked += 1;
        if analytic.gradient[coord] != 0.0 {
            pass = false;
            worst = Some(WorstCoord {
                coord,
                analytic: analytic.gradient[coord],
                finite_diff: 0.0,
                rel_err: f64::INFINITY,
            });
        }
    }

    Ok(GradCheckReport {
        kind,
        coords_checked,
        max_rel_err,
        max_abs_err,
        skipped_kink_coords,
        untouched_checked,
        pass,
        worst,
    })
}

/// Rows visited by any (trajectory, position) in the batch.
fn touched_rows(groups: &[TrajectoryGroup], params: &PolicyParams) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    for group in groups {
        for traj in &group.trajectories {
            for (row, _) in params.walk_response(traj.prompt_id, &traj.response_tokens) {
                rows.insert(row);
            }
        }
    }
    rows
}

/// Rows whose perturbation could move a governing ratio across a clip
/// bound. For token-clipped kinds that is the row of each near-bound token;
/// for sequence-clipped GSPO a near-bound sequence ratio taints every row
/// the trajectory visits. Smooth kinds have no kinks.
fn kink_rows(
    kind: ObjectiveKind,
    groups: &[TrajectoryGroup],
    params: &PolicyParams,
    cfg: &GateConfig,
) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    let near = |rho: f64| {
        (rho - (1.0 + cfg.eps_high)).abs() < KINK_BAND
            || (rho - (1.0 - cfg.eps_low)).abs() < KINK_BAND
    };
    match kind {
        ObjectiveKind::Sapo | ObjectiveKind::Sspo => {}
        ObjectiveKind::Grpo | ObjectiveKind::Gmpo => {
            for group in groups {
                for traj in &group.trajectories {
                    let ratios = token_ratios(traj, params).expect("finite ratios");
                    for ((row, _), &rho) in params
                        .walk_response(traj.prompt_id, &traj.response_tokens)
                        .zip(ratios.iter())
                    {
                        if near(rho) {
                            rows.insert(row);
                        }
                    }
                }
            }
        }
        ObjectiveKind::Gspo => {
            for group in groups {
                for traj in &group.trajectories {
                    let ratios = token_ratios(traj, params).expect("finite ratios");
                    let s = crate::group::sequence_ratio(&ratios).expect("non-empty");
                    if near(s) {
                        for (row, _) in params.walk_response(traj.prompt_id, &traj.response_tokens)
                        {
                            rows.insert(row);
                        }
                    }
                }
            }
        }
    }
    rows
}
