//! Off-policy group-based training loop.
//!
//! Each update cycle snapshots the policy as the behavior policy, collects
//! `B` prompt groups of `G` responses, then runs `E` epochs of `M`
//! mini-batch ascent steps over the groups (mini-batches partition whole
//! groups so advantage normalization stays intact). One metrics row is
//! appended per optimizer step; its ratio and entropy statistics are taken
//! on the mini-batch at evaluation time, before the step is applied.
//!
//! Rollout randomness is keyed by `(seed, update, prompt_slot)` and epoch
//! shuffles by `(seed, update, epoch)`, so results do not depend on
//! evaluation order and identical configs reproduce identical metrics,
//! while every cycle still draws fresh prompts and responses.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::gates::{clip_active, soft_gate_derivative, sspo_weight, GateConfig};
use crate::group::{intra_sequence_dispersion, GroupError, RatioMatrix, TrajectoryGroup};
use crate::objectives::{evaluate, EvalError, ObjectiveKind};
use crate::policy::{entropy_of_row, PolicyError, PolicyParams};
use crate::rng::DetRng;
use crate::tasks::{make_prompt, reward, TaskSpec};

/// Substream tags for the documented RNG keying.
const STREAM_ROLLOUT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

/// Divergence guard: abort before any parameter exceeds this magnitude.
const PARAM_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Adam moment coefficients; the conventional defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub objective: ObjectiveKind,
    pub gate: GateConfig,
    /// Policy context order (k).
    pub context_order: usize,
    /// Policy prompt buckets (P).
    pub prompt_buckets: usize,
    /// Responses per prompt (G).
    pub group_size: usize,
    /// Prompts per rollout (B).
    pub prompts_per_rollout: usize,
    /// Epochs per rollout (E).
    pub epochs_per_rollout: usize,
    /// Mini-batches per epoch (M); must divide B.
    pub minibatches_per_epoch: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam: AdamParams,
    /// Number of snapshot-rollout-optimize cycles.
    pub total_updates: usize,
    pub seed: u64,
    /// Floor under the reward standard deviation in advantage normalization.
    pub advantage_eps: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.prompts_per_rollout == 0 {
            return bad(String::from("prompts_per_rollout must be >= 1"));
        }
        if self.epochs_per_rollout == 0 || self.minibatches_per_epoch == 0 {
            return bad(String::from("epochs and minibatches must be >= 1"));
        }
        if !self
            .prompts_per_rollout
            .is_multiple_of(self.minibatches_per_epoch)
        {
            return bad(format!(
                "prompts_per_rollout ({}) must be divisible by minibatches_per_epoch ({})",
                self.prompts_per_rollout, self.minibatches_per_epoch
            ));
        }
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate >= 0.0;
        if !lr_ok {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.advantage_eps.is_nan() || self.advantage_eps <= 0.0 {
            return bad(format!(
                "advantage_eps must be > 0, got {}",
                self.advantage_eps
            ));
        }
        Ok(())
    }
}

/// Per-step training diagnostics; one CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Rollout-cycle index this optimizer step belongs to (the unit of
    /// `total_updates`). With E*M > 1 several consecutive rows share it.
    pub update_index: usize,
    /// Mean reward over the whole current rollout buffer.
    pub mean_reward: f64,
    /// Objective value on the mini-batch at evaluation time.
    pub objective_value: f64,
    /// Mean policy entropy over the mini-batch's visited states.
    pub policy_entropy_mean: f64,
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub intra_seq_dispersion_mean: f64,
    /// Fraction of tokens whose gate attenuation fell below 0.5: the
    /// hard-clipped fraction for clip kinds, `f' < 0.5` for the sigmoid
    /// gate and `f'/f < 0.5` for the arctan gate.
    pub soft_clipped_fraction: f64,
    pub grad_norm: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "update_index,mean_reward,objective_value,\
policy_entropy_mean,ratio_mean,ratio_max,intra_seq_dispersion_mean,\
soft_clipped_fraction,grad_norm";
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    InvalidConfig(String),
    /// A parameter went non-finite or beyond the guard magnitude; the run
    /// aborts carrying the metrics collected so far.
    Diverged {
        update_index: usize,
        metrics: Vec<MetricsRow>,
    },
    Eval(EvalError),
    Group(GroupError),
    Policy(PolicyError),
    /// An update observer (checkpoint writer etc.) failed.
    Observer(String),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}

impl From<GroupError> for TrainError {
    fn from(e: GroupError) -> Self {
        TrainError::Group(e)
    }
}

impl From<PolicyError> for TrainError {
    fn from(e: PolicyError) -> Self {
        TrainError::Policy(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            TrainError::Diverged { update_index, .. } => {
                write!(f, "numeric divergence at update {update_index}")
            }
            TrainError::Eval(e) => write!(f, "{e}"),
            TrainError::Group(e) => write!(f, "{e}"),
            TrainError::Policy(e) => write!(f, "{e}"),
            TrainError::Observer(msg) => write!(f, "observer failed: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

/// Completed training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub metrics: Vec<MetricsRow>,
    pub final_params: PolicyParams,
}

/// Deep copy of the current parameters; later updates never alter it.
pub fn snapshot_behavior(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

/// Collect `B` groups of `G` responses from the behavior policy, with
/// rewards assigned and advantages normalized. Each prompt slot draws from
/// its own `(seed, update, slot)` substream.
pub fn collect_rollouts(
    behavior: &PolicyParams,
    cfg: &TrainConfig,
    update: usize,
) -> Result<Vec<TrajectoryGroup>, TrainError> {
    let mut groups = Vec::with_capacity(cfg.prompts_per_rollout);
    for slot in 0..cfg.prompts_per_rollout {
        let mut rng = DetRng::from_key(cfg.seed, &[STREAM_ROLLOUT, update as u64, slot as u64]);
        let (prompt, bucket) = make_prompt(&cfg.task, cfg.prompt_buckets, &mut rng);
        let mut trajs = Vec::with_capacity(cfg.group_size);
        for _ in 0..cfg.group_size {
            let mut t = behavior.sample_response(bucket, &prompt, cfg.task.max_len, &mut rng)?;
            t.reward = reward(&cfg.task, &prompt, &t.response_tokens);
            trajs.push(t);
        }
        let mut group = TrajectoryGroup::new(trajs)?;
        group.normalize(cfg.advantage_eps)?;
        groups.push(group);
    }
    Ok(groups)
}

/// Mini-batch statistics taken at evaluation time.
struct BatchDiagnostics {
    entropy_mean: f64,
    ratio_mean: f64,
    ratio_max: f64,
    dispersion_mean: f64,
    soft_clipped_fraction: f64,
}

fn batch_diagnostics(
    kind: ObjectiveKind,
    groups: &[TrajectoryGroup],
    params: &PolicyParams,
    gate: &GateConfig,
) -> Result<BatchDiagnostics, TrainError> {
    let mut entropy_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut ratio_max = f64::NEG_INFINITY;
    let mut token_count = 0usize;
    let mut attenuated = 0usize;
    let mut dispersion_sum = 0.0;
    let mut seq_count = 0usize;

    for group in groups {
        let ratio_matrix = RatioMatrix::compute(group, params)?;
        for (si, traj) in group.trajectories.iter().enumerate() {
            let adv = group.advantages[si];
            let ratios = &ratio_matrix.rows[si];
            let seq_clipped = kind == ObjectiveKind::Gspo
                && clip_active(crate::group::sequence_ratio(ratios)?, adv, gate);
            for ((row, _), &rho) in params
                .walk_response(traj.prompt_id, &traj.response_tokens)
                .zip(ratios.iter())
            {
                entropy_sum += entropy_of_row(params.row(row));
                ratio_sum += rho;
                ratio_max = ratio_max.max(rho);
                token_count += 1;
                let attenuation = match kind {
                    ObjectiveKind::Grpo | ObjectiveKind::Gmpo => {
                        if clip_active(rho, adv, gate) {
                            0.0
                        } else {
                            1.0
                        }
                    }
                    ObjectiveKind::Gspo => {
                        if seq_clipped {
                            0.0
                        } else {
                            1.0
                        }
                    }
                    ObjectiveKind::Sapo => soft_gate_derivative(rho, adv, gate),
                    ObjectiveKind::Sspo => sspo_weight(rho, adv, gate).0,
                };
                if attenuation < 0.5 {
                    attenuated += 1;
                }
            }
            dispersion_sum += intra_sequence_dispersion(ratios)?;
            seq_count += 1;
        }
    }
    Ok(BatchDiagnostics {
        entropy_mean: entropy_sum / token_count as f64,
        ratio_mean: ratio_sum / token_count as f64,
        ratio_max,
        dispersion_mean: dispersion_sum / seq_count as f64,
        soft_clipped_fraction: attenuated as f64 / token_count as f64,
    })
}

enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptimizerState {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                m: alloc::vec![0.0; len],
                v: alloc::vec![0.0; len],
                t: 0,
            },
        }
    }

    /// One ascent step (the objective is maximized).
    fn step(&mut self, logits: &mut [f64], grad: &[f64], lr: f64, adam: &AdamParams) {
        match self {
            OptimizerState::Sgd => {
                for (x, g) in logits.iter_mut().zip(grad.iter()) {
                    *x += lr * g;
                }
            }
            OptimizerState::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - adam.beta1.powi(*t as i32);
                let bc2 = 1.0 - adam.beta2.powi(*t as i32);
                for i in 0..logits.len() {
                    let g = grad[i];
                    m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g;
                    v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    logits[i] += lr * m_hat / (v_hat.sqrt() + adam.eps);
                }
            }
        }
    }
}

/// Run the configured training loop from a zero-initialized (uniform)
/// policy, returning the per-step metrics and the final parameters.
pub fn train(cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    train_with(cfg, |_, _| Ok(()))
}

/// [`train`] with an observer invoked after each completed update cycle,
/// e.g. to write periodic checkpoints. An observer error aborts the run.
pub fn train_with(
    cfg: &TrainConfig,
    mut after_update: impl FnMut(usize, &PolicyParams) -> Result<(), String>,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let mut params =
        PolicyParams::zeros(cfg.task.vocab_size, cfg.context_order, cfg.prompt_buckets)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, params.logits.len());
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let batch_groups = cfg.prompts_per_rollout / cfg.minibatches_per_epoch;

    for update in 0..cfg.total_updates {
        let behavior = snapshot_behavior(&params);
        let groups = collect_rollouts(&behavior, cfg, update)?;
        let total_traj = (cfg.prompts_per_rollout * cfg.group_size) as f64;
        let mean_reward = groups
            .iter()
            .flat_map(|g| g.trajectories.iter())
            .map(|t| t.reward)
            .sum::<f64>()
            / total_traj;

        for epoch in 0..cfg.epochs_per_rollout {
            let mut order: Vec<usize> = (0..cfg.prompts_per_rollout).collect();
            let mut shuffle_rng =
                DetRng::from_key(cfg.seed, &[STREAM_SHUFFLE, update as u64, epoch as u64]);
            shuffle_rng.shuffle(&mut order);

            for mb in 0..cfg.minibatches_per_epoch {
                let batch: Vec<TrajectoryGroup> = order[mb * batch_groups..(mb + 1) * batch_groups]
                    .iter()
                    .map(|&i| groups[i].clone())
                    .collect();
                let result = evaluate(cfg.objective, &batch, &params, &cfg.gate)?;
                let diag = batch_diagnostics(cfg.objective, &batch, &params, &cfg.gate)?;
                metrics.push(MetricsRow {
                    update_index: update,
                    mean_reward,
                    objective_value: result.value,
                    policy_entropy_mean: diag.entropy_mean,
                    ratio_mean: diag.ratio_mean,
                    ratio_max: diag.ratio_max,
                    intra_seq_dispersion_mean: diag.dispersion_mean,
                    soft_clipped_fraction: diag.soft_clipped_fraction,
                    grad_norm: result.grad_norm(),
                });
                optimizer.step(
                    &mut params.logits,
                    &result.gradient,
                    cfg.learning_rate,
                    &cfg.adam,
                );
                if params
                    .logits
                    .iter()
                    .any(|x| !x.is_finite() || x.abs() > PARAM_LIMIT)
                {
                    return Err(TrainError::Diverged {
                        update_index: update,
                        metrics,
                    });
                }
            }
        }
        after_update(update, &params).map_err(TrainError::Observer)?;
    }
    Ok(TrainRun {
        metrics,
        final_params: params,
    })
}
