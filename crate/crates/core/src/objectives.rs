//! Values and analytic gradients of the five surrogate objectives.
//!
//! All five share one evaluation entry point and differ only in how a
//! sequence's token ratios are gated and aggregated:
//!
//! * `grpo` — token-level hard clip, arithmetic mean over tokens;
//! * `gspo` — hard clip of the length-normalized sequence ratio;
//! * `gmpo` — geometric mean of token-level clipped ratios;
//! * `sapo` — sigmoid gate per token, arithmetic mean;
//! * `sspo` — geometric mean of arctan-exp gates per token.
//!
//! The batch value is the mean over groups of the per-group `1/G` average,
//! and the gradient is dense over the policy's logit table. Products are
//! evaluated in log space; clipped branches contribute exactly zero
//! gradient (the min/max subgradient convention). At the on-policy point
//! every per-token weight collapses to 1, so all five kinds produce the
//! same group-baseline gradient.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::gates::{
    clip_active, clip_gate, geo_gate_log, soft_gate, soft_gate_derivative, sspo_weight, GateConfig,
};
use crate::group::{GroupError, TrajectoryGroup};
use crate::policy::{self, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Grpo,
    Gspo,
    Gmpo,
    Sapo,
    Sspo,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Grpo,
        ObjectiveKind::Gspo,
        ObjectiveKind::Gmpo,
        ObjectiveKind::Sapo,
        ObjectiveKind::Sspo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Grpo => "grpo",
            ObjectiveKind::Gspo => "gspo",
            ObjectiveKind::Gmpo => "gmpo",
            ObjectiveKind::Sapo => "sapo",
            ObjectiveKind::Sspo => "sspo",
        }
    }

    pub fn parse(name: &str) -> Option<ObjectiveKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl core::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    EmptyBatch,
    /// Advantage count differs from trajectory count in group `group`.
    BatchMismatch {
        group: usize,
        trajectories: usize,
        advantages: usize,
    },
    /// A value or gradient coefficient went NaN/infinite.
    NonFinite {
        group: usize,
        sequence: usize,
    },
    Group(GroupError),
}

impl From<GroupError> for EvalError {
    fn from(e: GroupError) -> Self {
        EvalError::Group(e)
    }
}

impl core::fmt::Display for EvalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalError::EmptyBatch => write!(f, "empty batch of groups"),
            EvalError::BatchMismatch {
                group,
                trajectories,
                advantages,
            } => write!(
                f,
                "group {group}: {trajectories} trajectories but {advantages} advantages"
            ),
            EvalError::NonFinite { group, sequence } => write!(
                f,
                "non-finite intermediate in group {group}, sequence {sequence}"
            ),
            EvalError::Group(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

/// Objective value (to be ascended) plus its dense gradient, congruent
/// with `PolicyParams::logits`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl SurrogateResult {
    pub fn grad_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// GMPO's per-sequence weight: geometric mean of clipped token ratios,
/// evaluated in log space. With clipping disabled this recovers the
/// length-normalized sequence ratio.
pub fn gmpo_sequence_weight(
    ratios: &[f64],
    advantage: f64,
    cfg: &GateConfig,
) -> Result<f64, GroupError> {
    if ratios.is_empty() {
        return Err(GroupError::EmptyRatios);
    }
    let mut sum = 0.0;
    for &rho in ratios {
        let g = clip_gate(rho, advantage, cfg);
        // eps_low < 1 keeps clip outputs positive, making |.| a no-op.
        debug_assert!(g > 0.0);
        sum += g.ln();
    }
    Ok((sum / ratios.len() as f64).exp())
}

/// Evaluate objective `kind` on a batch of groups.
///
/// Advantages must already be normalized and behavior log-probs recorded at
/// rollout time; `params` is the current policy the batch is scored under.
pub fn evaluate(
    kind: ObjectiveKind,
    groups: &[TrajectoryGroup],
    params: &PolicyParams,
    cfg: &GateConfig,
) -> Result<SurrogateResult, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    for (gi, group) in groups.iter().enumerate() {
        if group.advantages.len() != group.trajectories.len() {
            return Err(EvalError::BatchMismatch {
                group: gi,
                trajectories: group.trajectories.len(),
                advantages: group.advantages.len(),
            });
        }
        for t in &group.trajectories {
            t.validate()?;
        }
    }

    let mut gradient = vec![0.0; params.logits.len()];
    let mut value = 0.0;
    let inv_groups = 1.0 / groups.len() as f64;

    for (gi, group) in groups.iter().enumerate() {
        let inv_g = 1.0 / group.size() as f64;
        let scale = inv_groups * inv_g;
        for (si, traj) in group.trajectories.iter().enumerate() {
            let adv = group.advantages[si];
            if adv == 0.0 {
                // Every kind multiplies by the advantage, so zero-advantage
                // sequences (including whole degenerate groups) contribute
                // exactly nothing.
                continue;
            }
            let ratios = crate::group::token_ratios(traj, params)?;
            let (seq_value, coefs) = sequence_terms(kind, &ratios, adv, cfg)?;
            if !seq_value.is_finite() || coefs.iter().any(|c| !c.is_finite()) {
                return Err(EvalError::NonFinite {
                    group: gi,
                    sequence: si,
                });
            }
            value += seq_value * scale;
            for ((row, token), coef) in params
                .walk_response(traj.prompt_id, &traj.response_tokens)
                .zip(coefs.iter())
            {
                if *coef != 0.0 {
                    add_scaled_score(params, row, token, coef * scale, &mut gradient);
                }
            }
        }
    }

    if !value.is_finite() {
        return Err(EvalError::NonFinite {
            group: usize::MAX,
            sequence: usize::MAX,
        });
    }
    Ok(SurrogateResult { value, gradient })
}

/// Per-sequence objective term and per-token gradient coefficients: the
/// sequence contributes `sum_t coef_t * grad log pi(y_t)` to the batch
/// gradient (before the `1/(num_groups * G)` scale).
fn sequence_terms(
    kind: ObjectiveKind,
    ratios: &[f64],
    adv: f64,
    cfg: &GateConfig,
) -> Result<(f64, Vec<f64>), GroupError> {
    let n = ratios.len() as f64;
    match kind {
        ObjectiveKind::Grpo => {
            let mut value = 0.0;
            let coefs = ratios
                .iter()
                .map(|&rho| {
                    value += adv * clip_gate(rho, adv, cfg) / n;
                    if clip_active(rho, adv, cfg) {
                        0.0
                    } else {
                        adv * rho / n
                    }
                })
                .collect();
            Ok((value, coefs))
        }
        ObjectiveKind::Gspo => {
            let s = crate::group::sequence_ratio(ratios)?;
            let value = adv * clip_gate(s, adv, cfg);
            let coef = if clip_active(s, adv, cfg) {
                0.0
            } else {
                adv * s / n
            };
            Ok((value, vec![coef; ratios.len()]))
        }
        ObjectiveKind::Gmpo => {
            let weight = gmpo_sequence_weight(ratios, adv, cfg)?;
            let value = adv * weight;
            let coefs = ratios
                .iter()
                .map(|&rho| {
                    if clip_active(rho, adv, cfg) {
                        0.0
                    } else {
                        adv * weight / n
                    }
                })
                .collect();
            Ok((value, coefs))
        }
        ObjectiveKind::Sapo => {
            let mut value = 0.0;
            let coefs = ratios
                .iter()
                .map(|&rho| {
                    value += adv * soft_gate(rho, adv, cfg) / n;
                    adv * soft_gate_derivative(rho, adv, cfg) * rho / n
                })
                .collect();
            Ok((value, coefs))
        }
        ObjectiveKind::Sspo => {
            let gate = geo_gate_log(ratios, adv, cfg)?.exp();
            let value = adv * gate;
            let coefs = ratios
                .iter()
                .map(|&rho| {
                    let (_, local_weight) = sspo_weight(rho, adv, cfg);
                    adv * gate * local_weight / n
                })
                .collect();
            Ok((value, coefs))
        }
    }
}

/// Accumulate `coef * (one_hot(token) - softmax(row))` into the dense
/// gradient at `row`.
fn add_scaled_score(
    params: &PolicyParams,
    row: usize,
    token: usize,
    coef: f64,
    gradient: &mut [f64],
) {
    let vocab = params.vocab_size();
    let probs = policy::softmax(params.row(row));
    let base = row * vocab;
    for (j, &p) in probs.iter().enumerate() {
        gradient[base + j] -= coef * p;
    }
    gradient[base + token] += coef;
}
