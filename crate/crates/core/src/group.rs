//! Group-level math shared by every objective: importance ratios,
//! group-relative advantages and dispersion diagnostics.
//!
//! All functions here are pure over immutable inputs and safe to evaluate
//! in parallel across trajectories or groups.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::policy::{PolicyError, PolicyParams};

#[derive(Clone, Debug, PartialEq)]
pub enum GroupError {
    /// Advantage normalization needs at least two responses.
    GroupTooSmall {
        size: usize,
    },
    /// Ratio aggregation over an empty token list.
    EmptyRatios,
    /// A recomputed log-prob or ratio was NaN/infinite at `(prompt_id, position)`.
    NonFiniteRatio {
        prompt_id: usize,
        position: usize,
    },
    /// Trajectory failed its structural invariants.
    BadTrajectory {
        prompt_id: usize,
        reason: &'static str,
    },
    /// Group members do not share one prompt.
    MixedPrompts,
    Policy(PolicyError),
}

impl From<PolicyError> for GroupError {
    fn from(e: PolicyError) -> Self {
        GroupError::Policy(e)
    }
}

impl core::fmt::Display for GroupError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GroupError::GroupTooSmall { size } => {
                write!(f, "group of size {size}; need at least 2 responses")
            }
            GroupError::EmptyRatios => write!(f, "empty ratio list"),
            GroupError::NonFiniteRatio {
                prompt_id,
                position,
            } => write!(
                f,
                "non-finite ratio for prompt {prompt_id} at token position {position}"
            ),
            GroupError::BadTrajectory { prompt_id, reason } => {
                write!(f, "invalid trajectory for prompt {prompt_id}: {reason}")
            }
            GroupError::MixedPrompts => write!(f, "trajectories in a group must share a prompt"),
            GroupError::Policy(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GroupError {}

/// One sampled response with the log-probs it had under the behavior policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Prompt bucket the policy conditions on; shared across a group.
    pub prompt_id: usize,
    pub prompt_tokens: Vec<usize>,
    /// Response tokens, terminated by EOS or truncated at the rollout cap.
    pub response_tokens: Vec<usize>,
    /// Per-response-token log-probs under the behavior policy, in nats.
    pub behavior_logps: Vec<f64>,
    /// Verifier reward in `[0, 1]`.
    pub reward: f64,
}

impl Trajectory {
    /// Number of response tokens, counting EOS when it was emitted.
    pub fn len(&self) -> usize {
        self.response_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response_tokens.is_empty()
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        let bad = |reason| GroupError::BadTrajectory {
            prompt_id: self.prompt_id,
            reason,
        };
        if self.response_tokens.is_empty() {
            return Err(bad("empty response"));
        }
        if self.behavior_logps.len() != self.response_tokens.len() {
            return Err(bad("behavior_logps length mismatch"));
        }
        if self
            .behavior_logps
            .iter()
            .any(|&lp| lp.is_nan() || lp > 0.0)
        {
            return Err(bad("behavior log-prob above 0 or NaN"));
        }
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(bad("reward outside [0, 1]"));
        }
        Ok(())
    }
}

/// `G` responses to one prompt plus their normalized advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGroup {
    pub trajectories: Vec<Trajectory>,
    /// Filled by [`TrajectoryGroup::normalize`]; sums to ~0 unless the
    /// zero-variance rule zeroed the whole group.
    pub advantages: Vec<f64>,
}

impl TrajectoryGroup {
    /// A group needs at least one member; the `G >= 2` requirement belongs
    /// to advantage normalization, not to objective evaluation.
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, GroupError> {
        if trajectories.is_empty() {
            return Err(GroupError::GroupTooSmall { size: 0 });
        }
        let prompt_id = trajectories[0].prompt_id;
        for t in &trajectories {
            t.validate()?;
            if t.prompt_id != prompt_id {
                return Err(GroupError::MixedPrompts);
            }
        }
        let advantages = vec![0.0; trajectories.len()];
        Ok(Self {
            trajectories,
            advantages,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    /// Standardize rewards into advantages via [`normalize_advantages`].
    pub fn normalize(&mut self, eps: f64) -> Result<(), GroupError> {
        self.advantages = normalize_advantages(&self.rewards(), eps)?;
        Ok(())
    }
}

/// Per-trajectory token importance ratios for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl RatioMatrix {
    /// Recompute ratios of every trajectory in `group` under `params`.
    pub fn compute(group: &TrajectoryGroup, params: &PolicyParams) -> Result<Self, GroupError> {
        let rows = group
            .trajectories
            .iter()
            .map(|t| token_ratios(t, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rows })
    }
}

/// Group-relative advantages: `(r_i - mean) / std` with the population
/// standard deviation (divide by G). A group whose reward spread falls
/// below `eps` is degenerate and gets all-zero advantages, dropping it
/// from the gradient entirely.
pub fn normalize_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, GroupError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GroupError::GroupTooSmall { size: g });
    }
    debug_assert!(eps > 0.0);
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < eps {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Per-token importance ratios `rho_t = exp(logpi(y_t | x, y_<t) - logpi_old)`.
/// No clamping is applied here; extreme ratios surface in metrics instead.
pub fn token_ratios(
    trajectory: &Trajectory,
    params: &PolicyParams,
) -> Result<Vec<f64>, GroupError> {
    let mut ratios = Vec::with_capacity(trajectory.len());
    for (position, (row, token)) in params
        .walk_response(trajectory.prompt_id, &trajectory.response_tokens)
        .enumerate()
    {
        let logp = crate::policy::log_prob_at_row(params, row, token);
        let rho = (logp - trajectory.behavior_logps[position]).exp();
        if !rho.is_finite() || rho <= 0.0 {
            return Err(GroupError::NonFiniteRatio {
                prompt_id: trajectory.prompt_id,
                position,
            });
        }
        ratios.push(rho);
    }
    Ok(ratios)
}

/// Length-normalized sequence ratio `(prod rho_t)^(1/|y|)`, evaluated in
/// log space as `exp(mean log rho_t)` so long sequences cannot under- or
/// overflow.
pub fn sequence_ratio(ratios: &[f64]) -> Result<f64, GroupError> {
    Ok(mean_log(ratios)?.exp())
}

/// Population variance of token log-ratios around the sequence log-ratio:
/// `(1/|y|) sum_t (log rho_t - log s)^2`. Diagnoses how sequence-coherent
/// token-level gating currently is.
pub fn intra_sequence_dispersion(ratios: &[f64]) -> Result<f64, GroupError> {
    let log_s = mean_log(ratios)?;
    let n = ratios.len() as f64;
    Ok(ratios
        .iter()
        .map(|&r| {
            let d = r.ln() - log_s;
            d * d
        })
        .sum::<f64>()
        / n)
}

fn mean_log(ratios: &[f64]) -> Result<f64, GroupError> {
    if ratios.is_empty() {
        return Err(GroupError::EmptyRatios);
    }
    Ok(ratios.iter().map(|&r| r.ln()).sum::<f64>() / ratios.len() as f64)
}
