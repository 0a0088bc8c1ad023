//! Gating and weighting functions applied to importance ratios.
//!
//! Four families live here: the advantage-aware hard clip, the sigmoid
//! soft gate and its derivative, the arctan-exp gate with its normalized
//! weight, and the log-space geometric aggregation of arctan gates over a
//! token sequence. The temperature is advantage-dependent: negative-advantage
//! tokens get the (larger) `tau_neg` so their influence decays faster.
//!
//! All functions are pure and stateless.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::group::GroupError;

#[derive(Clone, Debug, PartialEq)]
pub enum GateConfigError {
    TemperatureNotPositive {
        tau_pos: f64,
        tau_neg: f64,
    },
    /// `tau_neg < tau_pos` without the ablation override.
    InvertedTemperatures {
        tau_pos: f64,
        tau_neg: f64,
    },
    EpsLowOutOfRange(f64),
    EpsHighNotPositive(f64),
}

impl core::fmt::Display for GateConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GateConfigError::TemperatureNotPositive { tau_pos, tau_neg } => {
                write!(
                    f,
                    "temperatures must be positive, got tau_pos={tau_pos} tau_neg={tau_neg}"
                )
            }
            GateConfigError::InvertedTemperatures { tau_pos, tau_neg } => write!(
                f,
                "tau_neg ({tau_neg}) must be >= tau_pos ({tau_pos}); \
                 use allow_inverted for ablations"
            ),
            GateConfigError::EpsLowOutOfRange(e) => {
                write!(f, "eps_low must lie in (0, 1), got {e}")
            }
            GateConfigError::EpsHighNotPositive(e) => {
                write!(f, "eps_high must be positive, got {e}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GateConfigError {}

/// Temperatures and clip widths shared by all gate functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl GateConfig {
    /// Construct with full validation, including `tau_neg >= tau_pos`.
    pub fn new(
        tau_pos: f64,
        tau_neg: f64,
        eps_low: f64,
        eps_high: f64,
    ) -> Result<Self, GateConfigError> {
        let cfg = Self::allow_inverted(tau_pos, tau_neg, eps_low, eps_high)?;
        if tau_neg < tau_pos {
            return Err(GateConfigError::InvertedTemperatures { tau_pos, tau_neg });
        }
        Ok(cfg)
    }

    /// Ablation constructor: skips only the temperature-ordering check.
    pub fn allow_inverted(
        tau_pos: f64,
        tau_neg: f64,
        eps_low: f64,
        eps_high: f64,
    ) -> Result<Self, GateConfigError> {
        let tau_ok = |t: f64| t.is_finite() && t > 0.0;
        if !tau_ok(tau_pos) || !tau_ok(tau_neg) {
            return Err(GateConfigError::TemperatureNotPositive { tau_pos, tau_neg });
        }
        let eps_low_ok = eps_low > 0.0 && eps_low < 1.0;
        if !eps_low_ok {
            return Err(GateConfigError::EpsLowOutOfRange(eps_low));
        }
        // eps_high may be +inf to disable upper clipping; NaN is rejected.
        let eps_high_ok = eps_high > 0.0;
        if !eps_high_ok {
            return Err(GateConfigError::EpsHighNotPositive(eps_high));
        }
        Ok(Self {
            tau_pos,
            tau_neg,
            eps_low,
            eps_high,
        })
    }

    /// Conventional defaults: clip widths 0.2, temperatures 1 and 2.
    pub fn default_params() -> Self {
        Self {
            tau_pos: 1.0,
            tau_neg: 2.0,
            eps_low: 0.2,
            eps_high: 0.2,
        }
    }
}

/// Advantage-dependent temperature: `tau_pos` for positive advantages,
/// `tau_neg` otherwise (an advantage of exactly 0 takes the negative branch).
#[inline]
pub fn temperature(advantage: f64, cfg: &GateConfig) -> f64 {
    if advantage > 0.0 {
        cfg.tau_pos
    } else {
        cfg.tau_neg
    }
}

/// Advantage-aware hard clip: `min(rho, 1 + eps_high)` for positive
/// advantages, `max(rho, 1 - eps_low)` otherwise.
#[inline]
pub fn clip_gate(rho: f64, advantage: f64, cfg: &GateConfig) -> f64 {
    if advantage > 0.0 {
        rho.min(1.0 + cfg.eps_high)
    } else {
        rho.max(1.0 - cfg.eps_low)
    }
}

/// Whether the clip is active, i.e. the bound (not `rho`) is selected.
/// Exact equality with the bound counts as clipped, so the subgradient
/// there is zero.
#[inline]
pub fn clip_active(rho: f64, advantage: f64, cfg: &GateConfig) -> bool {
    if advantage > 0.0 {
        rho >= 1.0 + cfg.eps_high
    } else {
        rho <= 1.0 - cfg.eps_low
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid soft gate `sigma(tau (rho - 1)) * 4 / tau`.
#[inline]
pub fn soft_gate(rho: f64, advantage: f64, cfg: &GateConfig) -> f64 {
    let tau = temperature(advantage, cfg);
    sigmoid(tau * (rho - 1.0)) * 4.0 / tau
}

/// Derivative of [`soft_gate`] in `rho`: `4 g (1 - g)` with
/// `g = sigma(tau (rho - 1))`. Peaks at exactly 1 when `rho = 1` and decays
/// exponentially away from it, which is what induces the soft trust region.
#[inline]
pub fn soft_gate_derivative(rho: f64, advantage: f64, cfg: &GateConfig) -> f64 {
    let g = sigmoid(temperature(advantage, cfg) * (rho - 1.0));
    4.0 * g * (1.0 - g)
}

/// Arctan-exp gate `exp(arctan(tau (rho - 1)) / tau)`. Takes values in the
/// open interval `(exp(-pi/(2 tau)), exp(pi/(2 tau)))`, so it bounds the
/// per-sequence weight without any hard cutoff.
#[inline]
pub fn sspo_gate(rho: f64, advantage: f64, cfg: &GateConfig) -> f64 {
    let tau = temperature(advantage, cfg);
    ((tau * (rho - 1.0)).atan() / tau).exp()
}

/// Normalized weight of the arctan-exp gate.
///
/// Returns `(f'/f, rho * f'/f)`: the ratio of the gate's derivative to the
/// gate itself, `1 / (1 + (tau (rho - 1))^2)`, and the local token weight
/// that multiplies the policy score in the gradient. Both peak at unity at
/// `rho = 1`; the ratio decays quadratically, so the local weight still
/// vanishes as `rho` grows.
#[inline]
pub fn sspo_weight(rho: f64, advantage: f64, cfg: &GateConfig) -> (f64, f64) {
    let z = temperature(advantage, cfg) * (rho - 1.0);
    let f_ratio = 1.0 / (1.0 + z * z);
    (f_ratio, rho * f_ratio)
}

/// Log of the geometric mean of arctan-exp gates over a token sequence,
/// computed in closed form as `(1/(|y| tau)) sum_t arctan(tau (rho_t - 1))`.
/// The temperature factors out because the advantage, and hence `tau`, is
/// constant across a sequence.
pub fn geo_gate_log(ratios: &[f64], advantage: f64, cfg: &GateConfig) -> Result<f64, GroupError> {
    if ratios.is_empty() {
        return Err(GroupError::EmptyRatios);
    }
    let tau = temperature(advantage, cfg);
    let sum: f64 = ratios.iter().map(|&r| (tau * (r - 1.0)).atan()).sum();
    Ok(sum / (ratios.len() as f64 * tau))
}

/// Gate curves sampled at one ratio; one CSV row of the `gates` subcommand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateCurveSample {
    pub rho: f64,
    pub clip_gate_pos: f64,
    pub clip_gate_neg: f64,
    pub soft_gate: f64,
    pub soft_gate_derivative: f64,
    pub sspo_gate: f64,
    pub f_ratio: f64,
    pub local_weight: f64,
}

/// Evaluate every gate curve at `rho`. The clip columns cover both advantage
/// signs; the soft and arctan columns use the positive-advantage temperature.
pub fn sample_gate_curves(rho: f64, cfg: &GateConfig) -> GateCurveSample {
    let positive = 1.0;
    let (f_ratio, local_weight) = sspo_weight(rho, positive, cfg);
    GateCurveSample {
        rho,
        clip_gate_pos: clip_gate(rho, 1.0, cfg),
        clip_gate_neg: clip_gate(rho, -1.0, cfg),
        soft_gate: soft_gate(rho, positive, cfg),
        soft_gate_derivative: soft_gate_derivative(rho, positive, cfg),
        sspo_gate: sspo_gate(rho, positive, cfg),
        f_ratio,
        local_weight,
    }
}

/// Grid of `steps` strictly increasing ratios from `rho_min` to `rho_max`,
/// with the point nearest to 1 snapped to exactly 1 when 1 lies inside the
/// range. The `gates` subcommand samples its curves on this grid.
pub fn rho_grid(rho_min: f64, rho_max: f64, steps: usize) -> Vec<f64> {
    debug_assert!(rho_min > 0.0 && rho_max > rho_min && steps >= 2);
    let step = (rho_max - rho_min) / (steps - 1) as f64;
    let mut grid: Vec<f64> = (0..steps).map(|i| rho_min + step * i as f64).collect();
    grid[steps - 1] = rho_max;
    if rho_min <= 1.0 && 1.0 <= rho_max {
        let mut nearest = 0;
        for (i, &r) in grid.iter().enumerate() {
            if (r - 1.0).abs() < (grid[nearest] - 1.0).abs() {
                nearest = i;
            }
        }
        grid[nearest] = 1.0;
    }
    grid
}
