//! Strict JSON experiment configuration.
//!
//! Unknown keys are rejected everywhere. Most fields have documented
//! defaults; `task.kind`, `objective`, `train.learning_rate` and
//! `train.total_updates` are always required, and when a `gate` section is
//! present all four of its keys must be given. The resolved configuration
//! (defaults materialized) can be echoed back to JSON and re-parsing that
//! echo reproduces it exactly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use policyopt_core::gates::GateConfig;
use policyopt_core::objectives::ObjectiveKind;
use policyopt_core::tasks::{RewardMode, TaskKind, TaskSpec};
use policyopt_core::trainer::{AdamParams, OptimizerKind, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    task: TaskSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicySection>,
    objective: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gate: Option<GateSection>,
    train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    kind: String,
    #[serde(default)]
    vocab_size: Option<usize>,
    #[serde(default)]
    prompt_len: Option<usize>,
    #[serde(default)]
    max_len: Option<usize>,
    #[serde(default)]
    reward_mode: Option<String>,
    #[serde(default)]
    n: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    prompt_buckets: Option<usize>,
}

/// All four keys are required whenever the section is present.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateSection {
    tau_pos: f64,
    tau_neg: f64,
    eps_low: f64,
    eps_high: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(rename = "G", default)]
    group_size: Option<usize>,
    #[serde(rename = "B", default)]
    prompts_per_rollout: Option<usize>,
    #[serde(rename = "E", default)]
    epochs_per_rollout: Option<usize>,
    #[serde(rename = "M", default)]
    minibatches_per_epoch: Option<usize>,
    #[serde(default)]
    optimizer: Option<String>,
    learning_rate: f64,
    total_updates: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    advantage_eps: Option<f64>,
}

/// Fully materialized configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
}

pub fn parse_objective(name: &str) -> Result<ObjectiveKind, CliError> {
    ObjectiveKind::parse(name).ok_or_else(|| {
        let valid: Vec<&str> = ObjectiveKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Validation(format!(
            "unknown objective \"{name}\"; valid kinds: {}",
            valid.join(", ")
        ))
    })
}

fn parse_task_kind(name: &str) -> Result<TaskKind, CliError> {
    match name {
        "copy_last" => Ok(TaskKind::CopyLast),
        "sum_mod" => Ok(TaskKind::SumMod),
        "repeat_n" => Ok(TaskKind::RepeatN),
        other => Err(CliError::Validation(format!(
            "unknown task kind \"{other}\"; valid kinds: copy_last, sum_mod, repeat_n"
        ))),
    }
}

fn parse_reward_mode(name: &str) -> Result<RewardMode, CliError> {
    match name {
        "binary" => Ok(RewardMode::Binary),
        "fractional" => Ok(RewardMode::Fractional),
        other => Err(CliError::Validation(format!(
            "unknown reward_mode \"{other}\"; valid modes: binary, fractional"
        ))),
    }
}

fn parse_optimizer(name: &str) -> Result<OptimizerKind, CliError> {
    OptimizerKind::parse(name).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown optimizer \"{name}\"; valid optimizers: sgd, adam"
        ))
    })
}

/// Parse and resolve a configuration document.
pub fn parse_config(json: &str) -> Result<ResolvedConfig, CliError> {
    let file: ConfigFile = serde_json::from_str(json)
        .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
    resolve(file)
}

/// Load, parse and resolve a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<ResolvedConfig, CliError> {
    let json = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&json)
}

fn resolve(file: ConfigFile) -> Result<ResolvedConfig, CliError> {
    let kind = parse_task_kind(&file.task.kind)?;
    let vocab_size = file.task.vocab_size.unwrap_or(8);
    let task = TaskSpec::new(
        kind,
        vocab_size,
        file.task.prompt_len.unwrap_or(2),
        file.task.max_len.unwrap_or(4),
        parse_reward_mode(file.task.reward_mode.as_deref().unwrap_or("binary"))?,
        file.task.n.unwrap_or(3),
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;

    let policy = file.policy.unwrap_or_default();
    let context_order = policy.k.unwrap_or(1);
    // Default bucket count: one per payload token, so the bucket identifies
    // the answer.
    let prompt_buckets = policy.prompt_buckets.unwrap_or(task.payload_count());

    let gate = match file.gate {
        None => GateConfig::default_params(),
        Some(g) => GateConfig::new(g.tau_pos, g.tau_neg, g.eps_low, g.eps_high)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };

    let objective = parse_objective(&file.objective)?;
    let optimizer = parse_optimizer(file.train.optimizer.as_deref().unwrap_or("adam"))?;

    let train = TrainConfig {
        task,
        objective,
        gate,
        context_order,
        prompt_buckets,
        group_size: file.train.group_size.unwrap_or(8),
        prompts_per_rollout: file.train.prompts_per_rollout.unwrap_or(16),
        epochs_per_rollout: file.train.epochs_per_rollout.unwrap_or(2),
        minibatches_per_epoch: file.train.minibatches_per_epoch.unwrap_or(2),
        optimizer,
        learning_rate: file.train.learning_rate,
        adam: AdamParams::default(),
        total_updates: file.train.total_updates,
        seed: file.train.seed.unwrap_or(0),
        advantage_eps: file.train.advantage_eps.unwrap_or(1e-8),
    };
    train
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    Ok(ResolvedConfig {
        train,
        output_dir: file.output_dir.map(PathBuf::from),
    })
}

/// Serialize the resolved configuration as a full JSON document with every
/// default materialized. Re-parsing the echo reproduces the same resolution.
pub fn echo_config(cfg: &ResolvedConfig) -> String {
    let t = &cfg.train;
    let file = ConfigFile {
        task: TaskSection {
            kind: t.task.kind.name().to_string(),
            vocab_size: Some(t.task.vocab_size),
            prompt_len: Some(t.task.prompt_len),
            max_len: Some(t.task.max_len),
            reward_mode: Some(
                match t.task.reward_mode {
                    RewardMode::Binary => "binary",
                    RewardMode::Fractional => "fractional",
                }
                .to_string(),
            ),
            n: Some(t.task.repeat_count),
        },
        policy: Some(PolicySection {
            k: Some(t.context_order),
            prompt_buckets: Some(t.prompt_buckets),
        }),
        objective: t.objective.name().to_string(),
        gate: Some(GateSection {
            tau_pos: t.gate.tau_pos,
            tau_neg: t.gate.tau_neg,
            eps_low: t.gate.eps_low,
            eps_high: t.gate.eps_high,
        }),
        train: TrainSection {
            group_size: Some(t.group_size),
            prompts_per_rollout: Some(t.prompts_per_rollout),
            epochs_per_rollout: Some(t.epochs_per_rollout),
            minibatches_per_epoch: Some(t.minibatches_per_epoch),
            optimizer: Some(t.optimizer.name().to_string()),
            learning_rate: t.learning_rate,
            total_updates: t.total_updates,
            seed: Some(t.seed),
            advantage_eps: Some(t.advantage_eps),
        },
        output_dir: cfg
            .output_dir
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned()),
    };
    let mut json = serde_json::to_string_pretty(&file).expect("config serializes");
    json.push('\n');
    json
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": {"kind": "copy_last"},
        "objective": "sspo",
        "train": {"learning_rate": 0.05, "total_updates": 10}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.train.task.vocab_size, 8);
        assert_eq!(cfg.train.prompt_buckets, 7);
        assert_eq!(cfg.train.group_size, 8);
        assert_eq!(cfg.train.prompts_per_rollout, 16);
        assert_eq!(cfg.train.epochs_per_rollout, 2);
        assert_eq!(cfg.train.minibatches_per_epoch, 2);
        assert_eq!(cfg.train.gate.tau_pos, 1.0);
        assert_eq!(cfg.train.gate.tau_neg, 2.0);
        assert_eq!(cfg.train.gate.eps_low, 0.2);
        assert_eq!(cfg.train.gate.eps_high, 0.2);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.train.seed, 0);
        assert!(cfg.output_dir.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{
            "task": {"kind": "copy_last"},
            "objective": "sspo",
            "train": {"learning_rate": 0.05, "total_updates": 10},
            "extra": 1
        }"#;
        let err = parse_config(bad).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let bad_nested = r#"{
            "task": {"kind": "copy_last", "bogus": 2},
            "objective": "sspo",
            "train": {"learning_rate": 0.05, "total_updates": 10}
        }"#;
        assert!(parse_config(bad_nested).is_err());
    }

    #[test]
    fn partial_gate_section_names_missing_key() {
        let bad = r#"{
            "task": {"kind": "copy_last"},
            "objective": "sspo",
            "gate": {"tau_pos": 1.0, "eps_low": 0.2, "eps_high": 0.2},
            "train": {"learning_rate": 0.05, "total_updates": 10}
        }"#;
        let err = parse_config(bad).unwrap_err();
        assert!(err.to_string().contains("tau_neg"), "{err}");
    }

    #[test]
    fn unknown_objective_lists_valid_kinds() {
        let bad = MINIMAL.replace("sspo", "tempo");
        let err = parse_config(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tempo") && msg.contains("grpo") && msg.contains("sspo"));
    }

    #[test]
    fn inverted_temperatures_rejected() {
        let bad = r#"{
            "task": {"kind": "copy_last"},
            "objective": "sspo",
            "gate": {"tau_pos": 3.0, "tau_neg": 1.0, "eps_low": 0.2, "eps_high": 0.2},
            "train": {"learning_rate": 0.05, "total_updates": 10}
        }"#;
        let err = parse_config(bad).unwrap_err();
        assert!(err.to_string().contains("tau_neg"), "{err}");
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let cfg = parse_config(MINIMAL).unwrap();
        let echo = echo_config(&cfg);
        let again = parse_config(&echo).unwrap();
        assert_eq!(cfg, again);
        // And the echo of the echo is byte-identical.
        assert_eq!(echo, echo_config(&again));
    }

    #[test]
    fn indivisible_minibatches_rejected() {
        let bad = r#"{
            "task": {"kind": "copy_last"},
            "objective": "grpo",
            "train": {"learning_rate": 0.05, "total_updates": 10, "B": 5, "M": 2}
        }"#;
        let err = parse_config(bad).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }
}
