//! Synthetic verifiable-reward tasks.
//!
//! Each task draws a random prompt over the payload alphabet and scores a
//! response against a unique target sequence with a deterministic checker.
//! The vocab counts `V - 1` payload tokens plus EOS at index `V - 1`; the
//! prompt bucket the policy conditions on is the task-relevant feature
//! (the answer token) reduced mod the bucket count.

use alloc::vec::Vec;

use crate::rng::DetRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Echo the last prompt token: one-step credit assignment.
    CopyLast,
    /// Emit the prompt-token sum mod the payload count: prompt aggregation.
    SumMod,
    /// Repeat the last prompt token `n` times: multi-token sequence credit.
    RepeatN,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::CopyLast => "copy_last",
            TaskKind::SumMod => "sum_mod",
            TaskKind::RepeatN => "repeat_n",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// 1 iff the response equals the target sequence exactly, else 0.
    Binary,
    /// Fraction of positions matching the target; length mismatches are
    /// scored against the longer length.
    Fractional,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskError {
    BadSpec { reason: &'static str },
}

impl core::fmt::Display for TaskError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TaskError::BadSpec { reason } => write!(f, "invalid task spec: {reason}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TaskError {}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Total vocab size including EOS; payload tokens are `0 .. V-1`.
    pub vocab_size: usize,
    pub prompt_len: usize,
    /// Rollout cap on the response length.
    pub max_len: usize,
    pub reward_mode: RewardMode,
    /// Repetition count for `repeat_n`; ignored by the other kinds.
    pub repeat_count: usize,
}

impl TaskSpec {
    pub fn new(
        kind: TaskKind,
        vocab_size: usize,
        prompt_len: usize,
        max_len: usize,
        reward_mode: RewardMode,
        repeat_count: usize,
    ) -> Result<Self, TaskError> {
        if vocab_size < 3 {
            return Err(TaskError::BadSpec {
                reason: "vocab_size must be >= 3",
            });
        }
        if prompt_len < 1 {
            return Err(TaskError::BadSpec {
                reason: "prompt_len must be >= 1",
            });
        }
        if max_len < 1 {
            return Err(TaskError::BadSpec {
                reason: "max_len must be >= 1",
            });
        }
        if kind == TaskKind::RepeatN && repeat_count < 1 {
            return Err(TaskError::BadSpec {
                reason: "repeat_n needs n >= 1",
            });
        }
        Ok(Self {
            kind,
            vocab_size,
            prompt_len,
            max_len,
            reward_mode,
            repeat_count,
        })
    }

    /// Number of payload tokens (vocab minus EOS).
    pub fn payload_count(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn eos_token(&self) -> usize {
        self.vocab_size - 1
    }

    /// Task-relevant prompt feature; also the answer token.
    pub fn target_feature(&self, prompt: &[usize]) -> usize {
        match self.kind {
            TaskKind::CopyLast | TaskKind::RepeatN => *prompt.last().expect("non-empty prompt"),
            TaskKind::SumMod => prompt.iter().sum::<usize>() % self.payload_count(),
        }
    }

    /// The unique reward-1 response: answer token(s) followed by EOS.
    pub fn target_sequence(&self, prompt: &[usize]) -> Vec<usize> {
        let feature = self.target_feature(prompt);
        let repeats = match self.kind {
            TaskKind::RepeatN => self.repeat_count,
            _ => 1,
        };
        let mut target = alloc::vec![feature; repeats];
        target.push(self.eos_token());
        target
    }
}

/// Draw a uniform random payload prompt and its bucket: the target feature
/// hashed (reduced) into `[0, num_buckets)`.
pub fn make_prompt(spec: &TaskSpec, num_buckets: usize, rng: &mut DetRng) -> (Vec<usize>, usize) {
    debug_assert!(num_buckets >= 1);
    let prompt: Vec<usize> = (0..spec.prompt_len)
        .map(|_| rng.next_below(spec.payload_count()))
        .collect();
    let bucket = spec.target_feature(&prompt) % num_buckets;
    (prompt, bucket)
}

/// Deterministic verifier reward in `[0, 1]`.
pub fn reward(spec: &TaskSpec, prompt: &[usize], response: &[usize]) -> f64 {
    debug_assert!(!response.is_empty());
    let target = spec.target_sequence(prompt);
    match spec.reward_mode {
        RewardMode::Binary => {
            if response == target.as_slice() {
                1.0
            } else {
                0.0
            }
        }
        RewardMode::Fractional => {
            let matches = response
                .iter()
                .zip(target.iter())
                .filter(|(a, b)| a == b)
                .count();
            matches as f64 / response.len().max(target.len()) as f64
        }
    }
}
