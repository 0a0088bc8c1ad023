//! Tabular order-k autoregressive softmax policy.
//!
//! The policy conditions on a prompt bucket plus the last `k` response
//! tokens (BOS-padded with token 0), giving `P * V^k` states with one logit
//! row of width `V` each. Token `V - 1` is EOS. The table is dense `f64`,
//! so log-probabilities, entropies and score-function gradients are exact
//! and cheap to cross-check against finite differences.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::group::Trajectory;
use crate::rng::DetRng;

/// Hard cap on the logit table size; configs beyond this are rejected.
const MAX_TABLE_ENTRIES: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyError {
    /// Token outside `[0, V)`.
    BadToken { token: usize, vocab_size: usize },
    /// Prompt bucket outside `[0, P)`.
    BadBucket { bucket: usize, buckets: usize },
    /// Context window length differs from the configured order.
    BadContextLen { got: usize, expected: usize },
    /// Shape parameters out of range or table too large.
    BadShape {
        vocab_size: usize,
        context_order: usize,
        prompt_buckets: usize,
    },
    /// Logit vector length does not match `P * V^k * V`.
    BadTableLen { got: usize, expected: usize },
    /// A logit entry is NaN or infinite.
    NonFiniteLogit { index: usize },
}

impl core::fmt::Display for PolicyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PolicyError::BadToken { token, vocab_size } => {
                write!(f, "token {token} outside vocab of size {vocab_size}")
            }
            PolicyError::BadBucket { bucket, buckets } => {
                write!(f, "prompt bucket {bucket} outside [0, {buckets})")
            }
            PolicyError::BadContextLen { got, expected } => {
                write!(f, "context of length {got}, expected {expected}")
            }
            PolicyError::BadShape {
                vocab_size,
                context_order,
                prompt_buckets,
            } => write!(
                f,
                "invalid policy shape V={vocab_size} k={context_order} P={prompt_buckets}"
            ),
            PolicyError::BadTableLen { got, expected } => {
                write!(f, "logit table of length {got}, expected {expected}")
            }
            PolicyError::NonFiniteLogit { index } => {
                write!(f, "non-finite logit at flat index {index}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PolicyError {}

/// Conditioning state: prompt bucket plus the last `k` tokens, oldest first.
///
/// Positions before the start of the response are BOS-padded; BOS reuses
/// token index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextState {
    pub prompt_bucket: usize,
    pub last_k: Vec<usize>,
}

impl ContextState {
    /// Initial state for a response: all-BOS window.
    pub fn start(prompt_bucket: usize, context_order: usize) -> Self {
        Self {
            prompt_bucket,
            last_k: vec![0; context_order],
        }
    }

    /// Shift `token` into the window, dropping the oldest entry.
    pub fn push(&mut self, token: usize) {
        self.last_k.rotate_left(1);
        if let Some(last) = self.last_k.last_mut() {
            *last = token;
        }
    }
}

/// Dense logits of the tabular policy. Two instances realize the current
/// and the frozen behavior policy respectively.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    context_order: usize,
    prompt_buckets: usize,
    /// Row-major `[P * V^k, V]` table.
    pub logits: Vec<f64>,
}

impl PolicyParams {
    /// Zero-initialized (uniform) policy.
    pub fn zeros(
        vocab_size: usize,
        context_order: usize,
        prompt_buckets: usize,
    ) -> Result<Self, PolicyError> {
        let len = table_len(vocab_size, context_order, prompt_buckets)?;
        Ok(Self {
            vocab_size,
            context_order,
            prompt_buckets,
            logits: vec![0.0; len],
        })
    }

    /// Wrap an existing logit table, validating shape and finiteness.
    pub fn from_logits(
        vocab_size: usize,
        context_order: usize,
        prompt_buckets: usize,
        logits: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        let len = table_len(vocab_size, context_order, prompt_buckets)?;
        if logits.len() != len {
            return Err(PolicyError::BadTableLen {
                got: logits.len(),
                expected: len,
            });
        }
        if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
            return Err(PolicyError::NonFiniteLogit { index });
        }
        Ok(Self {
            vocab_size,
            context_order,
            prompt_buckets,
            logits,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn prompt_buckets(&self) -> usize {
        self.prompt_buckets
    }

    /// EOS is the last vocab index.
    pub fn eos_token(&self) -> usize {
        self.vocab_size - 1
    }

    /// Number of states (logit rows).
    pub fn num_states(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    /// Row index of a context state.
    ///
    /// `index = bucket * V^k + sum_j last_k[j] * V^(k-1-j)` with the oldest
    /// token first, so for `V = 10, k = 2` the window `[3, 7]` encodes 37.
    pub fn state_index(&self, state: &ContextState) -> Result<usize, PolicyError> {
        if state.prompt_bucket >= self.prompt_buckets {
            return Err(PolicyError::BadBucket {
                bucket: state.prompt_bucket,
                buckets: self.prompt_buckets,
            });
        }
        if state.last_k.len() != self.context_order {
            return Err(PolicyError::BadContextLen {
                got: state.last_k.len(),
                expected: self.context_order,
            });
        }
        let mut ctx = 0usize;
        for &tok in &state.last_k {
            if tok >= self.vocab_size {
                return Err(PolicyError::BadToken {
                    token: tok,
                    vocab_size: self.vocab_size,
                });
            }
            ctx = ctx * self.vocab_size + tok;
        }
        let ctx_space = self.num_states() / self.prompt_buckets;
        Ok(state.prompt_bucket * ctx_space + ctx)
    }

    #[inline]
    pub(crate) fn row(&self, state_index: usize) -> &[f64] {
        let off = state_index * self.vocab_size;
        &self.logits[off..off + self.vocab_size]
    }

    /// `log softmax(logits[state])[token]`, computed with max-subtraction.
    pub fn log_prob(&self, state: &ContextState, token: usize) -> Result<f64, PolicyError> {
        if token >= self.vocab_size {
            return Err(PolicyError::BadToken {
                token,
                vocab_size: self.vocab_size,
            });
        }
        let row = self.row(self.state_index(state)?);
        Ok(log_softmax_at(row, token))
    }

    /// Score-function gradient of `log_prob` w.r.t. the state's logit row:
    /// `one_hot(token) - softmax(row)`. All other rows have zero gradient,
    /// so only the affected row index and its `V` entries are returned.
    pub fn grad_log_prob(
        &self,
        state: &ContextState,
        token: usize,
    ) -> Result<(usize, Vec<f64>), PolicyError> {
        if token >= self.vocab_size {
            return Err(PolicyError::BadToken {
                token,
                vocab_size: self.vocab_size,
            });
        }
        let row_index = self.state_index(state)?;
        let mut grad = softmax(self.row(row_index));
        for g in grad.iter_mut() {
            *g = -*g;
        }
        grad[token] += 1.0;
        Ok((row_index, grad))
    }

    /// Softmax entropy of the state's row, in `[0, ln V]`.
    pub fn entropy(&self, state: &ContextState) -> Result<f64, PolicyError> {
        Ok(entropy_of_row(self.row(self.state_index(state)?)))
    }

    /// Ancestral sampling at temperature 1. Generation stops at EOS or after
    /// `max_len` tokens; the emitted EOS counts toward the length. Behavior
    /// log-probs are recorded from these parameters via `log_prob`, so
    /// recomputing them on an unchanged table reproduces them bit for bit.
    pub fn sample_response(
        &self,
        prompt_bucket: usize,
        prompt_tokens: &[usize],
        max_len: usize,
        rng: &mut DetRng,
    ) -> Result<Trajectory, PolicyError> {
        debug_assert!(max_len >= 1);
        let mut state = ContextState::start(prompt_bucket, self.context_order);
        let mut response = Vec::with_capacity(max_len);
        let mut logps = Vec::with_capacity(max_len);
        let eos = self.eos_token();
        for _ in 0..max_len {
            let row_index = self.state_index(&state)?;
            let probs = softmax(self.row(row_index));
            let token = sample_categorical(&probs, rng.next_f64());
            logps.push(log_softmax_at(self.row(row_index), token));
            response.push(token);
            if token == eos {
                break;
            }
            state.push(token);
        }
        Ok(Trajectory {
            prompt_id: prompt_bucket,
            prompt_tokens: prompt_tokens.to_vec(),
            response_tokens: response,
            behavior_logps: logps,
            reward: 0.0,
        })
    }

    /// Walk a recorded response, yielding `(state_row, token)` per position.
    /// This is the single context-reconstruction path shared by ratio
    /// computation, objective gradients and diagnostics.
    pub(crate) fn walk_response<'a>(
        &'a self,
        prompt_bucket: usize,
        response: &'a [usize],
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        let ctx_space = self.num_states() / self.prompt_buckets;
        let mut ctx = 0usize;
        let modulus = ctx_space;
        response.iter().map(move |&tok| {
            let row = prompt_bucket * ctx_space + ctx;
            ctx = (ctx * self.vocab_size + tok) % modulus;
            (row, tok)
        })
    }
}

/// Log-prob at a raw row index; hot path shared with ratio recomputation.
#[inline]
pub(crate) fn log_prob_at_row(params: &PolicyParams, row_index: usize, token: usize) -> f64 {
    log_softmax_at(params.row(row_index), token)
}

fn table_len(
    vocab_size: usize,
    context_order: usize,
    prompt_buckets: usize,
) -> Result<usize, PolicyError> {
    let bad = || PolicyError::BadShape {
        vocab_size,
        context_order,
        prompt_buckets,
    };
    if vocab_size < 2 || context_order < 1 || prompt_buckets < 1 {
        return Err(bad());
    }
    let mut states = prompt_buckets;
    for _ in 0..context_order {
        states = states.checked_mul(vocab_size).ok_or_else(bad)?;
    }
    let len = states.checked_mul(vocab_size).ok_or_else(bad)?;
    if len > MAX_TABLE_ENTRIES {
        return Err(bad());
    }
    Ok(len)
}

/// Stable log-softmax of one row entry.
fn log_softmax_at(row: &[f64], token: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row[token] - lse
}

/// Softmax of one row.
pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

pub(crate) fn entropy_of_row(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    let mut acc = 0.0;
    for &x in row {
        let logp = x - lse;
        let p = logp.exp();
        if p > 0.0 {
            acc -= p * logp;
        }
    }
    acc
}

/// Inverse-CDF draw from a probability vector; falls back to the last
/// entry if accumulated float dust leaves `u` above the total.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(bucket: usize, last_k: &[usize]) -> ContextState {
        ContextState {
            prompt_bucket: bucket,
            last_k: last_k.to_vec(),
        }
    }

    #[test]
    fn state_index_positional_encoding() {
        let p = PolicyParams::zeros(10, 2, 4).unwrap();
        assert_eq!(p.state_index(&ctx(0, &[0, 0])).unwrap(), 0);
        assert_eq!(p.state_index(&ctx(0, &[3, 7])).unwrap(), 37);
        assert_eq!(p.state_index(&ctx(2, &[3, 7])).unwrap(), 237);
    }

    #[test]
    fn state_index_rejects_out_of_range() {
        let p = PolicyParams::zeros(10, 2, 4).unwrap();
        assert!(matches!(
            p.state_index(&ctx(4, &[0, 0])),
            Err(PolicyError::BadBucket { .. })
        ));
        assert!(matches!(
            p.state_index(&ctx(0, &[10, 0])),
            Err(PolicyError::BadToken { .. })
        ));
        assert!(matches!(
            p.state_index(&ctx(0, &[0])),
            Err(PolicyError::BadContextLen { .. })
        ));
    }

    #[test]
    fn log_prob_uniform_row() {
        let p = PolicyParams::zeros(8, 1, 1).unwrap();
        let lp = p.log_prob(&ctx(0, &[0]), 3).unwrap();
        assert!((lp - (1.0f64 / 8.0).ln()).abs() < 1e-12, "{lp}");
        assert!((lp + 2.0794415416798357).abs() < 1e-9);
    }

    #[test]
    fn log_prob_hand_computed_row() {
        // Row [ln 3, 0, 0]: softmax = [0.6, 0.2, 0.2].
        let mut p = PolicyParams::zeros(3, 1, 1).unwrap();
        p.logits[0] = 3.0f64.ln();
        let lp = p.log_prob(&ctx(0, &[0]), 0).unwrap();
        assert!((lp - 0.6f64.ln()).abs() < 1e-12);
        assert!((lp + 0.5108256237659907).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalize_on_random_rows() {
        let mut rng = DetRng::new(5);
        for _ in 0..20 {
            let mut p = PolicyParams::zeros(6, 1, 2).unwrap();
            for x in p.logits.iter_mut() {
                *x = rng.next_range(-4.0, 4.0);
            }
            for bucket in 0..2 {
                for last in 0..6 {
                    let c = ctx(bucket, &[last]);
                    let total: f64 = (0..6).map(|t| p.log_prob(&c, t).unwrap().exp()).sum();
                    assert!((total - 1.0).abs() <= 1e-12, "total {total}");
                }
            }
        }
    }

    #[test]
    fn grad_log_prob_uniform_row() {
        let p = PolicyParams::zeros(4, 1, 1).unwrap();
        let (row, g) = p.grad_log_prob(&ctx(0, &[0]), 2).unwrap();
        assert_eq!(row, 0);
        let expect = [-0.25, -0.25, 0.75, -0.25];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_log_prob_rows_sum_to_zero() {
        let mut rng = DetRng::new(9);
        let mut p = PolicyParams::zeros(5, 1, 3).unwrap();
        for x in p.logits.iter_mut() {
            *x = rng.next_range(-3.0, 3.0);
        }
        for bucket in 0..3 {
            for tok in 0..5 {
                let (_, g) = p.grad_log_prob(&ctx(bucket, &[1]), tok).unwrap();
                let sum: f64 = g.iter().sum();
                assert!(sum.abs() <= 1e-12, "sum {sum}");
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn grad_log_prob_matches_finite_differences() {
        let mut rng = DetRng::new(13);
        let mut p = PolicyParams::zeros(5, 1, 2).unwrap();
        for x in p.logits.iter_mut() {
            *x = rng.next_range(-2.0, 2.0);
        }
        let state = ctx(1, &[3]);
        let token = 2;
        let (row, analytic) = p.grad_log_prob(&state, token).unwrap();
        let h = 1e-5;
        for j in 0..5 {
            let flat = row * 5 + j;
            let mut plus = p.clone();
            plus.logits[flat] += h;
            let mut minus = p.clone();
            minus.logits[flat] -= h;
            let fd = (plus.log_prob(&state, token).unwrap()
                - minus.log_prob(&state, token).unwrap())
                / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(fd.abs()).max(1e-12);
            assert!(rel < 1e-6, "coord {j}: fd {fd} vs analytic {}", analytic[j]);
        }
    }

    #[test]
    fn entropy_limits_and_hand_value() {
        let p = PolicyParams::zeros(8, 1, 1).unwrap();
        let h = p.entropy(&ctx(0, &[0])).unwrap();
        assert!((h - 8.0f64.ln()).abs() < 1e-12);
        assert!((h - 2.0794415416798357).abs() < 1e-9);

        let mut sharp = PolicyParams::zeros(4, 1, 1).unwrap();
        sharp.logits[1] = 1e6;
        assert!(sharp.entropy(&ctx(0, &[0])).unwrap().abs() < 1e-9);

        let mut row3 = PolicyParams::zeros(3, 1, 1).unwrap();
        row3.logits[0] = 3.0f64.ln();
        let h3 = row3.entropy(&ctx(0, &[0])).unwrap();
        assert!((h3 - 0.9502705392332346).abs() < 1e-12, "{h3}");
    }

    #[test]
    fn sample_deterministic_policy_always_same_sequence() {
        // Huge logit on token 1, then EOS (= 3) after seeing 1.
        let mut p = PolicyParams::zeros(4, 1, 1).unwrap();
        p.logits[1] = 1e6; // row 0 (BOS context): emit 1
        p.logits[4 + 3] = 1e6; // row 1 (after token 1): emit EOS
        let mut rng = DetRng::new(0);
        for _ in 0..16 {
            let t = p.sample_response(0, &[0], 8, &mut rng).unwrap();
            assert_eq!(t.response_tokens, vec![1, 3]);
        }
    }

    #[test]
    fn sampled_logps_match_recomputation() {
        let mut rng = DetRng::new(21);
        let mut p = PolicyParams::zeros(5, 2, 2).unwrap();
        for x in p.logits.iter_mut() {
            *x = rng.next_range(-1.5, 1.5);
        }
        for i in 0..32 {
            let t = p.sample_response(i % 2, &[1, 2], 6, &mut rng).unwrap();
            let mut state = ContextState::start(t.prompt_id, 2);
            for (pos, &tok) in t.response_tokens.iter().enumerate() {
                let lp = p.log_prob(&state, tok).unwrap();
                assert!((lp - t.behavior_logps[pos]).abs() <= 1e-12);
                assert!(t.behavior_logps[pos] <= 0.0);
                state.push(tok);
            }
        }
    }

    #[test]
    fn walk_response_matches_context_state() {
        let p = PolicyParams::zeros(5, 2, 3).unwrap();
        let response = [1, 4, 2, 0, 3];
        let mut state = ContextState::start(2, 2);
        for (row, tok) in p.walk_response(2, &response) {
            assert_eq!(row, p.state_index(&state).unwrap());
            state.push(tok);
        }
        let toks: Vec<usize> = p.walk_response(2, &response).map(|(_, t)| t).collect();
        assert_eq!(toks, response.to_vec());
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        // 100k draws from a known 4-way softmax; 3-sigma binomial bounds.
        let mut p = PolicyParams::zeros(4, 1, 1).unwrap();
        p.logits[0] = 0.0;
        p.logits[1] = 1.0;
        p.logits[2] = -0.5;
        p.logits[3] = 0.3;
        let probs = softmax(p.row(0));
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        let mut rng = DetRng::new(123);
        for _ in 0..n {
            let t = p.sample_response(0, &[], 1, &mut rng).unwrap();
            counts[t.response_tokens[0]] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let expect = probs[i] * n as f64;
            let sigma = (n as f64 * probs[i] * (1.0 - probs[i])).sqrt();
            assert!(
                (c as f64 - expect).abs() <= 3.0 * sigma,
                "token {i}: count {c}, expect {expect:.1} +- {sigma:.1}"
            );
        }
    }

    #[test]
    fn shape_validation() {
        assert!(PolicyParams::zeros(1, 1, 1).is_err());
        assert!(PolicyParams::zeros(4, 0, 1).is_err());
        assert!(PolicyParams::zeros(4, 1, 0).is_err());
        assert!(PolicyParams::from_logits(3, 1, 1, vec![0.0; 8]).is_err());
        assert!(PolicyParams::from_logits(3, 1, 1, vec![f64::NAN; 9]).is_err());
        assert!(PolicyParams::from_logits(3, 1, 1, vec![0.0; 9]).is_ok());
    }
}
