//! Policy checkpoint file format.
//!
//! Little-endian binary layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "POLCKPT1"
//! 8       4     vocab_size      u32
//! 12      4     context_order   u32
//! 16      4     prompt_buckets  u32
//! 20      8*N   logits          f64, row-major [P * V^k, V]
//! ```
//!
//! Writing then reading reproduces the parameters bit for bit.

use std::fs;
use std::path::Path;

use policyopt_core::policy::PolicyParams;

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"POLCKPT1";

pub fn write_checkpoint(path: &Path, params: &PolicyParams) -> Result<(), CliError> {
    let mut bytes = Vec::with_capacity(20 + params.logits.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(params.vocab_size() as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.context_order() as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.prompt_buckets() as u32).to_le_bytes());
    for &x in &params.logits {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<PolicyParams, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: &str| CliError::Validation(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(
            "not a policy checkpoint (bad magic or truncated header)",
        ));
    }
    let u32_at =
        |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
    let vocab_size = u32_at(8);
    let context_order = u32_at(12);
    let prompt_buckets = u32_at(16);
    let body = &bytes[20..];
    if body.len() % 8 != 0 {
        return Err(bad("truncated logit table"));
    }
    let logits: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    PolicyParams::from_logits(vocab_size, context_order, prompt_buckets, logits)
        .map_err(|e| bad(&e.to_string()))
}
