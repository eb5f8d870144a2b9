//! Deterministic random substreams.
//!
//! Every consumer of randomness derives its own ChaCha8 generator from the
//! master seed and a short path of integers (for example
//! `[SYNTH_TRIAL, subject, day, trial]`). Streams never depend on the order
//! in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SYNTH_SUBJECT: u64 = 1;
pub const SYNTH_TRIAL: u64 = 2;
pub const SYNTH_LABELS: u64 = 3;
pub const MODEL_INIT: u64 = 10;
pub const PRETRAIN: u64 = 11;
pub const CLASSIFIER: u64 = 12;
pub const FOLDS: u64 = 20;
pub const FOLD_RUN: u64 = 21;
pub const REGION: u64 = 30;
pub const HOLDOUT: u64 = 31;

/// Derives a 64-bit seed from the master seed and a path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let bytes = digest(master, path);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

fn digest(master: u64, path: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fnirs-skill");
    h.update(master.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// Generator for `path` under `master`.
pub fn substream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(master, path))
}
