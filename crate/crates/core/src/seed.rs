//! Seed derivation.
//!
//! A run has one master seed. Every random decision (label shuffles,
//! misleading permutations, synthetic schedules) draws from a stream keyed by
//! the interaction id, the trial index and a purpose tag, so interactions never
//! share randomness and reordering a batch changes nothing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed scoped to one interaction within a run.
pub fn interaction_seed(master_seed: u64, interaction_id: &str) -> u64 {
    digest_u64(&[
        b"interaction",
        &master_seed.to_le_bytes(),
        interaction_id.as_bytes(),
    ])
}

/// Deterministic generator for one (trial, purpose) stream of an interaction.
pub fn trial_rng(seed: u64, interaction_id: &str, trial_index: usize, purpose: &str) -> ChaCha8Rng {
    let s = digest_u64(&[
        purpose.as_bytes(),
        &seed.to_le_bytes(),
        interaction_id.as_bytes(),
        &(trial_index as u64).to_le_bytes(),
    ]);
    ChaCha8Rng::seed_from_u64(s)
}

/// Short stable hex fingerprint of arbitrary text.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        // length-prefix so ("ab","c") and ("a","bc") differ
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}
