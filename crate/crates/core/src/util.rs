//! Digest helpers shared by id assignment, seed derivation, and cache keys.

use sha2::{Digest, Sha256};

use crate::corpus::hex_digest;

/// Hex SHA-256 over the given parts with a field separator.
pub fn digest_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0x1f]);
    }
    hex_digest(hasher)
}

/// First 16 hex chars of [`digest_hex`]; used for record ids.
pub fn short_digest(parts: &[&str]) -> String {
    digest_hex(parts)[..16].to_string()
}

/// Derive a child RNG seed from a base seed and a label, so sibling shuffles
/// (per level, per record) are independent but reproducible.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}
