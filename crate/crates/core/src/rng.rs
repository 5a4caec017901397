//! Seed derivation. Every random stream in a run is a ChaCha8 generator keyed
//! by hashing the root seed with a label and an index, so any stream can be
//! rebuilt independently of the order in which others were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(root: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(root: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(root, label, index))
}

/// Derives a child root seed, for handing a sub-experiment its own namespace.
pub fn child_seed(root: u64, label: &str, index: u64) -> u64 {
    let s = derive_seed(root, label, index);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}
