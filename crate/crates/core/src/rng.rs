use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded random stream used throughout the crate.
pub type RandomStream = ChaCha8Rng;

/// Independent sub-stream of `seed` identified by `purpose`.
///
/// Every consumer of randomness gets its own stream so that adding draws in one
/// place never shifts the values seen by another.
pub fn stream(seed: u64, purpose: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Sub-stream identifiers.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PATH: u64 = 3;
    pub const SEARCH: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const RETRAIN: u64 = 7;
    pub const HEAD: u64 = 8;
    pub const SYNTH: u64 = 9;
}

/// Derives a fresh 64-bit seed from `rng` for a child stream.
pub fn fork(rng: &mut RandomStream, purpose: u64) -> RandomStream {
    use rand::Rng;
    stream(rng.random::<u64>(), purpose)
}

/// Deterministic seed for a job identified by `parts` under `seed`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
