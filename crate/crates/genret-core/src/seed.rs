use core::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a run seed with a string key, e.g. a doc id, so per-item streams do
/// not depend on iteration order.
pub fn derive(seed: u64, key: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(key.as_bytes());
    h.finish()
}
