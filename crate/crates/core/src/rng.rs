//! Counter-keyed random streams.
//!
//! Every consumer derives its generator from `(seed, domain, counter)` so
//! results never depend on scheduling or batch partitioning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::real::Real;

pub const DOMAIN_INIT: u64 = 0x696e_6974;
pub const DOMAIN_TRAIN: u64 = 0x7472_6169;
pub const DOMAIN_SAMPLE: u64 = 0x7361_6d70;
pub const DOMAIN_PROBE: u64 = 0x7072_6f62;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, domain: u64, counter: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(counter);
    rng
}

pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let v: f64 = rng.sample(StandardNormal);
    T::of(v)
}

pub fn fill_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for v in out {
        *v = normal(rng);
    }
}
