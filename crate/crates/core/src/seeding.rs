//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, stream, index...)`, so adding an
//! environment worker or another update never perturbs a stream that already exists.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named random streams used by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Act = 2,
    Shuffle = 3,
    EpisodeReset = 4,
    BcSample = 5,
    Attacker = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA5A5_A5A5)));
    }
    h
}

pub fn rng_for(master: u64, stream: Stream, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, indices))
}
