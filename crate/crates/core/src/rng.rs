//! Seed derivation. Each consumer of randomness gets its own ChaCha stream so that
//! changing one (e.g. batch order) never perturbs another (e.g. initialization).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Shuffle,
    TrainNoise,
    EvalNoise,
    MultiMnist,
    DigitSampler,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x1a2b_3c4d,
            Purpose::Shuffle => 0x5e6f_7081,
            Purpose::TrainNoise => 0x92a3_b4c5,
            Purpose::EvalNoise => 0xd6e7_f809,
            Purpose::MultiMnist => 0x1b2c_3d4e,
            Purpose::DigitSampler => 0x5f60_7182,
            Purpose::Synthetic => 0x93a4_b5c6,
        }
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `(seed, purpose, index)`; `index` selects a ChaCha stream.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(purpose.tag())));
    rng.set_stream(index);
    rng
}
