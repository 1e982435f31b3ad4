//! Named random substreams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const ENCODER_INIT: &str = "encoder-init";
pub const SHUFFLE: &str = "shuffle";
pub const KMEANS: &str = "kmeans";
pub const SYNTH: &str = "synth";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the substream `name` under `master`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(name)))
}

/// Seed for item `index` of the substream `name` (e.g. one synthetic patient).
pub fn derive_indexed_seed(master: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, name) ^ splitmix64(index.wrapping_add(1)))
}

pub fn substream(master: u64, name: &str) -> StageRng {
    StageRng::seed_from_u64(derive_seed(master, name))
}

pub fn indexed_substream(master: u64, name: &str, index: u64) -> StageRng {
    StageRng::seed_from_u64(derive_indexed_seed(master, name, index))
}
