//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, node, purpose)`
//! and derived with SplitMix64 finalizers, so a stream never depends on how
//! many other nodes or purposes exist. Streams are ChaCha8 generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Gradient = 1,
    Compression = 2,
    Data = 3,
    Init = 4,
    Certify = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 step applied to `z`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix(splitmix(splitmix(master) ^ purpose) ^ node)`.
pub fn derive_seed(master: u64, node: usize, purpose: Purpose) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (purpose as u64).wrapping_mul(GOLDEN));
    splitmix64(b ^ (node as u64))
}

pub fn stream(master: u64, node: usize, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, node, purpose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_node_count() {
        let mut a = stream(7, 3, Purpose::Gradient);
        let mut b = stream(7, 3, Purpose::Gradient);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        assert_eq!(xa, xb);
    }

    #[test]
    fn purposes_and_nodes_differ() {
        let s = derive_seed(0, 0, Purpose::Gradient);
        assert_ne!(s, derive_seed(0, 0, Purpose::Compression));
        assert_ne!(s, derive_seed(0, 1, Purpose::Gradient));
        assert_ne!(s, derive_seed(1, 0, Purpose::Gradient));
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
