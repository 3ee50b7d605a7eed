//! Deterministic RNG stream derivation.
//!
//! Every random draw in the simulator comes from a ChaCha stream keyed by a
//! `(seed, round, device, purpose)` tuple, so adding devices or reordering
//! calls never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tag separating independent streams that share (seed, round, device).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    BsGain = 0,
    EveGain = 1,
    Batch = 2,
    JammerSignal = 3,
    BsNoise = 4,
    EveNoise = 5,
    SchedulerDraw = 6,
    DataGen = 7,
}

/// RNG for the given stream key. Distinct keys give distinct ChaCha seeds.
pub fn stream_rng(seed: u64, round: u64, device: u64, purpose: Purpose) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&round.to_le_bytes());
    key[16..24].copy_from_slice(&device.to_le_bytes());
    key[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// SplitMix64 step, used to derive per-replicate seeds from a master seed.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream_rng(7, 3, 1, Purpose::BsGain).random();
        let b: f64 = stream_rng(7, 3, 1, Purpose::BsGain).random();
        let c: f64 = stream_rng(7, 3, 1, Purpose::EveGain).random();
        let d: f64 = stream_rng(7, 3, 2, Purpose::BsGain).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn split_seed_varies_with_index() {
        assert_ne!(split_seed(42, 0), split_seed(42, 1));
        assert_eq!(split_seed(42, 5), split_seed(42, 5));
    }
}
