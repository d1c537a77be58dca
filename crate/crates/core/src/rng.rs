//! Counter-based random streams.
//!
//! Every stream is keyed by `(seed, purpose, epoch, index)` and then produces
//! words by hashing an incrementing counter, so the values drawn for one
//! purpose never depend on how many values another purpose consumed.

use rand::RngCore;

/// What a random stream is used for. Distinct purposes never share words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Data = 4,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream keyed by `(seed, purpose, epoch, index)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        for part in [purpose as u64, epoch, index] {
            key = mix64(key ^ part.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
        }
        CounterRng { key, counter: 0 }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ self.counter.wrapping_mul(GOLDEN))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
