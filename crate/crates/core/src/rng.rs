//! Deterministic, splittable random streams.
//!
//! A stream is addressed by `(master_seed, label, index)`. The triple is mixed
//! into a 64-bit key which seeds a ChaCha8 generator, so the draws of a stream
//! never depend on which thread consumes it or in which order sibling streams
//! are consumed. Parallel code must give every task its own stream (usually via
//! [`RngStream::child`]) and never share one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub label: String,
    pub index: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl RngStream {
    pub fn new(master_seed: u64, label: impl Into<String>, index: u64) -> Self {
        Self {
            master_seed,
            label: label.into(),
            index,
        }
    }

    /// Stable 64-bit key of the stream address.
    pub fn key(&self) -> u64 {
        let seeded = splitmix64(self.master_seed);
        let labelled = splitmix64(seeded ^ fnv1a(self.label.as_bytes()));
        splitmix64(labelled ^ splitmix64(self.index.wrapping_add(0x5851_F42D_4C95_7F2D)))
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut state = self.key();
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Derives an independent sub-stream keyed by this stream.
    pub fn child(&self, label: impl Into<String>, index: u64) -> RngStream {
        RngStream::new(self.key(), label, index)
    }
}

/// Free-function form of [`RngStream::new`].
pub fn make_stream(master_seed: u64, label: &str, index: u64) -> RngStream {
    RngStream::new(master_seed, label, index)
}
