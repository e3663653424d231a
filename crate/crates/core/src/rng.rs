//! Seeded, stream-separated randomness.
//!
//! Every random decision in a run is addressed by `(master seed, stream id,
//! draw index)`. The triple is hashed into a ChaCha8 key, so a draw never
//! depends on how many other draws happened before it, on which worker made
//! it, or on which other streams exist.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named decision sites used by the pipelines.
pub mod streams {
    pub const BRANCH: &str = "branch";
    pub const BAD_PROMPT: &str = "bad-prompt";
    pub const CAPTION: &str = "caption";
    pub const CORRUPTION: &str = "corruption";
    pub const DESCRIBE: &str = "describe";
    pub const SUBSAMPLE: &str = "subsample";
    pub const GEN_SEED: &str = "gen-seed";
}

/// One independent random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeededRng {
    seed: u64,
    stream: String,
}

impl SeededRng {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        Self {
            seed,
            stream: stream.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// A fresh generator for draw number `index` of this stream.
    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"stic-rng-v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.stream.len() as u64).to_le_bytes());
        hasher.update(self.stream.as_bytes());
        hasher.update(index.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(key)
    }

    /// Uniform draw in `[0, 1)` for `index`.
    pub fn unit(&self, index: u64) -> f64 {
        self.at(index).random::<f64>()
    }

    /// Uniform index in `0..n` for `index`. `n` must be positive.
    pub fn below(&self, index: u64, n: usize) -> usize {
        assert!(n > 0, "cannot draw from an empty range");
        self.at(index).random_range(0..n)
    }

    pub fn u64(&self, index: u64) -> u64 {
        self.at(index).random::<u64>()
    }
}
