//! Value-derived random streams.
//!
//! Every stream is a ChaCha8 keystream whose 256-bit key is the SHA-256 of
//! `(base_seed, label path, purpose, trial)`. Nothing is shared between
//! streams, so the order in which workers consume them cannot change any
//! draw.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Root seed plus the path of `(purpose, trial)` labels that led here.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub base_seed: u64,
    #[serde(default)]
    pub labels: Vec<(String, u64)>,
}

impl SeedSpec {
    pub fn new(base_seed: u64) -> Self {
        Self {
            base_seed,
            labels: Vec::new(),
        }
    }

    /// A child spec one label deeper; streams derived from it are disjoint
    /// from streams derived from `self`.
    pub fn split(&self, purpose: &str, trial: u64) -> SeedSpec {
        let mut labels = self.labels.clone();
        labels.push((purpose.to_owned(), trial));
        SeedSpec {
            base_seed: self.base_seed,
            labels,
        }
    }

    pub fn stream(&self, purpose: &str, trial: u64) -> RandomStream {
        derive_stream(self, purpose, trial)
    }

    fn key(&self, purpose: &str, trial: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"robustline.stream.v1");
        h.update(self.base_seed.to_le_bytes());
        let mut absorb = |tag: &str, idx: u64| {
            h.update((tag.len() as u64).to_le_bytes());
            h.update(tag.as_bytes());
            h.update(idx.to_le_bytes());
        };
        for (tag, idx) in &self.labels {
            absorb(tag, *idx);
        }
        absorb(purpose, trial);
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }
}

impl fmt::Display for SeedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base_seed)?;
        for (tag, idx) in &self.labels {
            write!(f, "/{tag}#{idx}")?;
        }
        Ok(())
    }
}

/// Derives the stream for `(seed, purpose, trial)`. Pure in its inputs.
pub fn derive_stream(seed: &SeedSpec, purpose: &str, trial: u64) -> RandomStream {
    RandomStream {
        id: format!("{seed}/{purpose}#{trial}"),
        rng: ChaCha8Rng::from_seed(seed.key(purpose, trial)),
    }
}

/// A deterministic random source tagged with the label path that made it.
#[derive(Clone)]
pub struct RandomStream {
    id: String,
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Label path, recorded as dataset provenance.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Splits off an independent child stream keyed by the next 256 bits of
    /// this one.
    pub fn fork(&mut self, purpose: &str) -> RandomStream {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        RandomStream {
            id: format!("{}>{purpose}", self.id),
            rng: ChaCha8Rng::from_seed(key),
        }
    }
}

impl fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomStream").field("id", &self.id).finish()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
