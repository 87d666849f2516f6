//! Seeded random streams. Every stochastic stage draws from its own key
//! derived from (seed, stage); per-ion work uses one ChaCha stream per ion so
//! results do not depend on how ions are distributed over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Stage identifiers mixed into the key.
pub mod stage {
    pub const SEED_CLOUD: u64 = 1;
    pub const MAXWELL_BOLTZMANN: u64 = 2;
    pub const METROPOLIS: u64 = 3;
    pub const LANGEVIN: u64 = 4;
    pub const COOLING: u64 = 5;
}

/// Single sequential stream for (seed, stage).
pub fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stage.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One independent stream per ion, all sharing the (seed, stage) key.
#[derive(Clone, Debug)]
pub struct IonStreams {
    seed: u64,
    stage: u64,
    streams: Vec<ChaCha8Rng>,
}

impl IonStreams {
    pub fn new(seed: u64, stage: u64, n: usize) -> Self {
        let base = stage_rng(seed, stage);
        let streams = (0..n)
            .map(|i| {
                let mut rng = base.clone();
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        IonStreams { seed, stage, streams }
    }

    /// Streams positioned at previously saved word offsets.
    pub fn restore(seed: u64, stage: u64, word_positions: &[u128]) -> Self {
        let mut s = Self::new(seed, stage, word_positions.len());
        for (rng, &pos) in s.streams.iter_mut().zip(word_positions) {
            rng.set_word_pos(pos);
        }
        s
    }

    pub fn word_positions(&self) -> Vec<u128> {
        self.streams.iter().map(|r| r.get_word_pos()).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn get_mut(&mut self, ion: usize) -> &mut ChaCha8Rng {
        &mut self.streams[ion]
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, ChaCha8Rng> {
        self.streams.iter_mut()
    }

    pub fn par_iter_mut(&mut self) -> rayon::slice::IterMut<'_, ChaCha8Rng> {
        self.streams.par_iter_mut()
    }
}
