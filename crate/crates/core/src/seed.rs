//! Seeding of every stochastic source from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Independent random streams derived from a single run seed.
///
/// Weight initialization, epoch shuffling, dropout masks and synthetic data each draw
/// from their own stream, so changing one consumer never perturbs another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    seed: u64,
}

#[derive(Clone, Copy, Debug)]
enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Synthetic = 4,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(self) -> u64 {
        self.seed
    }

    fn stream(self, stream: Stream) -> SeededRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }

    pub fn init_rng(self) -> SeededRng {
        self.stream(Stream::Init)
    }

    pub fn shuffle_rng(self) -> SeededRng {
        self.stream(Stream::Shuffle)
    }

    pub fn dropout_rng(self) -> SeededRng {
        self.stream(Stream::Dropout)
    }

    pub fn synthetic_rng(self) -> SeededRng {
        self.stream(Stream::Synthetic)
    }
}
