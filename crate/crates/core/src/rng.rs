//! Deterministic random streams split from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

/// Independent concerns that draw randomness. Each gets its own ChaCha
/// stream so adding draws in one place never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Synth = 2,
    SkipGram = 3,
    Noise = 4,
    Walks = 5,
    EdgeDrop = 6,
    Seeds = 7,
    Candidates = 8,
    Probe = 9,
    Augment = 10,
}

pub fn stream(master: u64, which: Stream) -> StdRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(which as u64);
    rng
}

/// Separate streams for each of the two contrastive views.
pub fn view_stream(master: u64, which: Stream, view: usize) -> StdRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((which as u64) << 8) | (view as u64 + 1));
    rng
}
