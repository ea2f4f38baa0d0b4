//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the experiment seed and
//! selected by a 64-bit stream id built from a domain tag and a replica index.
//! Distinct ids address disjoint keystreams, so results never depend on how
//! replicas are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Independent purposes that draw from the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    Sample = 0,
    Pilot = 1,
    Tuples = 2,
    Inner = 3,
    Oracle = 4,
}

const INDEX_BITS: u32 = 48;

/// Stream for `(seed, domain, index)`. `index` must be below 2^48.
pub fn stream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    debug_assert!(index < 1 << INDEX_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}

/// Sizes of `blocks` contiguous blocks covering `total` items.
pub fn block_sizes(total: usize, blocks: usize) -> Vec<usize> {
    let blocks = blocks.max(1).min(total.max(1));
    let base = total / blocks;
    let extra = total % blocks;
    (0..blocks).map(|b| base + usize::from(b < extra)).collect()
}

/// Runs `f(block_index, block_len, rng)` for every block in parallel and
/// concatenates the outputs in block order.
pub fn par_blocks<T, F>(seed: u64, domain: Domain, total: usize, blocks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, &mut StreamRng) -> Vec<T> + Sync,
{
    let sizes = block_sizes(total, blocks);
    let parts: Vec<Vec<T>> = sizes
        .par_iter()
        .enumerate()
        .map(|(b, &len)| {
            let mut rng = stream(seed, domain, b as u64);
            f(b, len, &mut rng)
        })
        .collect();
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend(p);
    }
    out
}
