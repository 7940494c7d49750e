//! Seeded random substreams.
//!
//! Every random draw in a training run comes from a stream keyed by
//! `(master seed, purpose, client, round)`, so results do not depend on the
//! order in which clients are scheduled and adding a client leaves the
//! others' draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    EvalData = 2,
    Partition = 3,
    Init = 4,
    Batch = 5,
    Quantize = 6,
    LossEstimate = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one `(purpose, client, round)` cell.
pub fn substream(master: u64, purpose: Purpose, client: u64, round: u64) -> StreamRng {
    let mut state = master;
    let mut mix = splitmix64(&mut state);
    for word in [purpose as u64, client, round] {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(mix);
        mix = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    StreamRng::from_seed(seed)
}
