//! Deterministic derivation of independent RNG sub-seeds.
//!
//! Every stochastic component (signal arrivals, dark arrivals, afterpulse
//! counts and delays, repetitions, cycles, phases) gets its own seed derived
//! from one master seed, so parallel execution order cannot change results.

/// splitmix64 finalizer; full-period mixing of a 64-bit state.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a master seed and a salt identifying the consumer.
pub fn derive(master: u64, salt: u64) -> u64 {
    mix(mix(master) ^ mix(salt))
}

// Salt namespaces. The high byte separates consumer classes so indexed salts
// (repetition, cycle) can never collide with the fixed ones.
pub(crate) const SIGNAL: u64 = 0x01;
pub(crate) const DARK: u64 = 0x02;
pub(crate) const AP_COUNT: u64 = 0x03;
pub(crate) const AP_DELAY: u64 = 0x04;
pub(crate) const WALK: u64 = 0x05;
pub(crate) const BINS: u64 = 0x06;

pub(crate) fn repetition(index: u64) -> u64 {
    0x1000_0000_0000_0000 | index
}

pub(crate) fn cycle_phase(cycle_index: u64, phase: u64) -> u64 {
    0x2000_0000_0000_0000 | (cycle_index << 2) | phase
}
