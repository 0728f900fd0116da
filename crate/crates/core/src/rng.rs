//! Platform-independent 64-bit linear congruential generator.
//!
//! Used wherever a seeded choice must reproduce bit-for-bit across machines
//! (random FFN neuron selection, toy weight initialisation).

const MULTIPLIER: u64 = 6364136223846793005;
const INCREMENT: u64 = 1442695040888963407;

#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Advances the state and returns its high 32 bits.
    pub fn next_u32(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform integer in `[0, bound)` via multiply-shift. `bound` must be non-zero.
    pub fn below(&mut self, bound: u32) -> u32 {
        ((self.next_u32() as u64 * bound as u64) >> 32) as u32
    }

    /// Uniform float in `[0, 1)` with 24 bits of precision.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u32() >> 8) as f32 / (1u32 << 24) as f32
    }

    /// Uniform float in `[-scale, scale)`.
    pub fn symmetric(&mut self, scale: f32) -> f32 {
        (self.next_f32() * 2.0 - 1.0) * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_the_recurrence() {
        let mut rng = Lcg64::new(7);
        let s1 = 7u64.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        let s2 = s1.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        assert_eq!(rng.next_u32(), (s1 >> 32) as u32);
        assert_eq!(rng.next_u32(), (s2 >> 32) as u32);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Lcg64::new(1);
        for bound in 1..50 {
            assert!(rng.below(bound) < bound);
        }
    }
}
