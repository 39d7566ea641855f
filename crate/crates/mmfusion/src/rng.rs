//! Deterministic random number generation.
//!
//! Every stochastic choice in the crate (weight init, shuffling, dropout
//! masks, data synthesis) draws from a named stream owned by an
//! [`RngRegistry`]. Streams are derived from a single master seed plus the
//! stream name, so adding a new consumer never shifts the draws of existing
//! ones, and the full generator state can be captured into a checkpoint and
//! restored bit-for-bit.

use std::collections::BTreeMap;

/// 64-bit FNV-1a over a byte string. Used to fold stream names into seeds;
/// stable across platforms and runs, unlike the std hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// xoshiro256** generator. Small, fast, and with a state that serializes to
/// four u64 words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for w in &mut s {
            *w = splitmix64(&mut sm);
        }
        // all-zero state is the one invalid state; splitmix64 of any seed
        // cannot produce four zero words in a row, but guard anyway
        if s == [0; 4] {
            s[0] = 1;
        }
        Rng { s }
    }

    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state(s: [u64; 4]) -> Self {
        Rng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Widening-multiply reduction; the bias for
    /// desk-scale n is far below anything observable.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Stateless between calls so the
    /// serialized state stays just the four words.
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Registry of named deterministic streams, all derived from one master seed.
#[derive(Debug, Clone)]
pub struct RngRegistry {
    master: u64,
    streams: BTreeMap<String, Rng>,
}

impl RngRegistry {
    pub fn new(master: u64) -> Self {
        RngRegistry {
            master,
            streams: BTreeMap::new(),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// The stream for `name`, created on first use.
    pub fn stream(&mut self, name: &str) -> &mut Rng {
        let master = self.master;
        self.streams
            .entry(name.to_string())
            .or_insert_with(|| Rng::seeded(master ^ fnv1a(name.as_bytes())))
    }

    /// Snapshot of every stream's state, in name order.
    pub fn snapshot(&self) -> Vec<(String, [u64; 4])> {
        self.streams
            .iter()
            .map(|(k, v)| (k.clone(), v.state()))
            .collect()
    }

    pub fn restore(&mut self, states: &[(String, [u64; 4])]) {
        self.streams.clear();
        for (name, s) in states {
            self.streams.insert(name.clone(), Rng::from_state(*s));
        }
    }
}
