//! Counter-based splittable random numbers.
//!
//! Every random draw in the engine is a pure function of a [`Key`]. The
//! generator is Threefry-2x64 with 20 rounds: a keyed bijection on 128-bit
//! counters. Deriving keys (`split`, `fold_in`) and drawing values
//! (`uniform`, `normal`, `random_index`) all evaluate the block function on
//! counters whose high word carries a domain tag, so the three kinds of
//! output never share counter space.
//!
//! Because the block function is a bijection for a fixed key, `split` and
//! `fold_in` are collision-free for distinct inputs under the same parent.

use crate::error::{Error, Result};

const ROTATIONS: [u32; 8] = [16, 42, 12, 31, 16, 32, 24, 21];
const PARITY: u64 = 0x1BD1_1BDA_A9FC_1A22;

const TAG_SPLIT: u64 = 0x7370_6c69_7400_0001;
const TAG_FOLD: u64 = 0x666f_6c64_0000_0002;
const TAG_BITS: u64 = 0x6269_7473_0000_0003;

/// Threefry-2x64-20 block function.
pub fn threefry2x64(key: [u64; 2], counter: [u64; 2]) -> [u64; 2] {
    let ks = [key[0], key[1], PARITY ^ key[0] ^ key[1]];
    let mut x0 = counter[0].wrapping_add(ks[0]);
    let mut x1 = counter[1].wrapping_add(ks[1]);
    for round in 0..20 {
        x0 = x0.wrapping_add(x1);
        x1 = x1.rotate_left(ROTATIONS[round % 8]);
        x1 ^= x0;
        if round % 4 == 3 {
            let s = (round + 1) / 4;
            x0 = x0.wrapping_add(ks[s % 3]);
            x1 = x1.wrapping_add(ks[(s + 1) % 3]).wrapping_add(s as u64);
        }
    }
    [x0, x1]
}

/// Opaque generator key. Copying a key copies its stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key([u64; 2]);

impl Key {
    pub fn from_words(words: [u64; 2]) -> Self {
        Key(words)
    }

    pub fn words(&self) -> [u64; 2] {
        self.0
    }

    /// The `i`-th child key; `split(k, n)[i] == k.child(i)` for every `n > i`.
    #[inline]
    pub fn child(&self, index: u64) -> Key {
        Key(threefry2x64(self.0, [index, TAG_SPLIT]))
    }

    /// The `i`-th 64-bit word of this key's output stream.
    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        // Each block yields two words; index/2 selects the block.
        let block = threefry2x64(self.0, [index >> 1, TAG_BITS]);
        block[(index & 1) as usize]
    }
}

pub fn key_from_seed(seed: u64) -> Key {
    Key([0, seed])
}

pub fn split(key: Key, n: usize) -> Result<Vec<Key>> {
    if n == 0 {
        return Err(Error::invalid("split count must be at least 1"));
    }
    Ok((0..n as u64).map(|i| key.child(i)).collect())
}

#[inline]
pub fn fold_in(key: Key, data: u64) -> Key {
    Key(threefry2x64(key.0, [data, TAG_FOLD]))
}

/// Maps the top 53 bits of a word to `[0, 1)`.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `count` draws from `[lo, hi)`.
pub fn uniform(key: Key, count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("uniform needs finite lo < hi, got [{lo}, {hi})")));
    }
    let mut out = vec![0.0; count];
    uniform_into(key, lo, hi, &mut out);
    Ok(out)
}

/// Allocation-free form of [`uniform`]; the caller guarantees `lo < hi`.
#[inline]
pub fn uniform_into(key: Key, lo: f64, hi: f64, out: &mut [f64]) {
    let span = hi - lo;
    for (i, slot) in out.iter_mut().enumerate() {
        let v = lo + span * unit_f64(key.bits(i as u64));
        // lo + span*u can round up to hi when span is tiny relative to lo.
        *slot = if v < hi { v } else { hi.next_down_compat() };
    }
}

/// `count` standard-normal draws (Box-Muller over consecutive word pairs).
pub fn normal(key: Key, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("normal count must be at least 1"));
    }
    let mut out = vec![0.0; count];
    normal_into(key, &mut out);
    Ok(out)
}

#[inline]
pub fn normal_into(key: Key, out: &mut [f64]) {
    let mut pair = 0u64;
    let mut i = 0;
    while i < out.len() {
        // u1 in (0, 1] keeps ln finite.
        let u1 = 1.0 - unit_f64(key.bits(2 * pair));
        let u2 = unit_f64(key.bits(2 * pair + 1));
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out[i] = r * theta.cos();
        if i + 1 < out.len() {
            out[i + 1] = r * theta.sin();
        }
        i += 2;
        pair += 1;
    }
}

/// Uniform index in `[0, n)`, unbiased (Lemire multiply-and-reject over the
/// key's word stream).
pub fn random_index(key: Key, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("random_index needs n >= 1"));
    }
    Ok(random_index_unchecked(key, n as u64) as usize)
}

#[inline]
pub(crate) fn random_index_unchecked(key: Key, n: u64) -> u64 {
    let threshold = n.wrapping_neg() % n;
    let mut i = 0u64;
    loop {
        let m = (key.bits(i) as u128) * (n as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
        i += 1;
    }
}

/// Uniform integer in the inclusive range `[lo, hi]`.
#[inline]
pub fn random_int(key: Key, lo: i32, hi: i32) -> i32 {
    debug_assert!(lo <= hi);
    lo + random_index_unchecked(key, (hi - lo) as u64 + 1) as i32
}

trait NextDown {
    fn next_down_compat(self) -> Self;
}

impl NextDown for f64 {
    fn next_down_compat(self) -> f64 {
        if self.is_nan() || self == f64::NEG_INFINITY {
            return self;
        }
        if self == 0.0 {
            return -f64::from_bits(1);
        }
        let bits = self.to_bits();
        if self > 0.0 {
            f64::from_bits(bits - 1)
        } else {
            f64::from_bits(bits + 1)
        }
    }
}
