//! Counter-keyed random streams.
//!
//! Every draw is addressed by `(seed, role, position, index)`: the key is
//! hashed into a ChaCha8 key, so a batch can be regenerated from its
//! coordinates alone, independent of the order in which batches are
//! consumed.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::function::erf::erfc_inv;

use crate::scalar::Real;

/// Purpose tag mixed into every stream key so that different consumers of
/// the same seed never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Loading = 1,
    Factor = 2,
    Idiosyncratic = 3,
    Noise = 4,
    OjaInit = 5,
    ThetaStar = 6,
    Components = 7,
    MlpInit = 8,
    RandomProjection = 9,
    Shuffle = 10,
    PpcaInit = 11,
    Test = 12,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream for one `(seed, role, position, index)`
/// coordinate.
pub struct CounterRng {
    inner: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64, role: Role, position: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        let mut h = splitmix64(seed ^ 0x5EED_0000_0000_0000);
        for (lane, word) in [role as u64, position, index, 0xF5_6D].into_iter().enumerate() {
            h = splitmix64(h ^ word.wrapping_mul(0xA24B_AED4_963E_E407));
            key[lane * 8..(lane + 1) * 8].copy_from_slice(&h.to_le_bytes());
        }
        CounterRng {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.open01()
    }

    /// Standard normal by inversion of the CDF.
    pub fn gaussian(&mut self) -> f64 {
        std_normal_quantile(self.open01())
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.open01() * n as f64) as usize).min(n - 1)
    }

    pub fn gaussian_vec<T: Real>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| T::lit(self.gaussian())).collect()
    }
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Fisher–Yates permutation of `0..n`.
pub fn permutation(rng: &mut CounterRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
    idx
}
