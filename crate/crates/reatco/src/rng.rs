//! Deterministic RNG derivation.
//!
//! Every random draw in the pipeline comes from a generator derived from
//! `(run seed, purpose tag, timestep)`. Parallel and serial execution order
//! therefore produce bit-identical results: each unit of work derives its own
//! stream instead of sharing a sequential one.

use ndarray::{Array4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator for one unit of work.
pub fn derive(seed: u64, purpose: &str, index: u64) -> ChaCha12Rng {
    let mixed = splitmix(seed ^ splitmix(fnv1a(purpose.as_bytes()) ^ splitmix(index)));
    ChaCha12Rng::seed_from_u64(mixed)
}

/// Standard-normal tensor of the given shape, filled in row-major order.
pub fn normal_like(shape: &[usize], rng: &mut ChaCha12Rng) -> Array4<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Array4::from_shape_vec(
        (shape[0], shape[1], shape[2], shape[3]),
        data,
    )
    .expect("shape/product mismatch")
}

/// Standard-normal vector of length `n`.
pub fn normal_vec(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Dynamic-shape variant of [`normal_like`].
pub fn normal_dyn(shape: &[usize], rng: &mut ChaCha12Rng) -> ndarray::ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    ndarray::ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}
