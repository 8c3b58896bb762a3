//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha8 stream identified by
//! `(seed, stream)`, so per-trajectory draws do not depend on evaluation order.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, kept apart so that e.g. data draws never alias noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialNoise = 1,
    Data = 2,
    ForwardNoise = 3,
    Direction = 4,
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((purpose as u64) << 56));
    rng.set_stream(index);
    rng
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard-normal initial latent `x_T` for trajectory `index`.
pub fn initial_noise(seed: u64, index: u64, dim: usize) -> Vec<f64> {
    standard_normal(&mut stream(seed, Purpose::InitialNoise, index), dim)
}

/// Batch of initial latents, one stream per trajectory.
pub fn initial_noise_batch(seed: u64, batch: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..batch as u64).map(|i| initial_noise(seed, i, dim)).collect()
}

/// Unit vector determined by `seed` alone.
pub fn unit_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Direction, 0);
    loop {
        let v = standard_normal(&mut rng, dim);
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
