//! Small sampling helpers and the per-run stream derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::C64;

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn complex_gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> Vec<C64> {
    (0..n).map(|_| complex_gaussian(rng, variance)).collect()
}

/// Independent stream `stream` of the master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
