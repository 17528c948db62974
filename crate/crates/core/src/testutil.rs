//! Shared fixtures for unit tests.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{ChannelPair, SystemParams};
use crate::reduction::ReducedProblem;

/// Orthogonal channels of norm sqrt(2) with p = 10, unit noise, gamma = 10:
/// r = 1, q = 10, c = d = 1, a = 0.5, b = 1.
pub fn orthogonal_instance() -> (ChannelPair, SystemParams) {
    let s = 2f64.sqrt();
    let z = Complex64::new(0.0, 0.0);
    let ch = ChannelPair::from_slices(&[Complex64::new(s, 0.0), z], &[z, Complex64::new(s, 0.0)]).unwrap();
    (ch, SystemParams::symmetric(2, 10.0, 1.0, 1.0, 10.0))
}

pub fn cscg(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
    let s = 0.5f64.sqrt();
    (0..m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// A feasible instance with the simulation defaults at unit noise.
pub fn random_feasible(seed: u64) -> (ChannelPair, SystemParams, ReducedProblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = SystemParams::symmetric(4, 10.0, 1.0, 1.0, 10.0);
    loop {
        let h1 = cscg(&mut rng, 4);
        let h2 = cscg(&mut rng, 4);
        let ch = ChannelPair::from_slices(&h1, &h2).unwrap();
        if let Ok(rp) = ReducedProblem::build(&ch, &sp) {
            return (ch, sp, rp);
        }
    }
}
