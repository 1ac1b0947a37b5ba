#![allow(dead_code)]

use ddstab::datamat::numerical_rank;
use ddstab::plant::LinearizationPair;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Controllable pair with uniform entries, `A` scaled by `1/sqrt(n)`.
pub fn random_controllable(rng: &mut ChaCha12Rng, n: usize, m: usize) -> LinearizationPair<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0)) / (n as f64).sqrt();
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..=1.0));
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = b.clone();
        for i in 0..n {
            ctrb.view_mut((0, i * m), (n, m)).copy_from(&blk);
            blk = &a * blk;
        }
        if numerical_rank(&ctrb, 1e-6).unwrap().full_row_rank() {
            return LinearizationPair::new(a, b).unwrap();
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
