#![allow(dead_code)]

use pice_core::driver::ReplayBuffer;
use pice_core::evaluator::TransitionSample;
use pice_core::nalgebra::{DMatrix, DVector};
use pice_core::valuefn::{stage_cost, ActionBox, CostWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise-free linear plant `x' = A x + B u` used by the oracle checks.
pub struct LqrInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: CostWeights,
}

impl LqrInstance {
    pub fn standard() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]),
            b: DMatrix::from_row_slice(2, 3, &[0.3, -0.2, 0.1, 0.05, 0.1, 0.25]),
            w: CostWeights::new(
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
                DMatrix::identity(3, 3) * 0.01,
                0.9,
            )
            .unwrap(),
        }
    }

    /// Action bounds wide enough to stay inactive on this instance.
    pub fn bounds() -> ActionBox {
        ActionBox::new(-50.0, 50.0).unwrap()
    }

    /// `n` transitions from `u = L x + noise`.
    pub fn samples(&self, gain: &DMatrix<f64>, n: usize, seed: u64) -> Vec<TransitionSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                let u = gain * &x + DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let xn = &self.a * &x + &self.b * &u;
                let g = stage_cost(x.as_slice(), u.as_slice(), &self.w).unwrap();
                TransitionSample::new(x.as_slice().to_vec(), u.as_slice().to_vec(), g, xn.as_slice().to_vec())
            })
            .collect()
    }

    pub fn buffer(&self, gain: &DMatrix<f64>, n: usize, seed: u64) -> ReplayBuffer {
        ReplayBuffer::from_samples(self.samples(gain, n, seed))
    }
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
