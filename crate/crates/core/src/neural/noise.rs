use rand_distr::{Distribution, StandardNormal};

use crate::rng::{seeded, SeededRng};

/// Seeded standard-normal draws for reparameterization and action noise.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: SeededRng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeded(seed) }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Draw from `N(0, scale^2)`; a zero scale consumes no randomness.
    pub fn scaled(&mut self, scale: f64) -> f64 {
        if scale == 0.0 {
            0.0
        } else {
            scale * self.standard_normal()
        }
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }
}
