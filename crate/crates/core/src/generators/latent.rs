use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Standard-normal latent vector drawn from a seeded generator.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// The code as a `[1, dim]` row.
    pub fn to_row(&self) -> Tensor {
        Tensor::new(vec![1, self.0.len()], self.0.clone()).expect("sized")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_roughly_standard() {
        let a = LatentCode::from_seed(3, 4096);
        assert_eq!(a, LatentCode::from_seed(3, 4096));
        assert_ne!(a, LatentCode::from_seed(4, 4096));
        let n = a.dim() as f64;
        let mean = a.as_slice().iter().sum::<f64>() / n;
        let var = a.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1 && (var - 1.0).abs() < 0.1);
    }
}
