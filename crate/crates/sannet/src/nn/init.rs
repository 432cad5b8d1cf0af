//! Seeded weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::Tensor;

/// He-uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("sizes agree")
}

/// He-uniform conv kernel `[K, C, kh, kw]` with `fan_in = C*kh*kw`.
pub fn conv_kernel(k: usize, c: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Tensor {
    he_uniform(&[k, c, kh, kw], c * kh * kw, rng)
}

/// He-uniform dense weight `[D, M]` with `fan_in = D`.
pub fn dense_weight(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Tensor {
    he_uniform(&[d, m], d, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn he_uniform_respects_limit_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = he_uniform(&[4, 6], 6, &mut rng);
        let limit = (6.0f64 / 6.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < limit));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let t2 = he_uniform(&[4, 6], 6, &mut rng2);
        assert_eq!(t.data(), t2.data());
    }
}
