//! The three subnetworks: prototype-conditioned autoencoder (I), auxiliary
//! gender classifier (II), auxiliary matcher (III), plus the evaluation
//! variants and filter-adaptation utilities.

pub mod autoencoder;
pub mod classifier;
pub mod matcher;

pub use autoencoder::{Autoencoder, PerturbationTriple};
pub use classifier::{gender_forward, ClassifierArch, GenderClassifier};
pub use matcher::{Matcher, MatcherArch};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Number of ceil-mode 2x poolings needed to bring `size` down to `target`.
pub fn pool_steps(size: usize, target: usize) -> usize {
    let mut s = size;
    let mut steps = 0;
    while s > target {
        s = s.div_ceil(2);
        steps += 1;
    }
    steps
}

/// Spatial size after `steps` ceil-mode halvings.
pub fn spatial_after(size: usize, steps: usize) -> usize {
    let mut s = size;
    for _ in 0..steps {
        s = s.div_ceil(2);
    }
    s
}

/// Collapse the three input-channel slices of an RGB first-layer kernel into
/// one, for feeding grayscale images to a network trained on RGB. For an
/// input with equal R=G=B=g, convolving g with the adapted kernel matches
/// convolving the RGB image with the original exactly.
pub fn adapt_rgb_filters_to_gray(kernel: &Tensor) -> Result<Tensor> {
    let shape = kernel.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "adapt_rgb_filters_to_gray",
            detail: format!("expected a [K,3,kh,kw] kernel, got {:?}", shape),
        });
    }
    let (k, kh, kw) = (shape[0], shape[2], shape[3]);
    let plane = kh * kw;
    let mut data = vec![0.0; k * plane];
    let src = kernel.data();
    for kk in 0..k {
        for p in 0..plane {
            data[kk * plane + p] = src[(kk * 3) * plane + p]
                + src[(kk * 3 + 1) * plane + p]
                + src[(kk * 3 + 2) * plane + p];
        }
    }
    Tensor::from_vec(&[k, 1, kh, kw], data)
}
