//! Finite-difference gradient verification.
//!
//! The checker only ever calls the *forward* path of the graph, so it stays
//! independent of the backward rules it validates: central differences
//! `(f(x+h) - f(x-h)) / 2h` per coordinate against the analytic gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::graph::Var;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    /// Largest `|analytic - fd| / max(1, |analytic|)` seen.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

fn eval(inputs: &[Tensor], build: &dyn Fn(&[Var]) -> Result<Var>) -> Result<f64> {
    let vars: Vec<Var> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
    let loss = build(&vars)?;
    if !loss.value().is_scalar() {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    Ok(loss.value().item())
}

/// Check the analytic gradient of `build` with respect to every coordinate
/// of every input. `build` must be a pure function of its inputs.
pub fn finite_diff_check(
    inputs: &[Tensor],
    h: f64,
    build: &dyn Fn(&[Var]) -> Result<Var>,
) -> Result<FdReport> {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    finite_diff_check_coords(inputs, h, &coords, build)
}

/// Like [`finite_diff_check`] but comparing only `samples` randomly chosen
/// coordinates per input tensor — for compositions too large to sweep.
pub fn finite_diff_check_sampled(
    inputs: &[Tensor],
    h: f64,
    samples: usize,
    seed: u64,
    build: &dyn Fn(&[Var]) -> Result<Var>,
) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let mut all: Vec<usize> = (0..t.numel()).collect();
        all.shuffle(&mut rng);
        for &j in all.iter().take(samples) {
            coords.push((i, j));
        }
    }
    finite_diff_check_coords(inputs, h, &coords, build)
}

fn finite_diff_check_coords(
    inputs: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
    build: &dyn Fn(&[Var]) -> Result<Var>,
) -> Result<FdReport> {
    // Analytic gradients in one backward pass.
    let vars: Vec<Var> = inputs.iter().map(|t| Var::param(t.clone())).collect();
    let loss = build(&vars)?;
    loss.backward()?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|v| {
            v.grad()
                .unwrap_or_else(|| Tensor::zeros(v.shape()))
        })
        .collect();

    let mut max_rel_err = 0.0f64;
    for &(i, j) in coords {
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[j] += h;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[j] -= h;
        let fd = (eval(&plus, build)? - eval(&minus, build)?) / (2.0 * h);
        let analytic = grads[i].data()[j];
        let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    Ok(FdReport {
        max_rel_err,
        checked: coords.len(),
    })
}

/// Uniform random tensor in `[lo, hi)` from a seeded generator.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("sizes agree")
}
