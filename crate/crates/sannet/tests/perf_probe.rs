//! Ignored by default: rough throughput probe for the heaviest conv layer.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sannet::nn::check::random_tensor;
use sannet::nn::ops;
use sannet::nn::Var;

#[test]
#[ignore]
fn conv_throughput_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&[32, 64, 32, 32], -1.0, 1.0, &mut rng);
    let k = random_tensor(&[128, 64, 3, 3], -0.1, 0.1, &mut rng);
    let b = random_tensor(&[128], -0.1, 0.1, &mut rng);

    let start = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let xv = Var::param(x.clone());
        let kv = Var::param(k.clone());
        let bv = Var::param(b.clone());
        let y = ops::conv2d(&xv, &kv, &bv).unwrap();
        let loss = ops::sum(&ops::mul(&y, &y).unwrap());
        loss.backward().unwrap();
        assert!(xv.grad().is_some());
    }
    let dt = start.elapsed().as_secs_f64() / reps as f64;
    // fwd ~2.4 GMAC, bwd ~4.8 GMAC  => ~14.5 GFLOP per rep
    let gflop = 3.0 * 2.0 * (32.0 * 1024.0 * 128.0 * 576.0) / 1e9;
    eprintln!("conv fwd+bwd: {:.3}s/rep  ({:.2} GFLOP/s)", dt, gflop / dt);
}
