//! Percentile thresholds on benign scores and the resulting verdicts.
//!
//!     cargo run --example threshold_calibration

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sculpt::dccl::CentroidPair;
use sculpt::infer::{calibrate_thresholds, classify_latents, score, DEFAULT_PERCENTILES};
use sculpt::maf::{MafConfig, MafParams};
use sculpt::ndiff::Tensor;

fn main() -> sculpt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gauss = |n: usize, mean: f64, sd: f64| {
        Tensor::new(&[n, 2], (0..2 * n).map(|_| mean + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect())
    };
    // an untrained flow is the standard normal density
    let maf = MafParams::init(MafConfig { dim: 2, n_layers: 2, hidden: 8, made_hidden_layers: 2 }, 0)?;
    let benign = gauss(1000, 0.0, 1.0)?;
    let t = calibrate_thresholds(&score(&benign, &maf)?, &DEFAULT_PERCENTILES)?;

    let c = CentroidPair { c_benign: vec![0.0, 0.0], c_anomaly: vec![6.0, 6.0] };
    let probe = Tensor::from_rows(&[vec![0.1, -0.2], vec![2.5, -2.5], vec![2.6, 0.0], vec![5.5, 6.5]])?;
    for (p, tau) in &t.entries {
        let v = classify_latents(&probe, &c, &maf, *tau)?;
        let kinds: Vec<&str> = v.iter().map(|v| v.kind.as_str()).collect();
        println!("P{p} tau={tau:.3}: {kinds:?}");
    }
    Ok(())
}
