use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FlowTable, BENIGN};
use crate::error::{Error, Result};

pub const LABEL_KNOWN: &str = "known";
pub const LABEL_OOD: &str = "ood";

/// Synthetic dataset with a compact benign cluster, a displaced known-attack
/// cluster, and out-of-distribution rows that share the benign mean but not
/// its covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_benign: usize,
    pub n_known_anomaly: usize,
    pub n_ood: usize,
    /// Overall scale of the benign per-axis standard deviations.
    pub benign_scale: f64,
    /// Multiplier on the benign standard deviations for OOD rows.
    pub ood_scale: f64,
    /// Mahalanobis length of the known-attack mean displacement.
    pub known_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 16,
            n_benign: 4000,
            n_known_anomaly: 2000,
            n_ood: 500,
            benign_scale: 1.0,
            ood_scale: 3.0,
            known_shift: 8.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("synthetic dim must be at least 2".into()));
        }
        if self.n_benign == 0 || self.n_known_anomaly == 0 || self.n_ood == 0 {
            return Err(Error::Config("synthetic class counts must be positive".into()));
        }
        if !(self.benign_scale > 0.0 && self.ood_scale > 0.0 && self.known_shift >= 0.0) {
            return Err(Error::Config("synthetic scales must be positive".into()));
        }
        Ok(())
    }
}

/// Column names: `f00..` for the Gaussian features, then three positive
/// flow-style columns derived from the first three features (so the default
/// rate features can be engineered) and one constant column.
fn synth_columns(dim: usize) -> Vec<String> {
    let mut cols: Vec<String> = (0..dim).map(|j| format!("f{j:02}")).collect();
    cols.extend(
        ["Flow Duration", "Total Fwd Packets", "Total Length of Fwd Packets", "Bwd PSH Flags"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

/// Draws `n_benign` + `n_known_anomaly` + `n_ood` rows in that order.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<FlowTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| cfg.benign_scale * (0.5 + j as f64 / (d - 1) as f64))
        .collect();
    let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let width = d + 4;
    let total = cfg.n_benign + cfg.n_known_anomaly + cfg.n_ood;
    let mut values = Vec::with_capacity(total * width);
    let mut labels = Vec::with_capacity(total);
    let blocks = [
        (BENIGN, cfg.n_benign, 1.0, 0.0),
        (LABEL_KNOWN, cfg.n_known_anomaly, 1.0, cfg.known_shift),
        (LABEL_OOD, cfg.n_ood, cfg.ood_scale, 0.0),
    ];
    for (label, n, spread, shift) in blocks {
        for _ in 0..n {
            // standardized coordinates relative to the benign distribution
            let g: Vec<f64> = (0..d)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spread * z + shift * dir[j]
                })
                .collect();
            values.extend((0..d).map(|j| mean[j] + std[j] * g[j]));
            values.push(1000.0 * (0.25 * g[0]).exp());
            values.push(10.0 * (0.25 * g[1]).exp());
            values.push(800.0 * (0.25 * g[2]).exp());
            values.push(0.0);
            labels.push(label.to_string());
        }
    }
    FlowTable::new(synth_columns(d), values, labels)
}
