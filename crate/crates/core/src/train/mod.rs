//! Optimisers and the two training stages.

mod optim;
mod stage1;
mod stage2;

use serde::{Deserialize, Serialize};

use crate::dccl::DcclConfig;
use crate::error::{Error, Result};

pub use optim::{clip_grad_norm, cosine_lr, OptimState};
pub use stage1::{nearest_centroid_predict, stratified_batches, train_stage1, train_stage1_with, Stage1Output};
pub use stage2::{train_stage2, train_stage2_with};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub dccl: DcclConfig,
    pub clip_norm: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            lr: 3e-4,
            weight_decay: 1e-2,
            epochs: 10,
            batch: 512,
            dccl: DcclConfig::default(),
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            lr: 5e-4,
            weight_decay: 0.0,
            epochs: 10,
            batch: 512,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            seed: 42,
        }
    }
}

fn check_common(lr: f64, epochs: usize, batch: usize, clip: f64, wd: f64) -> Result<()> {
    if !(lr > 0.0) || epochs == 0 || batch == 0 || !(clip > 0.0) || !(wd >= 0.0) {
        return Err(Error::Config(
            "learning rate, epochs, batch and clip norm must be positive; weight decay non-negative".into(),
        ));
    }
    Ok(())
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.epochs, self.batch, self.clip_norm, self.weight_decay)?;
        if self.batch < 4 {
            return Err(Error::Config("stage-1 batch must hold two rows of each class".into()));
        }
        self.dccl.validate()
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.epochs, self.batch, self.clip_norm, self.weight_decay)
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Mean `(l_cb, l_ca, l_s)` over the epoch, Stage 1 only.
    pub breakdown: Option<[f64; 3]>,
    pub val_f1: Option<f64>,
    pub val_nll: Option<f64>,
    pub batches: usize,
    pub skipped_batches: usize,
    pub clipped_steps: usize,
}

impl EpochRecord {
    /// `epoch=<n> loss=<x> lr=<x> [val_f1=<x>|val_nll=<x>]`
    pub fn log_line(&self) -> String {
        let mut s = format!("epoch={} loss={:.6} lr={:.6e}", self.epoch, self.loss, self.lr);
        if let Some(f) = self.val_f1 {
            s.push_str(&format!(" val_f1={f:.6}"));
        }
        if let Some(n) = self.val_nll {
            s.push_str(&format!(" val_nll={n:.6}"));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn log_text(&self) -> String {
        self.records.iter().map(|r| r.log_line() + "\n").collect()
    }
}
