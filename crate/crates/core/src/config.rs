//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma-separated.
//! Every key has a default, so an empty file is valid.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{normalize_label, SplitSpec, SynthConfig, DEFAULT_LABEL_COLUMN};
use crate::dccl::DcclConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::infer::DEFAULT_PERCENTILES;
use crate::maf::MafConfig;
use crate::train::{Stage1Config, Stage2Config, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub label_column: String,
    pub percentiles: Vec<u32>,
    pub split: SplitSpec,
    /// `input_dim` is ignored here and taken from the data.
    pub encoder: EncoderConfig,
    /// `dim` is ignored here and follows `encoder.latent_dim`.
    pub maf: MafConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            split: SplitSpec::cic_ids_2017(),
            encoder: EncoderConfig::default(),
            maf: MafConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Scaled-down models that train on one CPU core in minutes, with the
    /// synthetic known/ood labels as the seen/unseen split. Dropout is off:
    /// at this size it teaches the encoder to ignore feature perturbations,
    /// which is exactly the signal the flow needs on the OOD rows.
    pub fn desk_scale() -> Self {
        RunConfig {
            split: SplitSpec::new(&["known"], &["ood"], 0.25, 0.2, 42),
            encoder: EncoderConfig {
                cnn_channels: vec![8; 5],
                d_model: 16,
                layers: 1,
                heads: 2,
                ffn_dim: 32,
                head_hidden: 32,
                latent_dim: 8,
                dropout: 0.0,
                ..EncoderConfig::default()
            },
            maf: MafConfig {
                dim: 8,
                n_layers: 4,
                hidden: 64,
                made_hidden_layers: 2,
            },
            stage1: Stage1Config {
                lr: 3e-3,
                epochs: 10,
                batch: 32,
                ..Stage1Config::default()
            },
            stage2: Stage2Config {
                lr: 2e-3,
                epochs: 30,
                batch: 128,
                ..Stage2Config::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.encoder;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "label_column" => self.label_column = v.to_string(),
            "percentiles" => self.percentiles = parse_list(key, v)?,
            "split.seen" => self.split.seen_attack_labels = v.split(',').map(normalize_label).filter(|s| !s.is_empty()).collect(),
            "split.unseen" => self.split.unseen_attack_labels = v.split(',').map(normalize_label).filter(|s| !s.is_empty()).collect(),
            "split.benign_holdout_fraction" => self.split.benign_holdout_fraction = parse(key, v)?,
            "split.val_fraction" => self.split.val_fraction = parse(key, v)?,
            "encoder.cnn_channels" => e.cnn_channels = parse_list(key, v)?,
            "encoder.kernel" => e.kernel = parse(key, v)?,
            "encoder.pool_k" => e.pool_k = parse(key, v)?,
            "encoder.pool_s" => e.pool_s = parse(key, v)?,
            "encoder.d_model" => e.d_model = parse(key, v)?,
            "encoder.layers" => e.layers = parse(key, v)?,
            "encoder.heads" => e.heads = parse(key, v)?,
            "encoder.ffn_dim" => e.ffn_dim = parse(key, v)?,
            "encoder.head_hidden" => e.head_hidden = parse(key, v)?,
            "encoder.latent_dim" => e.latent_dim = parse(key, v)?,
            "encoder.dropout" => e.dropout = parse(key, v)?,
            "dccl.alpha" => self.stage1.dccl.alpha = parse(key, v)?,
            "dccl.beta" => self.stage1.dccl.beta = parse(key, v)?,
            "dccl.gamma" => self.stage1.dccl.gamma = parse(key, v)?,
            "dccl.margin" => self.stage1.dccl.margin = parse(key, v)?,
            "maf.n_layers" => self.maf.n_layers = parse(key, v)?,
            "maf.hidden" => self.maf.hidden = parse(key, v)?,
            "maf.made_hidden_layers" => self.maf.made_hidden_layers = parse(key, v)?,
            "stage1.lr" => self.stage1.lr = parse(key, v)?,
            "stage1.weight_decay" => self.stage1.weight_decay = parse(key, v)?,
            "stage1.epochs" => self.stage1.epochs = parse(key, v)?,
            "stage1.batch" => self.stage1.batch = parse(key, v)?,
            "stage1.clip_norm" => self.stage1.clip_norm = parse(key, v)?,
            "stage2.lr" => self.stage2.lr = parse(key, v)?,
            "stage2.weight_decay" => self.stage2.weight_decay = parse(key, v)?,
            "stage2.epochs" => self.stage2.epochs = parse(key, v)?,
            "stage2.batch" => self.stage2.batch = parse(key, v)?,
            "stage2.clip_norm" => self.stage2.clip_norm = parse(key, v)?,
            "synth.dim" => self.synth.dim = parse(key, v)?,
            "synth.n_benign" => self.synth.n_benign = parse(key, v)?,
            "synth.n_known_anomaly" => self.synth.n_known_anomaly = parse(key, v)?,
            "synth.n_ood" => self.synth.n_ood = parse(key, v)?,
            "synth.benign_scale" => self.synth.benign_scale = parse(key, v)?,
            "synth.ood_scale" => self.synth.ood_scale = parse(key, v)?,
            "synth.known_shift" => self.synth.known_shift = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Overlays `text` on `self`.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn apply_file(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.percentiles.is_empty() || self.percentiles.iter().any(|&p| p == 0 || p > 100) {
            return Err(Error::Config("percentiles must lie in 1..=100".into()));
        }
        self.split_spec().validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.synth_config().validate()?;
        self.maf_config().validate()
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            ..self.encoder.clone()
        }
    }

    pub fn maf_config(&self) -> MafConfig {
        MafConfig {
            dim: self.encoder.latent_dim,
            ..self.maf.clone()
        }
    }

    pub fn dccl(&self) -> DcclConfig {
        self.stage1.dccl
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seed,
            ..self.split.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            seed: self.seed,
        }
    }

    /// Every key with its effective value, in a form `apply_text` accepts.
    pub fn to_text(&self) -> String {
        let (e, s1, s2, sy, sp) = (&self.encoder, &self.stage1, &self.stage2, &self.synth, &self.split);
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("label_column", self.label_column.clone()),
            ("percentiles", join(&self.percentiles)),
            ("split.seen", join(&sp.seen_attack_labels)),
            ("split.unseen", join(&sp.unseen_attack_labels)),
            ("split.benign_holdout_fraction", sp.benign_holdout_fraction.to_string()),
            ("split.val_fraction", sp.val_fraction.to_string()),
            ("encoder.cnn_channels", join(&e.cnn_channels)),
            ("encoder.kernel", e.kernel.to_string()),
            ("encoder.pool_k", e.pool_k.to_string()),
            ("encoder.pool_s", e.pool_s.to_string()),
            ("encoder.d_model", e.d_model.to_string()),
            ("encoder.layers", e.layers.to_string()),
            ("encoder.heads", e.heads.to_string()),
            ("encoder.ffn_dim", e.ffn_dim.to_string()),
            ("encoder.head_hidden", e.head_hidden.to_string()),
            ("encoder.latent_dim", e.latent_dim.to_string()),
            ("encoder.dropout", e.dropout.to_string()),
            ("dccl.alpha", s1.dccl.alpha.to_string()),
            ("dccl.beta", s1.dccl.beta.to_string()),
            ("dccl.gamma", s1.dccl.gamma.to_string()),
            ("dccl.margin", s1.dccl.margin.to_string()),
            ("maf.n_layers", self.maf.n_layers.to_string()),
            ("maf.hidden", self.maf.hidden.to_string()),
            ("maf.made_hidden_layers", self.maf.made_hidden_layers.to_string()),
            ("stage1.lr", s1.lr.to_string()),
            ("stage1.weight_decay", s1.weight_decay.to_string()),
            ("stage1.epochs", s1.epochs.to_string()),
            ("stage1.batch", s1.batch.to_string()),
            ("stage1.clip_norm", s1.clip_norm.to_string()),
            ("stage2.lr", s2.lr.to_string()),
            ("stage2.weight_decay", s2.weight_decay.to_string()),
            ("stage2.epochs", s2.epochs.to_string()),
            ("stage2.batch", s2.batch.to_string()),
            ("stage2.clip_norm", s2.clip_norm.to_string()),
            ("synth.dim", sy.dim.to_string()),
            ("synth.n_benign", sy.n_benign.to_string()),
            ("synth.n_known_anomaly", sy.n_known_anomaly.to_string()),
            ("synth.n_ood", sy.n_ood.to_string()),
            ("synth.benign_scale", sy.benign_scale.to_string()),
            ("synth.ood_scale", sy.ood_scale.to_string()),
            ("synth.known_shift", sy.known_shift.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_benchmark_settings() {
        let c = RunConfig::default();
        assert_eq!((c.stage1.lr, c.stage1.weight_decay, c.stage1.epochs, c.stage1.batch), (3e-4, 1e-2, 10, 512));
        assert_eq!((c.stage2.lr, c.stage2.epochs, c.stage2.batch, c.stage2.weight_decay), (5e-4, 10, 512, 0.0));
        assert_eq!(c.dccl(), DcclConfig { alpha: 0.1, beta: 0.1, gamma: 1.0, margin: 5.0 });
        assert_eq!((c.maf.n_layers, c.maf.hidden), (16, 512));
        assert_eq!(c.percentiles, vec![99, 97, 95]);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn text_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk_scale()] {
            let back = RunConfig::default().apply_text(&c.to_text()).unwrap();
            assert_eq!(back.to_text(), c.to_text());
            assert_eq!(back.maf_config(), c.maf_config());
        }
    }

    #[test]
    fn overlays_and_errors() {
        let c = RunConfig::default()
            .apply_text("# comment\n\nseed = 7\nencoder.cnn_channels = 4, 4,4,2,2  # trailing\npercentiles=99,90\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.split_spec().seed, 7);
        assert_eq!(c.encoder.cnn_channels, vec![4, 4, 4, 2, 2]);
        assert_eq!(c.percentiles, vec![99, 90]);

        let e = RunConfig::default().apply_text("seed = 1\nbogus = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("bogus"));
        assert!(RunConfig::default().apply_text("stage1.lr = fast").is_err());
        assert!(RunConfig::default().apply_text("no equals sign").is_err());
        assert!(RunConfig::default().apply_text("percentiles = 101").is_err());
        let e = RunConfig::default().apply_file("/no/such/run.cfg").unwrap_err().to_string();
        assert!(e.contains("/no/such/run.cfg"));
    }
}
