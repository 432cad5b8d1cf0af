//! Run configuration.
//!
//! A run is fully described by one TOML file; every hyperparameter lives
//! here so logs and checkpoints can carry a hash of the exact setup. CLI
//! flags may override individual keys after parsing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Square image edge in pixels. Must be divisible by 4.
    pub image_size: usize,
    /// Master seed; per-phase seeds are derived from it (see [`derive_seed`]).
    pub seed: u64,
    pub batch_size: usize,
    /// Negative-side slope of every leaky ReLU.
    pub leaky_slope: f64,
    /// Weight of the gender-confusion loss term.
    pub lambda_g: f64,
    /// Weight of the match-retention loss term.
    pub lambda_m: f64,
    /// Length of the matcher's face descriptor.
    pub descriptor_dim: usize,
    pub lr_aux: f64,
    pub lr_pretrain: f64,
    pub lr_adversarial: f64,
    pub epochs_aux: usize,
    pub epochs_pretrain: usize,
    pub epochs_adversarial: usize,
    /// Fraction of identities assigned to the training split.
    pub train_fraction: f64,
    pub synthetic: SynthConfig,
    pub channels: Channels,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    /// Strength of the structural gender cue, in [0,1]. Zero disables it
    /// (only useful for control experiments).
    pub gender_signal_strength: f64,
}

/// Channel widths of the subnetworks. Encoder/decoder lists are per conv
/// layer; classifier-style lists are consumed front-to-front, one width per
/// halving block until the feature map reaches 4x4.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Channels {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub classifier: Vec<usize>,
    /// Evaluation classifier: one fewer block than the auxiliary, different
    /// widths, so the two can never share parameter shapes.
    pub eval_classifier: Vec<usize>,
    pub eval_matcher: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Descriptor length of the evaluation matcher (distinct from the
    /// auxiliary's so shapes differ by construction).
    pub descriptor_dim: usize,
    /// Impostor pairs are deterministically subsampled to at most this many.
    pub impostor_cap: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            image_size: 64,
            seed: 42,
            batch_size: 32,
            leaky_slope: 0.2,
            lambda_g: 1.0,
            lambda_m: 1.0,
            descriptor_dim: 64,
            lr_aux: 1e-3,
            lr_pretrain: 1e-3,
            lr_adversarial: 1e-4,
            epochs_aux: 5,
            epochs_pretrain: 10,
            epochs_adversarial: 10,
            train_fraction: 0.8,
            synthetic: SynthConfig::default(),
            channels: Channels::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_identities: 40,
            images_per_identity: 5,
            gender_signal_strength: 1.0,
        }
    }
}

impl Default for Channels {
    fn default() -> Channels {
        Channels {
            encoder: vec![12, 12],
            decoder: vec![64, 128],
            classifier: vec![8, 16, 32, 64, 128, 256],
            eval_classifier: vec![6, 12, 24, 48, 96],
            eval_matcher: vec![10, 20, 40, 80, 160, 320],
        }
    }
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            descriptor_dim: 48,
            impostor_cap: 50_000,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be >= 8 and divisible by 4, got {}",
                self.image_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0 < self.leaky_slope && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope must be in (0,1), got {}",
                self.leaky_slope
            )));
        }
        if self.lambda_g < 0.0 || self.lambda_m < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        for (name, lr) in [
            ("lr_aux", self.lr_aux),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_adversarial", self.lr_adversarial),
        ] {
            if lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.descriptor_dim == 0 || self.eval.descriptor_dim == 0 {
            return Err(Error::Config("descriptor dims must be positive".into()));
        }
        if self.synthetic.n_identities < 2 {
            return Err(Error::Config("need at least 2 synthetic identities".into()));
        }
        if self.synthetic.images_per_identity < 2 {
            return Err(Error::Config(
                "need at least 2 images per identity (genuine pairs)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.synthetic.gender_signal_strength) {
            return Err(Error::Config(
                "gender_signal_strength must be in [0,1]".into(),
            ));
        }
        if self.channels.encoder.len() != 2 || self.channels.decoder.len() != 2 {
            return Err(Error::Config(
                "encoder and decoder each take exactly two channel widths".into(),
            ));
        }
        if self.channels.classifier.is_empty()
            || self.channels.eval_classifier.is_empty()
            || self.channels.eval_matcher.is_empty()
        {
            return Err(Error::Config("channel width lists must be non-empty".into()));
        }
        Ok(())
    }

    /// Short hex digest of the full configuration, stored in checkpoints and
    /// the training log so artifacts can be traced back to their setup.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Deterministic per-phase seed derived from the master seed and a label, so
/// independent components (auxiliary vs evaluation networks, noise streams)
/// never share randomness.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}
