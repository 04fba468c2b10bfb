//! Training configuration and its flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! channels = 32
//! split_ratio = 0.25
//! fusion_strategy = gated
//! ```
//!
//! Unknown keys are rejected; missing keys keep their defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::wavelet::WaveletBasis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionStrategy {
    #[default]
    Gated,
    Sum,
    Concat,
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionStrategy::Gated => "gated",
            FusionStrategy::Sum => "sum",
            FusionStrategy::Concat => "concat",
        })
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(Self::Gated),
            "sum" => Ok(Self::Sum),
            "concat" => Ok(Self::Concat),
            _ => Err(Error::Config(format!(
                "unknown fusion_strategy {s:?} (expected gated, sum or concat)"
            ))),
        }
    }
}

/// Structural variants of the iMambaWave block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// No identity channels: the whole feature goes through both branches.
    NoSplit,
    /// Enhancement removed: the block is the identity.
    IdentityOnly,
    /// Gate forced to 1 (state-space branch only).
    SplitBimamba,
    /// Gate forced to 0 (wavelet branch only).
    SplitWavelet,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoSplit => "no_split",
            Ablation::IdentityOnly => "identity_only",
            Ablation::SplitBimamba => "split_bimamba",
            Ablation::SplitWavelet => "split_wavelet",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_split" => Ok(Self::NoSplit),
            "identity_only" => Ok(Self::IdentityOnly),
            "split_bimamba" => Ok(Self::SplitBimamba),
            "split_wavelet" => Ok(Self::SplitWavelet),
            _ => Err(Error::Config(format!(
                "unknown ablation {s:?} (expected full, no_split, identity_only, split_bimamba or split_wavelet)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub channels: usize,
    pub split_ratio: f64,
    pub bimamba_depth: usize,
    pub wavelet_levels: usize,
    pub wavelet_basis: WaveletBasis,
    pub mkconv_k: usize,
    pub heads: usize,
    pub fusion_strategy: FusionStrategy,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub align_length: usize,
    pub sync_crop: bool,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            split_ratio: 0.25,
            bimamba_depth: 1,
            wavelet_levels: 1,
            wavelet_basis: WaveletBasis::Haar,
            mkconv_k: 3,
            heads: 4,
            fusion_strategy: FusionStrategy::Gated,
            dropout: 0.1,
            lr: 8e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            clip_norm: 1.0,
            max_epochs: 300,
            patience: 50,
            seed: 0,
            align_length: 70,
            sync_crop: false,
            ablation: Ablation::Full,
        }
    }
}

pub const KEYS: &[&str] = &[
    "channels",
    "split_ratio",
    "bimamba_depth",
    "wavelet_levels",
    "wavelet_basis",
    "mkconv_k",
    "heads",
    "fusion_strategy",
    "dropout",
    "lr",
    "weight_decay",
    "batch_size",
    "clip_norm",
    "max_epochs",
    "patience",
    "seed",
    "align_length",
    "sync_crop",
    "ablation",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

impl TrainConfig {
    /// Desk-scale profile used by tests: 32 channels, short sequences.
    pub fn test_profile() -> Self {
        Self {
            channels: 32,
            align_length: 16,
            ..Self::default()
        }
    }

    /// Gradient-check profile: C=8, L=8, N=1, Q=1, K=2, H=2.
    pub fn micro() -> Self {
        Self {
            channels: 8,
            align_length: 8,
            bimamba_depth: 1,
            wavelet_levels: 1,
            mkconv_k: 2,
            heads: 2,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "channels" => self.channels = parse_num(key, v)?,
            "split_ratio" => self.split_ratio = parse_num(key, v)?,
            "bimamba_depth" => self.bimamba_depth = parse_num(key, v)?,
            "wavelet_levels" => self.wavelet_levels = parse_num(key, v)?,
            "wavelet_basis" => {
                self.wavelet_basis = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "mkconv_k" => self.mkconv_k = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "fusion_strategy" => self.fusion_strategy = v.parse()?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "align_length" => self.align_length = parse_num(key, v)?,
            "sync_crop" => self.sync_crop = parse_num(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "channels" => self.channels.to_string(),
            "split_ratio" => self.split_ratio.to_string(),
            "bimamba_depth" => self.bimamba_depth.to_string(),
            "wavelet_levels" => self.wavelet_levels.to_string(),
            "wavelet_basis" => self.wavelet_basis.to_string(),
            "mkconv_k" => self.mkconv_k.to_string(),
            "heads" => self.heads.to_string(),
            "fusion_strategy" => self.fusion_strategy.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "align_length" => self.align_length.to_string(),
            "sync_crop" => self.sync_crop.to_string(),
            "ablation" => self.ablation.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines over `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).expect("known key"));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels < 1 {
            return fail("channels must be >= 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return fail(format!("split_ratio must be in (0, 1], got {}", self.split_ratio));
        }
        if self.bimamba_depth < 1 {
            return fail("bimamba_depth must be >= 1".into());
        }
        if self.wavelet_levels < 1 {
            return fail("wavelet_levels must be >= 1".into());
        }
        if self.mkconv_k < 1 {
            return fail("mkconv_k must be >= 1".into());
        }
        if self.heads < 1 || self.channels % self.heads != 0 {
            return fail(format!(
                "heads ({}) must divide channels ({})",
                self.heads, self.channels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be finite and >= 0".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be > 0".into());
        }
        if self.patience < 1 {
            return fail("patience must be >= 1".into());
        }
        if self.align_length < 1 {
            return fail("align_length must be >= 1".into());
        }
        // every stage must leave room for the wavelet cascade
        let min_len = crate::wavelet::min_length_for_levels(self.wavelet_levels);
        let mut t = self.align_length;
        for stage in 0..crate::model::NUM_STAGES {
            if t < min_len {
                return fail(format!(
                    "align_length {} leaves {t} steps at stage {}, below the {min_len} needed for {} wavelet levels",
                    self.align_length,
                    stage + 1,
                    self.wavelet_levels
                ));
            }
            t = t.div_ceil(2);
        }
        Ok(())
    }

    /// `(C_Id, C_En)` after applying the ablation's split rule.
    pub fn split_channels(&self) -> (usize, usize) {
        let c = self.channels;
        let c_id = match self.ablation {
            Ablation::NoSplit => 0,
            _ => (self.split_ratio * c as f64).floor() as usize,
        };
        (c_id, c - c_id)
    }
}
