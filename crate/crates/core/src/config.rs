//! Training configuration and its flat `key=value` text form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::networks::{CriticConfig, MultiUNetConfig};
use crate::nn::OptimizerKind;

/// Model/objective variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Single U-Net generators, log-form adversarial loss, one stage.
    CycleGan,
    /// Single U-Net generators, Wasserstein loss with clipped critics.
    CycleWgan,
    /// Multi-branch generators, log-form loss, one stage.
    MultiUnet,
    /// Two chained log-form stages; stage 2 sees G1's output unblended.
    DoubleLayer,
    /// Multi-branch generators, Wasserstein loss, two stages joined by a merge.
    DualMergedWgan,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CycleGan,
        Variant::CycleWgan,
        Variant::MultiUnet,
        Variant::DoubleLayer,
        Variant::DualMergedWgan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CycleGan => "cyclegan",
            Variant::CycleWgan => "cycle-wgan",
            Variant::MultiUnet => "multi-unet",
            Variant::DoubleLayer => "double-layer",
            Variant::DualMergedWgan => "dual-merged-wgan",
        }
    }

    pub fn wasserstein(self) -> bool {
        matches!(self, Variant::CycleWgan | Variant::DualMergedWgan)
    }

    pub fn multi_branch(self) -> bool {
        matches!(self, Variant::MultiUnet | Variant::DualMergedWgan)
    }

    pub fn two_stage(self) -> bool {
        matches!(self, Variant::DoubleLayer | Variant::DualMergedWgan)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Cycle-loss weight.
    pub lambda: f64,
    /// Critic weight clip bound (Wasserstein variants).
    pub clip_c: f64,
    /// Critic steps per generator step (Wasserstein variants; log-form
    /// variants always take one).
    pub n_critic: usize,
    /// `None` picks the variant's default.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub merge_alpha: f64,
    pub crop_size: usize,
    pub base_channels: usize,
    /// Branch depths of multi-branch generators; single-branch variants use
    /// one U-Net of the largest depth listed.
    pub branch_depths: Vec<usize>,
    pub critic_layers: usize,
    pub critic_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DualMergedWgan,
            lambda: 10.0,
            clip_c: 0.01,
            n_critic: 5,
            learning_rate: None,
            epochs: 30,
            batch_size: 4,
            seed: 0,
            merge_alpha: 0.5,
            crop_size: 64,
            base_channels: 8,
            branch_depths: vec![3, 4],
            critic_layers: 3,
            critic_channels: 16,
        }
    }
}

pub const CONFIG_KEYS: [&str; 14] = [
    "variant",
    "lambda",
    "clip_c",
    "n_critic",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "merge_alpha",
    "crop_size",
    "base_channels",
    "branch_depths",
    "critic_layers",
    "critic_channels",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(if self.variant.wasserstein() {
            5e-5
        } else {
            2e-4
        })
    }

    pub fn effective_n_critic(&self) -> usize {
        if self.variant.wasserstein() {
            self.n_critic
        } else {
            1
        }
    }

    /// Blend weight used between stages. The plain two-stage variant feeds
    /// stage 2 with G1's output directly.
    pub fn effective_merge_alpha(&self) -> f64 {
        match self.variant {
            Variant::DoubleLayer => 1.0,
            _ => self.merge_alpha,
        }
    }

    pub fn optimizer(&self) -> OptimizerKind {
        if self.variant.wasserstein() {
            OptimizerKind::rmsprop()
        } else {
            OptimizerKind::adam()
        }
    }

    pub fn generator_config(&self) -> MultiUNetConfig {
        let branch_depths = if self.variant.multi_branch() {
            self.branch_depths.clone()
        } else {
            vec![self.branch_depths.iter().copied().max().unwrap_or(1)]
        };
        MultiUNetConfig {
            branch_depths,
            base_channels: self.base_channels,
        }
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            num_layers: self.critic_layers,
            base_channels: self.critic_channels,
        }
    }

    /// Run directory name, `<variant>-seed<seed>`.
    pub fn run_name(&self) -> String {
        format!("{}-seed{}", self.variant, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.clip_c.is_finite() && self.clip_c > 0.0) {
            return bad(format!("clip_c must be > 0, got {}", self.clip_c));
        }
        if self.n_critic == 0 {
            return bad("n_critic must be >= 1".into());
        }
        let lr = self.effective_learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return bad(format!("learning_rate must be > 0, got {lr}"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.merge_alpha) {
            return bad(format!(
                "merge_alpha must lie in [0, 1], got {}",
                self.merge_alpha
            ));
        }
        let gen = self.generator_config();
        gen.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.critic_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let m = 1usize << gen.max_depth();
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(m) {
            return bad(format!(
                "crop_size {} must be a positive multiple of {m}",
                self.crop_size
            ));
        }
        if self.crop_size < 1 << self.critic_layers {
            return bad(format!(
                "crop_size {} is too small for {} critic layers",
                self.crop_size, self.critic_layers
            ));
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "variant" => self.variant = value.parse()?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "clip_c" => self.clip_c = parse_num(key, value)?,
            "n_critic" => self.n_critic = parse_num(key, value)?,
            "learning_rate" => {
                self.learning_rate = if value == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "merge_alpha" => self.merge_alpha = parse_num(key, value)?,
            "crop_size" => self.crop_size = parse_num(key, value)?,
            "base_channels" => self.base_channels = parse_num(key, value)?,
            "branch_depths" => {
                self.branch_depths = value
                    .split(',')
                    .map(|d| parse_num(key, d.trim()))
                    .collect::<Result<_>>()?
            }
            "critic_layers" => self.critic_layers = parse_num(key, value)?,
            "critic_channels" => self.critic_channels = parse_num(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; known keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys and repeated keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            seen.push(key);
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Fully resolved `key=value` lines; parsing them reproduces `self`
    /// with the learning rate made explicit.
    pub fn to_text(&self) -> String {
        let depths: Vec<String> = self.branch_depths.iter().map(|d| d.to_string()).collect();
        let mut out = String::new();
        for (k, v) in [
            ("variant", self.variant.to_string()),
            ("lambda", self.lambda.to_string()),
            ("clip_c", self.clip_c.to_string()),
            ("n_critic", self.n_critic.to_string()),
            ("learning_rate", self.effective_learning_rate().to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("merge_alpha", self.merge_alpha.to_string()),
            ("crop_size", self.crop_size.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("branch_depths", depths.join(",")),
            ("critic_layers", self.critic_layers.to_string()),
            ("critic_channels", self.critic_channels.to_string()),
        ] {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
