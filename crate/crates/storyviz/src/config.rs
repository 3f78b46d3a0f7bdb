//! Configuration types for dataset building, model architecture, and training.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Stories always have five frames; captions are padded to twelve tokens.
pub const N_FRAMES: usize = 5;
pub const MAX_TOKENS: usize = 12;
pub const GRID: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_frames: usize,
    pub max_tokens: usize,
    pub grid: usize,
    /// Output image side length; 16, 32, or 64.
    pub image_size: usize,
    pub train_stories: usize,
    pub val_stories: usize,
    pub test_stories: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_frames: N_FRAMES,
            max_tokens: MAX_TOKENS,
            grid: GRID,
            image_size: 32,
            train_stories: 2000,
            val_stories: 200,
            test_stories: 500,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// A reduced-size profile for CPU-bound runs and the acceptance suite.
    pub fn small(seed: u64) -> Self {
        DatasetConfig {
            image_size: 16,
            train_stories: 512,
            val_stories: 64,
            test_stories: 64,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames != N_FRAMES {
            return Err(Error::Config(format!(
                "n_frames must be {N_FRAMES}, got {}",
                self.n_frames
            )));
        }
        if self.grid != GRID {
            return Err(Error::Config(format!("grid must be {GRID}, got {}", self.grid)));
        }
        if ![16, 32, 64].contains(&self.image_size) {
            return Err(Error::Config(format!(
                "image_size must be one of 16/32/64, got {}",
                self.image_size
            )));
        }
        if self.max_tokens < 11 {
            return Err(Error::Config(format!(
                "max_tokens {} cannot fit the longest caption template",
                self.max_tokens
            )));
        }
        if self.train_stories == 0 || self.val_stories == 0 || self.test_stories == 0 {
            return Err(Error::Config("all split sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture dimensions shared by the encoder, generator and discriminators.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Joint text feature dimension D.
    pub text_dim: usize,
    pub token_embed_dim: usize,
    /// Hidden size per direction of the recurrent text encoder.
    pub lstm_hidden: usize,
    pub noise_dim: usize,
    pub context_hidden: usize,
    /// Generator channels per resolution, starting at 4x4 and halving the
    /// channel count at each x2 upsample; the last entry is the resolution of
    /// the output image head.
    pub gen_channels: Vec<usize>,
    /// Feature-map resolutions at which word attention is injected.
    pub attention_resolutions: Vec<usize>,
    /// Discriminator trunk channels, one entry per stride-2 block; fusion
    /// happens at image_size / 2^len.
    pub disc_trunk_channels: Vec<usize>,
    /// Channels the concatenated story features are projected to before the
    /// story-level fusion.
    pub story_proj_channels: usize,
    /// Post-fusion head channels, one entry per stride-2 block down to 4x4.
    pub disc_head_channels: Vec<usize>,
    pub image_size: usize,
}

impl ModelConfig {
    /// Defaults for 32x32 output.
    pub fn for_image_size(image_size: usize) -> Self {
        let gen_channels = match image_size {
            16 => vec![256, 128, 64],
            64 => vec![256, 128, 64, 32, 16],
            _ => vec![256, 128, 64, 32],
        };
        let disc_trunk_channels = match image_size {
            64 => vec![64, 128],
            _ => vec![64],
        };
        ModelConfig {
            text_dim: 128,
            token_embed_dim: 64,
            lstm_hidden: 64,
            noise_dim: 64,
            context_hidden: 128,
            gen_channels,
            attention_resolutions: vec![16],
            disc_trunk_channels,
            story_proj_channels: 64,
            disc_head_channels: vec![64, 128],
            image_size,
        }
    }

    /// Tiny dimensions for CPU runs.
    pub fn small() -> Self {
        ModelConfig {
            text_dim: 48,
            token_embed_dim: 48,
            lstm_hidden: 48,
            noise_dim: 16,
            context_hidden: 48,
            gen_channels: vec![64, 32, 16],
            attention_resolutions: vec![16],
            disc_trunk_channels: vec![24],
            story_proj_channels: 24,
            disc_head_channels: vec![24, 32],
            image_size: 16,
        }
    }

    /// Resolution of the feature map produced by generator stage `i`.
    pub fn gen_resolution(&self, stage: usize) -> usize {
        4 << stage
    }

    pub fn fusion_resolution(&self) -> usize {
        self.image_size >> self.disc_trunk_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.gen_channels.len();
        if stages < 2 {
            return Err(Error::Config("gen_channels needs at least two stages".into()));
        }
        let out_res = 4 << (stages - 1);
        if out_res != self.image_size {
            return Err(Error::Config(format!(
                "gen_channels implies {out_res}x{out_res} output but image_size is {}",
                self.image_size
            )));
        }
        for &r in &self.attention_resolutions {
            if !(0..stages).any(|s| self.gen_resolution(s) == r) {
                return Err(Error::Config(format!(
                    "attention resolution {r} is not produced by the generator"
                )));
            }
        }
        if self.fusion_resolution() < 4 {
            return Err(Error::Config("fusion resolution below 4x4".into()));
        }
        Ok(())
    }
}

/// Ablation switches: which strategy implementations the run selects.
pub mod strategy_names {
    pub const SENT_ENRICHED: &str = "enriched";
    pub const SENT_PLAIN: &str = "plain";
    pub const ATTN_EXTENDED: &str = "extended";
    pub const ATTN_PER_SENTENCE: &str = "per_sentence";
    pub const ATTN_NONE: &str = "none";
    pub const DISC_FUSION_ONE_WAY: &str = "fusion_one_way";
    pub const DISC_TWO_WAY: &str = "two_way_baseline";
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset_dir: PathBuf,
    pub encoder_checkpoint: PathBuf,
    pub extractor_checkpoint: PathBuf,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Batch size in stories.
    pub batch_stories: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_enriched_sentences: bool,
    /// One of `extended`, `per_sentence`, `none`.
    pub attention_mode: String,
    /// One of `fusion_one_way`, `two_way_baseline`.
    pub discriminator_mode: String,
    pub loss_weight_image: f64,
    pub loss_weight_story: f64,
    /// Share the image trunk with the story discriminator.
    pub share_disc_trunk: bool,
    /// Validation FID+FSD cadence (in epochs) for best-checkpoint selection.
    pub eval_every_epochs: usize,
    /// Stories drawn from the validation split per evaluation.
    pub eval_stories: usize,
    /// Optional cap on the number of train-split stories the adversarial
    /// loop consumes (encoder pretraining always sees the whole split).
    pub max_train_stories: Option<usize>,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn defaults(dataset_dir: PathBuf, image_size: usize) -> Self {
        TrainConfig {
            encoder_checkpoint: dataset_dir.join("encoders"),
            extractor_checkpoint: dataset_dir.join("extractor"),
            dataset_dir,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_stories: 16,
            epochs: 120,
            seed: 0,
            use_enriched_sentences: true,
            attention_mode: strategy_names::ATTN_EXTENDED.into(),
            discriminator_mode: strategy_names::DISC_FUSION_ONE_WAY.into(),
            loss_weight_image: 1.0,
            loss_weight_story: 1.0,
            share_disc_trunk: true,
            eval_every_epochs: 10,
            eval_stories: 64,
            max_train_stories: None,
            model: ModelConfig::for_image_size(image_size),
        }
    }

    /// CPU-scale profile used by the ablation harness and the test suite.
    pub fn small_profile(dataset_dir: PathBuf) -> Self {
        TrainConfig {
            batch_stories: 8,
            epochs: 30,
            eval_every_epochs: 10,
            eval_stories: 32,
            max_train_stories: Some(96),
            model: ModelConfig::small(),
            ..TrainConfig::defaults(dataset_dir, 16)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.learning_rate <= 0.0 || self.batch_stories == 0 || self.epochs == 0 {
            return Err(Error::Config("rates and sizes must be positive".into()));
        }
        let attn = [
            strategy_names::ATTN_EXTENDED,
            strategy_names::ATTN_PER_SENTENCE,
            strategy_names::ATTN_NONE,
        ];
        if !attn.contains(&self.attention_mode.as_str()) {
            return Err(Error::Config(format!(
                "unknown attention_mode `{}` (expected one of {attn:?})",
                self.attention_mode
            )));
        }
        let discs = [
            strategy_names::DISC_FUSION_ONE_WAY,
            strategy_names::DISC_TWO_WAY,
        ];
        if !discs.contains(&self.discriminator_mode.as_str()) {
            return Err(Error::Config(format!(
                "unknown discriminator_mode `{}` (expected one of {discs:?})",
                self.discriminator_mode
            )));
        }
        if self.eval_every_epochs == 0 {
            return Err(Error::Config("eval_every_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn sentence_mode(&self) -> &'static str {
        if self.use_enriched_sentences {
            strategy_names::SENT_ENRICHED
        } else {
            strategy_names::SENT_PLAIN
        }
    }
}

/// fnv1a-64 over raw bytes; used for cheap content digests.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
