//! Dataset builder: renders stories to PNG, writes specs and captions, and
//! maintains the manifest. Layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/vocab.json
//! <root>/stories/<split>/<story_id>/frame_{0..4}.png
//! <root>/stories/<split>/<story_id>/story.json
//! ```

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::config::{fnv1a, DatasetConfig};
use crate::error::{Error, Result};
use autodiff::rng::derive;
use rand::Rng;

use super::{caption_frame, generate_story_spec, render_frame, StorySpec};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn dir(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub image_size: usize,
    pub n_frames: usize,
    pub max_tokens: usize,
    pub vocab_path: String,
    pub seed: u64,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub config: DatasetConfig,
}

impl DatasetManifest {
    pub fn ids(&self, split: SplitName) -> &[u64] {
        match split {
            SplitName::Train => &self.train_ids,
            SplitName::Val => &self.val_ids,
            SplitName::Test => &self.test_ids,
        }
    }

    /// Content digest of the manifest (and therefore of the generation
    /// inputs; file contents are pure functions of them).
    pub fn digest(&self) -> u64 {
        fnv1a(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    pub fn validate_against_disk(&self, root: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "manifest version {} unsupported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        for split in SplitName::ALL {
            let dir = root.join("stories").join(split.dir());
            let on_disk = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .count();
            if on_disk != self.ids(split).len() {
                return Err(Error::Dataset(format!(
                    "split {} has {} stories on disk, manifest says {}",
                    split.dir(),
                    on_disk,
                    self.ids(split).len()
                )));
            }
        }
        for (a, b) in [
            (&self.train_ids, &self.val_ids),
            (&self.train_ids, &self.test_ids),
            (&self.val_ids, &self.test_ids),
        ] {
            if a.iter().any(|id| b.contains(id)) {
                return Err(Error::Dataset("splits share story ids".into()));
            }
        }
        Ok(())
    }
}

/// One story as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoryRecord {
    pub spec: StorySpec,
    pub captions: Vec<String>,
}

/// A story loaded into memory; pixels stay u8 until a batch needs floats.
#[derive(Debug, Clone)]
pub struct LoadedStory {
    pub spec: StorySpec,
    pub captions: Vec<String>,
    /// Per frame: raw RGB bytes, row-major HWC.
    pub frames: Vec<Vec<u8>>,
    pub image_size: usize,
}

impl LoadedStory {
    /// Frame as `[3, S, S]` floats in `[0, 1]`.
    pub fn frame_f64(&self, idx: usize) -> Array3<f64> {
        let s = self.image_size;
        let raw = &self.frames[idx];
        let mut out = Array3::zeros((3, s, s));
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    out[[c, y, x]] = raw[(y * s + x) * 3 + c] as f64 / 255.0;
                }
            }
        }
        out
    }
}

fn story_seed(config_seed: u64, story_id: u64) -> u64 {
    // Mix so that neighbouring ids get unrelated streams.
    let mut rng = derive(config_seed ^ story_id.wrapping_mul(0x9e37_79b9_7f4a_7c15), "story_seed");
    rng.random()
}

/// Build the dataset on disk. Refuses a non-empty target unless `overwrite`.
pub fn build_dataset(config: &DatasetConfig, root: &Path, overwrite: bool) -> Result<DatasetManifest> {
    config.validate()?;
    if root.exists() {
        let non_empty = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::NonEmptyDir(root.to_path_buf()));
            }
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let total = config.train_stories + config.val_stories + config.test_stories;
    let splits: Vec<(SplitName, std::ops::Range<u64>)> = vec![
        (SplitName::Train, 0..config.train_stories as u64),
        (
            SplitName::Val,
            config.train_stories as u64..(config.train_stories + config.val_stories) as u64,
        ),
        (
            SplitName::Test,
            (config.train_stories + config.val_stories) as u64..total as u64,
        ),
    ];

    let mut all_captions: Vec<String> = Vec::new();
    for (split, ids) in &splits {
        let dir = root.join("stories").join(split.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let results: Vec<Result<Vec<String>>> = ids
            .clone()
            .collect::<Vec<u64>>()
            .par_iter()
            .map(|&story_id| write_story(config, &dir, story_id))
            .collect();
        for r in results {
            all_captions.extend(r?);
        }
    }

    let vocab = crate::text::build_vocab(all_captions.iter().map(|s| s.as_str()))?;
    let vocab_path = root.join("vocab.json");
    vocab.save(&vocab_path)?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        image_size: config.image_size,
        n_frames: config.n_frames,
        max_tokens: config.max_tokens,
        vocab_path: "vocab.json".to_string(),
        seed: config.seed,
        train_ids: splits[0].1.clone().collect(),
        val_ids: splits[1].1.clone().collect(),
        test_ids: splits[2].1.clone().collect(),
        config: config.clone(),
    };
    let manifest_path = root.join("manifest.json");
    let body = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;
    manifest.validate_against_disk(root)?;
    Ok(manifest)
}

fn write_story(config: &DatasetConfig, split_dir: &Path, story_id: u64) -> Result<Vec<String>> {
    let seed = story_seed(config.seed, story_id);
    let mut spec = generate_story_spec(seed, config)?;
    spec.story_id = story_id;
    let dir = split_dir.join(story_id.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut captions = Vec::with_capacity(config.n_frames);
    for idx in 0..config.n_frames {
        let img = render_frame(&spec, idx, config)?;
        let path = dir.join(format!("frame_{idx}.png"));
        save_png(&img, &path)?;
        captions.push(caption_frame(&spec, idx, config)?);
    }

    let record = StoryRecord {
        spec,
        captions: captions.clone(),
    };
    let path = dir.join("story.json");
    let body = serde_json::to_vec_pretty(&record)?;
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(captions)
}

pub fn save_png(img: &Array3<f64>, path: &Path) -> Result<()> {
    let s = img.shape()[1];
    let mut raw = vec![0u8; s * s * 3];
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                raw[(y * s + x) * 3 + c] = (img[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let buf = image::RgbImage::from_raw(s as u32, s as u32, raw)
        .expect("raw buffer matches dimensions");
    buf.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let body = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&body)?;
    Ok(manifest)
}

/// Load a whole split into memory.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: SplitName) -> Result<Vec<LoadedStory>> {
    let ids = manifest.ids(split);
    let results: Vec<Result<LoadedStory>> = ids
        .par_iter()
        .map(|&id| load_story(root, manifest, split, id))
        .collect();
    results.into_iter().collect()
}

pub fn load_story(
    root: &Path,
    manifest: &DatasetManifest,
    split: SplitName,
    story_id: u64,
) -> Result<LoadedStory> {
    let dir = root.join("stories").join(split.dir()).join(story_id.to_string());
    let record_path = dir.join("story.json");
    let body = fs::read(&record_path).map_err(|e| Error::io(&record_path, e))?;
    let record: StoryRecord = serde_json::from_slice(&body)?;
    let mut frames = Vec::with_capacity(manifest.n_frames);
    for idx in 0..manifest.n_frames {
        let path = dir.join(format!("frame_{idx}.png"));
        let img = image::open(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        if img.width() as usize != manifest.image_size || img.height() as usize != manifest.image_size
        {
            return Err(Error::Dataset(format!(
                "{}: unexpected dimensions {}x{}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        frames.push(img.into_raw());
    }
    Ok(LoadedStory {
        spec: record.spec,
        captions: record.captions,
        frames,
        image_size: manifest.image_size,
    })
}
