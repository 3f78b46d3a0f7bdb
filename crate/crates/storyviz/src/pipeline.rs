//! End-to-end orchestration shared by the CLI and the test suites: encoder
//! pretraining with artifact saving, checkpoint evaluation, and the ablation
//! grid.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::{strategy_names, TrainConfig};
use crate::data::{load_manifest, load_split, SplitName, StorySpec};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_fid, compute_fsd, keyword_consistency, Extractor, ExtractorConfig, MetricReport,
};
use crate::strategies::{attention_strategy, sentence_strategy};
use crate::text::{
    cosine_alignment_x100, pretrain_encoders, story_tokens, PretrainConfig, PretrainReport,
    TextEncoderDims, Vocab,
};
use crate::train::{
    generate_frames, load_checkpoint, save_checkpoint, stack_real_frames, train, TrainReport,
};

/// Pretrain the contrastive encoders and the metric extractor, saving both
/// as checkpoints next to the dataset (or wherever the stems point).
pub fn pretrain_and_save(
    dataset_dir: &Path,
    text_dims: &TextEncoderDims,
    pretrain_cfg: &PretrainConfig,
    extractor_cfg: &ExtractorConfig,
    encoder_stem: &Path,
    extractor_stem: &Path,
) -> Result<(PretrainReport, f64)> {
    let manifest = load_manifest(dataset_dir)?;
    let vocab = Vocab::load(&dataset_dir.join(&manifest.vocab_path))?;
    if text_dims.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocab_size {} does not match dataset vocabulary {}",
            text_dims.vocab_size,
            vocab.len()
        )));
    }
    let train_stories = load_split(dataset_dir, &manifest, SplitName::Train)?;
    let val_stories = load_split(dataset_dir, &manifest, SplitName::Val)?;

    let trained = pretrain_encoders(&train_stories, &val_stories, &vocab, text_dims, pretrain_cfg)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".to_string(), json!("encoders"));
    metadata.insert("report".to_string(), serde_json::to_value(&trained.report)?);
    save_checkpoint(
        encoder_stem,
        &trained.params,
        trained.report.steps,
        pretrain_cfg.epochs,
        pretrain_cfg.seed,
        metadata,
    )?;

    let extractor = crate::metrics::train_extractor(&train_stories, &val_stories, extractor_cfg)?;
    extractor.save(extractor_stem, extractor_cfg.seed)?;
    Ok((trained.report, extractor.gate_accuracy))
}

/// Everything needed to evaluate or visualize a trained checkpoint.
pub struct LoadedRun {
    pub cfg: TrainConfig,
    pub gen: autodiff::ParamStore,
    pub disc: autodiff::ParamStore,
    pub text_params: autodiff::ParamStore,
    pub extractor: Extractor,
    pub vocab: Vocab,
    pub manifest: crate::data::DatasetManifest,
    pub seed: u64,
}

pub fn load_run(ckpt_stem: &Path) -> Result<LoadedRun> {
    let (params, ckpt) = load_checkpoint(ckpt_stem)?;
    let cfg_value = ckpt
        .metadata
        .get("config")
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks a config echo".into()))?;
    let cfg: TrainConfig = serde_json::from_value(cfg_value.clone())?;
    let manifest = load_manifest(&cfg.dataset_dir)?;
    let vocab = Vocab::load(&cfg.dataset_dir.join(&manifest.vocab_path))?;
    let (text_params, _) = load_checkpoint(&cfg.encoder_checkpoint)?;
    let extractor = Extractor::load(&cfg.extractor_checkpoint)?;
    Ok(LoadedRun {
        gen: params.subset("gen"),
        disc: params.subset("disc"),
        seed: ckpt.seed,
        cfg,
        text_params,
        extractor,
        vocab,
        manifest,
    })
}

/// Generated frames plus aligned specs for one split.
pub struct GeneratedSplit {
    pub fake: Array4<f64>,
    pub real: Array4<f64>,
    pub specs: Vec<StorySpec>,
    pub tokens: Array2<u32>,
    pub token_mask: Array2<f64>,
}

pub fn generate_split(run: &LoadedRun, split: SplitName) -> Result<GeneratedSplit> {
    let stories = load_split(&run.cfg.dataset_dir, &run.manifest, split)?;
    let sent = sentence_strategy(run.cfg.sentence_mode())?;
    let attn = attention_strategy(&run.cfg.attention_mode)?;
    let fake = generate_frames(
        &run.gen,
        &run.cfg.model,
        sent.as_ref(),
        attn.as_ref(),
        &run.text_params,
        &run.vocab,
        run.manifest.max_tokens,
        &stories,
        run.seed,
    )?;
    let real = stack_real_frames(&stories);
    let mut captions = Vec::new();
    for st in &stories {
        captions.extend(st.captions.iter().cloned());
    }
    let (tokens, token_mask) = story_tokens(&captions, &run.vocab, run.manifest.max_tokens)?;
    Ok(GeneratedSplit {
        fake,
        real,
        specs: stories.into_iter().map(|s| s.spec).collect(),
        tokens,
        token_mask,
    })
}

/// Generate the frames of a single story with a loaded run's generator.
pub fn generate_story_frames(
    run: &LoadedRun,
    story: &crate::data::LoadedStory,
) -> Result<Array4<f64>> {
    let sent = sentence_strategy(run.cfg.sentence_mode())?;
    let attn = attention_strategy(&run.cfg.attention_mode)?;
    generate_frames(
        &run.gen,
        &run.cfg.model,
        sent.as_ref(),
        attn.as_ref(),
        &run.text_params,
        &run.vocab,
        run.manifest.max_tokens,
        std::slice::from_ref(story),
        run.seed,
    )
}

/// Evaluate a checkpoint on a split; optionally write the JSON report.
pub fn evaluate_checkpoint(
    ckpt_stem: &Path,
    split: SplitName,
    report_path: Option<&Path>,
) -> Result<MetricReport> {
    let run = load_run(ckpt_stem)?;
    run.extractor.assert_gate()?;
    let gen = generate_split(&run, split)?;

    let fid = compute_fid(&run.extractor, &gen.real, &gen.fake)?;
    let fsd = compute_fsd(&run.extractor, &gen.real, &gen.fake, run.manifest.n_frames)?;
    let spec_refs: Vec<&StorySpec> = gen.specs.iter().collect();
    let consistency = keyword_consistency(&run.extractor, &gen.fake, &spec_refs)?;
    let cosine = cosine_alignment_x100(&run.text_params, &gen.fake, &gen.tokens, &gen.token_mask)?;

    let report = MetricReport {
        fid,
        fsd,
        cosine_x100: cosine,
        keyword_consistency: consistency,
        extractor_gate_accuracy: run.extractor.gate_accuracy,
        pool_real_frames: gen.real.shape()[0],
        pool_fake_frames: gen.fake.shape()[0],
        seed: run.seed,
    };
    if let Some(path) = report_path {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

/// The five ablation-grid configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub name: String,
    pub use_enriched_sentences: bool,
    pub attention_mode: String,
    pub discriminator_mode: String,
}

pub fn ablation_grid() -> Vec<GridEntry> {
    let full = GridEntry {
        name: "full".into(),
        use_enriched_sentences: true,
        attention_mode: strategy_names::ATTN_EXTENDED.into(),
        discriminator_mode: strategy_names::DISC_FUSION_ONE_WAY.into(),
    };
    let mut grid = vec![full.clone()];
    grid.push(GridEntry {
        name: "no_enriched_sentences".into(),
        use_enriched_sentences: false,
        ..full.clone()
    });
    grid.push(GridEntry {
        name: "two_way_discriminator".into(),
        discriminator_mode: strategy_names::DISC_TWO_WAY.into(),
        ..full.clone()
    });
    grid.push(GridEntry {
        name: "attention_none".into(),
        attention_mode: strategy_names::ATTN_NONE.into(),
        ..full.clone()
    });
    grid.push(GridEntry {
        name: "attention_per_sentence".into(),
        attention_mode: strategy_names::ATTN_PER_SENTENCE.into(),
        ..full
    });
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub config: String,
    pub seed: u64,
    pub report: MetricReport,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub seeds: Vec<u64>,
    pub fid_mean: f64,
    pub fsd_mean: f64,
    pub cosine_mean: f64,
    pub consistency_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    pub eval_split: String,
}

/// Train and evaluate every grid configuration across the seeds.
pub fn run_ablation(
    base: &TrainConfig,
    seeds: &[u64],
    out_dir: &Path,
    eval_split: SplitName,
) -> Result<AblationTable> {
    let mut runs = Vec::new();
    for entry in ablation_grid() {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.use_enriched_sentences = entry.use_enriched_sentences;
            cfg.attention_mode = entry.attention_mode.clone();
            cfg.discriminator_mode = entry.discriminator_mode.clone();
            cfg.seed = seed;
            let run_dir = out_dir.join(&entry.name).join(format!("seed{seed}"));
            let train_report = train(&cfg, &run_dir)?;
            let report = evaluate_checkpoint(
                &train_report.best_checkpoint,
                eval_split,
                Some(&run_dir.join("eval_report.json")),
            )?;
            runs.push(AblationRun {
                config: entry.name.clone(),
                seed,
                report,
                train_report,
            });
        }
    }

    let mut rows = Vec::new();
    for entry in ablation_grid() {
        let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.config == entry.name).collect();
        let m = mine.len().max(1) as f64;
        rows.push(AblationRow {
            config: entry.name.clone(),
            seeds: mine.iter().map(|r| r.seed).collect(),
            fid_mean: mine.iter().map(|r| r.report.fid).sum::<f64>() / m,
            fsd_mean: mine.iter().map(|r| r.report.fsd).sum::<f64>() / m,
            cosine_mean: mine.iter().map(|r| r.report.cosine_x100).sum::<f64>() / m,
            consistency_mean: mine.iter().map(|r| r.report.keyword_consistency).sum::<f64>() / m,
        });
    }
    let table = AblationTable {
        rows,
        runs,
        eval_split: eval_split.dir().to_string(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json_path = out_dir.join("ablation_table.json");
    fs::write(&json_path, serde_json::to_vec_pretty(&table)?)
        .map_err(|e| Error::io(&json_path, e))?;
    let md_path = out_dir.join("ablation_table.md");
    fs::write(&md_path, table.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
    Ok(table)
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| config | FID | FSD | Cosine | keyword consistency |\n|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                r.config, r.fid_mean, r.fsd_mean, r.cosine_mean, r.consistency_mean
            ));
        }
        out
    }

    pub fn row(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Default encoder dimensions for a dataset: vocabulary size from disk, the
/// rest from the model configuration.
pub fn text_dims_for(dataset_dir: &Path, model: &crate::config::ModelConfig) -> Result<TextEncoderDims> {
    let manifest = load_manifest(dataset_dir)?;
    let vocab = Vocab::load(&dataset_dir.join(&manifest.vocab_path))?;
    Ok(TextEncoderDims {
        vocab_size: vocab.len(),
        token_embed: model.token_embed_dim,
        hidden: model.lstm_hidden,
        text_dim: model.text_dim,
    })
}
