//! Adversarial training loop: one discriminator update on the summed image
//! and story losses, then one generator update, alternating 1:1. Fully
//! reproducible given (seed, config, dataset digest).

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::rng::{derive, normal, Prng};
use autodiff::{Adam, AdamConfig, Graph, ParamStore};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::{load_manifest, load_split, DatasetManifest, LoadedStory, SplitName};
use crate::error::{Error, Result};
use crate::metrics::{compute_fid, compute_fsd, Extractor};
use crate::model::{generate_batch, init_generator, DiscriminatorStrategy};
use crate::strategies::{
    attention_strategy, discriminator_strategy, sentence_strategy, AttentionStrategy,
    SentenceStrategy,
};
use crate::text::{encode_story, story_tokens, TextEncoding, Vocab};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::losses::LossBundle;

/// Per-step metric row: the four adversarial losses plus gradient norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBundle,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub dataset_digest: u64,
    pub steps: u64,
    pub best_step: u64,
    pub best_val_fid: f64,
    pub best_val_fsd: f64,
    pub first_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: ParamStore,
    pub disc: ParamStore,
    text_params: ParamStore,
    vocab: Vocab,
    max_tokens: usize,
    sent: Box<dyn SentenceStrategy>,
    attn: Box<dyn AttentionStrategy>,
    disc_strat: Box<dyn DiscriminatorStrategy>,
    opt_g: Adam,
    opt_d: Adam,
    noise_rng: Prng,
    step: u64,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        manifest: &DatasetManifest,
        text_params: ParamStore,
        vocab: Vocab,
    ) -> Result<Self> {
        cfg.validate()?;
        if manifest.image_size != cfg.model.image_size {
            return Err(Error::Config(format!(
                "dataset is {0}x{0} but model expects {1}x{1}",
                manifest.image_size, cfg.model.image_size
            )));
        }
        let sent = sentence_strategy(cfg.sentence_mode())?;
        let attn = attention_strategy(&cfg.attention_mode)?;
        let disc_strat = discriminator_strategy(&cfg.discriminator_mode)?;

        let mut gen_rng = derive(cfg.seed, "gen_init");
        let gen = init_generator(&cfg.model, attn.as_ref(), &mut gen_rng);
        let mut disc_rng = derive(cfg.seed, "disc_init");
        let disc = disc_strat.init_params(
            &cfg.model,
            manifest.n_frames,
            manifest.max_tokens,
            cfg.share_disc_trunk,
            &mut disc_rng,
        );

        let adam = |lr: f64, cfg: &TrainConfig| {
            Adam::new(AdamConfig {
                lr,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: 1e-8,
            })
        };
        let noise_rng = derive(cfg.seed, "train_noise");
        Ok(Trainer {
            opt_g: adam(cfg.learning_rate, &cfg),
            opt_d: adam(cfg.learning_rate, &cfg),
            max_tokens: manifest.max_tokens,
            cfg,
            gen,
            disc,
            text_params,
            vocab,
            sent,
            attn,
            disc_strat,
            noise_rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn encode(&self, story: &LoadedStory) -> Result<TextEncoding> {
        let (tokens, mask) = story_tokens(&story.captions, &self.vocab, self.max_tokens)?;
        encode_story(&self.text_params, "text.", &tokens, &mask)
    }

    fn draw_noise(&mut self, b: usize, n: usize) -> Array3<f64> {
        let nz = self.cfg.model.noise_dim;
        let mut out = Array3::zeros((b, n, nz));
        for v in out.iter_mut() {
            *v = normal(&mut self.noise_rng);
        }
        out
    }

    /// One discriminator update then one generator update on a story batch.
    pub fn train_step(&mut self, batch: &[&LoadedStory]) -> Result<StepMetrics> {
        let b = batch.len();
        let n = batch[0].spec.frames.len();
        let s = self.cfg.model.image_size;
        let ids: Vec<u64> = batch.iter().map(|st| st.spec.story_id).collect();

        let encs: Vec<TextEncoding> = batch
            .iter()
            .map(|st| self.encode(st))
            .collect::<Result<_>>()?;
        let mut real = Array4::zeros((b * n, 3, s, s));
        for (bi, st) in batch.iter().enumerate() {
            for fi in 0..n {
                real.index_axis_mut(Axis(0), bi * n + fi)
                    .assign(&st.frame_f64(fi));
            }
        }
        let noise = self.draw_noise(b, n);

        // Generator forward; this tape is extended with the generator loss
        // after the discriminator update below.
        let mut g_gen = Graph::new();
        let gen_out = generate_batch(
            &mut g_gen,
            &self.gen,
            self.sent.as_ref(),
            self.attn.as_ref(),
            &self.cfg.model,
            &encs,
            &noise,
        )?;
        let fake_vals = g_gen.value(gen_out.images).clone();
        if !fake_vals.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite generator activations at step {}, stories {ids:?}",
                self.step
            )));
        }

        // Discriminator update.
        let mut g_d = Graph::new();
        let real_v = g_d.constant(real.into_dyn());
        let fake_v = g_d.constant(fake_vals);
        let dl = self.disc_strat.d_losses(
            &mut g_d,
            &self.disc,
            &self.cfg.model,
            self.cfg.share_disc_trunk,
            real_v,
            fake_v,
            &encs,
        )?;
        let (l_di, l_dv) = (g_d.scalar_value(dl.d_image), g_d.scalar_value(dl.d_story));
        let wi = g_d.scale(dl.d_image, self.cfg.loss_weight_image);
        let wv = g_d.scale(dl.d_story, self.cfg.loss_weight_story);
        let l_d = g_d.add(wi, wv);
        if !g_d.scalar_value(l_d).is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite discriminator loss at step {}, stories {ids:?}",
                self.step
            )));
        }
        g_d.backward(l_d);
        let grads_d = g_d.param_grads();
        let grad_norm_d = grad_norm(&grads_d);
        self.opt_d.step(&mut self.disc, &grads_d);

        // Generator update against the freshly updated discriminator.
        g_gen.set_frozen(true);
        let gl = self.disc_strat.g_losses(
            &mut g_gen,
            &self.disc,
            &self.cfg.model,
            self.cfg.share_disc_trunk,
            gen_out.images,
            &encs,
        )?;
        g_gen.set_frozen(false);
        let (l_gi, l_gv) = (
            g_gen.scalar_value(gl.g_image),
            g_gen.scalar_value(gl.g_story),
        );
        let wi = g_gen.scale(gl.g_image, self.cfg.loss_weight_image);
        let wv = g_gen.scale(gl.g_story, self.cfg.loss_weight_story);
        let l_g = g_gen.add(wi, wv);
        if !g_gen.scalar_value(l_g).is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite generator loss at step {}, stories {ids:?}",
                self.step
            )));
        }
        g_gen.backward(l_g);
        let grads_g = g_gen.param_grads();
        let grad_norm_g = grad_norm(&grads_g);
        self.opt_g.step(&mut self.gen, &grads_g);

        self.step += 1;
        let losses = LossBundle {
            l_gi,
            l_di,
            l_gv,
            l_dv,
        };
        if !losses.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite losses at step {}, stories {ids:?}",
                self.step
            )));
        }
        Ok(StepMetrics {
            step: self.step,
            losses,
            grad_norm_g,
            grad_norm_d,
        })
    }

    /// Combined parameter store as written to checkpoints.
    pub fn combined_params(&self) -> ParamStore {
        let mut all = ParamStore::new();
        all.absorb("gen", self.gen.clone());
        all.absorb("disc", self.disc.clone());
        all
    }

    fn save(
        &self,
        stem: &Path,
        epoch: usize,
        fid: Option<f64>,
        fsd: Option<f64>,
        dataset_digest: u64,
    ) -> Result<()> {
        let mut metadata = BTreeMap::new();
        metadata.insert("config".to_string(), serde_json::to_value(&self.cfg)?);
        metadata.insert("dataset_digest".to_string(), json!(dataset_digest));
        if let Some(fid) = fid {
            metadata.insert("val_fid".to_string(), json!(fid));
        }
        if let Some(fsd) = fsd {
            metadata.insert("val_fsd".to_string(), json!(fsd));
        }
        save_checkpoint(
            stem,
            &self.combined_params(),
            self.step,
            epoch,
            self.cfg.seed,
            metadata,
        )?;
        Ok(())
    }
}

fn grad_norm(grads: &BTreeMap<String, ndarray::ArrayD<f64>>) -> f64 {
    grads
        .values()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Deterministic per-story generation noise for evaluation.
fn eval_noise(seed: u64, story_id: u64, n: usize, nz: usize) -> ndarray::Array2<f64> {
    let mut rng = derive(seed ^ story_id.wrapping_mul(0x9e37), "eval_noise");
    let mut out = ndarray::Array2::zeros((n, nz));
    for v in out.iter_mut() {
        *v = normal(&mut rng);
    }
    out
}

/// Generate frames for whole stories with a frozen generator.
/// Returns `[m*N, 3, S, S]`, story-major.
#[allow(clippy::too_many_arguments)]
pub fn generate_frames(
    gen: &ParamStore,
    model: &ModelConfig,
    sent: &dyn SentenceStrategy,
    attn: &dyn AttentionStrategy,
    text_params: &ParamStore,
    vocab: &Vocab,
    max_tokens: usize,
    stories: &[LoadedStory],
    seed: u64,
) -> Result<Array4<f64>> {
    let n = stories
        .first()
        .map(|st| st.spec.frames.len())
        .ok_or_else(|| Error::Metric("no stories to generate".into()))?;
    let s = model.image_size;
    let mut out = Array4::zeros((stories.len() * n, 3, s, s));
    for (chunk_idx, chunk) in stories.chunks(8).enumerate() {
        let encs: Vec<TextEncoding> = chunk
            .iter()
            .map(|st| {
                let (tokens, mask) = story_tokens(&st.captions, vocab, max_tokens)?;
                encode_story(text_params, "text.", &tokens, &mask)
            })
            .collect::<Result<_>>()?;
        let mut noise = Array3::zeros((chunk.len(), n, model.noise_dim));
        for (bi, st) in chunk.iter().enumerate() {
            noise
                .index_axis_mut(Axis(0), bi)
                .assign(&eval_noise(seed, st.spec.story_id, n, model.noise_dim));
        }
        let mut g = Graph::new();
        let gen_out = generate_batch(&mut g, gen, sent, attn, model, &encs, &noise)?;
        let images = g.value(gen_out.images);
        for bi in 0..chunk.len() {
            let global = chunk_idx * 8 + bi;
            for fi in 0..n {
                let src = images.index_axis(Axis(0), bi * n + fi);
                out.index_axis_mut(Axis(0), global * n + fi)
                    .assign(&src.view().into_dimensionality::<ndarray::Ix3>().unwrap());
            }
        }
    }
    Ok(out)
}

/// Stack the real frames of stories into `[m*N, 3, S, S]`, story-major.
pub fn stack_real_frames(stories: &[LoadedStory]) -> Array4<f64> {
    let n = stories[0].spec.frames.len();
    let s = stories[0].image_size;
    let mut out = Array4::zeros((stories.len() * n, 3, s, s));
    for (si, st) in stories.iter().enumerate() {
        for fi in 0..n {
            out.index_axis_mut(Axis(0), si * n + fi)
                .assign(&st.frame_f64(fi));
        }
    }
    out
}

/// Full training run: dataset + frozen encoders in, checkpoints and a
/// JSON-lines metrics log out. The best checkpoint is selected by the sum of
/// validation FID and FSD.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = load_manifest(&cfg.dataset_dir)?;
    let dataset_digest = manifest.digest();
    let vocab = Vocab::load(&cfg.dataset_dir.join(&manifest.vocab_path))?;
    let mut train_stories = load_split(&cfg.dataset_dir, &manifest, SplitName::Train)?;
    if let Some(cap) = cfg.max_train_stories {
        train_stories.truncate(cap);
    }
    let val_stories = load_split(&cfg.dataset_dir, &manifest, SplitName::Val)?;
    if train_stories.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }

    let (text_params, _) = load_checkpoint(&cfg.encoder_checkpoint).map_err(|e| {
        Error::Checkpoint(format!(
            "missing encoder checkpoint (run pretraining first): {e}"
        ))
    })?;
    let extractor = Extractor::load(&cfg.extractor_checkpoint).map_err(|e| {
        Error::Checkpoint(format!(
            "missing extractor checkpoint (run pretraining first): {e}"
        ))
    })?;
    extractor.assert_gate()?;

    let mut trainer = Trainer::new(cfg.clone(), &manifest, text_params, vocab)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file =
        fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

    let first_stem = out_dir.join("ckpt_first");
    let best_stem = out_dir.join("ckpt_best");
    let last_stem = out_dir.join("ckpt_last");
    let mut best: Option<(f64, u64, f64, f64)> = None;

    let eval_stories: Vec<LoadedStory> = val_stories
        .iter()
        .take(cfg.eval_stories)
        .cloned()
        .collect();
    let real_eval = stack_real_frames(&eval_stories);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_stories.len()).collect();
        let mut order_rng = derive(cfg.seed ^ (epoch as u64) << 16, "batch_order");
        order.shuffle(&mut order_rng);
        // Oversample to a full final batch so every step sees batch_stories.
        for chunk in order.chunks(cfg.batch_stories) {
            let mut batch: Vec<&LoadedStory> = chunk.iter().map(|&i| &train_stories[i]).collect();
            while batch.len() < cfg.batch_stories && !batch.is_empty() {
                let fill = order_rng.random_range(0..train_stories.len());
                batch.push(&train_stories[fill]);
            }
            let metrics = trainer.train_step(&batch)?;
            let line = serde_json::to_string(&metrics)?;
            writeln!(metrics_file, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        }

        if epoch == 1 {
            trainer.save(&first_stem, epoch, None, None, dataset_digest)?;
        }
        if epoch % cfg.eval_every_epochs == 0 || epoch == cfg.epochs {
            let fake = generate_frames(
                &trainer.gen,
                &cfg.model,
                trainer.sent.as_ref(),
                trainer.attn.as_ref(),
                &trainer.text_params,
                &trainer.vocab,
                trainer.max_tokens,
                &eval_stories,
                cfg.seed,
            )?;
            let fid = compute_fid(&extractor, &real_eval, &fake)?;
            let fsd = compute_fsd(&extractor, &real_eval, &fake, manifest.n_frames)?;
            let score = fid + fsd;
            if best.map_or(true, |(s, ..)| score < s) {
                best = Some((score, trainer.step_count(), fid, fsd));
                trainer.save(&best_stem, epoch, Some(fid), Some(fsd), dataset_digest)?;
            }
        }
    }
    trainer.save(&last_stem, cfg.epochs, None, None, dataset_digest)?;

    let (best_score, best_step, best_fid, best_fsd) =
        best.ok_or_else(|| Error::Config("training produced no evaluation point".into()))?;
    let _ = best_score;
    let report = TrainReport {
        seed: cfg.seed,
        dataset_digest,
        steps: trainer.step_count(),
        best_step,
        best_val_fid: best_fid,
        best_val_fsd: best_fsd,
        first_checkpoint: first_stem,
        best_checkpoint: best_stem,
        last_checkpoint: last_stem,
        metrics_log: metrics_path,
    };
    let report_path = out_dir.join("train_report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(&report)?)
        .map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}
