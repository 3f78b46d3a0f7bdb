//! Image- and story-level discriminators.
//!
//! The fusion design has exactly one output head per level, consuming only
//! the word-by-pixel fusion volume: realism and text alignment are judged
//! together. The two-way baseline (for ablation) downsamples to 4x4 and
//! scores an unconditional head plus a sentence-concatenation conditional
//! head, as in earlier story-visualization discriminators.

use ndarray::{Array1, Axis};

use autodiff::rng::Prng;
use autodiff::{orthogonal_init, Graph, ParamStore, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nets;
use crate::ops::fuse_features;
use crate::text::TextEncoding;
use crate::train::{gan_d_loss, gan_g_loss};

/// Per-level discriminator losses (image I, story V).
pub struct DiscLosses {
    pub d_image: Var,
    pub d_story: Var,
}

pub struct GenLosses {
    pub g_image: Var,
    pub g_story: Var,
}

pub trait DiscriminatorStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn init_params(
        &self,
        cfg: &ModelConfig,
        n_frames: usize,
        max_tokens: usize,
        share_trunk: bool,
        rng: &mut Prng,
    ) -> ParamStore;

    /// Discriminator-side losses on a batch: `real`/`fake` are
    /// `[B*N, 3, S, S]` image nodes (fake already detached by construction).
    fn d_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        real: Var,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<DiscLosses>;

    /// Generator-side losses on fake images flowing back into the generator.
    fn g_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<GenLosses>;
}

/// Exact count of trainable scalars.
pub fn count_parameters(store: &ParamStore) -> usize {
    store.count_scalars()
}

// ---------------------------------------------------------------------------
// Fusion one-way discriminator
// ---------------------------------------------------------------------------

pub struct FusionOneWayDiscriminator;

/// Head blocks needed to reach 4x4 from the fusion resolution.
fn head_blocks(cfg: &ModelConfig) -> usize {
    let fr = cfg.fusion_resolution();
    (fr / 4).trailing_zeros() as usize
}

fn init_trunk(store: &mut ParamStore, rng: &mut Prng, prefix: &str, cfg: &ModelConfig) {
    let mut cin = 3;
    for (i, &cout) in cfg.disc_trunk_channels.iter().enumerate() {
        nets::init_conv(store, rng, &format!("{prefix}.conv{i}"), cin, cout, 3, nets::Init::He);
        cin = cout;
    }
}

fn trunk_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    images: Var,
) -> Var {
    let mut x = images;
    for i in 0..cfg.disc_trunk_channels.len() {
        x = nets::conv_forward(g, store, &format!("{prefix}.conv{i}"), x, 2, 1);
        x = g.leaky_relu(x, 0.2);
    }
    x
}

fn init_fusion_head(
    store: &mut ParamStore,
    rng: &mut Prng,
    prefix: &str,
    cfg: &ModelConfig,
    in_channels: usize,
) {
    let blocks = head_blocks(cfg);
    let mut cin = in_channels;
    for i in 0..blocks {
        let cout = cfg.disc_head_channels[i.min(cfg.disc_head_channels.len() - 1)];
        nets::init_conv(store, rng, &format!("{prefix}.conv{i}"), cin, cout, 3, nets::Init::He);
        cin = cout;
    }
    nets::init_linear(store, rng, &format!("{prefix}.fc"), cin * 16, 1, nets::Init::He);
}

/// Strided convolutions on the fusion volume down to 4x4, then one logit.
fn fusion_head_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    f: Var,
) -> Var {
    let blocks = head_blocks(cfg);
    let mut x = f;
    for i in 0..blocks {
        x = nets::conv_forward(g, store, &format!("{prefix}.conv{i}"), x, 2, 1);
        x = g.leaky_relu(x, 0.2);
    }
    let shape = g.shape(x).to_vec();
    let flat = g.reshape(x, &[shape[0], shape[1] * shape[2] * shape[3]]);
    let logit = nets::linear_forward(g, store, &format!("{prefix}.fc"), flat); // [B, 1]
    let b = shape[0];
    g.reshape(logit, &[b])
}

impl FusionOneWayDiscriminator {
    /// Batched logits: `(image_logits [B*N], story_logits [B])`.
    pub fn batched_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        images: Var,
        text: &[TextEncoding],
    ) -> Result<(Var, Var)> {
        let b = text.len();
        let n = text[0].n_sentences();
        let l = text[0].max_tokens();
        let bn = g.shape(images)[0];
        if bn != b * n {
            return Err(Error::shape(
                "disc_logits",
                format!("{bn} images for {b} stories of {n} frames"),
            ));
        }

        let feats = trunk_forward(g, store, "trunk", cfg, images); // [B*N, Ct, fr, fr]
        let proj_img = g.param(store, "fuse_image.proj");
        let fr = cfg.fusion_resolution();

        // Image level: fuse each frame with its own sentence's words.
        let mut fused = Vec::with_capacity(b * n);
        for bi in 0..b {
            let enc = &text[bi];
            for fi in 0..n {
                let item = g.slice(feats, 0, bi * n + fi, 1);
                let ct = g.shape(item)[1];
                let v = g.reshape(item, &[ct, fr, fr]);
                let words = g.constant(enc.w.index_axis(Axis(0), fi).to_owned().into_dyn());
                let mask = Array1::from_iter(enc.mask.row(fi).iter().copied());
                let f = fuse_features(g, v, words, &mask, proj_img)?;
                fused.push(g.reshape(f, &[1, l, fr, fr]));
            }
        }
        let f_all = g.concat(0, &fused); // [B*N, L, fr, fr]
        let image_logits = fusion_head_forward(g, store, "head_image", cfg, f_all);

        // Story level: concatenate per-frame features along channels,
        // project, fuse with the whole story's words.
        let story_feats = if share_trunk {
            feats
        } else {
            trunk_forward(g, store, "story_trunk", cfg, images)
        };
        let ct = *cfg.disc_trunk_channels.last().unwrap();
        let stacked = g.reshape(story_feats, &[b, n * ct, fr, fr]);
        let projected = nets::conv_forward(g, store, "story_proj", stacked, 1, 0);
        let projected = g.leaky_relu(projected, 0.2);
        let proj_story = g.param(store, "fuse_story.proj");

        let mut story_fused = Vec::with_capacity(b);
        for (bi, enc) in text.iter().enumerate() {
            let item = g.slice(projected, 0, bi, 1);
            let cs = g.shape(item)[1];
            let v = g.reshape(item, &[cs, fr, fr]);
            // [N, D, L] -> [D, L*N] sentence-major.
            let w_var = g.constant(enc.w.clone().into_dyn());
            let w_dnl = g.permute(w_var, &[1, 0, 2]);
            let d = enc.text_dim();
            let words = g.reshape(w_dnl, &[d, n * l]);
            let mask = crate::ops::flatten_word_mask(&enc.mask);
            let f = fuse_features(g, v, words, &mask, proj_story)?;
            story_fused.push(g.reshape(f, &[1, n * l, fr, fr]));
        }
        let f_story = g.concat(0, &story_fused); // [B, L*N, fr, fr]
        let story_logits = fusion_head_forward(g, store, "head_story", cfg, f_story);
        Ok((image_logits, story_logits))
    }

    /// Single-image logit: `image [3,S,S]`, `words [D,L]`, `mask [L]`.
    pub fn image_logit(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        image: Var,
        words: Var,
        mask: &Array1<f64>,
    ) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape("image_disc_logit", format!("image {shape:?}")));
        }
        let batched = g.reshape(image, &[1, 3, shape[1], shape[2]]);
        let feats = trunk_forward(g, store, "trunk", cfg, batched);
        let fr = cfg.fusion_resolution();
        let ct = g.shape(feats)[1];
        let v = g.reshape(feats, &[ct, fr, fr]);
        let proj = g.param(store, "fuse_image.proj");
        let l = g.shape(words)[1];
        let f = fuse_features(g, v, words, mask, proj)?;
        let f = g.reshape(f, &[1, l, fr, fr]);
        let logits = fusion_head_forward(g, store, "head_image", cfg, f);
        Ok(g.reshape(logits, &[]))
    }

    /// Single-story logit: `images [N,3,S,S]`, `story_words [D, L*N]`.
    pub fn story_logit(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        images: Var,
        story_words: Var,
        mask: &Array1<f64>,
    ) -> Result<Var> {
        let shape = g.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape("story_disc_logit", format!("images {shape:?}")));
        }
        let n = shape[0];
        let prefix = if share_trunk { "trunk" } else { "story_trunk" };
        let feats = trunk_forward(g, store, prefix, cfg, images); // [N, Ct, fr, fr]
        let fr = cfg.fusion_resolution();
        let ct = g.shape(feats)[1];
        let stacked = g.reshape(feats, &[1, n * ct, fr, fr]);
        let projected = nets::conv_forward(g, store, "story_proj", stacked, 1, 0);
        let projected = g.leaky_relu(projected, 0.2);
        let cs = g.shape(projected)[1];
        let v = g.reshape(projected, &[cs, fr, fr]);
        let proj = g.param(store, "fuse_story.proj");
        let ln = g.shape(story_words)[1];
        let f = fuse_features(g, v, story_words, mask, proj)?;
        let f = g.reshape(f, &[1, ln, fr, fr]);
        let logits = fusion_head_forward(g, store, "head_story", cfg, f);
        Ok(g.reshape(logits, &[]))
    }
}

impl DiscriminatorStrategy for FusionOneWayDiscriminator {
    fn name(&self) -> &'static str {
        crate::config::strategy_names::DISC_FUSION_ONE_WAY
    }

    fn init_params(
        &self,
        cfg: &ModelConfig,
        n_frames: usize,
        max_tokens: usize,
        share_trunk: bool,
        rng: &mut Prng,
    ) -> ParamStore {
        let mut store = ParamStore::new();
        init_trunk(&mut store, rng, "trunk", cfg);
        if !share_trunk {
            init_trunk(&mut store, rng, "story_trunk", cfg);
        }
        let ct = *cfg.disc_trunk_channels.last().unwrap();
        let d = cfg.text_dim;
        store.insert("fuse_image.proj", orthogonal_init(rng, &[ct, d], 1.0));
        nets::init_conv(
            &mut store,
            rng,
            "story_proj",
            n_frames * ct,
            cfg.story_proj_channels,
            1,
            nets::Init::He,
        );
        store.insert(
            "fuse_story.proj",
            orthogonal_init(rng, &[cfg.story_proj_channels, d], 1.0),
        );
        init_fusion_head(&mut store, rng, "head_image", cfg, max_tokens);
        init_fusion_head(&mut store, rng, "head_story", cfg, n_frames * max_tokens);
        store.round_to_f32();
        store
    }

    fn d_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        real: Var,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<DiscLosses> {
        let (real_i, real_v) = self.batched_logits(g, store, cfg, share_trunk, real, text)?;
        let (fake_i, fake_v) = self.batched_logits(g, store, cfg, share_trunk, fake, text)?;
        Ok(DiscLosses {
            d_image: gan_d_loss(g, real_i, fake_i),
            d_story: gan_d_loss(g, real_v, fake_v),
        })
    }

    fn g_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        share_trunk: bool,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<GenLosses> {
        let (fake_i, fake_v) = self.batched_logits(g, store, cfg, share_trunk, fake, text)?;
        Ok(GenLosses {
            g_image: gan_g_loss(g, fake_i),
            g_story: gan_g_loss(g, fake_v),
        })
    }
}

// ---------------------------------------------------------------------------
// Two-way baseline
// ---------------------------------------------------------------------------

pub struct TwoWayBaselineDiscriminator;

/// Extra stride-2 stages from the fusion resolution down to 4x4, doubling
/// channels each time.
fn two_way_extra(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut stages = Vec::new();
    let mut cin = *cfg.disc_trunk_channels.last().unwrap();
    let mut res = cfg.fusion_resolution();
    while res > 4 {
        let cout = (cin * 2).min(256);
        stages.push((cin, cout));
        cin = cout;
        res /= 2;
    }
    stages
}

fn two_way_c4(cfg: &ModelConfig) -> usize {
    two_way_extra(cfg)
        .last()
        .map(|&(_, c)| c)
        .unwrap_or(*cfg.disc_trunk_channels.last().unwrap())
}

impl TwoWayBaselineDiscriminator {
    /// 4x4 features for a batch of frames.
    fn features_4x4(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        images: Var,
    ) -> Var {
        let mut x = trunk_forward(g, store, "trunk", cfg, images);
        for i in 0..two_way_extra(cfg).len() {
            x = nets::conv_forward(g, store, &format!("down{i}"), x, 2, 1);
            x = g.leaky_relu(x, 0.2);
        }
        x
    }

    /// (unconditional, conditional) logits for `[B, C4, 4, 4]` features and
    /// a `[B, D]` conditioning vector.
    fn two_head_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        feats: Var,
        cond: Var,
    ) -> (Var, Var) {
        let shape = g.shape(feats).to_vec();
        let (b, c4) = (shape[0], shape[1]);

        let u = nets::conv_forward(g, store, &format!("{prefix}.u_conv"), feats, 1, 1);
        let u = g.leaky_relu(u, 0.2);
        let u_flat = g.reshape(u, &[b, c4 * 16]);
        let u_logit = nets::linear_forward(g, store, &format!("{prefix}.u_fc"), u_flat);
        let u_logit = g.reshape(u_logit, &[b]);

        let d = g.shape(cond)[1];
        let cond4 = g.reshape(cond, &[b, d, 1, 1]);
        let cond4 = g.broadcast_to(cond4, &[b, d, 4, 4]);
        let cat = g.concat(1, &[feats, cond4]);
        let c = nets::conv_forward(g, store, &format!("{prefix}.c_conv"), cat, 1, 1);
        let c = g.leaky_relu(c, 0.2);
        let c_flat = g.reshape(c, &[b, c4 * 16]);
        let c_logit = nets::linear_forward(g, store, &format!("{prefix}.c_fc"), c_flat);
        let c_logit = g.reshape(c_logit, &[b]);
        (u_logit, c_logit)
    }

    /// ((img_uncond, img_cond), (story_uncond, story_cond)).
    #[allow(clippy::type_complexity)]
    fn batched_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        images: Var,
        text: &[TextEncoding],
    ) -> Result<((Var, Var), (Var, Var))> {
        let b = text.len();
        let n = text[0].n_sentences();
        let feats = self.features_4x4(g, store, cfg, images); // [B*N, C4, 4, 4]

        // Image level: condition on the frame's sentence vector.
        let mut conds = Vec::with_capacity(b);
        for enc in text {
            conds.push(g.constant(enc.s.clone().into_dyn()));
        }
        let cond_img = g.concat(0, &conds); // [B*N, D]
        let img = self.two_head_logits(g, store, "img", feats, cond_img);

        // Story level: concatenated frame features, projected; condition on
        // the mean sentence vector.
        let c4 = two_way_c4(cfg);
        let stacked = g.reshape(feats, &[b, n * c4, 4, 4]);
        let projected = nets::conv_forward(g, store, "story_proj", stacked, 1, 0);
        let projected = g.leaky_relu(projected, 0.2);
        let mut mean_s = Vec::with_capacity(b);
        for enc in text {
            let s = g.constant(enc.s.clone().into_dyn());
            let sum = g.sum_axis(s, 0);
            let mean = g.scale(sum, 1.0 / n as f64);
            let d = enc.text_dim();
            mean_s.push(g.reshape(mean, &[1, d]));
        }
        let cond_story = g.concat(0, &mean_s); // [B, D]
        let story = self.two_head_logits(g, store, "story", projected, cond_story);
        Ok((img, story))
    }
}

impl DiscriminatorStrategy for TwoWayBaselineDiscriminator {
    fn name(&self) -> &'static str {
        crate::config::strategy_names::DISC_TWO_WAY
    }

    fn init_params(
        &self,
        cfg: &ModelConfig,
        n_frames: usize,
        _max_tokens: usize,
        _share_trunk: bool,
        rng: &mut Prng,
    ) -> ParamStore {
        let mut store = ParamStore::new();
        init_trunk(&mut store, rng, "trunk", cfg);
        for (i, (cin, cout)) in two_way_extra(cfg).into_iter().enumerate() {
            nets::init_conv(&mut store, rng, &format!("down{i}"), cin, cout, 3, nets::Init::He);
        }
        let c4 = two_way_c4(cfg);
        let d = cfg.text_dim;
        for prefix in ["img", "story"] {
            nets::init_conv(&mut store, rng, &format!("{prefix}.u_conv"), c4, c4, 3, nets::Init::He);
            nets::init_linear(&mut store, rng, &format!("{prefix}.u_fc"), c4 * 16, 1, nets::Init::He);
            nets::init_conv(
                &mut store,
                rng,
                &format!("{prefix}.c_conv"),
                c4 + d,
                c4,
                3,
                nets::Init::He,
            );
            nets::init_linear(&mut store, rng, &format!("{prefix}.c_fc"), c4 * 16, 1, nets::Init::He);
        }
        nets::init_conv(&mut store, rng, "story_proj", n_frames * c4, c4, 1, nets::Init::He);
        store.round_to_f32();
        store
    }

    fn d_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        _share_trunk: bool,
        real: Var,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<DiscLosses> {
        let ((ru_i, rc_i), (ru_v, rc_v)) = self.batched_logits(g, store, cfg, real, text)?;
        let ((fu_i, fc_i), (fu_v, fc_v)) = self.batched_logits(g, store, cfg, fake, text)?;
        let du = gan_d_loss(g, ru_i, fu_i);
        let dc = gan_d_loss(g, rc_i, fc_i);
        let d_image = g.add(du, dc);
        let du_v = gan_d_loss(g, ru_v, fu_v);
        let dc_v = gan_d_loss(g, rc_v, fc_v);
        let d_story = g.add(du_v, dc_v);
        Ok(DiscLosses { d_image, d_story })
    }

    fn g_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        _share_trunk: bool,
        fake: Var,
        text: &[TextEncoding],
    ) -> Result<GenLosses> {
        let ((fu_i, fc_i), (fu_v, fc_v)) = self.batched_logits(g, store, cfg, fake, text)?;
        let gu = gan_g_loss(g, fu_i);
        let gc = gan_g_loss(g, fc_i);
        let g_image = g.add(gu, gc);
        let gu_v = gan_g_loss(g, fu_v);
        let gc_v = gan_g_loss(g, fc_v);
        let g_story = g.add(gu_v, gc_v);
        Ok(GenLosses { g_image, g_story })
    }
}
