//! Story generator: recurrent context encoder over per-frame sentence
//! representations and noise, an initial 4x4 projection per frame, and an
//! upsampling stack with word attention injected at configured resolutions.

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};

use autodiff::rng::Prng;
use autodiff::{normal_init, Graph, ParamStore, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nets;
use crate::ops::AttentionResult;
use crate::strategies::{AttentionStrategy, SentenceStrategy};
use crate::text::TextEncoding;

pub fn init_generator(
    cfg: &ModelConfig,
    attn: &dyn AttentionStrategy,
    rng: &mut Prng,
) -> ParamStore {
    let mut store = ParamStore::new();
    let d = cfg.text_dim;
    let nz = cfg.noise_dim;
    let hc = cfg.context_hidden;
    let c0 = cfg.gen_channels[0];

    store.insert("ctx.w_in", normal_init(rng, &[d + nz, hc], 0.02));
    store.insert("ctx.w_h", normal_init(rng, &[hc, hc], 0.02));
    store.insert("ctx.b", ArrayD::zeros(IxDyn(&[hc])));
    nets::init_linear(&mut store, rng, "init", hc + nz, c0 * 16, nets::Init::Dcgan);

    for stage in 1..cfg.gen_channels.len() {
        let (cin, cout) = (cfg.gen_channels[stage - 1], cfg.gen_channels[stage]);
        let prefix = format!("up{stage}");
        nets::init_conv(&mut store, rng, &format!("{prefix}.conv"), cin, cout, 3, nets::Init::Dcgan);
        nets::init_instance_norm(&mut store, &format!("{prefix}.norm"), cout);
        let res = cfg.gen_resolution(stage);
        if cfg.attention_resolutions.contains(&res) {
            attn.init_params(&mut store, rng, res, cout, d);
        }
    }
    let c_last = *cfg.gen_channels.last().unwrap();
    nets::init_conv(&mut store, rng, "out", c_last, 3, 3, nets::Init::Dcgan);
    store.round_to_f32();
    store
}

/// Context recurrence + initial projection for one story: consumes the
/// representation row and that frame's noise, emits the `[1, C0, 4, 4]` map.
fn context_initial_maps(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    repr: Var,
    noise_story: &Array2<f64>,
) -> Vec<Var> {
    let n = noise_story.nrows();
    let w_in = g.param(store, "ctx.w_in");
    let w_h = g.param(store, "ctx.w_h");
    let ctx_b = g.param(store, "ctx.b");
    let mut h = g.constant(ArrayD::zeros(IxDyn(&[1, cfg.context_hidden])));
    let mut maps = Vec::with_capacity(n);
    for fi in 0..n {
        let z = g.constant(
            noise_story
                .row(fi)
                .to_owned()
                .insert_axis(Axis(0))
                .into_dyn(),
        );
        let r = g.slice(repr, 0, fi, 1); // [1, D]
        let x = g.concat(1, &[r, z]);
        let xw = g.matmul(x, w_in);
        let hw = g.matmul(h, w_h);
        let pre = g.add(xw, hw);
        let pre = g.badd(pre, ctx_b);
        h = g.tanh(pre);
        let hz = g.concat(1, &[h, z]);
        let init = nets::linear_forward(g, store, "init", hz);
        maps.push(g.reshape(init, &[1, cfg.gen_channels[0], 4, 4]));
    }
    maps
}

/// Everything a generator forward pass produces beyond the images.
pub struct GenOutputs {
    /// `[B*N, 3, S, S]` images in `[0, 1]`, stories stacked frame-major.
    pub images: Var,
    /// Per story: sentence correlation weights, when the strategy mixes words.
    pub sigma: Vec<Option<Var>>,
    /// Per (story index, site resolution): attention internals.
    pub attention: Vec<(usize, usize, AttentionResult)>,
}

/// Generate a batch of stories. `noise` is `[B, N, noise_dim]`, drawn by the
/// caller; the forward pass itself is deterministic.
pub fn generate_batch(
    g: &mut Graph,
    store: &ParamStore,
    sent: &dyn SentenceStrategy,
    attn: &dyn AttentionStrategy,
    cfg: &ModelConfig,
    text: &[TextEncoding],
    noise: &Array3<f64>,
) -> Result<GenOutputs> {
    let b = text.len();
    if b == 0 {
        return Err(Error::shape("generate_batch", "empty batch"));
    }
    let n = text[0].n_sentences();
    if noise.shape() != [b, n, cfg.noise_dim] {
        return Err(Error::shape(
            "generate_batch",
            format!("noise {:?} expected [{b}, {n}, {}]", noise.shape(), cfg.noise_dim),
        ));
    }

    let mut sigma = Vec::with_capacity(b);
    let mut initial_maps = Vec::with_capacity(b * n);
    let mut story_words: Vec<Var> = Vec::with_capacity(b);
    for (bi, enc) in text.iter().enumerate() {
        enc.validate()?;
        if enc.text_dim() != cfg.text_dim || enc.n_sentences() != n {
            return Err(Error::shape(
                "generate_batch",
                format!(
                    "encoding [{}, {}] vs config D={} N={n}",
                    enc.n_sentences(),
                    enc.text_dim(),
                    cfg.text_dim
                ),
            ));
        }
        let s = g.constant(enc.s.clone().into_dyn());
        let w = g.constant(enc.w.clone().into_dyn());
        story_words.push(w);
        let (repr, sig) = sent.represent(g, s, w, &enc.mask)?;
        sigma.push(sig);
        let noise_story = noise.index_axis(Axis(0), bi).to_owned();
        initial_maps.extend(context_initial_maps(g, store, cfg, repr, &noise_story));
    }
    let mut x = g.concat(0, &initial_maps); // [B*N, C0, 4, 4]

    let mut attention = Vec::new();
    for stage in 1..cfg.gen_channels.len() {
        let up = g.upsample_nearest2(x);
        let conv = nets::conv_forward(g, store, &format!("up{stage}.conv"), up, 1, 1);
        let normed = nets::instance_norm(g, store, &format!("up{stage}.norm"), conv);
        x = g.relu(normed);

        let res = cfg.gen_resolution(stage);
        if cfg.attention_resolutions.contains(&res) {
            let mut injected = Vec::with_capacity(b);
            for bi in 0..b {
                let story = g.slice(x, 0, bi * n, n); // [N, C, r, r]
                let (fused, result) =
                    attn.inject(g, store, res, story, story_words[bi], &text[bi].mask)?;
                if let Some(result) = result {
                    attention.push((bi, res, result));
                }
                injected.push(fused);
            }
            x = g.concat(0, &injected);
        }
    }

    let head = nets::conv_forward(g, store, "out", x, 1, 1);
    let t = g.tanh(head);
    let t = g.add_scalar(t, 1.0);
    let images = g.scale(t, 0.5);
    Ok(GenOutputs {
        images,
        sigma,
        attention,
    })
}

/// Initial per-frame latents only (the `[N, C0, 4, 4]` maps), for tests and
/// probes.
pub fn initial_latents(
    g: &mut Graph,
    store: &ParamStore,
    sent: &dyn SentenceStrategy,
    cfg: &ModelConfig,
    enc: &TextEncoding,
    noise: &Array2<f64>,
) -> Result<Var> {
    enc.validate()?;
    let s = g.constant(enc.s.clone().into_dyn());
    let w = g.constant(enc.w.clone().into_dyn());
    let (repr, _) = sent.represent(g, s, w, &enc.mask)?;
    let maps = context_initial_maps(g, store, cfg, repr, noise);
    Ok(g.concat(0, &maps))
}
