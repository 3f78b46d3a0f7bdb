//! Contrastive pretraining of the text encoder against a small convolutional
//! image encoder: symmetric cross-entropy over the batch cosine matrix,
//! temperature 0.1. Both encoders are frozen afterwards; the cosine metric
//! reuses their output spaces.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use autodiff::rng::{derive, Prng};
use autodiff::{Adam, AdamConfig, Graph, ParamStore, Var};

use crate::data::LoadedStory;
use crate::error::{Error, Result};
use crate::nets;
use crate::text::{encode_story_graph, init_text_encoder, story_tokens, TextEncoderDims, Vocab};

#[derive(Debug, Clone, Copy)]
pub struct ImageEncoderDims {
    pub channels: [usize; 3],
    pub out_dim: usize,
}

/// Image encoders keep a 4x4 spatial map (one stride-2 stage per halving
/// from the input size) and flatten it into the projection; attributes like
/// the recurring object are position-coded, so pooling them away starves the
/// contrastive signal.
fn conv_plan(image_size: usize, channels: [usize; 3]) -> Vec<(usize, usize)> {
    let stages = (image_size / 4).trailing_zeros() as usize;
    let [c1, c2, c3] = channels;
    let widths = [c1, c2, c3, c3];
    let mut plan = Vec::with_capacity(stages);
    let mut cin = 3;
    for &w in widths.iter().take(stages) {
        plan.push((cin, w));
        cin = w;
    }
    plan
}

pub fn init_image_encoder(dims: &ImageEncoderDims, image_size: usize, rng: &mut Prng) -> ParamStore {
    let mut store = ParamStore::new();
    let plan = conv_plan(image_size, dims.channels);
    for (i, &(cin, cout)) in plan.iter().enumerate() {
        nets::init_conv(&mut store, rng, &format!("conv{i}"), cin, cout, 3, nets::Init::He);
    }
    let flat = plan.last().unwrap().1 * 16;
    let hidden = 2 * dims.out_dim;
    nets::init_linear(&mut store, rng, "fc1", flat, hidden, nets::Init::He);
    nets::init_linear(&mut store, rng, "fc2", hidden, dims.out_dim, nets::Init::He);
    store.round_to_f32();
    store
}

/// `[B, 3, S, S] -> [B, D]` image features.
pub fn image_encoder_forward(g: &mut Graph, store: &ParamStore, prefix: &str, images: Var) -> Var {
    let mut x = images;
    let mut stage = 0;
    while store.contains(&format!("{prefix}conv{stage}.k")) {
        x = nets::conv_forward(g, store, &format!("{prefix}conv{stage}"), x, 2, 1);
        x = g.leaky_relu(x, 0.2);
        stage += 1;
    }
    let shape: Vec<usize> = g.shape(x).to_vec();
    let flat = g.reshape(x, &[shape[0], shape[1] * shape[2] * shape[3]]);
    let h = nets::linear_forward(g, store, &format!("{prefix}fc1"), flat);
    let h = g.leaky_relu(h, 0.2);
    nets::linear_forward(g, store, &format!("{prefix}fc2"), h)
}

/// Symmetric batch-softmax contrastive loss over cosine similarities.
/// Returns the loss node; at random init (near-uniform similarities) its
/// value is approximately `2 ln B`.
pub fn contrastive_loss_graph(g: &mut Graph, img_feat: Var, txt_feat: Var, temperature: f64) -> Var {
    let b = g.shape(img_feat)[0];
    let img_n = nets::l2_normalize_rows(g, img_feat);
    let txt_n = nets::l2_normalize_rows(g, txt_feat);
    let txt_t = g.transpose2(txt_n);
    let cos = g.matmul(img_n, txt_t); // [B, B]: rows images, cols texts
    let logits = g.scale(cos, 1.0 / temperature);

    let ones = Array2::<f64>::ones((b, b));
    let p_rows = g.masked_softmax_rows(logits, &ones);
    let logits_t = g.transpose2(logits);
    let p_cols = g.masked_softmax_rows(logits_t, &ones);

    let eye = {
        let mut e = Array2::<f64>::zeros((b, b));
        for i in 0..b {
            e[[i, i]] = 1.0;
        }
        g.constant(e.into_dyn())
    };
    let mut total = None;
    for p in [p_rows, p_cols] {
        let diag = g.mul(p, eye);
        let diag = g.sum_axis(diag, 1); // [B] of p_ii
        let logd = g.ln(diag);
        let mean = g.mean_all(logd);
        let neg = g.neg(mean);
        total = Some(match total {
            None => neg,
            Some(t) => g.add(t, neg),
        });
    }
    total.unwrap()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Image-encoder channel widths.
    pub image_channels: [usize; 3],
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 90,
            batch_size: 64,
            learning_rate: 5e-4,
            temperature: 0.1,
            seed: 0,
            image_channels: [32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Top-1 sentence-to-image retrieval accuracy on validation batches.
    pub val_retrieval_top1: f64,
    /// Fraction of validation pairs where the matched cosine beats a
    /// mismatched one.
    pub matched_beats_mismatched: f64,
    pub final_loss: f64,
    pub steps: u64,
}

pub struct PretrainedEncoders {
    /// Combined store with `text.` and `img.` prefixes.
    pub params: ParamStore,
    pub report: PretrainReport,
}

struct PairBatch {
    images: Array4<f64>,
    tokens: Array2<u32>,
    mask: Array2<f64>,
}

fn gather_pairs(
    stories: &[LoadedStory],
    vocab: &Vocab,
    max_tokens: usize,
    idxs: &[(usize, usize)],
    flips: Option<&[bool]>,
) -> Result<PairBatch> {
    let s = stories[0].image_size;
    let b = idxs.len();
    let mut images = Array4::zeros((b, 3, s, s));
    let mut captions = Vec::with_capacity(b);
    for (row, &(si, fi)) in idxs.iter().enumerate() {
        let mut frame = stories[si].frame_f64(fi);
        // Captions never mention positions, so mirroring is label-preserving
        // and fights pair memorization. Two bits per row: horizontal and
        // vertical flips.
        if let Some(f) = flips {
            if f[2 * row] {
                frame.invert_axis(Axis(2));
            }
            if f[2 * row + 1] {
                frame.invert_axis(Axis(1));
            }
            frame = frame.as_standard_layout().to_owned();
        }
        images.index_axis_mut(Axis(0), row).assign(&frame);
        captions.push(stories[si].captions[fi].clone());
    }
    let (tokens, mask) = story_tokens(&captions, vocab, max_tokens)?;
    Ok(PairBatch {
        images,
        tokens,
        mask,
    })
}

fn batch_features(
    params: &ParamStore,
    batch: &PairBatch,
    temperature: f64,
) -> Result<(Graph, Var, Array2<f64>)> {
    let mut g = Graph::new();
    let images = g.constant(batch.images.clone().into_dyn());
    let img_feat = image_encoder_forward(&mut g, params, "img.", images);
    let txt = encode_story_graph(&mut g, params, "text.", &batch.tokens, &batch.mask)?;
    let loss = contrastive_loss_graph(&mut g, img_feat, txt.s, temperature);

    // Cosine matrix for retrieval metrics, recomputed cheaply off-tape.
    let img_n = nets::l2_normalize_rows(&mut g, img_feat);
    let txt_n = nets::l2_normalize_rows(&mut g, txt.s);
    let txt_t = g.transpose2(txt_n);
    let cos = g.matmul(img_n, txt_t);
    let cos_val = g
        .value(cos)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    Ok((g, loss, cos_val))
}

/// Sentence-to-image top-1 retrieval accuracy from a cosine matrix
/// (rows: images, cols: sentences).
fn retrieval_top1(cos: &Array2<f64>) -> f64 {
    let b = cos.ncols();
    let mut hits = 0;
    for j in 0..b {
        let col = cos.column(j);
        let best = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if best == j {
            hits += 1;
        }
    }
    hits as f64 / b as f64
}

/// Train both encoders on matched (frame, caption) pairs from the train
/// split; measure retrieval on the validation split.
pub fn pretrain_encoders(
    train: &[LoadedStory],
    val: &[LoadedStory],
    vocab: &Vocab,
    text_dims: &TextEncoderDims,
    cfg: &PretrainConfig,
) -> Result<PretrainedEncoders> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("pretraining needs train and val stories".into()));
    }
    let mut rng = derive(cfg.seed, "pretrain");
    let img_dims = ImageEncoderDims {
        channels: cfg.image_channels,
        out_dim: text_dims.text_dim,
    };
    let mut params = ParamStore::new();
    params.absorb("text", init_text_encoder(text_dims, &mut rng));
    params.absorb("img", init_image_encoder(&img_dims, train[0].image_size, &mut rng));

    let max_tokens = train[0].captions.len().max(1); // replaced below
    let max_tokens = train
        .iter()
        .flat_map(|st| st.captions.iter())
        .map(|c| c.split_whitespace().count())
        .max()
        .unwrap()
        .max(max_tokens)
        .max(crate::config::MAX_TOKENS);

    let mut pairs: Vec<(usize, usize)> = (0..train.len())
        .flat_map(|si| (0..train[si].captions.len()).map(move |fi| (si, fi)))
        .collect();

    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });

    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut order_rng = derive(cfg.seed ^ epoch as u64, "pretrain_epoch");
        pairs.shuffle(&mut order_rng);
        for chunk in pairs.chunks(cfg.batch_size) {
            if chunk.len() < cfg.batch_size {
                continue;
            }
            let flips: Vec<bool> = (0..2 * chunk.len()).map(|_| order_rng.random::<bool>()).collect();
            let batch = gather_pairs(train, vocab, max_tokens, chunk, Some(&flips))?;
            let (mut g, loss, _) = batch_features(&params, &batch, cfg.temperature)?;
            let loss_val = g.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "contrastive loss became {loss_val} at epoch {epoch}"
                )));
            }
            final_loss = loss_val;
            g.backward(loss);
            opt.step(&mut params, &g.param_grads());
        }
    }

    // Validation: batches of up to 64 val pairs.
    let val_pairs: Vec<(usize, usize)> = (0..val.len())
        .flat_map(|si| (0..val[si].captions.len()).map(move |fi| (si, fi)))
        .collect();
    let mut top1 = Vec::new();
    let mut matched_wins = 0usize;
    let mut matched_total = 0usize;
    for chunk in val_pairs.chunks(64) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = gather_pairs(val, vocab, max_tokens, chunk, None)?;
        let (_, _, cos) = batch_features(&params, &batch, cfg.temperature)?;
        top1.push(retrieval_top1(&cos));
        for i in 0..chunk.len() {
            let mismatched = (i + 1) % chunk.len();
            matched_total += 1;
            if cos[[i, i]] > cos[[i, mismatched]] {
                matched_wins += 1;
            }
        }
    }
    let val_retrieval_top1 = top1.iter().sum::<f64>() / top1.len().max(1) as f64;
    let report = PretrainReport {
        val_retrieval_top1,
        matched_beats_mismatched: matched_wins as f64 / matched_total.max(1) as f64,
        final_loss,
        steps: opt.step_count(),
    };
    let _ = rng;
    Ok(PretrainedEncoders { params, report })
}

/// Mean cosine between matched image/sentence features, scaled by 100.
pub fn cosine_alignment_x100(
    params: &ParamStore,
    images: &Array4<f64>,
    tokens: &Array2<u32>,
    mask: &Array2<f64>,
) -> Result<f64> {
    if images.shape()[0] != tokens.nrows() {
        return Err(Error::shape("cosine_score", "image/sentence counts differ"));
    }
    let mut g = Graph::new();
    let imgs = g.constant(images.clone().into_dyn());
    let img_feat = image_encoder_forward(&mut g, params, "img.", imgs);
    let txt = encode_story_graph(&mut g, params, "text.", tokens, mask)?;
    let img_n = nets::l2_normalize_rows(&mut g, img_feat);
    let txt_n = nets::l2_normalize_rows(&mut g, txt.s);
    let prod = g.mul(img_n, txt_n);
    let per_pair = g.sum_axis(prod, 1);
    let mean = g.mean_all(per_pair);
    Ok(g.scalar_value(mean) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::rng::seeded;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn contrastive_loss_at_init_is_two_ln_b() {
        // Default-dimension encoders, identical uniform similarities at init
        // give exactly ln B per direction.
        let mut rng = seeded(9);
        let dims = ImageEncoderDims {
            channels: [32, 64, 128],
            out_dim: 128,
        };
        let store = init_image_encoder(&dims, 16, &mut rng);
        let b = 64;
        let mut g = Graph::new();
        let mut img_rng = seeded(10);
        let images = g.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[b, 3, 16, 16]),
                (0..b * 3 * 256)
                    .map(|_| rand::Rng::random::<f64>(&mut img_rng))
                    .collect(),
            )
            .unwrap(),
        );
        let img_feat = image_encoder_forward(&mut g, &store, "", images);
        // Random text features, near-orthogonal in 128 dims.
        let mut txt_rng = seeded(11);
        let txt = g.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[b, 128]),
                autodiff::rng::normal_vec(&mut txt_rng, b * 128),
            )
            .unwrap(),
        );
        let loss = contrastive_loss_graph(&mut g, img_feat, txt, 0.1);
        let expect = 2.0 * (b as f64).ln();
        let got = g.scalar_value(loss);
        assert!(
            (got - expect).abs() / expect < 0.15,
            "loss {got} vs 2 ln B = {expect}"
        );
    }

    #[test]
    fn contrastive_gradients_on_two_pairs() {
        let mut rng = seeded(12);
        let text_dims = TextEncoderDims {
            vocab_size: 8,
            token_embed: 3,
            hidden: 3,
            text_dim: 4,
        };
        let img_dims = ImageEncoderDims {
            channels: [2, 3, 4],
            out_dim: 4,
        };
        let mut store = ParamStore::new();
        store.absorb("text", init_text_encoder(&text_dims, &mut rng));
        store.absorb("img", init_image_encoder(&img_dims, 8, &mut rng));

        let tokens = ndarray::array![[1u32, 5, 0], [3, 2, 6]];
        let mask = ndarray::array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        let mut img_rng = seeded(13);
        let images = ArrayD::from_shape_vec(
            IxDyn(&[2, 3, 8, 8]),
            (0..2 * 3 * 64)
                .map(|_| rand::Rng::random::<f64>(&mut img_rng) * 0.8 + 0.1)
                .collect(),
        )
        .unwrap();

        // eps 1e-6: the row normalization of small random features has large
        // curvature, so a coarser step leaves visible truncation error.
        autodiff::check_gradients(
            &store,
            |s, g| {
                let imgs = g.constant(images.clone());
                let img_feat = image_encoder_forward(g, s, "img.", imgs);
                let txt = encode_story_graph(g, s, "text.", &tokens, &mask).unwrap();
                contrastive_loss_graph(g, img_feat, txt.s, 0.1)
            },
            1e-6,
            1e-4,
            1e-8,
        )
        .unwrap();
    }
}
