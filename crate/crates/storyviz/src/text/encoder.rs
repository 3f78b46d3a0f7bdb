//! Recurrent text encoder: per-sentence bi-directional LSTM over token
//! embeddings, projected into the joint dimension D. Produces the sentence
//! vectors `s [N, D]` and word embeddings `w [N, D, L]`, with word columns
//! zeroed at padded positions.

use ndarray::{Array2, Array3, ArrayD, IxDyn};

use autodiff::rng::Prng;
use autodiff::{normal_init, Graph, ParamStore, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TextEncoderDims {
    pub vocab_size: usize,
    pub token_embed: usize,
    pub hidden: usize,
    pub text_dim: usize,
}

pub fn init_text_encoder(dims: &TextEncoderDims, rng: &mut Prng) -> ParamStore {
    let mut store = ParamStore::new();
    let de = dims.token_embed;
    let h = dims.hidden;
    store.insert("embed", normal_init(rng, &[dims.vocab_size, de], 0.05));
    for dir in ["fwd", "bwd"] {
        store.insert(&format!("{dir}.wx"), normal_init(rng, &[de, 4 * h], 0.1));
        store.insert(&format!("{dir}.wh"), normal_init(rng, &[h, 4 * h], 0.1));
        let mut b = ArrayD::zeros(IxDyn(&[4 * h]));
        // Forget-gate bias starts open.
        b.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        store.insert(&format!("{dir}.b"), b);
    }
    store.insert("wproj.w", normal_init(rng, &[2 * h, dims.text_dim], 0.1));
    store.insert("wproj.b", ArrayD::zeros(IxDyn(&[dims.text_dim])));
    store.insert("sproj.w", normal_init(rng, &[2 * h, dims.text_dim], 0.1));
    store.insert("sproj.b", ArrayD::zeros(IxDyn(&[dims.text_dim])));
    store.round_to_f32();
    store
}

/// Infer encoder dimensions from a parameter store (optionally prefixed).
pub fn encoder_dims(store: &ParamStore, prefix: &str) -> TextEncoderDims {
    let embed = store.get(&format!("{prefix}embed")).expect("embed table");
    let wproj = store.get(&format!("{prefix}wproj.w")).expect("word projection");
    TextEncoderDims {
        vocab_size: embed.shape()[0],
        token_embed: embed.shape()[1],
        hidden: wproj.shape()[0] / 2,
        text_dim: wproj.shape()[1],
    }
}

/// On-tape story encoding.
pub struct EncodedStoryVars {
    /// `[N, D]` sentence vectors.
    pub s: Var,
    /// `[N, D, L]` word embeddings, zero at masked positions.
    pub w: Var,
}

/// Sentence vectors and word embeddings as plain arrays (frozen-encoder use).
#[derive(Debug, Clone)]
pub struct TextEncoding {
    pub s: Array2<f64>,
    pub w: Array3<f64>,
    pub mask: Array2<f64>,
}

impl TextEncoding {
    pub fn n_sentences(&self) -> usize {
        self.s.nrows()
    }

    pub fn text_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn max_tokens(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d, l) = (self.s.nrows(), self.s.ncols(), self.w.shape()[2]);
        if self.w.shape() != [n, d, l] || self.mask.shape() != [n, l] {
            return Err(Error::shape("TextEncoding", "inconsistent s/w/mask shapes"));
        }
        for row in self.mask.rows() {
            if row.sum() == 0.0 {
                return Err(Error::AllMasked {
                    op: "TextEncoding",
                });
            }
        }
        for n_i in 0..n {
            for l_i in 0..l {
                if self.mask[[n_i, l_i]] == 0.0 {
                    for d_i in 0..d {
                        if self.w[[n_i, d_i, l_i]] != 0.0 {
                            return Err(Error::Dataset(
                                "word embeddings non-zero at masked position".into(),
                            ));
                        }
                    }
                }
            }
        }
        if !self.s.iter().all(|x| x.is_finite()) || !self.w.iter().all(|x| x.is_finite()) {
            return Err(Error::Dataset("non-finite text encoding".into()));
        }
        Ok(())
    }
}

fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
) -> (Var, Var) {
    let xg = g.matmul(x, wx);
    let hg = g.matmul(h, wh);
    let sum = g.add(xg, hg);
    let gates = g.badd(sum, b);
    let i = g.slice(gates, 1, 0, hidden);
    let i = g.sigmoid(i);
    let f = g.slice(gates, 1, hidden, hidden);
    let f = g.sigmoid(f);
    let gg = g.slice(gates, 1, 2 * hidden, hidden);
    let gg = g.tanh(gg);
    let o = g.slice(gates, 1, 3 * hidden, hidden);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c);
    let ig = g.mul(i, gg);
    let c_new = g.add(fc, ig);
    let ct = g.tanh(c_new);
    let h_new = g.mul(o, ct);
    (h_new, c_new)
}

/// Encode one story of `N` token rows on the tape.
///
/// The recurrences only visit real tokens (the mask must be a contiguous
/// prefix), so values stored at padded positions can never influence the
/// output. The sentence vector projects the concatenation of each
/// direction's terminal state; the backward run starts at the last real
/// token.
pub fn encode_story_graph(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    tokens: &Array2<u32>,
    mask: &Array2<f64>,
) -> Result<EncodedStoryVars> {
    let (n, l) = (tokens.nrows(), tokens.ncols());
    if mask.shape() != [n, l] {
        return Err(Error::shape("encode_story", "tokens/mask shapes differ"));
    }
    let dims = encoder_dims(store, prefix);
    let h = dims.hidden;
    let d = dims.text_dim;

    let p = |g: &mut Graph, name: &str| -> Var { g.param(store, &format!("{prefix}{name}")) };
    let embed = p(g, "embed");
    let wproj_w = p(g, "wproj.w");
    let wproj_b = p(g, "wproj.b");
    let sproj_w = p(g, "sproj.w");
    let sproj_b = p(g, "sproj.b");
    let fwd = (p(g, "fwd.wx"), p(g, "fwd.wh"), p(g, "fwd.b"));
    let bwd = (p(g, "bwd.wx"), p(g, "bwd.wh"), p(g, "bwd.b"));

    let mut sent_vecs = Vec::with_capacity(n);
    let mut word_mats = Vec::with_capacity(n);
    for row in 0..n {
        let n_real = mask.row(row).iter().filter(|&&m| m != 0.0).count();
        if n_real == 0 {
            return Err(Error::AllMasked {
                op: "encode_story",
            });
        }
        for t in 0..l {
            let expect = if t < n_real { 1.0 } else { 0.0 };
            if mask[[row, t]] != expect {
                return Err(Error::shape(
                    "encode_story",
                    format!("mask row {row} is not a right-padded prefix"),
                ));
            }
        }
        let ids: Vec<usize> = (0..n_real).map(|t| tokens[[row, t]] as usize).collect();
        let embeds = g.index_select(embed, &ids); // [n_real, De]

        let zero_h = g.constant(ArrayD::zeros(IxDyn(&[1, h])));
        let run = |g: &mut Graph, order: Vec<usize>, cell: &(Var, Var, Var)| -> Vec<Var> {
            let mut hs = vec![zero_h; n_real];
            let (mut hv, mut cv) = (zero_h, zero_h);
            for &t in &order {
                let x = g.slice(embeds, 0, t, 1);
                let (h_new, c_new) = lstm_cell(g, x, hv, cv, cell.0, cell.1, cell.2, h);
                hs[t] = h_new;
                hv = h_new;
                cv = c_new;
            }
            hs
        };
        let h_f = run(g, (0..n_real).collect(), &fwd);
        let h_b = run(g, (0..n_real).rev().collect(), &bwd);

        // Word states: concat per position, project to D, pad with zeros.
        let word_rows: Vec<Var> = (0..n_real)
            .map(|t| g.concat(1, &[h_f[t], h_b[t]]))
            .collect();
        let stacked = g.concat(0, &word_rows); // [n_real, 2H]
        let words = g.linear(stacked, wproj_w, wproj_b); // [n_real, D]
        let words_padded = if n_real < l {
            let zeros = g.constant(ArrayD::zeros(IxDyn(&[l - n_real, d])));
            g.concat(0, &[words, zeros])
        } else {
            words
        };
        word_mats.push(g.reshape(words_padded, &[1, l, d]));

        let terminal = g.concat(1, &[h_f[n_real - 1], h_b[0]]);
        sent_vecs.push(g.linear(terminal, sproj_w, sproj_b)); // [1, D]
    }

    let s = g.concat(0, &sent_vecs); // [N, D]
    let w_nld = g.concat(0, &word_mats); // [N, L, D]
    let w = g.permute(w_nld, &[0, 2, 1]); // [N, D, L]
    Ok(EncodedStoryVars { s, w })
}

/// Frozen-encoder convenience: run the graph and copy the arrays out.
pub fn encode_story(
    store: &ParamStore,
    prefix: &str,
    tokens: &Array2<u32>,
    mask: &Array2<f64>,
) -> Result<TextEncoding> {
    let mut g = Graph::new();
    let out = encode_story_graph(&mut g, store, prefix, tokens, mask)?;
    let s = g
        .value(out.s)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let w = g
        .value(out.w)
        .clone()
        .into_dimensionality::<ndarray::Ix3>()
        .unwrap();
    let enc = TextEncoding {
        s,
        w,
        mask: mask.clone(),
    };
    enc.validate()?;
    Ok(enc)
}

/// Tokenize a story's captions into the `[N, L]` id/mask pair.
pub fn story_tokens(
    captions: &[String],
    vocab: &super::Vocab,
    max_tokens: usize,
) -> Result<(Array2<u32>, Array2<f64>)> {
    let n = captions.len();
    let mut tokens = Array2::zeros((n, max_tokens));
    let mut mask = Array2::zeros((n, max_tokens));
    for (i, caption) in captions.iter().enumerate() {
        let (ids, m) = super::tokenize(caption, vocab, max_tokens)?;
        for (j, (&id, &mm)) in ids.iter().zip(&m).enumerate() {
            tokens[[i, j]] = id;
            mask[[i, j]] = mm;
        }
    }
    Ok((tokens, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::rng::seeded;
    use ndarray::array;

    fn tiny_dims() -> TextEncoderDims {
        TextEncoderDims {
            vocab_size: 12,
            token_embed: 6,
            hidden: 5,
            text_dim: 7,
        }
    }

    #[test]
    fn output_shapes_match_contract() {
        let dims = TextEncoderDims {
            vocab_size: 40,
            token_embed: 64,
            hidden: 64,
            text_dim: 128,
        };
        let mut rng = seeded(1);
        let store = init_text_encoder(&dims, &mut rng);
        let tokens = Array2::from_elem((5, 12), 3u32);
        let mut mask = Array2::zeros((5, 12));
        for r in 0..5 {
            for t in 0..(r + 3) {
                mask[[r, t]] = 1.0;
            }
        }
        let enc = encode_story(&store, "", &tokens, &mask).unwrap();
        assert_eq!(enc.s.shape(), &[5, 128]);
        assert_eq!(enc.w.shape(), &[5, 128, 12]);
        enc.validate().unwrap();
    }

    #[test]
    fn pad_region_token_ids_are_ignored() {
        let dims = tiny_dims();
        let mut rng = seeded(2);
        let store = init_text_encoder(&dims, &mut rng);
        let mask = array![[1.0, 1.0, 1.0, 0.0, 0.0]];
        let a_tokens = array![[2u32, 5, 7, 0, 0]];
        let b_tokens = array![[2u32, 5, 7, 11, 4]];
        let a = encode_story(&store, "", &a_tokens, &mask).unwrap();
        let b = encode_story(&store, "", &b_tokens, &mask).unwrap();
        assert_eq!(a.s, b.s);
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn zero_params_reduce_to_projection_bias() {
        let dims = tiny_dims();
        let mut rng = seeded(3);
        let mut store = init_text_encoder(&dims, &mut rng);
        for name in [
            "embed", "fwd.wx", "fwd.wh", "fwd.b", "bwd.wx", "bwd.wh", "bwd.b", "wproj.w",
            "sproj.w",
        ] {
            let z = ArrayD::zeros(store.get(name).unwrap().raw_dim());
            store.set(name, z);
        }
        let mut wb = ArrayD::zeros(IxDyn(&[7]));
        wb.fill(0.25);
        store.set("wproj.b", wb);
        let mut sb = ArrayD::zeros(IxDyn(&[7]));
        sb.fill(-0.5);
        store.set("sproj.b", sb);

        let tokens = array![[1u32, 2, 3, 0], [4, 5, 0, 0]];
        let mask = array![[1.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 0.0]];
        let enc = encode_story(&store, "", &tokens, &mask).unwrap();
        for &v in enc.s.iter() {
            assert_eq!(v, -0.5);
        }
        for n in 0..2 {
            for t in 0..4 {
                for d in 0..7 {
                    let want = if mask[[n, t]] != 0.0 { 0.25 } else { 0.0 };
                    assert_eq!(enc.w[[n, d, t]], want);
                }
            }
        }
    }

    #[test]
    fn all_pad_sentence_is_rejected() {
        let dims = tiny_dims();
        let mut rng = seeded(4);
        let store = init_text_encoder(&dims, &mut rng);
        let tokens = array![[0u32, 0, 0]];
        let mask = array![[0.0, 0.0, 0.0]];
        assert!(encode_story(&store, "", &tokens, &mask).is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        // Tiny instance, every parameter, 64-bit central differences.
        let dims = TextEncoderDims {
            vocab_size: 6,
            token_embed: 3,
            hidden: 3,
            text_dim: 4,
        };
        let mut rng = seeded(5);
        let store = init_text_encoder(&dims, &mut rng);
        let tokens = array![[1u32, 4, 0], [2, 3, 5]];
        let mask = array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        let report = autodiff::check_gradients(
            &store,
            |s, g| {
                let out = encode_story_graph(g, s, "", &tokens, &mask).unwrap();
                let ssum = g.sum_all(out.s);
                let w2 = g.mul(out.w, out.w);
                let wsum = g.sum_all(w2);
                g.add(ssum, wsum)
            },
            1e-5,
            1e-4,
            1e-8,
        )
        .unwrap();
        assert!(report.checked > 100);
    }
}
