//! The three word-level mechanisms as standalone, differentiable, mask-aware
//! tensor operations:
//!
//! * [`enrich_sentences`] — rebuild each sentence vector as a softmax-weighted
//!   convex combination of every word embedding in the story.
//! * [`extended_spatial_attention`] — attention from every spatial location of
//!   every frame to every word of every sentence.
//! * [`fuse_features`] — word-by-pixel inner-product volumes consumed by the
//!   discriminator heads.
//!
//! Flattening order is sentence-major everywhere: the word axis of length
//! `L*N` places sentence `n`'s word `l` at column `n*L + l`, and the spatial
//! axis of length `H*W*N` places frame `n`'s pixel `(y, x)` at row
//! `(n*H + y)*W + x`.

use ndarray::{Array1, Array2};

use autodiff::{Graph, Var};

use crate::error::{Error, Result};

/// Correlation weights and enriched sentence vectors.
pub struct EnrichedSentences {
    /// `[N, L*N]`, each row a probability vector over unmasked word slots.
    pub sigma: Var,
    /// `[N, D]` enriched sentence vectors.
    pub s_prime: Var,
}

/// Attention logits, weights, and word-weighted visual features.
pub struct AttentionResult {
    /// `[H*W*N, L*N]` raw logits `a`.
    pub logits: Var,
    /// `[H*W*N, L*N]` row-stochastic weights.
    pub beta: Var,
    /// `[D, H*W*N]` word-weighted features.
    pub weighted_flat: Var,
    /// `[N, D, H, W]` the same features shaped for injection.
    pub weighted: Var,
}

/// Which words each spatial location may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionScope {
    /// Every location sees every word in the story.
    Extended,
    /// Locations of frame `n` see only sentence `n`'s words.
    PerSentence,
}

/// Masked softmax over the last axis of a 2-D logits node.
///
/// Masked entries are exactly zero and their logit values are never read.
pub fn masked_softmax(g: &mut Graph, logits: Var, mask: &Array2<f64>) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("masked_softmax", format!("expected rank 2, got {shape:?}")));
    }
    if mask.shape() != [shape[0], shape[1]] {
        return Err(Error::shape(
            "masked_softmax",
            format!("logits {shape:?} vs mask {:?}", mask.shape()),
        ));
    }
    for (i, row) in mask.rows().into_iter().enumerate() {
        if row.iter().all(|&m| m == 0.0) {
            let _ = i;
            return Err(Error::AllMasked {
                op: "masked_softmax",
            });
        }
    }
    Ok(g.masked_softmax_rows(logits, mask))
}

/// Flatten `[N, L]` mask to the sentence-major `[L*N]` word axis.
pub fn flatten_word_mask(mask: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(mask.iter().copied())
}

/// Reshape word embeddings `[N, D, L]` to the shared `[D, L*N]` layout.
fn words_flat(g: &mut Graph, w: Var) -> Var {
    let shape = g.shape(w).to_vec();
    let (n, d, l) = (shape[0], shape[1], shape[2]);
    let w_dnl = g.permute(w, &[1, 0, 2]); // [D, N, L]
    g.reshape(w_dnl, &[d, n * l])
}

/// Build the enriched sentence representation.
///
/// `sigma = softmax(s w')` row-wise over unmasked word slots, then
/// `s' = sigma (w')^T`. Differentiable in `s` and `w`; invariant to values
/// stored at masked positions.
pub fn enrich_sentences(
    g: &mut Graph,
    s: Var,
    w: Var,
    mask: &Array2<f64>,
) -> Result<EnrichedSentences> {
    let s_shape = g.shape(s).to_vec();
    let w_shape = g.shape(w).to_vec();
    if s_shape.len() != 2 || w_shape.len() != 3 {
        return Err(Error::shape(
            "enrich_sentences",
            format!("s {s_shape:?}, w {w_shape:?}"),
        ));
    }
    let (n, d) = (s_shape[0], s_shape[1]);
    let l = w_shape[2];
    if w_shape != [n, d, l] {
        return Err(Error::shape(
            "enrich_sentences",
            format!("w {w_shape:?} inconsistent with s [{n}, {d}]"),
        ));
    }
    if mask.shape() != [n, l] {
        return Err(Error::shape(
            "enrich_sentences",
            format!("mask {:?} expected [{n}, {l}]", mask.shape()),
        ));
    }

    let w_flat = words_flat(g, w); // [D, L*N]
    let logits = g.matmul(s, w_flat); // [N, L*N]

    let word_mask = flatten_word_mask(mask);
    let mut row_mask = Array2::zeros((n, n * l));
    for i in 0..n {
        row_mask.row_mut(i).assign(&word_mask);
    }
    let sigma = masked_softmax(g, logits, &row_mask)?;
    let w_flat_t = g.transpose2(w_flat);
    let s_prime = g.matmul(sigma, w_flat_t); // [N, D]
    Ok(EnrichedSentences { sigma, s_prime })
}

/// Word attention over the whole story's spatial features.
///
/// `proj` is the learned `[C, D]` map into the joint space. `a = v'^T w'`,
/// `beta = softmax(a)` over the word axis, `v_w = w' beta^T`.
pub fn extended_spatial_attention(
    g: &mut Graph,
    v: Var,
    w: Var,
    mask: &Array2<f64>,
    proj: Var,
    scope: AttentionScope,
) -> Result<AttentionResult> {
    let v_shape = g.shape(v).to_vec();
    let w_shape = g.shape(w).to_vec();
    let p_shape = g.shape(proj).to_vec();
    if v_shape.len() != 4 || w_shape.len() != 3 {
        return Err(Error::shape(
            "extended_spatial_attention",
            format!("v {v_shape:?}, w {w_shape:?}"),
        ));
    }
    let (n, c, h, wd) = (v_shape[0], v_shape[1], v_shape[2], v_shape[3]);
    let (d, l) = (w_shape[1], w_shape[2]);
    if w_shape[0] != n {
        return Err(Error::shape(
            "extended_spatial_attention",
            format!("story sizes differ: v has {n}, w has {}", w_shape[0]),
        ));
    }
    if p_shape != [c, d] {
        return Err(Error::shape(
            "extended_spatial_attention",
            format!("proj {p_shape:?} expected [{c}, {d}]"),
        ));
    }
    if mask.shape() != [n, l] {
        return Err(Error::shape(
            "extended_spatial_attention",
            format!("mask {:?} expected [{n}, {l}]", mask.shape()),
        ));
    }

    // v' columns: projected feature of each (frame, pixel), sentence-major.
    let v_perm = g.permute(v, &[0, 2, 3, 1]); // [N, H, W, C]
    let v_rows = g.reshape(v_perm, &[n * h * wd, c]);
    let v_proj = g.matmul(v_rows, proj); // [HWN, D] = v'^T
    let w_flat = words_flat(g, w); // [D, L*N]
    let logits = g.matmul(v_proj, w_flat); // [HWN, LN]

    let word_mask = flatten_word_mask(mask);
    let rows = n * h * wd;
    let mut row_mask = Array2::zeros((rows, n * l));
    for r in 0..rows {
        match scope {
            AttentionScope::Extended => row_mask.row_mut(r).assign(&word_mask),
            AttentionScope::PerSentence => {
                let frame = r / (h * wd);
                for j in 0..l {
                    row_mask[[r, frame * l + j]] = word_mask[frame * l + j];
                }
            }
        }
    }
    let beta = masked_softmax(g, logits, &row_mask)?;

    let beta_t = g.transpose2(beta); // [LN, HWN]
    let weighted_flat = g.matmul(w_flat, beta_t); // [D, HWN]
    let wf_t = g.transpose2(weighted_flat); // [HWN, D]
    let w_nhwd = g.reshape(wf_t, &[n, h, wd, d]);
    let weighted = g.permute(w_nhwd, &[0, 3, 1, 2]); // [N, D, H, W]
    Ok(AttentionResult {
        logits,
        beta,
        weighted_flat,
        weighted,
    })
}

/// Fusion features for one item: `F = reshape(w^T v')` with masked word
/// channels zeroed. `v: [C, H, W]`, `words: [D, L_total]`, result
/// `[L_total, H, W]`.
pub fn fuse_features(
    g: &mut Graph,
    v: Var,
    words: Var,
    word_mask: &Array1<f64>,
    proj: Var,
) -> Result<Var> {
    let v_shape = g.shape(v).to_vec();
    let w_shape = g.shape(words).to_vec();
    let p_shape = g.shape(proj).to_vec();
    if v_shape.len() != 3 || w_shape.len() != 2 {
        return Err(Error::shape(
            "fuse_features",
            format!("v {v_shape:?}, words {w_shape:?}"),
        ));
    }
    let (c, h, wd) = (v_shape[0], v_shape[1], v_shape[2]);
    let (d, l_total) = (w_shape[0], w_shape[1]);
    if p_shape != [c, d] {
        return Err(Error::shape(
            "fuse_features",
            format!("proj {p_shape:?} expected [{c}, {d}]"),
        ));
    }
    if word_mask.len() != l_total {
        return Err(Error::shape(
            "fuse_features",
            format!("mask len {} expected {l_total}", word_mask.len()),
        ));
    }

    let v_perm = g.permute(v, &[1, 2, 0]); // [H, W, C]
    let v_rows = g.reshape(v_perm, &[h * wd, c]);
    let v_proj = g.matmul(v_rows, proj); // [HW, D]
    let w_t = g.transpose2(words); // [L, D]
    let v_proj_t = g.transpose2(v_proj); // [D, HW]
    let f = g.matmul(w_t, v_proj_t); // [L, HW]

    // Zero channels of masked words.
    let mask_col = g.constant(
        word_mask
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[l_total, 1]))
            .unwrap(),
    );
    let f = g.bmul(f, mask_col);
    Ok(g.reshape(f, &[l_total, h, wd]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::rng::{normal_vec, seeded};
    use autodiff::ParamStore;
    use ndarray::{array, ArrayD, IxDyn};

    fn param(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) {
        let mut rng = seeded(seed);
        let n: usize = shape.iter().product();
        store.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(shape), normal_vec(&mut rng, n)).unwrap(),
        );
    }

    #[test]
    fn enrich_worked_example() {
        // N=2, L=1, D=2; word columns are unit vectors.
        let mut g = Graph::new();
        let s = g.input(array![[1.0, 0.0], [0.0, 1.0]].into_dyn());
        let w = g.input(
            ArrayD::from_shape_vec(IxDyn(&[2, 2, 1]), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let mask = array![[1.0], [1.0]];
        let out = enrich_sentences(&mut g, s, w, &mask).unwrap();
        let sigma = g.value(out.sigma);
        let sp = g.value(out.s_prime);
        let e = std::f64::consts::E;
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        assert!((sigma[[0, 0]] - hi).abs() < 1e-4);
        assert!((sigma[[0, 1]] - lo).abs() < 1e-4);
        assert!((sp[[0, 0]] - hi).abs() < 1e-4);
        assert!((sp[[0, 1]] - lo).abs() < 1e-4);
        // Row 2 is symmetric.
        assert!((sigma[[1, 1]] - hi).abs() < 1e-4);
    }

    #[test]
    fn enrich_identical_words_collapse_to_that_vector() {
        // All word columns equal u: every s' row must equal u regardless of s.
        let n = 3;
        let d = 4;
        let l = 2;
        let u = [0.3, -1.2, 0.05, 2.0];
        let mut w = ArrayD::zeros(IxDyn(&[n, d, l]));
        for ni in 0..n {
            for di in 0..d {
                for li in 0..l {
                    w[[ni, di, li]] = u[di];
                }
            }
        }
        let mut rng = seeded(20);
        let s_data = normal_vec(&mut rng, n * d);
        let mut g = Graph::new();
        let s = g.input(ArrayD::from_shape_vec(IxDyn(&[n, d]), s_data).unwrap());
        let w = g.input(w);
        let mask = Array2::ones((n, l));
        let out = enrich_sentences(&mut g, s, w, &mask).unwrap();
        let sp = g.value(out.s_prime);
        for ni in 0..n {
            for di in 0..d {
                assert!((sp[[ni, di]] - u[di]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enrich_ignores_masked_embeddings() {
        let n = 2;
        let d = 3;
        let l = 4;
        let mut rng = seeded(21);
        let s_data = normal_vec(&mut rng, n * d);
        let w_data = normal_vec(&mut rng, n * d * l);
        let mask = array![[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 0.0]];

        let run = |w_data: &[f64]| {
            let mut g = Graph::new();
            let s = g.input(ArrayD::from_shape_vec(IxDyn(&[n, d]), s_data.clone()).unwrap());
            let w = g.input(ArrayD::from_shape_vec(IxDyn(&[n, d, l]), w_data.to_vec()).unwrap());
            let out = enrich_sentences(&mut g, s, w, &mask).unwrap();
            (
                g.value(out.sigma).clone(),
                g.value(out.s_prime).clone(),
            )
        };
        let (sig_a, sp_a) = run(&w_data);
        // Randomize embeddings at masked positions.
        let mut w_b = ArrayD::from_shape_vec(IxDyn(&[n, d, l]), w_data.clone()).unwrap();
        for ni in 0..n {
            for li in 0..l {
                if mask[[ni, li]] == 0.0 {
                    for di in 0..d {
                        w_b[[ni, di, li]] = 1e6 * ((ni + di + li) as f64 + 0.5);
                    }
                }
            }
        }
        let (sig_b, sp_b) = run(w_b.as_slice().unwrap());
        assert_eq!(sig_a, sig_b);
        assert_eq!(sp_a, sp_b);
    }

    #[test]
    fn sigma_rows_are_stochastic_and_zero_at_masked() {
        let mut rng = seeded(22);
        for trial in 0..50 {
            let (n, d, l) = (3, 4, 5);
            let mut mask = Array2::zeros((n, l));
            for r in 0..n {
                let real = 1 + (trial + r) % l;
                for t in 0..real {
                    mask[[r, t]] = 1.0;
                }
            }
            let mut g = Graph::new();
            let s = g.input(ArrayD::from_shape_vec(IxDyn(&[n, d]), normal_vec(&mut rng, n * d)).unwrap());
            let w = g.input(
                ArrayD::from_shape_vec(IxDyn(&[n, d, l]), normal_vec(&mut rng, n * d * l)).unwrap(),
            );
            let out = enrich_sentences(&mut g, s, w, &mask).unwrap();
            let sigma = g.value(out.sigma);
            let flat = flatten_word_mask(&mask);
            for r in 0..n {
                let mut sum = 0.0;
                for jcol in 0..n * l {
                    if flat[jcol] == 0.0 {
                        assert_eq!(sigma[[r, jcol]], 0.0);
                    }
                    sum += sigma[[r, jcol]];
                }
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn enrich_gradients() {
        let mut store = ParamStore::new();
        param(&mut store, "s", &[2, 4], 30);
        param(&mut store, "w", &[2, 4, 3], 31);
        let mask = array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        autodiff::check_gradients(
            &store,
            |st, g| {
                let s = g.param(st, "s");
                let w = g.param(st, "w");
                let out = enrich_sentences(g, s, w, &mask).unwrap();
                let sig2 = g.mul(out.sigma, out.sigma);
                let a = g.sum_all(sig2);
                let sp3 = g.mul(out.s_prime, out.s_prime);
                let b = g.sum_all(sp3);
                g.add(a, b)
            },
            1e-5,
            1e-4,
            1e-8,
        )
        .unwrap();
    }

    #[test]
    fn attention_uniform_case() {
        // One spatial location, two unmasked words with equal logits.
        let (n, c, h, w_sp, d, l) = (1, 2, 1, 1, 2, 2);
        let mut g = Graph::new();
        let v = g.input(ArrayD::zeros(IxDyn(&[n, c, h, w_sp])));
        let mut w_data = ArrayD::zeros(IxDyn(&[n, d, l]));
        w_data[[0, 0, 0]] = 1.0;
        w_data[[0, 1, 1]] = 1.0;
        let w = g.input(w_data);
        let proj = g.input(ArrayD::zeros(IxDyn(&[c, d])));
        let mask = Array2::ones((n, l));
        let out =
            extended_spatial_attention(&mut g, v, w, &mask, proj, AttentionScope::Extended)
                .unwrap();
        let beta = g.value(out.beta);
        assert!((beta[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((beta[[0, 1]] - 0.5).abs() < 1e-12);
        let vw = g.value(out.weighted_flat);
        // Mean of word vectors [1,0] and [0,1].
        assert!((vw[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((vw[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attention_logit_example() {
        // Logits [1, 0] give weights [e/(e+1), 1/(e+1)].
        let (n, c, h, w_sp, d, l) = (1, 1, 1, 1, 2, 2);
        let mut g = Graph::new();
        let v = g.input(ArrayD::from_elem(IxDyn(&[n, c, h, w_sp]), 1.0));
        let mut w_data = ArrayD::zeros(IxDyn(&[n, d, l]));
        w_data[[0, 0, 0]] = 1.0; // word 0 logit = 1
        w_data[[0, 0, 1]] = 0.0; // word 1 logit = 0
        let w = g.input(w_data);
        let proj = g.input(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0, 0.0]).unwrap());
        let mask = Array2::ones((n, l));
        let out =
            extended_spatial_attention(&mut g, v, w, &mask, proj, AttentionScope::Extended)
                .unwrap();
        let beta = g.value(out.beta);
        let e = std::f64::consts::E;
        assert!((beta[[0, 0]] - e / (e + 1.0)).abs() < 1e-4);
        assert!((beta[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-4);
    }

    #[test]
    fn attention_reaches_across_frames() {
        // Sentence 2's words carry a marker dimension; frame 0 locations must
        // put nonzero weight on them under the extended scope and zero under
        // the per-sentence scope.
        let (n, c, h, w_sp, d, l) = (3, 2, 2, 2, 3, 2);
        let mut rng = seeded(40);
        let v_data =
            ArrayD::from_shape_vec(IxDyn(&[n, c, h, w_sp]), normal_vec(&mut rng, n * c * h * w_sp))
                .unwrap();
        let mut w_data = ArrayD::zeros(IxDyn(&[n, d, l]));
        for ni in 0..n {
            for li in 0..l {
                w_data[[ni, 0, li]] = 0.1 * (ni as f64 + 1.0);
                if ni == 2 {
                    w_data[[ni, 2, li]] = 5.0; // marker
                }
            }
        }
        let proj_data = ArrayD::from_shape_vec(
            IxDyn(&[c, d]),
            normal_vec(&mut rng, c * d),
        )
        .unwrap();
        let mask = Array2::ones((n, l));

        for (scope, expect_cross) in [
            (AttentionScope::Extended, true),
            (AttentionScope::PerSentence, false),
        ] {
            let mut g = Graph::new();
            let v = g.input(v_data.clone());
            let w = g.input(w_data.clone());
            let proj = g.input(proj_data.clone());
            let out = extended_spatial_attention(&mut g, v, w, &mask, proj, scope).unwrap();
            let beta = g.value(out.beta);
            // Frame 0 rows are 0..h*w_sp; sentence 2 columns are 2*l..3*l.
            let mut cross_mass = 0.0;
            for r in 0..h * w_sp {
                for jcol in 2 * l..3 * l {
                    cross_mass += beta[[r, jcol]];
                }
            }
            if expect_cross {
                assert!(cross_mass > 0.0, "extended attention must reach frame 3's words");
                for r in 0..h * w_sp {
                    for jcol in 2 * l..3 * l {
                        assert!(beta[[r, jcol]] > 0.0, "no structural zeros for unmasked words");
                    }
                }
            } else {
                assert_eq!(cross_mass, 0.0, "per-sentence attention must not cross frames");
            }
        }
    }

    #[test]
    fn attention_gradients() {
        let mut store = ParamStore::new();
        param(&mut store, "v", &[2, 3, 2, 2], 41);
        param(&mut store, "w", &[2, 4, 3], 42);
        param(&mut store, "proj", &[3, 4], 43);
        let mask = array![[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]];
        for scope in [AttentionScope::Extended, AttentionScope::PerSentence] {
            autodiff::check_gradients(
                &store,
                |st, g| {
                    let v = g.param(st, "v");
                    let w = g.param(st, "w");
                    let proj = g.param(st, "proj");
                    let out = extended_spatial_attention(g, v, w, &mask, proj, scope).unwrap();
                    let b2 = g.mul(out.beta, out.beta);
                    let a = g.sum_all(b2);
                    let v3 = g.mul(out.weighted, out.weighted);
                    let b = g.sum_all(v3);
                    g.add(a, b)
                },
                1e-5,
                1e-4,
                1e-8,
            )
            .unwrap();
        }
    }

    #[test]
    fn fusion_scalar_example() {
        // D=1, L=2, H=W=1, words [2, 3], projected feature 5 -> F = [10, 15].
        let mut g = Graph::new();
        let v = g.input(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 5.0));
        let words = g.input(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![2.0, 3.0]).unwrap());
        let proj = g.input(ArrayD::from_elem(IxDyn(&[1, 1]), 1.0));
        let mask = Array1::ones(2);
        let f = fuse_features(&mut g, v, words, &mask, proj).unwrap();
        let fv = g.value(f);
        assert_eq!(fv[[0, 0, 0]], 10.0);
        assert_eq!(fv[[1, 0, 0]], 15.0);
    }

    #[test]
    fn fusion_bilinearity() {
        let mut rng = seeded(50);
        let (c, h, w_sp, d, l) = (3, 2, 2, 4, 5);
        let v_data = normal_vec(&mut rng, c * h * w_sp);
        let w_data = normal_vec(&mut rng, d * l);
        let p_data = normal_vec(&mut rng, c * d);
        let mask = Array1::ones(l);

        let run = |scale_v: f64| {
            let mut g = Graph::new();
            let v = g.input(
                ArrayD::from_shape_vec(
                    IxDyn(&[c, h, w_sp]),
                    v_data.iter().map(|x| x * scale_v).collect(),
                )
                .unwrap(),
            );
            let words = g.input(ArrayD::from_shape_vec(IxDyn(&[d, l]), w_data.clone()).unwrap());
            let proj = g.input(ArrayD::from_shape_vec(IxDyn(&[c, d]), p_data.clone()).unwrap());
            let f = fuse_features(&mut g, v, words, &mask, proj).unwrap();
            g.value(f).clone()
        };
        let f1 = run(1.0);
        let f2 = run(2.0);
        let f0 = run(0.0);
        assert!(f0.iter().all(|&x| x == 0.0));
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_masks_word_channels() {
        let mut rng = seeded(51);
        let (c, h, w_sp, d, l) = (2, 2, 2, 3, 4);
        let mut g = Graph::new();
        let v = g.input(
            ArrayD::from_shape_vec(IxDyn(&[c, h, w_sp]), normal_vec(&mut rng, c * h * w_sp))
                .unwrap(),
        );
        let words = g.input(ArrayD::from_shape_vec(IxDyn(&[d, l]), normal_vec(&mut rng, d * l)).unwrap());
        let proj = g.input(ArrayD::from_shape_vec(IxDyn(&[c, d]), normal_vec(&mut rng, c * d)).unwrap());
        let mask = Array1::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let f = fuse_features(&mut g, v, words, &mask, proj).unwrap();
        let fv = g.value(f);
        for li in [1usize, 3] {
            for y in 0..h {
                for x in 0..w_sp {
                    assert_eq!(fv[[li, y, x]], 0.0);
                }
            }
        }
    }

    #[test]
    fn fusion_gradients() {
        let mut store = ParamStore::new();
        param(&mut store, "v", &[3, 2, 2], 52);
        param(&mut store, "w", &[4, 3], 53);
        param(&mut store, "proj", &[3, 4], 54);
        let mask = Array1::from_vec(vec![1.0, 1.0, 0.0]);
        autodiff::check_gradients(
            &store,
            |st, g| {
                let v = g.param(st, "v");
                let w = g.param(st, "w");
                let proj = g.param(st, "proj");
                let f = fuse_features(g, v, w, &mask, proj).unwrap();
                let f2 = g.mul(f, f);
                g.sum_all(f2)
            },
            1e-5,
            1e-4,
            1e-8,
        )
        .unwrap();
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::new();
        let s = g.input(ArrayD::zeros(IxDyn(&[2, 3])));
        let w = g.input(ArrayD::zeros(IxDyn(&[2, 4, 5]))); // D mismatch
        let mask = Array2::ones((2, 5));
        assert!(enrich_sentences(&mut g, s, w, &mask).is_err());

        let mut g = Graph::new();
        let z = g.input(ArrayD::zeros(IxDyn(&[2, 2])));
        let bad_mask = Array2::ones((3, 2));
        assert!(masked_softmax(&mut g, z, &bad_mask).is_err());

        let mut g = Graph::new();
        let z = g.input(ArrayD::zeros(IxDyn(&[2, 2])));
        let empty_row = ndarray::array![[1.0, 1.0], [0.0, 0.0]];
        assert!(matches!(
            masked_softmax(&mut g, z, &empty_row),
            Err(Error::AllMasked { .. })
        ));
    }
}
