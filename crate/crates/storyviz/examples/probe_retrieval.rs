//! Scratch probe: where do retrieval errors come from?
use ndarray::{Array2, Array4, Axis};
use storyviz::config::ModelConfig;
use storyviz::data::{load_manifest, load_split, SplitName};
use storyviz::pipeline::text_dims_for;
use storyviz::text::{
    encode_story, image_encoder_forward, pretrain_encoders, story_tokens, PretrainConfig, Vocab,
};

fn main() {
    let data = std::path::PathBuf::from("/tmp/ds_small");
    let manifest = load_manifest(&data).unwrap();
    let vocab = Vocab::load(&data.join(&manifest.vocab_path)).unwrap();
    let train = load_split(&data, &manifest, SplitName::Train).unwrap();
    let val = load_split(&data, &manifest, SplitName::Val).unwrap();
    let model = ModelConfig::small();
    let dims = text_dims_for(&data, &model).unwrap();
    let cfg = PretrainConfig { epochs: 60, learning_rate: 5e-4, seed: 7, ..Default::default() };
    let out = pretrain_encoders(&train, &val, &vocab, &dims, &cfg).unwrap();
    let params = out.params;

    // All val pairs.
    let mut img_feats: Vec<Vec<f64>> = Vec::new();
    let mut txt_feats: Vec<Vec<f64>> = Vec::new();
    let mut story_of: Vec<usize> = Vec::new();
    for (si, st) in val.iter().enumerate() {
        let (tokens, mask) = story_tokens(&st.captions, &vocab, manifest.max_tokens).unwrap();
        let enc = encode_story(&params, "text.", &tokens, &mask).unwrap();
        let s = st.image_size;
        let mut images = Array4::zeros((5, 3, s, s));
        for fi in 0..5 {
            images.index_axis_mut(Axis(0), fi).assign(&st.frame_f64(fi));
        }
        let mut g = autodiff::Graph::new();
        let iv = g.constant(images.into_dyn());
        let feat = image_encoder_forward(&mut g, &params, "img.", iv);
        let fv = g.value(feat).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        for fi in 0..5 {
            let norm = |v: Vec<f64>| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
            };
            img_feats.push(norm(fv.row(fi).to_vec()));
            txt_feats.push(norm(enc.s.row(fi).to_vec()));
            story_of.push(si);
        }
    }
    let n = img_feats.len();
    let mut cos = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            cos[[i, j]] = img_feats[i].iter().zip(&txt_feats[j]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    // Global retrieval over ALL val pairs (harder than batch-64).
    let mut hits = 0;
    let mut sibling_err = 0;
    let mut cross_err = 0;
    for j in 0..n {
        let best = (0..n).max_by(|&a, &b| cos[[a, j]].partial_cmp(&cos[[b, j]]).unwrap()).unwrap();
        if best == j {
            hits += 1;
        } else if story_of[best] == story_of[j] {
            sibling_err += 1;
        } else {
            cross_err += 1;
        }
    }
    println!(
        "global retrieval over {n}: top1 {:.3}, sibling errors {sibling_err}, cross-story {cross_err}",
        hits as f64 / n as f64
    );
}
