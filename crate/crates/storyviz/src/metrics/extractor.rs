//! Task-trained feature extractor standing in for a large pretrained
//! backbone: a small convolutional classifier over synthetic frames
//! predicting (style, recurring object, shape multiset). Its 64-d penultimate
//! features feed the Fréchet metrics; its style/object heads are the probe
//! behind the keyword-consistency oracle. A validation accuracy gate must
//! pass before any metric may be reported.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use autodiff::rng::derive;
use autodiff::{Adam, AdamConfig, Graph, ParamStore, Var};

use crate::data::{GlobalStyle, LoadedStory, RecurringObject, ShapeColor, ShapeKind, StorySpec};
use crate::error::{Error, Result};
use crate::nets;
use crate::train::{load_checkpoint, save_checkpoint};

pub const FEATURE_DIM: usize = 64;
pub const N_STYLES: usize = 4;
pub const N_OBJECTS: usize = 8;
pub const N_SHAPE_LABELS: usize = 24; // 8 colors x 3 kinds
pub const GATE_ACCURACY: f64 = 0.95;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub channels: [usize; 3],
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            epochs: 80,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            channels: [24, 48, 64],
        }
    }
}

pub struct Extractor {
    pub params: ParamStore,
    /// min(style accuracy, object accuracy) on held-out frames.
    pub gate_accuracy: f64,
}

/// Stride-2 stages needed to reach a 4x4 map. Object identity depends on
/// which grid cell holds which color pair, so the trunk keeps a 4x4 spatial
/// map and flattens it into the feature head instead of pooling it away.
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

fn init_extractor(cfg: &ExtractorConfig, image_size: usize, rng: &mut autodiff::rng::Prng) -> ParamStore {
    let mut store = ParamStore::new();
    let plan = conv_plan(image_size, cfg.channels);
    for (i, &(cin, cout)) in plan.iter().enumerate() {
        nets::init_conv(&mut store, rng, &format!("conv{i}"), cin, cout, 3, nets::Init::He);
    }
    let flat = plan.last().unwrap().1 * 16;
    nets::init_linear(&mut store, rng, "penult", flat, FEATURE_DIM, nets::Init::He);
    nets::init_linear(&mut store, rng, "head_style", FEATURE_DIM, N_STYLES, nets::Init::He);
    nets::init_linear(&mut store, rng, "head_object", FEATURE_DIM, N_OBJECTS, nets::Init::He);
    nets::init_linear(&mut store, rng, "head_shapes", FEATURE_DIM, N_SHAPE_LABELS, nets::Init::He);
    store.round_to_f32();
    store
}

/// Trunk to the 64-d penultimate feature (post-activation).
fn penultimate(g: &mut Graph, store: &ParamStore, images: Var) -> Var {
    let mut x = images;
    let mut stage = 0;
    while store.contains(&format!("conv{stage}.k")) {
        x = nets::conv_forward(g, store, &format!("conv{stage}"), x, 2, 1);
        x = g.leaky_relu(x, 0.2);
        stage += 1;
    }
    let shape: Vec<usize> = g.shape(x).to_vec();
    let flat = g.reshape(x, &[shape[0], shape[1] * shape[2] * shape[3]]);
    let p = nets::linear_forward(g, store, "penult", flat);
    g.leaky_relu(p, 0.2)
}

fn shape_label(color: ShapeColor, kind: ShapeKind) -> usize {
    color.index_of() * 3 + kind.index_of()
}

trait IndexOf {
    fn index_of(self) -> usize;
}
impl IndexOf for ShapeColor {
    fn index_of(self) -> usize {
        ShapeColor::ALL.iter().position(|&c| c == self).unwrap()
    }
}
impl IndexOf for ShapeKind {
    fn index_of(self) -> usize {
        ShapeKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

struct LabeledBatch {
    images: Array4<f64>,
    style: Vec<usize>,
    object: Vec<usize>,
    shapes: Array2<f64>, // [B, 24] presence
}

fn gather(stories: &[LoadedStory], idxs: &[(usize, usize)]) -> LabeledBatch {
    let s = stories[0].image_size;
    let b = idxs.len();
    let mut images = Array4::zeros((b, 3, s, s));
    let mut style = Vec::with_capacity(b);
    let mut object = Vec::with_capacity(b);
    let mut shapes = Array2::zeros((b, N_SHAPE_LABELS));
    for (row, &(si, fi)) in idxs.iter().enumerate() {
        images
            .index_axis_mut(Axis(0), row)
            .assign(&stories[si].frame_f64(fi));
        let spec = &stories[si].spec;
        style.push(spec.global_style.index());
        object.push(spec.recurring_object.index());
        for sh in &spec.frames[fi].shapes {
            shapes[[row, shape_label(sh.color, sh.kind)]] = 1.0;
        }
    }
    LabeledBatch {
        images,
        style,
        object,
        shapes,
    }
}

/// `-mean log p[i, target_i]` with a row softmax.
fn class_ce(g: &mut Graph, logits: Var, targets: &[usize]) -> Var {
    let b = targets.len();
    let k = g.shape(logits)[1];
    let ones = Array2::<f64>::ones((b, k));
    let p = g.masked_softmax_rows(logits, &ones);
    let mut pick = Array2::<f64>::zeros((b, k));
    for (i, &t) in targets.iter().enumerate() {
        pick[[i, t]] = 1.0;
    }
    let pick = g.constant(pick.into_dyn());
    let sel = g.mul(p, pick);
    let sel = g.sum_axis(sel, 1);
    let logp = g.ln(sel);
    let m = g.mean_all(logp);
    g.neg(m)
}

/// Multi-label BCE from logits: `mean(softplus(z) - y z)`.
fn multilabel_bce(g: &mut Graph, logits: Var, targets: &Array2<f64>) -> Var {
    let t = g.constant(targets.clone().into_dyn());
    let sp = g.softplus(logits);
    let yz = g.mul(t, logits);
    let diff = g.sub(sp, yz);
    g.mean_all(diff)
}

pub fn train_extractor(
    train: &[LoadedStory],
    val: &[LoadedStory],
    cfg: &ExtractorConfig,
) -> Result<Extractor> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("extractor training needs train and val stories".into()));
    }
    let mut rng = derive(cfg.seed, "extractor");
    let mut params = init_extractor(cfg, train[0].image_size, &mut rng);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });

    let mut pairs: Vec<(usize, usize)> = (0..train.len())
        .flat_map(|si| (0..train[si].frames.len()).map(move |fi| (si, fi)))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut order_rng = derive(cfg.seed ^ (epoch as u64), "extractor_epoch");
        pairs.shuffle(&mut order_rng);
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch = gather(train, chunk);
            let mut g = Graph::new();
            let images = g.constant(batch.images.into_dyn());
            let feat = penultimate(&mut g, &params, images);
            let style_logits = nets::linear_forward(&mut g, &params, "head_style", feat);
            let object_logits = nets::linear_forward(&mut g, &params, "head_object", feat);
            let shape_logits = nets::linear_forward(&mut g, &params, "head_shapes", feat);
            let l_style = class_ce(&mut g, style_logits, &batch.style);
            let l_object = class_ce(&mut g, object_logits, &batch.object);
            let l_shapes = multilabel_bce(&mut g, shape_logits, &batch.shapes);
            let partial = g.add(l_style, l_object);
            let loss = g.add(partial, l_shapes);
            let loss_val = g.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "extractor loss became {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss);
            opt.step(&mut params, &g.param_grads());
        }
    }

    let ext = Extractor {
        gate_accuracy: 0.0,
        params,
    };
    let (style_acc, object_acc) = ext.attribute_accuracy(val)?;
    Ok(Extractor {
        gate_accuracy: style_acc.min(object_acc),
        params: ext.params,
    })
}

impl Extractor {
    pub fn assert_gate(&self) -> Result<()> {
        if self.gate_accuracy < GATE_ACCURACY {
            return Err(Error::ExtractorGate {
                accuracy: self.gate_accuracy,
                gate: GATE_ACCURACY,
            });
        }
        Ok(())
    }

    /// 64-d features for a stack of frames, chunked and parallel.
    pub fn features(&self, images: &Array4<f64>) -> Array2<f64> {
        let n = images.shape()[0];
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(128)
            .map(|start| (start, (start + 128).min(n)))
            .collect();
        let results: Vec<Array2<f64>> = chunks
            .par_iter()
            .map(|&(start, end)| {
                let mut g = Graph::new();
                let slab = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
                let x = g.constant(slab.into_dyn());
                let feat = penultimate(&mut g, &self.params, x);
                g.value(feat)
                    .clone()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
            })
            .collect();
        let views: Vec<_> = results.iter().map(|r| r.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    }

    fn head_argmax(&self, images: &Array4<f64>, head: &str) -> Vec<usize> {
        let mut g = Graph::new();
        let x = g.constant(images.clone().into_dyn());
        let feat = penultimate(&mut g, &self.params, x);
        let logits = nets::linear_forward(&mut g, &self.params, head, feat);
        let vals = g
            .value(logits)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        vals.rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect()
    }

    pub fn predict_style(&self, images: &Array4<f64>) -> Vec<GlobalStyle> {
        self.head_argmax(images, "head_style")
            .into_iter()
            .map(|i| GlobalStyle::ALL[i])
            .collect()
    }

    pub fn predict_object(&self, images: &Array4<f64>) -> Vec<RecurringObject> {
        self.head_argmax(images, "head_object")
            .into_iter()
            .map(|i| RecurringObject::ALL[i])
            .collect()
    }

    /// (style accuracy, object accuracy) over all frames of the stories.
    pub fn attribute_accuracy(&self, stories: &[LoadedStory]) -> Result<(f64, f64)> {
        let mut idxs = Vec::new();
        for (si, st) in stories.iter().enumerate() {
            for fi in 0..st.frames.len() {
                idxs.push((si, fi));
            }
        }
        let batch = gather(stories, &idxs);
        let styles = self.predict_style(&batch.images);
        let objects = self.predict_object(&batch.images);
        let mut style_hits = 0;
        let mut object_hits = 0;
        for (i, &(si, _)) in idxs.iter().enumerate() {
            if styles[i] == stories[si].spec.global_style {
                style_hits += 1;
            }
            if objects[i] == stories[si].spec.recurring_object {
                object_hits += 1;
            }
        }
        let n = idxs.len() as f64;
        Ok((style_hits as f64 / n, object_hits as f64 / n))
    }

    pub fn save(&self, stem: &Path, seed: u64) -> Result<()> {
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "gate_accuracy".to_string(),
            serde_json::json!(self.gate_accuracy),
        );
        metadata.insert("kind".to_string(), serde_json::json!("extractor"));
        save_checkpoint(stem, &self.params, 0, 0, seed, metadata)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Extractor> {
        let (params, manifest) = load_checkpoint(stem)?;
        let gate_accuracy = manifest
            .metadata
            .get("gate_accuracy")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Checkpoint("extractor checkpoint lacks gate_accuracy".into()))?;
        Ok(Extractor {
            params,
            gate_accuracy,
        })
    }
}

/// The probe the keyword-consistency metric uses on *real* frames to verify
/// itself: per-frame style/object predictions, compared to the spec.
pub fn probe_accuracy_on_specs(
    ext: &Extractor,
    frames: &Array4<f64>,
    specs: &[&StorySpec],
    n_frames: usize,
) -> Result<f64> {
    if frames.shape()[0] != specs.len() * n_frames {
        return Err(Error::shape("probe_accuracy", "frame count mismatch"));
    }
    let styles = ext.predict_style(frames);
    let objects = ext.predict_object(frames);
    let mut hits = 0usize;
    let mut total = 0usize;
    for (si, spec) in specs.iter().enumerate() {
        for fi in 0..n_frames {
            let i = si * n_frames + fi;
            total += 2;
            hits += (styles[i] == spec.global_style) as usize;
            hits += (objects[i] == spec.recurring_object) as usize;
        }
    }
    Ok(hits as f64 / total as f64)
}
