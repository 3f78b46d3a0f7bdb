//! Figure emitters: attention heatmaps (words x pooled image regions, one
//! panel per frame), the sigma table for a chosen keyword, and story grids.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use autodiff::Graph;

use crate::data::{save_png, SplitName};
use crate::error::{Error, Result};
use crate::pipeline::LoadedRun;
use crate::strategies::{attention_strategy, sentence_strategy};
use crate::text::{encode_story, story_tokens};

/// Region pooling: split the `h x w` grid of attention locations into up to
/// 32 rectangular regions (4 rows x 8 columns when divisible) and average
/// each word's attention over every region's cells.
/// Input: one frame's attention block `[h*w, n_words]`. Output
/// `[n_words, n_regions]`.
pub fn pool_attention_regions(frame_beta: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    assert_eq!(frame_beta.nrows(), h * w, "attention rows must cover the grid");
    let n_words = frame_beta.ncols();
    let (rows, cols) = if h % 4 == 0 && w % 8 == 0 {
        (4, 8)
    } else if h * w >= 32 && h % 2 == 0 && w % 2 == 0 {
        (h.min(4), (32 / h.min(4)).min(w))
    } else {
        (h, w)
    };
    let (rh, cw) = (h / rows, w / cols);
    let n_regions = rows * cols;
    let mut out = Array2::zeros((n_words, n_regions));
    for j in 0..n_words {
        for rr in 0..rows {
            for cc in 0..cols {
                let mut sum = 0.0;
                let mut count = 0.0;
                for dy in 0..rh {
                    for dx in 0..cw {
                        let y = rr * rh + dy;
                        let x = cc * cw + dx;
                        sum += frame_beta[[y * w + x, j]];
                        count += 1.0;
                    }
                }
                out[[j, rr * cols + cc]] = sum / count;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTable {
    pub keyword: String,
    /// Total sigma weight on the keyword's word slots, per sentence row.
    pub keyword_weight: Vec<f64>,
    /// Uniform baseline per row: 1 / (number of unmasked words).
    pub mean_word_weight: Vec<f64>,
    /// Row sums over unmasked slots (must be 1 within tolerance).
    pub row_sums: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub story_id: u64,
    pub site_resolution: usize,
    pub n_regions: usize,
    /// (sentence index, position, token) per heatmap row.
    pub words: Vec<(usize, usize, String)>,
    /// Per frame: `[n_words][n_regions]` pooled attention.
    pub panels: Vec<Vec<Vec<f64>>>,
    pub sigma: SigmaTable,
}

/// Grayscale render of the pooled panels, frames left to right.
fn render_panels(panels: &[Array2<f64>]) -> Array3<f64> {
    let cell = 8usize;
    let border = 2usize;
    let n_words = panels[0].nrows();
    let n_regions = panels[0].ncols();
    let max = panels
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-12);
    let height = n_words * cell;
    let width = panels.len() * (n_regions * cell + border) - border;
    let mut img = Array3::from_elem((3, height, width), 1.0);
    for (pi, p) in panels.iter().enumerate() {
        let x0 = pi * (n_regions * cell + border);
        for j in 0..n_words {
            for r in 0..n_regions {
                let v = p[[j, r]] / max;
                for dy in 0..cell {
                    for dx in 0..cell {
                        let y = j * cell + dy;
                        let x = x0 + r * cell + dx;
                        img[[0, y, x]] = v;
                        img[[1, y, x]] = v * 0.8;
                        img[[2, y, x]] = 1.0 - v;
                    }
                }
            }
        }
    }
    img
}

/// Generate one story from a checkpoint and emit the attention heatmap PNG
/// plus a JSON sidecar with the pooled values and the sigma table.
pub fn emit_heatmap(
    run: &LoadedRun,
    split: SplitName,
    story_id: u64,
    keyword: Option<&str>,
    out_path: &Path,
) -> Result<HeatmapSidecar> {
    let story = crate::data::load_story(&run.cfg.dataset_dir, &run.manifest, split, story_id)?;
    let (tokens, mask) = story_tokens(&story.captions, &run.vocab, run.manifest.max_tokens)?;
    let enc = encode_story(&run.text_params, "text.", &tokens, &mask)?;

    let sent = sentence_strategy(run.cfg.sentence_mode())?;
    let attn = attention_strategy(&run.cfg.attention_mode)?;
    let n = run.manifest.n_frames;
    let nz = run.cfg.model.noise_dim;
    let mut noise = ndarray::Array3::zeros((1, n, nz));
    {
        let mut rng = autodiff::rng::derive(run.seed ^ story_id.wrapping_mul(0x9e37), "eval_noise");
        for v in noise.iter_mut() {
            *v = autodiff::rng::normal(&mut rng);
        }
    }
    let mut g = Graph::new();
    let out = crate::model::generate_batch(
        &mut g,
        &run.gen,
        sent.as_ref(),
        attn.as_ref(),
        &run.cfg.model,
        std::slice::from_ref(&enc),
        &noise,
    )?;

    let (_, site_res, attention) = out
        .attention
        .first()
        .ok_or_else(|| Error::Config("checkpoint was trained without attention".into()))?;
    let beta = g
        .value(attention.beta)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let sigma = out.sigma[0].map(|v| {
        g.value(v)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
    });

    let l = run.manifest.max_tokens;
    let mut words = Vec::new();
    for s_i in 0..n {
        for t in 0..l {
            if enc.mask[[s_i, t]] != 0.0 {
                words.push((s_i, t, run.vocab.token(tokens[[s_i, t]]).to_string()));
            }
        }
    }

    let (h, w) = (*site_res, *site_res);
    let mut panels = Vec::with_capacity(n);
    for frame in 0..n {
        let block = beta.slice(ndarray::s![frame * h * w..(frame + 1) * h * w, ..]);
        let full = pool_attention_regions(&block.to_owned(), h, w);
        // Restrict rows to real words.
        let mut restricted = Array2::zeros((words.len(), full.ncols()));
        for (row, &(s_i, t, _)) in words.iter().enumerate() {
            for r in 0..full.ncols() {
                restricted[[row, r]] = full[[s_i * l + t, r]];
            }
        }
        panels.push(restricted);
    }

    let keyword = keyword
        .map(|k| k.to_string())
        .unwrap_or_else(|| story.spec.global_style.word().to_string());
    let sigma_table = sigma_table_for(&keyword, sigma.as_ref(), &enc.mask, &tokens, &run.vocab)?;

    let img = render_panels(&panels);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_png(&img, out_path)?;

    let sidecar = HeatmapSidecar {
        story_id,
        site_resolution: *site_res,
        n_regions: panels[0].ncols(),
        words,
        panels: panels
            .iter()
            .map(|p| p.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        sigma: sigma_table,
    };
    let sidecar_path = out_path.with_extension("json");
    fs::write(&sidecar_path, serde_json::to_vec_pretty(&sidecar)?)
        .map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(sidecar)
}

fn sigma_table_for(
    keyword: &str,
    sigma: Option<&Array2<f64>>,
    mask: &Array2<f64>,
    tokens: &Array2<u32>,
    vocab: &crate::text::Vocab,
) -> Result<SigmaTable> {
    let sigma = sigma.ok_or_else(|| {
        Error::Config("sentence strategy carries no correlation weights (plain mode)".into())
    })?;
    let (n, l) = (mask.nrows(), mask.ncols());
    let mut keyword_weight = vec![0.0; n];
    let mut mean_word_weight = vec![0.0; n];
    let mut row_sums = vec![0.0; n];
    let unmasked_total: usize = mask.iter().filter(|&&m| m != 0.0).count();
    for row in 0..n {
        for s_i in 0..n {
            for t in 0..l {
                if mask[[s_i, t]] == 0.0 {
                    continue;
                }
                let v = sigma[[row, s_i * l + t]];
                row_sums[row] += v;
                if vocab.token(tokens[[s_i, t]]) == keyword {
                    keyword_weight[row] += v;
                }
            }
        }
        mean_word_weight[row] = 1.0 / unmasked_total as f64;
    }
    Ok(SigmaTable {
        keyword: keyword.to_string(),
        keyword_weight,
        mean_word_weight,
        row_sums,
    })
}

/// Side-by-side grid: generated frames on top, ground truth below.
pub fn emit_story_grid(
    run: &LoadedRun,
    split: SplitName,
    story_id: u64,
    out_path: &Path,
) -> Result<()> {
    let story = crate::data::load_story(&run.cfg.dataset_dir, &run.manifest, split, story_id)?;
    let fake = crate::pipeline::generate_story_frames(run, &story)?;
    let n = run.manifest.n_frames;
    let s = run.manifest.image_size;
    let border = 2;
    let width = n * (s + border) - border;
    let height = 2 * s + border;
    let mut img = Array3::from_elem((3, height, width), 1.0);
    for fi in 0..n {
        let x0 = fi * (s + border);
        let gen = fake.index_axis(Axis(0), fi);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    img[[c, y, x0 + x]] = gen[[c, y, x]];
                }
            }
        }
        let real = story.frame_f64(fi);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    img[[c, s + border + y, x0 + x]] = real[[c, y, x]];
                }
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_png(&img, out_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_regions() {
        // 4x8 grid pooled into 32 regions of one cell each: identity.
        let h = 4;
        let w = 8;
        let mut beta = Array2::zeros((h * w, 2));
        for i in 0..h * w {
            beta[[i, 0]] = i as f64;
            beta[[i, 1]] = 1.0;
        }
        let pooled = pool_attention_regions(&beta, h, w);
        assert_eq!(pooled.shape(), &[2, 32]);
        for i in 0..32 {
            assert!((pooled[[0, i]] - i as f64).abs() < 1e-12);
            assert!((pooled[[1, i]] - 1.0).abs() < 1e-12);
        }

        // 8x8 grid -> 4x8 regions of 2x1 cells: region mean of two cells.
        let h = 8;
        let w = 8;
        let mut beta = Array2::zeros((h * w, 1));
        for y in 0..h {
            for x in 0..w {
                beta[[y * w + x, 0]] = y as f64;
            }
        }
        let pooled = pool_attention_regions(&beta, h, w);
        assert_eq!(pooled.ncols(), 32);
        // First region covers rows 0..2 -> mean 0.5.
        assert!((pooled[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_renders_constant_panels() {
        let h = 4;
        let w = 8;
        let beta = Array2::from_elem((h * w, 3), 0.25);
        let pooled = pool_attention_regions(&beta, h, w);
        let img = render_panels(&[pooled.clone(), pooled]);
        let first = img[[0, 0, 0]];
        for y in 0..img.shape()[1] {
            for x in 0..8 * 32 {
                assert_eq!(img[[0, y, x]], first);
            }
        }
    }
}
