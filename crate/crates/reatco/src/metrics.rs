//! Evaluation harness: frame consistency, textual alignment, spatial-relation
//! scoring, and invariant-region PSNR.
//!
//! Embedders and detectors are trait objects so a real CLIP-style model could
//! be plugged in; the shipped implementations are deterministic toys (a
//! color-histogram + downsampled-luma embedder and a color-matching centroid
//! detector) that keep the whole pipeline runnable offline.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::denoiser::TokenSequence;
use crate::regions::mask_count;
use crate::tensor::VideoTensor;
use crate::{Error, Result};

/// Joint image/text embedding interface; outputs are unit-norm.
pub trait Embedder {
    fn image_embed(&self, frame: &Array3<f64>) -> Vec<f64>;
    fn text_embed(&self, prompt: &TokenSequence) -> Vec<f64>;
}

/// Object localization interface for relation scoring. Returns a normalized
/// centroid or `None` when the object is not found.
pub trait Detector {
    fn detect(&self, frame: &Array3<f64>, spec: &ObjectSpec) -> Option<(f64, f64)>;
}

/// What to look for in a frame: a target color within a tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub rgb: [f64; 3],
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
}

/// A user-declared pairwise spatial relation to score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationSpec {
    pub subject: ObjectSpec,
    pub relation: Relation,
    pub reference: ObjectSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_consistency: Option<f64>,
    pub textual_alignment: Option<f64>,
    pub visor: Option<f64>,
    pub invariant_psnr_db: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity over all unordered frame pairs.
pub fn frame_consistency(frames: &VideoTensor, emb: &dyn Embedder) -> Result<f64> {
    let f_n = frames.frames();
    if f_n < 2 {
        return Err(Error::InvalidArgument(
            "frame consistency needs at least two frames".into(),
        ));
    }
    let embeds: Vec<Vec<f64>> = (0..f_n).map(|i| emb.image_embed(&frames.frame(i))).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..f_n {
        for j in (i + 1)..f_n {
            total += cosine(&embeds[i], &embeds[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean over frames of cosine(image embedding, prompt embedding).
pub fn textual_alignment(
    frames: &VideoTensor,
    prompt: &TokenSequence,
    emb: &dyn Embedder,
) -> Result<f64> {
    let f_n = frames.frames();
    if f_n == 0 {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    let text = emb.text_embed(prompt);
    let total: f64 = (0..f_n)
        .map(|i| cosine(&emb.image_embed(&frames.frame(i)), &text))
        .sum();
    Ok(total / f_n as f64)
}

fn relation_holds(rel: Relation, subject: (f64, f64), reference: (f64, f64)) -> bool {
    match rel {
        Relation::Left => subject.0 < reference.0,
        Relation::Right => subject.0 > reference.0,
        Relation::Above => subject.1 < reference.1, // y grows downward
        Relation::Below => subject.1 > reference.1,
    }
}

/// Fraction of frames where both objects are detected and the relation holds.
/// Frames with a missing detection count as failures.
pub fn visor_score(frames: &VideoTensor, spec: &RelationSpec, det: &dyn Detector) -> Result<f64> {
    let f_n = frames.frames();
    if f_n == 0 {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    let mut hits = 0usize;
    for i in 0..f_n {
        let frame = frames.frame(i);
        if let (Some(s), Some(r)) = (
            det.detect(&frame, &spec.subject),
            det.detect(&frame, &spec.reference),
        ) {
            if relation_holds(spec.relation, s, r) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / f_n as f64)
}

/// PSNR (dB, signal max 1.0) restricted to the invariant region, capped at
/// 99 dB for effectively exact reconstructions.
pub fn invariant_psnr(
    edited: &VideoTensor,
    source: &VideoTensor,
    invariant_mask: &[Array2<f64>],
) -> Result<f64> {
    if !edited.same_shape(source) {
        return Err(Error::ShapeMismatch("edited/source shapes differ".into()));
    }
    let (f_n, c_n, h, w) = edited.0.dim();
    if invariant_mask.len() != f_n || invariant_mask.iter().any(|m| m.dim() != (h, w)) {
        return Err(Error::ShapeMismatch("mask does not match video shape".into()));
    }
    if invariant_mask.iter().map(mask_count).sum::<usize>() == 0 {
        return Err(Error::DegenerateRegion("invariant mask is empty".into()));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for fi in 0..f_n {
        let m = &invariant_mask[fi];
        for r in 0..h {
            for c in 0..w {
                if m[[r, c]] > 0.5 {
                    for ci in 0..c_n {
                        let d = edited.0[[fi, ci, r, c]] - source.0[[fi, ci, r, c]];
                        se += d * d;
                        n += 1;
                    }
                }
            }
        }
    }
    let mse = se / n as f64;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Deterministic toy joint embedder: a 16-bin RGB histogram region plus a 4x4
/// downsampled luma grid, 64 dimensions total, unit-normalized.
///
/// Text embeddings place each color word at the embedding of a solid frame of
/// that color, so alignment genuinely responds to the colors present; other
/// words contribute deterministic pseudo-random directions.
pub struct ToyEmbedder;

pub const TOY_EMBED_DIM: usize = 64;

/// Named palette shared by the dataset renderer, the embedder, and the
/// detector specs.
pub fn color_of_word(word: &str) -> Option<[f64; 3]> {
    match word {
        "red" => Some([0.9, 0.1, 0.1]),
        "green" => Some([0.1, 0.8, 0.15]),
        "blue" => Some([0.15, 0.2, 0.9]),
        "yellow" => Some([0.9, 0.85, 0.1]),
        "cyan" => Some([0.1, 0.85, 0.85]),
        "magenta" => Some([0.85, 0.1, 0.85]),
        _ => None,
    }
}

impl ToyEmbedder {
    fn raw_image_features(frame: &Array3<f64>) -> Vec<f64> {
        let (c_n, h, w) = frame.dim();
        let mut out = vec![0.0; TOY_EMBED_DIM];
        // 48 bins: 16 per channel (first 3 channels)
        for ci in 0..c_n.min(3) {
            for r in 0..h {
                for cc in 0..w {
                    let v = frame[[ci, r, cc]].clamp(0.0, 1.0);
                    let bin = ((v * 16.0) as usize).min(15);
                    out[ci * 16 + bin] += 1.0 / (h * w) as f64;
                }
            }
        }
        // 16 bins: 4x4 mean-luma grid
        for br in 0..4 {
            for bc in 0..4 {
                let (r0, r1) = (br * h / 4, ((br + 1) * h / 4).max(br * h / 4 + 1));
                let (c0, c1) = (bc * w / 4, ((bc + 1) * w / 4).max(bc * w / 4 + 1));
                let mut acc = 0.0;
                let mut n = 0usize;
                for r in r0..r1.min(h) {
                    for cc in c0..c1.min(w) {
                        let mut luma = 0.0;
                        for ci in 0..c_n.min(3) {
                            luma += frame[[ci, r, cc]];
                        }
                        acc += luma / 3.0;
                        n += 1;
                    }
                }
                out[48 + br * 4 + bc] = acc / n.max(1) as f64;
            }
        }
        out
    }

    fn normalize(mut v: Vec<f64>) -> Vec<f64> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }
}

impl Embedder for ToyEmbedder {
    fn image_embed(&self, frame: &Array3<f64>) -> Vec<f64> {
        Self::normalize(Self::raw_image_features(frame))
    }

    fn text_embed(&self, prompt: &TokenSequence) -> Vec<f64> {
        let mut acc = vec![0.0; TOY_EMBED_DIM];
        for word in prompt.words() {
            let feat = if let Some(rgb) = color_of_word(word) {
                let mut solid = Array3::zeros((3, 8, 8));
                for ci in 0..3 {
                    solid.index_axis_mut(ndarray::Axis(0), ci).fill(rgb[ci]);
                }
                Self::raw_image_features(&solid)
            } else {
                let id = crate::denoiser::vocab_map().get(word).copied().unwrap_or(0);
                let mut r = crate::rng::derive(id as u64, "text-embed", TOY_EMBED_DIM as u64);
                crate::rng::normal_vec(TOY_EMBED_DIM, &mut r)
                    .into_iter()
                    .map(|v| 0.1 * v)
                    .collect()
            };
            for (a, f) in acc.iter_mut().zip(feat) {
                *a += f;
            }
        }
        Self::normalize(acc)
    }
}

/// Centroid-of-matching-pixels detector for a target color. Needs at least 5
/// matching pixels; two disjoint blobs of the same color yield the centroid
/// of their union.
pub struct ToyColorDetector;

impl Detector for ToyColorDetector {
    fn detect(&self, frame: &Array3<f64>, spec: &ObjectSpec) -> Option<(f64, f64)> {
        let (_, h, w) = frame.dim();
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for r in 0..h {
            for c in 0..w {
                let d2: f64 = (0..3)
                    .map(|ci| {
                        let d = frame[[ci, r, c]] - spec.rgb[ci];
                        d * d
                    })
                    .sum();
            if d2.sqrt() <= spec.tolerance {
                    sx += (c as f64 + 0.5) / w as f64;
                    sy += (r as f64 + 0.5) / h as f64;
                    n += 1;
                }
            }
        }
        if n < 5 {
            return None;
        }
        Some((sx / n as f64, sy / n as f64))
    }
}
