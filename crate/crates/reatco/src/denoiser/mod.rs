//! The trainable toy video denoiser and its oracles.
//!
//! A deterministic token embedder stands in for a pretrained text encoder;
//! [`net`] holds the eps-prediction network with one probed cross-attention
//! layer; [`train`] fits it with eps-MSE; [`AnalyticGaussianDenoiser`] is a
//! closed-form oracle for Gaussian data used by the distribution tests.

pub mod net;
pub mod train;

use ndarray::{Array2, Array3, Array4};
use std::collections::BTreeMap;

use crate::par::ExecMode;
use crate::rng;
use crate::scheduler::NoiseSchedule;
use crate::tensor::LatentState;
use crate::{Error, Result};

pub use net::{DenoiserGrads, DenoiserWeights, NetConfig};
pub use train::{train_toy_denoiser, TrainConfig, TrainReport};

pub const MAX_TOKENS: usize = 16;

/// The fixed toy vocabulary, in id order.
pub const VOCAB: &[&str] = &[
    "a", "and", "the", "red", "green", "blue", "yellow", "cyan", "magenta", "square", "circle",
    "triangle", "left", "right", "top", "bottom", "moving", "background",
];

pub fn vocab_map() -> BTreeMap<String, usize> {
    VOCAB
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i))
        .collect()
}

/// A tokenized prompt, at most [`MAX_TOKENS`] long.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() || ids.len() > MAX_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "prompt length must be 1..={MAX_TOKENS}, got {}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= VOCAB.len()) {
            return Err(Error::InvalidArgument(format!("unknown token id {bad}")));
        }
        Ok(TokenSequence { ids })
    }

    pub fn from_words(words: &[&str]) -> Result<Self> {
        let map = vocab_map();
        let ids = words
            .iter()
            .map(|w| {
                map.get(*w)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown token {w:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn words(&self) -> Vec<&'static str> {
        self.ids.iter().map(|&id| VOCAB[id]).collect()
    }
}

/// L x C embedding matrix; a deterministic function of the token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub matrix: Array2<f64>,
}

/// Deterministic pseudo-random unit-norm embedding per token id.
pub fn embed_tokens(seq: &TokenSequence, embed_dim: usize) -> Result<TokenEmbedding> {
    let l = seq.len();
    let mut matrix = Array2::zeros((l, embed_dim));
    for (row, &id) in seq.ids.iter().enumerate() {
        if id >= VOCAB.len() {
            return Err(Error::InvalidArgument(format!("unknown token id {id}")));
        }
        let mut r = rng::derive(id as u64, "token-embedding", embed_dim as u64);
        let v = rng::normal_vec(embed_dim, &mut r);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (c, val) in v.iter().enumerate() {
            matrix[[row, c]] = val / norm;
        }
    }
    Ok(TokenEmbedding { matrix })
}

/// Per-frame cross-attention map stacks `(L, H', W')` at the probe
/// resolution, tagged with the timestep they were computed at.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub maps: Vec<Array3<f64>>,
    pub timestep: usize,
}

impl AttentionRecord {
    pub fn frames(&self) -> usize {
        self.maps.len()
    }

    pub fn probe_shape(&self) -> (usize, usize, usize) {
        self.maps[0].dim()
    }
}

/// Run the denoiser on a latent state at its tagged timestep.
pub fn denoise(
    x: &LatentState,
    emb: &TokenEmbedding,
    w: &DenoiserWeights,
) -> Result<(Array4<f64>, AttentionRecord)> {
    let (eps, record, _) = net::forward(&x.data, x.timestep, emb, w, ExecMode::default())?;
    Ok((eps, record))
}

/// Closed-form eps posterior for data distributed `N(mean, diag(var))`.
///
/// For such data the exact conditional expectation `E[eps | x_t]` is available
/// elementwise, which makes this the oracle backbone for the joint-sampling
/// distribution tests.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    pub mean: Array4<f64>,
    pub var: Array4<f64>,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mean: Array4<f64>, var: Array4<f64>) -> Result<Self> {
        if mean.shape() != var.shape() {
            return Err(Error::ShapeMismatch("mean/var shapes differ".into()));
        }
        if var.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(
                "analytic denoiser needs strictly positive variances".into(),
            ));
        }
        Ok(AnalyticGaussianDenoiser { mean, var })
    }

    /// Exact `E[eps | x_t]` at timestep `t`.
    pub fn eps_pred(&self, x_t: &Array4<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array4<f64>> {
        if x_t.shape() != self.mean.shape() {
            return Err(Error::ShapeMismatch("x_t shape differs from data shape".into()));
        }
        if t == 0 {
            return Err(Error::InvalidArgument("eps is undefined at t = 0".into()));
        }
        let ab = schedule.alpha_bar(t);
        let mut out = Array4::zeros(x_t.raw_dim());
        ndarray::Zip::from(&mut out)
            .and(x_t)
            .and(&self.mean)
            .and(&self.var)
            .for_each(|o, &x, &m, &s| {
                let denom = ab * s + (1.0 - ab);
                let x0 = (ab.sqrt() * s * x + (1.0 - ab) * m) / denom;
                *o = (x - ab.sqrt() * x0) / (1.0 - ab).sqrt();
            });
        Ok(out)
    }

    /// Uniform attention record, matching the shape contract of the trained
    /// denoiser's output.
    pub fn uniform_record(&self, num_tokens: usize, probe_h: usize, probe_w: usize, t: usize) -> AttentionRecord {
        let frames = self.mean.shape()[0];
        let map = Array3::from_elem((num_tokens, probe_h, probe_w), 1.0 / num_tokens as f64);
        AttentionRecord {
            maps: vec![map; frames],
            timestep: t,
        }
    }
}
