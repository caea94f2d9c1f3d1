//! Attention-constraint guidance.
//!
//! Per denoising timestep the attention maps for each word of interest are
//! scored by an inner-region loss (top-k in-mask responses should approach 1)
//! and an outer-region loss (top-k out-of-mask responses should approach 0).
//! The summed objective is differentiated with respect to the noisy sample and
//! applied as a single gradient step with a linearly decaying step size.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::denoiser::net::{self, DenoiserWeights};
use crate::denoiser::TokenEmbedding;
use crate::par::ExecMode;
use crate::regions::{complement, k_for_count, mask_count, MaskSet, ObjectMasks};
use crate::tensor::LatentState;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadConfig {
    /// Token positions of the words of interest.
    pub word_indices: Vec<usize>,
    /// Top-k budget as a fraction of the region cell count.
    pub budget_fraction: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Portion of denoising steps, from the start, where guidance runs.
    pub apply_fraction: f64,
}

impl Default for RadConfig {
    fn default() -> Self {
        RadConfig {
            word_indices: Vec::new(),
            budget_fraction: 0.2,
            alpha_start: 1.0,
            alpha_end: 0.5,
            apply_fraction: 1.0,
        }
    }
}

impl RadConfig {
    pub fn validate(&self, num_tokens: usize) -> Result<()> {
        if self.word_indices.is_empty() {
            return Err(Error::Config("guidance needs at least one word index".into()));
        }
        if let Some(&bad) = self.word_indices.iter().find(|&&j| j >= num_tokens) {
            return Err(Error::Config(format!(
                "word index {bad} out of range for a {num_tokens}-token prompt"
            )));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config("budget fraction must be in (0,1]".into()));
        }
        if !(self.alpha_start >= self.alpha_end && self.alpha_end > 0.0) {
            return Err(Error::Config("need alpha_start >= alpha_end > 0".into()));
        }
        if !(self.apply_fraction > 0.0 && self.apply_fraction <= 1.0) {
            return Err(Error::Config("apply fraction must be in (0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordLoss {
    pub word_index: usize,
    pub inner: f64,
    pub outer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadLossReport {
    pub per_word: Vec<WordLoss>,
    pub inner_total: f64,
    pub outer_total: f64,
    pub total: f64,
}

/// Mean of the K largest values; ties broken by lowest flattened index.
pub fn top_k_mean(values: &[f64], k: usize) -> Result<f64> {
    Ok(top_k_indices(values, k)?
        .iter()
        .map(|&i| values[i])
        .sum::<f64>()
        / k as f64)
}

/// Indices of the K largest values, deterministic under ties.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if values.is_empty() || k == 0 || k > values.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k needs 1 <= K <= len, got K={k}, len={}",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

fn find_object(masks: &MaskSet, word_index: usize) -> Result<&ObjectMasks> {
    masks
        .objects
        .iter()
        .find(|o| o.word_index == word_index)
        .ok_or_else(|| {
            Error::Config(format!("no mask object registered for word index {word_index}"))
        })
}

fn check_compat(record: &crate::denoiser::AttentionRecord, masks: &MaskSet) -> Result<()> {
    let (_, hp, wp) = record.probe_shape();
    if (hp, wp) != (masks.height, masks.width) {
        return Err(Error::ShapeMismatch(format!(
            "attention probe {hp}x{wp} vs mask resolution {}x{}",
            masks.height, masks.width
        )));
    }
    Ok(())
}

/// One word's inner loss: `1 - mean_frames(top_k_mean(A^j * M^j, K))`.
fn inner_loss_word(
    record: &crate::denoiser::AttentionRecord,
    obj: &ObjectMasks,
    word_index: usize,
    fraction: f64,
    grad: Option<&mut [Array3<f64>]>,
) -> Result<f64> {
    let m = record.frames() as f64;
    let mut acc = 0.0;
    let mut grads = grad;
    for (fi, map) in record.maps.iter().enumerate() {
        let mask = &obj.frames[fi];
        let count = mask_count(mask);
        if count == 0 {
            return Err(Error::DegenerateRegion(format!(
                "word {word_index} frame {fi}: empty mask"
            )));
        }
        let k = k_for_count(count, fraction);
        let attn = map.index_axis(ndarray::Axis(0), word_index);
        let masked: Vec<f64> = attn
            .iter()
            .zip(mask.iter())
            .map(|(&a, &mv)| a * mv)
            .collect();
        let sel = top_k_indices(&masked, k)?;
        acc += sel.iter().map(|&i| masked[i]).sum::<f64>() / k as f64;
        if let Some(g) = grads.as_deref_mut() {
            let wp = mask.shape()[1];
            for &i in &sel {
                let (r, c) = (i / wp, i % wp);
                // d(1 - mean/m)/dA = -(mask value)/(m*K); selected cells are in-mask
                g[fi][[word_index, r, c]] += -mask[[r, c]] / (m * k as f64);
            }
        }
    }
    Ok(1.0 - acc / m)
}

/// One word's outer loss: `mean_frames(top_k_mean(A^j * (1 - M^j), K'))` with
/// the budget computed from the complement cell count. An empty complement
/// (box covering the whole frame) scores 0 with a warning.
fn outer_loss_word(
    record: &crate::denoiser::AttentionRecord,
    obj: &ObjectMasks,
    word_index: usize,
    fraction: f64,
    grad: Option<&mut [Array3<f64>]>,
) -> Result<f64> {
    let m = record.frames() as f64;
    let mut acc = 0.0;
    let mut grads = grad;
    for (fi, map) in record.maps.iter().enumerate() {
        let comp = complement(&obj.frames[fi]);
        let count = mask_count(&comp);
        if count == 0 {
            log::warn!(
                "word {word_index} frame {fi}: mask covers the whole frame; outer loss set to 0"
            );
            continue;
        }
        let k = k_for_count(count, fraction);
        let attn = map.index_axis(ndarray::Axis(0), word_index);
        let masked: Vec<f64> = attn
            .iter()
            .zip(comp.iter())
            .map(|(&a, &mv)| a * mv)
            .collect();
        let sel = top_k_indices(&masked, k)?;
        acc += sel.iter().map(|&i| masked[i]).sum::<f64>() / k as f64;
        if let Some(g) = grads.as_deref_mut() {
            let wp = comp.shape()[1];
            for &i in &sel {
                let (r, c) = (i / wp, i % wp);
                g[fi][[word_index, r, c]] += comp[[r, c]] / (m * k as f64);
            }
        }
    }
    Ok(acc / m)
}

/// Per-word inner losses for all configured word indices.
pub fn inner_loss(
    record: &crate::denoiser::AttentionRecord,
    masks: &MaskSet,
    cfg: &RadConfig,
) -> Result<Vec<(usize, f64)>> {
    check_compat(record, masks)?;
    cfg.word_indices
        .iter()
        .map(|&j| {
            inner_loss_word(record, find_object(masks, j)?, j, cfg.budget_fraction, None)
                .map(|v| (j, v))
        })
        .collect()
}

/// Per-word outer losses for all configured word indices.
pub fn outer_loss(
    record: &crate::denoiser::AttentionRecord,
    masks: &MaskSet,
    cfg: &RadConfig,
) -> Result<Vec<(usize, f64)>> {
    check_compat(record, masks)?;
    cfg.word_indices
        .iter()
        .map(|&j| {
            outer_loss_word(record, find_object(masks, j)?, j, cfg.budget_fraction, None)
                .map(|v| (j, v))
        })
        .collect()
}

/// The full objective: sums of per-word inner and outer losses.
pub fn rad_objective(
    record: &crate::denoiser::AttentionRecord,
    masks: &MaskSet,
    cfg: &RadConfig,
) -> Result<RadLossReport> {
    Ok(rad_objective_with_grad(record, masks, cfg, false)?.0)
}

/// Objective plus, on request, its gradient with respect to the attention maps
/// (one `(L, H', W')` stack per frame).
pub fn rad_objective_with_grad(
    record: &crate::denoiser::AttentionRecord,
    masks: &MaskSet,
    cfg: &RadConfig,
    want_grad: bool,
) -> Result<(RadLossReport, Option<Vec<Array3<f64>>>)> {
    check_compat(record, masks)?;
    let mut grad = want_grad.then(|| {
        vec![Array3::<f64>::zeros(record.maps[0].raw_dim()); record.frames()]
    });
    let mut per_word = Vec::new();
    for &j in &cfg.word_indices {
        let obj = find_object(masks, j)?;
        let inner = inner_loss_word(record, obj, j, cfg.budget_fraction, grad.as_deref_mut())?;
        let outer = outer_loss_word(record, obj, j, cfg.budget_fraction, grad.as_deref_mut())?;
        per_word.push(WordLoss {
            word_index: j,
            inner,
            outer,
        });
    }
    let inner_total: f64 = per_word.iter().map(|w| w.inner).sum();
    let outer_total: f64 = per_word.iter().map(|w| w.outer).sum();
    Ok((
        RadLossReport {
            per_word,
            inner_total,
            outer_total,
            total: inner_total + outer_total,
        },
        grad,
    ))
}

/// Linearly decaying step size over the denoising run.
pub fn alpha_at(step_index: usize, total_steps: usize, cfg: &RadConfig) -> Result<f64> {
    if step_index >= total_steps {
        return Err(Error::InvalidArgument(format!(
            "step index {step_index} out of range for {total_steps} steps"
        )));
    }
    if total_steps == 1 {
        return Ok(cfg.alpha_start);
    }
    Ok(cfg.alpha_start
        + (cfg.alpha_end - cfg.alpha_start) * step_index as f64 / (total_steps - 1) as f64)
}

/// Whether guidance runs at this step under `apply_fraction`.
pub fn is_active(step_index: usize, total_steps: usize, cfg: &RadConfig) -> bool {
    let window = (cfg.apply_fraction * total_steps as f64).ceil() as usize;
    step_index < window
}

/// `x - alpha * grad`, preserving the timestep tag.
pub fn rad_update(x: &LatentState, grad: &Array4<f64>, alpha: f64) -> Result<LatentState> {
    x.check_shape(grad)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            timestep: x.timestep,
            message: "non-finite guidance gradient".into(),
        });
    }
    Ok(LatentState::new(&x.data - &(grad * alpha), x.timestep))
}

pub struct RadStepOutput {
    pub state: LatentState,
    /// Present when guidance actually ran at this step.
    pub report: Option<RadLossReport>,
    /// Noise prediction from the forward pass at the pre-update state.
    pub eps_pred: Array4<f64>,
    pub record: crate::denoiser::AttentionRecord,
}

/// One guided denoising sub-step: forward pass, objective, gradient with
/// respect to the sample, and a single update with [`alpha_at`]. Outside the
/// active window this reduces to a plain forward pass.
#[allow(clippy::too_many_arguments)]
pub fn rad_guidance_step(
    x: &LatentState,
    emb: &TokenEmbedding,
    weights: &DenoiserWeights,
    masks: &MaskSet,
    cfg: &RadConfig,
    step_index: usize,
    total_steps: usize,
    mode: ExecMode,
) -> Result<RadStepOutput> {
    let (eps_pred, record, cache) = net::forward(&x.data, x.timestep, emb, weights, mode)?;
    if !is_active(step_index, total_steps, cfg) {
        return Ok(RadStepOutput {
            state: x.clone(),
            report: None,
            eps_pred,
            record,
        });
    }
    cfg.validate(record.probe_shape().0)?;
    let (report, grad_attn) = rad_objective_with_grad(&record, masks, cfg, true)?;
    let (grad_x, _) = net::backward(
        &x.data,
        emb,
        weights,
        &cache,
        None,
        Some(grad_attn.as_ref().expect("gradient requested")),
        mode,
        false,
    );
    if grad_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            timestep: x.timestep,
            message: "non-finite guidance gradient".into(),
        });
    }
    let alpha = alpha_at(step_index, total_steps, cfg)?;
    let state = rad_update(x, &grad_x, alpha)?;
    Ok(RadStepOutput {
        state,
        report: Some(report),
        eps_pred,
        record,
    })
}
