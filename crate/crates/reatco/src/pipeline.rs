//! End-to-end editing: DDIM inversion of the source clip, then guided
//! re-sampling with attention-constraint updates and invariant-region blending,
//! optionally over sliding temporal windows.

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::denoiser::net::{self, DenoiserWeights};
use crate::denoiser::{embed_tokens, TokenEmbedding, TokenSequence};
use crate::io;
use crate::irjs::{self, IrjsConfig};
use crate::par::ExecMode;
use crate::rad::{self, RadConfig, RadLossReport};
use crate::regions::{empty_union, rasterize_all, union_mask, BoxTrack, MaskSet, ObjectMasks};
use crate::scheduler::{ddim_invert_step, NoiseSchedule};
use crate::tensor::{LatentState, VideoTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditConfig {
    /// Caption of the source clip; inversion conditions on this.
    pub source_prompt: Vec<String>,
    /// Target caption; re-sampling conditions on this.
    pub edited_prompt: Vec<String>,
    /// Per-object box trajectories, word indices into the edited prompt.
    pub tracks: Vec<BoxTrack>,
    /// Guidance settings; `None` disables guidance entirely.
    pub rad: Option<RadConfig>,
    pub irjs: IrjsConfig,
    /// Number of strided sampler steps.
    pub sample_steps: usize,
    /// DDIM stochasticity; 0 is fully deterministic.
    pub eta: f64,
    pub seed: u64,
    /// Temporal window length; `None` processes the whole clip jointly.
    pub window: Option<usize>,
    /// Window stride; defaults to the window length.
    pub stride: Option<usize>,
    /// When set, per-step attention heatmaps are written here.
    #[serde(default)]
    pub attention_dir: Option<PathBuf>,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            source_prompt: Vec::new(),
            edited_prompt: Vec::new(),
            tracks: Vec::new(),
            rad: Some(RadConfig::default()),
            irjs: IrjsConfig::default(),
            sample_steps: 50,
            eta: 0.0,
            seed: 0,
            window: None,
            stride: None,
            attention_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub t: usize,
    pub t_prev: usize,
    /// Step size actually used; absent when guidance did not run.
    pub alpha: Option<f64>,
    /// One loss report per window where guidance ran.
    pub windows: Vec<Option<RadLossReport>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub timesteps: Vec<usize>,
    pub window: usize,
    pub stride: usize,
    pub window_starts: Vec<usize>,
    pub coverage: Vec<usize>,
    pub steps: Vec<StepReport>,
}

pub struct EditResult {
    pub video: VideoTensor,
    pub report: RunReport,
}

/// Evenly strided timestep ladder `ts[k] = round(T k / steps)`, `k = 0..=steps`.
pub fn strided_timesteps(num_steps: usize, sample_steps: usize) -> Result<Vec<usize>> {
    if sample_steps == 0 || sample_steps > num_steps {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= sample steps <= T, got {sample_steps} of {num_steps}"
        )));
    }
    let ts: Vec<usize> = (0..=sample_steps)
        .map(|k| ((num_steps * k) as f64 / sample_steps as f64).round() as usize)
        .collect();
    debug_assert!(ts.windows(2).all(|w| w[0] < w[1]));
    Ok(ts)
}

/// Window start offsets: multiples of the stride, plus a final flush-right
/// window when the strided ones do not reach the last frame.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || window > frames {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= window <= frames, got window {window} for {frames} frames"
        )));
    }
    if stride == 0 || stride > window {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= stride <= window, got stride {stride} for window {window}"
        )));
    }
    let mut starts = Vec::new();
    let mut s0 = 0;
    while s0 + window <= frames {
        starts.push(s0);
        s0 += stride;
    }
    if starts.last() != Some(&(frames - window)) {
        starts.push(frames - window);
    }
    Ok(starts)
}

/// How many windows cover each frame.
pub fn coverage_counts(frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; frames];
    for s0 in window_starts(frames, window, stride)? {
        for c in counts.iter_mut().skip(s0).take(window) {
            *c += 1;
        }
    }
    Ok(counts)
}

fn embed_prompt(words: &[String], embed_dim: usize) -> Result<(TokenSequence, TokenEmbedding)> {
    let refs: Vec<&str> = words.iter().map(|w| w.as_str()).collect();
    let seq = TokenSequence::from_words(&refs)?;
    let emb = embed_tokens(&seq, embed_dim)?;
    Ok((seq, emb))
}

/// Deterministic DDIM inversion of a clean clip up the timestep ladder,
/// conditioned on the source caption.
pub fn invert_video(
    v0: &VideoTensor,
    source_prompt: &[String],
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    sample_steps: usize,
) -> Result<LatentState> {
    let (_, emb) = embed_prompt(source_prompt, weights.cfg.embed_dim)?;
    let ts = strided_timesteps(schedule.num_steps, sample_steps)?;
    let mode = ExecMode::default();
    let mut x = LatentState::from_video(v0);
    for k in 0..sample_steps {
        let (eps, _, _) = net::forward(&x.data, x.timestep, &emb, weights, mode)?;
        x = ddim_invert_step(&x, &eps, ts[k], ts[k + 1], schedule)?;
    }
    Ok(x)
}

fn slice_masks(set: &MaskSet, start: usize, len: usize) -> MaskSet {
    MaskSet {
        height: set.height,
        width: set.width,
        objects: set
            .objects
            .iter()
            .map(|o| ObjectMasks {
                object_id: o.object_id.clone(),
                word_index: o.word_index,
                frames: o.frames[start..start + len].to_vec(),
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn dump_heatmaps(
    dir: &Path,
    record: &crate::denoiser::AttentionRecord,
    rad_cfg: &RadConfig,
    t: usize,
    start: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for &j in &rad_cfg.word_indices {
        for (fi, map) in record.maps.iter().enumerate() {
            let grid = map.index_axis(ndarray::Axis(0), j).to_owned();
            let name = format!("t{:04}_w{:02}_f{:02}.png", t, j, start + fi);
            io::write_heatmap(&grid, &dir.join(name))?;
        }
    }
    Ok(())
}

/// Guided re-sampling from an inverted latent over sliding temporal windows.
///
/// Per timestep every window independently runs the guidance update and the
/// noise prediction; window results are fused frame-wise by coverage-weighted
/// averaging, then one sampler step plus the invariant-region blend advances
/// the whole clip. A window spanning all frames reduces to joint processing.
pub fn sliding_window_edit(
    x_init: &LatentState,
    v0: &VideoTensor,
    cfg: &EditConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
) -> Result<EditResult> {
    let (f_n, _c, h, w) = x_init.data.dim();
    let probe = weights.cfg.probe_factor;
    if h % probe != 0 || w % probe != 0 {
        return Err(Error::InvalidArgument(format!(
            "spatial size {h}x{w} must be divisible by the probe factor {probe}"
        )));
    }
    let window = cfg.window.unwrap_or(f_n);
    let stride = cfg.stride.unwrap_or(window);
    let starts = window_starts(f_n, window, stride)?;
    let coverage = coverage_counts(f_n, window, stride)?;
    let ts = strided_timesteps(schedule.num_steps, cfg.sample_steps)?;
    if x_init.timestep != ts[cfg.sample_steps] {
        return Err(Error::InvalidArgument(format!(
            "initial latent sits at t={}, expected the ladder top t={}",
            x_init.timestep,
            ts[cfg.sample_steps]
        )));
    }
    let (seq, emb) = embed_prompt(&cfg.edited_prompt, weights.cfg.embed_dim)?;
    let mode = ExecMode::default();

    for track in &cfg.tracks {
        track.validate()?;
        if track.boxes.len() != f_n {
            return Err(Error::Config(format!(
                "track {} has {} boxes for {f_n} frames",
                track.object_id,
                track.boxes.len()
            )));
        }
    }
    let (probe_masks, union) = if cfg.tracks.is_empty() {
        (None, empty_union(f_n, h, w))
    } else {
        let pm = rasterize_all(&cfg.tracks, h / probe, w / probe)?;
        let full = rasterize_all(&cfg.tracks, h, w)?;
        (Some(pm), union_mask(&full)?)
    };
    if let Some(rc) = &cfg.rad {
        rc.validate(seq.len())?;
        if probe_masks.is_none() {
            return Err(Error::Config("guidance requires at least one box track".into()));
        }
    }

    let mut x = x_init.clone();
    let mut steps = Vec::new();
    for k in (1..=cfg.sample_steps).rev() {
        let (t, t_prev) = (ts[k], ts[k - 1]);
        let step_index = cfg.sample_steps - k;
        let mut fused_eps = Array4::<f64>::zeros(x.data.raw_dim());
        let mut fused_delta = Array4::<f64>::zeros(x.data.raw_dim());
        let mut window_reports = Vec::with_capacity(starts.len());
        let mut alpha_used = None;
        for &s0 in &starts {
            let xw = LatentState::new(
                x.data.slice(s![s0..s0 + window, .., .., ..]).to_owned(),
                t,
            );
            let (delta, eps, report, record) = match (&cfg.rad, &probe_masks) {
                (Some(rc), Some(pm)) => {
                    let mw = slice_masks(pm, s0, window);
                    let out = rad::rad_guidance_step(
                        &xw,
                        &emb,
                        weights,
                        &mw,
                        rc,
                        step_index,
                        cfg.sample_steps,
                        mode,
                    )?;
                    if out.report.is_some() {
                        alpha_used = Some(rad::alpha_at(step_index, cfg.sample_steps, rc)?);
                        // sample from the updated state, so re-predict there
                        let (eps, _, _) =
                            net::forward(&out.state.data, t, &emb, weights, mode)?;
                        (&out.state.data - &xw.data, eps, out.report, out.record)
                    } else {
                        (
                            Array4::zeros(xw.data.raw_dim()),
                            out.eps_pred,
                            None,
                            out.record,
                        )
                    }
                }
                _ => {
                    let (eps, record, _) = net::forward(&xw.data, t, &emb, weights, mode)?;
                    (Array4::zeros(xw.data.raw_dim()), eps, None, record)
                }
            };
            if let (Some(dir), Some(rc)) = (&cfg.attention_dir, &cfg.rad) {
                dump_heatmaps(dir, &record, rc, t, s0)?;
            }
            fused_eps
                .slice_mut(s![s0..s0 + window, .., .., ..])
                .scaled_add(1.0, &eps);
            fused_delta
                .slice_mut(s![s0..s0 + window, .., .., ..])
                .scaled_add(1.0, &delta);
            window_reports.push(report);
        }
        for (fi, &cov) in coverage.iter().enumerate() {
            let inv = 1.0 / cov as f64;
            fused_eps.slice_mut(s![fi, .., .., ..]).mapv_inplace(|v| v * inv);
            fused_delta
                .slice_mut(s![fi, .., .., ..])
                .mapv_inplace(|v| v * inv);
        }
        let x_guided = LatentState::new(&x.data + &fused_delta, t);
        if !x_guided.all_finite() {
            return Err(Error::Numeric {
                timestep: t,
                message: "non-finite sample after guidance".into(),
            });
        }
        x = irjs::irjs_step(
            &x_guided, &fused_eps, v0, &union, t, t_prev, cfg.eta, schedule, &cfg.irjs, cfg.seed,
        )?;
        steps.push(StepReport {
            t,
            t_prev,
            alpha: alpha_used,
            windows: window_reports,
        });
    }
    let mut video = x.into_video();
    video.clamp_unit();
    Ok(EditResult {
        video,
        report: RunReport {
            timesteps: ts,
            window,
            stride,
            window_starts: starts,
            coverage,
            steps,
        },
    })
}

/// Full edit: invert the source under its own caption, then re-sample under
/// the edited caption with guidance and blending.
pub fn edit_video(
    v0: &VideoTensor,
    cfg: &EditConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
) -> Result<EditResult> {
    let x_init = invert_video(v0, &cfg.source_prompt, weights, schedule, cfg.sample_steps)?;
    sliding_window_edit(&x_init, v0, cfg, weights, schedule)
}
