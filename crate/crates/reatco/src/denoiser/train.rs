//! Eps-MSE training for the toy denoiser.
//!
//! Single optimization stream with Adam; every random draw (timestep, noise)
//! is derived from `(seed, step)`, so training is bit-reproducible. Gradient
//! reduction over frames happens in ascending frame order inside the network
//! backward, which keeps the parallel feature out of the numerics.

use ndarray::Axis;
use rand::Rng;
use std::collections::BTreeMap;

use crate::par::ExecMode;
use crate::rng;
use crate::scheduler::{diffuse_forward, NoiseSchedule};
use crate::tensor::VideoTensor;
use crate::{Error, Result};

use super::net::{self, DenoiserWeights, NetConfig};
use super::{embed_tokens, TokenSequence};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            epochs: 30,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Per-step training loss.
    pub losses: Vec<f64>,
    pub baseline_mse: f64,
    pub final_mse: f64,
}

struct Adam {
    m: BTreeMap<&'static str, Vec<f64>>,
    v: BTreeMap<&'static str, Vec<f64>>,
    step: usize,
    lr: f64,
}

impl Adam {
    fn new(lr: f64) -> Self {
        Adam {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, weights: &mut DenoiserWeights, grads: &super::DenoiserGrads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let t = self.step as f64;
        let corr1 = 1.0 - B1.powf(t);
        let corr2 = 1.0 - B2.powf(t);
        // w_temporal rides along as a 1-element pseudo-tensor.
        let mut wt = [weights.w_temporal];
        let gt = [grads.w_temporal];
        let mut params = weights.param_slices_mut();
        params.push(("w_temporal", &mut wt));
        let mut gslices = grads.grad_slices();
        gslices.push(("w_temporal", &gt));
        for ((name, p), (gname, g)) in params.into_iter().zip(gslices) {
            debug_assert_eq!(name, gname);
            let m = self.m.entry(name).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name).or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        weights.w_temporal = wt[0];
    }
}

/// Mean eps-prediction MSE over deterministic draws from the dataset.
pub fn eval_mse(
    weights: &DenoiserWeights,
    dataset: &[(VideoTensor, TokenSequence)],
    schedule: &NoiseSchedule,
    seed: u64,
    draws_per_video: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (vi, (video, prompt)) in dataset.iter().enumerate() {
        let emb = embed_tokens(prompt, weights.cfg.embed_dim)?;
        for d in 0..draws_per_video {
            let mut r = rng::derive(seed, "eval", (vi * draws_per_video + d) as u64);
            let t = r.gen_range(1..=schedule.num_steps);
            let eps = rng::normal_like(video.0.shape(), &mut r);
            let x_t = diffuse_forward(&video.0, t, &eps, schedule)?;
            let (eps_pred, _, _) = net::forward(&x_t.data, t, &emb, weights, ExecMode::default())?;
            let diff = &eps_pred - &eps;
            total += diff.mapv(|v| v * v).mean().unwrap();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Train with explicit configuration; returns the weights and a report.
pub fn train_with_config(
    dataset: &[(VideoTensor, TokenSequence)],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserWeights, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let shape = dataset[0].0 .0.shape().to_vec();
    if dataset.iter().any(|(v, _)| v.0.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch("all training videos must share a shape".into()));
    }
    let mut weights = DenoiserWeights::init(cfg.net.clone(), cfg.seed);
    let baseline = eval_mse(&weights, dataset, schedule, cfg.seed ^ 0x5eed, 4)?;
    let embeddings = dataset
        .iter()
        .map(|(_, p)| embed_tokens(p, cfg.net.embed_dim))
        .collect::<Result<Vec<_>>>()?;

    let mut opt = Adam::new(cfg.learning_rate);
    let mut losses = Vec::new();
    let mut step = 0u64;
    for _epoch in 0..cfg.epochs {
        for (vi, (video, _)) in dataset.iter().enumerate() {
            let mut r = rng::derive(cfg.seed, "train", step);
            let t = r.gen_range(1..=schedule.num_steps);
            let eps = rng::normal_like(&shape, &mut r);
            let x_t = diffuse_forward(&video.0, t, &eps, schedule)?;
            let (eps_pred, _, cache) =
                net::forward(&x_t.data, t, &embeddings[vi], &weights, ExecMode::default())?;
            let diff = &eps_pred - &eps;
            let n = diff.len() as f64;
            let loss = diff.mapv(|v| v * v).sum() / n;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    timestep: t,
                    message: format!(
                        "training diverged at step {step} (video {vi}): loss = {loss}"
                    ),
                });
            }
            losses.push(loss);
            let grad_eps = diff.mapv(|v| 2.0 * v / n);
            let (_, grads) = net::backward(
                &x_t.data,
                &embeddings[vi],
                &weights,
                &cache,
                Some(&grad_eps),
                None,
                ExecMode::default(),
                true,
            );
            opt.update(&mut weights, &grads.expect("weight grads requested"));
            step += 1;
        }
    }
    if !weights.all_finite() {
        return Err(Error::Numeric {
            timestep: 0,
            message: "non-finite weights after training".into(),
        });
    }
    let final_mse = eval_mse(&weights, dataset, schedule, cfg.seed ^ 0x5eed, 4)?;
    Ok((
        weights,
        TrainReport {
            losses,
            baseline_mse: baseline,
            final_mse,
        },
    ))
}

/// Default-architecture training entry point.
pub fn train_toy_denoiser(
    dataset: &[(VideoTensor, TokenSequence)],
    schedule: &NoiseSchedule,
    epochs: usize,
    seed: u64,
) -> Result<(DenoiserWeights, TrainReport)> {
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    train_with_config(dataset, schedule, &cfg)
}

/// Smoothed view of a loss curve (trailing window mean).
pub fn smooth(losses: &[f64], window: usize) -> Vec<f64> {
    losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

#[allow(unused)]
fn frame_mean(v: &VideoTensor) -> f64 {
    v.0.mean_axis(Axis(0)).unwrap().mean().unwrap()
}
