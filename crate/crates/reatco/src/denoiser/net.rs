//! The toy eps-prediction network: two conv blocks with timestep embedding, a
//! shared temporal-mean feature, and one text cross-attention layer probed at
//! a reduced resolution.
//!
//! Both the forward pass and a hand-derived reverse pass live here. The
//! reverse pass accepts cotangents on either the predicted noise (training)
//! or the attention maps (guidance) and returns the gradient with respect to
//! the input sample, plus weight gradients on request.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};

use crate::par::{self, ExecMode};
use crate::rng;
use crate::{Error, Result};

use super::{AttentionRecord, TokenEmbedding};

/// Dimension of the sinusoidal timestep feature.
pub const T_FEAT_DIM: usize = 8;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub attn_dim: usize,
    pub embed_dim: usize,
    /// Attention probe grid is (H / probe_factor, W / probe_factor).
    pub probe_factor: usize,
    /// Training-schedule length used to normalize timestep features.
    pub t_max: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 3,
            channels: 16,
            attn_dim: 16,
            embed_dim: 16,
            probe_factor: 4,
            t_max: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights {
    pub cfg: NetConfig,
    pub conv1: Array4<f64>,
    pub b1: Array1<f64>,
    pub u1: Array2<f64>,
    pub conv2: Array4<f64>,
    pub b2: Array1<f64>,
    pub u2: Array2<f64>,
    pub w_temporal: f64,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub conv3: Array4<f64>,
    pub b3: Array1<f64>,
}

/// Weight-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct DenoiserGrads {
    pub conv1: Array4<f64>,
    pub b1: Array1<f64>,
    pub u1: Array2<f64>,
    pub conv2: Array4<f64>,
    pub b2: Array1<f64>,
    pub u2: Array2<f64>,
    pub w_temporal: f64,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub conv3: Array4<f64>,
    pub b3: Array1<f64>,
}

impl DenoiserWeights {
    /// Fresh initialization. Query projection starts at zero so an untrained
    /// net emits uniform attention; everything else is small-scale Gaussian.
    pub fn init(cfg: NetConfig, seed: u64) -> Self {
        let c = cfg.channels;
        let cin = cfg.in_channels;
        let d = cfg.attn_dim;
        let ce = cfg.embed_dim;
        let gauss = |name: &str, shape: &[usize], scale: f64| {
            let mut r = rng::derive(seed, name, 0);
            rng::normal_dyn(shape, &mut r).mapv(|v| v * scale)
        };
        let fan = |n: usize| (2.0 / n as f64).sqrt();
        DenoiserWeights {
            conv1: gauss("conv1", &[c, cin, 3, 3], fan(cin * 9))
                .into_dimensionality()
                .unwrap(),
            b1: Array1::zeros(c),
            u1: gauss("u1", &[c, T_FEAT_DIM], 0.1).into_dimensionality().unwrap(),
            conv2: gauss("conv2", &[c, c, 3, 3], fan(c * 9))
                .into_dimensionality()
                .unwrap(),
            b2: Array1::zeros(c),
            u2: gauss("u2", &[c, T_FEAT_DIM], 0.1).into_dimensionality().unwrap(),
            w_temporal: 0.1,
            wq: Array2::zeros((d, c)),
            wk: gauss("wk", &[d, ce], fan(ce)).into_dimensionality().unwrap(),
            wv: gauss("wv", &[c, ce], 0.1).into_dimensionality().unwrap(),
            conv3: gauss("conv3", &[cin, c, 3, 3], fan(c * 9))
                .into_dimensionality()
                .unwrap(),
            b3: Array1::zeros(cin),
            cfg,
        }
    }

    pub fn zeros_like_grads(&self) -> DenoiserGrads {
        DenoiserGrads {
            conv1: Array4::zeros(self.conv1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            u1: Array2::zeros(self.u1.raw_dim()),
            conv2: Array4::zeros(self.conv2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            u2: Array2::zeros(self.u2.raw_dim()),
            w_temporal: 0.0,
            wq: Array2::zeros(self.wq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            wv: Array2::zeros(self.wv.raw_dim()),
            conv3: Array4::zeros(self.conv3.raw_dim()),
            b3: Array1::zeros(self.b3.raw_dim()),
        }
    }

    /// Parameter tensors as named flat slices, in a fixed order.
    pub fn param_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("conv1", self.conv1.as_slice_mut().unwrap()),
            ("b1", self.b1.as_slice_mut().unwrap()),
            ("u1", self.u1.as_slice_mut().unwrap()),
            ("conv2", self.conv2.as_slice_mut().unwrap()),
            ("b2", self.b2.as_slice_mut().unwrap()),
            ("u2", self.u2.as_slice_mut().unwrap()),
            ("wq", self.wq.as_slice_mut().unwrap()),
            ("wk", self.wk.as_slice_mut().unwrap()),
            ("wv", self.wv.as_slice_mut().unwrap()),
            ("conv3", self.conv3.as_slice_mut().unwrap()),
            ("b3", self.b3.as_slice_mut().unwrap()),
        ]
    }

    pub fn all_finite(&self) -> bool {
        let arrays: [&[f64]; 11] = [
            self.conv1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.u1.as_slice().unwrap(),
            self.conv2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.u2.as_slice().unwrap(),
            self.wq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.conv3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ];
        self.w_temporal.is_finite() && arrays.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

impl DenoiserGrads {
    pub fn grad_slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("conv1", self.conv1.as_slice().unwrap()),
            ("b1", self.b1.as_slice().unwrap()),
            ("u1", self.u1.as_slice().unwrap()),
            ("conv2", self.conv2.as_slice().unwrap()),
            ("b2", self.b2.as_slice().unwrap()),
            ("u2", self.u2.as_slice().unwrap()),
            ("wq", self.wq.as_slice().unwrap()),
            ("wk", self.wk.as_slice().unwrap()),
            ("wv", self.wv.as_slice().unwrap()),
            ("conv3", self.conv3.as_slice().unwrap()),
            ("b3", self.b3.as_slice().unwrap()),
        ]
    }

    pub fn add_assign(&mut self, other: &DenoiserGrads) {
        self.conv1 += &other.conv1;
        self.b1 += &other.b1;
        self.u1 += &other.u1;
        self.conv2 += &other.conv2;
        self.b2 += &other.b2;
        self.u2 += &other.u2;
        self.w_temporal += other.w_temporal;
        self.wq += &other.wq;
        self.wk += &other.wk;
        self.wv += &other.wv;
        self.conv3 += &other.conv3;
        self.b3 += &other.b3;
    }
}

pub fn timestep_features(t: usize, t_max: usize) -> [f64; T_FEAT_DIM] {
    let tau = t as f64 / t_max.max(1) as f64;
    let mut out = [0.0; T_FEAT_DIM];
    for k in 0..T_FEAT_DIM / 2 {
        let omega = std::f64::consts::PI * (1 << k) as f64;
        out[2 * k] = (omega * tau).sin();
        out[2 * k + 1] = (omega * tau).cos();
    }
    out
}

/// 3x3 same-padding convolution of a (Ci, H, W) map with (Co, Ci, 3, 3) weights.
fn conv3x3(input: &Array3<f64>, w: &Array4<f64>) -> Array3<f64> {
    let (ci_n, h, wd) = input.dim();
    let co_n = w.shape()[0];
    debug_assert_eq!(w.shape()[1], ci_n);
    let mut out = Array3::zeros((co_n, h, wd));
    for co in 0..co_n {
        let mut o = out.index_axis_mut(Axis(0), co);
        for ci in 0..ci_n {
            let inp = input.index_axis(Axis(0), ci);
            for kr in 0..3usize {
                let dr = kr as isize - 1;
                let (or0, or1, ir0, ir1) = shift_range(h, dr);
                for kc in 0..3usize {
                    let dc = kc as isize - 1;
                    let kv = w[[co, ci, kr, kc]];
                    if kv == 0.0 {
                        continue;
                    }
                    let (oc0, oc1, ic0, ic1) = shift_range(wd, dc);
                    o.slice_mut(s![or0..or1, oc0..oc1])
                        .scaled_add(kv, &inp.slice(s![ir0..ir1, ic0..ic1]));
                }
            }
        }
    }
    out
}

/// Valid output/input index ranges for an offset `d` (out[r] += in[r + d]).
fn shift_range(n: usize, d: isize) -> (usize, usize, usize, usize) {
    if d >= 0 {
        let d = d as usize;
        (0, n - d, d, n)
    } else {
        let d = (-d) as usize;
        (d, n, 0, n - d)
    }
}

/// Gradient of `conv3x3` with respect to its input: convolution of the output
/// cotangent with the channel-transposed, spatially flipped kernel.
fn conv3x3_backward_input(gout: &Array3<f64>, w: &Array4<f64>) -> Array3<f64> {
    let (co_n, ci_n) = (w.shape()[0], w.shape()[1]);
    let mut flipped = Array4::zeros((ci_n, co_n, 3, 3));
    for co in 0..co_n {
        for ci in 0..ci_n {
            for kr in 0..3 {
                for kc in 0..3 {
                    flipped[[ci, co, 2 - kr, 2 - kc]] = w[[co, ci, kr, kc]];
                }
            }
        }
    }
    conv3x3(gout, &flipped)
}

/// Accumulate the weight gradient of `conv3x3`.
fn conv3x3_backward_weight(input: &Array3<f64>, gout: &Array3<f64>, dw: &mut Array4<f64>) {
    let (ci_n, h, wd) = input.dim();
    let co_n = gout.shape()[0];
    for co in 0..co_n {
        let g = gout.index_axis(Axis(0), co);
        for ci in 0..ci_n {
            let inp = input.index_axis(Axis(0), ci);
            for kr in 0..3usize {
                let dr = kr as isize - 1;
                let (or0, or1, ir0, ir1) = shift_range(h, dr);
                for kc in 0..3usize {
                    let dc = kc as isize - 1;
                    let (oc0, oc1, ic0, ic1) = shift_range(wd, dc);
                    let prod = (&g.slice(s![or0..or1, oc0..oc1])
                        * &inp.slice(s![ir0..ir1, ic0..ic1]))
                        .sum();
                    dw[[co, ci, kr, kc]] += prod;
                }
            }
        }
    }
}

fn avg_pool(input: &Array3<f64>, p: usize) -> Array3<f64> {
    let (c_n, h, w) = input.dim();
    let (hp, wp) = (h / p, w / p);
    let norm = 1.0 / (p * p) as f64;
    let mut out = Array3::zeros((c_n, hp, wp));
    for c in 0..c_n {
        for r in 0..hp {
            for q in 0..wp {
                out[[c, r, q]] = input
                    .slice(s![c, r * p..(r + 1) * p, q * p..(q + 1) * p])
                    .sum()
                    * norm;
            }
        }
    }
    out
}

fn avg_pool_backward(gout: &Array3<f64>, p: usize, h: usize, w: usize) -> Array3<f64> {
    let (c_n, hp, wp) = gout.dim();
    let norm = 1.0 / (p * p) as f64;
    let mut out = Array3::zeros((c_n, h, w));
    for c in 0..c_n {
        for r in 0..hp {
            for q in 0..wp {
                out.slice_mut(s![c, r * p..(r + 1) * p, q * p..(q + 1) * p])
                    .mapv_inplace(|_| gout[[c, r, q]] * norm);
            }
        }
    }
    out
}

/// Nearest-neighbour upsample by factor `p`.
fn upsample_nearest(input: &Array3<f64>, p: usize) -> Array3<f64> {
    let (c_n, hp, wp) = input.dim();
    let mut out = Array3::zeros((c_n, hp * p, wp * p));
    for c in 0..c_n {
        for r in 0..hp {
            for q in 0..wp {
                out.slice_mut(s![c, r * p..(r + 1) * p, q * p..(q + 1) * p])
                    .fill(input[[c, r, q]]);
            }
        }
    }
    out
}

fn upsample_backward(gout: &Array3<f64>, p: usize) -> Array3<f64> {
    let (c_n, h, w) = gout.dim();
    let (hp, wp) = (h / p, w / p);
    let mut out = Array3::zeros((c_n, hp, wp));
    for c in 0..c_n {
        for r in 0..hp {
            for q in 0..wp {
                out[[c, r, q]] = gout
                    .slice(s![c, r * p..(r + 1) * p, q * p..(q + 1) * p])
                    .sum();
            }
        }
    }
    out
}

/// Per-frame intermediate activations kept for the reverse pass.
pub struct FrameCache {
    h1: Array3<f64>,
    g: Array3<f64>,
    h2: Array3<f64>,
    pooled: Array3<f64>,
    q: Array3<f64>,
    attn: Array3<f64>,
    h3: Array3<f64>,
}

pub struct ForwardCache {
    pub frames: Vec<FrameCache>,
    mean_feat: Array3<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    tfeat: [f64; T_FEAT_DIM],
}

/// Forward pass over all frames. Returns the noise prediction, the attention
/// record, and the cache needed by [`backward`].
pub fn forward(
    x: &Array4<f64>,
    t: usize,
    emb: &TokenEmbedding,
    w: &DenoiserWeights,
    mode: ExecMode,
) -> Result<(Array4<f64>, AttentionRecord, ForwardCache)> {
    let (f_n, cin, h, wd) = x.dim();
    let cfg = &w.cfg;
    if cin != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "expected {} input channels, got {cin}",
            cfg.in_channels
        )));
    }
    let p = cfg.probe_factor;
    if h % p != 0 || wd % p != 0 {
        return Err(Error::ShapeMismatch(format!(
            "probe factor {p} must divide frame size {h}x{wd}"
        )));
    }
    let tfeat = timestep_features(t, cfg.t_max);
    let temb1 = w.u1.dot(&ndarray::arr1(&tfeat));
    let temb2 = w.u2.dot(&ndarray::arr1(&tfeat));
    // K = E Wk^T (L x d), V = E Wv^T (L x channels)
    let key = emb.matrix.dot(&w.wk.t());
    let value = emb.matrix.dot(&w.wv.t());
    let l_n = key.shape()[0];
    let scale = 1.0 / (cfg.attn_dim as f64).sqrt();

    // Block 1 per frame.
    let h1: Vec<Array3<f64>> = par::map_indexed(f_n, mode, |fi| {
        let xf = x.index_axis(Axis(0), fi).to_owned();
        let mut pre = conv3x3(&xf, &w.conv1);
        for c in 0..cfg.channels {
            let add = w.b1[c] + temb1[c];
            pre.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + add);
        }
        pre.mapv_inplace(f64::tanh);
        pre
    });

    // Shared temporal mean feature.
    let mut mean_feat = Array3::zeros(h1[0].raw_dim());
    for hf in &h1 {
        mean_feat += hf;
    }
    mean_feat.mapv_inplace(|v| v / f_n as f64);

    // Blocks 2..output per frame.
    let rest: Vec<(FrameCache, Array3<f64>)> = par::map_indexed(f_n, mode, |fi| {
        let g = &h1[fi] + &(&mean_feat * w.w_temporal);
        let mut pre2 = conv3x3(&g, &w.conv2);
        for c in 0..cfg.channels {
            let add = w.b2[c] + temb2[c];
            pre2.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + add);
        }
        pre2.mapv_inplace(f64::tanh);
        let h2 = pre2;
        let pooled = avg_pool(&h2, p);
        let (hp, wp) = (h / p, wd / p);
        // Q(:, r, c) = Wq pooled(:, r, c)
        let pooled_mat = pooled
            .view()
            .into_shape((cfg.channels, hp * wp))
            .unwrap()
            .to_owned();
        let q_mat = w.wq.dot(&pooled_mat); // (d, hp*wp)
        let q = q_mat
            .into_shape((cfg.attn_dim, hp, wp))
            .unwrap();
        // logits (L, hp, wp); softmax over L.
        let mut attn = Array3::zeros((l_n, hp, wp));
        for r in 0..hp {
            for c in 0..wp {
                let mut logits = vec![0.0; l_n];
                for (li, lv) in logits.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for di in 0..cfg.attn_dim {
                        acc += q[[di, r, c]] * key[[li, di]];
                    }
                    *lv = acc * scale;
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for lv in logits.iter_mut() {
                    *lv = (*lv - max).exp();
                    z += *lv;
                }
                for (li, lv) in logits.iter().enumerate() {
                    attn[[li, r, c]] = lv / z;
                }
            }
        }
        // Attention output: O(ch, r, c) = sum_l A(l,r,c) V(l,ch).
        let mut o = Array3::zeros((cfg.channels, hp, wp));
        for r in 0..hp {
            for c in 0..wp {
                for li in 0..l_n {
                    let a = attn[[li, r, c]];
                    for ch in 0..cfg.channels {
                        o[[ch, r, c]] += a * value[[li, ch]];
                    }
                }
            }
        }
        let h3 = &h2 + &upsample_nearest(&o, p);
        let mut eps = conv3x3(&h3, &w.conv3);
        for c in 0..cfg.in_channels {
            let add = w.b3[c];
            eps.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + add);
        }
        (
            FrameCache {
                h1: h1[fi].clone(),
                g,
                h2,
                pooled,
                q,
                attn,
                h3,
            },
            eps,
        )
    });

    let mut eps_out = Array4::zeros(x.raw_dim());
    let mut maps = Vec::with_capacity(f_n);
    let mut frames = Vec::with_capacity(f_n);
    for (fi, (cache, eps)) in rest.into_iter().enumerate() {
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                timestep: t,
                message: format!("non-finite activation in frame {fi}"),
            });
        }
        eps_out.index_axis_mut(Axis(0), fi).assign(&eps);
        maps.push(cache.attn.clone());
        frames.push(cache);
    }

    Ok((
        eps_out,
        AttentionRecord { maps, timestep: t },
        ForwardCache {
            frames,
            mean_feat,
            key,
            value,
            tfeat,
        },
    ))
}

/// Reverse pass. `grad_eps` and `grad_attn` are cotangents on the two outputs
/// of [`forward`]; either may be absent. Returns the gradient with respect to
/// `x` and, when `want_weight_grads`, the weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    x: &Array4<f64>,
    emb: &TokenEmbedding,
    w: &DenoiserWeights,
    cache: &ForwardCache,
    grad_eps: Option<&Array4<f64>>,
    grad_attn: Option<&[Array3<f64>]>,
    mode: ExecMode,
    want_weight_grads: bool,
) -> (Array4<f64>, Option<DenoiserGrads>) {
    let (f_n, _cin, h, wd) = x.dim();
    let cfg = &w.cfg;
    let p = cfg.probe_factor;
    let (hp, wp) = (h / p, wd / p);
    let l_n = cache.key.shape()[0];
    let scale = 1.0 / (cfg.attn_dim as f64).sqrt();

    // Stage 1, per frame: from the outputs down to d_g.
    struct Stage1 {
        d_g: Array3<f64>,
        grads: Option<DenoiserGrads>,
    }
    let stage1: Vec<Stage1> = par::map_indexed(f_n, mode, |fi| {
        let fc = &cache.frames[fi];
        let mut grads = want_weight_grads.then(|| w.zeros_like_grads());

        // Output conv.
        let mut d_h3 = Array3::zeros(fc.h3.raw_dim());
        if let Some(ge) = grad_eps {
            let gef = ge.index_axis(Axis(0), fi).to_owned();
            d_h3 = conv3x3_backward_input(&gef, &w.conv3);
            if let Some(g) = grads.as_mut() {
                conv3x3_backward_weight(&fc.h3, &gef, &mut g.conv3);
                for c in 0..cfg.in_channels {
                    g.b3[c] += gef.index_axis(Axis(0), c).sum();
                }
            }
        }

        // Skip connection and attention-output path.
        let mut d_h2 = d_h3.clone();
        let d_o = upsample_backward(&d_h3, p);
        let mut d_attn = Array3::zeros((l_n, hp, wp));
        for r in 0..hp {
            for c in 0..wp {
                for li in 0..l_n {
                    let mut acc = 0.0;
                    for ch in 0..cfg.channels {
                        acc += d_o[[ch, r, c]] * cache.value[[li, ch]];
                    }
                    d_attn[[li, r, c]] += acc;
                }
            }
        }
        let mut d_value = Array2::zeros((l_n, cfg.channels));
        if want_weight_grads {
            for r in 0..hp {
                for c in 0..wp {
                    for li in 0..l_n {
                        let a = fc.attn[[li, r, c]];
                        for ch in 0..cfg.channels {
                            d_value[[li, ch]] += a * d_o[[ch, r, c]];
                        }
                    }
                }
            }
        }
        if let Some(ga) = grad_attn {
            d_attn += &ga[fi];
        }

        // Softmax and the query projection.
        let mut d_q = Array3::zeros((cfg.attn_dim, hp, wp));
        let mut d_key = Array2::zeros((l_n, cfg.attn_dim));
        for r in 0..hp {
            for c in 0..wp {
                let mut dot = 0.0;
                for li in 0..l_n {
                    dot += d_attn[[li, r, c]] * fc.attn[[li, r, c]];
                }
                for li in 0..l_n {
                    let dl = fc.attn[[li, r, c]] * (d_attn[[li, r, c]] - dot);
                    for di in 0..cfg.attn_dim {
                        d_q[[di, r, c]] += dl * cache.key[[li, di]] * scale;
                        if want_weight_grads {
                            d_key[[li, di]] += dl * fc.q[[di, r, c]] * scale;
                        }
                    }
                }
            }
        }
        let d_q_mat = d_q.view().into_shape((cfg.attn_dim, hp * wp)).unwrap();
        let pooled_mat = fc
            .pooled
            .view()
            .into_shape((cfg.channels, hp * wp))
            .unwrap();
        let d_pooled_mat = w.wq.t().dot(&d_q_mat); // (channels, hp*wp)
        if let Some(g) = grads.as_mut() {
            g.wq += &d_q_mat.dot(&pooled_mat.t());
            // K = E Wk^T  =>  dWk = dK^T E ; V = E Wv^T  =>  dWv = dV^T E
            g.wk += &d_key.t().dot(&emb.matrix);
            g.wv += &d_value.t().dot(&emb.matrix);
        }
        let d_pooled = d_pooled_mat
            .into_shape((cfg.channels, hp, wp))
            .unwrap()
            .to_owned();
        d_h2 += &avg_pool_backward(&d_pooled, p, h, wd);

        // Block 2.
        let d_pre2 = &d_h2 * &fc.h2.mapv(|v| 1.0 - v * v);
        let d_g = conv3x3_backward_input(&d_pre2, &w.conv2);
        if let Some(g) = grads.as_mut() {
            conv3x3_backward_weight(&fc.g, &d_pre2, &mut g.conv2);
            for c in 0..cfg.channels {
                let sum = d_pre2.index_axis(Axis(0), c).sum();
                g.b2[c] += sum;
                for k in 0..T_FEAT_DIM {
                    g.u2[[c, k]] += sum * cache.tfeat[k];
                }
            }
        }
        Stage1 { d_g, grads }
    });

    // Temporal coupling: d_h1_i = d_g_i + (w_t / F) * sum_j d_g_j.
    let mut d_g_sum = Array3::zeros(stage1[0].d_g.raw_dim());
    for s1 in &stage1 {
        d_g_sum += &s1.d_g;
    }
    let coupling = &d_g_sum * (w.w_temporal / f_n as f64);
    let d_w_temporal: f64 = if want_weight_grads {
        stage1
            .iter()
            .map(|s1| (&cache.mean_feat * &s1.d_g).sum())
            .sum()
    } else {
        0.0
    };

    // Stage 2, per frame: block 1 down to the input.
    let stage2: Vec<(Array3<f64>, Option<DenoiserGrads>)> = par::map_indexed(f_n, mode, |fi| {
        let fc = &cache.frames[fi];
        let d_h1 = &stage1[fi].d_g + &coupling;
        let d_pre1 = &d_h1 * &fc.h1.mapv(|v| 1.0 - v * v);
        let d_x = conv3x3_backward_input(&d_pre1, &w.conv1);
        let grads = want_weight_grads.then(|| {
            let mut g = w.zeros_like_grads();
            let xf = x.index_axis(Axis(0), fi).to_owned();
            conv3x3_backward_weight(&xf, &d_pre1, &mut g.conv1);
            for c in 0..cfg.channels {
                let sum = d_pre1.index_axis(Axis(0), c).sum();
                g.b1[c] += sum;
                for k in 0..T_FEAT_DIM {
                    g.u1[[c, k]] += sum * cache.tfeat[k];
                }
            }
            g
        });
        (d_x, grads)
    });

    let mut grad_x = Array4::zeros(x.raw_dim());
    let mut grads = want_weight_grads.then(|| w.zeros_like_grads());
    for (fi, (d_x, g2)) in stage2.into_iter().enumerate() {
        grad_x.index_axis_mut(Axis(0), fi).assign(&d_x);
        if let (Some(total), Some(g2)) = (grads.as_mut(), g2.as_ref()) {
            total.add_assign(g2);
        }
    }
    if let Some(total) = grads.as_mut() {
        for s1 in &stage1 {
            if let Some(g1) = s1.grads.as_ref() {
                total.add_assign(g1);
            }
        }
        total.w_temporal = d_w_temporal;
    }
    (grad_x, grads)
}
