//! Invariant-region joint sampling.
//!
//! After each sampler step the freshly produced sample keeps only its edited
//! object region; everything else is replaced by the source video diffused to
//! the same timestep. Iterating this keeps the invariant region faithful to
//! the source while the generated content stays distributionally consistent
//! with the sampler's own transition.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::scheduler::{diffuse_forward, ddim_step, NoiseSchedule};
use crate::tensor::{LatentState, VideoTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrjsMode {
    /// One fixed forward-diffusion noise for the whole run; repeated runs are
    /// bit-identical.
    Deterministic,
    /// Fresh forward-diffusion noise per timestep, drawn from the marginal.
    Stochastic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrjsConfig {
    pub enabled: bool,
    pub mode: IrjsMode,
    /// Blend at the terminal step too, making the invariant region exact.
    pub blend_final_step: bool,
}

impl Default for IrjsConfig {
    fn default() -> Self {
        IrjsConfig {
            enabled: true,
            mode: IrjsMode::Deterministic,
            blend_final_step: true,
        }
    }
}

/// `x * M + v * (1 - M)` with the union mask broadcast over channels.
pub fn blend(
    x_prev: &LatentState,
    v_prev: &LatentState,
    union_m: &[Array2<f64>],
) -> Result<LatentState> {
    if x_prev.timestep != v_prev.timestep {
        return Err(Error::InvalidArgument(format!(
            "blend inputs live at different timesteps: {} vs {}",
            x_prev.timestep, v_prev.timestep
        )));
    }
    x_prev.check_shape(&v_prev.data)?;
    let (f_n, c_n, h, w) = x_prev.data.dim();
    if union_m.len() != f_n || union_m.iter().any(|m| m.dim() != (h, w)) {
        return Err(Error::ShapeMismatch("union mask does not match sample shape".into()));
    }
    let mut out = Array4::zeros(x_prev.data.raw_dim());
    for fi in 0..f_n {
        let m = &union_m[fi];
        for ci in 0..c_n {
            for r in 0..h {
                for cc in 0..w {
                    out[[fi, ci, r, cc]] = if m[[r, cc]] > 0.5 {
                        x_prev.data[[fi, ci, r, cc]]
                    } else {
                        v_prev.data[[fi, ci, r, cc]]
                    };
                }
            }
        }
    }
    Ok(LatentState::new(out, x_prev.timestep))
}

/// Forward-diffuse the source to `t_prev` with the mode's noise rule.
pub fn diffused_source(
    v0: &VideoTensor,
    t_prev: usize,
    schedule: &NoiseSchedule,
    cfg: &IrjsConfig,
    rng_seed: u64,
) -> Result<LatentState> {
    let eps = match cfg.mode {
        IrjsMode::Stochastic => {
            let mut r = rng::derive(rng_seed, "irjs-noise", t_prev as u64);
            rng::normal_like(v0.0.shape(), &mut r)
        }
        IrjsMode::Deterministic => {
            let mut r = rng::derive(rng_seed, "irjs-fixed-noise", 0);
            rng::normal_like(v0.0.shape(), &mut r)
        }
    };
    diffuse_forward(&v0.0, t_prev, &eps, schedule)
}

/// One sampler step followed by the invariant-region blend.
///
/// With the config disabled this is exactly the raw sampler step.
#[allow(clippy::too_many_arguments)]
pub fn irjs_step(
    x_t: &LatentState,
    eps_pred: &Array4<f64>,
    v0: &VideoTensor,
    union_m: &[Array2<f64>],
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &NoiseSchedule,
    cfg: &IrjsConfig,
    rng_seed: u64,
) -> Result<LatentState> {
    let x_prev = ddim_step(x_t, eps_pred, t, t_prev, eta, schedule, rng_seed)?;
    if !cfg.enabled || (t_prev == 0 && !cfg.blend_final_step) {
        return Ok(x_prev);
    }
    let v_prev = diffused_source(v0, t_prev, schedule, cfg, rng_seed)?;
    blend(&x_prev, &v_prev, union_m)
}
