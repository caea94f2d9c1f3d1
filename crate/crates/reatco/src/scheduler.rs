//! Noise schedules, forward diffusion, DDIM stepping/inversion, and the DDPM
//! posterior.
//!
//! Timestep indexing: the cumulative table `alphas_bar` has `T + 1` entries
//! with index 0 meaning clean data. `betas[t]` is the variance of the
//! transition from timestep `t` to `t + 1`, so
//! `alphas_bar[t] = prod_{s < t} (1 - betas[s])`.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::LatentState;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub num_steps: usize,
    pub betas: Vec<f64>,
    #[serde(skip)]
    alphas_bar: Vec<f64>,
}

/// Mean and per-timestep standard deviation of a Gaussian sampling transition.
#[derive(Debug, Clone)]
pub struct PosteriorParams {
    pub mean: Array4<f64>,
    pub stddev: f64,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if betas.iter().any(|&b| !(0.0..1.0).contains(&b) || b <= 0.0) {
            return Err(Error::InvalidArgument(
                "betas must lie strictly inside (0,1)".into(),
            ));
        }
        let mut alphas_bar = Vec::with_capacity(betas.len() + 1);
        alphas_bar.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alphas_bar.push(acc);
        }
        Ok(NoiseSchedule {
            num_steps: betas.len(),
            betas,
            alphas_bar,
        })
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t]
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    /// Beta of the transition arriving at timestep `t` (1-based step).
    pub fn beta_at(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({"T": self.num_steps, "betas": self.betas}).to_string()
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            #[serde(rename = "T")]
            t: usize,
            betas: Vec<f64>,
        }
        let d: Doc = serde_json::from_str(doc)?;
        if d.betas.len() != d.t {
            return Err(Error::Config(format!(
                "schedule document: T={} but {} betas",
                d.t,
                d.betas.len()
            )));
        }
        NoiseSchedule::new(d.betas)
    }
}

/// Linear beta schedule.
pub fn make_linear_schedule(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(
            "need 0 < beta_start <= beta_end < 1".into(),
        ));
    }
    let betas = if num_steps == 1 {
        vec![beta_start]
    } else {
        (0..num_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::new(betas)
}

/// Default training schedule: chosen so the terminal signal level is
/// essentially gone (`alpha_bar(T) < 0.01`).
pub fn default_train_schedule() -> NoiseSchedule {
    make_linear_schedule(200, 1e-4, 0.05).expect("default schedule is valid")
}

/// `sqrt(a_bar_t) v0 + sqrt(1 - a_bar_t) eps`.
pub fn diffuse_forward(
    v0: &Array4<f64>,
    t: usize,
    eps: &Array4<f64>,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    if v0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "v0 {:?} vs eps {:?}",
            v0.shape(),
            eps.shape()
        )));
    }
    if t > schedule.num_steps {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} out of range 0..={}",
            schedule.num_steps
        )));
    }
    let ab = schedule.alpha_bar(t);
    let data = v0 * ab.sqrt() + eps * (1.0 - ab).sqrt();
    Ok(LatentState::new(data, t))
}

fn predict_x0(
    x_t: &Array4<f64>,
    eps_pred: &Array4<f64>,
    alpha_bar_t: f64,
) -> Result<Array4<f64>> {
    if alpha_bar_t <= 0.0 {
        return Err(Error::InvalidArgument("alpha_bar(t) must be > 0".into()));
    }
    Ok((x_t - &(eps_pred * (1.0 - alpha_bar_t).sqrt())) / alpha_bar_t.sqrt())
}

/// One DDIM reverse step from `t` to `t_prev`.
///
/// Deterministic when `eta = 0`; otherwise the stochastic term draws from a
/// generator derived from `(rng_seed, "ddim", t)`.
pub fn ddim_step(
    x_t: &LatentState,
    eps_pred: &Array4<f64>,
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<LatentState> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "ddim_step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument("eta must lie in [0,1]".into()));
    }
    x_t.check_shape(eps_pred)?;
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let x0 = predict_x0(&x_t.data, eps_pred, ab_t)?;
    let sigma = eta
        * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt()
        * (1.0 - ab_t / ab_prev).sqrt();
    let dir_coeff = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = &x0 * ab_prev.sqrt() + eps_pred * dir_coeff;
    if sigma > 0.0 {
        let mut rng = rng::derive(rng_seed, "ddim", t as u64);
        let z = rng::normal_like(x_t.data.shape(), &mut rng);
        out = out + z * sigma;
    }
    Ok(LatentState::new(out, t_prev))
}

/// Inverse of [`ddim_step`] with `eta = 0` under the fixed-eps approximation.
pub fn ddim_invert_step(
    x_prev: &LatentState,
    eps_pred: &Array4<f64>,
    t_prev: usize,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    if t <= t_prev {
        return Err(Error::InvalidArgument(format!(
            "ddim_invert_step needs t > t_prev, got {t} <= {t_prev}"
        )));
    }
    x_prev.check_shape(eps_pred)?;
    let ab_prev = schedule.alpha_bar(t_prev);
    let ab_t = schedule.alpha_bar(t);
    let x0 = predict_x0(&x_prev.data, eps_pred, ab_prev)?;
    let out = &x0 * ab_t.sqrt() + eps_pred * (1.0 - ab_t).sqrt();
    Ok(LatentState::new(out, t))
}

/// DDPM posterior mean/stddev given a noise prediction at timestep `t >= 1`.
pub fn ddpm_posterior(
    x_t: &LatentState,
    eps_pred: &Array4<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<PosteriorParams> {
    if t == 0 || t > schedule.num_steps {
        return Err(Error::InvalidArgument(format!(
            "ddpm_posterior needs 1 <= t <= T, got {t}"
        )));
    }
    x_t.check_shape(eps_pred)?;
    let beta = schedule.beta_at(t);
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let x0 = predict_x0(&x_t.data, eps_pred, ab_t)?;
    let denom = 1.0 - ab_t;
    let coeff_x0 = ab_prev.sqrt() * beta / denom;
    let coeff_xt = (1.0 - beta).sqrt() * (1.0 - ab_prev) / denom;
    let mean = &x0 * coeff_x0 + &x_t.data * coeff_xt;
    let var = beta * (1.0 - ab_prev) / denom;
    Ok(PosteriorParams {
        mean,
        stddev: var.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    fn scalar(v: f64) -> Array4<f64> {
        Array4::from_elem((1, 1, 1, 1), v)
    }

    #[test]
    fn single_step_schedule() {
        let s = make_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas_bar(), &[1.0, 0.5]);
    }

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::new(vec![0.1, 0.2]).unwrap();
        let expect = arr1(&[1.0, 0.9, 0.72]);
        for (a, b) in s.alphas_bar().iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fifty_step_schedule_is_monotone() {
        let s = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let ab = s.alphas_bar();
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab[50] < 0.7);
        // Cross-check the cumulative product against direct evaluation.
        let mut acc = 1.0;
        for (t, &b) in s.betas.iter().enumerate() {
            acc *= 1.0 - b;
            assert_abs_diff_eq!(ab[t + 1], acc, epsilon = 1e-10);
        }
    }

    #[test]
    fn default_train_schedule_terminal_noise() {
        let s = default_train_schedule();
        assert!(s.alpha_bar(s.num_steps) < 0.01);
    }

    #[test]
    fn rejects_bad_args() {
        assert!(make_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.3, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn diffuse_endpoints() {
        let s = NoiseSchedule::new(vec![0.1, 0.2]).unwrap();
        let v0 = scalar(0.7);
        let eps = scalar(-1.3);
        let at0 = diffuse_forward(&v0, 0, &eps, &s).unwrap();
        assert_abs_diff_eq!(at0.data[[0, 0, 0, 0]], 0.7, epsilon = 1e-15);
        assert_eq!(at0.timestep, 0);
    }

    #[test]
    fn diffuse_closed_form() {
        // alpha_bar = 0.64 at t=1 for beta = 0.36
        let s = NoiseSchedule::new(vec![0.36]).unwrap();
        let out = diffuse_forward(&scalar(1.0), 1, &scalar(0.5), &s).unwrap();
        assert_abs_diff_eq!(out.data[[0, 0, 0, 0]], 1.1, epsilon = 1e-12);
    }

    #[test]
    fn diffuse_shape_mismatch() {
        let s = NoiseSchedule::new(vec![0.1]).unwrap();
        let v0 = Array4::zeros((1, 1, 2, 2));
        let eps = Array4::zeros((1, 1, 2, 3));
        assert!(diffuse_forward(&v0, 1, &eps, &s).is_err());
    }

    /// Schedule with alpha_bar = [1.0, 0.81, 0.64]: betas [0.19, 0.64/0.81].
    fn two_level() -> NoiseSchedule {
        NoiseSchedule::new(vec![0.19, 1.0 - 0.64 / 0.81]).unwrap()
    }

    #[test]
    fn ddim_terminal_step_returns_x0() {
        let s = two_level();
        let x_t = LatentState::new(scalar(1.1), 2);
        let out = ddim_step(&x_t, &scalar(0.5), 2, 0, 0.0, &s, 0).unwrap();
        // x0 = (1.1 - 0.6*0.5)/0.8 = 1.0
        assert_abs_diff_eq!(out.data[[0, 0, 0, 0]], 1.0, epsilon = 1e-12);
        assert_eq!(out.timestep, 0);
    }

    #[test]
    fn ddim_step_derived_case() {
        let s = two_level();
        let x_t = LatentState::new(scalar(1.1), 2);
        let out = ddim_step(&x_t, &scalar(0.5), 2, 1, 0.0, &s, 0).unwrap();
        let expect = 0.9 + (0.19f64).sqrt() * 0.5;
        assert_abs_diff_eq!(out.data[[0, 0, 0, 0]], expect, epsilon = 1e-12);
    }

    #[test]
    fn ddim_invert_roundtrip() {
        let s = two_level();
        let x_prev = LatentState::new(scalar(0.37), 1);
        let eps = scalar(-0.9);
        let up = ddim_invert_step(&x_prev, &eps, 1, 2, &s).unwrap();
        let down = ddim_step(&up, &eps, 2, 1, 0.0, &s, 0).unwrap();
        assert_abs_diff_eq!(down.data[[0, 0, 0, 0]], 0.37, epsilon = 1e-9);
    }

    #[test]
    fn ddim_invert_from_clean() {
        let s = two_level();
        let x0 = LatentState::new(scalar(0.5), 0);
        let eps = scalar(0.25);
        let up = ddim_invert_step(&x0, &eps, 0, 1, &s).unwrap();
        let expect = 0.9 * 0.5 + (0.19f64).sqrt() * 0.25;
        assert_abs_diff_eq!(up.data[[0, 0, 0, 0]], expect, epsilon = 1e-12);
    }

    #[test]
    fn ddim_rejects_bad_order() {
        let s = two_level();
        let x = LatentState::new(scalar(0.0), 1);
        assert!(ddim_step(&x, &scalar(0.0), 1, 1, 0.0, &s, 0).is_err());
        assert!(ddim_invert_step(&x, &scalar(0.0), 1, 1, &s).is_err());
    }

    #[test]
    fn posterior_final_step_variance_vanishes() {
        let s = NoiseSchedule::new(vec![0.36]).unwrap();
        let x_t = LatentState::new(scalar(1.1), 1);
        let p = ddpm_posterior(&x_t, &scalar(0.5), 1, &s).unwrap();
        // mean collapses to the x0 estimate, variance to zero
        assert_abs_diff_eq!(p.mean[[0, 0, 0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.stddev, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn posterior_no_noise_limit() {
        let s = NoiseSchedule::new(vec![0.5, 1e-9]).unwrap();
        let x_t = LatentState::new(scalar(0.8), 2);
        let p = ddpm_posterior(&x_t, &scalar(0.1), 2, &s).unwrap();
        assert_abs_diff_eq!(p.mean[[0, 0, 0, 0]], 0.8, epsilon = 1e-6);
    }

    #[test]
    fn posterior_rejects_t_zero() {
        let s = NoiseSchedule::new(vec![0.1]).unwrap();
        let x = LatentState::new(scalar(0.0), 0);
        assert!(ddpm_posterior(&x, &scalar(0.0), 0, &s).is_err());
    }

    #[test]
    fn posterior_matches_gaussian_chain_oracle() {
        // Data is a point mass at v0. The exact chain posterior
        // q(x_1 | x_2, x_0=v0) has mean
        //   (sqrt(ab1) b2 v0 + sqrt(a2)(1-ab1) x2) / (1-ab2)
        // which the closed form must reproduce when eps_pred is the exact
        // noise consistent with (v0, x2).
        let s = NoiseSchedule::new(vec![0.1, 0.2]).unwrap();
        let v0 = 0.3;
        let x2 = 0.9;
        let ab2 = s.alpha_bar(2);
        let eps = (x2 - ab2.sqrt() * v0) / (1.0 - ab2).sqrt();
        let p = ddpm_posterior(&LatentState::new(scalar(x2), 2), &scalar(eps), 2, &s).unwrap();
        let ab1 = s.alpha_bar(1);
        let b2 = s.beta_at(2);
        let mean = (ab1.sqrt() * b2 * v0 + (1.0 - b2).sqrt() * (1.0 - ab1) * x2) / (1.0 - ab2);
        let var = b2 * (1.0 - ab1) / (1.0 - ab2);
        assert_abs_diff_eq!(p.mean[[0, 0, 0, 0]], mean, epsilon = 1e-12);
        assert_abs_diff_eq!(p.stddev, var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn schedule_json_roundtrip() {
        let s = make_linear_schedule(5, 1e-3, 0.1).unwrap();
        let doc = s.to_json();
        let back = NoiseSchedule::from_json(&doc).unwrap();
        assert_eq!(back.betas, s.betas);
        assert_eq!(back.alphas_bar(), s.alphas_bar());
    }
}
