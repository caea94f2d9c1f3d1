//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use ndarray::{Array2, Array4};
use once_cell::sync::Lazy;
use rand::Rng;
use std::path::PathBuf;
use std::time::Instant;

use reatco::dataset::{self, ShapeSpec, VideoRecord};
use reatco::denoiser::net::{self, DenoiserWeights};
use reatco::denoiser::train;
use reatco::denoiser::{
    embed_tokens, AnalyticGaussianDenoiser, NetConfig, TokenSequence,
};
use reatco::irjs::{self, IrjsConfig, IrjsMode};
use reatco::metrics::{self, ObjectSpec, Relation, RelationSpec, ToyColorDetector};
use reatco::par::ExecMode;
use reatco::pipeline::{self, EditConfig};
use reatco::rad::{self, RadConfig};
use reatco::regions::{complement, rasterize_all, union_mask, BoxTrack};
use reatco::rng;
use reatco::scheduler::{self, ddpm_posterior, diffuse_forward};
use reatco::tensor::{LatentState, VideoTensor};

// ---------------------------------------------------------------------------
// Shared trained fixture (criteria 6-9).

struct Fixture {
    weights: DenoiserWeights,
    schedule: scheduler::NoiseSchedule,
}

const TRAIN_EPOCHS: usize = 10;
const TRAIN_SEED: u64 = 7;

static FIXTURE: Lazy<Fixture> = Lazy::new(|| {
    let schedule = scheduler::default_train_schedule();
    let data = dataset::synthesize(12, 8, 64, TRAIN_SEED).unwrap();
    let pairs: Vec<_> = data.into_iter().map(|(v, t, _)| (v, t)).collect();
    let (weights, report) =
        train::train_toy_denoiser(&pairs, &schedule, TRAIN_EPOCHS, TRAIN_SEED).unwrap();
    assert!(
        report.final_mse < report.baseline_mse,
        "fixture training must improve on init: {} vs {}",
        report.final_mse,
        report.baseline_mse
    );
    Fixture { weights, schedule }
});

/// Object-insertion scene for the ablation experiments: the source clip shows
/// only a green circle on the right; the edit adds a blue square inside a box
/// track on the left, yielding the two-object relation "blue left of green".
/// Geometry is jittered by the seed. Returns the source record and the target
/// square placement (which only exists in the edit).
fn source_record(seed: u64) -> (VideoRecord, ShapeSpec) {
    let mut r = rng::derive(seed, "trend-src", 0);
    let mut mk = |x0: f64, color: &str, kind: &str| ShapeSpec {
        color_word: color.into(),
        kind_word: kind.into(),
        start: [x0 + r.gen_range(-0.04..0.04), 0.5 + r.gen_range(-0.1..0.1)],
        velocity: [r.gen_range(-0.01..0.01), r.gen_range(-0.01..0.01)],
        radius: r.gen_range(0.11..0.14),
    };
    let target = mk(0.27, "blue", "square");
    let circle = mk(0.73, "green", "circle");
    let rec = VideoRecord {
        caption: words(&["a", "green", "circle"]),
        shapes: vec![circle],
        bg_phase: [r.gen(), r.gen(), r.gen(), r.gen()],
    };
    (rec, target)
}

fn words(w: &[&str]) -> Vec<String> {
    w.iter().map(|s| s.to_string()).collect()
}

fn target_track(target: &ShapeSpec, frames: usize) -> BoxTrack {
    BoxTrack {
        object_id: "square".into(),
        word_index: 1,
        boxes: (0..frames).map(|f| target.bbox_at(f, 0.04)).collect(),
    }
}

fn insertion_edit_config(
    rec: &VideoRecord,
    target: &ShapeSpec,
    rad: Option<RadConfig>,
    seed: u64,
) -> EditConfig {
    EditConfig {
        source_prompt: rec.caption.clone(),
        edited_prompt: words(&["a", "blue", "square", "and", "a", "green", "circle"]),
        tracks: vec![target_track(target, 8)],
        rad,
        sample_steps: 50,
        seed,
        ..EditConfig::default()
    }
}

/// Guidance settings for the ablation sweep. The step sizes are far above the
/// default 1.0 -> 0.5 ladder (pinned separately by criterion 11): the toy
/// model's attention gradient reaches the pixels through a softmax that is
/// nearly saturated, so useful pixel-space movement needs a large multiplier.
fn sweep_rad_config() -> RadConfig {
    RadConfig {
        word_indices: vec![1],
        alpha_start: 1.0e4,
        alpha_end: 5.0e3,
        ..RadConfig::default()
    }
}

// ---------------------------------------------------------------------------
// 1. Top-k oracle equivalence.

#[test]
fn criterion_01_top_k_matches_sort_oracle() {
    let start = Instant::now();
    let mut r = rng::derive(101, "acc-topk", 0);
    for trial in 0..1000u64 {
        let len = r.gen_range(1..=256);
        let values: Vec<f64> = (0..len).map(|_| r.gen_range(-10.0..10.0)).collect();
        let k = r.gen_range(1..=len);
        let got = rad::top_k_mean(&values, k).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expect = sorted[..k].iter().sum::<f64>() / k as f64;
        assert!(
            (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "trial {trial}: {got} vs {expect}"
        );
    }
    assert!(start.elapsed().as_secs() < 10);
    println!("ACCEPTANCE 1 PASS: top_k_mean matches the full-sort oracle on 1000 random arrays");
}

// ---------------------------------------------------------------------------
// 2. RAD gradient vs finite differences.

#[test]
fn criterion_02_rad_gradient_matches_finite_differences() {
    let start = Instant::now();
    for instance in 0..20u64 {
        let mut r = rng::derive(202, "acc-grad", instance);
        let frames = r.gen_range(1..=3usize);
        let probe = [2usize, 3, 4][r.gen_range(0..3)];
        let hw = probe * 4;
        let cfg = NetConfig {
            in_channels: 3,
            channels: 4,
            attn_dim: 4,
            embed_dim: 16,
            probe_factor: 4,
            t_max: 10,
        };
        let mut w = DenoiserWeights::init(cfg, instance);
        w.wq.mapv_inplace(|_| 0.0);
        let mut rw = rng::derive(203, "acc-grad-wq", instance);
        w.wq.mapv_inplace(|_| 0.5 * (rw.gen::<f64>() - 0.5));
        let seq = TokenSequence::from_words(&["a", "red", "square", "and"]).unwrap();
        let emb = embed_tokens(&seq, 16).unwrap();
        let x = LatentState::new(
            rng::normal_like(&[frames, 3, hw, hw], &mut r),
            r.gen_range(1..=10),
        );
        let track = BoxTrack {
            object_id: "o".into(),
            word_index: 1,
            boxes: vec![[0.2, 0.2, 0.7, 0.7]; frames],
        };
        let masks = rasterize_all(&[track], probe, probe).unwrap();
        let rcfg = RadConfig {
            word_indices: vec![1],
            ..RadConfig::default()
        };
        let (_, record, cache) =
            net::forward(&x.data, x.timestep, &emb, &w, ExecMode::default()).unwrap();
        let (_, grad_attn) = rad::rad_objective_with_grad(&record, &masks, &rcfg, true).unwrap();
        let (grad_x, _) = net::backward(
            &x.data,
            &emb,
            &w,
            &cache,
            None,
            Some(grad_attn.as_ref().unwrap()),
            ExecMode::default(),
            false,
        );
        let eval = |data: &Array4<f64>| {
            let (_, rec, _) =
                net::forward(data, x.timestep, &emb, &w, ExecMode::default()).unwrap();
            rad::rad_objective(&rec, &masks, &rcfg).unwrap().total
        };
        // small step: the top-k objective is piecewise smooth and larger
        // probes can flip the selected set across the stencil
        let step = 1e-4;
        let n = x.data.len();
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for _ in 0..30 {
            let flat = r.gen_range(0..n);
            let idx = unflatten(&x.data, flat);
            let mut plus = x.data.clone();
            plus[idx] += step;
            let mut minus = x.data.clone();
            minus[idx] -= step;
            fd.push((eval(&plus) - eval(&minus)) / (2.0 * step));
            an.push(grad_x[idx]);
        }
        let num: f64 = fd
            .iter()
            .zip(&an)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(
            num / den < 1e-3,
            "instance {instance}: relative FD error {}",
            num / den
        );
    }
    assert!(start.elapsed().as_secs() < 300);
    println!("ACCEPTANCE 2 PASS: guidance gradient matches central differences on 20 instances");
}

fn unflatten(a: &Array4<f64>, flat: usize) -> [usize; 4] {
    let s = a.shape();
    let mut rem = flat;
    let mut out = [0; 4];
    for d in (0..4).rev() {
        out[d] = rem % s[d];
        rem /= s[d];
    }
    out
}

// ---------------------------------------------------------------------------
// 3. Attention normalization.

#[test]
fn criterion_03_attention_rows_normalized() {
    for trial in 0..100u64 {
        let mut r = rng::derive(303, "acc-attn", trial);
        let cfg = NetConfig {
            in_channels: 3,
            channels: 4,
            attn_dim: 4,
            embed_dim: 16,
            probe_factor: 4,
            t_max: 20,
        };
        let mut w = DenoiserWeights::init(cfg, trial);
        w.wq.mapv_inplace(|_| r.gen::<f64>() - 0.5);
        let n_tok = r.gen_range(1..=4usize);
        let vocab_words = ["a", "red", "square", "and"];
        let seq = TokenSequence::from_words(&vocab_words[..n_tok]).unwrap();
        let emb = embed_tokens(&seq, 16).unwrap();
        let frames = r.gen_range(1..=3usize);
        let x = LatentState::new(
            rng::normal_like(&[frames, 3, 8, 8], &mut r),
            r.gen_range(0..=20),
        );
        let (_, record) = reatco::denoiser::denoise(&x, &emb, &w).unwrap();
        for map in &record.maps {
            let (l, hp, wp) = map.dim();
            assert_eq!(l, n_tok);
            for rr in 0..hp {
                for cc in 0..wp {
                    let sum: f64 = (0..l).map(|j| map[[j, rr, cc]]).sum();
                    assert!((sum - 1.0).abs() <= 1e-5, "trial {trial}: row sum {sum}");
                }
            }
        }
    }
    println!("ACCEPTANCE 3 PASS: attention token sums equal 1 within 1e-5 over 100 denoise calls");
}

// ---------------------------------------------------------------------------
// 4. IRJS algebra.

#[test]
fn criterion_04_irjs_blend_algebra_bit_exact() {
    for trial in 0..20u64 {
        let mut r = rng::derive(404, "acc-blend", trial);
        let x = LatentState::new(rng::normal_like(&[2, 3, 6, 6], &mut r), 3);
        let v = LatentState::new(rng::normal_like(&[2, 3, 6, 6], &mut r), 3);
        let ones = vec![Array2::from_elem((6, 6), 1.0); 2];
        let zeros = vec![Array2::from_elem((6, 6), 0.0); 2];
        assert_eq!(irjs::blend(&x, &v, &ones).unwrap(), x);
        assert_eq!(irjs::blend(&x, &v, &zeros).unwrap(), v);
        let mask: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((6, 6), |_| f64::from(r.gen_range(0..2u8))))
            .collect();
        let once = irjs::blend(&x, &v, &mask).unwrap();
        let twice = irjs::blend(&once, &v, &mask).unwrap();
        assert_eq!(once, twice, "idempotence, trial {trial}");
        for fi in 0..2 {
            for ci in 0..3 {
                for rr in 0..6 {
                    for cc in 0..6 {
                        let expect = if mask[fi][[rr, cc]] > 0.5 {
                            x.data[[fi, ci, rr, cc]]
                        } else {
                            v.data[[fi, ci, rr, cc]]
                        };
                        assert!(once.data[[fi, ci, rr, cc]] == expect);
                    }
                }
            }
        }
    }
    println!("ACCEPTANCE 4 PASS: blend identities, idempotence, and projection hold bit-exactly");
}

// ---------------------------------------------------------------------------
// 5. IRJS distribution claim.

#[test]
fn criterion_05_irjs_preserves_sampling_distribution() {
    let schedule = scheduler::make_linear_schedule(30, 1e-3, 0.08).unwrap();
    let shape = [2usize, 1, 2, 2]; // 8 components
    let mut rsel = rng::derive(505, "acc-dist-t", 0);
    let mut timesteps = Vec::new();
    while timesteps.len() < 5 {
        let t = rsel.gen_range(2..=30usize);
        if !timesteps.contains(&t) {
            timesteps.push(t);
        }
    }
    let mean = Array4::from_shape_fn((2, 1, 2, 2), |(f, _, r, c)| {
        0.3 * f as f64 - 0.2 * r as f64 + 0.1 * c as f64
    });
    let var = Array4::from_elem((2, 1, 2, 2), 0.4);
    let den = AnalyticGaussianDenoiser::new(mean.clone(), var.clone()).unwrap();
    let mask: Vec<Array2<f64>> = vec![
        Array2::from_shape_fn((2, 2), |(r, c)| f64::from((r + c) % 2 == 0)),
        Array2::from_elem((2, 2), 0.0),
    ];
    let n = 10_000usize;
    for &t in &timesteps {
        let t_prev = t - 1;
        let ab_prev = schedule.alpha_bar(t_prev);
        let mut sum_blend = Array4::<f64>::zeros(shape);
        let mut sumsq_blend = Array4::<f64>::zeros(shape);
        let mut sum_mu = Array4::<f64>::zeros(shape);
        let mut r = rng::derive(506, "acc-dist", t as u64);
        for _ in 0..n {
            // draw v0 from the data distribution, diffuse, one posterior sample
            let z0 = rng::normal_like(&shape, &mut r);
            let v0 = &mean + &(&var.mapv(f64::sqrt) * &z0);
            let eps = rng::normal_like(&shape, &mut r);
            let x_t = diffuse_forward(&v0, t, &eps, &schedule).unwrap();
            let eps_pred = den.eps_pred(&x_t.data, t, &schedule).unwrap();
            let post = ddpm_posterior(&x_t, &eps_pred, t, &schedule).unwrap();
            let zp = rng::normal_like(&shape, &mut r);
            let x_prev = &post.mean + &(zp * post.stddev);
            // independently diffused source for the invariant region
            let es = rng::normal_like(&shape, &mut r);
            let v_prev = &v0 * ab_prev.sqrt() + &es * (1.0 - ab_prev).sqrt();
            let blended = irjs::blend(
                &LatentState::new(x_prev, t_prev),
                &LatentState::new(v_prev, t_prev),
                &mask,
            )
            .unwrap();
            sum_blend += &blended.data;
            sumsq_blend += &blended.data.mapv(|v| v * v);
            sum_mu += &post.mean;
        }
        let nf = n as f64;
        let mean_blend = sum_blend.mapv(|v| v / nf);
        let mean_mu = sum_mu.mapv(|v| v / nf);
        let var_blend = &sumsq_blend.mapv(|v| v / nf) - &mean_blend.mapv(|v| v * v);
        for (idx, &mb) in mean_blend.indexed_iter() {
            let mm = mean_mu[idx];
            let bound = 3.0 * var_blend[idx].max(0.0).sqrt() / nf.sqrt();
            assert!(
                (mb - mm).abs() <= bound,
                "t={t} idx={idx:?}: |{mb} - {mm}| > {bound}"
            );
        }
    }
    println!(
        "ACCEPTANCE 5 PASS: blended-state mean matches the sampler mean within 3 sigma/sqrt(N) at timesteps {timesteps:?}"
    );
}

// ---------------------------------------------------------------------------
// 6. DDIM round-trip on the trained model.

#[test]
fn criterion_06_ddim_round_trip_error() {
    let fx = &*FIXTURE;
    let (rec, _) = source_record(600);
    let v0 = dataset::render_video(&rec, 8, 64);
    let mut errors = Vec::new();
    for &steps in &[25usize, 50, 100] {
        let cfg = EditConfig {
            source_prompt: rec.caption.clone(),
            edited_prompt: rec.caption.clone(),
            tracks: Vec::new(),
            rad: None,
            irjs: IrjsConfig {
                enabled: false,
                ..IrjsConfig::default()
            },
            sample_steps: steps,
            seed: 0,
            ..EditConfig::default()
        };
        let out = pipeline::edit_video(&v0, &cfg, &fx.weights, &fx.schedule).unwrap();
        let num = (&out.video.0 - &v0.0).mapv(|v| v * v).sum().sqrt();
        let den = v0.0.mapv(|v| v * v).sum().sqrt();
        errors.push(num / den);
    }
    assert!(
        errors[1] < 0.05,
        "round-trip relative L2 at 50 steps: {}",
        errors[1]
    );
    assert!(
        errors[1] <= errors[0] + 1e-3 && errors[2] <= errors[1] + 1e-3,
        "round-trip error must not increase with steps: {errors:?}"
    );
    println!(
        "ACCEPTANCE 6 PASS: round-trip relative L2 {:.4}/{:.4}/{:.4} at 25/50/100 steps",
        errors[0], errors[1], errors[2]
    );
}

// ---------------------------------------------------------------------------
// 7. Guidance ablation: VISOR trend.

#[test]
fn criterion_07_guidance_raises_visor() {
    let start = Instant::now();
    let fx = &*FIXTURE;
    let det = ToyColorDetector;
    let relation = RelationSpec {
        subject: ObjectSpec {
            rgb: metrics::color_of_word("blue").unwrap(),
            tolerance: 0.35,
        },
        relation: Relation::Left,
        reference: ObjectSpec {
            rgb: metrics::color_of_word("green").unwrap(),
            tolerance: 0.2,
        },
    };
    let seeds = 10;
    let mut with_sum = 0.0;
    let mut without_sum = 0.0;
    for seed in 0..seeds {
        let (rec, target) = source_record(seed);
        let v0 = dataset::render_video(&rec, 8, 64);
        let with_cfg = insertion_edit_config(&rec, &target, Some(sweep_rad_config()), seed);
        let without_cfg = insertion_edit_config(&rec, &target, None, seed);
        let with = pipeline::edit_video(&v0, &with_cfg, &fx.weights, &fx.schedule).unwrap();
        let without = pipeline::edit_video(&v0, &without_cfg, &fx.weights, &fx.schedule).unwrap();
        with_sum += metrics::visor_score(&with.video, &relation, &det).unwrap();
        without_sum += metrics::visor_score(&without.video, &relation, &det).unwrap();
    }
    let with_mean = with_sum / seeds as f64;
    let without_mean = without_sum / seeds as f64;
    assert!(
        with_mean - without_mean >= 0.20,
        "VISOR gap too small: with={with_mean:.3} without={without_mean:.3}"
    );
    assert!(start.elapsed().as_secs() < 1800);
    println!(
        "ACCEPTANCE 7 PASS: mean VISOR {with_mean:.3} with guidance vs {without_mean:.3} without over {seeds} seeds"
    );
}

// ---------------------------------------------------------------------------
// 8. Blending ablation: invariant PSNR trend.

#[test]
fn criterion_08_blending_raises_invariant_psnr() {
    let fx = &*FIXTURE;
    let seeds = 5;
    let mut caps = 0usize;
    for seed in 100..100 + seeds {
        let (rec, target) = source_record(seed);
        let v0 = dataset::render_video(&rec, 8, 64);
        let track = target_track(&target, 8);
        let union = union_mask(&rasterize_all(&[track], 64, 64).unwrap()).unwrap();
        let inv: Vec<_> = union.iter().map(complement).collect();
        let with_cfg = insertion_edit_config(&rec, &target, Some(sweep_rad_config()), seed);
        let without_cfg = EditConfig {
            irjs: IrjsConfig {
                enabled: false,
                ..IrjsConfig::default()
            },
            ..with_cfg.clone()
        };
        let with = pipeline::edit_video(&v0, &with_cfg, &fx.weights, &fx.schedule).unwrap();
        let without = pipeline::edit_video(&v0, &without_cfg, &fx.weights, &fx.schedule).unwrap();
        let psnr_with = metrics::invariant_psnr(&with.video, &v0, &inv).unwrap();
        let psnr_without = metrics::invariant_psnr(&without.video, &v0, &inv).unwrap();
        assert!(
            psnr_with > psnr_without,
            "seed {seed}: {psnr_with:.2} dB with vs {psnr_without:.2} dB without"
        );
        // deterministic mode with terminal blending makes the region exact
        assert_eq!(with_cfg.irjs.mode, IrjsMode::Deterministic);
        assert!(with_cfg.irjs.blend_final_step);
        let max_dev = invariant_max_dev(&with.video, &v0, &inv);
        assert!(max_dev <= 1e-5, "seed {seed}: invariant deviation {max_dev}");
        if psnr_with >= 99.0 {
            caps += 1;
        }
    }
    assert_eq!(caps, seeds as usize, "every deterministic run must hit the PSNR cap");
    println!(
        "ACCEPTANCE 8 PASS: blending strictly improves invariant PSNR on {seeds} seeds and hits the 99 dB cap in deterministic mode"
    );
}

fn invariant_max_dev(a: &VideoTensor, b: &VideoTensor, inv: &[Array2<f64>]) -> f64 {
    let (f_n, c_n, h, w) = a.0.dim();
    let mut max = 0.0f64;
    for fi in 0..f_n {
        for ci in 0..c_n {
            for r in 0..h {
                for c in 0..w {
                    if inv[fi][[r, c]] > 0.5 {
                        max = max.max((a.0[[fi, ci, r, c]] - b.0[[fi, ci, r, c]]).abs());
                    }
                }
            }
        }
    }
    max
}

// ---------------------------------------------------------------------------
// 9. CLI determinism.

#[test]
fn criterion_09_cli_edit_is_byte_deterministic() {
    let fx = &*FIXTURE;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    reatco::io::save_checkpoint(&fx.weights, &ckpt).unwrap();
    std::fs::write(dir.path().join("schedule.json"), fx.schedule.to_json()).unwrap();
    let (rec, target) = source_record(900);
    let v0 = dataset::render_video(&rec, 8, 64);
    let frames_dir = dir.path().join("source");
    reatco::io::write_frames(&v0, &frames_dir).unwrap();
    let tracks_path = dir.path().join("tracks.json");
    std::fs::write(
        &tracks_path,
        serde_json::to_string(&vec![target_track(&target, 8)]).unwrap(),
    )
    .unwrap();
    let config_path = dir.path().join("run.json");
    let config = serde_json::json!({
        "schedule": dir.path().join("schedule.json"),
        "checkpoint": ckpt,
        "source_frames": frames_dir,
        "tracks": tracks_path,
        "source_prompt": rec.caption,
        "edited_prompt": ["a", "blue", "square", "and", "a", "green", "circle"],
        "rad": {
            "word_indices": [1],
            "budget_fraction": 0.2,
            "alpha_start": 1.0,
            "alpha_end": 0.5,
            "apply_fraction": 1.0
        },
        "sample_steps": 20,
        "seed": 3
    });
    std::fs::write(&config_path, config.to_string()).unwrap();
    let run = |out: &PathBuf| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_reatco"))
            .args(["edit", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "cmd edit failed");
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    for fi in 0..8 {
        let name = format!("frame_{fi:04}.png");
        let a = std::fs::read(out_a.join(&name)).unwrap();
        let b = std::fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let ra = std::fs::read(out_a.join("report.json")).unwrap();
    let rb = std::fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(ra, rb, "reports differ between runs");
    println!("ACCEPTANCE 9 PASS: two identical edit runs produce byte-identical frames and reports");
}

// ---------------------------------------------------------------------------
// 10. Sliding-window consistency.

#[test]
fn criterion_10_sliding_window_consistency() {
    assert_eq!(
        pipeline::coverage_counts(6, 4, 2).unwrap(),
        vec![1, 1, 2, 2, 1, 1]
    );
    // window = F reproduces the joint edit bit-exactly on a small model
    let cfg = NetConfig {
        in_channels: 3,
        channels: 4,
        attn_dim: 4,
        embed_dim: 16,
        probe_factor: 4,
        t_max: 20,
    };
    let w = DenoiserWeights::init(cfg, 10);
    let schedule = scheduler::make_linear_schedule(20, 1e-3, 0.05).unwrap();
    let mut r = rng::derive(1000, "acc-win", 0);
    let v0 = VideoTensor(
        rng::normal_like(&[6, 3, 16, 16], &mut r).mapv(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)),
    );
    let track = BoxTrack {
        object_id: "o".into(),
        word_index: 1,
        boxes: vec![[0.1, 0.1, 0.6, 0.6]; 6],
    };
    let base = EditConfig {
        source_prompt: words(&["a", "red", "square"]),
        edited_prompt: words(&["a", "blue", "square"]),
        tracks: vec![track],
        rad: Some(RadConfig {
            word_indices: vec![1],
            ..RadConfig::default()
        }),
        sample_steps: 8,
        seed: 5,
        ..EditConfig::default()
    };
    let joint = pipeline::edit_video(&v0, &base, &w, &schedule).unwrap();
    let windowed_cfg = EditConfig {
        window: Some(6),
        stride: Some(6),
        ..base
    };
    let windowed = pipeline::edit_video(&v0, &windowed_cfg, &w, &schedule).unwrap();
    assert_eq!(joint.video.0, windowed.video.0);
    println!(
        "ACCEPTANCE 10 PASS: window=F reproduces the joint edit; coverage(6,4,2) = [1,1,2,2,1,1]"
    );
}

// ---------------------------------------------------------------------------
// 11. Alpha schedule endpoints.

#[test]
fn criterion_11_alpha_schedule_endpoints() {
    let cfg = RadConfig::default();
    for &steps in &[2usize, 10, 50, 100] {
        assert_eq!(rad::alpha_at(0, steps, &cfg).unwrap(), 1.0);
        assert_eq!(rad::alpha_at(steps - 1, steps, &cfg).unwrap(), 0.5);
    }
    println!("ACCEPTANCE 11 PASS: step size decays linearly from 1.0 to 0.5");
}
