//! Synthetic moving-shapes corpus.
//!
//! Each clip shows two colored shapes (square or circle) drifting linearly
//! over a smooth textured background, captioned with the shapes' colors and
//! kinds. Everything is a pure function of the seed.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::denoiser::TokenSequence;
use crate::io;
use crate::rng;
use crate::tensor::VideoTensor;
use crate::Result;

pub const COLOR_WORDS: &[&str] = &["red", "green", "blue", "yellow", "cyan", "magenta"];
pub const KIND_WORDS: &[&str] = &["square", "circle"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub color_word: String,
    pub kind_word: String,
    /// Initial center, normalized.
    pub start: [f64; 2],
    /// Per-frame velocity, normalized.
    pub velocity: [f64; 2],
    /// Half-extent (squares) or radius (circles), normalized.
    pub radius: f64,
}

impl ShapeSpec {
    pub fn rgb(&self) -> [f64; 3] {
        crate::metrics::color_of_word(&self.color_word).expect("palette word")
    }

    pub fn center_at(&self, frame: usize) -> [f64; 2] {
        [
            (self.start[0] + self.velocity[0] * frame as f64).clamp(self.radius, 1.0 - self.radius),
            (self.start[1] + self.velocity[1] * frame as f64).clamp(self.radius, 1.0 - self.radius),
        ]
    }

    /// Tight bounding box at a frame, with a small margin.
    pub fn bbox_at(&self, frame: usize, margin: f64) -> [f64; 4] {
        let c = self.center_at(frame);
        let r = self.radius + margin;
        [
            (c[0] - r).max(0.0),
            (c[1] - r).max(0.0),
            (c[0] + r).min(1.0),
            (c[1] + r).min(1.0),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub caption: Vec<String>,
    pub shapes: Vec<ShapeSpec>,
    /// Background texture phases.
    pub bg_phase: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_videos: usize,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
    pub videos: Vec<VideoEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEntry {
    pub dir: String,
    pub record: VideoRecord,
}

/// Caption layout: `a <color1> <shape1> and a <color2> <shape2>`.
/// The words of interest for editing are the color tokens.
pub const FIRST_COLOR_INDEX: usize = 1;
pub const SECOND_COLOR_INDEX: usize = 5;

fn caption_for(shapes: &[ShapeSpec]) -> Vec<String> {
    vec![
        "a".into(),
        shapes[0].color_word.clone(),
        shapes[0].kind_word.clone(),
        "and".into(),
        "a".into(),
        shapes[1].color_word.clone(),
        shapes[1].kind_word.clone(),
    ]
}

/// Generate one clip's specification.
pub fn generate_record(seed: u64, video_index: u64) -> VideoRecord {
    let mut r = rng::derive(seed, "dataset", video_index);
    let c1 = r.gen_range(0..COLOR_WORDS.len());
    let mut c2 = r.gen_range(0..COLOR_WORDS.len() - 1);
    if c2 >= c1 {
        c2 += 1;
    }
    let mut shapes = Vec::new();
    for (slot, color) in [(0usize, c1), (1, c2)] {
        let radius = r.gen_range(0.10..0.16);
        // keep the two shapes on separate halves so they never merge
        let x0 = if slot == 0 {
            r.gen_range(radius..0.5 - radius)
        } else {
            r.gen_range(0.5 + radius..1.0 - radius)
        };
        let y0 = r.gen_range(radius + 0.05..0.95 - radius);
        shapes.push(ShapeSpec {
            color_word: COLOR_WORDS[color].into(),
            kind_word: KIND_WORDS[r.gen_range(0..KIND_WORDS.len())].into(),
            start: [x0, y0],
            velocity: [r.gen_range(-0.02..0.02), r.gen_range(-0.02..0.02)],
            radius,
        });
    }
    let bg_phase = [r.gen(), r.gen(), r.gen(), r.gen()];
    VideoRecord {
        caption: caption_for(&shapes),
        shapes,
        bg_phase,
    }
}

/// Render a record to pixels.
pub fn render_video(record: &VideoRecord, frames: usize, size: usize) -> VideoTensor {
    let mut v = Array4::zeros((frames, 3, size, size));
    for fi in 0..frames {
        for r in 0..size {
            let y = (r as f64 + 0.5) / size as f64;
            for c in 0..size {
                let x = (c as f64 + 0.5) / size as f64;
                // smooth low-frequency texture
                let tex = 0.35
                    + 0.08
                        * ((x * 6.0 + record.bg_phase[0] * 10.0).sin()
                            + (y * 5.0 + record.bg_phase[1] * 10.0).cos())
                    + 0.04 * ((x * 11.0 + y * 9.0 + record.bg_phase[2] * 10.0).sin());
                let mut px = [tex, tex, tex];
                for shape in &record.shapes {
                    let ctr = shape.center_at(fi);
                    let (dx, dy) = (x - ctr[0], y - ctr[1]);
                    let inside = match shape.kind_word.as_str() {
                        "square" => dx.abs() <= shape.radius && dy.abs() <= shape.radius,
                        _ => (dx * dx + dy * dy).sqrt() <= shape.radius,
                    };
                    if inside {
                        px = shape.rgb();
                    }
                }
                for ci in 0..3 {
                    v[[fi, ci, r, c]] = px[ci].clamp(0.0, 1.0);
                }
            }
        }
    }
    VideoTensor(v)
}

/// In-memory dataset: rendered videos with tokenized captions.
pub fn synthesize(
    num_videos: usize,
    frames: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<(VideoTensor, TokenSequence, VideoRecord)>> {
    let mut out = Vec::with_capacity(num_videos);
    for vi in 0..num_videos {
        let record = generate_record(seed, vi as u64);
        let video = render_video(&record, frames, size);
        let words: Vec<&str> = record.caption.iter().map(|s| s.as_str()).collect();
        let tokens = TokenSequence::from_words(&words)?;
        out.push((video, tokens, record));
    }
    Ok(out)
}

/// Write a dataset to disk: per-video PNG directories plus `manifest.json`.
pub fn make_dataset(
    out_dir: &Path,
    num_videos: usize,
    frames: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if size < 32 {
        return Err(crate::Error::InvalidArgument("size must be >= 32".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut videos = Vec::new();
    for (vi, (video, _, record)) in synthesize(num_videos, frames, size, seed)?
        .into_iter()
        .enumerate()
    {
        let dir_name = format!("video_{vi:03}");
        io::write_frames(&video, &out_dir.join(&dir_name))?;
        videos.push(VideoEntry {
            dir: dir_name,
            record,
        });
    }
    let manifest = DatasetManifest {
        num_videos,
        frames,
        size,
        seed,
        videos,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Load a dataset written by [`make_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<(VideoTensor, TokenSequence, VideoRecord)>> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut out = Vec::new();
    for entry in &manifest.videos {
        let video = io::read_frames(&dir.join(&entry.dir))?;
        let words: Vec<&str> = entry.record.caption.iter().map(|s| s.as_str()).collect();
        out.push((video, TokenSequence::from_words(&words)?, entry.record.clone()));
    }
    Ok(out)
}
