//! User regions of interest: per-frame bounding boxes rasterized to binary
//! masks, union masks, and the adaptive top-k budget.
//!
//! Rasterization uses a cell-center inclusion rule with open box interiors:
//! cell (r, c) is inside iff its center lies strictly inside the box. A box
//! that captures no cell center at the requested resolution is rejected as
//! degenerate rather than silently producing an empty mask.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One object's bounding box per frame, normalized to [0,1] coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxTrack {
    pub object_id: String,
    /// Token position of the word of interest in the edited prompt.
    pub word_index: usize,
    /// Per-frame (x0, y0, x1, y1).
    pub boxes: Vec<[f64; 4]>,
}

impl BoxTrack {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "object {}: no boxes",
                self.object_id
            )));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let [x0, y0, x1, y1] = *b;
            if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "object {} frame {i}: bad box {b:?}",
                    self.object_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-object, per-frame binary masks at a shared resolution. Entries are
/// stored as f64 in {0.0, 1.0} so they can enter arithmetic directly.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectMasks>,
}

#[derive(Debug, Clone)]
pub struct ObjectMasks {
    pub object_id: String,
    pub word_index: usize,
    /// One grid per frame.
    pub frames: Vec<Array2<f64>>,
}

/// Adaptive top-k budget: `K = max(1, round(fraction * in-mask count))`.
#[derive(Debug, Clone, Copy)]
pub struct RadBudget {
    pub fraction: f64,
}

impl RadBudget {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument("budget fraction must be in (0,1]".into()));
        }
        Ok(RadBudget { fraction })
    }
}

/// Rasterize one track to binary masks at (height, width).
pub fn rasterize(track: &BoxTrack, height: usize, width: usize) -> Result<ObjectMasks> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask resolution must be >= 1".into()));
    }
    track.validate()?;
    let mut frames = Vec::with_capacity(track.boxes.len());
    for (fi, b) in track.boxes.iter().enumerate() {
        let [x0, y0, x1, y1] = *b;
        let mut grid = Array2::zeros((height, width));
        let mut count = 0usize;
        for r in 0..height {
            let cy = (r as f64 + 0.5) / height as f64;
            for c in 0..width {
                let cx = (c as f64 + 0.5) / width as f64;
                if cx > x0 && cx < x1 && cy > y0 && cy < y1 {
                    grid[[r, c]] = 1.0;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::DegenerateRegion(format!(
                "object {} frame {fi}: box {b:?} contains no cell center at {height}x{width}; \
                 enlarge the box or raise the resolution",
                track.object_id
            )));
        }
        frames.push(grid);
    }
    Ok(ObjectMasks {
        object_id: track.object_id.clone(),
        word_index: track.word_index,
        frames,
    })
}

/// Rasterize all tracks into one `MaskSet`.
pub fn rasterize_all(tracks: &[BoxTrack], height: usize, width: usize) -> Result<MaskSet> {
    let frames = tracks.first().map(|t| t.boxes.len()).unwrap_or(0);
    let mut objects = Vec::with_capacity(tracks.len());
    for t in tracks {
        if t.boxes.len() != frames {
            return Err(Error::InvalidArgument(
                "all tracks must cover the same number of frames".into(),
            ));
        }
        objects.push(rasterize(t, height, width)?);
    }
    Ok(MaskSet {
        height,
        width,
        objects,
    })
}

/// Elementwise OR over objects, per frame.
pub fn union_mask(set: &MaskSet) -> Result<Vec<Array2<f64>>> {
    let first = set
        .objects
        .first()
        .ok_or_else(|| Error::InvalidArgument("union of empty mask set".into()))?;
    let frames = first.frames.len();
    let mut out = vec![Array2::zeros((set.height, set.width)); frames];
    for obj in &set.objects {
        if obj.frames.len() != frames {
            return Err(Error::ShapeMismatch("frame count differs across objects".into()));
        }
        for (acc, m) in out.iter_mut().zip(&obj.frames) {
            if m.dim() != acc.dim() {
                return Err(Error::ShapeMismatch("mask resolution differs".into()));
            }
            acc.zip_mut_with(m, |a, &b| {
                if b > 0.5 {
                    *a = 1.0;
                }
            });
        }
    }
    Ok(out)
}

/// All-zero union at the given resolution, for runs with no edited objects.
pub fn empty_union(frames: usize, height: usize, width: usize) -> Vec<Array2<f64>> {
    vec![Array2::zeros((height, width)); frames]
}

pub fn mask_count(mask: &Array2<f64>) -> usize {
    mask.iter().filter(|&&v| v > 0.5).count()
}

/// Top-k budget for one mask: `max(1, round(fraction * count))`, half-up.
pub fn k_for_mask(mask: &Array2<f64>, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument("fraction must be in (0,1]".into()));
    }
    let count = mask_count(mask);
    if count == 0 {
        return Err(Error::DegenerateRegion("empty mask has no top-k budget".into()));
    }
    Ok(k_for_count(count, fraction))
}

pub fn k_for_count(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64 + 0.5).floor() as usize).max(1)
}

/// Elementwise `1 - mask`.
pub fn complement(mask: &Array2<f64>) -> Array2<f64> {
    mask.mapv(|v| 1.0 - v)
}
