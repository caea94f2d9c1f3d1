//! On-disk formats: PNG frame sequences, raw little-endian float32 tensor
//! buffers with JSON sidecars, and the weight checkpoint.

use ndarray::{Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::denoiser::net::NetConfig;
use crate::denoiser::DenoiserWeights;
use crate::tensor::VideoTensor;
use crate::{Error, Result};

/// Write frames as 8-bit RGB PNGs named `frame_%04d.png`.
pub fn write_frames(video: &VideoTensor, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (f_n, c_n, h, w) = video.0.dim();
    if c_n != 3 {
        return Err(Error::InvalidArgument(format!(
            "PNG export expects 3 channels, got {c_n}"
        )));
    }
    for fi in 0..f_n {
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for r in 0..h {
            for c in 0..w {
                let px = [0, 1, 2].map(|ci| {
                    (video.0[[fi, ci, r, c]].clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.put_pixel(c as u32, r as u32, image::Rgb(px));
            }
        }
        img.save(dir.join(format!("frame_{fi:04}.png")))?;
    }
    Ok(())
}

/// Read a `frame_%04d.png` sequence back into a video tensor.
pub fn read_frames(dir: &Path) -> Result<VideoTensor> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_") && n.ends_with(".png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no frame_*.png files in {}",
            dir.display()
        )));
    }
    let mut frames = Vec::new();
    for p in &paths {
        let img = image::open(p)?.to_rgb8();
        frames.push(img);
    }
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let mut out = VideoTensor::zeros(frames.len(), 3, h, w);
    for (fi, img) in frames.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::ShapeMismatch("frame sizes differ".into()));
        }
        for r in 0..h {
            for c in 0..w {
                let px = img.get_pixel(c as u32, r as u32);
                for ci in 0..3 {
                    out.0[[fi, ci, r, c]] = px.0[ci] as f64 / 255.0;
                }
            }
        }
    }
    Ok(out)
}

/// Grayscale heatmap PNG, input normalized to its own [min, max].
pub fn write_heatmap(map: &ndarray::Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = ((map[[r, c]] - lo) / span * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TensorSidecar {
    shape: Vec<usize>,
    dtype: String,
    layout: String,
}

/// Raw little-endian f32 buffer plus a JSON sidecar `{shape, dtype, layout}`.
pub fn write_tensor(data: &Array4<f64>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, &buf)?;
    let sidecar = TensorSidecar {
        shape: data.shape().to_vec(),
        dtype: "float32".into(),
        layout: "row-major".into(),
    };
    fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Array4<f64>> {
    let sidecar: TensorSidecar =
        serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
    if sidecar.shape.len() != 4 {
        return Err(Error::Config("expected a rank-4 tensor".into()));
    }
    let raw = fs::read(path)?;
    let n: usize = sidecar.shape.iter().product();
    if raw.len() != n * 4 {
        return Err(Error::Config(format!(
            "tensor buffer holds {} bytes, sidecar implies {}",
            raw.len(),
            n * 4
        )));
    }
    let vals: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let dyn_arr = ArrayD::from_shape_vec(IxDyn(&sidecar.shape), vals)
        .map_err(|e| Error::Config(e.to_string()))?;
    dyn_arr
        .into_dimensionality()
        .map_err(|e| Error::Config(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: NetConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: usize,
}

fn weight_tensors(w: &DenoiserWeights) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
    vec![
        ("conv1", w.conv1.shape().to_vec(), w.conv1.iter().cloned().collect()),
        ("b1", w.b1.shape().to_vec(), w.b1.to_vec()),
        ("u1", w.u1.shape().to_vec(), w.u1.iter().cloned().collect()),
        ("conv2", w.conv2.shape().to_vec(), w.conv2.iter().cloned().collect()),
        ("b2", w.b2.shape().to_vec(), w.b2.to_vec()),
        ("u2", w.u2.shape().to_vec(), w.u2.iter().cloned().collect()),
        ("w_temporal", vec![1], vec![w.w_temporal]),
        ("wq", w.wq.shape().to_vec(), w.wq.iter().cloned().collect()),
        ("wk", w.wk.shape().to_vec(), w.wk.iter().cloned().collect()),
        ("wv", w.wv.shape().to_vec(), w.wv.iter().cloned().collect()),
        ("conv3", w.conv3.shape().to_vec(), w.conv3.iter().cloned().collect()),
        ("b3", w.b3.shape().to_vec(), w.b3.to_vec()),
    ]
}

/// Save a checkpoint: `<stem>.bin` raw f32 buffers and `<stem>.json` manifest
/// mapping tensor name to shape and byte offset.
pub fn save_checkpoint(w: &DenoiserWeights, stem: &Path) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf: Vec<u8> = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, shape, data) in weight_tensors(w) {
        tensors.insert(
            name.to_string(),
            TensorEntry {
                shape,
                offset: buf.len(),
            },
        );
        for v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(stem.with_extension("bin"))?;
    f.write_all(&buf)?;
    let manifest = CheckpointManifest {
        config: w.cfg.clone(),
        tensors,
    };
    fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<DenoiserWeights> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let buf = fs::read(stem.with_extension("bin"))?;
    let read = |name: &str| -> Result<ArrayD<f64>> {
        let entry = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint missing tensor {name}")))?;
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 4;
        if end > buf.len() {
            return Err(Error::Config(format!("checkpoint truncated at tensor {name}")));
        }
        let vals: Vec<f64> = buf[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        ArrayD::from_shape_vec(IxDyn(&entry.shape), vals).map_err(|e| Error::Config(e.to_string()))
    };
    let dim4 = |a: ArrayD<f64>| a.into_dimensionality().map_err(|e| Error::Config(e.to_string()));
    let dim2 = |a: ArrayD<f64>| a.into_dimensionality().map_err(|e| Error::Config(e.to_string()));
    let dim1 = |a: ArrayD<f64>| a.into_dimensionality().map_err(|e| Error::Config(e.to_string()));
    Ok(DenoiserWeights {
        cfg: manifest.config,
        conv1: dim4(read("conv1")?)?,
        b1: dim1(read("b1")?)?,
        u1: dim2(read("u1")?)?,
        conv2: dim4(read("conv2")?)?,
        b2: dim1(read("b2")?)?,
        u2: dim2(read("u2")?)?,
        w_temporal: read("w_temporal")?[[0]],
        wq: dim2(read("wq")?)?,
        wk: dim2(read("wk")?)?,
        wv: dim2(read("wv")?)?,
        conv3: dim4(read("conv3")?)?,
        b3: dim1(read("b3")?)?,
    })
}

/// Dump the toy vocabulary as `{token string -> id}` JSON.
pub fn vocab_json() -> String {
    serde_json::to_string_pretty(&crate::denoiser::vocab_map()).expect("vocab serializes")
}
