//! Dataset directory IO: clip loading, manifests, grayscale prediction images.

use super::{flo, VideoClip};
use crate::error::{Error, Result};
use ndarray::{Array2, Array3, Array4};
use std::fs;
use std::path::{Path, PathBuf};

fn numbered_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads an 8-bit grayscale image as a `[0,1]` map.
pub fn load_gray_image(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::BadImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

/// Writes a `[0,1]` map as an 8-bit grayscale PNG.
pub fn save_gray_image(map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (map[[y, x]] * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::BadImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_rgb_image(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::BadImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (h as usize, w as usize, 3),
        |(y, x, c)| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0,
    ))
}

/// Loads a clip directory (`frames/`, optional `masks/`, optional `flow/`).
///
/// A missing `flow/` directory (or one with no files) degrades to all-zero
/// flow with the clip's `flow_fallback` flag set, so image-only corpora can
/// still drive the spatial branch. A missing flow file for frame 0 alone is
/// filled with zeros silently.
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let frame_paths = numbered_pngs(&dir.join("frames"))?;
    let n = frame_paths.len();
    if n == 0 {
        return Err(Error::EmptyClip { dir: dir.to_path_buf() });
    }
    let first = load_rgb_image(&frame_paths[0])?;
    let (h, w, _) = first.dim();
    let mut frames = Array4::zeros((n, h, w, 3));
    for (i, p) in frame_paths.iter().enumerate() {
        let img = if i == 0 { first.clone() } else { load_rgb_image(p)? };
        if img.dim() != (h, w, 3) {
            return Err(Error::shape("clip frame", format!("({h},{w},3)"), format!("{:?}", img.dim())));
        }
        frames.index_axis_mut(ndarray::Axis(0), i).assign(&img);
    }

    let masks_dir = dir.join("masks");
    let masks = if masks_dir.is_dir() {
        let mask_paths = numbered_pngs(&masks_dir)?;
        if mask_paths.len() != n {
            return Err(Error::MaskCountMismatch {
                dir: dir.to_path_buf(),
                frames: n,
                masks: mask_paths.len(),
            });
        }
        let mut masks = Array3::zeros((n, h, w));
        for (i, p) in mask_paths.iter().enumerate() {
            let m = load_gray_image(p)?;
            if m.dim() != (h, w) {
                return Err(Error::shape("clip mask", format!("({h},{w})"), format!("{:?}", m.dim())));
            }
            masks.index_axis_mut(ndarray::Axis(0), i).assign(&m);
        }
        Some(masks)
    } else {
        None
    };

    let flow_dir = dir.join("flow");
    let mut flows = Array4::zeros((n, h, w, 2));
    let mut flow_fallback = false;
    let flow_count = if flow_dir.is_dir() {
        fs::read_dir(&flow_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "flo").unwrap_or(false))
            .count()
    } else {
        0
    };
    if flow_count == 0 {
        flow_fallback = true;
    } else {
        for i in 0..n {
            let p = flow_dir.join(format!("{i:05}.flo"));
            if !p.exists() {
                if i == 0 {
                    continue; // frame 0 defaults to the zero field
                }
                return Err(Error::FlowCountMismatch {
                    dir: dir.to_path_buf(),
                    frames: n,
                    flows: flow_count,
                });
            }
            let field = flo::read_flow(&p)?;
            if field.dims() != (h, w) {
                return Err(Error::shape("clip flow", format!("({h},{w})"), format!("{:?}", field.dims())));
            }
            for y in 0..h {
                for x in 0..w {
                    flows[[i, y, x, 0]] = field.u[[y, x]];
                    flows[[i, y, x, 1]] = field.v[[y, x]];
                }
            }
        }
    }

    let mut clip = VideoClip::new(frames, masks, flows)?;
    clip.flow_fallback = flow_fallback;
    Ok(clip)
}

/// Reads a `manifest.txt` (one `clip-name frame-count` per line); falls back
/// to scanning subdirectories when the manifest is absent.
pub fn read_manifest(root: &Path) -> Result<Vec<(String, usize)>> {
    if !root.is_dir() {
        return Err(Error::MissingDataset(root.to_path_buf()));
    }
    let manifest = root.join("manifest.txt");
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest)?;
        let mut clips = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap().to_string();
            let count: usize = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad manifest line: {line}")))?;
            clips.push((name, count));
        }
        return Ok(clips);
    }
    let mut clips = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("frames").is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let count = numbered_pngs(&d.join("frames"))?.len();
        clips.push((d.file_name().unwrap().to_string_lossy().into_owned(), count));
    }
    Ok(clips)
}
