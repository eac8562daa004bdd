//! Synthetic moving-shapes video generator with analytic ground-truth flow.
//!
//! Each clip contains moving shapes (these define the saliency mask and carry
//! flow equal to their per-frame displacement) over a low-contrast background,
//! plus optional static high-contrast distractor shapes that are spatially
//! salient but temporally not. Generation is a pure function of the spec:
//! identical specs produce byte-identical files.

use super::{flo, FlowField};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    pub moving_shapes: usize,
    pub distractor_shapes: usize,
    /// Speed interval in pixels/frame.
    pub velocity_range: (f64, f64),
    pub target_foreground_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            num_clips: 1,
            frames_per_clip: 4,
            image_size: (64, 64),
            moving_shapes: 1,
            distractor_shapes: 1,
            velocity_range: (1.0, 3.0),
            target_foreground_fraction: 0.08,
        }
    }
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.num_clips >= 1
            && self.frames_per_clip >= 1
            && self.image_size.0 >= 8
            && self.image_size.1 >= 8
            && self.moving_shapes >= 1
            && self.velocity_range.0 >= 0.0
            && self.velocity_range.1 >= self.velocity_range.0
            && self.target_foreground_fraction > 0.0
            && self.target_foreground_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid dataset spec: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// (clip directory name, frame count)
    pub clips: Vec<(String, usize)>,
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Square,
    Disc,
}

struct MovingShape {
    kind: ShapeKind,
    size: usize,
    color: [f64; 3],
    /// Integer top-left position per frame.
    positions: Vec<(i64, i64)>,
}

impl MovingShape {
    fn covers(&self, frame: usize, y: usize, x: usize) -> bool {
        let (py, px) = self.positions[frame];
        let (dy, dx) = (y as i64 - py, x as i64 - px);
        if dy < 0 || dx < 0 || dy >= self.size as i64 || dx >= self.size as i64 {
            return false;
        }
        match self.kind {
            ShapeKind::Square => true,
            ShapeKind::Disc => {
                let r = self.size as f64 / 2.0;
                let cy = dy as f64 + 0.5 - r;
                let cx = dx as f64 + 0.5 - r;
                cy * cy + cx * cx <= r * r
            }
        }
    }
}

fn sample_moving_shape(
    rng: &mut ChaCha8Rng,
    spec: &DatasetSpec,
    area_per_shape: f64,
    kind: ShapeKind,
) -> Result<MovingShape> {
    let (h, w) = spec.image_size;
    let n = spec.frames_per_clip;
    let size = match kind {
        ShapeKind::Square => (area_per_shape.sqrt().round() as usize).max(2),
        // Solid disc of diameter `size` has area pi/4 * size^2.
        ShapeKind::Disc => ((area_per_shape * 4.0 / std::f64::consts::PI).sqrt().round() as usize).max(3),
    };
    if size + 2 > h.min(w) {
        return Err(Error::ShapeDoesNotFit {
            size,
            width: w,
            height: h,
            frames: n,
        });
    }
    let color = [
        rng.random_range(0.45..0.80),
        rng.random_range(0.45..0.80),
        rng.random_range(0.45..0.80),
    ];
    // Retry velocities until the whole trajectory fits; shrink speed if needed.
    for attempt in 0..32 {
        let shrink = 1.0 / (1.0 + attempt as f64 * 0.25);
        let speed = rng.random_range(spec.velocity_range.0..=spec.velocity_range.1) * shrink;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
        let span_x = vx * (n - 1) as f64;
        let span_y = vy * (n - 1) as f64;
        let lo_x = 0.5 + (-span_x).max(0.0);
        let hi_x = (w - size) as f64 - 0.5 - span_x.max(0.0);
        let lo_y = 0.5 + (-span_y).max(0.0);
        let hi_y = (h - size) as f64 - 0.5 - span_y.max(0.0);
        if hi_x <= lo_x || hi_y <= lo_y {
            continue;
        }
        let x0 = rng.random_range(lo_x..hi_x);
        let y0 = rng.random_range(lo_y..hi_y);
        let positions: Vec<(i64, i64)> = (0..n)
            .map(|f| {
                (
                    (y0 + vy * f as f64).round() as i64,
                    (x0 + vx * f as f64).round() as i64,
                )
            })
            .collect();
        let fits = positions.iter().all(|&(py, px)| {
            py >= 0 && px >= 0 && py + size as i64 <= h as i64 && px + size as i64 <= w as i64
        });
        if fits {
            return Ok(MovingShape {
                kind,
                size,
                color,
                positions,
            });
        }
    }
    Err(Error::ShapeDoesNotFit {
        size,
        width: w,
        height: h,
        frames: n,
    })
}

struct ClipData {
    frames: Vec<Array2<[f64; 3]>>,
    masks: Vec<Array2<f64>>,
    flows: Vec<FlowField>,
}

fn render_clip(spec: &DatasetSpec, clip_index: usize) -> Result<ClipData> {
    let (h, w) = spec.image_size;
    let n = spec.frames_per_clip;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(clip_index as u64 + 1);

    let area_per_shape = spec.target_foreground_fraction * (h * w) as f64 / spec.moving_shapes as f64;
    let movers: Vec<MovingShape> = (0..spec.moving_shapes)
        .map(|i| {
            let kind = if i % 2 == 0 { ShapeKind::Square } else { ShapeKind::Disc };
            sample_moving_shape(&mut rng, spec, area_per_shape, kind)
        })
        .collect::<Result<_>>()?;

    // Static distractors: high-contrast, never in the mask, zero flow.
    let distractor_size = ((area_per_shape * 0.75).sqrt().round() as usize).clamp(2, h.min(w) / 3);
    let distractors: Vec<(usize, usize, usize, f64)> = (0..spec.distractor_shapes)
        .map(|i| {
            let y = rng.random_range(0..=(h - distractor_size));
            let x = rng.random_range(0..=(w - distractor_size));
            let shade = if i % 2 == 0 { 0.97 } else { 0.03 };
            (y, x, distractor_size, shade)
        })
        .collect();

    // Mild horizontal luminance gradient keeps the background low-contrast.
    let bg_base = rng.random_range(0.28..0.36);
    let background = |y: usize, x: usize| -> [f64; 3] {
        let t = bg_base + 0.08 * (x as f64 / (w - 1).max(1) as f64)
            + 0.02 * (y as f64 / (h - 1).max(1) as f64);
        [t, t, t]
    };

    let mut frames = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut flows = Vec::with_capacity(n);
    for f in 0..n {
        let mut img = Array2::from_shape_fn((h, w), |(y, x)| background(y, x));
        for &(dy, dx, ds, shade) in &distractors {
            for y in dy..dy + ds {
                for x in dx..dx + ds {
                    img[[y, x]] = [shade, shade, shade];
                }
            }
        }
        let mut mask = Array2::zeros((h, w));
        let mut u = Array2::zeros((h, w));
        let mut v = Array2::zeros((h, w));
        for shape in &movers {
            let disp = if f == 0 {
                (0i64, 0i64)
            } else {
                let (py, px) = shape.positions[f];
                let (qy, qx) = shape.positions[f - 1];
                (py - qy, px - qx)
            };
            for y in 0..h {
                for x in 0..w {
                    if shape.covers(f, y, x) {
                        img[[y, x]] = shape.color;
                        mask[[y, x]] = 1.0;
                        u[[y, x]] = disp.1 as f64;
                        v[[y, x]] = disp.0 as f64;
                    }
                }
            }
        }
        frames.push(img);
        masks.push(mask);
        flows.push(if f == 0 {
            FlowField::zeros(h, w)
        } else {
            FlowField::new(u, v)?
        });
    }
    Ok(ClipData { frames, masks, flows })
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Generates the dataset under `out_dir` and returns its manifest.
pub fn generate_synthetic_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let (h, w) = spec.image_size;
    let mut clips = Vec::with_capacity(spec.num_clips);
    for ci in 0..spec.num_clips {
        let name = format!("clip_{ci:03}");
        let clip_dir = out_dir.join(&name);
        let data = render_clip(spec, ci)?;
        fs::create_dir_all(clip_dir.join("frames"))?;
        fs::create_dir_all(clip_dir.join("masks"))?;
        fs::create_dir_all(clip_dir.join("flow"))?;
        for (f, img) in data.frames.iter().enumerate() {
            let mut rgb = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = img[[y, x]];
                    rgb.put_pixel(x as u32, y as u32, image::Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]));
                }
            }
            rgb.save(clip_dir.join("frames").join(format!("{f:05}.png")))
                .map_err(|e| Error::BadImage {
                    path: clip_dir.join("frames").join(format!("{f:05}.png")),
                    reason: e.to_string(),
                })?;
        }
        for (f, mask) in data.masks.iter().enumerate() {
            let mut gray = image::GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    gray.put_pixel(x as u32, y as u32, image::Luma([to_u8(mask[[y, x]])]));
                }
            }
            gray.save(clip_dir.join("masks").join(format!("{f:05}.png")))
                .map_err(|e| Error::BadImage {
                    path: clip_dir.join("masks").join(format!("{f:05}.png")),
                    reason: e.to_string(),
                })?;
        }
        for (f, flow) in data.flows.iter().enumerate() {
            flo::write_flow(flow, &clip_dir.join("flow").join(format!("{f:05}.flo")))?;
        }
        clips.push((name, spec.frames_per_clip));
    }
    let mut manifest = fs::File::create(out_dir.join("manifest.txt"))?;
    for (name, count) in &clips {
        writeln!(manifest, "{name} {count}")?;
    }
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        clips,
    })
}
