//! Domain tensor types, synthetic dataset generation, dataset IO, and preprocessing.
//!
//! Dataset layout on disk:
//! `<root>/<clip>/frames/%05d.png`, `<root>/<clip>/masks/%05d.png`
//! (8-bit grayscale, 255 = salient), `<root>/<clip>/flow/%05d.flo`,
//! plus a `manifest.txt` with one `clip path + frame count` per line.

mod flo;
mod loader;
mod preprocess;
mod synth;

pub use flo::{read_flow, write_flow};
pub use loader::{load_clip, load_gray_image, read_manifest, save_gray_image};
pub use preprocess::{flip_clip, preprocess, Flips};
pub use synth::{generate_synthetic_dataset, DatasetManifest, DatasetSpec};

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, Array4};

/// Per-frame optical flow, components in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlowField {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::shape(
                "flow field",
                format!("{:?}", u.dim()),
                format!("{:?}", v.dim()),
            ));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFlow);
        }
        Ok(FlowField { u, v })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }
}

/// Aligned sequence of frames, optional ground-truth masks, and per-frame flow.
///
/// `flows[n]` carries the motion from frame `n-1` to frame `n`; frame 0 holds
/// the zero field. Layouts: frames `N×H×W×3`, masks `N×H×W`, flows `N×H×W×2`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Array4<f64>,
    pub masks: Option<Array3<f64>>,
    pub flows: Array4<f64>,
    /// Set when the source directory had no flow files and zeros were substituted.
    pub flow_fallback: bool,
}

impl VideoClip {
    pub fn new(
        frames: Array4<f64>,
        masks: Option<Array3<f64>>,
        flows: Array4<f64>,
    ) -> Result<Self> {
        let (n, h, w, c) = frames.dim();
        if c != 3 {
            return Err(Error::shape("clip frames", "N,H,W,3", format!("{:?}", frames.dim())));
        }
        if let Some(m) = &masks {
            if m.dim() != (n, h, w) {
                return Err(Error::shape(
                    "clip masks",
                    format!("({n},{h},{w})"),
                    format!("{:?}", m.dim()),
                ));
            }
            if m.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument("mask values outside [0,1]".into()));
            }
        }
        if flows.dim() != (n, h, w, 2) {
            return Err(Error::shape(
                "clip flows",
                format!("({n},{h},{w},2)"),
                format!("{:?}", flows.dim()),
            ));
        }
        if flows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFlow);
        }
        Ok(VideoClip {
            frames,
            masks,
            flows,
            flow_fallback: false,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w, _) = self.frames.dim();
        (h, w)
    }

    /// Frame `n` as a `[3,H,W]` tensor.
    pub fn frame_chw(&self, n: usize) -> Array3<f64> {
        let (_, h, w, _) = self.frames.dim();
        let mut out = Array3::zeros((3, h, w));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[[c, y, x]] = self.frames[[n, y, x, c]];
                }
            }
        }
        out
    }

    /// Flow of frame `n` as a `[2,H,W]` tensor (u then v).
    pub fn flow_chw(&self, n: usize) -> Array3<f64> {
        let (_, h, w, _) = self.flows.dim();
        let mut out = Array3::zeros((2, h, w));
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    out[[c, y, x]] = self.flows[[n, y, x, c]];
                }
            }
        }
        out
    }

    pub fn mask(&self, n: usize) -> Option<Array2<f64>> {
        self.masks
            .as_ref()
            .map(|m| m.index_axis(ndarray::Axis(0), n).to_owned())
    }

    /// Per-clip window starting at `start`, `len` frames.
    pub fn window(&self, start: usize, len: usize) -> VideoClip {
        use ndarray::s;
        let end = (start + len).min(self.len());
        VideoClip {
            frames: self.frames.slice(s![start..end, .., .., ..]).to_owned(),
            masks: self
                .masks
                .as_ref()
                .map(|m| m.slice(s![start..end, .., ..]).to_owned()),
            flows: self.flows.slice(s![start..end, .., .., ..]).to_owned(),
            flow_fallback: self.flow_fallback,
        }
    }
}

/// Which corpus a training batch was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    SpatialImage,
    TemporalFlow,
    FullVideo,
}

/// One training sample, payload shaped by its kind.
#[derive(Debug, Clone)]
pub enum SampleBatch {
    /// (image `[H,W,3]` as a 1-frame clip, GT)
    SpatialImage { image: Array3<f64>, gt: Array2<f64> },
    /// (flow `[H,W,2]`, companion frame for spatial guidance, GT)
    TemporalFlow {
        flow: Array3<f64>,
        frame: Array3<f64>,
        gt: Array2<f64>,
    },
    /// (clip, GT sequence inside the clip)
    FullVideo { clip: VideoClip },
}

impl SampleBatch {
    pub fn kind(&self) -> SampleKind {
        match self {
            SampleBatch::SpatialImage { .. } => SampleKind::SpatialImage,
            SampleBatch::TemporalFlow { .. } => SampleKind::TemporalFlow,
            SampleBatch::FullVideo { .. } => SampleKind::FullVideo,
        }
    }
}
