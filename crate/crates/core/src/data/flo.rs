//! Middlebury `.flo` optical-flow codec.
//!
//! Layout: little-endian f32 magic `202021.25`, i32 width, i32 height, then
//! row-major interleaved `(u, v)` f32 pairs.

use super::FlowField;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: f32 = 202021.25;

pub fn write_flow(field: &FlowField, path: &Path) -> Result<()> {
    if field.u.iter().chain(field.v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteFlow);
    }
    let (h, w) = field.dims();
    let mut buf = Vec::with_capacity(12 + h * w * 8);
    buf.extend_from_slice(&MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            buf.extend_from_slice(&(field.u[[y, x]] as f32).to_le_bytes());
            buf.extend_from_slice(&(field.v[[y, x]] as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path)?;
    let take4 = |off: usize| -> Result<[u8; 4]> {
        bytes
            .get(off..off + 4)
            .and_then(|s| s.try_into().ok())
            .ok_or(Error::TruncatedFlow {
                path: path.to_path_buf(),
                got: bytes.len(),
                expected: off + 4,
            })
    };
    let magic = f32::from_le_bytes(take4(0)?);
    if magic != MAGIC {
        return Err(Error::BadFlowMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let w = i32::from_le_bytes(take4(4)?);
    let h = i32::from_le_bytes(take4(8)?);
    if w <= 0 || h <= 0 {
        return Err(Error::BadFlowDims {
            path: path.to_path_buf(),
            width: w,
            height: h,
        });
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + h * w * 8;
    if bytes.len() < expected {
        return Err(Error::TruncatedFlow {
            path: path.to_path_buf(),
            got: bytes.len(),
            expected,
        });
    }
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    let mut off = 12;
    for y in 0..h {
        for x in 0..w {
            let uv = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let vv = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            if !uv.is_finite() || !vv.is_finite() {
                return Err(Error::NonFiniteFlow);
            }
            u[[y, x]] = uv as f64;
            v[[y, x]] = vv as f64;
            off += 8;
        }
    }
    FlowField::new(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use tempfile::tempdir;

    #[test]
    fn one_by_one_field_is_twenty_bytes() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.flo");
        let field = FlowField::new(arr2(&[[2.0]]), arr2(&[[-1.0]])).unwrap();
        write_flow(&field, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 20);
        let back = read_flow(&p).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn roundtrip_is_exact_for_f32_values() {
        // The on-disk format stores 32-bit floats; any finite f32 survives
        // write -> read bit-exactly.
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.flo");
        let raw: [f32; 6] = [0.5, -3.25, 1e10, 0.0, -0.0, 1.5e-3];
        let u = arr2(&[
            [raw[0] as f64, raw[1] as f64, raw[2] as f64],
            [raw[3] as f64, raw[4] as f64, raw[5] as f64],
        ]);
        let v = arr2(&[[7.0, 2.5, -8.125], [42.0, -1.0, 0.0625]]);
        let field = FlowField::new(u, v).unwrap();
        write_flow(&field, &p).unwrap();
        assert_eq!(read_flow(&p).unwrap(), field);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1234.5f32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::BadFlowMagic { .. })));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("trunc.flo");
        let field = FlowField::new(arr2(&[[1.0, 2.0]]), arr2(&[[3.0, 4.0]])).unwrap();
        write_flow(&field, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::TruncatedFlow { .. })));
    }

    #[test]
    fn nonpositive_dims_are_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("dims.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&super::MAGIC.to_le_bytes());
        bytes.extend_from_slice(&(-2i32).to_le_bytes());
        bytes.extend_from_slice(&3i32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::BadFlowDims { .. })));
    }

    #[test]
    fn nonfinite_values_are_rejected_on_write() {
        let field = FlowField {
            u: arr2(&[[f64::NAN]]),
            v: arr2(&[[0.0]]),
        };
        let dir = tempdir().unwrap();
        assert!(matches!(
            write_flow(&field, &dir.path().join("n.flo")),
            Err(Error::NonFiniteFlow)
        ));
    }
}
