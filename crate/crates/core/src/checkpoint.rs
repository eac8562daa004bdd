//! Versioned binary checkpoint container with an end-of-file checksum.
//!
//! Layout (all little-endian): magic, format version, config fingerprint,
//! curriculum state, model configuration, every parameter tensor with its
//! momentum buffer, and a trailing FNV-1a checksum of everything before it.
//! Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::excitation::CurriculumState;
use crate::model::{ExcitationNet, FuseMode, ModelConfig};
use crate::params::ParamStore;
use ndarray::{ArrayD, IxDyn};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VSODCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub version: u32,
    pub model: ModelConfig,
    pub curriculum: CurriculumState,
    pub params: ParamStore,
}

impl CheckpointRecord {
    pub fn new(model: ModelConfig, curriculum: CurriculumState, params: ParamStore) -> Self {
        CheckpointRecord {
            version: FORMAT_VERSION,
            model,
            curriculum,
            params,
        }
    }

    /// Hash of the model-configuration block; identifies compatible configs.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&encode_model_config(&self.model))
    }

    /// Rebuilds the network and its parameter store from this record.
    pub fn instantiate(&self) -> Result<(ExcitationNet, ParamStore)> {
        let mut store = ParamStore::new();
        let net = ExcitationNet::new(&mut store, 0, self.model)?;
        if store.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (fresh, saved) in store.entries_mut().iter_mut().zip(self.params.entries()) {
            if fresh.name != saved.name || fresh.value.shape() != saved.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint parameter `{}` does not match model parameter `{}`",
                    saved.name, fresh.name
                )));
            }
            fresh.value = saved.value.clone();
            fresh.momentum = saved.momentum.clone();
        }
        Ok((net, store))
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_model_config(m: &ModelConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, m.input_size.0 as u32);
    put_u32(&mut buf, m.input_size.1 as u32);
    put_u32(&mut buf, m.base_channels as u32);
    put_u32(&mut buf, m.level_channels as u32);
    put_u32(&mut buf, m.dilation_levels as u32);
    put_u32(&mut buf, m.encoder_stride as u32);
    for c in m.decoder_channels {
        put_u32(&mut buf, c as u32);
    }
    put_u32(&mut buf, m.lstm_hidden as u32);
    buf.push(match m.fuse {
        FuseMode::Concat => 0,
        FuseMode::Sum => 1,
    });
    buf
}

/// Serializes a record to `path`.
pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, record.version);
    put_u64(&mut buf, record.fingerprint());
    put_u32(&mut buf, record.curriculum.epoch);
    put_f64(&mut buf, record.curriculum.alpha);
    buf.push(record.curriculum.stage);
    buf.extend_from_slice(&encode_model_config(&record.model));
    put_u32(&mut buf, record.params.len() as u32);
    for entry in record.params.entries() {
        put_u32(&mut buf, entry.name.len() as u32);
        buf.extend_from_slice(entry.name.as_bytes());
        put_u32(&mut buf, entry.value.ndim() as u32);
        for &d in entry.value.shape() {
            put_u32(&mut buf, d as u32);
        }
        for &v in entry.value.iter() {
            put_f64(&mut buf, v);
        }
        for &v in entry.momentum.iter() {
            put_f64(&mut buf, v);
        }
    }
    let checksum = fnv1a64(&buf);
    put_u64(&mut buf, checksum);
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::MalformedCheckpoint {
                path: self.path.to_path_buf(),
                reason: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Deserializes a record, verifying the checksum and format version.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::ChecksumFailure {
            path: path.to_path_buf(),
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(payload) != stored {
        return Err(Error::ChecksumFailure {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        bytes: payload,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::MalformedCheckpoint {
            path: path.to_path_buf(),
            reason: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let stored_fingerprint = r.u64()?;
    let curriculum = CurriculumState {
        epoch: r.u32()?,
        alpha: r.f64()?,
        stage: r.u8()?,
    };
    let model = ModelConfig {
        input_size: (r.u32()? as usize, r.u32()? as usize),
        base_channels: r.u32()? as usize,
        level_channels: r.u32()? as usize,
        dilation_levels: r.u32()? as usize,
        encoder_stride: r.u32()? as usize,
        decoder_channels: [
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
        ],
        lstm_hidden: r.u32()? as usize,
        fuse: match r.u8()? {
            0 => FuseMode::Concat,
            1 => FuseMode::Sum,
            other => {
                return Err(Error::MalformedCheckpoint {
                    path: path.to_path_buf(),
                    reason: format!("unknown fuse mode {other}"),
                })
            }
        },
    };
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
            Error::MalformedCheckpoint {
                path: path.to_path_buf(),
                reason: "parameter name is not UTF-8".into(),
            }
        })?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let mut value = Vec::with_capacity(len);
        for _ in 0..len {
            value.push(r.f64()?);
        }
        let mut momentum = Vec::with_capacity(len);
        for _ in 0..len {
            momentum.push(r.f64()?);
        }
        let id = params.add(name, ArrayD::from_shape_vec(IxDyn(&dims), value).unwrap());
        params.entries_mut()[id.0].momentum = ArrayD::from_shape_vec(IxDyn(&dims), momentum).unwrap();
    }
    let record = CheckpointRecord {
        version,
        model,
        curriculum,
        params,
    };
    if record.fingerprint() != stored_fingerprint {
        return Err(Error::MalformedCheckpoint {
            path: path.to_path_buf(),
            reason: "config fingerprint does not match stored model configuration".into(),
        });
    }
    Ok(record)
}
