//! Checkpoint file format.
//!
//! Single little-endian binary file:
//!
//! ```text
//! magic "TRCGPT\0\0" | version u32 | config JSON (u32 length prefix)
//! tensor count u32
//!   per tensor: name (u16 length prefix), ndim u8, dims u32..., f64 data
//! optimizer flag u8
//!   if 1: step u64, m (u64 length prefix, f64 data), v (same)
//! log count u32, entries (step u64, train f64, val f64)
//! trailing FNV-1a 64 checksum of all preceding bytes
//! ```

use super::{Model, ModelConfig, ParamLayout, TrainLogEntry};
use crate::util::Fnv64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"TRCGPT\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: checksum mismatch; file is corrupt or truncated")]
    ChecksumMismatch { path: String },
    #[error("{path}: corrupt checkpoint: {msg}")]
    Corrupt { path: String, msg: String },
}

/// Adam moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Serialized training state: config, best weights, optimizer state, log.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub optimizer: Option<OptimizerState>,
    pub train_log: Vec<TrainLogEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, optimizer: Option<OptimizerState>, train_log: Vec<TrainLogEntry>) -> Self {
        Checkpoint {
            config: model.config,
            params: model.params.clone(),
            optimizer,
            train_log,
        }
    }

    /// Rebuild a model from the stored config and weights.
    pub fn into_model(self) -> Result<Model, super::ModelError> {
        self.config.validate()?;
        let layout = ParamLayout::new(&self.config);
        if layout.total != self.params.len() {
            return Err(super::ModelError::InvalidConfig(format!(
                "checkpoint has {} parameters but config implies {}",
                self.params.len(),
                layout.total
            )));
        }
        Ok(Model {
            config: self.config,
            layout,
            params: self.params,
        })
    }
}

struct CountingWriter<W: Write> {
    inner: W,
    hash: Fnv64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.hash.update(bytes);
        self.inner.write_all(bytes)
    }
}

/// Write a checkpoint; returns the file's trailing checksum.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<u64, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = CountingWriter {
        inner: BufWriter::new(file),
        hash: Fnv64::new(),
    };
    w.put(MAGIC).map_err(io_err)?;
    w.put(&VERSION.to_le_bytes()).map_err(io_err)?;

    let config_json = serde_json::to_vec(&ckpt.config).expect("config serializes");
    w.put(&(config_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.put(&config_json).map_err(io_err)?;

    let layout = ParamLayout::new(&ckpt.config);
    w.put(&(layout.specs.len() as u32).to_le_bytes()).map_err(io_err)?;
    let mut offset = 0usize;
    for (name, shape) in &layout.specs {
        let len: usize = shape.iter().product();
        w.put(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.put(name.as_bytes()).map_err(io_err)?;
        w.put(&[shape.len() as u8]).map_err(io_err)?;
        for &dim in shape {
            w.put(&(dim as u32).to_le_bytes()).map_err(io_err)?;
        }
        for &v in &ckpt.params[offset..offset + len] {
            w.put(&v.to_le_bytes()).map_err(io_err)?;
        }
        offset += len;
    }
    debug_assert_eq!(offset, ckpt.params.len());

    match &ckpt.optimizer {
        Some(opt) => {
            w.put(&[1u8]).map_err(io_err)?;
            w.put(&opt.step.to_le_bytes()).map_err(io_err)?;
            for moments in [&opt.m, &opt.v] {
                w.put(&(moments.len() as u64).to_le_bytes()).map_err(io_err)?;
                for &v in moments.iter() {
                    w.put(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
        None => w.put(&[0u8]).map_err(io_err)?,
    }

    w.put(&(ckpt.train_log.len() as u32).to_le_bytes()).map_err(io_err)?;
    for e in &ckpt.train_log {
        w.put(&e.step.to_le_bytes()).map_err(io_err)?;
        w.put(&e.train_loss.to_le_bytes()).map_err(io_err)?;
        w.put(&e.val_loss.to_le_bytes()).map_err(io_err)?;
    }

    let checksum = w.hash.finish();
    w.inner.write_all(&checksum.to_le_bytes()).map_err(io_err)?;
    w.inner.flush().map_err(io_err)?;
    Ok(checksum)
}

struct SliceReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> SliceReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.display().to_string(),
                msg: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Read and fully verify a checkpoint (magic, version, checksum, shapes).
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    let corrupt = |msg: String| CheckpointError::Corrupt {
        path: path.display().to_string(),
        msg,
    };
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(corrupt("file too short".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let mut hash = Fnv64::new();
    hash.update(body);
    if hash.finish() != stored {
        return Err(CheckpointError::ChecksumMismatch {
            path: path.display().to_string(),
        });
    }

    let mut r = SliceReader {
        buf: body,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            expected: VERSION,
        });
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| corrupt(format!("bad config JSON: {e}")))?;
    let layout = ParamLayout::new(&config);

    let n_tensors = r.u32()? as usize;
    if n_tensors != layout.specs.len() {
        return Err(corrupt(format!(
            "expected {} tensors, found {n_tensors}",
            layout.specs.len()
        )));
    }
    let mut params = Vec::with_capacity(layout.total);
    for (name, shape) in &layout.specs {
        let name_len = r.u16()? as usize;
        let found_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("tensor name is not UTF-8".into()))?;
        if found_name != name {
            return Err(corrupt(format!("expected tensor {name:?}, found {found_name:?}")));
        }
        let ndim = r.u8()? as usize;
        if ndim != shape.len() {
            return Err(corrupt(format!("tensor {name}: rank {ndim} vs {}", shape.len())));
        }
        let mut len = 1usize;
        for &want in shape {
            let dim = r.u32()? as usize;
            if dim != want {
                return Err(corrupt(format!("tensor {name}: dim {dim} vs {want}")));
            }
            len *= dim;
        }
        params.extend(r.f64_vec(len)?);
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m_len = r.u64()? as usize;
            let m = r.f64_vec(m_len)?;
            let v_len = r.u64()? as usize;
            let v = r.f64_vec(v_len)?;
            if m_len != params.len() || v_len != params.len() {
                return Err(corrupt("optimizer state length mismatch".into()));
            }
            Some(OptimizerState { step, m, v })
        }
        other => return Err(corrupt(format!("bad optimizer flag {other}"))),
    };

    let log_len = r.u32()? as usize;
    let mut train_log = Vec::with_capacity(log_len);
    for _ in 0..log_len {
        train_log.push(TrainLogEntry {
            step: r.u64()?,
            train_loss: r.f64()?,
            val_loss: r.f64()?,
        });
    }
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }

    Ok(Checkpoint {
        config,
        params,
        optimizer,
        train_log,
    })
}

/// Read only the config header, without touching the tensor payload.
/// Verifies magic and version but not the checksum; meant for inspection.
pub fn peek_config(path: &Path) -> Result<ModelConfig, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = File::open(path).map_err(io_err)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header).map_err(io_err)?;
    if &header[..8] != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            expected: VERSION,
        });
    }
    let config_len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut config_bytes = vec![0u8; config_len];
    f.read_exact(&mut config_bytes).map_err(io_err)?;
    serde_json::from_slice(&config_bytes).map_err(|e| CheckpointError::Corrupt {
        path: path.display().to_string(),
        msg: format!("bad config JSON: {e}"),
    })
}

/// The trailing checksum of a checkpoint file.
pub fn file_checksum(path: &Path) -> Result<u64, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let meta = std::fs::metadata(path).map_err(io_err)?;
    if meta.len() < 8 {
        return Err(CheckpointError::Corrupt {
            path: path.display().to_string(),
            msg: "file too short".into(),
        });
    }
    let mut f = File::open(path).map_err(io_err)?;
    use std::io::Seek;
    f.seek(std::io::SeekFrom::End(-8)).map_err(io_err)?;
    let mut tail = [0u8; 8];
    f.read_exact(&mut tail).map_err(io_err)?;
    Ok(u64::from_le_bytes(tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::MetaParams;

    fn small_model() -> Model {
        Model::init(ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            context: 10,
            vocab: 6,
            meta: MetaParams::src_dst(3, 2),
            mlp_ratio: 2,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = small_model();
        let opt = OptimizerState {
            step: 17,
            m: model.params.iter().map(|&x| x * 0.5).collect(),
            v: model.params.iter().map(|&x| x * x).collect(),
        };
        let log = vec![TrainLogEntry {
            step: 10,
            train_loss: 1.5,
            val_loss: 1.6,
        }];
        let ckpt = Checkpoint::from_model(&model, Some(opt.clone()), log.clone());

        let f = tempfile::NamedTempFile::new().unwrap();
        let sum = save_checkpoint(&ckpt, f.path()).unwrap();
        assert_eq!(file_checksum(f.path()).unwrap(), sum);

        let back = load_checkpoint(f.path()).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.params, model.params);
        assert_eq!(back.optimizer.as_ref().unwrap(), &opt);
        assert_eq!(back.train_log, log);

        // Bit-identical forward outputs after reload.
        let reloaded = back.into_model().unwrap();
        let tokens = [1u32, 3, 5, 0];
        let metas = [0u32, 3, 1, 4];
        let a = model.forward(&tokens, &metas).unwrap();
        let b = reloaded.forward(&tokens, &metas).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let model = small_model();
        let ckpt = Checkpoint::from_model(&model, None, vec![]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let model = small_model();
        let ckpt = Checkpoint::from_model(&model, None, vec![]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic { .. })
        ));

        let model = small_model();
        let ckpt = Checkpoint::from_model(&model, None, vec![]);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field
        std::fs::write(&path, &bytes).unwrap();
        // Checksum now fails first? No: version is read before checksum only
        // in peek; load verifies checksum first, so patch it too.
        let mut hash = Fnv64::new();
        hash.update(&bytes[..bytes.len() - 8]);
        let sum = hash.finish().to_le_bytes();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&sum);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn config_only_inspection() {
        let model = small_model();
        let ckpt = Checkpoint::from_model(&model, None, vec![]);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&ckpt, f.path()).unwrap();
        let config = peek_config(f.path()).unwrap();
        assert_eq!(config, model.config);
        // A checkpoint without optimizer state loads fine.
        let back = load_checkpoint(f.path()).unwrap();
        assert!(back.optimizer.is_none());
    }
}
