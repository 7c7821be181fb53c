//! Binary checkpoint format.
//!
//! Layout: magic `CMAM` (4 bytes), u32 version = 1, u32 tensor count, then
//! per tensor a u16 name length, the UTF-8 name, a u8 rank, u32 dims, and
//! the raw little-endian f64 values; finally the config snapshot as
//! length-prefixed UTF-8. The training step counter is stored as the named
//! tensor `trainer.step`; optimizer accumulators as `opt.<param>`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use cmam_core::params::{ParamStore, TensorData};

pub const MAGIC: &[u8; 4] = b"CMAM";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io { path: PathBuf, source: io::Error },
    BadMagic { path: PathBuf },
    BadVersion { path: PathBuf, found: u32 },
    Truncated { path: PathBuf, tensor: String },
    Malformed { path: PathBuf, detail: String },
    ArchMismatch { diff: Vec<String> },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CheckpointError::BadMagic { path } => {
                write!(f, "{}: not a checkpoint (bad magic)", path.display())
            }
            CheckpointError::BadVersion { path, found } => {
                write!(f, "{}: unsupported version {found} (expected {VERSION})", path.display())
            }
            CheckpointError::Truncated { path, tensor } => {
                write!(f, "{}: truncated while reading tensor {tensor:?}", path.display())
            }
            CheckpointError::Malformed { path, detail } => {
                write!(f, "{}: {detail}", path.display())
            }
            CheckpointError::ArchMismatch { diff } => {
                write!(f, "checkpoint architecture differs from the requested config:")?;
                for d in diff {
                    write!(f, "\n  {d}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

/// In-memory checkpoint: named tensors in their on-disk order plus the
/// embedded config snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, TensorData)>,
    pub config_snapshot: String,
}

impl Checkpoint {
    /// Assembles a checkpoint from trainer state. Parameters keep their
    /// names, accumulators get the `opt.` prefix, and the step counter
    /// becomes `trainer.step`.
    pub fn assemble(
        params: &ParamStore,
        opt_acc: &BTreeMap<String, Vec<f64>>,
        step: u64,
        config_snapshot: String,
    ) -> Checkpoint {
        let mut tensors = Vec::with_capacity(params.len() * 2 + 1);
        for (name, t) in params.iter() {
            tensors.push((name.clone(), t.clone()));
        }
        for (name, acc) in opt_acc {
            let shape = params
                .get(name)
                .map(|t| t.shape.clone())
                .unwrap_or_else(|| vec![acc.len()]);
            tensors.push((format!("opt.{name}"), TensorData::new(shape, acc.clone())));
        }
        tensors.push(("trainer.step".to_string(), TensorData::scalar(step as f64)));
        Checkpoint { tensors, config_snapshot }
    }

    /// Splits a loaded checkpoint back into parameters, accumulators, and
    /// the step counter.
    pub fn into_parts(self) -> (ParamStore, BTreeMap<String, Vec<f64>>, u64) {
        let mut params = ParamStore::new();
        let mut acc = BTreeMap::new();
        let mut step = 0u64;
        for (name, t) in self.tensors {
            if name == "trainer.step" {
                step = t.values[0] as u64;
            } else if let Some(p) = name.strip_prefix("opt.") {
                acc.insert(p.to_string(), t.values);
            } else {
                params.insert(name, t);
            }
        }
        (params, acc, step)
    }

    pub fn params(&self) -> ParamStore {
        let mut params = ParamStore::new();
        for (name, t) in &self.tensors {
            if name != "trainer.step" && !name.starts_with("opt.") {
                params.insert(name.clone(), t.clone());
            }
        }
        params
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_bytes = name.as_bytes();
            buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.push(t.shape.len() as u8);
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let snap = self.config_snapshot.as_bytes();
        buf.extend_from_slice(&(snap.len() as u32).to_le_bytes());
        buf.extend_from_slice(snap);
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let mut data = Vec::new();
        fs::File::open(path).map_err(io_err)?.read_to_end(&mut data).map_err(io_err)?;

        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, tensor: &str| -> Result<std::ops::Range<usize>, CheckpointError> {
            if *pos + n > data.len() {
                return Err(CheckpointError::Truncated {
                    path: path.to_path_buf(),
                    tensor: tensor.to_string(),
                });
            }
            let r = *pos..*pos + n;
            *pos += n;
            Ok(r)
        };

        let r = take(&mut pos, 4, "<header>")?;
        if &data[r] != MAGIC {
            return Err(CheckpointError::BadMagic { path: path.to_path_buf() });
        }
        let r = take(&mut pos, 4, "<header>")?;
        let version = u32::from_le_bytes(data[r].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::BadVersion { path: path.to_path_buf(), found: version });
        }
        let r = take(&mut pos, 4, "<header>")?;
        let count = u32::from_le_bytes(data[r].try_into().unwrap()) as usize;

        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let label = format!("<tensor {i}>");
            let r = take(&mut pos, 2, &label)?;
            let name_len = u16::from_le_bytes(data[r].try_into().unwrap()) as usize;
            let r = take(&mut pos, name_len, &label)?;
            let name = std::str::from_utf8(&data[r])
                .map_err(|_| CheckpointError::Malformed {
                    path: path.to_path_buf(),
                    detail: format!("tensor {i} has a non-UTF-8 name"),
                })?
                .to_string();
            let r = take(&mut pos, 1, &name)?;
            let rank = data[r.start] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let r = take(&mut pos, 4, &name)?;
                shape.push(u32::from_le_bytes(data[r].try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let r = take(&mut pos, numel * 8, &name)?;
            let values: Vec<f64> = data[r]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, TensorData::new(shape, values)));
        }
        let r = take(&mut pos, 4, "<config snapshot>")?;
        let snap_len = u32::from_le_bytes(data[r].try_into().unwrap()) as usize;
        let r = take(&mut pos, snap_len, "<config snapshot>")?;
        let config_snapshot = String::from_utf8(data[r].to_vec()).map_err(|_| {
            CheckpointError::Malformed {
                path: path.to_path_buf(),
                detail: "config snapshot is not UTF-8".to_string(),
            }
        })?;
        if pos != data.len() {
            return Err(CheckpointError::Malformed {
                path: path.to_path_buf(),
                detail: format!("{} trailing bytes after the snapshot", data.len() - pos),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &tensors {
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Malformed {
                    path: path.to_path_buf(),
                    detail: format!("tensor name {name:?} appears twice"),
                });
            }
        }
        Ok(Checkpoint { tensors, config_snapshot })
    }
}
