//! Binary named-tensor archive.
//!
//! ```text
//! tag          "gfv-ckpt/1\n"
//! fingerprint  u64 LE   (architecture hash)
//! seed         u64 LE
//! count        u32 LE
//! count × { name_len u16 LE, name utf-8, ndim u8, dims u64 LE × ndim, values f64 LE × prod(dims) }
//! ```
//!
//! Payloads are always `f64`, whatever scalar the parameters use.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchitectureConfig, NetworkError, SiameseParams};
use crate::Real;

pub const CHECKPOINT_TAG: &[u8] = b"gfv-ckpt/1\n";

pub fn save_checkpoint<T: Real>(params: &SiameseParams<T>, path: &Path) -> Result<(), NetworkError> {
    let io = |source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let tensors = params.tensors();
    let mut put = |bytes: &[u8]| w.write_all(bytes);
    (|| {
        put(CHECKPOINT_TAG)?;
        put(&params.fingerprint().to_le_bytes())?;
        put(&params.seed().to_le_bytes())?;
        put(&(tensors.len() as u32).to_le_bytes())?;
        for t in &tensors {
            put(&(t.name.len() as u16).to_le_bytes())?;
            put(t.name.as_bytes())?;
            put(&[t.shape.len() as u8])?;
            for &d in &t.shape {
                put(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(8 * 4096);
            for chunk in t.data.chunks(4096) {
                buf.clear();
                for v in chunk {
                    buf.extend_from_slice(&v.as_f64().to_le_bytes());
                }
                put(&buf)?;
            }
        }
        Ok(())
    })()
    .map_err(io)?;
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, NetworkError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| NetworkError::CorruptCheckpoint(format!("reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Loads a checkpoint written for `arch`.
pub fn load_checkpoint<T: Real>(path: &Path, arch: &ArchitectureConfig) -> Result<SiameseParams<T>, NetworkError> {
    let file = File::open(path).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let tag = r.bytes(CHECKPOINT_TAG.len(), "tag")?;
    if tag != CHECKPOINT_TAG {
        return Err(NetworkError::CorruptCheckpoint("not a checkpoint archive".into()));
    }
    let found = r.u64("fingerprint")?;
    let expected = arch.fingerprint();
    if found != expected {
        return Err(NetworkError::FingerprintMismatch { expected, found });
    }
    let mut params = SiameseParams::<T>::zeros(arch)?;
    params.seed = r.u64("seed")?;
    let count = u32::from_le_bytes(r.bytes(4, "tensor count")?.try_into().expect("4 bytes")) as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(NetworkError::CorruptCheckpoint(format!(
            "{count} tensors, expected {}",
            slots.len()
        )));
    }
    let mut seen = vec![false; slots.len()];
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.bytes(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.bytes(name_len, "name")?)
            .map_err(|_| NetworkError::CorruptCheckpoint("tensor name is not utf-8".into()))?;
        let ndim = r.bytes(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let idx = slots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| NetworkError::CorruptCheckpoint(format!("unexpected tensor {name}")))?;
        if seen[idx] || slots[idx].shape != shape {
            return Err(NetworkError::CorruptCheckpoint(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                slots[idx].shape
            )));
        }
        seen[idx] = true;
        let data = &mut *slots[idx].data;
        let mut buf = vec![0u8; 8 * 4096];
        for chunk in data.chunks_mut(4096) {
            let bytes = &mut buf[..8 * chunk.len()];
            r.inner
                .read_exact(bytes)
                .map_err(|e| NetworkError::CorruptCheckpoint(format!("reading {name}: {e}")))?;
            for (v, b) in chunk.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = T::of(f64::from_le_bytes(b.try_into().expect("8 bytes")));
            }
        }
    }
    drop(slots);
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| NetworkError::CorruptCheckpoint(e.to_string()))?;
    if !rest.is_empty() {
        return Err(NetworkError::CorruptCheckpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(params)
}
