//! Binary checkpoint container for parameter sets and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SEGADPT\0"
//! 8       4     format version (u32, currently 1)
//! 12      1     scalar width in bytes: 4 (f32) or 8 (f64)
//! 13      3     reserved, zero
//! 16      4     tensor count (u32)
//! ```
//!
//! followed by one record per tensor:
//!
//! ```text
//! 4          name length (u32)
//! <len>      name, UTF-8
//! 1          parameter group: 0 encoder, 1 decoder
//! 4          rank (u32)
//! 8 * rank   dimensions (u64 each)
//! w * prod   raw IEEE-754 values, little-endian
//! ```
//!
//! Section membership is encoded in tensor names (`student.`, `teacher.`,
//! `optim.m.`, `optim.v.`, `fusion.`, `meta.`), so one container holds a
//! whole training state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ParamGroup, ParamSet, Tensor};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"SEGADPT\0";
const VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

/// Writes a flat list of named tensors.
pub fn save<R: Real>(path: &Path, tensors: &[Tensor<R>]) -> Result<()> {
    let width = std::mem::size_of::<R>() as u8;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));

    put(&mut w, MAGIC)?;
    put(&mut w, &VERSION.to_le_bytes())?;
    put(&mut w, &[width, 0, 0, 0])?;
    put(&mut w, &(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        put(&mut w, &(t.name.len() as u32).to_le_bytes())?;
        put(&mut w, t.name.as_bytes())?;
        put(&mut w, &[match t.group {
            ParamGroup::Encoder => 0u8,
            ParamGroup::Decoder => 1,
        }])?;
        put(&mut w, &(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            put(&mut w, &(d as u64).to_le_bytes())?;
        }
        let mut raw = Vec::with_capacity(t.data.len() * width as usize);
        for &v in &t.data {
            if width == 4 {
                raw.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            } else {
                raw.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        put(&mut w, &raw)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a container written by [`save`]. The stored scalar width must match
/// `R`; checkpoints do not silently convert precision.
pub fn load<R: Real>(path: &Path) -> Result<Vec<Tensor<R>>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut read_exact = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
        Ok(buf)
    };

    let magic = read_exact(8)?;
    if magic != MAGIC {
        return Err(Error::Ingestion(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = u32::from_le_bytes(read_exact(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Ingestion(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let head = read_exact(4)?;
    let width = head[0] as usize;
    if width != std::mem::size_of::<R>() {
        return Err(Error::Ingestion(format!(
            "{}: checkpoint stores {width}-byte scalars, caller expects {}",
            path.display(),
            std::mem::size_of::<R>()
        )));
    }
    let count = u32::from_le_bytes(read_exact(4)?.try_into().unwrap()) as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read_exact(name_len)?)
            .map_err(|_| Error::Ingestion(format!("{}: tensor name is not UTF-8", path.display())))?;
        let group = match read_exact(1)?[0] {
            0 => ParamGroup::Encoder,
            1 => ParamGroup::Decoder,
            g => {
                return Err(Error::Ingestion(format!(
                    "{}: unknown parameter group {g} for '{name}'",
                    path.display()
                )))
            }
        };
        let rank = u32::from_le_bytes(read_exact(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = read_exact(len * width)?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(width) {
            let v = if width == 4 {
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(chunk.try_into().unwrap())
            };
            data.push(R::from_f64_lossy(v));
        }
        tensors.push(Tensor { name, shape, group, data });
    }
    Ok(tensors)
}

/// Clones a parameter set's tensors with `prefix` prepended to each name.
pub fn with_prefix<R: Real>(params: &ParamSet<R>, prefix: &str) -> Vec<Tensor<R>> {
    params
        .tensors()
        .iter()
        .map(|t| Tensor {
            name: format!("{prefix}{}", t.name),
            shape: t.shape.clone(),
            group: t.group,
            data: t.data.clone(),
        })
        .collect()
}

/// Extracts the tensors under `prefix` (stripping it) as a parameter set,
/// preserving the stored order.
pub fn take_prefix<R: Real>(tensors: &[Tensor<R>], prefix: &str) -> Result<ParamSet<R>> {
    let mut out = Vec::new();
    for t in tensors {
        if let Some(rest) = t.name.strip_prefix(prefix) {
            out.push(Tensor {
                name: rest.to_string(),
                shape: t.shape.clone(),
                group: t.group,
                data: t.data.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Ingestion(format!("checkpoint holds no tensors under '{prefix}'")));
    }
    ParamSet::new(out)
}

/// A `[1]`-shaped metadata tensor (step counters and similar scalars).
pub fn meta_tensor<R: Real>(name: &str, value: f64) -> Tensor<R> {
    Tensor {
        name: format!("meta.{name}"),
        shape: vec![1],
        group: ParamGroup::Encoder,
        data: vec![R::from_f64_lossy(value)],
    }
}

/// Reads back a metadata scalar written by [`meta_tensor`].
pub fn meta_value<R: Real>(tensors: &[Tensor<R>], name: &str) -> Result<f64> {
    let full = format!("meta.{name}");
    tensors
        .iter()
        .find(|t| t.name == full)
        .map(|t| t.data[0].to_f64_lossy())
        .ok_or_else(|| Error::Ingestion(format!("checkpoint is missing '{full}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let params = init_params::<f32>(&NetConfig::tiny(), 42);
        let mut tensors = with_prefix(&params, "student.");
        tensors.push(meta_tensor("step", 17.0));
        save(&path, &tensors).unwrap();

        let loaded = load::<f32>(&path).unwrap();
        let restored = take_prefix(&loaded, "student.").unwrap();
        assert_eq!(restored, params);
        assert_eq!(meta_value(&loaded, "step").unwrap(), 17.0);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let params = init_params::<f32>(&NetConfig::tiny(), 1);
        save(&path, &with_prefix(&params, "student.")).unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Ingestion(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load::<f32>(&path), Err(Error::Ingestion(_))));
    }

    #[test]
    fn teacher_prefix_coexists_with_student() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let student = init_params::<f64>(&NetConfig::tiny(), 2);
        let teacher = init_params::<f64>(&NetConfig::tiny(), 3);
        let mut tensors = with_prefix(&student, "student.");
        tensors.extend(with_prefix(&teacher, "teacher."));
        save(&path, &tensors).unwrap();
        let loaded = load::<f64>(&path).unwrap();
        assert_eq!(take_prefix(&loaded, "student.").unwrap(), student);
        assert_eq!(take_prefix(&loaded, "teacher.").unwrap(), teacher);
    }
}
