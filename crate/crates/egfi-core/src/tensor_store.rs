//! On-disk tensor directory: a plain-text descriptor (`config.txt`) plus one
//! binary file per named tensor, little-endian floats, row-major. The
//! descriptor's `dtype` line says whether files hold f32 (the documented
//! pretrained-adapter layout) or f64 (training checkpoints, which must
//! reload bit-exactly).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const DESCRIPTOR_FILE: &str = "config.txt";
const MAGIC: &str = "egfi-tensors v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn parse(s: &str) -> Result<Dtype> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Checkpoint(format!("unknown dtype '{other}'"))),
        }
    }
}

/// Descriptor: a `kind`, arbitrary string fields, and the tensor manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub kind: String,
    pub dtype_is_f32: bool,
    pub fields: BTreeMap<String, String>,
    /// name -> (rows, cols)
    pub tensors: BTreeMap<String, (usize, usize)>,
}

impl Descriptor {
    pub fn new(kind: &str) -> Self {
        Descriptor {
            kind: kind.to_string(),
            dtype_is_f32: false,
            fields: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn set_field(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(|s| s.as_str())
    }

    pub fn usize_field(&self, key: &str) -> Result<usize> {
        self.field(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("descriptor missing integer field '{key}'")))
    }
}

fn tensor_file(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.bin"))
}

/// Write a tensor directory. Creates `dir` if needed; individual files are
/// written to a temp name and renamed.
pub fn write_dir(
    dir: &Path,
    kind: &str,
    dtype: Dtype,
    fields: &BTreeMap<String, String>,
    tensors: &[(String, &Array2<f64>)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut descriptor = String::new();
    descriptor.push_str(MAGIC);
    descriptor.push('\n');
    descriptor.push_str(&format!("kind {kind}\n"));
    descriptor.push_str(&format!("dtype {}\n", dtype.as_str()));
    for (k, v) in fields {
        descriptor.push_str(&format!("field {k} {v}\n"));
    }
    for (name, tensor) in tensors {
        descriptor.push_str(&format!("tensor {name} {} {}\n", tensor.nrows(), tensor.ncols()));
    }
    atomic_write(&dir.join(DESCRIPTOR_FILE), descriptor.as_bytes())?;

    for (name, tensor) in tensors {
        let mut bytes = Vec::with_capacity(tensor.len() * 8);
        match dtype {
            Dtype::F64 => {
                for &v in tensor.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F32 => {
                for &v in tensor.iter() {
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        atomic_write(&tensor_file(dir, name), &bytes)?;
    }
    Ok(())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor(dir: &Path) -> Result<Descriptor> {
    let path = dir.join(DESCRIPTOR_FILE);
    let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = content.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("{}: not a tensor directory", dir.display())));
    }
    let mut descriptor = Descriptor::new("");
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (tag, rest) = line
            .split_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("bad descriptor line '{line}'")))?;
        match tag {
            "kind" => descriptor.kind = rest.to_string(),
            "dtype" => descriptor.dtype_is_f32 = Dtype::parse(rest)? == Dtype::F32,
            "field" => {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("bad field line '{line}'")))?;
                descriptor.fields.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(Error::Checkpoint(format!("bad tensor line '{line}'")));
                }
                let rows = parts[1]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad rows in '{line}'")))?;
                let cols = parts[2]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad cols in '{line}'")))?;
                descriptor.tensors.insert(parts[0].to_string(), (rows, cols));
            }
            other => return Err(Error::Checkpoint(format!("unknown descriptor tag '{other}'"))),
        }
    }
    Ok(descriptor)
}

/// Read every tensor listed in the descriptor.
pub fn read_dir(dir: &Path) -> Result<(Descriptor, BTreeMap<String, Array2<f64>>)> {
    let descriptor = read_descriptor(dir)?;
    let mut tensors = BTreeMap::new();
    for (name, &(rows, cols)) in &descriptor.tensors {
        let path = tensor_file(dir, name);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let elem = if descriptor.dtype_is_f32 { 4 } else { 8 };
        if bytes.len() != rows * cols * elem {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}': expected {} bytes for {}x{}, found {}",
                rows * cols * elem,
                rows,
                cols,
                bytes.len()
            )));
        }
        let data: Vec<f64> = if descriptor.dtype_is_f32 {
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        } else {
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect()
        };
        let array = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("tensor '{name}': {e}")))?;
        tensors.insert(name.clone(), array);
    }
    Ok((descriptor, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn f64_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let a = array![[1.0, 2.5e-17], [-3.75, std::f64::consts::PI]];
        let b = array![[0.125]];
        let mut fields = BTreeMap::new();
        fields.insert("step".into(), "12".into());
        write_dir(
            dir.path(),
            "test",
            Dtype::F64,
            &fields,
            &[("alpha".into(), &a), ("beta.m".into(), &b)],
        )
        .unwrap();
        let (descriptor, tensors) = read_dir(dir.path()).unwrap();
        assert_eq!(descriptor.kind, "test");
        assert_eq!(descriptor.field("step"), Some("12"));
        assert_eq!(tensors["alpha"], a);
        assert_eq!(tensors["beta.m"], b);
        assert!(tensors["alpha"]
            .iter()
            .zip(a.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn f32_files_widen_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let a = array![[0.5, -0.25], [1.0, 2.0]]; // exactly representable in f32
        write_dir(dir.path(), "adapter", Dtype::F32, &BTreeMap::new(), &[("w".into(), &a)]).unwrap();
        let (descriptor, tensors) = read_dir(dir.path()).unwrap();
        assert!(descriptor.dtype_is_f32);
        assert_eq!(tensors["w"], a);
        // file really is 4 bytes per element
        let bytes = fs::read(dir.path().join("w.bin")).unwrap();
        assert_eq!(bytes.len(), 16);
    }

    #[test]
    fn truncated_tensor_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let a = array![[1.0, 2.0]];
        write_dir(dir.path(), "test", Dtype::F64, &BTreeMap::new(), &[("w".into(), &a)]).unwrap();
        let path = dir.path().join("w.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..8]).unwrap();
        let err = read_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");
    }
}
