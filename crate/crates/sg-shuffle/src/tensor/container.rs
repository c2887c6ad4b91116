//! Flat named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SGTC"
//! version u32            (currently 1)
//! meta    u32 length + UTF-8 bytes   (caller-owned JSON, may be empty)
//! count   u32
//! entry*  key   u32 length + UTF-8 bytes
//!         ndim  u32
//!         dims  u32 * ndim
//!         data  f64 little-endian * product(dims)
//! ```
//!
//! Entries are written in ascending key order, so identical parameter sets
//! serialize to identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"SGTC";
const VERSION: u32 = 1;

/// Ordered name -> tensor map holding every learned weight of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// In-place update used by optimizers; `f` sees the name and the
    /// mutable data slice of every tensor.
    pub fn update<F: FnMut(&str, &mut [f64])>(&mut self, mut f: F) {
        for (name, tensor) in self.entries.iter_mut() {
            f(name, tensor.data_mut());
        }
    }
}

/// Write a [`ParamSet`] plus caller metadata to `path`.
pub fn write_container(path: &Path, params: &ParamSet, meta: &str) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Read a container written by [`write_container`]; returns the parameters
/// and the embedded metadata string.
pub fn read_container(path: &Path) -> Result<(ParamSet, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(TensorError::Container("truncated file".into()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };
    let take_u32 = |cursor: &mut usize| -> Result<u32> {
        let raw = take(cursor, 4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(TensorError::Container("bad magic".into()));
    }
    let version = take_u32(&mut cursor)?;
    if version != VERSION {
        return Err(TensorError::Container(format!(
            "unsupported version {version}"
        )));
    }
    let meta_len = take_u32(&mut cursor)? as usize;
    let meta = String::from_utf8(take(&mut cursor, meta_len)?.to_vec())
        .map_err(|_| TensorError::Container("metadata is not UTF-8".into()))?;
    let count = take_u32(&mut cursor)? as usize;

    let mut params = ParamSet::new();
    for _ in 0..count {
        let key_len = take_u32(&mut cursor)? as usize;
        let key = String::from_utf8(take(&mut cursor, key_len)?.to_vec())
            .map_err(|_| TensorError::Container("key is not UTF-8".into()))?;
        let ndim = take_u32(&mut cursor)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(take_u32(&mut cursor)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut cursor, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(key, Tensor::from_vec(shape, data)?);
    }
    if cursor != bytes.len() {
        return Err(TensorError::Container("trailing bytes".into()));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.sgtc");
        let mut params = ParamSet::new();
        params.insert(
            "w",
            Tensor::from_vec(vec![2, 3], vec![0.1, -0.2, 1e-300, 3.5, 4.0, -0.0]).unwrap(),
        );
        params.insert("b", Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        write_container(&path, &params, "{\"v\":1}").unwrap();
        let (loaded, meta) = read_container(&path).unwrap();
        assert_eq!(meta, "{\"v\":1}");
        assert_eq!(loaded, params);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_container(&path).is_err());
    }

    #[test]
    fn identical_sets_serialize_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = ParamSet::new();
        params.insert("a", Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        params.insert("z", Tensor::scalar(9.0));
        let p1 = dir.path().join("one.sgtc");
        let p2 = dir.path().join("two.sgtc");
        write_container(&p1, &params, "m").unwrap();
        write_container(&p2, &params.clone(), "m").unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
