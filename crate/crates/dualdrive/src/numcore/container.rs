//! Versioned binary container for named arrays.
//!
//! Layout, all little-endian: magic "R2D1", format version u32, entry count
//! u32, then per entry: name length u32 + UTF-8 bytes, dtype u8 (0 = f32,
//! 1 = f64), rank u8, dims u32 * rank, raw element data.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::array::{Array, NumError};

pub const MAGIC: [u8; 4] = *b"R2D1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub array: Array,
}

impl Entry {
    pub fn f64(name: impl Into<String>, array: Array) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F64,
            array,
        }
    }

    pub fn f32(name: impl Into<String>, array: Array) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F32,
            array,
        }
    }

    /// Exact round-trip embedding of a u64 (seeds, counters) via bit-cast.
    pub fn u64(name: impl Into<String>, value: u64) -> Self {
        Self::f64(name, Array::scalar(f64::from_bits(value)))
    }

    pub fn as_u64(&self) -> u64 {
        self.array.data()[0].to_bits()
    }
}

pub fn to_bytes(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.dtype {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        out.push(e.array.shape().len() as u8);
        for &d in e.array.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match e.dtype {
            DType::F32 => {
                for &v in e.array.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for &v in e.array.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<Entry>, NumError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], NumError> {
        if *pos + n > bytes.len() {
            return Err(NumError::BadContainer("truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(NumError::BadContainer("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(NumError::BadContainer(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| NumError::BadContainer("bad utf8 name".into()))?;
        let dtype = match take(&mut pos, 1)?[0] {
            0 => DType::F32,
            1 => DType::F64,
            d => return Err(NumError::BadContainer(format!("bad dtype {d}"))),
        };
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let data = match dtype {
            DType::F32 => take(&mut pos, n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => take(&mut pos, n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        entries.push(Entry {
            name,
            dtype,
            array: Array::from_vec(shape, data)?,
        });
    }
    if pos != bytes.len() {
        return Err(NumError::BadContainer("trailing bytes".into()));
    }
    Ok(entries)
}

pub fn write_file(path: &Path, entries: &[Entry]) -> Result<(), NumError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(entries))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<Entry>, NumError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let entries = vec![
            Entry::f64(
                "a.w",
                Array::from_vec(vec![2, 3], vec![1.5, -2.0, 0.0, 3.25, 9.0, -0.125]).unwrap(),
            ),
            Entry::u64("rng.seed", 0xDEAD_BEEF_1234_5678),
            Entry::f32("small", Array::from_vec(vec![2], vec![0.5, -1.5]).unwrap()),
        ];
        let bytes = to_bytes(&entries);
        let back = from_bytes(&bytes).unwrap();
        let bytes2 = to_bytes(&back);
        assert_eq!(bytes, bytes2);
        assert_eq!(back[1].as_u64(), 0xDEAD_BEEF_1234_5678);
        assert_eq!(back[0].array.data(), entries[0].array.data());
    }

    #[test]
    fn f32_storage_narrows() {
        let e = vec![Entry::f32("x", Array::scalar(0.1))];
        let back = from_bytes(&to_bytes(&e)).unwrap();
        assert_eq!(back[0].array.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = to_bytes(&[Entry::f64("x", Array::scalar(1.0))]);
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncation_rejected() {
        let bytes = to_bytes(&[Entry::f64("x", Array::scalar(1.0))]);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
