//! DTEN tensor container and keypoint CSV files.
//!
//! DTEN layout: `"DTEN"`, version byte (1), dtype byte (1 f32, 2 f64, 3 u8,
//! 4 i32), rank byte, one little-endian u32 per dimension, then the row-major
//! little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{contract, io_err, DtenError, Error, Result};
use crate::registration::LabelMap;
use crate::tensor::{DType, Element, Tensor};

const MAGIC: &[u8; 4] = b"DTEN";
const VERSION: u8 = 1;

/// A decoded DTEN file: dtype, dims and the raw little-endian payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DtenArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    payload: Vec<u8>,
}

impl DtenArray {
    fn new(dtype: DType, shape: &[usize], payload: Vec<u8>) -> Result<Self> {
        if shape.len() > u8::MAX as usize || shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(contract("DtenArray", format!("shape {shape:?} does not fit the header")));
        }
        debug_assert_eq!(payload.len(), shape.iter().product::<usize>() * dtype.size());
        Ok(DtenArray {
            dtype,
            shape: shape.to_vec(),
            payload,
        })
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        if !t.is_finite() {
            return Err(DtenError::NonFinite.into());
        }
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.to_le_bytes(&mut payload);
        }
        DtenArray::new(T::DTYPE, t.shape(), payload)
    }

    pub fn from_u8(shape: &[usize], data: &[u8]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(contract("DtenArray::from_u8", format!("shape {shape:?} vs {} bytes", data.len())));
        }
        DtenArray::new(DType::U8, shape, data.to_vec())
    }

    pub fn from_i32(shape: &[usize], data: &[i32]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(contract("DtenArray::from_i32", format!("shape {shape:?} vs {} values", data.len())));
        }
        let payload = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        DtenArray::new(DType::I32, shape, payload)
    }

    fn expect(&self, dtype: DType) -> Result<()> {
        if self.dtype != dtype {
            return Err(DtenError::DtypeMismatch {
                expected: dtype.name(),
                found: self.dtype.name(),
            }
            .into());
        }
        Ok(())
    }

    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        self.expect(T::DTYPE)?;
        let data = self.payload.chunks_exact(T::DTYPE.size()).map(T::from_le_bytes).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn to_u8(&self) -> Result<Vec<u8>> {
        self.expect(DType::U8)?;
        Ok(self.payload.clone())
    }

    pub fn to_i32(&self) -> Result<Vec<i32>> {
        self.expect(DType::I32)?;
        Ok(self
            .payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.shape.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DtenError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(DtenError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(7)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(DtenError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(DtenError::BadVersion(bytes[4]));
        }
        let dtype = DType::from_code(bytes[5]).ok_or(DtenError::BadDtype(bytes[5]))?;
        let ndim = bytes[6] as usize;
        let header = 7 + 4 * ndim;
        need(header)?;
        let shape: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let total = header + shape.iter().product::<usize>() * dtype.size();
        need(total)?;
        if bytes.len() > total {
            return Err(DtenError::Trailing {
                extra: bytes.len() - total,
            });
        }
        Ok(DtenArray {
            dtype,
            shape,
            payload: bytes[header..].to_vec(),
        })
    }
}

pub fn write_dten_array(path: impl AsRef<Path>, array: &DtenArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, array.encode()).map_err(io_err(path))
}

pub fn read_dten_array(path: impl AsRef<Path>) -> Result<DtenArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(DtenArray::decode(&bytes)?)
}

pub fn write_dten<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_dten_array(path, &DtenArray::from_tensor(t)?)
}

pub fn read_dten<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_dten_array(path)?.to_tensor()
}

/// Stores a label grid as a `[H, W]` u8 array.
pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_dten_array(path, &DtenArray::from_u8(&[labels.height(), labels.width()], labels.data())?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let a = read_dten_array(path)?;
    if a.shape.len() != 2 {
        return Err(contract("read_labels", format!("label grid must be 2-D, got {:?}", a.shape)));
    }
    LabelMap::new(a.shape[0], a.shape[1], a.to_u8()?)
}

/// One `x,y` line per point; values are written in shortest round-trip form.
pub fn format_keypoints(points: &[(f64, f64)]) -> String {
    points.iter().map(|(x, y)| format!("{x},{y}\n")).collect()
}

pub fn parse_keypoints(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let mut parts = line.split(',');
        let (Some(x), Some(y), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("expected \"x,y\", got {line:?}")));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("not a finite number: {s:?}")))
        };
        out.push((num(x)?, num(y)?));
    }
    Ok(out)
}

pub fn write_keypoints(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_keypoints(points)).map_err(io_err(path))
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_keypoints(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_errors_are_distinct() {
        let good = DtenArray::from_tensor(&Tensor::full(&[2, 3], 1.5f32)).unwrap().encode();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(DtenArray::decode(&bad_magic), Err(DtenError::BadMagic(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(DtenArray::decode(&bad_version), Err(DtenError::BadVersion(9))));
        let mut bad_dtype = good.clone();
        bad_dtype[5] = 7;
        assert!(matches!(DtenArray::decode(&bad_dtype), Err(DtenError::BadDtype(7))));
        assert!(matches!(
            DtenArray::decode(&good[..good.len() - 1]),
            Err(DtenError::Truncated { expected: 39, found: 38 })
        ));
    }

    #[test]
    fn keypoint_lines() {
        let p = Path::new("k.csv");
        assert_eq!(parse_keypoints("", p).unwrap(), vec![]);
        assert_eq!(parse_keypoints("1.5,2.25\n", p).unwrap(), vec![(1.5, 2.25)]);
        let err = parse_keypoints("1,2\n3;4\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
