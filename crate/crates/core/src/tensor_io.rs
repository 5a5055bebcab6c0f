//! AGT1 tensor files.
//!
//! Layout, all integers little endian:
//!
//! | bytes | content                                          |
//! |-------|--------------------------------------------------|
//! | 0..4  | magic `AGT1`                                     |
//! | 4     | dtype: 1 = f32, 2 = f64                          |
//! | 5     | ndim: 2 (rows, cols) or 3 (channels, rows, cols) |
//! | 6..8  | reserved, zero                                   |
//! | 8..   | `ndim` x u32 dimensions                          |
//! | ...   | payload, channel-major then row-major            |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, TensorStack};

pub const MAGIC: &[u8; 4] = b"AGT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn encode(dims: &[usize], values: impl Iterator<Item = f64>, dtype: Dtype) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + count * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => values.for_each(|v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => values.for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Serialize a stack as a 3D AGT1 file image.
pub fn encode_stack(stack: &TensorStack, dtype: Dtype) -> Result<Vec<u8>> {
    let (c, r, w) = stack.shape();
    encode(
        &[c, r, w],
        stack.iter().flat_map(|p| p.as_slice().iter().copied()),
        dtype,
    )
}

/// Serialize a single grid as a 2D AGT1 file image.
pub fn encode_grid(grid: &Grid2D, dtype: Dtype) -> Result<Vec<u8>> {
    encode(&[grid.rows(), grid.cols()], grid.as_slice().iter().copied(), dtype)
}

/// Parsed file contents. 2D files decode as a one-channel stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub dtype: Dtype,
    pub ndim: u8,
    pub stack: TensorStack,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < 8 {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header truncated: need 8 bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let dtype = Dtype::from_code(bytes[4])
        .ok_or_else(|| Error::format(4, format!("unknown dtype code {}", bytes[4])))?;
    let ndim = bytes[5];
    if ndim != 2 && ndim != 3 {
        return Err(Error::format(5, format!("ndim must be 2 or 3, got {ndim}")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::format(6, "reserved bytes must be zero"));
    }
    let header_len = 8 + 4 * ndim as usize;
    if bytes.len() < header_len {
        return Err(Error::format(
            bytes.len() as u64,
            format!("dimension block truncated: need {header_len} bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut count: u64 = 1;
    for i in 0..ndim as usize {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if d == 0 {
            return Err(Error::format(off as u64, "zero dimension"));
        }
        count = count
            .checked_mul(d as u64)
            .filter(|c| c.checked_mul(dtype.size() as u64).is_some_and(|b| b <= isize::MAX as u64))
            .ok_or_else(|| Error::format(off as u64, "dimension product overflows"))?;
        dims.push(d as usize);
    }
    let payload = &bytes[header_len..];
    let expected = count as usize * dtype.size();
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "payload truncated: expected {expected} bytes after header, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (header_len + expected) as u64,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            (header_len + i * dtype.size()) as u64,
            "non-finite value in payload",
        ));
    }
    let (c, r, w) = match dims.as_slice() {
        [r, w] => (1, *r, *w),
        [c, r, w] => (*c, *r, *w),
        _ => unreachable!(),
    };
    Ok(Decoded {
        dtype,
        ndim,
        stack: TensorStack::from_flat(c, r, w, values)?,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, stack: &TensorStack, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_stack(stack, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid2D, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_grid(grid, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorStack> {
    read_tensor_with_dtype(path).map(|d| d.stack)
}

pub fn read_tensor_with_dtype(path: impl AsRef<Path>) -> Result<Decoded> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorStack {
        TensorStack::from_flat(2, 3, 4, (0..24).map(|i| i as f64 * 0.37 - 3.0).collect()).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_stack(&sample(), Dtype::F64).unwrap();
        assert_eq!(&bytes[0..4], b"AGT1");
        assert_eq!(bytes[4], 2);
        assert_eq!(bytes[5], 3);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 24 * 8);
        // first value, channel 0 row 0 col 0
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), -3.0);

        let g = encode_grid(sample().channel(0), Dtype::F32).unwrap();
        assert_eq!(g[4], 1);
        assert_eq!(g[5], 2);
        assert_eq!(g.len(), 16 + 12 * 4);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.agt");
        let s = sample();
        write_tensor(&path, &s, Dtype::F64).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), s);

        write_grid(&path, s.channel(1), Dtype::F64).unwrap();
        let d = read_tensor_with_dtype(&path).unwrap();
        assert_eq!(d.ndim, 2);
        assert_eq!(d.stack.channel(0), s.channel(1));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_stack(&sample(), Dtype::F64).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AGT1");
        bytes.extend_from_slice(&[1, 3, 0, 0]);
        for d in [21u32, 46, 46] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 100]);
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload truncated"), "{err}");
        assert!(matches!(err, Error::Format { offset: 120, .. }));
    }

    #[test]
    fn header_errors() {
        let good = encode_stack(&sample(), Dtype::F32).unwrap();
        let mut b = good.clone();
        b[4] = 9;
        assert!(matches!(decode(&b), Err(Error::Format { offset: 4, .. })));
        let mut b = good.clone();
        b[5] = 4;
        assert!(matches!(decode(&b), Err(Error::Format { offset: 5, .. })));
        let mut b = good.clone();
        b[7] = 1;
        assert!(matches!(decode(&b), Err(Error::Format { offset: 6, .. })));
        let mut b = good.clone();
        b[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::Format { offset: 12, .. })));
        let mut b = good.clone();
        b.push(0);
        assert!(decode(&b).unwrap_err().to_string().contains("trailing"));
        assert!(matches!(decode(&good[..5]), Err(Error::Format { .. })));
        assert!(matches!(decode(&good[..14]), Err(Error::Format { .. })));
    }

    #[test]
    fn dimension_overflow() {
        let mut b = Vec::new();
        b.extend_from_slice(b"AGT1");
        b.extend_from_slice(&[2, 3, 0, 0]);
        for d in [u32::MAX, u32::MAX, u32::MAX] {
            b.extend_from_slice(&d.to_le_bytes());
        }
        let err = decode(&b).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_tensor("/nonexistent/x.agt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.agt"));
    }
}
