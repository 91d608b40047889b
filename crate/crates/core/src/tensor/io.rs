//! `UVT1` binary tensor files.
//!
//! Layout: magic `55 56 54 31` ("UVT1"), `u8` dtype (1 = f32, 2 = f64),
//! `u8` ndim, `ndim × u32` little-endian extents, then the row-major
//! little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const MAGIC: [u8; 4] = *b"UVT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

pub fn encode(tensor: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    if tensor.ndim() > u8::MAX as usize {
        return Err(Error::InvalidInput(format!("{} axes exceed the UVT1 limit", tensor.ndim())));
    }
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(6 + 4 * tensor.ndim() + width * tensor.len());
    out.extend_from_slice(&MAGIC);
    out.push(dtype as u8);
    out.push(tensor.ndim() as u8);
    for &d in tensor.dims() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F32 => tensor.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => tensor.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let bad = |detail: &str| Error::format(origin, detail);
    if bytes.len() < 6 || bytes[..4] != MAGIC {
        return Err(bad("missing UVT1 magic"));
    }
    let width = match bytes[4] {
        1 => 4,
        2 => 8,
        other => return Err(bad(&format!("unknown dtype code {other}"))),
    };
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * width {
        return Err(bad(&format!("payload holds {} bytes, dims {dims:?} need {}", payload.len(), n * width)));
    }
    let data = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    };
    Tensor::new(dims, data).map_err(|e| bad(&e.to_string()))
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_as(path, tensor, DType::F64)
}

pub fn write_as(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&encode(tensor, dtype)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let t = Tensor::new([2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode(&t, DType::F64).unwrap();
        assert_eq!(&b[..6], &[0x55, 0x56, 0x54, 0x31, 2, 2]);
        assert_eq!(&b[6..14], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[14..22], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn rejects_corrupt_input() {
        let p = Path::new("mem");
        assert!(decode(b"NOPE\x02\x01\x01\x00\x00\x00", p).is_err());
        let t = Tensor::ones([3]);
        let mut b = encode(&t, DType::F64).unwrap();
        b.pop();
        assert!(decode(&b, p).is_err());
        b = encode(&t, DType::F64).unwrap();
        b[4] = 9;
        assert!(decode(&b, p).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode(&encode(&t, DType::F64).unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn f32_round_trip_within_precision(v in -1e3f64..1e3) {
            let t = Tensor::scalar(v);
            let back = decode(&encode(&t, DType::F32).unwrap(), Path::new("mem")).unwrap();
            prop_assert!((back.item() - v).abs() <= 1e-4 * v.abs().max(1.0));
        }
    }
}
