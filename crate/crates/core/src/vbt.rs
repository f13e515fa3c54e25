//! VBT tensor files.
//!
//! ```text
//! "VBT1" | dtype u32 | layout u32 | n u32 | c u32 | h u32 | w u32 | payload
//! ```
//!
//! All integers and elements are little-endian. The payload holds exactly
//! `required_size` elements for the declared layout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Layout, Shape, Tensor, TensorData};

pub const MAGIC: &[u8; 4] = b"VBT1";
const HEADER_LEN: usize = 4 + 6 * 4;

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + tensor.len() * tensor.dtype().size_bytes());
    out.extend_from_slice(MAGIC);
    for field in [
        tensor.dtype().code(),
        tensor.layout().code(),
        shape.n as u32,
        shape.c as u32,
        shape.h as u32,
        shape.w as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    match tensor.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I8(v) => out.extend(v.iter().map(|x| *x as u8)),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad magic, expected VBT1"));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
    };
    let dtype = DType::from_code(field(0))
        .ok_or_else(|| Error::format(format!("unknown dtype code {}", field(0))))?;
    let layout = Layout::from_code(field(1))
        .ok_or_else(|| Error::format(format!("unknown layout code {}", field(1))))?;
    let shape = Shape::new(
        field(2) as usize,
        field(3) as usize,
        field(4) as usize,
        field(5) as usize,
    )
    .map_err(|e| Error::format(e.to_string()))?;

    let count = shape.required_size(layout);
    let payload = &bytes[HEADER_LEN..];
    let want = count * dtype.size_bytes();
    if payload.len() < want {
        return Err(Error::format(format!(
            "truncated payload: header declares {count} elements ({want} bytes), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() > want {
        return Err(Error::format(format!(
            "{} trailing bytes after payload",
            payload.len() - want
        )));
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        DType::I8 => TensorData::I8(payload.iter().map(|b| *b as i8).collect()),
    };
    Tensor::new(shape, layout, data)
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn write_tensor_file(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(tensor))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_format_error() {
        assert!(matches!(decode(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let t = Tensor::from_i8(shape, Layout::Nchw, vec![1, 2, 3, 4]).unwrap();
        let mut bytes = encode(&t);
        bytes.pop();
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic_and_dtype() {
        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let t = Tensor::from_f32(shape, Layout::Nchw, vec![1.0]).unwrap();
        let mut bytes = encode(&t);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&t);
        bytes[4] = 7;
        assert!(decode(&bytes).unwrap_err().to_string().contains("dtype"));
    }

    #[test]
    fn header_layout() {
        let shape = Shape::new(1, 2, 3, 4).unwrap();
        let t = Tensor::zeros(shape, DType::I8, Layout::Nchw);
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"VBT1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 28 + 24);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vbt");
        let shape = Shape::new(1, 33, 2, 2).unwrap();
        let t = Tensor::from_f32(
            shape,
            Layout::FeatureDepth,
            (0..shape.required_size(Layout::FeatureDepth)).map(|x| x as f32 * -0.5).collect(),
        )
        .unwrap();
        write_tensor_file(&t, &path).unwrap();
        assert!(read_tensor_file(&path).unwrap().bit_eq(&t));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..3, 1usize..40, 1usize..5, 1usize..5, any::<bool>(), any::<bool>(), any::<u64>())
            .prop_map(|(n, c, h, w, fd, int, seed)| {
                let shape = Shape::new(n, c, h, w).unwrap();
                let layout = if fd { Layout::FeatureDepth } else { Layout::Nchw };
                let len = shape.required_size(layout);
                let mut x = seed | 1;
                let mut next = move || {
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    x
                };
                let data = if int {
                    TensorData::I8((0..len).map(|_| next() as i8).collect())
                } else {
                    TensorData::F32((0..len).map(|_| f32::from_bits(next() as u32)).collect())
                };
                Tensor::new(shape, layout, data).unwrap()
            })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(t in arb_tensor()) {
            prop_assert!(decode(&encode(&t)).unwrap().bit_eq(&t));
        }
    }
}
