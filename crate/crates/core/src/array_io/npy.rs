//! NPY v1.0 writer and v1.0/v2.0 reader.
//!
//! Little-endian dtypes only, C-order only; fortran-order and big-endian
//! payloads are rejected rather than converted so that reads stay
//! byte-exact. Written headers are padded so the payload starts at a
//! 64-byte multiple.

use super::{ArrayIoError, Dtype, Tensor, TensorData};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Reads an NPY file into a [`Tensor`].
pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor, ArrayIoError> {
    let bytes = fs::read(path)?;
    read_npy_bytes(&bytes)
}

/// Parses an in-memory NPY container.
pub fn read_npy_bytes(bytes: &[u8]) -> Result<Tensor, ArrayIoError> {
    if bytes.len() < 10 {
        return Err(ArrayIoError::Format("file shorter than npy preamble".into()));
    }
    if &bytes[..6] != MAGIC {
        return Err(ArrayIoError::Format("bad magic string".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match (major, minor) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(ArrayIoError::Format("truncated v2.0 preamble".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        _ => {
            return Err(ArrayIoError::Format(format!(
                "unsupported npy version {major}.{minor}"
            )))
        }
    };
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(ArrayIoError::Format("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..payload_start])
        .map_err(|_| ArrayIoError::Format("header is not valid utf-8".into()))?;
    let (dtype, fortran, shape) = parse_header(header)?;
    if fortran {
        return Err(ArrayIoError::UnsupportedLayout(
            "fortran_order arrays are not supported (re-save in C order)".into(),
        ));
    }
    let elements: usize = shape.iter().product();
    let payload = &bytes[payload_start..];
    let expected = elements * dtype.item_size();
    if payload.len() != expected {
        return Err(ArrayIoError::Format(format!(
            "payload holds {} bytes, header shape {:?} needs {}",
            payload.len(),
            shape,
            expected
        )));
    }
    let data = match dtype {
        Dtype::U8 => TensorData::U8(payload.to_vec()),
        Dtype::Bool => TensorData::Bool(payload.iter().map(|&b| b != 0).collect()),
        Dtype::I32 => TensorData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect(),
        ),
    };
    Tensor::new(shape, data)
}

/// Writes a tensor as NPY v1.0.
pub fn write_npy(path: impl AsRef<Path>, t: &Tensor) -> Result<(), ArrayIoError> {
    let bytes = npy_bytes(t)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Serializes a tensor as an in-memory NPY v1.0 container.
pub fn npy_bytes(t: &Tensor) -> Result<Vec<u8>, ArrayIoError> {
    let dict = header_dict(t.dtype(), t.shape());
    // magic(6) + version(2) + header_len(2) + dict + pad + '\n', padded so the
    // payload offset is a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + pad + 1;
    if header_len > u16::MAX as usize {
        return Err(ArrayIoError::Format("header too long for npy v1.0".into()));
    }
    let mut out = Vec::with_capacity(10 + header_len + t.len() * t.dtype().item_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(pad));
    out.push(b'\n');
    match t.data() {
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
        TensorData::I32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn header_dict(dtype: Dtype, shape: &[usize]) -> String {
    let shape_str = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    )
}

fn parse_header(header: &str) -> Result<(Dtype, bool, Vec<usize>), ArrayIoError> {
    let bad = |msg: &str| ArrayIoError::Format(format!("bad header dict: {msg}"));
    let s = header.trim();
    let s = s
        .strip_prefix('{')
        .and_then(|s| s.rfind('}').map(|i| &s[..i]))
        .ok_or_else(|| bad("missing braces"))?;

    let mut descr: Option<String> = None;
    let mut fortran: Option<bool> = None;
    let mut shape: Option<Vec<usize>> = None;

    let chars: Vec<char> = s.chars().collect();
    let mut i = 0usize;
    let len = chars.len();
    let skip_ws = |i: &mut usize| {
        while *i < len && (chars[*i].is_whitespace() || chars[*i] == ',') {
            *i += 1;
        }
    };
    while {
        skip_ws(&mut i);
        i < len
    } {
        // key
        let quote = chars[i];
        if quote != '\'' && quote != '"' {
            return Err(bad("expected quoted key"));
        }
        i += 1;
        let key_start = i;
        while i < len && chars[i] != quote {
            i += 1;
        }
        if i >= len {
            return Err(bad("unterminated key"));
        }
        let key: String = chars[key_start..i].iter().collect();
        i += 1;
        skip_ws(&mut i);
        if i >= len || chars[i] != ':' {
            return Err(bad("expected ':' after key"));
        }
        i += 1;
        skip_ws(&mut i);
        if i >= len {
            return Err(bad("missing value"));
        }
        // value
        match chars[i] {
            '\'' | '"' => {
                let q = chars[i];
                i += 1;
                let start = i;
                while i < len && chars[i] != q {
                    i += 1;
                }
                if i >= len {
                    return Err(bad("unterminated string value"));
                }
                let val: String = chars[start..i].iter().collect();
                i += 1;
                if key == "descr" {
                    descr = Some(val);
                }
            }
            'T' | 'F' => {
                let rest: String = chars[i..len.min(i + 5)].iter().collect();
                let val = if rest.starts_with("True") {
                    i += 4;
                    true
                } else if rest.starts_with("False") {
                    i += 5;
                    false
                } else {
                    return Err(bad("expected True or False"));
                };
                if key == "fortran_order" {
                    fortran = Some(val);
                }
            }
            '(' => {
                i += 1;
                let start = i;
                while i < len && chars[i] != ')' {
                    i += 1;
                }
                if i >= len {
                    return Err(bad("unterminated shape tuple"));
                }
                let inner: String = chars[start..i].iter().collect();
                i += 1;
                let mut extents = Vec::new();
                for part in inner.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    extents.push(
                        part.parse::<usize>()
                            .map_err(|_| bad("non-integer extent"))?,
                    );
                }
                if key == "shape" {
                    shape = Some(extents);
                }
            }
            _ => return Err(bad("unrecognized value")),
        }
    }

    let descr = descr.ok_or_else(|| bad("missing 'descr'"))?;
    let fortran = fortran.ok_or_else(|| bad("missing 'fortran_order'"))?;
    let shape = shape.ok_or_else(|| bad("missing 'shape'"))?;
    Ok((Dtype::from_descr(&descr)?, fortran, shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn payload_starts_at_64_byte_multiple() {
        for t in [
            Tensor::from_u8(vec![0], vec![]).unwrap(),
            Tensor::from_f64(vec![1], vec![3.5]).unwrap(),
            Tensor::from_f32(vec![7, 13], vec![0.0; 91]).unwrap(),
            Tensor::from_i32(vec![2, 3, 4, 5], vec![1; 120]).unwrap(),
        ] {
            let bytes = npy_bytes(&t).unwrap();
            let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + header_len) % 64, 0);
            let back = read_npy_bytes(&bytes).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn empty_tensor_roundtrip() {
        let t = Tensor::from_u8(vec![0], vec![]).unwrap();
        let back = read_npy_bytes(&npy_bytes(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[0]);
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn scalar_f64_exact_roundtrip() {
        let t = Tensor::from_f64(vec![1], vec![3.5]).unwrap();
        let back = read_npy_bytes(&npy_bytes(&t).unwrap()).unwrap();
        assert_eq!(back.as_f64().unwrap(), &[3.5]);
    }

    #[test]
    fn u8_image_payload_length() {
        let t = Tensor::from_u8(vec![4, 256, 256, 3], vec![0; 786432]).unwrap();
        let bytes = npy_bytes(&t).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!(bytes.len() - 10 - header_len, 786432);
    }

    // 96-byte hand-built v1.0 container: 10-byte preamble, 62-byte header
    // (59-char dict + 2 spaces + newline), 24-byte f32 payload.
    #[test]
    fn handcrafted_v1_file_parses() {
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }";
        let dict = &dict[..]; // 59 chars? ensure below
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        let header: String = format!("{dict}{}\n", " ".repeat(61 - dict.len()));
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes.len(), 96);
        let t = read_npy_bytes(&bytes).unwrap();
        assert_eq!(t.dtype(), Dtype::F32);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn v2_header_accepted() {
        let dict = "{'descr': '<i4', 'fortran_order': False, 'shape': (2,), }";
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[2, 0]);
        let header = format!("{dict}\n");
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&7i32.to_le_bytes());
        bytes.extend_from_slice(&(-9i32).to_le_bytes());
        let t = read_npy_bytes(&bytes).unwrap();
        assert_eq!(t.as_i32().unwrap(), &[7, -9]);
    }

    fn patch_header(bytes: &mut [u8], needle: &[u8], replacement: &[u8]) {
        assert_eq!(needle.len(), replacement.len());
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("pattern present in header");
        bytes[pos..pos + needle.len()].copy_from_slice(replacement);
    }

    #[test]
    fn fortran_order_rejected() {
        let t = Tensor::from_f32(vec![2, 2], vec![0.0; 4]).unwrap();
        let mut bytes = npy_bytes(&t).unwrap();
        patch_header(&mut bytes, b"False", b"True ");
        let err = read_npy_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ArrayIoError::UnsupportedLayout(_)));
    }

    #[test]
    fn unknown_dtype_rejected() {
        let t = Tensor::from_f32(vec![1], vec![0.0]).unwrap();
        let mut bytes = npy_bytes(&t).unwrap();
        patch_header(&mut bytes, b"<f4", b"<c8");
        let err = read_npy_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ArrayIoError::UnsupportedDtype(_)));
    }

    #[test]
    fn big_endian_rejected() {
        let t = Tensor::from_f32(vec![1], vec![0.0]).unwrap();
        let mut bytes = npy_bytes(&t).unwrap();
        patch_header(&mut bytes, b"<f4", b">f4");
        let err = read_npy_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ArrayIoError::UnsupportedDtype(_)));
    }

    #[test]
    fn bad_magic_rejected() {
        let err = read_npy_bytes(b"\x93NUMPZ\x01\x00aaaa").unwrap_err();
        assert!(matches!(err, ArrayIoError::Format(_)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let t = Tensor::from_f32(vec![4], vec![0.0; 4]).unwrap();
        let mut bytes = npy_bytes(&t).unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = read_npy_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ArrayIoError::Format(_)));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let t = Tensor::from_bool(vec![2, 2], vec![true, false, false, true]).unwrap();
        write_npy(&path, &t).unwrap();
        assert_eq!(read_npy(&path).unwrap(), t);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        let shape = prop::collection::vec(0usize..5, 0..4);
        shape.prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            let s2 = shape.clone();
            prop_oneof![
                prop::collection::vec(any::<u8>(), n..=n)
                    .prop_map(move |v| Tensor::from_u8(shape.clone(), v).unwrap()),
                prop::collection::vec(any::<i32>(), n..=n)
                    .prop_map({
                        let s = s2.clone();
                        move |v| Tensor::from_i32(s.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<f32>(), n..=n)
                    .prop_map({
                        let s = s2.clone();
                        move |v| Tensor::from_f32(s.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<f64>(), n..=n)
                    .prop_map({
                        let s = s2.clone();
                        move |v| Tensor::from_f64(s.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<bool>(), n..=n)
                    .prop_map(move |v| Tensor::from_bool(s2.clone(), v).unwrap()),
            ]
        })
    }

    proptest! {
        // Byte-exact container roundtrip for every supported dtype,
        // including NaN payloads (bit patterns compared through
        // re-serialization).
        #[test]
        fn roundtrip_any_supported_tensor(t in arb_tensor()) {
            let bytes = npy_bytes(&t).unwrap();
            let back = read_npy_bytes(&bytes).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert_eq!(back.dtype(), t.dtype());
            prop_assert_eq!(npy_bytes(&back).unwrap(), bytes);
        }
    }
}
