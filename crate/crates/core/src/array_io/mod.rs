//! Bit-exact NPY container I/O, PPM export and tensor/field conversions.
//!
//! Everything that crosses a process boundary in this pipeline is an NPY
//! array; [`Tensor`] is the dynamic-dtype carrier between files and the
//! typed rasters in [`crate::field`].

mod npy;
mod ppm;

pub use npy::{npy_bytes, read_npy, read_npy_bytes, write_npy};
pub use ppm::write_ppm;

use crate::field::{
    BinaryField, ChannelField, ClassMap, HvMaps, ImageTile, InstanceMap, ScalarField, StainMap,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArrayIoError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("malformed npy container: {0}")]
    Format(String),
    #[error("unsupported array layout: {0}")]
    UnsupportedLayout(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("shape {shape:?} does not match buffer of {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("expected {expected}, got {got}")]
    Mismatch { expected: String, got: String },
}

fn mismatch(expected: impl Into<String>, got: impl Into<String>) -> ArrayIoError {
    ArrayIoError::Mismatch {
        expected: expected.into(),
        got: got.into(),
    }
}

/// Element type of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I32,
    F32,
    F64,
    Bool,
}

impl Dtype {
    /// NPY `descr` code written for this dtype (little-endian convention).
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::U8 => "|u1",
            Dtype::I32 => "<i4",
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::Bool => "|b1",
        }
    }

    pub fn item_size(self) -> usize {
        match self {
            Dtype::U8 | Dtype::Bool => 1,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self, ArrayIoError> {
        if let Some(code) = descr.strip_prefix('>') {
            if matches!(code, "i4" | "f4" | "f8") {
                return Err(ArrayIoError::UnsupportedDtype(format!(
                    "big-endian '{descr}' (only little-endian arrays are accepted)"
                )));
            }
        }
        match descr.trim_start_matches(['<', '|', '=']) {
            "u1" => Ok(Dtype::U8),
            "i4" => Ok(Dtype::I32),
            "f4" => Ok(Dtype::F32),
            "f8" => Ok(Dtype::F64),
            "b1" => Ok(Dtype::Bool),
            _ => Err(ArrayIoError::UnsupportedDtype(format!("'{descr}'"))),
        }
    }
}

/// Flat buffer of one of the supported dtypes.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::U8(_) => Dtype::U8,
            TensorData::I32(_) => Dtype::I32,
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::Bool(_) => Dtype::Bool,
        }
    }
}

/// Dense n-dimensional array: dtype, shape and a row-major flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, ArrayIoError> {
        let elements: usize = shape.iter().product();
        if elements != data.len() {
            return Err(ArrayIoError::ElementCount {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self, ArrayIoError> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self, ArrayIoError> {
        Self::new(shape, TensorData::I32(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ArrayIoError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ArrayIoError> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_bool(shape: Vec<usize>, data: Vec<bool>) -> Result<Self, ArrayIoError> {
        Self::new(shape, TensorData::Bool(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Element count (product of extents).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    fn describe(&self) -> String {
        format!("{:?} {:?}", self.dtype(), self.shape)
    }
}

fn expect_ndim(t: &Tensor, ndim: usize, what: &str) -> Result<(), ArrayIoError> {
    if t.shape().len() != ndim {
        return Err(mismatch(format!("{ndim}-d array for {what}"), t.describe()));
    }
    Ok(())
}

/// Splits an `N×H×W×3` u8 tensor into per-image RGB tiles.
pub fn image_stack_from_tensor(t: &Tensor) -> Result<Vec<ImageTile>, ArrayIoError> {
    expect_ndim(t, 4, "an RGB image stack")?;
    let (n, h, w, c) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    if c != 3 {
        return Err(mismatch("3 channels", t.describe()));
    }
    let data = t
        .as_u8()
        .ok_or_else(|| mismatch("u8 image stack", t.describe()))?;
    Ok((0..n)
        .map(|i| ImageTile::from_vec(h, w, data[i * h * w * 3..(i + 1) * h * w * 3].to_vec()))
        .collect())
}

/// Converts an `H×W×3` u8 tensor into a single RGB tile.
pub fn image_tile_from_tensor(t: &Tensor) -> Result<ImageTile, ArrayIoError> {
    expect_ndim(t, 3, "an RGB image")?;
    if t.shape[2] != 3 {
        return Err(mismatch("3 channels", t.describe()));
    }
    let data = t
        .as_u8()
        .ok_or_else(|| mismatch("u8 image", t.describe()))?;
    Ok(ImageTile::from_vec(t.shape[0], t.shape[1], data.to_vec()))
}

fn label_value(raw: i64, what: &str) -> Result<u32, ArrayIoError> {
    u32::try_from(raw).map_err(|_| {
        ArrayIoError::Format(format!("negative value {raw} in {what} labels"))
    })
}

/// Splits an `N×H×W×2` integer tensor (instance, class channels) into label
/// map pairs.
pub fn label_stack_from_tensor(
    t: &Tensor,
) -> Result<Vec<(InstanceMap, ClassMap)>, ArrayIoError> {
    expect_ndim(t, 4, "a label stack")?;
    let (n, h, w, c) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    if c != 2 {
        return Err(mismatch("2 label channels (instance, class)", t.describe()));
    }
    let fetch: Box<dyn Fn(usize) -> i64> = match &t.data {
        TensorData::I32(v) => Box::new(move |i| v[i] as i64),
        TensorData::U8(v) => Box::new(move |i| v[i] as i64),
        _ => return Err(mismatch("integer (i32 or u8) label stack", t.describe())),
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut inst = Vec::with_capacity(h * w);
        let mut cls = Vec::with_capacity(h * w);
        let base = i * h * w * 2;
        for p in 0..h * w {
            inst.push(label_value(fetch(base + p * 2), "instance")?);
            cls.push(label_value(fetch(base + p * 2 + 1), "class")?);
        }
        out.push((
            InstanceMap::from_vec(h, w, inst),
            ClassMap::from_vec(h, w, cls),
        ));
    }
    Ok(out)
}

/// Splits an `N×H×W` f32 tensor into scalar fields.
pub fn scalar_stack_from_tensor(t: &Tensor) -> Result<Vec<ScalarField<f32>>, ArrayIoError> {
    expect_ndim(t, 3, "a scalar field stack")?;
    let (n, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let data = t
        .as_f32()
        .ok_or_else(|| mismatch("f32 scalar stack", t.describe()))?;
    Ok((0..n)
        .map(|i| ScalarField::from_vec(h, w, data[i * h * w..(i + 1) * h * w].to_vec()))
        .collect())
}

/// Splits an `N×H×W×2` f32 tensor (horizontal, vertical channels) into HV
/// map pairs.
pub fn hv_stack_from_tensor(t: &Tensor) -> Result<Vec<HvMaps<f32>>, ArrayIoError> {
    expect_ndim(t, 4, "an HV stack")?;
    let (n, h, w, c) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    if c != 2 {
        return Err(mismatch("2 HV channels", t.describe()));
    }
    let data = t
        .as_f32()
        .ok_or_else(|| mismatch("f32 HV stack", t.describe()))?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * h * w * 2;
        let mut hor = Vec::with_capacity(h * w);
        let mut ver = Vec::with_capacity(h * w);
        for p in 0..h * w {
            hor.push(data[base + p * 2]);
            ver.push(data[base + p * 2 + 1]);
        }
        out.push(HvMaps::new(
            ScalarField::from_vec(h, w, hor),
            ScalarField::from_vec(h, w, ver),
        ));
    }
    Ok(out)
}

/// Splits an `N×H×W×C` f32 tensor into per-image channel fields.
pub fn channel_stack_from_tensor(t: &Tensor) -> Result<Vec<ChannelField<f32>>, ArrayIoError> {
    expect_ndim(t, 4, "a channel field stack")?;
    let (n, h, w, c) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    let data = t
        .as_f32()
        .ok_or_else(|| mismatch("f32 channel stack", t.describe()))?;
    Ok((0..n)
        .map(|i| {
            ChannelField::from_vec(h, w, c, data[i * h * w * c..(i + 1) * h * w * c].to_vec())
        })
        .collect())
}

/// Splits an `N×H×W` i32 tensor into instance maps (ids must be >= 0).
pub fn instance_stack_from_tensor(t: &Tensor) -> Result<Vec<InstanceMap>, ArrayIoError> {
    expect_ndim(t, 3, "an instance map stack")?;
    let (n, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let data = t
        .as_i32()
        .ok_or_else(|| mismatch("i32 instance stack", t.describe()))?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut ids = Vec::with_capacity(h * w);
        for &v in &data[i * h * w..(i + 1) * h * w] {
            ids.push(label_value(v as i64, "instance")?);
        }
        out.push(InstanceMap::from_vec(h, w, ids));
    }
    Ok(out)
}

fn uniform_dims<T, D: PartialEq + std::fmt::Debug + Copy>(
    items: &[T],
    dims: impl Fn(&T) -> D,
) -> Result<Option<D>, ArrayIoError> {
    let Some(first) = items.first() else {
        return Ok(None);
    };
    let d0 = dims(first);
    for it in items {
        if dims(it) != d0 {
            return Err(mismatch(
                format!("uniform extents {d0:?}"),
                format!("{:?}", dims(it)),
            ));
        }
    }
    Ok(Some(d0))
}

/// Stacks per-image stain maps into an `N×H×W×3` f32 tensor.
pub fn stain_stack_to_tensor(maps: &[StainMap<f32>]) -> Result<Tensor, ArrayIoError> {
    let (h, w) = uniform_dims(maps, |m| m.dims())?.unwrap_or((0, 0));
    let mut data = Vec::with_capacity(maps.len() * h * w * 3);
    for m in maps {
        for px in m.data() {
            data.extend_from_slice(px);
        }
    }
    Tensor::from_f32(vec![maps.len(), h, w, 3], data)
}

/// Stacks scalar fields into an `N×H×W` f32 tensor.
pub fn scalar_stack_to_tensor(fields: &[ScalarField<f32>]) -> Result<Tensor, ArrayIoError> {
    let (h, w) = uniform_dims(fields, |f| f.dims())?.unwrap_or((0, 0));
    let mut data = Vec::with_capacity(fields.len() * h * w);
    for f in fields {
        data.extend_from_slice(f.data());
    }
    Tensor::from_f32(vec![fields.len(), h, w], data)
}

/// Stacks binary masks into an `N×H×W` f32 tensor of 0.0/1.0 values.
pub fn binary_stack_to_tensor(masks: &[BinaryField]) -> Result<Tensor, ArrayIoError> {
    let (h, w) = uniform_dims(masks, |m| m.dims())?.unwrap_or((0, 0));
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.data().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
    }
    Tensor::from_f32(vec![masks.len(), h, w], data)
}

/// Stacks HV map pairs into an `N×H×W×2` f32 tensor.
pub fn hv_stack_to_tensor(maps: &[HvMaps<f32>]) -> Result<Tensor, ArrayIoError> {
    let (h, w) = uniform_dims(maps, |m| m.dims())?.unwrap_or((0, 0));
    let mut data = Vec::with_capacity(maps.len() * h * w * 2);
    for m in maps {
        for (hv, vv) in m.horizontal.data().iter().zip(m.vertical.data()) {
            data.push(*hv);
            data.push(*vv);
        }
    }
    Tensor::from_f32(vec![maps.len(), h, w, 2], data)
}

/// Stacks channel fields into an `N×H×W×C` f32 tensor.
pub fn channel_stack_to_tensor(fields: &[ChannelField<f32>]) -> Result<Tensor, ArrayIoError> {
    let (h, w, c) = uniform_dims(fields, |f| f.dims())?.unwrap_or((0, 0, 0));
    let mut data = Vec::with_capacity(fields.len() * h * w * c);
    for f in fields {
        data.extend_from_slice(f.data());
    }
    Tensor::from_f32(vec![fields.len(), h, w, c], data)
}

/// Stacks instance maps into an `N×H×W` i32 tensor.
pub fn instance_stack_to_tensor(maps: &[InstanceMap]) -> Result<Tensor, ArrayIoError> {
    let (h, w) = uniform_dims(maps, |m| m.dims())?.unwrap_or((0, 0));
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        data.extend(m.data().iter().map(|&id| id as i32));
    }
    Tensor::from_i32(vec![maps.len(), h, w], data)
}
