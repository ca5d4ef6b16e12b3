//! Non-neural core of a nuclei segmentation and classification pipeline:
//! H&E stain deconvolution with haematoxylin-driven label smoothing,
//! HoVerNet-style training-target generation, marker-controlled watershed
//! instance recovery, panoptic-quality metrics and fold-selection statistics.
//!
//! All field math is generic over the scalar type via [`Real`] (`f32` or
//! `f64`); concrete aliases for the common instantiations live at the crate
//! root. Label rasters ([`InstanceMap`], [`ClassMap`]) are integer fields.

pub mod array_io;
pub mod field;
pub mod foldstats;
pub mod losses;
pub mod metrics;
pub mod postproc;
pub mod stain;
pub mod targets;

pub(crate) mod util;

pub use field::{
    BinaryField, ChannelField, ClassMap, Field2, Field3, HvMaps, ImageTile, InstanceMap,
    RgbField, ScalarField, SmoothedOneHot, StainMap,
};
pub use targets::Connectivity;

use std::fmt;

/// Scalar type for field math: `f32` or `f64`.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + fmt::Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Casts a [`Real`] into `f64` (lossless for `f32`/`f64`).
#[inline]
pub fn to_f64<F: Real>(x: F) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).expect("Real converts to f64")
}

/// Casts an `f64` into a [`Real`] (may round for `f32`).
#[inline]
pub fn from_f64<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("f64 converts to Real")
}

pub type ScalarField32 = ScalarField<f32>;
pub type ScalarField64 = ScalarField<f64>;
pub type StainMap32 = StainMap<f32>;
pub type StainMap64 = StainMap<f64>;
pub type RgbField32 = RgbField<f32>;
pub type RgbField64 = RgbField<f64>;
pub type HvMaps32 = HvMaps<f32>;
pub type HvMaps64 = HvMaps<f64>;
pub type ChannelField32 = ChannelField<f32>;
pub type ChannelField64 = ChannelField<f64>;
