//! RGB↔HED colour deconvolution and haematoxylin-driven one-hot label
//! smoothing.
//!
//! The deconvolution follows the Ruifrok–Johnston optical-density
//! convention: pixel values are normalized to [0, 1], clamped below at
//! `OD_EPSILON`, log-transformed as `ln(v) / ln(OD_EPSILON)` and multiplied
//! by the inverse of the row-stochastic H&E-DAB stain matrix. Stain values
//! are not clipped at zero, so the transform is exactly invertible for
//! non-negative stain triples.

use crate::field::{ClassMap, ImageTile, RgbField, ScalarField, SmoothedOneHot, StainMap};
use crate::{from_f64, Real};
use std::sync::LazyLock;
use thiserror::Error;

/// Lower clamp applied to normalized RGB before the logarithm.
pub const OD_EPSILON: f64 = 1e-6;

/// Row-stochastic stain matrix; rows are the RGB absorption signatures of
/// haematoxylin, eosin and DAB.
pub const RGB_FROM_HED: [[f64; 3]; 3] = [
    [0.65, 0.70, 0.29],
    [0.07, 0.99, 0.11],
    [0.27, 0.57, 0.78],
];

/// Inverse stain matrix, computed once by closed-form 3×3 inversion.
pub static HED_FROM_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_FROM_HED));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    let det = m[0][0] * cof(1, 1, 2, 2) - m[0][1] * cof(1, 0, 2, 2) + m[0][2] * cof(1, 0, 2, 1);
    assert!(det.abs() > 1e-12, "stain matrix is singular");
    let adj = [
        [cof(1, 1, 2, 2), -cof(0, 1, 2, 2), cof(0, 1, 1, 2)],
        [-cof(1, 0, 2, 2), cof(0, 0, 2, 2), -cof(0, 0, 1, 2)],
        [cof(1, 0, 2, 1), -cof(0, 0, 2, 1), cof(0, 0, 1, 1)],
    ];
    let mut out = [[0.0; 3]; 3];
    for (r, row) in adj.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            out[r][c] = v / det;
        }
    }
    out
}

fn cast_matrix<F: Real>(m: &[[f64; 3]; 3]) -> [[F; 3]; 3] {
    let mut out = [[F::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = from_f64(m[r][c]);
        }
    }
    out
}

#[inline]
fn row_times_matrix<F: Real>(v: [F; 3], m: &[[F; 3]; 3]) -> [F; 3] {
    let mut out = [F::zero(); 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = v[0] * m[0][c] + v[1] * m[1][c] + v[2] * m[2][c];
    }
    out
}

/// Converts one linear RGB pixel (components in [0, 1]) to stain
/// concentrations; `floor` guards the logarithm.
#[inline]
pub fn hed_pixel<F: Real>(rgb: [F; 3], inverse: &[[F; 3]; 3], ln_eps: F, floor: F) -> [F; 3] {
    let mut od = [F::zero(); 3];
    for c in 0..3 {
        od[c] = rgb[c].max(floor).ln() / ln_eps;
    }
    row_times_matrix(od, inverse)
}

/// Deconvolves a u8 RGB tile into haematoxylin/eosin/DAB concentrations.
pub fn rgb_to_hed<F: Real>(img: &ImageTile) -> StainMap<F> {
    let inverse = cast_matrix::<F>(&HED_FROM_RGB);
    let ln_eps = from_f64::<F>(OD_EPSILON).ln();
    let floor = from_f64::<F>(OD_EPSILON);
    let scale = from_f64::<F>(1.0 / 255.0);
    let (h, w) = img.dims();
    let mut out = StainMap::filled(h, w, [F::zero(); 3]);
    for r in 0..h {
        for c in 0..w {
            let px = img.pixel(r, c);
            let rgb = [
                from_f64::<F>(px[0] as f64) * scale,
                from_f64::<F>(px[1] as f64) * scale,
                from_f64::<F>(px[2] as f64) * scale,
            ];
            out.set(r, c, hed_pixel(rgb, &inverse, ln_eps, floor));
        }
    }
    out
}

/// Deconvolves a linear RGB field (components in [0, 1]) into stain
/// concentrations.
///
/// Unlike the u8 entry point this clamps only at the smallest positive
/// value: quantized pixels can never fall below 1/255, but recomposed
/// high-density stains legitimately do, and flooring them at `OD_EPSILON`
/// would destroy the inverse.
pub fn rgb_field_to_hed<F: Real>(rgb: &RgbField<F>) -> StainMap<F> {
    let inverse = cast_matrix::<F>(&HED_FROM_RGB);
    let ln_eps = from_f64::<F>(OD_EPSILON).ln();
    let floor = F::min_positive_value();
    let (h, w) = rgb.dims();
    let mut out = StainMap::filled(h, w, [F::zero(); 3]);
    for r in 0..h {
        for c in 0..w {
            out.set(r, c, hed_pixel(rgb.at(r, c), &inverse, ln_eps, floor));
        }
    }
    out
}

/// Recomposes stain concentrations into linear RGB in [0, 1]; exact inverse
/// of the deconvolution up to the epsilon clamp.
pub fn hed_to_rgb<F: Real>(stains: &StainMap<F>) -> RgbField<F> {
    let forward = cast_matrix::<F>(&RGB_FROM_HED);
    let ln_eps = from_f64::<F>(OD_EPSILON).ln();
    let (h, w) = stains.dims();
    let mut out = RgbField::filled(h, w, [F::zero(); 3]);
    for r in 0..h {
        for c in 0..w {
            let od = row_times_matrix(stains.at(r, c), &forward);
            let mut rgb = [F::zero(); 3];
            for (ch, o) in rgb.iter_mut().enumerate() {
                *o = (od[ch] * ln_eps).exp().min(F::one()).max(F::zero());
            }
            out.set(r, c, rgb);
        }
    }
    out
}

/// Min-max normalizes the haematoxylin channel over the whole tile into
/// [0, 1]; a constant channel maps to all zeros.
pub fn haematoxylin_norm<F: Real>(stains: &StainMap<F>) -> ScalarField<F> {
    let (h, w) = stains.dims();
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for px in stains.data() {
        lo = lo.min(px[0]);
        hi = hi.max(px[0]);
    }
    let mut out = ScalarField::filled(h, w, F::zero());
    if stains.data().is_empty() || hi <= lo {
        return out;
    }
    let range = hi - lo;
    for (o, px) in out.data_mut().iter_mut().zip(stains.data()) {
        *o = (px[0] - lo) / range;
    }
    out
}

/// Which one-hot channels receive the haematoxylin modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingMode {
    /// Every channel, background included (literal product of the one-hot
    /// with the smoothing field).
    #[default]
    AllChannels,
    /// Nucleus channels only; the background channel keeps hard ones.
    ForegroundOnly,
}

#[derive(Debug, Error)]
pub enum StainError {
    #[error("field extents differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassOutOfRange { id: u32, num_classes: u32 },
}

/// Expands a class map into a (C+1)-channel one-hot field whose ones are
/// replaced by `0.5 + 0.5 * hn`.
pub fn smooth_onehot<F: Real>(
    cls: &ClassMap,
    hn: &ScalarField<F>,
    num_classes: u32,
    mode: SmoothingMode,
) -> Result<SmoothedOneHot<F>, StainError> {
    if !cls.same_dims(hn) {
        return Err(StainError::ShapeMismatch(
            cls.height(),
            cls.width(),
            hn.height(),
            hn.width(),
        ));
    }
    let (h, w) = cls.dims();
    let channels = num_classes as usize + 1;
    let half = from_f64::<F>(0.5);
    let mut out = SmoothedOneHot::filled(h, w, channels, F::zero());
    for r in 0..h {
        for c in 0..w {
            let id = cls.at(r, c);
            if id > num_classes {
                return Err(StainError::ClassOutOfRange {
                    id,
                    num_classes,
                });
            }
            let smoothed = half + half * hn.at(r, c);
            let value = match mode {
                SmoothingMode::AllChannels => smoothed,
                SmoothingMode::ForegroundOnly if id == 0 => F::one(),
                SmoothingMode::ForegroundOnly => smoothed,
            };
            out.set(r, c, id as usize, value);
        }
    }
    Ok(out)
}
