//! Training-target generation from instance/class label maps: nuclei pixel
//! masks, signed horizontal/vertical distance maps and smoothed type
//! targets, plus deterministic synthetic fixtures.

use crate::field::{BinaryField, ClassMap, HvMaps, ImageTile, InstanceMap, ScalarField};
use crate::stain::{self, SmoothingMode, StainError};
use crate::{from_f64, Real, SmoothedOneHot};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::collections::VecDeque;
use thiserror::Error;

/// Pixel neighborhood used for component labeling and flooding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::Eight
    }
}

impl Connectivity {
    /// Neighbor offsets as (row, col) deltas.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum TargetsError {
    #[error("instance id {id} not present in map")]
    MissingInstance { id: u32 },
    #[error("field extents differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("placed only {placed} of {requested} blobs before running out of room")]
    PackingCapacity { placed: usize, requested: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Stain(#[from] StainError),
}

/// Labels maximal connected foreground regions 1..K in row-major order of
/// their first pixel.
pub fn connected_components(mask: &BinaryField, connectivity: Connectivity) -> InstanceMap {
    let (h, w) = mask.dims();
    let mut out = InstanceMap::filled(h, w, 0);
    let offsets = connectivity.offsets();
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.at(r, c) || out.at(r, c) != 0 {
                continue;
            }
            next += 1;
            out.set(r, c, next);
            queue.push_back((r, c));
            while let Some((qr, qc)) = queue.pop_front() {
                for &(dr, dc) in offsets {
                    let nr = qr as isize + dr;
                    let nc = qc as isize + dc;
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask.at(nr, nc) && out.at(nr, nc) == 0 {
                        out.set(nr, nc, next);
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
    }
    out
}

/// Real-valued center of mass of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub row: f64,
    pub col: f64,
}

/// Unweighted mean of member pixel coordinates.
pub fn center_of_mass(inst: &InstanceMap, id: u32) -> Result<Centroid, TargetsError> {
    let (h, w) = inst.dims();
    let mut sum_r = 0.0f64;
    let mut sum_c = 0.0f64;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            if inst.at(r, c) == id && id != 0 {
                sum_r += r as f64;
                sum_c += c as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(TargetsError::MissingInstance { id });
    }
    Ok(Centroid {
        row: sum_r / count as f64,
        col: sum_c / count as f64,
    })
}

#[derive(Debug, Clone, Copy)]
struct InstanceStats {
    sum_r: f64,
    sum_c: f64,
    count: usize,
    min_r: usize,
    max_r: usize,
    min_c: usize,
    max_c: usize,
}

fn instance_stats(inst: &InstanceMap) -> HashMap<u32, InstanceStats> {
    let (h, w) = inst.dims();
    let mut stats: HashMap<u32, InstanceStats> = HashMap::new();
    for r in 0..h {
        for c in 0..w {
            let id = inst.at(r, c);
            if id == 0 {
                continue;
            }
            let e = stats.entry(id).or_insert(InstanceStats {
                sum_r: 0.0,
                sum_c: 0.0,
                count: 0,
                min_r: r,
                max_r: r,
                min_c: c,
                max_c: c,
            });
            e.sum_r += r as f64;
            e.sum_c += c as f64;
            e.count += 1;
            e.min_r = e.min_r.min(r);
            e.max_r = e.max_r.max(r);
            e.min_c = e.min_c.min(c);
            e.max_c = e.max_c.max(c);
        }
    }
    stats
}

/// Signed distance maps to each instance's center of mass, normalized per
/// side into [-1, 0] and [0, 1] by the distance to the instance's own
/// extremes. Background pixels are (0, 0); a zero-width side stays 0.
pub fn hv_targets<F: Real>(inst: &InstanceMap) -> HvMaps<F> {
    let (h, w) = inst.dims();
    let stats = instance_stats(inst);
    let mut hmap = ScalarField::filled(h, w, F::zero());
    let mut vmap = ScalarField::filled(h, w, F::zero());
    for r in 0..h {
        for c in 0..w {
            let id = inst.at(r, c);
            if id == 0 {
                continue;
            }
            let s = &stats[&id];
            let cen_r = s.sum_r / s.count as f64;
            let cen_c = s.sum_c / s.count as f64;
            let norm = |d: f64, lo: f64, hi: f64| -> f64 {
                if d < 0.0 && lo > 0.0 {
                    d / lo
                } else if d > 0.0 && hi > 0.0 {
                    d / hi
                } else {
                    0.0
                }
            };
            let dc = c as f64 - cen_c;
            let dr = r as f64 - cen_r;
            let hval = norm(dc, cen_c - s.min_c as f64, s.max_c as f64 - cen_c);
            let vval = norm(dr, cen_r - s.min_r as f64, s.max_r as f64 - cen_r);
            hmap.set(r, c, from_f64(hval));
            vmap.set(r, c, from_f64(vval));
        }
    }
    HvMaps::new(hmap, vmap)
}

/// Binary nuclei-pixel mask: 1 wherever the instance id is positive.
pub fn np_target(inst: &InstanceMap) -> BinaryField {
    let (h, w) = inst.dims();
    BinaryField::from_vec(h, w, inst.data().iter().map(|&id| id > 0).collect())
}

/// The full per-tile training target bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets<F> {
    pub np: BinaryField,
    pub hv: HvMaps<F>,
    pub tp: SmoothedOneHot<F>,
}

/// Builds NP/HV targets from the instance map and the smoothed type target
/// from the class map and the image's haematoxylin channel.
pub fn make_training_targets<F: Real>(
    inst: &InstanceMap,
    cls: &ClassMap,
    img: &ImageTile,
    num_classes: u32,
    mode: SmoothingMode,
) -> Result<TrainingTargets<F>, TargetsError> {
    if !inst.same_dims(cls) {
        return Err(TargetsError::ShapeMismatch(
            inst.height(),
            inst.width(),
            cls.height(),
            cls.width(),
        ));
    }
    if img.dims() != inst.dims() {
        let (ih, iw) = img.dims();
        return Err(TargetsError::ShapeMismatch(
            inst.height(),
            inst.width(),
            ih,
            iw,
        ));
    }
    let hn = stain::haematoxylin_norm(&stain::rgb_to_hed::<F>(img));
    let tp = stain::smooth_onehot(cls, &hn, num_classes, mode)?;
    Ok(TrainingTargets {
        np: np_target(inst),
        hv: hv_targets(inst),
        tp,
    })
}

fn rasterize_ellipse(
    height: usize,
    width: usize,
    center: (f64, f64),
    semi_axes: (f64, f64),
) -> Vec<(usize, usize)> {
    let (cy, cx) = center;
    let (ay, ax) = semi_axes;
    let mut px = Vec::new();
    let r0 = (cy - ay).floor().max(0.0) as usize;
    let r1 = (cy + ay).ceil().min(height as f64 - 1.0) as usize;
    let c0 = (cx - ax).floor().max(0.0) as usize;
    let c1 = (cx + ax).ceil().min(width as f64 - 1.0) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dy = (r as f64 - cy) / ay;
            let dx = (c as f64 - cx) / ax;
            if dy * dy + dx * dx <= 1.0 {
                px.push((r, c));
            }
        }
    }
    px
}

fn has_clearance(occupied: &InstanceMap, pixels: &[(usize, usize)]) -> bool {
    let (h, w) = occupied.dims();
    for &(r, c) in pixels {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                if occupied.at(nr as usize, nc as usize) != 0 {
                    return false;
                }
            }
        }
    }
    true
}

/// Deterministic non-overlapping elliptical blobs with random classes.
/// Blobs keep at least one pixel of clearance, so every blob is its own
/// 8-connected component. Same seed, same output, on every platform.
pub fn synth_instances(
    seed: u64,
    height: usize,
    width: usize,
    count: usize,
    num_classes: u32,
) -> Result<(InstanceMap, ClassMap), TargetsError> {
    if num_classes == 0 {
        return Err(TargetsError::InvalidParameter(
            "num_classes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inst = InstanceMap::filled(height, width, 0);
    let mut cls = ClassMap::filled(height, width, 0);
    let max_axis = ((height.min(width) as f64) / 10.0).clamp(2.0, 9.0);
    const ATTEMPTS_PER_BLOB: usize = 400;
    for id in 1..=count {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_BLOB {
            let ay = rng.gen_range(2.0..=max_axis);
            let ax = rng.gen_range(2.0..=max_axis);
            if height as f64 <= 2.0 * (ay + 2.0) || width as f64 <= 2.0 * (ax + 2.0) {
                continue;
            }
            let cy = rng.gen_range(ay + 1.0..height as f64 - ay - 1.0);
            let cx = rng.gen_range(ax + 1.0..width as f64 - ax - 1.0);
            let pixels = rasterize_ellipse(height, width, (cy, cx), (ay, ax));
            if pixels.is_empty() || !has_clearance(&inst, &pixels) {
                continue;
            }
            let class = rng.gen_range(1..=num_classes);
            for &(r, c) in &pixels {
                inst.set(r, c, id as u32);
                cls.set(r, c, class);
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(TargetsError::PackingCapacity {
                placed: id - 1,
                requested: count,
            });
        }
    }
    Ok((inst, cls))
}

/// Two tangent discs (horizontally adjacent, single connected foreground
/// region) for split-recovery fixtures.
pub fn synth_touching_pair(
    seed: u64,
    height: usize,
    width: usize,
    num_classes: u32,
) -> Result<(InstanceMap, ClassMap), TargetsError> {
    if num_classes == 0 {
        return Err(TargetsError::InvalidParameter(
            "num_classes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius: usize = rng.gen_range(9..=12);
    let need_w = 4 * radius + 6;
    let need_h = 2 * radius + 4;
    if width < need_w || height < need_h {
        return Err(TargetsError::InvalidParameter(format!(
            "tile {height}×{width} too small for touching pair (needs {need_h}×{need_w})"
        )));
    }
    // integer centers keep the tangency exact: the rightmost pixel of disc 1
    // and the leftmost pixel of disc 2 are horizontal neighbors
    let cy = rng.gen_range(radius + 1..height - radius - 1);
    let cx1 = rng.gen_range(radius + 1..width - 3 * radius - 3);
    let cx2 = cx1 + 2 * radius + 1;
    let mut inst = InstanceMap::filled(height, width, 0);
    let mut cls = ClassMap::filled(height, width, 0);
    for (id, cx) in [(1u32, cx1), (2u32, cx2)] {
        let class = rng.gen_range(1..=num_classes);
        let center = (cy as f64, cx as f64);
        let axes = (radius as f64, radius as f64);
        for (r, c) in rasterize_ellipse(height, width, center, axes) {
            inst.set(r, c, id);
            cls.set(r, c, class);
        }
    }
    Ok((inst, cls))
}
