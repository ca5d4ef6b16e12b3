//! Predicted-map post-processing: NP thresholding, small-object removal,
//! HV energy construction, marker extraction and marker-controlled
//! watershed, ending in per-instance type assignment.

use crate::field::{BinaryField, ChannelField, HvMaps, InstanceMap, ScalarField};
use crate::targets::{connected_components, np_target, Connectivity};
use crate::{to_f64, Real};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("field extents differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("type probability field needs a background channel plus at least one class channel")]
    NoTypeChannels,
}

/// Per-tile prediction maps as produced by a segmentation model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle<F> {
    /// Nuclei-pixel probability in [0, 1].
    pub np_prob: ScalarField<F>,
    /// Signed horizontal/vertical distance predictions.
    pub hv: HvMaps<F>,
    /// Per-pixel type probabilities, channel 0 is background.
    pub tp_prob: ChannelField<F>,
}

impl<F: Real> PredictionBundle<F> {
    pub fn validate(&self) -> Result<(), PostprocError> {
        let (h, w) = self.np_prob.dims();
        let (hh, hw) = self.hv.dims();
        if (h, w) != (hh, hw) {
            return Err(PostprocError::ShapeMismatch(h, w, hh, hw));
        }
        if (self.tp_prob.height(), self.tp_prob.width()) != (h, w) {
            return Err(PostprocError::ShapeMismatch(
                h,
                w,
                self.tp_prob.height(),
                self.tp_prob.width(),
            ));
        }
        Ok(())
    }
}

/// Post-processing thresholds; serialized as JSON with exactly these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub np_threshold: f64,
    pub min_size: usize,
    pub marker_threshold: f64,
    pub connectivity: Connectivity,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            np_threshold: 0.5,
            min_size: 10,
            marker_threshold: 0.4,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        if !(self.np_threshold > 0.0 && self.np_threshold < 1.0) {
            return Err(PostprocError::InvalidConfig(format!(
                "np_threshold must lie in (0, 1), got {}",
                self.np_threshold
            )));
        }
        if !(self.marker_threshold > 0.0 && self.marker_threshold < 1.0) {
            return Err(PostprocError::InvalidConfig(format!(
                "marker_threshold must lie in (0, 1), got {}",
                self.marker_threshold
            )));
        }
        Ok(())
    }
}

/// Binary foreground mask: 1 iff probability is strictly above `t`.
pub fn threshold_np<F: Real>(np_prob: &ScalarField<F>, t: F) -> BinaryField {
    let (h, w) = np_prob.dims();
    BinaryField::from_vec(h, w, np_prob.data().iter().map(|&p| p > t).collect())
}

/// Drops instances smaller than `min_size` pixels and relabels the
/// survivors 1..K in row-major order of their first pixel.
pub fn remove_small(inst: &InstanceMap, min_size: usize) -> InstanceMap {
    let mut sizes: HashMap<u32, usize> = HashMap::new();
    for &id in inst.data() {
        if id > 0 {
            *sizes.entry(id).or_insert(0) += 1;
        }
    }
    let (h, w) = inst.dims();
    let mut relabel: HashMap<u32, u32> = HashMap::new();
    let mut next = 0u32;
    let mut out = InstanceMap::filled(h, w, 0);
    for (i, &id) in inst.data().iter().enumerate() {
        if id == 0 || sizes[&id] < min_size {
            continue;
        }
        let new_id = *relabel.entry(id).or_insert_with(|| {
            next += 1;
            next
        });
        out.data_mut()[i] = new_id;
    }
    out
}

/// Elevation field: per-pixel max(|h|, |v|); 0 at nucleus centers, rising
/// toward instance boundaries.
pub fn energy_landscape<F: Real>(hv: &HvMaps<F>) -> ScalarField<F> {
    let (h, w) = hv.dims();
    let data = hv
        .horizontal
        .data()
        .iter()
        .zip(hv.vertical.data())
        .map(|(&x, &y)| x.abs().max(y.abs()))
        .collect();
    ScalarField::from_vec(h, w, data)
}

/// Watershed seeds: connected components of foreground pixels whose energy
/// is strictly below `marker_threshold`.
pub fn extract_markers<F: Real>(
    fg: &BinaryField,
    energy: &ScalarField<F>,
    marker_threshold: F,
    connectivity: Connectivity,
) -> Result<InstanceMap, PostprocError> {
    if !fg.same_dims(energy) {
        return Err(PostprocError::ShapeMismatch(
            fg.height(),
            fg.width(),
            energy.height(),
            energy.width(),
        ));
    }
    let (h, w) = fg.dims();
    let mask = BinaryField::from_vec(
        h,
        w,
        fg.data()
            .iter()
            .zip(energy.data())
            .map(|(&f, &e)| f && e < marker_threshold)
            .collect(),
    );
    Ok(connected_components(&mask, connectivity))
}

#[derive(Debug, Clone, Copy)]
struct FloodEntry {
    elevation: f64,
    seq: u64,
    idx: usize,
    label: u32,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap via Reverse: lowest elevation first, FIFO on ties
        self.elevation
            .total_cmp(&other.elevation)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Marker-controlled priority flood over the elevation field.
///
/// Every foreground pixel connected to a marker takes the label of the
/// marker reached by the minimax-elevation path; ties are broken FIFO by
/// insertion order with seeds enumerated row-major. Foreground components
/// containing no marker each become one fresh instance; background is left
/// untouched.
pub fn watershed<F: Real>(
    energy: &ScalarField<F>,
    markers: &InstanceMap,
    fg: &BinaryField,
    connectivity: Connectivity,
) -> Result<InstanceMap, PostprocError> {
    if !energy.same_dims(markers) {
        return Err(PostprocError::ShapeMismatch(
            energy.height(),
            energy.width(),
            markers.height(),
            markers.width(),
        ));
    }
    if !energy.same_dims(fg) {
        return Err(PostprocError::ShapeMismatch(
            energy.height(),
            energy.width(),
            fg.height(),
            fg.width(),
        ));
    }
    let (h, w) = energy.dims();
    let elev: Vec<f64> = energy.data().iter().map(|&e| to_f64(e)).collect();
    let mut out = InstanceMap::filled(h, w, 0);
    let mut heap: BinaryHeap<std::cmp::Reverse<FloodEntry>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut max_label = 0u32;
    for idx in 0..h * w {
        let label = markers.data()[idx];
        if label > 0 && fg.data()[idx] {
            out.data_mut()[idx] = label;
            max_label = max_label.max(label);
            heap.push(std::cmp::Reverse(FloodEntry {
                elevation: elev[idx],
                seq,
                idx,
                label,
            }));
            seq += 1;
        }
    }
    let offsets = connectivity.offsets();
    while let Some(std::cmp::Reverse(entry)) = heap.pop() {
        let r = (entry.idx / w) as isize;
        let c = (entry.idx % w) as isize;
        for &(dr, dc) in offsets {
            let nr = r + dr;
            let nc = c + dc;
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let nidx = nr as usize * w + nc as usize;
            if !fg.data()[nidx] || out.data()[nidx] != 0 {
                continue;
            }
            out.data_mut()[nidx] = entry.label;
            heap.push(std::cmp::Reverse(FloodEntry {
                elevation: entry.elevation.max(elev[nidx]),
                seq,
                idx: nidx,
                label: entry.label,
            }));
            seq += 1;
        }
    }
    // components the flood never reached contain no marker; keep each as a
    // fresh instance
    let leftover = BinaryField::from_vec(
        h,
        w,
        fg.data()
            .iter()
            .zip(out.data())
            .map(|(&f, &o)| f && o == 0)
            .collect(),
    );
    let extra = connected_components(&leftover, connectivity);
    for (o, &x) in out.data_mut().iter_mut().zip(extra.data()) {
        if x > 0 {
            *o = max_label + x;
        }
    }
    Ok(out)
}

/// Instance segmentation plus per-instance class decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedInstances {
    pub inst: InstanceMap,
    /// instance id → class id in 1..=C
    pub types: BTreeMap<u32, u32>,
    /// instance id → winning class probability mass / instance area
    pub type_scores: BTreeMap<u32, f64>,
}

impl TypedInstances {
    /// Instances relabeled so only those typed `class_id` remain.
    pub fn restrict_to_class(&self, class_id: u32) -> InstanceMap {
        let (h, w) = self.inst.dims();
        let data = self
            .inst
            .data()
            .iter()
            .map(|&id| {
                if id > 0 && self.types.get(&id) == Some(&class_id) {
                    id
                } else {
                    0
                }
            })
            .collect();
        InstanceMap::from_vec(h, w, data)
    }
}

/// Types each instance by the class (channels 1..=C) with the largest
/// summed probability mass over its pixels; ties go to the lowest class id.
pub fn assign_types<F: Real>(
    inst: &InstanceMap,
    tp_prob: &ChannelField<F>,
) -> Result<TypedInstances, PostprocError> {
    if (inst.height(), inst.width()) != (tp_prob.height(), tp_prob.width()) {
        return Err(PostprocError::ShapeMismatch(
            inst.height(),
            inst.width(),
            tp_prob.height(),
            tp_prob.width(),
        ));
    }
    let channels = tp_prob.channels();
    if channels < 2 {
        return Err(PostprocError::NoTypeChannels);
    }
    let (h, w) = inst.dims();
    let mut acc: BTreeMap<u32, (usize, Vec<f64>)> = BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            let id = inst.at(r, c);
            if id == 0 {
                continue;
            }
            let px = tp_prob.pixel(r, c);
            let e = acc
                .entry(id)
                .or_insert_with(|| (0, vec![0.0f64; channels - 1]));
            e.0 += 1;
            for ch in 1..channels {
                e.1[ch - 1] += to_f64(px[ch]);
            }
        }
    }
    let mut types = BTreeMap::new();
    let mut type_scores = BTreeMap::new();
    for (id, (area, sums)) in acc {
        let mut best = 0usize;
        for (i, &s) in sums.iter().enumerate() {
            if s > sums[best] {
                best = i;
            }
        }
        types.insert(id, best as u32 + 1);
        type_scores.insert(id, sums[best] / area as f64);
    }
    Ok(TypedInstances {
        inst: inst.clone(),
        types,
        type_scores,
    })
}

/// The full post-processing chain: threshold, label, drop small objects,
/// build the energy landscape, extract markers, flood, drop slivers the
/// split created, and type the surviving instances.
pub fn postprocess<F: Real>(
    pred: &PredictionBundle<F>,
    cfg: &PostprocConfig,
) -> Result<TypedInstances, PostprocError> {
    cfg.validate()?;
    pred.validate()?;
    let fg0 = threshold_np(&pred.np_prob, crate::from_f64(cfg.np_threshold));
    let comps = connected_components(&fg0, cfg.connectivity);
    let comps = remove_small(&comps, cfg.min_size);
    let fg = np_target(&comps);
    let energy = energy_landscape(&pred.hv);
    let markers = extract_markers(
        &fg,
        &energy,
        crate::from_f64(cfg.marker_threshold),
        cfg.connectivity,
    )?;
    let shed = watershed(&energy, &markers, &fg, cfg.connectivity)?;
    let shed = remove_small(&shed, cfg.min_size);
    assign_types(&shed, &pred.tp_prob)
}
