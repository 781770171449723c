//! Confidence-curve parsing and slice selection.
//!
//! The per-study classification-confidence curve is segmented into
//! key-slice zones: each peak (strict local maximum, plateaus anchored at
//! their leftmost index) expands in both directions while the curve stays
//! at or above half the peak value, and overlapping or adjacent zones
//! merge. Slices inside zones that carry at least one detection above the
//! threshold are admissible; admissible slices are ranked by combined
//! confidence and the top share is kept, each voted into a single ROI.
//!
//! Zone ranges index into the study's slice list (equal to the slice
//! index `m` when numbering starts at zero); conversion to `m` happens at
//! the pipeline boundary.

use std::collections::BTreeSet;

use crate::data_model::{SliceRecord, Study};
use crate::fusion::{self, FusionError};
use crate::voting::{vote_roi, KeyRoi};

/// Contiguous curve interval around one peak.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySliceZone {
    pub peak_index: usize,
    pub peak_value: f64,
    pub lo: usize,
    pub hi: usize,
}

impl KeySliceZone {
    pub fn contains(&self, position: usize) -> bool {
        self.lo <= position && position <= self.hi
    }
}

/// Peaks of the curve as (anchor index, value). A plateau counts once,
/// anchored at its leftmost index, and qualifies when it is strictly
/// above both neighbors or touches the curve boundary.
fn find_peaks(curve: &[f64]) -> Vec<(usize, f64)> {
    let n = curve.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let value = curve[i];
        let mut j = i;
        while j + 1 < n && curve[j + 1] == value {
            j += 1;
        }
        let left_ok = i == 0 || curve[i - 1] < value;
        let right_ok = j == n - 1 || curve[j + 1] < value;
        if left_ok && right_ok {
            peaks.push((i, value));
        }
        i = j + 1;
    }
    peaks
}

fn expand_zone(curve: &[f64], peak: usize, value: f64) -> (usize, usize) {
    let bound = value / 2.0;
    let mut lo = peak;
    while lo > 0 && curve[lo - 1] >= bound {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < curve.len() && curve[hi + 1] >= bound {
        hi += 1;
    }
    (lo, hi)
}

/// Segment a confidence curve (values in [0, 1]) into merged key-slice
/// zones, sorted by their lower bound.
pub fn extract_zones(curve: &[f64]) -> Vec<KeySliceZone> {
    debug_assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
    let mut zones: Vec<KeySliceZone> = find_peaks(curve)
        .into_iter()
        .map(|(peak_index, peak_value)| {
            let (lo, hi) = expand_zone(curve, peak_index, peak_value);
            KeySliceZone {
                peak_index,
                peak_value,
                lo,
                hi,
            }
        })
        .collect();
    zones.sort_by_key(|z| (z.lo, z.peak_index));

    let mut merged: Vec<KeySliceZone> = Vec::with_capacity(zones.len());
    for zone in zones {
        match merged.last_mut() {
            Some(last) if zone.lo <= last.hi + 1 => {
                last.hi = last.hi.max(zone.hi);
                // merged zone is keyed by the higher peak
                if zone.peak_value > last.peak_value {
                    last.peak_index = zone.peak_index;
                    last.peak_value = zone.peak_value;
                }
            }
            _ => merged.push(zone),
        }
    }
    merged
}

/// Positions of slices that lie in a zone and carry at least one
/// detection with confidence strictly above `t`.
pub fn admissible_slices(
    zones: &[KeySliceZone],
    slices: &[SliceRecord],
    t: f64,
) -> BTreeSet<usize> {
    let mut admissible = BTreeSet::new();
    for zone in zones {
        for pos in zone.lo..=zone.hi.min(slices.len().saturating_sub(1)) {
            if slices[pos].detections.iter().any(|d| d.confidence > t) {
                admissible.insert(pos);
            }
        }
    }
    admissible
}

/// Order admissible positions by combined confidence (descending, ties
/// toward the smaller position) and keep the top `top_percent` share,
/// rounded up.
pub fn rank_and_select(
    admissible: &BTreeSet<usize>,
    combined: &[f64],
    top_percent: f64,
) -> Vec<usize> {
    debug_assert!(top_percent > 0.0 && top_percent <= 100.0);
    if admissible.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = admissible.iter().copied().collect();
    order.sort_by(|&a, &b| {
        combined[b]
            .partial_cmp(&combined[a])
            .expect("combined scores are finite")
            .then(a.cmp(&b))
    });
    let keep = ((order.len() as f64) * top_percent / 100.0).ceil() as usize;
    order.truncate(keep.max(1));
    order
}

/// Run the full per-study key-slice parse: fuse scores, extract zones,
/// admit and rank slices, and vote one ROI per selected slice. Slices
/// whose vote is filtered out are dropped. Returned ROIs are in rank
/// order and carry the slice's combined confidence and classifier
/// probabilities.
pub fn parse_study(study: &Study, t: f64, top_percent: f64) -> Result<Vec<KeyRoi>, FusionError> {
    let fused = fusion::fuse_study(study)?;
    let curve: Vec<f64> = fused.iter().map(|f| f.class_confidence).collect();
    let combined: Vec<f64> = fused.iter().map(|f| f.combined).collect();

    let zones = extract_zones(&curve);
    let admissible = admissible_slices(&zones, &study.slices, t);
    let selected = rank_and_select(&admissible, &combined, top_percent);

    let mut rois = Vec::with_capacity(selected.len());
    for pos in selected {
        let slice = &study.slices[pos];
        if let Some(mut roi) = vote_roi(slice.index, &slice.detections, slice.width, slice.height, t)
        {
            roi.slice_confidence = combined[pos];
            roi.class_probs = slice.roi_class_probs;
            rois.push(roi);
        }
    }
    Ok(rois)
}
