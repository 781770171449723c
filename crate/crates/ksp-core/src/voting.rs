//! Single-ROI regression per slice by pixel-confidence voting.
//!
//! Every detection casts its confidence onto all pixels it covers. The
//! pixel with the highest vote sum wins (ties broken toward smaller y,
//! then smaller x), the detections containing that pixel become the
//! supporters, and the ROI is the box with the supporters' mean center
//! and mean size. An ROI whose best supporter is not above the threshold
//! `t` is discarded.
//!
//! `vote_roi` never materializes the vote grid: the lexicographically
//! smallest maximizing pixel always sits on the lattice spanned by box
//! left/top edges (plus the origin), because the vote sum can only
//! increase at a left or top edge when moving right or down. Candidate
//! sums are accumulated in detection order, which keeps them bit-equal to
//! the full-grid accumulation.

use crate::data_model::{BoundingBox, DetectionBox};

/// One regressed ROI on a selected key slice. `slice_confidence` and
/// `class_probs` are attached after voting, by the pipeline stage that
/// knows the slice's fused scores and the manifest's classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRoi {
    pub slice_index: u32,
    pub bbox: BoundingBox,
    /// Winning pixel's summed detection confidence.
    pub vote_mass: f64,
    /// Indices into the slice's detection list of boxes containing the
    /// winning pixel.
    pub support: Vec<usize>,
    /// Combined slice confidence, attached downstream.
    pub slice_confidence: f64,
    /// Classifier probabilities (HCC, ICC, Metastasis), attached downstream.
    pub class_probs: Option<[f64; 3]>,
}

/// Dense vote grid, row-major, `grid[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGrid {
    pub width: u32,
    pub height: u32,
    pub votes: Vec<f64>,
}

impl VoteGrid {
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.votes[(y * self.width + x) as usize]
    }
}

/// Sum detection confidences onto every covered pixel.
pub fn accumulate_votes(detections: &[DetectionBox], width: u32, height: u32) -> VoteGrid {
    let mut votes = vec![0.0; (width as usize) * (height as usize)];
    for det in detections {
        debug_assert!(det.bbox.x1 < width && det.bbox.y1 < height);
        for y in det.bbox.y0..=det.bbox.y1 {
            let row = (y * width) as usize;
            for x in det.bbox.x0..=det.bbox.x1 {
                votes[row + x as usize] += det.confidence;
            }
        }
    }
    VoteGrid {
        width,
        height,
        votes,
    }
}

fn round_half_away(value: f64) -> i64 {
    value.round() as i64
}

/// Box from an integer anchor (rounded mean center) and extent (rounded
/// mean size), clamped to the slice.
fn box_from_center_extent(
    center: (f64, f64),
    extent: (f64, f64),
    width: u32,
    height: u32,
) -> BoundingBox {
    let anchor_x = round_half_away(center.0);
    let anchor_y = round_half_away(center.1);
    let extent_w = round_half_away(extent.0).max(1);
    let extent_h = round_half_away(extent.1).max(1);

    let x0 = anchor_x - extent_w / 2;
    let y0 = anchor_y - extent_h / 2;
    let x1 = x0 + extent_w - 1;
    let y1 = y0 + extent_h - 1;

    let x0 = x0.clamp(0, i64::from(width) - 1);
    let y0 = y0.clamp(0, i64::from(height) - 1);
    let x1 = x1.clamp(x0, i64::from(width) - 1);
    let y1 = y1.clamp(y0, i64::from(height) - 1);
    BoundingBox {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    }
}

fn winning_pixel(detections: &[DetectionBox]) -> (u32, u32, f64) {
    let mut xs: Vec<u32> = std::iter::once(0)
        .chain(detections.iter().map(|d| d.bbox.x0))
        .collect();
    let mut ys: Vec<u32> = std::iter::once(0)
        .chain(detections.iter().map(|d| d.bbox.y0))
        .collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();

    let mut best = (0u32, 0u32, f64::NEG_INFINITY);
    for &y in &ys {
        for &x in &xs {
            let mut sum = 0.0;
            for det in detections {
                if det.bbox.contains(x, y) {
                    sum += det.confidence;
                }
            }
            if sum > best.2 {
                best = (x, y, sum);
            }
        }
    }
    best
}

/// Regress a single ROI for a slice, or nothing when there are no
/// detections or the best supporter's confidence is not above `t`.
pub fn vote_roi(
    slice_index: u32,
    detections: &[DetectionBox],
    width: u32,
    height: u32,
    t: f64,
) -> Option<KeyRoi> {
    if detections.is_empty() {
        return None;
    }
    let (x, y, vote_mass) = winning_pixel(detections);

    let support: Vec<usize> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.bbox.contains(x, y))
        .map(|(k, _)| k)
        .collect();
    let max_conf = support
        .iter()
        .map(|&k| detections[k].confidence)
        .fold(f64::NEG_INFINITY, f64::max);
    if support.is_empty() || max_conf <= t {
        return None;
    }

    let n = support.len() as f64;
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut w = 0.0;
    let mut h = 0.0;
    for &k in &support {
        let b = &detections[k].bbox;
        let (bx, by) = b.center();
        cx += bx;
        cy += by;
        w += f64::from(b.width());
        h += f64::from(b.height());
    }
    let bbox = box_from_center_extent((cx / n, cy / n), (w / n, h / n), width, height);

    Some(KeyRoi {
        slice_index,
        bbox,
        vote_mass,
        support,
        slice_confidence: 0.0,
        class_probs: None,
    })
}
