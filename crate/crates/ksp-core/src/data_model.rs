//! Domain types for studies, slices and boxes, plus manifest I/O.
//!
//! A manifest is a single JSON document holding every study of a dataset:
//! per-slice classifier confidences for the five sequences, pooled
//! detections with their source sequence, ground-truth boxes and an
//! optional per-slice class-probability vector for the downstream
//! diagnosis path. Loading is strict per study: a study that violates any
//! structural invariant is rejected and reported, the rest of the dataset
//! survives.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Number of MR sequences per study (T2-anchored pairs, ids 1..=5).
pub const SEQUENCE_COUNT: usize = 5;

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in integer pixel coordinates with inclusive corners:
/// the box covers pixels x in [x0, x1] and y in [y0, y1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, ManifestError> {
        if x1 < x0 || y1 < y0 {
            return Err(ManifestError::MalformedBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Pixel width under the inclusive-corner convention.
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    /// Pixel count; at least 1 for any valid box.
    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    /// Intersection pixel count with another box.
    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let ix = (self.x1.min(other.x1) as i64) - (self.x0.max(other.x0) as i64) + 1;
        let iy = (self.y1.min(other.y1) as i64) - (self.y0.max(other.y0) as i64) + 1;
        if ix <= 0 || iy <= 0 {
            0
        } else {
            ix as u64 * iy as u64
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64) / 2.0,
            (self.y0 as f64 + self.y1 as f64) / 2.0,
        )
    }

    fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x1 < width && self.y1 < height
    }
}

/// Ground-truth annotation style: a single lesion gets its own box, a
/// cluster too numerous to mark individually gets one covering box. The
/// kind selects the overlap metric used in evaluation (IoU vs IoBB).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtKind {
    Lesion,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub kind: GtKind,
    /// Optional lesion identity; when tagged, slice labels derive spans per id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lesion_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Detector confidence in [0, 1].
    pub confidence: f64,
    /// Source sequence, 1..=5.
    pub sequence_id: u8,
}

/// The three diagnosis classes, in the fixed order used for probability
/// vectors and confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionType {
    #[serde(rename = "HCC")]
    Hcc,
    #[serde(rename = "ICC")]
    Icc,
    #[serde(rename = "Metastasis")]
    Metastasis,
}

impl LesionType {
    pub const ALL: [LesionType; 3] = [LesionType::Hcc, LesionType::Icc, LesionType::Metastasis];

    pub fn class_index(self) -> usize {
        match self {
            LesionType::Hcc => 0,
            LesionType::Icc => 1,
            LesionType::Metastasis => 2,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<LesionType> {
        Self::ALL.get(idx).copied()
    }
}

impl fmt::Display for LesionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LesionType::Hcc => "HCC",
            LesionType::Icc => "ICC",
            LesionType::Metastasis => "Metastasis",
        };
        f.write_str(name)
    }
}

/// Slice label derived from ground truth. `Key` slices are interior to a
/// lesion's slice span, `Marginal` ones sit within a one-slice buffer of
/// its ends, everything else is `NonKey`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceLabel {
    NonKey,
    Marginal,
    Key,
}

impl SliceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SliceLabel::Key => "key",
            SliceLabel::Marginal => "marginal",
            SliceLabel::NonKey => "nonkey",
        }
    }
}

/// First and last slice index carrying a given lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionSpan {
    pub first: u32,
    pub last: u32,
}

impl LesionSpan {
    pub fn new(first: u32, last: u32) -> Self {
        assert!(first <= last, "span first must not exceed last");
        Self { first, last }
    }
}

/// One slice of a study: its classifier confidences (one per sequence),
/// pooled detections from all sequences, ground truth, and the optional
/// class-probability vector the upstream ROI classifier assigned to this
/// slice's regressed ROI (order: HCC, ICC, Metastasis).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub index: u32,
    pub width: u32,
    pub height: u32,
    pub class_scores: [f64; SEQUENCE_COUNT],
    pub detections: Vec<DetectionBox>,
    pub gt_boxes: Vec<GroundTruthBox>,
    pub roi_class_probs: Option<[f64; 3]>,
}

/// One patient study: ordered contiguous slices plus the study-level
/// lesion-type label. `lesion_spans` may be supplied by the manifest when
/// lesion identity is known; otherwise spans are derived from ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub study_id: String,
    pub label: LesionType,
    pub slices: Vec<SliceRecord>,
    pub lesion_spans: Option<Vec<LesionSpan>>,
}

impl Study {
    pub fn first_index(&self) -> u32 {
        self.slices.first().map(|s| s.index).unwrap_or(0)
    }

    pub fn last_index(&self) -> u32 {
        self.slices.last().map(|s| s.index).unwrap_or(0)
    }

    /// Position of slice `m` in the slice list, if within range.
    pub fn position_of(&self, m: u32) -> Option<usize> {
        if self.slices.is_empty() || m < self.first_index() || m > self.last_index() {
            None
        } else {
            Some((m - self.first_index()) as usize)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub studies: Vec<Study>,
}

/// Reason a study (or the whole manifest) is structurally unusable.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ManifestError {
    #[error("missing or malformed field: {0}")]
    MissingField(String),
    #[error("malformed box ({x0},{y0},{x1},{y1}): corners must satisfy x0<=x1, y0<=y1")]
    MalformedBox { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("slice {slice}: expected {expected} class scores for sequences 1..={expected}, got {got}")]
    BadSequenceCount { slice: u32, expected: usize, got: usize },
    #[error("slice {slice}: box ({x0},{y0},{x1},{y1}) out of bounds for {width}x{height}")]
    OutOfBounds { slice: u32, x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32 },
    #[error("slice {slice}: {what} {value} outside [0,1]")]
    ValueOutOfRange { slice: u32, what: String, value: f64 },
    #[error("slice {slice}: detection sequence_id {got} outside 1..=5")]
    BadSequenceId { slice: u32, got: u8 },
    #[error("slice {slice}: roi_class_probs sums to {sum}, expected 1 within {PROB_SUM_TOLERANCE}")]
    BadProbSum { slice: u32, sum: f64 },
    #[error("slice indices not contiguous and strictly increasing at slice {slice}")]
    NonContiguousSlices { slice: u32 },
    #[error("study has no slices")]
    NoSlices,
    #[error("lesion span [{first},{last}] invalid or outside study range [{lo},{hi}]")]
    SpanOutOfRange { first: u32, last: u32, lo: u32, hi: u32 },
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} is not valid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest {path} has no 'studies' array")]
    NoStudies { path: String },
    #[error("manifest {path} contains no usable study ({rejected} rejected)")]
    EmptyDataset { path: String, rejected: usize },
}

/// A study dropped during loading, with the first violation found.
#[derive(Debug, Clone)]
pub struct StudyRejection {
    pub study_id: String,
    pub reason: ManifestError,
}

impl fmt::Display for StudyRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "study {}: {}", self.study_id, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub rejected: Vec<StudyRejection>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub report: LoadReport,
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Debug, Serialize, Deserialize)]
struct WireManifest {
    studies: Vec<Value>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireStudy {
    study_id: String,
    label: LesionType,
    slices: Vec<WireSlice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lesion_spans: Option<Vec<LesionSpan>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireSlice {
    m: u32,
    width: u32,
    height: u32,
    class_scores: BTreeMap<String, f64>,
    detections: Vec<WireDetection>,
    gt_boxes: Vec<WireGtBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    roi_class_probs: Option<[f64; 3]>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDetection {
    #[serde(rename = "box")]
    bbox: [u32; 4],
    confidence: f64,
    sequence_id: u8,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireGtBox {
    #[serde(rename = "box")]
    bbox: [u32; 4],
    kind: GtKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    lesion_id: Option<u32>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn wire_box(raw: [u32; 4]) -> Result<BoundingBox, ManifestError> {
    BoundingBox::new(raw[0], raw[1], raw[2], raw[3])
}

fn check_unit_interval(slice: u32, what: &str, value: f64) -> Result<(), ManifestError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ManifestError::ValueOutOfRange {
            slice,
            what: what.to_string(),
            value,
        })
    }
}

fn convert_slice(wire: WireSlice, warnings: &mut Vec<String>, study_id: &str) -> Result<SliceRecord, ManifestError> {
    let m = wire.m;
    for key in wire.extra.keys() {
        warnings.push(format!("study {study_id} slice {m}: ignoring unknown field '{key}'"));
    }

    if wire.class_scores.len() != SEQUENCE_COUNT {
        return Err(ManifestError::BadSequenceCount {
            slice: m,
            expected: SEQUENCE_COUNT,
            got: wire.class_scores.len(),
        });
    }
    let mut class_scores = [0.0; SEQUENCE_COUNT];
    for (key, value) in &wire.class_scores {
        let seq: usize = key
            .parse()
            .ok()
            .filter(|j| (1..=SEQUENCE_COUNT).contains(j))
            .ok_or_else(|| ManifestError::BadSequenceCount {
                slice: m,
                expected: SEQUENCE_COUNT,
                got: wire.class_scores.len(),
            })?;
        check_unit_interval(m, &format!("class score for sequence {seq}"), *value)?;
        class_scores[seq - 1] = *value;
    }

    let mut detections = Vec::with_capacity(wire.detections.len());
    for det in wire.detections {
        for key in det.extra.keys() {
            warnings.push(format!(
                "study {study_id} slice {m}: ignoring unknown detection field '{key}'"
            ));
        }
        let bbox = wire_box(det.bbox)?;
        if !bbox.fits_in(wire.width, wire.height) {
            return Err(ManifestError::OutOfBounds {
                slice: m,
                x0: bbox.x0,
                y0: bbox.y0,
                x1: bbox.x1,
                y1: bbox.y1,
                width: wire.width,
                height: wire.height,
            });
        }
        check_unit_interval(m, "detection confidence", det.confidence)?;
        if !(1..=SEQUENCE_COUNT as u8).contains(&det.sequence_id) {
            return Err(ManifestError::BadSequenceId {
                slice: m,
                got: det.sequence_id,
            });
        }
        detections.push(DetectionBox {
            bbox,
            confidence: det.confidence,
            sequence_id: det.sequence_id,
        });
    }

    let mut gt_boxes = Vec::with_capacity(wire.gt_boxes.len());
    for gt in wire.gt_boxes {
        for key in gt.extra.keys() {
            warnings.push(format!(
                "study {study_id} slice {m}: ignoring unknown gt field '{key}'"
            ));
        }
        let bbox = wire_box(gt.bbox)?;
        if !bbox.fits_in(wire.width, wire.height) {
            return Err(ManifestError::OutOfBounds {
                slice: m,
                x0: bbox.x0,
                y0: bbox.y0,
                x1: bbox.x1,
                y1: bbox.y1,
                width: wire.width,
                height: wire.height,
            });
        }
        gt_boxes.push(GroundTruthBox {
            bbox,
            kind: gt.kind,
            lesion_id: gt.lesion_id,
        });
    }

    if let Some(probs) = wire.roi_class_probs {
        for p in probs {
            check_unit_interval(m, "roi class probability", p)?;
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(ManifestError::BadProbSum { slice: m, sum });
        }
    }

    if wire.width == 0 || wire.height == 0 {
        return Err(ManifestError::MissingField(format!(
            "slice {m}: width and height must be >= 1"
        )));
    }

    Ok(SliceRecord {
        index: m,
        width: wire.width,
        height: wire.height,
        class_scores,
        detections,
        gt_boxes,
        roi_class_probs: wire.roi_class_probs,
    })
}

fn convert_study(value: Value, warnings: &mut Vec<String>) -> Result<Study, ManifestError> {
    let wire: WireStudy = serde_json::from_value(value)
        .map_err(|e| ManifestError::MissingField(e.to_string()))?;
    let study_id = wire.study_id;
    for key in wire.extra.keys() {
        warnings.push(format!("study {study_id}: ignoring unknown field '{key}'"));
    }

    if wire.slices.is_empty() {
        return Err(ManifestError::NoSlices);
    }
    let mut slices = Vec::with_capacity(wire.slices.len());
    for wire_slice in wire.slices {
        slices.push(convert_slice(wire_slice, warnings, &study_id)?);
    }
    for pair in slices.windows(2) {
        if pair[1].index != pair[0].index + 1 {
            return Err(ManifestError::NonContiguousSlices {
                slice: pair[1].index,
            });
        }
    }

    let lo = slices.first().map(|s| s.index).unwrap_or(0);
    let hi = slices.last().map(|s| s.index).unwrap_or(0);
    if let Some(spans) = &wire.lesion_spans {
        for span in spans {
            if span.first > span.last || span.first < lo || span.last > hi {
                return Err(ManifestError::SpanOutOfRange {
                    first: span.first,
                    last: span.last,
                    lo,
                    hi,
                });
            }
        }
    }

    Ok(Study {
        study_id,
        label: wire.label,
        slices,
        lesion_spans: wire.lesion_spans,
    })
}

/// Load a manifest, keeping every structurally valid study and reporting
/// the rest. Fails only when nothing usable remains.
pub fn load_manifest(path: &Path) -> Result<LoadOutcome, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text, &path.display().to_string())
}

/// Parse manifest text; see [`load_manifest`].
pub fn parse_manifest(text: &str, origin: &str) -> Result<LoadOutcome, LoadError> {
    let wire: WireManifest = serde_json::from_str(text).map_err(|source| LoadError::Json {
        path: origin.to_string(),
        source,
    })?;
    let mut report = LoadReport::default();
    for key in wire.extra.keys() {
        report
            .warnings
            .push(format!("manifest: ignoring unknown top-level field '{key}'"));
    }
    if wire.studies.is_empty() {
        return Err(LoadError::NoStudies {
            path: origin.to_string(),
        });
    }

    let mut studies = Vec::with_capacity(wire.studies.len());
    for (idx, value) in wire.studies.into_iter().enumerate() {
        let fallback_id = value
            .get("study_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{idx}"));
        match convert_study(value, &mut report.warnings) {
            Ok(study) => studies.push(study),
            Err(reason) => report.rejected.push(StudyRejection {
                study_id: fallback_id,
                reason,
            }),
        }
    }

    if studies.is_empty() {
        return Err(LoadError::EmptyDataset {
            path: origin.to_string(),
            rejected: report.rejected.len(),
        });
    }
    Ok(LoadOutcome {
        dataset: Dataset { studies },
        report,
    })
}

fn slice_to_wire(slice: &SliceRecord) -> WireSlice {
    WireSlice {
        m: slice.index,
        width: slice.width,
        height: slice.height,
        class_scores: slice
            .class_scores
            .iter()
            .enumerate()
            .map(|(j, s)| ((j + 1).to_string(), *s))
            .collect(),
        detections: slice
            .detections
            .iter()
            .map(|d| WireDetection {
                bbox: [d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1],
                confidence: d.confidence,
                sequence_id: d.sequence_id,
                extra: BTreeMap::new(),
            })
            .collect(),
        gt_boxes: slice
            .gt_boxes
            .iter()
            .map(|g| WireGtBox {
                bbox: [g.bbox.x0, g.bbox.y0, g.bbox.x1, g.bbox.y1],
                kind: g.kind,
                lesion_id: g.lesion_id,
                extra: BTreeMap::new(),
            })
            .collect(),
        roi_class_probs: slice.roi_class_probs,
        extra: BTreeMap::new(),
    }
}

/// Serialize a dataset to the manifest JSON format. Output is
/// deterministic: object keys are ordered, floats use the shortest
/// round-trip representation.
pub fn manifest_to_json(dataset: &Dataset) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        studies: Vec<OutStudy<'a>>,
    }
    #[derive(Serialize)]
    struct OutStudy<'a> {
        study_id: &'a str,
        label: LesionType,
        slices: Vec<WireSlice>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lesion_spans: &'a Option<Vec<LesionSpan>>,
    }
    let out = Out {
        studies: dataset
            .studies
            .iter()
            .map(|study| OutStudy {
                study_id: &study.study_id,
                label: study.label,
                slices: study.slices.iter().map(slice_to_wire).collect(),
                lesion_spans: &study.lesion_spans,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&out).expect("manifest serialization");
    text.push('\n');
    text
}

/// Write a dataset as a manifest file.
pub fn save_manifest(dataset: &Dataset, path: &Path) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(manifest_to_json(dataset).as_bytes())
}

// ---------------------------------------------------------------------------
// Validation report

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub study_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationCounts {
    pub studies: usize,
    pub slices: usize,
    pub gt_lesion_boxes: usize,
    pub gt_cluster_boxes: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub counts: ValidationCounts,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every type invariant on an in-memory dataset and tally summary
/// counts. Report-only: never fails.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    report.counts.studies = dataset.studies.len();

    for study in &dataset.studies {
        let mut complain = |message: String| {
            report.violations.push(Violation {
                study_id: study.study_id.clone(),
                message,
            });
        };

        if study.slices.is_empty() {
            complain("study has no slices".to_string());
            continue;
        }
        for pair in study.slices.windows(2) {
            if pair[1].index != pair[0].index + 1 {
                complain(format!(
                    "slice indices not contiguous at {}",
                    pair[1].index
                ));
            }
        }

        let lo = study.first_index();
        let hi = study.last_index();
        if let Some(spans) = &study.lesion_spans {
            for span in spans {
                if span.first > span.last || span.first < lo || span.last > hi {
                    complain(format!(
                        "lesion span [{},{}] outside study range [{lo},{hi}]",
                        span.first, span.last
                    ));
                }
            }
        }

        for slice in &study.slices {
            report.counts.slices += 1;
            let m = slice.index;
            if slice.width == 0 || slice.height == 0 {
                complain(format!("slice {m}: zero-sized slice"));
            }
            for (j, score) in slice.class_scores.iter().enumerate() {
                if !score.is_finite() || !(0.0..=1.0).contains(score) {
                    complain(format!(
                        "slice {m}: class score for sequence {} outside [0,1]: {score}",
                        j + 1
                    ));
                }
            }
            for det in &slice.detections {
                report.counts.detections += 1;
                if det.bbox.x1 < det.bbox.x0 || det.bbox.y1 < det.bbox.y0 {
                    complain(format!("slice {m}: malformed detection box"));
                }
                if !det.bbox.fits_in(slice.width, slice.height) {
                    complain(format!("slice {m}: detection box out of bounds"));
                }
                if !det.confidence.is_finite() || !(0.0..=1.0).contains(&det.confidence) {
                    complain(format!(
                        "slice {m}: detection confidence outside [0,1]: {}",
                        det.confidence
                    ));
                }
                if !(1..=SEQUENCE_COUNT as u8).contains(&det.sequence_id) {
                    complain(format!(
                        "slice {m}: detection sequence_id {} outside 1..=5",
                        det.sequence_id
                    ));
                }
            }
            for gt in &slice.gt_boxes {
                match gt.kind {
                    GtKind::Lesion => report.counts.gt_lesion_boxes += 1,
                    GtKind::Cluster => report.counts.gt_cluster_boxes += 1,
                }
                if gt.bbox.x1 < gt.bbox.x0 || gt.bbox.y1 < gt.bbox.y0 {
                    complain(format!("slice {m}: malformed gt box"));
                }
                if !gt.bbox.fits_in(slice.width, slice.height) {
                    complain(format!("slice {m}: gt box out of bounds"));
                }
            }
            if let Some(probs) = &slice.roi_class_probs {
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    complain(format!(
                        "slice {m}: roi_class_probs sums to {sum}, violating normalization"
                    ));
                }
                for p in probs {
                    if !p.is_finite() || !(0.0..=1.0).contains(p) {
                        complain(format!("slice {m}: roi class probability outside [0,1]: {p}"));
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_manifest() -> String {
        r#"{
          "studies": [
            {
              "study_id": "s1",
              "label": "HCC",
              "slices": [
                {"m": 0, "width": 32, "height": 32,
                 "class_scores": {"1": 0.1, "2": 0.2, "3": 0.3, "4": 0.4, "5": 0.5},
                 "detections": [{"box": [1, 1, 4, 4], "confidence": 0.9, "sequence_id": 1}],
                 "gt_boxes": [{"box": [0, 0, 5, 5], "kind": "lesion"}]},
                {"m": 1, "width": 32, "height": 32,
                 "class_scores": {"1": 0.1, "2": 0.2, "3": 0.3, "4": 0.4, "5": 0.5},
                 "detections": [],
                 "gt_boxes": [],
                 "roi_class_probs": [0.8, 0.1, 0.1]},
                {"m": 2, "width": 32, "height": 32,
                 "class_scores": {"1": 0.0, "2": 0.0, "3": 0.0, "4": 0.0, "5": 0.0},
                 "detections": [],
                 "gt_boxes": []}
              ]
            }
          ]
        }"#
        .to_string()
    }

    #[test]
    fn loads_valid_manifest() {
        let outcome = parse_manifest(&minimal_manifest(), "test").unwrap();
        assert_eq!(outcome.dataset.studies.len(), 1);
        let study = &outcome.dataset.studies[0];
        assert_eq!(study.study_id, "s1");
        assert_eq!(study.slices.len(), 3);
        assert_eq!(study.slices[0].class_scores, [0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(study.slices[1].roi_class_probs, Some([0.8, 0.1, 0.1]));
        assert!(outcome.report.rejected.is_empty());
    }

    #[test]
    fn rejects_bad_sequence_count() {
        let mut value: Value = serde_json::from_str(&minimal_manifest()).unwrap();
        value["studies"][0]["slices"][0]["class_scores"]
            .as_object_mut()
            .unwrap()
            .remove("5");
        match parse_manifest(&value.to_string(), "test") {
            Err(LoadError::EmptyDataset { rejected, .. }) => assert_eq!(rejected, 1),
            other => panic!("expected EmptyDataset, got {other:?}"),
        }
    }

    #[test]
    fn rejection_names_study_and_slice() {
        let two = format!(
            r#"{{"studies": [{}, {}]}}"#,
            // second study has a slice with four scores
            serde_json::to_string(
                &serde_json::from_str::<Value>(&minimal_manifest()).unwrap()["studies"][0]
            )
            .unwrap(),
            r#"{
              "study_id": "bad",
              "label": "ICC",
              "slices": [
                {"m": 0, "width": 16, "height": 16,
                 "class_scores": {"1": 0.1, "2": 0.2, "3": 0.3, "4": 0.4},
                 "detections": [], "gt_boxes": []}
              ]
            }"#
        );
        let outcome = parse_manifest(&two, "test").unwrap();
        assert_eq!(outcome.dataset.studies.len(), 1);
        assert_eq!(outcome.report.rejected.len(), 1);
        let rej = &outcome.report.rejected[0];
        assert_eq!(rej.study_id, "bad");
        assert!(matches!(
            rej.reason,
            ManifestError::BadSequenceCount { slice: 0, got: 4, .. }
        ));
    }

    #[test]
    fn rejects_malformed_box() {
        let text = minimal_manifest().replace("[1, 1, 4, 4]", "[10, 10, 5, 20]");
        match parse_manifest(&text, "test") {
            Err(LoadError::EmptyDataset { rejected: 1, .. }) => {}
            other => panic!("expected rejection, got {other:?}"),
        }
        // direct constructor also refuses
        assert!(matches!(
            BoundingBox::new(10, 10, 5, 20),
            Err(ManifestError::MalformedBox { .. })
        ));
    }

    #[test]
    fn rejects_out_of_bounds_box() {
        let text = minimal_manifest().replace("[0, 0, 5, 5]", "[0, 0, 32, 5]");
        match parse_manifest(&text, "test") {
            Err(LoadError::EmptyDataset { rejected: 1, .. }) => {}
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_warn_but_load() {
        let text = minimal_manifest().replace(
            r#""study_id": "s1","#,
            r#""study_id": "s1", "institution": "anon","#,
        );
        let outcome = parse_manifest(&text, "test").unwrap();
        assert_eq!(outcome.dataset.studies.len(), 1);
        assert!(outcome
            .report
            .warnings
            .iter()
            .any(|w| w.contains("institution")));
    }

    #[test]
    fn empty_manifest_errors() {
        assert!(matches!(
            parse_manifest(r#"{"studies": []}"#, "test"),
            Err(LoadError::NoStudies { .. })
        ));
    }

    #[test]
    fn validate_reports_counts_and_prob_violation() {
        let outcome = parse_manifest(&minimal_manifest(), "test").unwrap();
        let mut dataset = outcome.dataset;
        let report = validate_dataset(&dataset);
        assert!(report.is_valid());
        assert_eq!(report.counts.studies, 1);
        assert_eq!(report.counts.slices, 3);
        assert_eq!(report.counts.gt_lesion_boxes, 1);
        assert_eq!(report.counts.detections, 1);

        dataset.studies[0].slices[1].roi_class_probs = Some([0.5, 0.2, 0.1]);
        let report = validate_dataset(&dataset);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.contains("normalization"));
    }

    #[test]
    fn round_trip_preserves_dataset() {
        let outcome = parse_manifest(&minimal_manifest(), "test").unwrap();
        let json = manifest_to_json(&outcome.dataset);
        let back = parse_manifest(&json, "round-trip").unwrap();
        assert_eq!(outcome.dataset, back.dataset);
    }

    #[test]
    fn position_of_maps_offset_indices() {
        let mut outcome = parse_manifest(&minimal_manifest(), "test").unwrap();
        let study = &mut outcome.dataset.studies[0];
        for (i, slice) in study.slices.iter_mut().enumerate() {
            slice.index = 5 + i as u32;
        }
        assert_eq!(study.position_of(5), Some(0));
        assert_eq!(study.position_of(7), Some(2));
        assert_eq!(study.position_of(4), None);
        assert_eq!(study.position_of(8), None);
    }
}
