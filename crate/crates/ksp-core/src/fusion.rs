//! Slice-wise confidence fusion.
//!
//! Three scores per slice: the classification confidence (mean of the five
//! per-sequence classifier outputs), the detection confidence (maximum
//! over detections of the mean of normalized box area and detector
//! confidence, biasing toward larger boxes), and their average. Box areas
//! are normalized by the largest detection area in the whole study, so the
//! size bias is comparable across slices.

use thiserror::Error;

use crate::data_model::{DetectionBox, Study, SEQUENCE_COUNT};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FusionError {
    #[error("expected {SEQUENCE_COUNT} sequence scores, got {0}")]
    BadSequenceCount(usize),
    #[error("score {0} outside [0,1]")]
    ScoreOutOfRange(f64),
}

/// Fused confidences for one slice. `areas[k]` is the normalized area of
/// the slice's k-th detection, in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSliceScores {
    pub class_confidence: f64,
    pub detection_confidence: f64,
    pub combined: f64,
    pub areas: Vec<f64>,
}

fn check_unit(score: f64) -> Result<f64, FusionError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(FusionError::ScoreOutOfRange(score))
    }
}

/// Mean of the five per-sequence classifier confidences.
pub fn fuse_classification(class_scores: &[f64]) -> Result<f64, FusionError> {
    if class_scores.len() != SEQUENCE_COUNT {
        return Err(FusionError::BadSequenceCount(class_scores.len()));
    }
    let mut sum = 0.0;
    for &score in class_scores {
        sum += check_unit(score)?;
    }
    Ok(sum / SEQUENCE_COUNT as f64)
}

/// Normalized detection areas for every slice of a study: each detection's
/// pixel area divided by the largest detection area found anywhere in the
/// study. Returns one vector per slice, aligned with its detections; all
/// empty when the study has no detections.
pub fn normalize_areas(study: &Study) -> Vec<Vec<f64>> {
    let max_area = study
        .slices
        .iter()
        .flat_map(|s| s.detections.iter())
        .map(|d| d.bbox.area())
        .max();
    let Some(max_area) = max_area else {
        return study.slices.iter().map(|_| Vec::new()).collect();
    };
    study
        .slices
        .iter()
        .map(|slice| {
            slice
                .detections
                .iter()
                .map(|d| d.bbox.area() as f64 / max_area as f64)
                .collect()
        })
        .collect()
}

/// Slice detection confidence: max over detections of the mean of
/// normalized area and detector confidence. A slice without detections
/// carries no localization evidence and scores 0.
pub fn slice_detection_confidence(detections: &[DetectionBox], areas: &[f64]) -> f64 {
    debug_assert_eq!(detections.len(), areas.len());
    detections
        .iter()
        .zip(areas)
        .map(|(det, &area)| (area + det.confidence) / 2.0)
        .fold(0.0, f64::max)
}

/// Average of classification and detection confidence.
pub fn combined_score(class_confidence: f64, detection_confidence: f64) -> Result<f64, FusionError> {
    Ok((check_unit(class_confidence)? + check_unit(detection_confidence)?) / 2.0)
}

/// All three fused scores for every slice of a study.
pub fn fuse_study(study: &Study) -> Result<Vec<FusedSliceScores>, FusionError> {
    let areas = normalize_areas(study);
    study
        .slices
        .iter()
        .zip(areas)
        .map(|(slice, slice_areas)| {
            let class_confidence = fuse_classification(&slice.class_scores)?;
            let detection_confidence =
                slice_detection_confidence(&slice.detections, &slice_areas);
            let combined = combined_score(class_confidence, detection_confidence)?;
            Ok(FusedSliceScores {
                class_confidence,
                detection_confidence,
                combined,
                areas: slice_areas,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{BoundingBox, DetectionBox, LesionType, SliceRecord, Study};
    use proptest::prelude::*;

    fn det(x0: u32, y0: u32, x1: u32, y1: u32, confidence: f64) -> DetectionBox {
        DetectionBox {
            bbox: BoundingBox::new(x0, y0, x1, y1).unwrap(),
            confidence,
            sequence_id: 1,
        }
    }

    fn study_with_detections(per_slice: Vec<Vec<DetectionBox>>) -> Study {
        Study {
            study_id: "t".to_string(),
            label: LesionType::Hcc,
            slices: per_slice
                .into_iter()
                .enumerate()
                .map(|(m, detections)| SliceRecord {
                    index: m as u32,
                    width: 4096,
                    height: 4096,
                    class_scores: [0.5; 5],
                    detections,
                    gt_boxes: Vec::new(),
                    roi_class_probs: None,
                })
                .collect(),
            lesion_spans: None,
        }
    }

    #[test]
    fn classification_mean() {
        assert_eq!(
            fuse_classification(&[0.9, 0.7, 0.8, 0.6, 1.0]).unwrap(),
            0.8
        );
        assert_eq!(fuse_classification(&[0.42; 5]).unwrap(), 0.42);
        assert_eq!(fuse_classification(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), 0.2);
        assert_eq!(
            fuse_classification(&[0.1; 4]),
            Err(FusionError::BadSequenceCount(4))
        );
        assert_eq!(
            fuse_classification(&[0.1, 0.2, 0.3, 0.4, 1.5]),
            Err(FusionError::ScoreOutOfRange(1.5))
        );
    }

    #[test]
    fn areas_ratio_to_study_max() {
        // areas 25, 100, 50 across two slices
        let study = study_with_detections(vec![
            vec![det(0, 0, 4, 4, 0.5), det(10, 10, 19, 19, 0.5)],
            vec![det(0, 0, 9, 4, 0.5)],
        ]);
        let areas = normalize_areas(&study);
        assert_eq!(areas[0], vec![0.25, 1.0]);
        assert_eq!(areas[1], vec![0.5]);
    }

    #[test]
    fn single_and_equal_detections_normalize_to_one() {
        let study = study_with_detections(vec![vec![det(0, 0, 4, 4, 0.5)]]);
        assert_eq!(normalize_areas(&study), vec![vec![1.0]]);

        let study = study_with_detections(vec![
            vec![det(0, 0, 4, 4, 0.2)],
            vec![det(30, 30, 34, 34, 0.9)],
        ]);
        assert_eq!(normalize_areas(&study), vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn no_detections_empty_areas() {
        let study = study_with_detections(vec![vec![], vec![]]);
        assert_eq!(normalize_areas(&study), vec![Vec::<f64>::new(), Vec::new()]);
    }

    #[test]
    fn detection_confidence_max_of_area_score_mean() {
        let dets = [det(0, 0, 1, 1, 0.7), det(0, 0, 1, 1, 0.5)];
        let score = slice_detection_confidence(&dets, &[0.5, 1.0]);
        assert_eq!(score, 0.75); // max(0.6, 0.75)
        assert_eq!(slice_detection_confidence(&[], &[]), 0.0);
        assert_eq!(
            slice_detection_confidence(&[det(0, 0, 1, 1, 1.0)], &[1.0]),
            1.0
        );
    }

    #[test]
    fn combined_is_mean() {
        assert_eq!(combined_score(0.8, 0.75).unwrap(), 0.775);
        assert_eq!(combined_score(0.0, 0.0).unwrap(), 0.0);
        assert!(combined_score(1.2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn combined_fixed_point(x in 0.0f64..=1.0) {
            prop_assert_eq!(combined_score(x, x).unwrap(), x);
        }

        #[test]
        fn classification_strictly_monotone(
            scores in proptest::array::uniform5(0.0f64..=0.8),
            j in 0usize..5,
            delta in 0.01f64..=0.2,
        ) {
            let base = fuse_classification(&scores).unwrap();
            let mut bumped = scores;
            bumped[j] += delta;
            prop_assert!(fuse_classification(&bumped).unwrap() > base);
        }

        #[test]
        fn detection_confidence_never_decreases(
            confs in proptest::collection::vec(0.0f64..=0.9, 1..6),
            k in 0usize..6,
            delta in 0.0f64..=0.1,
        ) {
            let k = k % confs.len();
            let dets: Vec<DetectionBox> =
                confs.iter().map(|&c| det(0, 0, 1, 1, c)).collect();
            let areas = vec![1.0; dets.len()];
            let base = slice_detection_confidence(&dets, &areas);
            let mut bumped = dets;
            bumped[k].confidence += delta;
            prop_assert!(slice_detection_confidence(&bumped, &areas) >= base);
        }

        #[test]
        fn fused_scores_bounded(
            scores in proptest::array::uniform5(0.0f64..=1.0),
            confs in proptest::collection::vec(0.0f64..=1.0, 0..6),
        ) {
            let dets: Vec<DetectionBox> =
                confs.iter().map(|&c| det(0, 0, 4, 4, c)).collect();
            let study = {
                let mut s = study_with_detections(vec![dets]);
                s.slices[0].class_scores = scores;
                s
            };
            let fused = fuse_study(&study).unwrap();
            for f in fused {
                prop_assert!((0.0..=1.0).contains(&f.class_confidence));
                prop_assert!((0.0..=1.0).contains(&f.detection_confidence));
                prop_assert!((0.0..=1.0).contains(&f.combined));
                prop_assert_eq!(
                    f.combined,
                    (f.class_confidence + f.detection_confidence) / 2.0
                );
                for a in f.areas {
                    prop_assert!(0.0 < a && a <= 1.0);
                }
            }
        }

        #[test]
        fn areas_invariant_under_common_scale(
            widths in proptest::collection::vec(1u32..=20, 1..8),
            heights in proptest::collection::vec(1u32..=20, 1..8),
            factor in 1u32..=7,
        ) {
            let n = widths.len().min(heights.len());
            let base: Vec<DetectionBox> = (0..n)
                .map(|i| det(0, 0, widths[i] - 1, heights[i] - 1, 0.5))
                .collect();
            let scaled: Vec<DetectionBox> = (0..n)
                .map(|i| det(0, 0, widths[i] * factor - 1, heights[i] - 1, 0.5))
                .collect();
            let a0 = normalize_areas(&study_with_detections(vec![base]));
            let a1 = normalize_areas(&study_with_detections(vec![scaled]));
            prop_assert_eq!(a0, a1);
        }

        #[test]
        fn detection_confidence_order_free(
            confs in proptest::collection::vec(0.0f64..=1.0, 1..6),
        ) {
            let dets: Vec<DetectionBox> =
                confs.iter().map(|&c| det(0, 0, 4, 4, c)).collect();
            let areas = vec![1.0; dets.len()];
            let forward = slice_detection_confidence(&dets, &areas);
            let mut rev = dets;
            rev.reverse();
            let backward = slice_detection_confidence(&rev, &areas);
            prop_assert_eq!(forward, backward);
        }
    }
}
