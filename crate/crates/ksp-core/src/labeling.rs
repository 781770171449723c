//! Key / Marginal / NonKey slice labels derived from lesion slice spans.
//!
//! Per lesion spanning slices [a, b]: the slices {a-1, a, b, b+1} that fall
//! inside the study are Marginal, the interior a+1..=b-1 is Key. Labels
//! from multiple lesions merge with precedence Key > Marginal > NonKey, so
//! a slice capturing any lesion's interior stays Key no matter what the
//! other lesions contribute.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data_model::{LesionSpan, SliceLabel, Study};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabelError {
    #[error("lesion span [{first},{last}] outside study slice range [{lo},{hi}]")]
    SpanOutOfRange { first: u32, last: u32, lo: u32, hi: u32 },
    #[error("study has no slices")]
    NoSlices,
}

/// Label every slice of `study` given its lesion spans.
pub fn label_study_slices(
    study: &Study,
    spans: &[LesionSpan],
) -> Result<BTreeMap<u32, SliceLabel>, LabelError> {
    if study.slices.is_empty() {
        return Err(LabelError::NoSlices);
    }
    let lo = study.first_index();
    let hi = study.last_index();

    let mut labels: BTreeMap<u32, SliceLabel> = study
        .slices
        .iter()
        .map(|s| (s.index, SliceLabel::NonKey))
        .collect();

    let mut promote = |m: u32, label: SliceLabel| {
        let entry = labels.get_mut(&m).expect("slice inside range");
        if label > *entry {
            *entry = label;
        }
    };

    for span in spans {
        if span.first > span.last || span.first < lo || span.last > hi {
            return Err(LabelError::SpanOutOfRange {
                first: span.first,
                last: span.last,
                lo,
                hi,
            });
        }
        for m in span.first.saturating_sub(1).max(lo)..=span.last.saturating_add(1).min(hi) {
            let label = if m > span.first && m < span.last {
                SliceLabel::Key
            } else {
                SliceLabel::Marginal
            };
            promote(m, label);
        }
    }
    Ok(labels)
}

/// Lesion spans for a study, in preference order: explicit spans from the
/// manifest, spans grouped by ground-truth lesion ids, and finally one
/// span per maximal run of consecutive slices carrying any ground-truth
/// box (lesion identity is not serialized by RECIST-style marks).
pub fn lesion_spans_for_study(study: &Study) -> Vec<LesionSpan> {
    if let Some(spans) = &study.lesion_spans {
        return spans.clone();
    }

    let mut by_id: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    let mut any_untagged = false;
    let mut any_tagged = false;
    for slice in &study.slices {
        for gt in &slice.gt_boxes {
            match gt.lesion_id {
                Some(id) => {
                    any_tagged = true;
                    by_id
                        .entry(id)
                        .and_modify(|(first, last)| {
                            *first = (*first).min(slice.index);
                            *last = (*last).max(slice.index);
                        })
                        .or_insert((slice.index, slice.index));
                }
                None => any_untagged = true,
            }
        }
    }
    // Mixed tagging falls back to run detection: a partial id set cannot
    // separate lesions reliably.
    if any_tagged && !any_untagged {
        return by_id
            .values()
            .map(|&(first, last)| LesionSpan { first, last })
            .collect();
    }

    let mut spans = Vec::new();
    let mut current: Option<(u32, u32)> = None;
    for slice in &study.slices {
        if slice.gt_boxes.is_empty() {
            if let Some((first, last)) = current.take() {
                spans.push(LesionSpan { first, last });
            }
        } else {
            current = Some(match current {
                Some((first, _)) => (first, slice.index),
                None => (slice.index, slice.index),
            });
        }
    }
    if let Some((first, last)) = current {
        spans.push(LesionSpan { first, last });
    }
    spans
}
