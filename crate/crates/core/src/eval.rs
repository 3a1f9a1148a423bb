//! COCO-style box evaluation: greedy matching and 101-point interpolated AP
//! over IoU thresholds 0.50:0.05:0.95 and object-area buckets.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: usize,
        expected: &'static str,
        got: usize,
    },
    #[error("line {line}: cannot parse {field} from {value:?}")]
    Parse {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub class_id: u32,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Area bucket bounds in square pixels: small `< small_max`, medium
/// `[small_max, medium_max)`, large `>= medium_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRanges {
    pub small_max: f64,
    pub medium_max: f64,
}

impl Default for AreaRanges {
    fn default() -> Self {
        AreaRanges {
            small_max: 32.0 * 32.0,
            medium_max: 96.0 * 96.0,
        }
    }
}

impl AreaRanges {
    fn buckets(&self) -> [(f64, f64); 3] {
        [
            (0.0, self.small_max),
            (self.small_max, self.medium_max),
            (self.medium_max, f64::INFINITY),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Excluded from the PR curve (matched an out-of-range ground truth, or
    /// unmatched and itself outside the area range).
    Ignored,
}

fn by_score_desc(dets: &[Detection], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
}

fn in_range(b: &BBox, range: Option<(f64, f64)>) -> bool {
    range.is_none_or(|(lo, hi)| {
        let a = b.area();
        a >= lo && a < hi
    })
}

/// Matching with an optional area range. Within each `(image, class)`,
/// detections in descending score order take the unmatched in-range ground
/// truth with the highest IoU `>= iou_thresh`; failing that, an out-of-range
/// one (which makes the detection ignored).
pub fn match_with_area(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
    range: Option<(f64, f64)>,
) -> Vec<MatchOutcome> {
    let mut gts_by_key: BTreeMap<(u64, u32), Vec<usize>> = BTreeMap::new();
    for (g, gt) in gts.iter().enumerate() {
        gts_by_key.entry((gt.image_id, gt.class_id)).or_default().push(g);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    by_score_desc(dets, &mut order);
    let mut taken = vec![false; gts.len()];
    let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
    for d in order {
        let det = &dets[d];
        let candidates = gts_by_key
            .get(&(det.image_id, det.class_id))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let best = |want_in_range: bool| {
            let mut best: Option<(usize, f64)> = None;
            for &g in candidates {
                if taken[g] || in_range(&gts[g].bbox, range) != want_in_range {
                    continue;
                }
                let v = iou(&det.bbox, &gts[g].bbox);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| g)
        };
        if let Some(g) = best(true) {
            taken[g] = true;
            out[d] = MatchOutcome::TruePositive;
        } else if let Some(g) = best(false) {
            taken[g] = true;
            out[d] = MatchOutcome::Ignored;
        } else if !in_range(&det.bbox, range) {
            out[d] = MatchOutcome::Ignored;
        }
    }
    out
}

/// True-positive flag per detection (all areas).
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Vec<bool> {
    match_with_area(dets, gts, iou_thresh, None)
        .into_iter()
        .map(|m| m == MatchOutcome::TruePositive)
        .collect()
}

/// 101-point interpolated AP from `(score, is_tp)` records.
///
/// `None` when there is nothing to evaluate (no ground truth and no
/// detections); `Some(0.0)` when there are detections but no ground truth.
pub fn average_precision(records: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if records.is_empty() { None } else { Some(0.0) };
    }
    let mut sorted = records.to_vec();
    // stable: equal scores keep their given order
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, is_tp) in &sorted {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let pos = recall.partition_point(|&x| x < r);
            precision.get(pos).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean over the ten IoU thresholds.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    /// Class-mean AP at each of the ten IoU thresholds.
    pub ap_per_threshold: Vec<Option<f64>>,
    pub n_detections: usize,
    pub n_ground_truth: usize,
}

fn mean_defined(vals: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = vals
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Class-mean AP per threshold for one area range. Classes without any
/// in-range ground truth are left out of the mean.
fn per_threshold(dets: &[Detection], gts: &[GroundTruth], range: Option<(f64, f64)>) -> Vec<Option<f64>> {
    let classes: BTreeSet<u32> = gts
        .iter()
        .filter(|g| in_range(&g.bbox, range))
        .map(|g| g.class_id)
        .collect();
    iou_thresholds()
        .iter()
        .map(|&t| {
            mean_defined(classes.iter().map(|&c| {
                let cd: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).copied().collect();
                let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_id == c).copied().collect();
                let n_gt = cg.iter().filter(|g| in_range(&g.bbox, range)).count();
                let records: Vec<(f64, bool)> = match_with_area(&cd, &cg, t, range)
                    .into_iter()
                    .zip(&cd)
                    .filter(|(m, _)| *m != MatchOutcome::Ignored)
                    .map(|(m, d)| (d.score, m == MatchOutcome::TruePositive))
                    .collect();
                average_precision(&records, n_gt)
            }))
        })
        .collect()
}

/// Full evaluation over all thresholds and area buckets.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], areas: &AreaRanges) -> EvalResult {
    let all = per_threshold(dets, gts, None);
    let [small, medium, large] = areas.buckets().map(|r| mean_defined(per_threshold(dets, gts, Some(r))));
    EvalResult {
        ap: mean_defined(all.iter().copied()),
        ap50: all[0],
        ap75: all[5],
        ap_small: small,
        ap_medium: medium,
        ap_large: large,
        ap_per_threshold: all,
        n_detections: dets.len(),
        n_ground_truth: gts.len(),
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_field<T: std::str::FromStr>(line: usize, field: &'static str, value: &str) -> Result<T, RecordError> {
    value.parse().map_err(|_| RecordError::Parse {
        line,
        field,
        value: value.to_string(),
    })
}

fn parse_box(line: usize, f: &[&str]) -> Result<BBox, RecordError> {
    let c: Vec<f64> = ["x1", "y1", "x2", "y2"]
        .iter()
        .zip(f)
        .map(|(name, v)| parse_field(line, name, v))
        .collect::<Result<_, _>>()?;
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| RecordError::Invalid {
        line,
        reason: e.to_string(),
    })
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, split_fields(l)))
    })
}

/// Parses `image_id class score x1 y1 x2 y2` lines (comma or whitespace
/// separated, `#` comments allowed).
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, RecordError> {
    records(text)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(RecordError::FieldCount {
                    line,
                    expected: "7",
                    got: f.len(),
                });
            }
            let score: f64 = parse_field(line, "score", f[2])?;
            if !(0.0..=1.0).contains(&score) {
                return Err(RecordError::Invalid {
                    line,
                    reason: format!("score {score} outside [0, 1]"),
                });
            }
            Ok(Detection {
                image_id: parse_field(line, "image_id", f[0])?,
                class_id: parse_field(line, "class", f[1])?,
                score,
                bbox: parse_box(line, &f[3..])?,
            })
        })
        .collect()
}

/// Parses ground truth in the detection layout; the score column is
/// optional and ignored.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>, RecordError> {
    records(text)
        .map(|(line, f)| {
            let coords = match f.len() {
                6 => &f[2..],
                7 => &f[3..],
                n => {
                    return Err(RecordError::FieldCount {
                        line,
                        expected: "6 or 7",
                        got: n,
                    })
                }
            };
            Ok(GroundTruth {
                image_id: parse_field(line, "image_id", f[0])?,
                class_id: parse_field(line, "class", f[1])?,
                bbox: parse_box(line, coords)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(image_id: u64, class_id: u32, score: f64, b: BBox) -> Detection {
        Detection {
            image_id,
            class_id,
            score,
            bbox: b,
        }
    }

    fn gt(image_id: u64, class_id: u32, b: BBox) -> GroundTruth {
        GroundTruth {
            image_id,
            class_id,
            bbox: b,
        }
    }

    #[test]
    fn matching_examples() {
        let g = [gt(0, 1, bx(0.0, 0.0, 10.0, 10.0))];
        assert_eq!(match_detections(&[det(0, 1, 0.9, g[0].bbox)], &g, 0.5), vec![true]);
        let two = [det(0, 1, 0.6, g[0].bbox), det(0, 1, 0.9, g[0].bbox)];
        assert_eq!(match_detections(&two, &g, 0.5), vec![false, true]);
        // other class or other image never matches
        assert_eq!(match_detections(&[det(0, 2, 0.9, g[0].bbox)], &g, 0.5), vec![false]);
        assert_eq!(match_detections(&[det(1, 1, 0.9, g[0].bbox)], &g, 0.5), vec![false]);
    }

    #[test]
    fn matching_prefers_highest_iou() {
        let gs = [gt(0, 0, bx(0.0, 0.0, 10.0, 10.0)), gt(0, 0, bx(2.0, 0.0, 12.0, 10.0))];
        let d = [
            det(0, 0, 0.9, bx(2.0, 0.0, 12.0, 10.0)),
            det(0, 0, 0.8, bx(0.0, 0.0, 10.0, 10.0)),
        ];
        assert_eq!(match_detections(&d, &gs, 0.5), vec![true, true]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[(0.5, false)], 0), Some(0.0));
        // precision 1 for recall points 0.00..=0.50, nothing beyond
        let ap = average_precision(&[(0.9, true), (0.8, false)], 2).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_detector() {
        let gts: Vec<_> = (0..6)
            .map(|i| {
                gt(
                    i / 2,
                    (i % 3) as u32,
                    bx(10.0 * i as f64, 0.0, 10.0 * i as f64 + 20.0 + 30.0 * i as f64, 50.0),
                )
            })
            .collect();
        let dets: Vec<_> = gts.iter().map(|g| det(g.image_id, g.class_id, 0.7, g.bbox)).collect();
        let r = evaluate(&dets, &gts, &AreaRanges::default());
        assert_eq!((r.ap, r.ap50, r.ap75), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn half_width_shift_kills_ap75() {
        // IoU of a half-width shift is 1/3; a quarter-width shift gives 0.6
        let gts = [
            gt(0, 0, bx(0.0, 0.0, 40.0, 40.0)),
            gt(0, 0, bx(100.0, 0.0, 140.0, 40.0)),
        ];
        let dets = [
            det(0, 0, 0.9, gts[0].bbox.translate(20.0, 0.0)),
            det(0, 0, 0.8, gts[1].bbox.translate(10.0, 0.0)),
        ];
        let r = evaluate(&dets, &gts, &AreaRanges::default());
        assert_eq!(r.ap75, Some(0.0));
        assert!(r.ap50.unwrap() > 0.0);
    }

    #[test]
    fn empty_bucket_is_undefined() {
        let gts = [gt(0, 0, bx(0.0, 0.0, 200.0, 200.0))];
        let dets = [det(0, 0, 0.9, gts[0].bbox)];
        let r = evaluate(&dets, &gts, &AreaRanges::default());
        assert_eq!(r.ap_small, None);
        assert_eq!(r.ap_medium, None);
        assert_eq!(r.ap_large, Some(1.0));
    }

    #[test]
    fn detection_on_out_of_range_gt_is_ignored() {
        let gts = [
            gt(0, 0, bx(0.0, 0.0, 200.0, 200.0)),
            gt(0, 0, bx(300.0, 0.0, 320.0, 20.0)),
        ];
        let dets = [det(0, 0, 0.9, gts[0].bbox), det(0, 0, 0.5, gts[1].bbox)];
        let m = match_with_area(&dets, &gts, 0.5, Some((0.0, 1024.0)));
        assert_eq!(m, vec![MatchOutcome::Ignored, MatchOutcome::TruePositive]);
        assert_eq!(evaluate(&dets, &gts, &AreaRanges::default()).ap_small, Some(1.0));
    }

    #[test]
    fn parse_records() {
        let d = parse_detections("# header\n1,3,0.5,0,0,10,10\n2 4 0.25 1 2 3 4\n\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].bbox, bx(1.0, 2.0, 3.0, 4.0));
        assert!(parse_detections("1,3,0.5,0,0,10").is_err());
        assert!(matches!(
            parse_detections("1,3,x,0,0,10,10"),
            Err(RecordError::Parse { line: 1, .. })
        ));
        assert!(parse_detections("1,3,0.5,10,0,0,10").is_err());
        let g = parse_ground_truth("1,3,0,0,10,10\n1,3,1.0,0,0,10,10").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0], g[1]);
    }
}
