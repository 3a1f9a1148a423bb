//! Per-class greedy NMS and the two post-processing pipelines.
//!
//! [`pipeline_plus`] suppresses once before the grid branch and returns its
//! selection as final detections. [`pipeline_original`] additionally replaces
//! the selected boxes with their grid-decoded boxes and suppresses again.
//! Both report how many pairwise IoU evaluations they performed.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmsError {
    #[error("no decoded box supplied for selected proposal {0}")]
    MissingDecoded(usize),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, class_id: u32, score: f64) -> Self {
        ScoredBox { bbox, class_id, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondNms {
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_nms: Option<SecondNms>,
}

impl PipelineConfig {
    /// Single NMS at IoU 0.3 after a 0.03 score threshold, top 100.
    pub const PLUS: PipelineConfig = PipelineConfig {
        score_thresh: 0.03,
        nms_iou: 0.3,
        top_k: 100,
        second_nms: None,
    };

    /// NMS at 0.5, top 125 to the grid branch, second NMS at 0.5 on the decoded boxes.
    pub const ORIGINAL: PipelineConfig = PipelineConfig {
        score_thresh: 0.03,
        nms_iou: 0.5,
        top_k: 125,
        second_nms: Some(SecondNms { iou: 0.5 }),
    };

    pub fn validate(&self) -> Result<(), NmsError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.score_thresh) {
            return Err(NmsError::InvalidConfig(format!(
                "score_thresh {} not in [0, 1]",
                self.score_thresh
            )));
        }
        if !unit(self.nms_iou) {
            return Err(NmsError::InvalidConfig(format!(
                "nms_iou {} not in [0, 1]",
                self.nms_iou
            )));
        }
        if self.top_k == 0 {
            return Err(NmsError::InvalidConfig("top_k must be >= 1".into()));
        }
        if let Some(s) = self.second_nms {
            if !unit(s.iou) {
                return Err(NmsError::InvalidConfig(format!(
                    "second_nms.iou {} not in [0, 1]",
                    s.iou
                )));
            }
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::PLUS
    }
}

/// Score descending, then original index ascending.
fn rank_order(items: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .score
            .partial_cmp(&items[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy NMS that also counts pairwise IoU evaluations.
///
/// Returns kept indices in keep order (score descending across classes).
pub fn greedy_nms_counted(items: &[ScoredBox], iou_thresh: f64) -> (Vec<usize>, u64) {
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_by_class: std::collections::HashMap<u32, Vec<usize>> = std::collections::HashMap::new();
    let mut evals = 0u64;
    for i in rank_order(items) {
        let same = kept_by_class.entry(items[i].class_id).or_default();
        let mut keep = true;
        for &k in same.iter() {
            evals += 1;
            if iou(&items[i].bbox, &items[k].bbox) >= iou_thresh {
                keep = false;
                break;
            }
        }
        if keep {
            same.push(i);
            kept.push(i);
        }
    }
    (kept, evals)
}

/// Per-class greedy NMS; an item survives iff its IoU with every kept
/// same-class item is strictly below `iou_thresh`.
pub fn greedy_nms(items: &[ScoredBox], iou_thresh: f64) -> Vec<usize> {
    greedy_nms_counted(items, iou_thresh).0
}

/// A proposal that survived a pipeline, with the box it is reported with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    /// Index into the pipeline input.
    pub index: usize,
    pub item: ScoredBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    /// Final detections, score descending.
    pub detections: Vec<Selected>,
    /// Proposals handed to the grid branch (indices into the input).
    pub grid_inputs: Vec<usize>,
    pub iou_evals: u64,
}

impl PipelineRun {
    pub fn count_pairwise_iou_evals(&self) -> u64 {
        self.iou_evals
    }
}

/// Score threshold, one NMS, top-k; the result goes to the grid branch and
/// is final.
pub fn pipeline_plus(proposals: &[ScoredBox], cfg: &PipelineConfig) -> PipelineRun {
    let (selected, evals) = first_stage(proposals, cfg);
    PipelineRun {
        detections: selected
            .iter()
            .map(|&i| Selected {
                index: i,
                item: proposals[i],
            })
            .collect(),
        grid_inputs: selected,
        iou_evals: evals,
    }
}

/// NMS, top-k, grid-decoded boxes, second NMS.
///
/// `decoded(i)` must return the grid-decoded box for proposal `i`.
pub fn pipeline_original<F>(
    proposals: &[ScoredBox],
    cfg: &PipelineConfig,
    mut decoded: F,
) -> Result<PipelineRun, NmsError>
where
    F: FnMut(usize) -> Option<BBox>,
{
    let (selected, mut evals) = first_stage(proposals, cfg);
    let mut refined = Vec::with_capacity(selected.len());
    for &i in &selected {
        let bbox = decoded(i).ok_or(NmsError::MissingDecoded(i))?;
        refined.push(ScoredBox { bbox, ..proposals[i] });
    }
    let detections = match cfg.second_nms {
        Some(second) => {
            let (kept, e) = greedy_nms_counted(&refined, second.iou);
            evals += e;
            kept.into_iter()
                .map(|k| Selected {
                    index: selected[k],
                    item: refined[k],
                })
                .collect()
        }
        None => selected
            .iter()
            .zip(&refined)
            .map(|(&index, &item)| Selected { index, item })
            .collect(),
    };
    Ok(PipelineRun {
        detections,
        grid_inputs: selected,
        iou_evals: evals,
    })
}

fn first_stage(proposals: &[ScoredBox], cfg: &PipelineConfig) -> (Vec<usize>, u64) {
    let passing: Vec<usize> = (0..proposals.len())
        .filter(|&i| proposals[i].score >= cfg.score_thresh)
        .collect();
    let filtered: Vec<ScoredBox> = passing.iter().map(|&i| proposals[i]).collect();
    let (kept, evals) = greedy_nms_counted(&filtered, cfg.nms_iou);
    // kept is already score-descending
    let selected = kept.into_iter().take(cfg.top_k).map(|k| passing[k]).collect();
    (selected, evals)
}
