//! Synthetic stand-in for a trained grid branch.
//!
//! Heatmaps are rendered as Gaussian bumps around the (optionally jittered)
//! true grid points, plus uniform background and occasional spurious peaks.
//! Scenes pair random ground truth with perturbed proposals so the whole
//! select -> render -> decode -> evaluate chain can be run end to end.
//!
//! Every random draw comes from a ChaCha stream keyed by the relevant seed
//! and item indices, so results do not depend on thread scheduling or on
//! which grid variants are being compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{decode_detection, DecodeError, DecodeOptions, Heatmap};
use crate::eval::{evaluate, AreaRanges, Detection, EvalResult, GroundTruth};
use crate::geometry::{grid_point, iou, point_to_cell, representation_region, BBox, GridIndex, GridSpec, Point};
use crate::nms::{pipeline_plus, PipelineConfig, ScoredBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid scene parameters: {0}")]
    InvalidScene(String),
    #[error("experiment needs at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Mixes several words into one seed (splitmix64 finalizer per word).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Gaussian bump width in cells; 0 renders a single-cell delta.
    pub peak_sigma: f64,
    /// Standard deviation of the peak-centre displacement, image pixels.
    pub jitter_sigma: f64,
    /// Amplitude of independent uniform per-cell noise, in `[0, 1)`.
    pub background: f64,
    /// Probability of one spurious bump per map.
    pub false_peak_prob: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub const fn zero(seed: u64) -> Self {
        NoiseModel {
            peak_sigma: 0.0,
            jitter_sigma: 0.0,
            background: 0.0,
            false_peak_prob: 0.0,
            seed,
        }
    }

    pub const fn moderate(seed: u64) -> Self {
        NoiseModel {
            peak_sigma: 1.5,
            jitter_sigma: 1.0,
            background: 0.1,
            false_peak_prob: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidNoise(m));
        if !(self.peak_sigma.is_finite() && self.peak_sigma >= 0.0) {
            return bad(format!("peak_sigma {} must be >= 0", self.peak_sigma));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return bad(format!("jitter_sigma {} must be >= 0", self.jitter_sigma));
        }
        if !(0.0..1.0).contains(&self.background) {
            return bad(format!("background {} not in [0, 1)", self.background));
        }
        if !(0.0..=1.0).contains(&self.false_peak_prob) {
            return bad(format!("false_peak_prob {} not in [0, 1]", self.false_peak_prob));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::moderate(0)
    }
}

/// Largest amplitude a spurious peak can have.
pub const FALSE_PEAK_MAX: f64 = 0.8;

fn add_bump(h: &mut Heatmap, cx: usize, cy: usize, sigma: f64, amp: f64) {
    if sigma <= 0.0 {
        let v = h.get(cx, cy) + amp;
        h.set(cx, cy, v);
        return;
    }
    let r = h.resolution as i64;
    let reach = (6.0 * sigma).ceil() as i64;
    let two_s2 = 2.0 * sigma * sigma;
    let (cx, cy) = (cx as i64, cy as i64);
    for y in (cy - reach).max(0)..=(cy + reach).min(r - 1) {
        for x in (cx - reach).max(0)..=(cx + reach).min(r - 1) {
            let d2 = ((x - cx).pow(2) + (y - cy).pow(2)) as f64;
            let (ux, uy) = (x as usize, y as usize);
            let v = h.get(ux, uy) + amp * (-d2 / two_s2).exp();
            h.set(ux, uy, v);
        }
    }
}

fn render_one(
    target: Option<Point>,
    region: &BBox,
    idx: GridIndex,
    spec: &GridSpec,
    noise: &NoiseModel,
    stream: &[u64],
) -> Heatmap {
    let res = spec.heatmap_resolution;
    let mut h = Heatmap::zeros(idx, res);
    let flat = idx.flat(spec.points_per_side) as u64;
    if let Some(p) = target {
        let mut rng = rng_for(&[stream, &[flat, 1]].concat());
        let jittered = if noise.jitter_sigma > 0.0 {
            let n = Normal::new(0.0, noise.jitter_sigma).expect("sigma validated");
            Point::new(p.x + n.sample(&mut rng), p.y + n.sample(&mut rng))
        } else {
            p
        };
        if let Ok(c) = point_to_cell(jittered, region, res) {
            add_bump(&mut h, c.cx, c.cy, noise.peak_sigma, 1.0);
        }
    }
    if noise.background > 0.0 {
        let mut rng = rng_for(&[stream, &[flat, 2]].concat());
        for v in h.values.iter_mut() {
            *v += noise.background * rng.random::<f64>();
        }
    }
    if noise.false_peak_prob > 0.0 {
        let mut rng = rng_for(&[stream, &[flat, 3]].concat());
        if rng.random::<f64>() < noise.false_peak_prob {
            let cx = rng.random_range(0..res);
            let cy = rng.random_range(0..res);
            let amp = rng.random_range(0.5 * FALSE_PEAK_MAX..=FALSE_PEAK_MAX);
            add_bump(&mut h, cx, cy, noise.peak_sigma, amp);
        }
    }
    for v in h.values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    h
}

/// Heatmaps for `gt` seen through `proposal`; `gt = None` gives noise-only maps.
/// `stream` identifies the item so that independent items draw independent noise.
pub fn render_heatmaps_for(
    gt: Option<&BBox>,
    proposal: &BBox,
    spec: &GridSpec,
    noise: &NoiseModel,
    stream: &[u64],
) -> Vec<Heatmap> {
    let n = spec.points_per_side;
    let stream: Vec<u64> = [&[noise.seed][..], stream].concat();
    GridIndex::all(n)
        .map(|idx| {
            let region = representation_region(proposal, idx, spec);
            render_one(gt.map(|g| grid_point(g, n, idx)), &region, idx, spec, noise, &stream)
        })
        .collect()
}

/// Oracle heatmaps for one proposal, deterministic in `noise.seed`.
pub fn render_heatmaps(
    gt: &BBox,
    proposal: &BBox,
    spec: &GridSpec,
    noise: &NoiseModel,
) -> Result<Vec<Heatmap>, SimError> {
    noise.validate()?;
    spec.validate().map_err(|e| SimError::Decode(e.into()))?;
    Ok(render_heatmaps_for(Some(gt), proposal, spec, noise, &[]))
}

/// Draws a ground-truth box and a perturbed proposal with IoU above `min_iou`.
pub fn sample_positive_pair<R: Rng>(rng: &mut R, min_iou: f64) -> (BBox, BBox) {
    loop {
        let w = rng.random_range(20.0..200.0);
        let h = rng.random_range(20.0..200.0);
        let x = rng.random_range(0.0..800.0);
        let y = rng.random_range(0.0..800.0);
        let gt = BBox {
            x1: x,
            y1: y,
            x2: x + w,
            y2: y + h,
        };
        let c = gt.center();
        let pw = w * rng.random_range(0.6..1.6);
        let ph = h * rng.random_range(0.6..1.6);
        let cx = c.x + w * rng.random_range(-0.3..0.3);
        let cy = c.y + h * rng.random_range(-0.3..0.3);
        let proposal = BBox {
            x1: cx - pw / 2.0,
            y1: cy - ph / 2.0,
            x2: cx + pw / 2.0,
            y2: cy + ph / 2.0,
        };
        if iou(&gt, &proposal) > min_iou {
            return (gt, proposal);
        }
    }
}

/// `count` positive pairs from a fixed seed.
pub fn positive_pairs(count: usize, min_iou: f64, seed: u64) -> Vec<(BBox, BBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_positive_pair(&mut rng, min_iou)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub count: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub num_classes: u32,
    /// Object side length range, pixels (log-uniform).
    pub min_size: f64,
    pub max_size: f64,
    pub proposals_per_object: usize,
    /// Relative shift/scale standard deviation of perturbed proposals.
    pub proposal_noise: f64,
    pub distractors_per_image: usize,
    /// Weight of IoU-to-best-gt in the true-class score; the rest is uniform noise.
    pub score_blend: f64,
    /// Scores of the other classes are uniform in `[0, other_class_score_max]`.
    pub other_class_score_max: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            count: 50,
            image_width: 640.0,
            image_height: 480.0,
            objects_min: 2,
            objects_max: 6,
            num_classes: 80,
            min_size: 16.0,
            max_size: 256.0,
            proposals_per_object: 6,
            proposal_noise: 0.1,
            distractors_per_image: 10,
            score_blend: 0.7,
            other_class_score_max: 0.05,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScene(m.to_string()));
        if self.count == 0 {
            return bad("count must be >= 1");
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return bad("image size must be positive");
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min > objects_max");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1");
        }
        if !(self.min_size > 0.0
            && self.min_size <= self.max_size
            && self.max_size <= self.image_width.min(self.image_height))
        {
            return bad("need 0 < min_size <= max_size <= image side");
        }
        if !(self.proposal_noise.is_finite() && self.proposal_noise >= 0.0) {
            return bad("proposal_noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.score_blend) || !(0.0..=1.0).contains(&self.other_class_score_max) {
            return bad("score_blend and other_class_score_max must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// One score per class.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<SceneObject>,
    pub proposals: Vec<Proposal>,
}

/// Best IoU of `b` against the scene objects, with the object index.
pub fn best_match(b: &BBox, objects: &[SceneObject]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, o) in objects.iter().enumerate() {
        let v = iou(b, &o.bbox);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((k, v));
        }
    }
    best
}

impl Scene {
    /// Proposals expanded to one scored box per class at or above `min_score`,
    /// with the owning proposal index.
    pub fn scored_boxes(&self, min_score: f64) -> (Vec<ScoredBox>, Vec<usize>) {
        let mut items = Vec::new();
        let mut owner = Vec::new();
        for (p, prop) in self.proposals.iter().enumerate() {
            for (c, &s) in prop.scores.iter().enumerate() {
                if s >= min_score {
                    items.push(ScoredBox::new(prop.bbox, c as u32, s));
                    owner.push(p);
                }
            }
        }
        (items, owner)
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.objects
            .iter()
            .map(|o| GroundTruth {
                image_id: self.image_id,
                class_id: o.class_id,
                bbox: o.bbox,
            })
            .collect()
    }
}

fn generate_scene(params: &SceneParams, image_id: u64, seed: u64) -> Scene {
    let mut rng = rng_for(&[seed, image_id]);
    let (w, h) = (params.image_width, params.image_height);
    let n_obj = rng.random_range(params.objects_min..=params.objects_max);
    let (lo, hi) = (params.min_size.ln(), params.max_size.ln());
    let objects: Vec<SceneObject> = (0..n_obj)
        .map(|_| {
            let bw = rng.random_range(lo..=hi).exp();
            let bh = rng.random_range(lo..=hi).exp();
            let x = rng.random_range(0.0..=(w - bw));
            let y = rng.random_range(0.0..=(h - bh));
            SceneObject {
                bbox: BBox {
                    x1: x,
                    y1: y,
                    x2: x + bw,
                    y2: y + bh,
                },
                class_id: rng.random_range(0..params.num_classes),
            }
        })
        .collect();

    let mut boxes = Vec::new();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for o in &objects {
        let (ow, oh) = (o.bbox.width(), o.bbox.height());
        for _ in 0..params.proposals_per_object {
            let s = params.proposal_noise;
            let dx = s * ow * unit.sample(&mut rng);
            let dy = s * oh * unit.sample(&mut rng);
            // half the size change, applied to each side about the shifted centre
            let gx = 0.5 * ow * ((s * unit.sample(&mut rng)).exp() - 1.0);
            let gy = 0.5 * oh * ((s * unit.sample(&mut rng)).exp() - 1.0);
            let b = BBox {
                x1: o.bbox.x1 + dx - gx,
                y1: o.bbox.y1 + dy - gy,
                x2: o.bbox.x2 + dx + gx,
                y2: o.bbox.y2 + dy + gy,
            }
            .clip(w, h);
            if !b.is_degenerate() {
                boxes.push(b);
            }
        }
    }
    let (lo_s, hi_s) = (params.min_size, params.max_size);
    for _ in 0..params.distractors_per_image {
        let bw = rng.random_range(lo_s..=hi_s);
        let bh = rng.random_range(lo_s..=hi_s);
        let x = rng.random_range(0.0..=(w - bw));
        let y = rng.random_range(0.0..=(h - bh));
        boxes.push(BBox {
            x1: x,
            y1: y,
            x2: x + bw,
            y2: y + bh,
        });
    }

    let proposals = boxes
        .into_iter()
        .map(|b| {
            let mut scores: Vec<f64> = (0..params.num_classes)
                .map(|_| params.other_class_score_max * rng.random::<f64>())
                .collect();
            let u = rng.random::<f64>();
            let (class, overlap) = match best_match(&b, &objects) {
                Some((k, v)) if v > 0.0 => (objects[k].class_id, v),
                _ => (rng.random_range(0..params.num_classes), 0.0),
            };
            let s = params.score_blend * overlap + (1.0 - params.score_blend) * u;
            scores[class as usize] = scores[class as usize].max(s);
            Proposal { bbox: b, scores }
        })
        .collect();

    Scene {
        image_id,
        width: w,
        height: h,
        objects,
        proposals,
    }
}

/// Random scenes, deterministic in `seed`; scene `i` depends only on `(seed, i)`.
pub fn generate_scenes(params: &SceneParams, seed: u64) -> Result<Vec<Scene>, SimError> {
    params.validate()?;
    Ok((0..params.count as u64)
        .into_par_iter()
        .map(|i| generate_scene(params, i, seed))
        .collect())
}

/// Mean over scene objects of the best IoU reached by any proposal.
pub fn mean_best_proposal_iou(scenes: &[Scene]) -> f64 {
    let vals: Vec<f64> = scenes
        .iter()
        .flat_map(|s| {
            s.objects
                .iter()
                .map(|o| s.proposals.iter().map(|p| iou(&p.bbox, &o.bbox)).fold(0.0, f64::max))
        })
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Signed edge errors `[x1, y1, x2, y2]` of `b` against `truth`.
fn edge_errors(b: &BBox, truth: &BBox) -> [f64; 4] {
    let (e, t) = (b.edges(), truth.edges());
    std::array::from_fn(|k| e[k] - t[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Pairs that decoded successfully.
    pub pairs: usize,
    pub decode_failures: usize,
    /// Mean absolute error over all four edges of all decoded pairs.
    pub mean_edge_error: f64,
    /// Mean absolute error per edge `[x1, y1, x2, y2]`.
    pub per_edge: [f64; 4],
    pub max_edge_error: f64,
    pub rms_edge_error: f64,
    /// Mean IoU of decoded boxes with their ground truth.
    pub mean_iou: f64,
}

impl EdgeStats {
    fn from_errors(errors: &[[f64; 4]], ious: &[f64], failures: usize) -> EdgeStats {
        let n = errors.len();
        if n == 0 {
            return EdgeStats {
                pairs: 0,
                decode_failures: failures,
                mean_edge_error: 0.0,
                per_edge: [0.0; 4],
                max_edge_error: 0.0,
                rms_edge_error: 0.0,
                mean_iou: 0.0,
            };
        }
        let per_edge = std::array::from_fn(|k| errors.iter().map(|e| e[k].abs()).sum::<f64>() / n as f64);
        let all = errors.iter().flatten();
        EdgeStats {
            pairs: n,
            decode_failures: failures,
            mean_edge_error: all.clone().map(|v| v.abs()).sum::<f64>() / (4 * n) as f64,
            per_edge,
            max_edge_error: all.clone().fold(0.0, |m, v| m.max(v.abs())),
            rms_edge_error: (all.map(|v| v * v).sum::<f64>() / (4 * n) as f64).sqrt(),
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
        }
    }
}

/// Renders and decodes every `(gt, proposal)` pair; pair `i` uses noise
/// stream `i`.
pub fn evaluate_pairs(
    pairs: &[(BBox, BBox)],
    spec: &GridSpec,
    noise: &NoiseModel,
    opts: &DecodeOptions,
) -> Result<EdgeStats, SimError> {
    noise.validate()?;
    opts.validate()?;
    spec.validate().map_err(|e| SimError::Decode(e.into()))?;
    let results: Vec<Option<([f64; 4], f64)>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (gt, proposal))| {
            let hs = render_heatmaps_for(Some(gt), proposal, spec, noise, &[i as u64]);
            decode_detection(&hs, proposal, spec, opts)
                .ok()
                .map(|b| (edge_errors(&b, gt), iou(&b, gt)))
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let (errors, ious): (Vec<[f64; 4]>, Vec<f64>) = results.into_iter().flatten().unzip();
    Ok(EdgeStats::from_errors(&errors, &ious, failures))
}

/// One selected proposal under one grid variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub variant: String,
    pub image_id: u64,
    pub proposal: usize,
    pub class_id: u32,
    pub score: f64,
    pub proposal_box: BBox,
    pub target_iou: f64,
    pub decoded_box: BBox,
    pub decoded_iou: f64,
    pub decoded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub label: String,
    pub spec: GridSpec,
    /// Localization on selected proposals with IoU > 0.5 to their object.
    pub localization: EdgeStats,
    pub detection: EvalResult,
    /// Selected proposals whose grid decode failed and kept the proposal box.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenes: usize,
    pub selected: usize,
    pub positive_pairs: usize,
    /// Proposal boxes passed through unchanged.
    pub proposal_baseline: EvalResult,
    pub variants: Vec<VariantMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub records: Vec<ProposalRecord>,
}

struct SelectedItem {
    image_id: u64,
    scene: usize,
    flat: usize,
    item: ScoredBox,
    target: Option<usize>,
    target_iou: f64,
}

/// Runs NMS-once selection on every scene, then decodes the selection under
/// each grid variant and evaluates localization and detection AP.
pub fn run_experiment(
    scenes: &[Scene],
    variants: &[GridSpec],
    noise: &NoiseModel,
    pipeline: &PipelineConfig,
    opts: &DecodeOptions,
) -> Result<ExperimentOutput, SimError> {
    if scenes.is_empty() {
        return Err(SimError::Empty("scene"));
    }
    if variants.is_empty() {
        return Err(SimError::Empty("grid variant"));
    }
    noise.validate()?;
    opts.validate()?;
    for v in variants {
        v.validate().map_err(|e| SimError::Decode(e.into()))?;
    }

    let selected: Vec<SelectedItem> = scenes
        .par_iter()
        .enumerate()
        .map(|(s, scene)| {
            let (items, _) = scene.scored_boxes(0.0);
            pipeline_plus(&items, pipeline)
                .detections
                .into_iter()
                .map(|sel| {
                    let (target, target_iou) = match best_match(&sel.item.bbox, &scene.objects) {
                        Some((k, v)) if v > 0.0 => (Some(k), v),
                        _ => (None, 0.0),
                    };
                    SelectedItem {
                        image_id: scene.image_id,
                        scene: s,
                        flat: sel.index,
                        item: sel.item,
                        target,
                        target_iou,
                    }
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();

    let gts: Vec<GroundTruth> = scenes.iter().flat_map(Scene::ground_truth).collect();
    let areas = AreaRanges::default();
    let baseline_dets: Vec<Detection> = selected
        .iter()
        .map(|s| Detection {
            image_id: s.image_id,
            class_id: s.item.class_id,
            score: s.item.score,
            bbox: s.item.bbox,
        })
        .collect();
    let proposal_baseline = evaluate(&baseline_dets, &gts, &areas);
    let positive_pairs = selected.iter().filter(|s| s.target_iou > 0.5).count();

    let mut records = Vec::new();
    let mut metrics = Vec::new();
    for spec in variants {
        let label = spec.label();
        let decoded: Vec<Result<BBox, DecodeError>> = selected
            .par_iter()
            .map(|s| {
                let gt = s.target.map(|k| &scenes[s.scene].objects[k].bbox);
                let stream = [s.image_id, s.flat as u64];
                let hs = render_heatmaps_for(gt, &s.item.bbox, spec, noise, &stream);
                decode_detection(&hs, &s.item.bbox, spec, opts)
            })
            .collect();

        let mut errors = Vec::new();
        let mut ious = Vec::new();
        let mut failures = 0;
        let mut fallbacks = 0;
        let mut dets = Vec::with_capacity(selected.len());
        for (s, d) in selected.iter().zip(&decoded) {
            let gt = s.target.map(|k| scenes[s.scene].objects[k].bbox);
            let final_box = match d {
                Ok(b) => *b,
                Err(_) => {
                    fallbacks += 1;
                    s.item.bbox
                }
            };
            if s.target_iou > 0.5 {
                let g = gt.expect("positive pair has a target");
                match d {
                    Ok(b) => {
                        errors.push(edge_errors(b, &g));
                        ious.push(iou(b, &g));
                    }
                    Err(_) => failures += 1,
                }
            }
            dets.push(Detection {
                image_id: s.image_id,
                class_id: s.item.class_id,
                score: s.item.score,
                bbox: final_box,
            });
            records.push(ProposalRecord {
                variant: label.clone(),
                image_id: s.image_id,
                proposal: s.flat,
                class_id: s.item.class_id,
                score: s.item.score,
                proposal_box: s.item.bbox,
                target_iou: s.target_iou,
                decoded_box: final_box,
                decoded_iou: gt.map(|g| iou(&final_box, &g)).unwrap_or(0.0),
                decoded: d.is_ok(),
            });
        }
        metrics.push(VariantMetrics {
            label,
            spec: *spec,
            localization: EdgeStats::from_errors(&errors, &ious, failures),
            detection: evaluate(&dets, &gts, &areas),
            fallbacks,
        });
    }

    Ok(ExperimentOutput {
        report: ExperimentReport {
            scenes: scenes.len(),
            selected: selected.len(),
            positive_pairs,
            proposal_baseline,
            variants: metrics,
        },
        records,
    })
}
