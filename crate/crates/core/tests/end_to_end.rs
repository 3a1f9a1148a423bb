use gridloc_core::decoding::decode_detection;
use gridloc_core::encoding::{encode_targets, DEFAULT_POSITIVE_RADIUS};
use gridloc_core::eval::{evaluate, AreaRanges, Detection};
use gridloc_core::geometry::{iou, GridIndex};
use gridloc_core::nms::pipeline_plus;
use gridloc_core::simulator::{generate_scenes, positive_pairs, render_heatmaps, run_experiment, SceneParams};
use gridloc_core::{BBox, DecodeOptions, GridSpec, NoiseModel, PipelineConfig};

#[test]
fn rendered_peaks_sit_on_encoded_targets_and_decode_back() {
    let spec = GridSpec::default();
    for (k, (gt, p)) in positive_pairs(200, 0.5, 21).iter().enumerate() {
        let targets = encode_targets(gt, p, &spec, DEFAULT_POSITIVE_RADIUS).unwrap();
        let maps = render_heatmaps(gt, p, &spec, &NoiseModel::zero(k as u64)).unwrap();
        for (t, h) in targets.iter().zip(&maps) {
            match t.cell {
                Some(c) => {
                    let (cx, cy, v) = h.argmax().unwrap();
                    assert_eq!((cx, cy, v), (c.cx, c.cy, 1.0));
                }
                None => assert_eq!(h.max(), 0.0),
            }
        }
        if targets.iter().all(|t| t.covered) {
            let b = decode_detection(&maps, p, &spec, &DecodeOptions::default()).unwrap();
            assert!(iou(&b, gt) > 0.9, "{b:?} vs {gt:?}");
        }
    }
    assert_eq!(GridIndex::all(3).count(), spec.n_points());
}

#[test]
fn perfect_detections_on_generated_scenes_score_one() {
    let scenes = generate_scenes(
        &SceneParams {
            count: 5,
            ..SceneParams::default()
        },
        8,
    )
    .unwrap();
    let gts: Vec<_> = scenes.iter().flat_map(|s| s.ground_truth()).collect();
    let dets: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| Detection {
            image_id: g.image_id,
            class_id: g.class_id,
            score: 1.0 - i as f64 * 1e-3,
            bbox: g.bbox,
        })
        .collect();
    let r = evaluate(&dets, &gts, &AreaRanges::default());
    assert_eq!((r.ap, r.ap50, r.ap75), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn single_nms_selection_feeds_every_variant_identically() {
    let scenes = generate_scenes(
        &SceneParams {
            count: 4,
            ..SceneParams::default()
        },
        9,
    )
    .unwrap();
    let selected: usize = scenes
        .iter()
        .map(|s| {
            pipeline_plus(&s.scored_boxes(0.0).0, &PipelineConfig::PLUS)
                .detections
                .len()
        })
        .sum();
    let variants = [GridSpec::quarter(28), GridSpec::whole(56)];
    let out = run_experiment(
        &scenes,
        &variants,
        &NoiseModel::moderate(1),
        &PipelineConfig::PLUS,
        &DecodeOptions::default(),
    )
    .unwrap();
    assert_eq!(out.report.selected, selected);
    assert_eq!(out.records.len(), selected * variants.len());
    for v in &out.report.variants {
        assert_eq!(v.detection.n_detections, selected);
        let ap75 = v.detection.ap75.unwrap();
        assert!(ap75 >= out.report.proposal_baseline.ap75.unwrap());
    }
    // records index the flattened (proposal, class) list of their scene
    for r in out.records.iter().step_by(37) {
        let scene = scenes.iter().find(|s| s.image_id == r.image_id).unwrap();
        let (items, owner) = scene.scored_boxes(0.0);
        let b: BBox = scene.proposals[owner[r.proposal]].bbox;
        assert_eq!(b, r.proposal_box);
        assert_eq!(items[r.proposal].class_id, r.class_id);
    }
}
