use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use gridloc_core::decoding::decode_detection;
use gridloc_core::eval::{evaluate, parse_detections, parse_ground_truth, AreaRanges, EvalResult};
use gridloc_core::headshape::{
    build_original_head, build_plus_head_with, validate_groups, FusionPlacement, HeadLedger, CONV_NORM_GROUPS,
    DECONV_NORM_GROUPS,
};
use gridloc_core::nms::{pipeline_original, pipeline_plus};
use gridloc_core::sampler::{allocate_quotas, batch_count_variance, SamplingMode, VarianceReport};
use gridloc_core::simulator::{
    best_match, generate_scenes, render_heatmaps_for, run_experiment, ExperimentReport, Scene,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{ensure_dir, to_csv, write_atomic, write_json};
use crate::{Failure, Placement, RunArgs};

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{e}"))
}

fn resolve(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scenes_for(cfg: &RunConfig) -> Result<Vec<Scene>, Failure> {
    generate_scenes(&cfg.scenes, cfg.scene_seed()).map_err(usage)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

#[derive(Serialize)]
struct Metrics<'a> {
    seed: u64,
    config: &'a RunConfig,
    report: &'a ExperimentReport,
}

/// One CSV row per (variant, selected proposal).
#[derive(Serialize)]
struct ProposalRow<'a> {
    variant: &'a str,
    image_id: u64,
    proposal: usize,
    class_id: u32,
    score: f64,
    proposal_x1: f64,
    proposal_y1: f64,
    proposal_x2: f64,
    proposal_y2: f64,
    target_iou: f64,
    decoded_x1: f64,
    decoded_y1: f64,
    decoded_x2: f64,
    decoded_y2: f64,
    decoded_iou: f64,
    decoded: bool,
}

pub fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let scenes = scenes_for(&cfg)?;
    let out = run_experiment(&scenes, &cfg.grid, &cfg.noise_model(), &cfg.pipeline, &cfg.decode).map_err(usage)?;
    let report = &out.report;

    let rows: Vec<ProposalRow> = out
        .records
        .iter()
        .map(|r| ProposalRow {
            variant: &r.variant,
            image_id: r.image_id,
            proposal: r.proposal,
            class_id: r.class_id,
            score: r.score,
            proposal_x1: r.proposal_box.x1,
            proposal_y1: r.proposal_box.y1,
            proposal_x2: r.proposal_box.x2,
            proposal_y2: r.proposal_box.y2,
            target_iou: r.target_iou,
            decoded_x1: r.decoded_box.x1,
            decoded_y1: r.decoded_box.y1,
            decoded_x2: r.decoded_box.x2,
            decoded_y2: r.decoded_box.y2,
            decoded_iou: r.decoded_iou,
            decoded: r.decoded,
        })
        .collect();
    ensure_dir(&cfg.out_dir)?;
    let metrics = Metrics {
        seed: cfg.seed,
        config: &cfg,
        report,
    };
    let m = write_json(&cfg.out_dir, "metrics.json", &metrics)?;
    let p = write_atomic(&cfg.out_dir, "proposals.csv", &to_csv(&rows)?)?;

    if args.json {
        print_json(&metrics);
        return Ok(());
    }
    println!(
        "{} scenes, {} selected proposals, {} with IoU > 0.5 to an object (seed {})",
        report.scenes, report.selected, report.positive_pairs, cfg.seed
    );
    println!(
        "{:<16} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "variant", "edge err", "mean IoU", "failures", "AP", "AP50", "AP75", "APs"
    );
    let b = &report.proposal_baseline;
    println!(
        "{:<16} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "proposals",
        "-",
        "-",
        "-",
        fmt_ap(b.ap),
        fmt_ap(b.ap50),
        fmt_ap(b.ap75),
        fmt_ap(b.ap_small)
    );
    for v in &report.variants {
        let d = &v.detection;
        println!(
            "{:<16} {:>10.4} {:>9.4} {:>9} {:>8} {:>8} {:>8} {:>8}",
            v.label,
            v.localization.mean_edge_error,
            v.localization.mean_iou,
            v.localization.decode_failures,
            fmt_ap(d.ap),
            fmt_ap(d.ap50),
            fmt_ap(d.ap75),
            fmt_ap(d.ap_small)
        );
    }
    println!("wrote {} and {}", m.display(), p.display());
    Ok(())
}

#[derive(Serialize)]
struct FlopsReport {
    channels: usize,
    n_points: usize,
    fusion: FusionPlacement,
    plus: HeadLedger,
    original: HeadLedger,
    ratio: f64,
}

fn print_ledger(l: &HeadLedger) {
    println!("{} head", l.name);
    println!(
        "  {:<12} {:<14} {:>16} {:>12} {:>15}",
        "layer", "kind", "output (c,h,w)", "params", "MACs"
    );
    for r in &l.rows {
        let (c, h, w) = r.output_shape;
        println!(
            "  {:<12} {:<14} {:>16} {:>12} {:>15}",
            r.name,
            format!("{:?}", r.kind),
            format!("{c}x{h}x{w}"),
            r.params,
            r.macs
        );
    }
    println!(
        "  {:<12} {:<14} {:>16} {:>12} {:>15}",
        "total", "", "", l.total_params, l.total_macs
    );
}

pub fn flops(
    channels: usize,
    n_points: usize,
    fusion: Placement,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let rule = format!(
        "group normalization uses {CONV_NORM_GROUPS} groups after convolutions and {DECONV_NORM_GROUPS} after \
         deconvolutions; each group count must be a multiple of the number of grid points and must divide the \
         channel width (e.g. 576 channels with 9 points)"
    );
    let placement = match fusion {
        Placement::Before => FusionPlacement::BeforeDeconv,
        Placement::After => FusionPlacement::AfterDeconv,
    };
    let plus = build_plus_head_with(channels, n_points, placement).map_err(|e| usage(format!("{e}\nrule: {rule}")))?;
    let original = build_original_head(channels, n_points).map_err(|e| usage(format!("{e}\nrule: {rule}")))?;
    let violations = validate_groups(&plus, n_points, CONV_NORM_GROUPS, DECONV_NORM_GROUPS);
    if !violations.is_empty() {
        let list: Vec<String> = violations
            .iter()
            .map(|v| match &v.layer {
                Some(l) => format!("{l}: {}", v.message),
                None => v.message.clone(),
            })
            .collect();
        return Err(usage(format!(
            "channels {channels} with {n_points} grid points violates the group constraint:\n  {}\nrule: {rule}",
            list.join("\n  ")
        )));
    }
    let plus = plus.ledger().map_err(usage)?;
    let original = original.ledger().map_err(usage)?;
    let report = FlopsReport {
        channels,
        n_points,
        fusion: placement,
        ratio: plus.total_macs as f64 / original.total_macs as f64,
        plus,
        original,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(dir, "flops.json", &report)?;
    }
    if json {
        print_json(&report);
    } else {
        print_ledger(&report.plus);
        println!();
        print_ledger(&report.original);
        println!();
        println!(
            "plus / original MACs: {} / {} = {:.4}",
            report.plus.total_macs, report.original.total_macs, report.ratio
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PipelineStats {
    iou_evals: u64,
    detections: usize,
    grid_inputs: usize,
    wall_time_ms: f64,
}

#[derive(Serialize)]
struct NmsBenchReport<'a> {
    seed: u64,
    config: &'a RunConfig,
    scenes: usize,
    /// Scenes in which two or more grid inputs of the original pipeline share a class.
    second_nms_nontrivial: usize,
    /// Non-trivial scenes where the single-NMS pipeline evaluated strictly fewer IoUs.
    plus_strictly_fewer: usize,
    plus: PipelineStats,
    original: PipelineStats,
}

pub fn nms_bench(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let scenes = scenes_for(&cfg)?;
    let spec = cfg.grid[0];
    let noise = cfg.noise_model();
    let mut plus = PipelineStats {
        iou_evals: 0,
        detections: 0,
        grid_inputs: 0,
        wall_time_ms: 0.0,
    };
    let mut orig = PipelineStats {
        iou_evals: 0,
        detections: 0,
        grid_inputs: 0,
        wall_time_ms: 0.0,
    };
    let (mut nontrivial, mut fewer) = (0, 0);
    for scene in &scenes {
        let (items, _) = scene.scored_boxes(0.0);

        let t = Instant::now();
        let p = pipeline_plus(&items, &cfg.pipeline);
        plus.wall_time_ms += t.elapsed().as_secs_f64() * 1e3;

        // decode outside the timed region so only selection cost is compared
        let mut decoded = HashMap::new();
        let decode = |i: usize| {
            let b = items[i].bbox;
            let gt = best_match(&b, &scene.objects)
                .filter(|m| m.1 > 0.0)
                .map(|m| scene.objects[m.0].bbox);
            let hs = render_heatmaps_for(gt.as_ref(), &b, &spec, &noise, &[scene.image_id, i as u64]);
            Some(decode_detection(&hs, &b, &spec, &cfg.decode).unwrap_or(b))
        };
        pipeline_original(&items, &cfg.original_pipeline, |i| {
            let b = decode(i);
            decoded.insert(i, b);
            b
        })
        .map_err(usage)?;
        let t = Instant::now();
        let o =
            pipeline_original(&items, &cfg.original_pipeline, |i| decoded.get(&i).copied().flatten()).map_err(usage)?;
        orig.wall_time_ms += t.elapsed().as_secs_f64() * 1e3;

        for (stats, run) in [(&mut plus, &p), (&mut orig, &o)] {
            stats.iou_evals += run.count_pairwise_iou_evals();
            stats.detections += run.detections.len();
            stats.grid_inputs += run.grid_inputs.len();
        }
        let mut classes: Vec<u32> = o.grid_inputs.iter().map(|&i| items[i].class_id).collect();
        classes.sort_unstable();
        if classes.windows(2).any(|w| w[0] == w[1]) {
            nontrivial += 1;
            if p.count_pairwise_iou_evals() < o.count_pairwise_iou_evals() {
                fewer += 1;
            }
        }
    }
    let report = NmsBenchReport {
        seed: cfg.seed,
        config: &cfg,
        scenes: scenes.len(),
        second_nms_nontrivial: nontrivial,
        plus_strictly_fewer: fewer,
        plus,
        original: orig,
    };
    ensure_dir(&cfg.out_dir)?;
    let path = write_json(&cfg.out_dir, "nms_bench.json", &report)?;
    if args.json {
        print_json(&report);
        return Ok(());
    }
    println!("{} scenes (seed {})", report.scenes, cfg.seed);
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "pipeline", "IoU evals", "grid inputs", "detections", "time (ms)"
    );
    for (name, s) in [("plus", &report.plus), ("original", &report.original)] {
        println!(
            "{:<10} {:>12} {:>12} {:>12} {:>12.3}",
            name, s.iou_evals, s.grid_inputs, s.detections, s.wall_time_ms
        );
    }
    println!("single NMS evaluated fewer IoUs in {fewer} of {nontrivial} scenes with a non-trivial second NMS");
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct QuotaExample {
    pools: [usize; 2],
    across_images: Vec<usize>,
    per_image: Vec<usize>,
}

#[derive(Serialize)]
struct SampleStatsReport<'a> {
    seed: u64,
    config: &'a RunConfig,
    example: Option<QuotaExample>,
    variance: VarianceReport,
    /// across-images variance / per-image variance.
    variance_ratio: Option<f64>,
}

pub fn sample_stats(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let s = &cfg.sampler;
    let variance = batch_count_variance(&s.distribution, &s.budget, s.trials, cfg.sampler_seed()).map_err(usage)?;
    let example = (s.budget.images_per_batch == 2).then(|| QuotaExample {
        pools: [10, 500],
        across_images: allocate_quotas(&[10, 500], &s.budget.with_mode(SamplingMode::AcrossImages)),
        per_image: allocate_quotas(&[10, 500], &s.budget.with_mode(SamplingMode::PerImage)),
    });
    let ratio =
        (variance.per_image.variance > 0.0).then(|| variance.across_images.variance / variance.per_image.variance);
    let report = SampleStatsReport {
        seed: cfg.seed,
        config: &cfg,
        example,
        variance,
        variance_ratio: ratio,
    };
    ensure_dir(&cfg.out_dir)?;
    let path = write_json(&cfg.out_dir, "sample_stats.json", &report)?;
    if args.json {
        print_json(&report);
        return Ok(());
    }
    let v = &report.variance;
    println!("{} simulated batches (seed {})", v.trials, cfg.seed);
    println!("{:<14} {:>12} {:>12}", "mode", "mean total", "variance");
    println!(
        "{:<14} {:>12.3} {:>12.3}",
        "across images", v.across_images.mean, v.across_images.variance
    );
    println!(
        "{:<14} {:>12.3} {:>12.3}",
        "per image", v.per_image.mean, v.per_image.variance
    );
    if let Some(e) = &report.example {
        println!(
            "pools {:?}: across images {:?}, per image {:?}",
            e.pools, e.across_images, e.per_image
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    detections: PathBuf,
    ground_truth: PathBuf,
    result: EvalResult,
}

pub fn eval(dets: &Path, gts: &Path, out: Option<&Path>, json: bool) -> Result<(), Failure> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())));
    let d = parse_detections(&read(dets)?).map_err(|e| usage(format!("{}: {e}", dets.display())))?;
    let g = parse_ground_truth(&read(gts)?).map_err(|e| usage(format!("{}: {e}", gts.display())))?;
    let report = EvalReport {
        detections: dets.to_path_buf(),
        ground_truth: gts.to_path_buf(),
        result: evaluate(&d, &g, &AreaRanges::default()),
    };
    let dir = out.map_or_else(|| PathBuf::from("gridloc-out"), Path::to_path_buf);
    ensure_dir(&dir)?;
    let path = write_json(&dir, "eval.json", &report)?;
    if json {
        print_json(&report);
        return Ok(());
    }
    let r = &report.result;
    println!("{} detections, {} ground-truth boxes", r.n_detections, r.n_ground_truth);
    for (name, v) in [
        ("AP", r.ap),
        ("AP50", r.ap50),
        ("AP75", r.ap75),
        ("APs", r.ap_small),
        ("APm", r.ap_medium),
        ("APl", r.ap_large),
    ] {
        println!("{name:<5} {}", fmt_ap(v));
    }
    println!("wrote {}", path.display());
    Ok(())
}
