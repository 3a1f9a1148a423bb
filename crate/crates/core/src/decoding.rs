//! Heatmap decoding: per-point estimators, neighbour fusion and box assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    cell_center, cell_size, grid_point, representation_region, BBox, GeometryError, GridIndex, GridSpec, Point,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("heatmap has no positive value")]
    NoPeak,
    #[error("no valid grid point on the {0} border")]
    IncompleteGrid(&'static str),
    #[error("expected {expected} heatmaps, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("heatmap resolution {got} does not match {expected}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
    #[error("invalid decode options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Probability map of one grid point, row-major `resolution x resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub grid_index: GridIndex,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(grid_index: GridIndex, resolution: usize) -> Self {
        Heatmap {
            grid_index,
            resolution,
            values: vec![0.0; resolution * resolution],
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.resolution == 0 || self.values.len() != self.resolution * self.resolution {
            return Err(DecodeError::InvalidHeatmap(format!(
                "{} values for resolution {}",
                self.values.len(),
                self.resolution
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(DecodeError::InvalidHeatmap(format!("value {v} outside [0, 1]")));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.resolution + cx]
    }

    #[inline]
    pub fn set(&mut self, cx: usize, cy: usize, v: f64) {
        self.values[cy * self.resolution + cx] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Maximum cell, first in row-major order on ties.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        best.map(|(k, v)| (k % self.resolution, k / self.resolution, v))
    }

    /// Copy translated by `(dx, dy)` cells; vacated cells are zero.
    pub fn shifted(&self, dx: i64, dy: i64) -> Heatmap {
        let r = self.resolution as i64;
        let mut out = Heatmap::zeros(self.grid_index, self.resolution);
        for cy in 0..r {
            let sy = cy - dy;
            if !(0..r).contains(&sy) {
                continue;
            }
            for cx in 0..r {
                let sx = cx - dx;
                if (0..r).contains(&sx) {
                    out.values[(cy * r + cx) as usize] = self.values[(sy * r + sx) as usize];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedPoint {
    pub location: Point,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Estimator {
    Argmax,
    /// Probability-weighted mean over cells with value `>= support * max`.
    Expectation {
        support: f64,
    },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Expectation { support: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub w_self: f64,
    pub w_nbr: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            w_self: 1.0,
            w_nbr: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeOptions {
    pub estimator: Estimator,
    /// `None` decodes the raw heatmaps.
    pub fusion: Option<FusionWeights>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            estimator: Estimator::default(),
            fusion: Some(FusionWeights::default()),
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if let Estimator::Expectation { support } = self.estimator {
            if !(support > 0.0 && support <= 1.0) {
                return Err(DecodeError::InvalidOptions(format!("support {support} not in (0, 1]")));
            }
        }
        if let Some(w) = self.fusion {
            if !(w.w_self >= 0.0 && w.w_nbr >= 0.0 && w.w_self.is_finite() && w.w_nbr.is_finite()) {
                return Err(DecodeError::InvalidOptions(
                    "fusion weights must be finite and >= 0".into(),
                ));
            }
            if w.w_self + w.w_nbr <= 0.0 {
                return Err(DecodeError::InvalidOptions("fusion weights sum to zero".into()));
            }
        }
        Ok(())
    }
}

/// Locates one grid point from its heatmap over `region`.
pub fn decode_point(h: &Heatmap, region: &BBox, estimator: Estimator) -> Result<DecodedPoint, DecodeError> {
    let (cx, cy, peak) = h.argmax().ok_or(DecodeError::NoPeak)?;
    if peak <= 0.0 {
        return Err(DecodeError::NoPeak);
    }
    let res = h.resolution;
    let location = match estimator {
        Estimator::Argmax => cell_center(cx as f64, cy as f64, region, res),
        Estimator::Expectation { support } => {
            let floor = support * peak;
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for (k, &v) in h.values.iter().enumerate() {
                if v >= floor {
                    sw += v;
                    sx += v * (k % res) as f64;
                    sy += v * (k / res) as f64;
                }
            }
            cell_center(sx / sw, sy / sw, region, res)
        }
    };
    Ok(DecodedPoint {
        location,
        confidence: peak,
    })
}

/// Cell offset between the representation-region origins of two grid points
/// (`to` minus `from`).
pub fn origin_offset_cells(proposal: &BBox, from: GridIndex, to: GridIndex, spec: &GridSpec) -> (i64, i64) {
    let a = representation_region(proposal, from, spec);
    let b = representation_region(proposal, to, spec);
    let (cw, ch) = cell_size(&a, spec.heatmap_resolution);
    (((b.x1 - a.x1) / cw).round() as i64, ((b.y1 - a.y1) / ch).round() as i64)
}

/// Translation that carries neighbour `from`'s heatmap into the frame of grid
/// point `to`, such that a peak at `from`'s expected location lands on `to`'s
/// expected location.
pub fn alignment_shift_cells(proposal: &BBox, from: GridIndex, to: GridIndex, spec: &GridSpec) -> (i64, i64) {
    let n = spec.points_per_side;
    let a = representation_region(proposal, from, spec);
    let (cw, ch) = cell_size(&a, spec.heatmap_resolution);
    let pa = grid_point(proposal, n, from);
    let pb = grid_point(proposal, n, to);
    let (ox, oy) = origin_offset_cells(proposal, from, to, spec);
    (
        ((pb.x - pa.x) / cw).round() as i64 - ox,
        ((pb.y - pa.y) / ch).round() as i64 - oy,
    )
}

/// One pass of first-order neighbour fusion.
///
/// Each output map is `(w_self * H_i + w_nbr * sum_k shift(H_k)) / (w_self + k * w_nbr)`
/// over the 4-connected neighbours `k`, then divided by its maximum if that
/// still exceeds 1.
pub fn fuse_heatmaps(
    hs: &[Heatmap],
    proposal: &BBox,
    spec: &GridSpec,
    weights: FusionWeights,
) -> Result<Vec<Heatmap>, DecodeError> {
    check_set(hs, spec)?;
    let n = spec.points_per_side;
    let res = spec.heatmap_resolution;
    let out = GridIndex::all(n)
        .map(|idx| {
            let own = &hs[idx.flat(n)];
            let nbrs = idx.neighbours(n);
            let norm = weights.w_self + nbrs.len() as f64 * weights.w_nbr;
            let mut acc: Vec<f64> = own.values.iter().map(|v| weights.w_self * v).collect();
            if weights.w_nbr > 0.0 {
                for k in nbrs {
                    let (dx, dy) = alignment_shift_cells(proposal, k, idx, spec);
                    let moved = hs[k.flat(n)].shifted(dx, dy);
                    for (a, v) in acc.iter_mut().zip(&moved.values) {
                        *a += weights.w_nbr * v;
                    }
                }
            }
            for a in acc.iter_mut() {
                *a /= norm;
            }
            let peak = acc.iter().copied().fold(0.0, f64::max);
            if peak > 1.0 {
                for a in acc.iter_mut() {
                    *a /= peak;
                }
            }
            Heatmap {
                grid_index: idx,
                resolution: res,
                values: acc,
            }
        })
        .collect();
    Ok(out)
}

/// Assembles a box from decoded grid points (row-major, `None` for missing).
///
/// Each edge is the confidence-weighted mean of the points on that border.
pub fn points_to_box(points: &[Option<DecodedPoint>], n: usize) -> Result<BBox, DecodeError> {
    if points.len() != n * n {
        return Err(DecodeError::WrongCount {
            expected: n * n,
            got: points.len(),
        });
    }
    let weighted = |name: &'static str, sel: &dyn Fn(GridIndex) -> bool, coord: &dyn Fn(Point) -> f64| {
        let (mut sw, mut s) = (0.0, 0.0);
        let mut reference = None;
        for (k, p) in points.iter().enumerate() {
            if let Some(p) = p {
                if sel(GridIndex::from_flat(k, n)) && p.confidence > 0.0 {
                    // offsets from the first point keep agreeing coordinates exact
                    let r = *reference.get_or_insert(coord(p.location));
                    sw += p.confidence;
                    s += p.confidence * (coord(p.location) - r);
                }
            }
        }
        match reference {
            Some(r) if sw > 0.0 => Ok(r + s / sw),
            _ => Err(DecodeError::IncompleteGrid(name)),
        }
    };
    let left = weighted("left", &|g| g.col == 0, &|p| p.x)?;
    let top = weighted("top", &|g| g.row == 0, &|p| p.y)?;
    let right = weighted("right", &|g| g.col == n - 1, &|p| p.x)?;
    let bottom = weighted("bottom", &|g| g.row == n - 1, &|p| p.y)?;
    Ok(BBox::from_corners(Point::new(left, top), Point::new(right, bottom)))
}

/// Decodes every grid point of one proposal; points without a peak are `None`.
pub fn decode_grid_points(
    hs: &[Heatmap],
    proposal: &BBox,
    spec: &GridSpec,
    opts: &DecodeOptions,
) -> Result<Vec<Option<DecodedPoint>>, DecodeError> {
    opts.validate()?;
    check_set(hs, spec)?;
    let fused;
    let maps = match opts.fusion {
        Some(w) => {
            fused = fuse_heatmaps(hs, proposal, spec, w)?;
            &fused
        }
        None => hs,
    };
    let n = spec.points_per_side;
    maps.iter()
        .enumerate()
        .map(|(k, h)| {
            let region = representation_region(proposal, GridIndex::from_flat(k, n), spec);
            match decode_point(h, &region, opts.estimator) {
                Ok(p) => Ok(Some(p)),
                Err(DecodeError::NoPeak) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Full decode for one proposal: optional fusion, per-point estimate, box assembly.
pub fn decode_detection(
    hs: &[Heatmap],
    proposal: &BBox,
    spec: &GridSpec,
    opts: &DecodeOptions,
) -> Result<BBox, DecodeError> {
    let points = decode_grid_points(hs, proposal, spec, opts)?;
    points_to_box(&points, spec.points_per_side)
}

fn check_set(hs: &[Heatmap], spec: &GridSpec) -> Result<(), DecodeError> {
    spec.validate()?;
    let expected = spec.n_points();
    if hs.len() != expected {
        return Err(DecodeError::WrongCount {
            expected,
            got: hs.len(),
        });
    }
    for h in hs {
        if h.resolution != spec.heatmap_resolution {
            return Err(DecodeError::ResolutionMismatch {
                expected: spec.heatmap_resolution,
                got: h.resolution,
            });
        }
        h.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point_to_cell, Cell};
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn delta_maps(gt: &BBox, proposal: &BBox, spec: &GridSpec) -> Vec<Heatmap> {
        let n = spec.points_per_side;
        GridIndex::all(n)
            .map(|idx| {
                let mut h = Heatmap::zeros(idx, spec.heatmap_resolution);
                let region = representation_region(proposal, idx, spec);
                if let Ok(c) = point_to_cell(grid_point(gt, n, idx), &region, spec.heatmap_resolution) {
                    h.set(c.cx, c.cy, 1.0);
                }
                h
            })
            .collect()
    }

    #[test]
    fn delta_peak_decodes_to_cell_center() {
        let mut h = Heatmap::zeros(GridIndex::new(0, 0), 28);
        h.set(14, 14, 1.0);
        let region = b(0.0, 0.0, 28.0, 28.0);
        for est in [Estimator::Argmax, Estimator::default()] {
            let p = decode_point(&h, &region, est).unwrap();
            assert_eq!(p.location, Point::new(14.5, 14.5));
            assert_eq!(p.confidence, 1.0);
        }
    }

    #[test]
    fn two_equal_peaks_expectation() {
        let mut h = Heatmap::zeros(GridIndex::new(0, 0), 28);
        h.set(10, 10, 1.0);
        h.set(12, 10, 1.0);
        let region = b(0.0, 0.0, 28.0, 28.0);
        let p = decode_point(&h, &region, Estimator::Expectation { support: 0.5 }).unwrap();
        assert_eq!(p.location, Point::new(11.5, 10.5));
        // argmax breaks ties to the first row-major cell
        let a = decode_point(&h, &region, Estimator::Argmax).unwrap();
        assert_eq!(a.location, Point::new(10.5, 10.5));
    }

    #[test]
    fn low_values_outside_support_are_ignored() {
        let mut h = Heatmap::zeros(GridIndex::new(0, 0), 8);
        h.set(2, 2, 0.8);
        h.set(6, 6, 0.3);
        let region = b(0.0, 0.0, 8.0, 8.0);
        let p = decode_point(&h, &region, Estimator::Expectation { support: 0.5 }).unwrap();
        assert_eq!(p.location, Point::new(2.5, 2.5));
        assert_eq!(p.confidence, 0.8);
    }

    #[test]
    fn all_zero_is_no_peak() {
        let h = Heatmap::zeros(GridIndex::new(0, 0), 28);
        assert_eq!(
            decode_point(&h, &b(0.0, 0.0, 1.0, 1.0), Estimator::Argmax),
            Err(DecodeError::NoPeak)
        );
    }

    #[test]
    fn quarter_neighbour_origin_offset_is_half_map() {
        let proposal = b(10.0, 20.0, 70.0, 60.0);
        let spec = GridSpec::default();
        assert_eq!(
            origin_offset_cells(&proposal, GridIndex::new(0, 0), GridIndex::new(0, 1), &spec),
            (14, 0)
        );
        assert_eq!(
            origin_offset_cells(&proposal, GridIndex::new(1, 1), GridIndex::new(2, 1), &spec),
            (0, 14)
        );
        // in quarter mode the window moves with the point, so no extra alignment is needed
        assert_eq!(
            alignment_shift_cells(&proposal, GridIndex::new(0, 0), GridIndex::new(0, 1), &spec),
            (0, 0)
        );
        // whole mode: shared region, shift equals the grid spacing in cells
        let whole = GridSpec::whole(56);
        assert_eq!(
            origin_offset_cells(&proposal, GridIndex::new(0, 0), GridIndex::new(0, 1), &whole),
            (0, 0)
        );
        assert_eq!(
            alignment_shift_cells(&proposal, GridIndex::new(0, 0), GridIndex::new(0, 1), &whole),
            (14, 0)
        );
    }

    #[test]
    fn fusion_without_neighbour_weight_is_identity() {
        let gt = b(11.0, 23.0, 67.0, 58.0);
        let proposal = b(10.0, 20.0, 70.0, 60.0);
        let spec = GridSpec::default();
        let hs = delta_maps(&gt, &proposal, &spec);
        let fused = fuse_heatmaps(
            &hs,
            &proposal,
            &spec,
            FusionWeights {
                w_self: 1.0,
                w_nbr: 0.0,
            },
        )
        .unwrap();
        assert_eq!(fused, hs);
    }

    #[test]
    fn consistent_peaks_keep_argmax_after_fusion() {
        let gt = b(11.0, 23.0, 67.0, 58.0);
        let proposal = b(10.0, 20.0, 70.0, 60.0);
        for spec in [GridSpec::quarter(28), GridSpec::whole(56)] {
            let hs = delta_maps(&gt, &proposal, &spec);
            let fused = fuse_heatmaps(&hs, &proposal, &spec, FusionWeights::default()).unwrap();
            for (h, f) in hs.iter().zip(&fused) {
                let (ax, ay, _) = h.argmax().unwrap();
                let (fx, fy, _) = f.argmax().unwrap();
                assert_eq!((ax, ay), (fx, fy));
                assert!(f.max() <= 1.0);
            }
        }
    }

    #[test]
    fn fusion_suppresses_lone_false_peak() {
        // every map peaks at the true cell except the centre one, which has a
        // slightly stronger spurious peak; the neighbours outvote it
        let gt = b(10.0, 20.0, 70.0, 60.0);
        let spec = GridSpec::default();
        let mut hs = delta_maps(&gt, &gt, &spec);
        for h in hs.iter_mut() {
            h.values.iter_mut().for_each(|v| *v *= 0.9);
        }
        hs[4].set(3, 3, 1.0);
        let raw = decode_point(
            &hs[4],
            &representation_region(&gt, GridIndex::new(1, 1), &spec),
            Estimator::Argmax,
        )
        .unwrap();
        let fused = fuse_heatmaps(&hs, &gt, &spec, FusionWeights::default()).unwrap();
        let (fx, fy, _) = fused[4].argmax().unwrap();
        assert_eq!((fx, fy), (14, 14));
        assert_ne!(raw.location, gt.center());
    }

    #[test]
    fn fusion_rejects_mismatched_resolution() {
        let spec = GridSpec::default();
        let mut hs: Vec<Heatmap> = GridIndex::all(3).map(|i| Heatmap::zeros(i, 28)).collect();
        hs[3] = Heatmap::zeros(GridIndex::new(1, 0), 56);
        let r = fuse_heatmaps(&hs, &b(0.0, 0.0, 1.0, 1.0), &spec, FusionWeights::default());
        assert!(matches!(r, Err(DecodeError::ResolutionMismatch { .. })));
    }

    #[test]
    fn points_to_box_examples() {
        let gt = b(2.0, 4.0, 10.0, 12.0);
        let pts: Vec<_> = crate::geometry::grid_point_locations(&gt, 3)
            .into_iter()
            .map(|p| {
                Some(DecodedPoint {
                    location: p,
                    confidence: 0.7,
                })
            })
            .collect();
        assert_eq!(points_to_box(&pts, 3).unwrap(), gt);

        let mut pts2 = pts.clone();
        for (k, x, c) in [(0usize, 9.0, 1.0), (3, 10.0, 2.0), (6, 11.0, 1.0)] {
            pts2[k] = Some(DecodedPoint {
                location: Point::new(x, pts[k].unwrap().location.y),
                confidence: c,
            });
        }
        assert_eq!(points_to_box(&pts2, 3).unwrap().x1, 10.0);

        let mut pts3 = pts.clone();
        for k in [0, 3, 6] {
            pts3[k] = None;
        }
        assert_eq!(points_to_box(&pts3, 3), Err(DecodeError::IncompleteGrid("left")));
    }

    #[test]
    fn points_to_box_swaps_inverted_edges() {
        let pts: Vec<_> = GridIndex::all(2)
            .map(|g| {
                Some(DecodedPoint {
                    location: Point::new(if g.col == 0 { 5.0 } else { 1.0 }, g.row as f64),
                    confidence: 1.0,
                })
            })
            .collect();
        let bx = points_to_box(&pts, 2).unwrap();
        assert!(bx.is_valid());
        assert_eq!((bx.x1, bx.x2), (1.0, 5.0));
    }

    #[test]
    fn far_proposal_is_incomplete() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        let proposal = b(200.0, 200.0, 210.0, 210.0);
        let spec = GridSpec::default();
        let hs = delta_maps(&gt, &proposal, &spec);
        assert!(matches!(
            decode_detection(&hs, &proposal, &spec, &DecodeOptions::default()),
            Err(DecodeError::IncompleteGrid(_))
        ));
    }

    #[test]
    fn invalid_options_rejected() {
        let opts = DecodeOptions {
            estimator: Estimator::Expectation { support: 0.0 },
            fusion: None,
        };
        assert!(opts.validate().is_err());
        let opts = DecodeOptions {
            estimator: Estimator::Argmax,
            fusion: Some(FusionWeights {
                w_self: -1.0,
                w_nbr: 0.25,
            }),
        };
        assert!(opts.validate().is_err());
    }

    #[test]
    fn shifted_zero_fills() {
        let mut h = Heatmap::zeros(GridIndex::new(0, 0), 4);
        h.set(0, 0, 1.0);
        let s = h.shifted(2, 1);
        assert_eq!(s.get(2, 1), 1.0);
        assert_eq!(s.values.iter().filter(|&&v| v > 0.0).count(), 1);
        assert!(h.shifted(4, 0).values.iter().all(|&v| v == 0.0));
        let _ = Cell::new(0, 0);
    }

    fn arb_pair() -> impl Strategy<Value = (BBox, BBox)> {
        (
            20.0..200.0f64,
            20.0..200.0f64,
            -0.1..0.1f64,
            -0.1..0.1f64,
            0.9..1.1f64,
            0.9..1.1f64,
        )
            .prop_map(|(w, h, dx, dy, sw, sh)| {
                let gt = BBox::new(100.0, 100.0, 100.0 + w, 100.0 + h).unwrap();
                let c = gt.center();
                let (pw, ph) = (w * sw, h * sh);
                let cx = c.x + dx * w;
                let cy = c.y + dy * h;
                let p = BBox::new(cx - pw / 2.0, cy - ph / 2.0, cx + pw / 2.0, cy + ph / 2.0).unwrap();
                (gt, p)
            })
    }

    proptest! {
        #[test]
        fn zero_noise_decode_within_half_cell((gt, proposal) in arb_pair()) {
            for spec in [GridSpec::quarter(28), GridSpec::whole(56), GridSpec::whole(28)] {
                let hs = delta_maps(&gt, &proposal, &spec);
                let bx = decode_detection(&hs, &proposal, &spec, &DecodeOptions::default()).unwrap();
                let region = representation_region(&proposal, GridIndex::new(0, 0), &spec);
                let (cw, ch) = cell_size(&region, spec.heatmap_resolution);
                prop_assert!((bx.x1 - gt.x1).abs() <= cw / 2.0 + 1e-9);
                prop_assert!((bx.x2 - gt.x2).abs() <= cw / 2.0 + 1e-9);
                prop_assert!((bx.y1 - gt.y1).abs() <= ch / 2.0 + 1e-9);
                prop_assert!((bx.y2 - gt.y2).abs() <= ch / 2.0 + 1e-9);
            }
        }

        #[test]
        fn decode_is_translation_equivariant((gt, proposal) in arb_pair(), tx in -50i32..50, ty in -50i32..50) {
            // integer shifts keep the float arithmetic exact enough to compare tightly
            let (dx, dy) = (tx as f64 * 0.5, ty as f64 * 0.5);
            let spec = GridSpec::default();
            let hs = delta_maps(&gt, &proposal, &spec);
            let opts = DecodeOptions::default();
            let a = decode_detection(&hs, &proposal, &spec, &opts).unwrap();
            let moved = decode_detection(&hs, &proposal.translate(dx, dy), &spec, &opts).unwrap();
            for (u, v) in a.translate(dx, dy).edges().iter().zip(moved.edges()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn decode_is_scale_equivariant((gt, proposal) in arb_pair(), s in 0.25..4.0f64) {
            let spec = GridSpec::default();
            let hs = delta_maps(&gt, &proposal, &spec);
            let opts = DecodeOptions::default();
            let a = decode_detection(&hs, &proposal, &spec, &opts).unwrap();
            let scaled = decode_detection(&hs, &proposal.scale(s), &spec, &opts).unwrap();
            for (u, v) in a.scale(s).edges().iter().zip(scaled.edges()) {
                prop_assert!((u - v).abs() < 1e-9 * (1.0 + u.abs()));
            }
        }
    }
}
