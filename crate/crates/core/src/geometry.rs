//! Box geometry, extended region mapping and representation-region windows.
//!
//! All coordinates are continuous image pixels. Quantization only happens
//! when a point is mapped onto the cells of a heatmap (see [`point_to_cell`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("point ({x}, {y}) lies outside the representation region")]
    OutOfRegion { x: f64, y: f64 },
    #[error("representation region is degenerate")]
    DegenerateRegion,
    #[error("cell ({cx}, {cy}) out of range for resolution {resolution}")]
    CellOutOfRange { cx: usize, cy: usize, resolution: usize },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("grid index ({row}, {col}) out of range for {n}x{n} grid")]
    IndexOutOfRange { row: usize, col: usize, n: usize },
}

/// Axis-aligned rectangle in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox { x1, y1, x2, y2 })
        }
    }

    /// Builds a box from two corners in any order.
    pub fn from_corners(a: Point, b: Point) -> Self {
        BBox {
            x1: a.x.min(b.x),
            y1: a.y.min(b.y),
            x2: a.x.max(b.x),
            y2: a.y.max(b.y),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Half-open containment: left/top edges inclusive, right/bottom exclusive.
    pub fn contains_half_open(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x < self.x2 && p.y >= self.y1 && p.y < self.y2
    }

    /// Closed containment of another box.
    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Scales every coordinate about the origin.
    pub fn scale(&self, s: f64) -> BBox {
        BBox::from_corners(
            Point::new(self.x1 * s, self.y1 * s),
            Point::new(self.x2 * s, self.y2 * s),
        )
    }

    /// Clips the box to `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, w);
        let cy = |v: f64| v.clamp(0.0, h);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn edges(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Heatmap cell, `cx` is the column and `cy` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub cx: usize,
    pub cy: usize,
}

impl Cell {
    pub const fn new(cx: usize, cy: usize) -> Self {
        Cell { cx, cy }
    }
}

/// Intersection over union. Disjoint or degenerate boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

/// Same-center box with width and height multiplied by `factor`.
pub fn extend_region(roi: &BBox, factor: f64) -> BBox {
    let c = roi.center();
    let hw = 0.5 * roi.width() * factor;
    let hh = 0.5 * roi.height() * factor;
    BBox {
        x1: c.x - hw,
        y1: c.y - hh,
        x2: c.x + hw,
        y2: c.y + hh,
    }
}

/// Location of grid point `(row, col)` on an `n x n` grid spread over `b`.
pub fn grid_point(b: &BBox, n: usize, idx: GridIndex) -> Point {
    let step = (n - 1) as f64;
    Point::new(
        b.x1 + idx.col as f64 * b.width() / step,
        b.y1 + idx.row as f64 * b.height() / step,
    )
}

/// The `n^2` grid points of `b` in row-major order.
pub fn grid_point_locations(b: &BBox, n: usize) -> Vec<Point> {
    GridIndex::all(n).map(|idx| grid_point(b, n, idx)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl GridIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        GridIndex { row, col }
    }

    pub fn checked(row: usize, col: usize, n: usize) -> Result<Self, GeometryError> {
        if row < n && col < n {
            Ok(GridIndex { row, col })
        } else {
            Err(GeometryError::IndexOutOfRange { row, col, n })
        }
    }

    pub fn from_flat(flat: usize, n: usize) -> Self {
        GridIndex {
            row: flat / n,
            col: flat % n,
        }
    }

    pub fn flat(&self, n: usize) -> usize {
        self.row * n + self.col
    }

    /// All indices of an `n x n` grid, row-major.
    pub fn all(n: usize) -> impl Iterator<Item = GridIndex> {
        (0..n * n).map(move |k| GridIndex::from_flat(k, n))
    }

    /// First-order (4-connected) neighbours inside an `n x n` grid.
    pub fn neighbours(&self, n: usize) -> Vec<GridIndex> {
        let mut out = Vec::with_capacity(4);
        if self.row > 0 {
            out.push(GridIndex::new(self.row - 1, self.col));
        }
        if self.col > 0 {
            out.push(GridIndex::new(self.row, self.col - 1));
        }
        if self.col + 1 < n {
            out.push(GridIndex::new(self.row, self.col + 1));
        }
        if self.row + 1 < n {
            out.push(GridIndex::new(self.row + 1, self.col));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    /// Every grid point shares the extended region of the RoI.
    WholeExtended,
    /// Each grid point gets a half-extent window centred on its own location.
    PointSpecificQuarter,
}

/// Grid layout and heatmap representation configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub points_per_side: usize,
    pub heatmap_resolution: usize,
    pub mode: RepresentationMode,
    pub extension_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_side: 3,
            heatmap_resolution: 28,
            mode: RepresentationMode::PointSpecificQuarter,
            extension_factor: 2.0,
        }
    }
}

impl GridSpec {
    pub fn quarter(resolution: usize) -> Self {
        GridSpec {
            heatmap_resolution: resolution,
            mode: RepresentationMode::PointSpecificQuarter,
            ..GridSpec::default()
        }
    }

    pub fn whole(resolution: usize) -> Self {
        GridSpec {
            heatmap_resolution: resolution,
            mode: RepresentationMode::WholeExtended,
            ..GridSpec::default()
        }
    }

    pub fn with_extension(mut self, factor: f64) -> Self {
        self.extension_factor = factor;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points_per_side < 2 {
            return Err(GeometryError::InvalidSpec(format!(
                "points_per_side must be >= 2, got {}",
                self.points_per_side
            )));
        }
        if self.heatmap_resolution < 2 || !self.heatmap_resolution.is_multiple_of(2) {
            return Err(GeometryError::InvalidSpec(format!(
                "heatmap_resolution must be even and >= 2, got {}",
                self.heatmap_resolution
            )));
        }
        if !self.extension_factor.is_finite() || self.extension_factor < 1.0 {
            return Err(GeometryError::InvalidSpec(format!(
                "extension_factor must be >= 1, got {}",
                self.extension_factor
            )));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.points_per_side * self.points_per_side
    }

    /// Resolution a whole-region heatmap needs to match this spec's cell size.
    pub fn comparable_whole_resolution(&self) -> usize {
        match self.mode {
            RepresentationMode::WholeExtended => self.heatmap_resolution,
            RepresentationMode::PointSpecificQuarter => 2 * self.heatmap_resolution,
        }
    }

    /// Short label such as `quarter@28`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            RepresentationMode::WholeExtended => "whole",
            RepresentationMode::PointSpecificQuarter => "quarter",
        };
        if self.extension_factor == 2.0 {
            format!("{mode}@{}", self.heatmap_resolution)
        } else {
            format!("{mode}@{}x{}", self.heatmap_resolution, self.extension_factor)
        }
    }
}

/// Image region represented by the heatmap of grid point `idx` of `roi`.
///
/// In quarter mode the window has half the extended region's width and
/// height and is centred on the RoI's own grid point, so for a 3x3 grid the
/// corner points get exactly the corner quarters of the extended region.
pub fn representation_region(roi: &BBox, idx: GridIndex, spec: &GridSpec) -> BBox {
    let extended = extend_region(roi, spec.extension_factor);
    match spec.mode {
        RepresentationMode::WholeExtended => extended,
        RepresentationMode::PointSpecificQuarter => {
            let c = grid_point(roi, spec.points_per_side, idx);
            let hw = 0.25 * extended.width();
            let hh = 0.25 * extended.height();
            BBox {
                x1: c.x - hw,
                y1: c.y - hh,
                x2: c.x + hw,
                y2: c.y + hh,
            }
        }
    }
}

/// Width and height of one heatmap cell over `region`.
pub fn cell_size(region: &BBox, resolution: usize) -> (f64, f64) {
    (region.width() / resolution as f64, region.height() / resolution as f64)
}

/// Quantizes `p` onto the `resolution x resolution` cells over `region`.
pub fn point_to_cell(p: Point, region: &BBox, resolution: usize) -> Result<Cell, GeometryError> {
    if region.is_degenerate() || resolution == 0 {
        return Err(GeometryError::DegenerateRegion);
    }
    if !region.contains_half_open(p) {
        return Err(GeometryError::OutOfRegion { x: p.x, y: p.y });
    }
    let r = resolution as f64;
    // floor can land on `resolution` through rounding when p is a hair below x2
    let cx = (((p.x - region.x1) * r / region.width()).floor() as usize).min(resolution - 1);
    let cy = (((p.y - region.y1) * r / region.height()).floor() as usize).min(resolution - 1);
    Ok(Cell { cx, cy })
}

/// Centre of `cell` in image coordinates.
pub fn cell_to_point(cell: Cell, region: &BBox, resolution: usize) -> Result<Point, GeometryError> {
    if cell.cx >= resolution || cell.cy >= resolution {
        return Err(GeometryError::CellOutOfRange {
            cx: cell.cx,
            cy: cell.cy,
            resolution,
        });
    }
    Ok(cell_center(cell.cx as f64, cell.cy as f64, region, resolution))
}

/// Image point at fractional cell coordinates, `+0.5` offset applied.
pub(crate) fn cell_center(cx: f64, cy: f64, region: &BBox, resolution: usize) -> Point {
    let r = resolution as f64;
    Point::new(
        region.x1 + (cx + 0.5) * region.width() / r,
        region.y1 + (cy + 0.5) * region.height() / r,
    )
}
