//! Supervision targets for ground-truth grid points and representation coverage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    grid_point, point_to_cell, representation_region, BBox, Cell, GeometryError, GridIndex, GridSpec,
};

/// Default positive-label radius, in cells (Chebyshev distance).
pub const DEFAULT_POSITIVE_RADIUS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("degenerate {0} box")]
    DegenerateBox(&'static str),
    #[error("coverage needs at least one proposal/ground-truth pair")]
    EmptyPairs,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Binary supervision map for one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTarget {
    pub grid_index: GridIndex,
    pub resolution: usize,
    /// Row-major `resolution x resolution` map of 0/1 labels.
    pub map: Vec<u8>,
    pub covered: bool,
    /// Quantized ground-truth cell when covered.
    pub cell: Option<Cell>,
}

impl SupervisionTarget {
    pub fn at(&self, cell: Cell) -> u8 {
        self.map[cell.cy * self.resolution + cell.cx]
    }

    pub fn positives(&self) -> impl Iterator<Item = Cell> + '_ {
        let r = self.resolution;
        self.map
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(move |(k, _)| Cell::new(k % r, k / r))
    }
}

/// Builds the `n^2` supervision maps for a ground-truth box seen through a proposal.
pub fn encode_targets(
    gt: &BBox,
    proposal: &BBox,
    spec: &GridSpec,
    radius: usize,
) -> Result<Vec<SupervisionTarget>, EncodingError> {
    spec.validate()?;
    if gt.is_degenerate() || !gt.is_valid() {
        return Err(EncodingError::DegenerateBox("ground-truth"));
    }
    if proposal.is_degenerate() || !proposal.is_valid() {
        return Err(EncodingError::DegenerateBox("proposal"));
    }
    let n = spec.points_per_side;
    let res = spec.heatmap_resolution;
    let targets = GridIndex::all(n)
        .map(|idx| {
            let p = grid_point(gt, n, idx);
            let region = representation_region(proposal, idx, spec);
            let mut map = vec![0u8; res * res];
            match point_to_cell(p, &region, res) {
                Ok(cell) => {
                    let ys = cell.cy.saturating_sub(radius)..=(cell.cy + radius).min(res - 1);
                    for cy in ys {
                        let xs = cell.cx.saturating_sub(radius)..=(cell.cx + radius).min(res - 1);
                        for cx in xs {
                            map[cy * res + cx] = 1;
                        }
                    }
                    SupervisionTarget {
                        grid_index: idx,
                        resolution: res,
                        map,
                        covered: true,
                        cell: Some(cell),
                    }
                }
                Err(_) => SupervisionTarget {
                    grid_index: idx,
                    resolution: res,
                    map,
                    covered: false,
                    cell: None,
                },
            }
        })
        .collect();
    Ok(targets)
}

/// Whether the ground-truth grid point `idx` falls inside its representation region.
pub fn is_covered(gt: &BBox, proposal: &BBox, idx: GridIndex, spec: &GridSpec) -> bool {
    let p = grid_point(gt, spec.points_per_side, idx);
    representation_region(proposal, idx, spec).contains_half_open(p)
}

/// Fraction of (pair, grid point) combinations whose ground-truth point is representable.
///
/// Pairs are `(gt, proposal)`.
pub fn coverage_rate(pairs: &[(BBox, BBox)], spec: &GridSpec) -> Result<f64, EncodingError> {
    if pairs.is_empty() {
        return Err(EncodingError::EmptyPairs);
    }
    spec.validate()?;
    let n = spec.points_per_side;
    let covered: usize = pairs
        .iter()
        .map(|(gt, proposal)| {
            GridIndex::all(n)
                .filter(|&idx| is_covered(gt, proposal, idx, spec))
                .count()
        })
        .sum();
    Ok(covered as f64 / (pairs.len() * n * n) as f64)
}
