use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Visited-cell set over a rectangular slice of two state dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageGrid {
    dims: (usize, usize),
    lo: [f64; 2],
    hi: [f64; 2],
    cell: f64,
    counts: [usize; 2],
    visited: BTreeSet<(usize, usize)>,
}

fn cells_along(lo: f64, hi: f64, cell: f64) -> usize {
    let n = (hi - lo) / cell;
    // absorb float noise when the range is a whole number of cells
    let r = n.round();
    if (n - r).abs() < 1e-9 {
        r as usize
    } else {
        n.ceil() as usize
    }
}

impl CoverageGrid {
    pub fn new(dims: (usize, usize), lo: [f64; 2], hi: [f64; 2], cell: f64) -> Result<Self> {
        if !(cell > 0.0) || !(hi[0] > lo[0]) || !(hi[1] > lo[1]) {
            return Err(Error::Config(format!(
                "coverage grid needs a positive cell and a non-empty range, got {lo:?}..{hi:?} / {cell}"
            )));
        }
        let counts = [cells_along(lo[0], hi[0], cell), cells_along(lo[1], hi[1], cell)];
        Ok(Self {
            dims,
            lo,
            hi,
            cell,
            counts,
            visited: BTreeSet::new(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn range(&self) -> ([f64; 2], [f64; 2]) {
        (self.lo, self.hi)
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    /// Cells along each axis.
    pub fn shape(&self) -> [usize; 2] {
        self.counts
    }

    pub fn total_cells(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    fn index(&self, axis: usize, v: f64) -> usize {
        let raw = ((v - self.lo[axis]) / self.cell).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.counts[axis] - 1)
        }
    }

    /// Marks the cell containing `state`; out-of-range values clamp to the
    /// boundary cells.
    pub fn update(&mut self, state: &[f64]) -> Result<()> {
        let (a, b) = self.dims;
        if a >= state.len() || b >= state.len() {
            return Err(Error::Config(format!(
                "coverage dimensions {:?} outside state of length {}",
                self.dims,
                state.len()
            )));
        }
        let cell = (self.index(0, state[a]), self.index(1, state[b]));
        self.visited.insert(cell);
        Ok(())
    }

    pub fn visited(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.visited.iter().copied()
    }

    pub fn visited_count(&self) -> usize {
        self.visited.len()
    }

    pub fn fraction(&self) -> f64 {
        self.visited.len() as f64 / self.total_cells() as f64
    }

    /// Lower-left corner of a cell in state coordinates.
    pub fn cell_origin(&self, cell: (usize, usize)) -> [f64; 2] {
        [
            self.lo[0] + cell.0 as f64 * self.cell,
            self.lo[1] + cell.1 as f64 * self.cell,
        ]
    }
}
