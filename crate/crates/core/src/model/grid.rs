use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::lattice_weights;

/// Midpoint-rule nodes and weights on the trait interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitGrid {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TraitGrid {
    pub fn midpoint(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Grid(format!("trait grid needs at least 2 nodes, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Grid(format!("bad trait interval [{lo}, {hi}]")));
        }
        let h = (hi - lo) / n as f64;
        let nodes = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
        Ok(Self {
            lo,
            hi,
            nodes,
            weights: vec![h; n],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.len() as f64
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.cell_width()).floor();
        (i.max(0.0) as usize).min(self.len() - 1)
    }

    pub fn leb(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Uniform age lattice `a_j = j·da`, `j = 0..=intervals`, with the
/// endpoint-corrected quadrature weights used by every age integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    pub da: f64,
    pub intervals: usize,
    pub weights: Vec<f64>,
}

impl AgeGrid {
    pub fn new(da: f64, intervals: usize) -> Result<Self> {
        if !(da.is_finite() && da > 0.0) {
            return Err(Error::Grid(format!("age step must be positive, got {da}")));
        }
        if intervals == 0 {
            return Err(Error::Grid("age lattice needs at least one step".into()));
        }
        Ok(Self {
            da,
            intervals,
            weights: lattice_weights(intervals, da),
        })
    }

    /// Number of lattice nodes, `intervals + 1`.
    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn a_max(&self) -> f64 {
        self.intervals as f64 * self.da
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.da
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|j| self.node(j))
    }

    /// Nearest lattice node to `a`, clamped to the horizon.
    pub fn nearest(&self, a: f64) -> usize {
        ((a / self.da).round().max(0.0) as usize).min(self.intervals)
    }
}
