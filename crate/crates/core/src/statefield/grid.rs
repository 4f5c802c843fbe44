//! Tensor-product phase-space grids.
//!
//! Storage layout is row-major over the axis list `[q_0..q_{d-1}, p_0..p_{d-1}]`
//! with the last axis fastest, so the momentum block for a fixed position
//! cell is contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniform axis: `count` cells spanning `[min, max]`, cell centers at
/// `min + (i + 1/2) h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let axis = AxisSpec { min, max, count };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Grid(format!(
                "axis bounds [{}, {}] invalid",
                self.min, self.max
            )));
        }
        if self.count < 8 {
            return Err(Error::Grid(format!(
                "axis needs at least 8 cells, got {}",
                self.count
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, or `None` outside `[min, max)`.
    #[inline]
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.min || x >= self.max {
            return None;
        }
        let i = ((x - self.min) / self.spacing()) as usize;
        Some(i.min(self.count - 1))
    }

    /// Lower edge of cell `i`.
    #[inline]
    pub fn edge(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }
}

/// Uniform tensor grid on single-particle phase space `R^{2d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub dim: usize,
    pub q_axes: Vec<AxisSpec>,
    pub p_axes: Vec<AxisSpec>,
}

impl PhaseGrid {
    pub fn new(dim: usize, q_axes: Vec<AxisSpec>, p_axes: Vec<AxisSpec>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if q_axes.len() != dim || p_axes.len() != dim {
            return Err(Error::Grid(format!(
                "expected {dim} q-axes and {dim} p-axes, got {} and {}",
                q_axes.len(),
                p_axes.len()
            )));
        }
        for a in q_axes.iter().chain(&p_axes) {
            a.validate()?;
        }
        Ok(PhaseGrid { dim, q_axes, p_axes })
    }

    /// Symmetric grid: `q` axes on `[-q_half, q_half]`, `p` axes on
    /// `[-p_half, p_half]`, `n` cells each.
    pub fn symmetric(dim: usize, q_half: f64, p_half: f64, n: usize) -> Result<Self> {
        let q = vec![AxisSpec::new(-q_half, q_half, n)?; dim];
        let p = vec![AxisSpec::new(-p_half, p_half, n)?; dim];
        PhaseGrid::new(dim, q, p)
    }

    pub fn n_cells(&self) -> usize {
        self.n_q_cells() * self.n_p_cells()
    }

    pub fn n_q_cells(&self) -> usize {
        self.q_axes.iter().map(|a| a.count).product()
    }

    pub fn n_p_cells(&self) -> usize {
        self.p_axes.iter().map(|a| a.count).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.q_cell_volume() * self.p_cell_volume()
    }

    pub fn q_cell_volume(&self) -> f64 {
        self.q_axes.iter().map(|a| a.spacing()).product()
    }

    pub fn p_cell_volume(&self) -> f64 {
        self.p_axes.iter().map(|a| a.spacing()).product()
    }

    /// Position cell multi-index -> flat q index (row-major, last fastest).
    #[inline]
    pub fn q_flat(&self, iq: &[usize]) -> usize {
        let mut idx = 0;
        for (k, a) in self.q_axes.iter().enumerate() {
            idx = idx * a.count + iq[k];
        }
        idx
    }

    #[inline]
    pub fn p_flat(&self, ip: &[usize]) -> usize {
        let mut idx = 0;
        for (k, a) in self.p_axes.iter().enumerate() {
            idx = idx * a.count + ip[k];
        }
        idx
    }

    /// Flat cell index from q and p multi-indices.
    #[inline]
    pub fn flat(&self, iq: &[usize], ip: &[usize]) -> usize {
        self.q_flat(iq) * self.n_p_cells() + self.p_flat(ip)
    }

    /// Decompose a flat q index into per-axis indices (first `dim` entries).
    #[inline]
    pub fn q_multi(&self, mut flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for k in (0..self.dim).rev() {
            let n = self.q_axes[k].count;
            out[k] = flat % n;
            flat /= n;
        }
        out
    }

    #[inline]
    pub fn p_multi(&self, mut flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for k in (0..self.dim).rev() {
            let n = self.p_axes[k].count;
            out[k] = flat % n;
            flat /= n;
        }
        out
    }

    /// Center coordinates of a flat q index.
    #[inline]
    pub fn q_center(&self, flat: usize) -> [f64; 3] {
        let mi = self.q_multi(flat);
        let mut out = [0.0; 3];
        for k in 0..self.dim {
            out[k] = self.q_axes[k].center(mi[k]);
        }
        out
    }

    #[inline]
    pub fn p_center(&self, flat: usize) -> [f64; 3] {
        let mi = self.p_multi(flat);
        let mut out = [0.0; 3];
        for k in 0..self.dim {
            out[k] = self.p_axes[k].center(mi[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_centers_are_midpoints() {
        let a = AxisSpec::new(-1.0, 1.0, 8).unwrap();
        assert_eq!(a.spacing(), 0.25);
        assert_eq!(a.center(0), -0.875);
        assert_eq!(a.center(7), 0.875);
        assert_eq!(a.locate(-0.876), Some(0));
        assert_eq!(a.locate(0.999), Some(7));
        assert_eq!(a.locate(1.0), None);
        assert_eq!(a.locate(-1.01), None);
    }

    #[test]
    fn too_few_cells_rejected() {
        assert!(AxisSpec::new(0.0, 1.0, 4).is_err());
        assert!(AxisSpec::new(1.0, 0.0, 16).is_err());
    }

    #[test]
    fn flat_index_round_trips() {
        let g = PhaseGrid::symmetric(3, 2.0, 3.0, 8).unwrap();
        assert_eq!(g.n_cells(), 8usize.pow(6));
        for &qf in &[0usize, 5, 63, 511] {
            let mi = g.q_multi(qf);
            assert_eq!(g.q_flat(&mi[..3]), qf);
        }
        let iq = [1usize, 2, 3];
        let ip = [4usize, 5, 6];
        let f = g.flat(&iq, &ip);
        assert_eq!(g.q_multi(f / g.n_p_cells())[..3], iq);
        assert_eq!(g.p_multi(f % g.n_p_cells())[..3], ip);
    }

    #[test]
    fn volumes_multiply() {
        let g = PhaseGrid::symmetric(2, 1.0, 2.0, 10).unwrap();
        assert!((g.q_cell_volume() - 0.04).abs() < 1e-15);
        assert!((g.p_cell_volume() - 0.16).abs() < 1e-15);
        assert!((g.cell_volume() - 0.0064).abs() < 1e-15);
    }
}
