//! Discretized phase-space densities and their self-describing binary
//! serialization (header + row-major payload, JSON sidecar).

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statefield::grid::{AxisSpec, PhaseGrid};
use crate::util::det_sum;

/// Tolerance on `|N(f) - 1|` below which a density counts as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

const MAGIC: &[u8; 4] = b"SQD1";

/// Nonnegative density `f(p, q)` on a [`PhaseGrid`], stored row-major with
/// the momentum block contiguous per position cell. Immutable by
/// convention: operations return new densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: PhaseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::Grid(format!(
                "value count {} != cell count {}",
                values.len(),
                grid.n_cells()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Grid("density values must be finite and >= 0".into()));
        }
        Ok(GridDensity { grid, values })
    }

    /// Evaluate `f(p, q)` at every cell center. Parallel over position
    /// cells; each cell is computed independently, so the result is
    /// deterministic.
    pub fn from_fn<F>(grid: PhaseGrid, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> f64 + Sync,
    {
        let npc = grid.n_p_cells();
        let mut values = vec![0.0; grid.n_cells()];
        values
            .par_chunks_mut(npc)
            .enumerate()
            .for_each(|(qi, block)| {
                let qc = grid.q_center(qi);
                for (pi, v) in block.iter_mut().enumerate() {
                    let pc = grid.p_center(pi);
                    *v = f(&pc[..grid.dim], &qc[..grid.dim]);
                }
            });
        GridDensity::new(grid, values)
    }

    /// Total mass `N(f)` by the midpoint rule.
    pub fn mass(&self) -> f64 {
        det_sum(&self.values) * self.grid.cell_volume()
    }

    /// Rescale so the total mass is exactly 1. Idempotent. Errs on zero or
    /// non-finite mass.
    pub fn normalize(mut self) -> Result<Self> {
        let mass = self.mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Grid(format!("cannot normalize mass {mass}")));
        }
        let inv = 1.0 / mass;
        self.values.par_iter_mut().for_each(|v| *v *= inv);
        Ok(self)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let defect = (self.mass() - 1.0).abs();
        if defect <= NORMALIZATION_TOL {
            Ok(())
        } else {
            Err(Error::NotNormalized { defect })
        }
    }

    /// Position-space density `rho(q) = int f d^d p` per q cell.
    pub fn q_marginal(&self) -> Vec<f64> {
        let npc = self.grid.n_p_cells();
        let vp = self.grid.p_cell_volume();
        self.values
            .par_chunks(npc)
            .map(|block| block.iter().sum::<f64>() * vp)
            .collect()
    }

    /// Momentum-space density `g(p) = int f d^d q` per p cell.
    pub fn p_marginal(&self) -> Vec<f64> {
        let npc = self.grid.n_p_cells();
        let vq = self.grid.q_cell_volume();
        let mut out = vec![0.0; npc];
        for block in self.values.chunks(npc) {
            for (o, v) in out.iter_mut().zip(block) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= vq;
        }
        out
    }

    /// Write the density as `<path>` (binary) plus a `<path>.json` sidecar.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(1u32).to_le_bytes());
        buf.extend_from_slice(&(self.grid.dim as u32).to_le_bytes());
        for axis in self.grid.q_axes.iter().chain(&self.grid.p_axes) {
            buf.extend_from_slice(&(axis.count as u64).to_le_bytes());
            buf.extend_from_slice(&axis.min.to_le_bytes());
            buf.extend_from_slice(&axis.max.to_le_bytes());
        }
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;

        let sidecar = DensitySidecar {
            format: "statequil-density/v1".into(),
            dim: self.grid.dim,
            q_axes: self.grid.q_axes.clone(),
            p_axes: self.grid.p_axes.clone(),
            cells: self.values.len(),
            layout: "row-major [q.., p..], last axis fastest".into(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            if *at + n > bytes.len() {
                return Err(Error::DensityFormat("truncated file".into()));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, 4)? != MAGIC {
            return Err(Error::DensityFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != 1 {
            return Err(Error::DensityFormat(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        if dim != 2 && dim != 3 {
            return Err(Error::DensityFormat(format!("bad dim {dim}")));
        }
        let mut axes = Vec::with_capacity(2 * dim);
        for _ in 0..2 * dim {
            let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
            let min = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
            let max = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
            axes.push(AxisSpec { min, max, count });
        }
        let ncells = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let grid = PhaseGrid::new(dim, axes[..dim].to_vec(), axes[dim..].to_vec())?;
        if ncells != grid.n_cells() {
            return Err(Error::DensityFormat(format!(
                "cell count {ncells} inconsistent with axes"
            )));
        }
        let mut values = Vec::with_capacity(ncells);
        for _ in 0..ncells {
            values.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
        }
        GridDensity::new(grid, values)
    }
}

#[derive(Serialize, Deserialize)]
struct DensitySidecar {
    format: String,
    dim: usize,
    q_axes: Vec<AxisSpec>,
    p_axes: Vec<AxisSpec>,
    cells: usize,
    layout: String,
}

/// Gaussian equilibrium of the harmonic trap in `dim` dimensions: product of
/// a Maxwellian at temperature `t` (optionally shifted by `m omega x q`) and
/// an isotropic position Gaussian with the given per-axis variances. The
/// analytic oracle used across the test suites.
pub fn gaussian_phase_density(
    grid: &PhaseGrid,
    m: f64,
    t: f64,
    sigma2_q: &[f64],
    omega_z: f64,
) -> Result<GridDensity> {
    let dim = grid.dim;
    let sig2: Vec<f64> = sigma2_q.to_vec();
    GridDensity::from_fn(grid.clone(), move |p, q| {
        let mut logv = 0.0;
        // shifted Maxwellian: mean momentum m * (omega x q)
        let shift = match dim {
            2 => vec![-m * omega_z * q[1], m * omega_z * q[0]],
            _ => vec![-m * omega_z * q[1], m * omega_z * q[0], 0.0],
        };
        for k in 0..dim {
            let dp = p[k] - shift[k];
            logv -= dp * dp / (2.0 * m * t);
            logv -= q[k] * q[k] / (2.0 * sig2[k]);
        }
        logv.exp()
    })?
    .normalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_is_idempotent() {
        let grid = PhaseGrid::symmetric(2, 3.0, 3.0, 8).unwrap();
        let f = GridDensity::from_fn(grid, |p, q| {
            (-(p[0] * p[0] + p[1] * p[1] + q[0] * q[0] + q[1] * q[1])).exp()
        })
        .unwrap();
        let f1 = f.normalize().unwrap();
        assert!((f1.mass() - 1.0).abs() < 1e-12);
        let f2 = f1.clone().normalize().unwrap();
        for (a, b) in f1.values.iter().zip(&f2.values) {
            assert!((a - b).abs() <= 1e-13 * a.abs());
        }
    }

    #[test]
    fn negative_values_rejected() {
        let grid = PhaseGrid::symmetric(2, 1.0, 1.0, 8).unwrap();
        let mut vals = vec![1.0; grid.n_cells()];
        vals[3] = -0.5;
        assert!(GridDensity::new(grid, vals).is_err());
    }

    #[test]
    fn marginals_integrate_to_mass() {
        let grid = PhaseGrid::symmetric(2, 4.0, 4.0, 16).unwrap();
        let f = gaussian_phase_density(&grid, 1.0, 1.0, &[0.5, 0.5], 0.0).unwrap();
        let rho = f.q_marginal();
        let vq = grid.q_cell_volume();
        let total: f64 = rho.iter().sum::<f64>() * vq;
        assert!((total - 1.0).abs() < 1e-12);
        let g = f.p_marginal();
        let total_p: f64 = g.iter().sum::<f64>() * grid.p_cell_volume();
        assert!((total_p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let grid = PhaseGrid::symmetric(2, 2.0, 3.0, 8).unwrap();
        let f = gaussian_phase_density(&grid, 1.0, 0.7, &[0.4, 0.6], 0.3).unwrap();
        f.write_binary(&path).unwrap();
        let g = GridDensity::read_binary(&path).unwrap();
        assert_eq!(f.grid, g.grid);
        assert_eq!(f.values, g.values);
        assert!(path.with_extension("json").exists());
    }
}
