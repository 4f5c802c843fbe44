//! Mesostates: smooth grid densities standing in for singular empirical
//! measures. The exact definition in terms of a Lipschitz-class projection
//! is replaced by a cell-integrated Gaussian kernel estimate with
//! user-chosen momentum/position bandwidths; `bandwidth -> 0` degenerates
//! to the plain histogram.

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::nbody::EmpiricalMeasure;
use crate::statefield::density::GridDensity;
use crate::statefield::grid::{AxisSpec, PhaseGrid};

/// Fraction of total mass allowed to fall outside the grid before the
/// estimate is rejected.
pub const MAX_LOST_MASS: f64 = 1e-3;

/// Gaussian mass inside `[lo, hi]` for a kernel centered at `x`.
#[inline]
fn cell_mass(x: f64, lo: f64, hi: f64, bw: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * bw;
    0.5 * (erf((hi - x) / s) - erf((lo - x) / s))
}

/// Per-axis window of cells receiving kernel mass from an atom at `x`,
/// returned as `(first_cell, masses)`. For `bw -> 0` this degenerates to
/// the single cell containing `x`.
fn axis_window(axis: &AxisSpec, x: f64, bw: f64) -> (usize, Vec<f64>) {
    if bw <= 0.0 || bw < 1e-12 * axis.spacing() {
        return match axis.locate(x) {
            Some(i) => (i, vec![1.0]),
            None => (0, vec![]),
        };
    }
    let reach = 6.0 * bw;
    let lo_idx = ((x - reach - axis.min) / axis.spacing()).floor().max(0.0) as usize;
    let hi_idx = (((x + reach - axis.min) / axis.spacing()).ceil() as isize)
        .clamp(0, axis.count as isize) as usize;
    if lo_idx >= hi_idx {
        return (0, vec![]);
    }
    let masses: Vec<f64> = (lo_idx..hi_idx)
        .map(|i| cell_mass(x, axis.edge(i), axis.edge(i + 1), bw))
        .collect();
    (lo_idx, masses)
}

/// Kernel density estimate of an empirical measure, binned to `grid` and
/// normalized. Deterministic. Errs if more than 0.1% of the mass lands
/// outside the grid.
pub fn mesostate(
    mu: &EmpiricalMeasure,
    grid: &PhaseGrid,
    bandwidth_p: f64,
    bandwidth_q: f64,
) -> Result<GridDensity> {
    if !(bandwidth_p >= 0.0 && bandwidth_q >= 0.0) {
        return Err(Error::Domain(format!(
            "bandwidths must be nonnegative, got ({bandwidth_p}, {bandwidth_q})"
        )));
    }
    if mu.dim != grid.dim {
        return Err(Error::Dimension(mu.dim));
    }
    let d = grid.dim;
    let npc = grid.n_p_cells();
    let mut mass = vec![0.0; grid.n_cells()];
    let mut in_grid_total = 0.0;

    // per-atom separable accumulation: q axes outer, p axes inner
    let mut windows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(2 * d);
    for a in 0..mu.n_atoms() {
        let (pa, qa) = (mu.atom_p(a), mu.atom_q(a));
        windows.clear();
        let mut coverage = 1.0;
        for k in 0..d {
            let w = axis_window(&grid.q_axes[k], qa[k], bandwidth_q);
            coverage *= w.1.iter().sum::<f64>();
            windows.push(w);
        }
        for k in 0..d {
            let w = axis_window(&grid.p_axes[k], pa[k], bandwidth_p);
            coverage *= w.1.iter().sum::<f64>();
            windows.push(w);
        }
        if coverage == 0.0 {
            continue;
        }
        in_grid_total += mu.weight * coverage;
        // outer product over the (2d)-axis windows
        accumulate(&mut mass, grid, npc, &windows, mu.weight, d);
    }

    let lost = 1.0 - in_grid_total;
    if lost > MAX_LOST_MASS {
        return Err(Error::MassOutsideGrid {
            lost_fraction: lost,
            limit: MAX_LOST_MASS,
        });
    }
    let inv_vol = 1.0 / grid.cell_volume();
    for v in mass.iter_mut() {
        *v *= inv_vol;
    }
    GridDensity::new(grid.clone(), mass)?.normalize()
}

fn accumulate(
    mass: &mut [f64],
    grid: &PhaseGrid,
    npc: usize,
    windows: &[(usize, Vec<f64>)],
    weight: f64,
    d: usize,
) {
    // iterate the q windows (first d) and p windows (last d) jointly
    let mut idx = vec![0usize; 2 * d];
    'outer: loop {
        let mut w = weight;
        let mut qflat = 0;
        for k in 0..d {
            let (start, ref ms) = windows[k];
            w *= ms[idx[k]];
            qflat = qflat * grid.q_axes[k].count + (start + idx[k]);
        }
        let mut pflat = 0;
        for k in 0..d {
            let (start, ref ms) = windows[d + k];
            w *= ms[idx[d + k]];
            pflat = pflat * grid.p_axes[k].count + (start + idx[d + k]);
        }
        mass[qflat * npc + pflat] += w;

        // odometer over window extents
        for k in (0..2 * d).rev() {
            idx[k] += 1;
            if idx[k] < windows[k].1.len() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
}

/// Plain histogram of an empirical measure on `grid` (the
/// `bandwidth -> 0` limit of [`mesostate`]), returning the normalized
/// density and the fraction of mass that fell outside.
pub fn bin_empirical(mu: &EmpiricalMeasure, grid: &PhaseGrid) -> Result<(GridDensity, f64)> {
    if mu.dim != grid.dim {
        return Err(Error::Dimension(mu.dim));
    }
    let d = grid.dim;
    let npc = grid.n_p_cells();
    let mut mass = vec![0.0; grid.n_cells()];
    let mut lost = 0.0;
    'atoms: for a in 0..mu.n_atoms() {
        let (pa, qa) = (mu.atom_p(a), mu.atom_q(a));
        let mut qflat = 0;
        for k in 0..d {
            match grid.q_axes[k].locate(qa[k]) {
                Some(i) => qflat = qflat * grid.q_axes[k].count + i,
                None => {
                    lost += mu.weight;
                    continue 'atoms;
                }
            }
        }
        let mut pflat = 0;
        for k in 0..d {
            match grid.p_axes[k].locate(pa[k]) {
                Some(i) => pflat = pflat * grid.p_axes[k].count + i,
                None => {
                    lost += mu.weight;
                    continue 'atoms;
                }
            }
        }
        mass[qflat * npc + pflat] += mu.weight;
    }
    let inv_vol = 1.0 / grid.cell_volume();
    for v in mass.iter_mut() {
        *v *= inv_vol;
    }
    Ok((GridDensity::new(grid.clone(), mass)?.normalize()?, lost))
}
