//! Mean-field functionals of a phase-space density: energy, momentum,
//! center of mass, angular momentum, entropy and general Casimirs, plus the
//! position-space moment fields (macrostate).
//!
//! All quadrature is the midpoint rule on cell centers; all reductions use
//! fixed chunking so results do not depend on the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PairPotential;
use crate::statefield::density::GridDensity;
use crate::statefield::fields::Convolver;
use crate::statefield::grid::AxisSpec;

/// Mass floor per position cell below which the velocity field is masked
/// out instead of dividing by a vanishing density.
pub const U_MASK_CELL_MASS: f64 = 1e-12;

/// Position-space moment fields of a phase-space density: mass density,
/// bulk velocity (masked on near-vacuum cells) and kinetic-energy density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentFields {
    pub dim: usize,
    pub q_axes: Vec<AxisSpec>,
    pub rho: Vec<f64>,
    /// `dim` components per cell; zero where `u_defined` is false.
    pub u: Vec<f64>,
    pub u_defined: Vec<bool>,
    pub ekin: Vec<f64>,
}

fn p_center_table(f: &GridDensity) -> Vec<[f64; 3]> {
    (0..f.grid.n_p_cells()).map(|i| f.grid.p_center(i)).collect()
}

/// Energy functional: kinetic quadrature plus the double convolution
/// `e^2/2 int int V rho rho'` computed with the shared kernel
/// discretization (same-cell distance regularized to half a diagonal).
pub fn energy_functional(f: &GridDensity, v: &PairPotential, m: f64, e2: f64) -> Result<f64> {
    v.require_mean_field()?;
    let conv = Convolver::new(&f.grid.q_axes, v);
    energy_with_convolver(f, &conv, m, e2)
}

/// Energy functional reusing a prebuilt convolution kernel.
pub fn energy_with_convolver(f: &GridDensity, conv: &Convolver, m: f64, e2: f64) -> Result<f64> {
    f.check_normalized()?;
    Ok(kinetic_energy(f, m) + potential_energy_of_marginal(&f.q_marginal(), conv, &f.grid.q_axes, e2))
}

/// `1/(2m) int |p|^2 f`.
pub fn kinetic_energy(f: &GridDensity, m: f64) -> f64 {
    let vp = f.grid.p_cell_volume();
    let marg = f.p_marginal();
    let mut s = 0.0;
    for (i, g) in marg.iter().enumerate() {
        let pc = f.grid.p_center(i);
        let p2: f64 = pc[..f.grid.dim].iter().map(|x| x * x).sum();
        s += p2 * g;
    }
    s * vp / (2.0 * m)
}

/// `e^2/2 sum_ij V(|q_i - q_j|) rho_i rho_j vol^2` via the interaction field.
pub fn potential_energy_of_marginal(
    rho: &[f64],
    conv: &Convolver,
    q_axes: &[AxisSpec],
    e2: f64,
) -> f64 {
    let vq: f64 = q_axes.iter().map(|a| a.spacing()).product();
    let field = conv.apply(rho);
    let dot: f64 = rho.iter().zip(&field).map(|(r, u)| r * u).sum();
    0.5 * e2 * dot * vq
}

/// `int p f`, one component per dimension.
pub fn momentum_functional(f: &GridDensity) -> Vec<f64> {
    let d = f.grid.dim;
    let vol = f.grid.cell_volume();
    let pcs = p_center_table(f);
    let npc = f.grid.n_p_cells();
    let partials: Vec<[f64; 3]> = f
        .values
        .par_chunks(npc)
        .map(|block| {
            let mut acc = [0.0; 3];
            for (pi, &v) in block.iter().enumerate() {
                for k in 0..d {
                    acc[k] += pcs[pi][k] * v;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; d];
    for acc in partials {
        for k in 0..d {
            out[k] += acc[k];
        }
    }
    for o in out.iter_mut() {
        *o *= vol;
    }
    out
}

/// `int q f`, one component per dimension.
pub fn center_functional(f: &GridDensity) -> Vec<f64> {
    let d = f.grid.dim;
    let vq = f.grid.q_cell_volume();
    let rho = f.q_marginal();
    let mut out = vec![0.0; d];
    for (qi, r) in rho.iter().enumerate() {
        let qc = f.grid.q_center(qi);
        for k in 0..d {
            out[k] += qc[k] * r;
        }
    }
    for o in out.iter_mut() {
        *o *= vq;
    }
    out
}

/// `int (q x p) f`: scalar (z component) in 2D, 3-vector in 3D.
pub fn angmom_functional(f: &GridDensity) -> Vec<f64> {
    let d = f.grid.dim;
    let vol = f.grid.cell_volume();
    let pcs = p_center_table(f);
    let npc = f.grid.n_p_cells();
    let partials: Vec<[f64; 3]> = f
        .values
        .par_chunks(npc)
        .enumerate()
        .map(|(qi, block)| {
            let qc = f.grid.q_center(qi);
            let mut acc = [0.0; 3];
            for (pi, &v) in block.iter().enumerate() {
                let pc = &pcs[pi];
                if d == 2 {
                    acc[0] += (qc[0] * pc[1] - qc[1] * pc[0]) * v;
                } else {
                    acc[0] += (qc[1] * pc[2] - qc[2] * pc[1]) * v;
                    acc[1] += (qc[2] * pc[0] - qc[0] * pc[2]) * v;
                    acc[2] += (qc[0] * pc[1] - qc[1] * pc[0]) * v;
                }
            }
            acc
        })
        .collect();
    let comps = if d == 2 { 1 } else { 3 };
    let mut out = vec![0.0; comps];
    for acc in partials {
        for k in 0..comps {
            out[k] += acc[k];
        }
    }
    for o in out.iter_mut() {
        *o *= vol;
    }
    out
}

/// Casimir functional `int C(f)`. Fails naming the first cell value on
/// which `C` is not finite.
pub fn casimir<F>(f: &GridDensity, c: F) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    const CHUNK: usize = 1 << 14;
    let partials: Vec<Result<f64>> = f
        .values
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = 0.0;
            for &x in chunk {
                let y = c(x);
                if !y.is_finite() {
                    return Err(Error::CasimirEval {
                        value: x,
                        detail: format!("C({x}) = {y}"),
                    });
                }
                s += y;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total * f.grid.cell_volume())
}

/// Entropy `-int f ln f`, with the `0 ln 0 = 0` convention. Shares the
/// Casimir code path.
pub fn entropy(f: &GridDensity) -> f64 {
    casimir(f, |x| if x > 0.0 { -x * x.ln() } else { 0.0 })
        .expect("-x ln x is finite for x >= 0")
}

/// First momentum moments over each position cell: density, bulk velocity
/// (masked where the cell mass is below `U_MASK_CELL_MASS`), and
/// kinetic-energy density.
pub fn macrostate(f: &GridDensity, m: f64) -> MomentFields {
    let d = f.grid.dim;
    let vp = f.grid.p_cell_volume();
    let vq = f.grid.q_cell_volume();
    let pcs = p_center_table(f);
    let npc = f.grid.n_p_cells();
    let nqc = f.grid.n_q_cells();
    let rows: Vec<([f64; 3], f64, f64)> = f
        .values
        .par_chunks(npc)
        .map(|block| {
            let mut mom = [0.0; 3];
            let mut rho = 0.0;
            let mut ekin = 0.0;
            for (pi, &v) in block.iter().enumerate() {
                rho += v;
                let pc = &pcs[pi];
                let mut p2 = 0.0;
                for k in 0..d {
                    mom[k] += pc[k] * v;
                    p2 += pc[k] * pc[k];
                }
                ekin += p2 * v;
            }
            (mom, rho * vp, ekin * vp / (2.0 * m))
        })
        .collect();

    let mut rho = Vec::with_capacity(nqc);
    let mut u = vec![0.0; nqc * d];
    let mut u_defined = vec![false; nqc];
    let mut ekin = Vec::with_capacity(nqc);
    for (qi, (mom, r, ek)) in rows.into_iter().enumerate() {
        rho.push(r);
        ekin.push(ek);
        if r * vq > U_MASK_CELL_MASS {
            u_defined[qi] = true;
            for k in 0..d {
                u[qi * d + k] = mom[k] * vp / (m * r);
            }
        }
    }
    MomentFields {
        dim: d,
        q_axes: f.grid.q_axes.clone(),
        rho,
        u,
        u_defined,
        ekin,
    }
}

impl MomentFields {
    pub fn q_cell_volume(&self) -> f64 {
        self.q_axes.iter().map(|a| a.spacing()).product()
    }

    /// `int rho`, which must match the normalization of the source density.
    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.q_cell_volume()
    }

    /// `int ekin`: total kinetic energy.
    pub fn total_kinetic(&self) -> f64 {
        self.ekin.iter().sum::<f64>() * self.q_cell_volume()
    }
}
