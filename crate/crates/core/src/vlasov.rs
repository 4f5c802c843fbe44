//! Mean-field Vlasov evolution on a 2D (4D phase space) grid with Strang
//! splitting: half drift in position, full momentum kick from the
//! self-consistent field, half drift again. Every 1D sub-advection is a
//! flux-conservative semi-Lagrangian update with limited parabolic (PPM)
//! reconstruction, so line sums are conserved to roundoff, the density
//! stays nonnegative, and smooth data converges at better than second
//! order. Conserved-functional audits and the stationarity residual used
//! by classification live here too.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PairPotential;
use crate::statefield::density::GridDensity;
use crate::statefield::fields::Convolver;
use crate::statefield::functionals;
use crate::statefield::grid::PhaseGrid;

/// Default cap on the relative mass sitting in the outermost cell layer.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-10;

/// Diagnostics of a single step.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    /// `|mass_before_renormalization - 1|`; the step renormalizes, so this
    /// is a diagnostic of interpolation/outflow loss, not a silent drift.
    pub mass_defect: f64,
    /// Relative mass in the outermost cell layer after the step.
    pub boundary_mass: f64,
}

/// One audit row: every functional recomputed from the evolving density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub momentum: Vec<f64>,
    pub center: Vec<f64>,
    pub angmom: f64,
    pub entropy: f64,
    pub casimir_x2: f64,
    pub casimir_x32: f64,
    pub mass_defect: f64,
    pub boundary_mass: f64,
}

/// Completed run: audit history plus the final density.
#[derive(Debug)]
pub struct VlasovRun {
    pub history: Vec<AuditRow>,
    pub f_final: GridDensity,
}

/// Maximum relative drifts over a run, one entry per audited functional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftTable {
    pub mass: f64,
    pub energy: f64,
    pub angmom: f64,
    pub entropy: f64,
    pub casimir_x2: f64,
    pub casimir_x32: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct VlasovRunSpec {
    pub dt: f64,
    pub steps: usize,
    pub audit_every: usize,
    pub boundary_mass_limit: f64,
}

/// Semi-Lagrangian Vlasov stepper for `dim == 2` densities.
pub struct VlasovSolver<'a> {
    pub grid: PhaseGrid,
    pub v: &'a PairPotential,
    pub m: f64,
    pub e2: f64,
    conv: Convolver,
}

impl<'a> VlasovSolver<'a> {
    pub fn new(v: &'a PairPotential, grid: PhaseGrid, m: f64, e2: f64) -> Result<Self> {
        if grid.dim != 2 {
            return Err(Error::Dimension(grid.dim));
        }
        if !(m > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {m}")));
        }
        let conv = Convolver::new(&grid.q_axes, v);
        Ok(VlasovSolver { grid, v, m, e2, conv })
    }

    fn dims(&self) -> [usize; 4] {
        [
            self.grid.q_axes[0].count,
            self.grid.q_axes[1].count,
            self.grid.p_axes[0].count,
            self.grid.p_axes[1].count,
        ]
    }

    /// Mean-field force per position cell: `-e^2 grad (V * rho)`.
    fn force(&self, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let field = self.conv.apply(rho);
        let [n0, n1, ..] = self.dims();
        let (h0, h1) = (self.grid.q_axes[0].spacing(), self.grid.q_axes[1].spacing());
        let mut fx = vec![0.0; n0 * n1];
        let mut fy = vec![0.0; n0 * n1];
        let phi = |i0: usize, i1: usize| self.e2 * field[i0 * n1 + i1];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                fx[i0 * n1 + i1] = -grad_1d(|i| phi(i, i1), i0, n0, h0);
                fy[i0 * n1 + i1] = -grad_1d(|i| phi(i0, i), i1, n1, h1);
            }
        }
        (fx, fy)
    }

    /// One Strang step. `f` is renormalized at the end; the pre-
    /// renormalization defect and the boundary-layer mass are returned and
    /// a boundary mass above `boundary_limit` is an error.
    pub fn step(
        &self,
        f: &mut GridDensity,
        dt: f64,
        boundary_limit: f64,
    ) -> Result<StepDiagnostics> {
        if f.grid != self.grid {
            return Err(Error::Grid("density grid does not match the solver grid".into()));
        }
        let half = 0.5 * dt;
        self.drift(&mut f.values, half);
        // field from the mid-step density, recomputed once per step
        let rho = q_marginal_raw(&f.values, &self.dims(), self.grid.p_cell_volume());
        let (fx, fy) = self.force(&rho);
        self.kick(&mut f.values, &fx, &fy, dt);
        self.drift(&mut f.values, half);

        // clamp roundoff negatives from the flux updates
        for v in f.values.iter_mut() {
            if *v < 0.0 {
                debug_assert!(*v > -1e-12, "flux limiter produced {v}");
                *v = 0.0;
            }
        }

        let mass = f.mass();
        let mass_defect = (mass - 1.0).abs();
        if !(mass > 0.0) {
            return Err(Error::FixedPointDiverged("density lost all mass".into()));
        }
        let inv = 1.0 / mass;
        f.values.par_iter_mut().for_each(|v| *v *= inv);

        let boundary_mass = self.boundary_mass(&f.values);
        if boundary_mass > boundary_limit {
            return Err(Error::DomainTooSmall { boundary_mass, limit: boundary_limit });
        }
        Ok(StepDiagnostics { mass_defect, boundary_mass })
    }

    /// Half drift: advect `q_x` by `p_x/m * dt` and `q_y` by `p_y/m * dt`
    /// (the two shifts commute exactly).
    fn drift(&self, values: &mut [f64], dt: f64) {
        let [n0, n1, n2, n3] = self.dims();
        let h0 = self.grid.q_axes[0].spacing();
        let h1 = self.grid.q_axes[1].spacing();

        // axis 0 (qx): tiled over (i1, i2); shift set by px = center(i2)
        {
            let shifts: Vec<f64> = (0..n2)
                .map(|i2| self.grid.p_axes[0].center(i2) / self.m * dt / h0)
                .collect();
            advect_axis0(values, [n0, n1, n2, n3], &shifts);
        }
        // axis 1 (qy): tiled over (i0, i2); shift set by py = center(i3)
        {
            let shifts: Vec<f64> = (0..n3)
                .map(|i3| self.grid.p_axes[1].center(i3) / self.m * dt / h1)
                .collect();
            advect_axis1(values, [n0, n1, n2, n3], &shifts);
        }
    }

    /// Full kick: advect `p_x` by `F_x(q) dt` and `p_y` by `F_y(q) dt`.
    fn kick(&self, values: &mut [f64], fx: &[f64], fy: &[f64], dt: f64) {
        let [_, _, n2, n3] = self.dims();
        let h2 = self.grid.p_axes[0].spacing();
        let h3 = self.grid.p_axes[1].spacing();
        let block = n2 * n3;
        values
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(qi, chunk)| {
                let sx = fx[qi] * dt / h2;
                let sy = fy[qi] * dt / h3;
                let mut line = vec![0.0; n2];
                let mut out = vec![0.0; n2];
                let mut scratch = AdvectScratch::new(n2.max(n3));
                // px: columns of the (n2 x n3) block
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        line[i2] = chunk[i2 * n3 + i3];
                    }
                    advect_line(&line, &mut out, sx, &mut scratch);
                    for i2 in 0..n2 {
                        chunk[i2 * n3 + i3] = out[i2];
                    }
                }
                // py: contiguous rows
                let mut line3 = vec![0.0; n3];
                let mut out3 = vec![0.0; n3];
                for i2 in 0..n2 {
                    line3.copy_from_slice(&chunk[i2 * n3..(i2 + 1) * n3]);
                    advect_line(&line3, &mut out3, sy, &mut scratch);
                    chunk[i2 * n3..(i2 + 1) * n3].copy_from_slice(&out3);
                }
            });
    }

    /// Relative mass in the outermost cell layer.
    pub fn boundary_mass(&self, values: &[f64]) -> f64 {
        let [n0, n1, n2, n3] = self.dims();
        let vol = self.grid.cell_volume();
        let mut s = 0.0;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    for i3 in 0..n3 {
                        let edge = i0 == 0
                            || i0 + 1 == n0
                            || i1 == 0
                            || i1 + 1 == n1
                            || i2 == 0
                            || i2 + 1 == n2
                            || i3 == 0
                            || i3 + 1 == n3;
                        if edge {
                            s += values[((i0 * n1 + i1) * n2 + i2) * n3 + i3];
                        }
                    }
                }
            }
        }
        s * vol
    }

    /// Audited evolution; refuses non-confining potentials (drive the raw
    /// stepper directly for free-transport diagnostics).
    pub fn run<F>(&self, f0: GridDensity, spec: &VlasovRunSpec, mut on_audit: F) -> Result<VlasovRun>
    where
        F: FnMut(usize, &AuditRow, &GridDensity),
    {
        self.v.require_mean_field()?;
        let mut f = f0.normalize()?;
        let mut history = Vec::new();
        let first = self.audit(&f, 0.0, 0.0, self.boundary_mass(&f.values));
        on_audit(0, &first, &f);
        history.push(first);
        for step in 1..=spec.steps {
            let diag = self.step(&mut f, spec.dt, spec.boundary_mass_limit)?;
            if step % spec.audit_every.max(1) == 0 || step == spec.steps {
                let row = self.audit(&f, step as f64 * spec.dt, diag.mass_defect, diag.boundary_mass);
                on_audit(step, &row, &f);
                history.push(row);
            }
        }
        Ok(VlasovRun { history, f_final: f })
    }

    fn audit(&self, f: &GridDensity, t: f64, mass_defect: f64, boundary_mass: f64) -> AuditRow {
        let rho = f.q_marginal();
        let potential = functionals::potential_energy_of_marginal(
            &rho,
            &self.conv,
            &self.grid.q_axes,
            self.e2,
        );
        AuditRow {
            t,
            mass: f.mass(),
            energy: functionals::kinetic_energy(f, self.m) + potential,
            momentum: functionals::momentum_functional(f),
            center: functionals::center_functional(f),
            angmom: functionals::angmom_functional(f)[0],
            entropy: functionals::entropy(f),
            casimir_x2: functionals::casimir(f, |x| x * x).expect("x^2 is finite"),
            casimir_x32: functionals::casimir(f, |x| x * x.sqrt()).expect("x^1.5 is finite"),
            mass_defect,
            boundary_mass,
        }
    }

    /// L2 norm of the stationarity defect
    /// `p/m . grad_q f - grad_q(e^2 V * rho) . grad_p f`, normalized by
    /// `||f||_2` and the crossing rate `p_rms / (m q_rms)`.
    pub fn stationarity_residual(&self, f: &GridDensity) -> Result<f64> {
        if f.grid != self.grid {
            return Err(Error::Grid("density grid does not match the solver grid".into()));
        }
        let [n0, n1, n2, n3] = self.dims();
        let (h0, h1) = (self.grid.q_axes[0].spacing(), self.grid.q_axes[1].spacing());
        let (h2, h3) = (self.grid.p_axes[0].spacing(), self.grid.p_axes[1].spacing());
        let rho = f.q_marginal();
        let (fx, fy) = self.force(&rho);
        let vals = &f.values;
        let idx = |i0: usize, i1: usize, i2: usize, i3: usize| ((i0 * n1 + i1) * n2 + i2) * n3 + i3;

        let vol = self.grid.cell_volume();
        let partials: Vec<(f64, f64)> = (0..n0)
            .into_par_iter()
            .map(|i0| {
                let mut r2_sum = 0.0;
                let mut f2_sum = 0.0;
                for i1 in 0..n1 {
                    let fxc = fx[i0 * n1 + i1];
                    let fyc = fy[i0 * n1 + i1];
                    for i2 in 0..n2 {
                        let px = self.grid.p_axes[0].center(i2);
                        for i3 in 0..n3 {
                            let py = self.grid.p_axes[1].center(i3);
                            let dfqx = grad_1d(|i| vals[idx(i, i1, i2, i3)], i0, n0, h0);
                            let dfqy = grad_1d(|i| vals[idx(i0, i, i2, i3)], i1, n1, h1);
                            let dfpx = grad_1d(|i| vals[idx(i0, i1, i, i3)], i2, n2, h2);
                            let dfpy = grad_1d(|i| vals[idx(i0, i1, i2, i)], i3, n3, h3);
                            let r = px / self.m * dfqx + py / self.m * dfqy
                                + fxc * dfpx
                                + fyc * dfpy;
                            r2_sum += r * r;
                            let fv = vals[idx(i0, i1, i2, i3)];
                            f2_sum += fv * fv;
                        }
                    }
                }
                (r2_sum * vol, f2_sum * vol)
            })
            .collect();
        let r_l2: f64 = partials.iter().map(|p| p.0).sum::<f64>().sqrt();
        let f_l2: f64 = partials.iter().map(|p| p.1).sum::<f64>().sqrt();

        // crossing rate from the second moments
        let mf = functionals::macrostate(f, self.m);
        let vq = self.grid.q_cell_volume();
        let mut q2 = 0.0;
        for (qi, r) in mf.rho.iter().enumerate() {
            let c = self.grid.q_center(qi);
            q2 += (c[0] * c[0] + c[1] * c[1]) * r * vq;
        }
        let p2 = 2.0 * self.m * mf.total_kinetic();
        let tau_inv = (p2 / q2).sqrt() / self.m;
        Ok(r_l2 / (f_l2 * tau_inv))
    }
}

/// Drift table from an audit history: max |X(t) - X(0)| / scale(X).
pub fn conservation_report(history: &[AuditRow]) -> DriftTable {
    assert!(!history.is_empty());
    let first = &history[0];
    // angular momentum scale: q_rms p_rms estimated through the entropy-
    // free route of kinetic content is unavailable here, so fall back to
    // the larger of |J_0| and the observed spread
    let jscale = history
        .iter()
        .map(|r| r.angmom.abs())
        .fold(first.angmom.abs().max(1e-3), f64::max);
    let rel = |x: f64, x0: f64, scale: f64| (x - x0).abs() / scale.max(1e-300);
    let mut table = DriftTable {
        mass: 0.0,
        energy: 0.0,
        angmom: 0.0,
        entropy: 0.0,
        casimir_x2: 0.0,
        casimir_x32: 0.0,
    };
    for row in history {
        table.mass = table.mass.max(rel(row.mass, first.mass, 1.0));
        table.energy = table.energy.max(rel(row.energy, first.energy, first.energy.abs()));
        table.angmom = table.angmom.max(rel(row.angmom, first.angmom, jscale));
        table.entropy = table.entropy.max(rel(row.entropy, first.entropy, first.entropy.abs()));
        table.casimir_x2 =
            table.casimir_x2.max(rel(row.casimir_x2, first.casimir_x2, first.casimir_x2.abs()));
        table.casimir_x32 = table
            .casimir_x32
            .max(rel(row.casimir_x32, first.casimir_x32, first.casimir_x32.abs()));
    }
    table
}

/// Stationarity surrogate for 3D densities: mean residual over the three
/// axis-aligned 2D phase-space sections (marginalizing the other position
/// and momentum axis pair).
pub fn stationarity_residual_d3_sections(
    f: &GridDensity,
    v: &PairPotential,
    m: f64,
    e2: f64,
) -> Result<f64> {
    if f.grid.dim != 3 {
        return Err(Error::Dimension(f.grid.dim));
    }
    let mut total = 0.0;
    for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
        let sec = section_2d(f, a, b)?;
        let solver = VlasovSolver::new(v, sec.grid.clone(), m, e2)?;
        total += solver.stationarity_residual(&sec)?;
    }
    Ok(total / 3.0)
}

/// Marginalize a 3D density onto the (q_a, q_b, p_a, p_b) section.
fn section_2d(f: &GridDensity, a: usize, b: usize) -> Result<GridDensity> {
    let g3 = &f.grid;
    let grid = PhaseGrid::new(
        2,
        vec![g3.q_axes[a], g3.q_axes[b]],
        vec![g3.p_axes[a], g3.p_axes[b]],
    )?;
    let nq2 = grid.n_q_cells();
    let np2 = grid.n_p_cells();
    let mut vals = vec![0.0; nq2 * np2];
    let npc3 = g3.n_p_cells();
    let drop_axis = 3 - a - b; // axes sum to 0 + 1 + 2
    for qf in 0..g3.n_q_cells() {
        let qm = g3.q_multi(qf);
        let qi2 = qm[a] * grid.q_axes[1].count + qm[b];
        for pf in 0..npc3 {
            let pm = g3.p_multi(pf);
            let pi2 = pm[a] * grid.p_axes[1].count + pm[b];
            vals[qi2 * np2 + pi2] += f.values[qf * npc3 + pf];
        }
    }
    let dv = g3.q_axes[drop_axis].spacing() * g3.p_axes[drop_axis].spacing();
    for v in vals.iter_mut() {
        *v *= dv;
    }
    GridDensity::new(grid, vals)?.normalize()
}

/// Centered first derivative along a line accessor: 4th order in the
/// interior, 2nd order one cell from the edge, one-sided at the edge.
#[inline]
fn grad_1d<F: Fn(usize) -> f64>(get: F, i: usize, n: usize, h: f64) -> f64 {
    if i >= 2 && i + 2 < n {
        (-get(i + 2) + 8.0 * get(i + 1) - 8.0 * get(i - 1) + get(i - 2)) / (12.0 * h)
    } else if i >= 1 && i + 1 < n {
        (get(i + 1) - get(i - 1)) / (2.0 * h)
    } else if i == 0 {
        (get(1) - get(0)) / h
    } else {
        (get(n - 1) - get(n - 2)) / h
    }
}

/// Scratch buffers for one line advection.
struct AdvectScratch {
    edge: Vec<f64>,
    a_l: Vec<f64>,
    a_r: Vec<f64>,
}

impl AdvectScratch {
    fn new(n: usize) -> Self {
        AdvectScratch {
            edge: vec![0.0; n + 1],
            a_l: vec![0.0; n],
            a_r: vec![0.0; n],
        }
    }
}

/// Flux-conservative semi-Lagrangian update of one line by `shift` cells
/// (mass moves toward larger indices for positive shift). The outside of
/// the line is vacuum: inflow is zero, outflow is lost.
fn advect_line(y: &[f64], out: &mut [f64], shift: f64, s: &mut AdvectScratch) {
    let n = y.len();
    if shift == 0.0 {
        out[..n].copy_from_slice(y);
        return;
    }
    let yv = |j: isize| -> f64 {
        if j < 0 || j >= n as isize {
            0.0
        } else {
            y[j as usize]
        }
    };
    // 4th-order edge values, clamped into the neighbor range for
    // positivity and no new extrema
    for e in 0..=n {
        let j = e as isize;
        let raw = (7.0 * (yv(j - 1) + yv(j)) - (yv(j - 2) + yv(j + 1))) / 12.0;
        let lo = yv(j - 1).min(yv(j));
        let hi = yv(j - 1).max(yv(j));
        s.edge[e] = raw.clamp(lo, hi);
    }
    // PPM parabola limiting per cell
    for j in 0..n {
        let mut al = s.edge[j];
        let mut ar = s.edge[j + 1];
        let yj = y[j];
        if (ar - yj) * (yj - al) <= 0.0 {
            al = yj;
            ar = yj;
        } else {
            let da = ar - al;
            let mid = yj - 0.5 * (al + ar);
            if da * mid > da * da / 6.0 {
                al = 3.0 * yj - 2.0 * ar;
            } else if -da * da / 6.0 > da * mid {
                ar = 3.0 * yj - 2.0 * al;
            }
        }
        s.a_l[j] = al;
        s.a_r[j] = ar;
    }
    // integral of the parabola in cell j over [xa, xb] (cell coordinates)
    let seg = |j: isize, xa: f64, xb: f64| -> f64 {
        if j < 0 || j >= n as isize || xb <= xa {
            return 0.0;
        }
        let j = j as usize;
        let al = s.a_l[j];
        let da = s.a_r[j] - al;
        let a6 = 6.0 * (y[j] - 0.5 * (s.a_l[j] + s.a_r[j]));
        let prim = |x: f64| al * x + 0.5 * (da + a6) * x * x - a6 * x * x * x / 3.0;
        prim(xb) - prim(xa)
    };
    let k = shift.floor();
    let alpha = shift - k; // in [0, 1)
    let k = k as isize;
    for (i, o) in out.iter_mut().enumerate().take(n) {
        // departure interval [x_{i-1/2} - shift, x_{i+1/2} - shift] covers
        // the right (alpha) part of cell i-k-1 and the left (1-alpha) of i-k
        let j0 = i as isize - k;
        *o = seg(j0 - 1, 1.0 - alpha, 1.0) + seg(j0, 0.0, 1.0 - alpha);
    }
}

/// Advect along axis 0 of a row-major `[n0, n1, n2, n3]` array; the shift
/// (in cells) depends on the axis-2 index. Lines are gathered into
/// (i0 x i3) tiles so memory access stays cache-friendly.
fn advect_axis0(values: &mut [f64], dims: [usize; 4], shifts_by_i2: &[f64]) {
    let [n0, n1, n2, n3] = dims;
    let s0 = n1 * n2 * n3;
    let ptr = SyncSliceMut(values.as_mut_ptr(), values.len());
    (0..n1 * n2).into_par_iter().for_each(|job| {
        let i1 = job / n2;
        let i2 = job % n2;
        let shift = shifts_by_i2[i2];
        let base = i1 * n2 * n3 + i2 * n3;
        let mut tile = vec![0.0; n0 * n3];
        let mut line = vec![0.0; n0];
        let mut out = vec![0.0; n0];
        let mut scratch = AdvectScratch::new(n0);
        unsafe {
            for i0 in 0..n0 {
                let row = ptr.slice(base + i0 * s0, n3);
                for i3 in 0..n3 {
                    tile[i3 * n0 + i0] = row[i3];
                }
            }
            for i3 in 0..n3 {
                line.copy_from_slice(&tile[i3 * n0..(i3 + 1) * n0]);
                advect_line(&line, &mut out, shift, &mut scratch);
                tile[i3 * n0..(i3 + 1) * n0].copy_from_slice(&out);
            }
            for i0 in 0..n0 {
                let row = ptr.slice_mut(base + i0 * s0, n3);
                for i3 in 0..n3 {
                    row[i3] = tile[i3 * n0 + i0];
                }
            }
        }
    });
}

/// Advect along axis 1; the shift depends on the axis-3 index.
fn advect_axis1(values: &mut [f64], dims: [usize; 4], shifts_by_i3: &[f64]) {
    let [n0, n1, n2, n3] = dims;
    let s1 = n2 * n3;
    let ptr = SyncSliceMut(values.as_mut_ptr(), values.len());
    (0..n0 * n2).into_par_iter().for_each(|job| {
        let i0 = job / n2;
        let i2 = job % n2;
        let base = i0 * n1 * n2 * n3 + i2 * n3;
        let mut tile = vec![0.0; n1 * n3];
        let mut line = vec![0.0; n1];
        let mut out = vec![0.0; n1];
        let mut scratch = AdvectScratch::new(n1);
        unsafe {
            for i1 in 0..n1 {
                let row = ptr.slice(base + i1 * s1, n3);
                for i3 in 0..n3 {
                    tile[i3 * n1 + i1] = row[i3];
                }
            }
            for i3 in 0..n3 {
                line.copy_from_slice(&tile[i3 * n1..(i3 + 1) * n1]);
                advect_line(&line, &mut out, shifts_by_i3[i3], &mut scratch);
                tile[i3 * n1..(i3 + 1) * n1].copy_from_slice(&out);
            }
            for i1 in 0..n1 {
                let row = ptr.slice_mut(base + i1 * s1, n3);
                for i3 in 0..n3 {
                    row[i3] = tile[i3 * n1 + i1];
                }
            }
        }
    });
}

fn q_marginal_raw(values: &[f64], dims: &[usize; 4], vp: f64) -> Vec<f64> {
    let [_, _, n2, n3] = *dims;
    values
        .par_chunks(n2 * n3)
        .map(|c| c.iter().sum::<f64>() * vp)
        .collect()
}

/// Raw pointer wrapper for writing disjoint strided lines from parallel
/// jobs. Callers must guarantee the jobs touch disjoint index sets.
struct SyncSliceMut(*mut f64, usize);
unsafe impl Send for SyncSliceMut {}
unsafe impl Sync for SyncSliceMut {}

impl SyncSliceMut {
    unsafe fn slice(&self, start: usize, len: usize) -> &[f64] {
        debug_assert!(start + len <= self.1);
        std::slice::from_raw_parts(self.0.add(start), len)
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn slice_mut(&self, start: usize, len: usize) -> &mut [f64] {
        debug_assert!(start + len <= self.1);
        std::slice::from_raw_parts_mut(self.0.add(start), len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statefield::density::gaussian_phase_density;

    fn l1_diff(a: &GridDensity, b: &GridDensity) -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            * a.grid.cell_volume()
    }

    #[test]
    fn advect_line_conserves_mass_and_positivity() {
        let y: Vec<f64> = (0..32)
            .map(|i| (-((i as f64 - 16.0) / 2.0_f64).powi(2)).exp())
            .collect();
        let mut out = vec![0.0; 32];
        let mut scratch = AdvectScratch::new(32);
        for shift in [0.3, -0.7, 2.4, -3.9, 0.0] {
            advect_line(&y, &mut out, shift, &mut scratch);
            assert!(out.iter().all(|&v| v >= 0.0), "negative value at shift {shift}");
            // mass conserved when support stays interior
            let m_in: f64 = y.iter().sum();
            let m_out: f64 = out.iter().sum();
            assert!(
                (m_in - m_out).abs() < 1e-12 * m_in,
                "shift {shift}: {m_in} -> {m_out}"
            );
        }
    }

    #[test]
    fn advect_line_shifts_a_profile() {
        // integer shift moves the profile exactly
        let y: Vec<f64> = (0..24).map(|i| if (8..12).contains(&i) { 1.0 } else { 0.0 }).collect();
        let mut out = vec![0.0; 24];
        let mut scratch = AdvectScratch::new(24);
        advect_line(&y, &mut out, 3.0, &mut scratch);
        for i in 0..24 {
            let expect = if (11..15).contains(&i) { 1.0 } else { 0.0 };
            assert!((out[i] - expect).abs() < 1e-12, "cell {i}: {}", out[i]);
        }
    }

    fn free_gaussian(grid: &PhaseGrid, t: f64, m: f64) -> GridDensity {
        // f0(p, q - p t / m) for the (sigma_q, sigma_p) = (1.0, 0.15) Gaussian
        GridDensity::from_fn(grid.clone(), move |p, q| {
            let mut e = 0.0;
            for k in 0..2 {
                let qd = q[k] - p[k] * t / m;
                e -= qd * qd / 2.0 + p[k] * p[k] / (2.0 * 0.15_f64.powi(2));
            }
            e.exp()
        })
        .unwrap()
        .normalize()
        .unwrap()
    }

    #[test]
    fn free_transport_matches_the_closed_form() {
        let grid = PhaseGrid::symmetric(2, 6.0, 0.8, 64).unwrap();
        let v = PairPotential::Zero;
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let mut f = free_gaussian(&grid, 0.0, 1.0);
        let dt = 0.005;
        for _ in 0..100 {
            solver.step(&mut f, dt, 1e-6).unwrap();
        }
        let exact = free_gaussian(&grid, 0.5, 1.0);
        let err = l1_diff(&f, &exact);
        assert!(err <= 1e-3, "free-streaming L1 error {err}");
    }

    #[test]
    fn momentum_marginal_invariant_under_drift() {
        let grid = PhaseGrid::symmetric(2, 6.0, 0.8, 32).unwrap();
        let v = PairPotential::Zero;
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let mut f = free_gaussian(&grid, 0.0, 1.0);
        let before = f.p_marginal();
        solver.drift(&mut f.values, 0.037);
        let after = f.p_marginal();
        let scale = before.iter().cloned().fold(0.0, f64::max);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn thermostatic_state_is_numerically_stationary() {
        let grid = PhaseGrid::symmetric(2, 5.0, 7.0, 64).unwrap();
        let v = PairPotential::harmonic(1.0);
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        // self-consistent thermostatic state at T = 1
        let prob = crate::maxent::MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let init = prob.initial_rho(2.0);
        let (rho, _, _, _) = prob
            .solve_fixed_point_centered(&init, 1.0, [0.0; 3], &Default::default())
            .unwrap();
        let f0 = prob.assemble_f(&rho, 1.0, [0.0; 3]).unwrap();
        let mut f = f0.clone();
        let dt = 0.1;
        let steps = 10; // one time unit
        for _ in 0..steps {
            solver.step(&mut f, dt, 1e-9).unwrap();
        }
        let sup: f64 = f
            .values
            .iter()
            .zip(&f0.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let rate = sup / (dt * steps as f64);
        assert!(rate <= 1e-3, "sup-norm change per unit time: {rate}");
    }

    #[test]
    fn reversibility_up_to_interpolation_error() {
        let grid = PhaseGrid::symmetric(2, 5.0, 7.0, 32).unwrap();
        let v = PairPotential::harmonic(1.0);
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let f0 = gaussian_phase_density(&grid, 1.0, 1.0, &[0.5, 0.5], 0.0).unwrap();
        let mut f = f0.clone();
        let dt = 0.05;
        solver.step(&mut f, dt, 1e-6).unwrap();
        let one_step_err = l1_diff(&f, &f0); // stationary: change == error
        solver.step(&mut f, -dt, 1e-6).unwrap();
        let back_err = l1_diff(&f, &f0);
        assert!(
            back_err <= 2.0 * one_step_err,
            "forward-backward error {back_err} vs one-step change {one_step_err}"
        );
    }

    #[test]
    fn rotating_maxwellian_residual_small_and_off_center_flips() {
        let (t, w) = (1.0, 0.6);
        let sigma2 = t / (2.0 - w * w);
        let grid = PhaseGrid::symmetric(2, 4.5, 7.5, 64).unwrap();
        let v = PairPotential::harmonic(1.0);
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let f = gaussian_phase_density(&grid, 1.0, t, &[sigma2, sigma2], w).unwrap();
        let r_centered = solver.stationarity_residual(&f).unwrap();
        assert!(r_centered <= 1e-3, "centered residual {r_centered}");

        // displacing the density by one cell while the rotation profile
        // stays referenced to the origin breaks stationarity (the full
        // translate would be stationary again by translation covariance)
        let a = grid.q_axes[0].spacing();
        let f_shift = GridDensity::from_fn(grid.clone(), move |p, q| {
            let shift = [-w * q[1], w * q[0]];
            let mut e = 0.0;
            for k in 0..2 {
                let dp = p[k] - shift[k];
                e -= dp * dp / (2.0 * t);
            }
            let dq = [q[0] - a, q[1]];
            e -= (dq[0] * dq[0] + dq[1] * dq[1]) / (2.0 * sigma2);
            e.exp()
        })
        .unwrap()
        .normalize()
        .unwrap();
        let r_shifted = solver.stationarity_residual(&f_shift).unwrap();
        assert!(
            r_shifted > 10.0 * r_centered,
            "shifted residual {r_shifted} vs centered {r_centered}"
        );
    }

    #[test]
    fn residual_decreases_under_refinement() {
        let (t, w) = (1.0, 0.6);
        let sigma2 = t / (2.0 - w * w);
        let v = PairPotential::harmonic(1.0);
        let res = |n: usize| {
            let grid = PhaseGrid::symmetric(2, 4.5, 7.5, n).unwrap();
            let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
            let f = gaussian_phase_density(&grid, 1.0, t, &[sigma2, sigma2], w).unwrap();
            solver.stationarity_residual(&f).unwrap()
        };
        let r32 = res(32);
        let r64 = res(64);
        assert!(r64 < r32, "residual did not decrease: {r32} -> {r64}");
    }

    #[test]
    fn conservation_audit_over_a_short_stationary_run() {
        let grid = PhaseGrid::symmetric(2, 5.0, 7.0, 32).unwrap();
        let v = PairPotential::harmonic(1.0);
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let f0 = gaussian_phase_density(&grid, 1.0, 1.0, &[0.5, 0.5], 0.0).unwrap();
        let spec = VlasovRunSpec {
            dt: 0.05,
            steps: 40,
            audit_every: 10,
            boundary_mass_limit: 1e-7,
        };
        let run = solver.run(f0, &spec, |_, _, _| {}).unwrap();
        let drift = conservation_report(&run.history);
        assert!(drift.mass <= 1e-9, "mass drift {}", drift.mass);
        assert!(drift.energy <= 5e-3, "energy drift {}", drift.energy);
        assert!(drift.entropy <= 2e-2, "entropy drift {}", drift.entropy);
        // positivity after stepping
        assert!(run.f_final.values.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn run_refuses_non_confining_potential() {
        let grid = PhaseGrid::symmetric(2, 3.0, 3.0, 16).unwrap();
        let v = PairPotential::Zero;
        let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let f0 = gaussian_phase_density(&grid, 1.0, 1.0, &[0.4, 0.4], 0.0).unwrap();
        let spec = VlasovRunSpec { dt: 0.01, steps: 1, audit_every: 1, boundary_mass_limit: 1e-6 };
        assert!(matches!(
            solver.run(f0, &spec, |_, _, _| {}),
            Err(Error::HypothesesNotMet { .. })
        ));
    }

    #[test]
    fn free_streaming_accuracy_and_convergence_order() {
        // compare against the closed-form free-streaming solution at two
        // resolutions: the finer run must beat 1e-3 in L1 and the observed
        // order must be at least 1.8
        let v = PairPotential::Zero;
        let horizon = 0.5;
        let err_at = |n: usize| -> f64 {
            let grid = PhaseGrid::symmetric(2, 6.0, 0.8, n).unwrap();
            let solver = VlasovSolver::new(&v, grid.clone(), 1.0, 1.0).unwrap();
            let mk = |t: f64| {
                GridDensity::from_fn(grid.clone(), move |p, q| {
                    let mut e = 0.0;
                    for k in 0..2 {
                        let qd = q[k] - p[k] * t;
                        e -= qd * qd / 2.0 + p[k] * p[k] / (2.0 * 0.15_f64.powi(2));
                    }
                    e.exp()
                })
                .unwrap()
                .normalize()
                .unwrap()
            };
            let mut f = mk(0.0);
            let steps = 50;
            let dt = horizon / steps as f64;
            for _ in 0..steps {
                solver.step(&mut f, dt, 1e-6).unwrap();
            }
            l1_diff(&f, &mk(horizon))
        };
        let e48 = err_at(48);
        let e64 = err_at(64);
        assert!(e64 <= 1e-3, "L1 error at 64/axis: {e64}");
        let order = (e48 / e64).ln() / (64.0_f64 / 48.0).ln();
        assert!(order >= 1.8, "convergence order {order} (e48 {e48}, e64 {e64})");
    }
}
