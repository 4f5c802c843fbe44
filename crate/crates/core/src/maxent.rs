//! Constrained maximum-entropy equilibria: the self-consistent fixed-point
//! equation for the position density, outer matching of the Lagrange
//! multipliers to prescribed energy and angular momentum, assembly of the
//! full phase-space density as a locally shifted Maxwellian, and the
//! static/stationary/dynamical classification.
//!
//! The equilibrium factorizes as
//! `f(p,q) = (2 pi m T)^(-d/2) exp(-|p - m w x q|^2 / 2mT) rho(q)`,
//! with `rho` solving
//! `rho(q) ~ exp(-(1/T)[e^2 (V*rho)(q) - m/2 |w x q|^2] + lambda_q . q)`.
//! The momentum multiplier vanishes identically; `lambda_E = -1/T` and
//! `lambda_J = w/T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PairPotential;
use crate::statefield::density::GridDensity;
use crate::statefield::fields::Convolver;
use crate::statefield::grid::{AxisSpec, PhaseGrid};

/// Lagrange multipliers in physical parametrization: `lambda_E = -1/T`,
/// `lambda_J = omega / T`, `lambda_P = 0`, with the normalization
/// multiplier eliminated through the partition function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub temperature: f64,
    /// Angular frequency vector; stored as `[w_z]` in 2D, `[w_x, w_y, w_z]`
    /// in 3D.
    pub omega: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub lambda_n: f64,
}

impl MultiplierSet {
    pub fn omega_vec3(&self) -> [f64; 3] {
        match self.omega.len() {
            1 => [0.0, 0.0, self.omega[0]],
            3 => [self.omega[0], self.omega[1], self.omega[2]],
            _ => [0.0, 0.0, 0.0],
        }
    }
}

/// Residual magnitudes of the constraints, recomputed from the returned
/// density rather than from iteration bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintErrors {
    pub energy: f64,
    pub angmom: f64,
    pub momentum: f64,
    pub center: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Thermostatic,
    Thermostationary,
    Thermodynamical,
    Unclassified,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Classification::Thermostatic => "thermostatic",
            Classification::Thermostationary => "thermostationary",
            Classification::Thermodynamical => "thermodynamical",
            Classification::Unclassified => "unclassified",
        };
        f.write_str(s)
    }
}

/// Solver output: position density on the grid, multipliers, recomputed
/// residuals, and iteration counts. The assembled density is produced
/// separately by [`MaxentProblem::assemble_f`].
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub multipliers: MultiplierSet,
    /// Sup-norm displacement of the fixed-point map at the returned rho.
    pub residual: f64,
    pub constraint_errors: ConstraintErrors,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub classification: Classification,
    pub entropy: f64,
    pub energy: f64,
    pub angmom: Vec<f64>,
    pub epsilon_target: f64,
    pub angmom_target: Vec<f64>,
    /// Bulk speed relative to the thermal speed; drives the
    /// static-vs-stationary distinction.
    pub u_field_norm: f64,
    #[serde(skip)]
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { damping: 0.5, tol: 1e-8, max_iter: 600 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    pub inner: FixedPointOptions,
    /// Relative tolerance on every constraint residual.
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { inner: FixedPointOptions::default(), outer_tol: 1e-6, max_outer: 48 }
    }
}

/// Relative bulk-speed threshold below which a solution counts as static.
pub const DEFAULT_TOL_U: f64 = 1e-3;

/// One mean-field maximum-entropy problem: potential, phase grid, species
/// parameters.
pub struct MaxentProblem<'a> {
    pub v: &'a PairPotential,
    pub grid: PhaseGrid,
    pub m: f64,
    pub e2: f64,
    conv: Convolver,
}

/// Interaction field `(V * rho)(q)` on the position grid; `rho` must be
/// normalized there.
pub fn mean_field_potential(
    q_axes: &[AxisSpec],
    rho: &[f64],
    v: &PairPotential,
) -> Result<Vec<f64>> {
    let vq: f64 = q_axes.iter().map(|a| a.spacing()).product();
    let mass: f64 = rho.iter().sum::<f64>() * vq;
    if (mass - 1.0).abs() > crate::statefield::NORMALIZATION_TOL {
        return Err(Error::NotNormalized { defect: (mass - 1.0).abs() });
    }
    Ok(Convolver::new(q_axes, v).apply(rho))
}

impl<'a> MaxentProblem<'a> {
    pub fn new(v: &'a PairPotential, grid: PhaseGrid, m: f64, e2: f64) -> Result<Self> {
        v.require_mean_field()?;
        if !(m > 0.0 && e2 > 0.0) {
            return Err(Error::Domain(format!("need m > 0 and e2 > 0, got {m}, {e2}")));
        }
        let conv = Convolver::new(&grid.q_axes, v);
        Ok(MaxentProblem { v, grid, m, e2, conv })
    }

    fn q_cell_volume(&self) -> f64 {
        self.grid.q_cell_volume()
    }

    /// Log Boltzmann weight `-(1/T)(e^2 V*rho - m/2 |w x q|^2) + lambda . q`
    /// per position cell.
    fn log_weight(
        &self,
        rho: &[f64],
        t: f64,
        omega: [f64; 3],
        lambda_q: &[f64],
    ) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {t}")));
        }
        let field = self.conv.apply(rho);
        let d = self.grid.dim;
        let nq = self.grid.n_q_cells();
        let mut expo = vec![0.0; nq];
        for j in 0..nq {
            let qc = self.grid.q_center(j);
            let cent = 0.5 * self.m * norm2(cross3(omega, qc));
            let mut lq = 0.0;
            for k in 0..d {
                lq += lambda_q[k] * qc[k];
            }
            let e = -(self.e2 * field[j] - cent) / t + lq;
            if !e.is_finite() {
                return Err(Error::FixedPointDiverged(format!(
                    "non-finite exponent at cell {j}"
                )));
            }
            expo[j] = e;
        }
        Ok(expo)
    }

    /// Normalize `exp(expo)` on the grid; errs if the maximum sits on the
    /// domain boundary, which means the Boltzmann factor is not
    /// normalizable (the centrifugal term has beaten the confinement).
    fn normalize_weight(&self, expo: &[f64], omega: [f64; 3]) -> Result<Vec<f64>> {
        let mut max_expo = f64::NEG_INFINITY;
        let mut argmax = 0;
        for (j, &e) in expo.iter().enumerate() {
            if e > max_expo {
                max_expo = e;
                argmax = j;
            }
        }
        if self.on_q_boundary(argmax) {
            return Err(Error::CentrifugalLimit {
                omega: norm2(omega).sqrt(),
                detail: "Boltzmann factor peaks on the domain boundary; reduce |omega| or check confinement".into(),
            });
        }
        let vq = self.q_cell_volume();
        let mut out = vec![0.0; expo.len()];
        let mut z = 0.0;
        for (o, &e) in out.iter_mut().zip(expo) {
            *o = (e - max_expo).exp();
            z += *o * vq;
        }
        for o in out.iter_mut() {
            *o /= z;
        }
        Ok(out)
    }

    /// One application of the fixed-point map: the normalized Boltzmann
    /// factor of the mean-field plus centrifugal potential.
    pub fn rho_fixed_point_map(
        &self,
        rho: &[f64],
        t: f64,
        omega: [f64; 3],
        lambda_q: &[f64],
    ) -> Result<Vec<f64>> {
        let expo = self.log_weight(rho, t, omega, lambda_q)?;
        self.normalize_weight(&expo, omega)
    }

    /// Centered fixed-point map: applies the map with the center-of-mass
    /// multiplier chosen so the output first moment vanishes. For
    /// `omega != 0` the raw map amplifies any centroid drift by
    /// `1/(1 - m w^2 / 2 e^2) > 1` per iteration, so pinning the moment
    /// inside the iteration is what makes the damped scheme convergent.
    /// Returns the density and the multiplier.
    pub fn rho_fixed_point_map_centered(
        &self,
        rho: &[f64],
        t: f64,
        omega: [f64; 3],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.grid.dim;
        let expo0 = self.log_weight(rho, t, omega, &vec![0.0; d])?;
        let lambda = self.center_multiplier(&expo0)?;
        let mut expo = expo0;
        for (j, e) in expo.iter_mut().enumerate() {
            let qc = self.grid.q_center(j);
            for k in 0..d {
                *e += lambda[k] * qc[k];
            }
        }
        let out = self.normalize_weight(&expo, omega)?;
        Ok((out, lambda))
    }

    /// Newton on the strictly convex log-partition: find `lambda` with
    /// `<q>_{exp(expo0 + lambda . q)} = 0`.
    fn center_multiplier(&self, expo0: &[f64]) -> Result<Vec<f64>> {
        let d = self.grid.dim;
        let nq = self.grid.n_q_cells();
        let q_scale: f64 = self
            .grid
            .q_axes
            .iter()
            .map(|a| a.max.abs().max(a.min.abs()))
            .fold(0.0, f64::max);
        let tol = 1e-13 * q_scale;
        let mut lambda = vec![0.0; d];
        for _ in 0..40 {
            // moments of the tilted weight
            let mut max_e = f64::NEG_INFINITY;
            for j in 0..nq {
                let qc = self.grid.q_center(j);
                let mut e = expo0[j];
                for k in 0..d {
                    e += lambda[k] * qc[k];
                }
                max_e = max_e.max(e);
            }
            let mut z = 0.0;
            let mut m1 = [0.0; 3];
            let mut m2 = [[0.0; 3]; 3];
            for j in 0..nq {
                let qc = self.grid.q_center(j);
                let mut e = expo0[j];
                for k in 0..d {
                    e += lambda[k] * qc[k];
                }
                let w = (e - max_e).exp();
                z += w;
                for k in 0..d {
                    m1[k] += w * qc[k];
                    for l in 0..d {
                        m2[k][l] += w * qc[k] * qc[l];
                    }
                }
            }
            let mut mean = [0.0; 3];
            let mut worst: f64 = 0.0;
            for k in 0..d {
                mean[k] = m1[k] / z;
                worst = worst.max(mean[k].abs());
            }
            if worst <= tol {
                return Ok(lambda);
            }
            let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
            for k in 0..d {
                for l in 0..d {
                    cov[(k, l)] = m2[k][l] / z - mean[k] * mean[l];
                }
            }
            let rhs = nalgebra::DVector::from_iterator(d, mean[..d].iter().map(|v| -v));
            let step = cov.lu().solve(&rhs).ok_or_else(|| {
                Error::FixedPointDiverged("singular covariance in the centering solve".into())
            })?;
            for k in 0..d {
                lambda[k] += step[k];
            }
        }
        Err(Error::FixedPointDiverged(
            "center-of-mass multiplier did not converge".into(),
        ))
    }

    fn on_q_boundary(&self, qflat: usize) -> bool {
        let mi = self.grid.q_multi(qflat);
        (0..self.grid.dim).any(|k| mi[k] == 0 || mi[k] + 1 == self.grid.q_axes[k].count)
    }

    /// Damped iteration of the fixed-point map until the undamped sup-norm
    /// displacement drops below `tol`. Returns the density, the recomputed
    /// residual, and the iteration count.
    pub fn solve_fixed_point(
        &self,
        rho0: &[f64],
        t: f64,
        omega: [f64; 3],
        lambda_q: &[f64],
        opts: &FixedPointOptions,
    ) -> Result<(Vec<f64>, f64, usize)> {
        let lq = lambda_q.to_vec();
        let (rho, _, residual, iters) = self.damped_iteration(
            rho0,
            opts,
            |rho| Ok((self.rho_fixed_point_map(rho, t, omega, &lq)?, lq.clone())),
        )?;
        Ok((rho, residual, iters))
    }

    /// Centered variant: the center-of-mass multiplier is re-solved inside
    /// every map application, so each iterate has a vanishing first moment.
    /// Returns `(rho, lambda_q, residual, iterations)`.
    pub fn solve_fixed_point_centered(
        &self,
        rho0: &[f64],
        t: f64,
        omega: [f64; 3],
        opts: &FixedPointOptions,
    ) -> Result<(Vec<f64>, Vec<f64>, f64, usize)> {
        self.damped_iteration(rho0, opts, |rho| self.rho_fixed_point_map_centered(rho, t, omega))
    }

    fn damped_iteration<F>(
        &self,
        rho0: &[f64],
        opts: &FixedPointOptions,
        map: F,
    ) -> Result<(Vec<f64>, Vec<f64>, f64, usize)>
    where
        F: Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
    {
        if !(opts.damping > 0.0 && opts.damping <= 1.0) {
            return Err(Error::Domain(format!("damping must lie in (0, 1], got {}", opts.damping)));
        }
        let theta = opts.damping;
        let mut rho = rho0.to_vec();
        let mut history = Vec::new();
        for iter in 0..opts.max_iter {
            let (mapped, _) = map(&rho)?;
            let mut disp: f64 = 0.0;
            for (a, b) in mapped.iter().zip(&rho) {
                disp = disp.max((a - b).abs());
            }
            history.push(disp);
            for (r, mp) in rho.iter_mut().zip(&mapped) {
                *r = (1.0 - theta) * *r + theta * mp;
            }
            if disp < opts.tol {
                // converged: report the residual recomputed at the final
                // iterate, not the last iteration displacement
                let (fresh, lambda) = map(&rho)?;
                let residual = fresh
                    .iter()
                    .zip(&rho)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                return Ok((rho, lambda, residual, iter + 1));
            }
        }
        Err(Error::FixedPointNonConvergence {
            residual: *history.last().unwrap_or(&f64::NAN),
            iterations: opts.max_iter,
            history,
        })
    }

    /// Gaussian initial guess with the variance set by a crude virial
    /// balance `e^2 V(2 sigma) ~ epsilon`.
    pub fn initial_rho(&self, epsilon: f64) -> Vec<f64> {
        let q_half = self
            .grid
            .q_axes
            .iter()
            .map(|a| a.max.abs().max(a.min.abs()))
            .fold(f64::INFINITY, f64::min);
        let mut sigma = q_half / 4.0;
        // bisect V(2 sigma) = eps / e2 on (0, q_half)
        let target = epsilon / self.e2;
        let (mut lo, mut hi) = (1e-6 * q_half, q_half);
        let val = |s: f64| self.v.eval_unchecked(2.0 * s);
        if val(lo) < target && val(hi) > target {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if val(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            sigma = (0.5 * (lo + hi)).clamp(0.05 * q_half, 0.5 * q_half);
        }
        let nq = self.grid.n_q_cells();
        let vq = self.q_cell_volume();
        let mut rho = vec![0.0; nq];
        let mut z = 0.0;
        for (j, r) in rho.iter_mut().enumerate() {
            let qc = self.grid.q_center(j);
            let q2: f64 = qc[..self.grid.dim].iter().map(|x| x * x).sum();
            *r = (-q2 / (2.0 * sigma * sigma)).exp();
            z += *r * vq;
        }
        for r in rho.iter_mut() {
            *r /= z;
        }
        rho
    }

    /// Functionals of the factored equilibrium exactly as midpoint
    /// quadrature of the assembled, renormalized grid density would give
    /// them, without materializing the phase grid.
    pub fn factored_functionals(
        &self,
        rho: &[f64],
        t: f64,
        omega: [f64; 3],
    ) -> FactoredFunctionals {
        let d = self.grid.dim;
        let m = self.m;
        let vq = self.q_cell_volume();
        let vp = self.grid.p_cell_volume();
        let c_m = (2.0 * std::f64::consts::PI * m * t).powf(-(d as f64) / 2.0);
        let nq = self.grid.n_q_cells();

        // per-axis momentum grids
        let p_axes = &self.grid.p_axes;

        let mut z = 0.0;
        let mut kinetic = 0.0;
        let mut momentum = [0.0; 3];
        let mut center = [0.0; 3];
        let mut angmom = [0.0; 3];
        let mut ent_cross = 0.0; // sum of rho * <|p-s|^2>-type entropy term
        let mut ent_log = 0.0; // sum of mass * ln rho
        let mut rho_eff = vec![0.0; nq];

        let mut w0 = [0.0; 3];
        let mut w1 = [0.0; 3];
        let mut w2 = [0.0; 3];
        let mut w2c = [0.0; 3];
        for j in 0..nq {
            let r = rho[j];
            if r <= 0.0 {
                continue;
            }
            let qc = self.grid.q_center(j);
            let s = scale3(cross3(omega, qc), m); // shift m (w x q)
            for k in 0..d {
                let axis = &p_axes[k];
                let (mut a0, mut a1, mut a2, mut a2c) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..axis.count {
                    let p = axis.center(i);
                    let dp = p - s[k];
                    let e = (-dp * dp / (2.0 * m * t)).exp();
                    a0 += e;
                    a1 += p * e;
                    a2 += p * p * e;
                    a2c += dp * dp * e;
                }
                w0[k] = a0;
                w1[k] = a1;
                w2[k] = a2;
                w2c[k] = a2c;
            }
            let prod0: f64 = w0[..d].iter().product();
            let weight = r * c_m * vq * vp;
            z += weight * prod0;
            rho_eff[j] = r * c_m * prod0 * vp;

            let mut sum_w2_over = 0.0;
            let mut sum_w2c_over = 0.0;
            let mut p1 = [0.0; 3];
            for k in 0..d {
                let others: f64 = (0..d).filter(|&jj| jj != k).map(|jj| w0[jj]).product();
                sum_w2_over += w2[k] * others;
                sum_w2c_over += w2c[k] * others;
                p1[k] = w1[k] * others;
            }
            kinetic += weight * sum_w2_over / (2.0 * m);
            for k in 0..d {
                momentum[k] += weight * p1[k];
                center[k] += weight * prod0 * qc[k];
            }
            if d == 2 {
                angmom[0] += weight * (qc[0] * p1[1] - qc[1] * p1[0]);
            } else {
                angmom[0] += weight * (qc[1] * p1[2] - qc[2] * p1[1]);
                angmom[1] += weight * (qc[2] * p1[0] - qc[0] * p1[2]);
                angmom[2] += weight * (qc[0] * p1[1] - qc[1] * p1[0]);
            }
            ent_cross += weight * sum_w2c_over / (2.0 * m * t);
            ent_log += weight * prod0 * r.ln();
        }

        // renormalize: the assembled density divides by its truncated mass
        let inv_z = 1.0 / z;
        kinetic *= inv_z;
        for k in 0..3 {
            momentum[k] *= inv_z;
            center[k] *= inv_z;
            angmom[k] *= inv_z;
        }
        for re in rho_eff.iter_mut() {
            *re *= inv_z;
        }
        // entropy: -sum f ln f = -(ln c_m - ln z) - <ln rho> + <|p-s|^2/2mT>
        let entropy = -(c_m.ln() - z.ln()) - ent_log * inv_z + ent_cross * inv_z;

        let potential = crate::statefield::functionals::potential_energy_of_marginal(
            &rho_eff,
            &self.conv,
            &self.grid.q_axes,
            self.e2,
        );

        let angmom_out = if d == 2 { vec![angmom[0]] } else { angmom.to_vec() };
        FactoredFunctionals {
            coverage: z / (rho.iter().sum::<f64>() * vq),
            energy: kinetic + potential,
            kinetic,
            potential,
            momentum: momentum[..d].to_vec(),
            center: center[..d].to_vec(),
            angmom: angmom_out,
            entropy,
            rho_eff,
        }
    }

    /// Momentum-grid half-width required per axis: `5 sqrt(mT)` plus the
    /// largest rotation shift over the position domain.
    fn required_p_half(&self, t: f64, omega: [f64; 3], axis: usize) -> f64 {
        let mut max_shift: f64 = 0.0;
        for corner in 0..(1 << self.grid.dim) {
            let mut q = [0.0; 3];
            for k in 0..self.grid.dim {
                q[k] = if corner >> k & 1 == 1 { self.grid.q_axes[k].max } else { self.grid.q_axes[k].min };
            }
            let s = scale3(cross3(omega, q), self.m);
            max_shift = max_shift.max(s[axis].abs());
        }
        5.0 * (self.m * t).sqrt() + max_shift
    }

    /// Assemble the full phase-space density `Maxwellian(p - m w x q) rho(q)`
    /// on the grid and renormalize; errs when the momentum grid is too
    /// narrow or more than 0.1% of the mass is truncated.
    pub fn assemble_f(&self, rho: &[f64], t: f64, omega: [f64; 3]) -> Result<GridDensity> {
        let d = self.grid.dim;
        for k in 0..d {
            let axis = &self.grid.p_axes[k];
            let available = axis.max.min(-axis.min);
            let required = self.required_p_half(t, omega, k);
            if available < required {
                return Err(Error::MomentumGridTooNarrow { required, available });
            }
        }
        let m = self.m;
        let npc = self.grid.n_p_cells();
        let mut values = vec![0.0; self.grid.n_cells()];
        use rayon::prelude::*;
        values.par_chunks_mut(npc).enumerate().for_each(|(qi, block)| {
            let r = rho[qi];
            if r <= 0.0 {
                return;
            }
            let qc = self.grid.q_center(qi);
            let s = scale3(cross3(omega, qc), m);
            for (pi, v) in block.iter_mut().enumerate() {
                let pc = self.grid.p_center(pi);
                let mut e = 0.0;
                for k in 0..d {
                    let dp = pc[k] - s[k];
                    e -= dp * dp;
                }
                *v = (e / (2.0 * m * t)).exp() * r;
            }
        });
        let c_m = (2.0 * std::f64::consts::PI * m * t).powf(-(d as f64) / 2.0);
        for v in values.iter_mut() {
            *v *= c_m;
        }
        let f = GridDensity::new(self.grid.clone(), values)?;
        let coverage = f.mass(); // rho is normalized, Maxwellian integral is 1
        if (coverage - 1.0).abs() > 1e-3 {
            return Err(Error::MassOutsideGrid {
                lost_fraction: (coverage - 1.0).abs(),
                limit: 1e-3,
            });
        }
        f.normalize()
    }

    /// Solve the outer problem: find `(T, |omega|, lambda_q)` such that the
    /// inner fixed point satisfies `E(f) = epsilon`, `J(f) = ell`,
    /// `Q(f) = 0`. `ell` has 1 component in 2D and 3 in 3D.
    pub fn match_constraints(
        &self,
        epsilon: f64,
        ell: &[f64],
        opts: &MatchOptions,
    ) -> Result<SolveReport> {
        let d = self.grid.dim;
        let expected = if d == 2 { 1 } else { 3 };
        if ell.len() != expected {
            return Err(Error::Domain(format!(
                "angular momentum needs {expected} components in {d}D, got {}",
                ell.len()
            )));
        }
        let ell_mag = norm_slice(ell);
        let ell_dir: [f64; 3] = if ell_mag > 0.0 {
            match d {
                2 => [0.0, 0.0, ell[0] / ell_mag],
                _ => [ell[0] / ell_mag, ell[1] / ell_mag, ell[2] / ell_mag],
            }
        } else {
            [0.0, 0.0, 0.0]
        };
        let with_omega = ell_mag > 0.0;

        // unknowns: ln T, then |omega| (when angular momentum is
        // prescribed); the center multiplier is solved inside the map
        let n_unknowns = 1 + usize::from(with_omega);
        let mut rho = self.initial_rho(epsilon);

        // bracket T on the energy residual with omega = 0 to seed Newton
        // and detect infeasible targets early; temperatures below the
        // momentum-grid resolution floor count as unreachable
        let t_floor = {
            let h_p = self.grid.p_axes.iter().map(|a| a.spacing()).fold(0.0, f64::max);
            h_p * h_p / self.m
        };
        let mut t_guess = (epsilon / d as f64).max(t_floor);
        let mut inner_total = 0usize;
        {
            let mut lo = t_guess;
            let mut e_lo = self.energy_at(&mut rho, lo, [0.0; 3], &opts.inner, &mut inner_total)?;
            let mut hi = lo;
            let mut e_hi = e_lo;
            let mut steps = 0;
            while e_lo > epsilon && steps < 60 {
                hi = lo;
                e_hi = e_lo;
                lo /= 2.0;
                match self.energy_at(&mut rho, lo, [0.0; 3], &opts.inner, &mut inner_total) {
                    Ok(e) => e_lo = e,
                    Err(_) => {
                        return Err(Error::InfeasibleEnergy {
                            epsilon,
                            detail: format!(
                                "energy is still {e_hi:.6} at T = {hi:.3e} and smaller temperatures are unresolvable on this grid; target below the discretized ground state"
                            ),
                        })
                    }
                }
                steps += 1;
            }
            while e_hi < epsilon && steps < 120 {
                lo = hi;
                e_lo = e_hi;
                hi *= 2.0;
                e_hi = self.energy_at(&mut rho, hi, [0.0; 3], &opts.inner, &mut inner_total)?;
                steps += 1;
            }
            if e_lo > epsilon {
                return Err(Error::InfeasibleEnergy {
                    epsilon,
                    detail: format!(
                        "energy stays above the target down to T = {lo:.3e} (E = {e_lo:.6}); target below the discretized ground state"
                    ),
                });
            }
            if e_hi < epsilon {
                return Err(Error::InfeasibleEnergy {
                    epsilon,
                    detail: format!(
                        "energy stays below the target up to T = {hi:.3e} (E = {e_hi:.6}); enlarge the position grid"
                    ),
                });
            }
            let (mut t_lo, mut t_hi) = (lo, hi);
            // secant/bisection on the bracket to land near the solution
            for _ in 0..40 {
                let mid = (t_lo * t_hi).sqrt();
                let e_mid =
                    self.energy_at(&mut rho, mid, [0.0; 3], &opts.inner, &mut inner_total)?;
                if (e_mid - epsilon).abs() <= 1e-3 * epsilon.abs().max(1.0) {
                    t_guess = mid;
                    break;
                }
                if e_mid < epsilon {
                    t_lo = mid;
                } else {
                    t_hi = mid;
                }
                t_guess = (t_lo * t_hi).sqrt();
            }
        }

        let sigma2_est: f64 = {
            // second moment of the current rho for the omega seed
            let vq = self.q_cell_volume();
            let mut s = 0.0;
            for (j, r) in rho.iter().enumerate() {
                let qc = self.grid.q_center(j);
                s += (qc[0] * qc[0] + qc[1] * qc[1]) * r * vq;
            }
            (s / 2.0).max(1e-6)
        };
        let mut x = vec![0.0; n_unknowns];
        x[0] = t_guess.ln();
        if with_omega {
            x[1] = ell_mag / (2.0 * self.m * sigma2_est);
        }

        let scale_e = epsilon.abs().max(1.0);
        let scale_j = ell_mag.max(1.0);

        struct Eval {
            r: Vec<f64>,
            rho: Vec<f64>,
            lambda_q: Vec<f64>,
            ff: FactoredFunctionals,
            fp_residual: f64,
        }
        let residuals = |this: &Self,
                         x: &[f64],
                         rho_init: &[f64],
                         inner_total: &mut usize|
         -> Result<Eval> {
            let t = x[0].exp();
            let w = if with_omega { x[1] } else { 0.0 };
            let omega = scale3(ell_dir, w);
            let (rho_new, lambda_q, fp_residual, iters) =
                this.solve_fixed_point_centered(rho_init, t, omega, &opts.inner)?;
            *inner_total += iters;
            let ff = this.factored_functionals(&rho_new, t, omega);
            let mut r = Vec::with_capacity(n_unknowns);
            r.push((ff.energy - epsilon) / scale_e);
            if with_omega {
                let j_par = dot_dir(&ff.angmom, ell_dir, d);
                r.push((j_par - ell_mag) / scale_j);
            }
            Ok(Eval { r, rho: rho_new, lambda_q, ff, fp_residual })
        };

        let mut outer_iters = 0usize;
        let mut cur = residuals(self, &x, &rho, &mut inner_total)?;
        let mut rnorm = norm_slice(&cur.r);

        while rnorm > opts.outer_tol && outer_iters < opts.max_outer {
            outer_iters += 1;
            // forward-difference Jacobian; the residuals carry inner-solve
            // noise ~ tol, so the FD step must stay well above sqrt of it
            let mut jac = nalgebra::DMatrix::<f64>::zeros(cur.r.len(), n_unknowns);
            for c in 0..n_unknowns {
                let h = 1e-3 * x[c].abs().max(1.0);
                let mut xp = x.clone();
                xp[c] += h;
                match residuals(self, &xp, &cur.rho, &mut inner_total) {
                    Ok(ev) => {
                        for rr in 0..cur.r.len() {
                            jac[(rr, c)] = (ev.r[rr] - cur.r[rr]) / h;
                        }
                    }
                    Err(_) => {
                        // off-limits direction (e.g. centrifugal breakdown):
                        // difference backwards instead
                        let mut xm = x.clone();
                        xm[c] -= h;
                        let ev = residuals(self, &xm, &cur.rho, &mut inner_total)?;
                        for rr in 0..cur.r.len() {
                            jac[(rr, c)] = (cur.r[rr] - ev.r[rr]) / h;
                        }
                    }
                }
            }
            let rhs = nalgebra::DVector::from_iterator(cur.r.len(), cur.r.iter().map(|v| -v));
            let step = jac.clone().lu().solve(&rhs).ok_or_else(|| {
                Error::MultiplierSolve("singular outer Jacobian".into())
            })?;

            // damped line search with centrifugal-failure backoff
            let mut accepted = false;
            let mut t_ls = 1.0;
            let mut last_err: Option<Error> = None;
            for _ in 0..8 {
                let mut xt = x.clone();
                for c in 0..n_unknowns {
                    xt[c] += t_ls * step[c];
                }
                match residuals(self, &xt, &cur.rho, &mut inner_total) {
                    Ok(ev) => {
                        let nt = norm_slice(&ev.r);
                        if nt < rnorm * (1.0 - 1e-4 * t_ls) || nt < opts.outer_tol {
                            x = xt;
                            cur = ev;
                            rnorm = nt;
                            accepted = true;
                            break;
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
                t_ls *= 0.5;
            }
            if !accepted {
                // secant fallback on the temperature alone, holding the
                // other multipliers fixed
                let e_resid = cur.r[0];
                let h = 0.05;
                let mut xp = x.clone();
                xp[0] += h;
                let ev_p = residuals(self, &xp, &cur.rho, &mut inner_total)?;
                let slope = (ev_p.r[0] - e_resid) / h;
                if slope.abs() > 1e-12 {
                    let mut xt = x.clone();
                    xt[0] -= e_resid / slope;
                    if let Ok(ev) = residuals(self, &xt, &cur.rho, &mut inner_total) {
                        let nt = norm_slice(&ev.r);
                        if nt < rnorm {
                            x = xt;
                            cur = ev;
                            rnorm = nt;
                            accepted = true;
                        }
                    }
                }
                if !accepted {
                    return Err(match last_err {
                        Some(e @ Error::CentrifugalLimit { .. }) => e,
                        _ => Error::MultiplierSolve(format!(
                            "outer iteration stalled at residual {rnorm:.3e} after {outer_iters} steps"
                        )),
                    });
                }
            }
        }
        if rnorm > opts.outer_tol {
            return Err(Error::MultiplierSolve(format!(
                "constraint residual {rnorm:.3e} above tolerance {} after {outer_iters} outer iterations",
                opts.outer_tol
            )));
        }

        let t = x[0].exp();
        let w = if with_omega { x[1] } else { 0.0 };
        let omega_vec = scale3(ell_dir, w);
        let lambda_q = cur.lambda_q.clone();
        let rho_cur = cur.rho.clone();
        let ff = cur.ff;
        let fp_resid = cur.fp_residual;

        // lambda_N from the two partition sums (see module docs)
        let vq = self.q_cell_volume();
        let c_m = (2.0 * std::f64::consts::PI * self.m * t).powf(-(d as f64) / 2.0);
        let lambda_n = {
            // rho = exp(expo)/Z_rho: recompute Z_rho at the solution
            let field = self.conv.apply(&rho_cur);
            let mut z_rho = 0.0;
            for (j, _) in rho_cur.iter().enumerate() {
                let qc = self.grid.q_center(j);
                let cent = 0.5 * self.m * norm2(cross3(omega_vec, qc));
                let mut lq = 0.0;
                for k in 0..d {
                    lq += lambda_q[k] * qc[k];
                }
                z_rho += ((-(self.e2 * field[j] - cent) / t) + lq).exp() * vq;
            }
            1.0 + c_m.ln() - z_rho.ln()
        };

        let u_norm = self.bulk_speed_ratio(&rho_cur, t, omega_vec);
        let classification = if u_norm < DEFAULT_TOL_U {
            Classification::Thermostatic
        } else {
            Classification::Unclassified // needs the Vlasov residual
        };

        let omega_out = if d == 2 { vec![omega_vec[2]] } else { omega_vec.to_vec() };
        Ok(SolveReport {
            multipliers: MultiplierSet {
                temperature: t,
                omega: omega_out,
                lambda_q,
                lambda_n,
            },
            residual: fp_resid,
            constraint_errors: ConstraintErrors {
                energy: (ff.energy - epsilon).abs(),
                angmom: {
                    let mut worst: f64 = 0.0;
                    for (k, &l) in ell.iter().enumerate() {
                        worst = worst.max((ff.angmom[k] - l).abs());
                    }
                    worst
                },
                momentum: norm_slice(&ff.momentum),
                center: norm_slice(&ff.center),
            },
            inner_iterations: inner_total,
            outer_iterations: outer_iters,
            classification,
            entropy: ff.entropy,
            energy: ff.energy,
            angmom: ff.angmom.clone(),
            epsilon_target: epsilon,
            angmom_target: ell.to_vec(),
            u_field_norm: u_norm,
            rho: rho_cur,
        })
    }

    fn energy_at(
        &self,
        rho: &mut Vec<f64>,
        t: f64,
        omega: [f64; 3],
        inner: &FixedPointOptions,
        inner_total: &mut usize,
    ) -> Result<f64> {
        let (rho_new, _, _, iters) = self.solve_fixed_point_centered(rho, t, omega, inner)?;
        *inner_total += iters;
        let ff = self.factored_functionals(&rho_new, t, omega);
        *rho = rho_new;
        if !ff.energy.is_finite() || (ff.coverage - 1.0).abs() > 0.2 {
            return Err(Error::Domain(format!(
                "momentum grid cannot represent the Maxwellian at T = {t:.3e} (coverage {:.3})",
                ff.coverage
            )));
        }
        Ok(ff.energy)
    }

    /// Mass-weighted bulk speed over the thermal speed: the rotation field
    /// `u = w x q` gives `sqrt(<|w x q|^2>) / sqrt(T/m)`.
    fn bulk_speed_ratio(&self, rho: &[f64], t: f64, omega: [f64; 3]) -> f64 {
        let vq = self.q_cell_volume();
        let mut s = 0.0;
        for (j, r) in rho.iter().enumerate() {
            let qc = self.grid.q_center(j);
            s += norm2(cross3(omega, qc)) * r * vq;
        }
        (s / (t / self.m)).sqrt()
    }
}

/// Functionals of the factored equilibrium; all values refer to the
/// assembled-and-renormalized density.
#[derive(Debug, Clone)]
pub struct FactoredFunctionals {
    /// Fraction of the Maxwellian mass captured by the momentum grid.
    pub coverage: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub momentum: Vec<f64>,
    pub center: Vec<f64>,
    pub angmom: Vec<f64>,
    pub entropy: f64,
    /// Position marginal of the assembled density.
    pub rho_eff: Vec<f64>,
}

/// Label an equilibrium: static if the velocity field is negligible,
/// stationary if the Vlasov residual is small, dynamical otherwise.
pub fn classify(
    solved: bool,
    vlasov_residual_norm: f64,
    u_field_norm: f64,
    tol_stat: f64,
    tol_u: f64,
) -> Classification {
    if !solved {
        return Classification::Unclassified;
    }
    if u_field_norm < tol_u {
        Classification::Thermostatic
    } else if vlasov_residual_norm < tol_stat {
        Classification::Thermostationary
    } else {
        Classification::Thermodynamical
    }
}

#[inline]
fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn norm2(a: [f64; 3]) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

fn norm_slice(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot_dir(j: &[f64], dir: [f64; 3], d: usize) -> f64 {
    if d == 2 {
        j[0] * dir[2]
    } else {
        j[0] * dir[0] + j[1] * dir[1] + j[2] * dir[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statefield::{self, PhaseGrid};
    use approx::assert_relative_eq;

    fn harmonic_problem(n: usize, q_half: f64, p_half: f64) -> (PairPotential, PhaseGrid) {
        let v = PairPotential::harmonic(1.0);
        let grid = PhaseGrid::symmetric(2, q_half, p_half, n).unwrap();
        (v, grid)
    }

    fn gaussian_rho(grid: &PhaseGrid, sigma2: f64) -> Vec<f64> {
        let vq = grid.q_cell_volume();
        let mut rho: Vec<f64> = (0..grid.n_q_cells())
            .map(|j| {
                let qc = grid.q_center(j);
                (-(qc[0] * qc[0] + qc[1] * qc[1]) / (2.0 * sigma2)).exp()
            })
            .collect();
        let z: f64 = rho.iter().sum::<f64>() * vq;
        for r in rho.iter_mut() {
            *r /= z;
        }
        rho
    }

    #[test]
    fn gaussian_is_a_fixed_point_at_matching_temperature() {
        // T = 1, omega = 0: variance T / (2 e^2) = 0.5
        let (v, grid) = harmonic_problem(48, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let rho = gaussian_rho(&grid, 0.5);
        let mapped = prob.rho_fixed_point_map(&rho, 1.0, [0.0; 3], &[0.0, 0.0]).unwrap();
        let sup: f64 = mapped
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let peak = rho.iter().cloned().fold(0.0, f64::max);
        assert!(sup < 2e-3 * peak, "sup displacement {sup} vs peak {peak}");
    }

    #[test]
    fn map_preserves_evenness() {
        let (v, grid) = harmonic_problem(16, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let rho = gaussian_rho(&grid, 0.4);
        let out = prob.rho_fixed_point_map(&rho, 0.8, [0.0; 3], &[0.0, 0.0]).unwrap();
        let n = grid.q_axes[0].count;
        for ix in 0..n {
            for iy in 0..n {
                let a = out[ix * n + iy];
                let b = out[(n - 1 - ix) * n + (n - 1 - iy)];
                assert!((a - b).abs() < 1e-12 * a.max(1e-300));
            }
        }
    }

    #[test]
    fn rotating_gaussian_is_a_fixed_point() {
        // sigma_perp^2 = T / (2 e^2 - m w^2), needs 2 e^2 > m w^2
        let (v, grid) = harmonic_problem(48, 4.5, 8.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let (t, w) = (1.0, 0.8);
        let sigma2 = t / (2.0 - w * w);
        let rho = gaussian_rho(&grid, sigma2);
        let mapped = prob
            .rho_fixed_point_map(&rho, t, [0.0, 0.0, w], &[0.0, 0.0])
            .unwrap();
        let sup: f64 = mapped
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let peak = rho.iter().cloned().fold(0.0, f64::max);
        assert!(sup < 5e-3 * peak, "sup displacement {sup}");
    }

    #[test]
    fn centrifugal_dominance_is_reported() {
        let (v, grid) = harmonic_problem(24, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let rho = gaussian_rho(&grid, 0.5);
        // m w^2 > 2 e^2: Boltzmann factor grows outward
        match prob.rho_fixed_point_map(&rho, 1.0, [0.0, 0.0, 1.6], &[0.0, 0.0]) {
            Err(Error::CentrifugalLimit { .. }) => {}
            other => panic!("expected centrifugal error, got {other:?}"),
        }
    }

    #[test]
    fn solver_converges_from_uniform_and_fixed_point_restarts_fast() {
        let (v, grid) = harmonic_problem(48, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let nq = grid.n_q_cells();
        let vq = grid.q_cell_volume();
        let uniform = vec![1.0 / (nq as f64 * vq); nq];
        let opts = FixedPointOptions::default();
        let (rho, resid, _) = prob
            .solve_fixed_point(&uniform, 1.0, [0.0; 3], &[0.0, 0.0], &opts)
            .unwrap();
        assert!(resid < opts.tol);
        // compare against the exact Gaussian with variance 0.5
        let exact = gaussian_rho(&grid, 0.5);
        let peak = exact.iter().cloned().fold(0.0, f64::max);
        let sup: f64 = rho
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.01 * peak, "sup error vs Gaussian: {}", sup / peak);
        // restarting from the fixed point converges immediately
        let (_, _, iters) = prob
            .solve_fixed_point(&rho, 1.0, [0.0; 3], &[0.0, 0.0], &opts)
            .unwrap();
        assert!(iters <= 2, "restart took {iters} iterations");
    }

    #[test]
    fn damping_choices_reach_the_same_fixed_point() {
        let (v, grid) = harmonic_problem(32, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let init = gaussian_rho(&grid, 0.3);
        let mk = |theta: f64| {
            let opts = FixedPointOptions { damping: theta, ..Default::default() };
            prob.solve_fixed_point(&init, 1.0, [0.0; 3], &[0.0, 0.0], &opts)
                .unwrap()
                .0
        };
        let a = mk(1.0);
        let b = mk(0.5);
        let tol = 2.0 * FixedPointOptions::default().tol;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn factored_functionals_match_assembled_grid_quadrature() {
        let (v, grid) = harmonic_problem(16, 4.0, 7.5);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let (t, w) = (0.9, 0.5);
        let sigma2 = t / (2.0 - w * w);
        let rho = gaussian_rho(&grid, sigma2);
        let omega = [0.0, 0.0, w];
        let ff = prob.factored_functionals(&rho, t, omega);
        let f = prob.assemble_f(&rho, t, omega).unwrap();

        let e_grid = statefield::energy_functional(&f, &v, 1.0, 1.0).unwrap();
        assert_relative_eq!(ff.energy, e_grid, max_relative = 1e-10);
        let s_grid = statefield::entropy(&f);
        assert_relative_eq!(ff.entropy, s_grid, max_relative = 1e-10);
        let j_grid = statefield::angmom_functional(&f);
        assert_relative_eq!(ff.angmom[0], j_grid[0], max_relative = 1e-9);
        let p_grid = statefield::momentum_functional(&f);
        assert!((ff.momentum[0] - p_grid[0]).abs() < 1e-12);
        assert!((ff.momentum[1] - p_grid[1]).abs() < 1e-12);
        let q_grid = statefield::center_functional(&f);
        assert!((ff.center[0] - q_grid[0]).abs() < 1e-12);
        let rho_marg = f.q_marginal();
        for (a, b) in ff.rho_eff.iter().zip(&rho_marg) {
            assert!((a - b).abs() < 1e-12 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn match_constraints_recovers_rotating_oracle() {
        // analytic inversion: w = 2 e^2 l / (m eps), T = eps (2 e^2 - m w^2) / (4 e^2)
        let (v, grid) = harmonic_problem(40, 4.2, 8.0);
        let prob = MaxentProblem::new(&v, grid, 1.0, 1.0).unwrap();
        let (eps, ell) = (2.5, 0.8);
        let report = prob
            .match_constraints(eps, &[ell], &MatchOptions::default())
            .unwrap();
        let w_exact = 2.0 * ell / eps;
        let t_exact = eps * (2.0 - w_exact * w_exact) / 4.0;
        assert_relative_eq!(report.multipliers.omega[0], w_exact, max_relative = 0.01);
        assert_relative_eq!(report.multipliers.temperature, t_exact, max_relative = 0.01);
        assert!(report.constraint_errors.energy <= 1e-4 * eps);
        assert!(report.constraint_errors.angmom <= 1e-4 * ell.max(1.0));
        assert!(report.constraint_errors.momentum <= 1e-10);
        assert!(report.constraint_errors.center <= 1e-8);
        assert_eq!(report.classification, Classification::Unclassified); // rotating
        assert!(report.u_field_norm > 0.1);
    }

    #[test]
    fn match_constraints_thermostatic_case() {
        let (v, grid) = harmonic_problem(40, 4.0, 6.5);
        let prob = MaxentProblem::new(&v, grid, 1.0, 1.0).unwrap();
        // d=2: eps = 2T, so eps = 3 gives T = 1.5
        let report = prob
            .match_constraints(3.0, &[0.0], &MatchOptions::default())
            .unwrap();
        assert_relative_eq!(report.multipliers.temperature, 1.5, max_relative = 0.01);
        assert_eq!(report.multipliers.omega[0], 0.0);
        assert_eq!(report.classification, Classification::Thermostatic);
        // d=2 Gaussian entropy: 2 ln(2 pi e) + ln(mT) + ln(T/2)
        let s_exact = 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + 1.5f64.ln()
            + 0.75f64.ln();
        assert_relative_eq!(report.entropy, s_exact, max_relative = 0.01);
    }

    #[test]
    fn infeasible_energy_reports_bracketing_failure() {
        let (v, grid) = harmonic_problem(24, 4.0, 6.0);
        let prob = MaxentProblem::new(&v, grid, 1.0, 1.0).unwrap();
        // the discretized ground state has positive energy: eps = 1e-9 is
        // below it
        match prob.match_constraints(1e-9, &[0.0], &MatchOptions::default()) {
            Err(Error::InfeasibleEnergy { .. }) => {}
            other => panic!("expected infeasible-energy error, got {other:?}"),
        }
    }

    #[test]
    fn assemble_rejects_too_narrow_momentum_grid() {
        let (v, grid) = harmonic_problem(16, 4.0, 2.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let rho = gaussian_rho(&grid, 0.5);
        match prob.assemble_f(&rho, 1.0, [0.0; 3]) {
            Err(Error::MomentumGridTooNarrow { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn assembled_product_momentum_marginal_is_maxwellian() {
        let (v, grid) = harmonic_problem(24, 4.0, 6.5);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let t = 1.1;
        let rho = gaussian_rho(&grid, t / 2.0);
        let f = prob.assemble_f(&rho, t, [0.0; 3]).unwrap();
        let marg = f.p_marginal();
        let vp1 = grid.p_axes[0].spacing();
        for pi in 0..grid.n_p_cells() {
            let pc = grid.p_center(pi);
            let exact = (-(pc[0] * pc[0] + pc[1] * pc[1]) / (2.0 * t)).exp()
                / (2.0 * std::f64::consts::PI * t);
            assert!(
                (marg[pi] - exact).abs() < 1e-4 * (1.0 / (2.0 * std::f64::consts::PI * t)),
                "cell {pi}: {} vs {exact} (vp1 = {vp1})",
                marg[pi]
            );
        }
    }

    #[test]
    fn entropy_additivity_of_the_product_form() {
        let (v, grid) = harmonic_problem(24, 4.0, 6.5);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let t = 0.9;
        let rho = gaussian_rho(&grid, 0.45);
        let f = prob.assemble_f(&rho, t, [0.0; 3]).unwrap();
        let s_joint = statefield::entropy(&f);
        let vq = grid.q_cell_volume();
        let s_rho: f64 = -rho
            .iter()
            .map(|&r| if r > 0.0 { r * r.ln() * vq } else { 0.0 })
            .sum::<f64>();
        let s_max = (2.0 * std::f64::consts::PI * std::f64::consts::E * t).ln(); // 2 axes, mT = t
        assert_relative_eq!(s_joint, s_rho + s_max, max_relative = 1e-4);
    }

    #[test]
    fn maximizer_beats_constraint_satisfying_rivals() {
        // Perturb rho, refit (T, w) in closed form to restore the
        // constraints, and check the entropy drops.
        let (v, grid) = harmonic_problem(32, 4.2, 7.0);
        let prob = MaxentProblem::new(&v, grid.clone(), 1.0, 1.0).unwrap();
        let (eps, ell) = (2.5, 0.8);
        let report = prob.match_constraints(eps, &[ell], &MatchOptions::default()).unwrap();
        let s_star = report.entropy;
        let vq = grid.q_cell_volume();
        let mut beaten = 0;
        for mode in 0..4 {
            // perturbation families: radial breathing and quadrupole
            let mut rho_t: Vec<f64> = report
                .rho
                .iter()
                .enumerate()
                .map(|(j, &r)| {
                    let qc = grid.q_center(j);
                    let q2 = qc[0] * qc[0] + qc[1] * qc[1];
                    let g = match mode {
                        0 => 0.25 * (q2 - 1.0),
                        1 => -0.2 * (q2 - 1.0),
                        2 => 0.3 * (qc[0] * qc[0] - qc[1] * qc[1]),
                        _ => 0.15 * (q2 * q2 / 4.0 - q2),
                    };
                    r * (1.0 + g).max(0.05)
                })
                .collect();
            let z: f64 = rho_t.iter().sum::<f64>() * vq;
            for r in rho_t.iter_mut() {
                *r /= z;
            }
            // refit w from J(w) = l (linear in w), then T from the energy
            let mut i_perp = 0.0;
            for (j, &r) in rho_t.iter().enumerate() {
                let qc = grid.q_center(j);
                i_perp += (qc[0] * qc[0] + qc[1] * qc[1]) * r * vq;
            }
            let w = ell / i_perp; // J = m w <|q|^2>, m = 1
            // energy: T + (m/2) w^2 I + potential(rho_t) = eps
            let conv = Convolver::new(&grid.q_axes, &v);
            let pot = statefield::potential_energy_of_marginal(&rho_t, &conv, &grid.q_axes, 1.0);
            let t_fit = eps - 0.5 * w * w * i_perp - pot;
            if t_fit <= 0.0 {
                continue;
            }
            let ff = prob.factored_functionals(&rho_t, t_fit, [0.0, 0.0, w]);
            // confirm the rival satisfies the constraints
            assert!((ff.energy - eps).abs() < 5e-3 * eps, "rival energy {}", ff.energy);
            assert!((ff.angmom[0] - ell).abs() < 5e-3, "rival J {}", ff.angmom[0]);
            assert!(
                ff.entropy < s_star,
                "mode {mode}: rival entropy {} >= maximizer {}",
                ff.entropy,
                s_star
            );
            beaten += 1;
        }
        assert!(beaten >= 3, "only {beaten} rival densities were valid");
    }

    #[test]
    fn classify_thresholds() {
        assert_eq!(classify(false, 0.0, 0.0, 1e-3, 1e-3), Classification::Unclassified);
        assert_eq!(classify(true, 1.0, 1e-5, 5e-3, 1e-3), Classification::Thermostatic);
        assert_eq!(classify(true, 1e-4, 0.5, 5e-3, 1e-3), Classification::Thermostationary);
        assert_eq!(classify(true, 0.1, 0.5, 5e-3, 1e-3), Classification::Thermodynamical);
    }
}
