//! Finite-N Hamiltonian dynamics: pairwise central forces, kick-drift-kick
//! leapfrog, conserved quantities, center-of-mass reduction, and the
//! empirical phase-space measures that connect particles to densities.
//!
//! States are immutable; stepping returns a new state. The leapfrog update
//! conserves total momentum and angular momentum to roundoff for central
//! pairwise forces, which is what makes the conservation suite meaningful.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PairPotential;

/// Positions and momenta of `n` identical particles in `dim` dimensions,
/// plus the single-species parameters `m` and `e2` and the current time.
/// Coordinates are stored flat, particle-major (`q[i*dim + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub dim: usize,
    pub n: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub m: f64,
    pub e2: f64,
    pub t: f64,
}

/// Values of the isolating invariants and constraint functions: energy,
/// total momentum, total angular momentum (scalar in 2D, 3-vector in 3D),
/// and the mass-averaged center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSet {
    pub energy: f64,
    pub momentum: Vec<f64>,
    pub angmom: Vec<f64>,
    pub com: Vec<f64>,
}

/// Weighted sum of point masses on single-particle phase space: `n` atoms at
/// `(p_i, q_i)`, each with weight `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    /// Flat atom storage, `2*dim` per atom, momentum components first.
    pub atoms: Vec<f64>,
    pub weight: f64,
}

impl PhaseState {
    pub fn new(dim: usize, q: Vec<f64>, p: Vec<f64>, m: f64, e2: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if q.len() != p.len() || q.len() % dim != 0 {
            return Err(Error::Domain(format!(
                "coordinate lengths {} / {} inconsistent with dim {dim}",
                q.len(),
                p.len()
            )));
        }
        let n = q.len() / dim;
        if n < 2 {
            return Err(Error::Domain("need at least 2 particles".into()));
        }
        if !(m > 0.0) || !e2.is_finite() {
            return Err(Error::Domain(format!("bad species parameters m={m}, e2={e2}")));
        }
        let state = PhaseState { dim, n, q, p, m, e2, t: 0.0 };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.iter().chain(self.p.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("non-finite coordinate in phase state".into()))
        }
    }

    #[inline]
    pub fn q_of(&self, i: usize) -> &[f64] {
        &self.q[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn p_of(&self, i: usize) -> &[f64] {
        &self.p[i * self.dim..(i + 1) * self.dim]
    }

    /// Total energy `sum |p_i|^2 / 2m + e^2 sum_{i<j} V(|q_i - q_j|)`.
    pub fn hamiltonian(&self, v: &PairPotential) -> Result<f64> {
        let kinetic: f64 = self.p.iter().map(|p| p * p).sum::<f64>() / (2.0 * self.m);
        let mut pot = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let r = self.pair_distance(i, j);
                if !(r > 0.0) {
                    return Err(Error::CoincidentParticles { i, j, r });
                }
                let val = v.eval_unchecked(r);
                if !val.is_finite() {
                    return Err(Error::CoincidentParticles { i, j, r });
                }
                pot += val;
            }
        }
        Ok(kinetic + self.e2 * pot)
    }

    #[inline]
    fn pair_distance(&self, i: usize, j: usize) -> f64 {
        let (qi, qj) = (self.q_of(i), self.q_of(j));
        let mut s = 0.0;
        for k in 0..self.dim {
            let d = qi[k] - qj[k];
            s += d * d;
        }
        s.sqrt()
    }

    /// Exact sums for the invariants. Pure and deterministic: identical
    /// states give bit-identical results.
    pub fn invariants(&self, v: &PairPotential) -> Result<InvariantSet> {
        let d = self.dim;
        let mut momentum = vec![0.0; d];
        let mut com = vec![0.0; d];
        for i in 0..self.n {
            for k in 0..d {
                momentum[k] += self.p[i * d + k];
                com[k] += self.q[i * d + k];
            }
        }
        for c in com.iter_mut() {
            *c /= self.n as f64; // single species: mass-weighted mean = mean
        }
        let angmom = self.angular_momentum();
        Ok(InvariantSet {
            energy: self.hamiltonian(v)?,
            momentum,
            angmom,
            com,
        })
    }

    /// `sum q_i x p_i`: scalar for `dim == 2`, 3-vector for `dim == 3`.
    pub fn angular_momentum(&self) -> Vec<f64> {
        let d = self.dim;
        if d == 2 {
            let mut j = 0.0;
            for i in 0..self.n {
                let (q, p) = (self.q_of(i), self.p_of(i));
                j += q[0] * p[1] - q[1] * p[0];
            }
            vec![j]
        } else {
            let mut j = [0.0; 3];
            for i in 0..self.n {
                let (q, p) = (self.q_of(i), self.p_of(i));
                j[0] += q[1] * p[2] - q[2] * p[1];
                j[1] += q[2] * p[0] - q[0] * p[2];
                j[2] += q[0] * p[1] - q[1] * p[0];
            }
            j.to_vec()
        }
    }

    /// Galilei boost and translation into the center-of-mass frame: removes
    /// the mean momentum and the mass-averaged position. Idempotent up to
    /// roundoff.
    pub fn to_com_frame(&self) -> PhaseState {
        let d = self.dim;
        let nf = self.n as f64;
        let mut pbar = vec![0.0; d];
        let mut qbar = vec![0.0; d];
        for i in 0..self.n {
            for k in 0..d {
                pbar[k] += self.p[i * d + k];
                qbar[k] += self.q[i * d + k];
            }
        }
        for k in 0..d {
            pbar[k] /= nf;
            qbar[k] /= nf;
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for k in 0..d {
                out.p[i * d + k] -= pbar[k];
                out.q[i * d + k] -= qbar[k];
            }
        }
        out
    }

    /// Pairwise central forces `-e^2 V'(r_ij) (q_i - q_j)/r_ij`, accumulated
    /// with the paired +/- update so Newton's third law holds to roundoff.
    pub fn forces(&self, v: &PairPotential) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut f = vec![0.0; self.n * d];
        let mut dx = [0.0; 3];
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let mut r2 = 0.0;
                for k in 0..d {
                    dx[k] = self.q[i * d + k] - self.q[j * d + k];
                    r2 += dx[k] * dx[k];
                }
                let r = r2.sqrt();
                if !(r > 0.0) {
                    return Err(Error::CoincidentParticles { i, j, r });
                }
                let coef = -self.e2 * v.deriv_unchecked(r) / r;
                for k in 0..d {
                    let fk = coef * dx[k];
                    f[i * d + k] += fk;
                    f[j * d + k] -= fk;
                }
            }
        }
        Ok(f)
    }

    /// Parallel force evaluation: each particle sums its own pair terms, so
    /// the result is deterministic for any thread count at the cost of
    /// evaluating every pair twice.
    pub fn forces_parallel(&self, v: &PairPotential) -> Result<Vec<f64>> {
        let d = self.dim;
        let f: Vec<f64> = (0..self.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut fi = [0.0; 3];
                for j in 0..self.n {
                    if j == i {
                        continue;
                    }
                    let mut r2 = 0.0;
                    let mut dx = [0.0; 3];
                    for k in 0..d {
                        dx[k] = self.q[i * d + k] - self.q[j * d + k];
                        r2 += dx[k] * dx[k];
                    }
                    let r = r2.sqrt();
                    let coef = if r > 0.0 {
                        -self.e2 * v.deriv_unchecked(r) / r
                    } else {
                        f64::NAN
                    };
                    for k in 0..d {
                        fi[k] += coef * dx[k];
                    }
                }
                fi.into_iter().take(d).collect::<Vec<_>>()
            })
            .collect();
        if f.iter().all(|x| x.is_finite()) {
            Ok(f)
        } else {
            Err(Error::Domain("non-finite force (coincident particles?)".into()))
        }
    }

    /// One kick-drift-kick leapfrog step of size `dt`.
    pub fn step_leapfrog(&self, v: &PairPotential, dt: f64) -> Result<PhaseState> {
        self.step_leapfrog_with(v, dt, false)
    }

    pub fn step_leapfrog_with(
        &self,
        v: &PairPotential,
        dt: f64,
        parallel: bool,
    ) -> Result<PhaseState> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Integrator {
                step: 0,
                detail: format!("bad time step dt = {dt}"),
            });
        }
        let force = |s: &PhaseState| if parallel { s.forces_parallel(v) } else { s.forces(v) };
        let mut out = self.clone();
        let f0 = force(&out).map_err(|e| Error::Integrator {
            step: 0,
            detail: format!("initial force evaluation failed: {e}"),
        })?;
        let half = 0.5 * dt;
        for (p, f) in out.p.iter_mut().zip(&f0) {
            *p += half * f;
        }
        let inv_m = 1.0 / out.m;
        for (q, p) in out.q.iter_mut().zip(&out.p) {
            *q += dt * inv_m * p;
        }
        let f1 = force(&out).map_err(|e| Error::Integrator {
            step: 0,
            detail: format!("post-drift force evaluation failed: {e}"),
        })?;
        for (p, f) in out.p.iter_mut().zip(&f1) {
            *p += half * f;
        }
        out.t += dt;
        if out.q.iter().chain(out.p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Integrator {
                step: 0,
                detail: format!("state overflow after step at t = {}", out.t),
            });
        }
        Ok(out)
    }

    /// The normalized empirical density: one atom of weight `1/n` per
    /// particle at `(p_i, q_i)`.
    pub fn empirical_density(&self) -> EmpiricalMeasure {
        self.empirical_with_momentum_scale(1.0)
    }

    /// Mean-field rescaled empirical density with atoms at
    /// `(n^{-1/2} p_i, q_i)`; under this map `n^-2 H` estimates the energy
    /// functional and `n^{-3/2} J` the angular momentum functional.
    pub fn meanfield_rescale(&self) -> EmpiricalMeasure {
        self.empirical_with_momentum_scale(1.0 / (self.n as f64).sqrt())
    }

    fn empirical_with_momentum_scale(&self, scale: f64) -> EmpiricalMeasure {
        let d = self.dim;
        let mut atoms = Vec::with_capacity(self.n * 2 * d);
        for i in 0..self.n {
            for k in 0..d {
                atoms.push(scale * self.p[i * d + k]);
            }
            for k in 0..d {
                atoms.push(self.q[i * d + k]);
            }
        }
        EmpiricalMeasure {
            dim: d,
            atoms,
            weight: 1.0 / self.n as f64,
        }
    }
}

impl EmpiricalMeasure {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len() / (2 * self.dim)
    }

    #[inline]
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * 2 * self.dim..(i + 1) * 2 * self.dim]
    }

    /// Momentum components of atom `i`.
    #[inline]
    pub fn atom_p(&self, i: usize) -> &[f64] {
        &self.atom(i)[..self.dim]
    }

    /// Position components of atom `i`.
    #[inline]
    pub fn atom_q(&self, i: usize) -> &[f64] {
        &self.atom(i)[self.dim..]
    }

    /// Integral of a test function against the measure (the weighted atom
    /// average).
    pub fn integrate<F: Fn(&[f64], &[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.n_atoms())
            .map(|i| self.weight * f(self.atom_p(i), self.atom_q(i)))
            .sum()
    }

    /// Mean-field energy functional of the atomic measure: kinetic average
    /// plus the off-diagonal pair interaction `e^2/2 sum_{a != b} w^2 V`.
    /// Applied to [`PhaseState::meanfield_rescale`] output this equals
    /// `n^-2 H` exactly.
    pub fn mean_field_energy(&self, v: &PairPotential, m: f64, e2: f64) -> Result<f64> {
        let kinetic = self.integrate(|p, _| p.iter().map(|x| x * x).sum::<f64>() / (2.0 * m));
        let n = self.n_atoms();
        let mut pot = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                let (qa, qb) = (self.atom_q(a), self.atom_q(b));
                let r = qa
                    .iter()
                    .zip(qb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if !(r > 0.0) {
                    return Err(Error::CoincidentParticles { i: a, j: b, r });
                }
                pot += v.eval_unchecked(r);
            }
        }
        Ok(kinetic + e2 * self.weight * self.weight * pot)
    }

    /// Angular momentum functional of the measure.
    pub fn angmom(&self) -> Vec<f64> {
        if self.dim == 2 {
            vec![self.integrate(|p, q| q[0] * p[1] - q[1] * p[0])]
        } else {
            vec![
                self.integrate(|p, q| q[1] * p[2] - q[2] * p[1]),
                self.integrate(|p, q| q[2] * p[0] - q[0] * p[2]),
                self.integrate(|p, q| q[0] * p[1] - q[1] * p[0]),
            ]
        }
    }
}
