//! Interaction field `(V * rho)(q)` on a position grid.
//!
//! The discrete field is `sum_j V(|q_i - q_j|) rho_j vol`, with the
//! same-cell distance regularized to half the cell diagonal. Small grids
//! use direct Toeplitz summation; larger grids use an identical linear
//! convolution computed by zero-padded FFTs (no periodic wrap-around). The
//! two routes agree to roundoff and share the kernel discretization with
//! the energy functional.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::potentials::PairPotential;
use crate::statefield::grid::AxisSpec;

/// Cell-count threshold above which `Convolver` switches from direct
/// summation to FFT convolution.
pub const DIRECT_CONV_MAX_CELLS: usize = 4096;

/// Regularized same-cell distance: half the cell diagonal.
pub fn self_cell_distance(axes: &[AxisSpec]) -> f64 {
    0.5 * axes.iter().map(|a| a.spacing() * a.spacing()).sum::<f64>().sqrt()
}

/// Precomputed convolution kernel for one `(axes, potential)` pair.
pub struct Convolver {
    axes: Vec<AxisSpec>,
    counts: Vec<usize>,
    use_fft: bool,
    /// Direct route: V at every offset, indexed over `(2 n_k - 1)` per axis.
    kernel_direct: Vec<f64>,
    /// FFT route: transformed zero-padded kernel.
    kernel_hat: Vec<Complex64>,
    padded: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl Convolver {
    pub fn new(axes: &[AxisSpec], v: &PairPotential) -> Self {
        Self::with_mode(axes, v, axes.iter().map(|a| a.count).product::<usize>() > DIRECT_CONV_MAX_CELLS)
    }

    pub fn with_mode(axes: &[AxisSpec], v: &PairPotential, use_fft: bool) -> Self {
        let counts: Vec<usize> = axes.iter().map(|a| a.count).collect();
        let r0 = self_cell_distance(axes);
        let eval = |r2: f64| -> f64 {
            if r2 == 0.0 {
                v.eval_unchecked(r0)
            } else {
                v.eval_unchecked(r2.sqrt())
            }
        };

        if !use_fft {
            // offsets delta_k in [-(n_k - 1), n_k - 1], stored shifted
            let off_counts: Vec<usize> = counts.iter().map(|n| 2 * n - 1).collect();
            let total: usize = off_counts.iter().product();
            let mut kernel_direct = vec![0.0; total];
            for (idx, val) in kernel_direct.iter_mut().enumerate() {
                let mut rem = idx;
                let mut r2 = 0.0;
                for k in (0..axes.len()).rev() {
                    let o = rem % off_counts[k];
                    rem /= off_counts[k];
                    let delta = o as isize - (counts[k] as isize - 1);
                    let d = delta as f64 * axes[k].spacing();
                    r2 += d * d;
                }
                *val = eval(r2);
            }
            return Convolver {
                axes: axes.to_vec(),
                counts,
                use_fft: false,
                kernel_direct,
                kernel_hat: Vec::new(),
                padded: Vec::new(),
                fwd: Vec::new(),
                inv: Vec::new(),
            };
        }

        // FFT route: pad each axis to 2 n_k (>= 2 n_k - 1, so the circular
        // convolution equals the linear one). V(offset) sits at the wrapped
        // index (offset mod L) per axis.
        let padded: Vec<usize> = counts.iter().map(|n| 2 * n).collect();
        let total: usize = padded.iter().product();
        let mut kernel = vec![Complex64::new(0.0, 0.0); total];
        let dims = axes.len();
        let off_counts: Vec<usize> = counts.iter().map(|n| 2 * n - 1).collect();
        let n_offsets: usize = off_counts.iter().product();
        for idx in 0..n_offsets {
            let mut rem = idx;
            let mut deltas = [0isize; 3];
            for k in (0..dims).rev() {
                let o = rem % off_counts[k];
                rem /= off_counts[k];
                deltas[k] = o as isize - (counts[k] as isize - 1);
            }
            let mut r2 = 0.0;
            let mut kidx = 0;
            for k in 0..dims {
                let d = deltas[k] as f64 * axes[k].spacing();
                r2 += d * d;
                let wrapped = deltas[k].rem_euclid(padded[k] as isize) as usize;
                kidx = kidx * padded[k] + wrapped;
            }
            kernel[kidx] = Complex64::new(eval(r2), 0.0);
        }

        let mut planner = FftPlanner::new();
        let fwd: Vec<Arc<dyn Fft<f64>>> = padded
            .iter()
            .map(|&n| planner.plan_fft_forward(n))
            .collect();
        let inv: Vec<Arc<dyn Fft<f64>>> = padded
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();
        let mut kernel_hat = kernel;
        fftnd(&mut kernel_hat, &padded, &fwd);

        Convolver {
            axes: axes.to_vec(),
            counts,
            use_fft: true,
            kernel_direct: Vec::new(),
            kernel_hat,
            padded,
            fwd,
            inv,
        }
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    /// `(V * rho)(q_i) = sum_j K[i-j] rho_j vol` for `rho` given per cell.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.counts.iter().product::<usize>());
        let vol: f64 = self.axes.iter().map(|a| a.spacing()).product();
        if self.use_fft {
            self.apply_fft(rho, vol)
        } else {
            self.apply_direct(rho, vol)
        }
    }

    fn apply_direct(&self, rho: &[f64], vol: f64) -> Vec<f64> {
        let dims = self.counts.len();
        let off_counts: Vec<usize> = self.counts.iter().map(|n| 2 * n - 1).collect();
        let n_cells = rho.len();
        let mut out = vec![0.0; n_cells];
        let multi = |mut flat: usize| -> [usize; 3] {
            let mut mi = [0usize; 3];
            for k in (0..dims).rev() {
                mi[k] = flat % self.counts[k];
                flat /= self.counts[k];
            }
            mi
        };
        for i in 0..n_cells {
            let mi = multi(i);
            let mut acc = 0.0;
            for (j, &r) in rho.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let mj = multi(j);
                let mut kidx = 0;
                for k in 0..dims {
                    let delta = mi[k] as isize - mj[k] as isize + (self.counts[k] as isize - 1);
                    kidx = kidx * off_counts[k] + delta as usize;
                }
                acc += self.kernel_direct[kidx] * r;
            }
            out[i] = acc * vol;
        }
        out
    }

    fn apply_fft(&self, rho: &[f64], vol: f64) -> Vec<f64> {
        let total: usize = self.padded.iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        embed(rho, &self.counts, &self.padded, &mut buf);
        fftnd(&mut buf, &self.padded, &self.fwd);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        fftnd(&mut buf, &self.padded, &self.inv);
        let norm = vol / total as f64;
        let mut out = vec![0.0; rho.len()];
        extract(&buf, &self.counts, &self.padded, &mut out, norm);
        out
    }
}

fn embed(src: &[f64], counts: &[usize], padded: &[usize], dst: &mut [Complex64]) {
    let dims = counts.len();
    let mut mi = vec![0usize; dims];
    for &v in src {
        let mut idx = 0;
        for k in 0..dims {
            idx = idx * padded[k] + mi[k];
        }
        dst[idx] = Complex64::new(v, 0.0);
        for k in (0..dims).rev() {
            mi[k] += 1;
            if mi[k] < counts[k] {
                break;
            }
            mi[k] = 0;
        }
    }
}

fn extract(src: &[Complex64], counts: &[usize], padded: &[usize], dst: &mut [f64], norm: f64) {
    let dims = counts.len();
    let mut mi = vec![0usize; dims];
    for v in dst.iter_mut() {
        let mut idx = 0;
        for k in 0..dims {
            idx = idx * padded[k] + mi[k];
        }
        *v = src[idx].re * norm;
        for k in (0..dims).rev() {
            mi[k] += 1;
            if mi[k] < counts[k] {
                break;
            }
            mi[k] = 0;
        }
    }
}

/// In-place multi-dimensional FFT: 1D transforms along every axis of a
/// row-major array.
fn fftnd(data: &mut [Complex64], dims: &[usize], plans: &[Arc<dyn Fft<f64>>]) {
    let nd = dims.len();
    let total: usize = dims.iter().product();
    for ax in 0..nd {
        let n = dims[ax];
        let stride: usize = dims[ax + 1..].iter().product();
        let outer: usize = total / (n * stride);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plans[ax].get_inplace_scratch_len()];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                if stride == 1 {
                    let row = &mut data[base..base + n];
                    plans[ax].process_with_scratch(row, &mut scratch);
                } else {
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = data[base + i * stride];
                    }
                    plans[ax].process_with_scratch(&mut line, &mut scratch);
                    for (i, l) in line.iter().enumerate() {
                        data[base + i * stride] = *l;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statefield::grid::AxisSpec;
    use rand::{Rng, SeedableRng};

    fn axes2(n: usize) -> Vec<AxisSpec> {
        vec![AxisSpec::new(-2.0, 2.0, n).unwrap(), AxisSpec::new(-2.0, 2.0, n).unwrap()]
    }

    #[test]
    fn fft_route_matches_direct_route() {
        let v = PairPotential::SoftCore { a: 1.0, b: 0.7, c: 0.5 };
        let axes = axes2(12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rho: Vec<f64> = (0..144).map(|_| rng.gen::<f64>()).collect();
        let direct = Convolver::with_mode(&axes, &v, false).apply(&rho);
        let fft = Convolver::with_mode(&axes, &v, true).apply(&rho);
        for (a, b) in direct.iter().zip(&fft) {
            assert!((a - b).abs() < 1e-11 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn spike_reproduces_potential_with_self_cell_convention() {
        let v = PairPotential::harmonic(1.0);
        let axes = axes2(16);
        let vol: f64 = axes.iter().map(|a| a.spacing()).product();
        let mut rho = vec![0.0; 256];
        // spike in cell (8, 8), center (0.125, 0.125)
        let spike = 8 * 16 + 8;
        rho[spike] = 1.0 / vol;
        let field = Convolver::with_mode(&axes, &v, false).apply(&rho);
        let (cx, cy) = (axes[0].center(8), axes[1].center(8));
        for ix in 0..16 {
            for iy in 0..16 {
                let idx = ix * 16 + iy;
                let dx = axes[0].center(ix) - cx;
                let dy = axes[1].center(iy) - cy;
                let r = (dx * dx + dy * dy).sqrt();
                let expected = if idx == spike {
                    v.eval_unchecked(self_cell_distance(&axes))
                } else {
                    v.eval_unchecked(r)
                };
                assert!((field[idx] - expected).abs() < 1e-12, "cell {idx}");
            }
        }
    }

    #[test]
    fn harmonic_field_on_centered_density_is_quadratic_plus_trace() {
        // (V * rho)(q) = |q|^2 + <|q'|^2> for centered rho, V = r^2.
        let v = PairPotential::harmonic(1.0);
        let axes = axes2(32);
        let vol: f64 = axes.iter().map(|a| a.spacing()).product();
        let sigma2 = 0.25;
        let mut rho = vec![0.0; 32 * 32];
        let mut mass = 0.0;
        for ix in 0..32 {
            for iy in 0..32 {
                let (x, y) = (axes[0].center(ix), axes[1].center(iy));
                let val = (-(x * x + y * y) / (2.0 * sigma2)).exp();
                rho[ix * 32 + iy] = val;
                mass += val * vol;
            }
        }
        for r in rho.iter_mut() {
            *r /= mass;
        }
        let second_moment: f64 = {
            let mut s = 0.0;
            for ix in 0..32 {
                for iy in 0..32 {
                    let (x, y) = (axes[0].center(ix), axes[1].center(iy));
                    s += (x * x + y * y) * rho[ix * 32 + iy] * vol;
                }
            }
            s
        };
        let field = Convolver::new(&axes, &v).apply(&rho);
        for ix in (0..32).step_by(5) {
            for iy in (0..32).step_by(7) {
                let (x, y) = (axes[0].center(ix), axes[1].center(iy));
                let expected = x * x + y * y + second_moment;
                let got = field[ix * 32 + iy];
                // the self-cell regularization perturbs the field at O(vol)
                assert!(
                    (got - expected).abs() < 2e-3 * expected.abs().max(1.0),
                    "({ix},{iy}): {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn translation_equivariance_one_cell_shift() {
        let v = PairPotential::SoftCore { a: 0.4, b: 0.2, c: 1.0 };
        let axes = axes2(16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        // density supported away from the boundary so the shift loses no mass
        let mut rho = vec![0.0; 256];
        for ix in 4..10 {
            for iy in 4..10 {
                rho[ix * 16 + iy] = rng.gen::<f64>();
            }
        }
        let mut shifted = vec![0.0; 256];
        for ix in 0..15 {
            for iy in 0..16 {
                shifted[(ix + 1) * 16 + iy] = rho[ix * 16 + iy];
            }
        }
        let conv = Convolver::with_mode(&axes, &v, true);
        let f0 = conv.apply(&rho);
        let f1 = conv.apply(&shifted);
        for ix in 1..15 {
            for iy in 0..16 {
                let a = f0[(ix - 1) * 16 + iy];
                let b = f1[ix * 16 + iy];
                assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
            }
        }
    }
}
