//! Shared numeric helpers: deterministic reductions and small statistics
//! routines used by samplers and tests.

use rayon::prelude::*;

/// Chunk size for deterministic parallel reductions. Fixed so the summation
/// tree does not depend on the worker count.
const SUM_CHUNK: usize = 1 << 14;

/// Sum of `values` with a fixed reduction order: per-chunk sequential sums,
/// then a sequential sum over chunk results. Identical output for any number
/// of rayon threads.
pub fn det_sum(values: &[f64]) -> f64 {
    if values.len() <= SUM_CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values
        .par_chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Deterministic parallel sum of `f(i, x_i)` over a slice.
pub fn det_sum_map<F>(values: &[f64], f: F) -> f64
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    let partials: Vec<f64> = values
        .par_chunks(SUM_CHUNK)
        .enumerate()
        .map(|(ci, c)| {
            let base = ci * SUM_CHUNK;
            c.iter()
                .enumerate()
                .map(|(i, &x)| f(base + i, x))
                .sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    det_sum(xs) / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(statistic, p_value)` using
/// the asymptotic distribution with the usual small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample in KS test");
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        let fa = i as f64 / n as f64;
        let fb = j as f64 / m as f64;
        d = d.max((fa - fb).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Integrated autocorrelation time via Geyer's initial positive sequence:
/// stop summing lag pairs once a pair sum turns non-positive.
pub fn integrated_autocorr_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 8 {
        return 1.0;
    }
    let m = mean(series);
    let c0 = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let acov = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (series[i] - m) * (series[i + lag] - m))
            .sum::<f64>()
            / n as f64
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = acov(lag) + acov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair / c0;
        lag += 2;
    }
    tau.max(1.0)
}

/// Bootstrap standard error of the mean of `xs` (resampling with replacement).
pub fn bootstrap_se(xs: &[f64], rounds: usize, rng: &mut impl rand::Rng) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mut means = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let s: f64 = (0..xs.len())
            .map(|_| xs[rng.gen_range(0..xs.len())])
            .sum();
        means.push(s / xs.len() as f64);
    }
    variance(&means).sqrt()
}

/// Ordinary least squares `y ~ X beta` (X includes any intercept column).
/// Returns `(beta, r_squared)`.
pub fn ols_fit(x: &nalgebra::DMatrix<f64>, y: &nalgebra::DVector<f64>) -> (Vec<f64>, f64) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let beta = xtx
        .lu()
        .solve(&xty)
        .expect("normal equations singular in OLS fit");
    let fitted = x * &beta;
    let resid = y - &fitted;
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (beta.iter().copied().collect(), r2)
}

/// Slope of the least-squares line through `(x_i, y_i)`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn det_sum_matches_sequential() {
        let xs: Vec<f64> = (0..100_000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert!((det_sum(&xs) - seq).abs() < 1e-9);
    }

    #[test]
    fn det_sum_is_thread_count_independent() {
        let xs: Vec<f64> = (0..200_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = det_sum(&xs);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| det_sum(&xs));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ks_same_distribution_accepts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..4000).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let b: Vec<f64> = (0..4000).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ks_shifted_distribution_rejects() {
        let a: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p < 1e-6);
    }

    #[test]
    fn iat_of_white_noise_is_near_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20_000).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let tau = integrated_autocorr_time(&xs);
        assert!(tau < 1.5, "tau = {tau}");
    }

    #[test]
    fn iat_detects_correlation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..40_000)
            .map(|_| {
                x = 0.95 * x + rand::Rng::gen::<f64>(&mut rng) - 0.5;
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&xs);
        // AR(1) with phi = 0.95 has tau = (1+phi)/(1-phi) = 39.
        assert!(tau > 15.0, "tau = {tau}");
    }

    #[test]
    fn ols_recovers_plane() {
        let n = 50;
        let mut xm = nalgebra::DMatrix::zeros(n, 3);
        let mut y = nalgebra::DVector::zeros(n);
        for i in 0..n {
            let a = i as f64 / 10.0;
            let b = (i as f64).cos();
            xm[(i, 0)] = 1.0;
            xm[(i, 1)] = a;
            xm[(i, 2)] = b;
            y[i] = 2.0 - 3.0 * a + 0.5 * b;
        }
        let (beta, r2) = ols_fit(&xm, &y);
        assert!((beta[0] - 2.0).abs() < 1e-10);
        assert!((beta[1] + 3.0).abs() < 1e-10);
        assert!((beta[2] - 0.5).abs() < 1e-10);
        assert!(r2 > 1.0 - 1e-12);
    }
}
