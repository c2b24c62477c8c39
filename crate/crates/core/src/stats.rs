//! Small statistics toolkit: means with standard errors, quantiles, KS and
//! total-variation distances, log-log exponent fits.

use crate::error::{LabError, Result};
use crate::rng::LabRng;
use rand::Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

/// Running sums for a mean and its standard error. Merging is exact in the
/// sense that the same partition always produces the same bits.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accum {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Accum {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(mut self, o: Accum) -> Accum {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    pub fn mean_se(&self) -> MeanSe {
        if self.n == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN, n: 0 };
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        MeanSe { mean, se: (var / n).sqrt(), n: self.n }
    }
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n: 0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    MeanSe { mean, se: (var / n as f64).sqrt(), n: n as u64 }
}

/// Covariance-aware SE of a difference of two paired sample means.
pub fn paired_diff(xs: &[f64], ys: &[f64]) -> MeanSe {
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    mean_se(&d)
}

/// Binomial proportion with its standard error.
pub fn proportion(successes: u64, trials: u64) -> MeanSe {
    let p = successes as f64 / trials as f64;
    MeanSe { mean: p, se: (p * (1.0 - p) / trials as f64).sqrt(), n: trials }
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// One-sample KS statistic against a CDF; `cdf_left` gives P(X < x) so that
/// atoms are handled exactly.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64, cdf_left: impl Fn(f64) -> f64) -> f64 {
    let mut x = a.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    let n = x.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < x.len() {
        let t = x[i];
        let mut j = i;
        while j < x.len() && x[j] == t {
            j += 1;
        }
        d = d.max((cdf_left(t) - i as f64 / n).abs());
        d = d.max((cdf(t) - j as f64 / n).abs());
        i = j;
    }
    d
}

/// Kish effective sample size of a weight vector.
pub fn effective_size(w: impl Iterator<Item = f64> + Clone) -> f64 {
    let s: f64 = w.clone().sum();
    let s2: f64 = w.map(|x| x * x).sum();
    if s2 > 0.0 { s * s / s2 } else { 0.0 }
}

fn sorted_weighted(a: &[(f64, f64)]) -> (Vec<(f64, f64)>, f64) {
    let mut x = a.to_vec();
    x.sort_by(|p, q| p.0.total_cmp(&q.0));
    let total = x.iter().map(|p| p.1).sum();
    (x, total)
}

/// KS distance between a weighted empirical law and a CDF.
pub fn ks_weighted_one_sample(a: &[(f64, f64)], cdf: impl Fn(f64) -> f64, cdf_left: impl Fn(f64) -> f64) -> f64 {
    let (x, total) = sorted_weighted(a);
    let (mut i, mut acc, mut d) = (0usize, 0.0f64, 0.0f64);
    while i < x.len() {
        let t = x[i].0;
        d = d.max((cdf_left(t) - acc / total).abs());
        while i < x.len() && x[i].0 == t {
            acc += x[i].1;
            i += 1;
        }
        d = d.max((cdf(t) - acc / total).abs());
    }
    d
}

/// KS distance between two weighted empirical laws.
pub fn ks_weighted_two_sample(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (x, tx) = sorted_weighted(a);
    let (y, ty) = sorted_weighted(b);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fx, mut fy, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].0.min(y[j].0);
        while i < x.len() && x[i].0 <= t {
            fx += x[i].1;
            i += 1;
        }
        while j < y.len() && y[j].0 <= t {
            fy += y[j].1;
            j += 1;
        }
        d = d.max((fx / tx - fy / ty).abs());
    }
    d
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize, m: Option<usize>) -> f64 {
    let eff = match m {
        Some(m) => (n * m) as f64 / (n + m) as f64,
        None => n as f64,
    };
    1.627_6 / eff.sqrt()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn ls_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Least-squares slope of log(stat) on log(n) with a 95% pairs-bootstrap CI.
pub fn fit_exponent(points: &[(f64, f64)], boot: usize, rng: &mut LabRng) -> Result<ExponentFit> {
    if points.len() < 4 {
        return Err(LabError::Domain(format!("fit_exponent needs at least 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0) || !(p.0 > 0.0)) {
        return Err(LabError::Domain(format!("fit_exponent needs positive data, got ({}, {})", p.0, p.1)));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = ls_slope(&x, &y);
    let mut slopes = Vec::with_capacity(boot);
    let k = x.len();
    let mut bx = vec![0.0; k];
    let mut by = vec![0.0; k];
    for _ in 0..boot {
        for i in 0..k {
            let j = rng.random_range(0..k);
            bx[i] = x[j];
            by[i] = y[j];
        }
        let (s, _) = ls_slope(&bx, &by);
        if s.is_finite() {
            slopes.push(s);
        }
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let (ci_lo, ci_hi) = if slopes.is_empty() {
        (slope, slope)
    } else {
        (quantile_sorted(&slopes, 0.025), quantile_sorted(&slopes, 0.975))
    };
    Ok(ExponentFit { slope, intercept, ci_lo, ci_hi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    #[test]
    fn power_law_slope_exact() {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0, 1024.0].iter().map(|&n: &f64| (n, n.powf(-2.0 / 3.0))).collect();
        let fit = fit_exponent(&pts, 200, &mut replica_rng(1, "t", 0)).unwrap();
        assert!((fit.slope + 2.0 / 3.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, 3.0)).collect();
        assert!(fit_exponent(&flat, 10, &mut replica_rng(1, "t", 0)).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let mut r = replica_rng(1, "t", 0);
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)], 10, &mut r).is_err());
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 1.0), (3.0, 0.0), (4.0, 1.0)], 10, &mut r).is_err());
    }

    #[test]
    fn quantiles_and_tv() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert!((total_variation(&[0.5, 0.5], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_samples_zero() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert!((ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]) - 1.0).abs() < 1e-15);
        let d = ks_one_sample(&[0.5], |x| x.clamp(0.0, 1.0), |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_ks_reduces_to_unweighted() {
        let a = [0.3, 0.1, 0.7, 0.7, 0.9];
        let b = [0.2, 0.5, 0.6];
        let wa: Vec<(f64, f64)> = a.iter().map(|x| (*x, 2.0)).collect();
        let wb: Vec<(f64, f64)> = b.iter().map(|x| (*x, 0.5)).collect();
        assert!((ks_weighted_two_sample(&wa, &wb) - ks_two_sample(&a, &b)).abs() < 1e-15);
        let u = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_weighted_one_sample(&wa, u, u) - ks_one_sample(&a, u, u)).abs() < 1e-15);
        assert!((effective_size([1.0, 1.0, 1.0, 1.0].into_iter()) - 4.0).abs() < 1e-15);
    }
}
