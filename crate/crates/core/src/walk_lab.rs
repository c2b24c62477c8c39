//! Random-walk paths, ladder structure, renewal functions, barrier survival,
//! Tanaka's conditioned walk and the meander endpoint.

use crate::error::{LabError, Result};
use crate::rng::{par_fold, par_replicas, StreamSpec};
use crate::stable_laws::StepLaw;
use crate::stats::{Accum, MeanSe};
use rand::Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkPath {
    pub positions: Vec<f64>,
    pub running_min: Vec<f64>,
    pub running_max: Vec<f64>,
}

impl WalkPath {
    pub fn from_positions(positions: Vec<f64>) -> Self {
        let mut running_min = Vec::with_capacity(positions.len());
        let mut running_max = Vec::with_capacity(positions.len());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in &positions {
            lo = lo.min(x);
            hi = hi.max(x);
            running_min.push(lo);
            running_max.push(hi);
        }
        WalkPath { positions, running_min, running_max }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.positions.last().expect("path holds S_0")
    }
}

pub fn simulate_path<R: Rng + ?Sized>(step: &StepLaw, n: usize, start: f64, rng: &mut R) -> WalkPath {
    let mut pos = Vec::with_capacity(n + 1);
    let mut s = start;
    pos.push(s);
    for _ in 0..n {
        s += step.sample(rng);
        pos.push(s);
    }
    WalkPath::from_positions(pos)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderSummary {
    pub descending_heights: Vec<f64>,
    pub descending_epochs: Vec<usize>,
    pub ascending_heights: Vec<f64>,
    pub ascending_epochs: Vec<usize>,
}

/// Strict ladder epochs and heights realized within the path, measured from S₀.
pub fn ladder_decompose(path: &WalkPath) -> LadderSummary {
    let s0 = path.positions[0];
    let mut out = LadderSummary { descending_heights: vec![0.0], descending_epochs: vec![0], ascending_heights: vec![0.0], ascending_epochs: vec![0] };
    let (mut lo, mut hi) = (s0, s0);
    for (k, &x) in path.positions.iter().enumerate().skip(1) {
        if x < lo {
            lo = x;
            out.descending_heights.push(x - s0);
            out.descending_epochs.push(k);
        }
        if x > hi {
            hi = x;
            out.ascending_heights.push(x - s0);
            out.ascending_epochs.push(k);
        }
    }
    out
}

/// Tabulated renewal functions of the descending (R) and ascending (K) strict
/// ladder height processes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalEstimate {
    pub u_grid: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub k_hat: Vec<f64>,
    /// least-squares slope of R̂ over the top half of the grid
    pub theta_hat: MeanSe,
    /// 1 / E|Z₁| with a delta-method standard error
    pub theta_ladder: MeanSe,
    pub mean_abs_z1: MeanSe,
    pub replicas: u64,
    /// ascending chains stopped by the excursion cap
    pub k_censored: u64,
    pub options: RenewalOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RenewalOptions {
    /// While waiting for a new minimum, a walk that climbs more than this far above
    /// the current minimum is moved back to half that height. The undershoot law
    /// from far above is stationary, so this trades a negligible bias for bounded
    /// excursion cost.
    pub reset_height: f64,
    /// maximal length of one ascending excursion
    pub k_excursion_cap: u64,
}

impl Default for RenewalOptions {
    fn default() -> Self {
        RenewalOptions { reset_height: 40.0, k_excursion_cap: 100_000 }
    }
}

fn interp(grid: &[f64], vals: &[f64], slope: f64, u: f64) -> f64 {
    if u < 0.0 {
        return 0.0;
    }
    let last = grid.len() - 1;
    if u >= grid[last] {
        return vals[last] + slope * (u - grid[last]);
    }
    let j = grid.partition_point(|&g| g <= u);
    if j == 0 {
        return vals[0];
    }
    let (g0, g1) = (grid[j - 1], grid[j]);
    let t = (u - g0) / (g1 - g0);
    vals[j - 1] + t * (vals[j] - vals[j - 1])
}

impl RenewalEstimate {
    /// R̂(u): linear interpolation on the grid, slope θ̂ beyond it, 0 for u < 0.
    pub fn r(&self, u: f64) -> f64 {
        interp(&self.u_grid, &self.r_hat, self.theta_hat.mean, u)
    }

    /// R_β(v) = R̂(v + β)
    pub fn r_beta(&self, beta: f64, v: f64) -> f64 {
        self.r(v + beta)
    }

    pub fn k(&self, u: f64) -> f64 {
        let n = self.k_grid.len();
        let slope = if n >= 2 { (self.k_hat[n - 1] - self.k_hat[n - 2]) / (self.k_grid[n - 1] - self.k_grid[n - 2]) } else { 0.0 };
        interp(&self.k_grid, &self.k_hat, slope, u)
    }

    pub fn grid_max(&self) -> f64 {
        *self.u_grid.last().expect("nonempty grid")
    }

    /// True when u lies beyond the grid by more than 20% of its range.
    pub fn far_extrapolated(&self, u: f64) -> bool {
        u > 1.2 * self.grid_max()
    }

    /// Smallest C with R̂(y) - R̂(x) ≤ C + θ̂(y - x) for all 0 ≤ x ≤ y.
    pub fn envelope_gap(&self) -> f64 {
        let th = self.theta_hat.mean;
        let mut min_g = f64::INFINITY;
        let mut gap: f64 = 0.0;
        for (u, r) in self.u_grid.iter().zip(&self.r_hat) {
            let g = r - th * u;
            min_g = min_g.min(g);
            gap = gap.max(g - min_g);
        }
        gap
    }
}

/// Index of the first grid point ≥ h (heights on the grid at or above it count).
#[inline]
fn bin(grid: &[f64], h: f64) -> usize {
    grid.partition_point(|&g| g < h)
}

struct RenewalAcc {
    r_counts: Vec<f64>,
    k_counts: Vec<f64>,
    slope: Accum,
    z1: Accum,
    censored: u64,
}

pub fn estimate_renewal(step: &StepLaw, u_grid: &[f64], replicas: u64, streams: &StreamSpec) -> Result<RenewalEstimate> {
    estimate_renewal_with(step, u_grid, u_grid, replicas, streams, RenewalOptions::default())
}

pub fn estimate_renewal_with(step: &StepLaw, u_grid: &[f64], k_grid: &[f64], replicas: u64, streams: &StreamSpec, options: RenewalOptions) -> Result<RenewalEstimate> {
    if replicas == 0 {
        return Err(LabError::Config("renewal estimation needs at least one replica".into()));
    }
    for g in [u_grid, k_grid] {
        if g.len() < 2 || g[0] != 0.0 || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Config("grids must start at 0 and increase strictly".into()));
        }
    }
    let umax = *u_grid.last().unwrap();
    let kmax = *k_grid.last().unwrap();
    // least-squares design over the top half of the grid
    let top: Vec<usize> = (0..u_grid.len()).filter(|&j| u_grid[j] >= umax / 2.0).collect();
    let ubar = top.iter().map(|&j| u_grid[j]).sum::<f64>() / top.len() as f64;
    let sxx: f64 = top.iter().map(|&j| (u_grid[j] - ubar).powi(2)).sum();
    let nu = u_grid.len();
    let nk = k_grid.len();
    let reset = options.reset_height;
    let acc = par_fold(
        streams,
        replicas,
        || RenewalAcc { r_counts: vec![0.0; nu + 1], k_counts: vec![0.0; nk + 1], slope: Accum::default(), z1: Accum::default(), censored: 0 },
        |acc, _, rng| {
            // descending chain: histogram of heights, turned into counts by cumulative sums
            let mut local = vec![0u32; nu + 1];
            local[0] += 1;
            let (mut pos, mut lo) = (0.0f64, 0.0f64);
            let mut first = true;
            loop {
                pos += step.sample(rng);
                if pos < lo {
                    lo = pos;
                    if first {
                        acc.z1.push(-lo);
                        first = false;
                    }
                    if -lo > umax {
                        break;
                    }
                    local[bin(u_grid, -lo)] += 1;
                } else if pos - lo > reset {
                    pos = lo + reset / 2.0;
                }
            }
            let mut cum = 0.0;
            let mut sxy = 0.0;
            for j in 0..nu {
                cum += local[j] as f64;
                acc.r_counts[j] += cum;
                if u_grid[j] >= umax / 2.0 {
                    sxy += (u_grid[j] - ubar) * cum;
                }
            }
            acc.slope.push(sxy / sxx);
            // ascending chain with a cap on each excursion
            let mut klocal = vec![0u32; nk + 1];
            klocal[0] += 1;
            let (mut pos, mut hi) = (0.0f64, 0.0f64);
            let mut steps = 0u64;
            loop {
                pos += step.sample(rng);
                steps += 1;
                if pos > hi {
                    hi = pos;
                    steps = 0;
                    if hi > kmax {
                        break;
                    }
                    klocal[bin(k_grid, hi)] += 1;
                } else if steps >= options.k_excursion_cap {
                    acc.censored += 1;
                    break;
                }
            }
            let mut cum = 0.0;
            for j in 0..nk {
                cum += klocal[j] as f64;
                acc.k_counts[j] += cum;
            }
        },
        |mut a, b| {
            a.r_counts.iter_mut().zip(&b.r_counts).for_each(|(x, y)| *x += y);
            a.k_counts.iter_mut().zip(&b.k_counts).for_each(|(x, y)| *x += y);
            a.slope = a.slope.merge(b.slope);
            a.z1 = a.z1.merge(b.z1);
            a.censored += b.censored;
            a
        },
    );
    let nr = replicas as f64;
    let r_hat: Vec<f64> = acc.r_counts[..nu].iter().map(|c| c / nr).collect();
    let k_hat: Vec<f64> = acc.k_counts[..nk].iter().map(|c| c / nr).collect();
    let z = acc.z1.mean_se();
    let theta_ladder = MeanSe { mean: 1.0 / z.mean, se: z.se / (z.mean * z.mean), n: z.n };
    Ok(RenewalEstimate {
        u_grid: u_grid.to_vec(),
        r_hat,
        k_grid: k_grid.to_vec(),
        k_hat,
        theta_hat: acc.slope.mean_se(),
        theta_ladder,
        mean_abs_z1: z,
        replicas,
        k_censored: acc.censored,
        options,
    })
}

/// Evenly spaced grid 0, h, 2h, …, covering [0, max].
pub fn uniform_grid(max: f64, h: f64) -> Vec<f64> {
    let n = (max / h).round() as usize;
    (0..=n).map(|j| j as f64 * h).collect()
}

/// P(S̲_n ≥ -x) for several barriers with common random numbers. `f64::INFINITY`
/// stands for "no barrier".
pub fn survival_prob(step: &StepLaw, n: usize, xs: &[f64], replicas: u64, streams: &StreamSpec) -> Result<Vec<MeanSe>> {
    if xs.iter().any(|x| !(*x >= 0.0)) {
        return Err(LabError::Domain("barriers must be nonnegative".into()));
    }
    if replicas == 0 {
        return Err(LabError::Config("survival estimate needs at least one replica".into()));
    }
    // walks can stop once they fall below every barrier
    let deepest = if xs.iter().all(|x| x.is_finite()) { xs.iter().cloned().fold(0.0, f64::max) } else { f64::INFINITY };
    let counts = par_fold(
        streams,
        replicas,
        || vec![0u64; xs.len()],
        |c, _, rng| {
            let mut lo = 0.0f64;
            let mut s = 0.0;
            for _ in 0..n {
                s += step.sample(rng);
                lo = lo.min(s);
                if lo < -deepest {
                    break;
                }
            }
            for (k, x) in xs.iter().enumerate() {
                if lo >= -x {
                    c[k] += 1;
                }
            }
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    );
    Ok(counts.into_iter().map(|k| crate::stats::proportion(k, replicas)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TanakaPath {
    pub path: WalkPath,
    /// ascending ladder epochs T_k ≤ n of the construction
    pub epochs: Vec<usize>,
    /// heights H_k at those epochs
    pub heights: Vec<f64>,
}

/// Tanaka's pathwise construction of the walk conditioned to stay positive,
/// from time-reversed excursions up to the first strict ascending ladder time.
///
/// Each excursion is simulated in full. For walks whose ascending ladder epoch
/// has infinite mean (stable steps with upward jumps) the running time is
/// heavy-tailed.
pub fn tanaka_conditioned_walk<R: Rng + ?Sized>(step: &StepLaw, n: usize, rng: &mut R) -> TanakaPath {
    let mut zeta = Vec::with_capacity(n + 1);
    zeta.push(0.0);
    let mut epochs = vec![0];
    let mut heights = vec![0.0];
    let mut h = 0.0;
    // ring buffer with the last n+1 positions of the current excursion
    let cap = n + 1;
    let mut ring = vec![0.0f64; cap];
    while zeta.len() <= n {
        let need = n + 1 - zeta.len();
        let mut s = 0.0f64;
        let mut len = 0usize;
        ring[0] = 0.0;
        loop {
            s += step.sample(rng);
            len += 1;
            ring[len % cap] = s;
            if s > 0.0 {
                break;
            }
        }
        // w(j) = ξ(τ) - ξ(τ - j), j = 1..τ
        let take = len.min(need);
        for j in 1..=take {
            let prev = ring[(len - j) % cap];
            zeta.push(h + s - prev);
        }
        h += s;
        if take == len {
            epochs.push(zeta.len() - 1);
            heights.push(h);
        }
    }
    TanakaPath { path: WalkPath::from_positions(zeta), epochs, heights }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanderResult {
    /// accepted S_n / n^{1/α}
    pub samples: Vec<f64>,
    pub mean: MeanSe,
    /// optional-stopping estimate E[|S_τ|; τ ≤ n] / P(τ > n), scaled like the samples
    pub mean_stopping: MeanSe,
    pub accepted: u64,
    pub attempts: u64,
}

/// Endpoint of walks conditioned on S₁, …, S_n > 0, by rejection.
pub fn meander_endpoint(step: &StepLaw, n: usize, replicas: u64, streams: &StreamSpec) -> Result<MeanderResult> {
    if n == 0 {
        return Err(LabError::Domain("meander needs n ≥ 1".into()));
    }
    let scale = (n as f64).powf(1.0 / step.alpha);
    let per: Vec<(Option<f64>, f64)> = par_replicas(streams, replicas, |_, rng| {
        let mut s = 0.0;
        for _ in 0..n {
            s += step.sample(rng);
            if s <= 0.0 {
                return (None, -s);
            }
        }
        (Some(s / scale), 0.0)
    });
    let samples: Vec<f64> = per.iter().filter_map(|p| p.0).collect();
    let accepted = samples.len() as u64;
    if accepted == 0 {
        return Err(LabError::NoAcceptance { attempts: replicas });
    }
    let mean = crate::stats::mean_se(&samples);
    // ratio estimator with delta-method SE
    let nr = replicas as f64;
    let a: Vec<f64> = per.iter().map(|p| p.1 / scale).collect();
    let b: Vec<f64> = per.iter().map(|p| if p.0.is_some() { 1.0 } else { 0.0 }).collect();
    let (ma, mb) = (a.iter().sum::<f64>() / nr, b.iter().sum::<f64>() / nr);
    let ratio = ma / mb;
    let var = a.iter().zip(&b).map(|(x, y)| (x - ratio * y).powi(2)).sum::<f64>() / (nr - 1.0).max(1.0);
    let se = (var / nr).sqrt() / mb;
    Ok(MeanderResult { samples, mean, mean_stopping: MeanSe { mean: ratio, se, n: replicas }, accepted, attempts: replicas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    #[test]
    fn hand_ladder_example() {
        let p = WalkPath::from_positions(vec![0.0, -1.0, -0.5, -2.5]);
        let l = ladder_decompose(&p);
        assert_eq!(l.descending_heights, vec![0.0, -1.0, -2.5]);
        assert_eq!(l.descending_epochs, vec![0, 1, 3]);
        assert_eq!(l.ascending_heights, vec![0.0]);
        let up = WalkPath::from_positions(vec![0.0, 1.0, 2.0]);
        assert_eq!(ladder_decompose(&up).descending_heights, vec![0.0]);
    }

    #[test]
    fn empty_path_and_telescoping() {
        let step = StepLaw::gaussian(1.0).unwrap();
        let mut rng = replica_rng(1, "t", 0);
        let p = simulate_path(&step, 0, 3.0, &mut rng);
        assert_eq!(p.positions, vec![3.0]);
        assert_eq!(p.running_min, vec![3.0]);
        let q = simulate_path(&step, 50, 0.5, &mut rng);
        assert_eq!(q.len(), 51);
    }

    #[test]
    fn interpolation_rules() {
        let est = RenewalEstimate {
            u_grid: vec![0.0, 1.0, 2.0],
            r_hat: vec![1.0, 2.0, 2.5],
            k_grid: vec![0.0, 1.0],
            k_hat: vec![1.0, 1.5],
            theta_hat: MeanSe { mean: 0.5, se: 0.0, n: 1 },
            theta_ladder: MeanSe { mean: 0.5, se: 0.0, n: 1 },
            mean_abs_z1: MeanSe { mean: 2.0, se: 0.0, n: 1 },
            replicas: 1,
            k_censored: 0,
            options: RenewalOptions::default(),
        };
        assert_eq!(est.r(-0.1), 0.0);
        assert_eq!(est.r(0.0), 1.0);
        assert_eq!(est.r(0.5), 1.5);
        assert_eq!(est.r(4.0), 3.5);
        assert_eq!(est.r_beta(1.0, 0.0), 2.0);
        // g = r - 0.5u: 1, 1.5, 1.5 → gap 0.5
        assert!((est.envelope_gap() - 0.5).abs() < 1e-15);
        assert!(est.far_extrapolated(2.5));
        assert!(!est.far_extrapolated(2.3));
    }

    #[test]
    fn survival_trivial_cases() {
        let step = StepLaw::gaussian(1.0).unwrap();
        let s = StreamSpec::new(3, "surv");
        let r = survival_prob(&step, 0, &[0.0, 1.0], 100, &s).unwrap();
        assert!(r.iter().all(|m| m.mean == 1.0));
        let r = survival_prob(&step, 50, &[f64::INFINITY], 100, &s).unwrap();
        assert_eq!(r[0].mean, 1.0);
        assert!(survival_prob(&step, 5, &[-1.0], 10, &s).is_err());
    }

    #[test]
    fn tanaka_bookkeeping() {
        let step = StepLaw::gaussian(1.0).unwrap();
        let mut rng = replica_rng(5, "tanaka", 0);
        for _ in 0..200 {
            let t = tanaka_conditioned_walk(&step, 30, &mut rng);
            assert_eq!(t.path.positions[0], 0.0);
            assert!(t.path.positions[1..].iter().all(|&z| z > 0.0));
            for (e, h) in t.epochs.iter().zip(&t.heights) {
                assert_eq!(t.path.positions[*e], *h);
            }
            // ζ never returns below H_k after T_k
            for (e, h) in t.epochs.iter().zip(&t.heights) {
                assert!(t.path.positions[*e..].iter().all(|z| z >= h));
            }
        }
    }

    #[test]
    fn renewal_rejects_bad_input() {
        let step = StepLaw::gaussian(1.0).unwrap();
        let s = StreamSpec::new(1, "r");
        assert!(estimate_renewal(&step, &[0.0, 1.0], 0, &s).is_err());
        assert!(estimate_renewal(&step, &[0.5, 1.0], 10, &s).is_err());
    }
}
