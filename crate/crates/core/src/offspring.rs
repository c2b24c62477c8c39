//! Calibrated offspring point processes in the boundary case and their
//! induced (tilted) step laws.

use crate::error::{LabError, Result};
use crate::special::integrate;
use crate::stable_laws::{PowerPart, StepLaw};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::Serialize;

pub const DEFAULT_CHILD_CAP: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterParams {
    pub alpha: f64,
    pub p_cluster: f64,
    pub a0: f64,
    pub gamma: f64,
    pub a_max: f64,
    pub b2: f64,
}

impl ClusterParams {
    /// Normalizer Z of the cluster-height density a^{-beta_exp} on [a0, a_max].
    pub fn z_norm(&self) -> f64 {
        let be = self.alpha + 1.0 - self.gamma;
        if (be - 1.0).abs() < 1e-14 {
            (self.a_max / self.a0).ln()
        } else {
            (self.a0.powf(1.0 - be) - self.a_max.powf(1.0 - be)) / (be - 1.0)
        }
    }

    /// Cluster probability that realizes tail constant `c`.
    pub fn p_for_tail_constant(&self, c: f64) -> f64 {
        c * self.alpha * self.z_norm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterModel {
    pub params: ClusterParams,
    pub beta_exp: f64,
    pub z_norm: f64,
    pub b1: f64,
    pub q: f64,
    pub m1: f64,
    pub m2: f64,
    pub c_achieved: f64,
    pub sigma2: f64,
    pub mean_offspring: f64,
    pub residuals: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteVarianceModel {
    /// maximal number of children
    pub max_children: u64,
    pub mean_offspring: f64,
    /// displacement variance; also the mean displacement and the tilted variance
    pub s2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum OffspringModel {
    Cluster(ClusterModel),
    FiniteVariance(FiniteVarianceModel),
}

fn calib_residual(b1: f64, q: f64, b2: f64, m1: f64, m2: f64) -> (f64, f64) {
    let (e1, e2) = ((-b1).exp(), (-b2).exp());
    (q * e1 + (1.0 - q) * e2 - (1.0 - m1), q * b1 * e1 + (1.0 - q) * b2 * e2 + m2)
}

const B1_MIN: f64 = -60.0;
const Q_MIN: f64 = 1e-12;
const Q_MAX: f64 = 1.0 - 1e-12;

/// Damped Newton on (b1, q) for the two boundary-case equations.
fn solve_anchor(b2: f64, m1: f64, m2: f64) -> Result<(f64, f64, (f64, f64))> {
    let e2 = (-b2).exp();
    let norm = |r: (f64, f64)| r.0.hypot(r.1);
    // starting point: scan b1 along the curve solving the first equation
    let mut best: Option<(f64, f64, f64)> = None;
    let mut b = -0.01;
    while b > B1_MIN {
        let q = (1.0 - m1 - e2) / ((-b).exp() - e2);
        if q > Q_MIN && q < Q_MAX {
            let r = norm(calib_residual(b, q, b2, m1, m2));
            if best.is_none_or(|x| r < x.2) {
                best = Some((b, q, r));
            }
        }
        b -= 0.01;
    }
    let (mut b1, mut q, _) = best.ok_or_else(|| LabError::Calibration { msg: "no start point in the search box".into(), residual: f64::NAN })?;
    let mut r = calib_residual(b1, q, b2, m1, m2);
    for _ in 0..200 {
        if norm(r) <= 1e-13 {
            break;
        }
        let e1 = (-b1).exp();
        let j11 = -q * e1;
        let j12 = e1 - e2;
        let j21 = q * (1.0 - b1) * e1;
        let j22 = b1 * e1 - b2 * e2;
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let db = (r.0 * j22 - r.1 * j12) / det;
        let dq = (j11 * r.1 - j21 * r.0) / det;
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let (nb, nq) = (b1 - t * db, q - t * dq);
            if nb >= B1_MIN && nb < 0.0 && nq > Q_MIN && nq < Q_MAX {
                let nr = calib_residual(nb, nq, b2, m1, m2);
                if norm(nr) < norm(r) {
                    b1 = nb;
                    q = nq;
                    r = nr;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if norm(r) > 1e-12 {
        return Err(LabError::Calibration { msg: "damped Newton did not converge inside the search box".into(), residual: norm(r) });
    }
    Ok((b1, q, r))
}

pub fn build_cluster_model(params: ClusterParams) -> Result<ClusterModel> {
    let ClusterParams { alpha, p_cluster, a0, gamma, a_max, b2 } = params.clone();
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(LabError::Domain(format!("alpha must lie in (1,2), got {alpha}")));
    }
    if !(0.0..1.0).contains(&p_cluster) {
        return Err(LabError::Domain(format!("p_cluster must lie in [0,1), got {p_cluster}")));
    }
    if !(a0 > 1.0 && a_max > a0) || !(gamma >= 1.0) {
        return Err(LabError::Domain("need a0 > 1, a_max > a0 and gamma >= 1".into()));
    }
    let beta_exp = alpha + 1.0 - gamma;
    if !(beta_exp > 0.0) {
        return Err(LabError::Domain(format!("cluster height exponent alpha+1-gamma = {beta_exp} must be positive")));
    }
    let z = params.z_norm();
    let c = p_cluster / (alpha * z);
    let power = PowerPart { alpha, c, lo: a0, hi: a_max };
    let m1 = power.mass();
    let m2 = power.moment(1.0);
    if m1 == 0.0 {
        // one child with E e^{-V} = 1 and E V e^{-V} = 0 forces V ≡ 0 by Jensen
        return Err(LabError::Calibration { msg: "no cluster mass: the anchor equations only have the degenerate solution V = 0".into(), residual: 0.0 });
    }
    if m1 >= 1.0 {
        return Err(LabError::Calibration { msg: "cluster mass too large".into(), residual: m1 });
    }
    let (b1, q, residuals) = solve_anchor(b2, m1, m2)?;
    let sigma2 = q * b1 * b1 * (-b1).exp() + (1.0 - q) * b2 * b2 * (-b2).exp() + power.moment(2.0);
    let panels = ((a_max - a0) * 64.0).ceil().clamp(64.0, 200_000.0) as usize;
    let excess = integrate(|a| (a - (alpha + 1.0) * a.ln()).exp(), a0, a_max, panels);
    let mean_offspring = 1.0 + p_cluster / z * excess;
    Ok(ClusterModel { params, beta_exp, z_norm: z, b1, q, m1, m2, c_achieved: c, sigma2, mean_offspring, residuals })
}

/// Boundary-case model with at most `max_children` children, Binomial counts of
/// mean `mean_offspring` and i.i.d. N(s², s²) displacements, s² = 2 ln(mean).
pub fn build_finite_variance_model(max_children: u64, mean_offspring: f64) -> Result<FiniteVarianceModel> {
    if max_children < 1 || !(mean_offspring > 1.0) || mean_offspring > max_children as f64 {
        return Err(LabError::Domain(format!(
            "need 1 < mean_offspring <= max_children, got mean {mean_offspring} with {max_children} children"
        )));
    }
    Ok(FiniteVarianceModel { max_children, mean_offspring, s2: 2.0 * mean_offspring.ln() })
}

/// Weight applied to a candidate spine child at absolute position x.
pub trait SpineWeight {
    fn h(&self, x: f64) -> f64;
    /// (base, slope) with h(a + d) ≤ base + slope·max(d, 0) for every d
    fn envelope(&self, a: f64) -> (f64, f64);
}

/// Weight ≡ 1 (additive-martingale size biasing).
pub struct UnitWeight;

impl SpineWeight for UnitWeight {
    fn h(&self, _x: f64) -> f64 {
        1.0
    }
    fn envelope(&self, _a: f64) -> (f64, f64) {
        (1.0, 0.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SpineDraw {
    pub spine: f64,
    pub siblings: Vec<f64>,
    pub proposals: u64,
}

impl ClusterModel {
    #[inline]
    fn sample_height<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi, be) = (self.params.a0, self.params.a_max, self.beta_exp);
        let u: f64 = rng.random();
        if (be - 1.0).abs() < 1e-14 {
            lo * (hi / lo).powf(u)
        } else {
            let e = 1.0 - be;
            let (l, h) = (lo.powf(e), hi.powf(e));
            (l + u * (h - l)).powf(1.0 / e)
        }
    }

    #[inline]
    pub fn cluster_mean(&self, a: f64) -> f64 {
        (a - self.params.gamma * a.ln()).exp()
    }

    fn push_cluster<R: Rng + ?Sized>(&self, a: f64, extra: u64, cap: u64, rng: &mut R, out: &mut Vec<f64>) -> Result<u64> {
        let lam = self.cluster_mean(a);
        let k = if lam > 0.0 { Poisson::new(lam).map_err(|e| LabError::Domain(e.to_string()))?.sample(rng) as u64 } else { 0 } + extra;
        if k > cap {
            return Err(LabError::OffspringOverflow { count: k, cap });
        }
        out.extend(std::iter::repeat_n(a, k as usize));
        Ok(k)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, cap: u64, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        out.push(if rng.random::<f64>() < self.q { self.b1 } else { self.params.b2 });
        if self.params.p_cluster > 0.0 && rng.random::<f64>() < self.params.p_cluster {
            let a = self.sample_height(rng);
            self.push_cluster(a, 0, cap, rng, out)?;
        }
        Ok(())
    }
}

impl FiniteVarianceModel {
    fn count<R: Rng + ?Sized>(&self, trials: u64, rng: &mut R) -> Result<u64> {
        let p = self.mean_offspring / self.max_children as f64;
        if p >= 1.0 {
            Ok(trials)
        } else if trials <= 64 {
            Ok((0..trials).filter(|_| rng.random::<f64>() < p).count() as u64)
        } else {
            Ok(Binomial::new(trials, p).map_err(|e| LabError::Domain(e.to_string()))?.sample(rng))
        }
    }

    #[inline]
    fn displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.s2 + self.s2.sqrt() * z
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        for _ in 0..self.count(self.max_children, rng)? {
            out.push(self.displacement(rng));
        }
        Ok(())
    }
}

impl OffspringModel {
    pub fn name(&self) -> &'static str {
        match self {
            OffspringModel::Cluster(_) => "cluster",
            OffspringModel::FiniteVariance(_) => "finite-variance",
        }
    }

    pub fn mean_offspring(&self) -> f64 {
        match self {
            OffspringModel::Cluster(m) => m.mean_offspring,
            OffspringModel::FiniteVariance(m) => m.mean_offspring,
        }
    }

    /// Variance of the induced step law.
    pub fn sigma2(&self) -> f64 {
        match self {
            OffspringModel::Cluster(m) => m.sigma2,
            OffspringModel::FiniteVariance(m) => m.s2,
        }
    }

    /// Appends one draw of the point process (displacements relative to the parent).
    pub fn sample_into<R: Rng + ?Sized>(&self, cap: u64, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        match self {
            OffspringModel::Cluster(m) => m.sample_into(cap, rng, out),
            OffspringModel::FiniteVariance(m) => {
                m.sample_into(rng, out)?;
                if m.max_children > cap {
                    return Err(LabError::OffspringOverflow { count: m.max_children, cap });
                }
                Ok(())
            }
        }
    }

    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        self.sample_into(DEFAULT_CHILD_CAP, rng, &mut v)?;
        Ok(v)
    }

    /// Law of S₁: the tilted intensity E Σ 1{V ∈ dy} e^{-V}.
    pub fn induced_step_law(&self) -> StepLaw {
        match self {
            OffspringModel::Cluster(m) => {
                let b2 = m.params.b2;
                let atoms = vec![(m.b1, m.q * (-m.b1).exp()), (b2, (1.0 - m.q) * (-b2).exp())];
                let power = (m.params.p_cluster > 0.0).then_some(PowerPart { alpha: m.params.alpha, c: m.c_achieved, lo: m.params.a0, hi: m.params.a_max });
                // calibration guarantees unit mass to 1e-12
                StepLaw::mixture(atoms, power).expect("calibrated model has unit tilted mass")
            }
            OffspringModel::FiniteVariance(m) => StepLaw::gaussian(m.s2).expect("positive variance"),
        }
    }

    /// Closed-form (E Σ e^{-V} - 1, E Σ V e^{-V}).
    pub fn calibration_residuals(&self) -> (f64, f64) {
        match self {
            OffspringModel::Cluster(m) => {
                let (r1, r2) = calib_residual(m.b1, m.q, m.params.b2, m.m1, m.m2);
                (r1, r2)
            }
            OffspringModel::FiniteVariance(m) => {
                // X ~ N(μ, v): E e^{-X} = e^{-μ+v/2}, E X e^{-X} = (μ - v) e^{-μ+v/2}
                let (mu, v) = (m.s2, m.s2);
                let e = (-mu + v / 2.0).exp();
                (m.mean_offspring * e - 1.0, m.mean_offspring * (mu - v) * e)
            }
        }
    }

    /// Joint draw of the size-biased offspring and its spine child: the spine
    /// displacement d is drawn from the step law weighted by h(a + d) (by
    /// rejection under the envelope of `weight`), the rest of the family from
    /// the Palm distribution of the point process given a child at d.
    pub fn sample_spine_family<R: Rng + ?Sized>(&self, step: &StepLaw, a: f64, weight: &dyn SpineWeight, cap: u64, rng: &mut R) -> Result<SpineDraw> {
        let (base, slope) = weight.envelope(a);
        let pos_mean = if slope > 0.0 { step.positive_part_mean().unwrap_or(0.0) } else { 0.0 };
        let total = base + slope * pos_mean;
        let mut proposals = 0u64;
        let d = loop {
            proposals += 1;
            let d = if rng.random::<f64>() * total < base {
                step.sample(rng)
            } else {
                step.sample_positive_biased(rng).expect("step law supports positive size biasing")
            };
            let env = base + slope * d.max(0.0);
            let hv = weight.h(a + d);
            if hv > 0.0 && rng.random::<f64>() * env < hv {
                break d;
            }
            if proposals > 100_000_000 {
                return Err(LabError::EmptyPool);
            }
        };
        let mut siblings = Vec::new();
        match self {
            OffspringModel::Cluster(m) => {
                if d == m.b1 || d == m.params.b2 {
                    if m.params.p_cluster > 0.0 && rng.random::<f64>() < m.params.p_cluster {
                        let h = m.sample_height(rng);
                        m.push_cluster(h, 0, cap, rng, &mut siblings)?;
                    }
                } else {
                    siblings.push(if rng.random::<f64>() < m.q { m.b1 } else { m.params.b2 });
                    // size-biased Poisson count minus the spine child itself
                    m.push_cluster(d, 0, cap, rng, &mut siblings)?;
                }
            }
            OffspringModel::FiniteVariance(m) => {
                for _ in 0..m.count(m.max_children - 1, rng)? {
                    siblings.push(m.displacement(rng));
                }
            }
        }
        Ok(SpineDraw { spine: d, siblings, proposals })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub model: String,
    /// left tail P(S₁ < -y) vanishes for y at or beyond this level (None: light but unbounded)
    pub left_tail_zero_beyond: Option<f64>,
    pub tail_constant: Option<f64>,
    pub truncation: Option<f64>,
    /// E X (log₊X)^α by quadrature over cluster heights and exact Poisson sums
    pub x_log_moment: Option<f64>,
    /// E X̃ (log₊X̃)^{α-1}
    pub x_tilde_log_moment: Option<f64>,
    pub all_moments_finite: bool,
}

fn poisson_expect(lam: f64, f: impl Fn(f64) -> f64) -> f64 {
    // sum over the window where the pmf is not negligible
    let sd = lam.sqrt();
    let lo = if lam < 50.0 { 0.0 } else { (lam - 14.0 * sd).floor().max(0.0) };
    let hi = if lam < 50.0 { 120.0 + 3.0 * lam } else { (lam + 14.0 * sd).ceil() };
    let mut s = 0.0;
    let mut k = lo;
    while k <= hi {
        let lp = -lam + k * lam.ln() - ln_factorial(k);
        s += lp.exp() * f(k);
        k += 1.0;
    }
    s
}

fn ln_factorial(k: f64) -> f64 {
    if k < 2.0 {
        0.0
    } else {
        // Stirling series, accurate beyond k = 2
        let k1 = k + 1.0;
        (k1 - 0.5) * k1.ln() - k1 + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * k1) - 1.0 / (360.0 * k1.powi(3)) + 1.0 / (1260.0 * k1.powi(5))
    }
}

pub fn condition_report(model: &OffspringModel) -> ConditionReport {
    match model {
        OffspringModel::Cluster(m) => {
            let alpha = m.params.alpha;
            let b2 = m.params.b2;
            let anchors = [(m.b1, m.q), (b2, 1.0 - m.q)];
            let lplus = |x: f64| if x > 1.0 { x.ln() } else { 0.0 };
            let fx = |x: f64| x * lplus(x).powf(alpha);
            let fxt = |x: f64| x * lplus(x).powf(alpha - 1.0);
            let moment = |f: &dyn Fn(f64) -> f64, tilde: bool| -> f64 {
                let anchor_val = |b: f64| if tilde { b.max(0.0) * (-b).exp() } else { (-b).exp() };
                let no_cluster: f64 = anchors.iter().map(|&(b, w)| w * f(anchor_val(b))).sum();
                let with_cluster = |a: f64| -> f64 {
                    let lam = m.cluster_mean(a);
                    let unit = if tilde { a * (-a).exp() } else { (-a).exp() };
                    anchors.iter().map(|&(b, w)| w * poisson_expect(lam, |k| f(anchor_val(b) + k * unit))).sum()
                };
                let z = m.z_norm;
                let panels = ((m.params.a_max - m.params.a0) * 8.0).ceil().clamp(16.0, 4000.0) as usize;
                let cl = integrate(|a| with_cluster(a) * a.powf(-m.beta_exp) / z, m.params.a0, m.params.a_max, panels);
                (1.0 - m.params.p_cluster) * no_cluster + m.params.p_cluster * cl
            };
            ConditionReport {
                model: "cluster".into(),
                left_tail_zero_beyond: Some(m.b1.abs().max(if b2 < 0.0 { b2.abs() } else { 0.0 })),
                tail_constant: Some(m.c_achieved),
                truncation: Some(m.params.a_max),
                x_log_moment: Some(moment(&fx, false)),
                x_tilde_log_moment: Some(moment(&fxt, true)),
                all_moments_finite: true,
            }
        }
        OffspringModel::FiniteVariance(_) => ConditionReport {
            model: "finite-variance".into(),
            left_tail_zero_beyond: None,
            tail_constant: None,
            truncation: None,
            x_log_moment: None,
            x_tilde_log_moment: None,
            // bounded child count with Gaussian displacements
            all_moments_finite: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_cluster() -> ClusterModel {
        build_cluster_model(ClusterParams { alpha: 1.5, p_cluster: 0.1, a0: 2.0, gamma: 1.5, a_max: 6.0, b2: 1.0 }).unwrap()
    }

    #[test]
    fn calibration_residuals_tiny() {
        let m = small_cluster();
        let om = OffspringModel::Cluster(m.clone());
        let (r1, r2) = om.calibration_residuals();
        assert!(r1.abs() <= 1e-12 && r2.abs() <= 1e-12);
        assert!(m.b1 < 0.0 && m.q > 0.0 && m.q < 1.0);
        let law = om.induced_step_law();
        assert!(law.mean.abs() < 1e-12);
    }

    #[test]
    fn cluster_free_model_has_no_anchor_solution() {
        // a single child with E e^{-V} = 1 and zero tilted mean forces V ≡ 0 (Jensen),
        // which lies outside q ∈ (0,1)
        let r = build_cluster_model(ClusterParams { alpha: 1.5, p_cluster: 0.0, a0: 2.0, gamma: 1.5, a_max: 12.0, b2: 1.0 });
        assert!(matches!(r, Err(LabError::Calibration { .. })));
    }

    #[test]
    fn rejects_bad_parameters() {
        let base = ClusterParams { alpha: 1.5, p_cluster: 0.1, a0: 2.0, gamma: 1.5, a_max: 6.0, b2: 1.0 };
        assert!(build_cluster_model(ClusterParams { alpha: 2.5, ..base.clone() }).is_err());
        assert!(build_cluster_model(ClusterParams { a_max: 1.0, ..base.clone() }).is_err());
        assert!(build_cluster_model(ClusterParams { p_cluster: 1.5, ..base }).is_err());
        assert!(build_finite_variance_model(2, 1.0).is_err());
        assert!(build_finite_variance_model(2, 2.5).is_err());
    }

    #[test]
    fn finite_variance_model_exact() {
        let m = build_finite_variance_model(2, 2.0).unwrap();
        let om = OffspringModel::FiniteVariance(m.clone());
        let (r1, r2) = om.calibration_residuals();
        assert!(r1.abs() < 1e-15 && r2 == 0.0);
        assert_eq!(om.mean_offspring(), 2.0);
        assert!((m.s2 - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mean_offspring_matches_series() {
        // mean offspring = 1 + p/Z ∫ e^a a^{-(α+1)} da; compare against a plain Riemann sum
        let m = small_cluster();
        let n = 2_000_000;
        let h = 4.0 / n as f64;
        let s: f64 = (0..n).map(|i| {
            let a = 2.0 + (i as f64 + 0.5) * h;
            a.exp() * a.powf(-2.5)
        }).sum::<f64>() * h;
        let want = 1.0 + 0.1 / m.z_norm * s;
        assert!((m.mean_offspring - want).abs() < 1e-9, "{} {}", m.mean_offspring, want);
    }
}
