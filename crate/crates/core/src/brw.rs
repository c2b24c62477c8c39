//! Generation-by-generation branching random walk and its martingales.

use crate::error::{LabError, Result};
use crate::offspring::{OffspringModel, DEFAULT_CHILD_CAP};
use crate::rng::LabRng;
use crate::special::gamma_eval;
use crate::stats::quantile;
use crate::walk_lab::RenewalEstimate;
use rand::{Rng, SeedableRng};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GrowMode {
    /// keep every particle; all functionals available
    Full,
    /// drop particles whose path went below -β; only β-quantities available
    TruncatedOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Caps {
    pub population: usize,
    pub children: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { population: 10_000_000, children: DEFAULT_CHILD_CAP }
    }
}

/// One generation as flat arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    pub pos: Vec<f64>,
    pub path_min: Vec<f64>,
    pub path_max: Vec<f64>,
}

impl Generation {
    pub fn root(a: f64) -> Self {
        Generation { pos: vec![a], path_min: vec![a], path_max: vec![a] }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn push_child(&mut self, parent_min: f64, parent_max: f64, x: f64) {
        self.pos.push(x);
        self.path_min.push(parent_min.min(x));
        self.path_max.push(parent_max.max(x));
    }

    pub fn append(&mut self, other: &mut Generation) {
        self.pos.append(&mut other.pos);
        self.path_min.append(&mut other.path_min);
        self.path_max.append(&mut other.path_max);
    }

    pub fn clear(&mut self) {
        self.pos.clear();
        self.path_min.clear();
        self.path_max.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenRecord {
    pub n: usize,
    /// NaN in truncated-only mode
    pub w: f64,
    pub d: f64,
    pub w_beta: f64,
    pub d_beta: f64,
    /// +∞ on extinction, NaN in truncated-only mode
    pub min_position: f64,
    pub population: u64,
    /// particles whose path stayed at or above -β
    pub pruned_population: u64,
    /// some R_β argument lay more than 20% beyond the renewal grid
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleTrace {
    pub beta: f64,
    pub mode: GrowMode,
    pub gens: Vec<GenRecord>,
    pub survived: bool,
}

impl MartingaleTrace {
    pub fn last(&self) -> &GenRecord {
        self.gens.last().expect("trace holds generation 0")
    }
}

/// Sums over one generation; `alive` is None in full mode (filter by path_min).
pub fn summarize(n: usize, beta: f64, renewal: Option<&RenewalEstimate>, full: Option<&Generation>, alive: &Generation) -> GenRecord {
    let mut rec = GenRecord { n, w: f64::NAN, d: f64::NAN, w_beta: 0.0, d_beta: 0.0, min_position: f64::NAN, population: 0, pruned_population: 0, extrapolated: false };
    if let Some(g) = full {
        let (mut w, mut d, mut m) = (0.0, 0.0, f64::INFINITY);
        for &x in &g.pos {
            let e = (-x).exp();
            w += e;
            d += x * e;
            m = m.min(x);
        }
        rec.w = w;
        rec.d = d;
        rec.min_position = m;
        rec.population = g.len() as u64;
    }
    for (&x, &pm) in alive.pos.iter().zip(&alive.path_min) {
        if pm >= -beta {
            let e = (-x).exp();
            rec.w_beta += e;
            rec.pruned_population += 1;
            if let Some(r) = renewal {
                rec.d_beta += r.r_beta(beta, x) * e;
                rec.extrapolated |= r.far_extrapolated(x + beta);
            }
        }
    }
    if full.is_none() {
        rec.population = rec.pruned_population;
    }
    rec
}

/// Breadth-first growth from a single particle at 0. Particles whose path stays
/// above -β reproduce with the caller's stream, the others with a second stream
/// split off at the start, so both modes see identical β-quantities.
pub fn grow_tree(model: &OffspringModel, n_max: usize, beta: f64, renewal: Option<&RenewalEstimate>, mode: GrowMode, caps: Caps, rng: &mut LabRng) -> Result<MartingaleTrace> {
    grow_tree_with(model, n_max, beta, renewal, mode, caps, rng, |_, _| {})
}

#[allow(clippy::too_many_arguments)]
pub fn grow_tree_with<F>(model: &OffspringModel, n_max: usize, beta: f64, renewal: Option<&RenewalEstimate>, mode: GrowMode, caps: Caps, rng: &mut LabRng, mut visit: F) -> Result<MartingaleTrace>
where
    F: FnMut(usize, &Generation),
{
    if !(beta >= 0.0) {
        return Err(LabError::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    if mode == GrowMode::TruncatedOnly && renewal.is_none() {
        return Err(LabError::Config("truncated-only growth needs a renewal estimate".into()));
    }
    let mut dead_rng = LabRng::from_seed(rng.random());
    let mut alive = Generation::root(0.0);
    let mut dead = Generation::default();
    let mut all = Generation::default();
    let mut next_alive = Generation::default();
    let mut next_dead = Generation::default();
    let mut kids = Vec::new();
    let mut gens = Vec::with_capacity(n_max + 1);
    let full = mode == GrowMode::Full;
    let record = |n: usize, alive: &Generation, dead: &Generation, all: &mut Generation, visit: &mut F| {
        if full {
            all.clear();
            all.pos.extend_from_slice(&alive.pos);
            all.path_min.extend_from_slice(&alive.path_min);
            all.path_max.extend_from_slice(&alive.path_max);
            all.pos.extend_from_slice(&dead.pos);
            all.path_min.extend_from_slice(&dead.path_min);
            all.path_max.extend_from_slice(&dead.path_max);
            visit(n, all);
            summarize(n, beta, renewal, Some(all), alive)
        } else {
            visit(n, alive);
            summarize(n, beta, renewal, None, alive)
        }
    };
    gens.push(record(0, &alive, &dead, &mut all, &mut visit));
    for n in 1..=n_max {
        next_alive.clear();
        next_dead.clear();
        for i in 0..alive.len() {
            kids.clear();
            model.sample_into(caps.children, rng, &mut kids)?;
            let (p, pm, px) = (alive.pos[i], alive.path_min[i], alive.path_max[i]);
            for &dx in &kids {
                let x = p + dx;
                if pm.min(x) >= -beta {
                    next_alive.push_child(pm, px, x);
                } else if full {
                    next_dead.push_child(pm, px, x);
                }
            }
        }
        if full {
            for i in 0..dead.len() {
                kids.clear();
                model.sample_into(caps.children, &mut dead_rng, &mut kids)?;
                for &dx in &kids {
                    next_dead.push_child(dead.path_min[i], dead.path_max[i], dead.pos[i] + dx);
                }
            }
        }
        std::mem::swap(&mut alive, &mut next_alive);
        std::mem::swap(&mut dead, &mut next_dead);
        if alive.len() + dead.len() > caps.population {
            return Err(LabError::PopulationCap { cap: caps.population, generation: n });
        }
        gens.push(record(n, &alive, &dead, &mut all, &mut visit));
    }
    let survived = !alive.is_empty() || !dead.is_empty();
    Ok(MartingaleTrace { beta, mode, gens, survived })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Normalization {
    /// n^{1/α} W_n Γ(1-1/α) / (θ D_n)
    Stable { alpha: f64, theta: f64 },
    /// n^{1/2} W_n (πσ²/2)^{1/2} / D_n
    FiniteVariance { sigma2: f64 },
}

/// Seneta–Heyde ratio per generation; None where D_n vanishes or is unavailable.
pub fn seneta_heyde_statistic(trace: &MartingaleTrace, norm: Normalization) -> Vec<Option<f64>> {
    let (expo, constant) = match norm {
        Normalization::Stable { alpha, theta } => (1.0 / alpha, gamma_eval(1.0 - 1.0 / alpha).unwrap_or(f64::NAN) / theta),
        Normalization::FiniteVariance { sigma2 } => (0.5, (std::f64::consts::PI * sigma2 / 2.0).sqrt()),
    };
    trace
        .gens
        .iter()
        .map(|g| {
            if g.d == 0.0 || !g.d.is_finite() || g.population == 0 {
                None
            } else {
                Some((g.n as f64).powf(expo) * g.w * constant / g.d)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub n: usize,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// Quantiles of M_n - (1/α) log n over surviving replicas.
pub fn min_position_drift(traces: &[MartingaleTrace], alpha: f64) -> Result<Vec<DriftRow>> {
    let surv: Vec<&MartingaleTrace> = traces.iter().filter(|t| t.survived).collect();
    if surv.is_empty() {
        return Err(LabError::NoSurvivors);
    }
    let depth = surv.iter().map(|t| t.gens.len()).min().unwrap_or(0);
    Ok((1..depth)
        .map(|n| {
            let v: Vec<f64> = surv.iter().map(|t| t.gens[n].min_position - (n as f64).ln() / alpha).collect();
            DriftRow { n, q10: quantile(&v, 0.1), q50: quantile(&v, 0.5), q90: quantile(&v, 0.9) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::build_finite_variance_model;
    use crate::rng::replica_rng;

    #[test]
    fn generation_zero_values() {
        let m = OffspringModel::FiniteVariance(build_finite_variance_model(2, 2.0).unwrap());
        let t = grow_tree(&m, 0, 1.0, None, GrowMode::Full, Caps::default(), &mut replica_rng(1, "g", 0)).unwrap();
        let g = t.gens[0];
        assert_eq!((g.w, g.d, g.w_beta, g.population), (1.0, 0.0, 1.0, 1));
        assert!(t.survived);
    }

    #[test]
    fn ratio_is_one_on_exact_trace() {
        let (alpha, theta) = (1.5, 0.8);
        let gam = gamma_eval(1.0 / 3.0).unwrap();
        let gens = (0..6)
            .map(|n| {
                let d = 2.0;
                let w = if n == 0 { 1.0 } else { theta * d / (gam * (n as f64).powf(1.0 / alpha)) };
                GenRecord { n, w, d: if n == 0 { 0.0 } else { d }, w_beta: 0.0, d_beta: 0.0, min_position: 0.0, population: 1, pruned_population: 1, extrapolated: false }
            })
            .collect();
        let t = MartingaleTrace { beta: 0.0, mode: GrowMode::Full, gens, survived: true };
        let r = seneta_heyde_statistic(&t, Normalization::Stable { alpha, theta });
        assert!(r[0].is_none());
        assert!(r[1..].iter().all(|x| (x.unwrap() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn extinct_series_all_flagged() {
        let gens = (0..4).map(|n| GenRecord { n, w: 0.0, d: 0.0, w_beta: 0.0, d_beta: 0.0, min_position: f64::INFINITY, population: 0, pruned_population: 0, extrapolated: false }).collect();
        let t = MartingaleTrace { beta: 0.0, mode: GrowMode::Full, gens, survived: false };
        assert!(seneta_heyde_statistic(&t, Normalization::FiniteVariance { sigma2: 1.0 }).iter().all(Option::is_none));
        assert!(matches!(min_position_drift(&[t], 1.5), Err(LabError::NoSurvivors)));
    }

    #[test]
    fn drift_at_one_equals_minimum() {
        let m = OffspringModel::FiniteVariance(build_finite_variance_model(2, 2.0).unwrap());
        let traces: Vec<_> = (0..50).map(|i| grow_tree(&m, 3, 1.0, None, GrowMode::Full, Caps::default(), &mut replica_rng(2, "d", i)).unwrap()).collect();
        let rows = min_position_drift(&traces, 2.0).unwrap();
        let mins: Vec<f64> = traces.iter().map(|t| t.gens[1].min_position).collect();
        assert_eq!(rows[0].q50, quantile(&mins, 0.5));
    }

    #[test]
    fn population_cap_is_an_error() {
        let m = OffspringModel::FiniteVariance(build_finite_variance_model(2, 2.0).unwrap());
        let caps = Caps { population: 100, ..Caps::default() };
        let r = grow_tree(&m, 10, 1.0, None, GrowMode::Full, caps, &mut replica_rng(3, "cap", 0));
        assert!(matches!(r, Err(LabError::PopulationCap { cap: 100, generation: 7 })));
    }
}
