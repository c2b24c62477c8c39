//! Size-biased trees with a distinguished spine: the truncated derivative
//! change of measure P̂^β and the additive change of measure Q.

use crate::brw::{summarize, Caps, GenRecord, Generation, GrowMode, MartingaleTrace};
use crate::error::{LabError, Result};
use crate::offspring::{OffspringModel, SpineDraw, SpineWeight, UnitWeight};
use crate::rng::{par_fold, StreamSpec};
use crate::stable_laws::StepLaw;
use crate::stats::{Accum, MeanSe};
use crate::walk_lab::RenewalEstimate;
use rand::Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SpineMeasure {
    PhatBeta { beta: f64 },
    Q,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FamilySampler {
    /// rejection under a linear envelope plus the Palm completion of the family
    Exact,
    /// weighted resampling from a pool of ordinary offspring draws
    Pool { pool_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpineOptions {
    pub sampler: FamilySampler,
    pub mode: GrowMode,
    pub caps: Caps,
}

impl Default for SpineOptions {
    fn default() -> Self {
        SpineOptions { sampler: FamilySampler::Exact, mode: GrowMode::Full, caps: Caps::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpineRealization {
    pub measure: SpineMeasure,
    pub spine_positions: Vec<f64>,
    /// absolute positions of the spine child's brothers, per generation 1..=n
    pub sibling_sets: Vec<Vec<f64>>,
    pub trace: MartingaleTrace,
    /// final generation and the spine's index in it
    #[serde(skip)]
    pub last_gen: Generation,
    pub spine_index: usize,
    /// smallest pool effective sample size (pool sampler only)
    pub min_ess: Option<f64>,
    pub proposals: u64,
}

impl SpineRealization {
    pub fn low_ess(&self) -> bool {
        self.min_ess.is_some_and(|e| e < 10.0)
    }
}

/// h(x) = R̂(x + β) 1{x ≥ -β} with its linear envelope.
pub struct RenewalWeight<'a> {
    pub renewal: &'a RenewalEstimate,
    pub beta: f64,
    gap: f64,
}

impl<'a> RenewalWeight<'a> {
    pub fn new(renewal: &'a RenewalEstimate, beta: f64) -> Self {
        RenewalWeight { renewal, beta, gap: renewal.envelope_gap() }
    }
}

impl SpineWeight for RenewalWeight<'_> {
    fn h(&self, x: f64) -> f64 {
        if x >= -self.beta {
            self.renewal.r_beta(self.beta, x)
        } else {
            0.0
        }
    }
    fn envelope(&self, a: f64) -> (f64, f64) {
        (self.h(a) + self.gap, self.renewal.theta_hat.mean)
    }
}

/// Family of the spine by pool resampling; returns the draw and the pool ESS.
fn pool_family<R: Rng + ?Sized>(model: &OffspringModel, a: f64, weight: &dyn SpineWeight, pool_size: usize, cap: u64, rng: &mut R) -> Result<(SpineDraw, f64)> {
    let mut pool = Vec::with_capacity(pool_size);
    let mut w = Vec::with_capacity(pool_size);
    for _ in 0..pool_size {
        let mut kids = Vec::new();
        model.sample_into(cap, rng, &mut kids)?;
        let s: f64 = kids.iter().map(|&d| weight.h(a + d) * (-d).exp()).sum();
        pool.push(kids);
        w.push(s);
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(LabError::EmptyPool);
    }
    let ess = total * total / w.iter().map(|x| x * x).sum::<f64>();
    let pick = |ws: &[f64], tot: f64, rng: &mut R| -> usize {
        let mut u = rng.random::<f64>() * tot;
        for (i, x) in ws.iter().enumerate() {
            if u < *x {
                return i;
            }
            u -= x;
        }
        ws.iter().rposition(|x| *x > 0.0).unwrap_or(0)
    };
    let i = pick(&w, total, rng);
    let kids = std::mem::take(&mut pool[i]);
    let cw: Vec<f64> = kids.iter().map(|&d| weight.h(a + d) * (-d).exp()).collect();
    let j = pick(&cw, w[i], rng);
    let spine = kids[j];
    let siblings = kids.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, d)| *d).collect();
    Ok((SpineDraw { spine, siblings, proposals: pool_size as u64 }, ess))
}

fn grow_spine_tree<R: Rng + ?Sized>(
    model: &OffspringModel,
    step: &StepLaw,
    measure: SpineMeasure,
    n: usize,
    renewal: Option<&RenewalEstimate>,
    opts: SpineOptions,
    rng: &mut R,
) -> Result<SpineRealization> {
    let beta = match measure {
        SpineMeasure::PhatBeta { beta } => beta,
        SpineMeasure::Q => f64::INFINITY,
    };
    let rw;
    let weight: &dyn SpineWeight = match measure {
        SpineMeasure::PhatBeta { beta } => {
            rw = RenewalWeight::new(renewal.ok_or_else(|| LabError::Config("P̂^β needs a renewal estimate".into()))?, beta);
            &rw
        }
        SpineMeasure::Q => &UnitWeight,
    };
    let trace_beta = if beta.is_finite() { beta } else { 0.0 };
    let truncated = opts.mode == GrowMode::TruncatedOnly;
    let prune_at = if truncated { -beta } else { f64::NEG_INFINITY };
    let mut cur = Generation::root(0.0);
    let mut spine = 0usize;
    let mut spine_positions = vec![0.0];
    let mut sibling_sets = Vec::with_capacity(n);
    let mut next = Generation::default();
    let mut kids = Vec::new();
    let mut min_ess: Option<f64> = None;
    let mut proposals = 0u64;
    let rec = |k: usize, g: &Generation| -> GenRecord {
        if truncated {
            summarize(k, trace_beta, renewal, None, g)
        } else {
            summarize(k, trace_beta, renewal, Some(g), g)
        }
    };
    let mut gens = vec![rec(0, &cur)];
    for k in 1..=n {
        next.clear();
        let mut next_spine = 0;
        for i in 0..cur.len() {
            let (p, pm, px) = (cur.pos[i], cur.path_min[i], cur.path_max[i]);
            kids.clear();
            if i == spine {
                let draw = match opts.sampler {
                    FamilySampler::Exact => model.sample_spine_family(step, p, weight, opts.caps.children, rng)?,
                    FamilySampler::Pool { pool_size } => {
                        let (d, ess) = pool_family(model, p, weight, pool_size, opts.caps.children, rng)?;
                        min_ess = Some(min_ess.map_or(ess, |m: f64| m.min(ess)));
                        d
                    }
                };
                proposals += draw.proposals;
                // the spine child takes a uniform slot among its brothers
                let slot = rng.random_range(0..=draw.siblings.len());
                sibling_sets.push(draw.siblings.iter().map(|d| p + d).collect::<Vec<_>>());
                kids.extend_from_slice(&draw.siblings);
                kids.insert(slot, draw.spine);
                for (j, &dx) in kids.iter().enumerate() {
                    let x = p + dx;
                    if j == slot {
                        next_spine = next.len();
                        spine_positions.push(x);
                    }
                    if j == slot || pm.min(x) >= prune_at {
                        next.push_child(pm, px, x);
                    }
                }
            } else {
                model.sample_into(opts.caps.children, rng, &mut kids)?;
                for &dx in &kids {
                    let x = p + dx;
                    if pm.min(x) >= prune_at {
                        next.push_child(pm, px, x);
                    }
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        spine = next_spine;
        if cur.len() > opts.caps.population {
            return Err(LabError::PopulationCap { cap: opts.caps.population, generation: k });
        }
        gens.push(rec(k, &cur));
    }
    Ok(SpineRealization {
        measure,
        spine_positions,
        sibling_sets,
        trace: MartingaleTrace { beta: trace_beta, mode: opts.mode, gens, survived: true },
        last_gen: cur,
        spine_index: spine,
        min_ess,
        proposals,
    })
}

pub fn sample_spine_system_phat<R: Rng + ?Sized>(model: &OffspringModel, step: &StepLaw, beta: f64, n: usize, renewal: &RenewalEstimate, opts: SpineOptions, rng: &mut R) -> Result<SpineRealization> {
    if !(beta >= 0.0) {
        return Err(LabError::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    if let FamilySampler::Pool { pool_size } = opts.sampler {
        if pool_size < 64 {
            return Err(LabError::Config(format!("pool_size must be at least 64, got {pool_size}")));
        }
    }
    grow_spine_tree(model, step, SpineMeasure::PhatBeta { beta }, n, Some(renewal), opts, rng)
}

pub fn sample_spine_system_q<R: Rng + ?Sized>(model: &OffspringModel, step: &StepLaw, n: usize, opts: SpineOptions, rng: &mut R) -> Result<SpineRealization> {
    grow_spine_tree(model, step, SpineMeasure::Q, n, None, opts, rng)
}

/// Bounded test functionals of the generation-n record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Functional {
    One,
    MinNonnegative,
    WAtMostOne,
    PopulationAtMost(u64),
    ExpMinusW,
}

impl Functional {
    pub fn battery() -> [Functional; 5] {
        [Functional::One, Functional::MinNonnegative, Functional::WAtMostOne, Functional::PopulationAtMost(8), Functional::ExpMinusW]
    }

    pub fn name(&self) -> String {
        match self {
            Functional::One => "one".into(),
            Functional::MinNonnegative => "min_nonneg".into(),
            Functional::WAtMostOne => "w_le_1".into(),
            Functional::PopulationAtMost(k) => format!("pop_le_{k}"),
            Functional::ExpMinusW => "exp_minus_w".into(),
        }
    }

    pub fn eval(&self, g: &GenRecord) -> f64 {
        let b = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            Functional::One => 1.0,
            Functional::MinNonnegative => b(g.min_position >= 0.0),
            Functional::WAtMostOne => b(g.w <= 1.0),
            Functional::PopulationAtMost(k) => b(g.population <= *k),
            Functional::ExpMinusW => (-g.w).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurePair {
    /// E_P[D_n^β φ]
    pub p_side: MeanSe,
    /// R̂(β) Ê^β[φ]
    pub phat_side: MeanSe,
}

impl MeasurePair {
    pub fn z_score(&self) -> f64 {
        (self.p_side.mean - self.phat_side.mean) / self.p_side.se.hypot(self.phat_side.se)
    }
}

/// Both sides of the change of measure for a list of functionals.
#[allow(clippy::too_many_arguments)]
pub fn change_of_measure_check(
    model: &OffspringModel,
    step: &StepLaw,
    beta: f64,
    n: usize,
    functionals: &[Functional],
    renewal: &RenewalEstimate,
    replicas: u64,
    streams: &StreamSpec,
    opts: SpineOptions,
) -> Result<Vec<MeasurePair>> {
    let k = functionals.len();
    let merge = |a: Result<Vec<Accum>>, b: Result<Vec<Accum>>| -> Result<Vec<Accum>> {
        let (a, b) = (a?, b?);
        Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
    };
    let p_streams = streams.child("p-side");
    let p = par_fold(
        &p_streams,
        replicas,
        || Ok(vec![Accum::default(); k]),
        |acc, _, rng| {
            if let Ok(v) = acc {
                match crate::brw::grow_tree(model, n, beta, Some(renewal), GrowMode::Full, opts.caps, rng) {
                    Ok(t) => {
                        let g = t.last();
                        for (a, f) in v.iter_mut().zip(functionals) {
                            a.push(g.d_beta * f.eval(g));
                        }
                    }
                    Err(e) => *acc = Err(e),
                }
            }
        },
        merge,
    )?;
    let q_streams = streams.child("phat-side");
    let rb = renewal.r(beta);
    let opts_full = SpineOptions { mode: GrowMode::Full, ..opts };
    let q = par_fold(
        &q_streams,
        replicas,
        || Ok(vec![Accum::default(); k]),
        |acc, _, rng| {
            if let Ok(v) = acc {
                match sample_spine_system_phat(model, step, beta, n, renewal, opts_full, rng) {
                    Ok(s) => {
                        let g = s.trace.last();
                        for (a, f) in v.iter_mut().zip(functionals) {
                            a.push(rb * f.eval(g));
                        }
                    }
                    Err(e) => *acc = Err(e),
                }
            }
        },
        merge,
    )?;
    Ok(p.iter().zip(&q).map(|(a, b)| MeasurePair { p_side: a.mean_se(), phat_side: b.mean_se() }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioIdentity {
    /// Ê^β[W_n^β / D_n^β]
    pub lhs: MeanSe,
    /// P(S̲_n ≥ -β) / R̂(β)
    pub rhs: MeanSe,
    pub n: usize,
    pub beta: f64,
}

impl RatioIdentity {
    pub fn z_score(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean) / self.lhs.se.hypot(self.rhs.se)
    }
}

/// Both sides of the exact finite-n spine ratio identity.
#[allow(clippy::too_many_arguments)]
pub fn spine_ratio_identity(
    model: &OffspringModel,
    step: &StepLaw,
    beta: f64,
    n: usize,
    renewal: &RenewalEstimate,
    replicas: u64,
    walk_replicas: u64,
    streams: &StreamSpec,
    opts: SpineOptions,
) -> Result<RatioIdentity> {
    let opts = SpineOptions { mode: GrowMode::TruncatedOnly, ..opts };
    let lhs = par_fold(
        &streams.child("spine"),
        replicas,
        || Ok(Accum::default()),
        |acc, _, rng| {
            if let Ok(a) = acc {
                match sample_spine_system_phat(model, step, beta, n, renewal, opts, rng) {
                    Ok(s) => {
                        let g = s.trace.last();
                        a.push(g.w_beta / g.d_beta);
                    }
                    Err(e) => *acc = Err(e),
                }
            }
        },
        |a, b| Ok(a?.merge(b?)),
    )?;
    let rb = renewal.r(beta);
    let surv = crate::walk_lab::survival_prob(step, n, &[beta], walk_replicas, &streams.child("walk"))?[0];
    Ok(RatioIdentity { lhs: lhs.mean_se(), rhs: MeanSe { mean: surv.mean / rb, se: surv.se / rb, n: surv.n }, n, beta })
}

/// Spine-rank statistics of depth-2 posterior checks, binned by the number of
/// eligible vertices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorCheck {
    pub bins: Vec<PosteriorBin>,
    pub max_tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorBin {
    pub label: String,
    pub samples: u64,
    /// empirical frequency of the spine holding rank 0, 1, 2, ≥3 by position
    pub empirical: [f64; 4],
    /// mean posterior probability of the same ranks
    pub predicted: [f64; 4],
    pub tv: f64,
}

const BIN_LABELS: [&str; 5] = ["1", "2", "3", "4-7", "8+"];

fn count_bin(m: usize) -> usize {
    match m {
        0 | 1 => 0,
        2 => 1,
        3 => 2,
        4..=7 => 3,
        _ => 4,
    }
}

#[derive(Clone, Debug, Default)]
struct PostAcc {
    n: [u64; 5],
    emp: [[f64; 4]; 5],
    pred: [[f64; 4]; 5],
}

/// Compares the spine's rank among eligible depth-`n` vertices with the posterior
/// weights (R_β e^{-V} 1{V̲ ≥ -β} under P̂^β, e^{-V} under Q). Bins with fewer
/// than `min_bin` samples are reported but excluded from `max_tv`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_check(
    model: &OffspringModel,
    step: &StepLaw,
    measure: SpineMeasure,
    n: usize,
    renewal: Option<&RenewalEstimate>,
    replicas: u64,
    min_bin: u64,
    streams: &StreamSpec,
    opts: SpineOptions,
) -> Result<PosteriorCheck> {
    let opts = SpineOptions { mode: GrowMode::Full, ..opts };
    let acc = par_fold(
        streams,
        replicas,
        || Ok(PostAcc::default()),
        |acc, _, rng| {
            let Ok(a) = acc else { return };
            let real = match measure {
                SpineMeasure::PhatBeta { beta } => sample_spine_system_phat(model, step, beta, n, renewal.expect("renewal"), opts, rng),
                SpineMeasure::Q => sample_spine_system_q(model, step, n, opts, rng),
            };
            let s = match real {
                Ok(s) => s,
                Err(e) => {
                    *acc = Err(e);
                    return;
                }
            };
            let g = &s.last_gen;
            let mut items: Vec<(f64, f64, bool)> = Vec::new();
            for i in 0..g.len() {
                let w = match measure {
                    SpineMeasure::PhatBeta { beta } => {
                        if g.path_min[i] >= -beta {
                            renewal.expect("renewal").r_beta(beta, g.pos[i]) * (-g.pos[i]).exp()
                        } else {
                            0.0
                        }
                    }
                    SpineMeasure::Q => (-g.pos[i]).exp(),
                };
                if w > 0.0 {
                    items.push((g.pos[i], w, i == s.spine_index));
                }
            }
            items.sort_by(|x, y| x.0.total_cmp(&y.0));
            let total: f64 = items.iter().map(|x| x.1).sum();
            let b = count_bin(items.len());
            a.n[b] += 1;
            for (r, it) in items.iter().enumerate() {
                a.pred[b][r.min(3)] += it.1 / total;
            }
            // tied positions carry no rank information: spread the spine over its tie group
            let k = items.iter().position(|it| it.2).expect("spine is eligible");
            let lo = items.partition_point(|it| it.0 < items[k].0);
            let hi = items.partition_point(|it| it.0 <= items[k].0);
            for r in lo..hi {
                a.emp[b][r.min(3)] += 1.0 / (hi - lo) as f64;
            }
        },
        |a, b| {
            let (mut a, b) = (a?, b?);
            for k in 0..5 {
                a.n[k] += b.n[k];
                for c in 0..4 {
                    a.emp[k][c] += b.emp[k][c];
                    a.pred[k][c] += b.pred[k][c];
                }
            }
            Ok(a)
        },
    )?;
    let mut bins = Vec::new();
    let mut max_tv: f64 = 0.0;
    for k in 0..5 {
        let m = acc.n[k] as f64;
        let emp = acc.emp[k].map(|x| if m > 0.0 { x / m } else { 0.0 });
        let pred = acc.pred[k].map(|x| if m > 0.0 { x / m } else { 0.0 });
        let tv = crate::stats::total_variation(&emp, &pred);
        if acc.n[k] >= min_bin {
            max_tv = max_tv.max(tv);
        }
        bins.push(PosteriorBin { label: BIN_LABELS[k].into(), samples: acc.n[k], empirical: emp, predicted: pred, tv });
    }
    Ok(PosteriorCheck { bins, max_tv })
}
