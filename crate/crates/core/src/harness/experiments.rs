//! Experiment catalog E1..E12.

use super::config::{ExperimentConfig, EXPERIMENTS};
use super::output::{Provenance, ResultRow, Spread, Verdict};
use crate::brw::{grow_tree, grow_tree_with, min_position_drift, seneta_heyde_statistic, Caps, GrowMode, MartingaleTrace, Normalization};
use crate::error::{LabError, Result};
use crate::offspring::{build_cluster_model, build_finite_variance_model, ClusterParams, OffspringModel};
use crate::rng::{par_fold, par_replicas, StreamSpec};
use crate::special::gamma_eval;
use crate::spine::{change_of_measure_check, posterior_check, sample_spine_system_phat, sample_spine_system_q, FamilySampler, Functional, SpineMeasure, SpineOptions};
use crate::stable_laws::{StableParams, StepLaw};
use crate::stats::{effective_size, fit_exponent, ks_critical_1pct, ks_weighted_one_sample, ks_weighted_two_sample, median, proportion, Accum, MeanSe};
use crate::walk_lab::{estimate_renewal_with, meander_endpoint, survival_prob, uniform_grid, RenewalEstimate, RenewalOptions};
use rand::Rng;
use std::collections::HashMap;

use Provenance::{Derived, Paper, Trivial};

/// Runs experiments and caches renewal estimates and long simulations shared
/// between them.
pub struct Runner {
    pub cfg: ExperimentConfig,
    renewals: HashMap<String, RenewalEstimate>,
    fv_long: Option<Vec<MartingaleTrace>>,
    sh_long: Option<Vec<MartingaleTrace>>,
}

struct Ctx<'a> {
    exp: &'a str,
    model: String,
    alpha: f64,
    replicas: u64,
    seed: u64,
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn row(&self, beta: Option<f64>, n: Option<usize>, stat: impl Into<String>, est: f64, spread: Spread, target: f64, prov: Provenance, pass: Verdict) -> ResultRow {
        ResultRow {
            experiment: self.exp.to_string(),
            model: self.model.clone(),
            alpha: self.alpha,
            beta,
            n,
            replicas: self.replicas,
            seed: self.seed,
            statistic: stat.into(),
            estimate: est,
            spread,
            target,
            provenance: prov,
            pass,
        }
    }
}

/// |a - b| ≤ z·se, with exact equality required when se = 0.
fn within(a: f64, b: f64, se: f64, z: f64) -> Verdict {
    Verdict::from_bool((a - b).abs() <= z * se)
}

fn in_band(x: f64, lo: f64, hi: f64) -> Verdict {
    Verdict::from_bool(x >= lo && x <= hi)
}

/// P(S₁ > 0, …, S_n > 0) for a strictly stable spectrally positive walk.
pub fn stable_stay_positive(alpha: f64, n: usize) -> f64 {
    let rho = 1.0 - 1.0 / alpha;
    (1..=n).fold(1.0, |p, k| p * (k as f64 - 1.0 + rho) / k as f64)
}

fn model_tag(m: &OffspringModel) -> String {
    match m {
        OffspringModel::Cluster(c) => format!("cluster(p={},a_max={},b2={})", c.params.p_cluster, c.params.a_max, c.params.b2),
        OffspringModel::FiniteVariance(f) => format!("finite-variance(k={},m={})", f.max_children, f.mean_offspring),
    }
}

/// Bounded path functionals of (V, V̲, V̄) for the many-to-one check.
const PATH_FUNCTIONALS: [(&str, fn(f64, f64, f64) -> f64); 3] = [
    ("g_abs_le_2", |v, _, _| if v.abs() <= 2.0 { 1.0 } else { 0.0 }),
    ("g_min_ge_m1_v_le_3", |v, lo, _| if lo >= -1.0 && v <= 3.0 { 1.0 } else { 0.0 }),
    ("g_exp_abs_max_le_2", |v, _, hi| if hi <= 2.0 { (-v.abs()).exp() } else { 0.0 }),
];

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Runner { cfg, renewals: HashMap::new(), fv_long: None, sh_long: None }
    }

    fn streams(&self, tag: &str) -> StreamSpec {
        StreamSpec::new(self.cfg.seed, tag)
    }

    fn caps(&self) -> Caps {
        Caps { population: self.cfg.population_cap, ..Caps::default() }
    }

    fn spine_opts(&self) -> SpineOptions {
        let sampler = if self.cfg.pool_size == 0 { FamilySampler::Exact } else { FamilySampler::Pool { pool_size: self.cfg.pool_size } };
        SpineOptions { sampler, mode: GrowMode::Full, caps: self.caps() }
    }

    pub fn cluster_model(&self) -> Result<OffspringModel> {
        let c = &self.cfg;
        Ok(OffspringModel::Cluster(build_cluster_model(ClusterParams { alpha: c.alpha, p_cluster: c.p_cluster, a0: c.a0, gamma: c.gamma, a_max: c.a_max, b2: c.b2 })?))
    }

    pub fn sh_cluster_model(&self) -> Result<OffspringModel> {
        let c = &self.cfg;
        Ok(OffspringModel::Cluster(build_cluster_model(ClusterParams { alpha: c.alpha, p_cluster: c.sh_p_cluster, a0: c.a0, gamma: c.gamma, a_max: c.sh_a_max, b2: c.b2 })?))
    }

    pub fn fv_model(&self) -> Result<OffspringModel> {
        Ok(OffspringModel::FiniteVariance(build_finite_variance_model(self.cfg.fv_children, self.cfg.fv_mean)?))
    }

    pub fn sh_fv_model(&self) -> Result<OffspringModel> {
        Ok(OffspringModel::FiniteVariance(build_finite_variance_model(self.cfg.sh_fv_children, self.cfg.sh_fv_mean)?))
    }

    pub fn stable_step(alpha: f64) -> Result<StepLaw> {
        Ok(StepLaw::stable(StableParams::new(alpha, 1.0)?))
    }

    /// Renewal estimate for a step law, cached by key. `with_k` extends the
    /// ascending grid to 1000 for the K exponent.
    pub fn renewal(&mut self, key: &str, step: &StepLaw, with_k: bool) -> Result<RenewalEstimate> {
        let full_key = format!("{key}/{with_k}");
        if let Some(r) = self.renewals.get(&full_key) {
            return Ok(r.clone());
        }
        let grid = uniform_grid(self.cfg.renewal_max, self.cfg.renewal_step);
        let k_grid = if with_k { uniform_grid(1000.0, 1.0) } else { uniform_grid(1.0, 0.5) };
        let reps = if with_k { self.cfg.k_replicas } else { self.cfg.renewal_replicas };
        let r = estimate_renewal_with(step, &grid, &k_grid, reps, &self.streams(&format!("renewal/{key}")), RenewalOptions::default())?;
        self.renewals.insert(full_key, r.clone());
        Ok(r)
    }

    pub fn run(&mut self, id: &str) -> Result<Vec<ResultRow>> {
        match id {
            "E1" => self.e1(),
            "E2" => self.e2(),
            "E3" => self.e3(),
            "E4" => self.e4(),
            "E5" => self.e5(),
            "E6" => self.e6(),
            "E7" => self.e7(),
            "E8" => self.e8(),
            "E9" => self.e9(),
            "E10" => self.e10(),
            "E11" => self.e11(),
            "E12" => self.e12(),
            _ => Err(LabError::Config(format!("unknown experiment {id:?}"))),
        }
    }

    /// Runs the configured experiment (or all of them).
    pub fn run_configured(&mut self) -> Result<Vec<ResultRow>> {
        let ids: Vec<&str> = if self.cfg.experiment == "all" { EXPERIMENTS.to_vec() } else { vec![EXPERIMENTS.iter().find(|e| **e == self.cfg.experiment).copied().ok_or_else(|| LabError::Config("unknown experiment".into()))?] };
        let mut rows = Vec::new();
        for id in ids {
            rows.extend(self.run(id)?);
        }
        Ok(rows)
    }

    fn ctx<'a>(&self, exp: &'a str, model: &OffspringModel, replicas: u64) -> Ctx<'a> {
        Ctx { exp, model: model_tag(model), alpha: self.cfg.alpha, replicas, seed: self.cfg.seed }
    }

    /// Martingale means of W_n and D_n.
    fn e1(&mut self) -> Result<Vec<ResultRow>> {
        let grid = self.cfg.n_grid_or(&[1, 5, 10]);
        let nmax = *grid.last().unwrap();
        let mut rows = Vec::new();
        for model in [self.cluster_model()?, self.fv_model()?] {
            let ctx = self.ctx("E1", &model, self.cfg.replicas);
            let caps = self.caps();
            let k = grid.len();
            let acc = par_fold(
                &self.streams(&format!("E1/{}", model.name())),
                self.cfg.replicas,
                || Ok((vec![Accum::default(); k], vec![Accum::default(); k])),
                |acc, _, rng| {
                    let Ok((w, d)) = acc else { return };
                    match grow_tree(&model, nmax, f64::INFINITY, None, GrowMode::Full, caps, rng) {
                        Ok(t) => {
                            for (j, &n) in grid.iter().enumerate() {
                                w[j].push(t.gens[n].w);
                                d[j].push(t.gens[n].d);
                            }
                        }
                        Err(e) => *acc = Err(e),
                    }
                },
                |a, b| {
                    let (mut a, b) = (a?, b?);
                    for j in 0..a.0.len() {
                        a.0[j] = a.0[j].merge(b.0[j]);
                        a.1[j] = a.1[j].merge(b.1[j]);
                    }
                    Ok(a)
                },
            )?;
            for (j, &n) in grid.iter().enumerate() {
                let (w, d) = (acc.0[j].mean_se(), acc.1[j].mean_se());
                rows.push(ctx.row(None, Some(n), "mean_W", w.mean, Spread::Se(w.se), 1.0, Derived, within(w.mean, 1.0, w.se, self.cfg.tol.z)));
                rows.push(ctx.row(None, Some(n), "mean_D", d.mean, Spread::Se(d.se), 0.0, Derived, within(d.mean, 0.0, d.se, self.cfg.tol.z)));
            }
        }
        Ok(rows)
    }

    /// Many-to-one: E Σ g(path) against the tilted walk, plus the induced law.
    fn e2(&mut self) -> Result<Vec<ResultRow>> {
        let grid = self.cfg.n_grid_or(&[1, 3, 5]);
        let nf = PATH_FUNCTIONALS.len();
        let mut rows = Vec::new();
        for model in [self.cluster_model()?, self.fv_model()?] {
            let step = model.induced_step_law();
            let ctx = self.ctx("E2", &model, self.cfg.replicas);
            let caps = self.caps();
            for &n in &grid {
                let tree = par_fold(
                    &self.streams(&format!("E2/tree/{}/{n}", model.name())),
                    self.cfg.replicas,
                    || Ok(vec![Accum::default(); nf]),
                    |acc, _, rng| {
                        let Ok(a) = acc else { return };
                        let mut sums = [0.0; 3];
                        let r = grow_tree_with(&model, n, f64::INFINITY, None, GrowMode::Full, caps, rng, |k, g| {
                            if k == n {
                                for i in 0..g.len() {
                                    for (s, f) in sums.iter_mut().zip(PATH_FUNCTIONALS.iter()) {
                                        *s += (f.1)(g.pos[i], g.path_min[i], g.path_max[i]);
                                    }
                                }
                            }
                        });
                        match r {
                            Ok(_) => a.iter_mut().zip(sums).for_each(|(x, s)| x.push(s)),
                            Err(e) => *acc = Err(e),
                        }
                    },
                    |a, b| Ok(a?.into_iter().zip(b?).map(|(x, y)| x.merge(y)).collect()),
                )?;
                let walk = par_fold(
                    &self.streams(&format!("E2/walk/{}/{n}", model.name())),
                    self.cfg.walk_replicas,
                    || vec![Accum::default(); nf],
                    |a, _, rng| {
                        let (mut s, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
                        for _ in 0..n {
                            s += step.sample(rng);
                            lo = lo.min(s);
                            hi = hi.max(s);
                        }
                        for (x, f) in a.iter_mut().zip(PATH_FUNCTIONALS.iter()) {
                            x.push(s.exp() * (f.1)(s, lo, hi));
                        }
                    },
                    |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
                );
                for (j, f) in PATH_FUNCTIONALS.iter().enumerate() {
                    let (t, w) = (tree[j].mean_se(), walk[j].mean_se());
                    let se = t.se.hypot(w.se);
                    rows.push(ctx.row(None, Some(n), f.0, t.mean, Spread::Se(se), w.mean, Derived, within(t.mean, w.mean, se, self.cfg.tol.z)));
                }
            }
            // induced law by reweighting offspring draws
            let draws: Vec<(f64, f64, f64)> = par_replicas(&self.streams(&format!("E2/reweight/{}", model.name())), self.cfg.replicas, |_, rng| {
                let mut kids = Vec::new();
                model.sample_into(caps.children, rng, &mut kids).expect("offspring draw within cap");
                let total: f64 = kids.iter().map(|d| (-d).exp()).sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = *kids.last().expect("anchor child present");
                for &d in &kids {
                    if u < (-d).exp() {
                        pick = d;
                        break;
                    }
                    u -= (-d).exp();
                }
                let tail: f64 = kids.iter().filter(|d| **d >= 4.0).map(|d| (-d).exp()).sum();
                (pick, total, tail)
            });
            let weighted: Vec<(f64, f64)> = draws.iter().map(|d| (d.0, d.1)).collect();
            let ks = ks_weighted_one_sample(&weighted, |x| step.cdf(x).unwrap_or(f64::NAN), |x| step.cdf_left(x).unwrap_or(f64::NAN));
            let ess = effective_size(weighted.iter().map(|w| w.1));
            let crit = ks_critical_1pct(ess as usize, None);
            rows.push(ctx.row(None, Some(1), "ks_reweighted_step_law", ks, Spread::None, crit, Derived, Verdict::from_bool(ks <= crit)));
            if let OffspringModel::Cluster(c) = &model {
                let tail: Vec<f64> = draws.iter().map(|d| d.2).collect();
                let t = crate::stats::mean_se(&tail);
                let target = c.c_achieved * (4f64.powf(-c.params.alpha) - c.params.a_max.powf(-c.params.alpha));
                rows.push(ctx.row(None, Some(1), "tilted_tail_y4", t.mean, Spread::Se(t.se), target, Derived, within(t.mean, target, t.se, self.cfg.tol.z)));
                let atom = step.cdf(c.params.b2).unwrap() - step.cdf_left(c.params.b2).unwrap();
                let want = (1.0 - c.q) * (-c.params.b2).exp();
                rows.push(ctx.row(None, Some(1), "atom_mass_b2", atom, Spread::None, want, Trivial, Verdict::from_bool((atom - want).abs() <= 1e-12)));
            }
        }
        Ok(rows)
    }

    /// Renewal shapes: θ̂ by slope against 1/E|Z₁|, exponent of K.
    fn e3(&mut self) -> Result<Vec<ResultRow>> {
        let alpha = self.cfg.alpha;
        let step = Self::stable_step(alpha)?;
        let ren = self.renewal(&format!("stable-{alpha}"), &step, true)?;
        let ctx = Ctx { exp: "E3", model: format!("stable(alpha={alpha},c0=1)"), alpha, replicas: ren.replicas, seed: self.cfg.seed };
        let tol = &self.cfg.tol;
        let mut rows = Vec::new();
        let se = ren.theta_hat.se.hypot(ren.theta_ladder.se);
        rows.push(ctx.row(None, None, "theta_slope_vs_ladder", ren.theta_hat.mean, Spread::Se(se), ren.theta_ladder.mean, Derived, within(ren.theta_hat.mean, ren.theta_ladder.mean, se, tol.z)));
        let pts: Vec<(f64, f64)> = ren.k_grid.iter().zip(&ren.k_hat).filter(|(u, _)| **u >= 100.0 && (**u as u64).is_multiple_of(10)).map(|(u, k)| (*u, *k)).collect();
        let fit = fit_exponent(&pts, 200, &mut self.streams("E3/boot").rng(0))?;
        rows.push(ctx.row(None, None, "k_loglog_exponent", fit.slope, Spread::Band(fit.ci_lo, fit.ci_hi), alpha - 1.0, Paper, Verdict::from_bool((fit.slope - (alpha - 1.0)).abs() <= tol.k_exponent)));
        let mono = ren.r_hat.windows(2).all(|w| w[1] >= w[0]) && ren.k_hat.windows(2).all(|w| w[1] >= w[0]);
        rows.push(ctx.row(None, None, "renewal_monotone", if mono { 1.0 } else { 0.0 }, Spread::None, 1.0, Trivial, Verdict::from_bool(mono)));
        rows.push(ctx.row(None, None, "r_hat_at_0", ren.r_hat[0], Spread::None, 1.0, Trivial, Verdict::from_bool(ren.r_hat[0] >= 1.0 && ren.k_hat[0] >= 1.0)));
        let band: Vec<f64> = ren.u_grid.iter().zip(&ren.r_hat).map(|(u, r)| r / (1.0 + u)).collect();
        let (lo, hi) = band.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        rows.push(ctx.row(None, None, "r_over_1_plus_u_band", hi / lo, Spread::Band(lo, hi), f64::NAN, Derived, Verdict::Report));
        rows.push(ctx.row(None, None, "k_chains_censored", ren.k_censored as f64, Spread::None, 0.0, Derived, Verdict::Report));
        Ok(rows)
    }

    /// Survival asymptotics n^{1/α} P(S̲_n ≥ -x) Γ(1-1/α) / R̂(x).
    fn e4(&mut self) -> Result<Vec<ResultRow>> {
        let alpha = self.cfg.alpha;
        let step = Self::stable_step(alpha)?;
        let ren = self.renewal(&format!("stable-{alpha}"), &step, false)?;
        let xs = [1.0, 2.0, 5.0];
        let gam = gamma_eval(1.0 - 1.0 / alpha)?;
        let ctx = Ctx { exp: "E4", model: format!("stable(alpha={alpha},c0=1)"), alpha, replicas: self.cfg.walk_replicas, seed: self.cfg.seed };
        let mut rows = Vec::new();
        for n in self.cfg.n_grid_or(&[4096]) {
            let p = survival_prob(&step, n, &xs, self.cfg.walk_replicas, &self.streams(&format!("E4/{n}")))?;
            for (x, pe) in xs.iter().zip(&p) {
                let f = (n as f64).powf(1.0 / alpha) * gam / ren.r(*x);
                let tol = self.cfg.tol.survival;
                rows.push(ctx.row(Some(*x), Some(n), "survival_ratio", pe.mean * f, Spread::Se(pe.se * f), 1.0, Paper, in_band(pe.mean * f, 1.0 - tol, 1.0 + tol)));
            }
        }
        Ok(rows)
    }

    /// Meander mean identity E M_α · θ = Γ(1-1/α).
    fn e5(&mut self) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for alpha in [1.3, 1.5, 1.7] {
            let step = Self::stable_step(alpha)?;
            let ren = self.renewal(&format!("stable-{alpha}"), &step, false)?;
            let gam = gamma_eval(1.0 - 1.0 / alpha)?;
            for n in self.cfg.n_grid_or(&[4096]) {
                let attempts = (self.cfg.meander_target / stable_stay_positive(alpha, n)).ceil() as u64;
                let m = meander_endpoint(&step, n, attempts, &self.streams(&format!("E5/{alpha}/{n}")))?;
                let ctx = Ctx { exp: "E5", model: format!("stable(alpha={alpha},c0=1)"), alpha, replicas: attempts, seed: self.cfg.seed };
                let th = ren.theta_hat;
                let f = th.mean / gam;
                let se = f * (m.mean.se / m.mean.mean).hypot(th.se / th.mean) * m.mean.mean;
                let tol = self.cfg.tol.meander;
                rows.push(ctx.row(None, Some(n), "meander_mean_ratio", m.mean.mean * f, Spread::Se(se), 1.0, Paper, in_band(m.mean.mean * f, 1.0 - tol, 1.0 + tol)));
                let se2 = f * m.mean_stopping.se;
                rows.push(ctx.row(None, Some(n), "meander_mean_ratio_optional_stopping", m.mean_stopping.mean * f, Spread::Se(se2), 1.0, Paper, Verdict::Report));
                rows.push(ctx.row(None, Some(n), "meander_accepted", m.accepted as f64, Spread::None, self.cfg.meander_target, Derived, Verdict::Report));
                let pos = m.samples.iter().all(|x| *x > 0.0);
                rows.push(ctx.row(None, Some(n), "meander_samples_positive", if pos { 1.0 } else { 0.0 }, Spread::None, 1.0, Trivial, Verdict::from_bool(pos)));
            }
        }
        Ok(rows)
    }

    /// Change of measure: E_P[D_n^β φ] = R̂(β) Ê^β[φ].
    fn e6(&mut self) -> Result<Vec<ResultRow>> {
        let model = self.cluster_model()?;
        let step = model.induced_step_law();
        let ren = self.renewal("cluster", &step, false)?;
        let ctx = self.ctx("E6", &model, self.cfg.replicas);
        let fs = Functional::battery();
        let mut rows = Vec::new();
        for beta in self.cfg.betas_or(&[2.0, 5.0]) {
            for n in self.cfg.n_grid_or(&[2, 5]) {
                let pairs = change_of_measure_check(&model, &step, beta, n, &fs, &ren, self.cfg.replicas, &self.streams(&format!("E6/{beta}/{n}")), self.spine_opts())?;
                for (f, p) in fs.iter().zip(&pairs) {
                    let se = p.p_side.se.hypot(p.phat_side.se);
                    let prov = if *f == Functional::One { Paper } else { Derived };
                    rows.push(ctx.row(Some(beta), Some(n), format!("com_{}", f.name()), p.p_side.mean, Spread::Se(se), p.phat_side.mean, prov, within(p.p_side.mean, p.phat_side.mean, se, self.cfg.tol.z)));
                }
            }
        }
        Ok(rows)
    }

    /// Spine posteriors and spine marginals under both measures.
    fn e7(&mut self) -> Result<Vec<ResultRow>> {
        let model = self.cluster_model()?;
        let step = model.induced_step_law();
        let ren = self.renewal("cluster", &step, false)?;
        let ctx = self.ctx("E7", &model, self.cfg.replicas);
        let opts = self.spine_opts();
        let reps = self.cfg.replicas;
        let tol = self.cfg.tol.clone();
        let mut rows = Vec::new();
        for beta in self.cfg.betas_or(&[2.0]) {
            let pc = posterior_check(&model, &step, SpineMeasure::PhatBeta { beta }, 2, Some(&ren), reps, 1000, &self.streams(&format!("E7/post/{beta}")), opts)?;
            rows.push(ctx.row(Some(beta), Some(2), "posterior_tv_phat", pc.max_tv, Spread::None, tol.tv, Paper, Verdict::from_bool(pc.max_tv <= tol.tv)));
            // spine marginal against the h-transform reweighting of plain walks
            let n = 6;
            let spine: Vec<(f64, f64)> = par_replicas(&self.streams(&format!("E7/marg/{beta}")), reps, |_, rng| {
                let s = sample_spine_system_phat(&model, &step, beta, n, &ren, SpineOptions { mode: GrowMode::TruncatedOnly, ..opts }, rng).expect("spine system");
                (s.spine_positions[n], 1.0)
            });
            let r0 = ren.r_beta(beta, 0.0);
            let walks: Vec<(f64, f64)> = par_replicas(&self.streams(&format!("E7/oracle/{beta}")), reps, |_, rng| {
                let (mut s, mut lo) = (0.0f64, 0.0f64);
                for _ in 0..n {
                    s += step.sample(rng);
                    lo = lo.min(s);
                }
                (s, if lo >= -beta { ren.r_beta(beta, s) / r0 } else { 0.0 })
            });
            let ks = ks_weighted_two_sample(&spine, &walks);
            let crit = ks_critical_1pct(spine.len(), Some(effective_size(walks.iter().map(|w| w.1)) as usize));
            rows.push(ctx.row(Some(beta), Some(n), "spine_marginal_ks_phat", ks, Spread::None, crit, Derived, Verdict::from_bool(ks <= crit)));
        }
        for n in [1, 2] {
            let pc = posterior_check(&model, &step, SpineMeasure::Q, n, None, reps, 1000, &self.streams(&format!("E7/postq/{n}")), opts)?;
            rows.push(ctx.row(None, Some(n), "posterior_tv_q", pc.max_tv, Spread::None, tol.tv, Paper, Verdict::from_bool(pc.max_tv <= tol.tv)));
        }
        let n = 8;
        let spine: Vec<(f64, f64)> = par_replicas(&self.streams("E7/margq"), reps, |_, rng| {
            let s = sample_spine_system_q(&model, &step, n, SpineOptions { mode: GrowMode::Full, ..opts }, rng).expect("spine system");
            (s.spine_positions[n], 1.0)
        });
        let walks: Vec<(f64, f64)> = par_replicas(&self.streams("E7/walkq"), reps, |_, rng| ((0..n).map(|_| step.sample(rng)).sum(), 1.0));
        let ks = ks_weighted_two_sample(&spine, &walks);
        let crit = ks_critical_1pct(spine.len(), Some(walks.len()));
        rows.push(ctx.row(None, Some(n), "spine_marginal_ks_q", ks, Spread::None, crit, Paper, Verdict::from_bool(ks <= crit)));
        // Ê_Q[1/W_n] = P(population_n > 0)
        let n = 3;
        let q = par_fold(
            &self.streams("E7/invw"),
            reps,
            Accum::default,
            |a, _, rng| {
                let s = sample_spine_system_q(&model, &step, n, opts, rng).expect("spine system");
                a.push(1.0 / s.trace.last().w);
            },
            Accum::merge,
        )
        .mean_se();
        let caps = self.caps();
        let alive = par_fold(
            &self.streams("E7/alive"),
            reps,
            || 0u64,
            |a, _, rng| {
                let t = grow_tree(&model, n, f64::INFINITY, None, GrowMode::Full, caps, rng).expect("tree");
                *a += u64::from(t.last().population > 0);
            },
            |a, b| a + b,
        );
        let p = proportion(alive, reps);
        let se = q.se.hypot(p.se);
        rows.push(ctx.row(None, Some(n), "q_inverse_w_vs_survival", q.mean, Spread::Se(se), p.mean, Derived, within(q.mean, p.mean, se, tol.z)));
        Ok(rows)
    }

    /// Exact spine ratio identity.
    fn e8(&mut self) -> Result<Vec<ResultRow>> {
        let model = self.cluster_model()?;
        let step = model.induced_step_law();
        let ren = self.renewal("cluster", &step, false)?;
        let ctx = self.ctx("E8", &model, self.cfg.replicas);
        let mut rows = Vec::new();
        for beta in self.cfg.betas_or(&[2.0, 5.0, 10.0]) {
            for n in self.cfg.n_grid_or(&[5, 10]) {
                let r = crate::spine::spine_ratio_identity(&model, &step, beta, n, &ren, self.cfg.replicas, self.cfg.walk_replicas, &self.streams(&format!("E8/{beta}/{n}")), self.spine_opts())?;
                let se = r.lhs.se.hypot(r.rhs.se);
                rows.push(ctx.row(Some(beta), Some(n), "ratio_identity", r.lhs.mean, Spread::Se(se), r.rhs.mean, Derived, within(r.lhs.mean, r.rhs.mean, se, self.cfg.tol.z)));
            }
        }
        Ok(rows)
    }

    fn long_traces(&self, model: &OffspringModel, nmax: usize, keep: &[usize], replicas: u64, tag: &str) -> Result<Vec<MartingaleTrace>> {
        let caps = self.caps();
        let out: Vec<Result<MartingaleTrace>> = par_replicas(&self.streams(tag), replicas, |_, rng| {
            let mut t = grow_tree(model, nmax, f64::INFINITY, None, GrowMode::Full, caps, rng)?;
            t.gens.retain(|g| keep.binary_search(&g.n).is_ok());
            Ok(t)
        });
        out.into_iter().collect()
    }

    fn fv_grid(&self) -> Vec<usize> {
        let mut g = self.cfg.n_grid_or(&[16, 64, 256, 1024]);
        g.extend([64, 128, 256, 512, 1024]);
        g.sort_unstable();
        g.dedup();
        g
    }

    fn fv_traces(&mut self) -> Result<Vec<MartingaleTrace>> {
        if self.fv_long.is_none() {
            let g = self.fv_grid();
            let t = self.long_traces(&self.sh_fv_model()?, *g.last().unwrap(), &g, self.cfg.sh_fv_replicas, "long/fv")?;
            self.fv_long = Some(t);
        }
        Ok(self.fv_long.clone().unwrap())
    }

    const SH_WINDOW: [usize; 5] = [16, 24, 32, 48, 64];

    fn sh_traces(&mut self) -> Result<Vec<MartingaleTrace>> {
        if self.sh_long.is_none() {
            let keep: Vec<usize> = (0..=64).collect();
            let t = self.long_traces(&self.sh_cluster_model()?, 64, &keep, self.cfg.sh_replicas, "long/sh")?;
            self.sh_long = Some(t);
        }
        Ok(self.sh_long.clone().unwrap())
    }

    fn gen_median(traces: &[MartingaleTrace], n: usize, f: impl Fn(&crate::brw::GenRecord) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = traces.iter().filter(|t| t.survived).filter_map(|t| t.gens.iter().find(|g| g.n == n).and_then(&f)).collect();
        (!v.is_empty()).then(|| median(&v))
    }

    fn sh_theta(&mut self) -> Result<f64> {
        let step = self.sh_cluster_model()?.induced_step_law();
        Ok(self.renewal("sh-cluster", &step, false)?.theta_hat.mean)
    }

    /// Seneta–Heyde ratios in the finite-variance and stable regimes.
    fn e9(&mut self) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        let fv = self.sh_fv_model()?;
        let traces = self.fv_traces()?;
        let surv = traces.iter().filter(|t| t.survived).count() as u64;
        let ctx = Ctx { exp: "E9", model: model_tag(&fv), alpha: 2.0, replicas: self.cfg.sh_fv_replicas, seed: self.cfg.seed };
        let norm = Normalization::FiniteVariance { sigma2: fv.sigma2() };
        let ratio = |t: &MartingaleTrace, n: usize| -> Option<f64> {
            let i = t.gens.iter().position(|g| g.n == n)?;
            seneta_heyde_statistic(&MartingaleTrace { gens: vec![t.gens[i]], ..t.clone() }, norm)[0]
        };
        rows.push(ctx.row(None, None, "survivors", surv as f64, Spread::None, f64::NAN, Derived, Verdict::Report));
        let tol = self.cfg.tol.sh_fv;
        let grid = self.cfg.n_grid_or(&[16, 64, 256, 1024]);
        let nmax = *grid.last().unwrap();
        let med = |n: usize| -> f64 {
            let v: Vec<f64> = traces.iter().filter(|t| t.survived).filter_map(|t| ratio(t, n)).collect();
            if v.is_empty() { f64::NAN } else { median(&v) }
        };
        for &n in &grid {
            let m = med(n);
            let verdict = if n == nmax { in_band(m, 1.0 - tol, 1.0 + tol) } else { Verdict::Report };
            rows.push(ctx.row(None, Some(n), "sh_ratio_median", m, Spread::Band(1.0 - tol, 1.0 + tol), 1.0, Paper, verdict));
        }
        if grid.len() >= 2 {
            let prev = grid[grid.len() - 2];
            let (a, b) = ((med(nmax) - 1.0).abs(), (med(prev) - 1.0).abs());
            rows.push(ctx.row(None, Some(nmax), format!("sh_distance_vs_n{prev}"), a, Spread::None, b, Derived, Verdict::from_bool(a < b)));
        }
        // stable pre-asymptotic window
        let model = self.sh_cluster_model()?;
        let theta = self.sh_theta()?;
        let traces = self.sh_traces()?;
        let alpha = self.cfg.alpha;
        let ctx = Ctx { exp: "E9", model: model_tag(&model), alpha, replicas: self.cfg.sh_replicas, seed: self.cfg.seed };
        let norm = Normalization::Stable { alpha, theta };
        let tol = self.cfg.tol.sh_stable;
        for n in Self::SH_WINDOW {
            let v: Vec<f64> = traces.iter().filter_map(|t| seneta_heyde_statistic(t, norm)[n]).collect();
            let m = median(&v);
            rows.push(ctx.row(None, Some(n), "sh_ratio_median", m, Spread::Band(1.0 - tol, 1.0 + tol), 1.0, Paper, in_band(m, 1.0 - tol, 1.0 + tol)));
        }
        Ok(rows)
    }

    /// Exponent of median W_n against log n.
    fn e10(&mut self) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        let model = self.sh_cluster_model()?;
        let alpha = self.cfg.alpha;
        let traces = self.sh_traces()?;
        let ctx = Ctx { exp: "E10", model: model_tag(&model), alpha, replicas: self.cfg.sh_replicas, seed: self.cfg.seed };
        let pts: Vec<(f64, f64)> = Self::SH_WINDOW.iter().filter_map(|&n| Self::gen_median(&traces, n, |g| Some(g.w)).map(|m| (n as f64, m))).collect();
        let fit = fit_exponent(&pts, 200, &mut self.streams("E10/boot-stable").rng(0))?;
        rows.push(ctx.row(None, None, "median_w_exponent_window", fit.slope, Spread::Band(fit.ci_lo, fit.ci_hi), -1.0 / alpha, Paper, Verdict::from_bool((fit.slope + 1.0 / alpha).abs() <= self.cfg.tol.exponent)));
        let fv = self.sh_fv_model()?;
        let traces = self.fv_traces()?;
        let ctx = Ctx { exp: "E10", model: model_tag(&fv), alpha: 2.0, replicas: self.cfg.sh_fv_replicas, seed: self.cfg.seed };
        let pts: Vec<(f64, f64)> = [64, 128, 256, 512, 1024].iter().filter_map(|&n| Self::gen_median(&traces, n, |g| Some(g.w)).map(|m| (n as f64, m))).collect();
        if pts.len() >= 4 {
            let fit = fit_exponent(&pts, 200, &mut self.streams("E10/boot-fv").rng(0))?;
            rows.push(ctx.row(None, None, "median_w_exponent", fit.slope, Spread::Band(fit.ci_lo, fit.ci_hi), -0.5, Paper, Verdict::Report));
        }
        Ok(rows)
    }

    /// Recentred minimum M_n - (1/α) log n.
    fn e11(&mut self) -> Result<Vec<ResultRow>> {
        let model = self.sh_cluster_model()?;
        let alpha = self.cfg.alpha;
        let traces = self.sh_traces()?;
        let drift = min_position_drift(&traces, alpha)?;
        let ctx = Ctx { exp: "E11", model: model_tag(&model), alpha, replicas: self.cfg.sh_replicas, seed: self.cfg.seed };
        let mut rows = Vec::new();
        for d in drift.iter().filter(|d| [1, 2, 4, 8, 16, 32, 64].contains(&d.n)) {
            rows.push(ctx.row(None, Some(d.n), "min_recentred_q50", d.q50, Spread::Band(d.q10, d.q90), f64::NAN, Derived, Verdict::Report));
        }
        let (first, last) = (drift.first().unwrap(), drift.last().unwrap());
        rows.push(ctx.row(None, Some(last.n), "q10_drift_down", last.q10, Spread::None, first.q10, Derived, Verdict::from_bool(last.q10 < first.q10)));
        Ok(rows)
    }

    /// Running maximum of n^{1/α} W_n (report only).
    fn e12(&mut self) -> Result<Vec<ResultRow>> {
        let model = self.sh_cluster_model()?;
        let alpha = self.cfg.alpha;
        let traces = self.sh_traces()?;
        let ctx = Ctx { exp: "E12", model: model_tag(&model), alpha, replicas: self.cfg.sh_replicas, seed: self.cfg.seed };
        let mut rows = Vec::new();
        for n in [4, 8, 16, 32, 64] {
            let v: Vec<f64> = traces
                .iter()
                .map(|t| t.gens.iter().filter(|g| g.n >= 1 && g.n <= n).map(|g| (g.n as f64).powf(1.0 / alpha) * g.w).fold(0.0, f64::max))
                .collect();
            let m: MeanSe = crate::stats::mean_se(&v);
            rows.push(ctx.row(None, Some(n), "running_max_scaled_w_median", median(&v), Spread::Se(m.se), f64::NAN, Paper, Verdict::Report));
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stay_positive_product_matches_gamma_ratio() {
        // Γ(n+ρ)/(Γ(ρ) n!) for small n
        let (alpha, n) = (1.5, 5);
        let rho = 1.0 - 1.0 / alpha;
        let want = gamma_eval(n as f64 + rho).unwrap() / (gamma_eval(rho).unwrap() * 120.0);
        assert!((stable_stay_positive(alpha, n) - want).abs() < 1e-12);
        assert_eq!(stable_stay_positive(alpha, 0), 1.0);
    }
}
