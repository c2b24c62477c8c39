//! Flat `key=value` experiment configuration.

use crate::error::{LabError, Result};
use serde::Serialize;

pub const EXPERIMENTS: [&str; 12] = ["E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8", "E9", "E10", "E11", "E12"];

/// Keys accepted in config files, with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "E1..E12 or all"),
    ("seed", "master seed (u64)"),
    ("replicas", "replicas per estimate"),
    ("walk_replicas", "replicas for walk-only estimates"),
    ("renewal_replicas", "replicas for the renewal estimate"),
    ("k_replicas", "replicas for the ascending ladder renewal function K"),
    ("renewal_max", "right end of the renewal grid"),
    ("renewal_step", "renewal grid spacing"),
    ("workers", "worker threads (0 = all cores)"),
    ("out", "output directory"),
    ("n_grid", "comma-separated strictly increasing generation list"),
    ("alpha", "stability index of the cluster model and stable steps"),
    ("beta", "comma-separated barrier list"),
    ("p_cluster", "cluster probability"),
    ("a0", "lowest cluster height"),
    ("gamma", "cluster size exponent"),
    ("a_max", "cluster height truncation"),
    ("b2", "fixed upper anchor displacement"),
    ("fv_children", "maximal children of the finite-variance model"),
    ("fv_mean", "mean offspring of the finite-variance model"),
    ("sh_p_cluster", "cluster probability of the Seneta-Heyde cluster model"),
    ("sh_a_max", "cluster height truncation of the Seneta-Heyde cluster model"),
    ("sh_replicas", "replicas of the long cluster-model runs"),
    ("sh_fv_replicas", "replicas of the long finite-variance runs"),
    ("sh_fv_children", "maximal children of the long-run finite-variance model"),
    ("sh_fv_mean", "mean offspring of the long-run finite-variance model"),
    ("meander_target", "expected number of accepted meander samples per alpha"),
    ("pool_size", "pool size; 0 selects the exact family sampler"),
    ("population_cap", "per-replica population cap"),
    ("tol_z", "z-score bound for identity checks"),
    ("tol_tv", "total-variation bound for posterior checks"),
    ("tol_survival", "half-width of the survival-asymptotics band around 1"),
    ("tol_meander", "half-width of the meander-mean band around 1"),
    ("tol_k_exponent", "allowed deviation of the K exponent from alpha-1"),
    ("tol_sh_fv", "half-width of the finite-variance Seneta-Heyde band"),
    ("tol_sh_stable", "half-width of the stable Seneta-Heyde band"),
    ("tol_exponent", "allowed deviation of fitted exponents"),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub z: f64,
    pub tv: f64,
    pub survival: f64,
    pub meander: f64,
    pub k_exponent: f64,
    pub sh_fv: f64,
    pub sh_stable: f64,
    pub exponent: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { z: 4.0, tv: 0.05, survival: 0.15, meander: 0.10, k_exponent: 0.15, sh_fv: 0.2, sh_stable: 0.4, exponent: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub replicas: u64,
    pub walk_replicas: u64,
    pub renewal_replicas: u64,
    pub k_replicas: u64,
    pub renewal_max: f64,
    pub renewal_step: f64,
    pub workers: usize,
    pub out: String,
    /// None selects each experiment's own schedule
    pub n_grid: Option<Vec<usize>>,
    pub alpha: f64,
    /// None selects each experiment's own barriers
    pub betas: Option<Vec<f64>>,
    pub p_cluster: f64,
    pub a0: f64,
    pub gamma: f64,
    pub a_max: f64,
    pub b2: f64,
    pub fv_children: u64,
    pub fv_mean: f64,
    pub sh_p_cluster: f64,
    pub sh_a_max: f64,
    pub sh_replicas: u64,
    pub sh_fv_replicas: u64,
    pub sh_fv_children: u64,
    pub sh_fv_mean: f64,
    pub meander_target: f64,
    pub pool_size: usize,
    pub population_cap: usize,
    pub tol: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "all".into(),
            seed: 20240601,
            replicas: 100_000,
            walk_replicas: 1_000_000,
            renewal_replicas: 100_000,
            k_replicas: 20_000,
            renewal_max: 20.0,
            renewal_step: 0.01,
            workers: 0,
            out: "out".into(),
            n_grid: None,
            alpha: 1.5,
            betas: None,
            p_cluster: 0.1,
            a0: 2.0,
            gamma: 1.5,
            a_max: 6.0,
            b2: 0.2,
            fv_children: 2,
            fv_mean: 2.0,
            sh_p_cluster: 0.02,
            sh_a_max: 6.0,
            sh_replicas: 10_000,
            sh_fv_replicas: 10_000,
            sh_fv_children: 2,
            sh_fv_mean: 1.01,
            meander_target: 20_000.0,
            pool_size: 0,
            population_cap: 10_000_000,
            tol: Tolerances::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| LabError::Config(format!("bad value for {key}: {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "experiment" => self.experiment = v.to_string(),
            "seed" => self.seed = num(key, v)?,
            "replicas" => self.replicas = num(key, v)?,
            "walk_replicas" => self.walk_replicas = num(key, v)?,
            "renewal_replicas" => self.renewal_replicas = num(key, v)?,
            "k_replicas" => self.k_replicas = num(key, v)?,
            "renewal_max" => self.renewal_max = num(key, v)?,
            "renewal_step" => self.renewal_step = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "out" => self.out = v.to_string(),
            "n_grid" => self.n_grid = Some(list(key, v)?),
            "alpha" => self.alpha = num(key, v)?,
            "beta" => self.betas = Some(list(key, v)?),
            "p_cluster" => self.p_cluster = num(key, v)?,
            "a0" => self.a0 = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "a_max" => self.a_max = num(key, v)?,
            "b2" => self.b2 = num(key, v)?,
            "fv_children" => self.fv_children = num(key, v)?,
            "fv_mean" => self.fv_mean = num(key, v)?,
            "sh_p_cluster" => self.sh_p_cluster = num(key, v)?,
            "sh_a_max" => self.sh_a_max = num(key, v)?,
            "sh_replicas" => self.sh_replicas = num(key, v)?,
            "sh_fv_replicas" => self.sh_fv_replicas = num(key, v)?,
            "sh_fv_children" => self.sh_fv_children = num(key, v)?,
            "sh_fv_mean" => self.sh_fv_mean = num(key, v)?,
            "meander_target" => self.meander_target = num(key, v)?,
            "pool_size" => self.pool_size = num(key, v)?,
            "population_cap" => self.population_cap = num(key, v)?,
            "tol_z" => self.tol.z = num(key, v)?,
            "tol_tv" => self.tol.tv = num(key, v)?,
            "tol_survival" => self.tol.survival = num(key, v)?,
            "tol_meander" => self.tol.meander = num(key, v)?,
            "tol_k_exponent" => self.tol.k_exponent = num(key, v)?,
            "tol_sh_fv" => self.tol.sh_fv = num(key, v)?,
            "tol_sh_stable" => self.tol.sh_stable = num(key, v)?,
            "tol_exponent" => self.tol.exponent = num(key, v)?,
            _ => return Err(LabError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LabError::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 || self.walk_replicas == 0 || self.renewal_replicas == 0 || self.k_replicas == 0 || self.sh_replicas == 0 || self.sh_fv_replicas == 0 {
            return Err(LabError::Config("replica counts must be at least 1".into()));
        }
        if let Some(g) = &self.n_grid {
            if g.is_empty() || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(LabError::Config("n_grid must be nonempty and strictly increasing".into()));
            }
        }
        if self.experiment != "all" && !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(LabError::Config(format!("unknown experiment {:?}", self.experiment)));
        }
        if self.betas.iter().flatten().any(|b| !(*b >= 0.0)) {
            return Err(LabError::Config("beta values must be nonnegative".into()));
        }
        if !(self.renewal_step > 0.0 && self.renewal_max > self.renewal_step) {
            return Err(LabError::Config("renewal grid must have positive spacing below its maximum".into()));
        }
        Ok(())
    }

    pub fn betas_or(&self, default: &[f64]) -> Vec<f64> {
        self.betas.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn n_grid_or(&self, default: &[usize]) -> Vec<usize> {
        self.n_grid.clone().unwrap_or_else(|| default.to_vec())
    }
}
