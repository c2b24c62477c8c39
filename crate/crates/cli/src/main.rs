use anyhow::{Context, Result};
use brwlab::harness::{run_experiment, ExperimentConfig, Verdict};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "brwlab", version, about = "Monte Carlo experiments for boundary-case branching random walks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicas: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated generation grid, e.g. 16,64,256
    #[arg(long, global = true)]
    n_grid: Option<String>,
    /// Extra overrides, e.g. --set alpha=1.7
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Martingale means of W_n and D_n
    E1,
    /// Many-to-one checks and the induced step law
    E2,
    /// Renewal function shapes
    E3,
    /// Walk survival asymptotics
    E4,
    /// Meander mean identity
    E5,
    /// Change of measure for the truncated derivative martingale
    E6,
    /// Spine posteriors and marginals
    E7,
    /// Spine ratio identity
    E8,
    /// Seneta-Heyde ratios
    E9,
    /// Exponent of the median additive martingale
    E10,
    /// Drift of the recentred minimum
    E11,
    /// Running maximum of the scaled additive martingale
    E12,
    /// Run every experiment
    All,
    /// Print every config key with its description
    Keys,
}

impl Cmd {
    fn id(self) -> &'static str {
        use Cmd::*;
        match self {
            E1 => "E1",
            E2 => "E2",
            E3 => "E3",
            E4 => "E4",
            E5 => "E5",
            E6 => "E6",
            E7 => "E7",
            E8 => "E8",
            E9 => "E9",
            E10 => "E10",
            E11 => "E11",
            E12 => "E12",
            All | Keys => "all",
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.cmd.id().to_string();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(g) = &cli.n_grid {
        cfg.set("n_grid", g)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Cmd::Keys = cli.cmd {
        for (k, d) in brwlab::harness::config::KEYS {
            println!("{k:<18} {d}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = build_config(&cli)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global()?;
    }
    let (rows, all_pass) = run_experiment(&cfg)?;
    for r in &rows {
        let mark = match r.pass {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Report => "    ",
        };
        let b = r.beta.map(|b| format!(" beta={b}")).unwrap_or_default();
        let n = r.n.map(|n| format!(" n={n}")).unwrap_or_default();
        println!("{mark} {:<4} {:<40}{b}{n}  est={:.6} target={:.6}", r.experiment, r.statistic, r.estimate, r.target);
    }
    println!("wrote {}/results.csv and {}/summary.json", cfg.out, cfg.out);
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
