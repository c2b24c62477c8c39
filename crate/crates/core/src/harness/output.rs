//! Result rows, CSV and JSON persistence.

use crate::error::{LabError, Result};
use serde::Serialize;
use std::path::Path;

pub const CSV_HEADER: &str = "experiment,model,alpha,beta,n,replicas,seed,statistic,estimate,se_or_band,target,provenance,pass";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Paper,
    Derived,
    Trivial,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Paper => "PAPER",
            Provenance::Derived => "DERIVED",
            Provenance::Trivial => "TRIVIAL",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    /// diagnostic rows that never affect the exit status
    Report,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Verdict::Pass => "true",
            Verdict::Fail => "false",
            Verdict::Report => "report",
        }
    }
}

/// Uncertainty attached to an estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Spread {
    Se(f64),
    Band(f64, f64),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub model: String,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub n: Option<usize>,
    pub replicas: u64,
    pub seed: u64,
    pub statistic: String,
    pub estimate: f64,
    pub spread: Spread,
    pub target: f64,
    pub provenance: Provenance,
    pub pass: Verdict,
}

/// 17 significant digits, enough for an exact f64 round trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

impl ResultRow {
    pub fn csv_fields(&self) -> [String; 13] {
        let spread = match self.spread {
            Spread::Se(s) => fmt_f64(s),
            Spread::Band(a, b) => format!("[{};{}]", fmt_f64(a), fmt_f64(b)),
            Spread::None => String::new(),
        };
        [
            self.experiment.clone(),
            self.model.clone(),
            fmt_f64(self.alpha),
            self.beta.map(fmt_f64).unwrap_or_default(),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            self.replicas.to_string(),
            self.seed.to_string(),
            self.statistic.clone(),
            fmt_f64(self.estimate),
            spread,
            fmt_f64(self.target),
            self.provenance.tag().into(),
            self.pass.tag().into(),
        ]
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record(r.csv_fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub version: String,
    pub wall_seconds: f64,
    pub workers: usize,
    pub seed: u64,
    pub experiments: Vec<String>,
    pub all_pass: bool,
    pub tolerances: super::config::Tolerances,
}

#[derive(Serialize)]
struct Summary<'a> {
    meta: &'a RunMeta,
    rows: &'a [ResultRow],
}

pub fn write_outputs(dir: &Path, rows: &[ResultRow], meta: &RunMeta) -> Result<()> {
    let io = |e: std::io::Error| LabError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("results.csv"), to_csv(rows)).map_err(io)?;
    let json = serde_json::to_string_pretty(&Summary { meta, rows }).map_err(|e| LabError::Io(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_has_thirteen_columns() {
        let r = ResultRow {
            experiment: "E1".into(),
            model: "cluster(p=0.1,a_max=6)".into(),
            alpha: 1.5,
            beta: None,
            n: Some(5),
            replicas: 10,
            seed: 1,
            statistic: "mean_W".into(),
            estimate: 1.0,
            spread: Spread::Band(0.5, 1.5),
            target: 1.0,
            provenance: Provenance::Derived,
            pass: Verdict::Pass,
        };
        let csv = to_csv(&[r]);
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(rd.headers().unwrap().len(), 13);
        let rec = rd.records().next().unwrap().unwrap();
        assert_eq!(rec.len(), 13);
        assert_eq!(&rec[1], "cluster(p=0.1,a_max=6)");
        assert_eq!(&rec[11], "DERIVED");
        assert_eq!(&rec[12], "true");
    }
}
