use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use super::{simulate, HvKnowledge, RunError, RunParams, RunSummary, Scenario, SUMMARY_HEADER};
use crate::intersection::TurnPolicy;
use crate::signal::ControllerMode;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("sweep file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("sweep file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// A sweep file. Input paths are relative to the file itself.
///
/// ```toml
/// intersection = "intersection.xml"
/// signals = "signals.xml"
/// demand = "demand.csv"
/// cav_ratios = [0.0, 0.5, 1.0]
/// policies = ["C,C", "P,P"]
/// modes = ["fixed", "actuated"]
/// seeds = [1, 2, 3]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub intersection: PathBuf,
    pub signals: PathBuf,
    pub demand: PathBuf,
    pub cav_ratios: Vec<f64>,
    /// `"<cav>,<hv>"` with `C`, `P` or `R`.
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    /// `fixed`, `actuated`, `A` or `AA`.
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tick: Option<f64>,
    /// `observed` (default) or `unknown`.
    #[serde(default)]
    pub hv_knowledge: Option<String>,
}

fn default_policies() -> Vec<String> {
    vec!["C,C".into()]
}

fn default_modes() -> Vec<String> {
    vec!["fixed".into()]
}

fn parse_mode(s: &str) -> Option<ControllerMode> {
    let (actuated, adaptive) = match s.trim() {
        "fixed" => (false, false),
        "actuated" => (true, false),
        "A" | "adaptive" => (false, true),
        "AA" => (true, true),
        _ => return None,
    };
    Some(ControllerMode { actuated, adaptive })
}

fn parse_policies(s: &str) -> Option<(TurnPolicy, TurnPolicy)> {
    let (c, h) = s.split_once(',')?;
    Some((TurnPolicy::from_letter(c)?, TurnPolicy::from_letter(h)?))
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, SweepError> {
        Ok(toml::from_str(text)?)
    }

    /// Read a sweep file and resolve its paths against its directory.
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut spec.intersection, &mut spec.signals, &mut spec.demand] {
            *p = base.join(&*p);
        }
        Ok(spec)
    }

    /// Cartesian product of ratios, policy pairs and modes, in file order.
    pub fn variations(&self) -> Result<Vec<Variation>, SweepError> {
        let mut pols = Vec::new();
        for p in &self.policies {
            pols.push(
                parse_policies(p)
                    .ok_or_else(|| SweepError::Invalid(format!("bad policy pair {p:?}")))?,
            );
        }
        let mut modes = Vec::new();
        for m in &self.modes {
            modes
                .push(parse_mode(m).ok_or_else(|| SweepError::Invalid(format!("bad mode {m:?}")))?);
        }
        let mut out = Vec::new();
        for &cav_ratio in &self.cav_ratios {
            for &(cav_policy, hv_policy) in &pols {
                for &mode in &modes {
                    out.push(Variation {
                        cav_ratio,
                        cav_policy,
                        hv_policy,
                        mode,
                    });
                }
            }
        }
        Ok(out)
    }

    fn base_params(&self) -> Result<RunParams, SweepError> {
        let mut p = RunParams::default();
        if let Some(t) = self.tick {
            p.tick = t;
        }
        p.options.hv_knowledge = match self.hv_knowledge.as_deref() {
            None | Some("observed") => HvKnowledge::Observed,
            Some("unknown") => HvKnowledge::Unknown,
            Some(o) => return Err(SweepError::Invalid(format!("bad hv_knowledge {o:?}"))),
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub cav_ratio: f64,
    pub cav_policy: TurnPolicy,
    pub hv_policy: TurnPolicy,
    pub mode: ControllerMode,
}

#[derive(Debug)]
pub struct SweepRun {
    pub variation: Variation,
    pub seed: u64,
    pub result: Result<RunSummary, RunError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub variation: Variation,
    pub runs: usize,
    pub failed: usize,
    pub mean_delay: f64,
    /// Sample standard deviation; 0 with fewer than two runs.
    pub stddev: f64,
    pub spillback: bool,
}

#[derive(Debug)]
pub struct SweepTable {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<CellStats>,
}

/// Run every (variation, seed) pair, concurrently. A failing run is kept in
/// the table and does not stop the others.
pub fn sweep(spec: &SweepSpec) -> Result<SweepTable, SweepError> {
    let scenario = Scenario::load(&spec.intersection, &spec.signals, &spec.demand)?;
    let report = scenario.validate();
    if !report.is_ok() {
        return Err(RunError::ConfigInvalid { report }.into());
    }
    let variations = spec.variations()?;
    let base = spec.base_params()?;
    let jobs: Vec<(Variation, u64)> = variations
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs: Vec<SweepRun> = jobs
        .into_par_iter()
        .map(|(variation, seed)| {
            let params = RunParams {
                cav_ratio: variation.cav_ratio,
                cav_policy: variation.cav_policy,
                hv_policy: variation.hv_policy,
                mode: variation.mode,
                seed,
                ..base
            };
            SweepRun {
                variation,
                seed,
                result: simulate(&scenario, &params).map(|o| o.summary),
            }
        })
        .collect();
    let cells = variations
        .iter()
        .map(|&v| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.variation == v).collect();
            let ok: Vec<&RunSummary> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let n = ok.len() as f64;
            let mean = if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|s| s.mean_delay).sum::<f64>() / n
            };
            let stddev = if ok.len() < 2 {
                0.0
            } else {
                (ok.iter()
                    .map(|s| (s.mean_delay - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0))
                    .sqrt()
            };
            CellStats {
                variation: v,
                runs: ok.len(),
                failed: mine.len() - ok.len(),
                mean_delay: mean,
                stddev,
                spillback: ok.iter().any(|s| s.spillback),
            }
        })
        .collect();
    Ok(SweepTable { runs, cells })
}

impl SweepTable {
    /// Every run: the summary columns, or the error message.
    pub fn write_runs<W: io::Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = SUMMARY_HEADER.to_vec();
        header.push("error");
        out.write_record(&header)?;
        for r in &self.runs {
            match &r.result {
                Ok(s) => {
                    let mut buf = Vec::new();
                    super::emit_summary(s, &mut buf)?;
                    let mut rd = csv::ReaderBuilder::new().from_reader(buf.as_slice());
                    let mut rec = rd.records().next().expect("summary row")?;
                    rec.push_field("");
                    out.write_record(&rec)?;
                }
                Err(e) => {
                    let mut row = vec![String::new(); SUMMARY_HEADER.len()];
                    row[0] = r.seed.to_string();
                    row[1] = r.variation.cav_ratio.to_string();
                    row[2] = r.variation.cav_policy.letter().to_string();
                    row[3] = r.variation.hv_policy.letter().to_string();
                    row[4] = r.variation.mode.label().to_string();
                    row.push(e.to_string());
                    out.write_record(&row)?;
                }
            }
        }
        out.flush()
    }

    pub fn write_cells<W: io::Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cav_ratio",
            "cav_policy",
            "hv_policy",
            "mode",
            "runs",
            "failed",
            "delay",
            "delay_mean",
            "delay_stddev",
            "spillback",
        ])?;
        for c in &self.cells {
            let v = &c.variation;
            out.write_record([
                v.cav_ratio.to_string(),
                v.cav_policy.letter().to_string(),
                v.hv_policy.letter().to_string(),
                v.mode.label().to_string(),
                c.runs.to_string(),
                c.failed.to_string(),
                format!("{:.1}", c.mean_delay),
                c.mean_delay.to_string(),
                c.stddev.to_string(),
                if c.spillback { "*" } else { "" }.to_string(),
            ])?;
        }
        out.flush()
    }
}
