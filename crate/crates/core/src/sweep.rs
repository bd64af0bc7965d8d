//! Grid sweeps over potentials, λ, p, learning rate and seed.
//!
//! A grid file lists potential variants and cartesian axes:
//!
//! ```toml
//! [[variant]]
//! name = "hyperbolic"
//! potential = { kind = "hyperbolic", lambda = 0.1 }
//!
//! [[variant]]
//! name = "euclidean"
//! potential = { kind = "euclidean" }
//!
//! [axes]
//! seed = [0, 1, 2]
//! lambda = [1.0, 0.1]   # applied to variants whose potential takes λ
//! ```
//!
//! Each run writes `config.toml`, `metrics.csv` and `params.csv` into a
//! directory named by a hash of its config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataSection, PotentialSection, RunConfig};
use crate::data::{csv_err, fmt_f64};
use crate::error::{Error, Result};
use crate::flow::{self, Trajectory};
use crate::io;
use crate::potentials::PotentialKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub variant: Vec<Variant>,
    #[serde(default)]
    pub axes: Axes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub potential: PotentialSection,
    /// Overrides `train.lr` for this variant.
    #[serde(default)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    pub lr: Vec<f64>,
    /// Sets both `train.seed` and the generator seed of `[data]`.
    pub seed: Vec<u64>,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("sweep grid: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// One planned run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub variant: String,
    pub config: RunConfig,
}

impl PlannedRun {
    /// First 16 hex digits of SHA-256 over the serialized config.
    pub fn key(&self) -> String {
        config_hash(&self.config)
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let digest = Sha256::digest(config.to_toml().as_bytes());
    hex::encode(&digest[..8])
}

/// Expands the grid against a base config. An empty variant list sweeps the
/// base potential under the name of its kind.
pub fn plan(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<PlannedRun>> {
    let variants = if grid.variant.is_empty() {
        vec![Variant {
            name: base.potential.kind.name().to_string(),
            potential: base.potential.clone(),
            lr: None,
        }]
    } else {
        grid.variant.clone()
    };
    let axis = |v: &[f64]| if v.is_empty() { vec![None] } else { v.iter().copied().map(Some).collect() };
    let seeds: Vec<Option<u64>> = if grid.axes.seed.is_empty() {
        vec![None]
    } else {
        grid.axes.seed.iter().copied().map(Some).collect()
    };

    let mut runs = Vec::new();
    for v in &variants {
        let takes_lambda = v.potential.kind != PotentialKind::Euclidean;
        let takes_p = v.potential.kind == PotentialKind::Smoothed;
        let lambdas = if takes_lambda { axis(&grid.axes.lambda) } else { vec![None] };
        let ps = if takes_p { axis(&grid.axes.p) } else { vec![None] };
        for &lambda in &lambdas {
            for &p in &ps {
                for &lr in &axis(&grid.axes.lr) {
                    for &seed in &seeds {
                        let mut cfg = base.clone();
                        cfg.potential = v.potential.clone();
                        if let Some(l) = lambda {
                            cfg.potential.lambda = Some(l);
                        }
                        if let Some(p) = p {
                            cfg.potential.p = Some(p);
                        }
                        if let Some(lr) = lr.or(v.lr) {
                            cfg.train.lr = lr;
                        }
                        if let Some(s) = seed {
                            cfg.train.seed = s;
                            if let DataSection::Generated(spec) = &mut cfg.data {
                                spec.seed = s;
                            }
                        }
                        cfg.output.csv_path = None;
                        // Re-run validation on the expanded config.
                        let cfg = crate::config::parse_config_str(&cfg.to_toml())
                            .map_err(|e| Error::Config(format!("variant '{}': {e}", v.name)))?;
                        runs.push(PlannedRun {
                            variant: v.name.clone(),
                            config: cfg,
                        });
                    }
                }
            }
        }
    }
    Ok(runs)
}

/// Result of one run; failures are kept so the sweep can continue.
#[derive(Debug)]
pub struct RunOutcome {
    pub run: PlannedRun,
    pub dir: Option<PathBuf>,
    pub result: std::result::Result<Trajectory, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub variant: String,
    pub kind: String,
    pub lambda: f64,
    pub p: f64,
    pub lr: f64,
    pub seed: u64,
    pub status: String,
    pub step: usize,
    pub time: f64,
    pub log_loss: f64,
    pub q_margin: f64,
    pub margin_l1: f64,
    pub margin_l2: f64,
    pub margin_lp: f64,
    pub active_neurons: f64,
    pub best_per_margin: String,
}

/// Runs every planned config, at most `jobs` at a time.
pub fn run_all(runs: Vec<PlannedRun>, out_dir: Option<&Path>, jobs: usize) -> Result<Vec<RunOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    pool.install(|| runs.into_par_iter().map(|run| execute(run, out_dir)).collect())
}

fn execute(run: PlannedRun, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let key = run.key();
    let result = run.config.run_spec().and_then(|spec| flow::run(&spec));
    let dir = match out_dir {
        Some(root) => {
            let dir = root.join(&key);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let cfg_path = dir.join("config.toml");
            std::fs::write(&cfg_path, run.config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            if let Ok(traj) = &result {
                write_run_artifacts(&dir, traj)?;
            }
            Some(dir)
        }
        None => None,
    };
    match &result {
        Ok(t) => info!("run {key} ({}) finished at step {}", run.variant, t.final_state.step),
        Err(e) => warn!("run {key} ({}) failed: {e}", run.variant),
    }
    Ok(RunOutcome {
        run,
        dir,
        result: result.map_err(|e| e.to_string()),
    })
}

/// `metrics.csv` and `params.csv` for a finished run.
pub fn write_run_artifacts(dir: &Path, traj: &Trajectory) -> Result<()> {
    io::write_metrics_csv(&dir.join("metrics.csv"), &traj.records)?;
    io::write_params_csv(&dir.join("params.csv"), &traj.final_state.theta)
}

/// One summary row per run, plus the `best_per_margin` marks.
pub fn summarize(outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = outcomes
        .iter()
        .map(|o| {
            let c = &o.run.config;
            let nan = f64::NAN;
            let (status, last) = match &o.result {
                Ok(t) => (
                    t.halt.clone().map_or("ok".to_string(), |h| format!("halted: {h}")),
                    Some(t.last()),
                ),
                Err(e) => (format!("error: {e}"), None),
            };
            SummaryRow {
                run: o.run.key(),
                variant: o.run.variant.clone(),
                kind: c.potential.kind.name().to_string(),
                lambda: c.potential.lambda.unwrap_or(nan),
                p: c.potential.p.unwrap_or(nan),
                lr: c.train.lr,
                seed: c.train.seed,
                status,
                step: last.map_or(0, |r| r.step),
                time: last.map_or(nan, |r| r.time),
                log_loss: last.map_or(nan, |r| r.log_loss),
                q_margin: last.map_or(nan, |r| r.q_margin),
                margin_l1: last.map_or(nan, |r| r.margin_l1),
                margin_l2: last.map_or(nan, |r| r.margin_l2),
                margin_lp: last.map_or(nan, |r| r.margin_lp),
                active_neurons: last.map_or(nan, |r| r.active_neurons),
                best_per_margin: String::new(),
            }
        })
        .collect();
    mark_best(&mut rows);
    rows
}

/// Group label: variant plus the swept potential and lr values.
fn group_of(r: &SummaryRow) -> String {
    format!("{}|{}|{}|{}", r.variant, r.lambda, r.p, r.lr)
}

fn mark_best(rows: &mut [SummaryRow]) {
    let columns: [(&str, fn(&SummaryRow) -> f64); 3] = [
        ("l1", |r| r.margin_l1),
        ("l2", |r| r.margin_l2),
        ("lp", |r| r.margin_lp),
    ];
    for (name, get) in columns {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in rows.iter() {
            let v = get(r);
            if v.is_finite() {
                let e = sums.entry(group_of(r)).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        let best = sums
            .iter()
            .map(|(g, (s, n))| (g.clone(), s / *n as f64))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(g, _)| g);
        if let Some(best) = best {
            for r in rows.iter_mut().filter(|r| group_of(r) == best) {
                if !r.best_per_margin.is_empty() {
                    r.best_per_margin.push(';');
                }
                r.best_per_margin.push_str(name);
            }
        }
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let rec = [
            r.run.clone(),
            r.variant.clone(),
            r.kind.clone(),
            fmt_f64(r.lambda),
            fmt_f64(r.p),
            fmt_f64(r.lr),
            r.seed.to_string(),
            r.status.clone(),
            r.step.to_string(),
            fmt_f64(r.time),
            fmt_f64(r.log_loss),
            fmt_f64(r.q_margin),
            fmt_f64(r.margin_l1),
            fmt_f64(r.margin_l2),
            fmt_f64(r.margin_lp),
            fmt_f64(r.active_neurons),
            r.best_per_margin.clone(),
        ];
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SUMMARY_COLUMNS: [&str; 17] = [
    "run",
    "variant",
    "kind",
    "lambda",
    "p",
    "lr",
    "seed",
    "status",
    "step",
    "time",
    "log_loss",
    "q_margin",
    "margin_l1",
    "margin_l2",
    "margin_lp",
    "active_neurons",
    "best_per_margin",
];

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(row, rec)| rec.map_err(|e| Error::parse(format!("{ctx} row {row}"), e.to_string())))
        .collect()
}

/// Mean final margins per group as an aligned text table. Best groups per
/// margin are starred.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut groups: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(group_of(r)).or_default().push(r);
    }
    let mean = |rs: &[&SummaryRow], f: fn(&SummaryRow) -> f64| {
        let v: Vec<f64> = rs.iter().map(|r| f(r)).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut lines = vec![vec![
        "variant".to_string(),
        "lambda".into(),
        "p".into(),
        "lr".into(),
        "runs".into(),
        "margin_l1".into(),
        "margin_l2".into(),
        "margin_lp".into(),
        "active".into(),
    ]];
    for rs in groups.values() {
        let r0 = rs[0];
        let star = |tag: &str, v: f64| {
            let best = r0.best_per_margin.split(';').any(|t| t == tag);
            format!("{v:.6e}{}", if best { "*" } else { "" })
        };
        lines.push(vec![
            r0.variant.clone(),
            format!("{}", r0.lambda),
            format!("{}", r0.p),
            format!("{}", r0.lr),
            rs.len().to_string(),
            star("l1", mean(rs, |r| r.margin_l1)),
            star("l2", mean(rs, |r| r.margin_l2)),
            star("lp", mean(rs, |r| r.margin_lp)),
            format!("{:.1}", mean(rs, |r| r.active_neurons)),
        ]);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    const BASE: &str = r#"
[potential]
kind = "euclidean"
[net]
widths = [3, 4, 1]
input_bias = true
[data]
generator = "circle"
k = 12
[train]
lr = 0.05
max_steps = 20
log_every = 10
"#;

    #[test]
    fn plan_expands_cartesian_product() {
        let base = parse_config_str(BASE).unwrap();
        let grid = SweepGrid::from_toml(
            r#"
[[variant]]
name = "hyp"
potential = { kind = "hyperbolic", lambda = 1.0 }
[[variant]]
name = "euc"
potential = { kind = "euclidean" }
[axes]
lambda = [1.0, 0.1]
seed = [0, 1, 2]
"#,
        )
        .unwrap();
        let runs = plan(&base, &grid).unwrap();
        assert_eq!(runs.len(), 2 * 3 + 3);
        let keys: std::collections::BTreeSet<String> = runs.iter().map(|r| r.key()).collect();
        assert_eq!(keys.len(), runs.len());
        let DataSection::Generated(spec) = &runs[1].config.data else { panic!() };
        assert_eq!(spec.seed, runs[1].config.train.seed);
    }

    #[test]
    fn single_run_sweep_matches_run() {
        let base = parse_config_str(BASE).unwrap();
        let runs = plan(&base, &SweepGrid::default()).unwrap();
        assert_eq!(runs.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let outcomes = run_all(runs, Some(dir.path()), 2).unwrap();
        let rows = summarize(&outcomes);
        assert_eq!(rows.len(), 1);
        let direct = flow::run(&base.run_spec().unwrap()).unwrap();
        assert_eq!(rows[0].margin_l2.to_bits(), direct.last().margin_l2.to_bits());
        assert_eq!(rows[0].best_per_margin, "l1;l2;lp");
        let run_dir = outcomes[0].dir.as_ref().unwrap();
        assert!(run_dir.join("metrics.csv").exists());
        assert!(run_dir.join("params.csv").exists());

        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &rows).unwrap();
        let back = read_summary_csv(&path).unwrap();
        assert_eq!(back[0].run, rows[0].run);
        assert!(render_table(&back).contains("euclidean"));
    }

    #[test]
    fn failed_runs_are_recorded() {
        let base = parse_config_str(&BASE.replace("lr = 0.05", "lr = 1e6")).unwrap();
        let outcomes = run_all(plan(&base, &SweepGrid::default()).unwrap(), None, 1).unwrap();
        let rows = summarize(&outcomes);
        assert_eq!(rows.len(), 1);
        assert_ne!(rows[0].status, "ok");
    }
}
