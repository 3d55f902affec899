//! Grid sweeps over (method, s_g, s_d, seed): isolated parallel runs,
//! crash-resumable results.csv keyed by cell, and per-cell aggregation
//! across seeds. Row order in the final file is canonical, so reruns and
//! different --jobs settings produce identical bytes.

use crate::error::{Error, Result};
use crate::train::{
    run_pf_to_dir, train_to_dir, ExploreTarget, PruneMode, PruneTarget, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stu,
    Static,
    Dense,
    PfGlobal,
    PfUniform,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stu => "stu",
            Method::Static => "static",
            Method::Dense => "dense",
            Method::PfGlobal => "pf_global",
            Method::PfUniform => "pf_uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub s_g: Vec<f64>,
    pub s_d: Vec<f64>,
    pub methods: Vec<Method>,
    /// Overrides base.explore_target for stu cells (explore-G/D/both study).
    pub explore_target: Option<ExploreTarget>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            base: TrainConfig::default(),
            s_g: vec![0.5, 0.9, 0.95],
            s_d: vec![0.0, 0.5],
            methods: vec![Method::Stu, Method::Static],
            explore_target: None,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// One grid point; s values are the grid's, even where the executed config
/// pins its own (dense runs at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub s_g: f64,
    pub s_d: f64,
    pub seed: u64,
}

impl Cell {
    fn key(&self) -> (Method, u64, u64, u64) {
        (self.method, self.s_g.to_bits(), self.s_d.to_bits(), self.seed)
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.s_g.is_empty() || self.s_d.is_empty() || self.methods.is_empty() || self.seeds.is_empty()
        {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        for cell in self.cells() {
            self.cell_config(&cell).validate()?;
        }
        Ok(())
    }

    /// Full grid, canonically ordered.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &s_g in &self.s_g {
                for &s_d in &self.s_d {
                    for &seed in &self.seeds {
                        out.push(Cell { method, s_g, s_d, seed });
                    }
                }
            }
        }
        out.sort_by_key(|c| c.key());
        out
    }

    pub fn cell_config(&self, cell: &Cell) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.seed = cell.seed;
        match cell.method {
            Method::Stu => {
                cfg.s_g = cell.s_g;
                cfg.s_d = cell.s_d;
                if let Some(t) = self.explore_target {
                    cfg.explore_target = t;
                }
            }
            Method::Static | Method::PfGlobal | Method::PfUniform => {
                cfg.s_g = cell.s_g;
                cfg.s_d = cell.s_d;
                cfg.explore_target = ExploreTarget::None;
            }
            Method::Dense => {
                cfg.s_g = 0.0;
                cfg.s_d = 0.0;
                cfg.explore_target = ExploreTarget::None;
            }
        }
        cfg
    }
}

/// One results.csv row. Metric columns are empty when the run diverged
/// before its first evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub s_g: f64,
    pub s_d: f64,
    pub seed: u64,
    pub config_hash: String,
    pub run_dir: String,
    pub diverged: bool,
    pub steps_done: u64,
    pub coverage: Option<f64>,
    pub hq_ratio: Option<f64>,
    pub w1: Option<f64>,
    pub itop_rate_g: f64,
    pub training_flops_ratio: f64,
    pub testing_flops_ratio: f64,
}

pub const RESULTS_HEADER: [&str; 14] = [
    "method",
    "s_g",
    "s_d",
    "seed",
    "config_hash",
    "run_dir",
    "diverged",
    "steps_done",
    "coverage",
    "hq_ratio",
    "w1",
    "itop_rate_g",
    "training_flops_ratio",
    "testing_flops_ratio",
];

fn row_key(r: &SweepRow) -> (Method, u64, u64, u64) {
    (r.method, r.s_g.to_bits(), r.s_d.to_bits(), r.seed)
}

pub fn read_results(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub executed: usize,
    pub skipped: usize,
    pub results_path: PathBuf,
}

/// Distinguishes how a config is executed; pf variants share a TrainConfig
/// but not a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ExecKind {
    Plain,
    PfGlobal,
    PfUniform,
}

fn exec_kind(method: Method) -> ExecKind {
    match method {
        Method::PfGlobal => ExecKind::PfGlobal,
        Method::PfUniform => ExecKind::PfUniform,
        _ => ExecKind::Plain,
    }
}

struct ExecUnit {
    kind: ExecKind,
    cfg: TrainConfig,
    dir_name: String,
    cells: Vec<Cell>,
}

fn execute_unit(unit: &ExecUnit, runs_dir: &Path) -> Result<Vec<SweepRow>> {
    let dir = runs_dir.join(&unit.dir_name);
    let result = match unit.kind {
        ExecKind::Plain => train_to_dir(&unit.cfg, Some(&dir))?,
        ExecKind::PfGlobal => {
            run_pf_to_dir(&unit.cfg, PruneMode::Global, PruneTarget::GAndD, Some(&dir))?
        }
        ExecKind::PfUniform => {
            run_pf_to_dir(&unit.cfg, PruneMode::Uniform, PruneTarget::GAndD, Some(&dir))?
        }
    };
    let last = result.final_row();
    Ok(unit
        .cells
        .iter()
        .map(|cell| SweepRow {
            method: cell.method,
            s_g: cell.s_g,
            s_d: cell.s_d,
            seed: cell.seed,
            config_hash: format!("{:016x}", unit.cfg.hash()),
            run_dir: format!("runs/{}", unit.dir_name),
            diverged: result.diverged,
            steps_done: result.steps_done,
            coverage: last.map(|r| r.coverage),
            hq_ratio: last.map(|r| r.hq_ratio),
            w1: last.map(|r| r.w1),
            itop_rate_g: result.itop_rate_g,
            training_flops_ratio: result.training_flops_ratio,
            testing_flops_ratio: result.testing_flops_ratio,
        })
        .collect())
}

/// Runs every grid cell not already present in out_dir/results.csv.
/// Identical executed configs (dense cells across the grid) run once and
/// fan out to their rows. Diverged runs are recorded and do not stop the
/// sweep; infrastructure errors do.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, jobs: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    std::fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(spec)?)?;

    let results_path = out_dir.join("results.csv");
    let existing = if results_path.exists() {
        read_results(&results_path)?
    } else {
        Vec::new()
    };
    let done: std::collections::BTreeSet<_> = existing.iter().map(row_key).collect();

    let cells = spec.cells();
    let skipped = cells.iter().filter(|c| done.contains(&c.key())).count();
    let mut units: BTreeMap<(ExecKind, u64), ExecUnit> = BTreeMap::new();
    for cell in cells {
        if done.contains(&cell.key()) {
            continue;
        }
        let cfg = spec.cell_config(&cell);
        let kind = exec_kind(cell.method);
        units
            .entry((kind, cfg.hash()))
            .or_insert_with(|| ExecUnit {
                kind,
                dir_name: format!("{}-{:016x}", cell.method.as_str(), cfg.hash()),
                cfg,
                cells: Vec::new(),
            })
            .cells
            .push(cell);
    }
    let units: Vec<ExecUnit> = units.into_values().collect();
    let executed = units.len();

    // append as units finish so an interrupted sweep resumes where it died
    let append = Mutex::new(open_append(&results_path, existing.is_empty())?);
    let run_one = |unit: &ExecUnit| -> Result<Vec<SweepRow>> {
        let rows = execute_unit(unit, &runs_dir)?;
        let mut w = append.lock().expect("results writer");
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(rows)
    };
    let fresh: Vec<Vec<SweepRow>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
        pool.install(|| {
            use rayon::prelude::*;
            units.par_iter().map(run_one).collect::<Result<_>>()
        })?
    } else {
        units.iter().map(run_one).collect::<Result<_>>()?
    };
    drop(append);

    let mut rows = existing;
    rows.extend(fresh.into_iter().flatten());
    rows.sort_by_key(row_key);
    write_results(&results_path, &rows)?;

    let agg = aggregate(&rows);
    write_aggregate(&out_dir.join("aggregate.csv"), &agg)?;
    Ok(SweepOutcome {
        rows,
        executed,
        skipped,
        results_path,
    })
}

fn open_append(path: &Path, write_header: bool) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if write_header {
        w.write_record(RESULTS_HEADER)?;
        w.flush()?;
    }
    Ok(w)
}

// ── Aggregation ──────────────────────────────────────────────────────

/// Mean and std over seeds for one grid cell; metric stats cover only
/// finished runs that reached an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub s_g: f64,
    pub s_d: f64,
    pub n: usize,
    pub n_diverged: usize,
    pub coverage_mean: Option<f64>,
    pub coverage_std: Option<f64>,
    pub hq_mean: Option<f64>,
    pub hq_std: Option<f64>,
    pub w1_mean: Option<f64>,
    pub w1_std: Option<f64>,
    pub itop_rate_g_mean: Option<f64>,
    pub training_flops_ratio: Option<f64>,
    pub testing_flops_ratio: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, u64, u64), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.method, row.s_g.to_bits(), row.s_d.to_bits()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((method, s_g, s_d), members)| {
            let ok: Vec<&&SweepRow> = members
                .iter()
                .filter(|r| !r.diverged && r.coverage.is_some())
                .collect();
            let col = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<f64> {
                ok.iter().map(|r| f(r)).collect()
            };
            let stat = |f: &dyn Fn(&SweepRow) -> f64| -> (Option<f64>, Option<f64>) {
                if ok.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&col(f));
                    (Some(m), Some(s))
                }
            };
            let (coverage_mean, coverage_std) = stat(&|r| r.coverage.unwrap());
            let (hq_mean, hq_std) = stat(&|r| r.hq_ratio.unwrap());
            let (w1_mean, w1_std) = stat(&|r| r.w1.unwrap());
            let (itop_rate_g_mean, _) = stat(&|r| r.itop_rate_g);
            let (training_flops_ratio, _) = stat(&|r| r.training_flops_ratio);
            let (testing_flops_ratio, _) = stat(&|r| r.testing_flops_ratio);
            AggregateRow {
                method,
                s_g: f64::from_bits(s_g),
                s_d: f64::from_bits(s_d),
                n: members.len(),
                n_diverged: members.iter().filter(|r| r.diverged).count(),
                coverage_mean,
                coverage_std,
                hq_mean,
                hq_std,
                w1_mean,
                w1_std,
                itop_rate_g_mean,
                training_flops_ratio,
                testing_flops_ratio,
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
