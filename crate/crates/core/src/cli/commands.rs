//! The `verify`, `estimate` and `sweep` commands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Resolution, RunConfig};
use crate::error::{LabError, Result};
use crate::field::{corpus, Grid, ScalarField};
use crate::geometry::GeometryConfig;
use crate::ineq::{
    friedrichs_quotient, hardy_quotient_with, lemma_checks, bound_constants, pointwise_ratio, pointwise_schedule,
    resolution_tolerance, HardyOptions, BoundConstants, WeightSpec, C_PW_CORRECTED, C_PW_PROOF, C_PW_STATEMENT,
};
use crate::sharp::{estimate_sharp_with, oracle_sharp_seeded, QuotientKind, SharpOptions, ORACLE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Reported without an assertion.
    Info,
    /// The quotient is vacuous on this configuration.
    Degenerate,
    NoConvergence,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Status::Fail | Status::NoConvergence)
    }
}

/// One `(field, check)` row of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub config_hash: String,
    pub resolution: Resolution,
    pub seed: u64,
    pub check: &'static str,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub variant: &'static str,
    pub numerator: Option<f64>,
    pub denominator: Option<f64>,
    pub ratio: f64,
    pub bound: Option<f64>,
    pub slack: Option<f64>,
    pub status: Status,
}

/// One sharp-constant estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub config_hash: String,
    pub variant: &'static str,
    pub p: f64,
    pub alpha: f64,
    pub delta: f64,
    pub n: u32,
    pub grid: Resolution,
    pub value: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub method: &'static str,
    pub oracle: Option<f64>,
    pub status: Status,
}

/// Rows written and how many of them failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub rows: usize,
    pub failures: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn distinct_p(weights: &[WeightSpec]) -> Vec<f64> {
    let mut ps: Vec<f64> = Vec::new();
    for w in weights {
        if !ps.contains(&w.p) {
            ps.push(w.p);
        }
    }
    ps
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    command: &'static str,
    config_hash: String,
    config: &'a RunConfig,
    constants: Vec<BoundConstants>,
    rows: usize,
    failures: Vec<&'a CheckRow>,
    max_ratio: Vec<(String, f64)>,
}

/// Runs every check on every corpus field at every resolution.
pub fn run_verify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    cfg.check_admissible()?;
    let hash = cfg.hash();
    let geom = cfg.geometry;
    let mut rows = Vec::new();
    for &res in &cfg.resolutions {
        let grid = Grid::for_domain(&geom, res.nx, res.ny)?;
        let fields = corpus(cfg.corpus.seed, cfg.corpus.count, &grid, &geom, cfg.corpus.modes)?;
        let per_field: Vec<Vec<CheckRow>> = fields
            .par_iter()
            .map(|(seed, u)| verify_field(cfg, &hash, res, *seed, u))
            .collect::<Result<_>>()?;
        rows.extend(per_field.into_iter().flatten());
    }
    fs::create_dir_all(out)?;
    write_csv(&out.join("verify.csv"), &rows)?;
    let constants = cfg
        .weights
        .iter()
        .map(|w| bound_constants(&geom, w, cfg.c_hl))
        .collect::<Result<_>>()?;
    let mut max_ratio: Vec<(String, f64)> = Vec::new();
    for r in &rows {
        let key = format!("{}:{}:{}", r.check, r.p.map_or(String::new(), |p| p.to_string()), r.variant);
        match max_ratio.iter_mut().find(|(k, _)| *k == key) {
            Some((_, m)) => *m = m.max(r.ratio),
            None => max_ratio.push((key, r.ratio)),
        }
    }
    let failures: Vec<&CheckRow> = rows.iter().filter(|r| r.status.is_failure()).collect();
    let n_fail = failures.len();
    let summary = VerifySummary {
        command: "verify",
        config_hash: hash,
        config: cfg,
        constants,
        rows: rows.len(),
        failures,
        max_ratio,
    };
    write_json(&out.join("verify.json"), &summary)?;
    Ok(Outcome { rows: rows.len(), failures: n_fail })
}

/// Deterministic mean-value sample balls for one field.
fn lemma_samples(geom: &GeometryConfig, grid: &Grid, seed: u64, count: usize) -> Vec<((f64, f64), f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e33a);
    let h = grid.hx().max(grid.hy());
    let r_hi = 0.25 * geom.a().min(geom.b());
    (0..count)
        .map(|_| {
            let x1 = rng.random_range(0.05..0.95) * geom.a();
            let x2 = rng.random_range(0.05..0.95) * geom.b();
            let r = rng.random_range((2.0 * h).min(r_hi)..=r_hi);
            ((x1, x2), r)
        })
        .collect()
}

fn verify_field(cfg: &RunConfig, hash: &str, res: Resolution, seed: u64, u: &ScalarField) -> Result<Vec<CheckRow>> {
    let geom = cfg.geometry;
    let tol = resolution_tolerance(res.nx, res.ny);
    let row = |check: &'static str, ratio: f64, bound: Option<f64>, status: Status| CheckRow {
        config_hash: hash.to_string(),
        resolution: res,
        seed,
        check,
        p: None,
        alpha: None,
        variant: "",
        numerator: None,
        denominator: None,
        ratio,
        bound,
        slack: bound.map(|b| b - ratio),
        status,
    };
    let mut rows = Vec::new();
    for p in distinct_p(&cfg.weights) {
        let rep = friedrichs_quotient(u, &geom, p)?;
        let k = rep.bound.expect("friedrichs bound");
        rows.push(CheckRow {
            p: Some(p),
            numerator: Some(rep.numerator),
            denominator: Some(rep.denominator),
            ..row("friedrichs", rep.ratio, Some(k), Status::from_bool(rep.ratio <= k * (1.0 + tol)))
        });
    }
    let opts = HardyOptions { c_hl: Some(cfg.c_hl), ..Default::default() };
    for w in &cfg.weights {
        for &variant in &cfg.verify.variants {
            let rep = hardy_quotient_with(u, &geom, w, variant, opts)?;
            rows.push(CheckRow {
                p: Some(w.p),
                alpha: Some(w.alpha),
                variant: variant.as_str(),
                numerator: Some(rep.numerator),
                denominator: Some(rep.denominator),
                ..row("hardy", rep.ratio, None, Status::Info)
            });
        }
    }
    if cfg.verify.pointwise {
        let schedule = pointwise_schedule(u.grid(), &geom)?;
        let pw = pointwise_ratio(u, &geom, &schedule)?;
        let m = pw.max_ratio;
        rows.push(row("pointwise", m, Some(C_PW_CORRECTED), Status::from_bool(m <= C_PW_CORRECTED * (1.0 + tol))));
        rows.push(row("pointwise_statement", m, Some(C_PW_STATEMENT), Status::Info));
        rows.push(row("pointwise_proof", m, Some(C_PW_PROOF), Status::Info));
    }
    if cfg.verify.lemma_samples > 0 {
        let samples = lemma_samples(&geom, u.grid(), seed, cfg.verify.lemma_samples);
        let reps = lemma_checks(u, &samples)?;
        let mean = reps
            .iter()
            .map(|r| if r.riesz_bound > 0.0 { r.mean_gap / r.riesz_bound } else if r.mean_gap > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max);
        rows.push(row("mean_value", mean, Some(1.0), Status::from_bool(mean <= 1.0 + tol)));
        let boundary: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.boundary_riesz.filter(|_| r.center_riesz > 0.0).map(|b| b / r.center_riesz))
            .collect();
        if !boundary.is_empty() {
            rows.push(row("boundary_riesz", boundary.iter().copied().fold(0.0, f64::max), Some(1.0), Status::Info));
        }
    }
    Ok(rows)
}

/// Oracle agreement required on tiny grids.
pub fn oracle_tolerance(p: f64) -> f64 {
    if p == 2.0 {
        1e-6
    } else {
        1e-3
    }
}

struct Task {
    kind: QuotientKind,
    geom: GeometryConfig,
    w: WeightSpec,
    res: Resolution,
}

fn estimate_task(cfg: &RunConfig, hash: &str, t: &Task, with_oracle: bool) -> Result<EstimateRow> {
    let grid = Grid::for_domain(&t.geom, t.res.nx, t.res.ny)?;
    let opts = SharpOptions {
        tol: cfg.estimate.tol.unwrap_or_else(|| crate::sharp::default_tol(t.w.p)),
        max_iter: cfg.estimate.max_iter,
        seed: cfg.corpus.seed,
        starts: cfg.estimate.starts,
        force_ascent: false,
    };
    let mut row = EstimateRow {
        config_hash: hash.to_string(),
        variant: t.kind.as_str(),
        p: t.w.p,
        alpha: t.w.alpha,
        delta: t.geom.delta(),
        n: t.geom.n(),
        grid: t.res,
        value: None,
        iterations: None,
        residual: None,
        method: "",
        oracle: None,
        status: Status::Pass,
    };
    match estimate_sharp_with(t.kind, &t.geom, &t.w, &grid, &opts) {
        Ok(est) => {
            row.value = Some(est.value);
            row.iterations = Some(est.iterations);
            row.residual = Some(est.residual);
            row.method = est.method.as_str();
            if with_oracle && t.res.nx <= ORACLE_LIMIT && t.res.ny <= ORACLE_LIMIT {
                let o = oracle_sharp_seeded(t.kind, &t.geom, &t.w, &grid, cfg.corpus.seed)?;
                row.oracle = Some(o.value);
                let rel = (est.value - o.value).abs() / o.value;
                row.status = Status::from_bool(rel <= oracle_tolerance(t.w.p));
            }
        }
        Err(LabError::Assembly(_)) => row.status = Status::Degenerate,
        Err(LabError::Convergence { iterations, best, residual, .. }) => {
            row.value = Some(best);
            row.iterations = Some(iterations);
            row.residual = Some(residual);
            row.status = Status::NoConvergence;
        }
        Err(e) => return Err(e),
    }
    Ok(row)
}

fn run_tasks(cfg: &RunConfig, tasks: &[Task], with_oracle: bool) -> Result<Vec<EstimateRow>> {
    let hash = cfg.hash();
    tasks.par_iter().map(|t| estimate_task(cfg, &hash, t, with_oracle)).collect()
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    command: &'static str,
    config_hash: String,
    config: &'a RunConfig,
    rows: &'a [EstimateRow],
}

fn finish(cfg: &RunConfig, out: &Path, name: &'static str, rows: &[EstimateRow]) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    write_csv(&out.join(format!("{name}.csv")), rows)?;
    write_json(
        &out.join(format!("{name}.json")),
        &EstimateSummary { command: name, config_hash: cfg.hash(), config: cfg, rows },
    )?;
    Ok(Outcome { rows: rows.len(), failures: rows.iter().filter(|r| r.status.is_failure()).count() })
}

/// Sharp constants per (resolution, kind, weight), oracle-checked on tiny grids.
pub fn run_estimate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut tasks = Vec::new();
    for &res in &cfg.resolutions {
        for &kind in &cfg.estimate.kinds {
            for &w in &cfg.weights {
                tasks.push(Task { kind, geom: cfg.geometry, w, res });
            }
        }
    }
    let rows = run_tasks(cfg, &tasks, true)?;
    finish(cfg, out, "estimate", &rows)
}

/// Sharp constants over the Cartesian product of the sweep axes.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let g = cfg.geometry;
    let deltas = if cfg.sweep.deltas.is_empty() { vec![g.delta()] } else { cfg.sweep.deltas.clone() };
    let ns = if cfg.sweep.ns.is_empty() { vec![g.n()] } else { cfg.sweep.ns.clone() };
    let mut weights: Vec<WeightSpec> = Vec::new();
    for w in &cfg.weights {
        let alphas = if cfg.sweep.alphas.is_empty() { vec![w.alpha] } else { cfg.sweep.alphas.clone() };
        for a in alphas {
            let ws = WeightSpec::new(w.p, a)?;
            if !weights.contains(&ws) {
                weights.push(ws);
            }
        }
    }
    let mut tasks = Vec::new();
    for &delta in &deltas {
        for &n in &ns {
            let geom = GeometryConfig::new(g.a(), g.b(), n, delta)?;
            for &w in &weights {
                for &kind in &cfg.estimate.kinds {
                    for &res in &cfg.resolutions {
                        tasks.push(Task { kind, geom, w, res });
                    }
                }
            }
        }
    }
    let rows = run_tasks(cfg, &tasks, false)?;
    finish(cfg, out, "sweep", &rows)
}
