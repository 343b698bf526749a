//! End-to-end pipeline and the artifacts it writes: `report.json`,
//! `trace.csv`, `convergence.csv` and `grid.csv`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checks::CheckResult;
use crate::baseline::{grid_search, log_grid, DualStatus, DualSvcConfig, GridTable};
use crate::data_io::{make_split, parse_libsvm, Dataset, DatasetStats, SplitPlan};
use crate::diagnostics::{assumption2_value, classify_index_sets};
use crate::error::{Error, Result};
use crate::newton::{NewtonConfig, NewtonStatus};
use crate::outer::{cv_error, fold_classifier_error, postprocess, run_smoothing, test_error, OuterConfig, Segment, SmoothingRun};
use crate::problem::{assemble, MpecProblem, ProblemStats};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e3,
            points: 25,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        log_grid(self.min, self.max, self.points)
    }
}

/// Everything that determines a run. Two runs with equal configs produce
/// equal reports apart from `wall_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: String,
    pub p1: usize,
    pub folds: usize,
    pub seed: u64,
    /// Rescale every feature to `[-1, 1]` before splitting.
    pub scale_features: bool,
    pub outer: OuterConfig,
    pub newton: NewtonConfig,
    pub dual: DualSvcConfig,
    pub grid: GridSpec,
    /// Zero threshold used when counting index sets.
    pub active_tol: f64,
}

impl RunConfig {
    pub fn new(data: impl Into<String>, p1: usize, folds: usize, seed: u64) -> Self {
        Self {
            data: data.into(),
            p1,
            folds,
            seed,
            scale_features: false,
            outer: OuterConfig::default(),
            newton: NewtonConfig::default(),
            dual: DualSvcConfig::default(),
            grid: GridSpec::default(),
            active_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outer.validate()?;
        self.newton.validate()?;
        if !(self.active_tol >= 0.0) {
            return Err(Error::Config("active_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Data and problem built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Instance<T> {
    pub dataset: Dataset<T>,
    pub plan: SplitPlan,
    pub problem: MpecProblem<T>,
}

/// Reading and splitting the data, which fails with parse or split errors.
pub fn load<T: Scalar>(cfg: &RunConfig) -> Result<(Dataset<T>, SplitPlan)> {
    let ds: Dataset<T> = parse_libsvm(&cfg.data)?;
    let ds = if cfg.scale_features { ds.scaled_max_abs() } else { ds };
    let plan = make_split(&ds, cfg.p1, cfg.folds, cfg.seed)?;
    Ok((ds, plan))
}

pub fn build_instance<T: Scalar>(cfg: &RunConfig) -> Result<Instance<T>> {
    let (dataset, plan) = load(cfg)?;
    let problem = assemble(&dataset, &plan)?;
    Ok(Instance { dataset, plan, problem })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub n_points: usize,
    pub n_features: usize,
    pub p1: usize,
    pub p2: usize,
    pub folds: usize,
    pub m1: usize,
    pub m2: usize,
    pub m: usize,
    pub n_vars: usize,
}

impl Dims {
    fn new(ds: &DatasetStats, plan: &SplitPlan, ps: &ProblemStats) -> Self {
        Self {
            n_points: ds.n_points,
            n_features: ds.n_features,
            p1: plan.cv_indices.len(),
            p2: plan.test_indices.len(),
            folds: ps.n_folds,
            m1: ps.m1,
            m2: ps.m2,
            m: ps.m,
            n_vars: ps.n_variables,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSetSizes {
    pub zero_pos: usize,
    pub pos_zero: usize,
    pub biactive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSummary {
    pub outer_t: usize,
    pub eps: f64,
    pub f_tol: f64,
    pub iters: usize,
    pub lin_iters: usize,
    pub warm_norm_f: f64,
    pub final_norm_f: f64,
    pub status: NewtonStatus,
    pub max_abs_gap: f64,
    pub min_g: f64,
    pub min_h: f64,
}

impl From<&Segment> for SubproblemSummary {
    fn from(s: &Segment) -> Self {
        Self {
            outer_t: s.outer_t,
            eps: s.eps,
            f_tol: s.f_tol,
            iters: s.trace.iterations(),
            lin_iters: s.trace.lin_iters(),
            warm_norm_f: s.warm_norm_f,
            final_norm_f: s.final_norm_f,
            status: s.status,
            max_abs_gap: s.complementarity.max_abs_gap,
            min_g: s.complementarity.min_g,
            min_h: s.complementarity.min_h,
        }
    }
}

/// `converged`: every subproblem met its tolerance. `partial`: some did not,
/// but the final point still has `‖F‖` within the base tolerance.
/// `failed`: neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Converged,
    Partial,
    Failed,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub dataset: String,
    pub dims: Dims,
    pub config: RunConfig,
    pub C_raw: f64,
    pub C_hat: f64,
    pub E_cv: f64,
    /// Validation error of the per-fold classifiers carried in the solution.
    pub E_cv_folds: f64,
    pub E_te: Option<f64>,
    pub A2_paper: Option<f64>,
    pub A2_cone: Option<f64>,
    pub index_set_sizes: IndexSetSizes,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub lin_iters_total: usize,
    pub final_eps: f64,
    pub final_norm_f: f64,
    pub status: PipelineStatus,
    pub dual_status: DualStatus,
    pub subproblems: Vec<SubproblemSummary>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput<T> {
    pub report: SolveReport,
    pub run: SmoothingRun<T>,
    pub instance: Instance<T>,
}

/// Runs the continuation on an already built instance and evaluates every
/// metric of the final point.
pub fn solve_instance<T: Scalar>(instance: Instance<T>, cfg: &RunConfig) -> Result<SolveOutput<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let p = &instance.problem;
    let run = run_smoothing(p, &cfg.outer, &cfg.newton)?;
    let v = run.point.v();
    let post = postprocess(v, &instance.dataset, &instance.plan, &cfg.dual)?;
    let e_te = test_error(&post.w, &instance.dataset, &instance.plan.test_indices);
    let a2 = assumption2_value(p, &run.point).ok();
    let sets = classify_index_sets(p, v, cfg.active_tol)?;
    let final_norm_f = run.segments.last().map_or(f64::NAN, |s| s.final_norm_f);
    let status = if run.all_converged() {
        PipelineStatus::Converged
    } else if final_norm_f <= cfg.newton.f_tol {
        PipelineStatus::Partial
    } else {
        PipelineStatus::Failed
    };
    let report = SolveReport {
        dataset: cfg.data.clone(),
        dims: Dims::new(&instance.dataset.stats(), &instance.plan, &p.stats()),
        config: cfg.clone(),
        C_raw: post.c_raw,
        C_hat: post.c_hat,
        E_cv: cv_error(p, v),
        E_cv_folds: fold_classifier_error(p, v),
        E_te: e_te,
        A2_paper: a2.as_ref().map(|a| a.a2_paper),
        A2_cone: a2.as_ref().map(|a| a.a2_cone),
        index_set_sizes: IndexSetSizes {
            zero_pos: sets.zero_pos,
            pos_zero: sets.pos_zero,
            biactive: sets.biactive,
        },
        outer_iters: run.outer_iters(),
        inner_iters_total: run.inner_iters(),
        lin_iters_total: run.segments.iter().map(|s| s.trace.lin_iters()).sum(),
        final_eps: run.point.eps().as_f64(),
        final_norm_f,
        status,
        dual_status: post.dual_status,
        subproblems: run.segments.iter().map(SubproblemSummary::from).collect(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(SolveOutput { report, run, instance })
}

pub fn solve<T: Scalar>(cfg: &RunConfig) -> Result<SolveOutput<T>> {
    cfg.validate()?;
    solve_instance(build_instance(cfg)?, cfg)
}

/// Grid search with the folds of `cfg`.
pub fn grid<T: Scalar>(cfg: &RunConfig) -> Result<GridTable> {
    let (ds, plan) = load::<T>(cfg)?;
    grid_search(&ds, &plan, &cfg.grid.values()?, &cfg.dual)
}

/// Rows `outer_t,eps,k,normF,step,lin_iters,backtracks`, one per iterate
/// including each subproblem's starting point.
pub fn trace_csv(segments: &[Segment]) -> String {
    let mut out = String::from("outer_t,eps,k,normF,step,lin_iters,backtracks\n");
    for s in segments {
        for r in &s.trace.records {
            let _ = writeln!(
                out,
                "{},{:e},{},{:e},{:e},{},{}",
                s.outer_t, s.eps, r.k, r.norm_f, r.step, r.lin_iters, r.backtracks
            );
        }
    }
    out
}

/// `log10‖F‖` against a global iteration counter; `end_of_inner` marks the
/// last iterate of each subproblem.
pub fn convergence_csv(segments: &[Segment]) -> String {
    let mut out = String::from("iter,outer_t,log10_normF,end_of_inner\n");
    let mut it = 0;
    for s in segments {
        let n = s.trace.records.len();
        for (j, r) in s.trace.records.iter().enumerate() {
            let _ = writeln!(out, "{it},{},{:.6},{}", s.outer_t, r.norm_f.log10(), u8::from(j + 1 == n));
            it += 1;
        }
    }
    out
}

pub fn grid_csv(table: &GridTable) -> String {
    let mut out = String::from("C,E_cv\n");
    for r in &table.rows {
        let _ = writeln!(out, "{:e},{}", r.c, r.e_cv);
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json`, `trace.csv` and `convergence.csv` into `dir`.
pub fn write_solve_artifacts<T>(dir: &Path, report: &SolveReport, run: &SmoothingRun<T>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join("report.json"), &(report_json(report)? + "\n"))?;
    write(&dir.join("trace.csv"), &trace_csv(&run.segments))?;
    write(&dir.join("convergence.csv"), &convergence_csv(&run.segments))
}

/// Writes `problem.json` with dataset and problem dimensions and sparsity.
pub fn write_problem_dump<T: Scalar>(dir: &Path, instance: &Instance<T>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let dump = serde_json::json!({
        "dataset": instance.dataset.stats(),
        "problem": instance.problem.stats(),
    });
    write(&dir.join("problem.json"), &(serde_json::to_string_pretty(&dump)? + "\n"))
}

pub fn write_grid_artifact(dir: &Path, table: &GridTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join("grid.csv"), &grid_csv(table))
}

pub fn report_json(report: &SolveReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn grid_json(table: &GridTable) -> Result<String> {
    Ok(serde_json::to_string_pretty(table)?)
}

pub fn checks_json(results: &[CheckResult]) -> Result<String> {
    Ok(serde_json::to_string_pretty(results)?)
}

/// `report.json` text with timing fields removed, for run-to-run comparison.
pub fn report_without_timing(report: &SolveReport) -> Result<String> {
    let mut v = serde_json::to_value(report)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_ms");
    }
    Ok(serde_json::to_string(&v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::GridRow;
    use crate::newton::{NewtonRecord, NewtonTrace};
    use crate::diagnostics::Complementarity;

    fn seg(t: usize, norms: &[f64]) -> Segment {
        Segment {
            outer_t: t,
            eps: 0.5f64.powi(t as i32),
            f_tol: 1e-8,
            warm_norm_f: norms[0],
            final_norm_f: *norms.last().unwrap(),
            status: NewtonStatus::Converged,
            complementarity: Complementarity {
                max_abs_gap: 0.0,
                min_g: 1.0,
                min_h: 1.0,
            },
            trace: NewtonTrace {
                records: norms
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| NewtonRecord {
                        k,
                        norm_f: n,
                        step: if k == 0 { 0.0 } else { 1.0 },
                        lin_iters: usize::from(k > 0),
                        backtracks: 0,
                        direction: None,
                    })
                    .collect(),
            },
        }
    }

    #[test]
    fn csv_layouts() {
        let segs = vec![seg(0, &[1.0, 1e-3, 1e-9]), seg(1, &[1e-2, 1e-10])];
        let t = trace_csv(&segs);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "outer_t,eps,k,normF,step,lin_iters,backtracks");
        assert_eq!(lines.len(), 1 + 5);
        assert!(lines[4].starts_with("1,5e-1,0,"));

        let c = convergence_csv(&segs);
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines.len(), 1 + 5);
        assert_eq!(lines[3], "2,0,-9.000000,1");
        assert_eq!(lines[4], "3,1,-2.000000,0");
        assert_eq!(lines[5], "4,1,-10.000000,1");

        let g = GridTable {
            rows: vec![GridRow {
                c: 0.5,
                e_cv: 12.5,
                statuses: vec![],
            }],
            best: 0,
        };
        assert_eq!(grid_csv(&g), "C,E_cv\n5e-1,12.5\n");
    }

    #[test]
    fn grid_spec_defaults() {
        let g = GridSpec::default().values().unwrap();
        assert_eq!(g.len(), 25);
        assert!(GridSpec { points: 0, ..GridSpec::default() }.values().is_err());
    }
}
