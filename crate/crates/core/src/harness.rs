//! Run orchestration: restart loop under an evaluation budget, solution
//! archive, suite execution and report files.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::bench::{instantiate_problem, BenchError, Group, ProblemSpec};
use crate::cma::{self, Bounds, CmaError, CmaState, TerminationConfig};
use crate::metrics::{self, Reported, RunMetrics};
use crate::seed::{mix_seed, TAG_RUN};

pub const CSV_HEADER: &str = "problem_id,group,dim,instance,f_star,f_best,epsilon_f,n_true,n_reported,n_matched,precision,recall,f1,restarts,evals_used,wall_ms";
pub const TRACE_HEADER: &str = "generation\tevals\tbest_f\tsigma\trestart_index";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error("budget of {budget} evaluations cannot fund one generation of {lambda}")]
    EmptyRecord { budget: usize, lambda: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub budget_multiplier: usize,
    pub dims: Vec<usize>,
    pub instances: u32,
    pub problems: Vec<u32>,
    pub master_seed: u64,
    pub sigma0: f64,
    pub lambda_override: Option<usize>,
    /// Double the population on each successive broad restart. Off by
    /// default: the larger populations spend the budget that niche probes
    /// need.
    pub population_growth: bool,
    /// Fitness tolerance for archiving and detection; `None` uses
    /// `1e-3 (1 + |bias|)`.
    pub f_tol: Option<f64>,
    /// Detection radius; `None` uses the problem's niching radius.
    pub match_radius: Option<f64>,
    pub trace_every: usize,
    pub termination: TerminationConfig,
    pub jobs: usize,
    /// Directory for per-run trace files, if any.
    pub trace_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            budget_multiplier: 50_000,
            dims: vec![2, 5, 10, 20],
            instances: 15,
            problems: (1..=16).collect(),
            master_seed: 0,
            sigma0: 2.0,
            lambda_override: None,
            population_growth: false,
            f_tol: None,
            match_radius: None,
            trace_every: 1,
            termination: TerminationConfig::default(),
            jobs: 1,
            trace_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budget_multiplier == 0 {
            return Err(HarnessError::EmptyRecord { budget: 0, lambda: 0 });
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(HarnessError::Config("dims must be non-empty and positive".into()));
        }
        if self.instances == 0 {
            return Err(HarnessError::Config("instances must be at least 1".into()));
        }
        if self.trace_every == 0 {
            return Err(HarnessError::Config("trace_every must be at least 1".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(HarnessError::Config(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        Ok(())
    }

    pub fn f_tol_for(&self, bias: f64) -> f64 {
        self.f_tol.unwrap_or(1e-3 * (1.0 + bias.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub x: DVector<f64>,
    pub fitness: f64,
    /// Evaluation index at which this point was found (1-based).
    pub eval_stamp: usize,
    /// Restarts seeded from or converged into this niche.
    pub explored: u32,
    /// Whether some restart's best solution ended in this niche.
    pub converged: bool,
}

/// Distinct good solutions, deduplicated at niche scale and kept sorted by
/// fitness. Entries worse than the best by more than `10 f_tol` are dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn best(&self) -> Option<&ArchiveEntry> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn nearest_within(&self, x: &DVector<f64>, radius: f64) -> Option<usize> {
        let mut hit = None;
        let mut best = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = (&e.x - x).norm();
            if d <= radius && d < best {
                best = d;
                hit = Some(i);
            }
        }
        hit
    }

    fn sort(&mut self) {
        self.entries.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    }

    fn prune(&mut self, f_tol: f64) {
        if let Some(best) = self.best().map(|e| e.fitness) {
            let limit = best + 10.0 * f_tol;
            self.entries.retain(|e| e.fitness <= limit);
        }
    }
}

/// Offers a candidate to the archive. Returns whether the archive changed.
pub fn archive_insert(
    archive: &mut Archive,
    x: &DVector<f64>,
    fitness: f64,
    eval_stamp: usize,
    sigma_nich: f64,
    f_tol: f64,
) -> bool {
    let best = archive.best().map(|e| e.fitness);
    if let Some(b) = best {
        if fitness > b + 10.0 * f_tol {
            return false;
        }
    }
    let close: Vec<usize> = (0..archive.entries.len())
        .filter(|&i| (&archive.entries[i].x - x).norm() <= sigma_nich)
        .collect();
    if close.iter().any(|&i| archive.entries[i].fitness <= fitness) {
        return false;
    }
    match archive.nearest_within(x, sigma_nich) {
        Some(keep) => {
            // every other entry in range is worse: fold it into the kept one
            let mut explored = 0;
            let mut converged = false;
            for &i in &close {
                explored = explored.max(archive.entries[i].explored);
                converged |= archive.entries[i].converged;
            }
            let e = &mut archive.entries[keep];
            e.x.copy_from(x);
            e.fitness = fitness;
            e.eval_stamp = eval_stamp;
            e.explored = explored;
            e.converged = converged;
            let mut idx = 0;
            archive.entries.retain(|_| {
                let drop = idx != keep && close.contains(&idx);
                idx += 1;
                !drop
            });
        }
        None => archive.entries.push(ArchiveEntry {
            x: x.clone(),
            fitness,
            eval_stamp,
            explored: 0,
            converged: false,
        }),
    }
    archive.sort();
    if best.is_none_or(|b| fitness < b) {
        archive.prune(f_tol);
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub evals: usize,
    pub best_f: f64,
    pub sigma: f64,
    pub restart_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub problem_id: u32,
    pub group: Group,
    pub dim: usize,
    pub instance: u32,
    pub f_star: f64,
    pub f_best: f64,
    pub n_true: usize,
    pub n_reported: usize,
    pub n_matched: usize,
    pub metrics: RunMetrics,
    pub restarts: usize,
    pub wall_ms: u64,
    pub trace_path: Option<PathBuf>,
    /// Set when the run failed; metrics are NaN in that case.
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(spec_id: (u32, usize, u32), err: &HarnessError) -> Self {
        let (problem_id, dim, instance) = spec_id;
        let group = if problem_id <= 8 { Group::A } else { Group::B };
        Self {
            problem_id,
            group,
            dim,
            instance,
            f_star: f64::NAN,
            f_best: f64::NAN,
            n_true: 0,
            n_reported: 0,
            n_matched: 0,
            metrics: RunMetrics {
                epsilon_f: f64::NAN,
                precision: f64::NAN,
                recall: f64::NAN,
                f1: f64::NAN,
                evals_used: 0,
            },
            restarts: 0,
            wall_ms: 0,
            trace_path: None,
            error: Some(err.to_string()),
        }
    }

    /// Same record with the wall-clock time zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub trace: Vec<TraceRow>,
    pub archive: Archive,
}

/// Seed of the optimizer stream for one restart.
pub fn run_seed(master_seed: u64, spec: &ProblemSpec, restart_index: usize) -> u64 {
    mix_seed(&[
        TAG_RUN,
        master_seed,
        spec.problem_id as u64,
        spec.dim as u64,
        spec.instance as u64,
        restart_index as u64,
    ])
}

pub fn run_single(spec: &ProblemSpec, config: &RunConfig) -> Result<RunRecord, HarnessError> {
    run_single_traced(spec, config).map(|o| o.record)
}

/// Runs restarts of the optimizer on one problem instance until the budget
/// `dim × budget_multiplier` cannot fund another generation.
pub fn run_single_traced(spec: &ProblemSpec, config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let problem = instantiate_problem(spec, config.master_seed)?;
    let dim = spec.dim;
    let base = cma::derive_params(dim, config.lambda_override)?;
    let budget = dim * config.budget_multiplier;
    if budget < base.lambda {
        return Err(HarnessError::EmptyRecord { budget, lambda: base.lambda });
    }
    let bounds = Bounds::default();
    let sigma_nich = problem.niche.niche_radius;
    let f_tol = config.f_tol_for(problem.bias);

    let mut archive = Archive::default();
    let mut trace = Vec::new();
    let evals = Cell::new(0usize);
    let mut generation = 0usize;
    let mut best_so_far = f64::INFINITY;
    let mut restarts = 0usize;
    let mut last_traced = None;
    let mut last_sigma = config.sigma0;
    let mut broad_restarts = 0u32;
    let f = |x: &DVector<f64>| {
        evals.set(evals.get() + 1);
        problem.evaluate(x).unwrap_or(f64::NAN)
    };

    while budget - evals.get() >= base.lambda {
        while budget - evals.get() >= base.lambda + HILL_VALLEY_POINTS {
            if !screen_next_niche(&mut archive, &f) {
                break;
            }
        }
        if budget - evals.get() < base.lambda {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed(config.master_seed, spec, restarts));
        let start = restart_start(restarts, &mut archive, dim, &bounds, sigma_nich, config.sigma0, &mut rng);
        let mut lambda = base.lambda;
        if start.broad && config.population_growth {
            lambda = base.lambda << broad_restarts.min(16);
            while lambda > base.lambda && budget - evals.get() < lambda {
                lambda /= 2;
            }
            broad_restarts += 1;
        }
        let params = if lambda == base.lambda { base.clone() } else { cma::derive_params(dim, Some(lambda))? };
        let mut state = CmaState::new(start.mean, start.sigma);
        let mut history: Vec<f64> = Vec::new();
        let mut restart_best = f64::INFINITY;
        let mut restart_best_x: Option<DVector<f64>> = None;

        while budget - evals.get() >= params.lambda {
            let first_eval = evals.get();
            let result = cma::step(
                &mut state,
                &params,
                Some(&bounds),
                f,
                &mut rng,
            );
            let out = match result {
                Ok(out) => out,
                Err(CmaError::CovarianceDegenerate | CmaError::NonFinite(_)) => break,
                Err(e) => return Err(e.into()),
            };
            debug_assert_eq!(evals.get() - first_eval, params.lambda);
            for (i, c) in out.population.iter().enumerate() {
                let stamp = first_eval + out.ranking[i] + 1;
                archive_insert(&mut archive, &c.x, c.fitness, stamp, sigma_nich, f_tol);
            }
            let gen_best = out.best();
            if gen_best.fitness < restart_best {
                restart_best = gen_best.fitness;
                restart_best_x = Some(gen_best.x.clone());
            }
            best_so_far = best_so_far.min(restart_best);
            history.push(restart_best);
            last_sigma = state.sigma;

            if generation % config.trace_every == 0 {
                trace.push(TraceRow {
                    generation,
                    evals: evals.get(),
                    best_f: best_so_far,
                    sigma: state.sigma,
                    restart_index: restarts,
                });
                last_traced = Some(generation);
            }
            generation += 1;
            if cma::check_termination(&state, &history, &config.termination).is_some() {
                break;
            }
        }
        if let Some(x) = restart_best_x {
            if let Some(i) = archive.nearest_within(&x, sigma_nich) {
                archive.entries[i].explored += 1;
                archive.entries[i].converged = true;
            }
        }
        restarts += 1;
    }
    assert!(evals.get() <= budget, "evaluation budget exceeded");

    if generation > 0 && last_traced != Some(generation - 1) {
        trace.push(TraceRow {
            generation: generation - 1,
            evals: evals.get(),
            best_f: best_so_far,
            sigma: last_sigma,
            restart_index: restarts - 1,
        });
    }

    let f_best = archive.best().map_or(best_so_far, |e| e.fitness);
    let reported: Vec<Reported> = archive
        .entries
        .iter()
        .filter(|e| e.converged && e.fitness <= f_best + f_tol)
        .map(|e| Reported { x: e.x.clone(), fitness: e.fitness })
        .collect();
    let radius = config.match_radius.unwrap_or(sigma_nich);
    let report = metrics::match_peaks(&reported, &problem.niche.positions, problem.bias, radius, f_tol);
    let run_metrics = RunMetrics::new(f_best, problem.bias, &report, evals.get());

    let record = RunRecord {
        problem_id: spec.problem_id,
        group: spec.group,
        dim,
        instance: spec.instance,
        f_star: problem.bias,
        f_best,
        n_true: report.n_true,
        n_reported: report.n_reported,
        n_matched: report.matched.len(),
        metrics: run_metrics,
        restarts,
        wall_ms: started.elapsed().as_millis() as u64,
        trace_path: None,
        error: None,
    };
    Ok(RunOutput { record, trace, archive })
}

/// Uniform draws compared when picking a fresh start point.
const START_CANDIDATES: usize = 8;

/// Interior points evaluated by one hill-valley test, at most.
const HILL_VALLEY_POINTS: usize = 3;

/// Looks at the best archive entry no restart has visited yet and, if it
/// lies in the basin of its nearest converged entry, marks it visited.
///
/// Two points share a basin when no evenly spaced interior point of the
/// segment between them is worse than both ends. Returns whether an entry
/// was marked, so the caller can look at the next one.
fn screen_next_niche(archive: &mut Archive, f: impl Fn(&DVector<f64>) -> f64) -> bool {
    let Some(i) = archive
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.explored == 0)
        .min_by(|(_, a), (_, b)| a.fitness.total_cmp(&b.fitness))
        .map(|(i, _)| i)
    else {
        return false;
    };
    let entry = &archive.entries[i];
    let Some(anchor) = archive
        .entries
        .iter()
        .filter(|e| e.converged)
        .min_by(|a, b| (&a.x - &entry.x).norm().total_cmp(&(&b.x - &entry.x).norm()))
    else {
        return false;
    };
    let ceiling = entry.fitness.max(anchor.fitness);
    let same_basin = (1..=HILL_VALLEY_POINTS).all(|k| {
        let t = k as f64 / (HILL_VALLEY_POINTS + 1) as f64;
        f(&(&entry.x + (&anchor.x - &entry.x) * t)) <= ceiling
    });
    if same_basin {
        archive.entries[i].explored += 1;
    }
    same_basin
}

struct RestartStart {
    mean: DVector<f64>,
    sigma: f64,
    /// Searches the whole box rather than one niche.
    broad: bool,
}

/// Start point and step size of the next restart.
///
/// The first restart starts uniformly in the box with `sigma0`. Later ones
/// prefer an archive niche no restart has visited yet: its entry, perturbed
/// by `N(0, (σ_nich/2)² I)`, is searched with step size `σ_nich/2`. When
/// every known niche has been visited the restart starts from the uniform
/// point farthest from the archive among a few draws, with step size
/// `sigma0` on odd restarts and `σ_nich` on even ones. The niche-scale
/// searches find basins a broad search keeps missing.
fn restart_start<R: Rng + ?Sized>(
    restart_index: usize,
    archive: &mut Archive,
    dim: usize,
    bounds: &Bounds,
    sigma_nich: f64,
    sigma0: f64,
    rng: &mut R,
) -> RestartStart {
    let draw = |rng: &mut R| DVector::from_fn(dim, |_, _| rng.random_range(bounds.lower..=bounds.upper));
    // the farthest of a few uniform draws from everything archived so far
    let uniform = |rng: &mut R| {
        let gap = |x: &DVector<f64>| archive.entries.iter().map(|e| (&e.x - x).norm()).fold(f64::INFINITY, f64::min);
        (0..START_CANDIDATES)
            .map(|_| draw(rng))
            .map(|x| (gap(&x), x))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, x)| x)
            .unwrap()
    };
    let broad = |mean| RestartStart { mean, sigma: sigma0, broad: true };
    if archive.is_empty() {
        return broad(draw(rng));
    }
    let pick = archive
        .entries
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.explored.cmp(&b.explored).then(a.fitness.total_cmp(&b.fitness)))
        .map(|(i, _)| i)
        .filter(|&i| archive.entries[i].explored == 0);
    match pick {
        Some(i) => {
            let entry = &mut archive.entries[i];
            entry.explored += 1;
            let mut x = entry.x.clone();
            for v in x.iter_mut() {
                *v += 0.5 * sigma_nich * rng.sample::<f64, _>(StandardNormal);
            }
            bounds.clamp(&mut x);
            RestartStart { mean: x, sigma: sigma0.min(0.5 * sigma_nich), broad: false }
        }
        None if restart_index % 2 == 1 => broad(uniform(rng)),
        None => RestartStart { mean: uniform(rng), sigma: sigma0.min(sigma_nich), broad: false },
    }
}

/// The `(problem, dim, instance)` triples of a suite, in report order.
pub fn suite_plan(config: &RunConfig) -> Vec<(u32, usize, u32)> {
    let mut plan = Vec::new();
    for &p in &config.problems {
        for &d in &config.dims {
            for i in 1..=config.instances {
                plan.push((p, d, i));
            }
        }
    }
    plan
}

/// Runs every `(problem, dim, instance)` combination. Failures become rows
/// with the error recorded; the order is always `(problem, dim, instance)`.
pub fn run_suite(config: &RunConfig) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate()?;
    if let Some(dir) = &config.trace_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let plan = suite_plan(config);
    let run_one = |&(p, d, i): &(u32, usize, u32)| -> RunRecord {
        let attempt = || -> Result<RunRecord, HarnessError> {
            let spec = ProblemSpec::new(p, d, i)?;
            let out = run_single_traced(&spec, config)?;
            let mut record = out.record;
            if let Some(dir) = &config.trace_dir {
                let path = dir.join(format!("p{p:02}_d{d:02}_i{i:02}.tsv"));
                emit_trace(&out.trace, &path)?;
                record.trace_path = Some(path);
            }
            Ok(record)
        };
        attempt().unwrap_or_else(|e| RunRecord::failed((p, d, i), &e))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(|| plan.par_iter().map(run_one).collect()))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_string(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.problem_id,
            r.group,
            r.dim,
            r.instance,
            fmt_f(r.f_star),
            fmt_f(r.f_best),
            fmt_f(m.epsilon_f),
            r.n_true,
            r.n_reported,
            r.n_matched,
            fmt_f(m.precision),
            fmt_f(m.recall),
            fmt_f(m.f1),
            r.restarts,
            m.evals_used,
            r.wall_ms
        );
    }
    out
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, csv_string(records)).map_err(io_err(path))
}

pub fn trace_string(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.generation,
            r.evals,
            fmt_f(r.best_f),
            fmt_f(r.sigma),
            r.restart_index
        );
    }
    out
}

pub fn emit_trace(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, trace_string(rows)).map_err(io_err(path))
}

/// One parsed CSV row, as needed for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub problem_id: u32,
    pub group: String,
    pub dim: usize,
    pub instance: u32,
    pub f_star: f64,
    pub f_best: f64,
    pub n_true: usize,
    pub n_reported: usize,
    pub n_matched: usize,
    pub metrics: RunMetrics,
    pub restarts: usize,
    pub wall_ms: u64,
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let bad = |line: usize, msg: String| HarnessError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 16 {
            return Err(bad(no, format!("expected 16 columns, found {}", cols.len())));
        }
        macro_rules! col {
            ($i:expr) => {
                cols[$i].parse().map_err(|_| bad(no, format!("bad value `{}` in column {}", cols[$i], $i + 1)))?
            };
        }
        rows.push(CsvRow {
            problem_id: col!(0),
            group: cols[1].to_string(),
            dim: col!(2),
            instance: col!(3),
            f_star: col!(4),
            f_best: col!(5),
            n_true: col!(7),
            n_reported: col!(8),
            n_matched: col!(9),
            metrics: RunMetrics {
                epsilon_f: col!(6),
                precision: col!(10),
                recall: col!(11),
                f1: col!(12),
                evals_used: col!(14),
            },
            restarts: col!(13),
            wall_ms: col!(15),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub problem_id: u32,
    pub dim: usize,
    pub runs: usize,
    pub mean_epsilon_f: f64,
    pub mean_precision: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cells: Vec<CellSummary>,
    pub mean_precision: f64,
    pub mean_f1: f64,
    pub overall_score: f64,
    /// Rows skipped because the run failed.
    pub failed: usize,
}

/// Per-(problem, dim) means of ε_f, precision and F1, plus suite-wide
/// aggregates. Failed rows (NaN metrics) are excluded.
pub fn aggregate(rows: &[CsvRow]) -> Result<Report, HarnessError> {
    let ok: Vec<&CsvRow> = rows.iter().filter(|r| r.metrics.f1.is_finite()).collect();
    let mut groups: BTreeMap<(u32, usize), Vec<&CsvRow>> = BTreeMap::new();
    for r in &ok {
        groups.entry((r.problem_id, r.dim)).or_default().push(r);
    }
    let mean = |rs: &[&CsvRow], f: fn(&RunMetrics) -> f64| rs.iter().map(|r| f(&r.metrics)).sum::<f64>() / rs.len() as f64;
    let cells = groups
        .into_iter()
        .map(|((problem_id, dim), rs)| CellSummary {
            problem_id,
            dim,
            runs: rs.len(),
            mean_epsilon_f: mean(&rs, |m| m.epsilon_f),
            mean_precision: mean(&rs, |m| m.precision),
            mean_f1: mean(&rs, |m| m.f1),
        })
        .collect();
    let all: Vec<RunMetrics> = ok.iter().map(|r| r.metrics).collect();
    let overall = metrics::overall_score(&all).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(Report {
        cells,
        mean_precision: mean(&ok, |m| m.precision),
        mean_f1: mean(&ok, |m| m.f1),
        overall_score: overall,
        failed: rows.len() - ok.len(),
    })
}

pub fn report_string(report: &Report) -> String {
    let mut out = String::from("problem_id\tdim\truns\tmean_epsilon_f\tmean_precision\tmean_f1\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6e}\t{:.4}\t{:.4}",
            c.problem_id, c.dim, c.runs, c.mean_epsilon_f, c.mean_precision, c.mean_f1
        );
    }
    let _ = writeln!(out, "mean_precision\t{:.4}", report.mean_precision);
    let _ = writeln!(out, "mean_f1\t{:.4}", report.mean_f1);
    let _ = writeln!(out, "overall_score\t{:.4}", report.overall_score);
    if report.failed > 0 {
        let _ = writeln!(out, "failed_runs\t{}", report.failed);
    }
    out
}
