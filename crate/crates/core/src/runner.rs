//! Batch experiment driver.
//!
//! A single JSON config names the strategy, the policy backend, the case
//! source (file or generator), the seeds, and every search hyperparameter.
//! [`execute`] turns that into a run directory: a config snapshot, the cases
//! and oracle behavior actually used, one result row per `(case, seed)`, and
//! the aggregate report tables. Sweeps repeat the run across values of `m`
//! or `b`, each in its own subdirectory, and summarize them in one flat
//! table.
//!
//! Oracle-backed runs are byte-reproducible: the work list is fixed up
//! front, workers append to private row files, and the final merge sorts
//! rows by `(case, seed)` before writing `rows.jsonl`, so neither worker
//! count nor scheduling order can leak into the output. Rerunning with
//! `resume` skips pairs that already have rows.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Case;
use crate::metrics::{
    aggregate, append_rows, read_rows, row_files, CaseResultRow, MetricsError, RunReport,
};
use crate::policy::oracle::OracleSpec;
use crate::policy::remote::{RemoteConfig, RemotePolicy};
use crate::policy::{OraclePolicy, PolicyError};
use crate::search::{run_case, BranchBudget, DecisionMode, SearchConfig, SearchError, Strategy};
use crate::synthgen::{corpus_violations, generate, GenConfig, GenError};

/// The five runnable strategies. EGB appears twice because its decision mode
/// changes the cost profile enough to deserve a first-class name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySpec {
    Greedy,
    SelfConsistency,
    EgbSampling,
    EgbLogits,
    RandomBranch,
}

impl StrategySpec {
    pub fn split(self) -> (Strategy, DecisionMode) {
        match self {
            StrategySpec::Greedy => (Strategy::Greedy, DecisionMode::Sampling),
            StrategySpec::SelfConsistency => (Strategy::SelfConsistency, DecisionMode::Sampling),
            StrategySpec::EgbSampling => (Strategy::Egb, DecisionMode::Sampling),
            StrategySpec::EgbLogits => (Strategy::Egb, DecisionMode::Logits),
            StrategySpec::RandomBranch => (Strategy::RandomBranch, DecisionMode::Sampling),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    M,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<usize>,
}

/// One flat document holding every knob a run needs. Unknown keys are
/// rejected so misspelled hyperparameters fail before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: StrategySpec,
    pub backend: Backend,
    /// Load cases from this JSON file (a list of cases)…
    pub case_file: Option<PathBuf>,
    /// …or generate them; exactly one source must be set.
    pub generate: Option<GenConfig>,
    /// Behavior sidecar for the oracle backend; defaults to the generator's
    /// output or, for file-based cases, to noiseless.
    pub oracle_spec: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Samples per substep decision.
    pub m: usize,
    /// Trajectory cap: 1 first pass + (b−1) branch attempts.
    pub b: usize,
    /// Candidate probability floor for branching.
    pub tau: f64,
    /// Retrieval depth.
    pub k: usize,
    /// Explicit branch limits; overrides the cap derived from `b`.
    pub branch_limits: Option<BranchBudget>,
    pub workers: usize,
    pub remote: Option<RemoteConfig>,
    pub sweep: Option<SweepSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: StrategySpec::EgbSampling,
            backend: Backend::Oracle,
            case_file: None,
            generate: None,
            oracle_spec: None,
            seeds: vec![0],
            m: 10,
            b: 5,
            tau: 0.01,
            k: 50,
            branch_limits: None,
            workers: 1,
            remote: None,
            sweep: None,
        }
    }
}

impl RunConfig {
    /// Load a config file, resolving relative case/oracle paths against the
    /// config's own directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let body = fs::read_to_string(path)
            .map_err(|source| RunError::Io { path: path.to_owned(), source })?;
        let mut config: RunConfig = serde_json::from_str(&body)
            .map_err(|source| RunError::Parse { path: path.to_owned(), source })?;
        if let Some(dir) = path.parent() {
            for p in [&mut config.case_file, &mut config.oracle_spec].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        Ok(config)
    }

    fn check(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        match (&self.case_file, &self.generate) {
            (None, None) => return bad("no case source: set case_file or generate".into()),
            (Some(_), Some(_)) => return bad("both case_file and generate set; pick one".into()),
            _ => {}
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds contain duplicates".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.b == 0 {
            return bad("b must be at least 1 (the first pass counts)".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad("sweep.values must be non-empty".into());
            }
            if sweep.values.contains(&0) {
                return bad("sweep values must be at least 1".into());
            }
        }
        Ok(())
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig {
            mode: self.strategy.split().1,
            m: self.m,
            tau: self.tau,
            k: self.k,
            budget: self.branch_limits.unwrap_or_else(|| BranchBudget::trajectory_cap(self.b)),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("corpus failed validation with {count} violations; first: {first}")]
    InvalidCorpus { count: usize, first: String },
    #[error("case {case} seed {seed}: {source}")]
    Search {
        case: String,
        seed: u64,
        #[source]
        source: SearchError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let body = serde_json::to_string_pretty(value).expect("run artifacts always serialize");
    fs::write(path, body).map_err(|source| RunError::Io { path: path.to_owned(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let body = fs::read_to_string(path)
        .map_err(|source| RunError::Io { path: path.to_owned(), source })?;
    serde_json::from_str(&body).map_err(|source| RunError::Parse { path: path.to_owned(), source })
}

/// Resolve the case source and oracle behavior, auditing the corpus before
/// any search runs.
fn load_material(config: &RunConfig) -> Result<(Vec<Case>, OracleSpec), RunError> {
    let (cases, generated_spec) = match (&config.case_file, &config.generate) {
        (Some(path), None) => (read_json::<Vec<Case>>(path)?, None),
        (None, Some(gen_config)) => {
            let (cases, spec) = generate(gen_config)?;
            (cases, Some(spec))
        }
        _ => unreachable!("checked in RunConfig::check"),
    };
    let violations = corpus_violations(&cases);
    if !violations.is_empty() {
        return Err(RunError::InvalidCorpus {
            count: violations.len(),
            first: format!("{}: {}", violations[0].case_id, violations[0].message),
        });
    }
    let spec = match &config.oracle_spec {
        Some(path) => read_json::<OracleSpec>(path)?,
        None => generated_spec.unwrap_or_default(),
    };
    Ok((cases, spec))
}

/// Run one configured experiment into `out`, returning the aggregate report
/// (for sweeps, the last point's). With `resume`, `(case, seed)` pairs that
/// already have rows are skipped instead of recomputed.
pub fn execute(config: &RunConfig, out: &Path, resume: bool) -> Result<RunReport, RunError> {
    config.check()?;
    fs::create_dir_all(out).map_err(|source| RunError::Io { path: out.to_owned(), source })?;
    write_json(&out.join("config.json"), config)?;

    let (cases, oracle_spec) = load_material(config)?;
    write_json(&out.join("cases.json"), &cases)?;
    if config.backend == Backend::Oracle {
        write_json(&out.join("oracle_spec.json"), &oracle_spec)?;
    }

    match &config.sweep {
        None => run_point(config, out, resume, &cases, &oracle_spec),
        Some(sweep) => {
            let mut summaries = Vec::new();
            for value in &sweep.values {
                let mut point = config.clone();
                point.sweep = None;
                let label = match sweep.parameter {
                    SweepParam::M => {
                        point.m = *value;
                        format!("sweep_m_{value}")
                    }
                    SweepParam::B => {
                        point.b = *value;
                        point.branch_limits = None;
                        format!("sweep_b_{value}")
                    }
                };
                let sub = out.join(&label);
                fs::create_dir_all(&sub)
                    .map_err(|source| RunError::Io { path: sub.clone(), source })?;
                write_json(&sub.join("config.json"), &point)?;
                let report = run_point(&point, &sub, resume, &cases, &oracle_spec)?;
                summaries.push((*value, report));
            }
            write_sweep_table(out, config, &summaries)?;
            // Each subdirectory holds its own full artifact set; the return
            // value is the last point's report.
            Ok(summaries.pop().expect("sweep has at least one value").1)
        }
    }
}

fn write_sweep_table(
    out: &Path,
    config: &RunConfig,
    summaries: &[(usize, RunReport)],
) -> Result<(), RunError> {
    let sweep = config.sweep.as_ref().expect("only called for sweeps");
    let name = match sweep.parameter {
        SweepParam::M => "m",
        SweepParam::B => "b",
    };
    let path = out.join("sweep.csv");
    let to_err =
        |source| RunError::Metrics(MetricsError::Csv { path: path.clone(), source });
    let mut w = csv::Writer::from_path(&path).map_err(to_err)?;
    let mut emit = || -> csv::Result<()> {
        w.write_record([
            "parameter",
            "value",
            "success_mean",
            "success_stdev",
            "first_pass_mean",
            "tool_match_rate",
            "mean_branches",
            "generation_calls",
            "lightweight_calls",
        ])?;
        for (value, report) in summaries {
            let g = &report.groups[0];
            w.write_record([
                name.to_owned(),
                value.to_string(),
                format!("{:.6}", g.success.mean),
                format!("{:.6}", g.success.stdev),
                format!("{:.6}", g.first_pass_success.mean),
                format!("{:.6}", g.tool_match_rate),
                format!("{:.6}", g.mean_branches),
                g.cost.generation_calls.to_string(),
                g.cost.lightweight_calls.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    emit().map_err(to_err)
}

fn run_point(
    config: &RunConfig,
    out: &Path,
    resume: bool,
    cases: &[Case],
    oracle_spec: &OracleSpec,
) -> Result<RunReport, RunError> {
    let rows_path = out.join("rows.jsonl");
    let done: BTreeSet<(String, u64)> = if resume && rows_path.exists() {
        read_rows(&rows_path)?.into_iter().map(|r| (r.case_id, r.seed)).collect()
    } else {
        if rows_path.exists() {
            fs::remove_file(&rows_path)
                .map_err(|source| RunError::Io { path: rows_path.clone(), source })?;
        }
        BTreeSet::new()
    };
    // Leftover worker files from a crashed run would double-count after the
    // merge; their rows were never folded into rows.jsonl, so drop them and
    // let those pairs rerun.
    for file in row_files(out)? {
        if file != rows_path {
            fs::remove_file(&file).map_err(|source| RunError::Io { path: file, source })?;
        }
    }

    let work: Vec<(usize, u64)> = cases
        .iter()
        .enumerate()
        .flat_map(|(i, case)| {
            config
                .seeds
                .iter()
                .filter(|seed| !done.contains(&(case.id.clone(), **seed)))
                .map(move |seed| (i, *seed))
                .collect::<Vec<_>>()
        })
        .collect();
    run_work_list(config, out, cases, oracle_spec, &work)?;

    // Merge per-worker appendices into one sorted row file.
    let mut rows = Vec::new();
    if resume && rows_path.exists() {
        rows.extend(read_rows(&rows_path)?);
        fs::remove_file(&rows_path)
            .map_err(|source| RunError::Io { path: rows_path.clone(), source })?;
    }
    for file in row_files(out)? {
        rows.extend(read_rows(&file)?);
        fs::remove_file(&file).map_err(|source| RunError::Io { path: file, source })?;
    }
    rows.sort_by(|a, b| (&a.case_id, a.seed).cmp(&(&b.case_id, b.seed)));
    append_rows(&rows_path, &rows)?;
    Ok(aggregate(out)?)
}

/// Execute every `(case index, seed)` pair, fanning out across workers. Each
/// worker owns a contiguous slice of the list and appends to its private
/// `rows_w{i}.jsonl`; the first error stops all workers.
fn run_work_list(
    config: &RunConfig,
    out: &Path,
    cases: &[Case],
    oracle_spec: &OracleSpec,
    work: &[(usize, u64)],
) -> Result<(), RunError> {
    if work.is_empty() {
        return Ok(());
    }
    let (strategy, _) = config.strategy.split();
    let search_config = config.search_config();
    let workers = config.workers.min(work.len());
    let chunk = work.len().div_ceil(workers);
    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<RunError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for (w, slice) in work.chunks(chunk).enumerate() {
            let stop = &stop;
            let failure = &failure;
            let search_config = &search_config;
            let path = out.join(format!("rows_w{w}.jsonl"));
            scope.spawn(move || {
                let remote = match config.backend {
                    Backend::Remote => {
                        match RemotePolicy::from_env(config.remote.clone().unwrap_or_default()) {
                            Ok(p) => Some(p),
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e.into());
                                stop.store(true, Ordering::SeqCst);
                                return;
                            }
                        }
                    }
                    Backend::Oracle => None,
                };
                for (case_idx, seed) in slice {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    let case = &cases[*case_idx];
                    let outcome = match &remote {
                        Some(policy) => run_case(case, policy, strategy, search_config, *seed),
                        None => {
                            let policy = OraclePolicy::new(case, oracle_spec);
                            run_case(case, &policy, strategy, search_config, *seed)
                        }
                    };
                    let result = outcome
                        .map_err(|source| RunError::Search {
                            case: case.id.clone(),
                            seed: *seed,
                            source,
                        })
                        .and_then(|outcome| {
                            let row = CaseResultRow::new(
                                case,
                                *seed,
                                strategy,
                                search_config.mode,
                                &outcome,
                            );
                            append_rows(&path, &[row]).map_err(RunError::Metrics)
                        });
                    if let Err(e) = result {
                        *failure.lock().unwrap() = Some(e);
                        stop.store(true, Ordering::SeqCst);
                        return;
                    }
                }
            });
        }
    });

    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
