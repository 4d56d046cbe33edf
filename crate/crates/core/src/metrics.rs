//! Step-wise and plan-level scoring, persisted result rows, and run-directory
//! aggregation.
//!
//! Step metrics are computed on the first-pass trajectory (where decision
//! quality is measured); plan-level success is the final, possibly branched,
//! trajectory's verdict. A run directory holds one line-delimited JSON row
//! per `(case, seed)` pair; [`aggregate`] folds every row file into a
//! deterministic report plus flat CSV tables, and is idempotent and
//! insensitive to row order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Case, SubstepAddr, ToolChoice};
use crate::entropy::{bin_entropy_errors, reference_choice, EntropyErrorTable};
use crate::search::{BranchRecord, CostLedger, DecisionMode, SearchOutcome, Strategy};

/// One first-pass decision, reduced to what scoring and the entropy-error
/// table need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub substep: SubstepAddr,
    pub entropy: f64,
    pub executed: ToolChoice,
    pub reference: ToolChoice,
}

impl StepRow {
    /// First-pass tool mismatch: the executed choice differs from the plan's
    /// reference choice (`NO_OP` counts as a choice).
    pub fn is_error(&self) -> bool {
        self.executed != self.reference
    }
}

/// The persisted record for one `(case, seed)` run. Everything here is a
/// pure function of the search outcome, so rows are byte-reproducible; in
/// particular no wall-clock readings are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResultRow {
    pub case_id: String,
    pub category: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub mode: DecisionMode,
    pub success: bool,
    pub first_pass_success: bool,
    pub tool_match_rate: f64,
    pub action_identification_accuracy: f64,
    pub first_pass: Vec<StepRow>,
    pub branches: Vec<BranchRecord>,
    pub cost: CostLedger,
}

impl CaseResultRow {
    pub fn new(
        case: &Case,
        seed: u64,
        strategy: Strategy,
        mode: DecisionMode,
        outcome: &SearchOutcome,
    ) -> Self {
        let (tool_match_rate, action_identification_accuracy) = step_metrics(outcome, case);
        let first_pass = outcome
            .first_pass
            .iter()
            .map(|rec| StepRow {
                substep: rec.substep,
                entropy: rec.entropy,
                executed: rec.executed_choice().clone(),
                reference: case
                    .substep(rec.substep)
                    .map(reference_choice)
                    .unwrap_or(ToolChoice::NoOp),
            })
            .collect();
        CaseResultRow {
            case_id: case.id.clone(),
            category: case.category.clone(),
            seed,
            strategy,
            mode,
            success: outcome.success,
            first_pass_success: outcome.first_pass_success,
            tool_match_rate,
            action_identification_accuracy,
            first_pass,
            branches: outcome.branches.clone(),
            cost: outcome.cost,
        }
    }
}

/// First-pass decision quality for one outcome.
///
/// * tool match rate — over tool-requiring substeps only: did the agent pick
///   the reference tool?
/// * action identification accuracy — over all substeps: did the agent
///   correctly decide *whether* a tool call was needed, regardless of which?
///
/// Both default to 1.0 when their denominator is empty (nothing to get
/// wrong).
pub fn step_metrics(outcome: &SearchOutcome, case: &Case) -> (f64, f64) {
    let mut tool_total = 0usize;
    let mut tool_hits = 0usize;
    let mut id_total = 0usize;
    let mut id_hits = 0usize;
    for rec in &outcome.first_pass {
        let Some(node) = case.substep(rec.substep) else { continue };
        let reference = reference_choice(node);
        let executed = rec.executed_choice();
        id_total += 1;
        id_hits += usize::from(executed.is_tool() == reference.is_tool());
        if reference.is_tool() {
            tool_total += 1;
            tool_hits += usize::from(*executed == reference);
        }
    }
    let rate = |hits: usize, total: usize| if total == 0 { 1.0 } else { hits as f64 / total as f64 };
    (rate(tool_hits, tool_total), rate(id_hits, id_total))
}

/// A rate reported as mean over per-seed values with the sample standard
/// deviation across seeds (n−1 denominator; 0 when only one seed ran).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub mean: f64,
    pub stdev: f64,
}

fn seeded_rate(rows: &[&CaseResultRow], hit: impl Fn(&CaseResultRow) -> bool) -> RateSummary {
    let mut per_seed: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
    for row in rows {
        let slot = per_seed.entry(row.seed).or_default();
        slot.0 += usize::from(hit(row));
        slot.1 += 1;
    }
    let means: Vec<f64> =
        per_seed.values().map(|(hits, total)| *hits as f64 / *total as f64).collect();
    let mean = means.iter().sum::<f64>() / means.len().max(1) as f64;
    let stdev = if means.len() < 2 {
        0.0
    } else {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        var.sqrt()
    };
    RateSummary { mean: if rows.is_empty() { 0.0 } else { mean }, stdev }
}

/// Fraction of rows whose final trajectory the judge accepted, as a
/// per-seed mean with across-seed spread. For branching strategies this is
/// pass@k with k the trajectory cap.
pub fn success_rate(rows: &[CaseResultRow]) -> RateSummary {
    seeded_rate(&rows.iter().collect::<Vec<_>>(), |r| r.success)
}

/// Aggregate numbers for every row sharing a strategy and decision mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub strategy: Strategy,
    pub mode: DecisionMode,
    pub rows: usize,
    pub cases: usize,
    pub seeds: usize,
    pub success: RateSummary,
    pub first_pass_success: RateSummary,
    pub tool_match_rate: f64,
    pub action_identification_accuracy: f64,
    pub mean_branches: f64,
    pub cost: CostLedger,
}

/// The whole-run report: one group per (strategy, mode) found in the rows
/// plus the entropy-vs-error table over all first-pass decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub groups: Vec<GroupReport>,
    pub entropy: EntropyErrorTable,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("no result rows found under {0}")]
    Empty(PathBuf),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Append rows to a line-delimited JSON file, creating it if needed.
pub fn append_rows(path: &Path, rows: &[CaseResultRow]) -> Result<(), MetricsError> {
    let wrap = |source| MetricsError::Write { path: path.to_owned(), source };
    let mut file =
        fs::OpenOptions::new().create(true).append(true).open(path).map_err(wrap)?;
    for row in rows {
        let line = serde_json::to_string(row).expect("rows always serialize");
        writeln!(file, "{line}").map_err(wrap)?;
    }
    Ok(())
}

/// Read one row file, reporting the offending file and line on corrupt input.
pub fn read_rows(path: &Path) -> Result<Vec<CaseResultRow>, MetricsError> {
    let file =
        fs::File::open(path).map_err(|source| MetricsError::Io { path: path.to_owned(), source })?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MetricsError::Io { path: path.to_owned(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|source| MetricsError::Parse {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?);
    }
    Ok(rows)
}

/// Every row file in a run directory: `rows.jsonl` plus any per-worker
/// `rows_w*.jsonl` not yet merged, in name order.
pub fn row_files(dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    let entries =
        fs::read_dir(dir).map_err(|source| MetricsError::Io { path: dir.to_owned(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rows") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn report_for(rows: &[CaseResultRow]) -> RunReport {
    let mut keys: Vec<(Strategy, DecisionMode)> =
        rows.iter().map(|r| (r.strategy, r.mode)).collect();
    keys.sort_by_key(|(s, m)| (s.name(), format!("{m:?}")));
    keys.dedup();

    let groups = keys
        .into_iter()
        .map(|(strategy, mode)| {
            let members: Vec<&CaseResultRow> =
                rows.iter().filter(|r| r.strategy == strategy && r.mode == mode).collect();
            let cases: std::collections::BTreeSet<&str> =
                members.iter().map(|r| r.case_id.as_str()).collect();
            let seeds: std::collections::BTreeSet<u64> =
                members.iter().map(|r| r.seed).collect();
            let mean_of = |f: fn(&CaseResultRow) -> f64| {
                members.iter().map(|r| f(r)).sum::<f64>() / members.len() as f64
            };
            let mut cost = CostLedger::default();
            for r in &members {
                cost.generation_calls += r.cost.generation_calls;
                cost.lightweight_calls += r.cost.lightweight_calls;
                cost.tool_executions += r.cost.tool_executions;
                cost.input_chars += r.cost.input_chars;
                cost.output_chars += r.cost.output_chars;
            }
            GroupReport {
                strategy,
                mode,
                rows: members.len(),
                cases: cases.len(),
                seeds: seeds.len(),
                success: seeded_rate(&members, |r| r.success),
                first_pass_success: seeded_rate(&members, |r| r.first_pass_success),
                tool_match_rate: mean_of(|r| r.tool_match_rate),
                action_identification_accuracy: mean_of(|r| r.action_identification_accuracy),
                mean_branches: members.iter().map(|r| r.branches.len()).sum::<usize>() as f64
                    / members.len() as f64,
                cost,
            }
        })
        .collect();

    let samples = rows
        .iter()
        .flat_map(|r| r.first_pass.iter())
        .map(|s| (s.entropy, s.is_error()));
    RunReport { groups, entropy: bin_entropy_errors(samples, 5) }
}

/// Fold every row file under `dir` into a [`RunReport`], writing
/// `report.json`, `aggregate.csv` and `entropy_table.csv` alongside the
/// rows. Rows are sorted before aggregation, so the result is independent of
/// file layout and line order, and re-running overwrites the same bytes.
pub fn aggregate(dir: &Path) -> Result<RunReport, MetricsError> {
    let mut rows = Vec::new();
    for file in row_files(dir)? {
        rows.extend(read_rows(&file)?);
    }
    if rows.is_empty() {
        return Err(MetricsError::Empty(dir.to_owned()));
    }
    rows.sort_by(|a, b| {
        (a.strategy.name(), &a.case_id, a.seed).cmp(&(b.strategy.name(), &b.case_id, b.seed))
    });
    let report = report_for(&rows);

    let report_path = dir.join("report.json");
    let body = serde_json::to_string_pretty(&report).expect("report always serializes");
    fs::write(&report_path, body)
        .map_err(|source| MetricsError::Write { path: report_path, source })?;

    let csv_path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|source| MetricsError::Csv { path: csv_path.clone(), source })?;
    let mut emit = || -> csv::Result<()> {
        w.write_record([
            "strategy",
            "mode",
            "rows",
            "cases",
            "seeds",
            "success_mean",
            "success_stdev",
            "first_pass_mean",
            "first_pass_stdev",
            "tool_match_rate",
            "action_id_accuracy",
            "mean_branches",
            "generation_calls",
            "lightweight_calls",
            "tool_executions",
            "input_tokens",
            "output_tokens",
        ])?;
        for g in &report.groups {
            w.write_record([
                g.strategy.name().to_owned(),
                format!("{:?}", g.mode).to_lowercase(),
                g.rows.to_string(),
                g.cases.to_string(),
                g.seeds.to_string(),
                format!("{:.6}", g.success.mean),
                format!("{:.6}", g.success.stdev),
                format!("{:.6}", g.first_pass_success.mean),
                format!("{:.6}", g.first_pass_success.stdev),
                format!("{:.6}", g.tool_match_rate),
                format!("{:.6}", g.action_identification_accuracy),
                format!("{:.6}", g.mean_branches),
                g.cost.generation_calls.to_string(),
                g.cost.lightweight_calls.to_string(),
                g.cost.tool_executions.to_string(),
                g.cost.input_tokens().to_string(),
                g.cost.output_tokens().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    emit().map_err(|source| MetricsError::Csv { path: csv_path.clone(), source })?;

    let table_path = dir.join("entropy_table.csv");
    let mut w = csv::Writer::from_path(&table_path)
        .map_err(|source| MetricsError::Csv { path: table_path.clone(), source })?;
    let mut emit = || -> csv::Result<()> {
        w.write_record(["entropy_lo", "entropy_hi", "steps", "errors", "error_rate"])?;
        for bin in &report.entropy.bins {
            w.write_record([
                format!("{:.6}", bin.lo),
                format!("{:.6}", bin.hi),
                bin.steps.to_string(),
                bin.errors.to_string(),
                format!("{:.6}", bin.error_rate()),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    emit().map_err(|source| MetricsError::Csv { path: table_path.clone(), source })?;

    Ok(report)
}
