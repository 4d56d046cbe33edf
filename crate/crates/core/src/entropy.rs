//! Uncertainty estimation over per-substep tool decisions.
//!
//! In sampling mode the policy is queried `m` times and the empirical vote
//! distribution over tool names gives a Shannon entropy (natural log) for the
//! substep. In white-box mode the entropy comes straight from the policy's
//! index distribution. Either way the substep's decision is captured in a
//! [`StepDecisionRecord`], which phase 2 of the search later mines for
//! high-uncertainty branch points.

use std::collections::BTreeMap;

use crate::dataset::{Action, PlanNode, SubstepAddr, ToolChoice};
use crate::simulator::Observation;

/// One bucket of a per-substep decision distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DistEntry {
    pub choice: ToolChoice,
    pub prob: f64,
    /// Candidate-retrieval rank (position in the candidate list), used for
    /// deterministic tie-breaking. `usize::MAX` when not a candidate.
    pub rank: usize,
    /// Complete calls sampled for this bucket, in sampling order. Branching
    /// reuses the first one instead of paying for a fresh generation.
    pub calls: Vec<Action>,
}

/// Everything the search needs to remember about one substep decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecisionRecord {
    pub substep: SubstepAddr,
    pub entropy: f64,
    /// Buckets with non-zero probability, ordered by probability descending
    /// (rank, then name, break ties). Entropy equals `-Σ p ln p` over these.
    pub distribution: Vec<DistEntry>,
    /// The action executed on the first pass, after reference resolution.
    pub executed: Action,
    pub observation: Observation,
}

impl StepDecisionRecord {
    pub fn executed_choice(&self) -> &ToolChoice {
        &self.executed.tool
    }
}

/// Shannon entropy in nats of a probability vector; `0 · ln 0 = 0`.
pub fn dist_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Outcome of a majority vote over sampled actions.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteSummary {
    /// First sampled call of the winning bucket.
    pub majority: Action,
    pub entropy: f64,
    pub distribution: Vec<DistEntry>,
}

/// Tally sampled actions into tool-name buckets (`NO_OP` is a bucket of its
/// own, as is the reserved `INVALID` marker for unparseable policy output),
/// compute the vote entropy, and pick the majority action.
///
/// `INVALID` votes count toward the distribution — they are genuine evidence
/// of uncertainty — but are never selected for execution; if every sample is
/// invalid the substep falls back to `NO_OP`. Vote ties break toward the
/// lowest retrieval rank, then the lexicographically smaller tool name.
pub fn vote_entropy(
    samples: &[Action],
    rank_of: impl Fn(&ToolChoice) -> Option<usize>,
) -> VoteSummary {
    assert!(!samples.is_empty(), "vote_entropy needs at least one sample");
    let mut buckets: BTreeMap<ToolChoice, Vec<Action>> = BTreeMap::new();
    for s in samples {
        buckets.entry(s.tool.clone()).or_default().push(s.clone());
    }

    let m = samples.len() as f64;
    let mut distribution: Vec<DistEntry> = buckets
        .into_iter()
        .map(|(choice, calls)| DistEntry {
            rank: rank_of(&choice).unwrap_or(usize::MAX),
            prob: calls.len() as f64 / m,
            choice,
            calls,
        })
        .collect();
    distribution.sort_by(|a, b| {
        b.prob
            .partial_cmp(&a.prob)
            .unwrap()
            .then(a.rank.cmp(&b.rank))
            .then(a.choice.name().cmp(b.choice.name()))
    });

    let entropy = dist_entropy(&distribution.iter().map(|e| e.prob).collect::<Vec<_>>());
    let majority = distribution
        .iter()
        .find(|e| e.choice != ToolChoice::Invalid)
        .map(|e| e.calls[0].clone())
        .unwrap_or_else(Action::noop);

    VoteSummary { majority, entropy, distribution }
}

/// Keep buckets with probability at least `tau`; the executed bucket is
/// always kept so the branch enumerator can locate and skip it. Order is
/// preserved. No renormalization — branch ordering only compares masses.
pub fn filter_candidates(
    distribution: &[DistEntry],
    tau: f64,
    executed: Option<&ToolChoice>,
) -> Vec<DistEntry> {
    distribution
        .iter()
        .filter(|e| e.prob >= tau || Some(&e.choice) == executed)
        .cloned()
        .collect()
}

/// The tool choice a substep's reference action asks for (`NO_OP` when the
/// substep needs no tool).
pub fn reference_choice(node: &PlanNode) -> ToolChoice {
    node.reference_action
        .as_ref()
        .map(|a| a.tool.clone())
        .unwrap_or(ToolChoice::NoOp)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EntropyBin {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    pub errors: usize,
}

impl EntropyBin {
    pub fn error_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.errors as f64 / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EntropyErrorTable {
    pub bins: Vec<EntropyBin>,
}

impl EntropyErrorTable {
    /// Bins that actually contain steps.
    pub fn occupied(&self) -> impl Iterator<Item = &EntropyBin> {
        self.bins.iter().filter(|b| b.steps > 0)
    }
}

/// Histogram first-pass decisions into `bins` equal-width entropy bins over
/// `[0, max observed entropy]` and count tool errors per bin. With no
/// samples the table is empty; when every entropy is zero a single
/// degenerate bin holds everything.
pub fn bin_entropy_errors(
    samples: impl IntoIterator<Item = (f64, bool)>,
    bins: usize,
) -> EntropyErrorTable {
    assert!(bins >= 2, "need at least two bins");
    let samples: Vec<(f64, bool)> = samples.into_iter().collect();
    if samples.is_empty() {
        return EntropyErrorTable { bins: Vec::new() };
    }
    let max = samples.iter().map(|(e, _)| *e).fold(0.0f64, f64::max);
    if max <= 0.0 {
        let mut bin = EntropyBin { lo: 0.0, hi: 0.0, steps: 0, errors: 0 };
        for (_, err) in &samples {
            bin.steps += 1;
            bin.errors += usize::from(*err);
        }
        return EntropyErrorTable { bins: vec![bin] };
    }

    let width = max / bins as f64;
    let mut table: Vec<EntropyBin> = (0..bins)
        .map(|i| EntropyBin {
            lo: i as f64 * width,
            hi: if i + 1 == bins { max } else { (i + 1) as f64 * width },
            steps: 0,
            errors: 0,
        })
        .collect();
    for (e, err) in samples {
        let idx = ((e / width) as usize).min(bins - 1);
        table[idx].steps += 1;
        table[idx].errors += usize::from(err);
    }
    EntropyErrorTable { bins: table }
}
