//! Decision policies: given a substep and its context, produce an action.
//!
//! Policies come in two flavors. Every policy can *sample* complete actions
//! (tool + arguments). White-box policies can additionally expose a
//! probability distribution over an indexed candidate list, which the search
//! uses for single-forward-pass decisions and for uncertainty estimates
//! without repeated sampling. Index distributions may be native (the
//! [`oracle`] backend) or composed from per-digit token probabilities (the
//! [`remote`] backend, via [`digits::compose_digits`]).

pub mod digits;
pub mod oracle;
pub mod remote;

pub use digits::{compose_digits, DigitModel};
pub use oracle::{OraclePolicy, OracleSpec};
pub use remote::{RemoteConfig, RemotePolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Action, Case, PlanNode, ToolChoice, ToolSpec, NO_OP};
use crate::entropy::dist_entropy;

/// Hard cap on candidate-list size: indices stay representable as at most
/// two decimal digits.
pub const MAX_CANDIDATES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Tool(ToolSpec),
    NoOp,
}

impl Candidate {
    pub fn choice(&self) -> ToolChoice {
        match self {
            Candidate::Tool(t) => ToolChoice::Tool(t.name.clone()),
            Candidate::NoOp => ToolChoice::NoOp,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Candidate::Tool(t) => &t.name,
            Candidate::NoOp => NO_OP,
        }
    }

    pub fn description(&self) -> &str {
        match self {
            Candidate::Tool(t) => &t.description,
            Candidate::NoOp => "take no action for this substep",
        }
    }
}

/// Ordered candidate list for one substep: retrieved tools first, then the
/// `NO_OP` sentinel exactly once in last position.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    entries: Vec<Candidate>,
}

impl CandidateSet {
    /// Number of candidates `K`, including the `NO_OP` entry.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> Option<&Candidate> {
        self.entries.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.entries.iter()
    }

    /// Retrieval rank of a tool choice, if it is a candidate.
    pub fn rank_of(&self, choice: &ToolChoice) -> Option<usize> {
        self.entries.iter().position(|c| &c.choice() == choice)
    }

    pub fn contains(&self, choice: &ToolChoice) -> bool {
        self.rank_of(choice).is_some()
    }
}

/// Lexical candidate retrieval: score every tool by vocabulary overlap with
/// the current substep text (weight 2) and the task query (weight 1), keep
/// the top `k`, and append `NO_OP`. Tokens shorter than three characters are
/// ignored so articles and prepositions cannot dominate. Ties break toward
/// the lexicographically smaller tool name, so retrieval is fully
/// deterministic.
pub fn retrieve_candidates(case: &Case, substep: &PlanNode, k: usize) -> CandidateSet {
    let step_tokens = tokenize(&substep.text);
    let query_tokens = tokenize(&case.query);
    let mut scored: Vec<(i64, &ToolSpec)> = case
        .toolset
        .iter()
        .map(|tool| {
            let mut own = tokenize(&tool.name);
            own.extend(tokenize(&tool.description));
            let score: i64 = own
                .iter()
                .map(|t| 2 * step_tokens.contains(t) as i64 + query_tokens.contains(t) as i64)
                .sum();
            (score, tool)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.name.cmp(&b.1.name)));

    let take = k.min(MAX_CANDIDATES - 1);
    let mut entries: Vec<Candidate> = scored
        .into_iter()
        .take(take)
        .map(|(_, t)| Candidate::Tool(t.clone()))
        .collect();
    entries.push(Candidate::NoOp);
    CandidateSet { entries }
}

/// Lowercase alphanumeric tokens of length >= 3, deduplicated.
fn tokenize(text: &str) -> std::collections::BTreeSet<String> {
    let mut out = std::collections::BTreeSet::new();
    let mut cur = String::new();
    let mut flush = |cur: &mut String| {
        if cur.chars().count() >= 3 {
            out.insert(std::mem::take(cur));
        } else {
            cur.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else {
            flush(&mut cur);
        }
    }
    flush(&mut cur);
    out
}

/// Everything a policy may look at when deciding one substep.
#[derive(Debug)]
pub struct DecisionContext<'a> {
    pub case_id: &'a str,
    pub query: &'a str,
    pub substep: &'a PlanNode,
    /// Rendered trajectory prefix: one line per already-executed substep.
    pub history: &'a str,
    pub candidates: &'a CandidateSet,
}

impl DecisionContext<'_> {
    /// The prompt a text backend would see. Also the basis for input-size
    /// accounting (characters / 4).
    pub fn render_prompt(&self) -> String {
        let mut out = String::new();
        out.push_str("Task: ");
        out.push_str(self.query);
        out.push_str("\nCompleted substeps:\n");
        out.push_str(if self.history.is_empty() { "(none)\n" } else { self.history });
        out.push_str(&format!(
            "Current substep {}: {}\nCandidates:\n",
            self.substep.index, self.substep.text
        ));
        for (i, c) in self.candidates.iter().enumerate() {
            out.push_str(&format!("{i}: {} - {}\n", c.name(), c.description()));
        }
        out.push_str(
            "Reply with the chosen action as JSON {\"tool\": name, \"args\": {...}} or NO_OP.\n",
        );
        out
    }
}

/// A probability distribution over the candidate indices `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexDistribution {
    /// One probability per candidate index; sums to 1.
    pub probs: Vec<f64>,
    pub provenance: Provenance,
    /// Probability mass discarded before normalization (non-digit tokens,
    /// out-of-range indices, non-candidate tools). Recorded in run reports.
    pub dropped_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Native per-candidate probabilities.
    Direct,
    /// Composed from first/second-digit token distributions.
    DigitComposed,
}

impl IndexDistribution {
    /// Index of the highest-probability candidate; ties go to the lowest
    /// index, i.e. the better-retrieved candidate.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        dist_entropy(&self.probs)
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy does not expose index distributions")]
    Unsupported,
    #[error("degenerate distribution: no probability mass on any candidate index")]
    DegenerateDistribution,
    #[error("invalid digit model: {0}")]
    InvalidDigitModel(String),
    #[error("policy configuration error: {0}")]
    Config(String),
    #[error("remote backend error: {0}")]
    Remote(String),
}

/// A per-substep decision maker.
///
/// Implementations must be deterministic functions of `(ctx, seed, their own
/// configuration)`; all randomness must flow through seeds derived per
/// sample index, so results do not depend on call order or worker count.
pub trait Policy {
    /// Draw `m` independent complete actions for the substep.
    fn sample_actions(
        &self,
        ctx: &DecisionContext<'_>,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Action>, PolicyError>;

    /// Full distribution over candidate indices from a single lightweight
    /// forward pass. `Err(Unsupported)` when the backend cannot provide one;
    /// callers then fall back to sampling.
    fn index_distribution(&self, ctx: &DecisionContext<'_>) -> Result<IndexDistribution, PolicyError>;

    /// Produce a complete action for one already-chosen candidate.
    fn generate_params(
        &self,
        ctx: &DecisionContext<'_>,
        candidate: &Candidate,
    ) -> Result<Action, PolicyError>;
}
