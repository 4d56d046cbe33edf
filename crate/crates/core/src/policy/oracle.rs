//! Synthetic oracle policy with configurable miscalibration.
//!
//! The oracle knows each substep's reference action and emits it with
//! probability `p_correct`; the remaining mass is spread over a configured
//! confusion set of distractor tools (and optionally `NO_OP`). Because the
//! whole distribution is written down, the oracle is fully white-box: its
//! `index_distribution` is exact, and sampling converges to it. That makes
//! controlled experiments possible — fault locations, severities and shapes
//! are all dialed in from an [`OracleSpec`] sidecar.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Action, ArgValue, Case, Literal, SemanticType, SubstepAddr, ToolChoice, ToolSpec,
};
use crate::seed::SeedCtx;

use super::{Candidate, DecisionContext, IndexDistribution, Policy, PolicyError, Provenance};

/// One confusion target: a distractor tool and its relative weight within
/// the confusion mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub tool: String,
    pub weight: f64,
}

/// Behavior of the oracle at one substep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBehavior {
    /// Probability of emitting the substep's reference action.
    pub p_correct: f64,
    /// Distractors sharing the remaining `1 - p_correct`, proportionally to
    /// their weights.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub confusion: Vec<ConfusionEntry>,
    /// Relative weight for wrongly emitting `NO_OP` (action-identification
    /// noise). Competes with the confusion entries for the residual mass.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub noop_weight: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Default for StepBehavior {
    fn default() -> Self {
        StepBehavior { p_correct: 1.0, confusion: Vec::new(), noop_weight: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseBehavior {
    /// Substep address (`"2.1"`) → behavior. Unlisted substeps are noiseless.
    pub steps: BTreeMap<String, StepBehavior>,
}

/// Sidecar document configuring oracle behavior per case and substep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub cases: BTreeMap<String, CaseBehavior>,
}

impl OracleSpec {
    /// The noiseless oracle: every substep emits its reference action.
    pub fn noiseless() -> Self {
        OracleSpec::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PolicyError::Config(format!("reading {}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PolicyError::Config(format!("parsing {}: {e}", path.as_ref().display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
    }

    pub fn set(&mut self, case_id: &str, substep: SubstepAddr, behavior: StepBehavior) {
        self.cases
            .entry(case_id.to_owned())
            .or_default()
            .steps
            .insert(substep.to_string(), behavior);
    }
}

/// Oracle policy bound to one case.
pub struct OraclePolicy<'a> {
    case: &'a Case,
    behaviors: BTreeMap<SubstepAddr, StepBehavior>,
}

impl<'a> OraclePolicy<'a> {
    pub fn new(case: &'a Case, spec: &OracleSpec) -> Self {
        let mut behaviors = BTreeMap::new();
        if let Some(cb) = spec.cases.get(&case.id) {
            for (key, behavior) in &cb.steps {
                if let Ok(addr) = key.parse::<SubstepAddr>() {
                    behaviors.insert(addr, behavior.clone());
                }
            }
        }
        OraclePolicy { case, behaviors }
    }

    fn behavior(&self, addr: SubstepAddr) -> StepBehavior {
        self.behaviors.get(&addr).cloned().unwrap_or_default()
    }

    /// The configured distribution at this substep, restricted to the
    /// candidates actually on offer and renormalized. Returns the weighted
    /// choices plus the mass lost to the candidate restriction.
    fn row(&self, ctx: &DecisionContext<'_>) -> Result<(Vec<(ToolChoice, f64)>, f64), PolicyError> {
        let addr = ctx.substep.substep_addr().ok_or_else(|| {
            PolicyError::Config(format!("node {} is not a substep", ctx.substep.index))
        })?;
        let behavior = self.behavior(addr);
        if !(0.0..=1.0).contains(&behavior.p_correct) {
            return Err(PolicyError::Config(format!(
                "p_correct {} out of [0, 1] at substep {addr}",
                behavior.p_correct
            )));
        }

        let reference = crate::entropy::reference_choice(ctx.substep);
        let mut row: Vec<(ToolChoice, f64)> = vec![(reference, behavior.p_correct)];

        let residual = 1.0 - behavior.p_correct;
        if residual > 0.0 {
            let total_weight: f64 = behavior.confusion.iter().map(|c| c.weight).sum::<f64>()
                + behavior.noop_weight;
            if total_weight <= 0.0 {
                return Err(PolicyError::Config(format!(
                    "substep {addr}: p_correct < 1 but the confusion set is empty"
                )));
            }
            for entry in &behavior.confusion {
                if entry.weight < 0.0 {
                    return Err(PolicyError::Config(format!(
                        "substep {addr}: negative confusion weight for {:?}",
                        entry.tool
                    )));
                }
                row.push((
                    ToolChoice::Tool(entry.tool.clone()),
                    residual * entry.weight / total_weight,
                ));
            }
            if behavior.noop_weight > 0.0 {
                row.push((ToolChoice::NoOp, residual * behavior.noop_weight / total_weight));
            }
        }

        // Merge duplicate choices (a confusion entry may name the reference).
        let mut merged: Vec<(ToolChoice, f64)> = Vec::new();
        for (choice, p) in row {
            match merged.iter_mut().find(|(c, _)| *c == choice) {
                Some((_, q)) => *q += p,
                None => merged.push((choice, p)),
            }
        }

        let mut dropped = 0.0;
        merged.retain(|(choice, p)| {
            let keep = ctx.candidates.contains(choice);
            if !keep {
                dropped += p;
            }
            keep
        });
        let kept: f64 = merged.iter().map(|(_, p)| *p).sum();
        if kept <= 0.0 {
            return Err(PolicyError::Config(format!(
                "substep {addr}: no configured choice is among the {} candidates",
                ctx.candidates.len()
            )));
        }
        for (_, p) in &mut merged {
            *p /= kept;
        }
        Ok((merged, dropped))
    }

    /// The action emitted for a given choice: the reference action for the
    /// reference choice, an inert placeholder call otherwise.
    fn action_for(&self, ctx: &DecisionContext<'_>, choice: &ToolChoice) -> Action {
        let reference = crate::entropy::reference_choice(ctx.substep);
        if *choice == reference {
            return ctx
                .substep
                .reference_action
                .clone()
                .unwrap_or_else(Action::noop);
        }
        match choice {
            ToolChoice::NoOp => Action::noop(),
            ToolChoice::Invalid => Action { tool: ToolChoice::Invalid, args: BTreeMap::new() },
            ToolChoice::Tool(name) => match self.case.tool(name) {
                Some(spec) => placeholder_call(spec),
                None => Action { tool: ToolChoice::Tool(name.clone()), args: BTreeMap::new() },
            },
        }
    }
}

/// A schema-conforming but ungrounded call: every declared argument filled
/// with a fixed placeholder of the right semantic type. Placeholders are
/// reserved values no generated case uses in a grounded entry, so these
/// calls always take the default-outcome path.
pub fn placeholder_call(spec: &ToolSpec) -> Action {
    let args = spec
        .arguments
        .iter()
        .map(|a| {
            let value = match a.semantic_type {
                SemanticType::String => Literal::Str("unspecified".into()),
                SemanticType::Integer => Literal::Int(0),
                SemanticType::Decimal => Literal::Str("0".into()),
                SemanticType::Date => Literal::Str("1970-01-01".into()),
                SemanticType::Boolean => Literal::Bool(false),
            };
            (a.name.clone(), ArgValue::Literal(value))
        })
        .collect();
    Action { tool: ToolChoice::Tool(spec.name.clone()), args }
}

fn sample_choice(row: &[(ToolChoice, f64)], rng: &mut impl Rng) -> ToolChoice {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (choice, p) in row {
        acc += p;
        if draw < acc {
            return choice.clone();
        }
    }
    row.last().expect("non-empty row").0.clone()
}

impl Policy for OraclePolicy<'_> {
    fn sample_actions(
        &self,
        ctx: &DecisionContext<'_>,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Action>, PolicyError> {
        let (row, _) = self.row(ctx)?;
        let base = SeedCtx::new(seed).with_str("oracle-sample");
        (0..m)
            .map(|i| {
                let mut rng = base.with_u64(i as u64).rng();
                Ok(self.action_for(ctx, &sample_choice(&row, &mut rng)))
            })
            .collect()
    }

    fn index_distribution(&self, ctx: &DecisionContext<'_>) -> Result<IndexDistribution, PolicyError> {
        let (row, dropped) = self.row(ctx)?;
        let mut probs = vec![0.0; ctx.candidates.len()];
        for (choice, p) in &row {
            let rank = ctx
                .candidates
                .rank_of(choice)
                .expect("row is restricted to candidates");
            probs[rank] += p;
        }
        Ok(IndexDistribution { probs, provenance: Provenance::Direct, dropped_mass: dropped })
    }

    fn generate_params(
        &self,
        ctx: &DecisionContext<'_>,
        candidate: &Candidate,
    ) -> Result<Action, PolicyError> {
        Ok(self.action_for(ctx, &candidate.choice()))
    }
}
