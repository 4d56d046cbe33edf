//! Synthetic case generation.
//!
//! Builds plan/tool/dictionary cases whose difficulty is fully dialed in:
//! plan length, no-op substep fraction, inter-step dependency density,
//! toolset size, per-step confusable distractors, and an oracle fault
//! profile pinning where decisions go wrong and how badly. Every generated
//! case is solvable by construction — executing the reference plan hits a
//! grounded dictionary entry at every tool substep and the judge accepts the
//! final payload — and generation is byte-deterministic in the seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    Action, ArgSpec, ArgValue, Case, FieldSpec, Literal, NodeIndex, NodeKind, OutputRef, Payload,
    PlanNode, SemanticType, SimDefault, SimEntry, SimulationDictionary, SubstepAddr, ToolSpec,
    Violation, CATEGORIES,
};
use crate::policy::oracle::{CaseBehavior, ConfusionEntry, OracleSpec, StepBehavior};
use crate::seed::SeedCtx;
use crate::simulator::{canonicalize, dict_violations, execute_reference_plan, judge_success};

const VERBS: [&str; 12] = [
    "create", "update", "validate", "activate", "cancel", "schedule", "archive", "assign",
    "review", "close", "submit", "audit",
];

const NOUNS: [&str; 16] = [
    "order", "shipment", "invoice", "customer", "promotion", "ticket", "subscription", "refund",
    "campaign", "warehouse", "contract", "quote", "account", "listing", "payment", "voucher",
];

fn describe(verb: &str, noun: &str) -> String {
    let template = match verb {
        "create" => "Create a new {} with the provided details.",
        "update" => "Update fields on an existing {}.",
        "validate" => "Validate that the {} is complete and consistent.",
        "activate" => "Activate the {} so it takes effect.",
        "cancel" => "Cancel the {} and stop further processing.",
        "schedule" => "Schedule the {} for a future date.",
        "archive" => "Archive the {} for long-term storage.",
        "assign" => "Assign the {} to the responsible owner.",
        "review" => "Review the {} for manual approval.",
        "close" => "Close out the {} once work is finished.",
        "submit" => "Submit the {} for downstream processing.",
        "audit" => "Audit the {} records for discrepancies.",
        _ => "Operate on the {}.",
    };
    template.replace("{}", noun)
}

/// Which tool steps a fault applies to. Steps are 1-based plan step numbers;
/// each step has exactly one tool substep, `i.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSelector {
    All,
    Steps(Vec<u32>),
}

impl FaultSelector {
    fn matches(&self, step: u32) -> bool {
        match self {
            FaultSelector::All => true,
            FaultSelector::Steps(steps) => steps.contains(&step),
        }
    }
}

/// Decision noise to install at the selected steps. Confusion weights apply
/// to the step's same-noun distractors in generation order; later profile
/// entries override earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub selector: FaultSelector,
    pub p_correct: f64,
    #[serde(default)]
    pub confusion_weights: Vec<f64>,
    #[serde(default)]
    pub noop_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_cases: usize,
    /// Inclusive range of tool-bearing plan steps per case.
    pub steps: (usize, usize),
    /// Total tools per case: references + their distractors + unrelated filler.
    pub toolset_size: usize,
    /// Same-noun confusable tools generated per reference tool.
    pub distractors_per_step: usize,
    /// Fraction of steps that also get a no-op review substep (`i.2`).
    pub no_tool_fraction: f64,
    /// Fraction of steps 2..=n whose call consumes the previous step's output.
    pub dependency_density: f64,
    /// Inclusive range of declared arguments per tool.
    pub args_per_tool: (usize, usize),
    pub fault_profile: Vec<FaultSpec>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_cases: 10,
            steps: (4, 8),
            toolset_size: 24,
            distractors_per_step: 2,
            no_tool_fraction: 0.25,
            dependency_density: 0.5,
            args_per_tool: (2, 4),
            fault_profile: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("infeasible generator configuration: {0}")]
    Infeasible(String),
}

fn check_config(config: &GenConfig) -> Result<(), GenError> {
    let bad = |msg: String| Err(GenError::Infeasible(msg));
    let (lo, hi) = config.steps;
    if lo == 0 || lo > hi {
        return bad(format!("step range {lo}..={hi} is empty or starts at zero"));
    }
    if hi > NOUNS.len() {
        return bad(format!("at most {} steps per case (one noun each)", NOUNS.len()));
    }
    let (alo, ahi) = config.args_per_tool;
    if alo == 0 || alo > ahi || ahi > 6 {
        return bad(format!("argument range {alo}..={ahi} must sit inside 1..=6"));
    }
    if config.distractors_per_step + 1 > VERBS.len() {
        return bad(format!(
            "{} distractors per step exceeds the verb pool",
            config.distractors_per_step
        ));
    }
    let needed = hi * (1 + config.distractors_per_step);
    if config.toolset_size < needed {
        return bad(format!(
            "toolset size {} cannot hold {} references plus {} distractors each",
            config.toolset_size, hi, config.distractors_per_step
        ));
    }
    if config.toolset_size > 99 {
        return bad("toolset size is capped at 99 tools per case".into());
    }
    for (frac, what) in
        [(config.no_tool_fraction, "no_tool_fraction"), (config.dependency_density, "dependency_density")]
    {
        if !(0.0..=1.0).contains(&frac) {
            return bad(format!("{what} {frac} outside [0, 1]"));
        }
    }
    for (i, fault) in config.fault_profile.iter().enumerate() {
        if !(0.0..=1.0).contains(&fault.p_correct) {
            return bad(format!("fault {i}: p_correct {} outside [0, 1]", fault.p_correct));
        }
        if fault.confusion_weights.len() > config.distractors_per_step {
            return bad(format!(
                "fault {i}: {} confusion weights but only {} distractors per step",
                fault.confusion_weights.len(),
                config.distractors_per_step
            ));
        }
        if fault.confusion_weights.iter().any(|w| *w < 0.0) || fault.noop_weight < 0.0 {
            return bad(format!("fault {i}: negative weight"));
        }
        if fault.p_correct < 1.0
            && fault.noop_weight == 0.0
            && fault.confusion_weights.iter().all(|w| *w == 0.0)
        {
            return bad(format!("fault {i}: residual mass with nowhere to go"));
        }
        if let FaultSelector::Steps(steps) = &fault.selector {
            if steps.contains(&0) {
                return bad(format!("fault {i}: step numbers are 1-based"));
            }
        }
    }
    Ok(())
}

/// Generate a corpus and its oracle behavior sidecar.
pub fn generate(config: &GenConfig) -> Result<(Vec<Case>, OracleSpec), GenError> {
    check_config(config)?;
    let mut cases = Vec::with_capacity(config.n_cases);
    let mut oracle = OracleSpec::default();
    for idx in 0..config.n_cases {
        let (case, behavior) = generate_case(config, idx);
        if !behavior.steps.is_empty() {
            oracle.cases.insert(case.id.clone(), behavior);
        }
        cases.push(case);
    }
    Ok((cases, oracle))
}

struct StepPlan {
    step: u32,
    verb: &'static str,
    noun: &'static str,
    tool: String,
    distractors: Vec<String>,
    has_noop_substep: bool,
    depends_on_previous: bool,
}

fn generate_case(config: &GenConfig, idx: usize) -> (Case, CaseBehavior) {
    let mut rng = SeedCtx::new(config.seed).with_str("case").with_u64(idx as u64).rng();
    let id = format!("case-{:08x}-{idx:04}", config.seed);
    let category = CATEGORIES[rng.gen_range(0..CATEGORIES.len())].to_owned();

    let n_steps = rng.gen_range(config.steps.0..=config.steps.1);

    // One noun per step, no repeats; leftovers become filler material.
    let mut nouns: Vec<&'static str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);

    // Exact structural counts, placed uniformly.
    let noop_count = (config.no_tool_fraction * n_steps as f64).round() as usize;
    let mut step_order: Vec<usize> = (1..=n_steps).collect();
    step_order.shuffle(&mut rng);
    let noop_steps: BTreeSet<usize> = step_order.iter().take(noop_count).copied().collect();

    let dep_eligible = n_steps.saturating_sub(1);
    let dep_count = (config.dependency_density * dep_eligible as f64).round() as usize;
    let mut dep_order: Vec<usize> = (2..=n_steps).collect();
    dep_order.shuffle(&mut rng);
    let dep_steps: BTreeSet<usize> = dep_order.iter().take(dep_count).copied().collect();

    let mut steps: Vec<StepPlan> = Vec::with_capacity(n_steps);
    for i in 1..=n_steps {
        let noun = nouns[i - 1];
        let mut verbs: Vec<&'static str> = VERBS.to_vec();
        verbs.shuffle(&mut rng);
        let verb = verbs[0];
        let distractors = verbs[1..=config.distractors_per_step]
            .iter()
            .map(|v| format!("{v}_{noun}"))
            .collect();
        steps.push(StepPlan {
            step: i as u32,
            verb,
            noun,
            tool: format!("{verb}_{noun}"),
            distractors,
            has_noop_substep: noop_steps.contains(&i),
            depends_on_previous: dep_steps.contains(&i),
        });
    }

    // Tool specs: references first, then their distractors (same schema,
    // different verb), then unrelated filler up to the requested size.
    let mut toolset: Vec<ToolSpec> = Vec::with_capacity(config.toolset_size);
    let mut arg_specs_per_step: Vec<Vec<ArgSpec>> = Vec::with_capacity(n_steps);
    for (pos, sp) in steps.iter().enumerate() {
        let n_args = rng.gen_range(config.args_per_tool.0..=config.args_per_tool.1);
        let first_name = if sp.depends_on_previous {
            format!("{}_id", steps[pos - 1].noun)
        } else {
            format!("{}_code", sp.noun)
        };
        let mut args = vec![ArgSpec {
            name: first_name,
            semantic_type: SemanticType::String,
            required: true,
        }];
        let extras = [
            ("quantity", SemanticType::Integer),
            ("amount", SemanticType::Decimal),
            ("effective_date", SemanticType::Date),
            ("expedited", SemanticType::Boolean),
            ("notes", SemanticType::String),
        ];
        for (name, ty) in extras.iter().take(n_args - 1) {
            args.push(ArgSpec { name: (*name).into(), semantic_type: *ty, required: true });
        }
        let results = vec![
            FieldSpec { name: format!("{}_id", sp.noun), semantic_type: SemanticType::String },
            FieldSpec { name: "status".into(), semantic_type: SemanticType::String },
        ];
        toolset.push(ToolSpec {
            name: sp.tool.clone(),
            description: describe(sp.verb, sp.noun),
            arguments: args.clone(),
            results: results.clone(),
        });
        arg_specs_per_step.push(args);
    }
    for (pos, sp) in steps.iter().enumerate() {
        for d in &sp.distractors {
            let verb = d.split('_').next().unwrap_or_default();
            toolset.push(ToolSpec {
                name: d.clone(),
                description: describe(verb, sp.noun),
                arguments: arg_specs_per_step[pos].clone(),
                results: toolset[pos].results.clone(),
            });
        }
    }
    let mut taken: BTreeSet<String> = toolset.iter().map(|t| t.name.clone()).collect();
    while toolset.len() < config.toolset_size {
        let verb = VERBS[rng.gen_range(0..VERBS.len())];
        let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
        let name = format!("{verb}_{noun}");
        if !taken.insert(name.clone()) {
            continue;
        }
        toolset.push(ToolSpec {
            name,
            description: describe(verb, noun),
            arguments: vec![ArgSpec {
                name: format!("{noun}_code"),
                semantic_type: SemanticType::String,
                required: true,
            }],
            results: vec![FieldSpec {
                name: format!("{noun}_id"),
                semantic_type: SemanticType::String,
            }],
        });
    }

    // Plan, grounded dictionary and oracle behavior, step by step.
    let mut plan: Vec<PlanNode> = Vec::new();
    let mut entries: Vec<SimEntry> = Vec::new();
    let mut query_clauses: Vec<String> = Vec::new();
    let mut behavior = CaseBehavior::default();
    let mut prev_id_value: Option<String> = None;
    let mut final_reference = Payload::new();

    for (pos, sp) in steps.iter().enumerate() {
        let id_value = format!("{}-{:08x}-{idx:04}-{}", sp.noun, config.seed, sp.step);
        let mut outcome = Payload::new();
        outcome.insert(format!("{}_id", sp.noun), Literal::Str(id_value.clone()));
        outcome.insert("status".into(), Literal::Str("completed".into()));

        let mut action_args: BTreeMap<String, ArgValue> = BTreeMap::new();
        let mut entry_args: BTreeMap<String, String> = BTreeMap::new();
        for spec in &arg_specs_per_step[pos] {
            let (value, grounded) = if spec.name.ends_with("_id") && sp.depends_on_previous {
                let prev = &steps[pos - 1];
                let reference = OutputRef {
                    substep: SubstepAddr::new(prev.step, 1),
                    field: format!("{}_id", prev.noun),
                };
                let grounded =
                    prev_id_value.clone().expect("dependent steps follow a grounded step");
                (ArgValue::Ref(reference), Literal::Str(grounded))
            } else {
                let literal = match spec.semantic_type {
                    SemanticType::String if spec.name == "notes" => {
                        Literal::Str(format!("handle {} request {}", sp.noun, sp.step))
                    }
                    SemanticType::String => {
                        Literal::Str(format!("{}-code-{idx:04}-{}", sp.noun, sp.step))
                    }
                    SemanticType::Integer => Literal::Int(rng.gen_range(1..=999)),
                    SemanticType::Decimal => {
                        let whole = rng.gen_range(1..=999);
                        let tenth = rng.gen_range(1..=9);
                        Literal::Str(format!("{whole}.{tenth}"))
                    }
                    SemanticType::Date => {
                        let day = rng.gen_range(1..=28);
                        let month = rng.gen_range(1..=12);
                        Literal::Str(format!("2024-{month:02}-{day:02}"))
                    }
                    SemanticType::Boolean => Literal::Bool(rng.gen_bool(0.5)),
                };
                (ArgValue::Literal(literal.clone()), literal)
            };
            entry_args.insert(
                spec.name.clone(),
                canonicalize(&grounded, spec.semantic_type)
                    .expect("generated values are canonicalizable"),
            );
            action_args.insert(spec.name.clone(), value);
        }
        entries.push(SimEntry { tool: sp.tool.clone(), args: entry_args, outcome: outcome.clone() });

        plan.push(PlanNode {
            index: NodeIndex::Step(sp.step),
            text: format!("Step {}: handle the {}", sp.step, sp.noun),
            kind: NodeKind::HighLevel,
            reference_action: None,
        });
        plan.push(PlanNode {
            index: NodeIndex::Substep(SubstepAddr::new(sp.step, 1)),
            text: format!("{} the {} as requested", capitalize(sp.verb), sp.noun),
            kind: NodeKind::Substep,
            reference_action: Some(Action {
                tool: crate::dataset::ToolChoice::Tool(sp.tool.clone()),
                args: action_args,
            }),
        });
        if sp.has_noop_substep {
            plan.push(PlanNode {
                index: NodeIndex::Substep(SubstepAddr::new(sp.step, 2)),
                text: format!(
                    "Confirm the {} result from the previous call; no tool call is needed",
                    sp.noun
                ),
                kind: NodeKind::Substep,
                reference_action: None,
            });
        }

        query_clauses.push(format!("{} the {}", sp.verb, sp.noun));
        prev_id_value = Some(id_value);
        if pos + 1 == steps.len() {
            final_reference = outcome;
        }

        // Newest matching fault wins for this step.
        let fault = config
            .fault_profile
            .iter()
            .rev()
            .find(|f| f.selector.matches(sp.step))
            .cloned();
        if let Some(fault) = fault {
            if fault.p_correct < 1.0 {
                behavior.steps.insert(
                    SubstepAddr::new(sp.step, 1).to_string(),
                    StepBehavior {
                        p_correct: fault.p_correct,
                        confusion: sp
                            .distractors
                            .iter()
                            .zip(&fault.confusion_weights)
                            .filter(|(_, w)| **w > 0.0)
                            .map(|(tool, w)| ConfusionEntry { tool: tool.clone(), weight: *w })
                            .collect(),
                        noop_weight: fault.noop_weight,
                    },
                );
            }
        }
    }

    let defaults = toolset
        .iter()
        .map(|t| {
            let mut payload = Payload::new();
            payload.insert("status".into(), Literal::Str("no_record_found".into()));
            SimDefault { tool: t.name.clone(), default_outcome: payload }
        })
        .collect();

    let query = format!(
        "Work through this {} request end to end: {}.",
        category.to_lowercase(),
        query_clauses.join(", then ")
    );

    let case = Case {
        id,
        query,
        category,
        plan,
        toolset,
        sim_dict: SimulationDictionary { entries, defaults },
        final_reference,
    };
    (case, behavior)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Every check a corpus must pass before an experiment may use it:
/// per-case structural validation, dictionary canonicality/inertness, unique
/// ids, and golden-path solvability (the reference plan executes fully
/// grounded and the judge accepts it).
pub fn corpus_violations(cases: &[Case]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for case in cases {
        if !seen_ids.insert(case.id.clone()) {
            out.push(Violation {
                case_id: case.id.clone(),
                path: "id".into(),
                message: "duplicate case id".into(),
            });
        }
        out.extend(case.validate());
        out.extend(dict_violations(case));
        match execute_reference_plan(case) {
            Err(e) => out.push(Violation {
                case_id: case.id.clone(),
                path: "plan".into(),
                message: format!("reference plan failed to execute: {e}"),
            }),
            Ok(observed) => {
                let unmatched: Vec<String> = observed
                    .iter()
                    .filter(|(addr, obs)| {
                        !obs.matched
                            && case
                                .substep(*addr)
                                .is_some_and(|n| n.reference_action.is_some())
                    })
                    .map(|(addr, _)| addr.to_string())
                    .collect();
                if !unmatched.is_empty() {
                    out.push(Violation {
                        case_id: case.id.clone(),
                        path: "sim_dict".into(),
                        message: format!(
                            "reference calls missed the dictionary at {}",
                            unmatched.join(", ")
                        ),
                    });
                }
                let lookup = |addr: SubstepAddr| {
                    observed.iter().find(|(a, _)| *a == addr).map(|(_, o)| o)
                };
                if !judge_success(case, lookup) {
                    out.push(Violation {
                        case_id: case.id.clone(),
                        path: "final_reference".into(),
                        message: "judge rejects the reference plan's own outcome".into(),
                    });
                }
            }
        }
    }
    out
}
