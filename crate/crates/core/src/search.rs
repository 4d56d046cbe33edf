//! Trajectory search over a case's plan.
//!
//! Phase 1 walks the plan once, deciding every substep with the policy and
//! recording a [`StepDecisionRecord`] (decision distribution + entropy). If
//! the first pass already passes the judge, done. Otherwise phase 2 revisits
//! substeps in descending entropy order: for each, the alternatives that
//! cleared the probability threshold are substituted one at a time, the
//! trajectory prefix is replayed from recorded observations, and everything
//! downstream is re-decided and re-executed. The first branch the judge
//! accepts wins. A branch budget (global and per-substep) bounds the extra
//! work; baselines reuse the same machinery with branching disabled
//! (`greedy`, `self_consistency`) or with the visitation order shuffled
//! (`random_branch`).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    Action, ArgValue, Case, Literal, Payload, PlanNode, SubstepAddr, ToolChoice,
};
use crate::entropy::{filter_candidates, vote_entropy, DistEntry, StepDecisionRecord};
use crate::policy::{retrieve_candidates, Candidate, DecisionContext, Policy, PolicyError};
use crate::seed::SeedCtx;
use crate::simulator::{execute, judge_success, Observation, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One pass, one sample per substep.
    Greedy,
    /// One pass, majority vote over `m` samples per substep.
    SelfConsistency,
    /// Two-phase search, branch points ordered by decision entropy.
    Egb,
    /// Two-phase search, branch points visited in seeded random order.
    RandomBranch,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "self_consistency" => Ok(Strategy::SelfConsistency),
            "egb" => Ok(Strategy::Egb),
            "random_branch" => Ok(Strategy::RandomBranch),
            other => Err(format!(
                "unknown strategy {other:?} (expected greedy, self_consistency, egb, random_branch)"
            )),
        }
    }
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::SelfConsistency => "self_consistency",
            Strategy::Egb => "egb",
            Strategy::RandomBranch => "random_branch",
        }
    }
}

/// How phase 1 turns a policy into one decision per substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// `m` full samples, majority vote, vote entropy.
    Sampling,
    /// One index-distribution probe plus one parameter generation; entropy
    /// straight from the distribution. Falls back to sampling per substep
    /// when the policy cannot provide distributions.
    Logits,
}

/// Branch budget: `total` caps extra trajectories across the whole case,
/// `per_step` caps attempts at any single substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchBudget {
    pub total: usize,
    pub per_step: usize,
}

impl BranchBudget {
    /// Budget equivalent to "at most `b` trajectories in total": the first
    /// pass consumes one, leaving `b - 1` branches.
    pub fn trajectory_cap(b: usize) -> BranchBudget {
        BranchBudget { total: b.saturating_sub(1), per_step: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: DecisionMode,
    /// Samples per substep in sampling mode (and in logits fallback).
    pub m: usize,
    /// Minimum decision probability for a bucket to qualify as a branch
    /// alternative.
    pub tau: f64,
    /// Candidate-retrieval depth per substep.
    pub k: usize,
    pub budget: BranchBudget,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: DecisionMode::Sampling,
            m: 10,
            tau: 0.01,
            k: 50,
            budget: BranchBudget::trajectory_cap(5),
        }
    }
}

/// Abstract cost counters. Generation calls produce a complete action
/// (samples, parameter generations); lightweight calls are single
/// index-distribution probes. Character counts approximate tokens at four
/// characters apiece and count the prompt once per call that sends it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub generation_calls: u64,
    pub lightweight_calls: u64,
    pub tool_executions: u64,
    pub input_chars: u64,
    pub output_chars: u64,
}

impl CostLedger {
    pub fn input_tokens(&self) -> u64 {
        self.input_chars / 4
    }

    pub fn output_tokens(&self) -> u64 {
        self.output_chars / 4
    }
}

/// One executed substep: the action as the simulator saw it (references
/// already resolved) and what came back.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedStep {
    pub substep: SubstepAddr,
    pub action: Action,
    pub observation: Observation,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<ExecutedStep>,
}

impl Trajectory {
    pub fn observed(&self, addr: SubstepAddr) -> Option<&Observation> {
        self.steps.iter().find(|s| s.substep == addr).map(|s| &s.observation)
    }

    fn payload(&self, addr: SubstepAddr) -> Option<&Payload> {
        self.observed(addr).map(|o| &o.payload)
    }

    /// Compact textual transcript, one line per executed substep.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            match &s.action.tool {
                ToolChoice::Tool(name) => out.push_str(&format!(
                    "{}: {}({}) => {}\n",
                    s.substep,
                    name,
                    serde_json::to_string(&s.action.args).expect("serializable args"),
                    serde_json::to_string(&s.observation.payload).expect("serializable payload"),
                )),
                _ => out.push_str(&format!("{}: NO_OP\n", s.substep)),
            }
        }
        out
    }
}

/// One phase-2 attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub substep: SubstepAddr,
    pub alternative: ToolChoice,
    /// Entropy of the substep the branch came from.
    pub entropy: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub success: bool,
    pub first_pass_success: bool,
    /// Phase-1 decision records, in plan order. Always complete.
    pub first_pass: Vec<StepDecisionRecord>,
    /// The accepted trajectory, or the first pass when nothing was accepted.
    pub final_trajectory: Trajectory,
    /// Branches in attempt order, the accepted one (if any) last.
    pub branches: Vec<BranchRecord>,
    pub cost: CostLedger,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Run one case under one strategy. Fully determined by
/// `(case, policy configuration, strategy, config, run_seed)`.
pub fn run_case<P: Policy>(
    case: &Case,
    policy: &P,
    strategy: Strategy,
    config: &SearchConfig,
    run_seed: u64,
) -> Result<SearchOutcome, SearchError> {
    match strategy {
        Strategy::Greedy => {
            let config = SearchConfig {
                mode: DecisionMode::Sampling,
                m: 1,
                budget: BranchBudget { total: 0, per_step: 0 },
                ..config.clone()
            };
            Engine::new(case, policy, &config, run_seed).run(BranchOrder::EntropyDesc)
        }
        Strategy::SelfConsistency => {
            let config = SearchConfig {
                mode: DecisionMode::Sampling,
                budget: BranchBudget { total: 0, per_step: 0 },
                ..config.clone()
            };
            Engine::new(case, policy, &config, run_seed).run(BranchOrder::EntropyDesc)
        }
        Strategy::Egb => Engine::new(case, policy, config, run_seed).run(BranchOrder::EntropyDesc),
        Strategy::RandomBranch => {
            Engine::new(case, policy, config, run_seed).run(BranchOrder::Shuffled)
        }
    }
}

enum BranchOrder {
    EntropyDesc,
    Shuffled,
}

struct Engine<'a, P: Policy> {
    case: &'a Case,
    policy: &'a P,
    config: &'a SearchConfig,
    run_seed: u64,
    cost: CostLedger,
}

impl<'a, P: Policy> Engine<'a, P> {
    fn new(case: &'a Case, policy: &'a P, config: &'a SearchConfig, run_seed: u64) -> Self {
        Engine { case, policy, config, run_seed, cost: CostLedger::default() }
    }

    fn run(mut self, order: BranchOrder) -> Result<SearchOutcome, SearchError> {
        let plan = crate::dataset::plan_substeps(self.case);
        let (records, trajectory) = self.first_pass(&plan)?;
        let first_pass_success = judge_success(self.case, |a| trajectory.observed(a));
        if first_pass_success || self.config.budget.total == 0 {
            return Ok(SearchOutcome {
                success: first_pass_success,
                first_pass_success,
                first_pass: records,
                final_trajectory: trajectory,
                branches: Vec::new(),
                cost: self.cost,
            });
        }
        self.branch_pass(&plan, records, trajectory, order)
    }

    // ---- phase 1 -----------------------------------------------------

    fn first_pass(
        &mut self,
        plan: &[&PlanNode],
    ) -> Result<(Vec<StepDecisionRecord>, Trajectory), SearchError> {
        let mut trajectory = Trajectory::default();
        let mut records = Vec::with_capacity(plan.len());
        for node in plan {
            let history = trajectory.render();
            let (entropy, distribution, emitted) = self.decide(node, &history)?;
            let step = self.execute_step(node, emitted, &trajectory)?;
            records.push(StepDecisionRecord {
                substep: step.substep,
                entropy,
                distribution,
                executed: step.action.clone(),
                observation: step.observation.clone(),
            });
            trajectory.steps.push(step);
        }
        Ok((records, trajectory))
    }

    /// Decide one substep: entropy, decision distribution, emitted action.
    fn decide(
        &mut self,
        node: &PlanNode,
        history: &str,
    ) -> Result<(f64, Vec<DistEntry>, Action), SearchError> {
        let candidates = retrieve_candidates(self.case, node, self.config.k);
        let ctx = DecisionContext {
            case_id: &self.case.id,
            query: &self.case.query,
            substep: node,
            history,
            candidates: &candidates,
        };

        if self.config.mode == DecisionMode::Logits {
            match self.policy.index_distribution(&ctx) {
                Ok(dist) => {
                    let prompt_len = ctx.render_prompt().len() as u64;
                    self.cost.lightweight_calls += 1;
                    self.cost.input_chars += prompt_len;

                    let best = dist.argmax();
                    let candidate = candidates.get(best).expect("argmax within candidates");
                    let emitted = self.generate(&ctx, candidate)?;

                    let mut distribution: Vec<DistEntry> = dist
                        .probs
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(i, p)| DistEntry {
                            choice: candidates.get(i).expect("index within candidates").choice(),
                            prob: *p,
                            rank: i,
                            calls: Vec::new(),
                        })
                        .collect();
                    distribution.sort_by(|a, b| {
                        b.prob
                            .partial_cmp(&a.prob)
                            .unwrap()
                            .then(a.rank.cmp(&b.rank))
                            .then(a.choice.name().cmp(b.choice.name()))
                    });
                    return Ok((dist.entropy(), distribution, emitted));
                }
                Err(PolicyError::Unsupported) => {} // fall through to sampling
                Err(e) => return Err(e.into()),
            }
        }

        let seed = self.step_seed("phase1", node, None);
        let samples = self.policy.sample_actions(&ctx, self.config.m, seed)?;
        self.charge_samples(&ctx, &samples);
        let vote = vote_entropy(&samples, |c| candidates.rank_of(c));
        Ok((vote.entropy, vote.distribution, vote.majority))
    }

    // ---- phase 2 -----------------------------------------------------

    fn branch_pass(
        &mut self,
        plan: &[&PlanNode],
        records: Vec<StepDecisionRecord>,
        first_trajectory: Trajectory,
        order: BranchOrder,
    ) -> Result<SearchOutcome, SearchError> {
        let mut visit: Vec<usize> = (0..records.len()).collect();
        match order {
            // Stable sort: equal entropies keep plan order, so earlier
            // substeps are revisited first.
            BranchOrder::EntropyDesc => {
                visit.sort_by(|a, b| records[*b].entropy.partial_cmp(&records[*a].entropy).unwrap())
            }
            BranchOrder::Shuffled => {
                let mut rng = SeedCtx::new(self.run_seed)
                    .with_str("branch-order")
                    .with_str(&self.case.id)
                    .rng();
                visit.shuffle(&mut rng);
            }
        }

        let mut branches: Vec<BranchRecord> = Vec::new();
        let mut used = 0usize;

        for rec_idx in visit {
            let record = &records[rec_idx];
            let kept = filter_candidates(
                &record.distribution,
                self.config.tau,
                Some(record.executed_choice()),
            );
            let alternatives: Vec<&DistEntry> = kept
                .iter()
                .filter(|e| {
                    e.choice != *record.executed_choice() && e.choice != ToolChoice::Invalid
                })
                .collect();

            for (used_here, alt) in alternatives.into_iter().enumerate() {
                if used >= self.config.budget.total {
                    return Ok(SearchOutcome {
                        success: false,
                        first_pass_success: false,
                        first_pass: records.clone(),
                        final_trajectory: first_trajectory,
                        branches,
                        cost: self.cost,
                    });
                }
                if used_here >= self.config.budget.per_step {
                    break;
                }

                let trajectory =
                    self.run_branch(plan, &first_trajectory, rec_idx, alt, used)?;
                let success = judge_success(self.case, |a| trajectory.observed(a));
                used += 1;
                branches.push(BranchRecord {
                    substep: record.substep,
                    alternative: alt.choice.clone(),
                    entropy: record.entropy,
                    success,
                });
                if success {
                    return Ok(SearchOutcome {
                        success: true,
                        first_pass_success: false,
                        first_pass: records.clone(),
                        final_trajectory: trajectory,
                        branches,
                        cost: self.cost,
                    });
                }
            }
        }

        Ok(SearchOutcome {
            success: false,
            first_pass_success: false,
            first_pass: records,
            final_trajectory: first_trajectory,
            branches,
            cost: self.cost,
        })
    }

    /// Execute one branch: replay the prefix, substitute the alternative at
    /// the branch point, then re-decide and execute everything downstream
    /// with fresh single samples.
    fn run_branch(
        &mut self,
        plan: &[&PlanNode],
        first: &Trajectory,
        branch_idx: usize,
        alt: &DistEntry,
        attempt: usize,
    ) -> Result<Trajectory, SearchError> {
        let mut trajectory = Trajectory { steps: first.steps[..branch_idx].to_vec() };
        let node = plan[branch_idx];

        let emitted = if let Some(cached) = alt.calls.first() {
            cached.clone()
        } else {
            match &alt.choice {
                ToolChoice::NoOp => Action::noop(),
                ToolChoice::Tool(_) => {
                    let candidates = retrieve_candidates(self.case, node, self.config.k);
                    let history = trajectory.render();
                    let ctx = DecisionContext {
                        case_id: &self.case.id,
                        query: &self.case.query,
                        substep: node,
                        history: &history,
                        candidates: &candidates,
                    };
                    let rank = candidates
                        .rank_of(&alt.choice)
                        .expect("branch alternatives come from the candidate list");
                    let candidate = candidates.get(rank).expect("rank within candidates").clone();
                    self.generate(&ctx, &candidate)?
                }
                ToolChoice::Invalid => unreachable!("invalid buckets are never branched"),
            }
        };
        let step = self.execute_step(node, emitted, &trajectory)?;
        trajectory.steps.push(step);

        for downstream in &plan[branch_idx + 1..] {
            let history = trajectory.render();
            let candidates = retrieve_candidates(self.case, downstream, self.config.k);
            let ctx = DecisionContext {
                case_id: &self.case.id,
                query: &self.case.query,
                substep: downstream,
                history: &history,
                candidates: &candidates,
            };
            let seed = self.step_seed("branch", downstream, Some(attempt));
            let samples = self.policy.sample_actions(&ctx, 1, seed)?;
            self.charge_samples(&ctx, &samples);
            let mut action = samples.into_iter().next().expect("one sample requested");
            if action.tool == ToolChoice::Invalid {
                action = Action::noop();
            }
            let step = self.execute_step(downstream, action, &trajectory)?;
            trajectory.steps.push(step);
        }
        Ok(trajectory)
    }

    // ---- shared helpers ----------------------------------------------

    /// Resolve references leniently and execute. A reference into a substep
    /// that produced nothing usable becomes an inert sentinel literal — the
    /// call proceeds, misses the dictionary, and the mismatch propagates to
    /// the judge instead of aborting the trajectory.
    fn execute_step(
        &mut self,
        node: &PlanNode,
        emitted: Action,
        trajectory: &Trajectory,
    ) -> Result<ExecutedStep, SearchError> {
        let mut resolved = emitted;
        for value in resolved.args.values_mut() {
            if let ArgValue::Ref(r) = value {
                let literal = trajectory
                    .payload(r.substep)
                    .and_then(|p| p.get(&r.field))
                    .cloned()
                    .unwrap_or_else(|| {
                        Literal::Str(format!("__unresolved__{}.{}", r.substep, r.field))
                    });
                *value = ArgValue::Literal(literal);
            }
        }
        let observation = execute(self.case, &resolved)?;
        if resolved.tool.is_tool() {
            self.cost.tool_executions += 1;
        }
        Ok(ExecutedStep {
            substep: node.substep_addr().expect("plan substeps carry addresses"),
            action: resolved,
            observation,
        })
    }

    fn generate(
        &mut self,
        ctx: &DecisionContext<'_>,
        candidate: &Candidate,
    ) -> Result<Action, SearchError> {
        let action = self.policy.generate_params(ctx, candidate)?;
        self.cost.generation_calls += 1;
        self.cost.input_chars += ctx.render_prompt().len() as u64;
        self.cost.output_chars += rendered_len(&action);
        Ok(action)
    }

    fn charge_samples(&mut self, ctx: &DecisionContext<'_>, samples: &[Action]) {
        let prompt_len = ctx.render_prompt().len() as u64;
        self.cost.generation_calls += samples.len() as u64;
        self.cost.input_chars += prompt_len * samples.len() as u64;
        self.cost.output_chars += samples.iter().map(rendered_len).sum::<u64>();
    }

    fn step_seed(&self, tag: &str, node: &PlanNode, attempt: Option<usize>) -> u64 {
        let addr = node.substep_addr().expect("plan substeps carry addresses");
        let mut ctx = SeedCtx::new(self.run_seed).with_str(tag).with_str(&self.case.id);
        if let Some(a) = attempt {
            ctx = ctx.with_u64(a as u64);
        }
        ctx.with_u64(addr.step as u64).with_u64(addr.sub as u64).seed()
    }
}

fn rendered_len(action: &Action) -> u64 {
    serde_json::to_string(action).map(|s| s.len() as u64).unwrap_or(0)
}
