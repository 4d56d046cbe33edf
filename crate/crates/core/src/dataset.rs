//! Case files: multi-step plans, tool specifications, reference actions and
//! the per-case simulation dictionary.
//!
//! A case file is a UTF-8 JSON array of case objects. Each case carries a
//! natural-language `query`, a hierarchical `plan` (high-level steps broken
//! into substeps), the `toolset` visible to the agent, a `sim_dict` mapping
//! grounded tool invocations to outcomes, and the `final_reference` payload
//! that defines task success.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Task-category labels cases may carry.
pub const CATEGORIES: [&str; 12] = [
    "Product Management",
    "Inventory Management",
    "Order Processing",
    "Shipping & Fulfillment",
    "Pricing & Promotions",
    "Subscription Management",
    "Customer Service",
    "Returns & Refunds",
    "Analytics & Reporting",
    "Catalog Management",
    "Review Management",
    "Miscellaneous",
];

/// Marker used for the no-tool action bucket.
pub const NO_OP: &str = "NO_OP";
/// Marker for unparseable policy output. Never appears in case files.
pub const INVALID: &str = "INVALID";

const REF_PREFIX: &str = "OUTPUT_FROM_STEP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    String,
    Integer,
    Decimal,
    Date,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub semantic_type: SemanticType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub semantic_type: SemanticType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub arguments: Vec<ArgSpec>,
    pub results: Vec<FieldSpec>,
}

impl ToolSpec {
    pub fn argument(&self, name: &str) -> Option<&ArgSpec> {
        self.arguments.iter().find(|a| a.name == name)
    }

    pub fn result_field(&self, name: &str) -> Option<&FieldSpec> {
        self.results.iter().find(|f| f.name == name)
    }
}

/// Address of a substep: `step.sub`, e.g. `2.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubstepAddr {
    pub step: u32,
    pub sub: u32,
}

impl SubstepAddr {
    pub fn new(step: u32, sub: u32) -> Self {
        SubstepAddr { step, sub }
    }
}

impl fmt::Display for SubstepAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.step, self.sub)
    }
}

impl std::str::FromStr for SubstepAddr {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (a, b) = s.split_once('.').ok_or(())?;
        Ok(SubstepAddr { step: parse_index(a).ok_or(())?, sub: parse_index(b).ok_or(())? })
    }
}

impl Serialize for SubstepAddr {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubstepAddr {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(|_| serde::de::Error::custom(format!("invalid substep address {s:?}")))
    }
}

/// Plan-node index: a bare step number for high-level nodes, `i.j` for substeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeIndex {
    Step(u32),
    Substep(SubstepAddr),
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeIndex::Step(i) => write!(f, "{i}"),
            NodeIndex::Substep(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for NodeIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if let Some(i) = parse_index(&raw) {
            return Ok(NodeIndex::Step(i));
        }
        raw.parse::<SubstepAddr>()
            .map(NodeIndex::Substep)
            .map_err(|_| serde::de::Error::custom(format!("invalid plan index {raw:?}")))
    }
}

/// Strict non-negative integer: ASCII digits only (no sign, no leading blank).
fn parse_index(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    HighLevel,
    Substep,
}

/// A JSON-representable literal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x}"),
            Literal::Str(s) => write!(f, "{s}"),
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Str(s.to_owned())
    }
}

/// Reference to a result field produced by an earlier substep.
///
/// Serialized as the placeholder string `OUTPUT_FROM_STEP_<i>.<j>.<field>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputRef {
    pub substep: SubstepAddr,
    pub field: String,
}

impl OutputRef {
    /// Parse the placeholder form. Returns `None` for anything that does not
    /// match the grammar exactly (case-sensitive prefix, digit-only indices,
    /// identifier field name).
    pub fn parse(s: &str) -> Option<OutputRef> {
        let rest = s.strip_prefix(REF_PREFIX)?;
        let mut parts = rest.splitn(3, '.');
        let step = parse_index(parts.next()?)?;
        let sub = parse_index(parts.next()?)?;
        let field = parts.next()?;
        if !is_identifier(field) {
            return None;
        }
        Some(OutputRef { substep: SubstepAddr { step, sub }, field: field.to_owned() })
    }
}

impl fmt::Display for OutputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{REF_PREFIX}{}.{}", self.substep, self.field)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Argument value in an action: a literal, or a reference to an earlier output.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Literal(Literal),
    Ref(OutputRef),
}

impl Serialize for ArgValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ArgValue::Literal(l) => l.serialize(s),
            ArgValue::Ref(r) => s.collect_str(r),
        }
    }
}

impl<'de> Deserialize<'de> for ArgValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let lit = Literal::deserialize(d)?;
        if let Literal::Str(s) = &lit {
            if let Some(r) = OutputRef::parse(s) {
                return Ok(ArgValue::Ref(r));
            }
        }
        Ok(ArgValue::Literal(lit))
    }
}

/// What an agent does at one substep: call a named tool with arguments, do
/// nothing (`NO_OP`), or — for policy outputs only — an unparseable `INVALID`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ToolChoice {
    Tool(String),
    NoOp,
    Invalid,
}

impl ToolChoice {
    pub fn name(&self) -> &str {
        match self {
            ToolChoice::Tool(n) => n,
            ToolChoice::NoOp => NO_OP,
            ToolChoice::Invalid => INVALID,
        }
    }

    pub fn is_tool(&self) -> bool {
        matches!(self, ToolChoice::Tool(_))
    }
}

impl fmt::Display for ToolChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ToolChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ToolChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(match raw.as_str() {
            NO_OP => ToolChoice::NoOp,
            INVALID => ToolChoice::Invalid,
            _ => ToolChoice::Tool(raw),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub tool: ToolChoice,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, ArgValue>,
}

impl Action {
    pub fn noop() -> Action {
        Action { tool: ToolChoice::NoOp, args: BTreeMap::new() }
    }

    pub fn call(tool: &str, args: impl IntoIterator<Item = (&'static str, ArgValue)>) -> Action {
        Action {
            tool: ToolChoice::Tool(tool.to_owned()),
            args: args.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
        }
    }

    /// True when any argument is still an unresolved output reference.
    pub fn has_refs(&self) -> bool {
        self.args.values().any(|v| matches!(v, ArgValue::Ref(_)))
    }
}

/// Result payload of a simulated tool call: result field → literal.
pub type Payload = BTreeMap<String, Literal>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub index: NodeIndex,
    pub text: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_action: Option<Action>,
}

impl PlanNode {
    pub fn substep_addr(&self) -> Option<SubstepAddr> {
        match self.index {
            NodeIndex::Substep(a) => Some(a),
            NodeIndex::Step(_) => None,
        }
    }

    /// Tool name of the reference action, if this substep requires one.
    pub fn reference_tool(&self) -> Option<&str> {
        match &self.reference_action {
            Some(Action { tool: ToolChoice::Tool(n), .. }) => Some(n),
            _ => None,
        }
    }
}

/// One grounded invocation: canonical argument map → outcome payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEntry {
    pub tool: String,
    pub args: BTreeMap<String, String>,
    pub outcome: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDefault {
    pub tool: String,
    pub default_outcome: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDictionary {
    pub entries: Vec<SimEntry>,
    pub defaults: Vec<SimDefault>,
}

impl SimulationDictionary {
    pub fn default_outcome(&self, tool: &str) -> Option<&Payload> {
        self.defaults.iter().find(|d| d.tool == tool).map(|d| &d.default_outcome)
    }

    pub fn entries_for<'a>(&'a self, tool: &'a str) -> impl Iterator<Item = &'a SimEntry> {
        self.entries.iter().filter(move |e| e.tool == tool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub query: String,
    pub category: String,
    pub plan: Vec<PlanNode>,
    pub toolset: Vec<ToolSpec>,
    pub sim_dict: SimulationDictionary,
    pub final_reference: Payload,
}

impl Case {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.toolset.iter().find(|t| t.name == name)
    }

    pub fn substep(&self, addr: SubstepAddr) -> Option<&PlanNode> {
        self.plan
            .iter()
            .find(|n| n.kind == NodeKind::Substep && n.index == NodeIndex::Substep(addr))
    }

    /// Last substep in plan order whose reference action calls a tool. Its
    /// observation is what `final_reference` is judged against.
    pub fn final_tool_substep(&self) -> Option<&PlanNode> {
        self.plan
            .iter()
            .rev()
            .find(|n| n.kind == NodeKind::Substep && n.reference_tool().is_some())
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        macro_rules! fail {
            ($path:expr, $($msg:tt)*) => {
                v.push(Violation {
                    case_id: self.id.clone(),
                    path: $path.into(),
                    message: format!($($msg)*),
                })
            };
        }

        if self.id.is_empty() {
            fail!("id", "case id must be non-empty");
        }
        if !CATEGORIES.contains(&self.category.as_str()) {
            fail!("category", "unknown task category {:?}", self.category);
        }

        // Toolset: unique names, at least one result field each.
        let mut tool_names = BTreeSet::new();
        for (ti, tool) in self.toolset.iter().enumerate() {
            let path = format!("toolset[{ti}]");
            if !tool_names.insert(tool.name.as_str()) {
                fail!(path.clone(), "duplicate tool name {:?}", tool.name);
            }
            if tool.results.is_empty() {
                fail!(path.clone(), "tool {:?} declares no result fields", tool.name);
            }
            let mut arg_names = BTreeSet::new();
            for a in &tool.arguments {
                if !arg_names.insert(a.name.as_str()) {
                    fail!(path.clone(), "tool {:?} repeats argument {:?}", tool.name, a.name);
                }
            }
        }

        // Plan structure: high-level nodes introduce step numbers, substeps
        // attach to the most recent ones, indices strictly increase.
        let mut seen_steps = BTreeSet::new();
        let mut last_sub: Option<SubstepAddr> = None;
        let mut last_step = 0u32;
        let mut tool_substeps = Vec::new();
        for (ni, node) in self.plan.iter().enumerate() {
            let path = format!("plan[{ni}]");
            match (node.kind, node.index) {
                (NodeKind::HighLevel, NodeIndex::Step(i)) => {
                    if i <= last_step {
                        fail!(path.clone(), "high-level step {i} out of order");
                    }
                    last_step = i;
                    seen_steps.insert(i);
                    if node.reference_action.is_some() {
                        fail!(path.clone(), "high-level steps must not carry a reference action");
                    }
                }
                (NodeKind::Substep, NodeIndex::Substep(addr)) => {
                    if !seen_steps.contains(&addr.step) {
                        fail!(path.clone(), "substep {addr} has no preceding high-level step {}", addr.step);
                    }
                    if let Some(prev) = last_sub {
                        if (addr.step, addr.sub) <= (prev.step, prev.sub) {
                            fail!(path.clone(), "substep {addr} out of order after {prev}");
                        }
                    }
                    last_sub = Some(addr);
                    if let Some(action) = &node.reference_action {
                        self.validate_reference_action(&path, addr, action, &tool_substeps, &mut v);
                    }
                    if node.reference_tool().is_some() {
                        tool_substeps.push(addr);
                    }
                }
                (kind, index) => {
                    fail!(path, "node kind {kind:?} does not match index {index}");
                }
            }
        }
        if tool_substeps.is_empty() {
            fail!("plan", "plan has no tool-bearing substep");
        }

        // Simulation dictionary coverage.
        let mut covered = BTreeSet::new();
        for (di, d) in self.sim_dict.defaults.iter().enumerate() {
            let path = format!("sim_dict.defaults[{di}]");
            if !tool_names.contains(d.tool.as_str()) {
                fail!(path.clone(), "default for unknown tool {:?}", d.tool);
            }
            if !covered.insert(d.tool.as_str()) {
                fail!(path, "duplicate default for tool {:?}", d.tool);
            }
        }
        for name in &tool_names {
            if !covered.contains(name) {
                fail!("sim_dict.defaults", "missing default outcome for tool {name:?}");
            }
        }
        for (ei, e) in self.sim_dict.entries.iter().enumerate() {
            let path = format!("sim_dict.entries[{ei}]");
            match self.tool(&e.tool) {
                None => fail!(path, "entry for unknown tool {:?}", e.tool),
                Some(tool) => {
                    for k in e.args.keys() {
                        if tool.argument(k).is_none() {
                            fail!(path.clone(), "entry argument {k:?} not declared by {:?}", e.tool);
                        }
                    }
                }
            }
        }

        if self.final_reference.is_empty() {
            fail!("final_reference", "final reference payload must be non-empty");
        }
        v
    }

    fn validate_reference_action(
        &self,
        path: &str,
        addr: SubstepAddr,
        action: &Action,
        earlier_tool_substeps: &[SubstepAddr],
        out: &mut Vec<Violation>,
    ) {
        let mut fail = |message: String| {
            out.push(Violation {
                case_id: self.id.clone(),
                path: format!("{path}.reference_action"),
                message,
            })
        };
        let tool = match &action.tool {
            ToolChoice::Tool(name) => match self.tool(name) {
                Some(t) => t,
                None => {
                    fail(format!("substep {addr} references unknown tool {name:?}"));
                    return;
                }
            },
            ToolChoice::NoOp => {
                if !action.args.is_empty() {
                    fail(format!("substep {addr}: NO_OP must not carry arguments"));
                }
                return;
            }
            ToolChoice::Invalid => {
                fail(format!("substep {addr}: INVALID is not allowed in case files"));
                return;
            }
        };
        for (k, val) in &action.args {
            if tool.argument(k).is_none() {
                fail(format!("argument {k:?} not declared by tool {:?}", tool.name));
            }
            if let ArgValue::Ref(r) = val {
                if !earlier_tool_substeps.contains(&r.substep) {
                    fail(format!("reference {r} points to a substep that is not an earlier tool-bearing substep"));
                    continue;
                }
                let src = self.substep(r.substep).and_then(|n| n.reference_tool());
                if let Some(src_tool) = src.and_then(|n| self.tool(n)) {
                    if src_tool.result_field(&r.field).is_none() {
                        fail(format!("reference {r}: tool {:?} declares no result field {:?}", src_tool.name, r.field));
                    }
                }
            }
        }
        for a in &tool.arguments {
            if a.required && !action.args.contains_key(&a.name) {
                fail(format!("required argument {:?} of tool {:?} is missing", a.name, tool.name));
            }
        }
    }
}

/// One validation failure, identified by case id and field path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub case_id: String,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case {:?} at {}: {}", self.case_id, self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read case file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse case file {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("case file {path} is invalid:\n{}", render_violations(violations))]
    Invalid { path: PathBuf, violations: Vec<Violation> },
}

fn render_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

/// Load and validate a case file. All violations across all cases are
/// collected before failing, so a bad file reports everything at once.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<Case>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let cases: Vec<Case> = serde_json::from_str(&text)
        .map_err(|source| DatasetError::Parse { path: path.into(), source })?;

    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();
    for case in &cases {
        violations.extend(case.validate());
        if !ids.insert(case.id.as_str()) {
            violations.push(Violation {
                case_id: case.id.clone(),
                path: "id".into(),
                message: "duplicate case id in file".into(),
            });
        }
    }
    if violations.is_empty() {
        Ok(cases)
    } else {
        Err(DatasetError::Invalid { path: path.into(), violations })
    }
}

/// The substep nodes of a plan, in plan order. High-level framing nodes are
/// skipped; they carry no executable content.
pub fn plan_substeps(case: &Case) -> Vec<&PlanNode> {
    case.plan.iter().filter(|n| n.kind == NodeKind::Substep).collect()
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("unresolved reference {reference}: substep {} has not been executed", reference.substep)]
    SubstepNotExecuted { reference: OutputRef },
    #[error("unresolved reference {reference}: field {:?} absent from that substep's observation", reference.field)]
    FieldAbsent { reference: OutputRef },
}

/// Replace every output reference in `action` with the literal observed at
/// the referenced substep. `observed` maps an executed substep to its
/// observation payload (`None` when the substep has not been executed).
pub fn resolve_refs<'a>(
    action: &Action,
    observed: impl Fn(SubstepAddr) -> Option<&'a Payload>,
) -> Result<Action, ResolveError> {
    let mut resolved = action.clone();
    for val in resolved.args.values_mut() {
        if let ArgValue::Ref(r) = val {
            let payload = observed(r.substep).ok_or_else(|| ResolveError::SubstepNotExecuted {
                reference: r.clone(),
            })?;
            let lit = payload.get(&r.field).ok_or_else(|| ResolveError::FieldAbsent {
                reference: r.clone(),
            })?;
            *val = ArgValue::Literal(lit.clone());
        }
    }
    Ok(resolved)
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn identifier() -> impl Strategy<Value = String> {
        "[a-z_][a-z0-9_]{0,15}"
    }

    proptest! {
        #[test]
        fn output_ref_round_trips(step in 0u32..500, sub in 0u32..500, field in identifier()) {
            let r = OutputRef { substep: SubstepAddr::new(step, sub), field };
            let parsed = OutputRef::parse(&r.to_string()).expect("round trip");
            prop_assert_eq!(parsed, r);
        }

        #[test]
        fn arbitrary_strings_never_panic_the_parser(s in ".{0,60}") {
            let _ = OutputRef::parse(&s);
        }
    }
}
