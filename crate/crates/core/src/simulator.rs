//! Deterministic tool-execution simulator.
//!
//! A tool call is answered by looking up its canonicalized argument map in
//! the case's simulation dictionary. A hit returns the grounded outcome;
//! anything else returns the tool's default payload, which is inert by
//! construction (it carries no grounded values), so one wrong call cannot
//! accidentally produce data a later step could succeed with.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::dataset::{
    resolve_refs, Action, ArgValue, Case, Literal, Payload, ResolveError, SemanticType,
    SubstepAddr, ToolChoice, ToolSpec, Violation,
};

/// Result of executing one action.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Observation {
    pub payload: Payload,
    /// Whether the invocation hit a grounded dictionary entry. `NO_OP`
    /// observations are trivially matched.
    pub matched: bool,
}

impl Observation {
    pub fn noop() -> Observation {
        Observation { payload: Payload::new(), matched: true }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanonError {
    #[error("cannot canonicalize {value:?} as {ty:?}")]
    Unparseable { value: String, ty: SemanticType },
}

fn unparseable(value: &Literal, ty: SemanticType) -> CanonError {
    CanonError::Unparseable { value: value.to_string(), ty }
}

/// Canonicalize a literal under its declared semantic type.
///
/// * strings: case-folded, trimmed, internal whitespace collapsed
/// * integers: base-10 digits, no leading zeros
/// * decimals: currency symbols and thousands separators stripped, exact
///   decimal value, trailing fractional zeros dropped (`"$35.00"` → `"35"`)
/// * dates: `YYYY-MM-DD`, `MM/DD/YYYY` or `Month D, YYYY` → ISO `YYYY-MM-DD`
/// * booleans: `true`/`false` in any case → `"true"`/`"false"`
///
/// Canonical forms are fixed points: re-canonicalizing an output under the
/// same type returns it unchanged.
pub fn canonicalize(value: &Literal, ty: SemanticType) -> Result<String, CanonError> {
    match ty {
        SemanticType::String => match value {
            Literal::Str(s) => Ok(canon_string(s)),
            other => Ok(canon_string(&other.to_string())),
        },
        SemanticType::Integer => match value {
            Literal::Int(i) => Ok(i.to_string()),
            Literal::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => {
                Ok((*f as i64).to_string())
            }
            Literal::Str(s) => s
                .trim()
                .parse::<i64>()
                .map(|i| i.to_string())
                .map_err(|_| unparseable(value, ty)),
            _ => Err(unparseable(value, ty)),
        },
        SemanticType::Decimal => {
            let raw = match value {
                Literal::Int(i) => i.to_string(),
                Literal::Float(f) if f.is_finite() => format!("{f}"),
                Literal::Str(s) => s.clone(),
                _ => return Err(unparseable(value, ty)),
            };
            canon_decimal(&raw).ok_or_else(|| unparseable(value, ty))
        }
        SemanticType::Date => match value {
            Literal::Str(s) => canon_date(s).ok_or_else(|| unparseable(value, ty)),
            _ => Err(unparseable(value, ty)),
        },
        SemanticType::Boolean => match value {
            Literal::Bool(b) => Ok(b.to_string()),
            Literal::Str(s) => match s.trim().to_lowercase().as_str() {
                "true" => Ok("true".into()),
                "false" => Ok("false".into()),
                _ => Err(unparseable(value, ty)),
            },
            _ => Err(unparseable(value, ty)),
        },
    }
}

fn canon_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        for lc in c.to_lowercase() {
            out.push(lc);
        }
    }
    out
}

/// Exact decimal normalization, working on the digit string so no binary
/// float rounding can creep in.
fn canon_decimal(raw: &str) -> Option<String> {
    let cleaned: String = raw
        .trim()
        .chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | ','))
        .collect();
    let cleaned = cleaned.trim();
    let (negative, digits) = match cleaned.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cleaned.strip_prefix('+').unwrap_or(cleaned)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let int_norm = int_part.trim_start_matches('0');
    let int_norm = if int_norm.is_empty() { "0" } else { int_norm };
    let frac_norm = frac_part.trim_end_matches('0');
    let mut out = String::new();
    if negative && !(int_norm == "0" && frac_norm.is_empty()) {
        out.push('-');
    }
    out.push_str(int_norm);
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    Some(out)
}

fn canon_date(s: &str) -> Option<String> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d", "%m/%d/%Y", "%B %d, %Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d.format("%Y-%m-%d").to_string());
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("case {case_id:?} has no tool named {tool:?}")]
    UnknownTool { case_id: String, tool: String },
    #[error("action for tool {tool:?} still contains unresolved output references")]
    UnresolvedRefs { tool: String },
    #[error("an INVALID action marker cannot be executed")]
    InvalidAction,
    #[error("case {case_id:?} is missing a default outcome for tool {tool:?}")]
    MissingDefault { case_id: String, tool: String },
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}

/// Execute one action against the case's simulation dictionary.
///
/// The action must be fully literal (see [`resolve_refs`]). An unknown tool
/// is a loud error — it means the caller's candidate wiring is broken, which
/// must never be silently scored as an ordinary mismatch.
pub fn execute(case: &Case, action: &Action) -> Result<Observation, SimError> {
    let tool_name = match &action.tool {
        ToolChoice::NoOp => return Ok(Observation::noop()),
        ToolChoice::Invalid => return Err(SimError::InvalidAction),
        ToolChoice::Tool(name) => name,
    };
    let tool = case.tool(tool_name).ok_or_else(|| SimError::UnknownTool {
        case_id: case.id.clone(),
        tool: tool_name.clone(),
    })?;
    if action.has_refs() {
        return Err(SimError::UnresolvedRefs { tool: tool_name.clone() });
    }

    let default = || -> Result<Observation, SimError> {
        let payload = case.sim_dict.default_outcome(tool_name).ok_or_else(|| {
            SimError::MissingDefault { case_id: case.id.clone(), tool: tool_name.clone() }
        })?;
        Ok(Observation { payload: payload.clone(), matched: false })
    };

    // Canonicalize the invocation. An argument that fails to canonicalize, or
    // that the tool does not declare, can never hit a grounded entry.
    let mut canon_args = BTreeMap::new();
    for (name, value) in &action.args {
        let lit = match value {
            ArgValue::Literal(l) => l,
            ArgValue::Ref(_) => unreachable!("checked above"),
        };
        let spec = match tool.argument(name) {
            Some(s) => s,
            None => return default(),
        };
        match canonicalize(lit, spec.semantic_type) {
            Ok(c) => {
                canon_args.insert(name.clone(), c);
            }
            Err(_) => return default(),
        }
    }

    for entry in case.sim_dict.entries_for(tool_name) {
        if entry.args == canon_args {
            return Ok(Observation { payload: entry.outcome.clone(), matched: true });
        }
    }
    default()
}

/// Canonical view of a payload for comparison. Declared result fields use
/// their semantic type; undeclared fields (e.g. the reserved default
/// `status`) fall back to string rules, as does any value that fails typed
/// canonicalization — comparison must stay total.
fn canonical_payload(payload: &Payload, tool: Option<&ToolSpec>) -> BTreeMap<String, String> {
    payload
        .iter()
        .map(|(field, value)| {
            let ty = tool
                .and_then(|t| t.result_field(field))
                .map(|f| f.semantic_type)
                .unwrap_or(SemanticType::String);
            let canon = canonicalize(value, ty)
                .unwrap_or_else(|_| canon_string(&value.to_string()));
            (field.clone(), canon)
        })
        .collect()
}

/// Task success: the observation recorded at the plan's final tool-bearing
/// substep equals `final_reference` after canonicalization, field by field.
/// Intermediate missteps are irrelevant as long as the final payload lands.
pub fn judge_success<'a>(
    case: &Case,
    observed: impl Fn(SubstepAddr) -> Option<&'a Observation>,
) -> bool {
    let Some(node) = case.final_tool_substep() else {
        return false;
    };
    let addr = node.substep_addr().expect("substep node");
    let Some(obs) = observed(addr) else {
        return false;
    };
    let tool = node.reference_tool().and_then(|n| case.tool(n));
    canonical_payload(&obs.payload, tool) == canonical_payload(&case.final_reference, tool)
}

/// Execute the case's own reference actions in plan order, resolving output
/// references against the observations produced so far. This is the golden
/// path: on a valid case, every tool-bearing substep matches a grounded
/// entry and the judge accepts the result.
pub fn execute_reference_plan(
    case: &Case,
) -> Result<Vec<(SubstepAddr, Observation)>, SimError> {
    let mut executed: Vec<(SubstepAddr, Observation)> = Vec::new();
    for node in crate::dataset::plan_substeps(case) {
        let addr = node.substep_addr().expect("substep node");
        let obs = match &node.reference_action {
            None => Observation::noop(),
            Some(action) => {
                let resolved = resolve_refs(action, |a| {
                    executed.iter().find(|(e, _)| *e == a).map(|(_, o)| &o.payload)
                })?;
                execute(case, &resolved)?
            }
        };
        executed.push((addr, obs));
    }
    Ok(executed)
}

/// Dictionary-level checks beyond the structural ones in `dataset`:
/// entry keys must already be canonical under the declared argument types,
/// and default payload values must be disjoint from every grounded outcome
/// (mismatch inertness).
pub fn dict_violations(case: &Case) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |path: String, message: String| {
        out.push(Violation { case_id: case.id.clone(), path, message })
    };

    let mut grounded_values = Vec::new();
    for (ei, entry) in case.sim_dict.entries.iter().enumerate() {
        let Some(tool) = case.tool(&entry.tool) else { continue };
        for (name, stored) in &entry.args {
            let Some(spec) = tool.argument(name) else { continue };
            match canonicalize(&Literal::Str(stored.clone()), spec.semantic_type) {
                Ok(canon) if &canon == stored => {}
                Ok(canon) => fail(
                    format!("sim_dict.entries[{ei}].args.{name}"),
                    format!("entry key {stored:?} is not canonical (expected {canon:?})"),
                ),
                Err(e) => fail(
                    format!("sim_dict.entries[{ei}].args.{name}"),
                    format!("entry key {stored:?} does not canonicalize: {e}"),
                ),
            }
        }
        grounded_values.extend(entry.outcome.values().map(|v| v.to_string()));
    }

    for (di, d) in case.sim_dict.defaults.iter().enumerate() {
        for (field, value) in &d.default_outcome {
            if grounded_values.contains(&value.to_string()) {
                fail(
                    format!("sim_dict.defaults[{di}].{field}"),
                    format!(
                        "default value {value} for tool {:?} also appears in a grounded outcome",
                        d.tool
                    ),
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_cases, Action};
    use std::path::Path;

    fn fixture() -> Case {
        let path =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/promotion_case.json");
        load_cases(path).unwrap().remove(0)
    }

    fn lit(v: &str) -> Literal {
        Literal::Str(v.into())
    }

    #[test]
    fn canonicalize_dates_accepts_three_formats() {
        for raw in ["2024-06-01", "06/01/2024", "June 1, 2024", " June 01, 2024 "] {
            assert_eq!(
                canonicalize(&lit(raw), SemanticType::Date).unwrap(),
                "2024-06-01",
                "for {raw:?}"
            );
        }
        assert!(canonicalize(&lit("06/31/2024"), SemanticType::Date).is_err()); // June has 30 days
        assert!(canonicalize(&lit("tomorrow"), SemanticType::Date).is_err());
        assert!(canonicalize(&Literal::Int(20240601), SemanticType::Date).is_err());
    }

    #[test]
    fn canonicalize_decimals_strips_formatting_and_trailing_zeros() {
        let cases = [
            ("$35.00", "35"),
            ("35.00", "35"),
            ("1,234.50", "1234.5"),
            ("€99.90", "99.9"),
            ("0.10", "0.1"),
            (".5", "0.5"),
            ("35.", "35"),
            ("-0.0", "0"),
            ("-12.30", "-12.3"),
            ("007", "7"),
        ];
        for (raw, want) in cases {
            assert_eq!(
                canonicalize(&lit(raw), SemanticType::Decimal).unwrap(),
                want,
                "for {raw:?}"
            );
        }
        assert_eq!(canonicalize(&Literal::Float(35.00), SemanticType::Decimal).unwrap(), "35");
        assert_eq!(canonicalize(&Literal::Int(-7), SemanticType::Decimal).unwrap(), "-7");
        assert!(canonicalize(&lit("12.3.4"), SemanticType::Decimal).is_err());
        assert!(canonicalize(&lit("abc"), SemanticType::Decimal).is_err());
        assert!(canonicalize(&lit(""), SemanticType::Decimal).is_err());
    }

    #[test]
    fn canonicalize_strings_folds_case_and_whitespace() {
        assert_eq!(
            canonicalize(&lit("  ThermoFlex  Water\tBottle "), SemanticType::String).unwrap(),
            "thermoflex water bottle"
        );
        assert_eq!(canonicalize(&lit("TF-WB-2023"), SemanticType::String).unwrap(), "tf-wb-2023");
        assert_eq!(canonicalize(&Literal::Int(42), SemanticType::String).unwrap(), "42");
    }

    #[test]
    fn canonicalize_integers_and_booleans() {
        assert_eq!(canonicalize(&Literal::Int(15), SemanticType::Integer).unwrap(), "15");
        assert_eq!(canonicalize(&lit(" 15 "), SemanticType::Integer).unwrap(), "15");
        assert_eq!(canonicalize(&Literal::Float(15.0), SemanticType::Integer).unwrap(), "15");
        assert!(canonicalize(&Literal::Float(15.5), SemanticType::Integer).is_err());
        assert!(canonicalize(&lit("fifteen"), SemanticType::Integer).is_err());

        assert_eq!(canonicalize(&Literal::Bool(true), SemanticType::Boolean).unwrap(), "true");
        assert_eq!(canonicalize(&lit("TRUE"), SemanticType::Boolean).unwrap(), "true");
        assert_eq!(canonicalize(&lit("False"), SemanticType::Boolean).unwrap(), "false");
        assert!(canonicalize(&lit("yes"), SemanticType::Boolean).is_err());
    }

    #[test]
    fn execute_hits_grounded_entry_for_reference_call() {
        let case = fixture();
        let action = Action::call("get_product_details", [("sku", ArgValue::Literal(lit("TF-WB-2023")))]);
        let obs = execute(&case, &action).unwrap();
        assert!(obs.matched);
        assert_eq!(obs.payload["product_id"], lit("P-TF-WB-2023-001"));
    }

    #[test]
    fn execute_accepts_surface_variants_of_the_same_values() {
        let case = fixture();
        let action = Action::call(
            "create_promotion",
            [
                ("product_id", ArgValue::Literal(lit("P-TF-WB-2023-001"))),
                ("discount_percentage", ArgValue::Literal(lit("15"))),
                ("min_quantity", ArgValue::Literal(Literal::Int(2))),
                ("min_purchase", ArgValue::Literal(lit("$35.00"))),
                ("start_date", ArgValue::Literal(lit("06/01/2024"))),
                ("end_date", ArgValue::Literal(lit("August 31, 2024"))),
            ],
        );
        let obs = execute(&case, &action).unwrap();
        assert!(obs.matched, "variant spellings should canonicalize to the grounded entry");
        assert_eq!(obs.payload["promotion_id"], lit("PROMO-TF-2024-S001"));
    }

    #[test]
    fn execute_returns_inert_default_on_mismatch() {
        let case = fixture();
        for action in [
            // wrong value
            Action::call("get_product_details", [("sku", ArgValue::Literal(lit("TF-WB-9999")))]),
            // missing required argument
            Action::call("get_product_details", []),
            // undeclared argument
            Action::call(
                "get_product_details",
                [
                    ("sku", ArgValue::Literal(lit("TF-WB-2023"))),
                    ("verbose", ArgValue::Literal(Literal::Bool(true))),
                ],
            ),
            // argument that cannot canonicalize under its type
            Action::call(
                "create_promotion",
                [
                    ("product_id", ArgValue::Literal(lit("P-TF-WB-2023-001"))),
                    ("discount_percentage", ArgValue::Literal(lit("fifteen"))),
                    ("min_quantity", ArgValue::Literal(Literal::Int(2))),
                    ("min_purchase", ArgValue::Literal(lit("35"))),
                    ("start_date", ArgValue::Literal(lit("2024-06-01"))),
                    ("end_date", ArgValue::Literal(lit("2024-08-31"))),
                ],
            ),
        ] {
            let obs = execute(&case, &action).unwrap();
            assert!(!obs.matched, "{action:?}");
            assert_eq!(obs.payload["status"], lit("no_record_found"));
        }
    }

    #[test]
    fn execute_rejects_unknown_tools_loudly() {
        let case = fixture();
        let action = Action::call("get_product_detail", [("sku", ArgValue::Literal(lit("x")))]);
        let err = execute(&case, &action).unwrap_err();
        assert!(matches!(err, SimError::UnknownTool { .. }));
        assert!(err.to_string().contains("get_product_detail"));
    }

    #[test]
    fn execute_rejects_unresolved_references() {
        let case = fixture();
        let action = case
            .substep(SubstepAddr::new(2, 1))
            .unwrap()
            .reference_action
            .clone()
            .unwrap();
        assert!(matches!(
            execute(&case, &action),
            Err(SimError::UnresolvedRefs { .. })
        ));
    }

    #[test]
    fn noop_observation_is_empty_and_matched() {
        let case = fixture();
        let obs = execute(&case, &Action::noop()).unwrap();
        assert_eq!(obs, Observation::noop());
        assert!(obs.matched && obs.payload.is_empty());
    }

    #[test]
    fn reference_plan_grounds_every_step_and_judges_success() {
        let case = fixture();
        let executed = execute_reference_plan(&case).unwrap();
        assert_eq!(executed.len(), 5);
        for (addr, obs) in &executed {
            assert!(obs.matched, "substep {addr} should hit a grounded entry");
        }
        assert_eq!(executed[0].1.payload["product_id"], lit("P-TF-WB-2023-001"));
        assert_eq!(executed[1].1.payload["promotion_id"], lit("PROMO-TF-2024-S001"));
        assert_eq!(executed[2].1.payload["promo_code_id"], lit("PC-SUMMERTF24-001"));
        assert_eq!(executed[4].1.payload["success"], lit("true"));

        assert!(judge_success(&case, |addr| {
            executed.iter().find(|(a, _)| *a == addr).map(|(_, o)| o)
        }));
    }

    #[test]
    fn judge_ignores_unreferenced_intermediate_missteps() {
        let case = fixture();
        let mut executed = execute_reference_plan(&case).unwrap();
        // Sabotage substep 4.1: nothing downstream references its output.
        let bad = execute(
            &case,
            &Action::call("validate_promotion", [("promotion_id", ArgValue::Literal(lit("bogus")))]),
        )
        .unwrap();
        assert!(!bad.matched);
        executed[3].1 = bad;
        assert!(judge_success(&case, |addr| {
            executed.iter().find(|(a, _)| *a == addr).map(|(_, o)| o)
        }));
    }

    #[test]
    fn judge_fails_on_default_final_payload() {
        let case = fixture();
        let mut executed = execute_reference_plan(&case).unwrap();
        let bad = execute(
            &case,
            &Action::call(
                "activate_promotion",
                [
                    ("promotion_id", ArgValue::Literal(lit("bogus"))),
                    ("promo_code_id", ArgValue::Literal(lit("bogus"))),
                ],
            ),
        )
        .unwrap();
        executed[4].1 = bad;
        assert!(!judge_success(&case, |addr| {
            executed.iter().find(|(a, _)| *a == addr).map(|(_, o)| o)
        }));
    }

    #[test]
    fn judge_canonicalizes_final_payload_fields() {
        let case = fixture();
        let mut executed = execute_reference_plan(&case).unwrap();
        // Same truth value, different surface form.
        executed[4].1.payload.insert("success".into(), lit("TRUE"));
        assert!(judge_success(&case, |addr| {
            executed.iter().find(|(a, _)| *a == addr).map(|(_, o)| o)
        }));
    }

    #[test]
    fn fixture_dictionary_is_canonical_and_inert() {
        let case = fixture();
        assert!(dict_violations(&case).is_empty());
    }

    #[test]
    fn non_canonical_entry_keys_are_reported() {
        let mut case = fixture();
        case.sim_dict.entries[0].args.insert("sku".into(), "TF-WB-2023".into());
        let v = dict_violations(&case);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("not canonical"));
    }

    #[test]
    fn default_values_colliding_with_grounded_outcomes_are_reported() {
        let mut case = fixture();
        case.sim_dict.defaults[0]
            .default_outcome
            .insert("status".into(), lit("PROMO-TF-2024-S001"));
        let v = dict_violations(&case);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("also appears in a grounded outcome"));
    }
}
