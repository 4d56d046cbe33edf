//! Index distributions composed from per-digit token probabilities.
//!
//! A text backend that reports top-k token probabilities cannot hand us a
//! distribution over candidate indices directly: an index like `37` is two
//! tokens. What it can provide is the first-digit distribution plus, for
//! each possible first digit, the continuation distribution (second digit or
//! end-of-output). [`compose_digits`] multiplies those into a distribution
//! over the indices `0..K`.

use super::{IndexDistribution, PolicyError, Provenance, MAX_CANDIDATES};

/// Digit-level token probabilities for one decision point.
///
/// Invariants (checked by [`DigitModel::validate`]):
/// * every row satisfies `p_end_given_d1[d] + Σ p2_given_d1[d] = 1` — after
///   the first digit the model either stops or emits exactly one more digit;
/// * `Σ p1 ≤ 1` — first-token mass on non-digit tokens may have been dropped
///   upstream, so the first-digit vector may be deficient.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitModel {
    pub p1: [f64; 10],
    pub p2_given_d1: [[f64; 10]; 10],
    pub p_end_given_d1: [f64; 10],
}

const ROW_TOL: f64 = 1e-9;

impl DigitModel {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| Err(PolicyError::InvalidDigitModel(msg));
        if self.p1.iter().any(|p| *p < 0.0) {
            return bad("negative first-digit probability".into());
        }
        let p1_sum: f64 = self.p1.iter().sum();
        if p1_sum > 1.0 + ROW_TOL {
            return bad(format!("first-digit probabilities sum to {p1_sum} > 1"));
        }
        for d1 in 0..10 {
            if self.p_end_given_d1[d1] < 0.0 || self.p2_given_d1[d1].iter().any(|p| *p < 0.0) {
                return bad(format!("negative probability in continuation row {d1}"));
            }
            let row_sum: f64 = self.p_end_given_d1[d1] + self.p2_given_d1[d1].iter().sum::<f64>();
            if (row_sum - 1.0).abs() > ROW_TOL {
                return bad(format!("continuation row {d1} sums to {row_sum}, expected 1"));
            }
        }
        Ok(())
    }
}

/// Compose a distribution over the candidate indices `0..k` from digit-level
/// probabilities.
///
/// A single-digit index `d1 < k` receives `p1[d1] · p_end[d1]`; a two-digit
/// index `10·d1 + d2` in `10..k` receives `p1[d1] · p2[d1][d2]`. Everything
/// else — indices at or beyond `k`, and two-digit encodings of values below
/// ten (`"07"` is not how 7 is written) — is dropped, and the remainder is
/// renormalized. A model whose whole mass falls outside `0..k` cannot yield
/// a decision and errors out.
pub fn compose_digits(model: &DigitModel, k: usize) -> Result<IndexDistribution, PolicyError> {
    if k == 0 || k > MAX_CANDIDATES {
        return Err(PolicyError::Config(format!(
            "candidate count {k} outside 1..={MAX_CANDIDATES}"
        )));
    }
    model.validate()?;

    let mut probs = vec![0.0f64; k];
    for d1 in 0..10usize {
        if d1 < k {
            probs[d1] += model.p1[d1] * model.p_end_given_d1[d1];
        }
        for d2 in 0..10usize {
            let idx = 10 * d1 + d2;
            if idx >= 10 && idx < k {
                probs[idx] += model.p1[d1] * model.p2_given_d1[d1][d2];
            }
        }
    }

    let mass: f64 = probs.iter().sum();
    if mass <= 0.0 {
        return Err(PolicyError::DegenerateDistribution);
    }
    for p in &mut probs {
        *p /= mass;
    }
    Ok(IndexDistribution {
        probs,
        provenance: Provenance::DigitComposed,
        dropped_mass: (1.0 - mass).max(0.0),
    })
}
