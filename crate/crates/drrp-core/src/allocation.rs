//! Allocation rules: map per-asset measure values to portfolio weights.
//!
//! Every rule produces a non-negative raw score per asset and normalizes by
//! the score sum, so weights live on the simplex and short positions never
//! appear. Ratio families reward larger measures, risk families penalize
//! them. `b = 0` collapses every linear family to equal weight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::MeasureKind;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("no assets to allocate")]
    Empty,
    #[error("measure value for asset {index} is NaN")]
    NanMeasure { index: usize },
    #[error("inverse risk rule needs strictly positive measures; asset {index} has {value}")]
    NonPositiveRisk { index: usize, value: f64 },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("rule family {family} is not valid for measure {measure}")]
    RuleMeasureMismatch { family: String, measure: String },
    #[error("decomposition denominator is zero")]
    ZeroDenominator,
}

/// The allocation-rule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleFamily {
    /// Constant score: the 1/N benchmark.
    EqualWeight,
    /// `max(a + b*rho, 0)`; with a=0, b=1 this is the floored ratio `rho|+`.
    RatioRaw,
    /// `a + b*max(rho, 0)`: a minimal non-zero allocation is guaranteed.
    RatioLinear,
    /// `max(a + b*rho, 0)`: hard flooring of the full linear score.
    RatioLinearFloorAll,
    /// `a + b/rho`; with a=0, b=1 this is the inverse-risk rule `1/rho`.
    RiskInverse,
    /// `max(a - b*rho, 0)`; with a=1, b=1 this is the `1 - rho` rule.
    RiskLinear,
    /// `a + b/rho` with a non-zero constant term.
    RiskInverseLinear,
}

impl RuleFamily {
    pub fn is_ratio_family(self) -> bool {
        matches!(
            self,
            RuleFamily::RatioRaw | RuleFamily::RatioLinear | RuleFamily::RatioLinearFloorAll
        )
    }

    pub fn is_risk_family(self) -> bool {
        matches!(
            self,
            RuleFamily::RiskInverse | RuleFamily::RiskLinear | RuleFamily::RiskInverseLinear
        )
    }

    fn spec_name(self) -> &'static str {
        match self {
            RuleFamily::EqualWeight => "equal",
            RuleFamily::RatioRaw => "ratio-raw",
            RuleFamily::RatioLinear => "ratio-linear",
            RuleFamily::RatioLinearFloorAll => "ratio-floor-all",
            RuleFamily::RiskInverse => "risk-inverse",
            RuleFamily::RiskLinear => "risk-linear",
            RuleFamily::RiskInverseLinear => "risk-inverse-linear",
        }
    }
}

/// One member of the allocation-rule family with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRule {
    pub family: RuleFamily,
    pub a: f64,
    pub b: f64,
}

impl AllocationRule {
    pub fn new(family: RuleFamily, a: f64, b: f64) -> Result<Self, AllocationError> {
        let rule = Self { family, a, b };
        rule.validate()?;
        Ok(rule)
    }

    pub fn equal_weight() -> Self {
        Self {
            family: RuleFamily::EqualWeight,
            a: 0.0,
            b: 0.0,
        }
    }

    /// The default coefficients for each family: raw rules use (0, 1), linear
    /// rules use (1, 1).
    pub fn with_defaults(family: RuleFamily) -> Self {
        let (a, b) = match family {
            RuleFamily::EqualWeight => (0.0, 0.0),
            RuleFamily::RatioRaw | RuleFamily::RiskInverse => (0.0, 1.0),
            _ => (1.0, 1.0),
        };
        Self { family, a, b }
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.a < 0.0 || self.b < 0.0 || !self.a.is_finite() || !self.b.is_finite() {
            return Err(AllocationError::InvalidRule(format!(
                "coefficients must be non-negative and finite, got a={}, b={}",
                self.a, self.b
            )));
        }
        if self.family != RuleFamily::EqualWeight && self.a + self.b <= 0.0 {
            return Err(AllocationError::InvalidRule(
                "a + b must be positive for non-equal-weight rules".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for AllocationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            RuleFamily::EqualWeight => write!(f, "equal"),
            _ => write!(f, "{}:a={},b={}", self.family.spec_name(), self.a, self.b),
        }
    }
}

impl FromStr for AllocationRule {
    type Err = AllocationError;

    /// Grammar: `equal`, `ratio-raw`, `ratio-linear:a=1,b=1`, `risk-inverse`,
    /// `risk-linear:a=1,b=1`, `ratio-floor-all:a=1,b=1`,
    /// `risk-inverse-linear:a=1,b=1`. Omitted coefficients take the family
    /// defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, coef) = match s.split_once(':') {
            Some((n, c)) => (n.trim(), Some(c.trim())),
            None => (s.trim(), None),
        };
        let family = match name {
            "equal" => RuleFamily::EqualWeight,
            "ratio-raw" => RuleFamily::RatioRaw,
            "ratio-linear" => RuleFamily::RatioLinear,
            "ratio-floor-all" => RuleFamily::RatioLinearFloorAll,
            "risk-inverse" => RuleFamily::RiskInverse,
            "risk-linear" => RuleFamily::RiskLinear,
            "risk-inverse-linear" => RuleFamily::RiskInverseLinear,
            other => {
                return Err(AllocationError::InvalidRule(format!(
                    "unknown rule family `{other}`"
                )))
            }
        };
        let mut rule = AllocationRule::with_defaults(family);
        if let Some(coef) = coef {
            if family == RuleFamily::EqualWeight {
                return Err(AllocationError::InvalidRule(
                    "`equal` takes no coefficients".into(),
                ));
            }
            for part in coef.split(',') {
                let (key, value) = part.split_once('=').ok_or_else(|| {
                    AllocationError::InvalidRule(format!("expected k=v, got `{part}`"))
                })?;
                let value: f64 = value.trim().parse().map_err(|_| {
                    AllocationError::InvalidRule(format!("bad coefficient value `{value}`"))
                })?;
                match key.trim() {
                    "a" => rule.a = value,
                    "b" => rule.b = value,
                    other => {
                        return Err(AllocationError::InvalidRule(format!(
                            "unknown coefficient `{other}`"
                        )))
                    }
                }
            }
        }
        rule.validate()?;
        Ok(rule)
    }
}

/// Portfolio weights on the simplex, paired with tickers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub entries: Vec<(String, f64)>,
}

impl WeightVector {
    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }
}

/// Result of one weight computation, with degenerate-case flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub weights: Vec<f64>,
    /// True when every score floored to zero and the rule fell back to 1/N.
    pub equal_weight_fallback: bool,
    /// Indices whose infinite score (monotone-up Calmar windows) was capped.
    pub sentinel_capped: Vec<usize>,
}

fn raw_score(rule: &AllocationRule, rho: f64) -> f64 {
    match rule.family {
        RuleFamily::EqualWeight => 1.0,
        RuleFamily::RatioRaw | RuleFamily::RatioLinearFloorAll => (rule.a + rule.b * rho).max(0.0),
        RuleFamily::RatioLinear => rule.a + rule.b * rho.max(0.0),
        RuleFamily::RiskInverse | RuleFamily::RiskInverseLinear => rule.a + rule.b / rho,
        RuleFamily::RiskLinear => (rule.a - rule.b * rho).max(0.0),
    }
}

/// Map per-asset measure values to normalized portfolio weights.
///
/// Infinite ratio scores (the Calmar zero-drawdown sentinel) are capped at
/// `1e6` times the median positive finite score so one lucky window cannot
/// collapse the portfolio to a single asset. If every score is zero the
/// result falls back to equal weight with a flag.
pub fn compute_weights(rho: &[f64], rule: &AllocationRule) -> Result<Allocation, AllocationError> {
    rule.validate()?;
    if rho.is_empty() {
        return Err(AllocationError::Empty);
    }
    if rule.family.is_risk_family() {
        if let Some((index, &value)) = rho
            .iter()
            .enumerate()
            .find(|(_, v)| **v <= 0.0 || !v.is_finite())
        {
            return Err(AllocationError::NonPositiveRisk { index, value });
        }
    }

    let mut scores = Vec::with_capacity(rho.len());
    for (index, &value) in rho.iter().enumerate() {
        if value.is_nan() {
            return Err(AllocationError::NanMeasure { index });
        }
        scores.push(raw_score(rule, value));
    }

    let mut sentinel_capped = Vec::new();
    if scores.iter().any(|s| s.is_infinite()) {
        let mut finite_positive: Vec<f64> = scores
            .iter()
            .cloned()
            .filter(|s| s.is_finite() && *s > 0.0)
            .collect();
        let cap = if finite_positive.is_empty() {
            1.0
        } else {
            finite_positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
            1e6 * finite_positive[finite_positive.len() / 2]
        };
        for (index, s) in scores.iter_mut().enumerate() {
            if s.is_infinite() {
                *s = cap;
                sentinel_capped.push(index);
            }
        }
    }

    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        let n = rho.len() as f64;
        return Ok(Allocation {
            weights: vec![1.0 / n; rho.len()],
            equal_weight_fallback: true,
            sentinel_capped,
        });
    }
    Ok(Allocation {
        weights: scores.into_iter().map(|s| s / total).collect(),
        equal_weight_fallback: false,
        sentinel_capped,
    })
}

/// Split the `a + b*rho|+` linear-rule weights into the equal-weight part
/// `1/N` and the deviation `b*(rho_i|+ - mean(rho|+)) / sum(a + b*rho_j|+)`.
/// The two parts sum elementwise to the `compute_weights` output.
pub fn decompose_linear(
    rho: &[f64],
    rule: &AllocationRule,
) -> Result<(Vec<f64>, Vec<f64>), AllocationError> {
    if rule.family != RuleFamily::RatioLinear {
        return Err(AllocationError::InvalidRule(
            "decomposition applies to the ratio-linear family".into(),
        ));
    }
    if rho.is_empty() {
        return Err(AllocationError::Empty);
    }
    if let Some(index) = rho.iter().position(|v| !v.is_finite()) {
        return Err(AllocationError::NanMeasure { index });
    }
    let n = rho.len() as f64;
    let floored: Vec<f64> = rho.iter().map(|v| v.max(0.0)).collect();
    let denom: f64 = floored.iter().map(|v| rule.a + rule.b * v).sum();
    if denom <= 0.0 {
        return Err(AllocationError::ZeroDenominator);
    }
    let mean_floored = floored.iter().sum::<f64>() / n;
    let equal = vec![1.0 / n; rho.len()];
    let deviation = floored
        .iter()
        .map(|v| rule.b * (v - mean_floored) / denom)
        .collect();
    Ok((equal, deviation))
}

/// Which of the two rule variants a strategy uses for a measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleVariant {
    /// `rho|+` for ratio measures, `1/rho` for risk measures.
    Raw,
    /// `1 + rho|+` for ratio measures, `1 - rho` for risk measures.
    Linear,
}

/// The canonical rule for a measure kind: ratio measures map to the floored
/// ratio family, risk measures to the inverse/linear risk family.
pub fn rule_for_measure(kind: MeasureKind, variant: RuleVariant) -> AllocationRule {
    match (kind.is_ratio(), variant) {
        (true, RuleVariant::Raw) => AllocationRule::with_defaults(RuleFamily::RatioRaw),
        (true, RuleVariant::Linear) => AllocationRule::with_defaults(RuleFamily::RatioLinear),
        (false, RuleVariant::Raw) => AllocationRule::with_defaults(RuleFamily::RiskInverse),
        (false, RuleVariant::Linear) => AllocationRule::with_defaults(RuleFamily::RiskLinear),
    }
}

/// Reject rule/measure pairings that invert the intended preference, e.g. a
/// ratio family applied to a pure risk measure.
pub fn check_rule_measure(kind: MeasureKind, rule: &AllocationRule) -> Result<(), AllocationError> {
    let ok = match rule.family {
        RuleFamily::EqualWeight => true,
        f if f.is_ratio_family() => kind.is_ratio(),
        _ => kind.is_risk(),
    };
    if ok {
        Ok(())
    } else {
        Err(AllocationError::RuleMeasureMismatch {
            family: rule.family.spec_name().into(),
            measure: kind.label().into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_simplex(w: &[f64]) {
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
        assert!(w.iter().all(|x| *x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn equal_weight_four_assets() {
        let alloc =
            compute_weights(&[0.3, -0.1, 0.7, 0.0], &AllocationRule::equal_weight()).unwrap();
        assert_eq!(alloc.weights, vec![0.25; 4]);
        assert!(!alloc.equal_weight_fallback);
    }

    #[test]
    fn zero_b_reproduces_equal_weight_exactly() {
        let rule = AllocationRule::new(RuleFamily::RatioLinear, 1.0, 0.0).unwrap();
        let alloc = compute_weights(&[0.5, -0.2, 1.4], &rule).unwrap();
        assert_eq!(alloc.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn risk_inverse_arithmetic() {
        let rule = AllocationRule::with_defaults(RuleFamily::RiskInverse);
        let alloc = compute_weights(&[0.1, 0.2, 0.4], &rule).unwrap();
        let expect = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (w, e) in alloc.weights.iter().zip(expect) {
            assert!((w - e).abs() < 1e-14);
        }
    }

    #[test]
    fn ratio_linear_floor_arithmetic() {
        let rule = AllocationRule::new(RuleFamily::RatioLinear, 1.0, 1.0).unwrap();
        let alloc = compute_weights(&[0.5, -0.5], &rule).unwrap();
        assert!((alloc.weights[0] - 0.6).abs() < 1e-14);
        assert!((alloc.weights[1] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn risk_linear_symmetry() {
        let rule = AllocationRule::new(RuleFamily::RiskLinear, 1.0, 1.0).unwrap();
        let alloc = compute_weights(&[0.2, 0.2], &rule).unwrap();
        assert_eq!(alloc.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn risk_inverse_rejects_non_positive() {
        let rule = AllocationRule::with_defaults(RuleFamily::RiskInverse);
        assert!(matches!(
            compute_weights(&[0.1, 0.0], &rule),
            Err(AllocationError::NonPositiveRisk { index: 1, .. })
        ));
        assert!(matches!(
            compute_weights(&[0.1, -0.3], &rule),
            Err(AllocationError::NonPositiveRisk { index: 1, .. })
        ));
    }

    #[test]
    fn nan_measure_names_the_asset() {
        let rule = AllocationRule::with_defaults(RuleFamily::RatioRaw);
        assert!(matches!(
            compute_weights(&[0.1, f64::NAN], &rule),
            Err(AllocationError::NanMeasure { index: 1 })
        ));
    }

    #[test]
    fn all_floored_scores_fall_back_to_equal_weight() {
        let rule = AllocationRule::with_defaults(RuleFamily::RatioRaw);
        let alloc = compute_weights(&[-0.5, -0.1, -0.9], &rule).unwrap();
        assert!(alloc.equal_weight_fallback);
        assert_eq!(alloc.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn calmar_sentinel_is_capped_not_dominant() {
        let rule = AllocationRule::with_defaults(RuleFamily::RatioRaw);
        let alloc = compute_weights(&[0.5, f64::INFINITY, 0.7], &rule).unwrap();
        assert_eq!(alloc.sentinel_capped, vec![1]);
        assert_simplex(&alloc.weights);
        // Capped asset dominates but the others keep non-zero weight.
        assert!(alloc.weights[1] > alloc.weights[0]);
        assert!(alloc.weights[0] > 0.0 && alloc.weights[2] > 0.0);
        // Order among finite scores is preserved.
        assert!(alloc.weights[2] > alloc.weights[0]);
    }

    #[test]
    fn scale_invariance_of_scale_free_rules() {
        let rho = [0.4, 0.9, 0.2, 0.55];
        for family in [RuleFamily::RatioRaw, RuleFamily::RiskInverse] {
            let rule = AllocationRule::with_defaults(family);
            let base = compute_weights(&rho, &rule).unwrap();
            let scaled_rho: Vec<f64> = rho.iter().map(|v| v * 7.3).collect();
            let scaled = compute_weights(&scaled_rho, &rule).unwrap();
            for (w0, w1) in base.weights.iter().zip(&scaled.weights) {
                assert!((w0 - w1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn order_consistency() {
        let rho = [0.1, 0.5, 0.3];
        let ratio =
            compute_weights(&rho, &AllocationRule::with_defaults(RuleFamily::RatioRaw)).unwrap();
        assert!(ratio.weights[1] > ratio.weights[2] && ratio.weights[2] > ratio.weights[0]);
        let risk =
            compute_weights(&rho, &AllocationRule::with_defaults(RuleFamily::RiskInverse)).unwrap();
        assert!(risk.weights[1] < risk.weights[2] && risk.weights[2] < risk.weights[0]);
    }

    #[test]
    fn decompose_matches_weights() {
        let rho = [0.5, -0.3, 0.8, 0.1];
        let rule = AllocationRule::new(RuleFamily::RatioLinear, 1.0, 1.0).unwrap();
        let alloc = compute_weights(&rho, &rule).unwrap();
        let (equal, dev) = decompose_linear(&rho, &rule).unwrap();
        let mut dev_sum = 0.0;
        for i in 0..rho.len() {
            assert!((equal[i] + dev[i] - alloc.weights[i]).abs() < 1e-14);
            dev_sum += dev[i];
        }
        assert!(dev_sum.abs() < 1e-14, "deviation part must center to zero");
    }

    #[test]
    fn decompose_equal_measures_has_zero_deviation() {
        let rho = [0.4; 5];
        let rule = AllocationRule::new(RuleFamily::RatioLinear, 1.0, 2.0).unwrap();
        let (_, dev) = decompose_linear(&rho, &rule).unwrap();
        assert!(dev.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn rule_for_measure_table() {
        use crate::measures::MeasureKind::*;
        let r = rule_for_measure(Sharpe, RuleVariant::Raw);
        assert_eq!(r.family, RuleFamily::RatioRaw);
        assert_eq!((r.a, r.b), (0.0, 1.0));
        let r = rule_for_measure(VaR, RuleVariant::Linear);
        assert_eq!(r.family, RuleFamily::RiskLinear);
        assert_eq!((r.a, r.b), (1.0, 1.0));
        let r = rule_for_measure(MaxDrawdown, RuleVariant::Raw);
        assert_eq!(r.family, RuleFamily::RiskInverse);
        assert_eq!((r.a, r.b), (0.0, 1.0));
    }

    #[test]
    fn rule_measure_mismatch_is_rejected() {
        use crate::measures::MeasureKind::*;
        let ratio_rule = AllocationRule::with_defaults(RuleFamily::RatioRaw);
        assert!(check_rule_measure(VaR, &ratio_rule).is_err());
        assert!(check_rule_measure(Sharpe, &ratio_rule).is_ok());
        let risk_rule = AllocationRule::with_defaults(RuleFamily::RiskInverse);
        assert!(check_rule_measure(Sharpe, &risk_rule).is_err());
        assert!(check_rule_measure(Variance, &risk_rule).is_ok());
        assert!(check_rule_measure(Sharpe, &AllocationRule::equal_weight()).is_ok());
    }

    #[test]
    fn rule_grammar_round_trip() {
        for s in [
            "equal",
            "ratio-raw",
            "ratio-linear:a=1,b=1",
            "risk-inverse",
            "risk-linear:a=1,b=1",
            "ratio-floor-all:a=1,b=1",
            "risk-inverse-linear:a=1,b=1",
            "ratio-linear:a=2.5,b=0.5",
        ] {
            let rule: AllocationRule = s.parse().unwrap();
            let echoed: AllocationRule = rule.to_string().parse().unwrap();
            assert_eq!(rule, echoed, "round trip of `{s}`");
        }
        assert!("frontier".parse::<AllocationRule>().is_err());
        assert!("equal:a=1".parse::<AllocationRule>().is_err());
        assert!("ratio-linear:q=1".parse::<AllocationRule>().is_err());
    }

    #[test]
    fn linear_rules_converge_to_equal_weight_as_b_vanishes() {
        let rho = [0.9, 0.1, 0.4];
        for family in [RuleFamily::RatioLinear, RuleFamily::RiskInverseLinear] {
            let rule = AllocationRule::new(family, 1.0, 1e-12).unwrap();
            let alloc = compute_weights(&rho, &rule).unwrap();
            for w in &alloc.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-10, "family {family:?}: {w}");
            }
        }
    }
}
