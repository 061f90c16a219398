//! Empirical reward-risk measures on a daily return window.
//!
//! All tail measures use the lower order statistic at index `ceil(eta * n)`
//! (no interpolation), so CVaR is exactly the mean of a well-defined worst
//! set. Losses are reported with positive sign. Ratio measures stay in
//! per-day units at this layer; annualization happens in reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{mean, sample_std, sample_variance, tail_count};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("return and risk-free series lengths differ ({r} vs {rf})")]
    LengthMismatch { r: usize, rf: usize },
    #[error("need at least {min} observations, got {n}")]
    TooShort { n: usize, min: usize },
    #[error("{kind} is undefined here: {reason}")]
    Undefined { kind: &'static str, reason: String },
    #[error("tail level {0} outside (0, 1)")]
    BadTailLevel(f64),
}

/// Which reward-risk measure to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    Volatility,
    Variance,
    Sharpe,
    MaxDrawdown,
    Calmar,
    VaR,
    CVaR,
    Star,
    Rachev,
}

impl MeasureKind {
    /// Ratio measures prefer larger values; risk measures prefer smaller.
    pub fn is_ratio(self) -> bool {
        matches!(
            self,
            MeasureKind::Sharpe | MeasureKind::Calmar | MeasureKind::Star | MeasureKind::Rachev
        )
    }

    pub fn is_risk(self) -> bool {
        !self.is_ratio()
    }

    pub fn label(self) -> &'static str {
        match self {
            MeasureKind::Volatility => "volatility",
            MeasureKind::Variance => "variance",
            MeasureKind::Sharpe => "sharpe",
            MeasureKind::MaxDrawdown => "max-drawdown",
            MeasureKind::Calmar => "calmar",
            MeasureKind::VaR => "var",
            MeasureKind::CVaR => "cvar",
            MeasureKind::Star => "star",
            MeasureKind::Rachev => "rachev",
        }
    }
}

/// Whether a measure is computed from the historical window or from the
/// fitted ARMA-GARCH risk model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureSource {
    Empirical,
    Model,
}

/// A measure request: kind, tail levels, and computation source.
///
/// `eta` is the tail level for VaR/CVaR/STAR and the Rachev gain tail
/// (numerator); `zeta` is the Rachev loss tail (denominator) and is ignored
/// by every other kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub eta: f64,
    pub zeta: f64,
    pub source: MeasureSource,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind, eta: f64, zeta: f64, source: MeasureSource) -> Self {
        Self {
            kind,
            eta,
            zeta,
            source,
        }
    }

    pub fn empirical(kind: MeasureKind, eta: f64, zeta: f64) -> Self {
        Self::new(kind, eta, zeta, MeasureSource::Empirical)
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(MeasureError::BadTailLevel(self.eta));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(MeasureError::BadTailLevel(self.zeta));
        }
        Ok(())
    }
}

/// A computed measure value, echoing the kind that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub kind: MeasureKind,
    pub value: f64,
}

fn check_aligned(r: &[f64], rf: &[f64]) -> Result<(), MeasureError> {
    if r.len() != rf.len() {
        return Err(MeasureError::LengthMismatch {
            r: r.len(),
            rf: rf.len(),
        });
    }
    Ok(())
}

fn excess(r: &[f64], rf: &[f64]) -> Result<Vec<f64>, MeasureError> {
    check_aligned(r, rf)?;
    Ok(r.iter().zip(rf).map(|(a, b)| a - b).collect())
}

/// Arithmetic mean of the excess return `r_t - rf_t`.
pub fn mean_excess(r: &[f64], rf: &[f64]) -> Result<f64, MeasureError> {
    let e = excess(r, rf)?;
    if e.len() < 2 {
        return Err(MeasureError::TooShort { n: e.len(), min: 2 });
    }
    Ok(mean(&e))
}

/// Sample standard deviation (divisor n-1).
pub fn volatility(r: &[f64]) -> Result<f64, MeasureError> {
    if r.len() < 2 {
        return Err(MeasureError::TooShort { n: r.len(), min: 2 });
    }
    Ok(sample_std(r))
}

/// Sample variance (divisor n-1).
pub fn variance(r: &[f64]) -> Result<f64, MeasureError> {
    if r.len() < 2 {
        return Err(MeasureError::TooShort { n: r.len(), min: 2 });
    }
    Ok(sample_variance(r))
}

/// Per-day Sharpe ratio: mean excess return over the standard deviation of
/// excess returns.
pub fn sharpe(r: &[f64], rf: &[f64]) -> Result<f64, MeasureError> {
    let e = excess(r, rf)?;
    let sd = volatility(&e)?;
    if sd <= 0.0 {
        return Err(MeasureError::Undefined {
            kind: "sharpe",
            reason: "zero volatility of excess returns".into(),
        });
    }
    Ok(mean(&e) / sd)
}

/// Maximum drawdown of the compounded wealth path, as a fraction in [0, 1].
/// The initial wealth counts as the first peak.
pub fn max_drawdown(r: &[f64]) -> Result<f64, MeasureError> {
    if r.is_empty() {
        return Err(MeasureError::TooShort { n: 0, min: 1 });
    }
    let mut wealth = 1.0;
    let mut peak = 1.0;
    let mut worst = 1.0;
    for &ret in r {
        wealth *= 1.0 + ret;
        if wealth > peak {
            peak = wealth;
        }
        let ratio = wealth / peak;
        if ratio < worst {
            worst = ratio;
        }
    }
    Ok(1.0 - worst)
}

/// Cumulative compounded return of the window.
pub fn cumulative_return(r: &[f64]) -> f64 {
    r.iter().fold(1.0, |acc, ret| acc * (1.0 + ret)) - 1.0
}

/// Window Calmar ratio: cumulative return over maximum drawdown. A window
/// with zero drawdown returns `+inf`, the ranking sentinel for monotone-up
/// assets (allocation caps it; see the allocation module).
pub fn calmar(r: &[f64]) -> Result<f64, MeasureError> {
    let mdd = max_drawdown(r)?;
    let cum = cumulative_return(r);
    if mdd <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(cum / mdd)
}

/// Empirical VaR at confidence `(1-eta)100%`: the negated lower order
/// statistic of excess returns at index `ceil(eta * n)`. Positive values are
/// losses; an all-gains window yields a negative value, preserved as is.
pub fn empirical_var(r: &[f64], rf: &[f64], eta: f64) -> Result<f64, MeasureError> {
    let tail = lower_tail(r, rf, eta)?;
    Ok(-tail.last().copied().expect("tail is non-empty"))
}

/// Empirical CVaR at confidence `(1-eta)100%`: negated mean of the worst
/// `ceil(eta * n)` excess returns.
pub fn empirical_cvar(r: &[f64], rf: &[f64], eta: f64) -> Result<f64, MeasureError> {
    let tail = lower_tail(r, rf, eta)?;
    Ok(-mean(&tail))
}

/// The worst `ceil(eta*n)` excess returns, ascending.
fn lower_tail(r: &[f64], rf: &[f64], eta: f64) -> Result<Vec<f64>, MeasureError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(MeasureError::BadTailLevel(eta));
    }
    let mut e = excess(r, rf)?;
    let min_len = (1.0 / eta).ceil() as usize;
    if e.len() < min_len {
        return Err(MeasureError::TooShort {
            n: e.len(),
            min: min_len,
        });
    }
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = tail_count(eta, e.len());
    e.truncate(k);
    Ok(e)
}

/// STAR ratio: mean excess return over CVaR at level `eta`.
pub fn star_ratio(r: &[f64], rf: &[f64], eta: f64) -> Result<f64, MeasureError> {
    let cvar = empirical_cvar(r, rf, eta)?;
    if cvar <= 0.0 {
        return Err(MeasureError::Undefined {
            kind: "star",
            reason: format!("non-positive CVaR {cvar}"),
        });
    }
    Ok(mean_excess(r, rf)? / cvar)
}

/// Rachev ratio: CVaR at level `eta` of the sign-flipped excess series
/// (expected upper-tail gain) over CVaR at level `zeta` of the excess series
/// (expected lower-tail loss).
pub fn rachev_ratio(r: &[f64], rf: &[f64], eta: f64, zeta: f64) -> Result<f64, MeasureError> {
    let flipped: Vec<f64> = r.iter().map(|x| -x).collect();
    let neg_rf: Vec<f64> = rf.iter().map(|x| -x).collect();
    let gain = empirical_cvar(&flipped, &neg_rf, eta)?;
    let loss = empirical_cvar(r, rf, zeta)?;
    if loss <= 0.0 {
        return Err(MeasureError::Undefined {
            kind: "rachev",
            reason: format!("non-positive denominator CVaR {loss}"),
        });
    }
    Ok(gain / loss)
}

/// Dispatch an empirical measure spec on an aligned window.
pub fn compute_empirical(
    spec: &MeasureSpec,
    r: &[f64],
    rf: &[f64],
) -> Result<MeasureValue, MeasureError> {
    spec.validate()?;
    let value = match spec.kind {
        MeasureKind::Volatility => volatility(r)?,
        MeasureKind::Variance => variance(r)?,
        MeasureKind::Sharpe => sharpe(r, rf)?,
        MeasureKind::MaxDrawdown => max_drawdown(r)?,
        MeasureKind::Calmar => calmar(r)?,
        MeasureKind::VaR => empirical_var(r, rf, spec.eta)?,
        MeasureKind::CVaR => empirical_cvar(r, rf, spec.eta)?,
        MeasureKind::Star => star_ratio(r, rf, spec.eta)?,
        MeasureKind::Rachev => rachev_ratio(r, rf, spec.eta, spec.zeta)?,
    };
    Ok(MeasureValue {
        kind: spec.kind,
        value,
    })
}
