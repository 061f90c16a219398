//! ARMA(1,1)-GARCH(1,1) filtering, estimation, and model-based measures.
//!
//! Returns follow `r_t = c + ar*r_{t-1} + ma*eps_{t-1} + eps_t` with
//! `sigma_t^2 = omega + arch*eps_{t-1}^2 + garch*sigma_{t-1}^2`. Estimation
//! is two-stage: the filter parameters come from a Student-t quasi-likelihood
//! (innovations standardized to unit variance), then the classical tempered
//! stable law is refit to the standardized innovations. Reward-risk measures
//! under the model are read off the one-step-ahead conditional law
//! `R = mu_next + sigma_next * X`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StudentT as StudentTDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::cts::{self, CtsError, CtsParams, CtsTable};
use crate::measures::{MeasureKind, MeasureSource, MeasureSpec, MeasureValue};
use crate::numerics::{mean, nelder_mead, sample_variance};

/// Minimum observations accepted by [`fit`].
pub const MIN_FIT_OBS: usize = 100;
/// Minimum observations accepted by [`filter`].
pub const MIN_FILTER_OBS: usize = 30;

const PENALTY: f64 = 1e12;

#[derive(Debug, Error)]
pub enum ArmaGarchError {
    #[error("need at least {min} observations, got {n}")]
    TooShort { n: usize, min: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("return series is degenerate (zero variance)")]
    DegenerateSeries,
    #[error("non-finite value in the recursion at index {index}")]
    NonFinite { index: usize },
    #[error("quasi-likelihood optimization did not converge (best nll {best_nll})")]
    NoConvergence { best_nll: f64 },
    #[error("model measure does not support {0:?}; use the empirical path")]
    UnsupportedMeasure(MeasureKind),
    #[error("measure spec has source Empirical; model_measure needs Model")]
    WrongSource,
    #[error("model {kind} undefined: {reason}")]
    Undefined { kind: &'static str, reason: String },
    #[error(transparent)]
    Cts(#[from] CtsError),
}

/// ARMA(1,1)-GARCH(1,1) parameters with Student-t innovation dof.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaGarchParams {
    pub c: f64,
    pub ar: f64,
    pub ma: f64,
    pub omega: f64,
    pub arch: f64,
    pub garch: f64,
    pub nu: f64,
}

impl ArmaGarchParams {
    pub fn validate(&self) -> Result<(), ArmaGarchError> {
        if self.ar.abs() >= 1.0 {
            return Err(ArmaGarchError::InvalidParams(format!(
                "|ar| must be < 1, got {}",
                self.ar
            )));
        }
        if self.omega <= 0.0 || !self.omega.is_finite() {
            return Err(ArmaGarchError::InvalidParams(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if self.arch < 0.0 || self.garch < 0.0 || self.arch + self.garch >= 1.0 {
            return Err(ArmaGarchError::InvalidParams(format!(
                "need arch, garch >= 0 and arch + garch < 1, got {} + {}",
                self.arch, self.garch
            )));
        }
        if self.nu <= 2.0 {
            return Err(ArmaGarchError::InvalidParams(format!(
                "nu must exceed 2, got {}",
                self.nu
            )));
        }
        Ok(())
    }

    pub fn persistence(&self) -> f64 {
        self.arch + self.garch
    }

    /// Unconditional variance `omega / (1 - arch - garch)`.
    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }
}

/// Recursion state carried between observations: previous residual, previous
/// conditional variance, previous return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub eps_prev: f64,
    pub sigma2_prev: f64,
    pub r_prev: f64,
}

/// Output of one filtering pass.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub residuals: Vec<f64>,
    pub cond_sigmas: Vec<f64>,
    pub cond_means: Vec<f64>,
    /// Standardized innovations `z_t = eps_t / sigma_t`.
    pub innovations: Vec<f64>,
    /// State after the last observation, ready for forecasting.
    pub end_state: FilterState,
}

/// Default initialization: zero pre-sample residual, sample variance as the
/// starting conditional variance, sample mean as the pre-sample return.
pub fn default_state(params: &ArmaGarchParams, r: &[f64]) -> FilterState {
    let _ = params;
    FilterState {
        eps_prev: 0.0,
        sigma2_prev: sample_variance(r),
        r_prev: mean(r),
    }
}

/// Run the deterministic ARMA-GARCH recursion from an explicit state.
pub fn filter_from(
    params: &ArmaGarchParams,
    r: &[f64],
    state: FilterState,
) -> Result<FilterOutput, ArmaGarchError> {
    params.validate()?;
    let n = r.len();
    let mut residuals = Vec::with_capacity(n);
    let mut cond_sigmas = Vec::with_capacity(n);
    let mut cond_means = Vec::with_capacity(n);
    let mut innovations = Vec::with_capacity(n);
    let mut st = state;
    for (index, &rt) in r.iter().enumerate() {
        let mu = params.c + params.ar * st.r_prev + params.ma * st.eps_prev;
        let sigma2 = params.omega + params.arch * st.eps_prev.powi(2) + params.garch * st.sigma2_prev;
        if !(sigma2 > 0.0 && sigma2.is_finite() && mu.is_finite()) {
            return Err(ArmaGarchError::NonFinite { index });
        }
        let sigma = sigma2.sqrt();
        let eps = rt - mu;
        if !eps.is_finite() {
            return Err(ArmaGarchError::NonFinite { index });
        }
        residuals.push(eps);
        cond_sigmas.push(sigma);
        cond_means.push(mu);
        innovations.push(eps / sigma);
        st = FilterState {
            eps_prev: eps,
            sigma2_prev: sigma2,
            r_prev: rt,
        };
    }
    Ok(FilterOutput {
        residuals,
        cond_sigmas,
        cond_means,
        innovations,
        end_state: st,
    })
}

/// Filter with the default initialization.
pub fn filter(params: &ArmaGarchParams, r: &[f64]) -> Result<FilterOutput, ArmaGarchError> {
    if r.len() < MIN_FILTER_OBS {
        return Err(ArmaGarchError::TooShort {
            n: r.len(),
            min: MIN_FILTER_OBS,
        });
    }
    filter_from(params, r, default_state(params, r))
}

/// A simulated ARMA-GARCH path with its true conditional volatilities and the
/// recursion state at the start of the visible window (after burn-in).
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub returns: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub start_state: FilterState,
}

/// Simulate `n` observations after `burnin` discarded ones, with scaled
/// Student-t innovations of unit variance. Deterministic in the seed.
pub fn simulate(
    params: &ArmaGarchParams,
    n: usize,
    burnin: usize,
    seed: u64,
) -> Result<SimulatedPath, ArmaGarchError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    simulate_with(params, n, burnin, &mut rng)
}

/// Simulation against a caller-supplied RNG (for named-stream setups).
pub fn simulate_with(
    params: &ArmaGarchParams,
    n: usize,
    burnin: usize,
    rng: &mut impl Rng,
) -> Result<SimulatedPath, ArmaGarchError> {
    params.validate()?;
    let t_dist = StudentTDist::new(params.nu)
        .map_err(|e| ArmaGarchError::InvalidParams(format!("student-t: {e}")))?;
    let scale = ((params.nu - 2.0) / params.nu).sqrt();
    let mut st = FilterState {
        eps_prev: 0.0,
        sigma2_prev: params.unconditional_variance(),
        r_prev: params.c / (1.0 - params.ar),
    };
    let mut returns = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut start_state = st;
    for i in 0..burnin + n {
        if i == burnin {
            start_state = st;
        }
        let mu = params.c + params.ar * st.r_prev + params.ma * st.eps_prev;
        let sigma2 = params.omega + params.arch * st.eps_prev.powi(2) + params.garch * st.sigma2_prev;
        let sigma = sigma2.sqrt();
        let z = scale * t_dist.sample(rng);
        let eps = sigma * z;
        let rt = mu + eps;
        if i >= burnin {
            returns.push(rt);
            sigmas.push(sigma);
        }
        st = FilterState {
            eps_prev: eps,
            sigma2_prev: sigma2,
            r_prev: rt,
        };
    }
    Ok(SimulatedPath {
        returns,
        sigmas,
        start_state,
    })
}

/// Innovation law attached to a fit: the CTS refit, or the first-stage
/// Student-t when the refit failed (flagged upstream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InnovationLaw {
    Cts(CtsParams),
    StudentT { nu: f64 },
}

impl InnovationLaw {
    /// Variance of the innovation law (CTS second cumulant; the scaled
    /// Student-t is standardized to exactly one).
    pub fn variance(&self) -> f64 {
        match self {
            InnovationLaw::Cts(p) => cts::cumulants(p, 2),
            InnovationLaw::StudentT { .. } => 1.0,
        }
    }
}

/// One-step-ahead conditional forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalForecast {
    pub mu_next: f64,
    pub sigma_next: f64,
}

/// A completed two-stage fit.
#[derive(Debug, Clone)]
pub struct ArmaGarchFit {
    pub params: ArmaGarchParams,
    pub innovations: Vec<f64>,
    pub cond_means: Vec<f64>,
    pub cond_sigmas: Vec<f64>,
    pub residuals: Vec<f64>,
    pub log_likelihood: f64,
    pub law: InnovationLaw,
    /// True when the CTS refit failed and the Student-t law was kept.
    pub cts_fallback: bool,
    /// True when the persistence sits at the stationarity boundary.
    pub boundary: bool,
    end_state: FilterState,
}

impl ArmaGarchFit {
    pub fn forecast(&self) -> ConditionalForecast {
        forecast_from(&self.params, &self.end_state)
    }

    /// CTS parameters of the innovation law, when the refit succeeded.
    pub fn cts_params(&self) -> Option<&CtsParams> {
        match &self.law {
            InnovationLaw::Cts(p) => Some(p),
            InnovationLaw::StudentT { .. } => None,
        }
    }
}

/// One-step-ahead forecast from an explicit recursion state.
pub fn forecast_from(params: &ArmaGarchParams, state: &FilterState) -> ConditionalForecast {
    let mu_next = params.c + params.ar * state.r_prev + params.ma * state.eps_prev;
    let sigma2_next =
        params.omega + params.arch * state.eps_prev.powi(2) + params.garch * state.sigma2_prev;
    ConditionalForecast {
        mu_next,
        sigma_next: sigma2_next.sqrt(),
    }
}

/// Log density of the unit-variance scaled Student-t at `z`.
fn log_std_t_density(z: f64, nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln()
        - (nu + 1.0) / 2.0 * (1.0 + z * z / (nu - 2.0)).ln()
}

fn decode(t: &[f64], _scale_hint: f64) -> ArmaGarchParams {
    let clamp = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
    let sigmoid = |v: f64| 1.0 / (1.0 + (-clamp(v, -40.0, 40.0)).exp());
    let persistence = sigmoid(t[4]);
    let share = sigmoid(t[5]);
    ArmaGarchParams {
        c: t[0],
        ar: clamp(t[1], -40.0, 40.0).tanh(),
        ma: clamp(t[2], -40.0, 40.0).tanh(),
        omega: clamp(t[3], -60.0, 40.0).exp(),
        arch: persistence * (1.0 - share),
        garch: persistence * share,
        nu: 2.0 + clamp(t[6], -20.0, 7.0).exp(),
    }
}

fn encode(p: &ArmaGarchParams) -> [f64; 7] {
    let logit = |v: f64| {
        let v = v.clamp(1e-9, 1.0 - 1e-9);
        (v / (1.0 - v)).ln()
    };
    let persistence = p.persistence().max(1e-9);
    let share = (p.garch / persistence).clamp(1e-9, 1.0 - 1e-9);
    [
        p.c,
        ((1.0 + p.ar) / (1.0 - p.ar)).ln() / 2.0,
        ((1.0 + p.ma) / (1.0 - p.ma)).ln() / 2.0,
        p.omega.ln(),
        logit(persistence),
        logit(share),
        (p.nu - 2.0).ln(),
    ]
}

/// Negative Student-t quasi-log-likelihood of the filtered series.
fn nll(params: &ArmaGarchParams, r: &[f64], state: FilterState) -> f64 {
    let out = match filter_from(params, r, state) {
        Ok(o) => o,
        Err(_) => return PENALTY,
    };
    let mut acc = 0.0;
    for (z, sigma) in out.innovations.iter().zip(&out.cond_sigmas) {
        acc += log_std_t_density(*z, params.nu) - sigma.ln();
    }
    if acc.is_finite() {
        -acc
    } else {
        PENALTY
    }
}

/// Knobs for [`fit`]. The CTS stage accepts the 126-observation formation
/// windows of the backtest, hence the lower floor than the standalone CTS
/// fitter default.
#[derive(Debug, Clone)]
pub struct ArmaGarchOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub cts_min_samples: usize,
    /// Skip the CTS refit entirely (first-stage law only).
    pub skip_cts: bool,
}

impl Default for ArmaGarchOptions {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            rel_tol: 1e-9,
            cts_min_samples: 100,
            skip_cts: false,
        }
    }
}

/// Two-stage fit: Student-t quasi-MLE for the filter, CTS refit on the
/// standardized innovations. Deterministic; refitting the same window gives
/// bitwise-identical output.
pub fn fit(r: &[f64]) -> Result<ArmaGarchFit, ArmaGarchError> {
    fit_with_options(r, &ArmaGarchOptions::default())
}

pub fn fit_with_options(
    r: &[f64],
    options: &ArmaGarchOptions,
) -> Result<ArmaGarchFit, ArmaGarchError> {
    if r.len() < MIN_FIT_OBS {
        return Err(ArmaGarchError::TooShort {
            n: r.len(),
            min: MIN_FIT_OBS,
        });
    }
    let var = sample_variance(r);
    if !(var.sqrt() > 1e-12 * (1.0 + mean(r).abs())) {
        return Err(ArmaGarchError::DegenerateSeries);
    }
    let state = FilterState {
        eps_prev: 0.0,
        sigma2_prev: var,
        r_prev: mean(r),
    };
    let sd = var.sqrt();
    let objective = |t: &[f64]| nll(&decode(t, sd), r, state);

    // Two deterministic starts on either side of the persistence range; ties
    // in likelihood resolve to the lower-persistence (more parsimonious)
    // solution so white-noise inputs do not pick up spurious GARCH memory.
    let starts = [
        ArmaGarchParams {
            c: mean(r),
            ar: 0.0,
            ma: 0.0,
            omega: var * 0.1,
            arch: 0.054,
            garch: 0.846,
            nu: 8.0,
        },
        ArmaGarchParams {
            c: mean(r),
            ar: 0.0,
            ma: 0.0,
            omega: var * 0.8,
            arch: 0.10,
            garch: 0.10,
            nu: 8.0,
        },
    ];

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let t0 = encode(start);
        let coarse = [0.3 * sd.max(1e-12), 0.3, 0.3, 0.5, 0.5, 0.5, 0.4];
        let round1 = match nelder_mead(objective, &t0, &coarse, options.rel_tol, options.max_iters)
        {
            Ok(m) => m,
            Err(_) => continue,
        };
        let fine = [0.03 * sd.max(1e-12), 0.03, 0.03, 0.05, 0.05, 0.05, 0.04];
        let round2 =
            match nelder_mead(objective, &round1.x, &fine, options.rel_tol, options.max_iters) {
                Ok(m) => m,
                Err(_) => continue,
            };
        let replace = match &best {
            None => true,
            Some((bx, bf)) => {
                let tie = (round2.f - bf).abs() <= 1e-6 * (1.0 + bf.abs());
                if tie {
                    decode(&round2.x, sd).persistence() < decode(bx, sd).persistence()
                } else {
                    round2.f < *bf
                }
            }
        };
        if replace {
            best = Some((round2.x, round2.f));
        }
    }

    let (tx, fval) = best.ok_or(ArmaGarchError::NoConvergence {
        best_nll: f64::INFINITY,
    })?;
    if fval >= PENALTY {
        return Err(ArmaGarchError::NoConvergence { best_nll: fval });
    }
    let params = decode(&tx, sd);
    params.validate()?;
    let out = filter_from(&params, r, state)?;

    let (law, cts_fallback) = if options.skip_cts {
        (InnovationLaw::StudentT { nu: params.nu }, false)
    } else {
        let cts_opts = cts::FitOptions {
            min_samples: options.cts_min_samples,
            ..cts::FitOptions::default()
        };
        match cts::fit_mle(&out.innovations, None, &cts_opts) {
            Ok(fit) => (InnovationLaw::Cts(fit.params), false),
            Err(_) => (InnovationLaw::StudentT { nu: params.nu }, true),
        }
    };

    Ok(ArmaGarchFit {
        params,
        innovations: out.innovations,
        cond_means: out.cond_means,
        cond_sigmas: out.cond_sigmas,
        residuals: out.residuals,
        log_likelihood: -fval,
        law,
        cts_fallback,
        boundary: params.persistence() > 0.995,
        end_state: out.end_state,
    })
}

/// Lower-tail VaR/CVaR of the innovation law (positive-loss convention).
fn law_tail(law: &InnovationLaw, eta: f64) -> Result<(f64, f64), ArmaGarchError> {
    match law {
        InnovationLaw::Cts(p) => {
            let table = CtsTable::auto(p)?;
            Ok((-table.quantile(eta)?, table.cvar(eta)?))
        }
        InnovationLaw::StudentT { nu } => {
            let t = StudentsT::new(0.0, 1.0, *nu)
                .map_err(|e| ArmaGarchError::InvalidParams(format!("student-t: {e}")))?;
            let scale = ((nu - 2.0) / nu).sqrt();
            let q = t.inverse_cdf(eta);
            let var = -scale * q;
            let cvar = scale * t.pdf(q) * (nu + q * q) / ((nu - 1.0) * eta);
            Ok((var, cvar))
        }
    }
}

/// Reward-risk measure of the one-step conditional law `R = mu + sigma * X`.
///
/// Tail measures apply to the excess `R - rf_next`; the Rachev numerator uses
/// the negated law. Maximum drawdown and Calmar are path measures with no
/// one-step analogue and are rejected.
pub fn model_measure(
    law: &InnovationLaw,
    forecast: &ConditionalForecast,
    spec: &MeasureSpec,
    rf_next: f64,
) -> Result<MeasureValue, ArmaGarchError> {
    if spec.source != MeasureSource::Model {
        return Err(ArmaGarchError::WrongSource);
    }
    spec.validate()
        .map_err(|e| ArmaGarchError::InvalidParams(e.to_string()))?;
    let (mu, sigma) = (forecast.mu_next, forecast.sigma_next);
    let excess_mean = mu - rf_next;
    let vol = sigma * law.variance().sqrt();

    let value = match spec.kind {
        MeasureKind::Volatility => vol,
        MeasureKind::Variance => vol * vol,
        MeasureKind::Sharpe => {
            if vol <= 0.0 {
                return Err(ArmaGarchError::Undefined {
                    kind: "sharpe",
                    reason: "zero conditional volatility".into(),
                });
            }
            excess_mean / vol
        }
        MeasureKind::VaR => excess_tail(law, sigma, excess_mean, spec.eta)?.0,
        MeasureKind::CVaR => excess_tail(law, sigma, excess_mean, spec.eta)?.1,
        MeasureKind::Star => {
            let cvar = excess_tail(law, sigma, excess_mean, spec.eta)?.1;
            if cvar <= 0.0 {
                return Err(ArmaGarchError::Undefined {
                    kind: "star",
                    reason: format!("non-positive CVaR {cvar}"),
                });
            }
            excess_mean / cvar
        }
        MeasureKind::Rachev => {
            // Numerator: lower tail of rf - R, i.e. the negated excess law.
            let gain = negated_excess_tail(law, sigma, excess_mean, spec.eta)?;
            let loss = excess_tail(law, sigma, excess_mean, spec.zeta)?.1;
            if loss <= 0.0 {
                return Err(ArmaGarchError::Undefined {
                    kind: "rachev",
                    reason: format!("non-positive denominator CVaR {loss}"),
                });
            }
            gain / loss
        }
        other => return Err(ArmaGarchError::UnsupportedMeasure(other)),
    };
    Ok(MeasureValue {
        kind: spec.kind,
        value,
    })
}

/// (VaR, CVaR) of the excess law `excess_mean + sigma * X`.
fn excess_tail(
    law: &InnovationLaw,
    sigma: f64,
    excess_mean: f64,
    eta: f64,
) -> Result<(f64, f64), ArmaGarchError> {
    match law {
        InnovationLaw::Cts(p) => {
            let shifted = p.affine(sigma, excess_mean)?;
            let table = CtsTable::auto(&shifted)?;
            Ok((-table.quantile(eta)?, table.cvar(eta)?))
        }
        InnovationLaw::StudentT { .. } => {
            let (var_z, cvar_z) = law_tail(law, eta)?;
            Ok((sigma * var_z - excess_mean, sigma * cvar_z - excess_mean))
        }
    }
}

/// CVaR of the negated excess law (the Rachev gain tail).
fn negated_excess_tail(
    law: &InnovationLaw,
    sigma: f64,
    excess_mean: f64,
    eta: f64,
) -> Result<f64, ArmaGarchError> {
    match law {
        InnovationLaw::Cts(p) => {
            let negated = p.affine(sigma, excess_mean)?.negated();
            let table = CtsTable::auto(&negated)?;
            table.cvar(eta).map_err(Into::into)
        }
        InnovationLaw::StudentT { .. } => {
            // Symmetric law: the negated tail matches up to the mean shift.
            let (_, cvar_z) = law_tail(law, eta)?;
            Ok(sigma * cvar_z + excess_mean)
        }
    }
}
