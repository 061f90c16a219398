//! Maximum-likelihood estimation of CTS parameters from samples.
//!
//! The likelihood is evaluated against the FFT-tabulated density; positive
//! parameters are optimized on a log scale and the tail index through a
//! scaled logit bounded to [0.05, 1.95] with a repelling barrier around the
//! singular point `alpha = 1`. Two Nelder-Mead rounds (the second restarted
//! from the first minimum with a tighter simplex) keep the whole procedure
//! derivative-free and deterministic.

use statrs::function::gamma::gamma;

use super::{CtsError, CtsParams, CtsTable, FftGrid};
use crate::numerics::{mean, nelder_mead, sample_variance};

const ALPHA_LO: f64 = 0.05;
const ALPHA_SPAN: f64 = 1.9;
const ALPHA_GAP: f64 = 5e-3;
const PENALTY: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Minimum sample count accepted by the fitter.
    pub min_samples: usize,
    /// Iteration cap per Nelder-Mead round.
    pub max_iters: usize,
    /// Relative log-likelihood spread at which a round counts as converged.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_samples: 250,
            max_iters: 4000,
            rel_tol: 1e-9,
        }
    }
}

/// A converged CTS fit.
#[derive(Debug, Clone)]
pub struct CtsFit {
    pub params: CtsParams,
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn encode(params: &CtsParams) -> [f64; 6] {
    let frac = ((params.alpha - ALPHA_LO) / ALPHA_SPAN).clamp(1e-9, 1.0 - 1e-9);
    [
        (frac / (1.0 - frac)).ln(),
        params.c_plus.ln(),
        params.c_minus.ln(),
        params.lambda_plus.ln(),
        params.lambda_minus.ln(),
        params.m,
    ]
}

fn decode(t: &[f64]) -> CtsParams {
    let clamp = |v: f64| v.clamp(-40.0, 40.0);
    let alpha = ALPHA_LO + ALPHA_SPAN / (1.0 + (-clamp(t[0])).exp());
    CtsParams {
        alpha,
        c_plus: clamp(t[1]).exp(),
        c_minus: clamp(t[2]).exp(),
        lambda_plus: clamp(t[3]).exp(),
        lambda_minus: clamp(t[4]).exp(),
        m: t[5],
    }
}

/// Symmetric cumulant-matching start: pick lambda and C so the model matches
/// the sample variance and fourth cumulant at a pinned tail index, with the
/// sample mean as location.
fn moment_start(samples: &[f64], alpha: f64) -> CtsParams {
    let k1 = mean(samples);
    let k2 = sample_variance(samples);
    let m4 = samples.iter().map(|x| (x - k1).powi(4)).sum::<f64>() / samples.len() as f64;
    let k4 = m4 - 3.0 * k2 * k2;

    let lambda = if k4 > 0.0 {
        (gamma(4.0 - alpha) / gamma(2.0 - alpha) * k2 / k4).sqrt()
    } else {
        2.0 / k2.sqrt()
    };
    let lambda = lambda.clamp(0.05 / k2.sqrt(), 50.0 / k2.sqrt());
    let c = k2 * lambda.powf(2.0 - alpha) / (2.0 * gamma(2.0 - alpha));
    CtsParams {
        alpha,
        c_plus: c,
        c_minus: c,
        lambda_plus: lambda,
        lambda_minus: lambda,
        m: k1,
    }
}

/// Negative log-likelihood of the samples under the decoded parameters.
/// Invalid regions (barrier around alpha = 1, failed tabulations) map to
/// large finite penalties so the simplex slides away from them.
fn objective(t: &[f64], samples: &[f64], lo: f64, hi: f64) -> f64 {
    let params = decode(t);
    let gap = (params.alpha - 1.0).abs();
    if gap < ALPHA_GAP {
        return PENALTY * (1.0 + (ALPHA_GAP - gap) / ALPHA_GAP);
    }
    if params.validate().is_err() {
        return PENALTY;
    }
    let grid = match FftGrid::auto_covering(&params, Some((lo, hi))) {
        Ok(g) => g,
        Err(_) => return PENALTY,
    };
    let table = match CtsTable::build(&params, &grid) {
        Ok(t) => t,
        Err(_) => return PENALTY,
    };
    let mut ll = 0.0;
    for &x in samples {
        ll += table.pdf_at(x).max(1e-300).ln();
    }
    -ll
}

/// Fit CTS parameters by maximum likelihood.
///
/// Without an explicit `init` the fit starts from symmetric moment-matched
/// parameters on both sides of the `alpha = 1` barrier (the barrier is not
/// crossable by the simplex) and keeps the better optimum. The result is a
/// deterministic function of `(samples, init, options)`.
pub fn fit_mle(
    samples: &[f64],
    init: Option<CtsParams>,
    options: &FitOptions,
) -> Result<CtsFit, CtsError> {
    if samples.len() < options.min_samples {
        return Err(CtsError::TooFewSamples {
            n: samples.len(),
            min: options.min_samples,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(CtsError::DegenerateSample);
    }
    let sample_sd = sample_variance(samples).sqrt();
    if !(sample_sd > 1e-12 * (1.0 + mean(samples).abs())) {
        return Err(CtsError::DegenerateSample);
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sd = sample_variance(samples).sqrt();

    let starts: Vec<CtsParams> = match init {
        Some(p) => {
            p.validate()?;
            vec![p]
        }
        None => vec![moment_start(samples, 0.6), moment_start(samples, 1.4)],
    };

    let f = |t: &[f64]| objective(t, samples, lo, hi);
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for start in &starts {
        let t0 = encode(start);
        let coarse_steps = [0.4, 0.4, 0.4, 0.4, 0.4, 0.3 * sd];
        let round1 = match nelder_mead(f, &t0, &coarse_steps, options.rel_tol, options.max_iters) {
            Ok(m) => m,
            Err(crate::numerics::OptimError::BadStart) => continue,
            Err(crate::numerics::OptimError::NoConvergence { .. }) => continue,
        };
        let fine_steps = [0.04, 0.04, 0.04, 0.04, 0.04, 0.03 * sd];
        let (x, fval, iters, conv) =
            match nelder_mead(f, &round1.x, &fine_steps, options.rel_tol, options.max_iters) {
                Ok(m) => (m.x, m.f, round1.iters + m.iters, true),
                Err(_) => (round1.x.clone(), round1.f, round1.iters, false),
            };
        let better = match &best {
            None => true,
            Some((_, bf, _, _)) => fval < *bf,
        };
        if better {
            best = Some((x, fval, iters, conv));
        }
    }

    let (x, fval, iterations, converged) = best.ok_or(CtsError::FitNoConvergence {
        best_ll: f64::NEG_INFINITY,
    })?;
    if !converged || fval >= PENALTY {
        return Err(CtsError::FitNoConvergence { best_ll: -fval });
    }
    Ok(CtsFit {
        params: decode(&x),
        log_likelihood: -fval,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cts::sample;

    #[test]
    fn encode_decode_round_trip() {
        let p = CtsParams::new(1.3, 0.7, 0.2, 4.0, 1.5, -0.1).unwrap();
        let q = decode(&encode(&p));
        assert!((p.alpha - q.alpha).abs() < 1e-9);
        assert!((p.c_plus - q.c_plus).abs() < 1e-9);
        assert!((p.lambda_minus - q.lambda_minus).abs() < 1e-9);
        assert!((p.m - q.m).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_or_degenerate_samples() {
        let opts = FitOptions::default();
        let short = vec![0.1; 100];
        assert!(matches!(
            fit_mle(&short, None, &opts),
            Err(CtsError::TooFewSamples { .. })
        ));
        let constant = vec![0.5; 500];
        assert!(matches!(
            fit_mle(&constant, None, &opts),
            Err(CtsError::DegenerateSample)
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let truth = CtsParams::new(1.2, 0.5, 0.5, 3.0, 2.0, 0.0).unwrap();
        let draws = sample(&truth, 400, 11).unwrap();
        let opts = FitOptions {
            max_iters: 1500,
            ..FitOptions::default()
        };
        let a = fit_mle(&draws, Some(truth), &opts).unwrap();
        let b = fit_mle(&draws, Some(truth), &opts).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn fitted_density_tracks_truth_despite_parameter_ridge() {
        // The CTS likelihood has a flat (alpha, C, lambda) ridge: parameter
        // estimates scatter widely at moderate sample sizes, but every point
        // on the ridge encodes nearly the same density. The deliverable of a
        // fit is therefore judged by its law, not its coordinates.
        use crate::cts::CtsTable;
        let truth = CtsParams::new(1.2, 0.5, 0.5, 3.0, 2.0, 0.0).unwrap();
        let draws = sample(&truth, 30_000, 21).unwrap();
        let fit = fit_mle(&draws, None, &FitOptions::default()).unwrap();
        let t_truth = CtsTable::auto(&truth).unwrap();
        let t_fit = CtsTable::auto(&fit.params).unwrap();
        let sd = crate::cts::cumulants(&truth, 2).sqrt();
        for p in [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99] {
            let q0 = t_truth.quantile(p).unwrap();
            let q1 = t_fit.quantile(p).unwrap();
            assert!(
                (q0 - q1).abs() < 0.08 * sd,
                "p={p}: quantile {q1} vs truth {q0}"
            );
        }
    }

    #[test]
    fn moment_start_matches_sample_scale() {
        let truth = CtsParams::new(1.2, 0.5, 0.5, 3.0, 2.0, 0.0).unwrap();
        let draws = sample(&truth, 20_000, 3).unwrap();
        let start = moment_start(&draws, 1.4);
        let c2 = super::super::cumulants(&start, 2);
        let sample_var = sample_variance(&draws);
        assert!((c2 / sample_var - 1.0).abs() < 0.05, "c2 {c2} vs {sample_var}");
    }
}
