//! Classical tempered stable (CTS) distribution numerics.
//!
//! A CTS law is parameterized by a tail index `alpha` in (0,2) excluding 1,
//! positive scales `c_plus`/`c_minus`, positive tempering rates
//! `lambda_plus`/`lambda_minus`, and a location `m`. The characteristic
//! function is evaluated in closed form; density, CDF, quantiles, tail
//! expectations, and sampling all run through a discrete Fourier inversion
//! onto a tabulated grid. The drift term is chosen so that the distribution
//! mean equals `m` exactly, which the estimation pipeline relies on when
//! standardized innovations are refit.

mod fit;

pub use fit::{fit_mle, CtsFit, FitOptions};

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::numerics::adaptive_simpson;

/// How small |phi(u_max)| must be before the frequency domain is truncated.
const CF_TRUNCATION: f64 = 1e-12;

/// Acceptable probability mass outside the spatial window.
const MAX_TAIL_MASS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CtsError {
    #[error("invalid CTS parameters: {0}")]
    InvalidParams(String),
    #[error("FFT grid too narrow: probability mass {mass:.3e} falls outside the spatial window")]
    GridTooNarrow { mass: f64 },
    #[error("density ringing {min_pdf:.3e} below tolerance; widen the grid")]
    ExcessiveRinging { min_pdf: f64 },
    #[error("characteristic function does not decay below {CF_TRUNCATION:e} at any searched frequency")]
    NoFrequencyDecay,
    #[error("frequency resolution insufficient: need {needed} points but the grid has {available}")]
    FrequencyResolution { needed: usize, available: usize },
    #[error("probability {0} outside (0, 1)")]
    BadProbability(f64),
    #[error("tail quadrature did not reach tolerance {requested:.1e} (achieved {achieved:.1e})")]
    QuadratureTolerance { requested: f64, achieved: f64 },
    #[error("need at least {min} samples to fit, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("sample is degenerate (zero variance)")]
    DegenerateSample,
    #[error("MLE did not converge; best log-likelihood {best_ll}")]
    FitNoConvergence { best_ll: f64 },
}

/// Parameters of a classical tempered stable distribution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CtsParams {
    pub alpha: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub m: f64,
}

impl CtsParams {
    pub fn new(
        alpha: f64,
        c_plus: f64,
        c_minus: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        m: f64,
    ) -> Result<Self, CtsError> {
        let p = Self {
            alpha,
            c_plus,
            c_minus,
            lambda_plus,
            lambda_minus,
            m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CtsError> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) || (self.alpha - 1.0).abs() < 1e-9 {
            return Err(CtsError::InvalidParams(format!(
                "alpha must lie in (0,2) excluding 1, got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("c_plus", self.c_plus),
            ("c_minus", self.c_minus),
            ("lambda_plus", self.lambda_plus),
            ("lambda_minus", self.lambda_minus),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CtsError::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.m.is_finite() {
            return Err(CtsError::InvalidParams("m must be finite".into()));
        }
        Ok(())
    }

    /// Law of `scale * X + shift` for `scale > 0`. The CTS family is closed
    /// under positive affine maps: scales multiply by `scale^alpha`,
    /// tempering rates divide by `scale`, and the location maps affinely.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self, CtsError> {
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(CtsError::InvalidParams(format!(
                "affine map needs positive finite scale and finite shift, got ({scale}, {shift})"
            )));
        }
        Ok(Self {
            alpha: self.alpha,
            c_plus: self.c_plus * scale.powf(self.alpha),
            c_minus: self.c_minus * scale.powf(self.alpha),
            lambda_plus: self.lambda_plus / scale,
            lambda_minus: self.lambda_minus / scale,
            m: scale * self.m + shift,
        })
    }

    /// Law of `-X`: the two tails swap roles and the location flips sign.
    pub fn negated(&self) -> Self {
        Self {
            alpha: self.alpha,
            c_plus: self.c_minus,
            c_minus: self.c_plus,
            lambda_plus: self.lambda_minus,
            lambda_minus: self.lambda_plus,
            m: -self.m,
        }
    }
}

/// Characteristic function `phi(u)`.
///
/// The linear-in-`u` drift uses tempering exponents `alpha - 1`, which makes
/// the mean equal to `m`: the derivative of the tempering term at `u = 0` is
/// cancelled exactly through `Gamma(1 - alpha) = -alpha * Gamma(-alpha)`.
pub fn char_fn(params: &CtsParams, u: f64) -> Complex64 {
    char_fn_complex(params, Complex64::new(u, 0.0))
}

fn char_fn_complex(params: &CtsParams, u: Complex64) -> Complex64 {
    let CtsParams {
        alpha,
        c_plus,
        c_minus,
        lambda_plus,
        lambda_minus,
        m,
    } = *params;
    let i = Complex64::i();
    let g_neg_alpha = gamma(-alpha);
    let g_one_minus = gamma(1.0 - alpha);

    let drift = i * u * m
        - i * u
            * g_one_minus
            * (c_plus * lambda_plus.powf(alpha - 1.0) - c_minus * lambda_minus.powf(alpha - 1.0));
    let temper = g_neg_alpha
        * (c_plus * ((Complex64::new(lambda_plus, 0.0) - i * u).powf(alpha) - lambda_plus.powf(alpha))
            + c_minus
                * ((Complex64::new(lambda_minus, 0.0) + i * u).powf(alpha)
                    - lambda_minus.powf(alpha)));
    (drift + temper).exp()
}

/// Real part of `log phi(u)`, i.e. `log |phi(u)|`. Cheap decay probe used
/// when sizing the frequency window.
fn log_cf_magnitude(params: &CtsParams, u: f64) -> f64 {
    let i = Complex64::i();
    let alpha = params.alpha;
    let temper = gamma(-alpha)
        * (params.c_plus
            * ((Complex64::new(params.lambda_plus, 0.0) - i * u).powf(alpha)
                - params.lambda_plus.powf(alpha))
            + params.c_minus
                * ((Complex64::new(params.lambda_minus, 0.0) + i * u).powf(alpha)
                    - params.lambda_minus.powf(alpha)));
    temper.re
}

/// Cumulant of order 1..=4: `c1 = m`,
/// `cn = Gamma(n - alpha) * (C+ lambda+^(alpha-n) + (-1)^n C- lambda-^(alpha-n))` for n >= 2.
pub fn cumulants(params: &CtsParams, order: u32) -> f64 {
    assert!((1..=4).contains(&order), "cumulant order must be 1..=4");
    if order == 1 {
        return params.m;
    }
    let n = f64::from(order);
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    gamma(n - params.alpha)
        * (params.c_plus * params.lambda_plus.powf(params.alpha - n)
            + sign * params.c_minus * params.lambda_minus.powf(params.alpha - n))
}

/// Discretization used for the Fourier inversion.
///
/// The spatial grid has `n_points` equally spaced nodes on
/// `[x_center - x_halfwidth, x_center + x_halfwidth]`; the conjugate
/// frequency step is `2*pi / (2 * x_halfwidth)` and frequencies above
/// `u_max` (where |phi| has decayed below truncation) are dropped.
#[derive(Debug, Clone, Copy)]
pub struct FftGrid {
    pub n_points: usize,
    pub u_max: f64,
    pub x_center: f64,
    pub x_halfwidth: f64,
}

impl FftGrid {
    pub const DEFAULT_N: usize = 1 << 14;

    pub fn new(
        n_points: usize,
        u_max: f64,
        x_center: f64,
        x_halfwidth: f64,
    ) -> Result<Self, CtsError> {
        if n_points < (1 << 10) || !n_points.is_power_of_two() {
            return Err(CtsError::InvalidParams(format!(
                "n_points must be a power of two >= 1024, got {n_points}"
            )));
        }
        if !(u_max > 0.0 && x_halfwidth > 0.0) || !x_center.is_finite() {
            return Err(CtsError::InvalidParams(
                "grid needs u_max > 0, x_halfwidth > 0, finite x_center".into(),
            ));
        }
        Ok(Self {
            n_points,
            u_max,
            x_center,
            x_halfwidth,
        })
    }

    /// Default grid for a parameter set: frequency window sized so the
    /// characteristic function has decayed below truncation, spatial window
    /// `m +- 12 sqrt(c2)`.
    pub fn auto(params: &CtsParams) -> Result<Self, CtsError> {
        Self::auto_covering(params, None)
    }

    /// Like [`FftGrid::auto`] but widened to cover `[lo, hi]` (used by the
    /// MLE so every sample lies inside the tabulated window).
    pub fn auto_covering(params: &CtsParams, cover: Option<(f64, f64)>) -> Result<Self, CtsError> {
        params.validate()?;
        let sd = cumulants(params, 2).sqrt();
        let mut halfwidth = 12.0 * sd;
        if let Some((lo, hi)) = cover {
            let reach = (params.m - lo).abs().max((hi - params.m).abs());
            halfwidth = halfwidth.max(reach + 4.0 * sd);
        }
        let u_max = find_u_max(params)?;
        Self::new(Self::DEFAULT_N, u_max, params.m, halfwidth)
    }
}

/// Smallest frequency (up to ~5% slack) where `|phi|` drops below truncation.
fn find_u_max(params: &CtsParams) -> Result<f64, CtsError> {
    let threshold = CF_TRUNCATION.ln();
    let mut u = 1.0;
    let mut doublings = 0;
    while log_cf_magnitude(params, u) > threshold {
        u *= 2.0;
        doublings += 1;
        if doublings > 120 {
            return Err(CtsError::NoFrequencyDecay);
        }
    }
    let mut lo = u / 2.0;
    let mut hi = u;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if log_cf_magnitude(params, mid) > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi * 1.05)
}

fn fft_plan(n: usize) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| FftPlanner::new().plan_fft_forward(n))
        .clone()
}

/// Tabulated density and CDF of a CTS law on an [`FftGrid`].
#[derive(Debug, Clone)]
pub struct CtsTable {
    params: CtsParams,
    x_min: f64,
    dx: f64,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    /// Most negative raw density value before clipping, kept for diagnostics.
    pub min_raw_pdf: f64,
}

impl CtsTable {
    /// Invert the characteristic function onto the grid and integrate the CDF.
    ///
    /// Fails if more than `1e-6` probability mass falls outside the spatial
    /// window or the ringing of the inversion is material relative to the
    /// density peak.
    pub fn build(params: &CtsParams, grid: &FftGrid) -> Result<Self, CtsError> {
        params.validate()?;
        let n = grid.n_points;
        let width = 2.0 * grid.x_halfwidth;
        let x_min = grid.x_center - grid.x_halfwidth;
        let dx = width / n as f64;
        let du = 2.0 * std::f64::consts::PI / width;

        // Frequencies above u_max contribute below truncation; skip them.
        let k_needed = (grid.u_max / du).ceil() as usize + 1;
        if k_needed > n {
            return Err(CtsError::FrequencyResolution {
                needed: k_needed,
                available: n,
            });
        }

        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, slot) in buf.iter_mut().enumerate().take(k_needed) {
            let u = k as f64 * du;
            let weight = if k == 0 { 0.5 } else { 1.0 };
            let phase = Complex64::new(0.0, -u * x_min).exp();
            *slot = char_fn(params, u) * phase * weight;
        }
        let fft = fft_plan(n);
        fft.process(&mut buf);

        let scale = du / std::f64::consts::PI;
        let mut pdf: Vec<f64> = buf.iter().map(|c| c.re * scale).collect();

        let peak = pdf.iter().cloned().fold(0.0, f64::max);
        let min_raw = pdf.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_raw < -1e-8 * peak.max(1.0) {
            return Err(CtsError::ExcessiveRinging { min_pdf: min_raw });
        }
        for v in &mut pdf {
            if *v < 0.0 {
                *v = 0.0;
            }
        }

        let mut cdf = vec![0.0; n];
        for j in 1..n {
            cdf[j] = cdf[j - 1] + 0.5 * dx * (pdf[j - 1] + pdf[j]);
        }
        let mass = cdf[n - 1];
        if (1.0 - mass).abs() > MAX_TAIL_MASS {
            return Err(CtsError::GridTooNarrow {
                mass: (1.0 - mass).abs(),
            });
        }

        Ok(Self {
            params: *params,
            x_min,
            dx,
            pdf,
            cdf,
            min_raw_pdf: min_raw,
        })
    }

    /// Build on the automatically sized grid.
    pub fn auto(params: &CtsParams) -> Result<Self, CtsError> {
        Self::build(params, &FftGrid::auto(params)?)
    }

    pub fn params(&self) -> &CtsParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.pdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pdf.is_empty()
    }

    pub fn x_at(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn pdf_values(&self) -> &[f64] {
        &self.pdf
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// Linear interpolation of the density; zero outside the window.
    pub fn pdf_at(&self, x: f64) -> f64 {
        let t = (x - self.x_min) / self.dx;
        if t < 0.0 || t > (self.len() - 1) as f64 {
            return 0.0;
        }
        let j = (t as usize).min(self.len() - 2);
        let frac = t - j as f64;
        self.pdf[j] * (1.0 - frac) + self.pdf[j + 1] * frac
    }

    /// Linear interpolation of the CDF; clamps to {0, mass} outside.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let t = (x - self.x_min) / self.dx;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= (self.len() - 1) as f64 {
            return self.cdf[self.len() - 1];
        }
        let j = t as usize;
        let frac = t - j as f64;
        self.cdf[j] * (1.0 - frac) + self.cdf[j + 1] * frac
    }

    /// Inverse CDF by bisection on the tabulated interpolant.
    pub fn quantile(&self, p: f64) -> Result<f64, CtsError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(CtsError::BadProbability(p));
        }
        let n = self.len();
        let target = p.min(self.cdf[n - 1]);
        // Bracketing cell by binary search, then exact inversion of the
        // linear interpolant (which drives |F(x) - p| to rounding level).
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c0 = self.cdf[lo];
        let c1 = self.cdf[hi];
        let x = if c1 > c0 {
            self.x_at(lo) + self.dx * (target - c0) / (c1 - c0)
        } else {
            self.x_at(lo)
        };
        Ok(x)
    }

    /// Numeric mean of the tabulated density (trapezoidal).
    pub fn mean_numeric(&self) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for j in 0..n - 1 {
            let x0 = self.x_at(j);
            let x1 = self.x_at(j + 1);
            acc += 0.5 * self.dx * (x0 * self.pdf[j] + x1 * self.pdf[j + 1]);
        }
        acc
    }

    /// Lower-tail conditional loss at level `eta`:
    /// `CVaR(eta) = (1/eta) * integral_0^eta VaR((1-z)100%) dz`, evaluated by
    /// adaptive quadrature of the quantile function, reported as a positive
    /// loss when the tail lies below zero.
    pub fn cvar(&self, eta: f64) -> Result<f64, CtsError> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(CtsError::BadProbability(eta));
        }
        let eps = 1e-10_f64.min(eta / 2.0);
        let q = |z: f64| self.quantile(z).expect("z within (0,1) by construction");
        let tol = 1e-9 * (1.0 + self.dx * self.len() as f64);
        let (integral, achieved) = adaptive_simpson(&q, eps, eta, tol);
        if achieved > 100.0 * tol {
            return Err(CtsError::QuadratureTolerance {
                requested: tol,
                achieved,
            });
        }
        // The [0, eps) sliver is bounded by eps * |x_min|; fold it in as a
        // rectangle so the average is over the full tail.
        let head = eps * q(eps);
        Ok(-(integral + head) / eta)
    }

    /// Inverse-CDF draws against the tabulated law.
    pub fn sample_with(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                self.quantile(u).expect("u within (0,1)")
            })
            .collect()
    }

    /// Dump `(x, pdf, cdf)` rows as CSV for plotting.
    pub fn write_diagnostic_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,pdf,cdf")?;
        for j in 0..self.len() {
            writeln!(out, "{},{},{}", self.x_at(j), self.pdf[j], self.cdf[j])?;
        }
        Ok(())
    }
}

/// Convenience wrapper: tabulated CVaR on the automatic grid.
pub fn cvar_level(params: &CtsParams, eta: f64) -> Result<f64, CtsError> {
    CtsTable::auto(params)?.cvar(eta)
}

/// Deterministic seeded draws via inverse-CDF transform on the automatic grid.
pub fn sample(params: &CtsParams, n: usize, seed: u64) -> Result<Vec<f64>, CtsError> {
    let table = CtsTable::auto(params)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(table.sample_with(&mut rng, n))
}
