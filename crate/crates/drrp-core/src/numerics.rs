//! Shared numerical machinery: derivative-free minimization, adaptive
//! quadrature, sample-moment helpers, and named deterministic RNG streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("optimizer did not converge after {iters} iterations (best f = {best_f})")]
    NoConvergence { iters: usize, best_f: f64 },
    #[error("objective returned a non-finite value at the starting point")]
    BadStart,
}

/// Result of a Nelder-Mead run. `x` is in the optimizer's (transformed)
/// coordinates; callers undo their own parameter transforms.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization.
///
/// Deterministic: no randomness, no restarts; identical inputs give bitwise
/// identical output. Non-finite objective values are treated as worst-case so
/// the simplex slides away from invalid regions instead of aborting.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<Minimum, OptimError> {
    let n = x0.len();
    assert_eq!(step.len(), n);
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    // Initial simplex: x0 plus one vertex per coordinate offset.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(OptimError::BadStart);
    }
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= rel_tol * (best.abs() + rel_tol) {
            return Ok(Minimum {
                x: simplex[0].0.clone(),
                f: best,
                iters,
                converged: true,
            });
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }

        let mix = |a: f64, b: f64, t: f64| a + t * (b - a);
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[n].0)
            .map(|(c, w)| mix(*c, *w, -alpha))
            .collect();
        let f_reflect = eval(&reflect);

        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| mix(*c, *w, -gamma))
                .collect();
            let f_expand = eval(&expand);
            simplex[n] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| mix(*c, *w, rho))
                .collect();
            let f_contract = eval(&contract);
            if f_contract < simplex[n].1 {
                simplex[n] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for (xi, bi) in v.0.iter_mut().zip(&best_x) {
                        *xi = bi + sigma * (*xi - bi);
                    }
                    v.1 = eval(&v.0);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Err(OptimError::NoConvergence {
        iters,
        best_f: simplex[0].1,
    })
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Splits intervals until the local Richardson error estimate is below the
/// interval's share of `tol`. Returns `(integral, achieved_tol)`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        fm: f64,
        tol: f64,
        depth: u32,
        err_acc: &mut f64,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (left, flm) = simpson(f, a, fa, m, fm);
        let (right, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            *err_acc += delta.abs() / 15.0;
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, flm, tol / 2.0, depth - 1, err_acc)
                + recurse(f, m, fm, b, fb, right, frm, tol / 2.0, depth - 1, err_acc)
        }
    }

    let fa = f(a);
    let fb = f(b);
    let (whole, fm) = simpson(f, a, fa, b, fb);
    let mut err = 0.0;
    let value = recurse(f, a, fa, b, fb, whole, fm, tol, 48, &mut err);
    (value, err)
}

/// Arithmetic mean. Empty input gives NaN.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation with divisor `n - 1`.
pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Central moment of order `k` with divisor `n`.
pub fn central_moment(xs: &[f64], k: u32) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(k as i32)).sum::<f64>() / xs.len() as f64
}

/// Skewness from standardized central moments (population convention).
pub fn skewness(xs: &[f64]) -> f64 {
    central_moment(xs, 3) / central_moment(xs, 2).powf(1.5)
}

/// Excess kurtosis from standardized central moments (population convention).
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    central_moment(xs, 4) / central_moment(xs, 2).powi(2) - 3.0
}

/// Tail-index count `ceil(eta * n)` with a guard against float roundup at
/// exact multiples (0.05 * 100 must give 5, not 6).
pub fn tail_count(eta: f64, n: usize) -> usize {
    let k = (eta * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic named RNG streams derived from one root seed.
///
/// Each `(label, index)` pair maps to an independent ChaCha stream, so adding
/// a consumer never perturbs the draws seen by another.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplitter {
    root: u64,
}

impl SeedSplitter {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn stream(&self, label: &str, index: u64) -> ChaCha12Rng {
        let mut h = self.root;
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        h = splitmix64(h ^ index);
        ChaCha12Rng::seed_from_u64(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 5.0;
        let min = nelder_mead(f, &[0.0, 0.0], &[0.5, 0.5], 1e-12, 2000).unwrap();
        assert!((min.x[0] - 3.0).abs() < 1e-5);
        assert!((min.x[1] + 1.0).abs() < 1e-5);
        assert!((min.f - 5.0).abs() < 1e-9);
    }

    #[test]
    fn nelder_mead_avoids_invalid_regions() {
        // Objective undefined (NaN) for x < 0; minimum sits at the boundary.
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.5).powi(2)
            }
        };
        let min = nelder_mead(f, &[2.0], &[0.5], 1e-12, 1000).unwrap();
        assert!((min.x[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn simpson_integrates_smooth_function() {
        let (v, err) = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-10);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-9);
        assert!(err < 1e-8);
    }

    #[test]
    fn tail_count_handles_exact_multiples() {
        assert_eq!(tail_count(0.05, 100), 5);
        assert_eq!(tail_count(0.05, 101), 6);
        assert_eq!(tail_count(0.5, 10), 5);
        assert_eq!(tail_count(0.001, 10), 1); // clamped to at least one point
    }

    #[test]
    fn seed_streams_are_independent_and_stable() {
        use rand::Rng;
        let split = SeedSplitter::new(42);
        let a: u64 = split.stream("prices", 0).gen();
        let b: u64 = split.stream("prices", 1).gen();
        let c: u64 = split.stream("factors", 0).gen();
        let a2: u64 = split.stream("prices", 0).gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn moments_match_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((mean(&xs) - 2.5).abs() < 1e-15);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!((central_moment(&xs, 2) - 1.25).abs() < 1e-15);
    }
}
