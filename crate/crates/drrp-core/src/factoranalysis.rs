//! Monthly aggregation and Carhart four-factor regression.
//!
//! Daily portfolio returns compound into calendar-month returns in percent;
//! the excess monthly return then regresses on the market, size, value, and
//! momentum factors by ordinary least squares with plain (non-robust)
//! standard errors. Factor files follow the public research-library layout
//! `date,Mkt-RF,SMB,HML,MOM,RF` in percent, daily or monthly.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("factor panel has a gap: {0}-{1:02} is missing")]
    MissingMonth(i32, u32),
    #[error("need at least {min} overlapping months, got {n}")]
    TooFewMonths { n: usize, min: usize },
    #[error("regression design is rank-deficient")]
    RankDeficient,
    #[error("empty input")]
    Empty,
}

/// A calendar month key.
pub type Month = (i32, u32);

fn month_of(date: NaiveDate) -> Month {
    (date.year(), date.month())
}

fn next_month((y, m): Month) -> Month {
    if m == 12 {
        (y + 1, 1)
    } else {
        (y, m + 1)
    }
}

/// Compound daily returns into per-month percent returns.
///
/// Months with fewer than `min_edge_days` trading days at the sample edges
/// are dropped (returned in the second tuple slot); interior months always
/// survive.
pub fn to_monthly(
    dates: &[NaiveDate],
    daily_returns: &[f64],
    min_edge_days: usize,
) -> Result<(Vec<(Month, f64)>, Vec<Month>), FactorError> {
    assert_eq!(dates.len(), daily_returns.len());
    if dates.is_empty() {
        return Err(FactorError::Empty);
    }
    let mut acc: BTreeMap<Month, (f64, usize)> = BTreeMap::new();
    for (date, ret) in dates.iter().zip(daily_returns) {
        let entry = acc.entry(month_of(*date)).or_insert((1.0, 0));
        entry.0 *= 1.0 + ret;
        entry.1 += 1;
    }
    let months: Vec<Month> = acc.keys().cloned().collect();
    let mut dropped = Vec::new();
    let mut out = Vec::new();
    for (pos, month) in months.iter().enumerate() {
        let (growth, days) = acc[month];
        let edge = pos == 0 || pos == months.len() - 1;
        if edge && days < min_edge_days {
            dropped.push(*month);
            continue;
        }
        out.push((*month, (growth - 1.0) * 100.0));
    }
    Ok((out, dropped))
}

/// Monthly factor observations in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPanel {
    pub months: Vec<Month>,
    pub mkt_rf: Vec<f64>,
    pub smb: Vec<f64>,
    pub hml: Vec<f64>,
    pub mom: Vec<f64>,
    pub rf: Vec<f64>,
}

impl FactorPanel {
    /// Contiguity and finiteness invariants.
    pub fn validate(&self) -> Result<(), FactorError> {
        if self.months.is_empty() {
            return Err(FactorError::Empty);
        }
        for pair in self.months.windows(2) {
            if pair[1] != next_month(pair[0]) {
                let (y, m) = next_month(pair[0]);
                return Err(FactorError::MissingMonth(y, m));
            }
        }
        for col in [&self.mkt_rf, &self.smb, &self.hml, &self.mom, &self.rf] {
            if col.len() != self.months.len() || col.iter().any(|v| !v.is_finite()) {
                return Err(FactorError::Malformed {
                    line: 0,
                    message: "factor columns must be finite and month-aligned".into(),
                });
            }
        }
        Ok(())
    }

    fn row(&self, month: Month) -> Option<[f64; 5]> {
        self.months
            .binary_search(&month)
            .ok()
            .map(|i| [self.mkt_rf[i], self.smb[i], self.hml[i], self.mom[i], self.rf[i]])
    }
}

/// Load a factor CSV. `YYYY-MM` dates are taken as monthly rows; `YYYY-MM-DD`
/// dates as daily rows, compounded per month column-wise on `value/100`.
pub fn load_factors(path: &Path) -> Result<FactorPanel, FactorError> {
    let file = std::fs::File::open(path).map_err(|source| FactorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut daily: Vec<(NaiveDate, [f64; 5])> = Vec::new();
    let mut monthly: Vec<(Month, [f64; 5])> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FactorError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 6 {
            return Err(FactorError::Malformed {
                line,
                message: format!("expected 6 fields, got {}", record.len()),
            });
        }
        let mut values = [0.0; 5];
        for (slot, field) in values.iter_mut().zip(record.iter().skip(1)) {
            *slot = field.trim().parse().map_err(|_| FactorError::Malformed {
                line,
                message: format!("bad number `{field}`"),
            })?;
        }
        let date_str = record[0].trim();
        if let Ok(date) = NaiveDate::parse_from_str(date_str, "%Y-%m-%d") {
            daily.push((date, values));
        } else if let Some((y, m)) = parse_year_month(date_str) {
            monthly.push(((y, m), values));
        } else {
            return Err(FactorError::Malformed {
                line,
                message: format!("bad date `{date_str}` (expected YYYY-MM or YYYY-MM-DD)"),
            });
        }
    }
    if !daily.is_empty() && !monthly.is_empty() {
        return Err(FactorError::Malformed {
            line: 0,
            message: "factor file mixes daily and monthly rows".into(),
        });
    }

    let rows: Vec<(Month, [f64; 5])> = if !monthly.is_empty() {
        let mut rows = monthly;
        rows.sort_by_key(|(m, _)| *m);
        rows
    } else {
        if daily.is_empty() {
            return Err(FactorError::Empty);
        }
        daily.sort_by_key(|(d, _)| *d);
        let dates: Vec<NaiveDate> = daily.iter().map(|(d, _)| *d).collect();
        let mut columns: Vec<Vec<(Month, f64)>> = Vec::with_capacity(5);
        for c in 0..5 {
            let series: Vec<f64> = daily.iter().map(|(_, v)| v[c] / 100.0).collect();
            // Keep every month; edge trimming applies to portfolios, not to
            // the factor library file.
            let (m, _) = to_monthly(&dates, &series, 0)?;
            columns.push(m);
        }
        columns[0]
            .iter()
            .enumerate()
            .map(|(i, (month, _))| {
                let mut values = [0.0; 5];
                for (c, col) in columns.iter().enumerate() {
                    values[c] = col[i].1;
                }
                (*month, values)
            })
            .collect()
    };

    let panel = FactorPanel {
        months: rows.iter().map(|(m, _)| *m).collect(),
        mkt_rf: rows.iter().map(|(_, v)| v[0]).collect(),
        smb: rows.iter().map(|(_, v)| v[1]).collect(),
        hml: rows.iter().map(|(_, v)| v[2]).collect(),
        mom: rows.iter().map(|(_, v)| v[3]).collect(),
        rf: rows.iter().map(|(_, v)| v[4]).collect(),
    };
    panel.validate()?;
    Ok(panel)
}

fn parse_year_month(s: &str) -> Option<Month> {
    let (y, m) = s.split_once('-')?;
    let year: i32 = y.parse().ok()?;
    let month: u32 = m.parse().ok()?;
    (1..=12).contains(&month).then_some((year, month))
}

/// Significance thresholds on |t|: `one_star` marks 5%, `two_star` 1% under
/// normal critical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub one_star: f64,
    pub two_star: f64,
}

impl Default for Significance {
    fn default() -> Self {
        Self {
            one_star: 1.96,
            two_star: 2.576,
        }
    }
}

/// OLS result for one portfolio. Coefficient order: intercept (alpha), then
/// Mkt-RF, SMB, HML, MOM loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Monthly intercept, percent.
    pub alpha: f64,
    pub betas: [f64; 4],
    pub std_errors: [f64; 5],
    pub t_stats: [f64; 5],
    pub stars: [String; 5],
    pub r_squared: f64,
    pub n_obs: usize,
}

impl RegressionResult {
    pub fn coefficients(&self) -> [f64; 5] {
        [
            self.alpha,
            self.betas[0],
            self.betas[1],
            self.betas[2],
            self.betas[3],
        ]
    }
}

/// Regress monthly excess portfolio returns on the four Carhart factors.
///
/// `portfolio_monthly` is the raw monthly percent return; the factor panel's
/// risk-free column is subtracted before regression. Months present on only
/// one side are dropped. Needs at least 24 overlapping months.
pub fn carhart_regress(
    portfolio_monthly: &[(Month, f64)],
    factors: &FactorPanel,
    significance: Significance,
) -> Result<RegressionResult, FactorError> {
    factors.validate()?;
    let mut rows: Vec<(f64, [f64; 5])> = Vec::new();
    for (month, r_p) in portfolio_monthly {
        if let Some(f) = factors.row(*month) {
            rows.push((r_p - f[4], f));
        }
    }
    let n = rows.len();
    if n < 24 {
        return Err(FactorError::TooFewMonths { n, min: 24 });
    }
    let k = 5;
    let x = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            1.0
        } else {
            rows[i].1[j - 1]
        }
    });
    let y = DVector::from_fn(n, |i, _| rows[i].0);

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let chol = Cholesky::new(xtx.clone()).ok_or(FactorError::RankDeficient)?;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();

    let residuals = &y - &x * &beta;
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let sigma2 = rss / (n - k) as f64;

    let mut std_errors = [0.0; 5];
    let mut t_stats = [0.0; 5];
    let mut stars: [String; 5] = Default::default();
    for j in 0..k {
        std_errors[j] = (sigma2 * xtx_inv[(j, j)]).sqrt();
        t_stats[j] = beta[j] / std_errors[j];
        stars[j] = if t_stats[j].abs() >= significance.two_star {
            "**".into()
        } else if t_stats[j].abs() >= significance.one_star {
            "*".into()
        } else {
            String::new()
        };
    }

    Ok(RegressionResult {
        alpha: beta[0],
        betas: [beta[1], beta[2], beta[3], beta[4]],
        std_errors,
        t_stats,
        stars,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        n_obs: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    /// Deterministic pseudo-random stream for fixture construction.
    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    fn synthetic_factors(n_months: usize, seed: u64) -> FactorPanel {
        let mut state = seed;
        let mut months = Vec::new();
        let mut month = (2016, 1);
        for _ in 0..n_months {
            months.push(month);
            month = next_month(month);
        }
        FactorPanel {
            months,
            mkt_rf: (0..n_months).map(|_| 4.0 * lcg(&mut state)).collect(),
            smb: (0..n_months).map(|_| 2.0 * lcg(&mut state)).collect(),
            hml: (0..n_months).map(|_| 2.0 * lcg(&mut state)).collect(),
            mom: (0..n_months).map(|_| 3.0 * lcg(&mut state)).collect(),
            rf: (0..n_months).map(|_| 0.1 + 0.05 * lcg(&mut state)).collect(),
        }
    }

    #[test]
    fn to_monthly_compounds_within_months() {
        let dates = vec![d(2020, 1, 2), d(2020, 1, 3)];
        let (months, _) = to_monthly(&dates, &[0.01, 0.01], 0).unwrap();
        assert_eq!(months.len(), 1);
        assert!((months[0].1 - 2.01).abs() < 1e-12);

        let zero_dates: Vec<NaiveDate> = (1..=21).map(|day| d(2020, 3, day)).collect();
        let (months, _) = to_monthly(&zero_dates, &vec![0.0; 21], 15).unwrap();
        assert_eq!(months[0].1, 0.0);
    }

    #[test]
    fn to_monthly_drops_thin_edges_only() {
        // 3 days in January (edge, dropped), 20 in February, 3 in March
        // (edge, dropped).
        let mut dates = Vec::new();
        for day in 28..=30 {
            dates.push(d(2020, 1, day));
        }
        for day in 1..=20 {
            dates.push(d(2020, 2, day));
        }
        for day in 1..=3 {
            dates.push(d(2020, 3, day));
        }
        let returns = vec![0.001; dates.len()];
        let (months, dropped) = to_monthly(&dates, &returns, 15).unwrap();
        assert_eq!(months.len(), 1);
        assert_eq!(months[0].0, (2020, 2));
        assert_eq!(dropped, vec![(2020, 1), (2020, 3)]);
    }

    #[test]
    fn monthly_product_matches_independent_oracle() {
        let mut state = 7u64;
        let mut dates = Vec::new();
        let mut returns = Vec::new();
        for month in 1..=12u32 {
            for day in 1..=20u32 {
                dates.push(d(2021, month, day));
                returns.push(0.01 * lcg(&mut state));
            }
        }
        let (months, _) = to_monthly(&dates, &returns, 15).unwrap();
        assert_eq!(months.len(), 12);
        for (i, ((_, m), _)) in months.iter().zip(1..=12).enumerate() {
            let chunk = &returns[i * 20..(i + 1) * 20];
            let oracle = (chunk.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0) * 100.0;
            assert!((m - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn self_regression_recovers_market() {
        let factors = synthetic_factors(60, 11);
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, factors.mkt_rf[i] + factors.rf[i]))
            .collect();
        let result = carhart_regress(&portfolio, &factors, Significance::default()).unwrap();
        assert!(result.alpha.abs() < 1e-10);
        assert!((result.betas[0] - 1.0).abs() < 1e-10);
        for b in &result.betas[1..] {
            assert!(b.abs() < 1e-10);
        }
        assert!((result.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn planted_coefficients_recovered() {
        let factors = synthetic_factors(80, 23);
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let excess = 0.2 + 0.9 * factors.mkt_rf[i] - 0.2 * factors.smb[i]
                    + 0.2 * factors.hml[i]
                    - 0.07 * factors.mom[i];
                (*m, excess + factors.rf[i])
            })
            .collect();
        let result = carhart_regress(&portfolio, &factors, Significance::default()).unwrap();
        let want = [0.2, 0.9, -0.2, 0.2, -0.07];
        for (got, want) in result.coefficients().iter().zip(want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        assert!((result.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_factor_column_is_rank_deficient() {
        let mut factors = synthetic_factors(40, 5);
        factors.smb = vec![0.0; 40];
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, factors.mkt_rf[i]))
            .collect();
        assert!(matches!(
            carhart_regress(&portfolio, &factors, Significance::default()),
            Err(FactorError::RankDeficient)
        ));
    }

    #[test]
    fn too_few_months_rejected() {
        let factors = synthetic_factors(30, 3);
        let portfolio: Vec<(Month, f64)> = factors.months[..20]
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, factors.mkt_rf[i]))
            .collect();
        assert!(matches!(
            carhart_regress(&portfolio, &factors, Significance::default()),
            Err(FactorError::TooFewMonths { n: 20, min: 24 })
        ));
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let factors = synthetic_factors(72, 31);
        let mut state = 77u64;
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let noise = 0.5 * lcg(&mut state);
                (*m, 0.1 + 0.8 * factors.mkt_rf[i] + noise + factors.rf[i])
            })
            .collect();
        let result = carhart_regress(&portfolio, &factors, Significance::default()).unwrap();
        // Rebuild residuals and check the normal equations directly.
        let coef = result.coefficients();
        let mut dots = [0.0; 5];
        for (i, month) in factors.months.iter().enumerate() {
            let r_p = portfolio[i].1 - factors.rf[i];
            let x = [1.0, factors.mkt_rf[i], factors.smb[i], factors.hml[i], factors.mom[i]];
            let fitted: f64 = coef.iter().zip(x).map(|(c, v)| c * v).sum();
            let resid = r_p - fitted;
            for (d, v) in dots.iter_mut().zip(x) {
                *d += resid * v;
            }
            let _ = month;
        }
        for d in dots {
            assert!(d.abs() < 1e-8, "normal equation violated: {d}");
        }
    }

    #[test]
    fn r_squared_invariant_to_factor_rescaling() {
        let factors = synthetic_factors(60, 41);
        let mut state = 13u64;
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| {
                (*m, 0.9 * factors.mkt_rf[i] + 0.3 * lcg(&mut state) + factors.rf[i])
            })
            .collect();
        let base = carhart_regress(&portfolio, &factors, Significance::default()).unwrap();
        let mut scaled = factors.clone();
        for v in &mut scaled.hml {
            *v *= 10.0;
        }
        let rescaled = carhart_regress(&portfolio, &scaled, Significance::default()).unwrap();
        assert!((base.r_squared - rescaled.r_squared).abs() < 1e-12);
        assert!((base.betas[2] - 10.0 * rescaled.betas[2]).abs() < 1e-10);
    }

    #[test]
    fn stars_follow_thresholds() {
        let factors = synthetic_factors(120, 53);
        let mut state = 3u64;
        let portfolio: Vec<(Month, f64)> = factors
            .months
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, 1.0 * factors.mkt_rf[i] + 0.05 * lcg(&mut state) + factors.rf[i]))
            .collect();
        let result = carhart_regress(&portfolio, &factors, Significance::default()).unwrap();
        for j in 0..5 {
            let expected = if result.t_stats[j].abs() >= 2.576 {
                "**"
            } else if result.t_stats[j].abs() >= 1.96 {
                "*"
            } else {
                ""
            };
            assert_eq!(result.stars[j], expected);
        }
        // The market loading of a market-tracking portfolio is unmissable.
        assert_eq!(result.stars[1], "**");
    }

    #[test]
    fn factor_csv_daily_and_monthly_agree() {
        // Daily file: two months of constant daily values.
        let mut daily = String::from("date,Mkt-RF,SMB,HML,MOM,RF\n");
        for day in 1..=21 {
            daily.push_str(&format!("2020-01-{day:02},0.1,0.05,-0.02,0.03,0.01\n"));
        }
        for day in 1..=20 {
            daily.push_str(&format!("2020-02-{day:02},0.2,0.01,0.0,-0.01,0.01\n"));
        }
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(daily.as_bytes()).unwrap();
        let panel = load_factors(f.path()).unwrap();
        assert_eq!(panel.months, vec![(2020, 1), (2020, 2)]);
        let want_jan = ((1.001f64).powi(21) - 1.0) * 100.0;
        assert!((panel.mkt_rf[0] - want_jan).abs() < 1e-10);

        let monthly = "date,Mkt-RF,SMB,HML,MOM,RF\n2020-01,2.5,0.3,-0.2,0.1,0.11\n2020-02,1.0,0.2,0.4,-0.3,0.12\n";
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(monthly.as_bytes()).unwrap();
        let panel = load_factors(f.path()).unwrap();
        assert_eq!(panel.months.len(), 2);
        assert_eq!(panel.mkt_rf[0], 2.5);
        assert_eq!(panel.rf[1], 0.12);
    }

    #[test]
    fn factor_gap_detected() {
        let monthly = "date,Mkt-RF,SMB,HML,MOM,RF\n2020-01,2.5,0.3,-0.2,0.1,0.11\n2020-03,1.0,0.2,0.4,-0.3,0.12\n";
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(monthly.as_bytes()).unwrap();
        assert!(matches!(
            load_factors(f.path()),
            Err(FactorError::MissingMonth(2020, 2))
        ));
    }
}
