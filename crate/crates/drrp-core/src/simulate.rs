//! Deterministic synthetic market fixtures.
//!
//! Each asset follows an ARMA(1,1)-GARCH(1,1) recursion driven by draws from
//! a standardized classical tempered stable law, so the generative model is
//! exactly the risk model the engine fits. All randomness flows from one root
//! seed through named streams: adding an asset or a file never perturbs the
//! draws of another.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::armagarch::ArmaGarchParams;
use crate::cts::{CtsError, CtsParams, CtsTable};
use crate::marketdata::{PriceSeries, UniverseMembership};
use crate::numerics::SeedSplitter;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid universe spec: {0}")]
    InvalidSpec(String),
    #[error("asset {name}: {source}")]
    BadGarchParams {
        name: String,
        source: crate::armagarch::ArmaGarchError,
    },
    #[error("asset {name}: {source}")]
    BadCtsParams { name: String, source: CtsError },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Generative parameters of one synthetic asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub name: String,
    pub garch: ArmaGarchParams,
    /// Innovation law; should be standardized (mean 0, unit variance).
    pub innovations: CtsParams,
    pub initial_price: f64,
}

/// A synthetic universe: asset count, day count, and market plumbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub assets: Vec<AssetSpec>,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Baseline annualized risk-free yield in percent.
    pub base_yield_pct: f64,
    pub seed: u64,
}

/// Symmetric standardized CTS law (unit variance, zero mean) at a given tail
/// index and tempering rates.
pub fn standardized_cts(
    alpha: f64,
    lambda_plus: f64,
    lambda_minus: f64,
) -> Result<CtsParams, CtsError> {
    let c = 1.0
        / (gamma(2.0 - alpha)
            * (lambda_plus.powf(alpha - 2.0) + lambda_minus.powf(alpha - 2.0)));
    CtsParams::new(alpha, c, c, lambda_plus, lambda_minus, 0.0)
}

impl UniverseSpec {
    /// A default universe: mild drifts, realistic persistence, varied tail
    /// shapes across assets.
    pub fn synthetic(n_assets: usize, n_days: usize, seed: u64) -> Result<Self, SimulateError> {
        if n_assets == 0 {
            return Err(SimulateError::InvalidSpec("need at least one asset".into()));
        }
        let alphas = [1.25, 1.4, 0.85, 1.55, 1.1];
        let lambdas_plus = [2.8, 3.2, 2.4, 3.0, 2.6];
        let lambdas_minus = [2.2, 2.6, 2.0, 2.8, 2.4];
        let daily_vols: [f64; 5] = [0.010, 0.013, 0.009, 0.016, 0.011];
        let drifts = [4.0e-4, 3.0e-4, 5.0e-4, 2.0e-4, 4.5e-4];
        let archs = [0.05, 0.07, 0.04, 0.09, 0.06];
        let garchs = [0.90, 0.86, 0.92, 0.84, 0.88];
        let mut assets = Vec::with_capacity(n_assets);
        for i in 0..n_assets {
            let k = i % 5;
            let persistence = archs[k] + garchs[k];
            let name = format!("SYN{:02}", i + 1);
            let garch = ArmaGarchParams {
                c: drifts[k] * (1.0 + 0.1 * (i / 5) as f64),
                ar: 0.03,
                ma: -0.02,
                omega: daily_vols[k].powi(2) * (1.0 - persistence),
                arch: archs[k],
                garch: garchs[k],
                nu: 6.0,
            };
            let innovations = standardized_cts(alphas[k], lambdas_plus[k], lambdas_minus[k])
                .map_err(|source| SimulateError::BadCtsParams {
                    name: name.clone(),
                    source,
                })?;
            assets.push(AssetSpec {
                name,
                garch,
                innovations,
                initial_price: 50.0 + 25.0 * i as f64,
            });
        }
        let spec = Self {
            assets,
            n_days,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(),
            base_yield_pct: 2.0,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.assets.is_empty() {
            return Err(SimulateError::InvalidSpec("no assets".into()));
        }
        if self.n_days < 2 {
            return Err(SimulateError::InvalidSpec(format!(
                "need at least 2 days, got {}",
                self.n_days
            )));
        }
        for asset in &self.assets {
            asset
                .garch
                .validate()
                .map_err(|source| SimulateError::BadGarchParams {
                    name: asset.name.clone(),
                    source,
                })?;
            asset
                .innovations
                .validate()
                .map_err(|source| SimulateError::BadCtsParams {
                    name: asset.name.clone(),
                    source,
                })?;
            if !(asset.initial_price > 0.0) {
                return Err(SimulateError::InvalidSpec(format!(
                    "asset {} has non-positive initial price",
                    asset.name
                )));
            }
        }
        Ok(())
    }
}

/// Generated fixture files, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub prices: Vec<PriceSeries>,
    pub membership: Vec<UniverseMembership>,
    /// `(date, annualized percent yield)` rows.
    pub risk_free: Vec<(NaiveDate, f64)>,
    /// Daily factor rows `(date, [mkt_rf, smb, hml, mom, rf])`, percent.
    pub factors: Vec<(NaiveDate, [f64; 5])>,
}

/// Weekday trading calendar from a start date.
fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut date = start;
    while out.len() < n {
        if !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(date);
        }
        date = date.checked_add_days(Days::new(1)).unwrap();
    }
    out
}

/// Generate the fixture set for a universe spec. Deterministic in the spec.
pub fn generate(spec: &UniverseSpec) -> Result<FixtureSet, SimulateError> {
    spec.validate()?;
    let split = SeedSplitter::new(spec.seed);
    let dates = trading_days(spec.start_date, spec.n_days);

    let mut prices = Vec::with_capacity(spec.assets.len());
    let mut asset_returns: Vec<Vec<f64>> = Vec::with_capacity(spec.assets.len());
    for (i, asset) in spec.assets.iter().enumerate() {
        let table = CtsTable::auto(&asset.innovations).map_err(|source| {
            SimulateError::BadCtsParams {
                name: asset.name.clone(),
                source,
            }
        })?;
        let mut rng = split.stream("prices", i as u64);
        let p = &asset.garch;
        let mut eps_prev = 0.0;
        let mut sigma2_prev = p.unconditional_variance();
        let mut r_prev = p.c / (1.0 - p.ar);
        let mut returns = Vec::with_capacity(spec.n_days - 1);
        // One return per date after the first price date.
        for _ in 1..spec.n_days {
            let mu = p.c + p.ar * r_prev + p.ma * eps_prev;
            let sigma2 = p.omega + p.arch * eps_prev.powi(2) + p.garch * sigma2_prev;
            let z = table.sample_with(&mut rng, 1)[0];
            let eps = sigma2.sqrt() * z;
            let rt = mu + eps;
            returns.push(rt);
            eps_prev = eps;
            sigma2_prev = sigma2;
            r_prev = rt;
        }
        let mut level = asset.initial_price;
        let mut observations = Vec::with_capacity(spec.n_days);
        observations.push((dates[0], level));
        for (d, r) in dates[1..].iter().zip(&returns) {
            level *= 1.0 + r;
            observations.push((*d, level));
        }
        prices.push(PriceSeries {
            ticker: asset.name.clone(),
            observations,
        });
        asset_returns.push(returns);
    }

    let membership = spec
        .assets
        .iter()
        .map(|a| UniverseMembership {
            ticker: a.name.clone(),
            start_date: dates[0],
            end_date: *dates.last().unwrap(),
        })
        .collect();

    // Risk-free: slow mean-reverting wiggle around the base yield, floored.
    let mut rf_rng = split.stream("risk-free", 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut level: f64 = spec.base_yield_pct;
    let mut risk_free = Vec::with_capacity(spec.n_days);
    for date in &dates {
        level += 0.02 * (spec.base_yield_pct - level) + 0.03 * normal.sample(&mut rf_rng);
        level = level.max(0.0);
        risk_free.push((*date, level));
    }

    // Daily factors in percent: the market factor tracks the universe mean
    // excess return; style factors are independent noise streams.
    let mut smb_rng = split.stream("factor-smb", 0);
    let mut hml_rng = split.stream("factor-hml", 0);
    let mut mom_rng = split.stream("factor-mom", 0);
    let mut mkt_rng = split.stream("factor-mkt", 0);
    let mut factors = Vec::with_capacity(spec.n_days - 1);
    for (t, date) in dates.iter().enumerate().skip(1) {
        let mean_ret: f64 =
            asset_returns.iter().map(|r| r[t - 1]).sum::<f64>() / asset_returns.len() as f64;
        let rf_daily = risk_free[t].1 / 100.0 / 252.0;
        let mkt = (mean_ret - rf_daily) * 100.0 + 0.02 * normal.sample(&mut mkt_rng);
        let smb = 0.05 * normal.sample(&mut smb_rng);
        let hml = 0.05 * normal.sample(&mut hml_rng);
        let mom: f64 = 0.07 * normal.sample(&mut mom_rng);
        factors.push((*date, [mkt, smb, hml, mom, rf_daily * 100.0]));
    }

    Ok(FixtureSet {
        prices,
        membership,
        risk_free,
        factors,
    })
}

/// File names used by [`write_fixture_files`].
pub const PRICES_FILE: &str = "prices.csv";
pub const MEMBERSHIP_FILE: &str = "membership.csv";
pub const RISK_FREE_FILE: &str = "risk_free.csv";
pub const FACTORS_FILE: &str = "factors.csv";

/// Write the four fixture CSVs into a directory. Floats print in shortest
/// round-trip form, so repeated runs produce byte-identical files.
pub fn write_fixture_files(fixture: &FixtureSet, dir: &Path) -> Result<(), SimulateError> {
    std::fs::create_dir_all(dir)?;

    let mut out = std::fs::File::create(dir.join(PRICES_FILE))?;
    writeln!(out, "date,ticker,adj_close")?;
    for series in &fixture.prices {
        for (date, price) in &series.observations {
            writeln!(out, "{date},{},{price}", series.ticker)?;
        }
    }

    let mut out = std::fs::File::create(dir.join(MEMBERSHIP_FILE))?;
    writeln!(out, "ticker,start_date,end_date")?;
    for m in &fixture.membership {
        writeln!(out, "{},{},{}", m.ticker, m.start_date, m.end_date)?;
    }

    let mut out = std::fs::File::create(dir.join(RISK_FREE_FILE))?;
    writeln!(out, "date,annual_yield_percent")?;
    for (date, y) in &fixture.risk_free {
        writeln!(out, "{date},{y}")?;
    }

    let mut out = std::fs::File::create(dir.join(FACTORS_FILE))?;
    writeln!(out, "date,Mkt-RF,SMB,HML,MOM,RF")?;
    for (date, v) in &fixture.factors {
        writeln!(out, "{date},{},{},{},{},{}", v[0], v[1], v[2], v[3], v[4])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cts::cumulants;
    use crate::numerics::{mean, sample_variance};

    #[test]
    fn standardized_cts_has_unit_variance_zero_mean() {
        for alpha in [0.7, 1.3, 1.6] {
            let p = standardized_cts(alpha, 2.5, 2.0).unwrap();
            assert!((cumulants(&p, 2) - 1.0).abs() < 1e-12);
            assert_eq!(cumulants(&p, 1), 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = UniverseSpec::synthetic(3, 60, 99).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adding_an_asset_preserves_existing_draws() {
        let small = UniverseSpec::synthetic(2, 50, 7).unwrap();
        let large = UniverseSpec::synthetic(3, 50, 7).unwrap();
        let a = generate(&small).unwrap();
        let b = generate(&large).unwrap();
        for (sa, sb) in a.prices.iter().zip(&b.prices) {
            assert_eq!(sa.observations, sb.observations, "stream {} perturbed", sa.ticker);
        }
    }

    #[test]
    fn prices_are_positive_and_dates_weekdays() {
        let spec = UniverseSpec::synthetic(2, 120, 11).unwrap();
        let fixture = generate(&spec).unwrap();
        for series in &fixture.prices {
            assert_eq!(series.observations.len(), 120);
            series.validate().unwrap();
            for (date, _) in &series.observations {
                assert!(!matches!(date.weekday(), Weekday::Sat | Weekday::Sun));
            }
        }
    }

    #[test]
    fn zero_volatility_spec_rejected() {
        let mut spec = UniverseSpec::synthetic(1, 50, 1).unwrap();
        spec.assets[0].garch.omega = 0.0;
        assert!(matches!(
            generate(&spec),
            Err(SimulateError::BadGarchParams { .. })
        ));
    }

    #[test]
    fn generated_returns_match_target_scale() {
        let spec = UniverseSpec::synthetic(1, 2500, 5).unwrap();
        let fixture = generate(&spec).unwrap();
        let returns: Vec<f64> = fixture.prices[0]
            .observations
            .windows(2)
            .map(|w| w[1].1 / w[0].1 - 1.0)
            .collect();
        let target_var = spec.assets[0].garch.unconditional_variance()
            / (1.0 - spec.assets[0].garch.ar.powi(2));
        let got = sample_variance(&returns);
        assert!(
            (got / target_var - 1.0).abs() < 0.35,
            "variance {got} vs target {target_var}"
        );
        assert!(mean(&returns).abs() < 5e-4 + spec.assets[0].garch.c.abs() * 2.0);
    }

    #[test]
    fn fixture_files_round_trip_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let spec = UniverseSpec::synthetic(2, 80, 13).unwrap();
        let fixture = generate(&spec).unwrap();
        write_fixture_files(&fixture, dir.path()).unwrap();

        let prices = crate::marketdata::load_prices(&dir.path().join(PRICES_FILE)).unwrap();
        assert_eq!(prices.len(), 2);
        for (loaded, original) in prices.iter().zip(&fixture.prices) {
            assert_eq!(loaded.ticker, original.ticker);
            assert_eq!(loaded.observations.len(), original.observations.len());
            for (a, b) in loaded.observations.iter().zip(&original.observations) {
                assert_eq!(a.0, b.0);
                assert_eq!(a.1.to_bits(), b.1.to_bits(), "price must round trip bit-exactly");
            }
        }
        let membership =
            crate::marketdata::load_membership(&dir.path().join(MEMBERSHIP_FILE)).unwrap();
        assert_eq!(membership, fixture.membership);
        let yields =
            crate::marketdata::load_risk_free_yields(&dir.path().join(RISK_FREE_FILE)).unwrap();
        assert_eq!(yields.len(), fixture.risk_free.len());
        let factors = crate::factoranalysis::load_factors(&dir.path().join(FACTORS_FILE)).unwrap();
        assert!(!factors.months.is_empty());
    }
}
