//! Loading, validation, and alignment of daily market data.
//!
//! Input files are long CSVs: prices as `date,ticker,adj_close`, index
//! membership as `ticker,start_date,end_date`, risk-free yields as
//! `date,annual_yield_percent`, all ISO-8601 dates with a header row.
//!
//! The trading calendar of a panel is the union of all price dates. Assets
//! without a price on a calendar date are masked out, never forward-filled;
//! the first return after a gap spans the gap. A panel cell is masked in only
//! when the ticker is an index member on that date and a valid return exists.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trading days per year and per month used throughout (six months = 126).
pub const TRADING_DAYS_PER_YEAR: usize = 252;
pub const TRADING_DAYS_PER_MONTH: usize = 21;
pub const TRADING_DAYS_HALF_YEAR: usize = 126;

/// Default coverage fraction an asset needs over a formation window.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: duplicate row for ({ticker}, {date})")]
    DuplicateRow {
        line: u64,
        ticker: String,
        date: NaiveDate,
    },
    #[error("line {line}: non-positive price {price} for ({ticker}, {date})")]
    NonPositivePrice {
        line: u64,
        ticker: String,
        date: NaiveDate,
        price: f64,
    },
    #[error("price series {ticker}: {message}")]
    InvalidSeries { ticker: String, message: String },
    #[error("membership interval for {ticker}: {message}")]
    InvalidMembership { ticker: String, message: String },
    #[error("need at least {min} observations, got {n}")]
    InsufficientData { n: usize, min: usize },
    #[error("panel has no dates")]
    EmptyPanel,
    #[error("date {0} is not in the panel")]
    UnknownDate(NaiveDate),
    #[error("no investable assets at {date} (universe of {considered} considered)")]
    NoInvestableAssets { date: NaiveDate, considered: usize },
}

/// Daily adjusted closes of one ticker, strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub ticker: String,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(
        ticker: impl Into<String>,
        observations: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, MarketDataError> {
        let s = Self {
            ticker: ticker.into(),
            observations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MarketDataError> {
        for window in self.observations.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(MarketDataError::InvalidSeries {
                    ticker: self.ticker.clone(),
                    message: format!(
                        "dates not strictly increasing at {} -> {}",
                        window[0].0, window[1].0
                    ),
                });
            }
        }
        for (date, price) in &self.observations {
            if !(*price > 0.0 && price.is_finite()) {
                return Err(MarketDataError::InvalidSeries {
                    ticker: self.ticker.clone(),
                    message: format!("non-positive price {price} at {date}"),
                });
            }
        }
        Ok(())
    }
}

/// One index-membership window of a ticker (inclusive on both ends).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseMembership {
    pub ticker: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

/// Daily risk-free rates, per-day units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFreeSeries {
    pub observations: Vec<(NaiveDate, f64)>,
}

impl RiskFreeSeries {
    /// Rates aligned to a date list: the last prior quote carries forward;
    /// dates before the first quote take the first quote.
    pub fn aligned_to(&self, dates: &[NaiveDate]) -> Vec<f64> {
        let mut out = Vec::with_capacity(dates.len());
        let mut idx = 0usize;
        for date in dates {
            while idx + 1 < self.observations.len() && self.observations[idx + 1].0 <= *date {
                idx += 1;
            }
            let (first_date, first_rate) = self.observations[0];
            if *date < first_date {
                out.push(first_rate);
            } else {
                out.push(self.observations[idx].1);
            }
        }
        out
    }
}

/// Convert raw annualized percent yields to per-day rates: `(y/100)/252`.
/// Negative yields pass through; the count is returned so callers can warn.
pub fn daily_risk_free(raw_yields: &[(NaiveDate, f64)]) -> (RiskFreeSeries, usize) {
    let negatives = raw_yields.iter().filter(|(_, y)| *y < 0.0).count();
    let observations = raw_yields
        .iter()
        .map(|(d, y)| (*d, y / 100.0 / TRADING_DAYS_PER_YEAR as f64))
        .collect();
    (RiskFreeSeries { observations }, negatives)
}

/// Simple daily returns `P_t / P_{t-1} - 1` of one price series.
pub fn compute_returns(prices: &PriceSeries) -> Result<Vec<(NaiveDate, f64)>, MarketDataError> {
    if prices.observations.len() < 2 {
        return Err(MarketDataError::InsufficientData {
            n: prices.observations.len(),
            min: 2,
        });
    }
    Ok(prices
        .observations
        .windows(2)
        .map(|w| (w[1].0, w[1].1 / w[0].1 - 1.0))
        .collect())
}

/// Aligned daily return panel over the union trading calendar.
///
/// `returns[t][i]` and the masks are indexed date-major. `mask` is true only
/// where the ticker is a member and a valid return exists; `member` tracks
/// membership alone (used for formation-date universe checks).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub returns: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub member: Vec<Vec<bool>>,
}

impl ReturnPanel {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn date_index(&self, date: NaiveDate) -> Result<usize, MarketDataError> {
        self.dates
            .binary_search(&date)
            .map_err(|_| MarketDataError::UnknownDate(date))
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == ticker)
    }

    /// Valid (return, date-index) pairs for one asset over `[start, end)`.
    pub fn valid_returns(&self, asset: usize, start: usize, end: usize) -> Vec<(usize, f64)> {
        (start..end)
            .filter(|t| self.mask[*t][asset])
            .map(|t| (t, self.returns[t][asset]))
            .collect()
    }

    /// Index of the last date where the asset has a valid return, if any.
    pub fn last_valid_index(&self, asset: usize) -> Option<usize> {
        (0..self.n_dates()).rev().find(|t| self.mask[*t][asset])
    }

    /// Write the panel as long CSV `date,ticker,ret,member`. Masked-out cells
    /// keep an empty return field. Floats print in shortest round-trip form,
    /// so a reload reproduces the panel bit-exactly.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "date,ticker,ret,member")?;
        for (t, date) in self.dates.iter().enumerate() {
            for (i, asset) in self.assets.iter().enumerate() {
                let ret = if self.mask[t][i] {
                    format!("{}", self.returns[t][i])
                } else {
                    String::new()
                };
                let member = if self.member[t][i] { 1 } else { 0 };
                writeln!(out, "{date},{asset},{ret},{member}")?;
            }
        }
        Ok(())
    }

    /// Reload a panel written by [`ReturnPanel::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MarketDataError> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut dates = BTreeSet::new();
        let mut assets: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(NaiveDate, String), (Option<f64>, bool)> = BTreeMap::new();
        for record in csv.records() {
            let record = record.map_err(|e| MarketDataError::Malformed {
                line: 0,
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let date = parse_date(record.get(0).unwrap_or(""), line)?;
            let ticker = record.get(1).unwrap_or("").to_string();
            let ret_field = record.get(2).unwrap_or("");
            let ret = if ret_field.is_empty() {
                None
            } else {
                Some(parse_f64(ret_field, line)?)
            };
            let member = record.get(3).unwrap_or("0") == "1";
            dates.insert(date);
            if !assets.contains(&ticker) {
                assets.push(ticker.clone());
            }
            cells.insert((date, ticker), (ret, member));
        }
        if dates.is_empty() {
            return Err(MarketDataError::EmptyPanel);
        }
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        let mut returns = vec![vec![f64::NAN; assets.len()]; dates.len()];
        let mut mask = vec![vec![false; assets.len()]; dates.len()];
        let mut member = vec![vec![false; assets.len()]; dates.len()];
        for (t, date) in dates.iter().enumerate() {
            for (i, asset) in assets.iter().enumerate() {
                if let Some((ret, is_member)) = cells.get(&(*date, asset.clone())) {
                    member[t][i] = *is_member;
                    if let Some(r) = ret {
                        returns[t][i] = *r;
                        mask[t][i] = *is_member;
                    }
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            returns,
            mask,
            member,
        })
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate, MarketDataError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| MarketDataError::Malformed {
        line,
        message: format!("bad date `{s}` (expected YYYY-MM-DD)"),
    })
}

fn parse_f64(s: &str, line: u64) -> Result<f64, MarketDataError> {
    s.trim().parse().map_err(|_| MarketDataError::Malformed {
        line,
        message: format!("bad number `{s}`"),
    })
}

fn open(path: &Path) -> Result<std::fs::File, MarketDataError> {
    std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load long-format prices `date,ticker,adj_close`, one validated series per
/// ticker sorted by date. Duplicate `(date, ticker)` rows and non-positive
/// prices are rejected with their line number.
pub fn load_prices(path: &Path) -> Result<Vec<PriceSeries>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, (f64, u64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 3 {
            return Err(MarketDataError::Malformed {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let date = parse_date(&record[0], line)?;
        let ticker = record[1].trim().to_string();
        if ticker.is_empty() {
            return Err(MarketDataError::Malformed {
                line,
                message: "empty ticker".into(),
            });
        }
        let price = parse_f64(&record[2], line)?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(MarketDataError::NonPositivePrice {
                line,
                ticker,
                date,
                price,
            });
        }
        let entry = by_ticker.entry(ticker.clone()).or_default();
        if entry.contains_key(&date) {
            return Err(MarketDataError::DuplicateRow { line, ticker, date });
        }
        entry.insert(date, (price, line));
    }
    by_ticker
        .into_iter()
        .map(|(ticker, obs)| {
            PriceSeries::new(
                ticker,
                obs.into_iter().map(|(d, (p, _))| (d, p)).collect(),
            )
        })
        .collect()
}

/// Load membership windows `ticker,start_date,end_date`; intervals for one
/// ticker must not overlap.
pub fn load_membership(path: &Path) -> Result<Vec<UniverseMembership>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 3 {
            return Err(MarketDataError::Malformed {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let ticker = record[0].trim().to_string();
        let start_date = parse_date(&record[1], line)?;
        let end_date = parse_date(&record[2], line)?;
        if end_date < start_date {
            return Err(MarketDataError::InvalidMembership {
                ticker,
                message: format!("start {start_date} after end {end_date}"),
            });
        }
        rows.push(UniverseMembership {
            ticker,
            start_date,
            end_date,
        });
    }
    validate_membership(&rows)?;
    Ok(rows)
}

/// Check the non-overlap invariant across intervals of each ticker.
pub fn validate_membership(rows: &[UniverseMembership]) -> Result<(), MarketDataError> {
    let mut by_ticker: BTreeMap<&str, Vec<&UniverseMembership>> = BTreeMap::new();
    for row in rows {
        by_ticker.entry(&row.ticker).or_default().push(row);
    }
    for (ticker, mut intervals) in by_ticker {
        intervals.sort_by_key(|m| m.start_date);
        for pair in intervals.windows(2) {
            if pair[1].start_date <= pair[0].end_date {
                return Err(MarketDataError::InvalidMembership {
                    ticker: ticker.to_string(),
                    message: format!(
                        "intervals overlap: [{}, {}] and [{}, {}]",
                        pair[0].start_date, pair[0].end_date, pair[1].start_date, pair[1].end_date
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Load risk-free yields `date,annual_yield_percent` in annualized percent.
pub fn load_risk_free_yields(path: &Path) -> Result<Vec<(NaiveDate, f64)>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let date = parse_date(&record[0], line)?;
        let yield_pct = parse_f64(&record[1], line)?;
        if !yield_pct.is_finite() {
            return Err(MarketDataError::Malformed {
                line,
                message: format!("non-finite yield {yield_pct}"),
            });
        }
        rows.push((date, yield_pct));
    }
    rows.sort_by_key(|(d, _)| *d);
    Ok(rows)
}

fn is_member(memberships: &[UniverseMembership], ticker: &str, date: NaiveDate) -> bool {
    let mut saw_ticker = false;
    for m in memberships.iter().filter(|m| m.ticker == ticker) {
        saw_ticker = true;
        if m.start_date <= date && date <= m.end_date {
            return true;
        }
    }
    // Tickers without any membership row count as permanent members.
    !saw_ticker
}

/// Align price series onto the union trading calendar and apply membership
/// windows. Returns span price gaps; gap dates themselves are masked out.
pub fn align_panel(
    series: &[PriceSeries],
    memberships: &[UniverseMembership],
) -> Result<ReturnPanel, MarketDataError> {
    if series.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }
    for s in series {
        s.validate()?;
    }
    validate_membership(memberships)?;

    let mut calendar: BTreeSet<NaiveDate> = BTreeSet::new();
    for s in series {
        for (d, _) in &s.observations {
            calendar.insert(*d);
        }
    }
    if calendar.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }
    let dates: Vec<NaiveDate> = calendar.into_iter().collect();
    let assets: Vec<String> = series.iter().map(|s| s.ticker.clone()).collect();

    let mut returns = vec![vec![f64::NAN; assets.len()]; dates.len()];
    let mut mask = vec![vec![false; assets.len()]; dates.len()];
    let mut member = vec![vec![false; assets.len()]; dates.len()];

    for (i, s) in series.iter().enumerate() {
        for (t, date) in dates.iter().enumerate() {
            member[t][i] = is_member(memberships, &s.ticker, *date);
        }
        let rets = match compute_returns(s) {
            Ok(r) => r,
            Err(MarketDataError::InsufficientData { .. }) => continue,
            Err(e) => return Err(e),
        };
        for (date, ret) in rets {
            let t = dates.binary_search(&date).expect("return date is a price date");
            returns[t][i] = ret;
            mask[t][i] = member[t][i] && ret.is_finite();
        }
    }

    Ok(ReturnPanel {
        dates,
        assets,
        returns,
        mask,
        member,
    })
}

/// Tickers investable at a formation date: member on that date and with at
/// least `min_coverage` of the trailing `lookback_days` panel dates carrying
/// a valid return.
pub fn active_universe(
    panel: &ReturnPanel,
    date: NaiveDate,
    lookback_days: usize,
    min_coverage: f64,
) -> Result<Vec<String>, MarketDataError> {
    assert!(lookback_days >= 1, "lookback_days must be at least 1");
    let end = panel.date_index(date)? + 1;
    let start = end.saturating_sub(lookback_days);
    let window = end - start;
    let mut out = Vec::new();
    for (i, ticker) in panel.assets.iter().enumerate() {
        if !panel.member[end - 1][i] {
            continue;
        }
        let covered = (start..end).filter(|t| panel.mask[*t][i]).count();
        if covered as f64 >= min_coverage * window as f64 {
            out.push(ticker.clone());
        }
    }
    if out.is_empty() {
        return Err(MarketDataError::NoInvestableAssets {
            date,
            considered: panel.n_assets(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn series(ticker: &str, rows: &[(&str, f64)]) -> PriceSeries {
        PriceSeries::new(
            ticker,
            rows.iter().map(|(date, p)| (d(date), *p)).collect(),
        )
        .unwrap()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_prices_groups_and_sorts() {
        let f = write_temp(
            "date,ticker,adj_close\n2020-01-03,AAA,101.0\n2020-01-02,AAA,100.0\n2020-01-06,AAA,99.5\n",
        );
        let series = load_prices(f.path()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].observations.len(), 3);
        assert_eq!(series[0].observations[0].0, d("2020-01-02"));
        assert_eq!(series[0].observations[2].1, 99.5);
    }

    #[test]
    fn load_prices_rejects_duplicates_with_line() {
        let f = write_temp(
            "date,ticker,adj_close\n2020-01-02,AAA,100.0\n2020-01-02,AAA,101.0\n",
        );
        match load_prices(f.path()) {
            Err(MarketDataError::DuplicateRow { line, ticker, date }) => {
                assert_eq!(line, 3);
                assert_eq!(ticker, "AAA");
                assert_eq!(date, d("2020-01-02"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn load_prices_rejects_bad_rows() {
        let f = write_temp("date,ticker,adj_close\n2020-01-02,AAA,-5.0\n");
        assert!(matches!(
            load_prices(f.path()),
            Err(MarketDataError::NonPositivePrice { line: 2, .. })
        ));
        let f = write_temp("date,ticker,adj_close\nnot-a-date,AAA,10.0\n");
        assert!(matches!(
            load_prices(f.path()),
            Err(MarketDataError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn compute_returns_arithmetic() {
        let s = series("AAA", &[("2020-01-02", 100.0), ("2020-01-03", 110.0)]);
        let r = compute_returns(&s).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].1 - 0.10).abs() < 1e-15);

        let flat = series(
            "BBB",
            &[("2020-01-02", 50.0), ("2020-01-03", 50.0), ("2020-01-06", 50.0)],
        );
        let r = compute_returns(&flat).unwrap();
        assert_eq!(r.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.0, 0.0]);

        let dip = series(
            "CCC",
            &[("2020-01-02", 100.0), ("2020-01-03", 80.0), ("2020-01-06", 90.0)],
        );
        let r = compute_returns(&dip).unwrap();
        assert!((r[0].1 + 0.20).abs() < 1e-15);
        assert!((r[1].1 - 0.125).abs() < 1e-15);

        let single = series("DDD", &[("2020-01-02", 10.0)]);
        assert!(matches!(
            compute_returns(&single),
            Err(MarketDataError::InsufficientData { n: 1, min: 2 })
        ));
    }

    #[test]
    fn daily_risk_free_arithmetic() {
        let (rf, neg) = daily_risk_free(&[
            (d("2020-01-02"), 2.52),
            (d("2020-01-03"), 0.0),
            (d("2020-01-06"), 5.04),
        ]);
        assert_eq!(neg, 0);
        assert!((rf.observations[0].1 - 0.0001).abs() < 1e-15);
        assert_eq!(rf.observations[1].1, 0.0);
        assert!((rf.observations[2].1 - 0.0002).abs() < 1e-15);

        let (_, neg) = daily_risk_free(&[(d("2020-01-02"), -0.5)]);
        assert_eq!(neg, 1);
    }

    #[test]
    fn risk_free_alignment_carries_forward() {
        let rf = RiskFreeSeries {
            observations: vec![(d("2020-01-02"), 0.0001), (d("2020-01-06"), 0.0002)],
        };
        let aligned = rf.aligned_to(&[
            d("2020-01-01"),
            d("2020-01-02"),
            d("2020-01-03"),
            d("2020-01-06"),
            d("2020-01-07"),
        ]);
        assert_eq!(aligned, vec![0.0001, 0.0001, 0.0001, 0.0002, 0.0002]);
    }

    #[test]
    fn align_panel_full_membership() {
        let a = series("AAA", &[("2020-01-02", 100.0), ("2020-01-03", 101.0), ("2020-01-06", 102.0)]);
        let b = series("BBB", &[("2020-01-02", 50.0), ("2020-01-03", 49.0), ("2020-01-06", 51.0)]);
        let panel = align_panel(&[a, b], &[]).unwrap();
        assert_eq!(panel.n_dates(), 3);
        // First date has no return for anyone.
        assert!(!panel.mask[0][0] && !panel.mask[0][1]);
        assert!(panel.mask[1][0] && panel.mask[1][1]);
        assert!(panel.mask[2][0] && panel.mask[2][1]);
    }

    #[test]
    fn align_panel_gap_spans_return() {
        // BBB misses Jan 3 and 6; its next return spans the gap.
        let a = series(
            "AAA",
            &[
                ("2020-01-02", 100.0),
                ("2020-01-03", 101.0),
                ("2020-01-06", 102.0),
                ("2020-01-07", 103.0),
            ],
        );
        let b = series("BBB", &[("2020-01-02", 50.0), ("2020-01-07", 55.0)]);
        let panel = align_panel(&[a, b], &[]).unwrap();
        let bi = panel.asset_index("BBB").unwrap();
        assert!(!panel.mask[1][bi]);
        assert!(!panel.mask[2][bi]);
        assert!(panel.mask[3][bi]);
        assert!((panel.returns[3][bi] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn membership_windows_exclude_and_admit() {
        let a = series("AAA", &[("2020-01-02", 100.0), ("2020-01-03", 101.0), ("2020-01-06", 102.0)]);
        let b = series("BBB", &[("2020-01-02", 50.0), ("2020-01-03", 51.0), ("2020-01-06", 52.0)]);
        let memberships = vec![
            UniverseMembership {
                ticker: "AAA".into(),
                start_date: d("2020-01-01"),
                end_date: d("2020-12-31"),
            },
            // BBB left before the panel starts.
            UniverseMembership {
                ticker: "BBB".into(),
                start_date: d("2019-01-01"),
                end_date: d("2019-12-31"),
            },
        ];
        let panel = align_panel(&[a, b], &memberships).unwrap();
        let bi = panel.asset_index("BBB").unwrap();
        assert!((0..3).all(|t| !panel.mask[t][bi]));
        let universe = active_universe(&panel, d("2020-01-06"), 2, 0.5).unwrap();
        assert_eq!(universe, vec!["AAA".to_string()]);
    }

    #[test]
    fn membership_change_mid_panel() {
        // Table-1 style handover: BBB replaces AAA on Jan 6.
        let rows = vec![
            UniverseMembership {
                ticker: "AAA".into(),
                start_date: d("2020-01-01"),
                end_date: d("2020-01-05"),
            },
            UniverseMembership {
                ticker: "BBB".into(),
                start_date: d("2020-01-06"),
                end_date: d("2020-12-31"),
            },
        ];
        let a = series(
            "AAA",
            &[("2020-01-02", 100.0), ("2020-01-03", 101.0), ("2020-01-06", 102.0), ("2020-01-07", 103.0)],
        );
        let b = series(
            "BBB",
            &[("2020-01-02", 50.0), ("2020-01-03", 51.0), ("2020-01-06", 52.0), ("2020-01-07", 53.0)],
        );
        let panel = align_panel(&[a, b], &rows).unwrap();
        let universe = active_universe(&panel, d("2020-01-07"), 2, 0.5).unwrap();
        assert_eq!(universe, vec!["BBB".to_string()]);
    }

    #[test]
    fn overlapping_membership_rejected() {
        let rows = vec![
            UniverseMembership {
                ticker: "AAA".into(),
                start_date: d("2020-01-01"),
                end_date: d("2020-06-30"),
            },
            UniverseMembership {
                ticker: "AAA".into(),
                start_date: d("2020-06-30"),
                end_date: d("2020-12-31"),
            },
        ];
        assert!(matches!(
            validate_membership(&rows),
            Err(MarketDataError::InvalidMembership { .. })
        ));
    }

    #[test]
    fn coverage_threshold_excludes_latecomers() {
        // BBB listed halfway through the window: 40% coverage.
        let a_rows: Vec<(String, f64)> = (2..=12)
            .map(|day| (format!("2020-03-{day:02}"), 100.0 + day as f64))
            .collect();
        let a = PriceSeries::new(
            "AAA",
            a_rows.iter().map(|(s, p)| (d(s), *p)).collect::<Vec<_>>(),
        )
        .unwrap();
        let b_rows: Vec<(String, f64)> = (8..=12)
            .map(|day| (format!("2020-03-{day:02}"), 50.0 + day as f64))
            .collect();
        let b = PriceSeries::new(
            "BBB",
            b_rows.iter().map(|(s, p)| (d(s), *p)).collect::<Vec<_>>(),
        )
        .unwrap();
        let panel = align_panel(&[a, b], &[]).unwrap();
        let strict = active_universe(&panel, d("2020-03-12"), 10, 0.9).unwrap();
        assert_eq!(strict, vec!["AAA".to_string()]);
        let loose = active_universe(&panel, d("2020-03-12"), 10, 0.3).unwrap();
        assert_eq!(loose.len(), 2);
    }

    #[test]
    fn active_universe_monotone_in_coverage() {
        let a = series("AAA", &[("2020-01-02", 1.0), ("2020-01-03", 1.1), ("2020-01-06", 1.2)]);
        let b = series("BBB", &[("2020-01-03", 2.0), ("2020-01-06", 2.1)]);
        let panel = align_panel(&[a, b], &[]).unwrap();
        let mut last_len = usize::MAX;
        for threshold in [0.1, 0.5, 0.9, 1.0] {
            let n = active_universe(&panel, d("2020-01-06"), 3, threshold)
                .map(|u| u.len())
                .unwrap_or(0);
            assert!(n <= last_len, "raising threshold added tickers");
            last_len = n;
        }
    }

    #[test]
    fn panel_csv_round_trip_is_bit_exact() {
        let a = series(
            "AAA",
            &[("2020-01-02", 100.0), ("2020-01-03", 100.37), ("2020-01-06", 99.11)],
        );
        let b = series("BBB", &[("2020-01-02", 50.0), ("2020-01-06", 50.81)]);
        let panel = align_panel(&[a, b], &[]).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let reloaded = ReturnPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(panel.dates, reloaded.dates);
        assert_eq!(panel.assets, reloaded.assets);
        assert_eq!(panel.mask, reloaded.mask);
        assert_eq!(panel.member, reloaded.member);
        for t in 0..panel.n_dates() {
            for i in 0..panel.n_assets() {
                if panel.mask[t][i] {
                    assert_eq!(
                        panel.returns[t][i].to_bits(),
                        reloaded.returns[t][i].to_bits(),
                        "cell ({t}, {i}) must round trip bit-exactly"
                    );
                }
            }
        }
    }

    #[test]
    fn compounding_returns_recovers_price_ratio() {
        let s = series(
            "AAA",
            &[
                ("2020-01-02", 103.27),
                ("2020-01-03", 99.18),
                ("2020-01-06", 101.44),
                ("2020-01-07", 97.03),
                ("2020-01-08", 104.91),
            ],
        );
        let rets = compute_returns(&s).unwrap();
        let compounded: f64 = rets.iter().fold(1.0, |acc, (_, r)| acc * (1.0 + r));
        let ratio = 104.91 / 103.27;
        assert!((compounded / ratio - 1.0).abs() < 1e-12);
    }
}
