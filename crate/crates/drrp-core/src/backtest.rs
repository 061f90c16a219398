//! The 6/6-month overlapping-tranche backtest engine.
//!
//! Every `rebalance_step` trading days a new tranche is formed from measures
//! computed over the trailing formation window, and the tranche formed
//! `holding_period` days earlier retires, so after warm-up exactly one of six
//! live tranches is replaced per month. Capital splits equally across live
//! tranches; within a tranche, weights drift multiplicatively with returns.
//! The engine is fully deterministic: identical inputs give bitwise-identical
//! reports.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{self, AllocationError, AllocationRule, RuleFamily, WeightVector};
use crate::armagarch::{self, ArmaGarchOptions, ConditionalForecast, InnovationLaw};
use crate::marketdata::{
    active_universe, MarketDataError, ReturnPanel, RiskFreeSeries, DEFAULT_MIN_COVERAGE,
    TRADING_DAYS_HALF_YEAR, TRADING_DAYS_PER_MONTH, TRADING_DAYS_PER_YEAR,
};
use crate::measures::{self, MeasureError, MeasureSource, MeasureSpec};
use crate::numerics::{excess_kurtosis, mean, sample_std, skewness};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("panel spans {n} dates but the schedule needs {min}")]
    PanelTooShort { n: usize, min: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("summary needs at least {min} daily returns, got {n}")]
    SummaryTooShort { n: usize, min: usize },
    #[error("rule/measure pairing rejected: {0}")]
    BadStrategy(String),
}

/// Rebalancing timetable. The defaults realize the 6/6 monthly protocol:
/// six-month formation and holding, monthly step, six overlapping tranches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub formation_window: usize,
    pub holding_period: usize,
    pub rebalance_step: usize,
    pub tranche_count: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            formation_window: TRADING_DAYS_HALF_YEAR,
            holding_period: TRADING_DAYS_HALF_YEAR,
            rebalance_step: TRADING_DAYS_PER_MONTH,
            tranche_count: 6,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.formation_window != self.holding_period
            || self.holding_period != self.tranche_count * self.rebalance_step
            || self.rebalance_step == 0
        {
            return Err(BacktestError::InvalidSchedule(format!(
                "need formation == holding == tranches * step, got {} == {} == {} * {}",
                self.formation_window, self.holding_period, self.tranche_count, self.rebalance_step
            )));
        }
        Ok(())
    }
}

/// Engine options beyond the schedule.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub min_coverage: f64,
    /// Recorded in the report for provenance; the engine itself is
    /// deterministic and draws nothing from it.
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            min_coverage: DEFAULT_MIN_COVERAGE,
            seed: 0,
        }
    }
}

/// One-step model fit shared between strategies: innovation law plus the
/// conditional forecast at a formation date.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub law: InnovationLaw,
    pub forecast: ConditionalForecast,
    pub cts_fallback: bool,
}

/// Memoized ARMA-GARCH-CTS fits keyed by (formation date index, asset index).
///
/// Fits are pure functions of the window data, so sharing the cache across
/// concurrently running strategies cannot change any strategy's numbers.
#[derive(Debug, Default)]
pub struct ModelCache {
    inner: Mutex<HashMap<(usize, usize), Arc<Result<ModelFit, String>>>>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_compute(
        &self,
        key: (usize, usize),
        compute: impl FnOnce() -> Result<ModelFit, String>,
    ) -> Arc<Result<ModelFit, String>> {
        if let Some(hit) = self.inner.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let value = Arc::new(compute());
        let mut guard = self.inner.lock().unwrap();
        guard.entry(key).or_insert(value).clone()
    }
}

/// Two-stage fit for one asset window (deterministic).
fn fit_window_model(window_returns: &[f64]) -> Result<ModelFit, String> {
    let fit = armagarch::fit_with_options(window_returns, &ArmaGarchOptions::default())
        .map_err(|e| e.to_string())?;
    Ok(ModelFit {
        forecast: fit.forecast(),
        cts_fallback: fit.cts_fallback,
        law: fit.law,
    })
}

/// Flags and turnover for one rebalance date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceEvent {
    pub date: NaiveDate,
    /// One-way turnover; `None` for the initial from-cash formation, which is
    /// excluded from the reported average.
    pub turnover: Option<f64>,
    pub equal_weight_fallback: bool,
    /// Assets excluded from the tranche because their measure failed.
    pub dropped_assets: Vec<String>,
    /// Assets whose CTS refit fell back to the Student-t innovation law.
    pub cts_fallback_assets: Vec<String>,
    /// Assets whose infinite Calmar score was capped.
    pub sentinel_capped_assets: Vec<String>,
    /// True when no asset passed the universe filter and the tranche was
    /// formed equal-weight over the members instead.
    pub universe_fallback: bool,
    /// Assets delisted mid-holding whose weight was redistributed.
    pub delisted_assets: Vec<String>,
}

/// The Table-3-shaped summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// Annualized mean return, percent per year.
    pub mean_ann: f64,
    /// Annualized standard deviation, percent per year.
    pub std_ann: f64,
    pub skew: f64,
    /// Excess kurtosis (0 for a Gaussian).
    pub excess_kurtosis: f64,
    /// Cumulative compounded return, percent.
    pub cumulative_pct: f64,
    /// Annualized Sharpe ratio of daily excess returns.
    pub sharpe_ann: f64,
    /// Annualized conditional Sharpe from an ARMA-GARCH fit of the portfolio
    /// series, with conditional quantities averaged over the sample. Absent
    /// when that fit fails.
    pub cond_sharpe_ann: Option<f64>,
    /// Annualized return over full-period maximum drawdown.
    pub calmar_full: f64,
    /// Full-period maximum drawdown, percent.
    pub mdd_pct: f64,
    /// Daily 95% VaR of excess returns, percent.
    pub var95_daily_pct: f64,
    /// Daily 95% CVaR of excess returns, percent.
    pub cvar95_daily_pct: f64,
    pub var_95_99_ratio: f64,
    pub cvar_95_99_ratio: f64,
    /// Mean one-way turnover per rebalance, percent.
    pub turnover_pct: f64,
}

/// Full output of one strategy run.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    /// Holding dates: every panel date after the first formation.
    pub dates: Vec<NaiveDate>,
    pub daily_returns: Vec<f64>,
    /// Aggregate drifted weights per holding date, dense over panel assets.
    pub aggregate_weights: Vec<Vec<f64>>,
    pub rebalance_log: Vec<RebalanceEvent>,
    pub stats: SummaryStats,
    pub seed: u64,
}

impl BacktestReport {
    /// Aggregate weights on one date as ticker/weight pairs (non-zero only).
    pub fn weights_at(&self, panel: &ReturnPanel, idx: usize) -> WeightVector {
        let entries = self.aggregate_weights[idx]
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (panel.assets[i].clone(), *w))
            .collect();
        WeightVector { entries }
    }
}

/// One-way turnover between two weight vectors on the same (union) index
/// space: half the L1 distance. Absent assets carry weight zero.
pub fn turnover_at_rebalance(pre: &[f64], post: &[f64]) -> f64 {
    assert_eq!(pre.len(), post.len(), "weight vectors must share the index space");
    0.5 * pre
        .iter()
        .zip(post)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

struct LiveTranche {
    formed_at: usize,
    assets: Vec<usize>,
    weights: Vec<f64>,
}

impl LiveTranche {
    fn renormalize(&mut self) {
        let total: f64 = self.weights.iter().sum();
        if total > 0.0 {
            for w in &mut self.weights {
                *w /= total;
            }
        }
    }
}

/// Measures for every asset of the universe at a formation date; assets whose
/// measure fails are dropped with a flag.
#[allow(clippy::too_many_arguments)]
fn measure_universe(
    panel: &ReturnPanel,
    rf_by_date: &[f64],
    universe: &[usize],
    t: usize,
    schedule: &Schedule,
    measure: &MeasureSpec,
    cache: &ModelCache,
    dropped: &mut Vec<String>,
    cts_fallbacks: &mut Vec<String>,
) -> (Vec<usize>, Vec<f64>) {
    let start = t + 1 - schedule.formation_window;
    let mut kept = Vec::with_capacity(universe.len());
    let mut values = Vec::with_capacity(universe.len());
    for &i in universe {
        let window = panel.valid_returns(i, start, t + 1);
        let r: Vec<f64> = window.iter().map(|(_, ret)| *ret).collect();
        let rf: Vec<f64> = window.iter().map(|(idx, _)| rf_by_date[*idx]).collect();
        let result = match measure.source {
            MeasureSource::Empirical => {
                measures::compute_empirical(measure, &r, &rf).map(|v| v.value)
            }
            MeasureSource::Model => {
                let fit = cache.get_or_compute((t, i), || fit_window_model(&r));
                match fit.as_ref() {
                    Ok(model) => {
                        if model.cts_fallback {
                            cts_fallbacks.push(panel.assets[i].clone());
                        }
                        armagarch::model_measure(&model.law, &model.forecast, measure, rf_by_date[t])
                            .map(|v| v.value)
                            .map_err(|e| MeasureError::Undefined {
                                kind: "model",
                                reason: e.to_string(),
                            })
                    }
                    Err(e) => Err(MeasureError::Undefined {
                        kind: "model-fit",
                        reason: e.clone(),
                    }),
                }
            }
        };
        match result {
            Ok(v) => {
                kept.push(i);
                values.push(v);
            }
            Err(_) => dropped.push(panel.assets[i].clone()),
        }
    }
    (kept, values)
}

/// Run one strategy through the overlapping-tranche protocol.
pub fn run(
    panel: &ReturnPanel,
    rf: &RiskFreeSeries,
    measure: &MeasureSpec,
    rule: &AllocationRule,
    schedule: &Schedule,
    options: &RunOptions,
    cache: &ModelCache,
) -> Result<BacktestReport, BacktestError> {
    schedule.validate()?;
    if rule.family != RuleFamily::EqualWeight {
        allocation::check_rule_measure(measure.kind, rule)
            .map_err(|e| BacktestError::BadStrategy(e.to_string()))?;
    }
    let n = panel.n_dates();
    let min_span = schedule.formation_window + schedule.holding_period;
    if n < min_span {
        return Err(BacktestError::PanelTooShort { n, min: min_span });
    }
    let rf_by_date = rf.aligned_to(&panel.dates);
    let last_valid: Vec<Option<usize>> = (0..panel.n_assets())
        .map(|i| panel.last_valid_index(i))
        .collect();

    let first_formation = schedule.formation_window - 1;
    let is_rebalance =
        |t: usize| t >= first_formation && (t - first_formation) % schedule.rebalance_step == 0;

    let mut tranches: Vec<LiveTranche> = Vec::new();
    let mut dates = Vec::new();
    let mut daily_returns = Vec::new();
    let mut aggregate_weights = Vec::new();
    let mut rebalance_log: Vec<RebalanceEvent> = Vec::new();
    let mut pending_delistings: Vec<String> = Vec::new();

    let aggregate = |tranches: &[LiveTranche]| -> Vec<f64> {
        let mut agg = vec![0.0; panel.n_assets()];
        if tranches.is_empty() {
            return agg;
        }
        let share = 1.0 / tranches.len() as f64;
        for tr in tranches {
            for (idx, w) in tr.assets.iter().zip(&tr.weights) {
                agg[*idx] += share * w;
            }
        }
        agg
    };

    for t in first_formation..n {
        // Accrue returns before any rebalancing activity on date t.
        if t > first_formation {
            let live = tranches.len() as f64;
            let mut day_return = 0.0;
            for tr in &mut tranches {
                let mut tranche_ret = 0.0;
                for (idx, w) in tr.assets.iter().zip(&tr.weights) {
                    if panel.mask[t][*idx] {
                        tranche_ret += w * panel.returns[t][*idx];
                    }
                }
                day_return += tranche_ret / live;
                // Multiplicative drift, then renormalize onto the simplex.
                for (idx, w) in tr.assets.iter().zip(tr.weights.iter_mut()) {
                    if panel.mask[t][*idx] {
                        *w *= 1.0 + panel.returns[t][*idx];
                    }
                }
                tr.renormalize();
            }

            // Drop assets that can never trade again; their weight spreads
            // proportionally over the rest of the tranche.
            for tr in &mut tranches {
                let gone: Vec<usize> = tr
                    .assets
                    .iter()
                    .cloned()
                    .filter(|idx| last_valid[*idx].map_or(true, |lv| t > lv))
                    .collect();
                if !gone.is_empty() {
                    for idx in &gone {
                        pending_delistings.push(panel.assets[*idx].clone());
                    }
                    let keep: Vec<(usize, f64)> = tr
                        .assets
                        .iter()
                        .zip(&tr.weights)
                        .filter(|(idx, _)| !gone.contains(idx))
                        .map(|(idx, w)| (*idx, *w))
                        .collect();
                    tr.assets = keep.iter().map(|(i, _)| *i).collect();
                    tr.weights = keep.iter().map(|(_, w)| *w).collect();
                    tr.renormalize();
                }
            }

            dates.push(panel.dates[t]);
            daily_returns.push(day_return);
        }

        if is_rebalance(t) {
            let pre = aggregate(&tranches);

            // Retire the tranche that has completed its holding period.
            tranches.retain(|tr| t < tr.formed_at + schedule.holding_period);

            let mut event = RebalanceEvent {
                date: panel.dates[t],
                turnover: None,
                equal_weight_fallback: false,
                dropped_assets: Vec::new(),
                cts_fallback_assets: Vec::new(),
                sentinel_capped_assets: Vec::new(),
                universe_fallback: false,
                delisted_assets: std::mem::take(&mut pending_delistings),
            };

            let universe_tickers = match active_universe(
                panel,
                panel.dates[t],
                schedule.formation_window,
                options.min_coverage,
            ) {
                Ok(u) => u,
                Err(MarketDataError::NoInvestableAssets { .. }) => {
                    event.universe_fallback = true;
                    Vec::new()
                }
                Err(e) => return Err(e.into()),
            };
            let universe: Vec<usize> = universe_tickers
                .iter()
                .map(|ticker| panel.asset_index(ticker).expect("universe ticker in panel"))
                .collect();

            let new_tranche = if universe.is_empty() {
                // Equal weight over current members with any usable history.
                let members: Vec<usize> = (0..panel.n_assets())
                    .filter(|i| panel.member[t][*i] && last_valid[*i].map_or(false, |lv| lv >= t))
                    .collect();
                event.equal_weight_fallback = true;
                if members.is_empty() {
                    None
                } else {
                    let w = 1.0 / members.len() as f64;
                    Some(LiveTranche {
                        formed_at: t,
                        weights: vec![w; members.len()],
                        assets: members,
                    })
                }
            } else if rule.family == RuleFamily::EqualWeight {
                let w = 1.0 / universe.len() as f64;
                Some(LiveTranche {
                    formed_at: t,
                    weights: vec![w; universe.len()],
                    assets: universe,
                })
            } else {
                let (kept, values) = measure_universe(
                    panel,
                    &rf_by_date,
                    &universe,
                    t,
                    schedule,
                    measure,
                    cache,
                    &mut event.dropped_assets,
                    &mut event.cts_fallback_assets,
                );
                if kept.is_empty() {
                    event.equal_weight_fallback = true;
                    let w = 1.0 / universe.len() as f64;
                    Some(LiveTranche {
                        formed_at: t,
                        weights: vec![w; universe.len()],
                        assets: universe,
                    })
                } else {
                    match allocation::compute_weights(&values, rule) {
                        Ok(alloc) => {
                            event.equal_weight_fallback = alloc.equal_weight_fallback;
                            event.sentinel_capped_assets = alloc
                                .sentinel_capped
                                .iter()
                                .map(|j| panel.assets[kept[*j]].clone())
                                .collect();
                            Some(LiveTranche {
                                formed_at: t,
                                assets: kept,
                                weights: alloc.weights,
                            })
                        }
                        Err(AllocationError::NonPositiveRisk { .. }) => {
                            // Inverse rules cannot price a riskless asset;
                            // hold the tranche equal-weight and flag it.
                            event.equal_weight_fallback = true;
                            let w = 1.0 / kept.len() as f64;
                            Some(LiveTranche {
                                formed_at: t,
                                weights: vec![w; kept.len()],
                                assets: kept,
                            })
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };

            if let Some(tr) = new_tranche {
                tranches.push(tr);
            }

            let post = aggregate(&tranches);
            if t > first_formation {
                event.turnover = Some(turnover_at_rebalance(&pre, &post));
            }
            rebalance_log.push(event);
        }

        if t > first_formation {
            aggregate_weights.push(aggregate(&tranches));
        }
    }

    let turnovers: Vec<f64> = rebalance_log.iter().filter_map(|e| e.turnover).collect();
    let stats = summarize(&daily_returns, &rf_by_date[first_formation + 1..], &turnovers)?;

    Ok(BacktestReport {
        dates,
        daily_returns,
        aggregate_weights,
        rebalance_log,
        stats,
        seed: options.seed,
    })
}

/// Summary statistics of a daily portfolio return series. Mean/std annualize
/// with 252; VaR/CVaR are daily, on excess returns, in percent; the 95/99
/// ratios divide the 95% level by the 99% level.
pub fn summarize(
    daily_returns: &[f64],
    rf_aligned: &[f64],
    rebalance_turnovers: &[f64],
) -> Result<SummaryStats, BacktestError> {
    let n = daily_returns.len();
    if n < TRADING_DAYS_PER_YEAR {
        return Err(BacktestError::SummaryTooShort {
            n,
            min: TRADING_DAYS_PER_YEAR,
        });
    }
    let rf = &rf_aligned[..n];
    let ann = TRADING_DAYS_PER_YEAR as f64;

    let mean_daily = mean(daily_returns);
    let std_daily = sample_std(daily_returns);
    let mdd = measures::max_drawdown(daily_returns)?;
    // A zero-variance excess series maps to a signed-infinite Sharpe rather
    // than a failure; constant-return portfolios are a legal degenerate case.
    let excess: Vec<f64> = daily_returns.iter().zip(rf).map(|(r, f)| r - f).collect();
    let excess_sd = sample_std(&excess);
    let excess_mean = mean(&excess);
    let sharpe_daily = if excess_sd > 0.0 {
        excess_mean / excess_sd
    } else if excess_mean == 0.0 {
        0.0
    } else {
        excess_mean.signum() * f64::INFINITY
    };

    let cond_sharpe_ann = armagarch::fit_with_options(
        daily_returns,
        &ArmaGarchOptions {
            skip_cts: true,
            ..ArmaGarchOptions::default()
        },
    )
    .ok()
    .map(|fit| {
        let mu_bar = mean(&fit.cond_means);
        let sigma_bar = mean(&fit.cond_sigmas);
        (mu_bar - mean(rf)) / sigma_bar * ann.sqrt()
    });

    let var95 = measures::empirical_var(daily_returns, rf, 0.05)?;
    let var99 = measures::empirical_var(daily_returns, rf, 0.01)?;
    let cvar95 = measures::empirical_cvar(daily_returns, rf, 0.05)?;
    let cvar99 = measures::empirical_cvar(daily_returns, rf, 0.01)?;

    let mean_ann = mean_daily * ann * 100.0;
    let mdd_pct = mdd * 100.0;
    let flat = crate::numerics::central_moment(daily_returns, 2) < 1e-30;
    Ok(SummaryStats {
        mean_ann,
        std_ann: std_daily * ann.sqrt() * 100.0,
        skew: if flat { 0.0 } else { skewness(daily_returns) },
        excess_kurtosis: if flat {
            0.0
        } else {
            excess_kurtosis(daily_returns)
        },
        cumulative_pct: measures::cumulative_return(daily_returns) * 100.0,
        sharpe_ann: sharpe_daily * ann.sqrt(),
        cond_sharpe_ann,
        calmar_full: if mdd_pct > 0.0 {
            mean_ann / mdd_pct
        } else {
            f64::INFINITY
        },
        mdd_pct,
        var95_daily_pct: var95 * 100.0,
        cvar95_daily_pct: cvar95 * 100.0,
        var_95_99_ratio: var95 / var99,
        cvar_95_99_ratio: cvar95 / cvar99,
        turnover_pct: if rebalance_turnovers.is_empty() {
            0.0
        } else {
            mean(rebalance_turnovers) * 100.0
        },
    })
}
