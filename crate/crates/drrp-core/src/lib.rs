//! Diversified reward-risk parity portfolio construction and backtesting.
//!
//! The crate builds portfolios whose weights are a monotone function of a
//! per-asset reward-risk measure, `w_i = Phi(rho_i) / sum_j Phi(rho_j)`, and
//! evaluates them under a 6/6-month overlapping rebalancing protocol:
//!
//! - [`marketdata`] loads and aligns daily prices, index membership windows,
//!   and risk-free yields into return panels.
//! - [`measures`] computes the empirical reward-risk measures (Sharpe, Calmar,
//!   maximum drawdown, VaR, CVaR, STAR, Rachev) on a return window.
//! - [`cts`] implements classical tempered stable distribution numerics:
//!   characteristic function, FFT density inversion, quantiles, tail
//!   expectations, sampling, and maximum-likelihood fitting.
//! - [`armagarch`] fits ARMA(1,1)-GARCH(1,1) filters with Student-t
//!   quasi-likelihood, refits CTS to the standardized innovations, and derives
//!   conditional (model-based) measures from one-step forecasts.
//! - [`allocation`] maps measure vectors to portfolio weights under the
//!   allocation-rule family, with flooring and degenerate-case policies.
//! - [`backtest`] runs the overlapping-tranche simulation, tracks drifted
//!   weights and turnover, and produces summary statistics.
//! - [`factoranalysis`] aggregates daily returns to monthly and runs the
//!   Carhart four-factor regression.
//! - [`simulate`] generates deterministic synthetic fixtures (prices,
//!   membership, risk-free, factors) for tests and demos.

pub mod allocation;
pub mod armagarch;
pub mod backtest;
pub mod cts;
pub mod factoranalysis;
pub mod marketdata;
pub mod measures;
pub mod numerics;
pub mod simulate;
