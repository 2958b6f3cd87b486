//! Portfolio-index laboratory.
//!
//! Builds hierarchically weighted stock indexes (HWI and variants), backtests
//! them against market-cap and equal-weighted baselines with transaction
//! costs, solves for the growth optimal portfolio (GP), tests the Efficient
//! Market Property on benchmarked returns, and verifies the hierarchical
//! diversification asymptotics by analytic evaluation and Monte Carlo.
//!
//! Modules follow the data flow:
//!
//! - [`data`]: panel ingestion, validation, and the hierarchical grouping
//!   tree (region → country → industrial group → stock).
//! - [`index`]: weight schemes (MCI, EWI, HWI and nested variants) and the
//!   self-financing backtest recursion with rebalancing and costs.
//! - [`analytics`]: growth rates, risk/performance statistics, rolling
//!   growth-rate differences, outperformance frequencies.
//! - [`gp`]: the growth-optimal-portfolio linear system, GP dynamics, and
//!   benchmarked (GP-denominated) series.
//! - [`efficiency`]: pooled benchmarked-return samples, one-sided Z-tests of
//!   H0: μ ≤ 0, and stationary block bootstrap confidence intervals.
//! - [`sim`]: the stylized hierarchical market simulator (HWI = GP
//!   identity) and the diversification decay scan.
//! - [`config`] / [`manifest`]: reproducible run plumbing shared by the CLI
//!   binary, the examples, and the tests.

pub mod analytics;
pub mod config;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod gp;
pub mod index;
pub mod manifest;
pub mod sim;

pub use error::{Error, Result};
