//! Stylized hierarchical market simulator.
//!
//! Stocks live at the leaves of a depth-H tree (regions, countries,
//! industry groups, stocks in the default depth-4 shape). Each tree node
//! carries one Brownian driver; stock j is exposed to the H drivers along
//! its path with loading theta/gamma each:
//!
//! ```text
//! dS^j/S^j = r dt + (1/gamma) * sum_{h=1..H} theta (theta dt + dW^{p_h(j)})
//! ```
//!
//! The hierarchically weighted index over these stocks (nested equal
//! weights, w_j = product of reciprocal group sizes along the path)
//! aggregates to
//!
//! ```text
//! dI/I = (r + H theta^2/gamma) dt + (theta/gamma) * sum_p w_p dW^p
//! ```
//!
//! summed over every tree node p, where w_p is the total index weight of
//! p's subtree. The simulator integrates stocks and index by Euler or
//! log-Euler steps and carries the exact (closed-form) solution of the
//! index SDE alongside; that exact path is the growth-optimal benchmark of
//! the stylized market, and benchmarking any stock by it produces a
//! driftless series with diffusion loadings
//!
//! ```text
//! psi^{j,p} = (theta/gamma) (1[p on j's path] - w_p).
//! ```

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::efficiency::{z_test_nonpositive_mean, ReturnSample, TestReport};
use crate::error::{Error, Result};

// ============================================================================
// Configuration
// ============================================================================

/// A positive scalar process driving theta, gamma, or the short rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Constant { value: f64 },
    /// Mean reversion in log space (stays positive): with X = exp(Y),
    /// dY = speed (ln level - Y) dt + vol dB, started at the level.
    MeanReverting { speed: f64, level: f64, vol: f64 },
    /// Right-continuous step function over (time in years, value) points.
    Piecewise { points: Vec<(f64, f64)> },
}

impl ProcessSpec {
    fn validate(&self, name: &str, must_be_positive: bool) -> Result<()> {
        let check = |v: f64| -> Result<()> {
            if !v.is_finite() || (must_be_positive && v <= 0.0) {
                return Err(Error::usage(format!("{name}: invalid value {v}")));
            }
            Ok(())
        };
        match self {
            ProcessSpec::Constant { value } => check(*value),
            ProcessSpec::MeanReverting { speed, level, vol } => {
                if *speed < 0.0 || *vol < 0.0 || *level <= 0.0 {
                    return Err(Error::usage(format!(
                        "{name}: mean-reverting spec needs speed >= 0, vol >= 0, level > 0"
                    )));
                }
                Ok(())
            }
            ProcessSpec::Piecewise { points } => {
                if points.is_empty() {
                    return Err(Error::usage(format!("{name}: no piecewise points")));
                }
                if points.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::usage(format!("{name}: piecewise times must increase")));
                }
                points.iter().try_for_each(|&(_, v)| check(v))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ProcessSpec::Constant { .. })
    }

    /// Initial value of the process.
    pub fn initial(&self) -> f64 {
        match self {
            ProcessSpec::Constant { value } => *value,
            ProcessSpec::MeanReverting { level, .. } => *level,
            ProcessSpec::Piecewise { points } => points[0].1,
        }
    }
}

/// Per-process simulation state.
enum ProcessState {
    Constant(f64),
    MeanReverting { log_state: f64, speed: f64, log_level: f64, vol: f64 },
    Piecewise(Vec<(f64, f64)>),
}

impl ProcessState {
    fn new(spec: &ProcessSpec) -> Self {
        match spec {
            ProcessSpec::Constant { value } => ProcessState::Constant(*value),
            ProcessSpec::MeanReverting { speed, level, vol } => ProcessState::MeanReverting {
                log_state: level.ln(),
                speed: *speed,
                log_level: level.ln(),
                vol: *vol,
            },
            ProcessSpec::Piecewise { points } => ProcessState::Piecewise(points.clone()),
        }
    }

    /// Value over [t, t+dt), then advance by one step using `z`.
    fn step(&mut self, t: f64, dt: f64, z: f64) -> f64 {
        match self {
            ProcessState::Constant(v) => *v,
            ProcessState::MeanReverting { log_state, speed, log_level, vol } => {
                let value = log_state.exp();
                *log_state += *speed * (*log_level - *log_state) * dt + *vol * dt.sqrt() * z;
                value
            }
            ProcessState::Piecewise(points) => {
                let idx = points.partition_point(|&(s, _)| s <= t);
                points[idx.saturating_sub(1).min(points.len() - 1)].1
            }
        }
    }
}

/// Group count specification for one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelCounts {
    /// Same child count for every node at this level.
    Uniform(usize),
    /// One child count per node, in lexicographic parent order.
    PerNode(Vec<usize>),
}

/// How SDE steps are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exponential Euler on log values; preserves positivity.
    #[default]
    LogEuler,
    /// Plain Euler on levels; used for discretization-error studies. A step
    /// that would drive a value nonpositive falls back to a log step.
    Euler,
}

fn default_true() -> bool {
    true
}

/// Stylized-market configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hierarchy depth H (4 in the default shape).
    pub depth: usize,
    /// Child counts per level, top level first; length must equal `depth`.
    pub level_counts: Vec<LevelCounts>,
    pub theta: ProcessSpec,
    pub gamma: ProcessSpec,
    pub short_rate: ProcessSpec,
    /// Step size in years.
    pub dt: f64,
    /// Horizon in years.
    pub horizon: f64,
    pub seed: u64,
    /// Independent replications used by downstream studies.
    pub n_paths: usize,
    #[serde(default)]
    pub integrator: Integrator,
    /// Keep per-stock value paths (memory scales with stocks x steps).
    #[serde(default = "default_true")]
    pub record_stocks: bool,
    /// Keep per-step driver increments (memory scales with nodes x steps).
    #[serde(default)]
    pub record_increments: bool,
    /// Extra annual drift added to every stock but not to the benchmark.
    /// Zero in any honest run; nonzero only to check test power against a
    /// deliberately inefficient market.
    #[serde(default)]
    pub stock_drift_tilt: f64,
}

impl SimConfig {
    /// The realized shape of the empirical study, scaled down: 3 regions
    /// holding 2, 5, and 16 countries, 3 groups per country, 5 stocks per
    /// group.
    pub fn paper_shape() -> Self {
        SimConfig {
            depth: 4,
            level_counts: vec![
                LevelCounts::Uniform(3),
                LevelCounts::PerNode(vec![2, 5, 16]),
                LevelCounts::Uniform(3),
                LevelCounts::Uniform(5),
            ],
            theta: ProcessSpec::MeanReverting { speed: 1.0, level: 0.2, vol: 0.25 },
            gamma: ProcessSpec::MeanReverting { speed: 0.5, level: 2.0, vol: 0.2 },
            short_rate: ProcessSpec::MeanReverting { speed: 1.0, level: 0.03, vol: 0.3 },
            dt: 1.0 / 252.0,
            horizon: 10.0,
            seed: 42,
            n_paths: 1,
            integrator: Integrator::LogEuler,
            record_stocks: true,
            record_increments: false,
            stock_drift_tilt: 0.0,
        }
    }

    /// Uniform tree: `m` children at every node of every level.
    pub fn uniform(depth: usize, m: usize) -> Self {
        SimConfig {
            depth,
            level_counts: vec![LevelCounts::Uniform(m); depth],
            theta: ProcessSpec::Constant { value: 0.2 },
            gamma: ProcessSpec::Constant { value: 2.0 },
            short_rate: ProcessSpec::Constant { value: 0.03 },
            dt: 1.0 / 252.0,
            horizon: 10.0,
            seed: 42,
            n_paths: 1,
            integrator: Integrator::LogEuler,
            record_stocks: true,
            record_increments: false,
            stock_drift_tilt: 0.0,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::usage("hierarchy depth must be at least 1"));
        }
        if self.level_counts.len() != self.depth {
            return Err(Error::usage(format!(
                "{} level counts for depth {}",
                self.level_counts.len(),
                self.depth
            )));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.n_steps() == 0 {
            return Err(Error::usage("dt and horizon must be positive with at least one step"));
        }
        self.theta.validate("theta", false)?;
        self.gamma.validate("gamma", true)?;
        self.short_rate.validate("short_rate", false)?;
        Ok(())
    }
}

pub fn write_sim_config(path: &Path, config: &SimConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_sim_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: SimConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

// ============================================================================
// Tree shape
// ============================================================================

/// Expanded node-level view of the hierarchy. Nodes at depth 1..=H get
/// global driver ids in depth-major, lexicographic order; stocks are the
/// depth-H nodes.
#[derive(Debug, Clone)]
pub struct TreeShape {
    depth: usize,
    /// children[h][i]: child count of the i-th node at depth h (depth 0 is
    /// the root, one entry).
    children: Vec<Vec<usize>>,
    /// First global driver id of each depth (1-based depths).
    level_offset: Vec<usize>,
    /// Subtree index weight of every driver node, by global id.
    node_weight: Vec<f64>,
    /// Driver ids along each stock's path, H entries per stock.
    ancestors: Vec<usize>,
    n_stocks: usize,
    sum_weight_sq: f64,
}

impl TreeShape {
    pub fn from_config(config: &SimConfig) -> Result<TreeShape> {
        let mut children: Vec<Vec<usize>> = Vec::with_capacity(config.depth);
        let mut n_parents = 1usize;
        for (h, spec) in config.level_counts.iter().enumerate() {
            let counts = match spec {
                LevelCounts::Uniform(c) => vec![*c; n_parents],
                LevelCounts::PerNode(v) => {
                    if v.len() != n_parents {
                        return Err(Error::usage(format!(
                            "level {}: {} per-node counts for {} nodes",
                            h + 1,
                            v.len(),
                            n_parents
                        )));
                    }
                    v.clone()
                }
            };
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::usage(format!("level {}: zero group count", h + 1)));
            }
            n_parents = counts.iter().sum();
            children.push(counts);
        }

        // Global ids depth by depth; weights divide down the tree.
        let mut level_offset = Vec::with_capacity(config.depth + 1);
        let mut node_weight = Vec::new();
        let mut parent_weights = vec![1.0f64];
        for counts in &children {
            level_offset.push(node_weight.len());
            let mut level_weights = Vec::new();
            for (i, &c) in counts.iter().enumerate() {
                let w = parent_weights[i] / c as f64;
                for _ in 0..c {
                    level_weights.push(w);
                }
            }
            node_weight.extend(&level_weights);
            parent_weights = level_weights;
        }
        level_offset.push(node_weight.len());

        let n_stocks = parent_weights.len();
        // Stock ancestry by one forward pass over leaves, carrying the
        // current path of within-depth node indexes. Child id ranges come
        // from cumulative child counts.
        let mut first_child: Vec<Vec<usize>> = Vec::with_capacity(config.depth);
        for counts in &children {
            let mut starts = Vec::with_capacity(counts.len());
            let mut acc = 0;
            for &c in counts {
                starts.push(acc);
                acc += c;
            }
            first_child.push(starts);
        }
        let mut ancestors = vec![0usize; n_stocks * config.depth];
        let mut path = vec![0usize; config.depth];
        let mut remaining = vec![0usize; config.depth];
        for h in 0..config.depth {
            let parent = if h == 0 { 0 } else { path[h - 1] };
            path[h] = first_child[h][parent];
            remaining[h] = children[h][parent];
        }
        for j in 0..n_stocks {
            for h in 0..config.depth {
                ancestors[j * config.depth + h] = level_offset[h] + path[h];
            }
            // Advance the deepest counter; carry when a group is exhausted.
            let mut h = config.depth - 1;
            loop {
                path[h] += 1;
                remaining[h] -= 1;
                if remaining[h] > 0 || h == 0 {
                    break;
                }
                h -= 1;
            }
            if j + 1 < n_stocks {
                // Re-derive child ranges below the level that advanced.
                for g in h + 1..config.depth {
                    let parent = path[g - 1];
                    path[g] = first_child[g][parent];
                    remaining[g] = children[g][parent];
                }
            }
        }

        let sum_weight_sq = node_weight.iter().map(|w| w * w).sum();
        Ok(TreeShape {
            depth: config.depth,
            children,
            level_offset,
            node_weight,
            ancestors,
            n_stocks,
            sum_weight_sq,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    /// Total driver count (one per node over depths 1..=H).
    pub fn n_drivers(&self) -> usize {
        self.node_weight.len()
    }

    /// Driver ids along stock j's path, one per depth.
    pub fn ancestors(&self, j: usize) -> &[usize] {
        &self.ancestors[j * self.depth..(j + 1) * self.depth]
    }

    /// Subtree index weight of a driver node.
    pub fn node_weight(&self, id: usize) -> f64 {
        self.node_weight[id]
    }

    /// Index weight of stock j (its leaf node weight).
    pub fn stock_weight(&self, j: usize) -> f64 {
        self.node_weight[self.ancestors(j)[self.depth - 1]]
    }

    /// Sum of squared subtree weights over all drivers; the index's
    /// instantaneous variance is (theta/gamma)^2 times this.
    pub fn sum_weight_sq(&self) -> f64 {
        self.sum_weight_sq
    }

    /// Diffusion loading of the benchmarked stock j on driver `id`:
    /// (theta/gamma) (1[id on j's path] - w_id).
    pub fn psi(&self, theta_over_gamma: f64, j: usize, id: usize) -> f64 {
        let on_path = self.ancestors(j).contains(&id);
        theta_over_gamma * ((on_path as u8 as f64) - self.node_weight[id])
    }

    /// Child counts at one level (for inspection).
    pub fn level_children(&self, h: usize) -> &[usize] {
        &self.children[h]
    }

    /// Human-readable code path of stock j, e.g. [0, 3, 1, 2].
    pub fn stock_path(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth);
        for h in 0..self.depth {
            out.push(self.ancestors(j)[h] - self.level_offset[h]);
        }
        // Convert global-at-depth indexes to within-parent positions.
        let mut within = Vec::with_capacity(self.depth);
        for h in 0..self.depth {
            if h == 0 {
                within.push(out[0]);
            } else {
                // Parent's first child index at this depth:
                let parent = out[h - 1];
                let mut first = 0usize;
                for i in 0..parent {
                    first += self.children[h][i];
                }
                within.push(out[h] - first);
            }
        }
        within
    }
}

// ============================================================================
// Panel simulation
// ============================================================================

/// One simulated realization of the stylized market.
#[derive(Debug, Clone)]
pub struct SimPanel {
    pub config: SimConfig,
    pub tree: TreeShape,
    /// Observation times in years, n_steps + 1 entries.
    pub times: Vec<f64>,
    /// Synthetic weekday trading dates aligned with `times`.
    pub dates: Vec<NaiveDate>,
    /// Stock value paths, stocks x (n_steps + 1); present when recorded.
    pub stocks: Option<Vec<Vec<f64>>>,
    /// Euler/log-Euler integrated hierarchically weighted index.
    pub hwi: Vec<f64>,
    /// Exact closed-form solution of the index SDE on the same drivers:
    /// the growth-optimal benchmark of the stylized market.
    pub gp_exact: Vec<f64>,
    /// Driver increments per step (n_steps x n_drivers) when recorded.
    pub increments: Option<Vec<Vec<f64>>>,
    /// Coefficient values over each step.
    pub theta_path: Vec<f64>,
    pub gamma_path: Vec<f64>,
    pub r_path: Vec<f64>,
    /// Plain-Euler steps that had to fall back to a log step.
    pub euler_fallbacks: usize,
}

/// Weekday dates starting 2000-01-03, one per observation.
pub fn weekday_dates(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut day = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    while out.len() < n {
        if day.weekday().number_from_monday() <= 5 {
            out.push(day);
        }
        day += chrono::Duration::days(1);
    }
    out
}

/// Simulate stocks, the hierarchically weighted index, and the exact GP
/// benchmark on one shared set of driver paths.
pub fn simulate_panel(config: &SimConfig) -> Result<SimPanel> {
    config.validate()?;
    let tree = TreeShape::from_config(config)?;
    let n_steps = config.n_steps();
    let n = tree.n_stocks();
    let h = config.depth as f64;
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();

    // Coefficient processes draw from their own stream so the driver draws
    // do not shift when a process spec changes kind.
    let mut coeff_rng = ChaCha8Rng::seed_from_u64(config.seed);
    coeff_rng.set_stream(1);
    let mut driver_rng = ChaCha8Rng::seed_from_u64(config.seed);
    driver_rng.set_stream(2);

    let mut theta_state = ProcessState::new(&config.theta);
    let mut gamma_state = ProcessState::new(&config.gamma);
    let mut r_state = ProcessState::new(&config.short_rate);

    let mut stocks: Option<Vec<Vec<f64>>> = if config.record_stocks {
        Some(vec![Vec::with_capacity(n_steps + 1); n])
    } else {
        None
    };
    if let Some(s) = &mut stocks {
        for path in s.iter_mut() {
            path.push(1.0);
        }
    }
    let mut stock_values = vec![1.0f64; if config.record_stocks { n } else { 0 }];
    let mut hwi = Vec::with_capacity(n_steps + 1);
    let mut gp = Vec::with_capacity(n_steps + 1);
    hwi.push(1.0);
    gp.push(1.0);
    let mut hwi_v = 1.0f64;
    let mut gp_log = 0.0f64;
    let mut increments = if config.record_increments {
        Some(Vec::with_capacity(n_steps))
    } else {
        None
    };
    let mut theta_path = Vec::with_capacity(n_steps);
    let mut gamma_path = Vec::with_capacity(n_steps);
    let mut r_path = Vec::with_capacity(n_steps);
    let mut fallbacks = 0usize;
    let mut dw = vec![0.0f64; tree.n_drivers()];

    for step in 0..n_steps {
        let t = step as f64 * dt;
        let theta = theta_state.step(t, dt, coeff_rng.sample(StandardNormal));
        let gamma = gamma_state.step(t, dt, coeff_rng.sample(StandardNormal));
        let r = r_state.step(t, dt, coeff_rng.sample(StandardNormal));
        if gamma <= 0.0 {
            return Err(Error::numerical(format!("gamma became nonpositive at t={t:.4}")));
        }
        theta_path.push(theta);
        gamma_path.push(gamma);
        r_path.push(r);
        let tg = theta / gamma;

        for w in dw.iter_mut() {
            let z: f64 = driver_rng.sample(StandardNormal);
            *w = z * sqrt_dt;
        }

        // Index: drift r + H theta^2/gamma, loadings (theta/gamma) w_p.
        let mu_i = r + h * theta * theta / gamma;
        let sigma_i_sq = tg * tg * tree.sum_weight_sq();
        let diff_i: f64 =
            tg * dw.iter().zip(tree.node_weight.iter()).map(|(d, w)| d * w).sum::<f64>();
        gp_log += (mu_i - sigma_i_sq / 2.0) * dt + diff_i;
        gp.push(gp_log.exp());
        match config.integrator {
            Integrator::LogEuler => {
                hwi_v *= ((mu_i - sigma_i_sq / 2.0) * dt + diff_i).exp();
            }
            Integrator::Euler => {
                let factor = 1.0 + mu_i * dt + diff_i;
                if factor > 0.0 {
                    hwi_v *= factor;
                } else {
                    fallbacks += 1;
                    hwi_v *= ((mu_i - sigma_i_sq / 2.0) * dt + diff_i).exp();
                }
            }
        }
        hwi.push(hwi_v);

        if config.record_stocks {
            let mu_s = r + h * theta * theta / gamma + config.stock_drift_tilt;
            let sigma_s_sq = h * tg * tg;
            let paths = stocks.as_mut().unwrap();
            for (j, value) in stock_values.iter_mut().enumerate() {
                let diff: f64 = tree.ancestors(j).iter().map(|&id| dw[id]).sum::<f64>() * tg;
                match config.integrator {
                    Integrator::LogEuler => {
                        *value *= ((mu_s - sigma_s_sq / 2.0) * dt + diff).exp();
                    }
                    Integrator::Euler => {
                        let factor = 1.0 + mu_s * dt + diff;
                        if factor > 0.0 {
                            *value *= factor;
                        } else {
                            fallbacks += 1;
                            *value *= ((mu_s - sigma_s_sq / 2.0) * dt + diff).exp();
                        }
                    }
                }
                paths[j].push(*value);
            }
        }
        if let Some(incs) = &mut increments {
            incs.push(dw.clone());
        }
    }

    let times: Vec<f64> = (0..=n_steps).map(|s| s as f64 * dt).collect();
    let dates = weekday_dates(n_steps + 1);
    Ok(SimPanel {
        config: config.clone(),
        tree,
        times,
        dates,
        stocks,
        hwi,
        gp_exact: gp,
        increments,
        theta_path,
        gamma_path,
        r_path,
        euler_fallbacks: fallbacks,
    })
}

// ============================================================================
// Discretization-error study
// ============================================================================

/// Terminal log errors of the plain-Euler index against the exact GP path
/// at step dt and dt/2, driven by the same Brownian increments (the coarse
/// grid consumes pair sums of the fine draws). Constant coefficients only:
/// that is what makes the exact terminal value grid-independent.
pub struct RefinementPair {
    pub err_coarse: f64,
    pub err_fine: f64,
}

pub fn euler_refinement_pair(config: &SimConfig) -> Result<RefinementPair> {
    config.validate()?;
    if !(config.theta.is_constant() && config.gamma.is_constant() && config.short_rate.is_constant())
    {
        return Err(Error::usage(
            "refinement study requires constant theta, gamma, and short rate",
        ));
    }
    let tree = TreeShape::from_config(config)?;
    let theta = config.theta.initial();
    let gamma = config.gamma.initial();
    let r = config.short_rate.initial();
    let tg = theta / gamma;
    let h = config.depth as f64;
    let mu = r + h * theta * theta / gamma;
    let sigma_sq = tg * tg * tree.sum_weight_sq();

    let n_coarse = config.n_steps();
    let dt_c = config.dt;
    let dt_f = dt_c / 2.0;
    let sqrt_dt_f = dt_f.sqrt();
    let horizon = n_coarse as f64 * dt_c;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let n_drivers = tree.n_drivers();
    let mut log_fine = 0.0f64;
    let mut log_coarse = 0.0f64;
    let mut total_diff = 0.0f64;
    let mut pending_diff = 0.0f64; // first fine half of the coarse step
    for step in 0..2 * n_coarse {
        let mut diff = 0.0;
        for id in 0..n_drivers {
            let z: f64 = rng.sample(StandardNormal);
            diff += tree.node_weight[id] * z * sqrt_dt_f;
        }
        diff *= tg;
        total_diff += diff;
        log_fine += (1.0 + mu * dt_f + diff).ln();
        if step % 2 == 0 {
            pending_diff = diff;
        } else {
            log_coarse += (1.0 + mu * dt_c + pending_diff + diff).ln();
        }
    }
    let log_exact = (mu - sigma_sq / 2.0) * horizon + total_diff;
    Ok(RefinementPair { err_coarse: log_coarse - log_exact, err_fine: log_fine - log_exact })
}

// ============================================================================
// Driftless verification
// ============================================================================

/// Outcome of benchmarking every stock by the simulated index.
#[derive(Debug)]
pub struct DriftlessReport {
    /// Z-test over all pooled benchmarked returns.
    pub pooled: TestReport,
    /// Per-stock Z-tests in stock order.
    pub per_stock: Vec<TestReport>,
    /// Largest |empirical - closed-form| diffusion loading, available when
    /// increments were recorded and coefficients are constant.
    pub psi_max_abs_deviation: Option<f64>,
}

/// Per-stock benchmarked simple-return series from a recorded panel,
/// annualized to percent per year using the panel's own step size.
pub fn benchmarked_stock_returns(panel: &SimPanel) -> Result<Vec<Vec<f64>>> {
    benchmarked_returns_vs(panel, &panel.hwi)
}

/// Like [`benchmarked_stock_returns`] but dividing by any benchmark path
/// on the panel's grid (for example the exact GP, or a deliberately
/// degraded candidate).
pub fn benchmarked_returns_vs(panel: &SimPanel, benchmark: &[f64]) -> Result<Vec<Vec<f64>>> {
    let stocks = panel
        .stocks
        .as_ref()
        .ok_or_else(|| Error::usage("panel was simulated without stock paths"))?;
    if benchmark.len() != panel.times.len() {
        return Err(Error::usage(format!(
            "benchmark has {} observations for {} panel times",
            benchmark.len(),
            panel.times.len()
        )));
    }
    if benchmark.iter().any(|&v| v <= 0.0) {
        return Err(Error::numerical("benchmark has nonpositive values"));
    }
    let factor = 100.0 / panel.config.dt;
    Ok(stocks
        .iter()
        .map(|path| {
            path.windows(2)
                .zip(benchmark.windows(2))
                .map(|(s, v)| ((s[1] / v[1]) / (s[0] / v[0]) - 1.0) * factor)
                .collect()
        })
        .collect())
}

/// Test that the simulated market prices every stock efficiently against
/// its own index: pooled and per-stock mean tests, plus a diffusion-loading
/// comparison when the panel recorded its driver increments.
pub fn verify_driftless(panel: &SimPanel, confidence: f64) -> Result<DriftlessReport> {
    let series = benchmarked_stock_returns(panel)?;
    let pooled_obs: Vec<f64> = series.iter().flatten().copied().collect();
    let pooled = z_test_nonpositive_mean(
        &ReturnSample { observations: pooled_obs, source: "HWI".into() },
        confidence,
    )?;
    let per_stock = series
        .iter()
        .map(|obs| {
            z_test_nonpositive_mean(
                &ReturnSample { observations: obs.clone(), source: "HWI".into() },
                confidence,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let psi_max_abs_deviation = match (&panel.increments, panel.config.theta.is_constant()
        && panel.config.gamma.is_constant())
    {
        (Some(incs), true) => {
            let tg = panel.config.theta.initial() / panel.config.gamma.initial();
            let stocks = panel.stocks.as_ref().unwrap();
            let dt = panel.config.dt;
            let n_steps = incs.len();
            let mut worst = 0.0f64;
            for j in 0..panel.tree.n_stocks() {
                // Benchmarked simple returns per step.
                let path = &stocks[j];
                for id in 0..panel.tree.n_drivers() {
                    let mut acc = 0.0;
                    for t in 0..n_steps {
                        let ret =
                            (path[t + 1] / panel.hwi[t + 1]) / (path[t] / panel.hwi[t]) - 1.0;
                        acc += ret * incs[t][id];
                    }
                    let estimate = acc / (n_steps as f64 * dt);
                    let exact = panel.tree.psi(tg, j, id);
                    worst = worst.max((estimate - exact).abs());
                }
            }
            Some(worst)
        }
        _ => None,
    };

    Ok(DriftlessReport { pooled, per_stock, psi_max_abs_deviation })
}

// ============================================================================
// Diversification scan
// ============================================================================

/// Weight family scanned over universe sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanFamily {
    /// Equal weights over all M^H stocks: decay exponent xi = 0.
    Ewi,
    /// Uniform over the lexicographically first ceil(M^(H - xi)) stocks:
    /// weights concentrate as xi grows toward the 1/2 boundary.
    Concentrated { xi: f64 },
}

impl ScanFamily {
    pub fn xi(&self) -> f64 {
        match self {
            ScanFamily::Ewi => 0.0,
            ScanFamily::Concentrated { xi } => *xi,
        }
    }

    /// Admissible constant in max weight <= C M^(xi - H).
    pub fn c(&self) -> f64 {
        match self {
            ScanFamily::Ewi => 1.0,
            ScanFamily::Concentrated { .. } => 2.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScanFamily::Ewi => "EWI".to_string(),
            ScanFamily::Concentrated { xi } => format!("concentrated(xi={xi})"),
        }
    }

    fn weights(&self, m: usize, depth: usize) -> Vec<f64> {
        let n = m.pow(depth as u32);
        match self {
            ScanFamily::Ewi => vec![1.0 / n as f64; n],
            ScanFamily::Concentrated { xi } => {
                let support = ((m as f64).powf(depth as f64 - xi).ceil() as usize).clamp(1, n);
                let mut w = vec![0.0; n];
                for x in w.iter_mut().take(support) {
                    *x = 1.0 / support as f64;
                }
                w
            }
        }
    }
}

/// Per-universe-size quadratic-variation estimates and their decay rate.
#[derive(Debug, Clone, Serialize)]
pub struct DiversificationScanResult {
    pub family: String,
    pub xi: f64,
    pub m_values: Vec<usize>,
    /// Mean over coefficient draws of the benchmarked-portfolio
    /// quadratic-variation time derivative.
    pub estimates: Vec<f64>,
    /// Deterministic certificate 2 C^2 sigma^2 M^(2 xi - 1) per M.
    pub bounds: Vec<f64>,
    /// Fitted slope of log estimate against log M.
    pub slope: f64,
    /// Theoretical decay exponent 2 xi - 1.
    pub slope_bound: f64,
    /// True when every individual draw sat below its certificate.
    pub within_bound: bool,
}

/// Analytic diversification scan.
///
/// For each M, builds a uniform depth-H tree, draws benchmarked diffusion
/// loadings psi uniformly on [0, sigma] for each stock on its own H path
/// nodes (zero off-path, which satisfies the per-node absolute-sum
/// growth condition with Kbar = 1), evaluates the quadratic form
/// sum_nodes (sum_j pi_j psi^{j,node})^2 exactly, and averages over
/// config.n_paths draws. sigma is theta/gamma at time zero.
pub fn diversification_scan(
    family: ScanFamily,
    m_list: &[usize],
    config: &SimConfig,
) -> Result<DiversificationScanResult> {
    config.validate()?;
    if m_list.is_empty() {
        return Err(Error::usage("need at least one universe size"));
    }
    if m_list.iter().any(|&m| m < 2) {
        return Err(Error::usage("universe sizes must be at least 2"));
    }
    let xi = family.xi();
    if !(0.0..=0.5).contains(&xi) {
        return Err(Error::usage("decay exponent xi must lie in [0, 1/2]"));
    }
    let depth = config.depth;
    let sigma = config.theta.initial() / config.gamma.initial();
    let c = family.c();
    let n_draws = config.n_paths.max(1);

    let mut estimates = Vec::with_capacity(m_list.len());
    let mut bounds = Vec::with_capacity(m_list.len());
    let mut within_bound = true;
    for (mi, &m) in m_list.iter().enumerate() {
        let tree = TreeShape::from_config(&SimConfig::uniform(depth, m))?;
        let n = tree.n_stocks();
        let weights = family.weights(m, depth);
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        let cond = c * (m as f64).powf(xi - depth as f64);
        if max_w > cond * (1.0 + 1e-12) {
            return Err(Error::usage(format!(
                "weight family violates the decay condition at M={m}: max {max_w:.3e} > {cond:.3e}"
            )));
        }
        let bound = 2.0 * c * c * sigma * sigma * (m as f64).powf(2.0 * xi - 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(10 + mi as u64);
        let mut mean_qv = 0.0;
        for _ in 0..n_draws {
            // Accumulate sum_j pi_j psi^{j,node} per node; each stock hits
            // only its own path nodes.
            let mut loading = vec![0.0f64; tree.n_drivers()];
            for j in 0..n {
                if weights[j] == 0.0 {
                    // Off-support stocks still draw so the draw count per
                    // stock is fixed, keeping results comparable across
                    // families under one seed.
                    for _ in 0..depth {
                        let _: f64 = rng.gen();
                    }
                    continue;
                }
                for &id in tree.ancestors(j) {
                    let psi: f64 = rng.gen::<f64>() * sigma;
                    loading[id] += weights[j] * psi;
                }
            }
            let qv: f64 = loading.iter().map(|l| l * l).sum();
            if qv > bound * (1.0 + 1e-12) {
                within_bound = false;
            }
            mean_qv += qv;
        }
        estimates.push(mean_qv / n_draws as f64);
        bounds.push(bound);
    }

    // Least-squares slope of log estimate on log M.
    let xs: Vec<f64> = m_list.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = estimates.iter().map(|&e| e.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    Ok(DiversificationScanResult {
        family: family.label(),
        xi,
        m_values: m_list.to_vec(),
        estimates,
        bounds,
        slope,
        slope_bound: 2.0 * xi - 1.0,
        within_bound,
    })
}

/// Write a scan result as CSV: M, estimate, bound.
pub fn write_scan_csv(path: &Path, result: &DiversificationScanResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["M", "estimate", "bound"]).map_err(|e| Error::csv(path, e))?;
    for ((m, est), bound) in result.m_values.iter().zip(&result.estimates).zip(&result.bounds) {
        w.write_record([format!("{m}"), format!("{est}"), format!("{bound}")])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ============================================================================
// Panel export
// ============================================================================

/// Write a simulated panel in the ingestion schema (prices.csv,
/// classification.csv, policies.csv, calendar.csv) so it can flow through
/// the full real-data pipeline. Tree levels map to region / country /
/// industry codes; levels below the third fold into the stock identifier.
/// Prices are scaled by 100 and market value equals price.
pub fn export_panel(panel: &SimPanel, dir: &Path) -> Result<()> {
    let stocks = panel
        .stocks
        .as_ref()
        .ok_or_else(|| Error::usage("panel was simulated without stock paths"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = panel.tree.n_stocks();

    let stock_id = |path: &[usize]| -> String {
        let tail: Vec<String> = path.iter().map(|k| format!("{k:02}")).collect();
        format!("s{}", tail.join("."))
    };

    let prices_path = dir.join("prices.csv");
    let mut w = csv::Writer::from_path(&prices_path).map_err(|e| Error::csv(&prices_path, e))?;
    w.write_record(["stock_id", "date", "price", "market_value"])
        .map_err(|e| Error::csv(&prices_path, e))?;
    for j in 0..n {
        let id = stock_id(&panel.tree.stock_path(j));
        for (date, value) in panel.dates.iter().zip(&stocks[j]) {
            let price = value * 100.0;
            w.write_record([id.clone(), date.to_string(), format!("{price}"), format!("{price}")])
                .map_err(|e| Error::csv(&prices_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&prices_path, e))?;

    let class_path = dir.join("classification.csv");
    let mut w = csv::Writer::from_path(&class_path).map_err(|e| Error::csv(&class_path, e))?;
    w.write_record(["stock_id", "region", "country", "supersector", "sector", "subsector"])
        .map_err(|e| Error::csv(&class_path, e))?;
    let mut countries = std::collections::BTreeSet::new();
    for j in 0..n {
        let path = panel.tree.stock_path(j);
        let region = format!("R{:02}", path[0]);
        let country = if path.len() >= 2 {
            format!("R{:02}-C{:02}", path[0], path[1])
        } else {
            format!("R{:02}-C00", path[0])
        };
        let group = if path.len() >= 3 { format!("G{:02}", path[2]) } else { "G00".to_string() };
        countries.insert(country.clone());
        w.write_record([
            stock_id(&path),
            region,
            country,
            group.clone(),
            group.clone(),
            group,
        ])
        .map_err(|e| Error::csv(&class_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&class_path, e))?;

    let policies_path = dir.join("policies.csv");
    let mut w =
        csv::Writer::from_path(&policies_path).map_err(|e| Error::csv(&policies_path, e))?;
    w.write_record(["country", "base_date", "max_stocks", "industrial_level"])
        .map_err(|e| Error::csv(&policies_path, e))?;
    for country in countries {
        w.write_record([
            country,
            panel.dates[0].to_string(),
            format!("{n}"),
            "sector".to_string(),
        ])
        .map_err(|e| Error::csv(&policies_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&policies_path, e))?;

    let calendar_path = dir.join("calendar.csv");
    let mut w =
        csv::Writer::from_path(&calendar_path).map_err(|e| Error::csv(&calendar_path, e))?;
    w.write_record(["date"]).map_err(|e| Error::csv(&calendar_path, e))?;
    for date in &panel.dates {
        w.write_record([date.to_string()]).map_err(|e| Error::csv(&calendar_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&calendar_path, e))?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================
