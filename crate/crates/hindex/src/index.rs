//! Index construction: weighting schemes, the rebalance calendar, and a
//! buy-and-hold backtest with proportional transaction costs.
//!
//! A hierarchical scheme is an ordered list of grouping levels. Weight mass
//! splits equally across the blocks of the first level, then recursively
//! across the next level inside each block, ending with equal weights across
//! the stocks of a leaf block. The empty list is the equal-weighted index;
//! market-cap weighting is a separate non-hierarchical scheme.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::{CountryPolicy, HierarchyTree, IndustrialLevel, StockRecord, StockRef};
use crate::error::{Error, Result};

// ============================================================================
// Weight schemes
// ============================================================================

/// One grouping level of a hierarchical scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupLevel {
    Region,
    Country,
    /// The country's industrial grouping at its policy-resolved granularity.
    IndustryPolicy,
    Supersector,
    Sector,
    Subsector,
}

/// How index weights are assigned over the selected universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Weights proportional to market value.
    MarketCap,
    /// Nested equal weighting over the listed levels (empty: equal weights).
    Hierarchical { levels: Vec<GroupLevel> },
}

impl WeightScheme {
    pub fn mci() -> Self {
        WeightScheme::MarketCap
    }

    pub fn ewi() -> Self {
        WeightScheme::Hierarchical { levels: vec![] }
    }

    /// Region, then country, then the country's policy-level industry group.
    pub fn hwi() -> Self {
        WeightScheme::Hierarchical {
            levels: vec![GroupLevel::Region, GroupLevel::Country, GroupLevel::IndustryPolicy],
        }
    }

    pub fn hwi_r() -> Self {
        WeightScheme::Hierarchical { levels: vec![GroupLevel::Region] }
    }

    pub fn hwi_c_r() -> Self {
        WeightScheme::Hierarchical { levels: vec![GroupLevel::Region, GroupLevel::Country] }
    }

    pub fn hwi_s() -> Self {
        WeightScheme::Hierarchical { levels: vec![GroupLevel::Sector] }
    }

    pub fn hwi_c_g() -> Self {
        WeightScheme::Hierarchical { levels: vec![GroupLevel::Sector, GroupLevel::Country] }
    }

    pub fn hwi_c_r_g() -> Self {
        WeightScheme::Hierarchical {
            levels: vec![GroupLevel::Sector, GroupLevel::Region, GroupLevel::Country],
        }
    }

    /// Canonical scheme name, used in output files.
    pub fn name(&self) -> String {
        let named: [(&str, WeightScheme); 7] = [
            ("EWI", Self::ewi()),
            ("HWI", Self::hwi()),
            ("HWI.r", Self::hwi_r()),
            ("HWI.c.r", Self::hwi_c_r()),
            ("HWI.s", Self::hwi_s()),
            ("HWI.c.g", Self::hwi_c_g()),
            ("HWI.c.r.g", Self::hwi_c_r_g()),
        ];
        if *self == WeightScheme::MarketCap {
            return "MCI".to_string();
        }
        for (name, scheme) in named {
            if *self == scheme {
                return name.to_string();
            }
        }
        if let WeightScheme::Hierarchical { levels } = self {
            let parts: Vec<String> = levels.iter().map(|l| format!("{l:?}")).collect();
            return format!("HWI[{}]", parts.join(","));
        }
        unreachable!()
    }

    /// Parse a canonical scheme name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "MCI" => Ok(Self::mci()),
            "EWI" => Ok(Self::ewi()),
            "HWI" => Ok(Self::hwi()),
            "HWI.r" => Ok(Self::hwi_r()),
            "HWI.c.r" => Ok(Self::hwi_c_r()),
            "HWI.s" => Ok(Self::hwi_s()),
            "HWI.c.g" => Ok(Self::hwi_c_g()),
            "HWI.c.r.g" => Ok(Self::hwi_c_r_g()),
            other => Err(Error::usage(format!("unknown scheme {other:?}"))),
        }
    }

    /// All canonical scheme names.
    pub fn canonical_names() -> [&'static str; 8] {
        ["MCI", "EWI", "HWI", "HWI.r", "HWI.c.r", "HWI.s", "HWI.c.g", "HWI.c.r.g"]
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Index weights at one date: (record index, weight), sorted by record index.
/// Weights are nonnegative and sum to one when any member is weighted.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub date: NaiveDate,
    pub weights: Vec<(usize, f64)>,
    /// Members excluded from weighting (zero market value under MarketCap).
    pub dropped: Vec<StockRef>,
}

impl WeightVector {
    pub fn get(&self, idx: usize) -> f64 {
        self.weights
            .binary_search_by_key(&idx, |&(i, _)| i)
            .map(|pos| self.weights[pos].1)
            .unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&(_, w)| w).sum()
    }
}

fn level_key(
    records: &[StockRecord],
    country_levels: &HashMap<String, IndustrialLevel>,
    level: GroupLevel,
    idx: usize,
) -> String {
    let c = &records[idx].classification;
    match level {
        GroupLevel::Region => c.region.clone(),
        GroupLevel::Country => c.country.clone(),
        GroupLevel::Supersector => c.supersector.clone(),
        GroupLevel::Sector => c.sector.clone(),
        GroupLevel::Subsector => c.subsector.clone(),
        GroupLevel::IndustryPolicy => {
            // Group industry codes per country: the same sector label under
            // different countries is a different block.
            let level = country_levels[&c.country];
            format!("{}\u{1f}{}", c.country, level.code_of(c))
        }
    }
}

fn split_equally(
    records: &[StockRecord],
    country_levels: &HashMap<String, IndustrialLevel>,
    levels: &[GroupLevel],
    members: &[usize],
    mass: f64,
    out: &mut Vec<(usize, f64)>,
) {
    match levels.split_first() {
        None => {
            let w = mass / members.len() as f64;
            out.extend(members.iter().map(|&idx| (idx, w)));
        }
        Some((level, rest)) => {
            let mut blocks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for &idx in members {
                blocks
                    .entry(level_key(records, country_levels, *level, idx))
                    .or_default()
                    .push(idx);
            }
            let block_mass = mass / blocks.len() as f64;
            for block in blocks.values() {
                split_equally(records, country_levels, rest, block, block_mass, out);
            }
        }
    }
}

/// Weights over the tree's selected universe under `scheme`.
pub fn scheme_weights(
    records: &[StockRecord],
    tree: &HierarchyTree,
    scheme: &WeightScheme,
) -> Result<WeightVector> {
    let members = tree.member_indices();
    match scheme {
        WeightScheme::MarketCap => mci_weights(records, tree),
        WeightScheme::Hierarchical { levels } => {
            let country_levels: HashMap<String, IndustrialLevel> = tree
                .regions
                .iter()
                .flat_map(|r| r.countries.iter())
                .map(|c| (c.code.clone(), c.level))
                .collect();
            let mut weights = Vec::with_capacity(members.len());
            if !members.is_empty() {
                split_equally(records, &country_levels, levels, &members, 1.0, &mut weights);
            }
            weights.sort_by_key(|&(idx, _)| idx);
            Ok(WeightVector { date: tree.date, weights, dropped: vec![] })
        }
    }
}

/// Market-value-proportional weights. Members without a positive market
/// value at the date are excluded and reported in `dropped`.
pub fn mci_weights(records: &[StockRecord], tree: &HierarchyTree) -> Result<WeightVector> {
    let mut weights = Vec::new();
    let mut dropped = Vec::new();
    let mut total = 0.0;
    for (_, _, _, s) in tree.leaves() {
        let mv = records[s.idx].market_value_asof(tree.date).unwrap_or(0.0);
        if mv > 0.0 {
            weights.push((s.idx, mv));
            total += mv;
        } else {
            dropped.push(s.clone());
        }
    }
    if weights.is_empty() && !dropped.is_empty() {
        return Err(Error::data(format!(
            "no positive market values at {}; cannot form market-cap weights",
            tree.date
        )));
    }
    for (_, w) in &mut weights {
        *w /= total;
    }
    weights.sort_by_key(|&(idx, _)| idx);
    Ok(WeightVector { date: tree.date, weights, dropped })
}

/// Equal weights over the selected universe.
pub fn ewi_weights(records: &[StockRecord], tree: &HierarchyTree) -> Result<WeightVector> {
    scheme_weights(records, tree, &WeightScheme::ewi())
}

/// Nested equal weights: regions, countries, policy-level industry groups.
pub fn hwi_weights(records: &[StockRecord], tree: &HierarchyTree) -> Result<WeightVector> {
    scheme_weights(records, tree, &WeightScheme::hwi())
}

// ============================================================================
// Rebalance calendar
// ============================================================================

/// Rebalance dates: the first trading date of each calendar quarter on or
/// after `base_date`, plus `base_date` itself (which must be a trading date).
pub fn rebalance_calendar(calendar: &[NaiveDate], base_date: NaiveDate) -> Result<Vec<NaiveDate>> {
    if !calendar.contains(&base_date) {
        return Err(Error::usage(format!("base date {base_date} is not a trading date")));
    }
    let mut out = Vec::new();
    let mut seen_quarter: Option<(i32, u32)> = None;
    for &date in calendar.iter().filter(|&&d| d >= base_date) {
        let quarter = (date.year(), (date.month0() / 3) + 1);
        if seen_quarter != Some(quarter) {
            out.push(date);
            seen_quarter = Some(quarter);
        }
    }
    Ok(out)
}

// ============================================================================
// Backtest
// ============================================================================

/// Backtest configuration. `tc_rate` is the proportional cost per unit of
/// traded value, charged on both the buy and the sell leg.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub scheme: WeightScheme,
    pub base_date: NaiveDate,
    pub initial_value: f64,
    pub tc_rate: f64,
}

impl BacktestConfig {
    pub fn new(scheme: WeightScheme, base_date: NaiveDate) -> Self {
        BacktestConfig { scheme, base_date, initial_value: 100.0, tc_rate: 0.0 }
    }
}

/// Daily index value path.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPath {
    pub scheme_name: String,
    pub tc_rate: f64,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl IndexPath {
    /// Simple returns between consecutive observations.
    pub fn simple_returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    /// Log returns between consecutive observations.
    pub fn log_returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }
}

/// One traded position at a rebalance.
#[derive(Debug, Clone, Serialize)]
pub struct RebalanceEntry {
    pub stock_id: String,
    pub weight: f64,
    pub trade_value: f64,
    pub cost: f64,
}

/// All trades executed at one rebalance date.
#[derive(Debug, Clone, Serialize)]
pub struct RebalanceEvent {
    pub date: NaiveDate,
    pub entries: Vec<RebalanceEntry>,
}

/// Post-cost wealth after moving holdings `held` (by record index) to target
/// weights, paying `tc_rate` per unit traded on both legs. Solves the fixed
/// point v = wealth - tc * Σ_j |w_j v - held_j|.
fn post_cost_wealth(wealth: f64, held: &HashMap<usize, f64>, weights: &WeightVector, tc_rate: f64) -> f64 {
    if tc_rate == 0.0 {
        return wealth;
    }
    let mut v = wealth;
    for _ in 0..200 {
        let mut traded = 0.0;
        for &(idx, w) in &weights.weights {
            traded += (w * v - held.get(&idx).copied().unwrap_or(0.0)).abs();
        }
        for (&idx, &h) in held {
            if weights.get(idx) == 0.0 {
                traded += h;
            }
        }
        let next = wealth - tc_rate * traded;
        if (next - v).abs() <= 1e-13 * wealth.abs().max(1.0) {
            return next;
        }
        v = next;
    }
    v
}

/// Buy-and-hold backtest with quarterly rebalancing.
///
/// Between rebalances holdings are fixed unit counts; the index value is the
/// mark-to-market of those units (last observed price within each stock's
/// life). A stock that dies between rebalances is sold at its final price on
/// the first trading date after its death, with proceeds reinvested in the
/// surviving holdings proportionally to their current values; both the sale
/// and the reinvestment pay transaction costs. With no survivors the
/// proceeds sit in cash until the next rebalance.
pub fn backtest(
    records: &[StockRecord],
    policies: &[CountryPolicy],
    calendar: &[NaiveDate],
    config: &BacktestConfig,
) -> Result<(IndexPath, Vec<RebalanceEvent>)> {
    if config.initial_value <= 0.0 {
        return Err(Error::usage("initial index value must be positive"));
    }
    if !(0.0..1.0).contains(&config.tc_rate) {
        return Err(Error::usage("transaction cost rate must lie in [0, 1)"));
    }
    let rebalances = rebalance_calendar(calendar, config.base_date)?;
    let rebalance_set: std::collections::BTreeSet<NaiveDate> = rebalances.into_iter().collect();

    let mut units: HashMap<usize, f64> = HashMap::new();
    let mut cash = config.initial_value;
    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut log = Vec::new();

    for &date in calendar.iter().filter(|&&d| d >= config.base_date) {
        let is_rebalance = rebalance_set.contains(&date);

        // Holdings that died strictly before this date can no longer be
        // priced; liquidate them at their final price. At a rebalance the
        // fixed-point trade handles them as ordinary sells instead.
        if !is_rebalance {
            let dead: Vec<usize> = units
                .keys()
                .copied()
                .filter(|&idx| records[idx].alive().1 < date)
                .collect();
            if !dead.is_empty() {
                let mut proceeds = 0.0;
                for idx in dead {
                    let u = units.remove(&idx).unwrap();
                    proceeds += u * records[idx].prices.last().unwrap() * (1.0 - config.tc_rate);
                }
                let survivor_value: f64 = units
                    .iter()
                    .map(|(&idx, &u)| u * records[idx].price_asof(date).unwrap())
                    .sum();
                if survivor_value > 0.0 {
                    // Reinvest across survivors in proportion to value; the
                    // buy leg costs tc per unit bought, so value acquired is
                    // proceeds / (1 + tc).
                    let bought = proceeds / (1.0 + config.tc_rate);
                    for (&idx, u) in units.iter_mut() {
                        let p = records[idx].price_asof(date).unwrap();
                        let share = *u * p / survivor_value;
                        *u += bought * share / p;
                    }
                } else {
                    cash += proceeds;
                }
            }
        }

        // Mark to market. A dead holding at a rebalance date is valued at
        // its final price and sold by the rebalance below.
        let mut wealth = cash;
        for (&idx, &u) in &units {
            let p = records[idx]
                .price_asof(date)
                .unwrap_or_else(|| *records[idx].prices.last().unwrap());
            wealth += u * p;
        }

        if is_rebalance {
            let tree = crate::data::build_hierarchy(records, policies, date)?;
            let weights = scheme_weights(records, &tree, &config.scheme)?;
            let held: HashMap<usize, f64> = units
                .iter()
                .map(|(&idx, &u)| {
                    let p = records[idx]
                        .price_asof(date)
                        .unwrap_or_else(|| *records[idx].prices.last().unwrap());
                    (idx, u * p)
                })
                .collect();
            if weights.weights.is_empty() {
                // Nothing to hold: liquidate into cash.
                let traded: f64 = held.values().sum();
                cash = wealth - config.tc_rate * traded;
                units.clear();
                log.push(RebalanceEvent {
                    date,
                    entries: held
                        .iter()
                        .map(|(&idx, &h)| RebalanceEntry {
                            stock_id: records[idx].id.clone(),
                            weight: 0.0,
                            trade_value: h,
                            cost: config.tc_rate * h,
                        })
                        .collect(),
                });
                wealth = cash;
            } else {
                let v_post = post_cost_wealth(wealth, &held, &weights, config.tc_rate);
                let mut entries = Vec::new();
                let mut new_units: HashMap<usize, f64> = HashMap::new();
                for &(idx, w) in &weights.weights {
                    let p = records[idx].price_asof(date).unwrap();
                    let target = w * v_post;
                    let trade = (target - held.get(&idx).copied().unwrap_or(0.0)).abs();
                    new_units.insert(idx, target / p);
                    entries.push(RebalanceEntry {
                        stock_id: records[idx].id.clone(),
                        weight: w,
                        trade_value: trade,
                        cost: config.tc_rate * trade,
                    });
                }
                for (&idx, &h) in &held {
                    if weights.get(idx) == 0.0 {
                        entries.push(RebalanceEntry {
                            stock_id: records[idx].id.clone(),
                            weight: 0.0,
                            trade_value: h,
                            cost: config.tc_rate * h,
                        });
                    }
                }
                entries.sort_by(|a, b| a.stock_id.cmp(&b.stock_id));
                log.push(RebalanceEvent { date, entries });
                units = new_units;
                cash = 0.0;
                wealth = v_post;
            }
        }

        dates.push(date);
        values.push(wealth);
    }

    Ok((
        IndexPath {
            scheme_name: config.scheme.name(),
            tc_rate: config.tc_rate,
            dates,
            values,
        },
        log,
    ))
}

// ============================================================================
// File formats
// ============================================================================

/// Write an index path as CSV: date, value, scheme, tc_rate.
pub fn write_index_path(path: &Path, index: &IndexPath) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["date", "value", "scheme", "tc_rate"])
        .map_err(|e| Error::csv(path, e))?;
    for (date, value) in index.dates.iter().zip(&index.values) {
        w.write_record([
            date.to_string(),
            format!("{value}"),
            index.scheme_name.clone(),
            format!("{}", index.tc_rate),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read an index path CSV written by [`write_index_path`].
pub fn read_index_path(path: &Path) -> Result<IndexPath> {
    #[derive(serde::Deserialize)]
    struct Row {
        date: String,
        value: f64,
        scheme: String,
        tc_rate: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut index: Option<IndexPath> = None;
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row: Row = row.map_err(|e| Error::data(format!("index path row {}: {e}", i + 2)))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::data(format!("index path row {}: bad date: {e}", i + 2)))?;
        match &mut index {
            None => {
                index = Some(IndexPath {
                    scheme_name: row.scheme,
                    tc_rate: row.tc_rate,
                    dates: vec![date],
                    values: vec![row.value],
                })
            }
            Some(ix) => {
                if ix.scheme_name != row.scheme || ix.tc_rate != row.tc_rate {
                    return Err(Error::data(format!(
                        "index path row {}: mixed scheme or cost rate",
                        i + 2
                    )));
                }
                ix.dates.push(date);
                ix.values.push(row.value);
            }
        }
    }
    index.ok_or_else(|| Error::data("index path file is empty"))
}

/// Write the rebalance log: date, stock_id, weight, trade_value, cost.
pub fn write_rebalance_log(path: &Path, events: &[RebalanceEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["date", "stock_id", "weight", "trade_value", "cost"])
        .map_err(|e| Error::csv(path, e))?;
    for event in events {
        for e in &event.entries {
            w.write_record([
                event.date.to_string(),
                e.stock_id.clone(),
                format!("{}", e.weight),
                format!("{}", e.trade_value),
                format!("{}", e.cost),
            ])
            .map_err(|err| Error::csv(path, err))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_hierarchy, Classification, CountryPolicy};
    use approx::assert_relative_eq;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn weekdays(from: &str, n: usize) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut day = d(from);
        while out.len() < n {
            if day.weekday().number_from_monday() <= 5 {
                out.push(day);
            }
            day += chrono::Duration::days(1);
        }
        out
    }

    fn record_on(
        id: &str,
        region: &str,
        country: &str,
        group: &str,
        dates: &[NaiveDate],
        prices: &[f64],
        mv: f64,
    ) -> StockRecord {
        StockRecord {
            id: id.to_string(),
            classification: Classification {
                region: region.to_string(),
                country: country.to_string(),
                supersector: group.to_string(),
                sector: group.to_string(),
                subsector: group.to_string(),
            },
            dates: dates.to_vec(),
            prices: prices.to_vec(),
            market_values: vec![mv; dates.len()],
        }
    }

    fn policy(country: &str, base: &str) -> CountryPolicy {
        CountryPolicy {
            country: country.to_string(),
            base_date: d(base),
            max_stocks: 1000,
            industrial_level: Some(IndustrialLevel::Sector),
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for name in WeightScheme::canonical_names() {
            let scheme = WeightScheme::from_name(name).unwrap();
            assert_eq!(scheme.name(), name);
        }
        assert!(WeightScheme::from_name("XWI").is_err());
    }

    #[test]
    fn equal_weights_over_two_stocks() {
        let cal = weekdays("2000-01-03", 2);
        let records = vec![
            record_on("a", "R", "C", "G", &cal, &[10.0, 11.0], 1.0),
            record_on("b", "R", "C", "G", &cal, &[20.0, 19.0], 2.0),
        ];
        let tree = build_hierarchy(&records, &[policy("C", "2000-01-03")], cal[0]).unwrap();
        let w = ewi_weights(&records, &tree).unwrap();
        assert_eq!(w.weights, vec![(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn market_cap_weights_proportional_and_zero_mv_dropped() {
        let cal = weekdays("2000-01-03", 2);
        let records = vec![
            record_on("a", "R", "C", "G", &cal, &[1.0, 1.0], 2.0),
            record_on("b", "R", "C", "G", &cal, &[1.0, 1.0], 3.0),
            record_on("c", "R", "C", "G", &cal, &[1.0, 1.0], 5.0),
            record_on("z", "R", "C", "G", &cal, &[1.0, 1.0], 0.0),
        ];
        let tree = build_hierarchy(&records, &[policy("C", "2000-01-03")], cal[0]).unwrap();
        let w = mci_weights(&records, &tree).unwrap();
        let weights: Vec<f64> = w.weights.iter().map(|&(_, x)| x).collect();
        assert_relative_eq!(weights[0], 0.2, max_relative = 1e-15);
        assert_relative_eq!(weights[1], 0.3, max_relative = 1e-15);
        assert_relative_eq!(weights[2], 0.5, max_relative = 1e-15);
        assert_eq!(w.dropped.len(), 1);
        assert_eq!(w.dropped[0].id, "z");
    }

    /// Three regions holding 2, 5, and 16 countries: a country's total
    /// weight is 1/(3 * countries-in-its-region).
    #[test]
    fn country_weights_under_nested_equal_weighting() {
        let cal = weekdays("2000-01-03", 2);
        let mut records = Vec::new();
        let mut policies = Vec::new();
        for (region, n_countries) in [("R1", 2), ("R2", 5), ("R3", 16)] {
            for c in 0..n_countries {
                let country = format!("{region}-C{c:02}");
                // Two stocks per country so the leaf split is nontrivial.
                for s in 0..2 {
                    records.push(record_on(
                        &format!("{country}-s{s}"),
                        region,
                        &country,
                        "G",
                        &cal,
                        &[10.0, 10.0],
                        1.0,
                    ));
                }
                policies.push(policy(&country, "2000-01-03"));
            }
        }
        let tree = build_hierarchy(&records, &policies, cal[0]).unwrap();
        let w = hwi_weights(&records, &tree).unwrap();
        let mut by_country: HashMap<&str, f64> = HashMap::new();
        for &(idx, weight) in &w.weights {
            *by_country.entry(records[idx].classification.country.as_str()).or_default() += weight;
        }
        assert_relative_eq!(by_country["R1-C00"], 1.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(by_country["R2-C00"], 1.0 / 15.0, max_relative = 1e-12);
        assert_relative_eq!(by_country["R3-C00"], 1.0 / 48.0, max_relative = 1e-12);
        assert_relative_eq!(w.sum(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn hierarchical_weights_sum_to_one_for_every_scheme() {
        let cal = weekdays("2000-01-03", 2);
        let mut records = Vec::new();
        let mut policies = Vec::new();
        let mut k = 0;
        for (region, countries) in [("R1", ["A", "B"]), ("R2", ["C", "D"])] {
            for country in countries {
                for group in ["g1", "g2", "g3"] {
                    records.push(record_on(
                        &format!("s{k}"),
                        region,
                        country,
                        group,
                        &cal,
                        &[10.0, 10.0],
                        (k + 1) as f64,
                    ));
                    k += 1;
                }
                policies.push(policy(country, "2000-01-03"));
            }
        }
        let tree = build_hierarchy(&records, &policies, cal[0]).unwrap();
        for name in WeightScheme::canonical_names() {
            let scheme = WeightScheme::from_name(name).unwrap();
            let w = scheme_weights(&records, &tree, &scheme).unwrap();
            assert_relative_eq!(w.sum(), 1.0, max_relative = 1e-12);
            assert!(w.weights.iter().all(|&(_, x)| x > 0.0));
        }
    }

    #[test]
    fn quarterly_rebalance_dates_from_weekday_calendar() {
        let cal = weekdays("2000-01-03", 260);
        let reb = rebalance_calendar(&cal, d("2000-02-01")).unwrap();
        assert_eq!(
            reb,
            vec![d("2000-02-01"), d("2000-04-03"), d("2000-07-03"), d("2000-10-02")]
        );
    }

    #[test]
    fn base_date_off_calendar_is_a_usage_error() {
        let cal = weekdays("2000-01-03", 10);
        assert!(rebalance_calendar(&cal, d("2000-01-08")).is_err());
    }

    #[test]
    fn initial_rebalance_charges_cost_on_the_whole_book() {
        let cal = weekdays("2000-01-03", 3);
        let records = vec![
            record_on("a", "R", "C", "G", &cal, &[10.0, 10.0, 10.0], 1.0),
            record_on("b", "R", "C", "G", &cal, &[20.0, 20.0, 20.0], 1.0),
        ];
        let config = BacktestConfig {
            scheme: WeightScheme::ewi(),
            base_date: cal[0],
            initial_value: 100.0,
            tc_rate: 0.001,
        };
        let (path, log) =
            backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
        // v = 100 - tc * v  =>  v = 100 / 1.001
        assert_relative_eq!(path.values[0], 100.0 / 1.001, max_relative = 1e-12);
        let total_cost: f64 = log[0].entries.iter().map(|e| e.cost).sum();
        assert_relative_eq!(total_cost, 100.0 - 100.0 / 1.001, max_relative = 1e-9);
    }

    #[test]
    fn buy_and_hold_between_rebalances_tracks_units() {
        let cal = weekdays("2000-01-03", 5);
        let records = vec![
            record_on("a", "R", "C", "G", &cal, &[10.0, 11.0, 12.0, 11.5, 13.0], 1.0),
            record_on("b", "R", "C", "G", &cal, &[20.0, 19.0, 21.0, 22.0, 20.0], 1.0),
        ];
        let config = BacktestConfig {
            scheme: WeightScheme::ewi(),
            base_date: cal[0],
            initial_value: 100.0,
            tc_rate: 0.0,
        };
        let (path, _) = backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
        // 50 in each stock at the base date: 5 units of a, 2.5 units of b.
        let expected: Vec<f64> = (0..5)
            .map(|t| 5.0 * records[0].prices[t] + 2.5 * records[1].prices[t])
            .collect();
        for (v, e) in path.values.iter().zip(&expected) {
            assert_relative_eq!(v, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn death_redistributes_proceeds_to_survivors() {
        let cal = weekdays("2000-01-03", 5);
        // Stock a dies after the second date; prices elsewhere are flat so
        // every later value change comes from the redistribution.
        let records = vec![
            record_on("a", "R", "C", "G", &cal[..2], &[10.0, 12.0], 1.0),
            record_on("b", "R", "C", "G", &cal, &[20.0; 5], 1.0),
        ];
        let config = BacktestConfig {
            scheme: WeightScheme::ewi(),
            base_date: cal[0],
            initial_value: 100.0,
            tc_rate: 0.0,
        };
        let (path, _) = backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
        // Day 0: 100. Day 1: a gains 20% on half the book -> 110.
        assert_relative_eq!(path.values[1], 110.0, max_relative = 1e-12);
        // Day 2: a's 60 moves into b with zero cost; value is preserved.
        assert_relative_eq!(path.values[2], 110.0, max_relative = 1e-12);
        assert_relative_eq!(path.values[4], 110.0, max_relative = 1e-12);
    }

    #[test]
    fn death_with_costs_loses_both_legs() {
        let cal = weekdays("2000-01-03", 4);
        let tc = 0.001;
        let records = vec![
            record_on("a", "R", "C", "G", &cal[..2], &[10.0, 10.0], 1.0),
            record_on("b", "R", "C", "G", &cal, &[20.0; 4], 1.0),
        ];
        let config = BacktestConfig {
            scheme: WeightScheme::ewi(),
            base_date: cal[0],
            initial_value: 100.0,
            tc_rate: tc,
        };
        let (path, _) = backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
        let v0 = 100.0 / (1.0 + tc);
        let held = v0 / 2.0;
        // Sell leg keeps (1 - tc); the buy leg scales by 1/(1 + tc).
        let expected = held + held * (1.0 - tc) / (1.0 + tc);
        assert_relative_eq!(path.values[2], expected, max_relative = 1e-12);
    }

    #[test]
    fn no_survivors_parks_proceeds_in_cash() {
        let cal = weekdays("2000-01-03", 4);
        let records = vec![record_on("a", "R", "C", "G", &cal[..2], &[10.0, 12.0], 1.0)];
        let config = BacktestConfig {
            scheme: WeightScheme::ewi(),
            base_date: cal[0],
            initial_value: 100.0,
            tc_rate: 0.0,
        };
        let (path, _) = backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
        assert_relative_eq!(path.values[1], 120.0, max_relative = 1e-12);
        // After death the book is all cash and the value freezes.
        assert_relative_eq!(path.values[2], 120.0, max_relative = 1e-12);
        assert_relative_eq!(path.values[3], 120.0, max_relative = 1e-12);
    }

    #[test]
    fn higher_costs_never_help() {
        let cal = weekdays("2000-01-03", 70);
        let prices_a: Vec<f64> = (0..70).map(|t| 10.0 * (1.0 + 0.01 * (t as f64).sin())).collect();
        let prices_b: Vec<f64> = (0..70).map(|t| 20.0 * (1.0 + 0.02 * (t as f64 * 0.7).cos())).collect();
        let records = vec![
            record_on("a", "R", "C", "G", &cal, &prices_a, 1.0),
            record_on("b", "R", "C", "G", &cal, &prices_b, 3.0),
        ];
        let mut finals = Vec::new();
        for tc in [0.0, 0.001, 0.005] {
            let config = BacktestConfig {
                scheme: WeightScheme::ewi(),
                base_date: cal[0],
                initial_value: 100.0,
                tc_rate: tc,
            };
            let (path, _) = backtest(&records, &[policy("C", "2000-01-03")], &cal, &config).unwrap();
            finals.push(*path.values.last().unwrap());
        }
        assert!(finals[0] > finals[1] && finals[1] > finals[2], "{finals:?}");
    }

    #[test]
    fn index_path_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("indexpath.csv");
        let index = IndexPath {
            scheme_name: "HWI".to_string(),
            tc_rate: 0.001,
            dates: weekdays("2000-01-03", 3),
            values: vec![100.0, 101.5, 99.25],
        };
        write_index_path(&file, &index).unwrap();
        let back = read_index_path(&file).unwrap();
        assert_eq!(back, index);
    }
}
