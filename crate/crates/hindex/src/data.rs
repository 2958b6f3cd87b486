//! Panel ingestion, validation, and the hierarchical grouping tree.
//!
//! Input files (UTF-8, header row required):
//! - `prices.csv`: stock_id, date (ISO-8601), price, market_value
//! - `classification.csv`: stock_id, region, country, supersector, sector, subsector
//! - `policies.csv`: country, base_date, max_stocks, industrial_level (or `auto`)
//! - `calendar.csv`: date
//!
//! Prices are cum-dividend total-return series in one common currency.
//! Delisted stocks arrive with their last price repeated; the trailing
//! zero-return run is stripped at ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ============================================================================
// Domain types
// ============================================================================

/// Hierarchical classification key of one stock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub region: String,
    pub country: String,
    pub supersector: String,
    pub sector: String,
    pub subsector: String,
}

/// Industrial grouping granularity used as the leaf level within a country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndustrialLevel {
    Supersector,
    Sector,
    Subsector,
}

impl IndustrialLevel {
    pub fn code_of<'a>(&self, c: &'a Classification) -> &'a str {
        match self {
            IndustrialLevel::Supersector => &c.supersector,
            IndustrialLevel::Sector => &c.sector,
            IndustrialLevel::Subsector => &c.subsector,
        }
    }
}

impl std::str::FromStr for IndustrialLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supersector" => Ok(IndustrialLevel::Supersector),
            "sector" => Ok(IndustrialLevel::Sector),
            "subsector" => Ok(IndustrialLevel::Subsector),
            other => Err(Error::data(format!("unknown industrial level: {other:?}"))),
        }
    }
}

/// One stock's validated cum-dividend price and market-value series.
///
/// Invariants: dates strictly increasing and all trading dates; prices > 0;
/// market values ≥ 0; at least two observations; no trailing run of equal
/// prices (beyond the two-observation floor).
#[derive(Debug, Clone)]
pub struct StockRecord {
    pub id: String,
    pub classification: Classification,
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
    pub market_values: Vec<f64>,
}

impl StockRecord {
    /// Alive interval [first_date, last_date], inclusive.
    pub fn alive(&self) -> (NaiveDate, NaiveDate) {
        (self.dates[0], *self.dates.last().unwrap())
    }

    pub fn is_alive(&self, date: NaiveDate) -> bool {
        let (first, last) = self.alive();
        first <= date && date <= last
    }

    /// Last observed price on or before `date`; None outside the alive range.
    pub fn price_asof(&self, date: NaiveDate) -> Option<f64> {
        if !self.is_alive(date) {
            return None;
        }
        let idx = self.dates.partition_point(|d| *d <= date);
        Some(self.prices[idx - 1])
    }

    /// Last observed market value on or before `date`; None outside alive.
    pub fn market_value_asof(&self, date: NaiveDate) -> Option<f64> {
        if !self.is_alive(date) {
            return None;
        }
        let idx = self.dates.partition_point(|d| *d <= date);
        Some(self.market_values[idx - 1])
    }
}

/// Per-country participation policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountryPolicy {
    pub country: String,
    pub base_date: NaiveDate,
    pub max_stocks: usize,
    /// None means auto: derive from the available stock count at each date.
    pub industrial_level: Option<IndustrialLevel>,
}

/// Industrial grouping level implied by a country's available stock count.
///
/// More than 900 available stocks resolve to the finest grouping
/// (subsector), 80 to 900 to sector, fewer than 80 to supersector.
pub fn classify_country(available_count: usize) -> IndustrialLevel {
    if available_count > 900 {
        IndustrialLevel::Subsector
    } else if available_count >= 80 {
        IndustrialLevel::Sector
    } else {
        IndustrialLevel::Supersector
    }
}

// ============================================================================
// Hierarchy tree
// ============================================================================

/// Reference to a stock: index into the ingested record slice plus its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StockRef {
    pub idx: usize,
    pub id: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupNode {
    pub code: String,
    pub members: Vec<StockRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountryNode {
    pub code: String,
    pub level: IndustrialLevel,
    pub groups: Vec<GroupNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionNode {
    pub code: String,
    pub countries: Vec<CountryNode>,
}

/// The nested grouping (region → country → industrial group → stock) at one
/// trading date. Node order is sorted by code, member order by stock id, so
/// identical inputs serialize byte-identically.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyTree {
    pub date: NaiveDate,
    pub regions: Vec<RegionNode>,
}

impl HierarchyTree {
    /// Number of regions M_t.
    pub fn m(&self) -> usize {
        self.regions.len()
    }

    /// Total universe size N_t as the quadruple sum over the tree:
    /// N_t = Σ_{j1} Σ_{j2} Σ_{j3} M^{j1,j2,j3}.
    pub fn n_t(&self) -> usize {
        let mut n = 0;
        for region in &self.regions {
            for country in &region.countries {
                for group in &country.groups {
                    n += group.members.len();
                }
            }
        }
        n
    }

    /// Iterate leaf members with their path (region, country, group) codes.
    pub fn leaves(&self) -> impl Iterator<Item = (&RegionNode, &CountryNode, &GroupNode, &StockRef)> {
        self.regions.iter().flat_map(|r| {
            r.countries.iter().flat_map(move |c| {
                c.groups
                    .iter()
                    .flat_map(move |g| g.members.iter().map(move |s| (r, c, g, s)))
            })
        })
    }

    /// All member indices in tree order.
    pub fn member_indices(&self) -> Vec<usize> {
        self.leaves().map(|(_, _, _, s)| s.idx).collect()
    }

    /// Canonical JSON serialization (stable field and node order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialization cannot fail")
    }
}

/// Selected alive stocks at `date`, grouped per the policies.
///
/// Selection per country: stocks alive at `date` whose country participates
/// (base_date ≤ date), ranked by market value descending with ties broken by
/// stock id ascending, capped at the policy's max_stocks. The leaf grouping
/// level is the policy's industrial_level, or derived from the available
/// count when the policy says auto.
pub fn build_hierarchy(
    records: &[StockRecord],
    policies: &[CountryPolicy],
    date: NaiveDate,
) -> Result<HierarchyTree> {
    let policy_by_country: HashMap<&str, &CountryPolicy> =
        policies.iter().map(|p| (p.country.as_str(), p)).collect();

    // Alive candidates per country, with region consistency checks.
    let mut by_country: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut region_of_country: HashMap<&str, &str> = HashMap::new();
    for (idx, rec) in records.iter().enumerate() {
        if !rec.is_alive(date) {
            continue;
        }
        let country = rec.classification.country.as_str();
        let policy = policy_by_country.get(country).ok_or_else(|| {
            Error::data(format!(
                "stock {:?}: no policy for country {:?}",
                rec.id, country
            ))
        })?;
        if date < policy.base_date {
            continue;
        }
        match region_of_country.entry(country) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(rec.classification.region.as_str());
            }
            std::collections::hash_map::Entry::Occupied(e) => {
                if *e.get() != rec.classification.region.as_str() {
                    return Err(Error::data(format!(
                        "stock {:?}: country {:?} claimed by regions {:?} and {:?}",
                        rec.id,
                        country,
                        e.get(),
                        rec.classification.region
                    )));
                }
            }
        }
        by_country.entry(country).or_default().push(idx);
    }

    // Top-K selection by market value, then leaf grouping per policy level.
    let mut regions: BTreeMap<&str, BTreeMap<&str, (IndustrialLevel, BTreeMap<String, Vec<StockRef>>)>> =
        BTreeMap::new();
    for (country, mut candidates) in by_country {
        let policy = policy_by_country[country];
        let available = candidates.len();
        let level = policy
            .industrial_level
            .unwrap_or_else(|| classify_country(available));

        candidates.sort_by(|&a, &b| {
            let mv_a = records[a].market_value_asof(date).unwrap_or(0.0);
            let mv_b = records[b].market_value_asof(date).unwrap_or(0.0);
            mv_b.partial_cmp(&mv_a)
                .unwrap()
                .then_with(|| records[a].id.cmp(&records[b].id))
        });
        candidates.truncate(policy.max_stocks);

        let region = region_of_country[country];
        let mut groups: BTreeMap<String, Vec<StockRef>> = BTreeMap::new();
        for idx in candidates {
            let rec = &records[idx];
            let code = level.code_of(&rec.classification).to_string();
            groups.entry(code).or_default().push(StockRef {
                idx,
                id: rec.id.clone(),
            });
        }
        for members in groups.values_mut() {
            members.sort_by(|a, b| a.id.cmp(&b.id));
        }
        regions
            .entry(region)
            .or_default()
            .insert(country, (level, groups));
    }

    let regions = regions
        .into_iter()
        .map(|(region_code, countries)| RegionNode {
            code: region_code.to_string(),
            countries: countries
                .into_iter()
                .map(|(country_code, (level, groups))| CountryNode {
                    code: country_code.to_string(),
                    level,
                    groups: groups
                        .into_iter()
                        .map(|(code, members)| GroupNode { code, members })
                        .collect(),
                })
                .collect(),
        })
        .collect();

    Ok(HierarchyTree { date, regions })
}

// ============================================================================
// Ingestion
// ============================================================================

/// Why a stock was rejected or dropped during ingestion.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedStock {
    pub id: String,
    pub reason: String,
}

/// Summary of one ingestion pass.
#[derive(Debug, Clone, Serialize, Default)]
pub struct IngestReport {
    pub rows_read: usize,
    pub records_accepted: usize,
    pub rejected: Vec<RejectedStock>,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::data(format!("bad date {s:?}: {e}")))
}

/// Strip the trailing run of equal prices, keeping its first element, but
/// never shrinking the series below two observations. A delisted stock's
/// repeated final price contributes artificial zero returns; this removes
/// them.
fn strip_trailing_repeats(dates: &mut Vec<NaiveDate>, prices: &mut Vec<f64>, mvs: &mut Vec<f64>) {
    while prices.len() > 2 && prices[prices.len() - 1] == prices[prices.len() - 2] {
        prices.pop();
        dates.pop();
        mvs.pop();
    }
}

/// Read and validate the stock panel.
///
/// Malformed rows (wrong arity, unparseable fields) fail the whole ingestion
/// with the offending row number. Semantic violations (non-positive price,
/// negative market value, date off the trading calendar, duplicate date)
/// reject the affected stock, which is listed in the report, as are stocks
/// with fewer than two valid prices and stocks missing a classification.
pub fn ingest_panel(
    prices_path: &Path,
    classification_path: &Path,
    calendar: &[NaiveDate],
) -> Result<(Vec<StockRecord>, IngestReport)> {
    let classifications = load_classifications(classification_path)?;
    let calendar_set: BTreeSet<NaiveDate> = calendar.iter().copied().collect();

    #[derive(serde::Deserialize)]
    struct PriceRow {
        stock_id: String,
        date: String,
        price: f64,
        market_value: f64,
    }

    let mut reader = csv::Reader::from_path(prices_path)
        .map_err(|e| Error::csv(prices_path, e))?;
    let mut series: BTreeMap<String, Vec<(NaiveDate, f64, f64)>> = BTreeMap::new();
    let mut report = IngestReport::default();
    let mut bad: BTreeMap<String, String> = BTreeMap::new();

    for (i, row) in reader.deserialize::<PriceRow>().enumerate() {
        let row_no = i + 2; // header is row 1
        let row = row.map_err(|e| Error::data(format!("prices row {row_no}: {e}")))?;
        report.rows_read += 1;
        if bad.contains_key(&row.stock_id) {
            continue;
        }
        let date = match parse_date(&row.date) {
            Ok(d) => d,
            Err(e) => return Err(Error::data(format!("prices row {row_no}: {e}"))),
        };
        let reason = if !row.price.is_finite() || row.price <= 0.0 {
            Some(format!("non-positive price {} on {date}", row.price))
        } else if !row.market_value.is_finite() || row.market_value < 0.0 {
            Some(format!("negative market value {} on {date}", row.market_value))
        } else if !calendar_set.contains(&date) {
            Some(format!("date {date} not on the trading calendar"))
        } else {
            None
        };
        if let Some(reason) = reason {
            bad.insert(row.stock_id.clone(), reason);
            series.remove(&row.stock_id);
            continue;
        }
        series
            .entry(row.stock_id)
            .or_default()
            .push((date, row.price, row.market_value));
    }

    let mut records = Vec::new();
    for (id, mut obs) in series {
        obs.sort_by_key(|(d, _, _)| *d);
        if obs.windows(2).any(|w| w[0].0 == w[1].0) {
            bad.insert(id, "duplicate date".to_string());
            continue;
        }
        let classification = match classifications.get(&id) {
            Some(c) => c.clone(),
            None => {
                bad.insert(id, "no classification".to_string());
                continue;
            }
        };
        let mut dates: Vec<NaiveDate> = obs.iter().map(|o| o.0).collect();
        let mut prices: Vec<f64> = obs.iter().map(|o| o.1).collect();
        let mut mvs: Vec<f64> = obs.iter().map(|o| o.2).collect();
        strip_trailing_repeats(&mut dates, &mut prices, &mut mvs);
        if prices.len() < 2 {
            bad.insert(id, format!("fewer than 2 valid prices ({})", prices.len()));
            continue;
        }
        records.push(StockRecord {
            id,
            classification,
            dates,
            prices,
            market_values: mvs,
        });
    }

    report.records_accepted = records.len();
    report.rejected = bad
        .into_iter()
        .map(|(id, reason)| RejectedStock { id, reason })
        .collect();
    Ok((records, report))
}

fn load_classifications(path: &Path) -> Result<HashMap<String, Classification>> {
    #[derive(serde::Deserialize)]
    struct Row {
        stock_id: String,
        region: String,
        country: String,
        supersector: String,
        sector: String,
        subsector: String,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row: Row = row.map_err(|e| Error::data(format!("classification row {}: {e}", i + 2)))?;
        out.insert(
            row.stock_id,
            Classification {
                region: row.region,
                country: row.country,
                supersector: row.supersector,
                sector: row.sector,
                subsector: row.subsector,
            },
        );
    }
    Ok(out)
}

/// Load the trading calendar; dates must be strictly increasing.
pub fn load_calendar(path: &Path) -> Result<Vec<NaiveDate>> {
    #[derive(serde::Deserialize)]
    struct Row {
        date: String,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row: Row = row.map_err(|e| Error::data(format!("calendar row {}: {e}", i + 2)))?;
        out.push(parse_date(&row.date)?);
    }
    if out.is_empty() {
        return Err(Error::data("calendar is empty"));
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::data("calendar dates must be strictly increasing"));
    }
    Ok(out)
}

/// Load per-country policies; `industrial_level` accepts `auto`.
pub fn load_policies(path: &Path) -> Result<Vec<CountryPolicy>> {
    #[derive(serde::Deserialize)]
    struct Row {
        country: String,
        base_date: String,
        max_stocks: usize,
        industrial_level: String,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row: Row = row.map_err(|e| Error::data(format!("policies row {}: {e}", i + 2)))?;
        let industrial_level = match row.industrial_level.as_str() {
            "auto" => None,
            other => Some(other.parse()?),
        };
        out.push(CountryPolicy {
            country: row.country,
            base_date: parse_date(&row.base_date)?,
            max_stocks: row.max_stocks,
            industrial_level,
        });
    }
    Ok(out)
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn classification(region: &str, country: &str, group: &str) -> Classification {
        Classification {
            region: region.to_string(),
            country: country.to_string(),
            supersector: group.to_string(),
            sector: group.to_string(),
            subsector: group.to_string(),
        }
    }

    fn record(id: &str, region: &str, country: &str, group: &str, mvs: &[f64]) -> StockRecord {
        let dates: Vec<NaiveDate> = (0..mvs.len())
            .map(|i| d("2000-01-03") + chrono::Duration::days(i as i64))
            .collect();
        StockRecord {
            id: id.to_string(),
            classification: classification(region, country, group),
            prices: vec![10.0; mvs.len()],
            market_values: mvs.to_vec(),
            dates,
        }
    }

    fn policy(country: &str, max_stocks: usize) -> CountryPolicy {
        CountryPolicy {
            country: country.to_string(),
            base_date: d("2000-01-03"),
            max_stocks,
            industrial_level: Some(IndustrialLevel::Sector),
        }
    }

    #[test]
    fn country_classification_thresholds() {
        assert_eq!(classify_country(998), IndustrialLevel::Subsector);
        assert_eq!(classify_country(901), IndustrialLevel::Subsector);
        assert_eq!(classify_country(900), IndustrialLevel::Sector);
        assert_eq!(classify_country(245), IndustrialLevel::Sector);
        assert_eq!(classify_country(80), IndustrialLevel::Sector);
        assert_eq!(classify_country(79), IndustrialLevel::Supersector);
        assert_eq!(classify_country(50), IndustrialLevel::Supersector);
        assert_eq!(classify_country(0), IndustrialLevel::Supersector);
    }

    #[test]
    fn trailing_repeat_run_stripped_to_floor_of_two() {
        let mut dates = vec![d("2000-01-03"), d("2000-01-04"), d("2000-01-05")];
        let mut prices = vec![10.0, 10.0, 10.0];
        let mut mvs = vec![1.0, 1.0, 1.0];
        strip_trailing_repeats(&mut dates, &mut prices, &mut mvs);
        assert_eq!(prices, vec![10.0, 10.0]);
        assert_eq!(dates.len(), 2);
    }

    #[test]
    fn trailing_repeat_run_after_last_change_removed() {
        let mut dates: Vec<NaiveDate> = (0..5)
            .map(|i| d("2000-01-03") + chrono::Duration::days(i))
            .collect();
        let mut prices = vec![5.0, 8.0, 10.0, 10.0, 10.0];
        let mut mvs = vec![1.0; 5];
        strip_trailing_repeats(&mut dates, &mut prices, &mut mvs);
        assert_eq!(prices, vec![5.0, 8.0, 10.0]);
    }

    #[test]
    fn interior_repeats_are_kept() {
        let mut dates: Vec<NaiveDate> = (0..4)
            .map(|i| d("2000-01-03") + chrono::Duration::days(i))
            .collect();
        let mut prices = vec![10.0, 10.0, 12.0, 11.0];
        let mut mvs = vec![1.0; 4];
        strip_trailing_repeats(&mut dates, &mut prices, &mut mvs);
        assert_eq!(prices, vec![10.0, 10.0, 12.0, 11.0]);
    }

    #[test]
    fn asof_lookup_carries_last_observation_forward() {
        let rec = StockRecord {
            id: "a".into(),
            classification: classification("R", "C", "G"),
            dates: vec![d("2000-01-03"), d("2000-01-05")],
            prices: vec![10.0, 12.0],
            market_values: vec![100.0, 120.0],
        };
        assert_eq!(rec.price_asof(d("2000-01-03")), Some(10.0));
        assert_eq!(rec.price_asof(d("2000-01-04")), Some(10.0));
        assert_eq!(rec.price_asof(d("2000-01-05")), Some(12.0));
        assert_eq!(rec.price_asof(d("2000-01-02")), None);
        assert_eq!(rec.price_asof(d("2000-01-06")), None, "dead after last date");
    }

    #[test]
    fn ties_in_market_value_break_by_id_ascending() {
        let records = vec![
            record("a", "R", "C", "G", &[5.0, 5.0]),
            record("b", "R", "C", "G", &[9.0, 9.0]),
            record("c", "R", "C", "G", &[9.0, 9.0]),
        ];
        let tree = build_hierarchy(&records, &[policy("C", 2)], d("2000-01-03")).unwrap();
        let ids: Vec<&str> = tree.leaves().map(|(_, _, _, s)| s.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
    }

    #[test]
    fn two_regions_two_stocks_each() {
        let records = vec![
            record("a", "R1", "C1", "G", &[1.0, 1.0]),
            record("b", "R1", "C1", "G", &[2.0, 2.0]),
            record("c", "R2", "C2", "G", &[3.0, 3.0]),
            record("d", "R2", "C2", "G", &[4.0, 4.0]),
        ];
        let policies = vec![policy("C1", 10), policy("C2", 10)];
        let tree = build_hierarchy(&records, &policies, d("2000-01-03")).unwrap();
        assert_eq!(tree.m(), 2);
        assert_eq!(tree.n_t(), 4);
        for region in &tree.regions {
            assert_eq!(region.countries.len(), 1);
            assert_eq!(region.countries[0].groups[0].members.len(), 2);
        }
    }

    #[test]
    fn partition_property_no_duplication_no_omission() {
        let records = vec![
            record("a", "R1", "C1", "G1", &[1.0, 1.0]),
            record("b", "R1", "C1", "G2", &[2.0, 2.0]),
            record("c", "R1", "C2", "G1", &[3.0, 3.0]),
            record("d", "R2", "C3", "G1", &[4.0, 4.0]),
        ];
        let policies = vec![policy("C1", 10), policy("C2", 10), policy("C3", 10)];
        let tree = build_hierarchy(&records, &policies, d("2000-01-03")).unwrap();
        let mut members = tree.member_indices();
        members.sort_unstable();
        assert_eq!(members, vec![0, 1, 2, 3]);
        assert_eq!(tree.n_t(), 4);
    }

    #[test]
    fn raising_max_stocks_never_drops_a_selected_stock() {
        let records = vec![
            record("a", "R", "C", "G", &[5.0, 5.0]),
            record("b", "R", "C", "G", &[9.0, 9.0]),
            record("c", "R", "C", "G", &[7.0, 7.0]),
        ];
        let small = build_hierarchy(&records, &[policy("C", 2)], d("2000-01-03")).unwrap();
        let large = build_hierarchy(&records, &[policy("C", 3)], d("2000-01-03")).unwrap();
        let small_ids: BTreeSet<String> =
            small.leaves().map(|(_, _, _, s)| s.id.clone()).collect();
        let large_ids: BTreeSet<String> =
            large.leaves().map(|(_, _, _, s)| s.id.clone()).collect();
        assert!(small_ids.is_subset(&large_ids));
    }

    #[test]
    fn stocks_before_country_base_date_are_excluded() {
        let records = vec![record("a", "R", "C", "G", &[1.0, 1.0, 1.0, 1.0])];
        let mut late = policy("C", 10);
        late.base_date = d("2000-01-05");
        let tree = build_hierarchy(&records, &[late.clone()], d("2000-01-04")).unwrap();
        assert_eq!(tree.n_t(), 0);
        let tree = build_hierarchy(&records, &[late], d("2000-01-05")).unwrap();
        assert_eq!(tree.n_t(), 1);
    }

    #[test]
    fn missing_country_policy_is_a_loud_error() {
        let records = vec![record("a", "R", "C", "G", &[1.0, 1.0])];
        let err = build_hierarchy(&records, &[], d("2000-01-03")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"a\"") && msg.contains("\"C\""), "{msg}");
    }

    #[test]
    fn auto_policy_uses_available_count() {
        // 3 stocks available: below 80 → supersector grouping.
        let records = vec![
            record("a", "R", "C", "G1", &[1.0, 1.0]),
            record("b", "R", "C", "G1", &[2.0, 2.0]),
            record("c", "R", "C", "G2", &[3.0, 3.0]),
        ];
        let auto = CountryPolicy {
            country: "C".into(),
            base_date: d("2000-01-03"),
            max_stocks: 10,
            industrial_level: None,
        };
        let tree = build_hierarchy(&records, &[auto], d("2000-01-03")).unwrap();
        assert_eq!(tree.regions[0].countries[0].level, IndustrialLevel::Supersector);
    }

    #[test]
    fn hierarchy_serialization_is_deterministic() {
        let records = vec![
            record("b", "R1", "C1", "G2", &[2.0, 2.0]),
            record("a", "R1", "C1", "G1", &[1.0, 1.0]),
            record("c", "R2", "C2", "G1", &[3.0, 3.0]),
        ];
        let policies = vec![policy("C1", 10), policy("C2", 10)];
        let t1 = build_hierarchy(&records, &policies, d("2000-01-03")).unwrap();
        let t2 = build_hierarchy(&records, &policies, d("2000-01-03")).unwrap();
        assert_eq!(t1.canonical_json(), t2.canonical_json());
    }

    #[test]
    fn ingest_strips_drops_and_reports() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let prices = dir.path().join("prices.csv");
        let classes = dir.path().join("classification.csv");
        let mut f = std::fs::File::create(&prices).unwrap();
        writeln!(f, "stock_id,date,price,market_value").unwrap();
        // "a": trailing repeat pair stripped to floor of two.
        writeln!(f, "a,2000-01-03,10,100").unwrap();
        writeln!(f, "a,2000-01-04,10,100").unwrap();
        writeln!(f, "a,2000-01-05,10,100").unwrap();
        // "b": single price row → dropped and reported.
        writeln!(f, "b,2000-01-03,5,50").unwrap();
        // "c": healthy two-point series.
        writeln!(f, "c,2000-01-03,20,200").unwrap();
        writeln!(f, "c,2000-01-04,22,200").unwrap();
        drop(f);
        let mut f = std::fs::File::create(&classes).unwrap();
        writeln!(f, "stock_id,region,country,supersector,sector,subsector").unwrap();
        for id in ["a", "b", "c"] {
            writeln!(f, "{id},R,C,S,S,S").unwrap();
        }
        drop(f);

        let calendar: Vec<NaiveDate> = (0..5)
            .map(|i| d("2000-01-03") + chrono::Duration::days(i))
            .collect();
        let (records, report) = ingest_panel(&prices, &classes, &calendar).unwrap();
        assert_eq!(records.len(), 2);
        let a = records.iter().find(|r| r.id == "a").unwrap();
        assert_eq!(a.prices, vec![10.0, 10.0]);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].id, "b");
        assert!(report.rejected[0].reason.contains("fewer than 2"));
    }

    #[test]
    fn ingest_rejects_nonpositive_price_at_record_level() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let prices = dir.path().join("prices.csv");
        let classes = dir.path().join("classification.csv");
        let mut f = std::fs::File::create(&prices).unwrap();
        writeln!(f, "stock_id,date,price,market_value").unwrap();
        writeln!(f, "a,2000-01-03,10,100").unwrap();
        writeln!(f, "a,2000-01-04,-1,100").unwrap();
        writeln!(f, "c,2000-01-03,20,200").unwrap();
        writeln!(f, "c,2000-01-04,22,200").unwrap();
        drop(f);
        let mut f = std::fs::File::create(&classes).unwrap();
        writeln!(f, "stock_id,region,country,supersector,sector,subsector").unwrap();
        writeln!(f, "a,R,C,S,S,S").unwrap();
        writeln!(f, "c,R,C,S,S,S").unwrap();
        drop(f);
        let calendar: Vec<NaiveDate> = (0..3)
            .map(|i| d("2000-01-03") + chrono::Duration::days(i))
            .collect();
        let (records, report) = ingest_panel(&prices, &classes, &calendar).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].id, "c");
        assert!(report.rejected.iter().any(|r| r.id == "a"));
    }

    #[test]
    fn ingest_fails_loudly_on_malformed_row() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let prices = dir.path().join("prices.csv");
        let classes = dir.path().join("classification.csv");
        let mut f = std::fs::File::create(&prices).unwrap();
        writeln!(f, "stock_id,date,price,market_value").unwrap();
        writeln!(f, "a,2000-01-03,10,100").unwrap();
        writeln!(f, "a,not-a-date,11,100").unwrap();
        drop(f);
        let mut f = std::fs::File::create(&classes).unwrap();
        writeln!(f, "stock_id,region,country,supersector,sector,subsector").unwrap();
        writeln!(f, "a,R,C,S,S,S").unwrap();
        drop(f);
        let calendar = vec![d("2000-01-03"), d("2000-01-04")];
        let err = ingest_panel(&prices, &classes, &calendar).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }
}
