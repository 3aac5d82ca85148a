//! Input-price-growth instruments with a downstream purchase-share
//! exclusion rule.
//!
//! An input code is kept for instrument construction in year `t` only if
//! machinery-sector plants account for at most `tau` of its purchase value.
//! Retained codes feed a per-plant mean log unit-value growth; the nest
//! instrument `Z_t^g` averages those growths over reference plants that
//! produce in nest `g` at `t`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::panel::{InputPurchase, Panel, Sector};

#[derive(Debug, Clone, PartialEq)]
pub struct PurchaseShareRow {
    pub input_code: String,
    pub year: i32,
    pub machinery_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurchaseShareTable {
    pub rows: Vec<PurchaseShareRow>,
    pub pooled: bool,
}

/// Machinery share of purchase value per (input code, year). With
/// `pooled`, the share is computed over all years and repeated for every
/// year the code is purchased.
pub fn compute_purchase_shares(
    purchases: &[InputPurchase],
    sector_tags: &BTreeMap<String, Sector>,
    pooled: bool,
) -> Result<PurchaseShareTable> {
    let untagged: BTreeSet<&str> = purchases
        .iter()
        .filter(|p| !sector_tags.contains_key(&p.plant_id))
        .map(|p| p.plant_id.as_str())
        .collect();
    if !untagged.is_empty() {
        return Err(Error::Validation(format!(
            "purchasing plants without sector tag: {}",
            untagged.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    // (machinery value, total value)
    let mut cells: BTreeMap<(&str, i32), (f64, f64)> = BTreeMap::new();
    for p in purchases {
        let e = cells.entry((&p.input_code, p.year)).or_insert((0.0, 0.0));
        if sector_tags[&p.plant_id] == Sector::Machinery {
            e.0 += p.value;
        }
        e.1 += p.value;
    }
    let rows = if pooled {
        let mut totals: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for (&(c, _), &(m, t)) in &cells {
            let e = totals.entry(c).or_insert((0.0, 0.0));
            e.0 += m;
            e.1 += t;
        }
        cells
            .keys()
            .filter(|(c, _)| totals[c].1 > 0.0)
            .map(|&(c, y)| PurchaseShareRow {
                input_code: c.to_string(),
                year: y,
                machinery_share: totals[c].0 / totals[c].1,
            })
            .collect()
    } else {
        cells
            .iter()
            .filter(|(_, &(_, t))| t > 0.0)
            .map(|(&(c, y), &(m, t))| PurchaseShareRow {
                input_code: c.to_string(),
                year: y,
                machinery_share: m / t,
            })
            .collect()
    };
    Ok(PurchaseShareTable { rows, pooled })
}

/// Input codes retained per year.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetainedCodeSet {
    pub by_year: BTreeMap<i32, BTreeSet<String>>,
}

impl RetainedCodeSet {
    pub fn contains(&self, code: &str, year: i32) -> bool {
        self.by_year.get(&year).is_some_and(|s| s.contains(code))
    }

    pub fn len(&self) -> usize {
        self.by_year.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset(&self, other: &RetainedCodeSet) -> bool {
        self.by_year.iter().all(|(y, codes)| {
            codes.is_empty() || other.by_year.get(y).is_some_and(|o| codes.is_subset(o))
        })
    }
}

pub fn filter_input_codes(table: &PurchaseShareTable, tau: f64) -> Result<RetainedCodeSet> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("threshold tau must lie in [0, 1] (got {tau})")));
    }
    let mut by_year: BTreeMap<i32, BTreeSet<String>> = BTreeMap::new();
    for r in &table.rows {
        if r.machinery_share <= tau {
            by_year.entry(r.year).or_default().insert(r.input_code.clone());
        }
    }
    Ok(RetainedCodeSet { by_year })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferencePlants {
    /// Plants producing exactly one product in the year.
    SingleProduct,
    /// Plants tagged non-machinery.
    NonMachinery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Unweighted,
    /// Codes weighted by current purchase value, plants by their retained
    /// purchase value.
    ValueWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentConfig {
    pub reference: ReferencePlants,
    pub weighting: Weighting,
    pub min_contributors: usize,
    pub pooled_shares: bool,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        InstrumentConfig {
            reference: ReferencePlants::SingleProduct,
            weighting: Weighting::Unweighted,
            min_contributors: 1,
            pooled_shares: false,
        }
    }
}

impl InstrumentConfig {
    pub fn label(&self) -> String {
        format!(
            "reference={:?};weighting={:?};min_contributors={};pooled_shares={}",
            self.reference, self.weighting, self.min_contributors, self.pooled_shares
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentRow {
    pub nest5: String,
    pub year: i32,
    pub z: f64,
    pub n_contributing: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstrumentTable {
    pub rows: Vec<InstrumentRow>,
    index: BTreeMap<(String, i32), usize>,
}

impl InstrumentTable {
    pub fn new(mut rows: Vec<InstrumentRow>) -> Self {
        rows.sort_by(|a, b| (&a.nest5, a.year).cmp(&(&b.nest5, b.year)));
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.nest5.clone(), r.year), i))
            .collect();
        InstrumentTable { rows, index }
    }

    pub fn get(&self, nest5: &str, year: i32) -> Option<f64> {
        self.index
            .get(&(nest5.to_string(), year))
            .map(|&i| self.rows[i].z)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("nest5,year,Z,n_contributing\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.nest5, r.year, r.z, r.n_contributing));
        }
        s
    }
}

fn weighted_mean(terms: &[(f64, f64)], weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Unweighted => terms.iter().map(|t| t.0).sum::<f64>() / terms.len() as f64,
        Weighting::ValueWeighted => {
            let w: f64 = terms.iter().map(|t| t.1).sum();
            terms.iter().map(|t| t.0 * t.1).sum::<f64>() / w
        }
    }
}

pub fn build_price_growth_iv(
    panel: &Panel,
    retained: &RetainedCodeSet,
    config: &InstrumentConfig,
) -> Result<InstrumentTable> {
    if retained.is_empty() {
        return Err(Error::Validation("no input codes retained at this threshold".into()));
    }
    let mut uv: BTreeMap<(&str, i32, &str), (f64, f64)> = BTreeMap::new();
    for p in panel.purchases() {
        uv.insert((&p.plant_id, p.year, &p.input_code), (p.unit_value, p.value));
    }
    // Nests produced by each plant-year.
    let mut nests: BTreeMap<(&str, i32), Vec<&str>> = BTreeMap::new();
    for o in panel.observations() {
        nests.entry((&o.plant_id, o.year)).or_default().push(o.product.nest5());
    }

    // (nest, year) -> per-plant (growth, weight, n_terms)
    let mut cells: BTreeMap<(&str, i32), Vec<(f64, f64, usize)>> = BTreeMap::new();
    for (&(plant, year), plant_nests) in &nests {
        let is_reference = match config.reference {
            ReferencePlants::SingleProduct => plant_nests.len() == 1,
            ReferencePlants::NonMachinery => {
                panel.sector_tags().get(plant) == Some(&Sector::NonMachinery)
            }
        };
        if !is_reference {
            continue;
        }
        let Some(codes) = retained.by_year.get(&year) else {
            continue;
        };
        let mut terms = Vec::new();
        for code in codes {
            let (Some(&(now, value)), Some(&(before, _))) = (
                uv.get(&(plant, year, code.as_str())),
                uv.get(&(plant, year - 1, code.as_str())),
            ) else {
                continue;
            };
            terms.push((now.ln() - before.ln(), value));
        }
        if terms.is_empty() {
            continue;
        }
        let growth = weighted_mean(&terms, config.weighting);
        let weight: f64 = terms.iter().map(|t| t.1).sum();
        for &g in plant_nests {
            cells.entry((g, year)).or_default().push((growth, weight, terms.len()));
        }
    }

    let rows = cells
        .into_iter()
        .filter_map(|((nest, year), plants)| {
            let n: usize = plants.iter().map(|p| p.2).sum();
            if n < config.min_contributors {
                return None;
            }
            let pairs: Vec<(f64, f64)> = plants.iter().map(|p| (p.0, p.1)).collect();
            Some(InstrumentRow {
                nest5: nest.to_string(),
                year,
                z: weighted_mean(&pairs, config.weighting),
                n_contributing: n,
            })
        })
        .collect();
    Ok(InstrumentTable::new(rows))
}

/// Threshold-independent part of the instrument pipeline.
pub fn purchase_shares_for(panel: &Panel, config: &InstrumentConfig) -> Result<PurchaseShareTable> {
    compute_purchase_shares(panel.purchases(), panel.sector_tags(), config.pooled_shares)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{PlantInputTotals, PlantProductObs, ProductCode};

    fn tags(pairs: &[(&str, Sector)]) -> BTreeMap<String, Sector> {
        pairs.iter().map(|(p, s)| (p.to_string(), *s)).collect()
    }

    #[test]
    fn machinery_share_ratio() {
        let purchases = vec![
            InputPurchase::new("m", 2001, "A", 1.0, 30.0),
            InputPurchase::new("o", 2001, "A", 1.0, 70.0),
            InputPurchase::new("o", 2001, "B", 1.0, 70.0),
            InputPurchase::new("m", 2001, "C", 1.0, 5.0),
        ];
        let t = compute_purchase_shares(
            &purchases,
            &tags(&[("m", Sector::Machinery), ("o", Sector::NonMachinery)]),
            false,
        )
        .unwrap();
        let share = |c: &str| t.rows.iter().find(|r| r.input_code == c).unwrap().machinery_share;
        assert_eq!(share("A"), 0.3);
        assert_eq!(share("B"), 0.0);
        assert_eq!(share("C"), 1.0);
    }

    #[test]
    fn threshold_rule_and_boundaries() {
        let table = PurchaseShareTable {
            rows: [("A", 0.1), ("B", 0.35), ("C", 0.9), ("D", 0.0)]
                .iter()
                .map(|(c, s)| PurchaseShareRow {
                    input_code: c.to_string(),
                    year: 2001,
                    machinery_share: *s,
                })
                .collect(),
            pooled: false,
        };
        let at = |tau| {
            filter_input_codes(&table, tau).unwrap().by_year[&2001]
                .iter()
                .cloned()
                .collect::<Vec<_>>()
        };
        assert_eq!(at(0.3), vec!["A", "D"]);
        assert_eq!(at(1.0).len(), 4);
        assert_eq!(at(0.0), vec!["D"]);
        assert!(filter_input_codes(&table, 1.5).is_err());
    }

    fn single_product_panel(uvs: &[(&str, i32, &str, f64)]) -> Panel {
        let mut obs = Vec::new();
        let mut inputs = Vec::new();
        let mut seen = BTreeSet::new();
        for (p, y, _, _) in uvs {
            if seen.insert((p.to_string(), *y)) {
                obs.push(PlantProductObs::new(
                    *p,
                    *y,
                    ProductCode::parse("81111", "0123456789").unwrap(),
                    1.0,
                    1.0,
                ));
                inputs.push(PlantInputTotals {
                    plant_id: p.to_string(),
                    year: *y,
                    labor: 1.0,
                    capital: 1.0,
                    materials: 1.0,
                    sector: Sector::Machinery,
                });
            }
        }
        let purchases = uvs
            .iter()
            .map(|(p, y, c, uv)| InputPurchase::new(*p, *y, *c, 2.0, 2.0 * uv))
            .collect();
        Panel::from_parts(obs, inputs, purchases)
    }

    fn all_retained(panel: &Panel) -> RetainedCodeSet {
        let mut r = RetainedCodeSet::default();
        for p in panel.purchases() {
            r.by_year.entry(p.year).or_default().insert(p.input_code.clone());
        }
        r
    }

    #[test]
    fn single_term_growth() {
        let p = single_product_panel(&[("a", 2001, "X", 10.0), ("a", 2002, "X", 11.0)]);
        let t = build_price_growth_iv(&p, &all_retained(&p), &InstrumentConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!((t.get("81111", 2002).unwrap() - 1.1f64.ln()).abs() < 1e-15);
        assert_eq!(t.rows[0].n_contributing, 1);
    }

    #[test]
    fn mean_over_plants() {
        let e = 0.2f64.exp();
        let p = single_product_panel(&[
            ("a", 2001, "X", 1.0),
            ("a", 2002, "X", 1.0),
            ("b", 2001, "X", 1.0),
            ("b", 2002, "X", e),
        ]);
        let t = build_price_growth_iv(&p, &all_retained(&p), &InstrumentConfig::default()).unwrap();
        assert!((t.get("81111", 2002).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(t.rows[0].n_contributing, 2);
    }

    #[test]
    fn constant_unit_values_give_zero() {
        let p = single_product_panel(&[
            ("a", 2001, "X", 3.0),
            ("a", 2002, "X", 3.0),
            ("a", 2003, "X", 3.0),
            ("a", 2002, "Y", 7.0),
            ("a", 2003, "Y", 7.0),
        ]);
        let t = build_price_growth_iv(&p, &all_retained(&p), &InstrumentConfig::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.z == 0.0));
    }

    #[test]
    fn min_contributors_filters_sparse_cells() {
        let p = single_product_panel(&[("a", 2001, "X", 10.0), ("a", 2002, "X", 11.0)]);
        let cfg = InstrumentConfig {
            min_contributors: 2,
            ..InstrumentConfig::default()
        };
        let t = build_price_growth_iv(&p, &all_retained(&p), &cfg).unwrap();
        assert!(t.rows.is_empty());
    }
}
