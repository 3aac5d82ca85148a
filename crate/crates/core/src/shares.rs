//! Log revenue shares for the nested-logit demand equation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::{read_csv, Panel, ProductCode};

pub const MARKET_SIZE_FILE: &str = "market_size.csv";

/// How the market size `I_h,t` (inside plus outside revenue) is formed.
#[derive(Debug, Clone, PartialEq)]
pub enum MarketSizeRule {
    /// `I = kappa * inside revenue`; requires `kappa > 1`.
    Multiplier(f64),
    /// User-supplied size per (market3, year).
    Explicit(BTreeMap<(String, i32), f64>),
    /// Per-(market3, year) multiplier of inside revenue. Used for resampled
    /// panels, whose inside revenue no longer matches explicit sizes.
    Relative(BTreeMap<(String, i32), f64>),
}

impl Default for MarketSizeRule {
    fn default() -> Self {
        MarketSizeRule::Multiplier(2.0)
    }
}

impl MarketSizeRule {
    /// Load `market_size.csv` (`market3,year,market_size`).
    pub fn load_explicit(path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (line, f) in read_csv(path, &["market3", "year", "market_size"])? {
            let year: i32 = f[1].parse().map_err(|_| Error::Schema {
                file: MARKET_SIZE_FILE.into(),
                column: "year".into(),
                problem: format!("has unparseable value on line {line}"),
            })?;
            let size: f64 = f[2].parse().map_err(|_| Error::Schema {
                file: MARKET_SIZE_FILE.into(),
                column: "market_size".into(),
                problem: format!("has unparseable value on line {line}"),
            })?;
            map.insert((f[0].clone(), year), size);
        }
        Ok(MarketSizeRule::Explicit(map))
    }

    pub fn label(&self) -> String {
        match self {
            MarketSizeRule::Multiplier(k) => format!("multiplier(kappa={k})"),
            MarketSizeRule::Explicit(_) => "explicit(market_size column)".to_string(),
            MarketSizeRule::Relative(_) => "relative(explicit size / inside revenue)".to_string(),
        }
    }

    /// Express the rule as multipliers of `panel`'s inside revenue.
    /// A multiplier rule is returned unchanged.
    pub fn relative_to(&self, panel: &Panel) -> Result<Self> {
        let MarketSizeRule::Explicit(map) = self else {
            return Ok(self.clone());
        };
        let mut inside: BTreeMap<(String, i32), f64> = BTreeMap::new();
        for o in panel.observations() {
            *inside.entry((o.product.market3().to_string(), o.year)).or_default() += o.revenue;
        }
        let mut out = BTreeMap::new();
        for (key, rev) in inside {
            let size = *map
                .get(&key)
                .ok_or_else(|| Error::Config(format!("no market size supplied for market {} year {}", key.0, key.1)))?;
            out.insert(key, size / rev);
        }
        Ok(MarketSizeRule::Relative(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    /// `ln(R_j / I_h)`
    pub rs_j: f64,
    /// `ln(R_j / Lambda_g)`
    pub rs_within: f64,
    /// `ln(R_0 / I_h)`
    pub rs_0: f64,
    pub log_price: f64,
    pub revenue: f64,
    pub market_size: f64,
    pub nest_revenue: f64,
}

impl ShareRow {
    pub fn share(&self) -> f64 {
        self.rs_j.exp()
    }

    pub fn share_within(&self) -> f64 {
        self.rs_within.exp()
    }

    pub fn share_outside(&self) -> f64 {
        self.rs_0.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareTable {
    pub rows: Vec<ShareRow>,
    pub rule: String,
}

impl ShareTable {
    /// Row indices grouped by (market3, year), in row order.
    pub fn by_market(&self) -> BTreeMap<(String, i32), Vec<usize>> {
        let mut out: BTreeMap<(String, i32), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.entry((r.product.market3().to_string(), r.year))
                .or_default()
                .push(i);
        }
        out
    }
}

pub fn compute_revenue_shares(panel: &Panel, rule: &MarketSizeRule) -> Result<ShareTable> {
    if let MarketSizeRule::Multiplier(k) = rule {
        if !(*k > 1.0) {
            return Err(Error::Config(format!(
                "market size multiplier kappa must exceed 1 (got {k}); outside share would be non-positive"
            )));
        }
    }
    let mut inside: BTreeMap<(&str, i32), f64> = BTreeMap::new();
    let mut nest: BTreeMap<(&str, i32), f64> = BTreeMap::new();
    for o in panel.observations() {
        *inside.entry((o.product.market3(), o.year)).or_default() += o.revenue;
        *nest.entry((o.product.nest5(), o.year)).or_default() += o.revenue;
    }
    let mut sizes: BTreeMap<(&str, i32), f64> = BTreeMap::new();
    for (&(m, y), &rev) in &inside {
        if !(rev > 0.0) {
            return Err(Error::Validation(format!("market {m} year {y} has no inside revenue")));
        }
        let size = match rule {
            MarketSizeRule::Multiplier(k) => k * rev,
            MarketSizeRule::Explicit(map) => {
                let s = *map.get(&(m.to_string(), y)).ok_or_else(|| {
                    Error::Config(format!("no market size supplied for market {m} year {y}"))
                })?;
                if !(s > rev) {
                    return Err(Error::Config(format!(
                        "market size {s} for market {m} year {y} does not exceed inside revenue {rev}"
                    )));
                }
                s
            }
            MarketSizeRule::Relative(map) => {
                let k = *map.get(&(m.to_string(), y)).ok_or_else(|| {
                    Error::Config(format!("no market size multiplier for market {m} year {y}"))
                })?;
                if !(k > 1.0) {
                    return Err(Error::Config(format!(
                        "market size multiplier {k} for market {m} year {y} must exceed 1"
                    )));
                }
                k * rev
            }
        };
        sizes.insert((m, y), size);
    }

    let mut rows: Vec<ShareRow> = panel
        .observations()
        .iter()
        .map(|o| {
            let key = (o.product.market3(), o.year);
            let size = sizes[&key];
            let outside = size - inside[&key];
            let lambda = nest[&(o.product.nest5(), o.year)];
            ShareRow {
                plant_id: o.plant_id.clone(),
                year: o.year,
                product: o.product.clone(),
                rs_j: (o.revenue / size).ln(),
                rs_within: (o.revenue / lambda).ln(),
                rs_0: (outside / size).ln(),
                log_price: o.unit_price.ln(),
                revenue: o.revenue,
                market_size: size,
                nest_revenue: lambda,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.product.market3(), a.year, &a.plant_id, &a.product).cmp(&(
            b.product.market3(),
            b.year,
            &b.plant_id,
            &b.product,
        ))
    });
    Ok(ShareTable {
        rows,
        rule: rule.label(),
    })
}
