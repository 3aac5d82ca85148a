mod common;

use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;

use prodloom::instruments::{
    build_price_growth_iv, compute_purchase_shares, filter_input_codes, purchase_shares_for, InstrumentConfig,
};
use prodloom::panel::{
    apply_concordance, load_panel_dir, validate_panel, Concordance, IngestConfig, InputPurchase, Panel,
    PlantInputTotals, PlantProductObs, ProductCode, Sector,
};
use prodloom::shares::{compute_revenue_shares, MarketSizeRule};
use prodloom::Error;

use common::*;

fn write_dir(outputs: &str, inputs: &str, purchases: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("outputs.csv"), outputs).unwrap();
    fs::write(dir.path().join("inputs.csv"), inputs).unwrap();
    fs::write(dir.path().join("purchases.csv"), purchases).unwrap();
    dir
}

const INPUTS: &str = "plant_id,year,labor,capital,materials,sector\np1,2003,1,1,1,machinery\np2,2003,1,1,1,machinery\n";
const PURCHASES: &str = "plant_id,year,input_code,quantity,value\np1,2003,I1,1,2\n";

#[test]
fn three_row_file_gives_three_observations() {
    let dir = write_dir(
        "plant_id,year,product_code,quantity,revenue\np1,2003,81111,1,2\np1,2003,81112,2,2\np2,2003,81111,3,9\n",
        INPUTS,
        PURCHASES,
    );
    let ing = load_panel_dir(dir.path(), &IngestConfig::default()).unwrap();
    assert_eq!(ing.panel.observations().len(), 3);
    assert_eq!(ing.log.drop_count(), 0);
}

#[test]
fn zero_quantity_row_is_dropped_and_logged() {
    let dir = write_dir(
        "plant_id,year,product_code,quantity,revenue\np1,2003,81111,1,2\np1,2003,81112,0,2\n",
        INPUTS,
        PURCHASES,
    );
    let ing = load_panel_dir(dir.path(), &IngestConfig::default()).unwrap();
    assert_eq!(ing.panel.observations().len(), 1);
    assert_eq!(ing.log.drop_count(), 1);
    assert!(ing.log.render().starts_with("DROP "));
}

#[test]
fn duplicate_key_is_an_error_listing_offender() {
    let dir = write_dir(
        "plant_id,year,product_code,quantity,revenue\np1,2003,81111,1,2\np1,2003,81111,2,3\n",
        INPUTS,
        PURCHASES,
    );
    match load_panel_dir(dir.path(), &IngestConfig::default()) {
        Err(Error::DuplicateKey(keys)) => assert!(keys.iter().any(|k| k.contains("p1") && k.contains("81111"))),
        other => panic!("expected duplicate-key error, got {other:?}"),
    }
}

#[test]
fn malformed_header_names_the_column() {
    let dir = write_dir("plant_id,year,product,quantity,revenue\np1,2003,81111,1,2\n", INPUTS, PURCHASES);
    match load_panel_dir(dir.path(), &IngestConfig::default()) {
        Err(Error::Schema { column, .. }) => assert!(column == "product" || column == "product_code"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn fixture_round_trips_through_serialization() {
    let panel = ingested_fixture();
    assert!(validate_panel(&panel).is_valid());
    let dir = tempfile::tempdir().unwrap();
    panel.write_csv(dir.path()).unwrap();
    let again = load_panel_dir(dir.path(), &IngestConfig::default()).unwrap().panel;
    assert_eq!(again, panel);
    // Deterministic serialization.
    let dir2 = tempfile::tempdir().unwrap();
    again.write_csv(dir2.path()).unwrap();
    for f in ["outputs.csv", "inputs.csv", "purchases.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
    }
}

#[test]
fn fixture_concordance_merges_and_preserves_revenue() {
    let cfg = IngestConfig::default();
    let raw = load_panel_dir(&fixture_dir(), &cfg).unwrap();
    assert_eq!(raw.log.drop_count(), 1);
    let map = Concordance::load(&fixture_dir().join("concordance.csv")).unwrap();
    let (mapped, _) = apply_concordance(&raw.panel, &map, &cfg).unwrap();
    assert_eq!(raw.panel.observations().len() - mapped.observations().len(), 3);
    let total = |p: &Panel| {
        let mut m: BTreeMap<(String, i32), f64> = BTreeMap::new();
        for o in p.observations() {
            *m.entry((o.plant_id.clone(), o.year)).or_default() += o.revenue;
        }
        m
    };
    let (a, b) = (total(&raw.panel), total(&mapped));
    assert_eq!(a.len(), b.len());
    for (k, v) in &a {
        assert!(rel_err(b[k], *v) < 1e-9);
    }
}

#[test]
fn unmapped_code_in_strict_mode_is_named() {
    let cfg = IngestConfig::default();
    let raw = load_panel_dir(&fixture_dir(), &cfg).unwrap().panel;
    let map = Concordance::identity(["81111", "81112", "81211", "81212"]);
    match apply_concordance(&raw, &map, &cfg) {
        Err(Error::MissingMapping(codes)) => assert_eq!(codes, vec!["81219".to_string()]),
        other => panic!("expected missing mapping, got {other:?}"),
    }
    let lax = IngestConfig {
        strict_concordance: false,
        ..IngestConfig::default()
    };
    let (p, log) = apply_concordance(&raw, &map, &lax).unwrap();
    assert_eq!(log.drop_count(), 1);
    assert!(p.observations().iter().all(|o| o.product.as_str() != "81219"));
}

#[test]
fn deflators_divide_revenue() {
    let dir = write_dir(
        "plant_id,year,product_code,quantity,revenue\np1,2003,81111,1,10\n",
        INPUTS,
        PURCHASES,
    );
    let cfg = IngestConfig {
        deflators: Some([(2003, 2.0)].into_iter().collect()),
        ..IngestConfig::default()
    };
    let p = load_panel_dir(dir.path(), &cfg).unwrap().panel;
    assert_eq!(p.observations()[0].revenue, 5.0);
}

// Shares

#[test]
fn synthetic_shares_equal_generator_closed_form() {
    let out = small_synth(3, 150);
    let table = compute_revenue_shares(&out.panel, &out.market_rule()).unwrap();
    let truth: BTreeMap<(&str, i32, &str), _> = out
        .truth
        .rows
        .iter()
        .map(|r| ((r.plant_id.as_str(), r.year, r.product.as_str()), r))
        .collect();
    assert_eq!(table.rows.len(), truth.len());
    for r in &table.rows {
        let t = truth[&(r.plant_id.as_str(), r.year, r.product.as_str())];
        assert!(rel_err(r.share(), t.share) < 1e-12);
        assert!(rel_err(r.share_within(), t.share_within) < 1e-12);
        assert!(rel_err(r.share_outside(), t.share_outside) < 1e-12);
        assert!((r.log_price - t.log_price).abs() < 1e-12);
    }
}

fn panel_from_revenues(rows: &[(&str, &str, f64)]) -> Panel {
    let obs = rows
        .iter()
        .map(|(p, c, r)| PlantProductObs::new(*p, 2003, ProductCode::parse(c, "0123456789").unwrap(), 1.0, *r))
        .collect();
    Panel::from_parts(obs, vec![], vec![])
}

fn share_identities(panel: &Panel, rule: &MarketSizeRule) {
    let t = compute_revenue_shares(panel, rule).unwrap();
    let mut within: BTreeMap<String, f64> = BTreeMap::new();
    let mut market: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in &t.rows {
        let code = panel
            .observations()
            .iter()
            .find(|o| o.plant_id == r.plant_id && o.product == r.product)
            .unwrap()
            .product
            .clone();
        *within.entry(code.nest5().to_string()).or_default() += r.share_within();
        let e = market.entry(code.market3().to_string()).or_insert((0.0, r.share_outside()));
        e.0 += r.share();
        assert!(r.rs_j < 0.0);
        let lhs = r.rs_j;
        let rhs = r.rs_within + (r.nest_revenue / r.market_size).ln();
        assert!((lhs - rhs).abs() < 1e-12);
    }
    for v in within.values() {
        assert!((v - 1.0).abs() < 1e-9);
    }
    for (inside, outside) in market.values() {
        assert!((inside + outside - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn share_adding_up_and_scale_invariance(
        revs in prop::collection::vec(0.1f64..100.0, 1..8),
        nests in prop::collection::vec(0usize..3, 8),
        kappa in 1.01f64..5.0,
        scale in 0.01f64..100.0,
    ) {
        let codes = ["81111", "81112", "81211"];
        let rows: Vec<(String, &str, f64)> = revs
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("p{i}"), codes[nests[i]], *r))
            .collect();
        let borrowed: Vec<(&str, &str, f64)> = rows.iter().map(|(p, c, r)| (p.as_str(), *c, *r)).collect();
        let panel = panel_from_revenues(&borrowed);
        share_identities(&panel, &MarketSizeRule::Multiplier(kappa));

        let scaled: Vec<(&str, &str, f64)> = borrowed.iter().map(|(p, c, r)| (*p, *c, r * scale)).collect();
        let a = compute_revenue_shares(&panel, &MarketSizeRule::Multiplier(kappa)).unwrap();
        let b = compute_revenue_shares(&panel_from_revenues(&scaled), &MarketSizeRule::Multiplier(kappa)).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert!((x.rs_j - y.rs_j).abs() < 1e-12);
            prop_assert!((x.rs_within - y.rs_within).abs() < 1e-12);
            prop_assert!((x.rs_0 - y.rs_0).abs() < 1e-12);
        }
    }
}

// Instruments

fn purchase(plant: &str, year: i32, code: &str, value: f64, uv: f64) -> InputPurchase {
    InputPurchase::new(plant, year, code, value / uv, value)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retention_is_monotone_in_tau(
        shares in prop::collection::vec(0.0f64..=1.0, 1..20),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let mut purchases = Vec::new();
        let mut tags = BTreeMap::new();
        tags.insert("m".to_string(), Sector::Machinery);
        tags.insert("n".to_string(), Sector::NonMachinery);
        for (i, s) in shares.iter().enumerate() {
            let code = format!("I{i:02}");
            if *s > 0.0 {
                purchases.push(purchase("m", 2003, &code, *s, 1.0));
            }
            if *s < 1.0 {
                purchases.push(purchase("n", 2003, &code, 1.0 - s, 1.0));
            }
        }
        let table = compute_purchase_shares(&purchases, &tags, false).unwrap();
        for r in &table.rows {
            prop_assert!((0.0..=1.0).contains(&r.machinery_share));
        }
        let a = filter_input_codes(&table, lo).unwrap();
        let b = filter_input_codes(&table, hi).unwrap();
        prop_assert!(a.is_subset(&b));
        prop_assert_eq!(filter_input_codes(&table, 1.0).unwrap().len(), shares.len());
    }

    #[test]
    fn instrument_invariant_to_rescaling_a_code(factor in 0.01f64..100.0, which in 0usize..2) {
        let build = |f: f64| {
            let mut obs = Vec::new();
            let mut inputs = Vec::new();
            let mut purchases = Vec::new();
            for (i, (g0, g1)) in [(1.0, 1.1), (2.0, 1.7)].iter().enumerate() {
                let p = format!("p{i}");
                for (t, year) in [2003, 2004].iter().enumerate() {
                    obs.push(PlantProductObs::new(p.clone(), *year, ProductCode::parse("81111", "0123456789").unwrap(), 1.0, 1.0));
                    inputs.push(PlantInputTotals { plant_id: p.clone(), year: *year, labor: 1.0, capital: 1.0, materials: 1.0, sector: Sector::Machinery });
                    for (c, base) in [("A", g0), ("B", g1)] {
                        let scale = if (c == "A") == (which == 0) { f } else { 1.0 };
                        let uv = base * (1.0 + 0.1 * t as f64 * (i + 1) as f64) * scale;
                        purchases.push(purchase(&p, *year, c, 1.0, uv));
                    }
                }
            }
            let panel = Panel::from_parts(obs, inputs, purchases);
            let cfg = InstrumentConfig::default();
            let table = purchase_shares_for(&panel, &cfg).unwrap();
            let retained = filter_input_codes(&table, 1.0).unwrap();
            build_price_growth_iv(&panel, &retained, &cfg).unwrap()
        };
        let a = build(1.0);
        let b = build(factor);
        prop_assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert!((x.z - y.z).abs() < 1e-12);
        }
    }
}

#[test]
fn instruments_are_deterministic_and_coverage_grows_with_tau() {
    let out = small_synth(5, 200);
    let cfg = InstrumentConfig::default();
    let table = purchase_shares_for(&out.panel, &cfg).unwrap();
    let mut prev = 0;
    for tau in [0.1, 0.3, 0.6, 1.0] {
        let retained = filter_input_codes(&table, tau).unwrap();
        let a = build_price_growth_iv(&out.panel, &retained, &cfg).unwrap();
        let b = build_price_growth_iv(&out.panel, &retained, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.rows.len() >= prev);
        prev = a.rows.len();
    }
}
