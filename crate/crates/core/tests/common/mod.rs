#![allow(dead_code)]

use std::path::PathBuf;

use prodloom::panel::{apply_concordance, load_panel_dir, Concordance, IngestConfig, Panel};
use prodloom::sweep::PipelineConfig;
use prodloom::synth::{generate_synthetic, SynthConfig, SynthOutput};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest_small")
}

/// The hand-written fixture after ingestion and concordance.
pub fn ingested_fixture() -> Panel {
    let cfg = IngestConfig::default();
    let dir = fixture_dir();
    let raw = load_panel_dir(&dir, &cfg).unwrap().panel;
    let map = Concordance::load(&dir.join("concordance.csv")).unwrap();
    apply_concordance(&raw, &map, &cfg).unwrap().0
}

pub fn synth(seed: u64) -> SynthOutput {
    generate_synthetic(&SynthConfig { seed, ..SynthConfig::default() }).unwrap()
}

pub fn small_synth(seed: u64, n_plants: usize) -> SynthOutput {
    generate_synthetic(&SynthConfig {
        seed,
        n_plants,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn config_for(out: &SynthOutput) -> PipelineConfig {
    PipelineConfig {
        market: out.market_rule(),
        ..PipelineConfig::default()
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

use std::collections::BTreeMap;

use prodloom::panel::{PlantProductObs, ProductCode};
use prodloom::shares::MarketSizeRule;
use prodloom::synth::solve_price_equilibrium;
use rand::seq::index::sample;
use rand::Rng;

/// One market-year in Bertrand-Nash equilibrium. Plant `i` owns
/// `counts[i]` products in distinct nests of market 811.
pub struct EquilibriumMarket {
    pub panel: Panel,
    pub rule: MarketSizeRule,
    pub mc: BTreeMap<(String, String), f64>,
    pub log_price: BTreeMap<(String, String), f64>,
}

pub fn equilibrium_market(rng: &mut impl Rng, alpha: f64, sigma: f64, counts: &[usize]) -> EquilibriumMarket {
    let mut owners = Vec::new();
    let mut nests = Vec::new();
    for (i, &n) in counts.iter().enumerate() {
        for g in sample(rng, 5, n).into_vec() {
            owners.push(i);
            nests.push(g);
        }
    }
    let mc: Vec<f64> = owners.iter().map(|_| rng.random_range(0.5..2.0)).collect();
    let eta: Vec<f64> = owners.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let log_p = solve_price_equilibrium(&mc, &eta, alpha, sigma, &nests, &owners).unwrap();
    let sh = prodloom::synth::nested_share_map(&log_p, &eta, alpha, sigma, &nests).unwrap();
    let size = 1000.0;
    let mut obs = Vec::new();
    let mut mc_map = BTreeMap::new();
    let mut p_map = BTreeMap::new();
    for j in 0..owners.len() {
        let plant = format!("q{:02}", owners[j]);
        let code = format!("8111{}", nests[j] + 1);
        let revenue = sh.shares[j] * size;
        obs.push(PlantProductObs::new(
            plant.clone(),
            2003,
            ProductCode::parse(&code, "0123456789").unwrap(),
            revenue / log_p[j].exp(),
            revenue,
        ));
        mc_map.insert((plant.clone(), code.clone()), mc[j]);
        p_map.insert((plant, code), log_p[j]);
    }
    EquilibriumMarket {
        panel: Panel::from_parts(obs, vec![], vec![]),
        rule: MarketSizeRule::Explicit([(("811".to_string(), 2003), size)].into_iter().collect()),
        mc: mc_map,
        log_price: p_map,
    }
}

use prodloom::conduct::{input_allocation_shares, recover_marginal_costs};
use prodloom::instruments::{build_price_growth_iv, filter_input_codes, purchase_shares_for, InstrumentConfig};
use prodloom::production::{build_product_inputs, ProductInputTable};
use prodloom::shares::compute_revenue_shares;

/// Product inputs at known demand, with instruments at threshold `tau`.
pub fn product_inputs(
    panel: &Panel,
    rule: &MarketSizeRule,
    alpha: f64,
    sigma: f64,
    tau: f64,
) -> prodloom::Result<ProductInputTable> {
    let shares = compute_revenue_shares(panel, rule)?;
    let mut costs = recover_marginal_costs(alpha, sigma, &shares)?;
    input_allocation_shares(&mut costs, panel)?;
    let cfg = InstrumentConfig::default();
    let table = purchase_shares_for(panel, &cfg)?;
    let iv = build_price_growth_iv(panel, &filter_input_codes(&table, tau)?, &cfg)?;
    build_product_inputs(panel, &costs, Some(&iv))
}
