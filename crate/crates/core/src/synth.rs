//! Ground-truth generator.
//!
//! The demand equation
//!
//! ```text
//! ln s_j - ln s_0 = (1 - sigma) ln s_{j|g} + mu_j,   mu_j = -alpha p_j + eta_j
//! ```
//!
//! is inverted in closed form. Exponentiating and summing over the nest
//! (`sum_{j in g} s_{j|g} = 1`) gives `s_{j|g} = exp(mu_j / sigma) / D_g`
//! with `D_g = sum_{k in g} exp(mu_k / sigma)`, nest shares
//! `s_g = s_0 D_g^sigma` and `s_0 = 1 / (1 + sum_g D_g^sigma)`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::conduct::lerner_block;
use crate::demand::is_admissible;
use crate::error::{Error, Result};
use crate::panel::{write_file, InputPurchase, Panel, PlantInputTotals, PlantProductObs, ProductCode, Sector};
use crate::shares::{MarketSizeRule, MARKET_SIZE_FILE};

pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct NestedShares {
    pub shares: Vec<f64>,
    pub within: Vec<f64>,
    pub outside: f64,
}

/// Closed-form nested-logit shares for one market. `nests` are arbitrary
/// labels; products sharing a label share a nest.
pub fn nested_share_map(
    log_prices: &[f64],
    appeals: &[f64],
    alpha: f64,
    sigma: f64,
    nests: &[usize],
) -> Result<NestedShares> {
    if !is_admissible(alpha, sigma) {
        return Err(Error::Inadmissible { alpha, sigma });
    }
    let v: Vec<f64> = log_prices
        .iter()
        .zip(appeals)
        .map(|(p, e)| (-alpha * p + e) / sigma)
        .collect();
    let mut peak: BTreeMap<usize, f64> = BTreeMap::new();
    for (&g, &x) in nests.iter().zip(&v) {
        let m = peak.entry(g).or_insert(f64::NEG_INFINITY);
        *m = m.max(x);
    }
    let mut sum: BTreeMap<usize, f64> = BTreeMap::new();
    for (&g, &x) in nests.iter().zip(&v) {
        *sum.entry(g).or_default() += (x - peak[&g]).exp();
    }
    let log_d: BTreeMap<usize, f64> = sum.iter().map(|(&g, &s)| (g, peak[&g] + s.ln())).collect();
    // Inclusive values sigma * ln D_g, combined with the outside good's 0.
    let top = log_d.values().map(|l| sigma * l).fold(0.0f64, f64::max);
    let denom = (-top).exp() + log_d.values().map(|l| (sigma * l - top).exp()).sum::<f64>();
    let log_s0 = -(top + denom.ln());
    let mut shares = Vec::with_capacity(v.len());
    let mut within = Vec::with_capacity(v.len());
    for (&g, &x) in nests.iter().zip(&v) {
        let log_within = x - log_d[&g];
        within.push(log_within.exp());
        shares.push((log_within + sigma * log_d[&g] + log_s0).exp());
    }
    Ok(NestedShares {
        shares,
        within,
        outside: log_s0.exp(),
    })
}

/// Bertrand-Nash log prices for one market. `owners` groups products into
/// plants; each plant sets its prices given the others'.
pub fn solve_price_equilibrium(
    mc: &[f64],
    appeals: &[f64],
    alpha: f64,
    sigma: f64,
    nests: &[usize],
    owners: &[usize],
) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 2_000;
    if mc.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Validation("marginal costs must be positive".into()));
    }
    let log_mc: Vec<f64> = mc.iter().map(|c| c.ln()).collect();
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &o) in owners.iter().enumerate() {
        blocks.entry(o).or_default().push(i);
    }
    // Best-response map: log price implied by each plant's FOC at `p`.
    let respond = |p: &[f64]| -> Result<Vec<f64>> {
        let sh = nested_share_map(p, appeals, alpha, sigma, nests)?;
        let mut target = vec![0.0; p.len()];
        for idx in blocks.values() {
            let s: Vec<f64> = idx.iter().map(|&i| sh.shares[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| sh.within[i]).collect();
            let g: Vec<usize> = idx.iter().map(|&i| nests[i]).collect();
            let (nu, _) = lerner_block(alpha, sigma, &s, &w, &g)
                .ok_or_else(|| Error::Numerical("singular plant block in equilibrium solve".into()))?;
            for (&i, &v) in idx.iter().zip(&nu) {
                if !(v < 1.0) {
                    return Err(Error::Numerical(format!("Lerner index {v} at or above one")));
                }
                target[i] = log_mc[i] - (1.0 - v).ln();
            }
        }
        Ok(target)
    };
    let gap = |p: &[f64], t: &[f64]| p.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut p: Vec<f64> = log_mc.iter().map(|c| c + 0.5).collect();
    let mut step = 1.0;
    let mut last = f64::INFINITY;
    let mut trace = Vec::new();
    for _ in 0..MAX_ITER {
        let target = respond(&p)?;
        let residual = gap(&p, &target);
        trace.push(residual);
        if residual < TOL {
            return Ok(target);
        }
        if let Some(next) = newton_step(&p, &target, residual, &respond, &gap) {
            p = next;
            last = residual;
            continue;
        }
        if residual > last {
            step = (step * 0.5f64).max(0.05);
        }
        last = residual;
        for (pi, ti) in p.iter_mut().zip(&target) {
            *pi += step * (ti - *pi);
        }
    }
    Err(Error::NonConvergence {
        what: "price equilibrium".into(),
        iterations: MAX_ITER,
        residual: last,
        trace,
    })
}

/// One Newton step on `p - respond(p) = 0` with a forward-difference
/// Jacobian, halved until the residual falls. `None` if no step helps.
fn newton_step(
    p: &[f64],
    target: &[f64],
    residual: f64,
    respond: &impl Fn(&[f64]) -> Result<Vec<f64>>,
    gap: &impl Fn(&[f64], &[f64]) -> f64,
) -> Option<Vec<f64>> {
    let n = p.len();
    let g = DVector::from_iterator(n, p.iter().zip(target).map(|(a, b)| a - b));
    let mut jac = DMatrix::<f64>::identity(n, n);
    for k in 0..n {
        let h = 1e-7 * (1.0 + p[k].abs());
        let mut q = p.to_vec();
        q[k] += h;
        let tq = respond(&q).ok()?;
        for i in 0..n {
            jac[(i, k)] -= (tq[i] - target[i]) / h;
        }
    }
    let delta = jac.lu().solve(&(-g))?;
    let mut t = 1.0;
    while t > 1e-4 {
        let cand: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect();
        if let Ok(tc) = respond(&cand) {
            if gap(&cand, &tc) < residual {
                return Some(cand);
            }
        }
        t *= 0.5;
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_plants: usize,
    /// Potential products per plant are uniform on `1..=max_products`.
    pub max_products: usize,
    pub n_markets: usize,
    pub nests_per_market: usize,
    pub n_years: usize,
    pub first_year: i32,
    pub alpha: f64,
    pub sigma: f64,
    /// `(beta_L, beta_K, beta_M)`; must sum to one.
    pub beta: [f64; 3],
    pub appeal_sd: f64,
    pub omega_sd: f64,
    /// Correlation of appeal with marginal cost, in [-1, 1].
    pub endogeneity: f64,
    pub codes_per_nest: usize,
    /// Sd of the iid yearly log-price shock of each input code.
    pub cost_shock_sd: f64,
    /// Activity logit `a - b * u_bar(g, t-1) / sd` per potential product.
    pub entry_intercept: f64,
    pub entry_slope: f64,
    /// Sd of plant wage and capital-price effects.
    pub factor_price_sd: f64,
    pub market_size_sd: f64,
    pub n_nonmachinery: usize,
    /// Machinery purchase shares of input codes are uniform on (0, this].
    pub max_machinery_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_plants: 500,
            max_products: 3,
            n_markets: 4,
            nests_per_market: 5,
            n_years: 8,
            first_year: 2001,
            alpha: 0.5,
            sigma: 0.4,
            beta: [0.6, 0.2, 0.2],
            appeal_sd: 0.4,
            omega_sd: 0.4,
            endogeneity: 0.5,
            codes_per_nest: 3,
            cost_shock_sd: 1.5,
            entry_intercept: 1.0,
            entry_slope: 1.0,
            factor_price_sd: 0.3,
            market_size_sd: 0.2,
            n_nonmachinery: 30,
            max_machinery_share: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !is_admissible(self.alpha, self.sigma) {
            return bad("synthetic alpha must be positive and sigma in (0, 1)");
        }
        if self.beta.iter().any(|b| !(*b > 0.0)) {
            return bad("synthetic beta components must be positive");
        }
        if (self.beta.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("synthetic beta must sum to one (constant returns)");
        }
        if !(-1.0..=1.0).contains(&self.endogeneity) {
            return bad("endogeneity must lie in [-1, 1]");
        }
        if self.n_plants == 0 || self.n_markets == 0 || self.nests_per_market == 0 || self.codes_per_nest == 0 {
            return bad("plant, market, nest and code counts must be positive");
        }
        if self.n_markets > 899 || self.nests_per_market > 100 {
            return bad("at most 899 markets and 100 nests per market");
        }
        if self.max_products == 0 || self.max_products > self.nests_per_market {
            return bad("max_products must lie in 1..=nests_per_market");
        }
        if self.n_years < 2 {
            return bad("need at least two years");
        }
        if !(self.max_machinery_share > 0.0 && self.max_machinery_share <= 1.0) {
            return bad("max_machinery_share must lie in (0, 1]");
        }
        for (name, v) in [
            ("appeal_sd", self.appeal_sd),
            ("omega_sd", self.omega_sd),
            ("cost_shock_sd", self.cost_shock_sd),
            ("factor_price_sd", self.factor_price_sd),
            ("market_size_sd", self.market_size_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    pub eta: f64,
    pub omega: f64,
    pub mc: f64,
    pub log_price: f64,
    pub share: f64,
    pub share_within: f64,
    pub share_outside: f64,
    /// True input allocation share.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub alpha: f64,
    pub sigma: f64,
    pub beta: [f64; 3],
    pub rows: Vec<TruthRow>,
}

impl SynthTruth {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "plant_id,year,product_code,eta,omega,mc,log_price,share,share_within,share_outside,S\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.plant_id,
                r.year,
                r.product,
                r.eta,
                r.omega,
                r.mc,
                r.log_price,
                r.share,
                r.share_within,
                r.share_outside,
                r.s
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub panel: Panel,
    pub truth: SynthTruth,
    /// Market size per (market3, year).
    pub market_sizes: BTreeMap<(String, i32), f64>,
}

impl SynthOutput {
    pub fn market_rule(&self) -> MarketSizeRule {
        MarketSizeRule::Explicit(self.market_sizes.clone())
    }

    /// Panel CSVs plus `market_size.csv` and `truth.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.panel.write_csv(dir)?;
        let mut s = String::from("market3,year,market_size\n");
        for ((m, y), v) in &self.market_sizes {
            s.push_str(&format!("{m},{y},{v}\n"));
        }
        write_file(&dir.join(MARKET_SIZE_FILE), &s)?;
        write_file(&dir.join(TRUTH_FILE), &self.truth.to_csv())
    }
}

fn market_code(h: usize) -> String {
    format!("{}", 100 + h)
}

fn input_code(nest: usize, k: usize, per_nest: usize) -> String {
    format!("M{:05}", nest * per_nest + k)
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("non-negative sd")
}

struct PlantDraw {
    id: String,
    nests: Vec<usize>,
    log_w_l: f64,
    log_w_k: f64,
    log_w_m: f64,
    /// Basket codes with their plant-specific unit-value effect.
    basket: Vec<(usize, f64)>,
}

struct MarketOut {
    obs: Vec<PlantProductObs>,
    inputs: Vec<PlantInputTotals>,
    purchases: Vec<InputPurchase>,
    truth: Vec<TruthRow>,
    sizes: Vec<((String, i32), f64)>,
}

/// Draw a synthetic panel with known demand, cost and production
/// parameters. Deterministic in `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let c = config;
    let n_nests = c.n_markets * c.nests_per_market;
    let n_codes = n_nests * c.codes_per_nest;
    let periods = c.n_years + 1; // index 0 is the pre-sample year

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let code_level: Vec<f64> = (0..n_codes).map(|_| normal(0.3).sample(&mut rng)).collect();
    let machinery_share: Vec<f64> = (0..n_codes)
        .map(|_| c.max_machinery_share * rng.random_range(0.01..=1.0))
        .collect();
    let shocks: Vec<Vec<f64>> = (0..n_codes)
        .map(|_| (0..periods).map(|_| normal(c.cost_shock_sd).sample(&mut rng)).collect())
        .collect();
    let home: Vec<usize> = (0..c.n_plants).map(|_| rng.random_range(0..c.n_markets)).collect();

    // Nest cost index: mean shock over the nest's basket.
    let shock_sd = c.cost_shock_sd / (c.codes_per_nest as f64).sqrt();
    let nest_shock = |g: usize, t: usize| -> f64 {
        (0..c.codes_per_nest)
            .map(|k| shocks[g * c.codes_per_nest + k][t])
            .sum::<f64>()
            / c.codes_per_nest as f64
    };
    let log_code_price = |code: usize, t: usize| code_level[code] + shocks[code][t];

    let markets: Vec<MarketOut> = (0..c.n_markets)
        .into_par_iter()
        .map(|h| -> Result<MarketOut> {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(h as u64 + 1);
            let market = market_code(h);
            let plants: Vec<PlantDraw> = (0..c.n_plants)
                .filter(|&i| home[i] == h)
                .map(|i| {
                    let k = rng.random_range(1..=c.max_products);
                    let mut local: Vec<usize> = sample(&mut rng, c.nests_per_market, k).into_vec();
                    local.sort_unstable();
                    let nests: Vec<usize> = local.iter().map(|g| h * c.nests_per_market + g).collect();
                    let log_w_l = normal(c.factor_price_sd).sample(&mut rng);
                    let log_w_k = normal(c.factor_price_sd).sample(&mut rng);
                    let log_w_m = normal(0.1).sample(&mut rng);
                    let basket = nests
                        .iter()
                        .flat_map(|&g| (0..c.codes_per_nest).map(move |k| g * c.codes_per_nest + k))
                        .map(|code| (code, normal(0.1).sample(&mut rng)))
                        .collect();
                    PlantDraw {
                        id: format!("P{i:04}"),
                        nests,
                        log_w_l,
                        log_w_k,
                        log_w_m,
                        basket,
                    }
                })
                .collect();

            let mut out = MarketOut {
                obs: Vec::new(),
                inputs: Vec::new(),
                purchases: Vec::new(),
                truth: Vec::new(),
                sizes: Vec::new(),
            };
            let [b_l, b_k, b_m] = c.beta;
            let link = c.endogeneity;
            let free = (1.0 - link * link).sqrt();
            for t in 1..periods {
                let year = c.first_year + t as i32 - 1;
                // (plant index, nest, eta, omega, mc)
                let mut products: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
                let mut plant_prices: Vec<[f64; 3]> = Vec::with_capacity(plants.len());
                for (pi, pl) in plants.iter().enumerate() {
                    let w_l = pl.log_w_l + normal(0.05).sample(&mut rng);
                    let w_k = pl.log_w_k + normal(0.05).sample(&mut rng);
                    let w_m = pl.log_w_m
                        + pl.basket.iter().map(|&(code, _)| log_code_price(code, t)).sum::<f64>()
                            / pl.basket.len() as f64;
                    plant_prices.push([w_l, w_k, w_m]);
                    let log_unit_cost = b_l * (w_l - b_l.ln()) + b_k * (w_k - b_k.ln()) + b_m * (w_m - b_m.ln());
                    for &g in &pl.nests {
                        let lagged = if shock_sd > 0.0 { nest_shock(g, t - 1) / shock_sd } else { 0.0 };
                        let index = c.entry_intercept - c.entry_slope * lagged;
                        let p_enter = 1.0 / (1.0 + (-index).exp());
                        let enter = rng.random::<f64>() < p_enter;
                        let omega = normal(c.omega_sd).sample(&mut rng);
                        let e = normal(1.0).sample(&mut rng);
                        if !enter {
                            continue;
                        }
                        let scaled = if c.omega_sd > 0.0 { -omega / c.omega_sd } else { 0.0 };
                        let eta = c.appeal_sd * (free * e + link * scaled);
                        products.push((pi, g, eta, omega, (log_unit_cost - omega).exp()));
                    }
                }
                if products.is_empty() {
                    continue;
                }
                let mc: Vec<f64> = products.iter().map(|p| p.4).collect();
                let eta: Vec<f64> = products.iter().map(|p| p.2).collect();
                let nests: Vec<usize> = products.iter().map(|p| p.1).collect();
                let owners: Vec<usize> = products.iter().map(|p| p.0).collect();
                let log_p = solve_price_equilibrium(&mc, &eta, c.alpha, c.sigma, &nests, &owners)?;
                let sh = nested_share_map(&log_p, &eta, c.alpha, c.sigma, &nests)?;
                let size = (10.0 + normal(c.market_size_sd).sample(&mut rng)).exp();
                out.sizes.push(((market.clone(), year), size));

                let mut cost_by_plant: BTreeMap<usize, f64> = BTreeMap::new();
                let quantity: Vec<f64> = (0..products.len())
                    .map(|j| sh.shares[j] * size / log_p[j].exp())
                    .collect();
                for (j, p) in products.iter().enumerate() {
                    *cost_by_plant.entry(p.0).or_default() += mc[j] * quantity[j];
                }
                for (j, p) in products.iter().enumerate() {
                    let pl = &plants[p.0];
                    let g_local = p.1 - h * c.nests_per_market;
                    let product = ProductCode::parse(&format!("{market}{g_local:02}"), "0123456789")?;
                    out.obs.push(PlantProductObs::new(
                        pl.id.clone(),
                        year,
                        product.clone(),
                        quantity[j],
                        sh.shares[j] * size,
                    ));
                    out.truth.push(TruthRow {
                        plant_id: pl.id.clone(),
                        year,
                        product,
                        eta: p.2,
                        omega: p.3,
                        mc: mc[j],
                        log_price: log_p[j],
                        share: sh.shares[j],
                        share_within: sh.within[j],
                        share_outside: sh.outside,
                        s: mc[j] * quantity[j] / cost_by_plant[&p.0],
                    });
                }
                for (&pi, &cost) in &cost_by_plant {
                    let pl = &plants[pi];
                    let [w_l, w_k, w_m] = plant_prices[pi];
                    let materials = b_m * cost / w_m.exp();
                    out.inputs.push(PlantInputTotals {
                        plant_id: pl.id.clone(),
                        year,
                        labor: b_l * cost / w_l.exp(),
                        capital: b_k * cost / w_k.exp(),
                        materials,
                        sector: Sector::Machinery,
                    });
                    let per_code = b_m * cost / pl.basket.len() as f64;
                    for &(code, effect) in &pl.basket {
                        let uv = (log_code_price(code, t) + effect).exp();
                        out.purchases.push(InputPurchase::new(
                            pl.id.clone(),
                            year,
                            input_code(code / c.codes_per_nest, code % c.codes_per_nest, c.codes_per_nest),
                            per_code / uv,
                            per_code,
                        ));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut obs = Vec::new();
    let mut inputs = Vec::new();
    let mut purchases = Vec::new();
    let mut truth = Vec::new();
    let mut market_sizes = BTreeMap::new();
    for m in markets {
        obs.extend(m.obs);
        inputs.extend(m.inputs);
        purchases.extend(m.purchases);
        truth.extend(m.truth);
        market_sizes.extend(m.sizes);
    }

    // Non-machinery buyers top up each code so its machinery share is the
    // code's target.
    let mut machinery_value: BTreeMap<(&str, i32), f64> = BTreeMap::new();
    for p in &purchases {
        *machinery_value.entry((p.input_code.as_str(), p.year)).or_default() += p.value;
    }
    let mut extra_inputs = Vec::new();
    let mut extra_purchases = Vec::new();
    if c.n_nonmachinery > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(c.n_markets as u64 + 1);
        let effects: Vec<Vec<f64>> = (0..c.n_nonmachinery)
            .map(|_| (0..n_codes).map(|_| normal(0.1).sample(&mut rng)).collect())
            .collect();
        for t in 1..periods {
            let year = c.first_year + t as i32 - 1;
            let mut spend = vec![0.0; c.n_nonmachinery];
            for code in 0..n_codes {
                let name = input_code(code / c.codes_per_nest, code % c.codes_per_nest, c.codes_per_nest);
                let share = machinery_share[code];
                let total = match machinery_value.get(&(name.as_str(), year)) {
                    Some(&v) if share < 1.0 => v * (1.0 - share) / share,
                    Some(_) => continue,
                    None => c.n_nonmachinery as f64,
                };
                let each = total / c.n_nonmachinery as f64;
                for (n, fx) in effects.iter().enumerate() {
                    let uv = (log_code_price(code, t) + fx[code]).exp();
                    spend[n] += each;
                    extra_purchases.push(InputPurchase::new(format!("N{n:04}"), year, name.clone(), each / uv, each));
                }
            }
            for (n, &s) in spend.iter().enumerate() {
                extra_inputs.push(PlantInputTotals {
                    plant_id: format!("N{n:04}"),
                    year,
                    labor: s,
                    capital: s,
                    materials: s,
                    sector: Sector::NonMachinery,
                });
            }
        }
    }
    inputs.extend(extra_inputs);
    purchases.extend(extra_purchases);
    truth.sort_by(|a, b| (&a.plant_id, a.year, &a.product).cmp(&(&b.plant_id, b.year, &b.product)));

    Ok(SynthOutput {
        panel: Panel::from_parts(obs, inputs, purchases),
        truth: SynthTruth {
            alpha: c.alpha,
            sigma: c.sigma,
            beta: c.beta,
            rows: truth,
        },
        market_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_product_zero_utility() {
        let s = nested_share_map(&[0.0], &[0.0], 1.0, 0.5, &[0]).unwrap();
        assert!((s.outside - 0.5).abs() < 1e-15);
        assert!((s.shares[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.within[0], 1.0);
    }

    #[test]
    fn equal_utility_equal_within_shares() {
        let s = nested_share_map(&[0.3, 0.3, 0.3], &[1.0, 1.0, 1.0], 0.5, 0.4, &[0, 0, 0]).unwrap();
        for w in &s.within {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn extreme_utilities_do_not_overflow() {
        let s = nested_share_map(&[-2000.0, 0.0], &[0.0, 0.0], 1.0, 0.3, &[0, 1]).unwrap();
        assert!(s.shares.iter().all(|v| v.is_finite()));
        assert!(s.outside.is_finite());
    }

    #[test]
    fn symmetric_duopoly_prices_are_equal() {
        let p = solve_price_equilibrium(&[1.0, 1.0], &[0.2, 0.2], 0.5, 0.4, &[0, 0], &[0, 1]).unwrap();
        assert!((p[0] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_non_constant_returns() {
        let c = SynthConfig {
            beta: [0.5, 0.2, 0.2],
            ..SynthConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
