//! TFPR, efficiency-gain bounds from dropping a plant's worst product, and
//! the product-discontinuation probit.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{Panel, ProductCode};
use crate::production::ProductInputTable;

#[derive(Debug, Clone, PartialEq)]
pub struct TfprRow {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    pub tfpr: f64,
    pub tfpr_z: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfprTable {
    pub rows: Vec<TfprRow>,
    pub mean: f64,
    pub sd: f64,
    pub spec_hash: String,
}

impl TfprTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("spec_hash,plant_id,year,product_code,tfpr,tfpr_z\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.spec_hash, r.plant_id, r.year, r.product, r.tfpr, r.tfpr_z
            ));
        }
        s
    }
}

/// `tfpr = ln R - beta . (l, k, m)`, standardized over the whole table.
pub fn compute_tfpr(inputs: &ProductInputTable, beta: [f64; 3], spec_hash: &str) -> TfprTable {
    let raw: Vec<f64> = inputs
        .rows
        .iter()
        .map(|r| r.ln_revenue - beta[0] * r.l - beta[1] * r.k - beta[2] * r.m)
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let rows = inputs
        .rows
        .iter()
        .zip(&raw)
        .map(|(r, &t)| TfprRow {
            plant_id: r.plant_id.clone(),
            year: r.year,
            product: r.product.clone(),
            tfpr: t,
            tfpr_z: if sd > 0.0 { (t - mean) / sd } else { 0.0 },
            s: r.s,
        })
        .collect();
    TfprTable {
        rows,
        mean,
        sd,
        spec_hash: spec_hash.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainBounds {
    pub plant_id: String,
    pub year: i32,
    pub gain_lower: f64,
    pub gain_upper: f64,
    pub n_products: usize,
}

/// Percent change in `sum_j S_j exp(tfpr_j)` after dropping the minimum
/// tfpr product. Lower bound: its share is spread proportionally over the
/// rest. Upper bound: its share goes to the best product.
pub fn gain_bounds(shares: &[f64], tfpr: &[f64]) -> (f64, f64) {
    let worst = argmin(tfpr);
    let best = (0..tfpr.len())
        .filter(|&j| j != worst)
        .max_by(|&a, &b| tfpr[a].total_cmp(&tfpr[b]))
        .expect("at least two products");
    let omega: f64 = shares.iter().zip(tfpr).map(|(s, t)| s * t.exp()).sum();
    let (rest, rest_share) = (0..tfpr.len())
        .filter(|&j| j != worst)
        .fold((0.0, 0.0), |(r, w), j| (r + shares[j] * tfpr[j].exp(), w + shares[j]));
    let dropped = shares[worst];
    let top = tfpr[best].exp();
    // A weighted mean of the survivors lies in [min, max]; clamp away the
    // rounding that can push it an ulp outside.
    let mean = (rest / rest_share).clamp(tfpr[worst].exp(), top);
    let lower = rest + dropped * mean;
    let upper = rest + dropped * top;
    (100.0 * (lower / omega - 1.0), 100.0 * (upper / omega - 1.0))
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).expect("non-empty")
}

/// Gain bounds for every plant-year with 2 to 10 products.
pub fn efficiency_gain_bounds(tfpr: &TfprTable) -> Vec<GainBounds> {
    let mut groups: BTreeMap<(&str, i32), Vec<&TfprRow>> = BTreeMap::new();
    for r in &tfpr.rows {
        groups.entry((&r.plant_id, r.year)).or_default().push(r);
    }
    groups
        .into_iter()
        .filter(|(_, rows)| (2..=10).contains(&rows.len()))
        .map(|((plant, year), rows)| {
            let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
            let t: Vec<f64> = rows.iter().map(|r| r.tfpr).collect();
            let (gain_lower, gain_upper) = gain_bounds(&s, &t);
            GainBounds {
                plant_id: plant.to_string(),
                year,
                gain_lower,
                gain_upper,
                n_products: rows.len(),
            }
        })
        .collect()
}

pub fn gains_csv(gains: &[GainBounds], spec_hash: &str) -> String {
    let mut s = String::from("spec_hash,plant_id,year,n_products,gain_lower,gain_upper\n");
    for g in gains {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            spec_hash, g.plant_id, g.year, g.n_products, g.gain_lower, g.gain_upper
        ));
    }
    s
}

/// Standard normal cdf, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `phi(x) / Phi(x)` without underflow for very negative `x`.
fn mills(x: f64) -> f64 {
    if x > -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        // Asymptotic expansion of the inverse Mills ratio.
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Probit log-likelihood.
pub fn probit_loglik(y: &[f64], x: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    let xb = x * beta;
    y.iter()
        .zip(xb.iter())
        .map(|(&yi, &v)| ln_cdf(if yi > 0.5 { v } else { -v }))
        .sum()
}

/// Score vector (sum over observations).
pub fn probit_score(y: &[f64], x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let xb = x * beta;
    let lam = DVector::from_iterator(
        y.len(),
        y.iter().zip(xb.iter()).map(|(&yi, &v)| {
            let q = if yi > 0.5 { 1.0 } else { -1.0 };
            q * mills(q * v)
        }),
    );
    x.transpose() * lam
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitResult {
    pub names: Vec<String>,
    pub coef: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n: usize,
    pub n_clusters: usize,
    /// Regressor means over the estimation sample.
    pub means: DVector<f64>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Position of the standardized-tfpr coefficient.
    pub tfpr_index: usize,
    pub psd_repaired: bool,
}

impl ProbitResult {
    pub fn to_csv(&self, spec_hash: &str) -> String {
        let mut s = String::from("spec_hash,term,coef,se\n");
        for (i, name) in self.names.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                spec_hash,
                name,
                self.coef[i],
                self.vcov[(i, i)].sqrt()
            ));
        }
        s
    }
}

fn hessian(y: &[f64], x: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let xb = x * beta;
    let mut h = DMatrix::<f64>::zeros(x.ncols(), x.ncols());
    for i in 0..y.len() {
        let q = if y[i] > 0.5 { 1.0 } else { -1.0 };
        let lam = q * mills(q * xb[i]);
        let w = lam * (lam + xb[i]);
        let xi = x.row(i);
        h -= xi.transpose() * xi * w;
    }
    h
}

/// Name a regressor that perfectly predicts the outcome on one side of a
/// binary split, if any.
fn separated_covariate(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Option<String> {
    for j in 0..x.ncols() {
        let col = x.column(j);
        let levels: BTreeSet<u64> = col.iter().map(|v| v.to_bits()).collect();
        if levels.len() != 2 {
            continue;
        }
        for level in &levels {
            let ys: BTreeSet<bool> = col
                .iter()
                .zip(y)
                .filter(|(v, _)| v.to_bits() == *level)
                .map(|(_, &yi)| yi > 0.5)
                .collect();
            if ys.len() == 1 {
                return Some(names[j].clone());
            }
        }
    }
    None
}

/// Probit by damped Newton; sandwich covariance clustered on `cluster`.
pub fn fit_probit(
    y: &[f64],
    x: &DMatrix<f64>,
    names: &[String],
    cluster: &[usize],
    tfpr_index: usize,
) -> Result<ProbitResult> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 200;
    let n = y.len();
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation(format!(
            "outcome (all {})",
            if ones == 0 { "zero" } else { "one" }
        )));
    }
    let basis = linalg::Basis::new(x);
    if !basis.collinear.is_empty() {
        return Err(Error::SingularDesign(basis.collinear.iter().map(|&i| names[i].clone()).collect()));
    }
    if let Some(name) = separated_covariate(y, x, names) {
        return Err(Error::Separation(name));
    }

    let mut beta = DVector::<f64>::zeros(x.ncols());
    let mut ll = probit_loglik(y, x, &beta);
    let mut trace = Vec::new();
    let mut converged = None;
    for it in 0..MAX_ITER {
        let g = probit_score(y, x, &beta);
        let gnorm = g.norm();
        trace.push(gnorm);
        if gnorm < TOL {
            converged = Some((it, gnorm));
            break;
        }
        let h = hessian(y, x, &beta);
        let step = linalg::solve_sym(&(-&h), &DMatrix::from_column_slice(g.len(), 1, g.as_slice()))?
            .column(0)
            .into_owned();
        // Near the optimum the likelihood gain drops below its rounding
        // error; a step within that noise is accepted if it shrinks the score.
        let noise = 1e-12 * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &beta + &step * t;
            let cand_ll = probit_loglik(y, x, &cand);
            if cand_ll > ll || (cand_ll > ll - noise && probit_score(y, x, &cand).norm() < gnorm) {
                beta = cand;
                ll = ll.max(cand_ll);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent left at machine precision.
            converged = Some((it, gnorm));
            break;
        }
    }
    let Some((iterations, gradient_norm)) = converged else {
        if let Some((j, _)) = beta.iter().enumerate().find(|(_, b)| b.abs() > 30.0) {
            return Err(Error::Separation(names[j].clone()));
        }
        return Err(Error::NonConvergence {
            what: "probit".into(),
            iterations: MAX_ITER,
            residual: *trace.last().unwrap_or(&f64::NAN),
            trace,
        });
    };

    let h_inv = linalg::inverse_sym(&(-hessian(y, x, &beta)))?;
    let xb = x * &beta;
    let scores = DMatrix::from_fn(n, x.ncols(), |i, j| {
        let q = if y[i] > 0.5 { 1.0 } else { -1.0 };
        q * mills(q * xb[i]) * x[(i, j)]
    });
    let n_clusters = cluster.iter().copied().max().map_or(0, |m| m + 1);
    let g = n_clusters as f64;
    let meat = linalg::cluster_meat(&scores, cluster, n_clusters) * (g / (g - 1.0));
    let (vcov, psd_repaired) = linalg::psd_repair(&(&h_inv * meat * &h_inv));
    let means = DVector::from_iterator(x.ncols(), (0..x.ncols()).map(|j| x.column(j).mean()));
    Ok(ProbitResult {
        names: names.to_vec(),
        coef: beta,
        vcov,
        loglik: ll,
        iterations,
        gradient_norm,
        n,
        n_clusters,
        means,
        x: x.clone(),
        y: y.to_vec(),
        tfpr_index,
        psd_repaired,
    })
}

/// Build the drop-event sample and fit the probit. A product drops when it
/// is absent at t+1 while its plant still produces at t+1. Controls: log
/// plant revenue, plant product count, year dummies.
pub fn probit_product_drop(tfpr: &TfprTable, panel: &Panel) -> Result<ProbitResult> {
    let mut portfolio: BTreeMap<(&str, i32), BTreeSet<&ProductCode>> = BTreeMap::new();
    let mut revenue: BTreeMap<(&str, i32), f64> = BTreeMap::new();
    for o in panel.observations() {
        portfolio.entry((&o.plant_id, o.year)).or_default().insert(&o.product);
        *revenue.entry((&o.plant_id, o.year)).or_default() += o.revenue;
    }
    let sample: Vec<(&TfprRow, f64)> = tfpr
        .rows
        .iter()
        .filter_map(|r| {
            let next = portfolio.get(&(r.plant_id.as_str(), r.year + 1))?;
            Some((r, if next.contains(&r.product) { 0.0 } else { 1.0 }))
        })
        .collect();
    if sample.is_empty() {
        return Err(Error::Validation("no plant-products with an observed next year".into()));
    }
    let years: BTreeSet<i32> = sample.iter().map(|(r, _)| r.year).collect();
    let mut names = vec![
        "const".to_string(),
        "tfpr_z".to_string(),
        "ln_plant_revenue".to_string(),
        "n_products".to_string(),
    ];
    names.extend(years.iter().skip(1).map(|y| format!("year_{y}")));
    let year_list: Vec<i32> = years.iter().skip(1).copied().collect();
    let x = DMatrix::from_fn(sample.len(), names.len(), |i, j| {
        let r = sample[i].0;
        match j {
            0 => 1.0,
            1 => r.tfpr_z,
            2 => revenue[&(r.plant_id.as_str(), r.year)].ln(),
            3 => portfolio[&(r.plant_id.as_str(), r.year)].len() as f64,
            _ => f64::from(u8::from(r.year == year_list[j - 4])),
        }
    });
    let y: Vec<f64> = sample.iter().map(|s| s.1).collect();
    let plants: Vec<&str> = sample.iter().map(|(r, _)| r.plant_id.as_str()).collect();
    let (cluster, _) = linalg::dense_index(&plants);
    fit_probit(&y, &x, &names, &cluster, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalEffectKind {
    AtMeans,
    Average,
}

impl MarginalEffectKind {
    pub fn label(self) -> &'static str {
        match self {
            MarginalEffectKind::AtMeans => "at-means",
            MarginalEffectKind::Average => "average",
        }
    }
}

/// Effect on the drop probability, in percentage points, of lowering
/// standardized tfpr by one, with a delta-method standard error.
pub fn marginal_effect_1sd(probit: &ProbitResult, kind: MarginalEffectKind) -> (f64, f64) {
    let t = probit.tfpr_index;
    let b = &probit.coef;
    let k = b.len();
    let mut grad = DVector::<f64>::zeros(k);
    let mut me = 0.0;
    let rows: Vec<DVector<f64>> = match kind {
        MarginalEffectKind::AtMeans => vec![probit.means.clone()],
        MarginalEffectKind::Average => (0..probit.n).map(|i| probit.x.row(i).transpose()).collect(),
    };
    let m = rows.len() as f64;
    for xi in &rows {
        let base = xi.dot(b);
        let shifted = base - b[t];
        me += norm_cdf(shifted) - norm_cdf(base);
        let mut shifted_x = xi.clone();
        shifted_x[t] -= 1.0;
        grad += shifted_x * norm_pdf(shifted) - xi * norm_pdf(base);
    }
    let me = 100.0 * me / m;
    let grad = grad * (100.0 / m);
    let se = (grad.transpose() * &probit.vcov * &grad)[(0, 0)].max(0.0).sqrt();
    (me, se)
}
