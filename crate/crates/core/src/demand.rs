//! Nested-logit demand by two-stage least squares.
//!
//! The estimating equation is
//!
//! ```text
//! rs_j - rs_0 = (1 - sigma) * rs_within - alpha * p + FE + eta
//! ```
//!
//! with `p` and `rs_within` instrumented by the nest-level input-price
//! growth instruments `Z_t` and `Z_{t-1}`. Fixed effects are absorbed by
//! projecting every variable off the dummy space before the IV step, so
//! reported coefficients and residuals match the full dummy regression.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::instruments::InstrumentTable;
use crate::linalg::{self, Basis};
use crate::shares::ShareTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedEffects {
    pub year: bool,
    pub market: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clustering {
    /// Plant and product (nest5) clusters, combined by inclusion-exclusion.
    TwoWay,
    Plant,
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub fixed_effects: FixedEffects,
    /// Include `Z_{t-1}` alongside `Z_t`.
    pub lagged_instrument: bool,
    /// Add log nest product count as an extra excluded instrument.
    pub nest_count_instrument: bool,
    pub clustering: Clustering,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            fixed_effects: FixedEffects {
                year: true,
                market: true,
            },
            lagged_instrument: true,
            nest_count_instrument: false,
            clustering: Clustering::TwoWay,
        }
    }
}

impl DemandSpec {
    pub fn label(&self) -> String {
        format!(
            "fe_year={};fe_market={};z_lag={};nest_count_iv={};cluster={:?}",
            self.fixed_effects.year,
            self.fixed_effects.market,
            self.lagged_instrument,
            self.nest_count_instrument,
            self.clustering
        )
    }

    pub fn hash(&self) -> String {
        short_hash(&self.label())
    }
}

pub(crate) fn short_hash(s: &str) -> String {
    let digest = Sha256::digest(s.as_bytes());
    hex::encode(&digest[..8])
}

/// Linear IV design with named columns. `exog` holds the absorbed
/// controls (constant and dummies).
#[derive(Debug, Clone)]
pub struct IvDesign {
    pub y: DVector<f64>,
    pub endog: DMatrix<f64>,
    pub excluded: DMatrix<f64>,
    pub exog: DMatrix<f64>,
    pub endog_names: Vec<String>,
    pub excluded_names: Vec<String>,
    pub exog_names: Vec<String>,
    pub plant_cluster: Vec<usize>,
    pub product_cluster: Vec<usize>,
}

impl IvDesign {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn with_exog_column(mut self, name: &str, values: &[f64]) -> Self {
        let n = self.n();
        let k = self.exog.ncols();
        let mut m = self.exog.resize_horizontally(k + 1, 0.0);
        for i in 0..n {
            m[(i, k)] = values[i];
        }
        self.exog = m;
        self.exog_names.push(name.to_string());
        self
    }
}

/// Variables after absorbing the exogenous controls.
struct Partialled {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z_basis: Basis,
    k_exog: usize,
}

fn partial_out(d: &IvDesign) -> Result<Partialled> {
    let w = Basis::new(&d.exog);
    if !w.collinear.is_empty() {
        return Err(Error::SingularDesign(
            w.collinear.iter().map(|&j| d.exog_names[j].clone()).collect(),
        ));
    }
    let x = w.residualize(&d.endog);
    let z = w.residualize(&d.excluded);
    let y = w.residualize_vec(&d.y);
    // Columns fully explained by the controls are singular after absorbing.
    for (m, src, nm) in [(&x, &d.endog, &d.endog_names), (&z, &d.excluded, &d.excluded_names)] {
        for j in 0..m.ncols() {
            let orig = src.column(j).norm();
            if m.column(j).norm() <= 1e-10 * orig.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularDesign(vec![nm[j].clone()]));
            }
        }
    }
    let zb = Basis::new(&z);
    if !zb.collinear.is_empty() {
        return Err(Error::SingularDesign(
            zb.collinear.iter().map(|&j| d.excluded_names[j].clone()).collect(),
        ));
    }
    let xb = Basis::new(&x);
    if !xb.collinear.is_empty() {
        return Err(Error::SingularDesign(
            xb.collinear.iter().map(|&j| d.endog_names[j].clone()).collect(),
        ));
    }
    Ok(Partialled {
        y,
        x,
        z_basis: zb,
        k_exog: w.rank(),
    })
}

#[derive(Debug, Clone)]
pub struct IvFit {
    /// Coefficients on the endogenous regressors, in design order.
    pub coef: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub resid: DVector<f64>,
    pub psd_repaired: bool,
    pub n: usize,
    pub k_total: usize,
}

/// Clustered sandwich `q * B (sum_c s_c s_c') B` with the usual
/// `G/(G-1) * (N-1)/(N-K)` finite-sample factor.
fn clustered(bread: &DMatrix<f64>, scores: &DMatrix<f64>, cluster: &[usize], k_total: usize) -> DMatrix<f64> {
    let (idx, g) = linalg::dense_index(cluster);
    let n = scores.nrows() as f64;
    let meat = linalg::cluster_meat(scores, &idx, g);
    let g = g as f64;
    let q = if g > 1.0 {
        g / (g - 1.0) * (n - 1.0) / (n - k_total as f64)
    } else {
        1.0
    };
    bread * meat * bread * q
}

fn intersection(a: &[usize], b: &[usize]) -> Vec<(usize, usize)> {
    a.iter().copied().zip(b.iter().copied()).collect()
}

fn cluster_vcov(
    bread: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    d: &IvDesign,
    clustering: Clustering,
    k_total: usize,
) -> (DMatrix<f64>, bool) {
    let v = match clustering {
        Clustering::Plant => clustered(bread, scores, &d.plant_cluster, k_total),
        Clustering::Product => clustered(bread, scores, &d.product_cluster, k_total),
        Clustering::TwoWay => {
            let inter = intersection(&d.plant_cluster, &d.product_cluster);
            let (inter_idx, _) = linalg::dense_index(&inter);
            clustered(bread, scores, &d.plant_cluster, k_total)
                + clustered(bread, scores, &d.product_cluster, k_total)
                - clustered(bread, scores, &inter_idx, k_total)
        }
    };
    linalg::psd_repair(&v)
}

/// Two-stage least squares on an [`IvDesign`].
pub fn two_sls(d: &IvDesign, clustering: Clustering) -> Result<IvFit> {
    let k = d.endog.ncols();
    if d.excluded.ncols() < k {
        return Err(Error::Identification {
            instruments: d.excluded.ncols(),
            endogenous: k,
        });
    }
    let p = partial_out(d)?;
    let xhat = p.z_basis.project(&p.x);
    let xtx = xhat.transpose() * &xhat;
    let bread = linalg::inverse_sym(&xtx)?;
    let coef = &bread * (xhat.transpose() * &p.y);
    let resid = &p.y - &p.x * &coef;
    let k_total = k + p.k_exog;
    let scores = DMatrix::from_fn(d.n(), k, |i, j| xhat[(i, j)] * resid[i]);
    let (vcov, psd_repaired) = cluster_vcov(&bread, &scores, d, clustering, k_total);
    Ok(IvFit {
        coef,
        vcov,
        resid,
        psd_repaired,
        n: d.n(),
        k_total,
    })
}

/// Plain least squares treating the endogenous regressors as exogenous.
pub fn ols_fit(d: &IvDesign, clustering: Clustering) -> Result<IvFit> {
    let w = Basis::new(&d.exog);
    let x = w.residualize(&d.endog);
    let y = w.residualize_vec(&d.y);
    let xtx = x.transpose() * &x;
    let bread = linalg::inverse_sym(&xtx)?;
    let coef = &bread * (x.transpose() * &y);
    let resid = &y - &x * &coef;
    let k = x.ncols();
    let k_total = k + w.rank();
    let scores = DMatrix::from_fn(d.n(), k, |i, j| x[(i, j)] * resid[i]);
    let (vcov, psd_repaired) = cluster_vcov(&bread, &scores, d, clustering, k_total);
    Ok(IvFit {
        coef,
        vcov,
        resid,
        psd_repaired,
        n: d.n(),
        k_total,
    })
}

/// Sanderson-Windmeijer conditional first-stage F statistics, one per
/// endogenous regressor.
pub fn sw_first_stage_f(d: &IvDesign) -> Result<Vec<f64>> {
    let k = d.endog.ncols();
    let l = d.excluded.ncols();
    if k == 0 {
        return Err(Error::UndefinedStatistic("no endogenous regressors".into()));
    }
    let dof_num = l as i64 - k as i64 + 1;
    if dof_num <= 0 {
        return Err(Error::UndefinedStatistic(format!(
            "degrees of freedom {l} - {k} + 1 is not positive"
        )));
    }
    let p = partial_out(d)?;
    let n = d.n() as i64;
    let dof_den = n - l as i64 - p.k_exog as i64;
    if dof_den <= 0 {
        return Err(Error::UndefinedStatistic("too few observations".into()));
    }
    let mut out = Vec::with_capacity(k);
    for e in 0..k {
        let xe = p.x.column(e).into_owned();
        let resid = if k == 1 {
            xe
        } else {
            let others = p.x.clone().remove_column(e);
            let oh = p.z_basis.project(&others);
            let g = oh.transpose() * &oh;
            let rhs = oh.transpose() * &xe;
            let delta = linalg::solve_sym(&g, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
            &xe - &others * delta.column(0)
        };
        let fitted = p.z_basis.project(&DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()));
        let explained = fitted.column(0).norm_squared();
        let unexplained = (&resid - fitted.column(0)).norm_squared();
        let f = (explained / dof_num as f64) / (unexplained / dof_den as f64);
        out.push(f.max(0.0));
    }
    Ok(out)
}

/// Ordinary first-stage F for one endogenous regressor, by restricted vs
/// unrestricted residual sums of squares.
pub fn first_stage_f(x: &DVector<f64>, excluded: &DMatrix<f64>, exog: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    let l = excluded.ncols();
    let kw = exog.ncols();
    let (_, r_restricted) = linalg::ols(x, exog)?;
    let mut full = exog.clone().resize_horizontally(kw + l, 0.0);
    full.columns_mut(kw, l).copy_from(excluded);
    let (_, r_full) = linalg::ols(x, &full)?;
    let rss_r = r_restricted.norm_squared();
    let rss_u = r_full.norm_squared();
    Ok(((rss_r - rss_u) / l as f64) / (rss_u / (n - l - kw) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandEstimate {
    pub alpha: f64,
    pub one_minus_sigma: f64,
    pub sigma: f64,
    /// Covariance of `(alpha, sigma)`; equal to that of the coefficients on
    /// `(p, rs_within)` since both sign flips cancel.
    pub vcov: Option<Matrix2<f64>>,
    pub f_p: Option<f64>,
    pub f_rs: Option<f64>,
    pub n_obs: usize,
    pub admissible: bool,
    pub psd_repaired: bool,
    /// Structural residual per estimation-sample row.
    pub residuals: Vec<f64>,
    /// Indices of the estimation sample in the share table.
    pub sample: Vec<usize>,
    pub spec_hash: String,
    pub calibrated: bool,
}

impl DemandEstimate {
    /// Demand fixed at externally supplied parameters.
    pub fn calibrated(alpha: f64, sigma: f64, n_obs: usize) -> Self {
        DemandEstimate {
            alpha,
            one_minus_sigma: 1.0 - sigma,
            sigma,
            vcov: None,
            f_p: None,
            f_rs: None,
            n_obs,
            admissible: is_admissible(alpha, sigma),
            psd_repaired: false,
            residuals: Vec::new(),
            sample: Vec::new(),
            spec_hash: short_hash(&format!("calibrated;alpha={alpha};sigma={sigma}")),
            calibrated: true,
        }
    }

    pub fn alpha_se(&self) -> Option<f64> {
        self.vcov.map(|v| v[(0, 0)].sqrt())
    }

    pub fn sigma_se(&self) -> Option<f64> {
        self.vcov.map(|v| v[(1, 1)].sqrt())
    }

    pub fn price_coefficient(&self) -> f64 {
        -self.alpha
    }

    pub fn csv_header() -> &'static str {
        "spec_hash,calibrated,alpha,alpha_se,price_coef,one_minus_sigma,sigma,sigma_se,cov_alpha_sigma,f_p,f_rs,n_obs,admissible,psd_repaired"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.spec_hash,
            self.calibrated,
            self.alpha,
            opt(self.alpha_se()),
            self.price_coefficient(),
            self.one_minus_sigma,
            self.sigma,
            opt(self.sigma_se()),
            opt(self.vcov.map(|v| v[(0, 1)])),
            opt(self.f_p),
            opt(self.f_rs),
            self.n_obs,
            self.admissible,
            self.psd_repaired
        )
    }
}

pub fn is_admissible(alpha: f64, sigma: f64) -> bool {
    alpha > 0.0 && sigma > 0.0 && sigma < 1.0
}

pub fn check_admissibility(est: &DemandEstimate) -> bool {
    is_admissible(est.alpha, est.sigma)
}

/// Rows of the share table that have every instrument the spec needs.
pub fn demand_sample(shares: &ShareTable, instruments: &InstrumentTable, spec: &DemandSpec) -> Vec<usize> {
    shares
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let g = r.product.nest5();
            instruments.get(g, r.year).is_some()
                && (!spec.lagged_instrument || instruments.get(g, r.year - 1).is_some())
        })
        .map(|(i, _)| i)
        .collect()
}

/// Build the IV design for the demand equation, returning it together with
/// the share-table rows it uses.
pub fn assemble_design(
    shares: &ShareTable,
    instruments: &InstrumentTable,
    spec: &DemandSpec,
) -> Result<(IvDesign, Vec<usize>)> {
    let sample = demand_sample(shares, instruments, spec);
    let n = sample.len();
    if n == 0 {
        return Err(Error::Identification {
            instruments: 0,
            endogenous: 2,
        });
    }
    let rows: Vec<_> = sample.iter().map(|&i| &shares.rows[i]).collect();

    let y = DVector::from_iterator(n, rows.iter().map(|r| r.rs_j - r.rs_0));
    let endog = DMatrix::from_fn(n, 2, |i, j| if j == 0 { rows[i].log_price } else { rows[i].rs_within });
    let endog_names = vec!["p".to_string(), "rs_within".to_string()];

    let mut excl_cols: Vec<Vec<f64>> = vec![rows
        .iter()
        .map(|r| instruments.get(r.product.nest5(), r.year).unwrap())
        .collect()];
    let mut excluded_names = vec!["Z_t".to_string()];
    if spec.lagged_instrument {
        excl_cols.push(
            rows.iter()
                .map(|r| instruments.get(r.product.nest5(), r.year - 1).unwrap())
                .collect(),
        );
        excluded_names.push("Z_t-1".to_string());
    }
    if spec.nest_count_instrument {
        let mut counts: BTreeMap<(&str, i32), usize> = BTreeMap::new();
        for r in &shares.rows {
            *counts.entry((r.product.nest5(), r.year)).or_default() += 1;
        }
        excl_cols.push(
            rows.iter()
                .map(|r| (counts[&(r.product.nest5(), r.year)] as f64).ln())
                .collect(),
        );
        excluded_names.push("ln_nest_count".to_string());
    }
    let excluded = linalg::from_columns(&excl_cols);

    let mut exog_cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut exog_names = vec!["const".to_string()];
    if spec.fixed_effects.year {
        let years: std::collections::BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
        for y in years.iter().skip(1) {
            exog_cols.push(rows.iter().map(|r| f64::from(u8::from(r.year == *y))).collect());
            exog_names.push(format!("year_{y}"));
        }
    }
    if spec.fixed_effects.market {
        let markets: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.product.market3()).collect();
        for m in markets.iter().skip(1) {
            exog_cols.push(
                rows.iter()
                    .map(|r| f64::from(u8::from(r.product.market3() == *m)))
                    .collect(),
            );
            exog_names.push(format!("market_{m}"));
        }
    }
    let exog = linalg::from_columns(&exog_cols);

    let plants: Vec<&str> = rows.iter().map(|r| r.plant_id.as_str()).collect();
    let products: Vec<&str> = rows.iter().map(|r| r.product.as_str()).collect();
    let (plant_cluster, _) = linalg::dense_index(&plants);
    let (product_cluster, _) = linalg::dense_index(&products);

    Ok((
        IvDesign {
            y,
            endog,
            excluded,
            exog,
            endog_names,
            excluded_names,
            exog_names,
            plant_cluster,
            product_cluster,
        },
        sample,
    ))
}

fn estimate_from_fit(fit: &IvFit, f: Option<(f64, f64)>, sample: Vec<usize>, spec: &DemandSpec) -> DemandEstimate {
    let alpha = -fit.coef[0];
    let one_minus_sigma = fit.coef[1];
    let sigma = 1.0 - one_minus_sigma;
    let v = Matrix2::new(fit.vcov[(0, 0)], fit.vcov[(0, 1)], fit.vcov[(1, 0)], fit.vcov[(1, 1)]);
    DemandEstimate {
        alpha,
        one_minus_sigma,
        sigma,
        vcov: Some(v),
        f_p: f.map(|f| f.0),
        f_rs: f.map(|f| f.1),
        n_obs: fit.n,
        admissible: is_admissible(alpha, sigma),
        psd_repaired: fit.psd_repaired,
        residuals: fit.resid.iter().copied().collect(),
        sample,
        spec_hash: spec.hash(),
        calibrated: false,
    }
}

pub fn estimate_demand_2sls(
    shares: &ShareTable,
    instruments: &InstrumentTable,
    spec: &DemandSpec,
) -> Result<DemandEstimate> {
    let (design, sample) = assemble_design(shares, instruments, spec)?;
    let fit = two_sls(&design, spec.clustering)?;
    let f = sw_first_stage_f(&design)?;
    Ok(estimate_from_fit(&fit, Some((f[0], f[1])), sample, spec))
}

/// Plain least squares on the same sample, for bias comparisons.
pub fn estimate_demand_ols(
    shares: &ShareTable,
    instruments: &InstrumentTable,
    spec: &DemandSpec,
) -> Result<DemandEstimate> {
    let (design, sample) = assemble_design(shares, instruments, spec)?;
    let fit = ols_fit(&design, spec.clustering)?;
    Ok(estimate_from_fit(&fit, None, sample, spec))
}
