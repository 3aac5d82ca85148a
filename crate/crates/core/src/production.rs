//! Product-level Cobb-Douglas production function by linear GMM.
//!
//! Plant inputs are split across products with the allocation shares from
//! [`crate::conduct`], then `y = beta_L l + beta_K k + beta_M m (+ c)` is
//! estimated by two-step GMM with plant-clustered optimal weighting.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::conduct::CostTable;
use crate::error::{Error, Result};
use crate::instruments::InstrumentTable;
use crate::linalg::{self, Basis};
use crate::panel::{Panel, ProductCode};

#[derive(Debug, Clone, PartialEq)]
pub struct ProductInputRow {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    /// ln quantity
    pub y: f64,
    pub l: f64,
    pub k: f64,
    pub m: f64,
    pub ln_revenue: f64,
    pub s: f64,
    pub m_lag: Option<f64>,
    pub z: Option<f64>,
    pub z_lag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductInputTable {
    pub rows: Vec<ProductInputRow>,
    /// Plant-years skipped because their allocation shares were undefined.
    pub skipped_plant_years: usize,
}

/// Apply allocation shares to plant inputs. Instruments are attached when
/// given; `m_lag` links each product to its own previous-year row.
pub fn build_product_inputs(
    panel: &Panel,
    costs: &CostTable,
    instruments: Option<&InstrumentTable>,
) -> Result<ProductInputTable> {
    let share: BTreeMap<(&str, i32, &ProductCode), f64> = costs
        .rows
        .iter()
        .map(|r| ((r.plant_id.as_str(), r.year, &r.product), r.s))
        .collect();
    let mut missing = BTreeSet::new();
    let mut skipped = BTreeSet::new();
    let mut rows = Vec::with_capacity(panel.observations().len());
    for o in panel.observations() {
        let Some(&s) = share.get(&(o.plant_id.as_str(), o.year, &o.product)) else {
            missing.insert(format!("{}/{}", o.plant_id, o.year));
            continue;
        };
        if !s.is_finite() {
            skipped.insert((o.plant_id.as_str(), o.year));
            continue;
        }
        let totals = panel
            .input_totals(&o.plant_id, o.year)
            .ok_or_else(|| Error::Join(vec![format!("{}/{} (plant inputs)", o.plant_id, o.year)]))?;
        let z = instruments.and_then(|t| t.get(o.product.nest5(), o.year));
        let z_lag = instruments.and_then(|t| t.get(o.product.nest5(), o.year - 1));
        rows.push(ProductInputRow {
            plant_id: o.plant_id.clone(),
            year: o.year,
            product: o.product.clone(),
            y: o.quantity.ln(),
            l: (s * totals.labor).ln(),
            k: (s * totals.capital).ln(),
            m: (s * totals.materials).ln(),
            ln_revenue: o.revenue.ln(),
            s,
            m_lag: None,
            z,
            z_lag,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Join(missing.into_iter().collect()));
    }
    let m_now: BTreeMap<(String, i32, ProductCode), f64> = rows
        .iter()
        .map(|r| ((r.plant_id.clone(), r.year, r.product.clone()), r.m))
        .collect();
    for r in &mut rows {
        r.m_lag = m_now.get(&(r.plant_id.clone(), r.year - 1, r.product.clone())).copied();
    }
    Ok(ProductInputTable {
        rows,
        skipped_plant_years: skipped.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcludedInstrument {
    Z,
    ZLag,
    MLag,
}

impl ExcludedInstrument {
    fn name(self) -> &'static str {
        match self {
            ExcludedInstrument::Z => "Z_t",
            ExcludedInstrument::ZLag => "Z_t-1",
            ExcludedInstrument::MLag => "m_t-1",
        }
    }

    fn value(self, r: &ProductInputRow) -> Option<f64> {
        match self {
            ExcludedInstrument::Z => r.z,
            ExcludedInstrument::ZLag => r.z_lag,
            ExcludedInstrument::MLag => r.m_lag,
        }
    }
}

/// Moment conditions: `l` and `k` instrument themselves, `m` is
/// instrumented by the excluded list.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub name: String,
    pub excluded: Vec<ExcludedInstrument>,
    pub constant: bool,
}

impl MomentSpec {
    pub fn col1() -> Self {
        MomentSpec {
            name: "col1".into(),
            excluded: vec![ExcludedInstrument::Z, ExcludedInstrument::ZLag, ExcludedInstrument::MLag],
            constant: true,
        }
    }

    pub fn col2() -> Self {
        MomentSpec {
            name: "col2".into(),
            excluded: vec![ExcludedInstrument::MLag],
            constant: true,
        }
    }

    pub fn col3() -> Self {
        MomentSpec {
            name: "col3".into(),
            excluded: vec![ExcludedInstrument::Z, ExcludedInstrument::ZLag],
            constant: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "col1" => Ok(Self::col1()),
            "col2" => Ok(Self::col2()),
            "col3" => Ok(Self::col3()),
            other => Err(Error::Config(format!("unknown GMM preset `{other}` (expected col1, col2 or col3)"))),
        }
    }

    pub fn label(&self) -> String {
        let names: Vec<&str> = self.excluded.iter().map(|e| e.name()).collect();
        format!("{}[m~{};constant={}]", self.name, names.join("+"), self.constant)
    }
}

/// Stacked GMM design.
#[derive(Debug, Clone)]
pub struct GmmDesign {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub cluster: Vec<usize>,
    pub n_clusters: usize,
}

impl GmmDesign {
    pub fn build(table: &ProductInputTable, spec: &MomentSpec) -> Result<Self> {
        let rows: Vec<(&ProductInputRow, Vec<f64>)> = table
            .rows
            .iter()
            .filter_map(|r| {
                spec.excluded
                    .iter()
                    .map(|e| e.value(r))
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| (r, v))
            })
            .collect();
        let n = rows.len();
        let c = usize::from(spec.constant);
        let p = c + 3;
        let q = c + 2 + spec.excluded.len();
        if q < p {
            return Err(Error::Identification {
                instruments: spec.excluded.len(),
                endogenous: 1,
            });
        }
        if n <= q {
            return Err(Error::Validation(format!(
                "GMM sample has {n} rows for {q} moment conditions"
            )));
        }
        let y = DVector::from_iterator(n, rows.iter().map(|(r, _)| r.y));
        let x = DMatrix::from_fn(n, p, |i, j| match j + 1 - c {
            0 => 1.0,
            1 => rows[i].0.l,
            2 => rows[i].0.k,
            _ => rows[i].0.m,
        });
        let z = DMatrix::from_fn(n, q, |i, j| match j + 1 - c {
            0 => 1.0,
            1 => rows[i].0.l,
            2 => rows[i].0.k,
            e => rows[i].1[e - 3],
        });
        let mut x_names: Vec<String> = Vec::new();
        if spec.constant {
            x_names.push("const".into());
        }
        x_names.extend(["l", "k", "m"].map(String::from));
        let mut z_names = x_names[..c + 2].to_vec();
        z_names.extend(spec.excluded.iter().map(|e| e.name().to_string()));
        let plants: Vec<&str> = rows.iter().map(|(r, _)| r.plant_id.as_str()).collect();
        let (cluster, n_clusters) = linalg::dense_index(&plants);
        Ok(GmmDesign {
            y,
            x,
            z,
            x_names,
            z_names,
            cluster,
            n_clusters,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `g(b)' W g(b)` with `g(b) = Z'(y - X b)`.
    pub fn objective(&self, weight: &DMatrix<f64>, coef: &DVector<f64>) -> f64 {
        let g = self.z.transpose() * (&self.y - &self.x * coef);
        (g.transpose() * weight * &g)[(0, 0)]
    }

    fn solve(&self, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
        let zx = self.z.transpose() * &self.x;
        let zy = self.z.transpose() * &self.y;
        let a = zx.transpose() * weight * &zx;
        let b = zx.transpose() * weight * zy;
        let sol = linalg::solve_sym(&a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(sol.column(0).into_owned())
    }

    /// Plant-clustered sum of moment outer products at residuals `e`.
    fn moment_covariance(&self, e: &DVector<f64>) -> DMatrix<f64> {
        let scores = DMatrix::from_fn(self.n(), self.z.ncols(), |i, j| self.z[(i, j)] * e[i]);
        linalg::cluster_meat(&scores, &self.cluster, self.n_clusters)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionEstimate {
    pub preset: String,
    pub spec_label: String,
    /// `(beta_L, beta_K, beta_M)`.
    pub beta: [f64; 3],
    pub constant: Option<f64>,
    /// Full coefficient vector in design order.
    pub coef: DVector<f64>,
    /// Analytic covariance of `(beta_L, beta_K, beta_M)`.
    pub vcov_analytic: DMatrix<f64>,
    pub se_bootstrap: Option<[f64; 3]>,
    /// Hansen J; `None` when just identified.
    pub j_stat: Option<f64>,
    pub n_obs: usize,
    /// Ridge added to the moment covariance before inversion (0 if none).
    pub ridge: f64,
    /// Second-step weighting matrix.
    pub weight: DMatrix<f64>,
}

impl ProductionEstimate {
    pub fn se_analytic(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.vcov_analytic[(i, i)].sqrt())
    }

    pub fn csv_header() -> &'static str {
        "preset,parameter,estimate,se_analytic,se_bootstrap,j_stat,n_obs,ridge"
    }

    pub fn csv_rows(&self) -> String {
        let se = self.se_analytic();
        let j = self.j_stat.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::new();
        for (i, name) in ["beta_L", "beta_K", "beta_M"].iter().enumerate() {
            let boot = self.se_bootstrap.map(|b| b[i].to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.preset, name, self.beta[i], se[i], boot, j, self.n_obs, self.ridge
            ));
        }
        if let Some(c) = self.constant {
            s.push_str(&format!("{},const,{},,,{},{},{}\n", self.preset, c, j, self.n_obs, self.ridge));
        }
        s
    }
}

/// Invert a symmetric PSD matrix, adding the smallest ridge (in powers of
/// ten, relative to the mean diagonal) that makes it positive definite.
fn ridge_inverse(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let sym = linalg::symmetrize(s);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok((linalg::symmetrize(&ch.inverse()), 0.0));
    }
    let scale = sym.trace().abs() / sym.nrows() as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut ridge = scale * 1e-12;
    while ridge < scale {
        let repaired = &sym + DMatrix::identity(sym.nrows(), sym.nrows()) * ridge;
        if let Some(ch) = repaired.cholesky() {
            return Ok((linalg::symmetrize(&ch.inverse()), ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical("moment covariance could not be repaired".into()))
}

pub fn estimate_gmm(table: &ProductInputTable, spec: &MomentSpec) -> Result<ProductionEstimate> {
    let d = GmmDesign::build(table, spec)?;
    let zb = Basis::new(&d.z);
    if !zb.collinear.is_empty() {
        return Err(Error::SingularDesign(zb.collinear.iter().map(|&i| d.z_names[i].clone()).collect()));
    }
    let xb = Basis::new(&d.x);
    if !xb.collinear.is_empty() {
        return Err(Error::SingularDesign(xb.collinear.iter().map(|&i| d.x_names[i].clone()).collect()));
    }
    let w1 = linalg::inverse_sym(&(d.z.transpose() * &d.z))?;
    let b1 = d.solve(&w1)?;
    let e1 = &d.y - &d.x * &b1;
    let (w2, ridge) = ridge_inverse(&d.moment_covariance(&e1))?;
    let coef = d.solve(&w2)?;
    let zx = d.z.transpose() * &d.x;
    let vcov = linalg::inverse_sym(&(zx.transpose() * &w2 * &zx))?;
    let c = usize::from(spec.constant);
    let just_identified = d.z.ncols() == d.x.ncols();
    let j_stat = (!just_identified).then(|| d.objective(&w2, &coef));
    Ok(ProductionEstimate {
        preset: spec.name.clone(),
        spec_label: spec.label(),
        beta: [coef[c], coef[c + 1], coef[c + 2]],
        constant: spec.constant.then(|| coef[0]),
        vcov_analytic: vcov.view((c, c), (3, 3)).into_owned(),
        coef,
        se_bootstrap: None,
        j_stat,
        n_obs: d.n(),
        ridge,
        weight: w2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BootstrapMode {
    /// Resample plants and rerun the whole pipeline.
    Nonparametric,
    /// Also draw `(alpha, sigma)` from `N(center, vcov)` each replication.
    SemiParametric { alpha: f64, sigma: f64, vcov: Matrix2<f64> },
}

impl BootstrapMode {
    pub fn label(&self) -> &'static str {
        match self {
            BootstrapMode::Nonparametric => "nonparametric",
            BootstrapMode::SemiParametric { .. } => "semi-parametric",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    /// Per replication: the parameter vector, or `None` if it failed.
    pub draws: Vec<Option<Vec<f64>>>,
    pub se: Vec<f64>,
    pub failed: usize,
}

impl BootstrapResult {
    pub fn draws_csv(&self) -> String {
        let mut s = String::from("replication,parameter,value\n");
        for (r, d) in self.draws.iter().enumerate() {
            match d {
                Some(v) => {
                    for (name, x) in self.names.iter().zip(v) {
                        s.push_str(&format!("{r},{name},{x}\n"));
                    }
                }
                None => s.push_str(&format!("{r},failed,\n")),
            }
        }
        s
    }
}

/// Per-replication seeds derived from one master seed.
pub fn replication_seeds(seed: u64, b: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b).map(|_| rng.random()).collect()
}

/// Plant block bootstrap. `pipeline` maps a resampled panel and an optional
/// demand override to a parameter vector named by `names`.
pub fn block_bootstrap<F>(
    panel: &Panel,
    pipeline: F,
    names: &[String],
    b: usize,
    seed: u64,
    mode: BootstrapMode,
) -> Result<BootstrapResult>
where
    F: Fn(&Panel, Option<(f64, f64)>) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replications".into()));
    }
    block_bootstrap_with_seeds(panel, pipeline, names, &replication_seeds(seed, b), mode)
}

/// As [`block_bootstrap`] with an explicit seed per replication.
pub fn block_bootstrap_with_seeds<F>(
    panel: &Panel,
    pipeline: F,
    names: &[String],
    seeds: &[u64],
    mode: BootstrapMode,
) -> Result<BootstrapResult>
where
    F: Fn(&Panel, Option<(f64, f64)>) -> Result<Vec<f64>> + Sync,
{
    let b = seeds.len();
    if b < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replications".into()));
    }
    let plants = panel.plant_ids();
    if plants.is_empty() {
        return Err(Error::Validation("bootstrap on an empty panel".into()));
    }
    let chol = match mode {
        BootstrapMode::SemiParametric { vcov, .. } => {
            let (repaired, _) = linalg::psd_repair(&DMatrix::from_iterator(2, 2, vcov.iter().copied()));
            let eig = repaired.symmetric_eigen();
            let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            Some(root)
        }
        BootstrapMode::Nonparametric => None,
    };
    let draws: Vec<Option<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let picks: Vec<String> = (0..plants.len())
                .map(|_| plants[rng.random_range(0..plants.len())].clone())
                .collect();
            let demand = match (&mode, &chol) {
                (BootstrapMode::SemiParametric { alpha, sigma, .. }, Some(root)) => {
                    let z = DVector::from_iterator(2, (0..2).map(|_| StandardNormal.sample(&mut rng)));
                    let d = root * z;
                    let draw = (alpha + d[0], sigma + d[1]);
                    if !crate::demand::is_admissible(draw.0, draw.1) {
                        return None;
                    }
                    Some(draw)
                }
                _ => None,
            };
            let resampled = panel.resample_plants(&picks);
            pipeline(&resampled, demand).ok().filter(|v| v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 5 > b {
        return Err(Error::BootstrapDegenerate { failed, total: b });
    }
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::BootstrapDegenerate { failed, total: b });
    }
    let se = (0..names.len())
        .map(|j| {
            let n = ok.len() as f64;
            let mean = ok.iter().map(|v| v[j]).sum::<f64>() / n;
            (ok.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        names: names.to_vec(),
        draws,
        se,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(plant: &str, y: f64, l: f64, k: f64, m: f64, z: f64, zl: f64) -> ProductInputRow {
        ProductInputRow {
            plant_id: plant.into(),
            year: 2001,
            product: ProductCode::parse("10000", "0123456789").unwrap(),
            y,
            l,
            k,
            m,
            ln_revenue: y,
            s: 1.0,
            m_lag: None,
            z: Some(z),
            z_lag: Some(zl),
        }
    }

    #[test]
    fn presets_parse() {
        assert_eq!(MomentSpec::preset("col3").unwrap().excluded.len(), 2);
        assert!(matches!(MomentSpec::preset("col9"), Err(Error::Config(_))));
    }

    #[test]
    fn exact_fit_is_recovered() {
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let f = i as f64;
                let (l, k, z, zl) = ((f * 0.7).sin(), (f * 1.3).cos(), (f * 0.37).sin(), (f * 0.91).cos());
                let m = 0.5 * z + 0.3 * zl + 0.1 * l;
                row(&format!("p{}", i % 9), 0.6 * l + 0.2 * k + 0.2 * m + 1.0, l, k, m, z, zl)
            })
            .collect();
        let t = ProductInputTable {
            rows,
            skipped_plant_years: 0,
        };
        let est = estimate_gmm(&t, &MomentSpec::col3()).unwrap();
        for (b, truth) in est.beta.iter().zip([0.6, 0.2, 0.2]) {
            assert!((b - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_covariance_gets_a_ridge() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (_, ridge) = ridge_inverse(&(&v * v.transpose())).unwrap();
        assert!(ridge > 0.0);
        let (_, none) = ridge_inverse(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(none, 0.0);
    }
}
