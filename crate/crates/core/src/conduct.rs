//! Bertrand-Nash marginal-cost recovery and input allocation shares.
//!
//! With mean utility `mu_j = -alpha p_j + eta_j` the nested-logit share map
//! gives
//!
//! ```text
//! d ln s_j / d mu_k = [j == k] / sigma
//!                     - (1 - sigma) / sigma * s_{k|g} * [g(j) == g(k)]
//!                     - s_k
//! ```
//!
//! and `d/dp_k = -alpha * d/dmu_k`. A plant choosing log prices to maximize
//! `sum_j (P_j - mc_j) q_j = I_h * sum_j nu_j s_j` has first-order
//! conditions `(J_plant - diag(s_plant)) nu = -s_plant` in the Lerner
//! indices `nu_j = 1 - mc_j / P_j`, where `J[k][j] = ds_j/dp_k`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::demand::is_admissible;
use crate::error::{Error, Result};
use crate::panel::{Panel, ProductCode};
use crate::shares::ShareTable;

/// Level-share Jacobian of one market: `matrix[(k, j)] = ds_j / dp_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareJacobian {
    pub market: String,
    pub year: i32,
    pub products: Vec<String>,
    pub matrix: DMatrix<f64>,
}

fn check_inputs(alpha: f64, sigma: f64, shares: &[f64], within: &[f64]) -> Result<()> {
    if !is_admissible(alpha, sigma) {
        return Err(Error::Inadmissible { alpha, sigma });
    }
    for (&s, &w) in shares.iter().zip(within) {
        if !(s > 0.0 && s < 1.0) || !(w > 0.0 && w <= 1.0) {
            return Err(Error::BoundaryShares(format!("share {s}, within-nest share {w}")));
        }
    }
    Ok(())
}

/// `ds_j/dp_k` for every ordered pair of the given products.
pub fn share_derivatives(
    alpha: f64,
    sigma: f64,
    shares: &[f64],
    within: &[f64],
    nests: &[usize],
) -> Result<DMatrix<f64>> {
    check_inputs(alpha, sigma, shares, within)?;
    let outside: f64 = 1.0 - shares.iter().sum::<f64>();
    if !(outside > 0.0) {
        return Err(Error::BoundaryShares(format!("outside share {outside}")));
    }
    Ok(derivative_block(alpha, sigma, shares, within, nests))
}

fn derivative_block(alpha: f64, sigma: f64, shares: &[f64], within: &[f64], nests: &[usize]) -> DMatrix<f64> {
    let n = shares.len();
    let nest_term = (1.0 - sigma) / sigma;
    DMatrix::from_fn(n, n, |k, j| {
        let mut dlog = -shares[k];
        if nests[j] == nests[k] {
            dlog -= nest_term * within[k];
        }
        if j == k {
            dlog += 1.0 / sigma;
        }
        shares[j] * (-alpha) * dlog
    })
}

/// Full-market Jacobian from a share table market cell.
pub fn market_jacobian(alpha: f64, sigma: f64, table: &ShareTable, market: &str, year: i32) -> Result<ShareJacobian> {
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.year == year && r.product.market3() == market)
        .collect();
    let shares: Vec<f64> = rows.iter().map(|r| r.share()).collect();
    let within: Vec<f64> = rows.iter().map(|r| r.share_within()).collect();
    let nests = nest_labels(rows.iter().map(|r| &r.product));
    let matrix = share_derivatives(alpha, sigma, &shares, &within, &nests)?;
    Ok(ShareJacobian {
        market: market.to_string(),
        year,
        products: rows
            .iter()
            .map(|r| format!("{}:{}", r.plant_id, r.product))
            .collect(),
        matrix,
    })
}

pub(crate) fn nest_labels<'a>(codes: impl Iterator<Item = &'a ProductCode>) -> Vec<usize> {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    codes
        .map(|c| {
            let next = map.len();
            *map.entry(c.nest5()).or_insert(next)
        })
        .collect()
}

/// Solve one plant block of the FOC system for its Lerner indices.
/// Returns `None` when the block is singular; otherwise the Lerner vector
/// and the max-norm residual of the linear solve.
pub fn lerner_block(
    alpha: f64,
    sigma: f64,
    shares: &[f64],
    within: &[f64],
    nests: &[usize],
) -> Option<(Vec<f64>, f64)> {
    let n = shares.len();
    let mut a = derivative_block(alpha, sigma, shares, within, nests);
    for k in 0..n {
        a[(k, k)] -= shares[k];
    }
    let rhs = DVector::from_iterator(n, shares.iter().map(|s| -s));
    let lu = a.clone().lu();
    let nu = lu.solve(&rhs)?;
    if nu.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let residual = (&a * &nu - &rhs).amax();
    Some((nu.iter().copied().collect(), residual))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostFlag {
    Ok,
    /// Lerner index outside (0, 1); row kept.
    LernerOutOfRange,
}

impl CostFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CostFlag::Ok => "ok",
            CostFlag::LernerOutOfRange => "lerner_out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostAllocation {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    pub mc: f64,
    pub lerner: f64,
    /// Input allocation share; NaN until [`input_allocation_shares`] runs or
    /// when the plant-year has a non-positive marginal cost.
    pub s: f64,
    pub flag: CostFlag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub rows: Vec<CostAllocation>,
    /// Largest linear-solver residual over plant blocks.
    pub max_solver_residual: f64,
}

impl CostTable {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flag != CostFlag::Ok).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("plant_id,year,product_code,mc,lerner,S,flag\n");
        for r in &self.rows {
            let share = if r.s.is_finite() { r.s.to_string() } else { String::new() };
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.plant_id,
                r.year,
                r.product,
                r.mc,
                r.lerner,
                share,
                r.flag.as_str()
            ));
        }
        s
    }
}

/// Recover marginal costs for every row of the share table from the
/// plant-by-market FOC blocks.
pub fn recover_marginal_costs(alpha: f64, sigma: f64, table: &ShareTable) -> Result<CostTable> {
    if !is_admissible(alpha, sigma) {
        return Err(Error::Inadmissible { alpha, sigma });
    }
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut max_residual: f64 = 0.0;
    // Share-table rows are ordered by (market, year, plant, product) so
    // plant blocks are contiguous.
    let mut start = 0;
    while start < table.rows.len() {
        let first = &table.rows[start];
        let mut end = start + 1;
        while end < table.rows.len() {
            let r = &table.rows[end];
            if r.year != first.year || r.plant_id != first.plant_id || r.product.market3() != first.product.market3() {
                break;
            }
            end += 1;
        }
        let block = &table.rows[start..end];
        let shares: Vec<f64> = block.iter().map(|r| r.share()).collect();
        let within: Vec<f64> = block.iter().map(|r| r.share_within()).collect();
        check_inputs(alpha, sigma, &shares, &within)?;
        let nests = nest_labels(block.iter().map(|r| &r.product));
        let (nu, residual) =
            lerner_block(alpha, sigma, &shares, &within, &nests).ok_or_else(|| Error::ConductInversion {
                plant: first.plant_id.clone(),
                market: first.product.market3().to_string(),
                year: first.year,
            })?;
        max_residual = max_residual.max(residual);
        for (r, &v) in block.iter().zip(&nu) {
            let price = r.log_price.exp();
            rows.push(CostAllocation {
                plant_id: r.plant_id.clone(),
                year: r.year,
                product: r.product.clone(),
                mc: price * (1.0 - v),
                lerner: v,
                s: f64::NAN,
                flag: if v > 0.0 && v < 1.0 {
                    CostFlag::Ok
                } else {
                    CostFlag::LernerOutOfRange
                },
            });
        }
        start = end;
    }
    rows.sort_by(|a, b| (&a.plant_id, a.year, &a.product).cmp(&(&b.plant_id, b.year, &b.product)));
    Ok(CostTable {
        rows,
        max_solver_residual: max_residual,
    })
}

/// `S_j = mc_j Y_j / sum_k mc_k Y_k` over each plant-year's products.
/// Plant-years with any non-positive marginal cost keep `S = NaN`.
pub fn input_allocation_shares(costs: &mut CostTable, panel: &Panel) -> Result<()> {
    let quantity: BTreeMap<(&str, i32, &ProductCode), f64> = panel
        .observations()
        .iter()
        .map(|o| ((o.plant_id.as_str(), o.year, &o.product), o.quantity))
        .collect();
    let mut missing = Vec::new();
    let mut weights = Vec::with_capacity(costs.rows.len());
    for r in &costs.rows {
        match quantity.get(&(r.plant_id.as_str(), r.year, &r.product)) {
            Some(&y) => weights.push(r.mc * y),
            None => {
                missing.push(format!("{}/{}/{}", r.plant_id, r.year, r.product));
                weights.push(f64::NAN);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Join(missing));
    }
    let mut start = 0;
    while start < costs.rows.len() {
        let mut end = start + 1;
        while end < costs.rows.len()
            && costs.rows[end].plant_id == costs.rows[start].plant_id
            && costs.rows[end].year == costs.rows[start].year
        {
            end += 1;
        }
        let w = &weights[start..end];
        let ok = w.iter().all(|&v| v > 0.0 && v.is_finite());
        let total: f64 = w.iter().sum();
        for i in start..end {
            costs.rows[i].s = if ok { weights[i] / total } else { f64::NAN };
        }
        start = end;
    }
    Ok(())
}

/// Plain Eq.-2 arithmetic on a list of `mc * Y` pairs.
pub fn allocation_from(mc: &[f64], quantity: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = mc.iter().zip(quantity).map(|(m, y)| m * y).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_arithmetic() {
        assert_eq!(allocation_from(&[2.0], &[5.0]), vec![1.0]);
        assert_eq!(allocation_from(&[1.0, 2.0], &[2.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(allocation_from(&[1.0, 1.0], &[1.0, 3.0]), vec![0.25, 0.75]);
    }

    #[test]
    fn allocation_is_scale_free() {
        let mc = [1.3, 0.7, 2.2];
        let q = [4.0, 9.0, 1.5];
        let scaled: Vec<f64> = mc.iter().map(|m| m * 3.7).collect();
        let a = allocation_from(&mc, &q);
        let b = allocation_from(&scaled, &q);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_pair_gives_symmetric_jacobian() {
        let j = share_derivatives(0.5, 0.4, &[0.2, 0.2], &[0.5, 0.5], &[0, 0]).unwrap();
        assert!((j[(0, 1)] - j[(1, 0)]).abs() < 1e-15);
        assert!((j[(0, 0)] - j[(1, 1)]).abs() < 1e-15);
    }

    #[test]
    fn sigma_one_limit_is_plain_logit_cross_term() {
        let s = [0.1, 0.3];
        let w = [0.25, 0.75];
        let j = derivative_block(0.7, 1.0, &s, &w, &[0, 0]);
        // ds_1/dp_0 = s_1 * (-alpha) * (-s_0)
        assert!((j[(0, 1)] - 0.3 * 0.7 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn boundary_and_inadmissible_inputs_are_rejected() {
        assert!(matches!(
            share_derivatives(0.5, 0.4, &[1.0], &[1.0], &[0]),
            Err(Error::BoundaryShares(_))
        ));
        assert!(matches!(
            share_derivatives(-0.5, 0.4, &[0.2], &[1.0], &[0]),
            Err(Error::Inadmissible { .. })
        ));
    }

    #[test]
    fn single_product_own_nest_lerner() {
        let (nu, _) = lerner_block(0.5, 0.4, &[0.3], &[1.0], &[0]).unwrap();
        assert!((nu[0] - 1.0 / (1.0 + 0.5 * 0.7)).abs() < 1e-14);
    }
}
