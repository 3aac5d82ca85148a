mod common;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use prodloom::outcomes::{
    compute_tfpr, fit_probit, gain_bounds, marginal_effect_1sd, norm_cdf, probit_loglik, probit_score,
    MarginalEffectKind,
};
use prodloom::panel::ProductCode;
use prodloom::production::{estimate_gmm, MomentSpec, ProductInputRow, ProductInputTable};
use prodloom::Error;

use common::*;

fn row(plant: &str, code: &str, ln_revenue: f64, l: f64, k: f64, m: f64) -> ProductInputRow {
    ProductInputRow {
        plant_id: plant.into(),
        year: 2003,
        product: ProductCode::parse(code, "0123456789").unwrap(),
        y: 0.0,
        l,
        k,
        m,
        ln_revenue,
        s: 0.5,
        m_lag: None,
        z: None,
        z_lag: None,
    }
}

fn table(rows: Vec<ProductInputRow>) -> ProductInputTable {
    ProductInputTable {
        rows,
        skipped_plant_years: 0,
    }
}

#[test]
fn tfpr_examples() {
    let t = table(vec![
        row("a", "81111", 3.0, 1.0, 2.0, 0.5),
        row("b", "81112", 3.0 + 2f64.ln(), 1.0, 2.0, 0.5),
        row("c", "81113", 1.0, 0.3, 0.1, 0.2),
    ]);
    let zero = compute_tfpr(&t, [0.0; 3], "h");
    for (r, i) in zero.rows.iter().zip(&t.rows) {
        assert_eq!(r.tfpr, i.ln_revenue);
    }
    let est = compute_tfpr(&t, [0.6, 0.2, 0.2], "h");
    assert!((est.rows[1].tfpr - est.rows[0].tfpr - 2f64.ln()).abs() < 1e-14);
    assert!((est.rows[2].tfpr - (1.0 - 0.18 - 0.02 - 0.04)).abs() < 1e-14);
}

#[test]
fn standardized_tfpr_has_zero_mean_unit_sd() {
    let out = synth(41);
    let t = product_inputs(&out.panel, &out.market_rule(), 0.5, 0.4, 1.0).unwrap();
    let tf = compute_tfpr(&t, [0.6, 0.2, 0.2], "h");
    let z: Vec<f64> = tf.rows.iter().map(|r| r.tfpr_z).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 1e-9);
    assert!((sd - 1.0).abs() < 1e-9);
}

#[test]
fn estimated_tfpr_tracks_true_productivity() {
    let out = synth(42);
    let t = product_inputs(&out.panel, &out.market_rule(), 0.5, 0.4, 1.0).unwrap();
    let est = estimate_gmm(&t, &MomentSpec::col3()).unwrap();
    let tf = compute_tfpr(&t, est.beta, "h");
    // Revenue productivity is physical productivity plus log price.
    let truth: BTreeMap<(&str, i32, &str), f64> = out
        .truth
        .rows
        .iter()
        .map(|r| ((r.plant_id.as_str(), r.year, r.product.as_str()), r.omega + r.log_price))
        .collect();
    let a: Vec<f64> = tf.rows.iter().map(|r| r.tfpr).collect();
    let b: Vec<f64> = tf
        .rows
        .iter()
        .map(|r| truth[&(r.plant_id.as_str(), r.year, r.product.as_str())])
        .collect();
    let corr = correlation(&a, &b);
    assert!(corr > 0.9, "correlation {corr}");
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

struct ProbitData {
    y: Vec<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    cluster: Vec<usize>,
}

/// Independent-observation probit sample; column 1 is the regressor of
/// interest and column 2 a control.
fn probit_data(rng: &mut ChaCha8Rng, n: usize, beta: [f64; 3]) -> ProbitData {
    let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(rng) });
    let y = (0..n)
        .map(|i| {
            let xb: f64 = (0..3).map(|j| x[(i, j)] * beta[j]).sum();
            let e: f64 = StandardNormal.sample(rng);
            f64::from(u8::from(xb + e > 0.0))
        })
        .collect();
    ProbitData {
        y,
        x,
        names: ["const", "tfpr_z", "control"].map(String::from).to_vec(),
        cluster: (0..n).collect(),
    }
}

#[test]
fn probit_matches_gradient_ascent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = probit_data(&mut rng, 300, [-0.3, 0.5, -0.4]);
    let fit = fit_probit(&d.y, &d.x, &d.names, &d.cluster, 1).unwrap();
    // The probit log-likelihood has curvature bounded by X'X, so a step of
    // 1 / lambda_max ascends monotonically.
    let lmax = (d.x.transpose() * &d.x).symmetric_eigenvalues().max();
    let mut b = DVector::<f64>::zeros(3);
    let mut prev = probit_loglik(&d.y, &d.x, &b);
    for _ in 0..100_000 {
        let g = probit_score(&d.y, &d.x, &b);
        if g.norm() < 1e-11 {
            break;
        }
        b += g / lmax;
        let ll = probit_loglik(&d.y, &d.x, &b);
        assert!(ll >= prev - 1e-12, "ascent not monotone");
        prev = ll;
    }
    for j in 0..3 {
        assert!((fit.coef[j] - b[j]).abs() < 1e-6, "coef {j}: {} vs {}", fit.coef[j], b[j]);
    }
    assert!(probit_score(&d.y, &d.x, &fit.coef).norm() < 1e-8);
}

#[test]
fn probit_loglik_is_maximal_at_the_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = probit_data(&mut rng, 400, [0.2, -0.6, 0.3]);
    let fit = fit_probit(&d.y, &d.x, &d.names, &d.cluster, 1).unwrap();
    for _ in 0..200 {
        let step = DVector::from_fn(3, |_, _| rng.random_range(-0.05..0.05));
        assert!(fit.loglik >= probit_loglik(&d.y, &d.x, &(&fit.coef + step)));
    }
}

#[test]
fn probit_rejects_constant_outcome() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = probit_data(&mut rng, 50, [0.0; 3]);
    let zeros = vec![0.0; 50];
    assert!(matches!(
        fit_probit(&zeros, &d.x, &d.names, &d.cluster, 1),
        Err(Error::Separation(_))
    ));
}

#[test]
fn probit_coverage_under_independence() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let reps = 200;
    let mut inside = 0;
    for _ in 0..reps {
        let d = probit_data(&mut rng, 400, [-0.5, 0.0, 0.4]);
        let fit = fit_probit(&d.y, &d.x, &d.names, &d.cluster, 1).unwrap();
        if fit.coef[1].abs() <= 2.0 * fit.vcov[(1, 1)].sqrt() {
            inside += 1;
        }
    }
    let rate = f64::from(inside) / f64::from(reps);
    assert!((0.90..=0.99).contains(&rate), "rate {rate}");
}

#[test]
fn delta_method_se_matches_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = probit_data(&mut rng, 1500, [-0.4, -0.5, 0.3]);
    let fit = fit_probit(&d.y, &d.x, &d.names, &d.cluster, 1).unwrap();
    let chol = fit.vcov.clone().cholesky().unwrap().l();
    for kind in [MarginalEffectKind::AtMeans, MarginalEffectKind::Average] {
        let (me, se) = marginal_effect_1sd(&fit, kind);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let e = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                let mut sim = fit.clone();
                sim.coef = &fit.coef + &chol * e;
                marginal_effect_1sd(&sim, kind).0
            })
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!(rel_err(se, sd) < 0.05, "{kind:?}: delta {se} vs simulated {sd}");
        // A negative slope on tfpr means lowering tfpr raises the drop rate.
        assert!(me > 0.0);
    }
    // At means the effect is a difference of normal CDFs.
    let xb = fit.means.dot(&fit.coef);
    let direct = 100.0 * (norm_cdf(xb - fit.coef[1]) - norm_cdf(xb));
    assert!((marginal_effect_1sd(&fit, MarginalEffectKind::AtMeans).0 - direct).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn gain_bounds_are_ordered_and_nonnegative(
        raw in prop::collection::vec(0.01f64..1.0, 2..10),
        tfpr in prop::collection::vec(-3.0f64..3.0, 10),
    ) {
        let total: f64 = raw.iter().sum();
        let shares: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let (lo, hi) = gain_bounds(&shares, &tfpr[..shares.len()]);
        prop_assert!(lo >= -1e-12);
        prop_assert!(lo <= hi + 1e-12);
    }
}
