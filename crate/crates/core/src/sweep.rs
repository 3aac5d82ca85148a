//! Single-threshold pipeline, the threshold sweep and report emission.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::conduct::{input_allocation_shares, recover_marginal_costs, CostTable};
use crate::demand::{demand_sample, estimate_demand_2sls, DemandEstimate, DemandSpec};
use crate::error::{Error, Result};
use crate::instruments::{build_price_growth_iv, filter_input_codes, purchase_shares_for, InstrumentConfig, InstrumentTable, PurchaseShareTable};
use crate::outcomes::{
    compute_tfpr, efficiency_gain_bounds, marginal_effect_1sd, probit_product_drop, GainBounds, MarginalEffectKind,
    ProbitResult, TfprTable,
};
use crate::panel::{read_csv, write_file, Panel};
use crate::production::{build_product_inputs, estimate_gmm, MomentSpec, ProductInputTable, ProductionEstimate};
use crate::shares::{compute_revenue_shares, MarketSizeRule, ShareTable};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REFERENCE_TAU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum DemandMode {
    Estimate,
    Calibrate { alpha: f64, sigma: f64 },
}

impl DemandMode {
    pub fn label(&self) -> String {
        match self {
            DemandMode::Estimate => "estimate".into(),
            DemandMode::Calibrate { alpha, sigma } => format!("calibrate(alpha={alpha},sigma={sigma})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub instruments: InstrumentConfig,
    pub demand: DemandSpec,
    pub market: MarketSizeRule,
    pub gmm: MomentSpec,
    pub mode: DemandMode,
    pub marginal_effect: MarginalEffectKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            instruments: InstrumentConfig::default(),
            demand: DemandSpec::default(),
            market: MarketSizeRule::default(),
            gmm: MomentSpec::col3(),
            mode: DemandMode::Estimate,
            marginal_effect: MarginalEffectKind::AtMeans,
        }
    }
}

impl PipelineConfig {
    /// Stable description of every setting, one `key=value` per line.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("instruments".into(), self.instruments.label()),
            ("demand_spec".into(), self.demand.label()),
            ("demand_spec_hash".into(), self.demand.hash()),
            ("market_size".into(), self.market.label()),
            ("gmm".into(), self.gmm.label()),
            ("mode".into(), self.mode.label()),
            ("marginal_effect".into(), self.marginal_effect.label().into()),
        ]
    }
}

/// Everything one threshold produces. Stages after demand are `None` when
/// demand is inadmissible or a stage failed; `error` then says why.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub tau: f64,
    pub n_codes: usize,
    pub n_obs: usize,
    pub instruments: Option<InstrumentTable>,
    pub demand: Option<DemandEstimate>,
    pub costs: Option<CostTable>,
    pub inputs: Option<ProductInputTable>,
    pub production: Option<ProductionEstimate>,
    pub tfpr: Option<TfprTable>,
    pub gains: Option<Vec<GainBounds>>,
    pub probit: Option<ProbitResult>,
    pub me: Option<(f64, f64)>,
    pub error: Option<String>,
}

impl PipelineRun {
    fn empty(tau: f64) -> Self {
        PipelineRun {
            tau,
            n_codes: 0,
            n_obs: 0,
            instruments: None,
            demand: None,
            costs: None,
            inputs: None,
            production: None,
            tfpr: None,
            gains: None,
            probit: None,
            me: None,
            error: None,
        }
    }

    /// Production coefficients as a flat vector (for the bootstrap).
    pub fn beta(&self) -> Result<[f64; 3]> {
        self.production.as_ref().map(|p| p.beta).ok_or_else(|| self.failure())
    }

    pub fn failure(&self) -> Error {
        Error::Validation(self.error.clone().unwrap_or_else(|| "pipeline stage missing".into()))
    }

    pub fn row(&self) -> SweepRow {
        let d = self.demand.as_ref();
        let mean = |f: fn(&GainBounds) -> f64| {
            self.gains
                .as_ref()
                .filter(|g| !g.is_empty())
                .map(|g| g.iter().map(f).sum::<f64>() / g.len() as f64)
        };
        SweepRow {
            tau: self.tau,
            alpha: d.map(|d| d.alpha),
            alpha_se: d.and_then(|d| d.alpha_se()),
            sigma: d.map(|d| d.sigma),
            sigma_se: d.and_then(|d| d.sigma_se()),
            f_p: d.and_then(|d| d.f_p),
            f_rs: d.and_then(|d| d.f_rs),
            n_obs: self.n_obs,
            n_codes: self.n_codes,
            admissible: d.map(|d| d.admissible),
            beta: self.production.as_ref().map(|p| p.beta),
            gain_lower: mean(|g| g.gain_lower),
            gain_upper: mean(|g| g.gain_upper),
            me_1sd: self.me.map(|m| m.0),
            me_se: self.me.map(|m| m.1),
            error: self.error.clone(),
        }
    }
}

/// Threshold-independent precomputation shared by every grid point.
pub struct Prepared<'a> {
    pub panel: &'a Panel,
    pub shares: ShareTable,
    pub purchase_shares: PurchaseShareTable,
}

pub fn prepare<'a>(panel: &'a Panel, config: &PipelineConfig) -> Result<Prepared<'a>> {
    Ok(Prepared {
        panel,
        shares: compute_revenue_shares(panel, &config.market)?,
        purchase_shares: purchase_shares_for(panel, &config.instruments)?,
    })
}

/// Run every stage at one threshold. Stage failures are recorded in the
/// result rather than returned, so sweeps never abort; only an invalid
/// `tau` is an error.
pub fn run_single_tau(prep: &Prepared<'_>, tau: f64, config: &PipelineConfig) -> Result<PipelineRun> {
    run_with_demand(prep, tau, config, None)
}

/// As [`run_single_tau`], with `(alpha, sigma)` optionally overriding the
/// configured demand mode.
pub fn run_with_demand(
    prep: &Prepared<'_>,
    tau: f64,
    config: &PipelineConfig,
    demand_override: Option<(f64, f64)>,
) -> Result<PipelineRun> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("threshold tau must lie in [0, 1], got {tau}")));
    }
    let mut run = PipelineRun::empty(tau);
    let retained = filter_input_codes(&prep.purchase_shares, tau)?;
    run.n_codes = retained.len();
    let instruments = match build_price_growth_iv(prep.panel, &retained, &config.instruments) {
        Ok(t) => t,
        Err(e) => {
            run.error = Some(e.to_string());
            return Ok(run);
        }
    };
    run.n_obs = demand_sample(&prep.shares, &instruments, &config.demand).len();
    let fixed = demand_override.or(match config.mode {
        DemandMode::Calibrate { alpha, sigma } => Some((alpha, sigma)),
        DemandMode::Estimate => None,
    });
    let demand = match fixed {
        Some((alpha, sigma)) => Ok(DemandEstimate::calibrated(alpha, sigma, run.n_obs)),
        None => estimate_demand_2sls(&prep.shares, &instruments, &config.demand),
    };
    run.instruments = Some(instruments);
    let demand = match demand {
        Ok(d) => d,
        Err(e) => {
            run.error = Some(e.to_string());
            return Ok(run);
        }
    };
    let admissible = demand.admissible;
    let (alpha, sigma) = (demand.alpha, demand.sigma);
    run.demand = Some(demand);
    if !admissible {
        run.error = Some(Error::Inadmissible { alpha, sigma }.to_string());
        return Ok(run);
    }
    if let Err(e) = downstream(prep, config, alpha, sigma, &mut run) {
        run.error = Some(e.to_string());
    }
    Ok(run)
}

fn downstream(prep: &Prepared<'_>, config: &PipelineConfig, alpha: f64, sigma: f64, run: &mut PipelineRun) -> Result<()> {
    let mut costs = recover_marginal_costs(alpha, sigma, &prep.shares)?;
    input_allocation_shares(&mut costs, prep.panel)?;
    let inputs = build_product_inputs(prep.panel, &costs, run.instruments.as_ref())?;
    run.costs = Some(costs);
    let production = estimate_gmm(&inputs, &config.gmm)?;
    let tfpr = compute_tfpr(&inputs, production.beta, &config.demand.hash());
    run.inputs = Some(inputs);
    run.production = Some(production);
    run.gains = Some(efficiency_gain_bounds(&tfpr));
    let probit = probit_product_drop(&tfpr, prep.panel);
    run.tfpr = Some(tfpr);
    let probit = probit?;
    run.me = Some(marginal_effect_1sd(&probit, config.marginal_effect));
    run.probit = Some(probit);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub alpha: Option<f64>,
    pub alpha_se: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_se: Option<f64>,
    pub f_p: Option<f64>,
    pub f_rs: Option<f64>,
    pub n_obs: usize,
    pub n_codes: usize,
    pub admissible: Option<bool>,
    pub beta: Option<[f64; 3]>,
    /// Means over plant-years with 2 to 10 products.
    pub gain_lower: Option<f64>,
    pub gain_upper: Option<f64>,
    pub me_1sd: Option<f64>,
    pub me_se: Option<f64>,
    pub error: Option<String>,
}

const SWEEP_HEADER: &str = "tau,alpha,alpha_se,sigma,sigma_se,f_p,f_rs,n_obs,n_codes,admissible,beta_l,beta_k,beta_m,gain_lower,gain_upper,me_1sd,me_se,error";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        SWEEP_HEADER
    }

    pub fn to_csv(&self) -> String {
        let b = |i: usize| opt(self.beta.map(|b| b[i]));
        let error = self
            .error
            .as_deref()
            .map(|e| e.replace([',', '\n', '\r'], ";"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tau,
            opt(self.alpha),
            opt(self.alpha_se),
            opt(self.sigma),
            opt(self.sigma_se),
            opt(self.f_p),
            opt(self.f_rs),
            self.n_obs,
            self.n_codes,
            opt(self.admissible),
            b(0),
            b(1),
            b(2),
            opt(self.gain_lower),
            opt(self.gain_upper),
            opt(self.me_1sd),
            opt(self.me_se),
            error
        )
    }

    fn parse(line: usize, f: &[String]) -> Result<Self> {
        let bad = |col: &str| Error::Schema {
            file: SWEEP_FILE.into(),
            column: col.into(),
            problem: format!("has unparseable value on line {line}"),
        };
        let num = |i: usize, col: &str| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                f[i].parse().map(Some).map_err(|_| bad(col))
            }
        };
        let beta = match (num(10, "beta_l")?, num(11, "beta_k")?, num(12, "beta_m")?) {
            (Some(l), Some(k), Some(m)) => Some([l, k, m]),
            _ => None,
        };
        Ok(SweepRow {
            tau: num(0, "tau")?.ok_or_else(|| bad("tau"))?,
            alpha: num(1, "alpha")?,
            alpha_se: num(2, "alpha_se")?,
            sigma: num(3, "sigma")?,
            sigma_se: num(4, "sigma_se")?,
            f_p: num(5, "f_p")?,
            f_rs: num(6, "f_rs")?,
            n_obs: f[7].parse().map_err(|_| bad("n_obs"))?,
            n_codes: f[8].parse().map_err(|_| bad("n_codes"))?,
            admissible: match f[9].as_str() {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                _ => return Err(bad("admissible")),
            },
            beta,
            gain_lower: num(13, "gain_lower")?,
            gain_upper: num(14, "gain_upper")?,
            me_1sd: num(15, "me_1sd")?,
            me_se: num(16, "me_se")?,
            error: (!f[17].is_empty()).then(|| f[17].clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: Vec<&str> = SWEEP_HEADER.split(',').collect();
        let rows = read_csv(path, &header)?
            .iter()
            .map(|(line, f)| SweepRow::parse(*line, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepTable { rows })
    }
}

/// `a, a + step, ..., b` with each point rounded to 1e-9.
pub fn grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(start <= end) {
        return Err(Error::Config(format!("invalid grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let pts: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect();
    if pts.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config(format!("grid {start}:{end}:{step} leaves [0, 1]")));
    }
    Ok(pts)
}

pub fn default_grid() -> Vec<f64> {
    grid(0.0, 1.0, 0.01).expect("valid default grid")
}

/// Run the pipeline over a grid of thresholds in parallel, ordered by tau.
pub fn run_threshold_sweep(panel: &Panel, taus: &[f64], config: &PipelineConfig) -> Result<SweepTable> {
    if let DemandMode::Calibrate { alpha, sigma } = config.mode {
        if !crate::demand::is_admissible(alpha, sigma) {
            return Err(Error::Config(format!(
                "calibrated demand must satisfy alpha > 0 and 0 < sigma < 1 (got alpha={alpha}, sigma={sigma})"
            )));
        }
    }
    if let Some(t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold tau must lie in [0, 1], got {t}")));
    }
    let prep = prepare(panel, config)?;
    let mut rows = taus
        .par_iter()
        .map(|&tau| run_single_tau(&prep, tau, config).map(|r| r.row()))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(SweepTable { rows })
}

/// Content hash used in manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Manifest: config echo followed by a hash per written file.
pub fn render_manifest(config: &[(String, String)], files: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in config {
        let _ = writeln!(s, "config.{k}={v}");
    }
    for (name, contents) in files {
        let _ = writeln!(s, "sha256.{name}={}", sha256_hex(contents.as_bytes()));
    }
    s
}

/// Write files plus a manifest into `dir`.
pub fn write_with_manifest(dir: &Path, config: &[(String, String)], files: &[(String, String)]) -> Result<()> {
    for (name, contents) in files {
        write_file(&dir.join(name), contents)?;
    }
    write_file(&dir.join(MANIFEST_FILE), &render_manifest(config, files))
}

/// Config lines from an existing manifest.
pub fn read_manifest_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.strip_prefix("config."))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

struct Series {
    name: &'static str,
    values: Vec<Option<f64>>,
}

fn figspec(id: &str, title: &str, y_label: &str, band: Option<&str>, taus: &[f64], series: &[Series]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "figure={id}");
    let _ = writeln!(s, "title={title}");
    let _ = writeln!(s, "x_label=threshold tau");
    let _ = writeln!(s, "y_label={y_label}");
    let _ = writeln!(s, "band={}", band.unwrap_or("none"));
    let _ = writeln!(s, "reference_line=x={REFERENCE_TAU}");
    let names: Vec<&str> = series.iter().map(|c| c.name).collect();
    let _ = writeln!(s, "series={}", names.join(","));
    s.push_str("[data]\n");
    let _ = writeln!(s, "tau,{}", names.join(","));
    for (i, t) in taus.iter().enumerate() {
        let vals: Vec<String> = series.iter().map(|c| opt(c.values[i])).collect();
        let _ = writeln!(s, "{t},{}", vals.join(","));
    }
    s
}

const Z90: f64 = 1.645;

fn band(est: &[Option<f64>], se: &[Option<f64>], sign: f64) -> Vec<Option<f64>> {
    est.iter()
        .zip(se)
        .map(|(e, s)| match (e, s) {
            (Some(e), Some(s)) => Some(e + sign * Z90 * s),
            _ => None,
        })
        .collect()
}

/// The six figure specs for a sweep, keyed by file name.
pub fn figure_specs(sweep: &SweepTable) -> Vec<(String, String)> {
    let taus: Vec<f64> = sweep.rows.iter().map(|r| r.tau).collect();
    let col = |f: fn(&SweepRow) -> Option<f64>| sweep.rows.iter().map(f).collect::<Vec<_>>();
    let price = col(|r| r.alpha.map(|a| -a));
    let price_se = col(|r| r.alpha_se);
    let nest = col(|r| r.sigma.map(|s| 1.0 - s));
    let nest_se = col(|r| r.sigma_se);
    let me = col(|r| r.me_1sd);
    let me_se = col(|r| r.me_se);
    let band_label = "90% normal interval (estimate +/- 1.645 se)";
    vec![
        (
            "fig_1a.figspec".into(),
            figspec(
                "fig1a",
                "IV coefficient on p",
                "coefficient",
                Some(band_label),
                &taus,
                &[
                    Series { name: "lower", values: band(&price, &price_se, -1.0) },
                    Series { name: "estimate", values: price.clone() },
                    Series { name: "upper", values: band(&price, &price_se, 1.0) },
                ],
            ),
        ),
        (
            "fig_1b.figspec".into(),
            figspec(
                "fig1b",
                "IV coefficient on rs_within (1 - sigma)",
                "coefficient",
                Some(band_label),
                &taus,
                &[
                    Series { name: "lower", values: band(&nest, &nest_se, -1.0) },
                    Series { name: "estimate", values: nest.clone() },
                    Series { name: "upper", values: band(&nest, &nest_se, 1.0) },
                ],
            ),
        ),
        (
            "fig_1c.figspec".into(),
            figspec(
                "fig1c",
                "Sanderson-Windmeijer first-stage F",
                "F statistic",
                None,
                &taus,
                &[
                    Series { name: "f_p", values: col(|r| r.f_p) },
                    Series { name: "f_rs", values: col(|r| r.f_rs) },
                ],
            ),
        ),
        (
            "fig_1d.figspec".into(),
            figspec(
                "fig1d",
                "Observations",
                "observations",
                None,
                &taus,
                &[Series { name: "n_obs", values: col(|r| Some(r.n_obs as f64)) }],
            ),
        ),
        (
            "fig_2a.figspec".into(),
            figspec(
                "fig2a",
                "Plant-level efficiency gain from dropping the lowest-TFPR product (%); lower bound: proportional reallocation, upper bound: reallocation to the best product",
                "percent",
                None,
                &taus,
                &[
                    Series { name: "gain_lower", values: col(|r| r.gain_lower) },
                    Series { name: "gain_upper", values: col(|r| r.gain_upper) },
                ],
            ),
        ),
        (
            "fig_2b.figspec".into(),
            figspec(
                "fig2b",
                "Marginal effect of a 1 SD TFPR decline on product dropping (pp)",
                "percentage points",
                Some(band_label),
                &taus,
                &[
                    Series { name: "lower", values: band(&me, &me_se, -1.0) },
                    Series { name: "estimate", values: me.clone() },
                    Series { name: "upper", values: band(&me, &me_se, 1.0) },
                ],
            ),
        ),
    ]
}

/// Write `sweep.csv`, six figure specs and the manifest.
pub fn emit_report(sweep: &SweepTable, config: &[(String, String)], dir: &Path) -> Result<Vec<String>> {
    if sweep.rows.is_empty() {
        return Err(Error::Validation("cannot report an empty sweep".into()));
    }
    let mut files = vec![(SWEEP_FILE.to_string(), sweep.to_csv())];
    files.extend(figure_specs(sweep));
    write_with_manifest(dir, config, &files)?;
    let mut names: Vec<String> = files.into_iter().map(|f| f.0).collect();
    names.push(MANIFEST_FILE.into());
    Ok(names)
}

const NOT_CHECKED: &str = "published reference; not machine-checked";

/// Table 1 layout: one block per GMM preset plus published reference rows.
pub fn table1(estimates: &[ProductionEstimate]) -> String {
    let mut s = String::from(
        "source,preset,instruments,beta_L,se_L,beta_K,se_K,beta_M,se_M,n_obs,se_kind,note\n",
    );
    for e in estimates {
        let (se, kind) = match e.se_bootstrap {
            Some(b) => (b, "block bootstrap"),
            None => (e.se_analytic(), "analytic"),
        };
        let _ = writeln!(
            s,
            "synthetic run,{},{},{},{},{},{},{},{},{},{},",
            e.preset,
            e.spec_label.replace(',', ";"),
            e.beta[0],
            se[0],
            e.beta[1],
            se[1],
            e.beta[2],
            se[2],
            e.n_obs,
            kind
        );
    }
    let refs = [
        ("col1", "Z_t+Z_t-1+m_t-1", ["0.325", "0.192", "0.106", "0.082", "0.789", "0.191"]),
        ("col2", "m_t-1", ["0.315", "0.191", "0.102", "0.081", "0.806", "0.186"]),
        ("col3", "Z_t+Z_t-1", ["0.617", "0.261", "0.239", "0.099", "0.223", "0.352"]),
    ];
    for (preset, inst, v) in refs {
        let _ = writeln!(
            s,
            "reference,{preset},{inst},{},{},{},{},{},{},3620,block bootstrap,{NOT_CHECKED}",
            v[0], v[1], v[2], v[3], v[4], v[5]
        );
    }
    s
}

/// Table 2 layout: gain bounds and marginal effect, with published
/// reference columns.
pub fn table2(gains: Option<(f64, f64)>, me: Option<(f64, f64)>, me_kind: MarginalEffectKind, se_kind: &str) -> String {
    let mut s = String::from("source,period,gain_lower,gain_upper,me_1sd,me_se,me_kind,se_kind,note\n");
    let _ = writeln!(
        s,
        "synthetic run,,{},{},{},{},{},{},bounds: proportional / best-product reallocation",
        opt(gains.map(|g| g.0)),
        opt(gains.map(|g| g.1)),
        opt(me.map(|m| m.0)),
        opt(me.map(|m| m.1)),
        me_kind.label(),
        se_kind
    );
    for (period, lo, hi, me, se) in [
        ("2000-2007", "8.82", "61.60", "6.65", "2.20"),
        ("2010-2019", "1.13", "67.13", "9.22", "1.53"),
        ("2000-2019", "9.94", "65.59", "7.96", "2.08"),
    ] {
        let _ = writeln!(
            s,
            "reference,{period},{lo},{hi},{me},{se},,semi-parametric block bootstrap,{NOT_CHECKED}"
        );
    }
    s
}

/// Parameters each bootstrap replication reports.
pub const BOOTSTRAP_PARAMS: [&str; 6] = ["beta_L", "beta_K", "beta_M", "gain_lower", "gain_upper", "me_1sd"];

/// Threshold pipeline reused inside the bootstrap: production
/// coefficients, mean gain bounds and the marginal effect for a resampled
/// panel.
pub fn bootstrap_pipeline(
    base: &Panel,
    tau: f64,
    config: &PipelineConfig,
) -> Result<impl Fn(&Panel, Option<(f64, f64)>) -> Result<Vec<f64>> + Sync> {
    let config = PipelineConfig {
        market: config.market.relative_to(base)?,
        ..config.clone()
    };
    Ok(move |panel: &Panel, demand| {
        let prep = prepare(panel, &config)?;
        let run = run_with_demand(&prep, tau, &config, demand)?;
        let row = run.row();
        match (row.beta, row.gain_lower, row.gain_upper, row.me_1sd) {
            (Some(b), Some(lo), Some(hi), Some(me)) => Ok(vec![b[0], b[1], b[2], lo, hi, me]),
            _ => Err(run.failure()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_101_points_and_exact_reference() {
        let g = default_grid();
        assert_eq!(g.len(), 101);
        assert!(g.contains(&0.3));
        assert_eq!(g[100], 1.0);
    }

    #[test]
    fn grid_outside_unit_interval_is_rejected() {
        assert!(grid(0.5, 1.5, 0.1).is_err());
        assert!(grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn row_csv_round_trips() {
        let row = SweepRow {
            tau: 0.3,
            alpha: Some(0.51),
            alpha_se: Some(0.1),
            sigma: Some(0.4),
            sigma_se: None,
            f_p: None,
            f_rs: Some(12.5),
            n_obs: 10,
            n_codes: 4,
            admissible: Some(true),
            beta: Some([0.6, 0.2, 0.2]),
            gain_lower: None,
            gain_upper: None,
            me_1sd: Some(-1.0 / 3.0),
            me_se: Some(1e-20),
            error: Some("x".into()),
        };
        let fields: Vec<String> = row.to_csv().split(',').map(String::from).collect();
        assert_eq!(SweepRow::parse(2, &fields).unwrap(), row);
    }
}
