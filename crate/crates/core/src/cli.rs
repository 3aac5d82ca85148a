//! Command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::demand::{Clustering, DemandSpec};
use crate::error::{Error, Result};
use crate::instruments::{InstrumentConfig, ReferencePlants, Weighting};
use crate::outcomes::{gains_csv, MarginalEffectKind};
use crate::panel::{
    apply_concordance, load_panel_dir, read_csv, Concordance, IngestConfig, IngestLog, Panel, INPUTS_FILE,
    OUTPUTS_FILE, PURCHASES_FILE,
};
use crate::production::{block_bootstrap, estimate_gmm, BootstrapMode, BootstrapResult, MomentSpec};
use crate::shares::{MarketSizeRule, MARKET_SIZE_FILE};
use crate::sweep::{
    bootstrap_pipeline, emit_report, grid, prepare, read_manifest_config, run_single_tau, run_threshold_sweep,
    sha256_hex, table1, table2, write_with_manifest, DemandMode, PipelineConfig, PipelineRun, SweepTable,
    BOOTSTRAP_PARAMS, MANIFEST_FILE, SWEEP_FILE,
};
use crate::synth::{generate_synthetic, SynthConfig};

pub const SEED_ENV: &str = "PRODLOOM_SEED";

#[derive(Debug, Parser)]
#[command(name = "prodloom", version, about = "Plant-product productivity estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, clean and validate a panel; write it back in canonical form.
    #[command(args_override_self = true)]
    Ingest(IngestArgs),
    /// Run the full pipeline at one threshold.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Run the pipeline over a grid of thresholds and write the report.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Generate a synthetic panel with known parameters.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Plant block bootstrap of the single-threshold pipeline.
    #[command(args_override_self = true)]
    Bootstrap(BootstrapArgs),
    /// Regenerate figure specs from an existing sweep directory.
    #[command(args_override_self = true)]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// key=value file of default flag values; flags on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding outputs.csv, inputs.csv and purchases.csv.
    #[arg(long)]
    data: PathBuf,
    /// market3,year,market_size file. Defaults to market_size.csv in the
    /// data directory when present and --kappa is not given.
    #[arg(long)]
    market_size: Option<PathBuf>,
    /// Market size as a multiple of inside revenue.
    #[arg(long)]
    kappa: Option<f64>,
    /// source_code,target_code product concordance.
    #[arg(long)]
    concordance: Option<PathBuf>,
    /// Drop codes missing from the concordance instead of failing.
    #[arg(long)]
    lax_concordance: bool,
    /// year,deflator file; revenue is divided by its year's deflator.
    #[arg(long)]
    deflators: Option<PathBuf>,
    /// Characters allowed in product codes.
    #[arg(long, default_value = "0123456789")]
    alphabet: String,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Fix demand instead of estimating it: alpha=A,sigma=S.
    #[arg(long)]
    calibrate: Option<String>,
    /// col1, col2 or col3.
    #[arg(long, default_value = "col3")]
    gmm_preset: String,
    /// Omit the constant from the production moments.
    #[arg(long)]
    no_constant: bool,
    /// Instrument reference plants: single-product or non-machinery.
    #[arg(long, default_value = "single-product")]
    reference: String,
    /// Instrument averaging: unweighted or value.
    #[arg(long, default_value = "unweighted")]
    weighting: String,
    #[arg(long, default_value_t = 1)]
    min_contributors: usize,
    /// Machinery shares from purchases pooled over all years.
    #[arg(long)]
    pooled_shares: bool,
    /// Add log nest product count as an excluded instrument.
    #[arg(long)]
    nest_count_instrument: bool,
    /// Drop Z_{t-1} from the demand instruments.
    #[arg(long)]
    no_lagged_instrument: bool,
    #[arg(long)]
    no_year_fe: bool,
    #[arg(long)]
    no_market_fe: bool,
    /// two-way, plant or product.
    #[arg(long, default_value = "two-way")]
    cluster: String,
    /// at-means or average.
    #[arg(long, default_value = "at-means")]
    marginal_effect: String,
}

#[derive(Debug, Args)]
struct BootArgs {
    /// Bootstrap replications.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// nonparametric or semi-parametric.
    #[arg(long, default_value = "nonparametric")]
    mode: String,
    /// Seed (falls back to PRODLOOM_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    boot: BootArgs,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// start:end:step
    #[arg(long, default_value = "0:1:0.01")]
    grid: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    boot: BootArgs,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    plants: Option<usize>,
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    markets: Option<usize>,
    #[arg(long)]
    nests: Option<usize>,
    #[arg(long)]
    max_products: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    endogeneity: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory of a previous sweep run.
    #[arg(long)]
    from: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Parse `alpha=..,sigma=..`.
pub fn parse_calibration(raw: &str) -> Result<(f64, f64)> {
    let mut alpha = None;
    let mut sigma = None;
    for part in raw.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("calibration `{raw}` must look like alpha=A,sigma=S")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("calibration value `{v}` is not a number")))?;
        match k.trim() {
            "alpha" => alpha = Some(v),
            "sigma" => sigma = Some(v),
            other => return Err(Error::Config(format!("unknown calibration key `{other}`"))),
        }
    }
    match (alpha, sigma) {
        (Some(a), Some(s)) => Ok((a, s)),
        _ => Err(Error::Config("calibration needs both alpha and sigma".into())),
    }
}

/// Parse `start:end:step` into grid points.
pub fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("grid `{raw}` must look like start:end:step")));
    }
    let nums = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid component `{p}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    grid(nums[0], nums[1], nums[2])
}

/// Turn a key=value config file into flags, placed before the command-line
/// flags so the latter override them.
fn config_flags(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}: line {} is not key=value", path.display(), n + 1)))?;
        let key = k.trim().replace('_', "-");
        match v.trim() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => out.push(format!("--{key}={v}")),
        }
    }
    Ok(out)
}

fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    if argv.len() < 2 {
        return Ok(argv);
    }
    let mut out = argv[..2].to_vec();
    out.extend(config_flags(Path::new(&path))?);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_deflators(path: &Path) -> Result<BTreeMap<i32, f64>> {
    read_csv(path, &["year", "deflator"])?
        .into_iter()
        .map(|(line, f)| {
            let year = f[0].parse::<i32>();
            let d = f[1].parse::<f64>();
            match (year, d) {
                (Ok(y), Ok(d)) if d > 0.0 => Ok((y, d)),
                _ => Err(Error::Schema {
                    file: path.display().to_string(),
                    column: "deflator".into(),
                    problem: format!("has an invalid row on line {line}"),
                }),
            }
        })
        .collect()
}

struct Loaded {
    panel: Panel,
    log: IngestLog,
    market: MarketSizeRule,
    echo: Vec<(String, String)>,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn load_data(args: &DataArgs) -> Result<Loaded> {
    let mut cfg = IngestConfig {
        alphabet: args.alphabet.clone(),
        strict_concordance: !args.lax_concordance,
        ..IngestConfig::default()
    };
    let mut echo = vec![("data".to_string(), args.data.display().to_string())];
    for f in [OUTPUTS_FILE, INPUTS_FILE, PURCHASES_FILE] {
        echo.push((format!("input_sha256.{f}"), file_hash(&args.data.join(f))?));
    }
    if let Some(p) = &args.deflators {
        cfg.deflators = Some(load_deflators(p)?);
        echo.push(("input_sha256.deflators".into(), file_hash(p)?));
    }
    let ingested = load_panel_dir(&args.data, &cfg)?;
    let (panel, mut log) = (ingested.panel, ingested.log);
    let panel = match &args.concordance {
        Some(p) => {
            echo.push(("input_sha256.concordance".into(), file_hash(p)?));
            let (mapped, extra) = apply_concordance(&panel, &Concordance::load(p)?, &cfg)?;
            log.lines.extend(extra.lines);
            mapped
        }
        None => panel,
    };
    let default_sizes = args.data.join(MARKET_SIZE_FILE);
    let market = match (&args.market_size, args.kappa) {
        (Some(_), Some(_)) => return Err(Error::Config("give at most one of --market-size and --kappa".into())),
        (Some(p), None) => {
            echo.push(("input_sha256.market_size".into(), file_hash(p)?));
            MarketSizeRule::load_explicit(p)?
        }
        (None, Some(k)) => MarketSizeRule::Multiplier(k),
        (None, None) if default_sizes.exists() => {
            echo.push(("input_sha256.market_size".into(), file_hash(&default_sizes)?));
            MarketSizeRule::load_explicit(&default_sizes)?
        }
        (None, None) => MarketSizeRule::default(),
    };
    echo.push(("ingest.alphabet".into(), args.alphabet.clone()));
    echo.push(("ingest.strict_concordance".into(), cfg.strict_concordance.to_string()));
    Ok(Loaded { panel, log, market, echo })
}

fn pipeline_config(model: &ModelArgs, market: MarketSizeRule) -> Result<PipelineConfig> {
    let reference = match model.reference.as_str() {
        "single-product" => ReferencePlants::SingleProduct,
        "non-machinery" => ReferencePlants::NonMachinery,
        other => return Err(Error::Config(format!("unknown reference plants `{other}`"))),
    };
    let weighting = match model.weighting.as_str() {
        "unweighted" => Weighting::Unweighted,
        "value" => Weighting::ValueWeighted,
        other => return Err(Error::Config(format!("unknown weighting `{other}`"))),
    };
    let clustering = match model.cluster.as_str() {
        "two-way" => Clustering::TwoWay,
        "plant" => Clustering::Plant,
        "product" => Clustering::Product,
        other => return Err(Error::Config(format!("unknown clustering `{other}`"))),
    };
    let marginal_effect = match model.marginal_effect.as_str() {
        "at-means" => MarginalEffectKind::AtMeans,
        "average" => MarginalEffectKind::Average,
        other => return Err(Error::Config(format!("unknown marginal effect `{other}`"))),
    };
    let mode = match &model.calibrate {
        Some(raw) => {
            let (alpha, sigma) = parse_calibration(raw)?;
            if !crate::demand::is_admissible(alpha, sigma) {
                return Err(Error::Config(format!(
                    "calibrated demand must satisfy alpha > 0 and 0 < sigma < 1 (got alpha={alpha}, sigma={sigma})"
                )));
            }
            DemandMode::Calibrate { alpha, sigma }
        }
        None => DemandMode::Estimate,
    };
    let mut gmm = MomentSpec::preset(&model.gmm_preset)?;
    gmm.constant = !model.no_constant;
    let mut demand = DemandSpec::default();
    demand.fixed_effects.year = !model.no_year_fe;
    demand.fixed_effects.market = !model.no_market_fe;
    demand.lagged_instrument = !model.no_lagged_instrument;
    demand.nest_count_instrument = model.nest_count_instrument;
    demand.clustering = clustering;
    Ok(PipelineConfig {
        instruments: InstrumentConfig {
            reference,
            weighting,
            min_contributors: model.min_contributors,
            pooled_shares: model.pooled_shares,
        },
        demand,
        market,
        gmm,
        mode,
        marginal_effect,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("--tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

struct BootPlan {
    b: usize,
    seed: u64,
    mode_name: String,
}

fn boot_plan(args: &BootArgs, required: bool) -> Result<Option<BootPlan>> {
    let b = match (args.bootstrap, required) {
        (Some(b), _) => b,
        (None, true) => return Err(Error::Config("--bootstrap B is required".into())),
        (None, false) => return Ok(None),
    };
    if b < 2 {
        return Err(Error::Config("--bootstrap needs at least 2 replications".into()));
    }
    if !matches!(args.mode.as_str(), "nonparametric" | "semi-parametric") {
        return Err(Error::Config(format!(
            "unknown --mode `{}` (expected nonparametric or semi-parametric)",
            args.mode
        )));
    }
    let seed = resolve_seed(args.seed)?
        .ok_or_else(|| Error::Config(format!("a seed is required for the bootstrap (--seed or {SEED_ENV})")))?;
    Ok(Some(BootPlan {
        b,
        seed,
        mode_name: args.mode.clone(),
    }))
}

fn run_bootstrap(panel: &Panel, tau: f64, config: &PipelineConfig, run: &PipelineRun, plan: &BootPlan) -> Result<BootstrapResult> {
    let mode = match plan.mode_name.as_str() {
        "semi-parametric" => {
            let d = run
                .demand
                .as_ref()
                .ok_or_else(|| run.failure())?;
            let vcov = d.vcov.ok_or_else(|| {
                Error::Config("semi-parametric bootstrap needs an estimated demand covariance; calibrated demand has none".into())
            })?;
            BootstrapMode::SemiParametric {
                alpha: d.alpha,
                sigma: d.sigma,
                vcov,
            }
        }
        _ => BootstrapMode::Nonparametric,
    };
    let names: Vec<String> = BOOTSTRAP_PARAMS.iter().map(|s| s.to_string()).collect();
    block_bootstrap(panel, bootstrap_pipeline(panel, tau, config)?, &names, plan.b, plan.seed, mode)
}

fn boot_echo(plan: &Option<BootPlan>) -> Vec<(String, String)> {
    match plan {
        Some(p) => vec![
            ("bootstrap.replications".into(), p.b.to_string()),
            ("bootstrap.mode".into(), p.mode_name.clone()),
            ("bootstrap.seed".into(), p.seed.to_string()),
        ],
        None => vec![("bootstrap.replications".into(), "0".into())],
    }
}

fn bootstrap_se_csv(result: &BootstrapResult, mode: &str) -> String {
    let mut s = String::from("parameter,se,replications,failed,mode\n");
    for (n, se) in result.names.iter().zip(&result.se) {
        s.push_str(&format!("{n},{se},{},{},{mode}\n", result.draws.len(), result.failed));
    }
    s
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let loaded = load_data(&args.data)?;
    let dir = &args.common.out;
    loaded.panel.write_csv(dir)?;
    let mut files = Vec::new();
    for f in [OUTPUTS_FILE, INPUTS_FILE, PURCHASES_FILE] {
        let p = dir.join(f);
        files.push((f.to_string(), std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?));
    }
    files.push(("ingest_log.txt".into(), loaded.log.render()));
    let mut echo = vec![("command".to_string(), "ingest".to_string())];
    echo.extend(loaded.echo);
    write_with_manifest(dir, &echo, &files)
}

fn estimate_files(run: &PipelineRun, config: &PipelineConfig, boot: Option<&(BootstrapResult, String)>) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let hash = config.demand.hash();
    if let Some(t) = &run.instruments {
        files.push(("instruments.csv".into(), t.to_csv()));
    }
    if let Some(d) = &run.demand {
        files.push((
            "demand_estimate.csv".into(),
            format!("{}\n{}\n", crate::demand::DemandEstimate::csv_header(), d.csv_row()),
        ));
    }
    if let Some(c) = &run.costs {
        files.push(("allocations.csv".into(), c.to_csv()));
    }
    let mut production = run.production.clone();
    if let (Some(p), Some((b, _))) = (production.as_mut(), boot) {
        p.se_bootstrap = Some([b.se[0], b.se[1], b.se[2]]);
    }
    if let Some(p) = &production {
        files.push((
            "production_estimate.csv".into(),
            format!("{}\n{}", crate::production::ProductionEstimate::csv_header(), p.csv_rows()),
        ));
    }
    if let Some(t) = &run.tfpr {
        files.push(("tfpr.csv".into(), t.to_csv()));
    }
    if let Some(g) = &run.gains {
        files.push(("gains.csv".into(), gains_csv(g, &hash)));
    }
    if let Some(p) = &run.probit {
        files.push(("probit.csv".into(), p.to_csv(&hash)));
    }
    if let (Some(inputs), Some(main)) = (&run.inputs, &production) {
        let mut presets = Vec::new();
        for name in ["col1", "col2", "col3"] {
            if name == main.preset {
                presets.push(main.clone());
                continue;
            }
            let mut spec = MomentSpec::preset(name).expect("known preset");
            spec.constant = config.gmm.constant;
            if let Ok(e) = estimate_gmm(inputs, &spec) {
                presets.push(e);
            }
        }
        files.push(("table1.csv".into(), table1(&presets)));
    }
    if run.demand.as_ref().is_some_and(|d| d.admissible) {
        let row = run.row();
        let gains = row.gain_lower.zip(row.gain_upper);
        let (me, se_kind) = match boot {
            Some((b, mode)) => (row.me_1sd.map(|m| (m, b.se[5])), format!("{mode} block bootstrap")),
            None => (row.me_1sd.zip(row.me_se), "delta method".to_string()),
        };
        files.push(("table2.csv".into(), table2(gains, me, config.marginal_effect, &se_kind)));
    }
    if let Some((b, mode)) = boot {
        files.push(("bootstrap_draws.csv".into(), b.draws_csv()));
        files.push(("bootstrap_se.csv".into(), bootstrap_se_csv(b, mode)));
    }
    files
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    check_tau(args.tau)?;
    let plan = boot_plan(&args.boot, false)?;
    let loaded = load_data(&args.data)?;
    let config = pipeline_config(&args.model, loaded.market.clone())?;
    let prep = prepare(&loaded.panel, &config)?;
    let run = with_jobs(args.common.jobs, || run_single_tau(&prep, args.tau, &config))??;
    let boot = match (&plan, run.error.is_none()) {
        (Some(p), true) => Some((
            with_jobs(args.common.jobs, || run_bootstrap(&loaded.panel, args.tau, &config, &run, p))??,
            p.mode_name.clone(),
        )),
        _ => None,
    };
    let mut echo = vec![
        ("command".to_string(), "estimate".to_string()),
        ("tau".to_string(), args.tau.to_string()),
    ];
    echo.extend(loaded.echo);
    echo.extend(config.echo());
    echo.extend(boot_echo(&plan));
    if let Some(c) = &run.costs {
        echo.push(("max_foc_solver_residual".into(), format!("{:e}", c.max_solver_residual)));
    }
    write_with_manifest(&args.common.out, &echo, &estimate_files(&run, &config, boot.as_ref()))?;
    match &run.error {
        Some(_) => Err(run.failure_estimation()),
        None => Ok(()),
    }
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<()> {
    check_tau(args.tau)?;
    let plan = boot_plan(&args.boot, true)?.expect("required");
    let loaded = load_data(&args.data)?;
    let config = pipeline_config(&args.model, loaded.market.clone())?;
    let prep = prepare(&loaded.panel, &config)?;
    let run = run_single_tau(&prep, args.tau, &config)?;
    if run.error.is_some() {
        return Err(run.failure_estimation());
    }
    let result = with_jobs(args.common.jobs, || run_bootstrap(&loaded.panel, args.tau, &config, &run, &plan))??;
    let mut echo = vec![
        ("command".to_string(), "bootstrap".to_string()),
        ("tau".to_string(), args.tau.to_string()),
    ];
    echo.extend(loaded.echo);
    echo.extend(config.echo());
    echo.extend(boot_echo(&Some(plan)));
    let mode = args.boot.mode.clone();
    write_with_manifest(
        &args.common.out,
        &echo,
        &[
            ("bootstrap_draws.csv".into(), result.draws_csv()),
            ("bootstrap_se.csv".into(), bootstrap_se_csv(&result, &mode)),
        ],
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let taus = parse_grid(&args.grid)?;
    let loaded = load_data(&args.data)?;
    let config = pipeline_config(&args.model, loaded.market.clone())?;
    let table = with_jobs(args.common.jobs, || run_threshold_sweep(&loaded.panel, &taus, &config))??;
    let mut echo = vec![
        ("command".to_string(), "sweep".to_string()),
        ("grid".to_string(), args.grid.clone()),
    ];
    echo.extend(loaded.echo);
    echo.extend(config.echo());
    emit_report(&table, &echo, &args.common.out)?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let table = SweepTable::load(&args.from.join(SWEEP_FILE))?;
    let manifest = args.from.join(MANIFEST_FILE);
    let echo = if manifest.exists() {
        read_manifest_config(&manifest)?
    } else {
        Vec::new()
    };
    emit_report(&table, &echo, &args.common.out)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        seed: resolve_seed(args.seed)?.unwrap_or(d.seed),
        n_plants: args.plants.unwrap_or(d.n_plants),
        n_years: args.years.unwrap_or(d.n_years),
        n_markets: args.markets.unwrap_or(d.n_markets),
        nests_per_market: args.nests.unwrap_or(d.nests_per_market),
        max_products: args.max_products.unwrap_or(d.max_products),
        alpha: args.alpha.unwrap_or(d.alpha),
        sigma: args.sigma.unwrap_or(d.sigma),
        endogeneity: args.endogeneity.unwrap_or(d.endogeneity),
        ..d
    };
    let out = with_jobs(args.common.jobs, || generate_synthetic(&config))??;
    let dir = &args.common.out;
    out.write(dir)?;
    let mut files = Vec::new();
    for f in [OUTPUTS_FILE, INPUTS_FILE, PURCHASES_FILE, MARKET_SIZE_FILE, crate::synth::TRUTH_FILE] {
        let p = dir.join(f);
        files.push((f.to_string(), std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?));
    }
    let echo = vec![
        ("command".to_string(), "synth".to_string()),
        ("synth".to_string(), format!("{config:?}")),
    ];
    write_with_manifest(dir, &echo, &files)
}

impl PipelineRun {
    /// Error for a run whose downstream stages did not complete.
    fn failure_estimation(&self) -> Error {
        Error::Numerical(self.error.clone().unwrap_or_else(|| "pipeline stage missing".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parse arguments and run. Returns the process exit status: 0 on success,
/// 1 on usage or validation errors, 2 on estimation errors.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_parses_in_any_order() {
        assert_eq!(parse_calibration("sigma=0.5,alpha=0.2").unwrap(), (0.2, 0.5));
        assert!(parse_calibration("alpha=0.2").is_err());
        assert!(parse_calibration("alpha=x,sigma=0.5").is_err());
    }

    #[test]
    fn grid_parses() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(dispatch(["prodloom", "estimate", "--bogus"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(dispatch(["prodloom", "--help"]), 0);
    }
}
