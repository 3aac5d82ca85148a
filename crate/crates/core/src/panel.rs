//! Plant-product panel ingestion, validation and normalization.
//!
//! Four CSV inputs are understood (UTF-8, header row, comma separated):
//!
//! * `outputs.csv`: `plant_id,year,product_code,quantity,revenue`
//! * `inputs.csv`: `plant_id,year,labor,capital,materials,sector`
//! * `purchases.csv`: `plant_id,year,input_code,quantity,value`
//! * `concordance.csv`: `source_code,target_code`
//!
//! A [`Panel`] is immutable once built. Every ingestion finding is written
//! to an [`IngestLog`] with a machine-parseable prefix (`DROP`, `DUP`,
//! `ORPHAN`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const OUTPUTS_FILE: &str = "outputs.csv";
pub const INPUTS_FILE: &str = "inputs.csv";
pub const PURCHASES_FILE: &str = "purchases.csv";

const OUTPUT_COLUMNS: [&str; 5] = ["plant_id", "year", "product_code", "quantity", "revenue"];
const INPUT_COLUMNS: [&str; 6] = ["plant_id", "year", "labor", "capital", "materials", "sector"];
const PURCHASE_COLUMNS: [&str; 5] = ["plant_id", "year", "input_code", "quantity", "value"];
const CONCORDANCE_COLUMNS: [&str; 2] = ["source_code", "target_code"];

/// Five-character product code. The first three characters identify the
/// market, the full code identifies the nest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProductCode(String);

impl ProductCode {
    pub fn parse(raw: &str, alphabet: &str) -> Result<Self> {
        let code = raw.trim();
        if code.chars().count() != 5 || !code.chars().all(|c| alphabet.contains(c)) {
            return Err(Error::ProductCode(raw.to_string()));
        }
        Ok(ProductCode(code.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Market `h(j)`: the 3-character prefix.
    pub fn market3(&self) -> &str {
        &self.0[..3]
    }

    /// Nest `g(j)`: the full 5-character code.
    pub fn nest5(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProductCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sector {
    Machinery,
    NonMachinery,
}

impl Sector {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "machinery" => Some(Sector::Machinery),
            "non-machinery" | "nonmachinery" | "non_machinery" => Some(Sector::NonMachinery),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Machinery => "machinery",
            Sector::NonMachinery => "non-machinery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantProductObs {
    pub plant_id: String,
    pub year: i32,
    pub product: ProductCode,
    pub quantity: f64,
    pub revenue: f64,
    pub unit_price: f64,
}

impl PlantProductObs {
    pub fn new(plant_id: impl Into<String>, year: i32, product: ProductCode, quantity: f64, revenue: f64) -> Self {
        PlantProductObs {
            plant_id: plant_id.into(),
            year,
            product,
            quantity,
            revenue,
            unit_price: revenue / quantity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantInputTotals {
    pub plant_id: String,
    pub year: i32,
    pub labor: f64,
    pub capital: f64,
    pub materials: f64,
    pub sector: Sector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPurchase {
    pub plant_id: String,
    pub year: i32,
    pub input_code: String,
    pub value: f64,
    pub quantity: f64,
    pub unit_value: f64,
}

impl InputPurchase {
    pub fn new(plant_id: impl Into<String>, year: i32, input_code: impl Into<String>, quantity: f64, value: f64) -> Self {
        InputPurchase {
            plant_id: plant_id.into(),
            year,
            input_code: input_code.into(),
            value,
            quantity,
            unit_value: value / quantity,
        }
    }
}

/// Immutable analysis panel. Rows are kept sorted by their natural keys so
/// that serialization is canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    observations: Vec<PlantProductObs>,
    inputs: Vec<PlantInputTotals>,
    purchases: Vec<InputPurchase>,
    sector_tags: BTreeMap<String, Sector>,
    product_counts: BTreeMap<(String, i32), usize>,
    input_index: BTreeMap<(String, i32), usize>,
}

impl Panel {
    /// Assemble a panel from rows. Rows are sorted and derived maps are
    /// rebuilt; no validation happens here (see [`validate_panel`]).
    pub fn from_parts(
        mut observations: Vec<PlantProductObs>,
        mut inputs: Vec<PlantInputTotals>,
        mut purchases: Vec<InputPurchase>,
    ) -> Self {
        observations.sort_by(|a, b| {
            (&a.plant_id, a.year, &a.product).cmp(&(&b.plant_id, b.year, &b.product))
        });
        inputs.sort_by(|a, b| (&a.plant_id, a.year).cmp(&(&b.plant_id, b.year)));
        purchases.sort_by(|a, b| {
            (&a.plant_id, a.year, &a.input_code).cmp(&(&b.plant_id, b.year, &b.input_code))
        });
        let mut sector_tags = BTreeMap::new();
        let mut input_index = BTreeMap::new();
        for (i, row) in inputs.iter().enumerate() {
            sector_tags.insert(row.plant_id.clone(), row.sector);
            input_index.insert((row.plant_id.clone(), row.year), i);
        }
        let mut product_counts: BTreeMap<(String, i32), usize> = BTreeMap::new();
        for obs in &observations {
            *product_counts.entry((obs.plant_id.clone(), obs.year)).or_default() += 1;
        }
        Panel {
            observations,
            inputs,
            purchases,
            sector_tags,
            product_counts,
            input_index,
        }
    }

    pub fn observations(&self) -> &[PlantProductObs] {
        &self.observations
    }

    pub fn inputs(&self) -> &[PlantInputTotals] {
        &self.inputs
    }

    pub fn purchases(&self) -> &[InputPurchase] {
        &self.purchases
    }

    pub fn sector_tags(&self) -> &BTreeMap<String, Sector> {
        &self.sector_tags
    }

    pub fn product_counts(&self) -> &BTreeMap<(String, i32), usize> {
        &self.product_counts
    }

    pub fn product_count(&self, plant_id: &str, year: i32) -> usize {
        self.product_counts
            .get(&(plant_id.to_string(), year))
            .copied()
            .unwrap_or(0)
    }

    pub fn input_totals(&self, plant_id: &str, year: i32) -> Option<&PlantInputTotals> {
        self.input_index
            .get(&(plant_id.to_string(), year))
            .map(|&i| &self.inputs[i])
    }

    /// Distinct plant ids appearing anywhere in the panel, sorted.
    pub fn plant_ids(&self) -> Vec<String> {
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        ids.extend(self.observations.iter().map(|o| o.plant_id.as_str()));
        ids.extend(self.inputs.iter().map(|o| o.plant_id.as_str()));
        ids.extend(self.purchases.iter().map(|o| o.plant_id.as_str()));
        ids.into_iter().map(str::to_string).collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let ys: BTreeSet<i32> = self.observations.iter().map(|o| o.year).collect();
        ys.into_iter().collect()
    }

    /// Rebuild the panel from resampled plants. Each drawn plant gets a
    /// fresh id `{orig}#{draw}` so duplicated plants stay distinct clusters.
    pub fn resample_plants(&self, draws: &[String]) -> Panel {
        let mut by_plant_obs: BTreeMap<&str, Vec<&PlantProductObs>> = BTreeMap::new();
        for o in &self.observations {
            by_plant_obs.entry(&o.plant_id).or_default().push(o);
        }
        let mut by_plant_inp: BTreeMap<&str, Vec<&PlantInputTotals>> = BTreeMap::new();
        for o in &self.inputs {
            by_plant_inp.entry(&o.plant_id).or_default().push(o);
        }
        let mut by_plant_pur: BTreeMap<&str, Vec<&InputPurchase>> = BTreeMap::new();
        for o in &self.purchases {
            by_plant_pur.entry(&o.plant_id).or_default().push(o);
        }
        let mut obs = Vec::new();
        let mut inputs = Vec::new();
        let mut purchases = Vec::new();
        for (d, plant) in draws.iter().enumerate() {
            let id = format!("{plant}#{d}");
            for o in by_plant_obs.get(plant.as_str()).into_iter().flatten() {
                let mut o = (*o).clone();
                o.plant_id = id.clone();
                obs.push(o);
            }
            for o in by_plant_inp.get(plant.as_str()).into_iter().flatten() {
                let mut o = (*o).clone();
                o.plant_id = id.clone();
                inputs.push(o);
            }
            for o in by_plant_pur.get(plant.as_str()).into_iter().flatten() {
                let mut o = (*o).clone();
                o.plant_id = id.clone();
                purchases.push(o);
            }
        }
        Panel::from_parts(obs, inputs, purchases)
    }

    /// Write the three canonical CSV files into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = String::from("plant_id,year,product_code,quantity,revenue\n");
        for o in &self.observations {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                o.plant_id, o.year, o.product, o.quantity, o.revenue
            ));
        }
        write_file(&dir.join(OUTPUTS_FILE), &out)?;

        let mut out = String::from("plant_id,year,labor,capital,materials,sector\n");
        for r in &self.inputs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.plant_id,
                r.year,
                r.labor,
                r.capital,
                r.materials,
                r.sector.as_str()
            ));
        }
        write_file(&dir.join(INPUTS_FILE), &out)?;

        let mut out = String::from("plant_id,year,input_code,quantity,value\n");
        for p in &self.purchases {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.plant_id, p.year, p.input_code, p.quantity, p.value
            ));
        }
        write_file(&dir.join(PURCHASES_FILE), &out)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Characters allowed in product codes.
    pub alphabet: String,
    /// Optional per-year revenue deflators; revenue is divided by the
    /// deflator of its year. Off by default.
    pub deflators: Option<BTreeMap<i32, f64>>,
    /// Reject unmapped codes during concordance (otherwise drop them).
    pub strict_concordance: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            alphabet: "0123456789".to_string(),
            deflators: None,
            strict_concordance: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestLog {
    pub lines: Vec<String>,
}

impl IngestLog {
    fn push(&mut self, code: &str, msg: String) {
        self.lines.push(format!("{code} {msg}"));
    }

    pub fn count(&self, code: &str) -> usize {
        let prefix = format!("{code} ");
        self.lines.iter().filter(|l| l.starts_with(&prefix)).count()
    }

    pub fn drop_count(&self) -> usize {
        self.count("DROP")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: Panel,
    pub log: IngestLog,
}

/// Read a CSV file whose header must contain exactly `expected` columns
/// (any order). Rows are returned as `(line_number, fields)` with fields in
/// `expected` order.
pub(crate) fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let label = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::csv(path, e),
        })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    for h in &headers {
        if !expected.contains(&h.as_str()) {
            return Err(Error::Schema {
                file: label,
                column: h.clone(),
                problem: "is not part of the schema".into(),
            });
        }
    }
    let mut order = Vec::with_capacity(expected.len());
    for col in expected {
        match headers.iter().position(|h| h == col) {
            Some(i) => order.push(i),
            None => {
                return Err(Error::Schema {
                    file: label,
                    column: col.to_string(),
                    problem: "is missing from the header".into(),
                })
            }
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let fields = order
            .iter()
            .map(|&j| rec.get(j).unwrap_or("").to_string())
            .collect();
        rows.push((i + 2, fields));
    }
    Ok(rows)
}

fn parse_num<T: std::str::FromStr>(file: &str, column: &str, line: usize, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::Schema {
        file: file.to_string(),
        column: column.to_string(),
        problem: format!("has unparseable value `{raw}` on line {line}"),
    })
}

/// Ingest the three panel files.
pub fn load_panel(
    output_path: &Path,
    inputs_path: &Path,
    purchases_path: &Path,
    config: &IngestConfig,
) -> Result<Ingested> {
    let mut log = IngestLog::default();

    let mut inputs = Vec::new();
    let mut seen_inputs = BTreeSet::new();
    let mut dup_inputs = Vec::new();
    for (line, f) in read_csv(inputs_path, &INPUT_COLUMNS)? {
        let year: i32 = parse_num(INPUTS_FILE, "year", line, &f[1])?;
        let labor: f64 = parse_num(INPUTS_FILE, "labor", line, &f[2])?;
        let capital: f64 = parse_num(INPUTS_FILE, "capital", line, &f[3])?;
        let materials: f64 = parse_num(INPUTS_FILE, "materials", line, &f[4])?;
        let sector = Sector::parse(&f[5]).ok_or_else(|| Error::Schema {
            file: INPUTS_FILE.into(),
            column: "sector".into(),
            problem: format!("has unknown sector `{}` on line {line}", f[5]),
        })?;
        if !seen_inputs.insert((f[0].clone(), year)) {
            dup_inputs.push(format!("{}/{}", f[0], year));
            continue;
        }
        let positive = [labor, capital, materials].iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            log.push(
                "DROP",
                format!("file=inputs line={line} plant={} year={year} reason=non-positive input", f[0]),
            );
            continue;
        }
        inputs.push(PlantInputTotals {
            plant_id: f[0].clone(),
            year,
            labor,
            capital,
            materials,
            sector,
        });
    }
    if !dup_inputs.is_empty() {
        for d in &dup_inputs {
            log.push("DUP", format!("file=inputs key={d}"));
        }
        return Err(Error::DuplicateKey(dup_inputs));
    }
    let input_keys: BTreeSet<(String, i32)> =
        inputs.iter().map(|r| (r.plant_id.clone(), r.year)).collect();
    let tagged: BTreeSet<&str> = inputs.iter().map(|r| r.plant_id.as_str()).collect();

    let mut observations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for (line, f) in read_csv(output_path, &OUTPUT_COLUMNS)? {
        let year: i32 = parse_num(OUTPUTS_FILE, "year", line, &f[1])?;
        let product = ProductCode::parse(&f[2], &config.alphabet).map_err(|_| Error::Schema {
            file: OUTPUTS_FILE.into(),
            column: "product_code".into(),
            problem: format!("has invalid code `{}` on line {line}", f[2]),
        })?;
        let quantity: f64 = parse_num(OUTPUTS_FILE, "quantity", line, &f[3])?;
        let mut revenue: f64 = parse_num(OUTPUTS_FILE, "revenue", line, &f[4])?;
        let key = (f[0].clone(), year, product.clone());
        if !seen.insert(key) {
            dups.push(format!("{}/{}/{}", f[0], year, product));
            continue;
        }
        if !(quantity.is_finite() && quantity > 0.0 && revenue.is_finite() && revenue > 0.0) {
            log.push(
                "DROP",
                format!(
                    "file=outputs line={line} plant={} year={year} product={product} reason=non-positive quantity or revenue",
                    f[0]
                ),
            );
            continue;
        }
        if let Some(defl) = &config.deflators {
            let d = defl
                .get(&year)
                .ok_or_else(|| Error::Config(format!("no deflator for year {year}")))?;
            revenue /= d;
        }
        if !input_keys.contains(&(f[0].clone(), year)) {
            log.push(
                "ORPHAN",
                format!("file=outputs line={line} plant={} year={year} product={product} reason=no input totals", f[0]),
            );
            continue;
        }
        observations.push(PlantProductObs::new(f[0].clone(), year, product, quantity, revenue));
    }
    if !dups.is_empty() {
        for d in &dups {
            log.push("DUP", format!("file=outputs key={d}"));
        }
        return Err(Error::DuplicateKey(dups));
    }

    // Line items for the same (plant, year, code) are summed.
    let mut agg: BTreeMap<(String, i32, String), (f64, f64)> = BTreeMap::new();
    for (line, f) in read_csv(purchases_path, &PURCHASE_COLUMNS)? {
        let year: i32 = parse_num(PURCHASES_FILE, "year", line, &f[1])?;
        let quantity: f64 = parse_num(PURCHASES_FILE, "quantity", line, &f[3])?;
        let value: f64 = parse_num(PURCHASES_FILE, "value", line, &f[4])?;
        if !(quantity.is_finite() && quantity > 0.0 && value.is_finite() && value > 0.0) {
            log.push(
                "DROP",
                format!(
                    "file=purchases line={line} plant={} year={year} code={} reason=non-positive quantity or value",
                    f[0], f[2]
                ),
            );
            continue;
        }
        if !tagged.contains(f[0].as_str()) {
            log.push(
                "ORPHAN",
                format!("file=purchases line={line} plant={} year={year} code={} reason=no sector tag", f[0], f[2]),
            );
            continue;
        }
        let e = agg.entry((f[0].clone(), year, f[2].clone())).or_insert((0.0, 0.0));
        e.0 += quantity;
        e.1 += value;
    }
    let purchases = agg
        .into_iter()
        .map(|((p, y, c), (q, v))| InputPurchase::new(p, y, c, q, v))
        .collect();

    let panel = Panel::from_parts(observations, inputs, purchases);
    let report = validate_panel(&panel);
    if !report.is_valid() {
        return Err(Error::Validation(report.render()));
    }
    Ok(Ingested { panel, log })
}

/// Convenience wrapper: load `outputs.csv`, `inputs.csv`, `purchases.csv`
/// from one directory.
pub fn load_panel_dir(dir: &Path, config: &IngestConfig) -> Result<Ingested> {
    load_panel(
        &dir.join(OUTPUTS_FILE),
        &dir.join(INPUTS_FILE),
        &dir.join(PURCHASES_FILE),
        config,
    )
}

/// Product-code concordance (source scheme to target scheme).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Concordance {
    pub map: BTreeMap<String, String>,
}

impl Concordance {
    pub fn load(path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (_, f) in read_csv(path, &CONCORDANCE_COLUMNS)? {
            map.insert(f[0].clone(), f[1].clone());
        }
        Ok(Concordance { map })
    }

    pub fn identity<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        Concordance {
            map: codes.into_iter().map(|c| (c.to_string(), c.to_string())).collect(),
        }
    }
}

/// Rewrite product codes through `mapping`. Collisions within a
/// (plant, year) are merged by summing quantity and revenue.
pub fn apply_concordance(
    panel: &Panel,
    mapping: &Concordance,
    config: &IngestConfig,
) -> Result<(Panel, IngestLog)> {
    let mut log = IngestLog::default();
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let mut merged: BTreeMap<(String, i32, ProductCode), (f64, f64)> = BTreeMap::new();
    for o in panel.observations() {
        let Some(target) = mapping.map.get(o.product.as_str()) else {
            missing.insert(o.product.to_string());
            continue;
        };
        let code = ProductCode::parse(target, &config.alphabet)?;
        let e = merged
            .entry((o.plant_id.clone(), o.year, code))
            .or_insert((0.0, 0.0));
        e.0 += o.quantity;
        e.1 += o.revenue;
    }
    if !missing.is_empty() {
        if config.strict_concordance {
            return Err(Error::MissingMapping(missing.into_iter().collect()));
        }
        for code in &missing {
            log.push("DROP", format!("product={code} reason=unmapped code"));
        }
    }
    let observations = merged
        .into_iter()
        .map(|((p, y, c), (q, r))| PlantProductObs::new(p, y, c, q, r))
        .collect();
    Ok((
        Panel::from_parts(observations, panel.inputs().to_vec(), panel.purchases().to_vec()),
        log,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindingKind {
    Orphan,
    Positivity,
    PriceIdentity,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub kind: FindingKind,
    /// Table the row belongs to (`outputs`, `inputs`, `purchases`).
    pub table: &'static str,
    pub row: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    pub fn render(&self) -> String {
        self.findings
            .iter()
            .map(|f| format!("{:?} {}[{}]: {}", f.kind, f.table, f.row, f.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn validate_panel(panel: &Panel) -> ValidationReport {
    let mut findings = Vec::new();
    let mut push = |kind, table, row, detail: String| {
        findings.push(Finding {
            kind,
            table,
            row,
            detail,
        })
    };
    let mut prev: Option<(&str, i32, &ProductCode)> = None;
    for (i, o) in panel.observations().iter().enumerate() {
        let key = (o.plant_id.as_str(), o.year, &o.product);
        if prev == Some(key) {
            push(FindingKind::Duplicate, "outputs", i, format!("{}/{}/{}", o.plant_id, o.year, o.product));
        }
        prev = Some(key);
        if !(o.quantity > 0.0 && o.revenue > 0.0) {
            push(FindingKind::Positivity, "outputs", i, "quantity and revenue must be positive".into());
        }
        if (o.unit_price * o.quantity - o.revenue).abs() > 1e-9 * o.revenue.abs() {
            push(FindingKind::PriceIdentity, "outputs", i, "unit_price * quantity != revenue".into());
        }
        if panel.input_totals(&o.plant_id, o.year).is_none() {
            push(
                FindingKind::Orphan,
                "outputs",
                i,
                format!("no input totals for {}/{}", o.plant_id, o.year),
            );
        }
    }
    for (i, r) in panel.inputs().iter().enumerate() {
        for (name, v) in [("labor", r.labor), ("capital", r.capital), ("materials", r.materials)] {
            if !(v.is_finite() && v > 0.0) {
                push(FindingKind::Positivity, "inputs", i, format!("{name} = {v} is not positive"));
            }
        }
    }
    for (i, p) in panel.purchases().iter().enumerate() {
        if !(p.quantity > 0.0 && p.unit_value.is_finite() && p.unit_value > 0.0) {
            push(FindingKind::Positivity, "purchases", i, "unit value must be positive".into());
        }
        if !panel.sector_tags().contains_key(&p.plant_id) {
            push(FindingKind::Orphan, "purchases", i, format!("no sector tag for {}", p.plant_id));
        }
    }
    ValidationReport { findings }
}
