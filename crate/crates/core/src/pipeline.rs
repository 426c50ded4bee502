//! End-to-end orchestration: configuration, staged runs, and report tables.
//!
//! A run loads microdata and geography, builds direct-estimate cells per
//! (indicator, subgroup), fits the configured model catalog to each, selects
//! a winner, and writes level, trend, and aggregation tables plus a manifest.
//! The stages are also callable separately ([`run_direct`], [`run_fit`],
//! [`run_report`]) and communicate through the flat files they leave in the
//! output directory, so the chained [`run`] and the staged path produce
//! byte-identical tables under the same configuration and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::direct::{build_cells, read_cells, write_cells, CellStatus, DirectEstimate, DirectOptions};
use crate::error::{Error, Result};
use crate::inference::{
    fit_model, summarize, FitDiagnostics, FitMode, FitOptions, LatentSystem, ModelSpec,
    PosteriorFit,
};
use crate::selection::{
    build_report, select_model_with_agreement, selection_table, shares_table, SelectionReport,
};
use crate::survey::load::{
    canonical_schema, load_geography, load_microdata, load_population, MicrodataSchema,
};
use crate::survey::{GeographyGraph, Indicator, Subgroup, SurveyDataset};
use crate::util::{inv_logit, median_ci95};

/// The four outcomes modeled by default; any-method prevalence can be added
/// through the config.
pub const DEFAULT_INDICATORS: [Indicator; 4] = [
    Indicator::Mcpr,
    Indicator::Tcpr,
    Indicator::UnmetNeed,
    Indicator::DemandSatisfied,
];

/// MCMC chain sizing, mirrored into [`FitOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub n_samples: usize,
    pub burnin: usize,
    pub adapt: usize,
    pub thin: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        let d = FitOptions::default();
        Self { n_samples: d.n_samples, burnin: d.burnin, adapt: d.adapt, thin: d.thin }
    }
}

impl McmcSettings {
    fn fit_options(&self, mode: FitMode, seed: u64) -> FitOptions {
        FitOptions {
            mode,
            n_samples: self.n_samples,
            burnin: self.burnin,
            adapt: self.adapt,
            thin: self.thin,
            seed,
        }
    }
}

/// A validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub microdata: PathBuf,
    pub areas_file: PathBuf,
    pub edges_file: PathBuf,
    pub population: Option<PathBuf>,
    pub output: PathBuf,
    /// First year of the estimation grid.
    pub first_year: i32,
    /// Last year surveys may fall in; the grid extends at least this far.
    pub last_year: i32,
    /// Last grid year; defaults to one past the last survey year. Must not
    /// precede the last survey year.
    pub projection_horizon: Option<i32>,
    pub indicators: Vec<Indicator>,
    pub subgroups: Vec<Subgroup>,
    /// Models searched per (indicator, subgroup), in catalog order.
    pub models: Vec<ModelSpec>,
    pub mode: FitMode,
    pub seed: u64,
    pub mcmc: McmcSettings,
    pub direct: DirectOptions,
    /// Warn when the median number of usable cells per area falls below this.
    pub sparsity_threshold: f64,
    /// SHA-256 of the configuration text, recorded in the manifest.
    pub config_sha256: String,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    paths: RawPaths,
    years: RawYears,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    mcmc: McmcSettings,
    #[serde(default)]
    direct: DirectOptions,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    microdata: PathBuf,
    areas: PathBuf,
    edges: PathBuf,
    #[serde(default)]
    population: Option<PathBuf>,
    output: PathBuf,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawYears {
    first: i32,
    last: i32,
    #[serde(default)]
    projection_horizon: Option<i32>,
}

#[derive(serde::Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawRun {
    indicators: Option<Vec<String>>,
    subgroups: Option<Vec<String>>,
    models: Option<Vec<String>>,
    mode: Option<FitMode>,
    seed: Option<u64>,
    sparsity_threshold: Option<f64>,
}

/// Parses and validates a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if raw.years.first > raw.years.last {
        return Err(Error::Config(format!(
            "years.first {} exceeds years.last {}",
            raw.years.first, raw.years.last
        )));
    }
    if let Some(h) = raw.years.projection_horizon {
        if h < raw.years.last {
            return Err(Error::Config(format!(
                "projection_horizon {h} precedes years.last {}",
                raw.years.last
            )));
        }
    }
    let mode = raw.run.mode.unwrap_or(FitMode::Full);
    let seed = match (mode, raw.run.seed) {
        (_, Some(s)) => s,
        (FitMode::Full, None) => {
            return Err(Error::Config("full mode requires an explicit seed".into()))
        }
        (FitMode::EmpiricalBayes, None) => 0,
    };
    let indicators = match raw.run.indicators {
        None => DEFAULT_INDICATORS.to_vec(),
        Some(names) => dedup(names.iter().map(|s| Indicator::parse(s)).collect::<Result<_>>()?),
    };
    let subgroups = match raw.run.subgroups {
        None => Subgroup::ALL.to_vec(),
        Some(names) => dedup(names.iter().map(|s| Subgroup::parse(s)).collect::<Result<_>>()?),
    };
    let mut models = match raw.run.models {
        None => ModelSpec::catalog(),
        Some(ids) => ids.iter().map(|s| ModelSpec::parse(s)).collect::<Result<_>>()?,
    };
    models.sort();
    models.dedup();
    if indicators.is_empty() || subgroups.is_empty() || models.is_empty() {
        return Err(Error::Config("indicators, subgroups, and models must be non-empty".into()));
    }
    let mut hash = Sha256::new();
    hash.update(text.as_bytes());
    let config_sha256 = hash.finalize().iter().map(|b| format!("{b:02x}")).collect();

    Ok(RunConfig {
        microdata: raw.paths.microdata,
        areas_file: raw.paths.areas,
        edges_file: raw.paths.edges,
        population: raw.paths.population,
        output: raw.paths.output,
        first_year: raw.years.first,
        last_year: raw.years.last,
        projection_horizon: raw.years.projection_horizon,
        indicators,
        subgroups,
        models,
        mode,
        seed,
        mcmc: raw.mcmc,
        direct: raw.direct,
        sparsity_threshold: raw.run.sparsity_threshold.unwrap_or(3.0),
        config_sha256,
    })
}

/// Reads and parses a TOML run configuration file. Relative paths inside the
/// file are resolved against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    if let Some(dir) = path.parent() {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&p);
            }
        };
        anchor(&mut config.microdata);
        anchor(&mut config.areas_file);
        anchor(&mut config.edges_file);
        if let Some(p) = config.population.as_mut() {
            anchor(p);
        }
        anchor(&mut config.output);
    }
    Ok(config)
}

fn dedup<T: PartialEq>(items: Vec<T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Posterior samples of the survey-free linear predictor, organized on the
/// (area, year) grid. All report tables derive from this.
#[derive(Debug, Clone)]
pub struct EtaGrid {
    pub areas: Vec<String>,
    pub years: Vec<i32>,
    /// K × (n_areas · n_years) logit-scale samples, area-major.
    pub samples: Vec<Vec<f64>>,
}

/// One annual-change summary in percentage points per year.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualChange {
    pub area_id: String,
    pub from_year: i32,
    pub to_year: i32,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// The 95 % interval excludes zero.
    pub significant: bool,
}

impl EtaGrid {
    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    fn idx(&self, area: usize, year_idx: usize) -> usize {
        area * self.years.len() + year_idx
    }

    fn year_index(&self, year: i32) -> Result<usize> {
        self.years.iter().position(|&y| y == year).ok_or(Error::YearOutsideGrid {
            year,
            first: self.years[0],
            last: *self.years.last().unwrap(),
        })
    }

    /// Logit-scale samples of one (area, year) cell.
    pub fn cell(&self, area: usize, year_idx: usize) -> Vec<f64> {
        let g = self.idx(area, year_idx);
        self.samples.iter().map(|row| row[g]).collect()
    }

    /// (median, lo95, hi95) of the prevalence at one (area, year) cell.
    pub fn summarize_cell(&self, area: usize, year_idx: usize) -> (f64, f64, f64) {
        summarize(&self.cell(area, year_idx))
    }

    /// Posterior of the average annual change in prevalence between two grid
    /// years, in percentage points per year: per sample,
    /// `100 · (invlogit(η_{to}) − invlogit(η_{from})) / (to − from)`.
    pub fn annual_change(&self, area: usize, from_year: i32, to_year: i32) -> Result<AnnualChange> {
        if from_year >= to_year {
            return Err(Error::Invalid(format!(
                "annual change needs from_year < to_year, got {from_year} ≥ {to_year}"
            )));
        }
        let t0 = self.year_index(from_year)?;
        let t1 = self.year_index(to_year)?;
        let (g0, g1) = (self.idx(area, t0), self.idx(area, t1));
        let span = f64::from(to_year - from_year);
        let changes: Vec<f64> = self
            .samples
            .iter()
            .map(|row| 100.0 * (inv_logit(row[g1]) - inv_logit(row[g0])) / span)
            .collect();
        let (median, lo95, hi95) = median_ci95(&changes);
        Ok(AnnualChange {
            area_id: self.areas[area].clone(),
            from_year,
            to_year,
            median,
            lo95,
            hi95,
            significant: lo95 > 0.0 || hi95 < 0.0,
        })
    }

    /// Writes the samples as a wide CSV: one row per posterior sample, one
    /// column per (area, year) cell labeled `area:year`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("sample");
        for a in &self.areas {
            for y in &self.years {
                text.push_str(&format!(",{a}:{y}"));
            }
        }
        text.push('\n');
        for (k, row) in self.samples.iter().enumerate() {
            text.push_str(&k.to_string());
            for v in row {
                text.push(',');
                text.push_str(&v.to_string());
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a grid written by [`EtaGrid::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty file".to_string()))?;
        let mut areas: Vec<String> = Vec::new();
        let mut years: Vec<i32> = Vec::new();
        for col in header.split(',').skip(1) {
            let (area, year) = col
                .rsplit_once(':')
                .ok_or_else(|| Error::parse(path, 1, format!("bad column label '{col}'")))?;
            let year: i32 = year
                .parse()
                .map_err(|_| Error::parse(path, 1, format!("bad year in '{col}'")))?;
            if areas.last().map(String::as_str) != Some(area) {
                areas.push(area.to_string());
            }
            if areas.len() == 1 {
                years.push(year);
            }
        }
        let n = areas.len() * years.len();
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut row = Vec::with_capacity(n);
            for v in line.split(',').skip(1) {
                row.push(v.parse::<f64>().map_err(|_| {
                    Error::parse(path, i + 2, format!("bad number '{v}'"))
                })?);
            }
            if row.len() != n {
                return Err(Error::parse(
                    path,
                    i + 2,
                    format!("expected {n} values, found {}", row.len()),
                ));
            }
            samples.push(row);
        }
        let grid = EtaGrid { areas, years, samples };
        // validate the header really was area-major over this grid
        let expect: String = grid
            .areas
            .iter()
            .flat_map(|a| grid.years.iter().map(move |y| format!(",{a}:{y}")))
            .collect();
        if format!("sample{expect}") != header {
            return Err(Error::parse(path, 1, "column labels are not area-major".to_string()));
        }
        Ok(grid)
    }
}

/// Demand satisfied composed from its ingredients: `mcpr / (cpr + unmet)`,
/// all proportions. Used to cross-check the independently modeled indicator.
pub fn demand_satisfied_composed(mcpr: f64, cpr: f64, unmet: f64) -> Result<f64> {
    let den = cpr + unmet;
    if den <= 0.0 {
        return Err(Error::Invalid(
            "demand satisfied undefined: cpr + unmet_need is zero".into(),
        ));
    }
    Ok(mcpr / den)
}

/// National series for one grid year, pooled sample-wise over areas.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub year: i32,
    pub rate_median: f64,
    pub rate_lo95: f64,
    pub rate_hi95: f64,
    pub users_median: f64,
    pub users_lo95: f64,
    pub users_hi95: f64,
}

/// Population-weighted aggregation, sample-wise so cross-area correlation is
/// preserved: per sample and year, `users = Σ_i p_i · pop_i` and
/// `rate = users / Σ_i pop_i`. Years absent from the population table are
/// skipped; a year with only partial area coverage is an error.
pub fn aggregate(
    grid: &EtaGrid,
    population: &BTreeMap<(usize, i32), f64>,
) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::new();
    for (t, &year) in grid.years.iter().enumerate() {
        let covered = (0..grid.n_areas())
            .filter(|&i| population.contains_key(&(i, year)))
            .count();
        if covered == 0 {
            continue;
        }
        if covered < grid.n_areas() {
            let missing = (0..grid.n_areas())
                .find(|&i| !population.contains_key(&(i, year)))
                .unwrap();
            return Err(Error::MissingPopulation { area: grid.areas[missing].clone(), year });
        }
        let total_pop: f64 = (0..grid.n_areas()).map(|i| population[&(i, year)]).sum();
        let mut users = Vec::with_capacity(grid.samples.len());
        for row in &grid.samples {
            let u: f64 = (0..grid.n_areas())
                .map(|i| inv_logit(row[grid.idx(i, t)]) * population[&(i, year)])
                .sum();
            users.push(u);
        }
        let rates: Vec<f64> = users.iter().map(|u| u / total_pop).collect();
        let (rate_median, rate_lo95, rate_hi95) = median_ci95(&rates);
        let (users_median, users_lo95, users_hi95) = median_ci95(&users);
        rows.push(AggregateRow {
            year,
            rate_median,
            rate_lo95,
            rate_hi95,
            users_median,
            users_lo95,
            users_hi95,
        });
    }
    Ok(rows)
}

/// Per-combo record in the run manifest.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComboSummary {
    pub indicator: String,
    pub subgroup: String,
    pub directory: String,
    pub n_cells: usize,
    pub n_ok_cells: usize,
    pub winner: String,
    pub winner_waic: f64,
    /// Whether DIC, WAIC, and LCPO all chose the same model.
    pub criteria_agree: bool,
    pub warnings: Vec<String>,
}

/// Run manifest, also returned by [`run`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: FitMode,
    pub config_sha256: String,
    pub first_year: i32,
    pub last_year: i32,
    pub projection_horizon: i32,
    pub n_areas: usize,
    pub n_records: usize,
    pub surveys: Vec<String>,
    /// "done", or a notice explaining why aggregation was skipped.
    pub aggregation: String,
    pub combos: Vec<ComboSummary>,
}

/// Loaded inputs shared by every stage.
struct Inputs {
    geography: GeographyGraph,
    dataset: SurveyDataset,
    /// Estimation grid `first..=horizon`.
    years: Vec<i32>,
    last_data_year: i32,
    horizon: i32,
    families: Vec<String>,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let mut geography = load_geography(&config.areas_file, &config.edges_file)?;
    if let Some(pop) = &config.population {
        load_population(&mut geography, pop)?;
    }
    let dataset = match load_microdata(&config.microdata, &canonical_schema()) {
        Err(Error::MissingColumn { column, .. }) if column == "family" => {
            load_microdata(&config.microdata, &MicrodataSchema::default())
        }
        other => other,
    }?;
    if dataset.records.is_empty() {
        return Err(Error::Invalid(format!(
            "no usable records in {}",
            config.microdata.display()
        )));
    }
    let min_year = dataset.records.iter().map(|r| r.year).min().unwrap();
    let last_data_year = dataset.records.iter().map(|r| r.year).max().unwrap();
    if min_year < config.first_year || last_data_year > config.last_year {
        return Err(Error::Config(format!(
            "survey years [{min_year}, {last_data_year}] fall outside the configured years [{}, {}]",
            config.first_year, config.last_year
        )));
    }
    let horizon = config.projection_horizon.unwrap_or(last_data_year + 1);
    if horizon < last_data_year {
        return Err(Error::Config(format!(
            "projection horizon {horizon} precedes the last survey year {last_data_year}"
        )));
    }
    let end = horizon.max(config.last_year);
    let years: Vec<i32> = (config.first_year..=end).collect();
    let mut families: Vec<String> = dataset.family_of().into_values().collect();
    families.sort();
    families.dedup();
    Ok(Inputs { geography, dataset, years, last_data_year, horizon: end, families })
}

fn combo_dir(config: &RunConfig, indicator: Indicator, subgroup: Subgroup) -> PathBuf {
    config.output.join(indicator.name()).join(subgroup.name())
}

/// Records the failing stage in a `FAILED` marker file and wraps the error.
fn guard<T>(output: &Path, stage: &str, result: Result<T>) -> Result<T> {
    match result {
        Ok(v) => Ok(v),
        Err(e) => {
            let _ = std::fs::write(
                output.join("FAILED"),
                format!("stage: {stage}\nerror: {e}\n"),
            );
            Err(Error::Stage { stage: stage.to_string(), source: Box::new(e) })
        }
    }
}

fn prepare_output(output: &Path) -> Result<()> {
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let marker = output.join("FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds and writes the direct-estimate cell table for one combo.
fn direct_combo(
    config: &RunConfig,
    inputs: &Inputs,
    indicator: Indicator,
    subgroup: Subgroup,
) -> Result<Vec<DirectEstimate>> {
    let dir = combo_dir(config, indicator, subgroup);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cells = build_cells(
        &inputs.dataset,
        &inputs.geography,
        &[subgroup],
        &[indicator],
        config.direct,
    )?;
    write_cells(&cells, dir.join("direct_cells.csv"))?;
    Ok(cells)
}

/// Everything the fit stage hands to the report stage for one combo.
struct FittedCombo {
    winner: ModelSpec,
    agreed: bool,
    grid: EtaGrid,
    reports: Vec<SelectionReport>,
    diagnostics: FitDiagnostics,
}

/// Fits every configured model to one combo's cells, selects the winner, and
/// writes the selection report, variance decomposition, and winner artifacts.
fn fit_combo(
    config: &RunConfig,
    inputs: &Inputs,
    indicator: Indicator,
    subgroup: Subgroup,
    cells: &[DirectEstimate],
) -> Result<FittedCombo> {
    let dir = combo_dir(config, indicator, subgroup);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let fits: Vec<(ModelSpec, PosteriorFit)> = config
        .models
        .par_iter()
        .map(|&model| {
            let system = LatentSystem::assemble(
                cells,
                model,
                &inputs.geography,
                &inputs.years,
                &inputs.families,
            )?;
            let seed = crate::util::derive_seed(
                config.seed,
                &["fit", indicator.name(), subgroup.name(), &model.id()],
            );
            let options = config.mcmc.fit_options(config.mode, seed);
            let fit = fit_model(&system, model, &options)?;
            Ok((model, fit))
        })
        .collect::<Result<_>>()?;

    let reports: Vec<SelectionReport> = fits.iter().map(|(_, f)| build_report(f)).collect();
    write_text(&dir.join("selection.csv"), &selection_table(&reports))?;
    write_text(&dir.join("variance_shares.csv"), &shares_table(&reports))?;
    let (winner, agreed) = select_model_with_agreement(&reports);
    let (_, winner_fit) = fits
        .into_iter()
        .find(|(m, _)| *m == winner)
        .expect("winner comes from the fitted set");

    let grid = EtaGrid {
        areas: inputs.geography.areas.clone(),
        years: inputs.years.clone(),
        samples: winner_fit.eta_samples,
    };
    grid.write_csv(dir.join("winner_eta.csv"))?;

    let d = &winner_fit.diagnostics;
    let finite = |v: f64| {
        if v.is_finite() {
            serde_json::json!(v)
        } else {
            serde_json::Value::Null
        }
    };
    let winner_json = serde_json::json!({
        "model": winner.id(),
        "criteria_agree": agreed,
        "k": grid.samples.len(),
        "mode": d.mode,
        "acceptance_rate": finite(d.acceptance_rate),
        "ess": d.ess.iter().map(|&e| finite(e)).collect::<Vec<_>>(),
        "log_posterior_at_mode": d.log_posterior_at_mode.map(finite),
        "n_marginal_evals": d.n_marginal_evals,
        "warnings": d.warnings,
        "hyper_names": winner_fit.hyper_names,
    });
    write_text(
        &dir.join("winner.json"),
        &format!("{}\n", serde_json::to_string_pretty(&winner_json).expect("serializable")),
    )?;

    Ok(FittedCombo {
        winner,
        agreed,
        grid,
        reports,
        diagnostics: winner_fit.diagnostics,
    })
}

/// Distinct surveys contributing a usable cell per (area index, year).
fn surveys_informing(
    cells: &[DirectEstimate],
    geography: &GeographyGraph,
) -> BTreeMap<(usize, i32), BTreeSet<String>> {
    let mut map: BTreeMap<(usize, i32), BTreeSet<String>> = BTreeMap::new();
    for c in cells {
        if c.status == CellStatus::Ok {
            if let Some(i) = geography.area_index(&c.area_id) {
                map.entry((i, c.year)).or_default().insert(c.survey_id.clone());
            }
        }
    }
    map
}

/// Writes the estimate, annual-change, and aggregation tables for one combo.
/// Returns combo warnings (data sparsity, skipped aggregation).
fn report_combo(
    config: &RunConfig,
    inputs: &Inputs,
    indicator: Indicator,
    subgroup: Subgroup,
    cells: &[DirectEstimate],
    grid: &EtaGrid,
) -> Result<Vec<String>> {
    let dir = combo_dir(config, indicator, subgroup);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut warnings = Vec::new();

    // estimates
    let informing = surveys_informing(cells, &inputs.geography);
    let mut text = String::from(
        "indicator,subgroup,area_id,year,median,lo95,hi95,n_surveys_informing\n",
    );
    for (i, area) in grid.areas.iter().enumerate() {
        for (t, &year) in grid.years.iter().enumerate() {
            let (median, lo95, hi95) = grid.summarize_cell(i, t);
            let n = informing.get(&(i, year)).map_or(0, BTreeSet::len);
            text.push_str(&format!(
                "{},{},{area},{year},{median},{lo95},{hi95},{n}\n",
                indicator.name(),
                subgroup.name(),
            ));
        }
    }
    write_text(&dir.join("estimates.csv"), &text)?;

    // annual change over the last up-to-five data years
    let to_year = inputs.last_data_year;
    let from_year = (to_year - 5).max(config.first_year);
    if from_year < to_year {
        let mut text =
            String::from("area_id,from_year,to_year,median_pp_per_year,lo95,hi95,significant\n");
        for i in 0..grid.n_areas() {
            let c = grid.annual_change(i, from_year, to_year)?;
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.area_id, c.from_year, c.to_year, c.median, c.lo95, c.hi95, c.significant
            ));
        }
        write_text(&dir.join("annual_change.csv"), &text)?;
    } else {
        warnings.push("annual change skipped: single-year data window".into());
    }

    // aggregation
    match &inputs.geography.population {
        Some(pop) => {
            let rows = aggregate(grid, pop)?;
            let mut text = String::from(
                "year,rate_median,rate_lo95,rate_hi95,users_median,users_lo95,users_hi95\n",
            );
            for r in rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.year,
                    r.rate_median,
                    r.rate_lo95,
                    r.rate_hi95,
                    r.users_median,
                    r.users_lo95,
                    r.users_hi95
                ));
            }
            write_text(&dir.join("aggregate.csv"), &text)?;
        }
        None => warnings.push("aggregation skipped: no population file".into()),
    }

    // data sparsity: median usable cells per area
    let mut per_area = vec![0usize; inputs.geography.n_areas()];
    for c in cells {
        if c.status == CellStatus::Ok {
            if let Some(i) = inputs.geography.area_index(&c.area_id) {
                per_area[i] += 1;
            }
        }
    }
    per_area.sort_unstable();
    let median = per_area[per_area.len() / 2] as f64;
    if median < config.sparsity_threshold {
        warnings.push(format!(
            "data sparsity: median usable cells per area {median} below {}",
            config.sparsity_threshold
        ));
    }
    Ok(warnings)
}

fn combo_summary(
    indicator: Indicator,
    subgroup: Subgroup,
    cells: &[DirectEstimate],
    fitted: &FittedCombo,
    mut warnings: Vec<String>,
) -> ComboSummary {
    warnings.extend(fitted.diagnostics.warnings.iter().cloned());
    let winner_waic = fitted
        .reports
        .iter()
        .find(|r| r.model == fitted.winner)
        .map_or(f64::NAN, |r| r.waic);
    ComboSummary {
        indicator: indicator.name().to_string(),
        subgroup: subgroup.name().to_string(),
        directory: format!("{}/{}", indicator.name(), subgroup.name()),
        n_cells: cells.len(),
        n_ok_cells: cells.iter().filter(|c| c.status == CellStatus::Ok).count(),
        winner: fitted.winner.id(),
        winner_waic,
        criteria_agree: fitted.agreed,
        warnings,
    }
}

fn write_manifest(config: &RunConfig, summary: &RunSummary) -> Result<()> {
    let path = config.output.join("manifest.json");
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
    write_text(&path, &format!("{text}\n"))
}

/// Full pipeline: direct estimation, model search, selection, and reports
/// for every configured (indicator, subgroup). Writes all tables plus
/// `manifest.json` under the output directory and returns the manifest.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    prepare_output(&config.output)?;
    let inputs = guard(&config.output, "load_inputs", load_inputs(config))?;
    let mut combos = Vec::new();
    for &indicator in &config.indicators {
        for &subgroup in &config.subgroups {
            let label = format!("{}/{}", indicator.name(), subgroup.name());
            let cells = guard(
                &config.output,
                &format!("direct:{label}"),
                direct_combo(config, &inputs, indicator, subgroup),
            )?;
            let fitted = guard(
                &config.output,
                &format!("fit:{label}"),
                fit_combo(config, &inputs, indicator, subgroup, &cells),
            )?;
            let warnings = guard(
                &config.output,
                &format!("report:{label}"),
                report_combo(config, &inputs, indicator, subgroup, &cells, &fitted.grid),
            )?;
            combos.push(combo_summary(indicator, subgroup, &cells, &fitted, warnings));
        }
    }
    let summary = RunSummary {
        seed: config.seed,
        mode: config.mode,
        config_sha256: config.config_sha256.clone(),
        first_year: config.first_year,
        last_year: config.last_year,
        projection_horizon: inputs.horizon,
        n_areas: inputs.geography.n_areas(),
        n_records: inputs.dataset.records.len(),
        surveys: inputs.dataset.survey_ids(),
        aggregation: if inputs.geography.population.is_some() {
            "done".into()
        } else {
            "skipped: no population file".into()
        },
        combos,
    };
    guard(&config.output, "manifest", write_manifest(config, &summary))?;
    Ok(summary)
}

/// Stage 1 alone: loads inputs and writes each combo's direct-estimate cell
/// table.
pub fn run_direct(config: &RunConfig) -> Result<()> {
    prepare_output(&config.output)?;
    let inputs = guard(&config.output, "load_inputs", load_inputs(config))?;
    for &indicator in &config.indicators {
        for &subgroup in &config.subgroups {
            let label = format!("{}/{}", indicator.name(), subgroup.name());
            guard(
                &config.output,
                &format!("direct:{label}"),
                direct_combo(config, &inputs, indicator, subgroup),
            )?;
        }
    }
    Ok(())
}

/// Stage 2 alone: reads each combo's cell table (written by [`run_direct`])
/// and writes fits, selection reports, and winner artifacts.
pub fn run_fit(config: &RunConfig) -> Result<()> {
    prepare_output(&config.output)?;
    let inputs = guard(&config.output, "load_inputs", load_inputs(config))?;
    for &indicator in &config.indicators {
        for &subgroup in &config.subgroups {
            let label = format!("{}/{}", indicator.name(), subgroup.name());
            let stage = format!("fit:{label}");
            let dir = combo_dir(config, indicator, subgroup);
            let cells = guard(&config.output, &stage, read_cells(dir.join("direct_cells.csv")))?;
            guard(
                &config.output,
                &stage,
                fit_combo(config, &inputs, indicator, subgroup, &cells),
            )?;
        }
    }
    Ok(())
}

/// Stage 3 alone: reads each combo's cell table and winner samples (written
/// by [`run_fit`]) and writes the report tables.
pub fn run_report(config: &RunConfig) -> Result<()> {
    prepare_output(&config.output)?;
    let inputs = guard(&config.output, "load_inputs", load_inputs(config))?;
    for &indicator in &config.indicators {
        for &subgroup in &config.subgroups {
            let label = format!("{}/{}", indicator.name(), subgroup.name());
            let stage = format!("report:{label}");
            let dir = combo_dir(config, indicator, subgroup);
            let cells = guard(&config.output, &stage, read_cells(dir.join("direct_cells.csv")))?;
            let grid = guard(&config.output, &stage, EtaGrid::read_csv(dir.join("winner_eta.csv")))?;
            guard(
                &config.output,
                &stage,
                report_combo(config, &inputs, indicator, subgroup, &cells, &grid),
            )?;
        }
    }
    Ok(())
}
