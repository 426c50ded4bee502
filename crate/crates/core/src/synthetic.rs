//! Synthetic ground truth and survey generation.
//!
//! Draws a latent prevalence surface from the same generative structure the
//! smoothing models assume (intercept + exchangeable year effects + RW2 trend
//! + BYM spatial effects + optional type-II space–time interaction), then
//! simulates multi-stage cluster surveys around that surface with
//! inverse-inclusion-probability weights. The generating surface is kept next
//! to the microdata so fitted estimates can be scored against the truth;
//! [`calibration_run`] automates that loop over replicates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::direct::{build_cells, DirectOptions};
use crate::error::{Error, Result};
use crate::gmrf::{
    bym_block, iid_block, interaction_block, rw2_block, EffectBlock, EffectName, SpatialVariant,
};
use crate::inference::solver::SystemSolver;
use crate::inference::{fit_model, summarize, FitOptions, LatentSystem, ModelSpec};
use crate::survey::load::write_microdata;
use crate::survey::{
    GeographyGraph, Indicator, LoadReport, Subgroup, SurveyDataset, WomanRecord,
};
use crate::util::{derive_seed, inv_logit};

/// Generating values for the latent surface: a grand mean and one precision
/// per random-effect block. `tau_interaction: None` drops the interaction
/// from the surface.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TruthHypers {
    /// Grand mean on the logit scale.
    pub mu: f64,
    /// Precision of the exchangeable year effects γ.
    pub tau_iid_time: f64,
    /// Precision of the RW2 trend α.
    pub tau_rw2_time: f64,
    /// Precision of the structured (ICAR) spatial component U.
    pub tau_space_u: f64,
    /// Precision of the unstructured spatial component V.
    pub tau_space_v: f64,
    /// Precision of the space–time interaction δ.
    pub tau_interaction: Option<f64>,
}

impl Default for TruthHypers {
    fn default() -> Self {
        Self {
            mu: -1.5,
            tau_iid_time: 400.0,
            tau_rw2_time: 40.0,
            tau_space_u: 4.0,
            tau_space_v: 25.0,
            tau_interaction: Some(150.0),
        }
    }
}

impl TruthHypers {
    /// Named (hyper, value) pairs actually used, matching the hyper-column
    /// names of the generating model.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("mu".into(), self.mu),
            ("tau_iid_time".into(), self.tau_iid_time),
            ("tau_rw2_time".into(), self.tau_rw2_time),
            ("tau_space_u".into(), self.tau_space_u),
            ("tau_space_v".into(), self.tau_space_v),
        ];
        if let Some(t) = self.tau_interaction {
            out.push(("tau_interaction".into(), t));
        }
        out
    }
}

/// One generating effect: its raw block coordinates and its contribution on
/// the (area, year) grid.
#[derive(Debug, Clone)]
pub struct EffectDraw {
    pub name: EffectName,
    /// Raw block coordinates (for the spatial block: `[U; V]` stacked).
    pub coords: Vec<f64>,
    /// Contribution on the grid, area-major (`area * n_years + year_idx`).
    pub grid: Vec<f64>,
}

/// A drawn latent surface. `eta_true` is exactly the sum of the stored
/// effect grids (the intercept counts as one of them).
#[derive(Debug, Clone)]
pub struct TruthSurface {
    /// Area roster, in geography order.
    pub areas: Vec<String>,
    /// Contiguous ascending year grid.
    pub years: Vec<i32>,
    /// Grand mean on the logit scale.
    pub mu: f64,
    /// Per-block effect draws whose grids sum to `eta_true`.
    pub effects: Vec<EffectDraw>,
    /// Generating hyperparameters as (name, value) pairs.
    pub hyper_true: Vec<(String, f64)>,
    eta: Vec<f64>,
}

impl TruthSurface {
    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Latent logit-scale value at (area index, year index).
    pub fn eta(&self, area: usize, year_idx: usize) -> f64 {
        self.eta[area * self.years.len() + year_idx]
    }

    /// The full surface, area-major.
    pub fn eta_grid(&self) -> &[f64] {
        &self.eta
    }

    pub fn area_index(&self, id: &str) -> Option<usize> {
        self.areas.iter().position(|a| a == id)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }
}

/// Draws each effect block from its constrained prior at the given
/// precisions and sums the contributions into a surface. Blocks use
/// independent RNG streams derived from `seed`, so adding or removing the
/// interaction does not perturb the other draws.
pub fn draw_truth(
    geography: &GeographyGraph,
    years: &[i32],
    hypers: &TruthHypers,
    seed: u64,
) -> Result<TruthSurface> {
    if years.is_empty() || years.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Invalid("year grid must be contiguous and non-empty".into()));
    }
    let n_areas = geography.n_areas();
    let n_years = years.len();
    let grid = n_areas * n_years;

    let mut effects = vec![EffectDraw {
        name: EffectName::Intercept,
        coords: vec![hypers.mu],
        grid: vec![hypers.mu; grid],
    }];

    let mut planned: Vec<(EffectBlock, Vec<f64>)> = vec![
        (iid_block(n_years, EffectName::IidTime), vec![hypers.tau_iid_time]),
        (rw2_block(n_years)?, vec![hypers.tau_rw2_time]),
        (
            bym_block(geography, SpatialVariant::Bym),
            vec![hypers.tau_space_u, hypers.tau_space_v],
        ),
    ];
    if let Some(tau) = hypers.tau_interaction {
        planned.push((interaction_block(n_years, geography)?, vec![tau]));
    }

    for (block, block_hypers) in planned {
        let name = block.name;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["truth", name.label()]));
        let system = LatentSystem::from_blocks(vec![block], Vec::new())?;
        let solver = SystemSolver::factorize(&system, &block_hypers)?;
        let coords = solver.sample(&mut rng);
        let mut g = vec![0.0; grid];
        match name {
            EffectName::IidTime | EffectName::Rw2Time => {
                for i in 0..n_areas {
                    for t in 0..n_years {
                        g[i * n_years + t] = coords[t];
                    }
                }
            }
            EffectName::Space => {
                for i in 0..n_areas {
                    let v = coords[i] + coords[n_areas + i];
                    for t in 0..n_years {
                        g[i * n_years + t] = v;
                    }
                }
            }
            EffectName::Interaction => g.copy_from_slice(&coords),
            _ => unreachable!("unexpected truth block"),
        }
        effects.push(EffectDraw { name, coords, grid: g });
    }

    let mut eta = vec![0.0; grid];
    for e in &effects {
        for (acc, v) in eta.iter_mut().zip(&e.grid) {
            *acc += v;
        }
    }

    Ok(TruthSurface {
        areas: geography.areas.clone(),
        years: years.to_vec(),
        mu: hypers.mu,
        effects,
        hyper_true: hypers.named(),
        eta,
    })
}

/// How inverse-inclusion weights vary across a plan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Equal inclusion probabilities throughout: constant weights.
    #[default]
    SelfWeighting,
    /// Strata represent unequal population shares, so weights grow with the
    /// stratum index within each area.
    StratumSkewed,
}

/// Design of one simulated survey: where it samples, how many units at each
/// stage, and the survey-specific distortions applied on the logit scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurveyPlan {
    pub survey_id: String,
    /// Instrument family; surveys sharing a family share one bias effect in
    /// ν-bearing models.
    pub family: String,
    pub year: i32,
    /// Sampled areas; must appear in the roster. Empty means every area.
    #[serde(default)]
    pub areas: Vec<String>,
    pub strata_per_area: usize,
    pub clusters_per_stratum: usize,
    pub women_per_cluster: usize,
    /// Standard deviation of the logit-scale cluster effects.
    #[serde(default)]
    pub cluster_sd: f64,
    /// Instrument bias added on the logit scale.
    #[serde(default)]
    pub nu_true: f64,
    #[serde(default)]
    pub weights: WeightScheme,
}

impl SurveyPlan {
    /// A full-coverage self-weighting plan with no bias.
    pub fn new(survey_id: &str, family: &str, year: i32) -> Self {
        Self {
            survey_id: survey_id.into(),
            family: family.into(),
            year,
            areas: Vec::new(),
            strata_per_area: 2,
            clusters_per_stratum: 5,
            women_per_cluster: 25,
            cluster_sd: 0.0,
            nu_true: 0.0,
            weights: WeightScheme::SelfWeighting,
        }
    }
}

// Sampling-frame inflation factors behind the inverse-inclusion weights: the
// frame holds CLUSTER_FRAME times the sampled clusters per stratum and each
// cluster holds WOMEN_FRAME times the sampled women (scaled further by the
// stratum index under `StratumSkewed`).
const CLUSTER_FRAME: f64 = 4.0;
const WOMEN_FRAME: f64 = 5.0;

fn validate_plan(truth: &TruthSurface, plan: &SurveyPlan) -> Result<(Vec<usize>, usize)> {
    if plan.strata_per_area == 0 || plan.clusters_per_stratum == 0 || plan.women_per_cluster == 0 {
        return Err(Error::Invalid(format!(
            "survey plan '{}' has a zero stage size",
            plan.survey_id
        )));
    }
    if !(plan.cluster_sd >= 0.0 && plan.cluster_sd.is_finite()) {
        return Err(Error::Invalid(format!(
            "survey plan '{}' has invalid cluster_sd {}",
            plan.survey_id, plan.cluster_sd
        )));
    }
    if !plan.nu_true.is_finite() {
        return Err(Error::Invalid(format!(
            "survey plan '{}' has non-finite nu_true",
            plan.survey_id
        )));
    }
    let year_idx = truth.year_index(plan.year).ok_or(Error::YearOutsideGrid {
        year: plan.year,
        first: truth.years[0],
        last: *truth.years.last().unwrap(),
    })?;
    let areas = if plan.areas.is_empty() {
        (0..truth.n_areas()).collect()
    } else {
        plan.areas
            .iter()
            .map(|a| {
                truth.area_index(a).ok_or_else(|| Error::UnknownArea {
                    area: a.clone(),
                    context: format!("survey plan '{}'", plan.survey_id),
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((areas, year_idx))
}

/// Simulates one survey around the truth: two-stage cluster sampling within
/// strata, Gaussian cluster effects on the logit scale, and Bernoulli
/// indicator draws at `invlogit(eta_true + cluster_effect + nu_true)`.
/// Weights are the exact inverse inclusion probabilities of the plan's
/// sampling frame. Deterministic in (`plan.survey_id`, `seed`).
pub fn simulate_survey(
    truth: &TruthSurface,
    plan: &SurveyPlan,
    seed: u64,
) -> Result<Vec<WomanRecord>> {
    let (areas, year_idx) = validate_plan(truth, plan)?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["survey", &plan.survey_id]));
    let mut records = Vec::with_capacity(
        areas.len() * plan.strata_per_area * plan.clusters_per_stratum * plan.women_per_cluster,
    );
    for &area in &areas {
        let eta = truth.eta(area, year_idx);
        let area_id = &truth.areas[area];
        for s in 0..plan.strata_per_area {
            let stratum_id = format!("{area_id}-s{s}");
            let weight = match plan.weights {
                WeightScheme::SelfWeighting => CLUSTER_FRAME * WOMEN_FRAME,
                WeightScheme::StratumSkewed => CLUSTER_FRAME * WOMEN_FRAME * (s as f64 + 1.0),
            };
            for c in 0..plan.clusters_per_stratum {
                let cluster_effect: f64 =
                    plan.cluster_sd * rng.sample::<f64, _>(StandardNormal);
                let p_use = inv_logit(eta + cluster_effect + plan.nu_true);
                let cluster_id = format!("{stratum_id}-c{c}");
                for _ in 0..plan.women_per_cluster {
                    let age_years = rng.random_range(15..=49u32);
                    let parity = if rng.random::<f64>() < 0.3 {
                        0
                    } else {
                        1 + rng.random_range(0..4u32)
                    };
                    let modern = rng.random::<f64>() < p_use;
                    let traditional = !modern && rng.random::<f64>() < 0.3 * p_use;
                    let any = modern || traditional;
                    let unmet = !any && rng.random::<f64>() < 0.2;
                    records.push(WomanRecord {
                        survey_id: plan.survey_id.clone(),
                        family: plan.family.clone(),
                        year: plan.year,
                        area_id: area_id.clone(),
                        stratum_id: stratum_id.clone(),
                        cluster_id: cluster_id.clone(),
                        weight,
                        age_years,
                        parity: Some(parity),
                        mcpr: Some(modern),
                        tcpr: Some(traditional),
                        cpr: Some(any),
                        unmet_need: Some(unmet),
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Simulates every plan and assembles a validated dataset. Each survey uses
/// its own RNG stream derived from (`seed`, survey id), so a survey's records
/// are identical whether it is simulated alone or in a batch.
pub fn simulate_dataset(
    truth: &TruthSurface,
    plans: &[SurveyPlan],
    seed: u64,
) -> Result<SurveyDataset> {
    if plans.is_empty() {
        return Err(Error::Invalid("no survey plans given".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in plans {
        if !seen.insert(p.survey_id.clone()) {
            return Err(Error::Invalid(format!("duplicate survey id '{}'", p.survey_id)));
        }
    }
    let mut records = Vec::new();
    for plan in plans {
        records.extend(simulate_survey(truth, plan, seed)?);
    }
    let mut report = LoadReport { n_accepted: records.len(), ..LoadReport::default() };
    for r in &records {
        *report
            .cell_counts
            .entry((r.survey_id.clone(), r.year, r.area_id.clone()))
            .or_insert(0) += 1;
    }
    Ok(SurveyDataset { records, rejects: Vec::new(), report })
}

/// A connected synthetic geography: a ring through all areas plus
/// deterministic pseudo-random chords (roughly one per three areas). Area
/// ids are `A01`, `A02`, ...
pub fn synthetic_geography(n_areas: usize, seed: u64) -> GeographyGraph {
    assert!(n_areas >= 3, "synthetic geography needs at least 3 areas");
    let width = n_areas.to_string().len().max(2);
    let areas: Vec<String> = (1..=n_areas).map(|i| format!("A{i:0width$}")).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["geography"]));
    let mut edges: Vec<(String, String)> = (0..n_areas)
        .map(|i| (areas[i].clone(), areas[(i + 1) % n_areas].clone()))
        .collect();
    for _ in 0..n_areas / 3 {
        let i = rng.random_range(0..n_areas);
        let j = rng.random_range(0..n_areas);
        if i != j {
            edges.push((areas[i].clone(), areas[j].clone()));
        }
    }
    GeographyGraph::from_parts(areas, &edges).expect("synthetic geography is valid")
}

/// Women-of-reproductive-age counts per (area index, year): a log-uniform
/// base size per area compounding at 2.8 % per year.
pub fn synthetic_population(
    geography: &GeographyGraph,
    years: &[i32],
    seed: u64,
) -> BTreeMap<(usize, i32), f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["population"]));
    let mut table = BTreeMap::new();
    for area in 0..geography.n_areas() {
        let base = 1.0e5 * (rng.random::<f64>() * (15.0f64).ln()).exp();
        for (t, &year) in years.iter().enumerate() {
            table.insert((area, year), (base * 1.028f64.powi(t as i32)).round());
        }
    }
    table
}

/// Scenario description: geography size, year span, generating values, and
/// the survey plans. Serializable so scenario files can drive generation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub n_areas: usize,
    pub first_year: i32,
    pub last_year: i32,
    #[serde(default)]
    pub truth: TruthHypers,
    pub plans: Vec<SurveyPlan>,
}

impl ScenarioConfig {
    pub fn years(&self) -> Vec<i32> {
        (self.first_year..=self.last_year).collect()
    }
}

/// Built-in country-scale demonstration scenario: 37 areas observed over
/// 1990–2018 by 13 surveys from four instrument families with differing
/// footprints and logit-scale biases. This is the default for the CLI's
/// `synth` subcommand and sized so a full pipeline run stays affordable.
pub fn demo_scenario() -> ScenarioConfig {
    let plan = |id: &str, family: &str, year: i32, nu: f64| {
        let mut p = SurveyPlan::new(id, family, year);
        p.strata_per_area = 2;
        p.clusters_per_stratum = 4;
        p.women_per_cluster = 20;
        p.cluster_sd = 0.3;
        p.nu_true = nu;
        p
    };
    let plans = vec![
        plan("dhs1990", "dhs", 1990, 0.0),
        plan("mics1995", "mics", 1995, -0.1),
        plan("dhs1999", "dhs", 1999, 0.0),
        plan("dhs2003", "dhs", 2003, 0.0),
        plan("nhs2005", "nhs", 2005, -0.3),
        plan("mics2007", "mics", 2007, -0.1),
        plan("dhs2008", "dhs", 2008, 0.0),
        plan("mics2011", "mics", 2011, -0.1),
        plan("dhs2013", "dhs", 2013, 0.0),
        plan("pma2014", "pma", 2014, 0.2),
        plan("mics2016", "mics", 2016, -0.1),
        plan("pma2017", "pma", 2017, 0.2),
        plan("dhs2018", "dhs", 2018, 0.0),
    ];
    ScenarioConfig {
        n_areas: 37,
        first_year: 1990,
        last_year: 2018,
        truth: TruthHypers::default(),
        plans,
    }
}

/// Everything a generated scenario leaves on disk, plus the in-memory truth
/// for scoring.
#[derive(Debug, Clone)]
pub struct ScenarioArtifacts {
    pub truth: TruthSurface,
    pub dataset: SurveyDataset,
    pub geography: GeographyGraph,
    pub microdata_path: PathBuf,
    pub roster_path: PathBuf,
    pub edges_path: PathBuf,
    pub population_path: PathBuf,
    pub truth_path: PathBuf,
}

/// Generates a scenario and writes the flat files the estimation pipeline
/// consumes: `microdata.csv`, `areas.txt`, `edges.txt`, `population.csv`,
/// and a `truth.csv` with the generating surface.
pub fn generate_scenario(
    config: &ScenarioConfig,
    dir: impl AsRef<Path>,
    seed: u64,
) -> Result<ScenarioArtifacts> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let years = config.years();
    let mut geography = synthetic_geography(config.n_areas, seed);
    geography.population = Some(synthetic_population(&geography, &years, seed));
    let truth = draw_truth(&geography, &years, &config.truth, seed)?;
    let dataset = simulate_dataset(&truth, &config.plans, seed)?;

    let microdata_path = dir.join("microdata.csv");
    write_microdata(&dataset, &microdata_path)?;

    let roster_path = dir.join("areas.txt");
    let edges_path = dir.join("edges.txt");
    let population_path = dir.join("population.csv");
    let truth_path = dir.join("truth.csv");

    let write = |path: &Path, content: String| -> Result<()> {
        std::fs::write(path, content).map_err(|e| Error::io(path, e))
    };
    write(&roster_path, geography.areas.join("\n") + "\n")?;
    let mut edge_lines = String::new();
    for &(i, j) in &geography.edges {
        edge_lines.push_str(&format!("{},{}\n", geography.areas[i], geography.areas[j]));
    }
    write(&edges_path, edge_lines)?;
    let mut pop_lines = String::from("area_id,year,count\n");
    if let Some(pop) = &geography.population {
        for (&(area, year), &count) in pop {
            pop_lines.push_str(&format!("{},{year},{count}\n", geography.areas[area]));
        }
    }
    write(&population_path, pop_lines)?;
    let mut truth_lines = String::from("area_id,year,eta_true,p_true\n");
    for (i, area) in truth.areas.iter().enumerate() {
        for (t, &year) in truth.years.iter().enumerate() {
            let eta = truth.eta(i, t);
            truth_lines.push_str(&format!("{area},{year},{eta},{}\n", inv_logit(eta)));
        }
    }
    write(&truth_path, truth_lines)?;

    Ok(ScenarioArtifacts {
        truth,
        dataset,
        geography,
        microdata_path,
        roster_path,
        edges_path,
        population_path,
        truth_path,
    })
}

/// One replicate-fit-score cycle description for [`calibration_run`].
pub struct CalibrationConfig {
    pub geography: GeographyGraph,
    /// Contiguous ascending year grid.
    pub years: Vec<i32>,
    pub truth: TruthHypers,
    pub plans: Vec<SurveyPlan>,
    /// Model fitted to every replicate.
    pub model: ModelSpec,
    pub indicator: Indicator,
    /// Fit options; the seed field is overridden per replicate.
    pub fit: FitOptions,
    pub direct: DirectOptions,
}

/// Scores for one replicate: how many of the grid's (area, year) cells had
/// their true prevalence inside the fitted 95 % interval, and the average
/// bias and interval width on the probability scale.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub n_cells: usize,
    pub n_covered: usize,
    pub mean_bias: f64,
    pub mean_width: f64,
}

/// Pooled calibration scores over all replicates.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub n_replicates: usize,
    /// Total scored (area, year) cells across replicates.
    pub n_cells: usize,
    /// Pooled fraction of cells whose 95 % interval covers the truth.
    pub coverage: f64,
    pub mean_bias: f64,
    pub mean_width: f64,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Repeats draw-truth → simulate → fit → score `n_replicates` times with
/// independent seeds derived from `seed`, in parallel. Coverage is evaluated
/// on the survey-free linear predictor over the full (area, year) grid, so
/// unsampled areas and unsurveyed years count too.
pub fn calibration_run(
    n_replicates: usize,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<CoverageReport> {
    if n_replicates == 0 {
        return Err(Error::Invalid("n_replicates must be positive".into()));
    }
    let mut families: Vec<String> = config.plans.iter().map(|p| p.family.clone()).collect();
    families.sort();
    families.dedup();

    let replicates: Vec<ReplicateOutcome> = (0..n_replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateOutcome> {
            let rep = derive_seed(seed, &["replicate", &r.to_string()]);
            let truth = draw_truth(
                &config.geography,
                &config.years,
                &config.truth,
                derive_seed(rep, &["truth"]),
            )?;
            let dataset = simulate_dataset(&truth, &config.plans, derive_seed(rep, &["data"]))?;
            let cells = build_cells(
                &dataset,
                &config.geography,
                &[Subgroup::AllWomen],
                &[config.indicator],
                config.direct,
            )?;
            let system =
                LatentSystem::assemble(&cells, config.model, &config.geography, &config.years, &families)?;
            let mut opts = config.fit;
            opts.seed = derive_seed(rep, &["fit"]);
            let fit = fit_model(&system, config.model, &opts)?;

            let n_years = config.years.len();
            let n_cells = config.geography.n_areas() * n_years;
            let mut n_covered = 0usize;
            let mut bias = 0.0;
            let mut width = 0.0;
            let mut col = vec![0.0; fit.k()];
            for i in 0..config.geography.n_areas() {
                for t in 0..n_years {
                    let g = i * n_years + t;
                    for (k, eta) in fit.eta_samples.iter().enumerate() {
                        col[k] = eta[g];
                    }
                    let (median, lo, hi) = summarize(&col);
                    let p_true = inv_logit(truth.eta(i, t));
                    if lo <= p_true && p_true <= hi {
                        n_covered += 1;
                    }
                    bias += median - p_true;
                    width += hi - lo;
                }
            }
            Ok(ReplicateOutcome {
                replicate: r,
                n_cells,
                n_covered,
                mean_bias: bias / n_cells as f64,
                mean_width: width / n_cells as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_cells: usize = replicates.iter().map(|o| o.n_cells).sum();
    let n_covered: usize = replicates.iter().map(|o| o.n_covered).sum();
    let mean_bias =
        replicates.iter().map(|o| o.mean_bias * o.n_cells as f64).sum::<f64>() / n_cells as f64;
    let mean_width =
        replicates.iter().map(|o| o.mean_width * o.n_cells as f64).sum::<f64>() / n_cells as f64;
    Ok(CoverageReport {
        n_replicates,
        n_cells,
        coverage: n_covered as f64 / n_cells as f64,
        mean_bias,
        mean_width,
        replicates: replicates.into_iter().collect(),
    })
}
