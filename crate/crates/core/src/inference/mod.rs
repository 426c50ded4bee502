//! Exact latent-Gaussian inference for the smoothing model.
//!
//! Logit-scale direct estimates enter a Gaussian working likelihood
//! `y_c ~ N(η_c, var_y_c)` whose linear predictor sums random-effect blocks
//! ([`crate::gmrf`]). Because the likelihood is Gaussian, the latent field
//! integrates out in closed form: for any hyperparameter value the marginal
//! likelihood, the constrained posterior mean, and exact posterior draws all
//! come from sparse factorizations ([`solver`]). Hyperparameters are sampled
//! with an adaptive random-walk Metropolis chain on transformed scales
//! ([`mcmc`]), or optimized once in the fast empirical-Bayes mode
//! ([`optimize`]).

pub mod mcmc;
pub mod optimize;
pub mod solver;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::direct::{CellStatus, DirectEstimate};
use crate::error::{Error, Result};
use crate::gmrf::{
    bym_block, iid_block, intercept_block, interaction_block, rw2_block, BlockKind, EffectBlock,
    EffectName, HyperKind, SpatialVariant,
};
use crate::linalg::{LdlSymbolic, SymCscPattern};
use crate::survey::GeographyGraph;
use crate::util::{derive_seed, inv_logit, quantile_sorted};

/// Candidate model from the 12-entry catalog: effect level 1–6 crossed with
/// the spatial variant (a = BYM, b = BYM2).
///
/// Level 1 is μ + γ + α + θ; 2 adds the space–time interaction δ; 3 adds the
/// survey effect ν; 4 adds survey-by-space φ; 5 has survey-by-time ψ instead
/// of φ; 6 has both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ModelSpec {
    pub level: u8,
    pub variant: SpatialVariant,
}

impl ModelSpec {
    pub fn new(level: u8, variant: SpatialVariant) -> Result<Self> {
        if !(1..=6).contains(&level) {
            return Err(Error::Invalid(format!("model level {level} outside 1..6")));
        }
        Ok(Self { level, variant })
    }

    /// All 12 catalog entries in order 1a, 1b, 2a, ..., 6b.
    pub fn catalog() -> Vec<ModelSpec> {
        (1..=6u8)
            .flat_map(|l| {
                [SpatialVariant::Bym, SpatialVariant::Bym2]
                    .into_iter()
                    .map(move |v| ModelSpec { level: l, variant: v })
            })
            .collect()
    }

    pub fn id(&self) -> String {
        let v = match self.variant {
            SpatialVariant::Bym => "a",
            SpatialVariant::Bym2 => "b",
        };
        format!("{}{v}", self.level)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("unknown model id '{s}' (expected 1a..6b)"));
        let mut chars = s.chars();
        let level = chars.next().and_then(|c| c.to_digit(10)).ok_or_else(bad)? as u8;
        let variant = match chars.next() {
            Some('a') => SpatialVariant::Bym,
            Some('b') => SpatialVariant::Bym2,
            _ => return Err(bad()),
        };
        if chars.next().is_some() {
            return Err(bad());
        }
        ModelSpec::new(level, variant)
    }

    /// Random-effect families included at this level (intercept always).
    pub fn effects(&self) -> Vec<EffectName> {
        let mut e = vec![
            EffectName::Intercept,
            EffectName::IidTime,
            EffectName::Rw2Time,
            EffectName::Space,
        ];
        if self.level >= 2 {
            e.push(EffectName::Interaction);
        }
        if self.level >= 3 {
            e.push(EffectName::Survey);
        }
        if self.level == 4 || self.level == 6 {
            e.push(EffectName::SurveySpace);
        }
        if self.level == 5 || self.level == 6 {
            e.push(EffectName::SurveyTime);
        }
        e
    }

    /// Effect count used for tie-breaking in model selection.
    pub fn n_effects(&self) -> usize {
        self.effects().len()
    }
}

/// One likelihood observation: a status-ok direct-estimate cell mapped onto
/// latent coordinates.
#[derive(Debug, Clone)]
pub struct ObsCell {
    pub y: f64,
    pub var_y: f64,
    /// Latent coordinates summed to form the cell's linear predictor
    /// (all design coefficients are 1).
    pub coords: Vec<usize>,
}

/// Layout of the (area, year) estimate grid for a fully assembled system.
#[derive(Debug, Clone)]
pub struct EtaLayout {
    pub areas: Vec<String>,
    pub years: Vec<i32>,
    pub families: Vec<String>,
}

impl EtaLayout {
    pub fn n_cells(&self) -> usize {
        self.areas.len() * self.years.len()
    }

    /// Grid index of (area i, year t): area-major.
    pub fn index(&self, area: usize, year_idx: usize) -> usize {
        area * self.years.len() + year_idx
    }
}

/// Assembled inference problem: blocks in elimination order, observation
/// rows, stacked constraints, and the reusable sparse template.
#[derive(Debug)]
pub struct LatentSystem {
    pub blocks: Vec<EffectBlock>,
    pub offsets: Vec<usize>,
    pub n: usize,
    pub cells: Vec<ObsCell>,
    /// Stacked constraint rows in global coordinates (unit-norm, mutually
    /// orthogonal: every row lives in one block and block rows are
    /// orthogonal by construction).
    pub constraints: Vec<Vec<(usize, f64)>>,
    /// Grid layout when assembled from direct estimates; custom systems
    /// (tests) may not have one.
    pub layout: Option<EtaLayout>,

    // ---- hyperparameter bookkeeping ----
    pub hyper_names: Vec<String>,
    pub hyper_kinds: Vec<HyperKind>,
    /// Range of each block's hypers in the flat hyper vector.
    pub hyper_slices: Vec<(usize, usize)>,

    // ---- sparse template (filled per hyper value by the solver) ----
    pub(crate) pattern: SymCscPattern,
    pub(crate) symbolic: LdlSymbolic,
    /// Constant contributions per nonzero slot: data A'·diag(1/var)·A plus
    /// constraint A_c'A_c, pre-accumulated.
    pub(crate) constant_vals: Vec<f64>,
    /// Hyper-scaled contributions: per block, per term, (slot, value) pairs.
    pub(crate) term_slots: Vec<Vec<Vec<(usize, f64)>>>,
    /// Constant right-hand side A'·diag(1/var)·y.
    pub(crate) rhs: Vec<f64>,
    /// Σ_c [log 2π + log var_c], part of the Gaussian data normalizer.
    pub(crate) data_log_norm: f64,
}

impl LatentSystem {
    /// Builds a system from direct-estimate cells for one catalog model.
    ///
    /// Uses exactly the status-ok cells; `years` must be a contiguous grid
    /// covering every cell year (it may extend beyond for projection);
    /// `families` is the ordered survey-family list indexing ν/φ/ψ.
    pub fn assemble(
        cells: &[DirectEstimate],
        spec: ModelSpec,
        geography: &GeographyGraph,
        years: &[i32],
        families: &[String],
    ) -> Result<Self> {
        if years.is_empty() || years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Invalid("year grid must be contiguous and non-empty".into()));
        }
        let n_years = years.len();
        let n_areas = geography.n_areas();
        let n_fam = families.len().max(1);

        // build blocks in natural order
        let mut blocks = Vec::new();
        for name in spec.effects() {
            let block = match name {
                EffectName::Intercept => intercept_block(),
                EffectName::IidTime => iid_block(n_years, EffectName::IidTime),
                EffectName::Rw2Time => rw2_block(n_years)?,
                EffectName::Space => bym_block(geography, spec.variant),
                EffectName::Interaction => interaction_block(n_years, geography)?,
                EffectName::Survey => iid_block(n_fam, EffectName::Survey),
                EffectName::SurveySpace => {
                    iid_block(n_fam * n_areas, EffectName::SurveySpace)
                }
                EffectName::SurveyTime => iid_block(n_fam * n_years, EffectName::SurveyTime),
            };
            blocks.push(block);
        }
        // elimination order: large blocks first, intercept last (it couples
        // with everything, so eliminating it early would fill the factor)
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.sort_by_key(|&i| {
            let b = &blocks[i];
            let last = matches!(b.kind, BlockKind::Intercept);
            (last, usize::MAX - b.dim(), i)
        });
        let blocks: Vec<EffectBlock> = order.into_iter().map(|i| blocks[i].clone()).collect();

        let mut obs = Vec::new();
        for cell in cells {
            if cell.status != CellStatus::Ok {
                continue;
            }
            let area = geography.area_index(&cell.area_id).ok_or_else(|| Error::UnknownArea {
                area: cell.area_id.clone(),
                context: format!("direct-estimate cell (survey '{}')", cell.survey_id),
            })?;
            let year_idx = years
                .iter()
                .position(|&y| y == cell.year)
                .ok_or(Error::YearOutsideGrid {
                    year: cell.year,
                    first: years[0],
                    last: years[n_years - 1],
                })?;
            let fam_idx = families
                .iter()
                .position(|f| f == &cell.survey_family)
                .ok_or_else(|| Error::UnknownSurvey {
                    family: cell.survey_family.clone(),
                    context: format!("cell {}/{}/{}", cell.area_id, cell.year, cell.survey_id),
                })?;
            obs.push((cell.y, cell.var_y, area, year_idx, fam_idx));
        }
        if obs.is_empty() {
            return Err(Error::EmptyLikelihood);
        }

        let layout = EtaLayout {
            areas: geography.areas.clone(),
            years: years.to_vec(),
            families: families.to_vec(),
        };
        // design rows against the elimination-ordered blocks
        let offsets = offsets_of(&blocks);
        let cells: Vec<ObsCell> = obs
            .into_iter()
            .map(|(y, var_y, i, t, s)| ObsCell {
                y,
                var_y,
                coords: design_coords(&blocks, &offsets, n_areas, n_years, i, t, s),
            })
            .collect();
        Self::from_blocks_ordered(blocks, cells, Some(layout))
    }

    /// Builds a system from explicit blocks and observation rows. Used by
    /// tests and the synthetic module; block order is taken as given.
    pub fn from_blocks(blocks: Vec<EffectBlock>, cells: Vec<ObsCell>) -> Result<Self> {
        Self::from_blocks_ordered(blocks, cells, None)
    }

    fn from_blocks_ordered(
        blocks: Vec<EffectBlock>,
        cells: Vec<ObsCell>,
        layout: Option<EtaLayout>,
    ) -> Result<Self> {
        let offsets = offsets_of(&blocks);
        let n = offsets.last().copied().unwrap_or(0)
            + blocks.last().map(|b| b.dim()).unwrap_or(0);

        // hyper bookkeeping
        let mut hyper_names = Vec::new();
        let mut hyper_kinds = Vec::new();
        let mut hyper_slices = Vec::new();
        for b in &blocks {
            let start = hyper_kinds.len();
            hyper_names.extend(b.hyper_names());
            hyper_kinds.extend(b.hyper_kinds());
            hyper_slices.push((start, hyper_kinds.len()));
        }

        // constraints in global coordinates
        let mut constraints = Vec::new();
        for (b, &off) in blocks.iter().zip(&offsets) {
            for row in b.constraints() {
                let sparse: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, &v)| (off + j, v))
                    .collect();
                constraints.push(sparse);
            }
        }

        // sparse template: keys from data, constraints, and prior terms
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for c in &cells {
            for a in 0..c.coords.len() {
                for b in a..c.coords.len() {
                    let (p, q) = (c.coords[a], c.coords[b]);
                    keys.push((p.min(q), p.max(q)));
                }
            }
        }
        let data_key_end = keys.len();
        for row in &constraints {
            for a in 0..row.len() {
                for b in a..row.len() {
                    let (p, q) = (row[a].0, row[b].0);
                    keys.push((p.min(q), p.max(q)));
                }
            }
        }
        let constraint_key_end = keys.len();
        let term_lists: Vec<Vec<crate::gmrf::PrecisionTerm>> =
            blocks.iter().map(|b| b.precision_terms()).collect();
        for (bi, terms) in term_lists.iter().enumerate() {
            let off = offsets[bi];
            for t in terms {
                for &(r, c, _) in &t.entries {
                    keys.push((off + r, off + c));
                }
            }
        }
        // make sure the whole diagonal is present so factorization pivots exist
        for d in 0..n {
            keys.push((d, d));
        }
        let (pattern, slots) = SymCscPattern::from_keys(n, &keys);
        let symbolic = LdlSymbolic::new(&pattern);

        // constant values: data A'DA and constraint A_c'A_c
        let mut constant = vec![0.0; pattern.nnz()];
        let mut k = 0usize;
        for c in &cells {
            let w = 1.0 / c.var_y;
            for a in 0..c.coords.len() {
                for _b in a..c.coords.len() {
                    constant[slots[k]] += w;
                    k += 1;
                }
            }
        }
        debug_assert_eq!(k, data_key_end);
        for row in &constraints {
            for a in 0..row.len() {
                for b in a..row.len() {
                    constant[slots[k]] += row[a].1 * row[b].1;
                    k += 1;
                }
            }
        }
        debug_assert_eq!(k, constraint_key_end);
        let mut term_slots = Vec::new();
        for terms in &term_lists {
            let mut per_block = Vec::new();
            for t in terms {
                let mut list = Vec::with_capacity(t.entries.len());
                for &(_, _, v) in &t.entries {
                    list.push((slots[k], v));
                    k += 1;
                }
                per_block.push(list);
            }
            term_slots.push(per_block);
        }

        // right-hand side and data normalizer
        let mut rhs = vec![0.0; n];
        let mut data_log_norm = 0.0;
        for c in &cells {
            let w = c.y / c.var_y;
            for &p in &c.coords {
                rhs[p] += w;
            }
            data_log_norm += crate::gmrf::LN_2PI + c.var_y.ln();
        }

        Ok(Self {
            blocks,
            offsets,
            n,
            cells,
            constraints,
            layout,
            hyper_names,
            hyper_kinds,
            hyper_slices,
            pattern,
            symbolic,
            constant_vals: constant,
            term_slots,
            rhs,
            data_log_norm,
        })
    }

    pub fn n_hypers(&self) -> usize {
        self.hyper_kinds.len()
    }

    /// Index of the block with the given effect name.
    pub fn block_index(&self, name: EffectName) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Joint subspace prior log-density of a latent vector at given hypers.
    pub fn prior_logdensity(&self, x: &[f64], hypers: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (bi, b) in self.blocks.iter().enumerate() {
            let (h0, h1) = self.hyper_slices[bi];
            let off = self.offsets[bi];
            lp += b.prior_logdensity(&x[off..off + b.dim()], &hypers[h0..h1]);
        }
        lp
    }

    /// Log prior of the hyperparameter vector.
    pub fn hyper_log_prior(&self, hypers: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (bi, b) in self.blocks.iter().enumerate() {
            let (h0, h1) = self.hyper_slices[bi];
            lp += b.hyper_log_prior(&hypers[h0..h1]);
        }
        lp
    }

    /// Survey-free linear predictor η_it = μ + γ_t + α_t + θ_i (+ δ_it) for
    /// every (area, year) grid point, area-major. Requires a grid layout.
    pub fn eta_from_latent(&self, x: &[f64]) -> Vec<f64> {
        let layout = self.layout.as_ref().expect("eta requires an assembled grid system");
        let n_areas = layout.areas.len();
        let n_years = layout.years.len();
        let mut eta = vec![0.0; n_areas * n_years];
        for (bi, b) in self.blocks.iter().enumerate() {
            let off = self.offsets[bi];
            match (b.name, &b.kind) {
                (EffectName::Intercept, _) => {
                    for e in eta.iter_mut() {
                        *e += x[off];
                    }
                }
                (EffectName::IidTime, _) | (EffectName::Rw2Time, _) => {
                    for i in 0..n_areas {
                        for t in 0..n_years {
                            eta[i * n_years + t] += x[off + t];
                        }
                    }
                }
                (EffectName::Space, BlockKind::Bym { n, .. }) => {
                    for i in 0..n_areas {
                        let theta = x[off + i] + x[off + n + i];
                        for t in 0..n_years {
                            eta[i * n_years + t] += theta;
                        }
                    }
                }
                (EffectName::Space, BlockKind::Bym2 { .. }) => {
                    for i in 0..n_areas {
                        for t in 0..n_years {
                            eta[i * n_years + t] += x[off + i];
                        }
                    }
                }
                (EffectName::Interaction, _) => {
                    for i in 0..n_areas {
                        for t in 0..n_years {
                            eta[i * n_years + t] += x[off + i * n_years + t];
                        }
                    }
                }
                // survey effects deliberately excluded from η
                (EffectName::Survey, _)
                | (EffectName::SurveySpace, _)
                | (EffectName::SurveyTime, _) => {}
                (name, kind) => unreachable!("unexpected block {name:?}/{kind:?}"),
            }
        }
        eta
    }

    /// Survey-free design coordinates of one (area, year) grid point, with
    /// the coefficient each coordinate carries (U and V both count in BYM).
    pub fn eta_design(&self, area: usize, year_idx: usize) -> Vec<usize> {
        let layout = self.layout.as_ref().expect("eta requires an assembled grid system");
        let n_years = layout.years.len();
        let mut coords = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let off = self.offsets[bi];
            match (b.name, &b.kind) {
                (EffectName::Intercept, _) => coords.push(off),
                (EffectName::IidTime, _) | (EffectName::Rw2Time, _) => {
                    coords.push(off + year_idx)
                }
                (EffectName::Space, BlockKind::Bym { n, .. }) => {
                    coords.push(off + area);
                    coords.push(off + n + area);
                }
                (EffectName::Space, _) => coords.push(off + area),
                (EffectName::Interaction, _) => coords.push(off + area * n_years + year_idx),
                _ => {}
            }
        }
        coords
    }
}

fn offsets_of(blocks: &[EffectBlock]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut off = 0usize;
    for b in blocks {
        offsets.push(off);
        off += b.dim();
    }
    offsets
}

/// Latent coordinates loaded by a cell in (area i, year t, family s).
fn design_coords(
    blocks: &[EffectBlock],
    offsets: &[usize],
    n_areas: usize,
    n_years: usize,
    i: usize,
    t: usize,
    s: usize,
) -> Vec<usize> {
    let mut coords = Vec::new();
    for (bi, b) in blocks.iter().enumerate() {
        let off = offsets[bi];
        match (b.name, &b.kind) {
            (EffectName::Intercept, _) => coords.push(off),
            (EffectName::IidTime, _) | (EffectName::Rw2Time, _) => coords.push(off + t),
            (EffectName::Space, BlockKind::Bym { n, .. }) => {
                coords.push(off + i);
                coords.push(off + n + i);
            }
            (EffectName::Space, _) => coords.push(off + i),
            (EffectName::Interaction, _) => coords.push(off + i * n_years + t),
            (EffectName::Survey, _) => coords.push(off + s),
            (EffectName::SurveySpace, _) => coords.push(off + s * n_areas + i),
            (EffectName::SurveyTime, _) => coords.push(off + s * n_years + t),
        }
    }
    coords
}

/// Inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// MCMC over hyperparameters; posterior draws integrate hyperparameter
    /// uncertainty.
    Full,
    /// Optimize the hyper posterior once and sample latents at the mode.
    /// Fast; understates hyperparameter uncertainty and is labeled as such.
    EmpiricalBayes,
}

/// Fitting options; defaults follow the module documentation.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub mode: FitMode,
    /// Retained posterior samples K.
    pub n_samples: usize,
    pub burnin: usize,
    /// Adaptation window (within burn-in).
    pub adapt: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mode: FitMode::Full,
            n_samples: 1000,
            burnin: 2000,
            adapt: 1000,
            thin: 5,
            seed: 0,
        }
    }
}

/// Sampler and optimizer diagnostics for one fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub mode: FitMode,
    /// Post-adaptation Metropolis acceptance rate (NaN in EB mode).
    pub acceptance_rate: f64,
    /// Effective sample size per hyperparameter (empty in EB mode).
    pub ess: Vec<f64>,
    /// Hyper log-posterior value at the mode (EB mode only).
    pub log_posterior_at_mode: Option<f64>,
    pub n_marginal_evals: usize,
    pub warnings: Vec<String>,
}

/// Posterior sample set for one fitted model.
#[derive(Debug)]
pub struct PosteriorFit {
    pub spec: ModelSpec,
    pub hyper_names: Vec<String>,
    /// K × n_hyper, natural scale.
    pub hyper_samples: Vec<Vec<f64>>,
    /// K × n latent draws.
    pub latent_samples: Vec<Vec<f64>>,
    /// K × (n_areas · n_years) survey-free linear predictors (empty for
    /// custom systems without a grid layout).
    pub eta_samples: Vec<Vec<f64>>,
    /// K × n_cells per-cell linear predictors as the likelihood sees them
    /// (survey effects included).
    pub cell_eta: Vec<Vec<f64>>,
    /// K × n_cells pointwise Gaussian log-densities of each likelihood cell
    /// (survey effects included, as the likelihood sees them).
    pub cell_loglik: Vec<Vec<f64>>,
    /// Observed logit-scale value of each likelihood cell.
    pub cell_y: Vec<f64>,
    /// Design variance of each likelihood cell.
    pub cell_var: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl PosteriorFit {
    pub fn k(&self) -> usize {
        self.latent_samples.len()
    }
}

/// Fits one model: hyperparameter inference (per `options.mode`) followed by
/// K exact latent draws. Deterministic for a fixed seed.
pub fn fit_model(system: &LatentSystem, spec: ModelSpec, options: &FitOptions) -> Result<PosteriorFit> {
    let (hyper_samples, diagnostics) = match options.mode {
        FitMode::Full => mcmc::sample_hyper(system, options)?,
        FitMode::EmpiricalBayes => optimize::empirical_bayes(system, options)?,
    };
    // K latent draws, one per retained hyper sample
    let mut latent_samples = Vec::with_capacity(hyper_samples.len());
    let mut eta_samples = Vec::with_capacity(hyper_samples.len());
    let mut cell_eta = Vec::with_capacity(hyper_samples.len());
    let mut cell_loglik = Vec::with_capacity(hyper_samples.len());
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(options.seed, &["latent", &spec.id()]));
    let mut solver: Option<(Vec<f64>, solver::SystemSolver)> = None;
    for h in &hyper_samples {
        // re-factorize only when the hyper value changes (EB mode repeats it)
        let needs = match &solver {
            Some((prev, _)) => prev != h,
            None => true,
        };
        if needs {
            solver = Some((h.clone(), solver::SystemSolver::factorize(system, h)?));
        }
        let s = &solver.as_ref().unwrap().1;
        let x = s.sample(&mut rng);
        let mut etas = Vec::with_capacity(system.cells.len());
        let mut ll = Vec::with_capacity(system.cells.len());
        for c in &system.cells {
            let eta: f64 = c.coords.iter().map(|&p| x[p]).sum();
            let r = c.y - eta;
            ll.push(-0.5 * (crate::gmrf::LN_2PI + c.var_y.ln()) - 0.5 * r * r / c.var_y);
            etas.push(eta);
        }
        if system.layout.is_some() {
            eta_samples.push(system.eta_from_latent(&x));
        }
        cell_eta.push(etas);
        cell_loglik.push(ll);
        latent_samples.push(x);
    }
    Ok(PosteriorFit {
        spec,
        hyper_names: system.hyper_names.clone(),
        hyper_samples,
        latent_samples,
        eta_samples,
        cell_eta,
        cell_loglik,
        cell_y: system.cells.iter().map(|c| c.y).collect(),
        cell_var: system.cells.iter().map(|c| c.var_y).collect(),
        diagnostics,
    })
}

/// Posterior median and central 95% interval on the proportion scale:
/// inverse-logit each sample and take the 2.5/50/97.5 percent quantiles.
pub fn summarize(logit_samples: &[f64]) -> (f64, f64, f64) {
    let mut p: Vec<f64> = logit_samples.iter().map(|&v| inv_logit(v)).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_sorted(&p, 0.5),
        quantile_sorted(&p, 0.025),
        quantile_sorted(&p, 0.975),
    )
}
