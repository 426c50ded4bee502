//! Design-based direct estimation: Hajek proportions and stratified
//! with-replacement variance per (area, year, survey, subgroup, indicator)
//! cell, transformed to the logit scale for the smoothing stage.
//!
//! The variance is the Taylor linearization of the ratio estimator with a
//! with-replacement first stage: per-record residuals u_j = w_j(x_j − p̂)/W
//! are totalled within clusters, and the between-cluster variance within each
//! stratum (with the n_h/(n_h−1) factor) is summed over strata. Strata
//! contributing a single cluster are handled per [`LonelyPsu`].

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::survey::{GeographyGraph, Indicator, Subgroup, SurveyDataset, WomanRecord};
use crate::util::logit;

/// Outcome class of a direct-estimate cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    /// Usable: 0 < p̂ < 1 with a positive, estimable variance.
    Ok,
    /// p̂ = 0; excluded from the smoothing likelihood.
    DegenerateZero,
    /// p̂ = 1; excluded from the smoothing likelihood.
    DegenerateOne,
    /// Variance not estimable (no stratum with two clusters, or zero
    /// between-cluster spread); excluded from the smoothing likelihood.
    InsufficientClusters,
}

impl CellStatus {
    pub fn name(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::DegenerateZero => "degenerate_zero",
            CellStatus::DegenerateOne => "degenerate_one",
            CellStatus::InsufficientClusters => "insufficient_clusters",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(CellStatus::Ok),
            "degenerate_zero" => Ok(CellStatus::DegenerateZero),
            "degenerate_one" => Ok(CellStatus::DegenerateOne),
            "insufficient_clusters" => Ok(CellStatus::InsufficientClusters),
            other => Err(Error::Invalid(format!("unknown cell status '{other}'"))),
        }
    }
}

/// One direct-estimate cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectEstimate {
    pub area_id: String,
    pub year: i32,
    pub survey_id: String,
    /// Instrument family of the survey (indexes the survey random effects).
    pub survey_family: String,
    pub subgroup: Subgroup,
    pub indicator: Indicator,
    /// Hajek proportion estimate.
    pub p_hat: f64,
    /// Design-based variance of p_hat (NaN when not estimable).
    pub var_p: f64,
    /// logit(p_hat) (NaN unless status is ok).
    pub y: f64,
    /// Delta-method variance of y (NaN unless status is ok).
    pub var_y: f64,
    pub n_records: usize,
    pub n_clusters: usize,
    pub status: CellStatus,
}

/// Treatment of strata contributing a single cluster to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LonelyPsu {
    /// Lonely strata contribute zero to the variance sum (counted).
    #[default]
    Zero,
    /// Lonely strata contribute (z_h − z̄)² with z̄ the grand mean of
    /// cluster totals across the whole cell.
    Adjust,
}

/// Options for cell construction.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DirectOptions {
    pub lonely_psu: LonelyPsu,
    /// When true, degenerate cells (p̂ ∈ {0,1}) are replaced by the
    /// continuity-corrected estimate p̃ = (n·p̂ + 1/2)/(n + 1) with the
    /// binomial variance p̃(1−p̃)/n, and enter the likelihood. Default off:
    /// such cells are excluded.
    pub continuity_correction: bool,
}

/// Hajek (weighted-ratio) estimate of the indicator proportion over the
/// denominator-eligible records. Returns `None` for an empty denominator.
pub fn hajek_estimate(records: &[&WomanRecord], indicator: Indicator) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        if indicator.in_denominator(r) == Some(true) {
            den += r.weight;
            if indicator.numerator(r) == Some(true) {
                num += r.weight;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Result of the stratified linearization variance.
#[derive(Debug, Clone, Copy)]
pub struct DesignVariance {
    pub var_p: f64,
    /// Distinct clusters contributing denominator records.
    pub n_clusters: usize,
    /// Strata contributing exactly one cluster.
    pub n_lonely_strata: usize,
    /// Whether any stratum contributed ≥ 2 clusters.
    pub any_multi_cluster_stratum: bool,
}

/// Stratified, with-replacement-first-stage Taylor linearization of the
/// Hajek ratio variance.
pub fn design_variance(
    records: &[&WomanRecord],
    indicator: Indicator,
    p_hat: f64,
    lonely: LonelyPsu,
) -> DesignVariance {
    // total weight over the denominator
    let total_w: f64 = records
        .iter()
        .filter(|r| indicator.in_denominator(r) == Some(true))
        .map(|r| r.weight)
        .sum();
    // cluster totals z_hc of the linearized residuals, grouped by stratum
    let mut cluster_totals: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in records {
        if indicator.in_denominator(r) != Some(true) {
            continue;
        }
        let x = if indicator.numerator(r) == Some(true) { 1.0 } else { 0.0 };
        let u = r.weight * (x - p_hat) / total_w;
        *cluster_totals
            .entry((r.stratum_id.as_str(), r.cluster_id.as_str()))
            .or_insert(0.0) += u;
    }
    let n_clusters = cluster_totals.len();
    let grand_mean =
        cluster_totals.values().sum::<f64>() / (n_clusters.max(1)) as f64;

    // regroup per stratum
    let mut strata: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((s, _), z) in &cluster_totals {
        strata.entry(s).or_default().push(*z);
    }

    let mut var = 0.0;
    let mut n_lonely = 0usize;
    let mut any_multi = false;
    for z in strata.values() {
        let n_h = z.len();
        if n_h < 2 {
            n_lonely += 1;
            if lonely == LonelyPsu::Adjust {
                let d = z[0] - grand_mean;
                var += d * d;
            }
            continue;
        }
        any_multi = true;
        let mean: f64 = z.iter().sum::<f64>() / n_h as f64;
        let ss: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum();
        var += ss * n_h as f64 / (n_h - 1) as f64;
    }
    DesignVariance {
        var_p: var,
        n_clusters,
        n_lonely_strata: n_lonely,
        any_multi_cluster_stratum: any_multi,
    }
}

/// Logit transform with delta-method variance:
/// y = logit(p̂), var_y = var_p / (p̂(1−p̂))².
pub fn logit_transform(p_hat: f64, var_p: f64) -> (f64, f64) {
    assert!(p_hat > 0.0 && p_hat < 1.0 && var_p > 0.0);
    let d = p_hat * (1.0 - p_hat);
    (logit(p_hat), var_p / (d * d))
}

/// Builds the full cell table: one [`DirectEstimate`] per non-empty
/// (area, year, survey, subgroup, indicator), ordered by
/// (area, year, survey, subgroup, indicator).
///
/// Every record's area must be on the geography roster. Cell construction is
/// parallel over (area, year, survey) groups; the ordering of the output is
/// deterministic.
pub fn build_cells(
    dataset: &SurveyDataset,
    geography: &GeographyGraph,
    subgroups: &[Subgroup],
    indicators: &[Indicator],
    options: DirectOptions,
) -> Result<Vec<DirectEstimate>> {
    for r in &dataset.records {
        if geography.area_index(&r.area_id).is_none() {
            return Err(Error::UnknownArea {
                area: r.area_id.clone(),
                context: format!("microdata (survey '{}')", r.survey_id),
            });
        }
    }
    let mut groups: BTreeMap<(&str, i32, &str), Vec<&WomanRecord>> = BTreeMap::new();
    let mut families: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &dataset.records {
        groups
            .entry((r.area_id.as_str(), r.year, r.survey_id.as_str()))
            .or_default()
            .push(r);
        families.entry(r.survey_id.as_str()).or_insert(r.family.as_str());
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let mut cells: Vec<DirectEstimate> = groups
        .par_iter()
        .flat_map_iter(|((area, year, survey), records)| {
            let mut out = Vec::new();
            for &subgroup in subgroups {
                let members: Vec<&WomanRecord> =
                    records.iter().copied().filter(|r| subgroup.matches(r)).collect();
                for &indicator in indicators {
                    if let Some(cell) = build_cell(
                        area,
                        *year,
                        survey,
                        families[survey],
                        subgroup,
                        indicator,
                        &members,
                        options,
                    ) {
                        out.push(cell);
                    }
                }
            }
            out
        })
        .collect();
    cells.sort_by(|a, b| {
        (&a.area_id, a.year, &a.survey_id, a.subgroup, a.indicator).cmp(&(
            &b.area_id,
            b.year,
            &b.survey_id,
            b.subgroup,
            b.indicator,
        ))
    });
    Ok(cells)
}

/// One cell; `None` when no record is denominator-eligible.
#[allow(clippy::too_many_arguments)]
fn build_cell(
    area: &str,
    year: i32,
    survey: &str,
    family: &str,
    subgroup: Subgroup,
    indicator: Indicator,
    members: &[&WomanRecord],
    options: DirectOptions,
) -> Option<DirectEstimate> {
    let eligible: Vec<&WomanRecord> = members
        .iter()
        .copied()
        .filter(|r| indicator.in_denominator(r) == Some(true))
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let p_hat = hajek_estimate(&eligible, indicator)?;
    let n_records = eligible.len();
    let dv = design_variance(&eligible, indicator, p_hat, options.lonely_psu);

    let mut cell = DirectEstimate {
        area_id: area.to_string(),
        year,
        survey_id: survey.to_string(),
        survey_family: family.to_string(),
        subgroup,
        indicator,
        p_hat,
        var_p: dv.var_p,
        y: f64::NAN,
        var_y: f64::NAN,
        n_records,
        n_clusters: dv.n_clusters,
        status: CellStatus::Ok,
    };

    if p_hat <= 0.0 || p_hat >= 1.0 {
        if options.continuity_correction {
            let n = n_records as f64;
            let p = (p_hat * n + 0.5) / (n + 1.0);
            let var = p * (1.0 - p) / n;
            let (y, var_y) = logit_transform(p, var);
            cell.p_hat = p;
            cell.var_p = var;
            cell.y = y;
            cell.var_y = var_y;
            return Some(cell);
        }
        cell.status =
            if p_hat <= 0.0 { CellStatus::DegenerateZero } else { CellStatus::DegenerateOne };
        return Some(cell);
    }
    if !dv.any_multi_cluster_stratum || !(dv.var_p > 0.0) {
        cell.status = CellStatus::InsufficientClusters;
        cell.var_p = if dv.any_multi_cluster_stratum || options.lonely_psu == LonelyPsu::Adjust {
            dv.var_p
        } else {
            f64::NAN
        };
        return Some(cell);
    }
    let (y, var_y) = logit_transform(p_hat, dv.var_p);
    cell.y = y;
    cell.var_y = var_y;
    Some(cell)
}

/// Column order of the cell table file.
pub const CELL_COLUMNS: [&str; 13] = [
    "area_id",
    "year",
    "survey_id",
    "survey_family",
    "subgroup",
    "indicator",
    "p_hat",
    "var_p",
    "y",
    "var_y",
    "n_records",
    "n_clusters",
    "status",
];

/// Writes the cell table as comma-delimited text; NaN fields are left empty.
pub fn write_cells(cells: &[DirectEstimate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let emit = |r: std::io::Result<()>| r.map_err(|e| Error::io(path, e));
    emit(writeln!(out, "{}", CELL_COLUMNS.join(",")))?;
    let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for c in cells {
        emit(writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.area_id,
            c.year,
            c.survey_id,
            c.survey_family,
            c.subgroup.name(),
            c.indicator.name(),
            num(c.p_hat),
            num(c.var_p),
            num(c.y),
            num(c.var_y),
            c.n_records,
            c.n_clusters,
            c.status.name(),
        ))?;
    }
    emit(out.flush())
}

/// Reads a cell table written by [`write_cells`].
pub fn read_cells(path: impl AsRef<Path>) -> Result<Vec<DirectEstimate>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    })?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let idx: Vec<usize> = CELL_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let get = |i: usize| row.get(idx[i]).unwrap_or("").trim();
        let float = |i: usize| -> Result<f64> {
            let s = get(i);
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse().map_err(|_| Error::parse(path, line, format!("bad number '{s}'")))
        };
        let int = |i: usize| -> Result<usize> {
            get(i)
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad count '{}'", get(i))))
        };
        cells.push(DirectEstimate {
            area_id: get(0).to_string(),
            year: get(1)
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad year '{}'", get(1))))?,
            survey_id: get(2).to_string(),
            survey_family: get(3).to_string(),
            subgroup: Subgroup::parse(get(4))?,
            indicator: Indicator::parse(get(5))?,
            p_hat: float(6)?,
            var_p: float(7)?,
            y: float(8)?,
            var_y: float(9)?,
            n_records: int(10)?,
            n_clusters: int(11)?,
            status: CellStatus::parse(get(12))?,
        });
    }
    Ok(cells)
}
