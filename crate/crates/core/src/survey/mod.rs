//! Normalized survey microdata and geography schemas.
//!
//! A [`WomanRecord`] is one woman-level interview row with complex-design
//! metadata (stratum, cluster, weight) and precomputed binary indicator
//! columns. Records are grouped into a [`SurveyDataset`] by the loader in
//! [`load`], which validates invariants row by row.
//!
//! Indicators are defined as numerator/denominator predicates over records
//! ([`Indicator`]); `demand_satisfied` is derived from the other columns
//! rather than stored. Subgroups ([`Subgroup`]) are the all-women domain plus
//! the four age-by-parity cells, which partition it.

pub mod load;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One woman-level microdata row.
#[derive(Debug, Clone, PartialEq)]
pub struct WomanRecord {
    pub survey_id: String,
    /// Instrument family (DHS, MICS, ...); defaults to `survey_id` when the
    /// input has no family column.
    pub family: String,
    pub year: i32,
    pub area_id: String,
    pub stratum_id: String,
    pub cluster_id: String,
    /// Sampling weight; positive and finite.
    pub weight: f64,
    pub age_years: u32,
    /// Live births; `None` when the source row left parity blank.
    pub parity: Option<u32>,
    /// Modern contraceptive use.
    pub mcpr: Option<bool>,
    /// Traditional contraceptive use.
    pub tcpr: Option<bool>,
    /// Any contraceptive use.
    pub cpr: Option<bool>,
    /// Unmet need for family planning.
    pub unmet_need: Option<bool>,
}

/// Family-planning indicator, defined by numerator and denominator predicates
/// over a [`WomanRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Indicator {
    /// Modern contraceptive prevalence among all eligible women.
    Mcpr,
    /// Traditional contraceptive prevalence.
    Tcpr,
    /// Any-method contraceptive prevalence.
    Cpr,
    /// Unmet need for family planning.
    UnmetNeed,
    /// Modern use among women with demand (any use or unmet need):
    /// numerator = mcpr, denominator = cpr ∨ unmet_need.
    DemandSatisfied,
}

impl Indicator {
    pub const ALL: [Indicator; 5] = [
        Indicator::Mcpr,
        Indicator::Tcpr,
        Indicator::Cpr,
        Indicator::UnmetNeed,
        Indicator::DemandSatisfied,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Mcpr => "mcpr",
            Indicator::Tcpr => "tcpr",
            Indicator::Cpr => "cpr",
            Indicator::UnmetNeed => "unmet_need",
            Indicator::DemandSatisfied => "demand_satisfied",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown indicator '{s}'")))
    }

    /// Whether the record belongs to this indicator's denominator.
    ///
    /// `None` means the record cannot be evaluated (required columns missing)
    /// and is excluded from the cell entirely.
    pub fn in_denominator(self, r: &WomanRecord) -> Option<bool> {
        match self {
            Indicator::Mcpr => r.mcpr.map(|_| true),
            Indicator::Tcpr => r.tcpr.map(|_| true),
            Indicator::Cpr => r.cpr.map(|_| true),
            Indicator::UnmetNeed => r.unmet_need.map(|_| true),
            Indicator::DemandSatisfied => {
                let (c, u, _m) = (r.cpr?, r.unmet_need?, r.mcpr?);
                Some(c || u)
            }
        }
    }

    /// Numerator value for a record already in the denominator.
    pub fn numerator(self, r: &WomanRecord) -> Option<bool> {
        match self {
            Indicator::Mcpr | Indicator::DemandSatisfied => r.mcpr,
            Indicator::Tcpr => r.tcpr,
            Indicator::Cpr => r.cpr,
            Indicator::UnmetNeed => r.unmet_need,
        }
    }
}

/// Analysis subgroup: all women, or one of the four age-by-parity cells that
/// partition the 15–49 domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subgroup {
    AllWomen,
    /// Age 15–24, parity 0.
    YoungNulliparous,
    /// Age 15–24, parity ≥ 1.
    YoungParous,
    /// Age 25–49, parity 0.
    OlderNulliparous,
    /// Age 25–49, parity ≥ 1.
    OlderParous,
}

impl Subgroup {
    pub const ALL: [Subgroup; 5] = [
        Subgroup::AllWomen,
        Subgroup::YoungNulliparous,
        Subgroup::YoungParous,
        Subgroup::OlderNulliparous,
        Subgroup::OlderParous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subgroup::AllWomen => "all_women",
            Subgroup::YoungNulliparous => "young_nulliparous",
            Subgroup::YoungParous => "young_parous",
            Subgroup::OlderNulliparous => "older_nulliparous",
            Subgroup::OlderParous => "older_parous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Subgroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown subgroup '{s}'")))
    }

    /// Whether the record falls in this subgroup. All-women matches every
    /// in-range record regardless of parity; the four age-parity cells
    /// require parity to be present.
    pub fn matches(self, r: &WomanRecord) -> bool {
        if !(15..=49).contains(&r.age_years) {
            return false;
        }
        match self {
            Subgroup::AllWomen => true,
            _ => match r.parity {
                None => false,
                Some(p) => {
                    let young = r.age_years <= 24;
                    let parous = p >= 1;
                    matches!(
                        (self, young, parous),
                        (Subgroup::YoungNulliparous, true, false)
                            | (Subgroup::YoungParous, true, true)
                            | (Subgroup::OlderNulliparous, false, false)
                            | (Subgroup::OlderParous, false, true)
                    )
                }
            },
        }
    }
}

/// Assigns a record to its age-parity subgroup.
///
/// Returns `None` when the record cannot be classified (age outside 15–49 or
/// parity missing); callers count such records rather than failing.
pub fn classify_subgroup(r: &WomanRecord) -> Option<Subgroup> {
    if !(15..=49).contains(&r.age_years) {
        return None;
    }
    let parous = r.parity? >= 1;
    let young = r.age_years <= 24;
    Some(match (young, parous) {
        (true, false) => Subgroup::YoungNulliparous,
        (true, true) => Subgroup::YoungParous,
        (false, false) => Subgroup::OlderNulliparous,
        (false, true) => Subgroup::OlderParous,
    })
}

/// Undirected area adjacency with an ordered roster and optional population
/// counts of women of reproductive age per (area, year).
#[derive(Debug, Clone)]
pub struct GeographyGraph {
    /// Ordered roster; area index = position here.
    pub areas: Vec<String>,
    /// Deduplicated undirected edges as index pairs with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Connected-component label per area, in 0..n_components.
    pub components: Vec<usize>,
    pub n_components: usize,
    /// Women-of-reproductive-age counts keyed by (area index, year).
    pub population: Option<BTreeMap<(usize, i32), f64>>,
    index: BTreeMap<String, usize>,
}

impl GeographyGraph {
    /// Builds a graph from a roster and an edge list of area-id pairs.
    pub fn from_parts(areas: Vec<String>, edge_ids: &[(String, String)]) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, a) in areas.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::DuplicateArea(a.clone()));
            }
        }
        let mut edges = Vec::new();
        for (a, b) in edge_ids {
            if a == b {
                return Err(Error::SelfEdge(a.clone()));
            }
            let look = |id: &String| {
                index.get(id).copied().ok_or_else(|| Error::UnknownArea {
                    area: id.clone(),
                    context: "edge list".into(),
                })
            };
            let (i, j) = (look(a)?, look(b)?);
            edges.push((i.min(j), i.max(j)));
        }
        edges.sort_unstable();
        edges.dedup();

        let (components, n_components) = label_components(areas.len(), &edges);
        Ok(Self { areas, edges, components, n_components, population: None, index })
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn area_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_connected(&self) -> bool {
        self.n_components <= 1
    }

    /// Degree of each area.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n_areas()];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// Population count for (area index, year).
    pub fn population_of(&self, area: usize, year: i32) -> Result<f64> {
        self.population
            .as_ref()
            .and_then(|m| m.get(&(area, year)).copied())
            .ok_or_else(|| Error::MissingPopulation { area: self.areas[area].clone(), year })
    }
}

/// Labels connected components by breadth-first search over the edge set.
fn label_components(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    (label, next)
}

/// Per-row rejection from the loader, with a 1-based data line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Counts accumulated while loading microdata.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// Accepted records per (survey_id, year, area_id).
    pub cell_counts: BTreeMap<(String, i32, String), usize>,
    pub n_accepted: usize,
    pub n_rejected: usize,
    /// Accepted records that cannot be classified into an age-parity
    /// subgroup (parity missing).
    pub n_unclassifiable: usize,
}

/// Validated microdata with its rejection list and load report.
#[derive(Debug, Clone, Default)]
pub struct SurveyDataset {
    pub records: Vec<WomanRecord>,
    pub rejects: Vec<RejectedRow>,
    pub report: LoadReport,
}

impl SurveyDataset {
    /// Distinct survey ids in first-appearance order.
    pub fn survey_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.survey_id.clone()) {
                out.push(r.survey_id.clone());
            }
        }
        out
    }

    /// Instrument family of each survey id.
    pub fn family_of(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            m.entry(r.survey_id.clone()).or_insert_with(|| r.family.clone());
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(age: u32, parity: Option<u32>) -> WomanRecord {
        WomanRecord {
            survey_id: "s".into(),
            family: "s".into(),
            year: 2013,
            area_id: "a".into(),
            stratum_id: "st".into(),
            cluster_id: "c".into(),
            weight: 1.0,
            age_years: age,
            parity,
            mcpr: Some(false),
            tcpr: Some(false),
            cpr: Some(false),
            unmet_need: Some(false),
        }
    }

    #[test]
    fn classifies_subgroups_at_boundaries() {
        assert_eq!(classify_subgroup(&rec(19, Some(0))), Some(Subgroup::YoungNulliparous));
        assert_eq!(classify_subgroup(&rec(25, Some(3))), Some(Subgroup::OlderParous));
        // 24 still belongs to the young cohort
        assert_eq!(classify_subgroup(&rec(24, Some(1))), Some(Subgroup::YoungParous));
        assert_eq!(classify_subgroup(&rec(25, None)), None);
        assert_eq!(classify_subgroup(&rec(14, Some(0))), None);
    }

    #[test]
    fn age_parity_subgroups_partition_all_women() {
        for age in 15..=49 {
            for parity in [Some(0), Some(1), Some(4)] {
                let r = rec(age, parity);
                let n: usize = Subgroup::ALL
                    .iter()
                    .skip(1) // all_women aside
                    .filter(|g| g.matches(&r))
                    .count();
                assert_eq!(n, 1, "age={age} parity={parity:?}");
                assert!(Subgroup::AllWomen.matches(&r));
            }
        }
    }

    #[test]
    fn demand_satisfied_denominator_is_use_or_need() {
        let mut r = rec(30, Some(2));
        r.cpr = Some(false);
        r.unmet_need = Some(false);
        assert_eq!(Indicator::DemandSatisfied.in_denominator(&r), Some(false));
        r.unmet_need = Some(true);
        assert_eq!(Indicator::DemandSatisfied.in_denominator(&r), Some(true));
        r.unmet_need = None;
        assert_eq!(Indicator::DemandSatisfied.in_denominator(&r), None);
    }

    #[test]
    fn graph_components_and_validation() {
        let g = GeographyGraph::from_parts(
            vec!["A".into(), "B".into(), "C".into()],
            &[("A".into(), "B".into()), ("B".into(), "C".into())],
        )
        .unwrap();
        assert_eq!(g.n_components, 1);
        assert!(g.is_connected());
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);

        let g2 = GeographyGraph::from_parts(vec!["A".into(), "B".into()], &[]).unwrap();
        assert_eq!(g2.n_components, 2);
        assert!(!g2.is_connected());

        let err = GeographyGraph::from_parts(
            vec!["A".into()],
            &[("A".into(), "A".into())],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SelfEdge(a) if a == "A"));

        let err = GeographyGraph::from_parts(vec!["A".into(), "A".into()], &[]).unwrap_err();
        assert!(matches!(err, Error::DuplicateArea(_)));
    }
}
