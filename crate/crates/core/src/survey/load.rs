//! Flat-file ingestion: microdata, geography, and population tables.
//!
//! Microdata arrives as delimited text with a header; a [`MicrodataSchema`]
//! maps schema fields to column names so files from different providers load
//! without editing. Rows violating record invariants are rejected one by one
//! with line-numbered reasons; structural problems (missing columns, a
//! cluster appearing under two strata) fail the whole load.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{GeographyGraph, LoadReport, RejectedRow, SurveyDataset, WomanRecord};

/// Column mapping for microdata files. Field values are header names in the
/// input file; `None` for an indicator means the input carries no such
/// column and every record is treated as missing it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicrodataSchema {
    /// Field delimiter (single character).
    pub delimiter: String,
    pub survey_id: String,
    /// Instrument-family column; when absent, family = survey_id.
    pub family: Option<String>,
    pub year: String,
    pub area_id: String,
    pub stratum_id: String,
    pub cluster_id: String,
    pub weight: String,
    pub age_years: String,
    pub parity: String,
    pub mcpr: Option<String>,
    pub tcpr: Option<String>,
    pub cpr: Option<String>,
    pub unmet_need: Option<String>,
}

impl Default for MicrodataSchema {
    fn default() -> Self {
        Self {
            delimiter: ",".into(),
            survey_id: "survey_id".into(),
            family: None,
            year: "year".into(),
            area_id: "area_id".into(),
            stratum_id: "stratum_id".into(),
            cluster_id: "cluster_id".into(),
            weight: "weight".into(),
            age_years: "age_years".into(),
            parity: "parity".into(),
            mcpr: Some("mcpr".into()),
            tcpr: Some("tcpr".into()),
            cpr: Some("cpr".into()),
            unmet_need: Some("unmet_need".into()),
        }
    }
}

impl MicrodataSchema {
    fn delimiter_byte(&self) -> Result<u8> {
        let bytes = self.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(Error::Config(format!(
                "delimiter must be a single character, got '{}'",
                self.delimiter
            )));
        }
        Ok(bytes[0])
    }
}

/// Resolved column positions for one file.
struct Columns {
    survey_id: usize,
    family: Option<usize>,
    year: usize,
    area_id: usize,
    stratum_id: usize,
    cluster_id: usize,
    weight: usize,
    age_years: usize,
    parity: usize,
    // indicator columns may be absent from a given file: the survey then
    // contributes no cells for that indicator
    mcpr: Option<usize>,
    tcpr: Option<usize>,
    cpr: Option<usize>,
    unmet_need: Option<usize>,
}

impl Columns {
    fn resolve(path: &Path, header: &csv::StringRecord, schema: &MicrodataSchema) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        };
        Ok(Self {
            survey_id: need(&schema.survey_id)?,
            family: match &schema.family {
                Some(c) => Some(need(c)?),
                None => None,
            },
            year: need(&schema.year)?,
            area_id: need(&schema.area_id)?,
            stratum_id: need(&schema.stratum_id)?,
            cluster_id: need(&schema.cluster_id)?,
            weight: need(&schema.weight)?,
            age_years: need(&schema.age_years)?,
            parity: need(&schema.parity)?,
            mcpr: schema.mcpr.as_deref().and_then(find),
            tcpr: schema.tcpr.as_deref().and_then(find),
            cpr: schema.cpr.as_deref().and_then(find),
            unmet_need: schema.unmet_need.as_deref().and_then(find),
        })
    }
}

/// Parses a {0, 1, missing} indicator field.
fn parse_indicator(raw: &str) -> std::result::Result<Option<bool>, String> {
    match raw.trim() {
        "" | "NA" | "na" | "." => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(format!("indicator value '{other}' outside {{0,1,missing}}")),
    }
}

/// Loads and validates microdata. Structural problems fail the load; rows
/// violating record invariants are collected in the rejection list.
pub fn load_microdata(path: impl AsRef<Path>, schema: &MicrodataSchema) -> Result<SurveyDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &header, schema)?;

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut report = LoadReport::default();
    // (survey, cluster) -> stratum, for the nesting invariant
    let mut cluster_stratum: HashMap<(String, String), String> = HashMap::new();

    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based file line; header is line 1
        let row = row.map_err(|e| csv_error(path, e))?;
        match parse_row(&row, &cols) {
            Err(reason) => {
                rejects.push(RejectedRow { line, reason });
                report.n_rejected += 1;
            }
            Ok(rec) => {
                let key = (rec.survey_id.clone(), rec.cluster_id.clone());
                match cluster_stratum.get(&key) {
                    None => {
                        cluster_stratum.insert(key, rec.stratum_id.clone());
                    }
                    Some(first) if *first != rec.stratum_id => {
                        return Err(Error::ClusterSpansStrata {
                            survey: rec.survey_id,
                            cluster: rec.cluster_id,
                            first: first.clone(),
                            second: rec.stratum_id,
                        });
                    }
                    Some(_) => {}
                }
                *report
                    .cell_counts
                    .entry((rec.survey_id.clone(), rec.year, rec.area_id.clone()))
                    .or_insert(0) += 1;
                report.n_accepted += 1;
                if rec.parity.is_none() {
                    report.n_unclassifiable += 1;
                }
                records.push(rec);
            }
        }
    }

    Ok(SurveyDataset { records, rejects, report })
}

/// Parses one data row; `Err` carries the rejection reason.
fn parse_row(row: &csv::StringRecord, cols: &Columns) -> std::result::Result<WomanRecord, String> {
    let get = |i: usize| row.get(i).unwrap_or("").trim();
    let survey_id = get(cols.survey_id).to_string();
    if survey_id.is_empty() {
        return Err("empty survey_id".into());
    }
    let family = match cols.family {
        Some(i) if !get(i).is_empty() => get(i).to_string(),
        _ => survey_id.clone(),
    };
    let year: i32 = get(cols.year)
        .parse()
        .map_err(|_| format!("unparseable year '{}'", get(cols.year)))?;
    let area_id = get(cols.area_id).to_string();
    if area_id.is_empty() {
        return Err("empty area_id".into());
    }
    let stratum_id = get(cols.stratum_id).to_string();
    let cluster_id = get(cols.cluster_id).to_string();
    if stratum_id.is_empty() || cluster_id.is_empty() {
        return Err("empty stratum_id or cluster_id".into());
    }
    let weight: f64 = get(cols.weight)
        .parse()
        .map_err(|_| format!("unparseable weight '{}'", get(cols.weight)))?;
    if !(weight > 0.0) || !weight.is_finite() {
        return Err("non-positive weight".into());
    }
    let age_years: u32 = get(cols.age_years)
        .parse()
        .map_err(|_| format!("unparseable age '{}'", get(cols.age_years)))?;
    if !(15..=49).contains(&age_years) {
        return Err(format!("age {age_years} outside 15-49"));
    }
    let parity = match get(cols.parity) {
        "" | "NA" | "na" | "." => None,
        s => Some(s.parse::<u32>().map_err(|_| format!("unparseable parity '{s}'"))?),
    };
    let ind = |c: Option<usize>| -> std::result::Result<Option<bool>, String> {
        match c {
            None => Ok(None),
            Some(i) => parse_indicator(get(i)),
        }
    };
    let rec = WomanRecord {
        survey_id,
        family,
        year,
        area_id,
        stratum_id,
        cluster_id,
        weight,
        age_years,
        parity,
        mcpr: ind(cols.mcpr)?,
        tcpr: ind(cols.tcpr)?,
        cpr: ind(cols.cpr)?,
        unmet_need: ind(cols.unmet_need)?,
    };
    if let (Some(m), Some(t), Some(c)) = (rec.mcpr, rec.tcpr, rec.cpr) {
        if c != (m || t) {
            return Err("cpr inconsistent with mcpr/tcpr".into());
        }
    }
    Ok(rec)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

/// Canonical column order written by [`write_microdata`].
pub const MICRODATA_COLUMNS: [&str; 13] = [
    "survey_id",
    "family",
    "year",
    "area_id",
    "stratum_id",
    "cluster_id",
    "weight",
    "age_years",
    "parity",
    "mcpr",
    "tcpr",
    "cpr",
    "unmet_need",
];

/// Writes accepted records as comma-delimited text in canonical column
/// order. Loading the result with the default schema (plus a `family`
/// mapping) reproduces the records exactly.
pub fn write_microdata(dataset: &SurveyDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let emit = |r: std::io::Result<()>| r.map_err(|e| Error::io(path, e));
    emit(writeln!(out, "{}", MICRODATA_COLUMNS.join(",")))?;
    let ind = |v: Option<bool>| match v {
        None => "",
        Some(false) => "0",
        Some(true) => "1",
    };
    for r in &dataset.records {
        let parity = r.parity.map(|p| p.to_string()).unwrap_or_default();
        emit(writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.survey_id,
            r.family,
            r.year,
            r.area_id,
            r.stratum_id,
            r.cluster_id,
            r.weight,
            r.age_years,
            parity,
            ind(r.mcpr),
            ind(r.tcpr),
            ind(r.cpr),
            ind(r.unmet_need),
        ))?;
    }
    emit(out.flush())
}

/// Schema matching [`write_microdata`] output.
pub fn canonical_schema() -> MicrodataSchema {
    MicrodataSchema { family: Some("family".into()), ..MicrodataSchema::default() }
}

/// Loads a geography graph from an area roster (one id per line) and an edge
/// list (two whitespace- or comma-separated ids per line). Blank lines and
/// `#` comments are skipped in both.
pub fn load_geography(
    roster_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<GeographyGraph> {
    let roster_path = roster_path.as_ref();
    let edges_path = edges_path.as_ref();
    let roster = std::fs::read_to_string(roster_path).map_err(|e| Error::io(roster_path, e))?;
    let areas: Vec<String> = data_lines(&roster).map(|(_, l)| l.to_string()).collect();

    let edge_text = std::fs::read_to_string(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&edge_text) {
        let parts: Vec<&str> = line.split([',', ' ', '\t']).filter(|t| !t.is_empty()).collect();
        if parts.len() != 2 {
            return Err(Error::parse(
                edges_path,
                line_no,
                format!("expected two area ids, got '{line}'"),
            ));
        }
        edges.push((parts[0].to_string(), parts[1].to_string()));
    }
    GeographyGraph::from_parts(areas, &edges)
}

/// Attaches a population table (header `area_id,year,count`) to a graph.
pub fn load_population(graph: &mut GeographyGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let (c_area, c_year, c_count) = (col("area_id")?, col("year")?, col("count")?);
    let mut table = std::collections::BTreeMap::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2;
        let row = row.map_err(|e| csv_error(path, e))?;
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let area = graph.area_index(get(c_area)).ok_or_else(|| Error::UnknownArea {
            area: get(c_area).to_string(),
            context: "population table".into(),
        })?;
        let year: i32 = get(c_year)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unparseable year '{}'", get(c_year))))?;
        let count: f64 = get(c_count)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unparseable count '{}'", get(c_count))))?;
        if !(count >= 0.0) || !count.is_finite() {
            return Err(Error::parse(path, line, format!("negative count {count}")));
        }
        table.insert((area, year), count);
    }
    graph.population = Some(table);
    Ok(())
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), content).unwrap();
        f
    }

    const HEADER: &str = "survey_id,year,area_id,stratum_id,cluster_id,weight,age_years,parity,mcpr,tcpr,cpr,unmet_need";

    #[test]
    fn loads_valid_rows() {
        let f = write_tmp(&format!(
            "{HEADER}\n\
             dhs2013,2013,KN,s1,c1,1.5,25,2,1,0,1,0\n\
             dhs2013,2013,KN,s1,c1,0.5,19,0,0,0,0,1\n\
             dhs2013,2013,LA,s2,c9,2,31,,0,1,1,0\n\
             dhs2013,2013,LA,s2,c9,1,49,1,0,0,0,\n"
        ));
        let ds = load_microdata(f.path(), &MicrodataSchema::default()).unwrap();
        assert_eq!(ds.records.len(), 4);
        assert!(ds.rejects.is_empty());
        assert_eq!(ds.report.n_accepted, 4);
        assert_eq!(ds.report.n_unclassifiable, 1);
        assert_eq!(ds.records[0].family, "dhs2013"); // defaulted
        assert_eq!(ds.records[2].parity, None);
        assert_eq!(ds.records[3].unmet_need, None);
        assert_eq!(
            ds.report.cell_counts[&("dhs2013".into(), 2013, "KN".into())],
            2
        );
    }

    #[test]
    fn rejects_bad_rows_with_reasons() {
        let f = write_tmp(&format!(
            "{HEADER}\n\
             s,2013,KN,s1,c1,0,25,1,0,0,0,0\n\
             s,2013,KN,s1,c1,1,12,1,0,0,0,0\n\
             s,2013,KN,s1,c1,1,25,1,2,0,0,0\n\
             s,2013,KN,s1,c1,1,25,1,1,0,0,0\n"
        ));
        let ds = load_microdata(f.path(), &MicrodataSchema::default()).unwrap();
        assert_eq!(ds.records.len(), 0);
        assert_eq!(ds.rejects.len(), 4);
        assert_eq!(ds.rejects[0].reason, "non-positive weight");
        assert_eq!(ds.rejects[0].line, 2);
        assert!(ds.rejects[1].reason.contains("age 12 outside"));
        assert!(ds.rejects[2].reason.contains("outside {0,1,missing}"));
        assert_eq!(ds.rejects[3].reason, "cpr inconsistent with mcpr/tcpr");
    }

    #[test]
    fn cluster_spanning_strata_is_a_hard_error() {
        let f = write_tmp(&format!(
            "{HEADER}\n\
             s,2013,KN,s1,c7,1,25,1,0,0,0,0\n\
             s,2013,KN,s2,c7,1,26,1,0,0,0,0\n"
        ));
        let err = load_microdata(f.path(), &MicrodataSchema::default()).unwrap_err();
        match err {
            Error::ClusterSpansStrata { cluster, first, second, .. } => {
                assert_eq!(cluster, "c7");
                assert_eq!(first, "s1");
                assert_eq!(second, "s2");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_required_column_fails() {
        let f = write_tmp("survey_id,year\ns,2013\n");
        let err = load_microdata(f.path(), &MicrodataSchema::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { column, .. } if column == "area_id"));
    }

    #[test]
    fn absent_indicator_column_means_all_missing() {
        let f = write_tmp(
            "survey_id,year,area_id,stratum_id,cluster_id,weight,age_years,parity,mcpr,tcpr,cpr\n\
             nnhs,2014,KN,s1,c1,1,25,1,1,0,1\n",
        );
        let ds = load_microdata(f.path(), &MicrodataSchema::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].unmet_need, None);
    }

    #[test]
    fn write_then_load_round_trips() {
        let f = write_tmp(&format!(
            "{HEADER}\n\
             s,2013,KN,s1,c1,1.25,25,2,1,0,1,0\n\
             s,2013,LA,s2,c9,0.5,19,,0,1,1,\n"
        ));
        let ds = load_microdata(f.path(), &MicrodataSchema::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_microdata(&ds, out.path()).unwrap();
        let ds2 = load_microdata(out.path(), &canonical_schema()).unwrap();
        assert_eq!(ds.records, ds2.records);
        // writing the re-loaded dataset is byte-identical
        let out2 = tempfile::NamedTempFile::new().unwrap();
        write_microdata(&ds2, out2.path()).unwrap();
        assert_eq!(
            std::fs::read(out.path()).unwrap(),
            std::fs::read(out2.path()).unwrap()
        );
    }

    #[test]
    fn geography_files_load() {
        let roster = write_tmp("# areas\nA\nB\nC\n");
        let edges = write_tmp("A B\nB,C\n");
        let g = load_geography(roster.path(), edges.path()).unwrap();
        assert_eq!(g.n_areas(), 3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.n_components, 1);

        let pop = write_tmp("area_id,year,count\nA,2013,1000\nB,2013,2000\nC,2013,1500\n");
        let mut g = g;
        load_population(&mut g, pop.path()).unwrap();
        assert_eq!(g.population_of(1, 2013).unwrap(), 2000.0);
        assert!(matches!(
            g.population_of(0, 1999),
            Err(Error::MissingPopulation { year: 1999, .. })
        ));
    }
}
