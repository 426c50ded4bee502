//! End-to-end runs on small synthetic scenarios: reproducibility, staging,
//! failure handling, and cross-indicator consistency of the report tables.

use std::collections::BTreeMap;
use std::path::Path;

use fpsae::pipeline::{parse_config, run, run_direct, run_fit, run_report, RunConfig};
use fpsae::synthetic::{generate_scenario, ScenarioConfig, SurveyPlan, TruthHypers};
use fpsae::Error;

fn scenario(dir: &Path, n_areas: usize, seed: u64) -> fpsae::synthetic::ScenarioArtifacts {
    let plan = |id: &str, family: &str, year: i32| SurveyPlan {
        strata_per_area: 2,
        clusters_per_stratum: 5,
        women_per_cluster: 25,
        cluster_sd: 0.25,
        ..SurveyPlan::new(id, family, year)
    };
    let config = ScenarioConfig {
        n_areas,
        first_year: 2001,
        last_year: 2008,
        truth: TruthHypers::default(),
        plans: vec![
            plan("dhs2002", "dhs", 2002),
            plan("dhs2007", "dhs", 2007),
            plan("mics2004", "mics", 2004),
        ],
    };
    generate_scenario(&config, dir, seed).unwrap()
}

fn config_toml(arts: &fpsae::synthetic::ScenarioArtifacts, out: &Path, extra_run: &str) -> String {
    format!(
        r#"
[paths]
microdata = "{}"
areas = "{}"
edges = "{}"
population = "{}"
output = "{}"

[years]
first = 2001
last = 2008

[run]
mode = "empirical_bayes"
seed = 99
indicators = ["mcpr"]
subgroups = ["all_women"]
models = ["1a", "2a"]
{extra_run}

[mcmc]
n_samples = 200
"#,
        arts.microdata_path.display(),
        arts.roster_path.display(),
        arts.edges_path.display(),
        arts.population_path.display(),
        out.display(),
    )
}

/// Every regular file under `dir`, keyed by its relative path, with contents.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn chained_run_is_reproducible_and_tables_are_sane() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 5, 7);

    let out1 = tmp.path().join("out1");
    let out2 = tmp.path().join("out2");
    let cfg1: RunConfig = parse_config(&config_toml(&arts, &out1, "")).unwrap();
    let cfg2: RunConfig = parse_config(&config_toml(&arts, &out2, "")).unwrap();

    let summary = run(&cfg1).unwrap();
    let first = snapshot(&out1);
    run(&cfg1).unwrap(); // identical config and seed → byte-identical output
    let snap1 = snapshot(&out1);
    assert_eq!(first, snap1, "repeated run changed some output file");

    // a config differing only in its output path produces the same tables;
    // manifest.json legitimately differs (it records the config text's hash)
    run(&cfg2).unwrap();
    let snap2 = snapshot(&out2);
    assert_eq!(snap1.len(), snap2.len());
    for (name, bytes) in &snap1 {
        if name != "manifest.json" {
            assert_eq!(Some(bytes), snap2.get(name), "file {name} differs between runs");
        }
    }
    assert!(snap1.contains_key("manifest.json"));
    assert!(snap1.contains_key("mcpr/all_women/direct_cells.csv"));
    assert!(snap1.contains_key("mcpr/all_women/selection.csv"));
    assert!(snap1.contains_key("mcpr/all_women/variance_shares.csv"));
    assert!(snap1.contains_key("mcpr/all_women/estimates.csv"));
    assert!(snap1.contains_key("mcpr/all_women/annual_change.csv"));
    assert!(snap1.contains_key("mcpr/all_women/aggregate.csv"));
    assert!(!snap1.contains_key("FAILED"));

    // manifest basics
    assert_eq!(summary.combos.len(), 1);
    assert_eq!(summary.combos[0].indicator, "mcpr");
    assert!(["1a", "2a"].contains(&summary.combos[0].winner.as_str()));
    assert_eq!(summary.projection_horizon, 2008);
    assert_eq!(summary.n_areas, 5);
    assert_eq!(summary.aggregation, "done");

    // estimate table invariants
    let rows = read_csv_rows(&out1.join("mcpr/all_women/estimates.csv"));
    assert_eq!(rows.len(), 5 * 8); // 5 areas × 2001..=2008
    let mut projection_rows = 0;
    for r in &rows {
        let year: i32 = r[3].parse().unwrap();
        let (median, lo, hi): (f64, f64, f64) =
            (r[4].parse().unwrap(), r[5].parse().unwrap(), r[6].parse().unwrap());
        let n: usize = r[7].parse().unwrap();
        assert!(lo <= median && median <= hi, "interval disorder in {r:?}");
        assert!((0.0..=1.0).contains(&lo) && hi <= 1.0);
        match year {
            2002 | 2004 | 2007 => assert!(n >= 1, "surveyed year {year} has n = 0"),
            2008 => {
                assert_eq!(n, 0);
                projection_rows += 1;
            }
            _ => assert_eq!(n, 0),
        }
    }
    assert_eq!(projection_rows, 5);

    // selection table covers both candidate models
    let sel = read_csv_rows(&out1.join("mcpr/all_women/selection.csv"));
    assert_eq!(sel.len(), 2);
    assert_eq!(sel[0][0], "1a");
    assert_eq!(sel[1][0], "2a");

    // annual change rows parse and respect interval order
    let changes = read_csv_rows(&out1.join("mcpr/all_women/annual_change.csv"));
    assert_eq!(changes.len(), 5);
    for r in &changes {
        assert_eq!(r[1], "2002"); // last data year 2007 minus 5
        assert_eq!(r[2], "2007");
        let (lo, hi): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo <= hi);
    }
}

#[test]
fn staged_run_produces_the_same_tables_as_the_chained_run() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 4, 12);

    let chained = tmp.path().join("chained");
    let staged = tmp.path().join("staged");
    let cfg_chained = parse_config(&config_toml(&arts, &chained, "")).unwrap();
    let cfg_staged = parse_config(&config_toml(&arts, &staged, "")).unwrap();

    run(&cfg_chained).unwrap();
    run_direct(&cfg_staged).unwrap();
    run_fit(&cfg_staged).unwrap();
    run_report(&cfg_staged).unwrap();

    let combo = "mcpr/all_women";
    for file in [
        "direct_cells.csv",
        "selection.csv",
        "variance_shares.csv",
        "winner_eta.csv",
        "winner.json",
        "estimates.csv",
        "annual_change.csv",
        "aggregate.csv",
    ] {
        let a = std::fs::read(chained.join(combo).join(file)).unwrap();
        let b = std::fs::read(staged.join(combo).join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between chained and staged runs");
    }
}

#[test]
fn failures_name_the_stage_and_leave_a_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 4, 3);
    let out = tmp.path().join("out");
    let mut cfg = parse_config(&config_toml(&arts, &out, "")).unwrap();
    cfg.microdata = tmp.path().join("no-such-file.csv");

    let err = run(&cfg).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "load_inputs"),
        other => panic!("expected stage error, got {other}"),
    }
    let marker = std::fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("stage: load_inputs"), "marker: {marker}");

    // a subsequent healthy run clears the marker
    let cfg = parse_config(&config_toml(&arts, &out, "")).unwrap();
    run(&cfg).unwrap();
    assert!(!out.join("FAILED").exists());
}

#[test]
fn single_model_config_reports_that_model_as_winner() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 4, 21);
    let out = tmp.path().join("out");
    let toml = config_toml(&arts, &out, "").replace("models = [\"1a\", \"2a\"]", "models = [\"1a\"]");
    let cfg = parse_config(&toml).unwrap();
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.combos[0].winner, "1a");
    let sel = read_csv_rows(&out.join("mcpr/all_women/selection.csv"));
    assert_eq!(sel.len(), 1);
    assert_eq!(sel[0][0], "1a");
}

#[test]
fn missing_population_file_skips_aggregation_only() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 4, 30);
    let out = tmp.path().join("out");
    let toml = config_toml(&arts, &out, "")
        .lines()
        .filter(|l| !l.starts_with("population"))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = parse_config(&toml).unwrap();
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.aggregation, "skipped: no population file");
    let combo = out.join("mcpr/all_women");
    assert!(combo.join("estimates.csv").exists());
    assert!(combo.join("annual_change.csv").exists());
    assert!(!combo.join("aggregate.csv").exists());
    assert!(summary.combos[0]
        .warnings
        .iter()
        .any(|w| w.contains("aggregation skipped")));
}

#[test]
fn full_mcmc_mode_runs_the_small_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 4, 51);
    let out = tmp.path().join("out");
    let toml = config_toml(&arts, &out, "")
        .replace("mode = \"empirical_bayes\"", "mode = \"full\"")
        .replace("models = [\"1a\", \"2a\"]", "models = [\"1a\"]")
        .replace("n_samples = 200", "n_samples = 60\nburnin = 150\nadapt = 100\nthin = 2");
    let cfg = parse_config(&toml).unwrap();
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.combos[0].winner, "1a");
    let winner: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("mcpr/all_women/winner.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(winner["mode"], "full");
    assert!(winner["acceptance_rate"].as_f64().unwrap() > 0.0);
    assert_eq!(winner["k"], 60);
}

/// On data where every indicator shares the all-women denominator, demand
/// satisfied composed from the modeled medians of its ingredients should
/// agree with the independently modeled indicator for nearly all cells.
#[test]
fn composed_demand_satisfied_tracks_the_modeled_indicator() {
    let tmp = tempfile::tempdir().unwrap();
    let arts = scenario(&tmp.path().join("data"), 6, 87);
    let out = tmp.path().join("out");
    let toml = config_toml(&arts, &out, "")
        .replace(
            "indicators = [\"mcpr\"]",
            "indicators = [\"mcpr\", \"cpr\", \"unmet_need\", \"demand_satisfied\"]",
        )
        .replace("models = [\"1a\", \"2a\"]", "models = [\"2a\"]");
    let cfg = parse_config(&toml).unwrap();
    run(&cfg).unwrap();

    type Table = BTreeMap<(String, i32), (f64, f64, f64)>;
    let load = |name: &str| -> Table {
        read_csv_rows(&out.join(name).join("all_women/estimates.csv"))
            .into_iter()
            .map(|r| {
                (
                    (r[2].clone(), r[3].parse().unwrap()),
                    (r[4].parse().unwrap(), r[5].parse().unwrap(), r[6].parse().unwrap()),
                )
            })
            .collect()
    };
    let (mcpr, cpr, unmet, ds) = (load("mcpr"), load("cpr"), load("unmet_need"), load("demand_satisfied"));

    let mut agree = 0usize;
    let mut total = 0usize;
    for (key, &(m_med, m_lo, m_hi)) in &mcpr {
        let (c_med, c_lo, c_hi) = cpr[key];
        let (u_med, u_lo, u_hi) = unmet[key];
        let (d_med, d_lo, d_hi) = ds[key];
        let composed = m_med / (c_med + u_med);
        let composed_lo = m_lo / (c_hi + u_hi);
        let composed_hi = (m_hi / (c_lo + u_lo)).min(1.0);
        total += 1;
        if (d_lo <= composed && composed <= d_hi)
            || (composed_lo <= d_med && d_med <= composed_hi)
        {
            agree += 1;
        }
    }
    assert_eq!(total, 6 * 8);
    assert!(
        agree as f64 >= 0.9 * total as f64,
        "composition agrees on only {agree}/{total} cells"
    );
}
