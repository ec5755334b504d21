//! End-to-end runs of the `geoprofile` binary.

mod common;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geoprofile::dataset::write_records;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geoprofile"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Planar-layout dataset with two offenders of each kind.
fn dataset(dir: &Path) -> PathBuf {
    let path = dir.join("crimes.csv");
    write_records(&common::population(8, 2), File::create(&path).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn profile_writes_consistent_surface_heatmap_and_sidecar() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("out");
    ok(&[
        "profile",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--offender",
        "ring00",
        "--method",
        "1b",
        "--export-priors",
    ]);

    let pgm = fs::read(out.join("profile_ring00_1b.pgm")).unwrap();
    let header = b"P5\n100 70\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len() - header.len(), 100 * 70);
    assert_eq!(pgm[header.len()..].iter().max(), Some(&255));

    let mut rdr = csv::Reader::from_path(out.join("profile_ring00_1b.csv")).unwrap();
    let cells: Vec<(usize, usize, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect();
    assert_eq!(cells.len(), 7000);
    let total: f64 = cells.iter().map(|c| c.2).sum();
    assert!((total - 1.0).abs() <= 1e-9, "{total}");

    // first maximum in row-major order, as the ranking breaks ties
    let best = cells.iter().fold(cells[0], |b, c| if c.2 > b.2 { *c } else { b });
    let json: Value = serde_json::from_reader(File::open(out.join("profile_ring00_1b.json")).unwrap()).unwrap();
    let top = &json["top_cells"][0];
    assert_eq!(
        (
            top["row"].as_u64().unwrap() as usize,
            top["col"].as_u64().unwrap() as usize
        ),
        (best.0, best.1)
    );
    assert_eq!(top["rank"], 1);
    assert_eq!(json["offender_id"], "ring00");
    assert_eq!(json["method"], "1b");
    assert_eq!(json["top_cells"].as_array().unwrap().len(), 20);
    assert!(out.join("profile_ring00_1b_prior_distance_m2.csv").exists());
}

#[test]
fn evaluate_is_reproducible_and_tabulates_every_threshold() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        ok(&[
            "evaluate",
            "--dataset",
            s(&data),
            "--out",
            s(&out),
            "--method",
            "1a,1b,ROSSMO",
            "--scope",
            "residents",
        ]);
        outputs.push(out);
    }
    for file in ["results.csv", "curves.csv", "failures.csv"] {
        assert_eq!(
            fs::read(outputs[0].join(file)).unwrap(),
            fs::read(outputs[1].join(file)).unwrap(),
            "{file}"
        );
    }
    let curves = fs::read_to_string(outputs[0].join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 12);

    let out = tmp.path().join("all");
    ok(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--method",
        "1a,2ai,2bii,ROSSMO,1b",
        "--scope",
        "all",
    ]);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 5 * 10);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 6 * 5);
}

#[test]
fn classify_and_emit_grid_cover_every_row() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let labels = String::from_utf8(ok(&["classify", "--dataset", s(&data)]).stdout).unwrap();
    let mut lines = labels.lines();
    assert_eq!(lines.next(), Some("offender_id,label,n_clusters"));
    assert_eq!(lines.count(), 6);

    let grid = tmp.path().join("grid.csv");
    ok(&["emit-grid", "--grid", "10x7", "--out", s(&grid)]);
    let text = fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().count(), 1 + 70);
    assert!(text.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn malformed_input_fails_with_nonzero_status() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("compact00,x99,UCR,not-a-number,4360.0,,\n");
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, text).unwrap();
    let out = run(&["classify", "--dataset", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = run(&["profile", "--dataset", s(&data), "--offender", "nobody"]);
    assert!(!out.status.success());
    let out = run(&["evaluate", "--dataset", s(&data), "--method", "9z"]);
    assert!(!out.status.success());
}

#[test]
fn converting_an_empty_file_writes_only_the_header() {
    let tmp = TempDir::new().unwrap();
    let header = "offender_id,crime_id,ucr_code,crime_lat,crime_lon,anchor_lat,anchor_lon";
    let expected = format!("{header},zone,crime_easting_km,crime_northing_km,anchor_easting_km,anchor_northing_km\n");
    for (name, content) in [("empty.csv", String::new()), ("header.csv", format!("{header}\n"))] {
        let input = tmp.path().join(name);
        fs::write(&input, content).unwrap();
        let out = ok(&["convert", "--dataset", s(&input)]);
        assert_eq!(String::from_utf8(out.stdout).unwrap(), expected, "{name}");
    }

    let input = tmp.path().join("one.csv");
    fs::write(&input, format!("{header}\nA,1,UCR,39.29,-76.61,39.30,-76.60\n")).unwrap();
    let text = String::from_utf8(ok(&["convert", "--dataset", s(&input)]).stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[7], "18");
    let easting: f64 = row[8].parse().unwrap();
    assert!((easting - 361.4).abs() < 1.0, "{easting}");
}
