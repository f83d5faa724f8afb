use std::fs;
use std::path::Path;
use std::process::Command as Process;

use pidcp::experiments::ReferenceBackend;
use pidcp::model::{ParameterSet, PayoffKind};
use pidcp::steppers::{Method, TimeGrid};
use pidcp_cli::config::{GridChoice, RoiChoice};
use pidcp_cli::{parse_config, run_command, Command};
use proptest::prelude::*;

fn run_bin(config: &str, dir: &Path) -> (i32, String) {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_pidcp"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = parse_config("command = \"price\"\npreset = \"Set1\"\nmethod = \"MCS2-IT\"\nkappa = 2\n").unwrap();
    assert_eq!(cfg.command, Command::Price);
    assert_eq!(cfg.preset, Some(ParameterSet::Set1));
    assert_eq!(cfg.params, ParameterSet::Set1.params());
    assert_eq!(cfg.option, ParameterSet::Set1.option(PayoffKind::PutOnMin));
    assert_eq!(cfg.settings.method, Method::Mcs2It);
    assert_eq!(cfg.settings.kappa, 2);
    assert!((cfg.settings.theta - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(cfg.settings.tol, 1e-7);
    assert_eq!(cfg.settings.large, 1e7);
    assert_eq!(cfg.settings.time_grid, TimeGrid::Uniform);
    assert!((cfg.d - 100.0 / 3.0).abs() < 1e-12);
    assert_eq!((cfg.s_left, cfg.s_right, cfg.s_max), (80.0, 120.0, 1600.0));
    assert_eq!(cfg.grid_choice, GridChoice::Cells(50));
    assert_eq!(cfg.steps(), 100);
    assert_eq!(cfg.spots, vec![[100.0, 100.0]]);
    assert_eq!(cfg.roi, RoiChoice::Both);
    assert_eq!(cfg.reference, ReferenceBackend::CnfiP);

    let p = parse_config("command = \"price\"\npreset = \"set2\"\nmethod = \"cnfi-p\"\n").unwrap();
    assert_eq!(p.settings.time_grid, TimeGrid::Quadratic);
    assert_eq!(p.settings.theta, 0.5);
    let s = parse_config("command = \"price\"\npreset = \"set3\"\nmethod = \"SC2A-IT\"\n").unwrap();
    assert_eq!(s.settings.theta, 0.75);
}

#[test]
fn unknown_method_lists_valid_names() {
    let err = parse_config("command = \"price\"\npreset = \"set1\"\nmethod = \"RK4\"\n").unwrap_err();
    assert_eq!(err.key, "method");
    for name in ["CNFI-IT", "IETR-IT", "CNAB-IT", "MCS-IT", "MCS2-IT", "SC2A-IT", "CNFI-P", "MCS-P"] {
        assert!(err.message.contains(name), "{}", err.message);
    }
}

#[test]
fn validation_errors_name_the_key() {
    let cases = [
        ("command = \"price\"\npreset = \"set1\"\nkappa = 0\n", "kappa"),
        ("command = \"price\"\npreset = \"set1\"\nrho = 1.2\n", "rho"),
        ("command = \"price\"\npreset = \"set1\"\nsigma2 = -0.1\n", "sigma2"),
        ("command = \"price\"\npreset = \"set1\"\ncolour = 3\n", "colour"),
        ("preset = \"set1\"\n", "command"),
        ("command = \"plot\"\npreset = \"set1\"\n", "command"),
        ("command = \"price\"\npreset = \"set9\"\n", "preset"),
        ("command = \"price\"\nr = 0.05\n", "sigma1"),
        ("command = \"price\"\npreset = \"set1\"\ns_left = 70.0\n", "s_left"),
        ("command = \"price\"\npreset = \"set1\"\nnu = 5\ncells = 20\n", "nu"),
        ("command = \"price\"\npreset = \"set1\"\nsteps = 10\ndt = 0.1\n", "steps"),
        ("command = \"converge\"\npreset = \"set1\"\nroi = \"medium\"\n", "roi"),
        ("command = \"converge\"\npreset = \"set1\"\nreference = \"CNAB-IT\"\n", "reference"),
        ("command = \"converge\"\npreset = \"set1\"\nm_values = [10]\n", "m_values"),
        ("command = \"table\"\nsigma1 = 0.2\n", "r"),
        ("command = \"price\"\npreset = \"set1\"\nkappa = \"two\"\n", "kappa"),
    ];
    for (text, key) in cases {
        let err = parse_config(text).unwrap_err();
        assert!(err.key == key || err.message.contains(key), "{text:?}: {err}");
    }
}

fn method_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["CNFI-IT", "IETR-IT", "CNAB-IT", "MCS-IT", "MCS2-IT", "SC2A-IT", "CNFI-P", "MCS-P"])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialisation_round_trip_is_idempotent(
        preset in 1usize..=3,
        method in method_name(),
        kappa in 1usize..=4,
        cells in 5usize..200,
        r in 0.0f64..0.1,
        avg in any::<bool>(),
        steps in prop::option::of(1usize..500),
        spot in 1.0f64..200.0,
    ) {
        let text = format!(
            "command = \"converge\"\npreset = \"set{preset}\"\nmethod = \"{method}\"\nkappa = {kappa}\n\
             cells = {cells}\nr = {r}\npayoff = \"{}\"\n{}spots = [[{spot}, {spot}]]\nmethods = [\"CNAB-IT\"]\n",
            if avg { "put-on-average" } else { "put-on-min" },
            steps.map_or(String::new(), |s| format!("steps = {s}\n")),
        );
        let cfg = parse_config(&text).unwrap();
        let once = cfg.to_toml();
        let again = parse_config(&once).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_toml(), once);
    }
}

#[test]
fn price_writes_one_row_per_spot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "command = \"price\"\npreset = \"set1\"\ncells = 12\nsteps = 10\n\
               spots = [[90.0, 90.0], [100.0, 100.0], [110.0, 95.0]]\n";
    let (code, stderr) = run_bin(cfg, dir.path());
    assert_eq!(code, 0, "{stderr}");
    assert!(stderr.contains("jump matvecs"), "{stderr}");
    let rows = read_csv(&dir.path().join("out/price.csv"));
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row[0], "set1");
        assert_eq!(row[2], "MCS2-IT");
        assert_eq!(row[5], "10");
        let v: f64 = row[8].parse().unwrap();
        assert!(v > 0.0 && v < 100.0);
        // nine significant digits
        assert_eq!(row[8].split('e').next().unwrap().replace(['.', '-'], "").len(), 9);
    }
}

#[test]
fn identical_configs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "command = \"eer\"\npreset = \"set2\"\npayoff = \"put-on-average\"\ncells = 12\nsteps = 8\n";
    assert_eq!(run_bin(cfg, a.path()).0, 0);
    assert_eq!(run_bin(cfg, b.path()).0, 0);
    let fa = fs::read(a.path().join("out/eer.csv")).unwrap();
    let fb = fs::read(b.path().join("out/eer.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn eer_mask_covers_the_grid() {
    let cfg = parse_config("command = \"eer\"\npreset = \"set1\"\ncells = 12\nsteps = 10\n").unwrap();
    let out = run_command(&cfg, 1).unwrap();
    let rows = &out.artifacts[0].rows;
    let cells: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).max().unwrap();
    assert_eq!(rows.len(), (cells + 1) * (cells + 1));
    assert!(rows.iter().all(|r| r[6] == "0" || r[6] == "1"));
    // deep in the money exercises, at the money holds
    assert_eq!(rows[0][6], "1");
    let dist = |r: &Vec<String>| {
        let s1: f64 = r[4].parse().unwrap();
        let s2: f64 = r[5].parse().unwrap();
        (s1 - 100.0).abs() + (s2 - 100.0).abs()
    };
    let atm = rows.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).unwrap();
    assert_eq!(atm[6], "0");
}

#[test]
fn table_rounds_to_three_decimals() {
    let cfg = parse_config("command = \"table\"\npreset = \"set3\"\nwidth = 2.0\ndt = 0.1\n").unwrap();
    let out = run_command(&cfg, 1).unwrap();
    let rows = &out.artifacts[0].rows;
    assert_eq!(rows.len(), 9);
    for row in rows {
        assert_eq!(row[4].split('.').nth(1).unwrap().len(), 3);
    }
    assert_eq!(out.artifacts[0].name, "tables.csv");
}

#[test]
fn diagnose_reports_matvec_budget() {
    let cfg = parse_config("command = \"diagnose\"\npreset = \"set1\"\ncells = 12\nsteps = 10\nmethod = \"CNAB-IT\"\nkappa = 1\n").unwrap();
    let out = run_command(&cfg, 1).unwrap();
    let get = |k: &str| {
        out.artifacts[0]
            .rows
            .iter()
            .find(|r| r[0] == k)
            .map(|r| r[1].clone())
            .unwrap()
    };
    // two damped steps of two half-steps with one matvec each, then 8 steps of one
    assert_eq!(get("matvecs"), "12");
    assert_eq!(out.matvecs, 12);
    assert!(get("log_m1").parse::<usize>().unwrap().is_power_of_two());
}

#[test]
fn exit_codes_separate_validation_from_numerics() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = run_bin("command = \"price\"\npreset = \"set1\"\nmethod = \"foo\"\n", dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("method"), "{stderr}");
    let (code, stderr) = run_bin("command = \"price\"\npreset = \"set1\"\nwidth = 0.02\n", dir.path());
    assert_eq!(code, 2, "{stderr}");
    let out = Process::new(env!("CARGO_BIN_EXE_pidcp"))
        .args(["--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn converge_on_set3_fits_mcs2_order_near_1_93() {
    // ten points in the upper half of an m <= 100 sweep, hence the 0.3 band
    let text = "command = \"converge\"\npreset = \"set3\"\nmethod = \"MCS2-IT\"\nkappa = 2\n\
                roi = \"small\"\nreference = \"MCS2-IT\"\nm_values = [55, 60, 65, 70, 75, 80, 85, 90, 95, 100]\n";
    let cfg = parse_config(text).unwrap();
    let out = run_command(&cfg, 1).unwrap();
    assert_eq!(out.artifacts[0].rows.len(), 10);
    let orders = &out.artifacts[1].rows;
    assert_eq!(orders.len(), 1);
    let order: f64 = orders[0][5].parse().unwrap();
    assert!((order - 1.93).abs() <= 0.3, "order {order}");
}
