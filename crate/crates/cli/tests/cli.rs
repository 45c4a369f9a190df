use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kipa_core::calibration::{default_temperature_grid, generate_synthetic_curve, NoiseCurve};
use kipa_core::units::{db_to_linear, hz_to_angular};
use serde_json::Value;
use tempfile::TempDir;

fn kipa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kipa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KIPA_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Parses a sweep CSV into its header line and rows of (column -> value).
fn read_table(path: &Path) -> (String, Vec<Vec<(String, String)>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let cols: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| cols.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect();
    (header, rows)
}

fn col(row: &[(String, String)], name: &str) -> f64 {
    row.iter().find(|(c, _)| c == name).unwrap().1.parse().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn model_at_zero_pump_is_vacuum() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[pump]\ncooperativity = [0.0]\n");
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "model"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_table(&dir.path().join("out/model.csv"));
    assert_eq!(header, "# kipa sweep-model v1 sweep=cooperativity log_base=2");
    assert_eq!(rows.len(), 1);
    assert!((col(&rows[0], "dx1") - 0.5).abs() < 1e-12);
    assert!((col(&rows[0], "dx2") - 0.5).abs() < 1e-12);
    assert!((col(&rows[0], "epr") - 1.0).abs() < 1e-12);
    assert!(col(&rows[0], "e_n").abs() < 1e-12);
    let json: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/model.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], "sweep-model");
    assert_eq!(json["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn symmetric_lossless_sweep_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[device]\nkappa_e1_Hz = 1e6\nkappa_e2_Hz = 1e6\nkappa_i_Hz = 0.0\n\
         [pump]\ncooperativity_range = [0.1, 0.9]\npoints = 9\n[output]\nformats = [\"csv\"]\n",
    );
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "model"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!dir.path().join("out/model.json").exists());
    let (_, rows) = read_table(&dir.path().join("out/model.csv"));
    assert_eq!(rows.len(), 9);
    for row in &rows {
        let c = col(row, "cooperativity");
        let expected = (1.0 + c) / (2.0 * (1.0 + c.sqrt()).powi(2));
        assert!((col(row, "dx1") - expected).abs() < 1e-10, "C = {c}");
        assert!((col(row, "dx2") - expected).abs() < 1e-10, "C = {c}");
    }
}

fn sample_config(dir: &Path, samples: usize) -> PathBuf {
    write_config(
        dir,
        "s.toml",
        &format!(
            "[pump]\ncooperativity = [0.1, 0.3]\n[chain.port1]\nn_add_quanta = 0.0\n\
             [chain.port2]\nn_add_quanta = 0.0\n[sampler]\nsamples = {samples}\nseed = 11\nwrite_records = true\n"
        ),
    )
}

#[test]
fn sampling_is_reproducible_and_agrees_with_model() {
    let dir = TempDir::new().unwrap();
    let cfg = sample_config(dir.path(), 100_000);
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        let o = kipa(&["--config", cfg, "--out", out, "sample"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["sample.csv", "sample.json", "records/point_001_off.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let o = kipa(&["--config", cfg, "--out", "a", "model"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, sampled) = read_table(&dir.path().join("a/sample.csv"));
    assert!(header.starts_with("# kipa sweep-sample v1"));
    let (_, model) = read_table(&dir.path().join("a/model.csv"));
    for (s, m) in sampled.iter().zip(&model) {
        for name in ["dx1", "dx2", "epr", "e_n"] {
            let se = col(s, &format!("{name}_se"));
            assert!(se > 0.0);
            assert!((col(s, name) - col(m, name)).abs() < 3.0 * se, "{name}");
        }
    }
    let o = kipa(&["--config", cfg, "--out", "c", "--seed", "12", "sample"], dir.path());
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(dir.path().join("a/sample.csv")).unwrap(),
        fs::read(dir.path().join("c/sample.csv")).unwrap()
    );
}

#[test]
fn single_sample_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = sample_config(dir.path(), 1);
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "sample"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("at least 2"), "{}", stderr(&o));
}

#[test]
fn exit_statuses() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let unstable = write_config(p, "u.toml", "[pump]\ncooperativity = [0.5, 1.2]\n");
    let o = kipa(&["--config", unstable.to_str().unwrap(), "model"], p);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let bad_key = write_config(p, "k.toml", "[device]\nkappa_e1_Hz = 1e6\nkappa_x_Hz = 2\n");
    let o = kipa(&["--config", bad_key.to_str().unwrap(), "model"], p);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("kappa_x_Hz") && stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = kipa(&["--config", "nope.toml", "model"], p);
    assert_eq!(code(&o), 6);

    let o = kipa(&["model"], p);
    assert_eq!(code(&o), 2);

    let o = kipa(&["frobnicate"], p);
    assert_eq!(code(&o), 2);

    let no_seed = write_config(p, "n.toml", "[pump]\ncooperativity = [0.1]\n[sampler]\nsamples = 10\n");
    let o = kipa(&["--config", no_seed.to_str().unwrap(), "sample"], p);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn help_documents_flags_and_environment() {
    let o = kipa(&["--help"], Path::new("."));
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for s in ["--config", "--out", "--seed", "--format", "--points", "KIPA_OUT_DIR", "model", "sample", "calibrate", "reproduce", "Exit status"] {
        assert!(text.contains(s), "missing {s}");
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[pump]\ncooperativity = [0.2]\n");
    let o = Command::new(env!("CARGO_BIN_EXE_kipa"))
        .args(["--config", cfg.to_str().unwrap(), "--format", "csv", "model"])
        .current_dir(dir.path())
        .env("KIPA_OUT_DIR", dir.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("env-out/model.csv").exists());
    assert!(!dir.path().join("env-out/model.json").exists());
}

fn write_curve(path: &Path, curve: &NoiseCurve) {
    let mut f = fs::File::create(path).unwrap();
    curve.write_csv(&mut f).unwrap();
}

#[test]
fn calibrate_writes_fit_and_residuals() {
    let dir = TempDir::new().unwrap();
    let omega = hz_to_angular(7.147e9);
    let curve = generate_synthetic_curve(
        db_to_linear(99.22),
        7.51,
        omega,
        50.0,
        200e3,
        &default_temperature_grid(),
        0.0,
        1,
    )
    .unwrap();
    let path = dir.path().join("curve.csv");
    write_curve(&path, &curve);
    let o = kipa(&["calibrate", "--curve", path.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/calibration.json")).unwrap()).unwrap();
    assert!((fit["gain_db"].as_f64().unwrap() - 99.22).abs() < 1e-6);
    assert!((fit["n_add"].as_f64().unwrap() - 7.51).abs() < 1e-6);
    let res = fs::read_to_string(dir.path().join("out/calibration_residuals.csv")).unwrap();
    assert!(res.starts_with("# kipa calibration-residuals v1\n"));
    assert_eq!(res.lines().count(), 2 + curve.len());

    let short = NoiseCurve::new(curve.points()[..2].to_vec(), omega, 50.0, 200e3).unwrap();
    let path = dir.path().join("short.csv");
    write_curve(&path, &short);
    let o = kipa(&["calibrate", "--curve", path.to_str().unwrap(), "--out", "out2"], dir.path());
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("at least 3 temperatures"), "{}", stderr(&o));

    let o = kipa(&["calibrate", "--out", "out3"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn calibrate_from_config_section() {
    let dir = TempDir::new().unwrap();
    let omega = hz_to_angular(7.147e9);
    let curve = generate_synthetic_curve(db_to_linear(94.02), 14.8, omega, 50.0, 200e3, &default_temperature_grid(), 0.0, 2)
        .unwrap();
    write_curve(&dir.path().join("curve.csv"), &curve);
    let cfg = write_config(dir.path(), "c.toml", "[calibration]\ncurve = \"curve.csv\"\n");
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "calibrate"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/calibration.json")).unwrap()).unwrap();
    assert!((fit["n_add"].as_f64().unwrap() - 14.8).abs() < 1e-6);
}

#[test]
fn reproduce_fig2_from_bundled_data() {
    let dir = TempDir::new().unwrap();
    let cfg = data_dir().join("reproduce.toml");
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "reproduce", "fig2"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/fig2_summary.json")).unwrap()).unwrap();
    assert_eq!(s["heating"]["source"], "fit");
    assert_eq!(s["non_monotone"], true);
    let (header, rows) = read_table(&dir.path().join("out/fig2.csv"));
    assert_eq!(header, "# kipa figure v1 sweep=power_au log_base=2");
    let model: Vec<_> = rows.iter().filter(|r| r[0].1 == "model").collect();
    let sampled: Vec<_> = rows.iter().filter(|r| r[0].1 == "sampled").collect();
    assert_eq!(model.len(), 100);
    assert_eq!(sampled.len(), 10);
    let dx1: Vec<f64> = model.iter().map(|r| col(r, "dx1")).collect();
    let lo = dx1.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(lo < 0.5);
    assert!(dx1[dx1.len() - 1] > lo + 1e-6);
}

#[test]
fn zero_heating_entanglement_is_monotone() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "z.toml",
        "[pump]\npower_range_au = [0.01, 0.99]\npoints = 99\n\
         [heating]\nc_pump_per_au = 1.0\nc_heat_per_au = 0.0\n",
    );
    let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", "out", "reproduce", "fig3"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_table(&dir.path().join("out/fig3.csv"));
    let e_n: Vec<f64> = rows.iter().map(|r| col(r, "e_n")).collect();
    assert_eq!(e_n.len(), 99);
    assert!(e_n.windows(2).all(|w| w[1] > w[0]));
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/fig3_summary.json")).unwrap()).unwrap();
    assert_eq!(s["non_monotone"], false);
    assert_eq!(s["heating"]["source"], "config");
}

#[test]
fn model_output_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = data_dir().join("sweep.toml");
    for out in ["a", "b"] {
        let o = kipa(&["--config", cfg.to_str().unwrap(), "--out", out, "model"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["model.csv", "model.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}
