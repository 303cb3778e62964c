use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sctc::simgen::generate;
use sctc::ScenarioConfig;
use sctc_cli::commands::{cmd_estimate, cmd_fit, cmd_simulate, EFFECTS_CSV, FIT_REPORT, MODEL};
use sctc_cli::config::CONFIG_ECHO;
use sctc_cli::emit::write_dataset;
use sctc_cli::{ingest, CliError, RunConfig};

fn sctc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sctc"))
}

fn small_config(dir: Option<&Path>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario = ScenarioConfig { rows: 10, cols: 10, ..Default::default() };
    cfg.data.dir = dir.map(Path::to_path_buf);
    cfg
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_fit_estimate_produces_the_full_effect_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_simulate(&small_config(None), &data).unwrap();
    let cfg = small_config(Some(&data));

    let fit = tmp.path().join("fit");
    cmd_fit(&cfg, &fit).unwrap();
    for f in [MODEL, FIT_REPORT, CONFIG_ECHO] {
        assert!(fit.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join(FIT_REPORT)).unwrap()).unwrap();
    assert!(report["step1"]["report"]["objective_trace"].as_array().unwrap().len() > 1);

    let est = tmp.path().join("est");
    let out = cmd_estimate(&cfg, &est).unwrap();
    assert_eq!(out.effects.len(), 30);
    assert_eq!(csv_rows(&est.join(EFFECTS_CSV)), 30);
    let header = fs::read_to_string(est.join(EFFECTS_CSV)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "exposure_pattern,outcome,theta_oi,theta_aipw,variance,ci_low,ci_high,ratio,ratio_ci_low,ratio_ci_high,significant_at_05"
    );
    for r in &out.effects {
        assert!(r.ci_low <= r.theta_aipw && r.theta_aipw <= r.ci_high);
    }
}

#[test]
fn estimate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_simulate(&small_config(None), &data).unwrap();
    let cfg = small_config(Some(&data));
    cmd_estimate(&cfg, &tmp.path().join("a")).unwrap();
    cmd_estimate(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(
        fs::read(tmp.path().join("a").join(EFFECTS_CSV)).unwrap(),
        fs::read(tmp.path().join("b").join(EFFECTS_CSV)).unwrap()
    );
}

fn shuffle_rows(src: &Path, dst: &Path, rng: &mut ChaCha8Rng) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.shuffle(rng);
    fs::write(dst, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
}

#[test]
fn shuffled_row_order_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_simulate(&small_config(None), &data).unwrap();
    let shuffled = tmp.path().join("shuffled");
    fs::create_dir_all(&shuffled).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in ["units.csv", "covariates.csv", "outcomes.csv", "edges.csv"] {
        shuffle_rows(&data.join(f), &shuffled.join(f), &mut rng);
    }
    cmd_estimate(&small_config(Some(&data)), &tmp.path().join("a")).unwrap();
    cmd_estimate(&small_config(Some(&shuffled)), &tmp.path().join("b")).unwrap();
    assert_eq!(
        fs::read(tmp.path().join("a").join(EFFECTS_CSV)).unwrap(),
        fs::read(tmp.path().join("b").join(EFFECTS_CSV)).unwrap()
    );
}

#[test]
fn emit_then_ingest_round_trips_a_synthetic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&ScenarioConfig { rows: 6, cols: 7, n_outcomes: 4, ..Default::default() }).unwrap();
    write_dataset(tmp.path(), &data).unwrap();
    let back = ingest(tmp.path(), &Default::default()).unwrap();
    let d = data.dims();
    assert_eq!(back.dims(), d);
    assert_eq!(back.design.levels(), data.design.levels());
    assert_eq!(back.z_raw, data.z);
    assert_eq!(back.centroids, data.centroids);
    assert_eq!(back.graph.edges(), data.graph.edges());
    for i in 0..d.units {
        let l = data.design.level(i) - 1;
        for o in 0..d.outcomes {
            assert_eq!(back.raw_outcomes[(i, o)], data.y_obs.get(i, l, o));
        }
    }
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn toy(dir: &Path) {
    write(dir, "units.csv", "unit_id,x,y,a_1,a_2\n1,0,0,0,0\n2,1,0,1,0\n3,0,1,1,1\n");
    write(dir, "covariates.csv", "unit_id,income\n1,1.5\n2,2.5\n3,0.5\n");
    write(dir, "outcomes.csv", "unit_id,asthma,copd\n1,3.1,2.0\n2,4.2,1.0\n3,5.0,0.5\n");
}

#[test]
fn toy_directory_has_factorial_dims() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let mut cfg = sctc_cli::config::DataConfig::default();
    cfg.knn = 1;
    let d = ingest(tmp.path(), &cfg).unwrap();
    assert_eq!((d.dims().units, d.dims().levels, d.dims().outcomes), (3, 4, 2));
    assert_eq!(d.design.levels(), &[1, 2, 4]);
    assert_eq!(d.outcome_names, ["asthma", "copd"]);
}

#[test]
fn join_drops_and_lists_incomplete_units() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    write(tmp.path(), "outcomes.csv", "unit_id,asthma\n1,3.1\n3,5.0\n9,1.0\n");
    let mut cfg = sctc_cli::config::DataConfig::default();
    cfg.knn = 1;
    let d = ingest(tmp.path(), &cfg).unwrap();
    assert_eq!(d.unit_ids, ["1", "3"]);
    assert_eq!(d.dropped, ["2", "9"]);
}

#[test]
fn malformed_inputs_are_rejected_with_locations() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    write(tmp.path(), "units.csv", "unit_id,x,y,a_1,a_2\n1,0,0,0,0\n2,1,0,2,0\n3,0,1,1,1\n");
    let e = ingest(tmp.path(), &Default::default()).unwrap_err().to_string();
    assert!(e.contains("line 3") && e.contains("a_1"), "{e}");

    toy(tmp.path());
    write(tmp.path(), "covariates.csv", "unit_id,income\n1,1.5\n2,x\n3,0.5\n");
    let e = ingest(tmp.path(), &Default::default()).unwrap_err().to_string();
    assert!(e.contains("covariates.csv line 3"), "{e}");

    toy(tmp.path());
    write(tmp.path(), "outcomes.csv", "unit,asthma\n1,3.1\n");
    assert!(ingest(tmp.path(), &Default::default()).is_err());
}

#[test]
fn application_shaped_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (n, o) = (5495usize, 13usize);
    let mut units = String::from("unit_id,x,y,a_1,a_2\n");
    let mut covs = String::from("unit_id,z_1,z_2\n");
    let mut outs = String::from("unit_id");
    for j in 0..o {
        outs.push_str(&format!(",y_{j}"));
    }
    outs.push('\n');
    for i in 0..n {
        let (x, y) = ((i % 73) as f64 + 0.001 * i as f64, (i / 73) as f64);
        units.push_str(&format!("{i},{x},{y},{},{}\n", i % 2, (i / 2) % 2));
        covs.push_str(&format!("{i},{},{}\n", (i % 7) as f64, (i % 11) as f64));
        outs.push_str(&i.to_string());
        for j in 0..o {
            outs.push_str(&format!(",{}", 1.0 + ((i * 31 + j * 17) % 97) as f64));
        }
        outs.push('\n');
    }
    write(tmp.path(), "units.csv", &units);
    write(tmp.path(), "covariates.csv", &covs);
    write(tmp.path(), "outcomes.csv", &outs);
    let mut cfg = sctc_cli::config::DataConfig::default();
    cfg.transform = sctc::Transform::Log;
    let d = ingest(tmp.path(), &cfg).unwrap();
    let dims = d.dims();
    assert_eq!((dims.units, dims.levels, dims.outcomes), (5495, 4, 13));
}

#[test]
fn binary_exit_codes_and_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, small_config(None).to_toml().unwrap()).unwrap();
    let data = tmp.path().join("data");
    let st = sctc().args(["simulate", "--config"]).arg(&cfg_path).arg("--out").arg(&data).status().unwrap();
    assert!(st.success());
    let echo = RunConfig::load(&data.join(CONFIG_ECHO)).unwrap();
    assert_eq!(echo, small_config(None));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[pipeline]\nnot_a_key = 1\n").unwrap();
    let out = sctc().args(["estimate", "--config"]).arg(&bad).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));

    let missing: PathBuf = tmp.path().join("nope");
    let st = sctc().args(["estimate", "--data"]).arg(&missing).arg("--out").arg(tmp.path().join("y")).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let st = sctc().args(["frobnicate"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let out = sctc().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text, Path::new("stdout")).unwrap(), RunConfig::default());
}

#[test]
fn convergence_failures_map_to_exit_code_two() {
    let e = CliError::from(sctc::Error::NonFinite { iteration: 3, context: "step".into() });
    assert_eq!(e.exit_code(), 2);
    assert_eq!(CliError::Data("x".into()).exit_code(), 1);
    assert_eq!(CliError::from(sctc::Error::EmptyMask).exit_code(), 1);
}
