use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = "\
marker_count = 1500
m = 100
n = 9
grid_spacing_mm = 8
depth_levels_mm = 0.5,1.5
hidden_sizes = 16,8
batch_size = 16
max_epochs = 30
n_es = 10
dropout_rate = 0
calib_max_epochs = 20
calib_n_es = 5
calib_batch_size = 8
";

fn tactsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactsim"))
        .args(args)
        .env_remove("TACTSIM_SEED")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = tactsim(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn missing_input_exits_3() {
    let o = tactsim(&["train", "--data", "/nonexistent/d.tsim", "--out", "/tmp/never.tsm"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[missing-file]:"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "m = 401\n").unwrap();
    let out = dir.path().join("d.tsim");
    let o = tactsim(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn generate_train_eval_calibrate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.txt");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let (data, model) = (d.join("d.tsim"), d.join("m.tsm"));

    let o = tactsim(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("d.tsim.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "generate");
    assert!(manifest["config"].as_str().unwrap().contains("m = 100"));
    assert!(d.join("d.tsim.jsonl").exists());

    let o = tactsim(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["m.tsm", "m.tsm.loss.csv", "m.tsm.loss.svg", "m.tsm.manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let report = d.join("r.csv");
    let per = d.join("per.csv");
    let o = tactsim(&[
        "eval", "--config", s(&cfg), "--model", s(&model), "--data", s(&data), "--part", "test", "--out", s(&report),
        "--per-sample", s(&per),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("samples,armse_n,d_loc_mm,rmse_mc_n,srmse_n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("10,"));
    assert_eq!(std::fs::read_to_string(&per).unwrap().lines().count(), 11);
    assert!(d.join("per.csv.svg").exists());

    let pert = d.join("p.tsim");
    let o = tactsim(&["generate", "--config", s(&cfg), "--perturbed", "99", "--out", s(&pert)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = d.join("sweep.csv");
    let o = tactsim(&[
        "calibrate", "--config", s(&cfg), "--model", s(&model), "--data", s(&pert), "--sweep", "5,10", "--out",
        s(&sweep),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&sweep).unwrap().lines().count(), 3);
    assert!(d.join("sweep.csv.svg").exists());

    // A dataset with other widths is rejected against the explicit config.
    std::fs::write(&cfg, SMALL_CONFIG.replace("m = 100", "m = 400")).unwrap();
    let o = tactsim(&["eval", "--config", s(&cfg), "--model", s(&model), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[shape]:"));
}

#[test]
fn flow_check_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "marker_count = 3000\nimage_size_px = 160\nfocal_px = 160\n").unwrap();
    let out = dir.path().join("flow.csv");
    let o = tactsim(&["flow-check", "--config", s(&cfg), "--cases", "3", "--max-shift-px", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let mean: f64 = stdout.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(mean < 0.25, "{stdout}");
}
