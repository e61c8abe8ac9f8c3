mod common;

use std::fs;
use std::process::Command;

use cleaneval::cli::{
    cmd_ablate, cmd_calibrate, cmd_evaluate, cmd_export_ft, AblationAxis, CliError, RunConfig,
};
use cleaneval::corpus::{load_dataset, preset};
use cleaneval::evalharness::{read_report_csv, Setting};
use cleaneval::pipeline::CalibrationMeta;

fn read_meta(path: &std::path::Path) -> Vec<CalibrationMeta> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn calibrate_preserves_size_and_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&common::write_fixture(dir.path(), 10, "")).unwrap();
    let out = cmd_calibrate(&cfg).unwrap();
    let spec = preset("sst2").unwrap();
    let input = load_dataset(&cfg.dataset, &spec).unwrap();
    let output = load_dataset(&out.calibrated, &spec).unwrap();
    assert_eq!(output.len(), 10);
    let ids = |d: &cleaneval::Dataset| d.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&input), ids(&output));
    assert_eq!(read_meta(&out.meta).len(), 10);
    let sim = fs::read_to_string(&out.similarity).unwrap();
    assert!(sim.contains("| sst2 | Clean-Eval |"));
    assert!(sim.contains("lexical-f1 (BLEURT fallback)"));
}

#[test]
fn degenerate_rewrite_config_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&common::write_fixture(
        dir.path(),
        6,
        "[rewrite]\nlevels = []\npivots = []\n",
    ))
    .unwrap();
    let out = cmd_calibrate(&cfg).unwrap();
    assert_eq!(
        fs::read(&out.calibrated).unwrap(),
        fs::read(&cfg.dataset).unwrap()
    );
}

#[test]
fn detector_keeps_at_least_as_many_originals() {
    let dir = tempfile::tempdir().unwrap();
    // a strict judge rejects most rewrites
    let extra = "[provider]\nmock_equivalence_threshold = 0.8\ncache_dir = \"cache\"\n";
    let mut cfg = RunConfig::load(&common::write_fixture(dir.path(), 30, extra)).unwrap();
    let on = read_meta(&cmd_calibrate(&cfg).unwrap().meta);
    cfg.detector = false;
    cfg.output_dir = dir.path().join("off");
    cfg.calibrated = None;
    let off = read_meta(&cmd_calibrate(&cfg).unwrap().meta);
    let originals = |m: &[CalibrationMeta]| m.iter().filter(|m| m.selected_original).count();
    assert!(
        originals(&on) >= originals(&off),
        "{} < {}",
        originals(&on),
        originals(&off)
    );
    assert!(on.iter().any(|m| m.fell_back));
    assert!(off.iter().all(|m| m.kept_count == m.candidate_count));
}

#[test]
fn evaluate_writes_report_with_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&common::write_fixture(dir.path(), 20, "seed = 3\n")).unwrap();
    assert!(matches!(
        cmd_evaluate(&cfg),
        Err(CliError::MissingCalibrated(_))
    ));
    cmd_calibrate(&cfg).unwrap();
    let out = cmd_evaluate(&cfg).unwrap();
    let perf = |s: Setting| {
        out.summaries
            .iter()
            .find(|p| p.setting == s)
            .unwrap()
            .metric
            .headline()
    };
    assert_eq!(perf(Setting::Contamination), 100.0);
    let expected = (perf(Setting::Contamination) - perf(Setting::Calibration)).abs()
        - (perf(Setting::Calibration) - perf(Setting::Clean)).abs();
    assert_eq!(out.pg.pg, expected);

    let rows = read_report_csv(&out.report.csv).unwrap();
    let pg_row = rows
        .iter()
        .find(|r| r.section == "pg" && r.name == "pg")
        .unwrap();
    assert_eq!(pg_row.value, out.pg.pg);
    let md = fs::read_to_string(&out.report.markdown).unwrap();
    assert!(md.contains(&format!("| PG | {:.2} |", out.pg.pg)));
    let cases = fs::read_to_string(cfg.output_dir.join("cases.jsonl")).unwrap();
    assert_eq!(cases.lines().count(), 60);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&common::write_fixture(dir.path(), 15, "seed = 11\n")).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        cfg.output_dir = dir.path().join(run);
        cfg.calibrated = None;
        cmd_calibrate(&cfg).unwrap();
        cmd_evaluate(&cfg).unwrap();
        let files: Vec<Vec<u8>> = [
            "calibrated.jsonl",
            "calibration_meta.jsonl",
            "report.csv",
            "report.md",
            "cases.jsonl",
        ]
        .iter()
        .map(|f| fs::read(cfg.output_dir.join(f)).unwrap())
        .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn ablation_tables_have_expected_row_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&common::write_fixture(dir.path(), 8, "")).unwrap();
    let tier = cmd_ablate(&cfg, AblationAxis::Tier).unwrap();
    assert_eq!(
        tier.labels(),
        ["worst", "middle", "best", "worst", "middle", "best"]
    );
    let blocks: Vec<_> = tier.rows.iter().map(|r| r.block.clone().unwrap()).collect();
    assert_eq!(blocks, ["BT", "BT", "BT", "Para", "Para", "Para"]);
    assert_eq!(
        cmd_ablate(&cfg, AblationAxis::Order).unwrap().labels(),
        ["Para + BT", "BT + Para"]
    );
    let det = cmd_ablate(&cfg, AblationAxis::Detector).unwrap();
    assert_eq!(det.labels(), ["BT", "Para", "Clean-Eval"]);
    let md = fs::read_to_string(cfg.output_dir.join("ablation_detector.md")).unwrap();
    assert!(md.contains("without equivalence detector"));
    assert!(cfg
        .output_dir
        .join("ablate/tier/bt-worst/calibrated.jsonl")
        .exists());
}

#[test]
fn export_ft_counts_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&common::write_fixture(dir.path(), 7, "")).unwrap();
    assert_eq!(cmd_export_ft(&cfg).unwrap().len(), 1);
    cmd_calibrate(&cfg).unwrap();
    let written = cmd_export_ft(&cfg).unwrap();
    assert_eq!(written.iter().map(|(_, n)| *n).collect::<Vec<_>>(), [7, 7]);
    for (path, _) in written {
        assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 7);
    }
}

#[test]
fn binary_runs_all_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_fixture(dir.path(), 5, "");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_cleaneval"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run(&["calibrate", "--policy", "highest", "--seed", "4"]).contains("5 samples"));
    assert!(run(&["evaluate", "--seed", "4"]).contains("PG "));
    assert!(run(&["ablate", "--axis", "order", "--order", "bt-para"]).contains("| BT + Para |"));
    assert!(run(&["export-ft"]).contains("5 records"));

    let bad = Command::new(env!("CARGO_BIN_EXE_cleaneval"))
        .args(["evaluate", "--provider", "remote", "--config"])
        .arg(&cfg)
        .env_remove("CLEANEVAL_PROVIDER_URL")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error:"));
}
