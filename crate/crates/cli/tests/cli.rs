use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nebpeak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nebpeak")).args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

fn write_spec(dir: &Path) -> String {
    let peaks: Vec<serde_json::Value> = (0..5)
        .map(|i| {
            serde_json::json!({
                "row": 2 + 3 * i,
                "col": 20 + 15 * i,
                "shape": { "kind": "gaussian", "mean": 0.0, "sd": 2.5 },
                "height": 400.0,
                "spectrum_id": i,
            })
        })
        .collect();
    let spec = serde_json::json!({
        "n1": 16, "n2": 100, "rt1_step": 4.0, "rt2_step": 0.01,
        "neb": { "mu": 100.0, "sigma2": 100.0, "phi": 500.0, "r": 0.0 },
        "peaks": peaks,
        "seed": 17,
    });
    let path = dir.join("spec.json");
    fs::write(&path, spec.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulate(dir: &Path) -> (String, String, String) {
    let spec = write_spec(dir);
    let data = dir.join("data");
    let out = nebpeak(&["simulate", &spec, "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = |f: &str| data.join(f).to_str().unwrap().to_string();
    (p("scans.csv"), p("spectra.csv"), p("truth.csv"))
}

fn geometry<'a>(scans: &'a str, spectra: &'a str) -> Vec<&'a str> {
    vec!["--scans", scans, "--spectra", spectra, "--n1", "16", "--n2", "100", "--rt1-step", "4", "--rt2-step", "0.01"]
}

#[test]
fn missing_scan_file_reports_the_ingest_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = nebpeak(&[
        "run",
        "--scans",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--n1",
        "2",
        "--n2",
        "2",
        "--rt1-step",
        "1",
        "--rt2-step",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["stage"], "ingest");
}

#[test]
fn bad_flag_value_reports_the_config_stage() {
    let out = nebpeak(&["run", "--family", "lorentzian"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["stage"], "config");
}

#[test]
fn simulate_run_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, spectra, truth) = simulate(dir.path());
    let out_a = dir.path().join("a");
    let mut args = vec!["run"];
    args.extend(geometry(&scans, &spectra));
    args.extend(["--nu", "10", "--family", "gmm", "--seed", "3", "--out", out_a.to_str().unwrap()]);
    let out = nebpeak(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.is_object());

    for f in ["neb.json", "diagnostics.csv", "regions.json", "regions.csv", "fits.json", "peaks_unmerged.csv", "peaks.csv", "manifest.json"] {
        assert!(out_a.join(f).exists(), "{f} missing");
    }
    let unmerged = fs::read_to_string(out_a.join("peaks_unmerged.csv")).unwrap();
    let rows = unmerged.lines().count() - 1;
    assert!(rows >= 5, "{unmerged}");
    assert!(fs::read_dir(out_a.join("plots")).unwrap().count() > 0);

    let score = nebpeak(&[
        "score",
        "--peaks",
        out_a.join("peaks.csv").to_str().unwrap(),
        "--truth",
        &truth,
        "--n1",
        "16",
        "--n2",
        "100",
        "--rt1-step",
        "4",
        "--rt2-step",
        "0.01",
    ]);
    assert!(score.status.success(), "{}", String::from_utf8_lossy(&score.stderr));
    let report: serde_json::Value = serde_json::from_slice(&score.stdout).unwrap();
    assert_eq!(report["standard"], 5, "{report}");

    // same inputs and seed, byte-identical table
    let out_b = dir.path().join("b");
    let mut args = vec!["run"];
    args.extend(geometry(&scans, &spectra));
    args.extend(["--nu", "10", "--family", "gmm", "--seed", "3", "--out", out_b.to_str().unwrap()]);
    assert!(nebpeak(&args).status.success());
    assert_eq!(fs::read(out_a.join("peaks.csv")).unwrap(), fs::read(out_b.join("peaks.csv")).unwrap());
}

#[test]
fn stages_chain_through_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, spectra, _) = simulate(dir.path());
    let out_dir = dir.path().join("staged");
    let run = |stage: &str, extra: &[&str]| {
        let mut args = vec![stage];
        args.extend(geometry(&scans, &spectra));
        args.extend(["--out", out_dir.to_str().unwrap()]);
        args.extend(extra);
        let out = nebpeak(&args);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    run("fit-neb", &[]);
    let seg = run("segment", &["--nu", "10"]);
    assert!(seg["regions"].as_u64().unwrap() >= 5);
    let pick = run("pick", &["--family", "optimize"]);
    let merged = run("merge", &[]);
    assert!(merged["peaks"].as_u64().unwrap() <= pick["peaks"].as_u64().unwrap());
    let opt = run("optimize", &["--nu", "optimize", "--family", "gmm", "--objective", "mse"]);
    assert!([1.0, 10.0, 100.0].contains(&opt["nu_tilde"].as_f64().unwrap()));
    assert!(out_dir.join("optimizer.json").exists());
}

#[test]
fn pick_without_regions_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, spectra, _) = simulate(dir.path());
    let mut args = vec!["pick"];
    args.extend(geometry(&scans, &spectra));
    let empty = dir.path().join("empty");
    args.extend(["--out", empty.to_str().unwrap()]);
    let out = nebpeak(&args);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["stage"], "segment");
}
