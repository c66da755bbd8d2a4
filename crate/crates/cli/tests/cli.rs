use std::path::Path;
use std::process::{Command, Output};

use echoaware::experiment::{BeamformSettings, DescriptorSettings, ExperimentConfig, MonteCarloCounts};
use echoaware::io::{read_json, read_wav, write_json, write_wav, CsvTable, Scene};

fn echoaware(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echoaware")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        snrs_db: vec![10.0],
        counts: MonteCarloCounts { toa_scenes: 2, calibration_seeds: 2, beamforming_scenes: 1, rooge_seeds: 2 },
        beamforming: BeamformSettings { rir_seconds: 0.25, signal_seconds: 0.5, ..BeamformSettings::default() },
        descriptors: DescriptorSettings { rir_seconds: 0.3, sources: 1 },
        ..ExperimentConfig::default()
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    write_json(&cfg, &small_config()).unwrap();
    let mut runs = Vec::new();
    for (run, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let dir = tmp.path().join(run);
        let out = echoaware(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out-dir", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(csv_files(&dir));
    }
    assert_eq!(runs[0].len(), 6);
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
    for (name, bytes) in &runs[0] {
        let header = String::from_utf8_lossy(bytes).lines().next().unwrap_or_default().to_string();
        assert!(!header.is_empty(), "{name} has no header");
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(code(&echoaware(&["simulate", "--surface-code", "01x111", "--out-dir", dir])), 2);
    let out = echoaware(&["beamform", "--mix", "m.wav", "--scene", "s.json", "--design", "mvdr-nothing", "--out-dir", dir]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mvdr-nothing"));
    assert_eq!(code(&echoaware(&["calibrate", "--annotation", "/nonexistent/a.json", "--scene", "/nonexistent/s.json", "--out-dir", dir])), 2);
    assert_eq!(code(&echoaware(&["frobnicate"])), 2);
    assert_eq!(code(&echoaware(&["--help"])), 0);
}

#[test]
fn coplanar_anchors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut layout = echoaware::scenes::reference_layout();
    layout.arrays.truncate(5);
    for a in &mut layout.arrays {
        a.barycenter.z = 1.2;
    }
    let scene = Scene::new("011111", echoaware::geometry::RoomSpec::panels("011111").unwrap(), layout).unwrap();
    let scene_path = tmp.path().join("flat.json");
    write_json(&scene_path, &scene).unwrap();
    let bundle = tmp.path().join("bundle");
    let out = echoaware(&["simulate", "--scene", scene_path.to_str().unwrap(), "--rir-seconds", "0.05", "--out-dir", bundle.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let ann = bundle.join("annotation.json");
    let out = echoaware(&["rooge", "--annotation", ann.to_str().unwrap(), "--scene", scene_path.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bundle_flows_through_annotate_calibrate_and_rooge() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let out = echoaware(&["simulate", "--rir-seconds", "0.06", "--storage", "wav", "--out-dir", &p("wav")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("wav/rirs/011111/mic_29_src_03.wav").exists());
    let out = echoaware(&["simulate", "--rir-seconds", "0.06", "--surface-code", "011111,000000", "--out-dir", &p("tensor")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = echoaware(&["annotate", "run", "--rirs", &p("wav"), "--scene", &p("wav/scene.json"), "--tol-ms", "0.5", "-o", &p("ann/annotation.json")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sky = CsvTable::read(tmp.path().join("ann/skyline.csv")).unwrap();
    assert_eq!(sky.headers.len(), 1 + 120);
    assert!(tmp.path().join("ann/skyline.png").exists());
    let ann = p("ann/annotation.json");
    let keys: serde_json::Value = read_json(&ann).unwrap();
    assert!(keys.get("mic_0/src_0").is_some());

    let out = echoaware(&[
        "calibrate", "--annotation", &ann, "--scene", &p("wav/scene.json"), "--mode", "dcmds", "-o", &p("cal/refined.json"), "--report",
        &p("cal/report.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let refined: Scene = read_json(tmp.path().join("cal/refined.json")).unwrap();
    assert_eq!((refined.layout.n_mics(), refined.surface_code.as_str()), (30, "011111"));
    let report: serde_json::Value = read_json(tmp.path().join("cal/report.json")).unwrap();
    assert_eq!(report["mode"], "dcmds");
    assert_eq!(report["mismatch"]["geometric_cm"].as_array().unwrap().len(), 34);

    let refined = p("cal/refined.json");
    let out = echoaware(&["rooge", "--annotation", &ann, "--scene", &refined, "--sources", "1,2,3,4", "-o", &p("rg/planes.json"), "--score", &p("rg/score.csv")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let score = CsvTable::read(tmp.path().join("rg/score.csv")).unwrap();
    assert_eq!(score.rows.len(), 6);
    assert!(tmp.path().join("rg/planes.json").exists());
    assert_eq!(code(&echoaware(&["rooge", "--annotation", &ann, "--scene", &refined, "--sources", "0,1", "--out-dir", &p("rg")])), 2);

    let out = echoaware(&["descriptors", "--rirs", &p("tensor"), "--annotation", &ann, "-o", &p("desc/descriptors.csv")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = CsvTable::read(tmp.path().join("desc/descriptors.csv")).unwrap();
    assert_eq!(table.headers, ["mic", "src", "room_code", "band_hz", "rt60_s", "set", "drr_db", "der_db"]);
    assert_eq!(table.rows.len(), 120 * 4 * 2);
    assert!(table.rows.iter().any(|r| r[2] == "000000") && table.rows.iter().all(|r| r[5] == "A" || r[5] == "B"));
    let out = echoaware(&["descriptors", "--rirs", &p("wav"), "--fs", "44100", "--out-dir", &p("desc")]);
    assert_eq!(code(&out), 2);
}

fn peak(x: &[f64]) -> (usize, f64) {
    x.iter().enumerate().map(|(i, v)| (i, v.abs())).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap()
}

#[test]
fn probe_recovers_impulses_from_sweep_recordings() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let out = echoaware(&["probe", "gen", "--duration", "1", "--repetitions", "2", "--gap", "0.5", "-o", &p("sweep.wav")]);
    assert_eq!(code(&out), 0);
    let out = echoaware(&["probe", "gen", "--spec", &p("sweep.json"), "-o", &p("again.wav")]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(p("sweep.wav")).unwrap(), std::fs::read(p("again.wav")).unwrap());

    let out = echoaware(&["probe", "estimate", "--rec", &p("sweep.wav"), "--ref", &p("sweep.wav"), "--length", "1000", "-o", &p("rir.wav")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (rirs, fs) = read_wav::<f64>(p("rir.wav")).unwrap();
    assert_eq!(fs, 48_000.0);
    let (at, height) = peak(&rirs[0]);
    assert_eq!(at, 0);
    let tail = rirs[0][50..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(tail < 0.01 * height, "tail {tail} against peak {height}");

    let (sweep, _) = read_wav::<f64>(p("sweep.wav")).unwrap();
    let n = sweep[0].len() + 3000;
    let mut loopback = vec![0.0; n];
    let mut mic = vec![0.0; n];
    for (t, v) in sweep[0].iter().enumerate() {
        loopback[t + 300] = *v;
        mic[t + 400] = 0.5 * v;
    }
    write_wav(p("rec.wav"), &[loopback, mic], 48_000.0).unwrap();
    let out = echoaware(&[
        "probe", "estimate", "--rec", &p("rec.wav"), "--ref", &p("sweep.wav"), "--loopback", "0", "--spec", &p("sweep.json"), "--length",
        "1000", "-o", &p("aligned.wav"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (rirs, _) = read_wav::<f64>(p("aligned.wav")).unwrap();
    assert_eq!(rirs.len(), 1);
    assert_eq!(peak(&rirs[0]).0, 100);
    let out = echoaware(&["probe", "estimate", "--rec", &p("sweep.wav"), "--ref", &p("sweep.wav"), "--spec", &p("sweep.json"), "--length", "1000", "-o", &p("bare.wav")]);
    assert_eq!(code(&out), 0);
    let (bare, _) = read_wav::<f64>(p("bare.wav")).unwrap();
    let ratio = peak(&rirs[0]).1 / peak(&bare[0]).1;
    assert!((ratio - 0.5).abs() < 0.01, "{ratio}");
}

#[test]
fn beamform_enhances_a_simulated_mixture() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let out = echoaware(&[
        "simulate", "--seed", "3", "--rir-seconds", "0.25", "--mix-snr", "0", "--signal-seconds", "1", "--out-dir", &p("b"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (mix, _) = read_wav::<f64>(p("b/mix.wav")).unwrap();
    assert_eq!(mix.len(), 5);

    let out = echoaware(&[
        "beamform", "--mix", &p("b/mix.wav"), "--scene", &p("b/scene.json"), "--annotation", &p("b/annotation.json"), "--design",
        "mvdr-rake-late", "-o", &p("enhanced.wav"), "--metrics", &p("metrics.json"), "--stats", &p("b/mix_stats.json"), "--target",
        &p("b/target.wav"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = read_json(p("metrics.json")).unwrap();
    assert_eq!(metrics["statistics"], "file");
    let isnrr = metrics["designs"][0]["isnrr_db"].as_f64().unwrap();
    assert!(isnrr > 0.0, "{isnrr}");
    let (enhanced, _) = read_wav::<f64>(p("enhanced.wav")).unwrap();
    assert_eq!(enhanced[0].len(), mix[0].len());

    let out = echoaware(&["beamform", "--mix", &p("b/mix.wav"), "--scene", &p("b/scene.json"), "--design", "ds,mvdr-dp,mvdr-retf", "--out-dir", &p("all")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = read_json(p("all/metrics.json")).unwrap();
    assert_eq!(metrics["statistics"], "estimated");
    assert_eq!(metrics["designs"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("all/enhanced_mvdr-dp.wav").exists());
    let out = echoaware(&["beamform", "--mix", &p("b/mix.wav"), "--scene", &p("b/scene.json"), "--array", "7", "--out-dir", &p("all")]);
    assert_eq!(code(&out), 2);
}
