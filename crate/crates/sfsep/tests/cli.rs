//! End-to-end exercises of the command-line interface on tiny inputs: every
//! verb runs against real files in a temp directory and leaves the artifacts
//! its help text promises.

use std::path::Path;
use std::process::Command;

use sfsep::audio::{read_wav, write_wav, AudioBuffer};
use sfsep::config::Config;
use sfsep::f0::write_assigned_csv;

const BIN: &str = env!("CARGO_BIN_EXE_sfsep");

/// Two constant tones plus a touch of noise, one second at the default rate.
fn tiny_mixture(cfg: &Config) -> Vec<f64> {
    let len = cfg.fs as usize;
    (0..len)
        .map(|t| {
            let tt = t as f64 / cfg.fs as f64;
            0.1 * (std::f64::consts::TAU * 220.0 * tt).sin()
                + 0.05 * (std::f64::consts::TAU * 330.0 * tt).sin()
        })
        .collect()
}

/// Write the mixture WAV and an assigned two-source F0 CSV next to it.
fn write_inputs(dir: &Path, cfg: &Config) -> (std::path::PathBuf, std::path::PathBuf) {
    let mix_path = dir.join("mix.wav");
    let f0_path = dir.join("f0.csv");
    let mix = tiny_mixture(cfg);
    write_wav(&mix_path, &AudioBuffer::new(mix, cfg.fs).unwrap()).unwrap();
    let rows = 1 + cfg.fs as usize / cfg.hop;
    let times: Vec<f64> = (0..rows).map(|i| i as f64 * cfg.hop as f64 / cfg.fs as f64).collect();
    let tracks = vec![vec![220.0; rows], vec![330.0; rows]];
    write_assigned_csv(&f0_path, &times, &tracks).unwrap();
    (mix_path, f0_path)
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn separate_writes_estimates_params_and_meta() {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let (mix, f0) = write_inputs(dir.path(), &cfg);
    let out_dir = dir.path().join("sep");
    run_ok(&[
        "separate",
        "--mixture", mix.to_str().unwrap(),
        "--f0", f0.to_str().unwrap(),
        "--sources", "2",
        "--out", out_dir.to_str().unwrap(),
        "--steps", "5",
        "--emit-synth",
        "--emit-params",
    ]);
    for name in ["source_0.wav", "source_1.wav", "synth_0.wav", "synth_1.wav"] {
        let audio = read_wav(&out_dir.join(name), cfg.fs).unwrap();
        assert_eq!(audio.len(), cfg.fs as usize, "{name}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["loss_trace"].as_array().unwrap().len(), 5);
    assert_eq!(meta["seed"], 0);
    assert_eq!(meta["config"]["fft_size"], 512);
    assert!(out_dir.join("params.json").exists());
}

#[test]
fn synthesize_renders_emitted_params() {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let (mix, f0) = write_inputs(dir.path(), &cfg);
    let out_dir = dir.path().join("sep");
    run_ok(&[
        "separate",
        "--mixture", mix.to_str().unwrap(),
        "--f0", f0.to_str().unwrap(),
        "--sources", "2",
        "--out", out_dir.to_str().unwrap(),
        "--steps", "3",
        "--emit-params",
    ]);
    let wav = dir.path().join("resynth.wav");
    run_ok(&[
        "synthesize",
        "--params", out_dir.join("params.json").to_str().unwrap(),
        "--out", wav.to_str().unwrap(),
    ]);
    let audio = read_wav(&wav, cfg.fs).unwrap();
    assert_eq!(audio.len(), cfg.fs as usize);
}

#[test]
fn nmf_writes_estimates_and_divergence_trace() {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let (mix, f0) = write_inputs(dir.path(), &cfg);
    let out_dir = dir.path().join("nmf");
    run_ok(&[
        "nmf",
        "--mixture", mix.to_str().unwrap(),
        "--f0", f0.to_str().unwrap(),
        "--sources", "2",
        "--out", out_dir.to_str().unwrap(),
        "--iters", "5",
    ]);
    for name in ["source_0.wav", "source_1.wav"] {
        let audio = read_wav(&out_dir.join(name), cfg.fs).unwrap();
        assert_eq!(audio.len(), cfg.fs as usize, "{name}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("nmf_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["divergence_trace"].as_array().unwrap().len(), 6);
    assert!(meta["rank"].as_u64().unwrap() >= 2);
}

#[test]
fn evaluate_scores_matching_file_names() {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let (mix, f0) = write_inputs(dir.path(), &cfg);
    let out_dir = dir.path().join("sep");
    run_ok(&[
        "separate",
        "--mixture", mix.to_str().unwrap(),
        "--f0", f0.to_str().unwrap(),
        "--sources", "2",
        "--out", out_dir.to_str().unwrap(),
        "--steps", "2",
    ]);
    // Self-evaluation: estimates against themselves must hit the metric cap.
    let report_path = dir.path().join("report.json");
    run_ok(&[
        "evaluate",
        "--est-dir", out_dir.to_str().unwrap(),
        "--ref-dir", out_dir.to_str().unwrap(),
        "--report", report_path.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let pairs = report["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    for pair in pairs {
        assert_eq!(pair["si_sdr_db"], 100.0);
        assert_eq!(pair["framewise"]["frames"].as_array().unwrap().len(), 1);
    }
    assert_eq!(report["frame_len_samples"], 16_000);
    assert_eq!(report["energy_thresh"], 10.0);
}

#[test]
fn assign_f0_turns_raw_rows_into_source_columns() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "time,f0\n0.0,220.0,440.0\n0.016,221.0,441.0\n0.032,222.0\n").unwrap();
    let out = dir.path().join("assigned.csv");
    run_ok(&[
        "assign-f0",
        "--raw", raw.to_str().unwrap(),
        "--sources", "2",
        "--out", out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "time,src0,src1");
    assert_eq!(lines.next().unwrap(), "0,440,220");
    assert_eq!(lines.next().unwrap(), "0.016,441,221");
    // the lone third pitch continues the nearer (lower) voice
    assert_eq!(lines.next().unwrap(), "0.032,0,222");
}

#[test]
fn gradcheck_exits_zero_on_a_small_run() {
    run_ok(&["gradcheck", "--seed", "1", "--coords", "8"]);
}

#[test]
fn source_count_mismatch_is_reported() {
    let cfg = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let (mix, f0) = write_inputs(dir.path(), &cfg);
    let stderr = run_err(&[
        "separate",
        "--mixture", mix.to_str().unwrap(),
        "--f0", f0.to_str().unwrap(),
        "--sources", "3",
        "--out", dir.path().join("x").to_str().unwrap(),
        "--steps", "1",
    ]);
    assert!(stderr.contains("--sources is 3"), "stderr: {stderr}");
}

#[test]
fn missing_mixture_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let stderr = run_err(&[
        "separate",
        "--mixture", dir.path().join("absent.wav").to_str().unwrap(),
        "--f0", dir.path().join("absent.csv").to_str().unwrap(),
        "--sources", "2",
        "--out", dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(stderr.contains("absent.wav"), "stderr: {stderr}");
}
