use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tlsprep_core::synth::{read_truth, speech_like};
use tlsprep_core::{write_wav, AudioClip, Grid, StftConfig, WavEncoding};

fn tlsprep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlsprep"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TLSPREP_WORKERS")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rows(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn simulate(dir: &Path, count: &str, snr: (&str, &str)) {
    let o = tlsprep(
        &[
            "simulate",
            "--out",
            "sim",
            "--count",
            count,
            "--seed",
            "5",
            "--snr-min",
            snr.0,
            "--snr-max",
            snr.1,
        ],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_succeeds_and_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = tlsprep(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["run", "simulate", "snr", "align", "mca", "iam", "magspec"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tlsprep(&["bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(tlsprep(&["run"], dir.path()).status.code(), Some(2));
    assert_eq!(
        tlsprep(&["snr", "only_one.wav"], dir.path()).status.code(),
        Some(2)
    );
    std::fs::write(dir.path().join("m.jsonl"), "").unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "bogus = 1\n").unwrap();
    let o = tlsprep(
        &["run", "--manifest", "m.jsonl", "--config", "bad.cfg"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = tlsprep(
        &["run", "--manifest", "m.jsonl", "--set", "window=triangle"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_manifest_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tlsprep(
        &["run", "--manifest", "absent.jsonl", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.jsonl"));
}

#[test]
fn empty_manifest_gives_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.jsonl"), "").unwrap();
    let o = tlsprep(
        &["run", "--manifest", "m.jsonl", "--out", "out"],
        dir.path(),
    );
    assert!(o.status.success());
    let results = dir.path().join("out/results.jsonl");
    assert_eq!(std::fs::read_to_string(results).unwrap(), "");
}

#[test]
fn simulated_corpus_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "4", ("0", "15"));
    let o = tlsprep(
        &[
            "run",
            "--manifest",
            "sim/manifest.jsonl",
            "--out",
            "out",
            "--workers",
            "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "out/results.jsonl");
    let results = rows(&dir.path().join("out/results.jsonl"));
    let truth = read_truth(dir.path().join("sim/truth.jsonl")).unwrap();
    assert_eq!(results.len(), 4);
    for (row, t) in results.iter().zip(&truth) {
        assert_eq!(row["offset_samples"].as_i64(), Some(-(t.delay as i64)));
        assert_eq!(row["status"], "kept");
        let label = row["output_path"].as_str().unwrap();
        assert!(dir.path().join("out").join(label).is_file());
    }
}

#[test]
fn flags_override_config_and_env() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "3", ("0", "10"));
    std::fs::write(
        dir.path().join("strict.cfg"),
        "# nothing passes\nsnr_threshold_db = 100\nworkers = 2\n",
    )
    .unwrap();
    let run = |extra: &[&str], workers_env: Option<&str>| {
        let mut args = vec![
            "run",
            "--manifest",
            "sim/manifest.jsonl",
            "--config",
            "strict.cfg",
        ];
        args.extend_from_slice(extra);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tlsprep"));
        cmd.args(&args)
            .current_dir(dir.path())
            .env("RUST_LOG", "warn");
        match workers_env {
            Some(w) => cmd.env("TLSPREP_WORKERS", w),
            None => cmd.env_remove("TLSPREP_WORKERS"),
        };
        cmd.output().unwrap()
    };
    let status_of = |out: &str| -> Vec<String> {
        rows(&dir.path().join(out).join("results.jsonl"))
            .iter()
            .map(|r| r["status"].as_str().unwrap().to_string())
            .collect()
    };

    assert!(run(&["--out", "a"], None).status.success());
    assert_eq!(status_of("a"), ["discarded"; 3]);

    let o = run(&["--out", "b", "--threshold-db", "-100"], None);
    assert!(o.status.success());
    assert_eq!(status_of("b"), ["kept"; 3]);

    // the config file sets workers, so a bad env default is overridden
    assert!(run(&["--out", "c"], Some("many")).status.code() == Some(2));
    assert!(
        run(&["--out", "c", "--workers", "0"], Some("3"))
            .status
            .code()
            == Some(2)
    );
    assert!(run(&["--out", "c", "--workers", "1"], Some("3"))
        .status
        .success());
}

#[test]
fn snr_of_identical_files_is_inf() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let clip = AudioClip::mono(speech_like(16000, 16000, 1), 16000).unwrap();
    write_wav(&path, &clip, WavEncoding::Pcm16).unwrap();
    let o = tlsprep(&["snr", "a.wav", "a.wav"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "inf");
}

#[test]
fn snr_of_half_scaled_label_is_zero_db() {
    // s3 = y/2 leaves a residual equal to s3
    let dir = tempfile::tempdir().unwrap();
    let y = speech_like(16000, 16000, 2);
    let s3: Vec<f64> = y.iter().map(|v| 0.5 * v).collect();
    write_wav(
        dir.path().join("y.wav"),
        &AudioClip::mono(y, 16000).unwrap(),
        WavEncoding::Float32,
    )
    .unwrap();
    write_wav(
        dir.path().join("s3.wav"),
        &AudioClip::mono(s3, 16000).unwrap(),
        WavEncoding::Float32,
    )
    .unwrap();
    let o = tlsprep(&["snr", "s3.wav", "y.wav"], dir.path());
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn align_reports_simulated_delay() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "2", ("5", "15"));
    let truth = read_truth(dir.path().join("sim/truth.jsonl")).unwrap();
    for (i, t) in truth.iter().enumerate() {
        let ct = format!("sim/audio/sim{i:04}_close.wav");
        let ff = format!("sim/audio/sim{i:04}_far.wav");
        let o = tlsprep(&["align", &ct, &ff], dir.path());
        assert!(o.status.success());
        let text = stdout(&o);
        let line = text
            .lines()
            .find(|l| l.starts_with("offset_samples"))
            .unwrap();
        assert_eq!(
            line.split('\t').nth(1).unwrap(),
            (-(t.delay as i64)).to_string()
        );
    }
}

#[test]
fn grid_tools_agree_with_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let x = speech_like(8000, 16000, 3);
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    for (name, s) in [("x.wav", &x), ("y.wav", &y)] {
        write_wav(
            dir.path().join(name),
            &AudioClip::mono(s.clone(), 16000).unwrap(),
            WavEncoding::Float32,
        )
        .unwrap();
    }
    for (wav, grid) in [("x.wav", "x.grid"), ("y.wav", "y.grid")] {
        let o = tlsprep(&["magspec", wav, "--out", grid], dir.path());
        assert!(o.status.success());
    }
    let gx = Grid::read(dir.path().join("x.grid")).unwrap();
    let cfg = StftConfig::default();
    assert_eq!(gx.dims(), &[cfg.n_frames(x.len()), cfg.n_bins()]);

    let o = tlsprep(&["mca", "x.grid", "x.grid", "--grad", "g.grid"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("mse\t0\n"));
    let g = Grid::read(dir.path().join("g.grid")).unwrap();
    assert_eq!(g.dims(), gx.dims());
    assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));

    // clean = mixture / 2 gives a flat mask of 0.5; reversed, it clips
    let o = tlsprep(
        &[
            "iam", "--clean", "x.wav", "--mix", "y.wav", "--out", "m.grid",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let m = Grid::read(dir.path().join("m.grid")).unwrap();
    let yg = Grid::read(dir.path().join("y.grid")).unwrap();
    for (v, ym) in m.as_slice().iter().zip(yg.as_slice()) {
        if *ym > 1e-6 {
            assert!((v - 0.5).abs() < 1e-12, "{v}");
        }
    }
    let o = tlsprep(
        &[
            "iam",
            "--clean",
            "y.wav",
            "--mix",
            "x.wav",
            "--out",
            "c.grid",
            "--clip-max",
            "1.5",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let c = Grid::read(dir.path().join("c.grid")).unwrap();
    assert!(c.as_slice().iter().all(|&v| (0.0..=1.5).contains(&v)));
    assert!(c.as_slice().contains(&1.5));
}
