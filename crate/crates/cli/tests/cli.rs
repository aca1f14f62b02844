use std::fs;
use std::io::{BufRead, BufReader};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

use chladni_core::audio::read_wav;
use chladni_core::physics::NodalSettings;
use chladni_core::service::{send_frame, ResultMessage, Status};
use chladni_core::synth::render_mode;
use chladni_core::ModeRegistry;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde_json::Value;

fn chladni(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chladni")).args(args).output().expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, by relative path, with its bytes.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

const TINY_CONFIG: &str = r#"{
    "model": {"channel_widths": [4, 8, 8, 16], "hidden": 16, "cbam_reduction": 4, "dropout_p": 0.0},
    "train": {"max_epochs": 2, "early_stop_patience": 1, "batch_size": 16, "lr": 0.001}
}"#;

struct Fixture {
    dir: PathBuf,
    dataset: PathBuf,
    config: PathBuf,
    ckpt: PathBuf,
    train_summary: Value,
}

/// A 32² dataset and a two-epoch tiny checkpoint shared by the slower tests.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let dataset = dir.join("data");
        let config = dir.join("tiny.json");
        fs::write(&config, TINY_CONFIG).unwrap();
        let out = chladni(&[
            "gen-dataset", "--out", s(&dataset), "--base-per-mode", "2", "--augment-factor", "2", "--image-size", "32",
            "--seed", "11",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let ckpt = dir.join("ckpt").join("tiny.ckpt");
        let train_summary = ok_json(&chladni(&[
            "train", "--dataset", s(&dataset), "--out", s(&ckpt), "--config", s(&config), "--seed", "3",
        ]));
        Fixture { dir, dataset, config, ckpt, train_summary }
    })
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = chladni(args);
    (out.status.code().expect("exited normally"), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(exit_code(&["--help"]).0, 0);
    assert_eq!(exit_code(&["gen-dataset", "--out", "x", "--bogus"]).0, 2);
    assert_eq!(exit_code(&["frobnicate"]).0, 2);
    assert_eq!(exit_code(&["train", "--dataset", "d", "--out", "o", "--variant", "cbam9"]).0, 2);
    let (code, err) = exit_code(&["sonify", "--image", "a.png", "--ckpt", "b", "--out", "c.wav", "--duration", "0"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("duration"), "{err}");
    assert_eq!(exit_code(&["bench-infer", "--ckpt", "x", "--runs", "0"]).0, 2);
    let (code, err) = exit_code(&["gen-dataset", "--out", "x", "--image-size", "8"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn serve_refuses_duplicate_ports() {
    let (code, err) = exit_code(&["serve", "--ckpt", "missing.ckpt", "--listen-port", "9100", "--bridge-port", "9100"]);
    assert_eq!(code, 2);
    assert!(err.contains("9100"), "{err}");
}

#[test]
fn unreadable_inputs_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let (code, err) = exit_code(&["sonify", "--image", s(&missing), "--ckpt", "b", "--out", "c.wav"]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.png"), "{err}");
    let (code, err) = exit_code(&["eval", "--ckpt", s(&dir.path().join("gone.ckpt")), "--dataset", s(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("gone.ckpt"), "{err}");
}

#[test]
fn gen_dataset_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = |out: &Path, seed: &'static str| {
        chladni(&[
            "gen-dataset", "--out", s(out), "--base-per-mode", "2", "--augment-factor", "3", "--image-size", "32",
            "--seed", seed,
        ])
    };
    let out = args(&a, "4");
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("90 images (75 train, 15 test)"), "{table}");
    // Header, one row per mode, then the total.
    assert_eq!(table.lines().count(), 17);

    let manifest = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 15 * 2 * 3);
    assert!(args(&b, "4").status.success());
    assert_eq!(tree(&a), tree(&b));
    assert!(args(&c, "5").status.success());
    assert_ne!(manifest, fs::read_to_string(c.join("manifest.jsonl")).unwrap());
}

#[test]
fn config_file_overrides_defaults_and_flags_override_both() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"dataset": {"base_per_mode": 1, "augment_factor": 2, "image_size": 40, "seed": 9}}"#).unwrap();
    let data = dir.path().join("d");
    assert!(chladni(&["gen-dataset", "--out", s(&data), "--config", s(&config)]).status.success());
    let written: Value = serde_json::from_str(&fs::read_to_string(data.join("dataset_config.json")).unwrap()).unwrap();
    assert_eq!((written["image_size"].as_u64(), written["seed"].as_u64()), (Some(40), Some(9)));
    assert_eq!(fs::read_to_string(data.join("manifest.jsonl")).unwrap().lines().count(), 30);

    let data = dir.path().join("e");
    let out = chladni(&["gen-dataset", "--out", s(&data), "--config", s(&config), "--image-size", "32", "--seed", "1"]);
    assert!(out.status.success());
    let written: Value = serde_json::from_str(&fs::read_to_string(data.join("dataset_config.json")).unwrap()).unwrap();
    assert_eq!((written["image_size"].as_u64(), written["seed"].as_u64()), (Some(32), Some(1)));

    fs::write(&config, r#"{"datasets": {}}"#).unwrap();
    let (code, err) = exit_code(&["gen-dataset", "--out", s(&data), "--config", s(&config)]);
    assert_ne!(code, 0);
    assert!(err.contains("c.json"), "{err}");
}

#[test]
fn train_writes_checkpoint_history_and_summary() {
    let f = fixture();
    assert!(f.ckpt.is_file());
    let summary = &f.train_summary;
    assert_eq!(summary["epochs_run"], 2);
    assert_eq!(summary["variant"], "cbam5");
    assert!(summary["final_val_accuracy"].as_f64().unwrap() >= 0.0);
    let history: Value = serde_json::from_str(&fs::read_to_string(f.ckpt.with_file_name("history.json")).unwrap()).unwrap();
    let epochs = history["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 2);
    for key in ["epoch", "train_loss", "val_loss", "val_accuracy"] {
        assert!(epochs[0].get(key).is_some(), "{key}");
    }

    // Same seed, same weights.
    let again = f.dir.join("again.ckpt");
    ok_json(&chladni(&[
        "train", "--dataset", s(&f.dataset), "--out", s(&again), "--config", s(&f.config), "--seed", "3",
    ]));
    assert_eq!(fs::read(&again).unwrap(), fs::read(&f.ckpt).unwrap());
}

#[test]
fn variant_flag_selects_the_architecture() {
    let f = fixture();
    let out = f.dir.join("seven.ckpt");
    let seven = ok_json(&chladni(&[
        "train", "--dataset", s(&f.dataset), "--out", s(&out), "--config", s(&f.config), "--variant", "cbam7",
    ]));
    assert_eq!(seven["variant"], "cbam7");
    // A 7x7 spatial kernel over two maps has 2 * (49 - 25) more weights than 5x5.
    let diff = seven["parameters"].as_u64().unwrap() - f.train_summary["parameters"].as_u64().unwrap();
    assert_eq!(diff, 48);
}

#[test]
fn eval_prints_the_report() {
    let f = fixture();
    let test = ok_json(&chladni(&["eval", "--ckpt", s(&f.ckpt), "--dataset", s(&f.dataset)]));
    let train = ok_json(&chladni(&["eval", "--ckpt", s(&f.ckpt), "--dataset", s(&f.dataset), "--split", "train"]));
    for r in [&test, &train] {
        let acc = r["top1_accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(r["macro_f1"].as_f64().is_some());
        assert!(r["mean_latency_ms"].as_f64().unwrap() > 0.0);
    }
    let matrix = test["confusion"].as_array().unwrap();
    assert_eq!(matrix.len(), 15);
    let total: u64 = matrix.iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 15);
}

#[test]
fn ablate_prints_three_rows() {
    let f = fixture();
    let out_dir = f.dir.join("ablation");
    let out = chladni(&[
        "ablate", "--dataset", s(&f.dataset), "--config", s(&f.config), "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    for header in ["Model configuration", "Parameters", "Accuracy(%)", "Single image inference latency (ms)"] {
        assert!(lines[0].contains(header), "{header}");
    }
    assert!(lines[1].contains("no CBAM") && lines[2].contains("7x7") && lines[3].contains("5x5"));
    for v in ["basic", "cbam5", "cbam7"] {
        assert!(out_dir.join(format!("{v}.ckpt")).is_file());
    }
    let rows: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
}

#[test]
fn bench_infer_reports_against_the_reference() {
    let f = fixture();
    let r = ok_json(&chladni(&["bench-infer", "--ckpt", s(&f.ckpt), "--runs", "20"]));
    assert_eq!(r["runs"], 20);
    assert_eq!(r["reference_mean_ms"], 7.03);
    let (mean, max) = (r["mean_ms"].as_f64().unwrap(), r["max_ms"].as_f64().unwrap());
    assert!(mean > 0.0 && mean <= max);
}

#[test]
fn bench_infer_defaults_to_a_thousand_runs() {
    let help = String::from_utf8(chladni(&["bench-infer", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 1000]"), "{help}");
}

#[test]
fn bench_link_prints_latency_and_drops() {
    let r = ok_json(&chladni(&["bench-link", "--frames", "12", "--seed", "2"]));
    assert_eq!(r["frames"], 12);
    for key in ["mean_ms", "max_ms", "dropped"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert_eq!(r["dropped"], 0);
    assert!(r["mean_ms"].as_f64().unwrap() <= r["max_ms"].as_f64().unwrap());
}

fn dominant_bin(samples: &[f32]) -> usize {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap()
}

#[test]
fn sonify_writes_the_mapped_tone() {
    let f = fixture();
    let registry = ModeRegistry::shipped();
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("mode3.png");
    let e = registry.entries()[3];
    render_mode(e.order, 32, 1, &NodalSettings::for_plate(registry.plate())).unwrap().save_png(&png).unwrap();
    let wav = dir.path().join("out.wav");
    let r = ok_json(&chladni(&[
        "sonify", "--image", s(&png), "--ckpt", s(&f.ckpt), "--out", s(&wav), "--duration", "0.5",
    ]));
    let mode = r["mode_id"].as_u64().unwrap() as usize;
    let entry = registry.entries()[mode];
    let freq = r["frequency_hz"].as_f64().unwrap();
    assert_eq!(freq, entry.frequency_hz);
    assert_eq!((r["n"].as_u64(), r["m"].as_u64()), (Some(entry.order.n().into()), Some(entry.order.m().into())));
    assert!(r["confidence"].as_f64().unwrap() > 0.0);

    let (samples, sr) = read_wav(&wav).unwrap();
    assert_eq!(samples.len(), sr as usize / 2);
    let expect = freq * samples.len() as f64 / f64::from(sr);
    assert!((dominant_bin(&samples) as f64 - expect).abs() <= 1.0);
}

#[test]
fn serve_answers_frames_until_killed() {
    let f = fixture();
    let client = UdpSocket::bind("127.0.0.1:0").unwrap();
    client.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let reply_port = client.local_addr().unwrap().port().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_chladni"))
        .args(["serve", "--ckpt", s(&f.ckpt), "--listen-port", "0", "--bridge-port", "0", "--reply-port", &reply_port])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let info: Value = serde_json::from_str(&line).unwrap();
    let target = info["listening"].as_str().unwrap().parse().unwrap();

    let registry = ModeRegistry::shipped();
    let img = render_mode(registry.entries()[0].order, 32, 0, &NodalSettings::for_plate(registry.plate())).unwrap();
    send_frame(&client, target, &img, 41).unwrap();
    let mut buf = [0u8; 64];
    let (len, _) = client.recv_from(&mut buf).unwrap();
    let msg = ResultMessage::decode(&buf[..len]).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert_eq!(msg.frame_id, 41);
    assert_ne!(msg.status, Status::DecodeError);
    if msg.status == Status::Ok {
        assert_eq!(msg.frequency_hz, registry.entries()[usize::from(msg.mode_id)].frequency_hz as f32);
    }
}
