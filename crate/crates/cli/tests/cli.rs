use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fade_core::corpus::{synthesize_sentence, MatrixGrammar, SentenceLabel, SyntheticCorpusSpec};
use fade_core::frontend::{read_wav, write_wav};
use fade_core::runner::ExperimentConfig;

fn fade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fade")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn small_config(dir: &Path, test_snrs: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
seed = 5
workers = 1

[corpus]
kind = "synthetic"
grammar = "desk"
train_sentences = 16
test_sentences = 8
efforts = ["plain"]

[[corpus.speakers]]
name = "synth"

[[corpus.languages]]
name = "nontonal"

[[features]]
name = "mfcc-static"
frontend.features = {{ kind = "mfcc", delta_orders = 0 }}

[[noises]]
kind = "stationary_surrogate"
name = "ssn"
duration_s = 5.0

[sweep]
padding_ms = 100.0
grid = {{ train_snrs = [0.0], test_snrs = {test_snrs} }}
train = {{ topology = {{ states_per_word = 6, silence_states = 2 }} }}
"#
    );
    let p = dir.join("experiment.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn print_config_emits_a_loadable_desk_config() {
    let out = fade(&["print-config", "--seed", "17"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
    assert_eq!(cfg, ExperimentConfig { seed: 17, ..ExperimentConfig::desk(1) });
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "seed = 1\n[corpus]\nkind = \"nonsense\"\n").unwrap();
    let out = fade(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(fade(&["run"]).status.code(), Some(2));
}

#[test]
fn srt_of_a_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    fs::write(&p, "train_snr,test_snr,rate,count\n0,-12,0.4,100\n0,-9,0.7,100\n").unwrap();
    let out = fade(&["srt", "--matrix", p.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("srt_db=-11 "), "{text}");
}

#[test]
fn run_writes_reports_and_failed_conditions_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[-60.0, -10.0, 0.0, 60.0]");
    let out_dir = dir.path().join("out");
    let out = fade(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.csv").is_file());
    assert!(out_dir.join("matrices/mfcc-static_synth_nontonal_plain_ssn.csv").is_file());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mfcc-static,synth,nontonal,plain,ssn,ok,"));

    // resuming with every row on disk reproduces the summary
    let again = fade(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--resume"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), stdout);

    let emp = dir.path().join("emp.csv");
    fs::write(&emp, "speaker,language,effort,noise,srt_db,sem_db,listeners\nsynth,nontonal,plain,ssn,-8.0,0.5,15\n")
        .unwrap();
    let ev = fade(&["evaluate", "--results", out_dir.to_str().unwrap(), "--empirical", emp.to_str().unwrap()]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(out_dir.join("panels.csv").is_file());
    assert!(out_dir.join("scatter_srt_mfcc-static.csv").is_file());

    let unreachable = small_config(dir.path(), "[-60.0, -50.0]");
    let out =
        fade(&["run", "--config", unreachable.to_str().unwrap(), "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("failed"));
}

#[test]
fn noise_and_feature_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), false, 16000).unwrap();
    let speech = synthesize_sentence(&spec, &SentenceLabel::parse("peter got toys"), 1).unwrap();
    let wav = dir.path().join("speech.wav");
    write_wav(&wav, &speech).unwrap();

    let noise = dir.path().join("gated.wav");
    let out = fade(&[
        "noise",
        "--kind",
        "gated",
        "--reference",
        wav.to_str().unwrap(),
        "--duration",
        "2",
        "--out",
        noise.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let n = read_wav(&noise).unwrap();
    assert_eq!(n.len(), 32000);

    let csv = dir.path().join("feat.csv");
    let out =
        fade(&["features", "--input", wav.to_str().unwrap(), "--kind", "mfcc-static", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let frames = (speech.len() - 400) / 160 + 1;
    assert!(text.lines().count() >= frames);
}
