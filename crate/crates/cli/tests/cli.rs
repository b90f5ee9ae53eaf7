use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn threadsum(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threadsum"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = threadsum(dir.path(), &["synth", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_exits_zero_and_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = threadsum(dir.path(), &["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for default in ["[default: 0.0001]", "[default: 64]", "[default: 100]", "[default: 0.1]", "[default: 1]"] {
        assert!(text.contains(default), "missing {default} in\n{text}");
    }
}

#[test]
fn missing_input_file_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = threadsum(dir.path(), &["synth", "--in", "nope.jsonl", "--out", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.jsonl"));
}

#[test]
fn unknown_preset_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(threadsum(dir.path(), &["toydocs", "--count", "20", "--out", "d.jsonl"]).status.code(), Some(0));
    let o = threadsum(dir.path(), &["synth", "--preset", "extreme", "--in", "d.jsonl", "--out", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extreme"));
}

#[test]
fn explicit_preset_tuple_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    threadsum(dir.path(), &["toydocs", "--count", "30", "--out", "d.jsonl"]);
    let o = threadsum(dir.path(), &["synth", "--preset", "2,2,3,3", "--in", "d.jsonl", "--out", "c"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["preset"]["m"], 3);
}

#[test]
fn config_file_fills_missing_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "count = 7\nseed = 3\nout = \"from_config.jsonl\"\n").unwrap();
    let o = threadsum(dir.path(), &["toydocs", "--config", "run.toml", "--out", "from_flag.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("from_config.jsonl").exists());
    let text = fs::read_to_string(dir.path().join("from_flag.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 7);

    threadsum(dir.path(), &["toydocs", "--count", "7", "--seed", "3", "--out", "plain.jsonl"]);
    assert_eq!(fs::read(dir.path().join("plain.jsonl")).unwrap(), text.as_bytes());
}

#[test]
fn config_switches_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.toml"), "variant = \"seq2hier\"\nno_beta = true\ndim = 3\n").unwrap();
    let o = threadsum(dir.path(), &["gradcheck", "--config", "g.toml", "--out", "g.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");

    fs::write(dir.path().join("bad.toml"), "colour = \"red\"\n").unwrap();
    let o = threadsum(dir.path(), &["gradcheck", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn seq2seq_rejects_softmax_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let o = threadsum(dir.path(), &["gradcheck", "--variant", "seq2seq", "--gamma-softmax"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_round_trip_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = threadsum(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    };
    run(&["toydocs", "--count", "60", "--out", "docs.jsonl"]);
    run(&["synth", "--preset", "easy", "--in", "docs.jsonl", "--out", "corpus", "--seed", "1"]);
    run(&["vocab", "--corpus", "corpus/train.jsonl", "--out", "vocab.txt"]);
    run(&[
        "train", "--corpus", "corpus/train.jsonl", "--vocab", "vocab.txt", "--variant", "seq2seq", "--out", "model",
        "--dim", "6", "--epochs", "1", "--batch", "8", "--preset", "easy",
    ]);
    assert!(dir.path().join("model/epoch-1.ckpt").exists());
    let csv = fs::read_to_string(dir.path().join("model/loss.csv")).unwrap();
    assert!(csv.starts_with("step,running_avg_loss,nll,stop_bce\n"));
    run(&["generate", "--checkpoint", "model/model.ckpt", "--input", "corpus/test.jsonl", "--out", "gen.jsonl"]);
    run(&["eval", "--gen", "gen.jsonl", "--ref", "corpus/test.jsonl", "--out", "report.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for metric in ["r1", "r2", "rl"] {
        for part in ["recall", "precision", "f1"] {
            assert!(report[metric][part].is_f64(), "{metric}.{part}");
        }
    }
    let gen_lines = fs::read_to_string(dir.path().join("gen.jsonl")).unwrap().lines().count();
    let per = fs::read_to_string(dir.path().join("report.instances.jsonl")).unwrap();
    assert_eq!(per.lines().count(), gen_lines);
}

#[test]
fn corrupt_checkpoint_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    fs::write(dir.path().join("in.jsonl"), "").unwrap();
    let o = threadsum(dir.path(), &["generate", "--checkpoint", "bad.ckpt", "--input", "in.jsonl", "--out", "g.jsonl"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
