use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ranktuner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranktuner"))
        .args(args)
        .env_remove("RANKTUNER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn stats_rows_match_library() {
    let dir = TempDir::new().unwrap();
    let dump = write(
        dir.path(),
        "d.jsonl",
        "{\"record_id\":\"u\",\"prompt_len\":1,\"targets\":[0,2],\"logits\":[[0,0,0,0],[0,0,0,0]]}\n\
         {\"record_id\":\"empty\",\"prompt_len\":1,\"targets\":[0],\"logits\":[[1,2]]}\n",
    );
    let out = ranktuner(&["stats", "--input", &dump]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("# ranktuner stats v1\nrecord_id,position,p,rank,"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1);
    let cols: Vec<&str> = rows[0].split(',').collect();
    // Uniform over four: p = 0.25, R = 4, H = 2, E[R] = 2.5, s = 2.
    assert_eq!(&cols[..7], &["u", "1", "0.25", "4", "2", "2.5", "2"]);
}

#[test]
fn stats_errors_name_line_and_record() {
    let dir = TempDir::new().unwrap();
    let ok = "{\"record_id\":\"a\",\"prompt_len\":0,\"targets\":[0],\"logits\":[[0,1]]}";
    let dump = write(dir.path(), "bad.jsonl", &format!("{ok}\n{ok}\n{{broken\n"));
    let out = ranktuner(&["stats", "--input", &dump]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let dump = write(
        dir.path(),
        "dim.jsonl",
        "{\"record_id\":\"wide\",\"prompt_len\":0,\"targets\":[0,0],\"logits\":[[0,1],[0,1,2]]}\n",
    );
    let out = ranktuner(&["stats", "--input", &dump]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("wide"));
}

#[test]
fn validate_bounds_reports_two_rows() {
    let out = ranktuner(&["validate-bounds", "--n", "1", "--seed", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("rank_prob,") && rows[0].ends_with(",1,0"));
    assert!(rows[1].starts_with("expected_rank_entropy,") && rows[1].ends_with(",1,0"));
    assert!(!ranktuner(&["validate-bounds", "--n", "0"]).status.success());
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ranktuner"));
        cmd.args(args).env_remove("RANKTUNER_SEED");
        if let Some(v) = env {
            cmd.env("RANKTUNER_SEED", v);
        }
        cmd.output().unwrap().stdout
    };
    let from_env = run(Some("9"), &["validate-bounds", "--n", "50"]);
    let explicit = run(None, &["validate-bounds", "--n", "50", "--seed", "9"]);
    let default = run(None, &["validate-bounds", "--n", "50"]);
    assert_eq!(from_env, explicit);
    assert_ne!(from_env, default);
}

#[test]
fn train_rejects_bad_config_naming_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "zero.toml", "scheme = \"sft\"\nsteps = 0\n");
    let out = ranktuner(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("steps"));

    let cfg = write(dir.path(), "lambda.toml", "scheme = \"overtone\"\nlambda = 2.5\n");
    let out = ranktuner(&["train", "--config", &cfg]);
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));

    let cfg = write(dir.path(), "typo.toml", "scheme = \"sft\"\nlearnin_rate = 0.1\n");
    assert!(!ranktuner(&["train", "--config", &cfg]).status.success());

    let out = ranktuner(&["train", "--scheme", "nope"]);
    assert!(stderr(&out).contains("scheme"));
}

#[test]
fn ranktuner_prob_weight_never_exceeds_scale() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "rt.toml",
        "scheme = \"ranktuner\"\ninitial = \"prob\"\nsteps = 40\nlearning_rate = 0.5\nseed = 3\n",
    );
    let telemetry = dir.path().join("t.csv");
    let out = ranktuner(&["train", "--config", &cfg, "--telemetry", telemetry.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&telemetry).unwrap();
    assert!(text.starts_with("# ranktuner telemetry v1\nstep,loss,grad_norm,mean_weight,mean_scale,mean_entropy\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 40);
    for row in rows {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[3] <= cols[4], "{row}");
    }
}

#[test]
fn train_probe_block_is_appended() {
    let out = ranktuner(&["train", "--steps", "20", "--probe-entropy"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let probe: Vec<&str> = text.lines().skip_while(|l| *l != "# probe").collect();
    assert_eq!(probe[1], "scheme,temperature,inference_entropy");
    assert!(probe[2].starts_with("dft,0.2,"));
    assert!(probe[3].starts_with("sft,0.2,"));
    assert!(probe[4].starts_with("overtone,0.2,"));
    assert!(probe[5].starts_with("# probe ordering"));
}

#[test]
fn noise_micro_corpus_and_manifest() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let row = |scorer: &str| {
        let out = ranktuner(&[
            "noise", "--corpus", "micro", "--rho", "0.1", "--scorer", scorer, "--manifest",
            manifest.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        data_rows(&stdout(&out))[0].to_string()
    };
    assert_eq!(row("entropy_dominant"), "entropy_dominant,0.4444444444444444,1,1,0.1,0");
    assert_eq!(row("ours"), "ours,0.1111111111111111,0.25,0,0.1,0");
    let lines = fs::read_to_string(&manifest).unwrap();
    assert_eq!(lines.lines().count(), 10);
    assert_eq!(
        lines.lines().nth(3).unwrap(),
        "{\"record_id\":3,\"corrupted\":true,\"span_start\":6,\"span_end\":10}"
    );
}

#[test]
fn noise_rounding_and_flag_errors() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let out = ranktuner(&[
        "noise", "--records", "2", "--rho", "0.5", "--manifest", manifest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.matches("\"corrupted\":true").count(), 1);

    assert_eq!(ranktuner(&["noise", "--scorer", "bogus"]).status.code(), Some(1));
    assert_eq!(ranktuner(&["noise", "--rho", "1.5"]).status.code(), Some(1));
}

#[test]
fn passk_rows() {
    let dir = TempDir::new().unwrap();
    let ones = write(dir.path(), "ones.txt", "1111\n1111\n");
    let out = ranktuner(&["passk", "--input", &ones]);
    assert_eq!(data_rows(&stdout(&out)), vec!["1,100.0", "2,100.0", "3,100.0", "4,100.0"]);

    let single = write(dir.path(), "c1.txt", "1000\n0010\n");
    let out = ranktuner(&["passk", "--input", &single, "--k", "2"]);
    assert_eq!(data_rows(&stdout(&out)), vec!["2,50.0"]);

    assert_eq!(ranktuner(&["passk", "--input", &single, "--k", "5"]).status.code(), Some(1));
    let ragged = write(dir.path(), "ragged.txt", "101\n10\n");
    let out = ranktuner(&["passk", "--input", &ragged]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"));
}
