//! End-to-end CLI tests: help snapshots, determinism, exit codes and the
//! full corpus→train→translate→evaluate→grid workflow at a tiny scale.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use estafette::corpus::Vocab;
use estafette::model::{ModelConfig, TransformerModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_estafette"))
}

fn run_with_stdin(mut cmd: Command, stdin: &str) -> Output {
    cmd.stdin(Stdio::piped());
    cmd.stdout(Stdio::piped());
    cmd.stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn estafette");
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// ── help snapshots ───────────────────────────────────────────────────

/// `--help` output is snapshot-tested so every accepted flag stays
/// documented. Set UPDATE_CLI_SNAPSHOTS=1 to regenerate.
#[test]
fn help_snapshots_cover_all_flags() {
    let snap_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    fs::create_dir_all(&snap_dir).unwrap();
    let cases: &[(&str, &[&str])] = &[
        ("help_root.txt", &["--help"]),
        ("help_gen_corpus.txt", &["gen-corpus", "--help"]),
        ("help_train.txt", &["train", "--help"]),
        ("help_translate.txt", &["translate", "--help"]),
        ("help_pipeline_translate.txt", &["pipeline-translate", "--help"]),
        ("help_evaluate.txt", &["evaluate", "--help"]),
        ("help_grid.txt", &["grid", "--help"]),
        ("help_report.txt", &["report", "--help"]),
    ];
    for (snap, args) in cases {
        let out = bin().args(*args).output().unwrap();
        assert!(out.status.success(), "{args:?} failed");
        let text = stdout_of(&out);
        let path = snap_dir.join(snap);
        if std::env::var_os("UPDATE_CLI_SNAPSHOTS").is_some() || !path.exists() {
            fs::write(&path, &text).unwrap();
        }
        let expected = fs::read_to_string(&path).unwrap();
        assert_eq!(text, expected, "snapshot {snap} is stale; rerun with UPDATE_CLI_SNAPSHOTS=1");
    }
}

#[test]
fn unknown_flags_and_subcommands_exit_1() {
    let out = bin().arg("no-such-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["evaluate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("--hyp") || err.contains("Usage") || err.contains("usage"));
}

#[test]
fn missing_input_file_exits_1() {
    let out = bin()
        .args(["evaluate", "--hyp", "/nonexistent/h.txt", "--ref", "/nonexistent/r.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

// ── gen-corpus ───────────────────────────────────────────────────────

const SPEC_TOML: &str = r#"
base_vocab = 14
min_len = 3
max_len = 6
train = 30
dev = 8
test = 8
seed = 5
pivot_lag = 1
confusion = [[[0,1],[2,3]], [[1,2]]]
"#;

fn write_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("synth.toml");
    fs::write(&spec, SPEC_TOML).unwrap();
    spec
}

#[test]
fn gen_corpus_is_deterministic_and_cached_by_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path());
    let out_a = bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path().join("a"))
        .output()
        .unwrap();
    assert!(out_a.status.success(), "{}", stderr_of(&out_a));
    let dir_a = PathBuf::from(stdout_of(&out_a).trim());

    let out_b = bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path().join("b"))
        .output()
        .unwrap();
    let dir_b = PathBuf::from(stdout_of(&out_b).trim());

    assert_eq!(dir_a.file_name(), dir_b.file_name(), "same spec, same hash key");
    for name in ["train.tsv", "dev.tsv", "test.tsv", "spec.toml"] {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical across runs");
    }
    assert!(dir_a.join("manifest.json").exists());

    // a different seed changes the cache key
    let out_c = bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path().join("a"))
        .args(["--seed", "6"])
        .output()
        .unwrap();
    let dir_c = PathBuf::from(stdout_of(&out_c).trim());
    assert_ne!(dir_a.file_name(), dir_c.file_name());
}

// ── train → translate → evaluate round trip ─────────────────────────

fn gen_tiny_corpus(tmp: &Path) -> PathBuf {
    let spec = write_spec(tmp);
    let out = bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.join("data"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    PathBuf::from(stdout_of(&out).trim())
}

#[test]
fn train_translate_evaluate_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = gen_tiny_corpus(tmp.path());
    let ckpt = tmp.path().join("direct.ckpt");
    let curve = tmp.path().join("curve.csv");

    let out = bin()
        .args(["train", "--corpus"])
        .arg(&corpus)
        .args(["--source-langs", "source", "--target-lang", "target"])
        .args(["--hidden", "16", "--heads", "2", "--ff-size", "32", "--dropout", "0"])
        .args(["--max-steps", "40", "--eval-every", "20", "--patience", "50"])
        .args(["--batch-size", "8", "--peak-lr", "0.002", "--warmup-steps", "10"])
        .args(["--model-seed", "3", "--seed", "4"])
        .arg("--out")
        .arg(&ckpt)
        .arg("--curve")
        .arg(&curve)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("trained 40 steps"));
    assert!(ckpt.exists());
    assert!(ckpt.with_extension("manifest.json").exists());
    let curve_text = fs::read_to_string(&curve).unwrap();
    assert!(curve_text.starts_with("step,loss,dev_bleu"));
    assert_eq!(curve_text.lines().count(), 41, "header plus one row per step");

    // translate the dev sources (full-sentence and wait-k)
    let dev_text = fs::read_to_string(corpus.join("dev.tsv")).unwrap();
    let mut sources = Vec::new();
    for line in dev_text.lines().skip(1) {
        sources.push(line.split('\t').next().unwrap().to_string());
    }
    let stdin_text = sources.join("\n") + "\n";

    let mut cmd = bin();
    cmd.args(["translate", "--model"]).arg(&ckpt).arg("--full");
    let full = run_with_stdin(cmd, &stdin_text);
    assert!(full.status.success(), "{}", stderr_of(&full));
    let full_out = stdout_of(&full);
    assert_eq!(full_out.lines().count(), sources.len());

    let mut cmd = bin();
    cmd.args(["translate", "--model"]).arg(&ckpt).args(["--k", "2"]);
    let waitk = run_with_stdin(cmd, &stdin_text);
    assert!(waitk.status.success());

    // deterministic: same invocation, same output
    let mut cmd = bin();
    cmd.args(["translate", "--model"]).arg(&ckpt).arg("--full");
    let again = run_with_stdin(cmd, &stdin_text);
    assert_eq!(stdout_of(&again), full_out);

    // score hypotheses against dev references
    let hyp_path = tmp.path().join("hyp.txt");
    fs::write(&hyp_path, &full_out).unwrap();
    let ref_path = tmp.path().join("ref.txt");
    let refs: Vec<String> = dev_text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(3).unwrap().to_string())
        .collect();
    fs::write(&ref_path, refs.join("\n") + "\n").unwrap();

    let out = bin()
        .args(["evaluate", "--hyp"])
        .arg(&hyp_path)
        .arg("--ref")
        .arg(&ref_path)
        .arg("--json")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_of(&out).trim()).unwrap();
    assert!(json["bleu"].as_f64().unwrap() >= 0.0);
}

#[test]
fn evaluate_known_score() {
    let tmp = tempfile::tempdir().unwrap();
    let hyp = tmp.path().join("h.txt");
    let reference = tmp.path().join("r.txt");
    fs::write(&hyp, "the cat sat\n").unwrap();
    fs::write(&reference, "the cat sat down\n").unwrap();
    let out = bin()
        .args(["evaluate", "--hyp"])
        .arg(&hyp)
        .arg("--ref")
        .arg(&reference)
        .arg("--json")
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(stdout_of(&out).trim()).unwrap();
    let expect = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
    assert!((json["bleu"].as_f64().unwrap() - expect).abs() < 1e-9);

    // mismatched line counts are a user error
    fs::write(&hyp, "a\nb\n").unwrap();
    let out = bin()
        .args(["evaluate", "--hyp"])
        .arg(&hyp)
        .arg("--ref")
        .arg(&reference)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

// ── pipeline-translate and grid on rigged checkpoints ────────────────

/// Build deterministic checkpoints without training: the output layer is
/// rigged to emit one fixed token forever (never EOS), which keeps
/// pipelines busy and traces long.
fn rig_checkpoint(
    path: &Path,
    num_encoders: usize,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    favored: usize,
    seed: u64,
) {
    let cfg = ModelConfig {
        num_encoders,
        layers: 1,
        heads: 2,
        hidden: 8,
        ff_size: 16,
        src_vocab_size: src_vocab.len(),
        tgt_vocab_size: tgt_vocab.len(),
        dropout: 0.0,
        max_len: 32,
        causal_encoder: true,
        share_encoder_across_sources: true,
    };
    let mut model = TransformerModel::new(cfg, seed).unwrap();
    let out_w = model.store().id_of("out.w").unwrap();
    model.store_mut().value_mut(out_w).iter_mut().for_each(|v| *v = 0.0);
    let out_b = model.store().id_of("out.b").unwrap();
    {
        let b = model.store_mut().value_mut(out_b);
        b.iter_mut().for_each(|v| *v = 0.0);
        b[favored] = 8.0;
    }
    model.save_checkpoint(path, src_vocab, tgt_vocab).unwrap();
}

fn word_vocab(prefix: &str, n: usize) -> Vocab {
    let mut tokens: Vec<String> = estafette::corpus::vocab::RESERVED
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend((0..n).map(|i| format!("{prefix}{i}")));
    Vocab::from_tokens(tokens)
}

#[test]
fn pipeline_translate_trace_shows_effective_waitk_latency() {
    let tmp = tempfile::tempdir().unwrap();
    let src_v = word_vocab("s", 10);
    let piv_v = word_vocab("p", 10);
    let tgt_v = word_vocab("t", 10);
    let s2p_a = tmp.path().join("s2p_a.ckpt");
    let s2p_b = tmp.path().join("s2p_b.ckpt");
    let p2t = tmp.path().join("p2t.ckpt");
    rig_checkpoint(&s2p_a, 1, &src_v, &piv_v, 5, 1);
    rig_checkpoint(&s2p_b, 1, &src_v, &piv_v, 6, 2);
    rig_checkpoint(&p2t, 2, &piv_v, &tgt_v, 7, 3);

    let pipeline_toml = tmp.path().join("pipeline.toml");
    fs::write(
        &pipeline_toml,
        format!(
            "s2p = [{:?}, {:?}]\np2t = {:?}\n",
            s2p_a.display().to_string(),
            s2p_b.display().to_string(),
            p2t.display().to_string(),
        ),
    )
    .unwrap();

    let mut cmd = bin();
    cmd.args(["pipeline-translate", "--pipeline"])
        .arg(&pipeline_toml)
        .args(["--k-s2p", "2", "--k-p2t", "6", "--trace"]);
    let out = run_with_stdin(cmd, "s0 s1 s2 s3 s4 s5 s6 s7 s8 s9\n");
    assert!(out.status.success(), "{}", stderr_of(&out));
    let trace = stderr_of(&out);
    assert!(trace.contains("# effective wait-k: 8"));

    // count source reads before the first target write
    let mut reads = 0;
    let mut before_first_write = None;
    for line in trace.lines() {
        if line.contains("read source") {
            reads += 1;
        }
        if line.contains("target writes") && before_first_write.is_none() {
            before_first_write = Some(reads);
        }
    }
    let observed = before_first_write.expect("pipeline wrote target tokens");
    assert!(observed >= 8, "first write after only {observed} reads");

    let translation = stdout_of(&out);
    assert!(translation.trim().split_whitespace().all(|t| t == "t7"));
}

#[test]
fn grid_emits_25_cells_per_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let src_v = word_vocab("s", 10);
    let piv_v = word_vocab("p", 10);
    let tgt_v = word_vocab("t", 10);
    let direct = tmp.path().join("direct.ckpt");
    let s2p_a = tmp.path().join("s2p_a.ckpt");
    let p2t_a = tmp.path().join("p2t_a.ckpt");
    rig_checkpoint(&direct, 1, &src_v, &tgt_v, 4, 1);
    rig_checkpoint(&s2p_a, 1, &src_v, &piv_v, 5, 2);
    rig_checkpoint(&p2t_a, 1, &piv_v, &tgt_v, 6, 3);

    let grid_toml = tmp.path().join("grid.toml");
    fs::write(
        &grid_toml,
        format!(
            "direct = {:?}\n[[configs]]\nlabel = \"pivot_a\"\ns2p = [{:?}]\np2t = {:?}\n",
            direct.display().to_string(),
            s2p_a.display().to_string(),
            p2t_a.display().to_string(),
        ),
    )
    .unwrap();

    let test_tsv = tmp.path().join("test.tsv");
    let mut lines = vec!["source\ttarget".to_string()];
    for i in 0..6 {
        lines.push(format!("s{} s{} s{}\tt4 t4 t4", i % 10, (i + 1) % 10, (i + 2) % 10));
    }
    fs::write(&test_tsv, lines.join("\n") + "\n").unwrap();

    let out_dir = tmp.path().join("results");
    let out = bin()
        .args(["grid", "--models"])
        .arg(&grid_toml)
        .arg("--test")
        .arg(&test_tsv)
        .args(["--k", "1,2,4,6,8"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));

    let csv = fs::read_to_string(out_dir.join("grid.csv")).unwrap();
    let pivot_rows = csv.lines().filter(|l| l.starts_with("pivot_a,")).count();
    assert_eq!(pivot_rows, 25, "5x5 wait-k combinations");
    let direct_rows = csv.lines().filter(|l| l.starts_with("direct,")).count();
    assert_eq!(direct_rows, 5);

    // report round-trips the CSV
    let report_md = tmp.path().join("again.md");
    let out = bin()
        .args(["report", "--grid"])
        .arg(out_dir.join("grid.csv"))
        .arg("--out")
        .arg(&report_md)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let md_a = fs::read_to_string(out_dir.join("report.md")).unwrap();
    let md_b = fs::read_to_string(&report_md).unwrap();
    assert_eq!(md_a, md_b, "report command reproduces the grid's markdown");
}
