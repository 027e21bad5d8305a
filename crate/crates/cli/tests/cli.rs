use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

use chardep::analysis::score;
use chardep::data::{parse_conllu_str, read_conllu, ReadOptions, Treebank};
use chardep::synthetic::{syncretism_corpus, toy_treebank};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "word_dim=8",
    "pos_dim=4",
    "unit_dim=4",
    "subword_hidden=4",
    "sentence_hidden=8",
    "scorer_hidden=8",
    "char_dim=4",
    "char_max_width=3",
    "char_filters_per_width=2",
    "epochs=2",
];

fn chardep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chardep"))
        .args(args)
        .env_remove("CHARDEP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_tb(dir: &Path, name: &str, tb: &Treebank) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, tb.to_conllu_string()).unwrap();
    path
}

struct Fixture {
    dir: TempDir,
    train: PathBuf,
    dev: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let train = write_tb(dir.path(), "train.conllu", &toy_treebank(20, 1));
        let dev = write_tb(dir.path(), "dev.conllu", &toy_treebank(8, 2));
        Fixture { dir, train, dev }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train_model(&self, out: &str, encoder: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let mut args: Vec<String> = vec![
            "train".into(),
            "--train".into(),
            self.train.display().to_string(),
            "--dev".into(),
            self.dev.display().to_string(),
            "--encoder".into(),
            encoder.into(),
            "--out".into(),
            out.display().to_string(),
        ];
        for s in SMALL.iter().chain(extra) {
            args.push("--set".into());
            args.push(s.to_string());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        chardep(&refs)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_archive_log_and_snapshot() {
    let f = Fixture::new();
    let out = f.train_model("run", "char-lstm", &["seed=7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = f.path("run");
    assert!(run.join("model.chardep").is_file());
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    assert!(log.starts_with("# seed=7"));
    assert!(log.contains("epoch=1 loss="));
    assert!(log.contains("dev_las="));
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 7"));
    assert!(snapshot.contains("encoder = \"char-lstm\""));
    assert!(stdout(&out).contains("dev_LAS"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("a", "word", &[])), 0);
    assert_eq!(code(&f.train_model("b", "word", &[])), 0);
    for name in ["model.chardep", "train.log", "config.toml"] {
        let a = fs::read(f.path("a").join(name)).unwrap();
        let b = fs::read(f.path("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn parse_then_score_matches_evaluate() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("run", "char-cnn", &[])), 0);
    let model = f.path("run").join("model.chardep");
    let pred = f.path("pred.conllu");
    let out = chardep(&["parse", "-m", s(&model), s(&f.dev), "-o", s(&pred)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let gold_text = fs::read_to_string(&f.dev).unwrap();
    let pred_text = fs::read_to_string(&pred).unwrap();
    let gold = parse_conllu_str(&gold_text).unwrap();
    let parsed = parse_conllu_str(&pred_text).unwrap();
    // only HEAD and DEPREL change
    for (g, p) in gold_text.lines().zip(pred_text.lines()) {
        let (gc, pc): (Vec<&str>, Vec<&str>) = (g.split('\t').collect(), p.split('\t').collect());
        assert_eq!(gc.len(), pc.len());
        for (i, (a, b)) in gc.iter().zip(&pc).enumerate() {
            if i != 6 && i != 7 {
                assert_eq!(a, b);
            }
        }
    }

    let report = score(&gold, &parsed).unwrap();
    let eval = chardep(&["evaluate", s(&f.dev), s(&pred), "--format", "tsv"]);
    assert_eq!(code(&eval), 0);
    let text = stdout(&eval);
    assert!(text.contains(&format!("overall\tall\tUAS\t{}\n", report.uas())), "{text}");
    assert!(text.contains(&format!("overall\tall\tLAS\t{}\n", report.las())), "{text}");
}

#[test]
fn parse_accepts_unannotated_and_empty_input() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("run", "word", &[])), 0);
    let model = f.path("run").join("model.chardep");

    let mut child = Command::new(env!("CARGO_BIN_EXE_chardep"))
        .args(["parse", "-m", s(&model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());

    let raw = "1\tdogs\t_\tNOUN\t_\t_\t_\t_\t_\t_\n2\tbark\t_\tVERB\t_\t_\t_\t_\t_\t_\n\n";
    let input = f.path("raw.conllu");
    fs::write(&input, raw).unwrap();
    let out = chardep(&["parse", "-m", s(&model), s(&input)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tb = read_conllu(out.stdout.as_slice(), ReadOptions::default()).unwrap();
    assert_eq!(tb.len(), 1);
    assert_eq!(tb.sentences[0].len(), 2);
}

#[test]
fn exit_codes_follow_error_classes() {
    let f = Fixture::new();
    // configuration
    let unknown = chardep(&["train", "--train", s(&f.train), "--set", "nonsense=1", "-o", s(&f.path("x"))]);
    assert_eq!(code(&unknown), 2);
    let missing = chardep(&["train", "--train", "absent.conllu", "-o", s(&f.path("x"))]);
    assert_eq!(code(&missing), 2);
    assert_eq!(code(&chardep(&["train"])), 2);
    // data
    let broken = f.path("broken.conllu");
    fs::write(&broken, "1\tdogs\t_\tNOUN\t_\t_\t5\tnsubj\t_\t_\n\n").unwrap();
    let bad_data = chardep(&["train", "--train", s(&broken), "-o", s(&f.path("x"))]);
    assert_eq!(code(&bad_data), 3);
    let misaligned = chardep(&["evaluate", s(&f.train), s(&f.dev)]);
    assert_eq!(code(&misaligned), 3);
    // archive
    assert_eq!(code(&f.train_model("run", "word", &[])), 0);
    let model = f.path("run").join("model.chardep");
    let mut bytes = fs::read(&model).unwrap();
    bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
    let future = f.path("future.chardep");
    fs::write(&future, &bytes).unwrap();
    let out = chardep(&["parse", "-m", s(&future), s(&f.dev)]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 9"));
    let garbage = f.path("garbage.chardep");
    fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(code(&chardep(&["parse", "-m", s(&garbage), s(&f.dev)])), 4);
}

#[test]
fn data_dir_resolves_relative_paths() {
    let f = Fixture::new();
    let out = Command::new(env!("CARGO_BIN_EXE_chardep"))
        .args(["train", "--train", "train.conllu", "--encoder", "word", "-o"])
        .arg(f.path("run"))
        .args(SMALL.iter().flat_map(|s| ["--set", s]))
        .env("CHARDEP_DATA_DIR", f.dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn analyses_write_tables() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("a", "word", &[])), 0);
    assert_eq!(code(&f.train_model("b", "char-lstm", &[])), 0);
    let pa = f.path("a.conllu");
    let pb = f.path("b.conllu");
    for (m, p) in [("a", &pa), ("b", &pb)] {
        let model = f.path(m).join("model.chardep");
        assert_eq!(code(&chardep(&["parse", "-m", s(&model), s(&f.dev), "-o", s(p)])), 0);
    }
    let out_dir = f.path("analysis");
    for mode in ["oov", "ambiguity", "per-pos"] {
        let out = chardep(&[
            "analyze", mode, "--gold", s(&f.dev), "--pred", s(&pa), "--train", s(&f.train), "-o", s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        let table = fs::read_to_string(out_dir.join(format!("{mode}.tsv"))).unwrap();
        assert!(table.starts_with("scope\tgroup\tmetric\tvalue\n"));
    }
    let out = chardep(&["analyze", "confusion-diff", "--gold", s(&f.dev), "--pred", s(&pa)]);
    assert_eq!(code(&out), 2);
    let out = chardep(&["analyze", "confusion-diff", "--gold", s(&f.dev), "--pred", s(&pa), "--pred-b", s(&pa)]);
    assert_eq!(code(&out), 0);
    let diff = stdout(&out);
    assert!(diff.starts_with("gold\\pred\troot"));
    assert!(diff.lines().skip(1).all(|l| l.split('\t').skip(1).all(|c| c == "0")));
}

#[test]
fn attention_analysis_reports_gate_ablation() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("run", "oracle", &["attention=true"])), 0);
    let model = f.path("run").join("model.chardep");
    let out = chardep(&["analyze", "attention", "--gold", s(&f.dev), "-m", s(&model), "-o", s(&f.path("att"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let gate = fs::read_to_string(f.path("att").join("gate.tsv")).unwrap();
    assert!(gate.contains("gate\tlearned\tLAS"));
    assert!(gate.contains("gate\topen\tLAS"));
    let records = fs::read_to_string(f.path("att").join("attention-records.tsv")).unwrap();
    assert_eq!(records.lines().count(), 1 + toy_treebank(8, 2).num_tokens());
}

#[test]
fn probe_reports_baseline_and_rejects_missing_feature() {
    let f = Fixture::new();
    assert_eq!(code(&f.train_model("run", "oracle", &[])), 0);
    let model = f.path("run").join("model.chardep");
    let out = chardep(&[
        "probe", "-m", s(&model), "--treebank", s(&f.train), "--eval", s(&f.dev), "--feature", "case", "--epochs", "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("feature\tsource\taccuracy\tbaseline"));
    assert!(text.contains("\nCase\tembedding\t"));
    let out = chardep(&["probe", "-m", s(&model), "--treebank", s(&f.train), "--feature", "gender"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn tag_case_annotates_every_token() {
    let dir = TempDir::new().unwrap();
    let train = write_tb(dir.path(), "train.conllu", &syncretism_corpus(16, 1, "t"));
    let dev = write_tb(dir.path(), "dev.conllu", &syncretism_corpus(6, 2, "d"));
    let mut args = vec!["tag-case", "--train", s(&train), "--dev", s(&dev), "--augmentation", "predicted-case"];
    let out_dir = dir.path().join("tagged");
    args.extend(["-o", s(&out_dir)]);
    let mut extra: Vec<String> = Vec::new();
    for kv in SMALL.iter().chain(&["tagger_epochs=2"]) {
        extra.push("--set".into());
        extra.push(kv.to_string());
    }
    args.extend(extra.iter().map(String::as_str));
    let out = chardep(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("tagger.chardep").is_file());
    for role in ["train", "dev"] {
        let tb = parse_conllu_str(&fs::read_to_string(out_dir.join(format!("{role}.case.conllu"))).unwrap()).unwrap();
        assert!(tb.tokens().all(|t| t.aug_case().is_some()));
    }

    let gold_dir = dir.path().join("gold");
    let out = chardep(&["tag-case", "--train", s(&train), "--augmentation", "gold-case", "-o", s(&gold_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!gold_dir.join("tagger.chardep").exists());
    let tb = parse_conllu_str(&fs::read_to_string(gold_dir.join("train.gold-case.conllu")).unwrap()).unwrap();
    for t in tb.tokens() {
        assert_eq!(t.aug_case(), Some(t.feature("Case").unwrap_or("NoCase")));
    }

    // the predicted-case files train a case-augmented parser
    let run = dir.path().join("run");
    let mut args = vec![
        "train".to_string(),
        "--train".into(),
        out_dir.join("train.case.conllu").display().to_string(),
        "--augmentation".into(),
        "predicted-case".into(),
        "-o".into(),
        run.display().to_string(),
    ];
    for kv in SMALL {
        args.push("--set".into());
        args.push(kv.to_string());
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(code(&chardep(&refs)), 0);
    let plain = chardep(&["train", "--train", s(&train), "--augmentation", "predicted-case", "-o", s(&run)]);
    assert_eq!(code(&plain), 3);
}
