use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chardep::analysis::{
    aggregate_attention, attention_records_tsv, attention_tsv, confusion_diff, metrics_table,
    metrics_tsv, score, split_eval, Partition, PartitionContext, CORE_ARGUMENTS, FOCUS_LABELS,
};
use chardep::archive::{load_parser_file, save_parser_file, save_tagger_file, ArchiveMetadata};
use chardep::config::{Augmentation, ExperimentConfig};
use chardep::data::{build_vocab, read_conllu, write_conllu, ReadOptions, Treebank, VocabConfig};
use chardep::encoders::EncoderConfig;
use chardep::morph::{
    augment_with_case, run_probe, tagger_train, CaseSource, ProbeConfig, ProbeFeature,
    RepresentationSource, TaggerConfig,
};
use chardep::parser::{self, GateMode, Parser};
use chardep::{Error, Result};

use crate::{AnalysisMode, AnalyzeArgs, ConfigArgs, EvaluateArgs, Format, ParseArgs, ProbeArgs, TagCaseArgs, TrainArgs};

const MODEL_FILE: &str = "model.chardep";
const TAGGER_FILE: &str = "tagger.chardep";
const CONFIG_FILE: &str = "config.toml";

/// Existing path as given, else under the data directory.
fn resolve(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(dir) if path.is_relative() && !path.exists() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse(args.config.as_deref(), &args.overrides)?;
    if let Some(p) = &args.train {
        cfg.train = Some(p.clone());
    }
    if let Some(p) = &args.dev {
        cfg.dev = Some(p.clone());
    }
    if let Some(p) = &args.test {
        cfg.test = Some(p.clone());
    }
    if let Some(e) = &args.encoder {
        cfg.encoder = e.parse()?;
    }
    if let Some(a) = &args.augmentation {
        cfg.augmentation = a.parse()?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let dir = args.data_dir.as_deref();
    for slot in [&mut cfg.train, &mut cfg.dev, &mut cfg.test] {
        if let Some(p) = slot.as_mut() {
            *p = resolve(p, dir);
            if !p.is_file() {
                return Err(Error::Config(format!("treebank {} does not exist", p.display())));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_treebank(path: &Path, options: ReadOptions) -> Result<Treebank> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_conllu(BufReader::new(file), options).map_err(|e| match e {
        Error::Parse { line, message } => Error::Data(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

fn gold_treebank(path: &Path) -> Result<Treebank> {
    read_treebank(path, ReadOptions::default())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_treebank(path: &Path, tb: &Treebank) -> Result<()> {
    write_conllu(io::BufWriter::new(File::create(path)?), tb)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// Output file name next to `out` for a derived treebank, e.g.
/// `train.case.conllu`.
fn derived_name(role: &str, tag: &str) -> String {
    format!("{role}.{tag}.conllu")
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| Error::Config("no training treebank given (train = ...)".into()))?;
    let mut train_tb = gold_treebank(&train_path)?;
    let mut dev_tb = cfg.dev.as_deref().map(gold_treebank).transpose()?;
    let mut test_tb = cfg.test.as_deref().map(gold_treebank).transpose()?;
    match cfg.augmentation {
        Augmentation::GoldCase => {
            train_tb = augment_with_case(&train_tb, CaseSource::Gold)?;
            dev_tb = dev_tb.map(|d| augment_with_case(&d, CaseSource::Gold)).transpose()?;
            test_tb = test_tb.map(|d| augment_with_case(&d, CaseSource::Gold)).transpose()?;
        }
        Augmentation::PredictedCase => {
            if !train_tb.tokens().any(|t| t.aug_case().is_some()) {
                return Err(Error::Data(format!(
                    "{} carries no AugCase values; produce it with tag-case first",
                    train_path.display()
                )));
            }
        }
        Augmentation::None | Augmentation::Mtl => {}
    }

    create_dir(&args.out)?;
    let snapshot = cfg.snapshot();
    write_text(&args.out.join(CONFIG_FILE), &snapshot)?;

    let vocab = build_vocab(&train_tb, cfg.vocab_config())?;
    let mut model = Parser::new(cfg.parser_config(), vocab, cfg.seed)?;
    let mut log = format!(
        "# seed={} encoder={} augmentation={} parameters={}\n",
        cfg.seed,
        cfg.encoder,
        cfg.augmentation,
        model.params().num_scalars()
    );
    let report = parser::train(&mut model, &train_tb, dev_tb.as_ref(), &cfg.train_config(), |epoch| {
        eprintln!("{epoch}");
        log.push_str(&format!("{epoch}\n"));
    })?;
    log.push_str(&format!("# best_epoch={}\n", report.best_epoch));
    write_text(&args.out.join("train.log"), &log)?;

    let metadata = ArchiveMetadata {
        seed: cfg.seed,
        best_epoch: report.best_epoch,
        best_dev_uas: report.best_dev.map(|r| r.uas()),
        best_dev_las: report.best_dev.map(|r| r.las()),
        config_snapshot: snapshot,
    };
    let model_path = args.out.join(MODEL_FILE);
    save_parser_file(&model, &metadata, &model_path)?;
    println!("model\t{}", model_path.display());
    if let Some(best) = report.best_dev {
        println!("best_epoch\t{}\ndev_UAS\t{:.2}\ndev_LAS\t{:.2}", report.best_epoch, best.uas(), best.las());
    }
    if let Some(test) = test_tb {
        let pred = model.parse_treebank(&test)?;
        let scores = score(&test, &pred)?;
        write_treebank(&args.out.join("test.pred.conllu"), &pred)?;
        println!("test_UAS\t{:.2}\ntest_LAS\t{:.2}", scores.uas(), scores.las());
    }
    Ok(())
}

pub fn parse(args: ParseArgs) -> Result<()> {
    let (model, _) = load_parser_file(&args.model)?;
    let lenient = ReadOptions { require_tree: false };
    let input = match &args.input {
        Some(p) => read_treebank(p, lenient)?,
        None => {
            let mut text = String::new();
            io::stdin().read_to_string(&mut text)?;
            read_conllu(text.as_bytes(), lenient)?
        }
    };
    let features = if args.gold_case {
        augment_with_case(&input, CaseSource::Gold)?
    } else {
        if model.config().encoder.case_symbols && !input.tokens().any(|t| t.aug_case().is_some()) {
            eprintln!("chardep: warning: model reads case symbols but the input has no AugCase values");
        }
        input.clone()
    };
    let mut out = Vec::with_capacity(input.len());
    for (original, annotated) in input.sentences.iter().zip(&features.sentences) {
        out.push(model.predict(annotated)?.apply_to(original));
    }
    let out = Treebank::new(out);
    match &args.out {
        Some(p) => write_treebank(p, &out),
        None => write_conllu(io::stdout().lock(), &out),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let gold = gold_treebank(&args.gold)?;
    let pred = read_treebank(&args.pred, ReadOptions::default())?;
    let rows = score(&gold, &pred)?.metric_rows("overall", "all");
    let text = match args.format {
        Format::Table => metrics_table(&rows),
        Format::Tsv => metrics_tsv(&rows),
    };
    print!("{text}");
    Ok(())
}

pub fn probe(args: ProbeArgs) -> Result<()> {
    let feature: ProbeFeature = args.feature.parse()?;
    let source: RepresentationSource = args.source.parse()?;
    let (model, _) = load_parser_file(&args.model)?;
    let treebank = gold_treebank(&args.treebank)?;
    let (train_tb, eval_tb) = match &args.eval {
        Some(p) => (treebank, gold_treebank(p)?),
        None => {
            let cut = treebank.len() * 3 / 4;
            if cut == 0 || cut == treebank.len() {
                return Err(Error::Data("too few sentences to hold out a quarter for evaluation".into()));
            }
            let mut sentences = treebank.sentences;
            let held_out = sentences.split_off(cut);
            (Treebank::new(sentences), Treebank::new(held_out))
        }
    };
    let config = ProbeConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..ProbeConfig::default()
    };
    let report = run_probe(&model, &train_tb, &eval_tb, feature, source, &config)?;
    let text = report.to_tsv();
    print!("{text}");
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    Ok(())
}

fn tagger_config(cfg: &ExperimentConfig) -> TaggerConfig {
    let base = TaggerConfig::default();
    let train = cfg.train_config();
    TaggerConfig {
        encoder: EncoderConfig {
            kind: base.encoder.kind,
            case_symbols: false,
            ..cfg.encoder_config()
        },
        epochs: cfg.tagger_epochs,
        patience: cfg.patience,
        batch_size: train.batch_size.unwrap_or(base.batch_size),
        train_fraction: cfg.tagger_train_fraction,
        adam: train.adam,
        seed: cfg.seed,
        ..base
    }
}

pub fn tag_case(args: TagCaseArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| Error::Config("no training treebank given (train = ...)".into()))?;
    let train_tb = gold_treebank(&train_path)?;
    let mut sets = vec![("train", train_tb.clone())];
    if let Some(p) = &cfg.dev {
        sets.push(("dev", gold_treebank(p)?));
    }
    if let Some(p) = &cfg.test {
        sets.push(("test", gold_treebank(p)?));
    }
    create_dir(&args.out)?;
    write_text(&args.out.join(CONFIG_FILE), &cfg.snapshot())?;

    if cfg.augmentation == Augmentation::GoldCase {
        for (role, tb) in &sets {
            let path = args.out.join(derived_name(role, "gold-case"));
            write_treebank(&path, &augment_with_case(tb, CaseSource::Gold)?)?;
            println!("{role}\t{}", path.display());
        }
        return Ok(());
    }

    let dev = sets.iter().find(|(r, _)| *r == "dev").map(|(_, tb)| tb);
    let (tagger, report) = tagger_train(&train_tb, dev, &tagger_config(&cfg))?;
    let mut log = format!("# seed={}\n", cfg.seed);
    for (epoch, loss, acc) in &report.epochs {
        log.push_str(&format!("epoch={epoch} loss={loss} monitor_accuracy={acc}\n"));
    }
    log.push_str(&format!("# best_epoch={}\n", report.best_epoch));
    write_text(&args.out.join("tagger.log"), &log)?;
    let metadata = ArchiveMetadata {
        seed: cfg.seed,
        best_epoch: report.best_epoch,
        config_snapshot: cfg.snapshot(),
        ..ArchiveMetadata::default()
    };
    save_tagger_file(&tagger, &metadata, &args.out.join(TAGGER_FILE))?;
    for (role, tb) in &sets {
        let path = args.out.join(derived_name(role, "case"));
        write_treebank(&path, &augment_with_case(tb, CaseSource::Tagger(&tagger))?)?;
        println!("{role}\t{}\tcase_accuracy\t{:.2}", path.display(), tagger.accuracy(tb)?);
    }
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{mode} analysis needs {flag}")))
}

/// Named outputs go to `out` when given, else to standard output.
fn emit(out: Option<&Path>, files: &[(&str, String)]) -> Result<()> {
    match out {
        Some(dir) => {
            create_dir(dir)?;
            for (name, text) in files {
                let path = dir.join(name);
                write_text(&path, text)?;
                println!("{}", path.display());
            }
        }
        None => {
            for (i, (name, text)) in files.iter().enumerate() {
                if files.len() > 1 {
                    if i > 0 {
                        println!();
                    }
                    println!("## {name}");
                }
                print!("{text}");
            }
        }
    }
    io::stdout().flush()?;
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let gold = gold_treebank(&args.gold)?;
    let out = args.out.as_deref();
    let partition = match args.mode {
        AnalysisMode::Oov => Some((Partition::Oov, "oov")),
        AnalysisMode::Ambiguity => Some((Partition::Ambiguity, "ambiguity")),
        AnalysisMode::PerPos => Some((Partition::Pos, "per-pos")),
        _ => None,
    };
    if let Some((partition, name)) = partition {
        let pred = gold_treebank(required(&args.pred, "--pred", name)?)?;
        let train = gold_treebank(required(&args.train, "--train", name)?)?;
        let context = PartitionContext::from_training(
            &train,
            VocabConfig {
                word_cap: args.word_cap,
                ..VocabConfig::default()
            },
        )?;
        let report = split_eval(&gold, &pred, &context, partition)?;
        return emit(out, &[(&format!("{name}.tsv"), metrics_tsv(&report.metric_rows(name)))]);
    }
    match args.mode {
        AnalysisMode::ConfusionDiff => {
            let a = gold_treebank(required(&args.pred, "--pred", "confusion-diff")?)?;
            let b = gold_treebank(required(&args.pred_b, "--pred-b", "confusion-diff")?)?;
            let diff = confusion_diff(&gold, &a, &b, FOCUS_LABELS)?;
            emit(out, &[("confusion-diff.tsv", diff.to_tsv())])
        }
        AnalysisMode::Attention => {
            let (model, _) = load_parser_file(required(&args.model, "--model", "attention")?)?;
            let mut records = Vec::new();
            let mut learned = Vec::with_capacity(gold.len());
            let mut open = Vec::with_capacity(gold.len());
            for s in &gold.sentences {
                let (tree, recs) = model.attn_predict(s, GateMode::Learned)?;
                learned.push(tree.apply_to(s));
                records.extend(recs);
                open.push(model.predict_with_gate(s, GateMode::Open)?.apply_to(s));
            }
            let learned = score(&gold, &Treebank::new(learned))?;
            let open = score(&gold, &Treebank::new(open))?;
            let mut rows = learned.metric_rows("gate", "learned");
            rows.extend(open.metric_rows("gate", "open"));
            emit(
                out,
                &[
                    ("attention.tsv", attention_tsv(&aggregate_attention(&records, CORE_ARGUMENTS))),
                    ("attention-records.tsv", attention_records_tsv(&records)),
                    ("gate.tsv", metrics_tsv(&rows)),
                ],
            )
        }
        AnalysisMode::Oov | AnalysisMode::Ambiguity | AnalysisMode::PerPos => unreachable!("handled above"),
    }
}
