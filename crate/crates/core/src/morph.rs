//! Probing classifiers over frozen parser representations, the
//! most-frequent-value baseline, the case tagger, case augmentation and the
//! multitask forward pass.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_vocab, FeatureFilter, Index, Sentence, Token, Treebank, VocabConfig, Vocabulary, NO_CASE,
};
use crate::encoders::{Embedder, EncoderConfig, EncoderKind, SentenceEncoder};
use crate::error::{Error, Result};
use crate::numerics::{argmax, AdamConfig, AdamState, Graph, Mlp, ParamStore, Tensor, Var};
use crate::parser::{length_batches, Parser, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeFeature {
    Case,
    Gender,
    Number,
    /// The whole feature bundle as one tag, without the lemma.
    All,
}

impl ProbeFeature {
    /// Target value of a token, `None` when it is not annotated.
    pub fn value(self, token: &Token, filter: FeatureFilter) -> Option<String> {
        match self {
            ProbeFeature::Case => token.feature("Case").map(str::to_string),
            ProbeFeature::Gender => token.feature("Gender").map(str::to_string),
            ProbeFeature::Number => token.feature("Number").map(str::to_string),
            ProbeFeature::All => {
                let feats = filter.features(token);
                (!feats.is_empty()).then(|| {
                    feats
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect::<Vec<_>>()
                        .join("|")
                })
            }
        }
    }
}

impl fmt::Display for ProbeFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeFeature::Case => "Case",
            ProbeFeature::Gender => "Gender",
            ProbeFeature::Number => "Number",
            ProbeFeature::All => "All",
        })
    }
}

impl FromStr for ProbeFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case" => Ok(ProbeFeature::Case),
            "gender" => Ok(ProbeFeature::Gender),
            "number" => Ok(ProbeFeature::Number),
            "all" => Ok(ProbeFeature::All),
            _ => Err(Error::Config(format!("unknown probe feature {s:?}"))),
        }
    }
}

/// Which parser representation a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepresentationSource {
    /// Token embedding `[e(w); p]`.
    Embedding,
    /// Top-layer contextual encoding.
    Encoding,
}

impl fmt::Display for RepresentationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepresentationSource::Embedding => "embedding",
            RepresentationSource::Encoding => "encoder",
        })
    }
}

impl FromStr for RepresentationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(RepresentationSource::Embedding),
            "encoder" | "encoding" => Ok(RepresentationSource::Encoding),
            _ => Err(Error::Config(format!("unknown representation source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<String>,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Representations of every annotated token, read from the parser in
/// evaluation mode. The parser is only borrowed immutably.
pub fn extract_probe_data(
    parser: &Parser,
    treebank: &Treebank,
    feature: ProbeFeature,
    source: RepresentationSource,
) -> Result<ProbeDataset> {
    let vocab = parser.vocab();
    let mut data = ProbeDataset::default();
    for sentence in &treebank.sentences {
        let targets: Vec<Option<String>> = sentence
            .tokens
            .iter()
            .map(|t| feature.value(t, vocab.feature_filter))
            .collect();
        if targets.iter().all(Option::is_none) {
            continue;
        }
        let mut g = Graph::new(parser.params().values());
        let encoded = parser
            .network()
            .encode(&mut g, sentence, vocab, None::<&mut ChaCha8Rng>)?;
        let reps = match source {
            RepresentationSource::Embedding => &encoded.embeddings,
            RepresentationSource::Encoding => encoded.layers.last().expect("encoder has layers"),
        };
        for (i, target) in targets.into_iter().enumerate() {
            if let Some(t) = target {
                data.inputs.push(g.value(reps[i + 1]).data().to_vec());
                data.targets.push(t);
            }
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 100,
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

/// One-hidden-layer ReLU classifier over fixed vectors.
#[derive(Debug, Clone)]
pub struct Probe {
    params: ParamStore,
    mlp: Mlp,
    classes: Index,
}

impl Probe {
    pub fn classes(&self) -> &Index {
        &self.classes
    }

    pub fn predict(&self, input: &[f64]) -> &str {
        let mut g = Graph::new(self.params.values());
        let x = g.input(Tensor::vector(input.to_vec()));
        let y = self
            .mlp
            .forward(&mut g, x, None::<&mut ChaCha8Rng>)
            .expect("probe input width fixed at training");
        self.classes.item(argmax(g.value(y).data()))
    }

    /// Percentage of items whose target is predicted.
    pub fn accuracy(&self, data: &ProbeDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .inputs
            .iter()
            .zip(&data.targets)
            .filter(|(x, t)| self.predict(x) == t.as_str())
            .count();
        100.0 * correct as f64 / data.len() as f64
    }
}

pub fn probe_train(data: &ProbeDataset, config: &ProbeConfig) -> Result<Probe> {
    if data.is_empty() {
        return Err(Error::Data("probe dataset is empty".into()));
    }
    let mut values: Vec<&str> = data.targets.iter().map(String::as_str).collect();
    values.sort_unstable();
    values.dedup();
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "probe needs at least two classes, found {:?}",
            values
        )));
    }
    let width = data.inputs[0].len();
    if data.inputs.iter().any(|x| x.len() != width) {
        return Err(Error::Data("probe inputs differ in width".into()));
    }
    let classes = Index::from(values.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::new();
    let mlp = Mlp::new(&mut params, "probe", width, &[config.hidden], classes.len(), 0.0, &mut rng);
    let gold: Vec<usize> = data.targets.iter().map(|t| classes.get(t).unwrap()).collect();
    let mut adam = AdamState::new(config.adam);
    let ones = vec![1; data.len()];
    for _ in 0..config.epochs {
        for batch in length_batches(&ones, config.batch_size, &mut rng) {
            params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let (values, grads) = params.split();
                let mut g = Graph::new(values);
                let x = g.input(Tensor::vector(data.inputs[i].clone()));
                let y = mlp.forward(&mut g, x, None::<&mut ChaCha8Rng>)?;
                let loss = g.softmax_cross_entropy(y, gold[i])?;
                g.backward_scaled(loss, scale, grads);
            }
            adam.step(&mut params);
        }
    }
    Ok(Probe {
        params,
        mlp,
        classes,
    })
}

/// Most frequent value with ties broken toward the lexicographically
/// smallest.
fn majority(counts: &BTreeMap<String, usize>) -> Option<&str> {
    let mut best: Option<(&str, usize)> = None;
    for (v, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
}

/// Accuracy (percent) of predicting each form's most frequent training
/// value, falling back to the overall most frequent value for unseen forms.
pub fn most_frequent_baseline(
    train: &Treebank,
    eval: &Treebank,
    feature: ProbeFeature,
    filter: FeatureFilter,
) -> Result<f64> {
    let mut by_form: HashMap<&str, BTreeMap<String, usize>> = HashMap::new();
    let mut global: BTreeMap<String, usize> = BTreeMap::new();
    for t in train.tokens() {
        if let Some(v) = feature.value(t, filter) {
            *by_form.entry(&t.form).or_default().entry(v.clone()).or_default() += 1;
            *global.entry(v).or_default() += 1;
        }
    }
    let fallback = majority(&global)
        .ok_or_else(|| Error::Data(format!("no training token is annotated for {feature}")))?;
    let (mut total, mut correct) = (0usize, 0usize);
    for t in eval.tokens() {
        if let Some(v) = feature.value(t, filter) {
            total += 1;
            let guess = by_form
                .get(t.form.as_str())
                .and_then(majority)
                .unwrap_or(fallback);
            correct += usize::from(guess == v);
        }
    }
    if total == 0 {
        return Err(Error::Data(format!("no evaluation token is annotated for {feature}")));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub feature: ProbeFeature,
    pub source: RepresentationSource,
    pub accuracy: f64,
    pub baseline: f64,
    pub train_items: usize,
    pub eval_items: usize,
}

impl ProbeReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "feature\tsource\taccuracy\tbaseline\ttrain_items\teval_items\n{}\t{}\t{}\t{}\t{}\t{}\n",
            self.feature, self.source, self.accuracy, self.baseline, self.train_items, self.eval_items
        )
    }
}

/// Probes `source` representations for `feature`: trained on `train`,
/// scored on `eval`, reported next to the most-frequent baseline.
pub fn run_probe(
    parser: &Parser,
    train: &Treebank,
    eval: &Treebank,
    feature: ProbeFeature,
    source: RepresentationSource,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let train_data = extract_probe_data(parser, train, feature, source)?;
    let eval_data = extract_probe_data(parser, eval, feature, source)?;
    if eval_data.is_empty() {
        return Err(Error::Data(format!("no evaluation token is annotated for {feature}")));
    }
    let probe = probe_train(&train_data, config)?;
    let filter = parser.vocab().feature_filter;
    Ok(ProbeReport {
        feature,
        source,
        accuracy: probe.accuracy(&eval_data),
        baseline: most_frequent_baseline(train, eval, feature, filter)?,
        train_items: train_data.len(),
        eval_items: eval_data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub encoder: EncoderConfig,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Leading share of training sentences used for fitting.
    pub train_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            encoder: EncoderConfig {
                kind: EncoderKind::CharLstm,
                ..EncoderConfig::default()
            },
            hidden: vec![100, 100],
            dropout: 0.2,
            epochs: 20,
            patience: 5,
            batch_size: 32,
            train_fraction: 0.75,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

/// Sequence tagger predicting one case value (or `NoCase`) per token. It
/// owns its own vocabulary and parameters.
#[derive(Debug, Clone)]
pub struct CaseTagger {
    config: TaggerConfig,
    vocab: Vocabulary,
    params: ParamStore,
    embedder: Embedder,
    encoder: SentenceEncoder,
    head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerReport {
    /// `(epoch, mean loss, monitored accuracy)` per epoch.
    pub epochs: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

fn gold_case(token: &Token) -> &str {
    token.feature("Case").unwrap_or(NO_CASE)
}

impl CaseTagger {
    pub fn new(config: &TaggerConfig, vocab: Vocabulary) -> Result<Self> {
        config.encoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embedder = Embedder::new(&mut params, "tagger.embed", &config.encoder, &vocab, &mut rng)?;
        let encoder = SentenceEncoder::new(
            &mut params,
            "tagger.encoder",
            embedder.dim(),
            config.encoder.sentence_hidden,
            config.encoder.sentence_layers,
            &mut rng,
        );
        let head = Mlp::new(
            &mut params,
            "tagger.head",
            encoder.dim(),
            &config.hidden,
            vocab.cases.len(),
            config.dropout,
            &mut rng,
        );
        Ok(CaseTagger {
            config: config.clone(),
            vocab,
            params,
            embedder,
            encoder,
            head,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits<R: Rng>(&self, g: &mut Graph, sentence: &Sentence, mut rng: Option<&mut R>) -> Result<Vec<Var>> {
        let xs = self
            .embedder
            .embed_sentence(g, sentence, &self.vocab, rng.as_deref_mut())?;
        let hs = self.encoder.encode(g, &xs)?;
        hs[1..]
            .iter()
            .map(|&h| self.head.forward(g, h, rng.as_deref_mut()))
            .collect()
    }

    pub fn tag(&self, sentence: &Sentence) -> Result<Vec<String>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(self.params.values());
        let logits = self.logits(&mut g, sentence, None::<&mut ChaCha8Rng>)?;
        Ok(logits
            .iter()
            .map(|&l| self.vocab.cases.item(argmax(g.value(l).data())).to_string())
            .collect())
    }

    /// Percentage of tokens whose case (or `NoCase`) is predicted.
    pub fn accuracy(&self, treebank: &Treebank) -> Result<f64> {
        let (mut total, mut correct) = (0usize, 0usize);
        for s in &treebank.sentences {
            for (t, p) in s.tokens.iter().zip(self.tag(s)?) {
                total += 1;
                correct += usize::from(gold_case(t) == p);
            }
        }
        Ok(if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        })
    }

    fn accumulate<R: Rng>(&mut self, sentence: &Sentence, scale: f64, rng: &mut R) -> Result<f64> {
        let (values, grads) = self.params.split();
        let mut g = Graph::new(values);
        let xs = self
            .embedder
            .embed_sentence(&mut g, sentence, &self.vocab, Some(&mut *rng))?;
        let hs = self.encoder.encode(&mut g, &xs)?;
        let mut terms = Vec::with_capacity(sentence.len());
        for (t, &h) in sentence.tokens.iter().zip(&hs[1..]) {
            let logits = self.head.forward(&mut g, h, Some(&mut *rng))?;
            let gold = self.vocab.cases.get(gold_case(t)).unwrap_or(0);
            terms.push(g.softmax_cross_entropy(logits, gold)?);
        }
        let loss = g.add_all(&terms)?;
        g.backward_scaled(loss, scale, grads);
        Ok(g.scalar(loss))
    }
}

/// Fits a case tagger on the leading `train_fraction` of `train`. Early
/// stopping monitors case accuracy on `dev`, or on the remaining training
/// sentences when no dev set is given.
pub fn tagger_train(
    train: &Treebank,
    dev: Option<&Treebank>,
    config: &TaggerConfig,
) -> Result<(CaseTagger, TaggerReport)> {
    if !train.tokens().any(|t| t.feature("Case").is_some()) {
        return Err(Error::Data("no token in the training data is annotated for Case".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(Error::Config("train_fraction must lie in (0, 1]".into()));
    }
    let cut = ((train.len() as f64 * config.train_fraction).round() as usize).clamp(1, train.len());
    let fit = Treebank::new(train.sentences[..cut].to_vec());
    let rest = Treebank::new(train.sentences[cut..].to_vec());
    let monitor = match dev {
        Some(d) => d,
        None if !rest.is_empty() => &rest,
        None => &fit,
    };
    let vocab = build_vocab(&fit, VocabConfig::default())?;
    let mut tagger = CaseTagger::new(config, vocab)?;
    // kept at 32-bit precision so archives reproduce it exactly
    tagger.params.round_to_f32();
    let sentences: Vec<&Sentence> = fit.sentences.iter().filter(|s| !s.is_empty()).collect();
    let lengths: Vec<usize> = sentences.iter().map(|s| s.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for batch in length_batches(&lengths, config.batch_size, &mut rng) {
            tagger.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                total += tagger.accumulate(sentences[i], scale, &mut rng)?;
            }
            adam.step(&mut tagger.params);
        }
        tagger.params.round_to_f32();
        let acc = tagger.accuracy(monitor)?;
        epochs.push((epoch, total / sentences.len().max(1) as f64, acc));
        if best.as_ref().is_none_or(|(b, ..)| acc > *b) {
            best = Some((acc, epoch, tagger.params.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_accuracy, best_epoch, values) = best.expect("at least one epoch");
    tagger.params.restore(values)?;
    Ok((
        tagger,
        TaggerReport {
            epochs,
            best_epoch,
            best_accuracy,
        },
    ))
}

/// Where augmentation reads case values from.
#[derive(Debug, Clone, Copy)]
pub enum CaseSource<'a> {
    Gold,
    Tagger(&'a CaseTagger),
}

/// Copy of `treebank` with a case value (or `NoCase`) stored for every
/// token.
pub fn augment_with_case(treebank: &Treebank, source: CaseSource<'_>) -> Result<Treebank> {
    let mut out = treebank.clone();
    for s in &mut out.sentences {
        let cases: Vec<String> = match source {
            CaseSource::Gold => s.tokens.iter().map(|t| gold_case(t).to_string()).collect(),
            CaseSource::Tagger(tagger) => tagger.tag(s)?,
        };
        for (t, c) in s.tokens.iter_mut().zip(cases) {
            t.set_aug_case(&c);
        }
    }
    Ok(out)
}

/// Case logits per token and the arc score matrix of a multitask parser.
pub fn mtl_forward(parser: &Parser, sentence: &Sentence) -> Result<(Vec<Vec<f64>>, ScoreMatrix)> {
    let scores = parser.score_matrix(sentence)?;
    if sentence.is_empty() {
        return Ok((Vec::new(), scores));
    }
    let mut g = Graph::new(parser.params().values());
    let encoded = parser
        .network()
        .encode(&mut g, sentence, parser.vocab(), None::<&mut ChaCha8Rng>)?;
    let logits = parser
        .network()
        .case_logits(&mut g, &encoded)?
        .ok_or_else(|| Error::Config("parser was built without a case classifier".into()))?;
    Ok((
        logits.iter().map(|&l| g.value(l).data().to_vec()).collect(),
        scores,
    ))
}
