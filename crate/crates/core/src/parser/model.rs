use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{feature_ids, feature_keys, BoundAttention, MorphAttention};
use super::cle::{decode_cle, decode_cle_single_root};
use super::scorers::{BoundHeadScorer, BoundLabelScorer, HeadScorer, LabelScorer};
use super::scores::ScoreMatrix;
use crate::data::{Sentence, Token, Treebank, Vocabulary, NO_CASE};
use crate::encoders::{Embedder, EncoderConfig, EncoderKind, SentenceEncoder};
use crate::error::{Error, Result};
use crate::numerics::{argmax, dropout, Graph, Linear, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    pub encoder: EncoderConfig,
    pub scorer_hidden: usize,
    /// Restrict decoding to trees with exactly one root dependent.
    pub single_root: bool,
    /// Gated attention over head morphology (oracle encoder only).
    pub attention: bool,
    /// 1-based encoder layer feeding an auxiliary case classifier.
    pub case_layer: Option<usize>,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            encoder: EncoderConfig::default(),
            scorer_hidden: 100,
            single_root: false,
            attention: false,
            case_layer: None,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.scorer_hidden == 0 {
            return Err(Error::Config("scorer_hidden must be positive".into()));
        }
        if self.attention && self.encoder.kind != EncoderKind::Oracle {
            return Err(Error::Config("attention requires the oracle encoder".into()));
        }
        if let Some(l) = self.case_layer {
            if l == 0 || l >= self.encoder.sentence_layers {
                return Err(Error::Config(format!(
                    "case layer {l} must lie below the top of {} encoder layers",
                    self.encoder.sentence_layers
                )));
            }
        }
        Ok(())
    }
}

/// Predicted heads (1-based, 0 = root) and labels per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParseTree {
    /// Copy of `sentence` with the head and relation columns replaced.
    pub fn apply_to(&self, sentence: &Sentence) -> Sentence {
        let mut out = sentence.clone();
        for ((t, &h), l) in out.tokens.iter_mut().zip(&self.heads).zip(&self.labels) {
            t.head = h;
            t.deprel = l.clone();
        }
        out
    }
}

/// Attention weights over the features of the head chosen for one
/// dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub sentence: String,
    pub dependent: usize,
    pub head: usize,
    pub gold_head: usize,
    pub gold_label: String,
    pub pred_label: String,
    /// Gold case of the dependent, or `NoCase`.
    pub dependent_case: String,
    pub weights: Vec<(String, f64)>,
}

/// How the attention gate is evaluated at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    /// Gate fixed to one, so `z_j = h_j`.
    Open,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub embedder: Embedder,
    pub encoder: SentenceEncoder,
    pub head_scorer: HeadScorer,
    pub label_scorer: LabelScorer,
    pub attention: Option<MorphAttention>,
    pub case_classifier: Option<Linear>,
    case_layer: Option<usize>,
    dropout: f64,
}

/// Tape nodes of an encoded sentence; index 0 is the root.
#[derive(Debug, Clone)]
pub struct EncodedSentence {
    pub embeddings: Vec<Var>,
    pub layers: Vec<Vec<Var>>,
}

impl EncodedSentence {
    pub fn top(&self) -> &[Var] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Loss terms of one sentence, each a scalar node.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub parser: Var,
    pub case: Option<Var>,
    pub total: Var,
}

/// Per-pair attended head representations for every dependent.
struct AttendedPairs {
    /// `z[i-1][j]` for dependent `i` and head `j` (`None` at `j == i`).
    z: Vec<Vec<Option<Var>>>,
    weights: Vec<Vec<Option<Var>>>,
}

impl Network {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ParserConfig,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.labels.is_empty() {
            return Err(Error::Data("vocabulary has no dependency labels".into()));
        }
        let enc = &config.encoder;
        let embedder = Embedder::new(store, "embed", enc, vocab, rng)?;
        let encoder = SentenceEncoder::new(
            store,
            "encoder",
            embedder.dim(),
            enc.sentence_hidden,
            enc.sentence_layers,
            rng,
        );
        let dim = encoder.dim();
        let head_scorer = HeadScorer::new(store, "arc", dim, config.scorer_hidden, rng);
        let label_scorer =
            LabelScorer::new(store, "label", dim, config.scorer_hidden, vocab.labels.len(), rng);
        let attention = config
            .attention
            .then(|| MorphAttention::new(store, "attention", vocab.morphemes.len(), dim, rng));
        let case_classifier = config
            .case_layer
            .map(|_| Linear::new(store, "case", dim, vocab.cases.len(), true, rng));
        Ok(Network {
            embedder,
            encoder,
            head_scorer,
            label_scorer,
            attention,
            case_classifier,
            case_layer: config.case_layer,
            dropout: enc.dropout,
        })
    }

    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        vocab: &Vocabulary,
        rng: Option<&mut R>,
    ) -> Result<EncodedSentence> {
        let embeddings = self.embedder.embed_sentence(g, sentence, vocab, rng)?;
        let layers = self.encoder.encode_layers(g, &embeddings)?;
        Ok(EncodedSentence { embeddings, layers })
    }

    fn head_token(sentence: &Sentence, j: usize) -> Option<&Token> {
        (j > 0).then(|| &sentence.tokens[j - 1])
    }

    fn attend_pairs(
        &self,
        g: &mut Graph,
        att: &MorphAttention,
        bound: &BoundAttention,
        hs: &[Var],
        sentence: &Sentence,
        vocab: &Vocabulary,
        gate: GateMode,
    ) -> Result<AttendedPairs> {
        let n = sentence.len();
        let features: Vec<Vec<Var>> = (0..=n)
            .map(|j| {
                let ids = feature_ids(Self::head_token(sentence, j), vocab);
                att.embed_features(g, &ids)
            })
            .collect();
        let head_terms = match gate {
            GateMode::Learned => hs
                .iter()
                .map(|&h| bound.gate_head_term(g, h))
                .collect::<Result<Vec<_>>>()?,
            GateMode::Open => Vec::new(),
        };
        let ones = g.input(Tensor::filled(&[g.value(hs[0]).len()], 1.0));
        let mut z = vec![vec![None; n + 1]; n];
        let mut weights = vec![vec![None; n + 1]; n];
        for i in 1..=n {
            let q = bound.query(g, hs[i])?;
            for j in (0..=n).filter(|&j| j != i) {
                let (m, k) = bound.attend(g, q, &features[j])?;
                let zj = match gate {
                    GateMode::Learned => bound.combine(g, hs[j], head_terms[j], m)?.0,
                    GateMode::Open => {
                        let diff = g.sub(hs[j], m)?;
                        let scaled = g.mul(ones, diff)?;
                        g.add(m, scaled)?
                    }
                };
                z[i - 1][j] = Some(zj);
                weights[i - 1][j] = Some(k);
            }
        }
        Ok(AttendedPairs { z, weights })
    }

    /// Arc score node per dependent over candidate heads `j != i`, in
    /// increasing `j`, plus the attended pairs when attention is active.
    fn arc_rows(
        &self,
        g: &mut Graph,
        hs: &[Var],
        sentence: &Sentence,
        vocab: &Vocabulary,
        arcs: &BoundHeadScorer,
        gate: GateMode,
    ) -> Result<(Vec<Var>, Option<AttendedPairs>)> {
        let n = sentence.len();
        let deps = hs[1..]
            .iter()
            .map(|&h| arcs.project_dep(g, h))
            .collect::<Result<Vec<_>>>()?;
        match &self.attention {
            None => {
                let heads = hs
                    .iter()
                    .map(|&h| arcs.project_head(g, h))
                    .collect::<Result<Vec<_>>>()?;
                let matrix = arcs.matrix(g, &deps, &heads)?;
                let rows = (1..=n)
                    .map(|i| {
                        let idx = (0..=n)
                            .filter(|&j| j != i)
                            .map(|j| (i - 1) * (n + 1) + j)
                            .collect();
                        g.gather(matrix, idx)
                    })
                    .collect();
                Ok((rows, None))
            }
            Some(att) => {
                let bound = att.bind(g);
                let pairs = self.attend_pairs(g, att, &bound, hs, sentence, vocab, gate)?;
                let mut rows = Vec::with_capacity(n);
                for i in 1..=n {
                    let mut scores = Vec::with_capacity(n);
                    for j in (0..=n).filter(|&j| j != i) {
                        let z = pairs.z[i - 1][j].expect("pair computed");
                        let hp = arcs.project_head(g, z)?;
                        scores.push(arcs.pair(g, deps[i - 1], hp)?);
                    }
                    rows.push(g.concat(&scores));
                }
                Ok((rows, Some(pairs)))
            }
        }
    }

    fn label_logits(
        &self,
        g: &mut Graph,
        hs: &[Var],
        labels: &BoundLabelScorer,
        pairs: Option<&AttendedPairs>,
        dep: usize,
        head: usize,
    ) -> Result<Var> {
        let head_input = match pairs {
            Some(p) => p.z[dep - 1][head].expect("pair computed"),
            None => hs[head],
        };
        let d = labels.project_dep(g, hs[dep])?;
        let h = labels.project_head(g, head_input)?;
        labels.logits(g, d, h)
    }

    fn scorer_inputs<R: Rng>(
        &self,
        g: &mut Graph,
        encoded: &EncodedSentence,
        mut rng: Option<&mut R>,
    ) -> Result<Vec<Var>> {
        encoded
            .top()
            .iter()
            .map(|&h| dropout(g, h, self.dropout, rng.as_deref_mut()))
            .collect()
    }

    /// Head plus label cross-entropy summed over tokens, labels conditioned
    /// on gold heads, and the case loss when a case classifier exists.
    pub fn loss<R: Rng>(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        vocab: &Vocabulary,
        mut rng: Option<&mut R>,
    ) -> Result<LossParts> {
        let n = sentence.len();
        if n == 0 {
            return Err(Error::Data("cannot compute the loss of an empty sentence".into()));
        }
        let encoded = self.encode(g, sentence, vocab, rng.as_deref_mut())?;
        let hs = self.scorer_inputs(g, &encoded, rng)?;
        let arcs = self.head_scorer.bind(g);
        let labels = self.label_scorer.bind(g);
        let (rows, pairs) = self.arc_rows(g, &hs, sentence, vocab, &arcs, GateMode::Learned)?;
        let mut terms = Vec::with_capacity(2 * n);
        for (i, token) in (1..=n).zip(&sentence.tokens) {
            let gold = token.head;
            if gold > n || gold == i {
                return Err(Error::Data(format!("token {i} has invalid head {gold}")));
            }
            let position = if gold < i { gold } else { gold - 1 };
            terms.push(g.softmax_cross_entropy(rows[i - 1], position)?);
            let label = vocab.labels.get(&token.deprel).ok_or_else(|| {
                Error::Data(format!("label {:?} is not in the vocabulary", token.deprel))
            })?;
            let logits = self.label_logits(g, &hs, &labels, pairs.as_ref(), i, gold)?;
            terms.push(g.softmax_cross_entropy(logits, label)?);
        }
        let parser = g.add_all(&terms)?;
        let case = match self.case_logits(g, &encoded)? {
            None => None,
            Some(logits) => {
                let ce = sentence
                    .tokens
                    .iter()
                    .zip(logits)
                    .map(|(t, l)| g.softmax_cross_entropy(l, case_class(t, vocab)))
                    .collect::<Result<Vec<_>>>()?;
                Some(g.add_all(&ce)?)
            }
        };
        let total = match case {
            Some(c) => g.add(parser, c)?,
            None => parser,
        };
        Ok(LossParts {
            parser,
            case,
            total,
        })
    }

    /// Case logits for tokens `1..=n` read from the configured layer.
    pub fn case_logits(&self, g: &mut Graph, encoded: &EncodedSentence) -> Result<Option<Vec<Var>>> {
        let (Some(classifier), Some(layer)) = (&self.case_classifier, self.case_layer) else {
            return Ok(None);
        };
        let bound = classifier.bind(g);
        encoded.layers[layer - 1][1..]
            .iter()
            .map(|&h| bound.apply(g, h))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn decode(&self, scores: &ScoreMatrix, single_root: bool) -> Vec<usize> {
        if single_root {
            decode_cle_single_root(scores)
        } else {
            decode_cle(scores)
        }
    }

    fn predict_inner(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        vocab: &Vocabulary,
        single_root: bool,
        gate: GateMode,
    ) -> Result<(ParseTree, Option<Vec<AttentionRecord>>, ScoreMatrix)> {
        let n = sentence.len();
        if n == 0 {
            return Ok((
                ParseTree {
                    heads: vec![],
                    labels: vec![],
                },
                self.attention.as_ref().map(|_| Vec::new()),
                ScoreMatrix::new(0),
            ));
        }
        let encoded = self.encode(g, sentence, vocab, None::<&mut ChaCha8Rng>)?;
        let hs = encoded.top().to_vec();
        let arcs = self.head_scorer.bind(g);
        let labels = self.label_scorer.bind(g);
        let (rows, pairs) = self.arc_rows(g, &hs, sentence, vocab, &arcs, gate)?;
        let mut scores = ScoreMatrix::new(n);
        for i in 1..=n {
            let row = g.value(rows[i - 1]).data();
            for (&v, j) in row.iter().zip((0..=n).filter(|&j| j != i)) {
                scores.set(i, j, v);
            }
        }
        let heads = self.decode(&scores, single_root);
        let mut label_names = Vec::with_capacity(n);
        for (i, &h) in (1..=n).zip(&heads) {
            let logits = self.label_logits(g, &hs, &labels, pairs.as_ref(), i, h)?;
            label_names.push(vocab.labels.item(argmax(g.value(logits).data())).to_string());
        }
        let tree = ParseTree {
            heads,
            labels: label_names,
        };
        let records = pairs.map(|p| {
            let id = sentence.sent_id().unwrap_or("").to_string();
            (1..=n)
                .map(|i| {
                    let token = &sentence.tokens[i - 1];
                    let head = tree.heads[i - 1];
                    let k = g.value(p.weights[i - 1][head].expect("pair computed")).data();
                    let keys = feature_keys(Self::head_token(sentence, head), vocab);
                    AttentionRecord {
                        sentence: id.clone(),
                        dependent: i,
                        head,
                        gold_head: token.head,
                        gold_label: token.deprel.clone(),
                        pred_label: tree.labels[i - 1].clone(),
                        dependent_case: token.feature("Case").unwrap_or(NO_CASE).to_string(),
                        weights: keys.into_iter().zip(k.iter().copied()).collect(),
                    }
                })
                .collect()
        });
        Ok((tree, records, scores))
    }
}

fn case_class(token: &Token, vocab: &Vocabulary) -> usize {
    vocab
        .cases
        .get(token.feature("Case").unwrap_or(NO_CASE))
        .unwrap_or(0)
}

/// A parser: configuration, vocabulary, parameters and network layout.
#[derive(Debug, Clone)]
pub struct Parser {
    config: ParserConfig,
    vocab: Vocabulary,
    params: ParamStore,
    network: Network,
}

impl Parser {
    /// Fresh parameters drawn from a generator seeded with `seed`.
    pub fn new(config: ParserConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let network = Network::new(&mut params, &config, &vocab, &mut rng)?;
        Ok(Parser {
            config,
            vocab,
            params,
            network,
        })
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Sentence loss value without touching gradients.
    pub fn loss_value(&self, sentence: &Sentence) -> Result<f64> {
        let mut g = Graph::new(self.params.values());
        let parts = self
            .network
            .loss(&mut g, sentence, &self.vocab, None::<&mut ChaCha8Rng>)?;
        Ok(g.scalar(parts.total))
    }

    /// Adds `scale · ∇loss` to the gradient buffers and returns the loss.
    pub fn accumulate<R: Rng>(
        &mut self,
        sentence: &Sentence,
        scale: f64,
        rng: Option<&mut R>,
    ) -> Result<f64> {
        let (values, grads) = self.params.split();
        let mut g = Graph::new(values);
        let parts = self.network.loss(&mut g, sentence, &self.vocab, rng)?;
        g.backward_scaled(parts.total, scale, grads);
        Ok(g.scalar(parts.total))
    }

    pub fn score_matrix(&self, sentence: &Sentence) -> Result<ScoreMatrix> {
        let mut g = Graph::new(self.params.values());
        let (_, _, s) = self.network.predict_inner(
            &mut g,
            sentence,
            &self.vocab,
            self.config.single_root,
            GateMode::Learned,
        )?;
        Ok(s)
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<ParseTree> {
        self.predict_with_gate(sentence, GateMode::Learned)
    }

    pub fn predict_with_gate(&self, sentence: &Sentence, gate: GateMode) -> Result<ParseTree> {
        let mut g = Graph::new(self.params.values());
        let (tree, _, _) =
            self.network
                .predict_inner(&mut g, sentence, &self.vocab, self.config.single_root, gate)?;
        Ok(tree)
    }

    /// Prediction plus one attention record per dependent; errors when the
    /// parser has no attention layer.
    pub fn attn_predict(
        &self,
        sentence: &Sentence,
        gate: GateMode,
    ) -> Result<(ParseTree, Vec<AttentionRecord>)> {
        let mut g = Graph::new(self.params.values());
        let (tree, records, _) =
            self.network
                .predict_inner(&mut g, sentence, &self.vocab, self.config.single_root, gate)?;
        let records =
            records.ok_or_else(|| Error::Config("parser was built without attention".into()))?;
        Ok((tree, records))
    }

    pub fn parse_treebank(&self, treebank: &Treebank) -> Result<Treebank> {
        treebank
            .sentences
            .iter()
            .map(|s| Ok(self.predict(s)?.apply_to(s)))
            .collect::<Result<Vec<_>>>()
            .map(Treebank::new)
    }

    /// Case value per token from the auxiliary classifier.
    pub fn predict_case(&self, sentence: &Sentence) -> Result<Vec<String>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(self.params.values());
        let encoded = self
            .network
            .encode(&mut g, sentence, &self.vocab, None::<&mut ChaCha8Rng>)?;
        let logits = self
            .network
            .case_logits(&mut g, &encoded)?
            .ok_or_else(|| Error::Config("parser was built without a case classifier".into()))?;
        Ok(logits
            .iter()
            .map(|&l| self.vocab.cases.item(argmax(g.value(l).data())).to_string())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, VocabConfig};
    use crate::numerics::CharCnnConfig;

    pub(crate) fn toy_config(kind: EncoderKind) -> ParserConfig {
        ParserConfig {
            encoder: EncoderConfig {
                kind,
                word_dim: 6,
                pos_dim: 3,
                unit_dim: 4,
                subword_hidden: 3,
                char_cnn: CharCnnConfig {
                    char_dim: 3,
                    widths: vec![1, 2],
                    filters_per_width: 2,
                    highway_layers: 1,
                },
                sentence_hidden: 4,
                ..EncoderConfig::default()
            },
            scorer_hidden: 5,
            ..ParserConfig::default()
        }
    }

    fn sentence() -> Sentence {
        Sentence::new(vec![
            Token::new("dogs", "NOUN", 2, "nsubj")
                .with_lemma("dog")
                .with_feats(&[("Case", "Nom"), ("Number", "Plur")]),
            Token::new("chase", "VERB", 0, "root").with_lemma("chase"),
            Token::new("cats", "NOUN", 2, "obj")
                .with_lemma("cat")
                .with_feats(&[("Case", "Acc"), ("Number", "Plur")]),
        ])
    }

    fn parser(config: ParserConfig) -> Parser {
        let tb = Treebank::new(vec![sentence()]);
        let vocab = build_vocab(&tb, VocabConfig::default()).unwrap();
        Parser::new(config, vocab, 11).unwrap()
    }

    #[test]
    fn predictions_are_trees_and_deterministic() {
        for kind in EncoderKind::ALL {
            let p = parser(toy_config(kind));
            let t = p.predict(&sentence()).unwrap();
            assert!(crate::data::check_heads(&t.heads).is_none(), "{kind}");
            assert_eq!(t, p.predict(&sentence()).unwrap());
        }
    }

    #[test]
    fn empty_sentence_predicts_empty_tree() {
        let p = parser(toy_config(EncoderKind::Word));
        let t = p.predict(&Sentence::default()).unwrap();
        assert!(t.heads.is_empty());
    }

    #[test]
    fn zero_output_layers_give_uniform_loss() {
        let mut p = parser(toy_config(EncoderKind::CharLstm));
        let (v, out) = (p.network.head_scorer.v, p.network.label_scorer.out.w);
        p.params_mut().value_mut(v).fill(0.0);
        p.params_mut().value_mut(out).fill(0.0);
        let loss = p.loss_value(&sentence()).unwrap();
        let expected = 3.0 * (3.0f64.ln() + 3.0f64.ln());
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn attention_requires_oracle() {
        let mut c = toy_config(EncoderKind::Word);
        c.attention = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn attention_records_are_normalized() {
        let mut c = toy_config(EncoderKind::Oracle);
        c.attention = true;
        let p = parser(c);
        let (tree, records) = p.attn_predict(&sentence(), GateMode::Learned).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            let sum: f64 = r.weights.iter().map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(tree.heads[r.dependent - 1], r.head);
        }
    }

    #[test]
    fn case_layer_must_be_below_top() {
        let mut c = toy_config(EncoderKind::CharLstm);
        c.case_layer = Some(2);
        assert!(c.validate().is_err());
        c.encoder.sentence_layers = 4;
        assert!(c.validate().is_ok());
    }
}
