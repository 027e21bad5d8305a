//! Word representations, the token embedding `x_i = [e(w_i); p_i]` and the
//! contextual sentence encoder `h_i = [h_f_i; h_b_i]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    char_units, extract_trigrams, oracle_sequence, Sentence, Token, Vocabulary, NO_CASE,
};
use crate::error::{Error, Result};
use crate::numerics::{dropout, BiLstm, CharCnn, CharCnnConfig, Embedding, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Word,
    CharLstm,
    CharCnn,
    TrigramLstm,
    Oracle,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::Word,
        EncoderKind::CharLstm,
        EncoderKind::CharCnn,
        EncoderKind::TrigramLstm,
        EncoderKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Word => "word",
            EncoderKind::CharLstm => "char-lstm",
            EncoderKind::CharCnn => "char-cnn",
            EncoderKind::TrigramLstm => "trigram-lstm",
            EncoderKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Append the token's case symbol to its character sequence
    /// (char-lstm only).
    pub case_symbols: bool,
    pub word_dim: usize,
    pub pos_dim: usize,
    /// Embedding width of characters, trigrams and morphemes fed to the
    /// subword bi-LSTM.
    pub unit_dim: usize,
    /// Per-direction hidden size of the subword composer.
    pub subword_hidden: usize,
    pub char_cnn: CharCnnConfig,
    /// Per-direction hidden size of the sentence encoder.
    pub sentence_hidden: usize,
    pub sentence_layers: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::CharLstm,
            case_symbols: false,
            word_dim: 200,
            pos_dim: 100,
            unit_dim: 100,
            subword_hidden: 100,
            char_cnn: CharCnnConfig::default(),
            sentence_hidden: 200,
            sentence_layers: 2,
            dropout: 0.33,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("unit_dim", self.unit_dim),
            ("subword_hidden", self.subword_hidden),
            ("sentence_hidden", self.sentence_hidden),
            ("sentence_layers", self.sentence_layers),
            ("char_cnn.char_dim", self.char_cnn.char_dim),
            ("char_cnn.filters_per_width", self.char_cnn.filters_per_width),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.char_cnn.widths.is_empty() || self.char_cnn.widths.contains(&0) {
            return Err(Error::Config("char_cnn.widths must be non-empty and positive".into()));
        }
        let composed = matches!(
            self.kind,
            EncoderKind::CharLstm | EncoderKind::TrigramLstm | EncoderKind::Oracle
        );
        if composed && 2 * self.subword_hidden != self.word_dim {
            return Err(Error::Config(format!(
                "{} composes [h_f; h_b] of width {} but word_dim is {}",
                self.kind,
                2 * self.subword_hidden,
                self.word_dim
            )));
        }
        if self.case_symbols && self.kind != EncoderKind::CharLstm {
            return Err(Error::Config("case symbols are only supported for char-lstm".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.word_dim + self.pos_dim
    }

    pub fn encoding_dim(&self) -> usize {
        2 * self.sentence_hidden
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Composer {
    Lookup,
    Lstm(BiLstm),
    Cnn(CharCnn),
}

/// Computes `e(w)` for one token with the configured strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordEncoder {
    kind: EncoderKind,
    case_symbols: bool,
    table: Embedding,
    composer: Composer,
    dim: usize,
}

impl WordEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (table, composer) = match config.kind {
            EncoderKind::Word => (
                Embedding::new(store, &format!("{name}.words"), vocab.words.len(), config.word_dim, rng),
                Composer::Lookup,
            ),
            EncoderKind::CharCnn => {
                let table = Embedding::new(
                    store,
                    &format!("{name}.chars"),
                    vocab.chars.len(),
                    config.char_cnn.char_dim,
                    rng,
                );
                let cnn = CharCnn::new(store, &format!("{name}.cnn"), &config.char_cnn, config.word_dim, rng);
                (table, Composer::Cnn(cnn))
            }
            kind => {
                let rows = match kind {
                    EncoderKind::CharLstm => vocab.chars.len(),
                    EncoderKind::TrigramLstm => vocab.trigrams.len(),
                    _ => vocab.morphemes.len(),
                };
                let table = Embedding::new(store, &format!("{name}.units"), rows, config.unit_dim, rng);
                let lstm = BiLstm::new(
                    store,
                    &format!("{name}.composer"),
                    config.unit_dim,
                    config.subword_hidden,
                    1,
                    rng,
                );
                (table, Composer::Lstm(lstm))
            }
        };
        Ok(WordEncoder {
            kind: config.kind,
            case_symbols: config.case_symbols,
            table,
            composer,
            dim: config.word_dim,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Decomposition of the token into embedding-table rows.
    pub fn units(&self, token: &Token, vocab: &Vocabulary) -> Vec<usize> {
        match self.kind {
            EncoderKind::Word => vec![vocab.words.get_or_unk(&token.form)],
            EncoderKind::CharLstm | EncoderKind::CharCnn => {
                let case = self
                    .case_symbols
                    .then(|| token.aug_case().unwrap_or(NO_CASE));
                char_units(&token.form, case)
                    .iter()
                    .map(|u| vocab.chars.get_or_unk(u))
                    .collect()
            }
            EncoderKind::TrigramLstm => extract_trigrams(&token.form)
                .iter()
                .map(|t| vocab.trigrams.get_or_unk(t))
                .collect(),
            EncoderKind::Oracle => oracle_sequence(token, vocab.feature_filter)
                .iter()
                .map(|m| vocab.morphemes.get_or_unk(m))
                .collect(),
        }
    }

    pub fn represent(&self, g: &mut Graph, token: &Token, vocab: &Vocabulary) -> Result<Var> {
        let units = self.units(token, vocab);
        if units.is_empty() {
            return Err(Error::Data(format!(
                "token {:?} has no {} units",
                token.form, self.kind
            )));
        }
        match &self.composer {
            Composer::Lookup => Ok(self.table.lookup(g, units[0])),
            Composer::Lstm(lstm) => {
                let xs: Vec<Var> = units.iter().map(|&u| self.table.lookup(g, u)).collect();
                lstm.final_states(g, &xs)
            }
            Composer::Cnn(cnn) => {
                let xs: Vec<Var> = units.iter().map(|&u| self.table.lookup(g, u)).collect();
                cnn.forward(g, &xs)
            }
        }
    }

    /// Char-CNN representation over an explicitly padded unit list.
    pub fn represent_padded(
        &self,
        g: &mut Graph,
        token: &Token,
        vocab: &Vocabulary,
        extra_padding: usize,
    ) -> Result<Var> {
        let Composer::Cnn(cnn) = &self.composer else {
            return self.represent(g, token, vocab);
        };
        let units = self.units(token, vocab);
        let mut xs: Vec<Option<Var>> = units.iter().map(|&u| Some(self.table.lookup(g, u))).collect();
        xs.extend(std::iter::repeat_n(None, extra_padding));
        cnn.forward_padded(g, &xs, units.len())
    }
}

/// Token embeddings `x_i` including the learned root vectors at index 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedder {
    pub word: WordEncoder,
    pos: Embedding,
    root_word: ParamId,
    root_pos: ParamId,
    dropout: f64,
}

impl Embedder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        let word = WordEncoder::new(store, &format!("{name}.word"), config, vocab, rng)?;
        let pos = Embedding::new(store, &format!("{name}.pos"), vocab.upos.len(), config.pos_dim, rng);
        let limit = (3.0 / config.word_dim as f64).sqrt();
        let root_word = store.uniform(format!("{name}.root_word"), &[config.word_dim], limit, rng);
        let limit = (3.0 / config.pos_dim as f64).sqrt();
        let root_pos = store.uniform(format!("{name}.root_pos"), &[config.pos_dim], limit, rng);
        Ok(Embedder {
            word,
            pos,
            root_word,
            root_pos,
            dropout: config.dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.word.dim() + self.pos.dim
    }

    /// `[e(w); p]` for one token, unknown POS mapping to the UNK row.
    pub fn embed_token(&self, g: &mut Graph, token: &Token, vocab: &Vocabulary) -> Result<Var> {
        let e = self.word.represent(g, token, vocab)?;
        let p = self.pos.lookup(g, vocab.upos.get_or_unk(&token.upos));
        Ok(g.concat(&[e, p]))
    }

    pub fn embed_root(&self, g: &mut Graph) -> Var {
        let e = g.param(self.root_word);
        let p = g.param(self.root_pos);
        g.concat(&[e, p])
    }

    /// Embeddings for root followed by every token; dropout applies when an
    /// RNG is supplied.
    pub fn embed_sentence<R: Rng>(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        vocab: &Vocabulary,
        mut rng: Option<&mut R>,
    ) -> Result<Vec<Var>> {
        let mut xs = Vec::with_capacity(sentence.len() + 1);
        let root = self.embed_root(g);
        xs.push(dropout(g, root, self.dropout, rng.as_deref_mut())?);
        for t in &sentence.tokens {
            let x = self.embed_token(g, t, vocab)?;
            xs.push(dropout(g, x, self.dropout, rng.as_deref_mut())?);
        }
        Ok(xs)
    }
}

/// Multi-layer sentence bi-LSTM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceEncoder {
    pub lstm: BiLstm,
}

impl SentenceEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        SentenceEncoder {
            lstm: BiLstm::new(store, name, input, hidden, layers, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.lstm.output_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.lstm.layers.len()
    }

    pub fn encode(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Var>> {
        self.lstm.forward(g, xs)
    }

    pub fn encode_layers(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Vec<Var>>> {
        self.lstm.forward_layers(g, xs)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{build_vocab, Treebank, VocabConfig};

    fn small_config(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            kind,
            word_dim: 8,
            pos_dim: 4,
            unit_dim: 5,
            subword_hidden: 4,
            char_cnn: CharCnnConfig {
                char_dim: 3,
                widths: vec![1, 2, 3],
                filters_per_width: 2,
                highway_layers: 1,
            },
            sentence_hidden: 6,
            sentence_layers: 2,
            ..EncoderConfig::default()
        }
    }

    fn vocab() -> Vocabulary {
        let s = Sentence::new(vec![
            Token::new("pizza", "NOUN", 0, "root")
                .with_lemma("pizza")
                .with_feats(&[("Case", "Nom"), ("Number", "Sing")]),
            Token::new("eats", "VERB", 1, "dep").with_lemma("eat"),
        ]);
        build_vocab(&Treebank::new(vec![s]), VocabConfig::default()).unwrap()
    }

    #[test]
    fn kinds_parse_and_print() {
        for k in EncoderKind::ALL {
            assert_eq!(k.name().parse::<EncoderKind>().unwrap(), k);
        }
        assert!("bytes".parse::<EncoderKind>().is_err());
    }

    #[test]
    fn every_kind_has_the_declared_width() {
        let v = vocab();
        for kind in EncoderKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            let cfg = small_config(kind);
            let emb = Embedder::new(&mut store, "e", &cfg, &v, &mut rng).unwrap();
            let mut g = Graph::new(store.values());
            let t = Token::new("pizzas", "NOUN", 0, "root");
            let x = emb.embed_token(&mut g, &t, &v).unwrap();
            assert_eq!(g.value(x).len(), 12, "{kind}");
        }
    }

    #[test]
    fn oov_word_equals_unk_row() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = WordEncoder::new(&mut store, "w", &small_config(EncoderKind::Word), &v, &mut rng).unwrap();
        let mut g = Graph::new(store.values());
        let e = enc.represent(&mut g, &Token::new("unseen", "X", 0, "root"), &v).unwrap();
        let table = store.value(store.id("w.words").unwrap());
        assert_eq!(g.value(e).data(), table.row(0));
    }

    #[test]
    fn case_symbol_units() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            case_symbols: true,
            ..small_config(EncoderKind::CharLstm)
        };
        let enc = WordEncoder::new(&mut store, "w", &cfg, &v, &mut rng).unwrap();
        let mut t = Token::new("pizza", "NOUN", 0, "root");
        t.set_aug_case("Nom");
        let units: Vec<&str> = enc.units(&t, &v).iter().map(|&u| v.chars.item(u)).collect();
        assert_eq!(units, ["p", "i", "z", "z", "a", "Nom"]);
        t.misc = "_".into();
        assert_eq!(v.chars.item(*enc.units(&t, &v).last().unwrap()), NO_CASE);
    }

    #[test]
    fn composer_width_must_match_word_width() {
        let cfg = EncoderConfig {
            subword_hidden: 5,
            ..small_config(EncoderKind::CharLstm)
        };
        assert!(cfg.validate().is_err());
        assert!(small_config(EncoderKind::Word).validate().is_ok());
    }
}
