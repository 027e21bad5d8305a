//! Derived views of tokens: character trigrams, oracle morpheme sequences,
//! empirical morphological ambiguity and OOV flags.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::conllu::{Token, Treebank};
use super::vocab::Vocabulary;

/// Symbol appended to character sequences of tokens without case.
pub const NO_CASE: &str = "NoCase";
/// Attention symbol for the root and tokens without features.
pub const NO_FEAT: &str = "NoFeat";
/// Attention key reported for the lemma position of an oracle sequence.
pub const LEMMA_KEY: &str = "Lemma";

pub const TRIGRAM_BEGIN: char = '^';
pub const TRIGRAM_END: char = '$';

/// Universal inflectional features (nominal and verbal) from the UD
/// guidelines; lexical features such as `PronType` or `NumType` are absent.
pub const INFLECTIONAL_FEATURES: &[&str] = &[
    "Gender",
    "Animacy",
    "NounClass",
    "Number",
    "Case",
    "Definite",
    "Degree",
    "VerbForm",
    "Mood",
    "Tense",
    "Aspect",
    "Voice",
    "Evident",
    "Polarity",
    "Person",
    "Polite",
    "Clusivity",
];

/// Which FEATS entries take part in oracle sequences and analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFilter {
    #[default]
    All,
    InflectionalOnly,
}

impl FeatureFilter {
    pub fn keeps(self, key: &str) -> bool {
        match self {
            FeatureFilter::All => true,
            FeatureFilter::InflectionalOnly => INFLECTIONAL_FEATURES.contains(&key),
        }
    }

    pub fn features(self, token: &Token) -> Vec<(String, String)> {
        token
            .feats
            .iter()
            .filter(|(k, _)| self.keeps(k))
            .cloned()
            .collect()
    }
}

/// Character trigrams of the form padded with `^` and `$`.
pub fn extract_trigrams(form: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once(TRIGRAM_BEGIN)
        .chain(form.chars())
        .chain(std::iter::once(TRIGRAM_END))
        .collect();
    if padded.len() < 3 {
        return vec![padded.iter().collect()];
    }
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

/// Characters of the form, optionally followed by one case symbol.
pub fn char_units(form: &str, case: Option<&str>) -> Vec<String> {
    let mut units: Vec<String> = form.chars().map(String::from).collect();
    if let Some(case) = case {
        units.push(case.to_string());
    }
    units
}

/// Lemma followed by `Key=Value` feature symbols in treebank order.
pub fn oracle_sequence(token: &Token, filter: FeatureFilter) -> Vec<String> {
    std::iter::once(token.lemma_or_form().to_string())
        .chain(
            token
                .feats
                .iter()
                .filter(|(k, _)| filter.keeps(k))
                .map(|(k, v)| format!("{k}={v}")),
        )
        .collect()
}

/// Attention keys matching [`oracle_sequence`] position by position.
pub fn oracle_keys(token: &Token, filter: FeatureFilter) -> Vec<String> {
    std::iter::once(LEMMA_KEY.to_string())
        .chain(
            token
                .feats
                .iter()
                .filter(|(k, _)| filter.keeps(k))
                .map(|(k, _)| k.clone()),
        )
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MorphAnalysis {
    pub lemma: String,
    pub features: Vec<(String, String)>,
}

impl MorphAnalysis {
    pub fn of(token: &Token, filter: FeatureFilter) -> Self {
        MorphAnalysis {
            lemma: token.lemma_or_form().to_string(),
            features: filter.features(token),
        }
    }
}

/// Distinct analyses observed for each training form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AmbiguityIndex {
    analyses: BTreeMap<String, BTreeSet<MorphAnalysis>>,
}

impl AmbiguityIndex {
    pub fn build(train: &Treebank, filter: FeatureFilter) -> Self {
        let mut analyses: BTreeMap<String, BTreeSet<MorphAnalysis>> = BTreeMap::new();
        for t in train.tokens() {
            analyses
                .entry(t.form.clone())
                .or_default()
                .insert(MorphAnalysis::of(t, filter));
        }
        AmbiguityIndex { analyses }
    }

    pub fn analyses(&self, form: &str) -> Option<&BTreeSet<MorphAnalysis>> {
        self.analyses.get(form)
    }

    /// `None` for forms never seen in training.
    pub fn is_ambiguous(&self, form: &str) -> Option<bool> {
        self.analyses.get(form).map(|s| s.len() > 1)
    }

    pub fn len(&self) -> usize {
        self.analyses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.analyses.is_empty()
    }
}

pub fn ambiguity_index(train: &Treebank, filter: FeatureFilter) -> AmbiguityIndex {
    AmbiguityIndex::build(train, filter)
}

/// Per-token flags, true when the form is not among the retained words.
pub fn oov_flags(vocab: &Vocabulary, treebank: &Treebank) -> Vec<Vec<bool>> {
    treebank
        .sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| !vocab.words.contains(&t.form)).collect())
        .collect()
}
