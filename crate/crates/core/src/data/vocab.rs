use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::conllu::Treebank;
use super::morphology::{extract_trigrams, oracle_sequence, FeatureFilter, NO_CASE, NO_FEAT};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const DEFAULT_WORD_CAP: usize = 20_000;

/// Dense string ↔ id map. Ids follow insertion order and survive
/// serialization unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Index {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Index {
    fn from(items: Vec<String>) -> Self {
        let ids = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Index { items, ids }
    }
}

impl From<Index> for Vec<String> {
    fn from(index: Index) -> Self {
        index.items
    }
}

impl Index {
    pub fn push(&mut self, item: &str) -> usize {
        if let Some(&id) = self.ids.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_string());
        self.ids.insert(item.to_string(), id);
        id
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.ids.get(item).copied()
    }

    /// Id of `item`, falling back to the id of [`UNK`] (0 when absent).
    pub fn get_or_unk(&self, item: &str) -> usize {
        self.get(item)
            .or_else(|| self.get(UNK))
            .unwrap_or(0)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.ids.contains_key(item) && item != UNK
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub word_cap: usize,
    pub feature_filter: FeatureFilter,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            word_cap: DEFAULT_WORD_CAP,
            feature_filter: FeatureFilter::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// `UNK` followed by the most frequent training forms.
    pub words: Index,
    /// `UNK`, characters, then atomic case symbols.
    pub chars: Index,
    pub trigrams: Index,
    pub upos: Index,
    /// `UNK`, `NoFeat`, then lemmas and `Key=Value` feature symbols.
    pub morphemes: Index,
    pub labels: Index,
    /// `NoCase` followed by the case values seen in training.
    pub cases: Index,
    pub feature_filter: FeatureFilter,
}

/// Sorts by descending count, breaking ties lexicographically.
fn by_frequency(counts: HashMap<&str, usize>) -> Vec<&str> {
    let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().map(|(w, _)| w).collect()
}

pub fn build_vocab(train: &Treebank, config: VocabConfig) -> Result<Vocabulary> {
    if train.num_tokens() == 0 {
        return Err(Error::Data("cannot build a vocabulary from an empty treebank".into()));
    }
    let filter = config.feature_filter;

    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    let mut lemma_counts: HashMap<String, usize> = HashMap::new();
    let mut chars = BTreeSet::new();
    let mut trigrams = BTreeSet::new();
    let mut upos = BTreeSet::new();
    let mut feature_symbols = BTreeSet::new();
    let mut labels = BTreeSet::new();
    let mut cases = BTreeSet::new();

    for t in train.tokens() {
        *word_counts.entry(t.form.as_str()).or_default() += 1;
        chars.extend(t.form.chars().map(String::from));
        trigrams.extend(extract_trigrams(&t.form));
        upos.insert(t.upos.clone());
        labels.insert(t.deprel.clone());
        let seq = oracle_sequence(t, filter);
        *lemma_counts.entry(seq[0].clone()).or_default() += 1;
        feature_symbols.extend(seq.into_iter().skip(1));
        if let Some(c) = t.feature("Case") {
            cases.insert(c.to_string());
        }
        if let Some(c) = t.aug_case() {
            if c != NO_CASE {
                cases.insert(c.to_string());
            }
        }
    }

    let mut words = Index::default();
    words.push(UNK);
    for w in by_frequency(word_counts).into_iter().take(config.word_cap) {
        words.push(w);
    }

    let mut case_index = Index::default();
    case_index.push(NO_CASE);
    cases.iter().for_each(|c| {
        case_index.push(c);
    });

    let mut char_index = Index::default();
    char_index.push(UNK);
    chars.iter().for_each(|c| {
        char_index.push(c);
    });
    case_index.items().iter().for_each(|c| {
        char_index.push(c);
    });

    let with_unk = |items: BTreeSet<String>| {
        let mut index = Index::default();
        index.push(UNK);
        items.iter().for_each(|i| {
            index.push(i);
        });
        index
    };

    let mut morphemes = Index::default();
    morphemes.push(UNK);
    morphemes.push(NO_FEAT);
    let lemma_refs: HashMap<&str, usize> =
        lemma_counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    for l in by_frequency(lemma_refs).into_iter().take(config.word_cap) {
        morphemes.push(l);
    }
    feature_symbols.iter().for_each(|f| {
        morphemes.push(f);
    });

    let mut label_index = Index::default();
    labels.iter().for_each(|l| {
        label_index.push(l);
    });

    Ok(Vocabulary {
        words,
        chars: char_index,
        trigrams: with_unk(trigrams),
        upos: with_unk(upos),
        morphemes,
        labels: label_index,
        cases: case_index,
        feature_filter: filter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conllu::{Sentence, Token};

    fn treebank(forms: &[&str]) -> Treebank {
        let tokens = forms
            .iter()
            .enumerate()
            .map(|(i, f)| Token::new(f, "X", if i == 0 { 0 } else { 1 }, "dep"))
            .collect();
        Treebank::new(vec![Sentence::new(tokens)])
    }

    #[test]
    fn three_words_plus_unk() {
        let v = build_vocab(&treebank(&["a", "b", "c", "a"]), VocabConfig::default()).unwrap();
        assert_eq!(v.words.len(), 4);
        assert_eq!(v.words.item(0), UNK);
        assert_eq!(v.words.item(1), "a");
    }

    #[test]
    fn cap_keeps_lexicographically_smaller_tie() {
        let config = VocabConfig {
            word_cap: 2,
            ..VocabConfig::default()
        };
        let v = build_vocab(&treebank(&["z", "z", "ab", "aa"]), config).unwrap();
        assert_eq!(v.words.items(), [UNK, "z", "aa"]);
        assert!(!v.words.contains("ab"));
    }

    #[test]
    fn cap_of_twenty_thousand() {
        let forms: Vec<String> = (0..25_000).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
        let v = build_vocab(&treebank(&refs), VocabConfig::default()).unwrap();
        assert_eq!(v.words.len(), 20_001);
    }

    #[test]
    fn unknown_items_map_to_unk() {
        let v = build_vocab(&treebank(&["a"]), VocabConfig::default()).unwrap();
        assert_eq!(v.words.get_or_unk("zzz"), 0);
        assert_eq!(v.chars.get_or_unk("☃"), 0);
    }

    #[test]
    fn empty_treebank_is_rejected() {
        assert!(build_vocab(&Treebank::default(), VocabConfig::default()).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_ids() {
        let v = build_vocab(&treebank(&["x", "y", "y"]), VocabConfig::default()).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.words.get("y"), Some(1));
    }
}
