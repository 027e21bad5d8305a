//! Treebank ingestion, preprocessing, vocabularies and derived indices.

pub mod conllu;
pub mod morphology;
pub mod vocab;

pub use conllu::{
    check_heads, parse_conllu, parse_conllu_str, read_conllu, write_conllu, ReadOptions,
    Sentence, Token, Treebank,
};
pub use morphology::{
    ambiguity_index, char_units, extract_trigrams, oov_flags, oracle_keys, oracle_sequence,
    AmbiguityIndex, FeatureFilter, MorphAnalysis, LEMMA_KEY, NO_CASE, NO_FEAT,
};
pub use vocab::{build_vocab, Index, VocabConfig, Vocabulary, DEFAULT_WORD_CAP, UNK};
