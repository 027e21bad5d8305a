//! Arc and label scoring over contextual encodings, maximum spanning tree
//! decoding, the attention variant and the training loop.

mod attention;
mod cle;
mod model;
mod scorers;
mod scores;
mod train;

pub use attention::{
    attend_morph, feature_ids, feature_keys, gate_combine, BoundAttention, MorphAttention,
};
pub use cle::{decode_cle, decode_cle_single_root};
pub use model::{
    AttentionRecord, EncodedSentence, GateMode, LossParts, Network, ParseTree, Parser,
    ParserConfig,
};
pub use scorers::{BoundHeadScorer, BoundLabelScorer, HeadScorer, LabelScorer};
pub use scores::{head_distribution, label_distribution, ScoreMatrix};
pub use train::{length_batches, train, EpochLog, TrainConfig, TrainReport};
