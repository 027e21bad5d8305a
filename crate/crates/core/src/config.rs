//! Flat key-value experiment configuration with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureFilter, VocabConfig, DEFAULT_WORD_CAP};
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, CharCnnConfig};
use crate::parser::{ParserConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augmentation {
    #[default]
    None,
    GoldCase,
    PredictedCase,
    Mtl,
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::None => "none",
            Augmentation::GoldCase => "gold-case",
            Augmentation::PredictedCase => "predicted-case",
            Augmentation::Mtl => "mtl",
        })
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "gold-case" => Ok(Augmentation::GoldCase),
            "predicted-case" => Ok(Augmentation::PredictedCase),
            "mtl" => Ok(Augmentation::Mtl),
            _ => Err(Error::Config(format!("unknown augmentation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub encoder: EncoderKind,
    pub augmentation: Augmentation,
    pub attention: bool,
    pub seed: u64,

    pub epochs: usize,
    pub patience: usize,
    /// Zero selects 16 for char-cnn and 32 otherwise.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub word_cap: usize,
    pub feature_filter: FeatureFilter,

    pub word_dim: usize,
    pub pos_dim: usize,
    pub unit_dim: usize,
    pub subword_hidden: usize,
    pub char_dim: usize,
    pub char_max_width: usize,
    pub char_filters_per_width: usize,
    pub highway_layers: usize,
    pub sentence_hidden: usize,
    pub sentence_layers: usize,
    pub scorer_hidden: usize,
    pub dropout: f64,
    pub single_root: bool,

    pub mtl_layers: usize,
    pub mtl_case_layer: usize,

    pub tagger_epochs: usize,
    pub tagger_train_fraction: f64,
    pub probe_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let cnn = CharCnnConfig::default();
        let adam = AdamConfig::default();
        ExperimentConfig {
            train: None,
            dev: None,
            test: None,
            encoder: EncoderKind::CharLstm,
            augmentation: Augmentation::None,
            attention: false,
            seed: 1,
            epochs: 50,
            patience: 5,
            batch_size: 0,
            learning_rate: adam.learning_rate,
            clip: adam.clip,
            word_cap: DEFAULT_WORD_CAP,
            feature_filter: FeatureFilter::All,
            word_dim: enc.word_dim,
            pos_dim: enc.pos_dim,
            unit_dim: enc.unit_dim,
            subword_hidden: enc.subword_hidden,
            char_dim: cnn.char_dim,
            char_max_width: cnn.max_width(),
            char_filters_per_width: cnn.filters_per_width,
            highway_layers: cnn.highway_layers,
            sentence_hidden: enc.sentence_hidden,
            sentence_layers: enc.sentence_layers,
            scorer_hidden: 100,
            dropout: enc.dropout,
            single_root: false,
            mtl_layers: 4,
            mtl_case_layer: 2,
            tagger_epochs: 20,
            tagger_train_fraction: 0.75,
            probe_epochs: 20,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file (if given) and applies `key=value` overrides, whose
    /// values use TOML syntax with bare words read as strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let config = Self::parse(path, overrides)?;
        config.validate()?;
        Ok(config)
    }

    /// As [`ExperimentConfig::load`] without the final validation, for
    /// callers that adjust settings afterwards.
    pub fn parse(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim().replace('-', "_");
            let raw = raw.trim();
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key, value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Every key with its resolved value.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.augmentation, Augmentation::GoldCase | Augmentation::PredictedCase)
            && self.encoder != EncoderKind::CharLstm
        {
            return Err(Error::Config(format!(
                "{} augmentation needs the char-lstm encoder",
                self.augmentation
            )));
        }
        if self.char_max_width == 0 {
            return Err(Error::Config("char_max_width must be positive".into()));
        }
        if !(self.tagger_train_fraction > 0.0 && self.tagger_train_fraction <= 1.0) {
            return Err(Error::Config("tagger_train_fraction must lie in (0, 1]".into()));
        }
        self.parser_config().validate()?;
        self.train_config().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let layers = match self.augmentation {
            Augmentation::Mtl => self.mtl_layers,
            _ => self.sentence_layers,
        };
        EncoderConfig {
            kind: self.encoder,
            case_symbols: matches!(
                self.augmentation,
                Augmentation::GoldCase | Augmentation::PredictedCase
            ),
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            unit_dim: self.unit_dim,
            subword_hidden: self.subword_hidden,
            char_cnn: CharCnnConfig {
                char_dim: self.char_dim,
                widths: (1..=self.char_max_width).collect(),
                filters_per_width: self.char_filters_per_width,
                highway_layers: self.highway_layers,
            },
            sentence_hidden: self.sentence_hidden,
            sentence_layers: layers,
            dropout: self.dropout,
        }
    }

    pub fn parser_config(&self) -> ParserConfig {
        ParserConfig {
            encoder: self.encoder_config(),
            scorer_hidden: self.scorer_hidden,
            single_root: self.single_root,
            attention: self.attention,
            case_layer: (self.augmentation == Augmentation::Mtl).then_some(self.mtl_case_layer),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                clip: self.clip,
                ..AdamConfig::default()
            },
            seed: self.seed,
            target_las: None,
        }
    }

    pub fn vocab_config(&self) -> VocabConfig {
        VocabConfig {
            word_cap: self.word_cap,
            feature_filter: self.feature_filter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train_config().batch_size_for(EncoderKind::CharCnn), 16);
        assert_eq!(c.train_config().batch_size_for(EncoderKind::CharLstm), 32);
        assert_eq!(c.encoder_config().char_cnn, CharCnnConfig::default());
        assert_eq!(c.epochs, 50);
        assert_eq!(c.word_cap, 20_000);
    }

    #[test]
    fn overrides_and_snapshot_round_trip() {
        let c = ExperimentConfig::load(
            None,
            &["encoder=word".into(), "epochs=3".into(), "learning-rate=0.01".into()],
        )
        .unwrap();
        assert_eq!(c.encoder, EncoderKind::Word);
        assert_eq!(c.epochs, 3);
        let back: ExperimentConfig = toml::from_str(&c.snapshot()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        for bad in ["encoder=bytes", "nonsense=1", "augmentation=gold-case"] {
            let mut o = vec![bad.to_string()];
            if bad.starts_with("augmentation") {
                o.push("encoder=word".into());
            }
            assert!(matches!(ExperimentConfig::load(None, &o), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn mtl_uses_four_layers() {
        let c = ExperimentConfig::load(None, &["augmentation=mtl".into()]).unwrap();
        let p = c.parser_config();
        assert_eq!(p.encoder.sentence_layers, 4);
        assert_eq!(p.case_layer, Some(2));
    }
}
