use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Parser;
use crate::analysis::{score, EvalReport};
use crate::data::Treebank;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without a dev LAS improvement before stopping.
    pub patience: usize,
    /// `None` picks 16 for char-cnn and 32 otherwise.
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop once the monitored LAS reaches this value.
    pub target_las: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            patience: 5,
            batch_size: None,
            adam: AdamConfig::default(),
            seed: 1,
            target_las: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, kind: EncoderKind) -> usize {
        self.batch_size.unwrap_or(match kind {
            EncoderKind::CharCnn => 16,
            _ => 32,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) || !(self.adam.clip > 0.0) {
            return Err(Error::Config("learning rate and clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean sentence loss over the epoch.
    pub loss: f64,
    pub dev: Option<EvalReport>,
    pub improved: bool,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={}", self.epoch, self.loss)?;
        if let Some(d) = &self.dev {
            write!(f, " dev_uas={} dev_las={}", d.uas(), d.las())?;
        }
        if self.improved {
            write!(f, " best")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (the last one without dev data).
    pub best_epoch: usize,
    pub best_dev: Option<EvalReport>,
}

/// Batches of sentence indices with similar lengths, in random order.
pub fn length_batches<R: Rng>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(usize, u64, usize)> = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| (len, rng.gen(), i))
        .collect();
    keyed.sort_unstable();
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Trains with Adam on per-batch mean sentence losses. Parameters are
/// rounded to 32-bit floats after every epoch, so the evaluated model is
/// exactly the one that would be archived. With dev data the best epoch by
/// LAS is restored at the end.
pub fn train(
    parser: &mut Parser,
    train: &Treebank,
    dev: Option<&Treebank>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    config.validate()?;
    let sentences: Vec<_> = train.sentences.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::Data("training treebank has no tokens".into()));
    }
    let batch_size = config.batch_size_for(parser.config().encoder.kind);
    let lengths: Vec<usize> = sentences.iter().map(|s| s.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam);
    parser.params_mut().round_to_f32();

    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, EvalReport, Vec<crate::numerics::Tensor>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for batch in length_batches(&lengths, batch_size, &mut rng) {
            parser.params_mut().zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                total += parser.accumulate(sentences[i], scale, Some(&mut rng))?;
            }
            adam.step(parser.params_mut());
        }
        parser.params_mut().round_to_f32();

        let dev_report = dev
            .map(|d| -> Result<EvalReport> { score(d, &parser.parse_treebank(d)?) })
            .transpose()?;
        let improved = match (&dev_report, &best) {
            (Some(r), None) => Some(r.las()),
            (Some(r), Some((b, ..))) if r.las() > *b => Some(r.las()),
            _ => None,
        };
        if let (Some(las), Some(r)) = (improved, dev_report) {
            best = Some((las, epoch, r, parser.params().snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let log = EpochLog {
            epoch,
            loss: total / sentences.len() as f64,
            dev: dev_report,
            improved: improved.is_some(),
        };
        on_epoch(&log);
        logs.push(log);

        let reached = matches!((config.target_las, &dev_report), (Some(t), Some(r)) if r.las() >= t);
        if reached || (dev.is_some() && since_best >= config.patience) {
            break;
        }
    }

    let last = logs.len();
    match best {
        Some((_, epoch, report, values)) => {
            parser.params_mut().restore(values)?;
            Ok(TrainReport {
                epochs: logs,
                best_epoch: epoch,
                best_dev: Some(report),
            })
        }
        None => Ok(TrainReport {
            epochs: logs,
            best_epoch: last,
            best_dev: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_sentence_once() {
        let lengths = [5, 1, 3, 3, 9, 2, 7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = length_batches(&lengths, 3, &mut rng);
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() <= 3));
    }

    #[test]
    fn char_cnn_uses_smaller_batches() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size_for(EncoderKind::CharCnn), 16);
        assert_eq!(c.batch_size_for(EncoderKind::Word), 32);
    }
}
