//! Versioned model container for parsers and case taggers: magic bytes,
//! format version, a JSON manifest (model kind and configuration,
//! vocabulary, tensor names and shapes, metadata) and the tensors as
//! little-endian 32-bit floats in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::morph::{CaseTagger, TaggerConfig};
use crate::numerics::{ParamStore, Tensor};
use crate::parser::{Parser, ParserConfig};

pub const MAGIC: &[u8; 8] = b"CHARDEP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_dev_uas: Option<f64>,
    pub best_dev_las: Option<f64>,
    /// Resolved experiment configuration as written next to the outputs.
    pub config_snapshot: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
enum Model {
    Parser { parser: ParserConfig },
    CaseTagger { tagger: TaggerConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(flatten)]
    model: Model,
    vocab: Vocabulary,
    metadata: ArchiveMetadata,
    tensors: Vec<TensorEntry>,
}

fn write_container<W: Write>(writer: W, manifest: Manifest, params: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let manifest = Manifest {
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.to_string(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        ..manifest
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Archive(format!("cannot encode manifest: {e}")))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in params.iter() {
        for &x in p.value.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_manifest<R: Read>(r: &mut R) -> Result<Manifest> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Archive("file is too short to be a model archive".into()))?;
    if &magic != MAGIC {
        return Err(Error::Archive("not a model archive".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| Error::Archive("truncated header".into()))?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::ArchiveVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Archive("truncated header".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = Vec::new();
    r.take(len as u64).read_to_end(&mut json)?;
    if json.len() != len {
        return Err(Error::Archive("truncated manifest".into()));
    }
    serde_json::from_slice(&json).map_err(|e| Error::Archive(format!("malformed manifest: {e}")))
}

/// Fills `params` from the tensor section, checking names and shapes.
fn read_tensors<R: Read>(r: &mut R, entries: &[TensorEntry], params: &mut ParamStore) -> Result<()> {
    if entries.len() != params.len() {
        return Err(Error::Archive(format!(
            "archive holds {} tensors, model expects {}",
            entries.len(),
            params.len()
        )));
    }
    let mut buf = [0u8; 4];
    for entry in entries {
        let id = params
            .id(&entry.name)
            .ok_or_else(|| Error::Archive(format!("unknown tensor {:?}", entry.name)))?;
        if params.value(id).shape() != entry.shape.as_slice() {
            return Err(Error::Archive(format!(
                "tensor {:?} has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                params.value(id).shape()
            )));
        }
        let count: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Archive(format!("truncated tensor {:?}", entry.name)))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        *params.value_mut(id) = Tensor::new(entry.shape.clone(), data)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Archive(format!("{} trailing bytes", rest.len())));
    }
    Ok(())
}

/// Writes the parser. Values are stored as 32-bit floats.
pub fn save_parser<W: Write>(parser: &Parser, metadata: &ArchiveMetadata, writer: W) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: Model::Parser {
            parser: parser.config().clone(),
        },
        vocab: parser.vocab().clone(),
        metadata: metadata.clone(),
        tensors: Vec::new(),
    };
    write_container(writer, manifest, parser.params())
}

pub fn load_parser<R: Read>(reader: R) -> Result<(Parser, ArchiveMetadata)> {
    let mut r = BufReader::new(reader);
    let manifest = read_manifest(&mut r)?;
    let Model::Parser { parser: config } = manifest.model else {
        return Err(Error::Archive("archive holds a case tagger, not a parser".into()));
    };
    let mut parser = Parser::new(config, manifest.vocab, 0)?;
    read_tensors(&mut r, &manifest.tensors, parser.params_mut())?;
    Ok((parser, manifest.metadata))
}

pub fn save_tagger<W: Write>(tagger: &CaseTagger, metadata: &ArchiveMetadata, writer: W) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: Model::CaseTagger {
            tagger: tagger.config().clone(),
        },
        vocab: tagger.vocab().clone(),
        metadata: metadata.clone(),
        tensors: Vec::new(),
    };
    write_container(writer, manifest, tagger.params())
}

pub fn load_tagger<R: Read>(reader: R) -> Result<(CaseTagger, ArchiveMetadata)> {
    let mut r = BufReader::new(reader);
    let manifest = read_manifest(&mut r)?;
    let Model::CaseTagger { tagger: config } = manifest.model else {
        return Err(Error::Archive("archive holds a parser, not a case tagger".into()));
    };
    let mut tagger = CaseTagger::new(&config, manifest.vocab)?;
    read_tensors(&mut r, &manifest.tensors, tagger.params_mut())?;
    Ok((tagger, manifest.metadata))
}

pub fn save_parser_file(parser: &Parser, metadata: &ArchiveMetadata, path: &Path) -> Result<()> {
    save_parser(parser, metadata, File::create(path)?)
}

pub fn load_parser_file(path: &Path) -> Result<(Parser, ArchiveMetadata)> {
    load_parser(File::open(path)?)
}

pub fn save_tagger_file(tagger: &CaseTagger, metadata: &ArchiveMetadata, path: &Path) -> Result<()> {
    save_tagger(tagger, metadata, File::create(path)?)
}

pub fn load_tagger_file(path: &Path) -> Result<(CaseTagger, ArchiveMetadata)> {
    load_tagger(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, VocabConfig};
    use crate::encoders::{EncoderConfig, EncoderKind};
    use crate::synthetic::toy_treebank;

    fn parser() -> Parser {
        let tb = toy_treebank(5, 1);
        let vocab = build_vocab(&tb, VocabConfig::default()).unwrap();
        let config = ParserConfig {
            encoder: EncoderConfig {
                kind: EncoderKind::Word,
                word_dim: 4,
                pos_dim: 2,
                sentence_hidden: 3,
                ..EncoderConfig::default()
            },
            scorer_hidden: 3,
            ..ParserConfig::default()
        };
        let mut p = Parser::new(config, vocab, 2).unwrap();
        p.params_mut().round_to_f32();
        p
    }

    #[test]
    fn round_trip_restores_values_exactly() {
        let p = parser();
        let mut bytes = Vec::new();
        save_parser(&p, &ArchiveMetadata::default(), &mut bytes).unwrap();
        let (q, _) = load_parser(bytes.as_slice()).unwrap();
        assert_eq!(p.params().values(), q.params().values());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = Vec::new();
        save_parser(&parser(), &ArchiveMetadata::default(), &mut bytes).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        match load_parser(bytes.as_slice()) {
            Err(Error::ArchiveVersion { found: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tagger_round_trip_and_kind_check() {
        let tb = crate::synthetic::syncretism_corpus(4, 1, "t");
        let vocab = build_vocab(&tb, VocabConfig::default()).unwrap();
        let config = TaggerConfig {
            encoder: EncoderConfig {
                word_dim: 4,
                pos_dim: 2,
                unit_dim: 3,
                subword_hidden: 2,
                sentence_hidden: 3,
                ..TaggerConfig::default().encoder
            },
            hidden: vec![3],
            ..TaggerConfig::default()
        };
        let mut tagger = CaseTagger::new(&config, vocab).unwrap();
        tagger.params_mut().round_to_f32();
        let mut bytes = Vec::new();
        save_tagger(&tagger, &ArchiveMetadata::default(), &mut bytes).unwrap();
        let (back, _) = load_tagger(bytes.as_slice()).unwrap();
        assert_eq!(back.params().values(), tagger.params().values());
        for s in &tb.sentences {
            assert_eq!(back.tag(s).unwrap(), tagger.tag(s).unwrap());
        }
        assert!(matches!(load_parser(bytes.as_slice()), Err(Error::Archive(_))));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(load_parser(&b"hello world, no model"[..]), Err(Error::Archive(_))));
    }
}
