//! CoNLL-U reading and writing.
//!
//! Multiword token ranges (`3-4`) and empty nodes (`3.1`) are dropped on
//! input and dependency relations lose their language-specific subtype
//! (`nsubj:pass` becomes `nsubj`).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// MISC key under which an appended case symbol is stored.
pub const AUG_CASE_KEY: &str = "AugCase";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Vec<(String, String)>,
    /// 0 is the artificial root.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    /// A token with empty optional columns; handy for building data in code.
    pub fn new(form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            form: form.to_string(),
            lemma: "_".to_string(),
            upos: upos.to_string(),
            xpos: "_".to_string(),
            feats: Vec::new(),
            head,
            deprel: deprel.to_string(),
            deps: "_".to_string(),
            misc: "_".to_string(),
        }
    }

    pub fn with_lemma(mut self, lemma: &str) -> Self {
        self.lemma = lemma.to_string();
        self
    }

    pub fn with_feats(mut self, feats: &[(&str, &str)]) -> Self {
        self.feats = feats
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self
    }

    pub fn feature(&self, key: &str) -> Option<&str> {
        self.feats
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Lemma, or the surface form when the lemma column is empty.
    pub fn lemma_or_form(&self) -> &str {
        if self.lemma.is_empty() || self.lemma == "_" {
            &self.form
        } else {
            &self.lemma
        }
    }

    pub fn feats_string(&self) -> String {
        if self.feats.is_empty() {
            return "_".to_string();
        }
        self.feats
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("|")
    }

    fn misc_entries(&self) -> impl Iterator<Item = &str> {
        self.misc.split('|').filter(|e| !e.is_empty() && *e != "_")
    }

    /// Case symbol attached by case augmentation, if any.
    pub fn aug_case(&self) -> Option<&str> {
        self.misc_entries()
            .find_map(|e| e.strip_prefix(AUG_CASE_KEY).and_then(|r| r.strip_prefix('=')))
    }

    pub fn set_aug_case(&mut self, value: &str) {
        let mut entries: Vec<String> = self
            .misc_entries()
            .filter(|e| !e.starts_with(&format!("{AUG_CASE_KEY}=")))
            .map(str::to_string)
            .collect();
        entries.push(format!("{AUG_CASE_KEY}={value}"));
        self.misc = entries.join("|");
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    /// Comment lines without the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            comments: Vec::new(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            c.trim()
                .strip_prefix("sent_id")
                .map(|r| r.trim_start().trim_start_matches('=').trim())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Treebank { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn to_conllu_string(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            write_sentence(&mut out, s);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    /// Require heads and labels and check that they form a tree. When
    /// false, `_` heads read as 0 and trees are not validated.
    pub require_tree: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { require_tree: true }
    }
}

/// Reads an annotated treebank, validating every gold tree.
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Treebank> {
    read_conllu(reader, ReadOptions::default())
}

pub fn parse_conllu_str(text: &str) -> Result<Treebank> {
    parse_conllu(text.as_bytes())
}

pub fn read_conllu<R: BufRead>(reader: R, options: ReadOptions) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut unannotated = false;
    let mut start_line = 1;

    let mut finish = |sentence: &mut Sentence, unannotated: bool, start: usize| -> Result<()> {
        let s = std::mem::take(sentence);
        if s.tokens.is_empty() {
            return Ok(());
        }
        if options.require_tree || !unannotated {
            validate_tree(&s, sentences.len(), start)?;
        }
        sentences.push(s);
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            finish(&mut current, unannotated, start_line)?;
            unannotated = false;
            start_line = line_no + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if current.tokens.is_empty() {
                current.comments.push(comment.to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid token id {id:?}"),
        })?;
        if id != current.tokens.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "token id {id} out of sequence (expected {})",
                    current.tokens.len() + 1
                ),
            });
        }
        let feats = parse_feats(cols[5]).map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        let head = match cols[6] {
            "_" if !options.require_tree => {
                unannotated = true;
                0
            }
            h => h.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid head {h:?}"),
            })?,
        };
        let deprel = cols[7].split(':').next().unwrap_or("").to_string();
        if deprel == "_" {
            if options.require_tree {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing dependency relation".into(),
                });
            }
            unannotated = true;
        }
        current.tokens.push(Token {
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats,
            head,
            deprel,
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
    }
    finish(&mut current, unannotated, start_line)?;
    Ok(Treebank { sentences })
}

fn parse_feats(col: &str) -> std::result::Result<Vec<(String, String)>, String> {
    if col == "_" || col.is_empty() {
        return Ok(Vec::new());
    }
    col.split('|')
        .map(|f| match f.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => Err(format!("malformed feature {f:?}")),
        })
        .collect()
}

/// Checks that heads are in range and every token reaches the root.
pub fn validate_tree(sentence: &Sentence, index: usize, line: usize) -> Result<()> {
    let name = sentence
        .sent_id()
        .map(|s| format!("sentence {s:?}"))
        .unwrap_or_else(|| format!("sentence #{} (line {line})", index + 1));
    let heads = sentence.heads();
    if let Some(bad) = check_heads(&heads) {
        return Err(Error::Data(format!("{name}: {bad}")));
    }
    Ok(())
}

/// Returns a description of the first violation, if the 1-based head
/// assignment `heads` is not a tree rooted at 0.
pub fn check_heads(heads: &[usize]) -> Option<String> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Some(format!("token {} has head {h} outside 0..={n}", i + 1));
        }
        if h == i + 1 {
            return Some(format!("token {} is its own head", i + 1));
        }
    }
    for start in 1..=n {
        let mut node = start;
        let mut steps = 0;
        while node != 0 {
            node = heads[node - 1];
            steps += 1;
            if steps > n {
                return Some(format!("token {start} is on a cycle"));
            }
        }
    }
    None
}

fn write_sentence(out: &mut String, s: &Sentence) {
    for c in &s.comments {
        let _ = writeln!(out, "#{c}");
    }
    for (i, t) in s.tokens.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            t.form,
            t.lemma,
            t.upos,
            t.xpos,
            t.feats_string(),
            t.head,
            t.deprel,
            t.deps,
            t.misc
        );
    }
    out.push('\n');
}

pub fn write_conllu<W: Write>(mut writer: W, treebank: &Treebank) -> Result<()> {
    writer.write_all(treebank.to_conllu_string().as_bytes())?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sent_id = s1
# text = Vámonos al mar.
1-2\tVámonos\t_\t_\t_\t_\t_\t_\t_\t_
1\tVamos\tir\tVERB\t_\tMood=Imp|Number=Plur|Person=1\t0\troot\t_\t_
2\tnos\tnosotros\tPRON\t_\tCase=Acc\t1\tobj:pass\t_\t_
3-4\tal\t_\t_\t_\t_\t_\t_\t_\t_
3\ta\ta\tADP\t_\t_\t5\tcase\t_\t_
4\tel\tel\tDET\t_\tDefinite=Def\t5\tdet\t_\t_
4.1\tnull\t_\t_\t_\t_\t_\t_\t_\t_
5\tmar\tmar\tNOUN\t_\tGender=Masc|Number=Sing\t1\tobl\t_\tSpaceAfter=No
6\t.\t.\tPUNCT\t_\t_\t1\tpunct\t_\t_

";

    #[test]
    fn drops_ranges_and_empty_nodes_and_truncates_labels() {
        let tb = parse_conllu_str(SAMPLE).unwrap();
        assert_eq!(tb.len(), 1);
        let s = &tb.sentences[0];
        assert_eq!(s.len(), 6);
        let forms: Vec<_> = s.tokens.iter().map(|t| t.form.as_str()).collect();
        assert_eq!(forms, ["Vamos", "nos", "a", "el", "mar", "."]);
        assert_eq!(s.tokens[1].deprel, "obj");
        assert_eq!(s.sent_id(), Some("s1"));
        assert!(tb.tokens().all(|t| !t.deprel.contains(':')));
    }

    #[test]
    fn empty_input_is_an_empty_treebank() {
        assert!(parse_conllu_str("").unwrap().is_empty());
        assert!(parse_conllu_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\tX\n";
        match parse_conllu_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycles_are_data_errors_naming_the_sentence() {
        let text = "# sent_id = loop\n1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n\n";
        let err = parse_conllu_str(text).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("loop")), "{err}");
    }

    #[test]
    fn lenient_reading_accepts_missing_heads() {
        let text = "1\ta\t_\tX\t_\t_\t_\t_\t_\t_\n\n";
        assert!(parse_conllu_str(text).is_err());
        let tb = read_conllu(text.as_bytes(), ReadOptions { require_tree: false }).unwrap();
        assert_eq!(tb.sentences[0].tokens[0].head, 0);
    }

    #[test]
    fn round_trip_is_stable() {
        let tb = parse_conllu_str(SAMPLE).unwrap();
        let again = parse_conllu_str(&tb.to_conllu_string()).unwrap();
        assert_eq!(tb, again);
    }

    #[test]
    fn aug_case_lives_in_misc() {
        let mut t = Token::new("pizza", "NOUN", 0, "root");
        assert_eq!(t.aug_case(), None);
        t.set_aug_case("Nom");
        assert_eq!(t.misc, "AugCase=Nom");
        t.misc = "SpaceAfter=No".into();
        t.set_aug_case("Acc");
        t.set_aug_case("Dat");
        assert_eq!(t.misc, "SpaceAfter=No|AugCase=Dat");
        assert_eq!(t.aug_case(), Some("Dat"));
    }
}
