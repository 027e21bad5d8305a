//! Generated treebanks for smoke tests and controlled experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Sentence, Token, Treebank};

const NOUNS: &[(&str, &str)] = &[
    ("dog", "dogs"),
    ("cat", "cats"),
    ("bird", "birds"),
    ("fox", "foxes"),
    ("child", "children"),
    ("farmer", "farmers"),
    ("horse", "horses"),
    ("mouse", "mice"),
];
const VERBS: &[(&str, &str, &str)] = &[
    ("chase", "chases", "chased"),
    ("see", "sees", "saw"),
    ("feed", "feeds", "fed"),
    ("follow", "follows", "followed"),
];
const ADJECTIVES: &[&str] = &["big", "small", "red", "old"];
const PREPOSITIONS: &[&str] = &["near", "with", "behind"];

struct Builder {
    tokens: Vec<Token>,
}

impl Builder {
    fn push(&mut self, token: Token) -> usize {
        self.tokens.push(token);
        self.tokens.len()
    }

    /// Noun phrase; returns `(noun index, indices of its modifiers)`.
    fn noun_phrase<R: Rng>(&mut self, rng: &mut R, case: &str) -> (usize, Vec<usize>) {
        let mut mods = Vec::new();
        let plural = rng.gen_bool(0.5);
        if rng.gen_bool(0.6) {
            let (form, def) = if plural || rng.gen_bool(0.5) {
                ("the", "Def")
            } else {
                ("a", "Ind")
            };
            mods.push(self.push(
                Token::new(form, "DET", 0, "det")
                    .with_lemma(if def == "Def" { "the" } else { "a" })
                    .with_feats(&[("Definite", def), ("PronType", "Art")]),
            ));
        }
        if rng.gen_bool(0.4) {
            let adj = *ADJECTIVES.choose(rng).unwrap();
            mods.push(self.push(
                Token::new(adj, "ADJ", 0, "amod")
                    .with_lemma(adj)
                    .with_feats(&[("Degree", "Pos")]),
            ));
        }
        let (lemma, pl) = *NOUNS.choose(rng).unwrap();
        let number = if plural { "Plur" } else { "Sing" };
        let noun = self.push(
            Token::new(if plural { pl } else { lemma }, "NOUN", 0, "dep")
                .with_lemma(lemma)
                .with_feats(&[("Case", case), ("Number", number)]),
        );
        (noun, mods)
    }

    fn attach(&mut self, dep: usize, head: usize, label: &str) {
        let t = &mut self.tokens[dep - 1];
        t.head = head;
        t.deprel = label.to_string();
    }
}

/// Small English-like treebank with determiners, adjectives, subjects,
/// objects, prepositional obliques and punctuation.
pub fn toy_treebank(sentences: usize, seed: u64) -> Treebank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..sentences)
        .map(|k| {
            let mut b = Builder { tokens: Vec::new() };
            let (subj, subj_mods) = b.noun_phrase(&mut rng, "Nom");
            let (lemma, third, past) = *VERBS.choose(&mut rng).unwrap();
            let subj_plural = b.tokens[subj - 1].feature("Number") == Some("Plur");
            let (form, tense) = if rng.gen_bool(0.5) {
                (past, "Past")
            } else if subj_plural {
                (lemma, "Pres")
            } else {
                (third, "Pres")
            };
            let verb = b.push(
                Token::new(form, "VERB", 0, "root")
                    .with_lemma(lemma)
                    .with_feats(&[("Tense", tense), ("VerbForm", "Fin")]),
            );
            let (obj, obj_mods) = b.noun_phrase(&mut rng, "Acc");
            let mut obl = None;
            if rng.gen_bool(0.4) {
                let p = *PREPOSITIONS.choose(&mut rng).unwrap();
                let prep = b.push(Token::new(p, "ADP", 0, "case").with_lemma(p));
                let (noun, mods) = b.noun_phrase(&mut rng, "Acc");
                obl = Some((prep, noun, mods));
            }
            let punct = b.push(Token::new(".", "PUNCT", 0, "punct").with_lemma("."));

            b.attach(verb, 0, "root");
            b.attach(subj, verb, "nsubj");
            b.attach(obj, verb, "obj");
            b.attach(punct, verb, "punct");
            for (noun, mods) in [(subj, subj_mods), (obj, obj_mods)] {
                for m in mods {
                    let label = b.tokens[m - 1].deprel.clone();
                    b.attach(m, noun, &label);
                }
            }
            if let Some((prep, noun, mods)) = obl {
                b.attach(noun, verb, "obl");
                b.attach(prep, noun, "case");
                for m in mods {
                    let label = b.tokens[m - 1].deprel.clone();
                    b.attach(m, noun, &label);
                }
            }
            let mut s = Sentence::new(b.tokens);
            s.comments.push(format!(" sent_id = toy-{}", k + 1));
            s
        })
        .collect();
    Treebank::new(out)
}

/// Three-token clauses of a verb and two nouns in random order. Every noun
/// form is shared by the nominative and the accusative, and the label of a
/// noun (`nsubj` or `obj`) follows its case alone. Sentences come in pairs
/// with the cases swapped, so each form is exactly balanced between the two
/// cases within a corpus of even size.
pub fn syncretism_corpus(sentences: usize, seed: u64, prefix: &str) -> Treebank {
    let nouns = syncretic_nouns();
    let verbs = ["vidi", "lovi", "hrani", "budi", "nosi", "zove"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sentences);
    while out.len() < sentences {
        let a = *nouns.choose(&mut rng).unwrap();
        let mut b = *nouns.choose(&mut rng).unwrap();
        while b == a {
            b = *nouns.choose(&mut rng).unwrap();
        }
        let verb = *verbs.choose(&mut rng).unwrap();
        for (nom, acc) in [(a, b), (b, a)] {
            if out.len() == sentences {
                break;
            }
            let mut order = [0usize, 1, 2];
            order.shuffle(&mut rng);
            // order[k] is the slot of: 0 verb, 1 subject, 2 object
            let pos = |role: usize| order[role] + 1;
            let mut tokens = vec![Token::new("", "", 0, ""); 3];
            tokens[pos(0) - 1] = Token::new(verb, "VERB", 0, "root")
                .with_lemma(verb)
                .with_feats(&[("Tense", "Pres"), ("VerbForm", "Fin")]);
            tokens[pos(1) - 1] = Token::new(nom, "NOUN", pos(0), "nsubj")
                .with_lemma(nom)
                .with_feats(&[("Case", "Nom"), ("Number", "Sing")]);
            tokens[pos(2) - 1] = Token::new(acc, "NOUN", pos(0), "obj")
                .with_lemma(acc)
                .with_feats(&[("Case", "Acc"), ("Number", "Sing")]);
            let mut s = Sentence::new(tokens);
            s.comments.push(format!(" sent_id = {prefix}-{}", out.len() + 1));
            out.push(s);
        }
    }
    Treebank::new(out)
}

fn syncretic_nouns() -> Vec<&'static str> {
    vec![
        "pismo", "kolo", "selo", "polje", "more", "sunce", "jezero", "drvo", "vino", "zlato",
        "mlijeko", "srce", "oko", "uho", "jaje", "ime",
    ]
}
