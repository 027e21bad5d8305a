//! Property tests for invariants that hold across modules.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chardep::analysis::{confusion_diff, score, FOCUS_LABELS};
use chardep::data::{
    build_vocab, check_heads, extract_trigrams, parse_conllu_str, Sentence, Token, Treebank,
    VocabConfig,
};
use chardep::encoders::{EncoderConfig, EncoderKind, WordEncoder};
use chardep::morph::{extract_probe_data, ProbeFeature, RepresentationSource};
use chardep::numerics::{clip_global_norm, softmax, CharCnnConfig, Graph, ParamStore, Tensor};
use chardep::parser::{decode_cle, decode_cle_single_root, length_batches, Parser, ParserConfig, ScoreMatrix};
use chardep::synthetic::toy_treebank;

fn matrix(n: usize, values: &[f64]) -> ScoreMatrix {
    let mut s = ScoreMatrix::new(n);
    let mut it = values.iter().copied();
    for dep in 1..=n {
        for head in (0..=n).filter(|&h| h != dep) {
            s.set(dep, head, it.next().unwrap());
        }
    }
    s
}

fn is_tree(heads: &[usize]) -> bool {
    check_heads(heads).is_none()
}

/// Maximum over all head assignments that form trees, optionally with
/// exactly one child of the root.
fn exhaustive(s: &ScoreMatrix, single_root: bool) -> f64 {
    let n = s.len();
    let mut best = f64::NEG_INFINITY;
    let total = (n + 1).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let heads: Vec<usize> = (0..n)
            .map(|_| {
                let h = c % (n + 1);
                c /= n + 1;
                h
            })
            .collect();
        if heads.iter().enumerate().any(|(i, &h)| h == i + 1) || !is_tree(&heads) {
            continue;
        }
        if single_root && heads.iter().filter(|&&h| h == 0).count() != 1 {
            continue;
        }
        best = best.max(s.tree_score(&heads));
    }
    best
}

fn scores_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|n| (Just(n), prop::collection::vec(-10.0f64..10.0, n * n)))
}

/// Random tree over `n` tokens: each token attaches to the root or to a
/// token placed before it in a random order.
fn tree_strategy(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max_len)
        .prop_flat_map(|n| prop::collection::vec(any::<prop::sample::Index>(), n))
        .prop_map(|picks| {
            let n = picks.len();
            let mut order: Vec<usize> = (1..=n).collect();
            for i in (1..n).rev() {
                order.swap(i, picks[i].index(i + 1));
            }
            let mut heads = vec![0; n];
            for (pos, &tok) in order.iter().enumerate().skip(1) {
                // the first placed token is the root child; later ones
                // attach to the root or an earlier token
                let k = picks[pos].index(pos + 1);
                heads[tok - 1] = if k == pos { 0 } else { order[k] };
            }
            heads
        })
}

const LABELS: &[&str] = &["nsubj", "obj", "amod", "det", "obl", "case", "punct"];
const CASES: &[&str] = &["Nom", "Acc", "Gen", "Dat"];

fn sentence_strategy() -> impl Strategy<Value = Sentence> {
    tree_strategy(8).prop_flat_map(|heads| {
        let n = heads.len();
        (
            Just(heads),
            prop::collection::vec("[a-zäöüčš]{1,7}", n),
            prop::collection::vec(0..LABELS.len(), n),
            prop::collection::vec(prop::option::of(0..CASES.len()), n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_map(|(heads, forms, labels, cases, plural)| {
                let tokens = (0..heads.len())
                    .map(|i| {
                        let label = if heads[i] == 0 { "root" } else { LABELS[labels[i]] };
                        let mut feats = vec![("Number", if plural[i] { "Plur" } else { "Sing" })];
                        if let Some(c) = cases[i] {
                            feats.insert(0, ("Case", CASES[c]));
                        }
                        Token::new(&forms[i], "NOUN", heads[i], label)
                            .with_lemma(&forms[i].chars().take(2).collect::<String>())
                            .with_feats(&feats)
                    })
                    .collect();
                Sentence::new(tokens)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn decoder_finds_the_best_tree((n, values) in scores_strategy()) {
        let s = matrix(n, &values);
        let heads = decode_cle(&s);
        prop_assert!(is_tree(&heads));
        prop_assert_eq!(s.tree_score(&heads), exhaustive(&s, false));
    }

    #[test]
    fn single_root_decoder_finds_the_best_single_root_tree((n, values) in scores_strategy()) {
        let s = matrix(n, &values);
        let heads = decode_cle_single_root(&s);
        prop_assert!(is_tree(&heads));
        prop_assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
        prop_assert_eq!(s.tree_score(&heads), exhaustive(&s, true));
    }

    /// Integer scores keep the shifted sums exact.
    #[test]
    fn decoder_ignores_constant_shifts(
        (n, values) in (1usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec(-20i32..20, n * n))),
        shift in -50i32..50,
    ) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let shifted: Vec<f64> = values.iter().map(|v| v + f64::from(shift)).collect();
        let (a, b) = (matrix(n, &values), matrix(n, &shifted));
        let best = a.tree_score(&decode_cle(&a));
        prop_assert_eq!(a.tree_score(&decode_cle(&b)), best);
    }

    #[test]
    fn trigrams_reconstruct_the_form(form in "\\PC{0,12}") {
        let grams = extract_trigrams(&form);
        let chars: Vec<Vec<char>> = grams.iter().map(|g| g.chars().collect()).collect();
        let mut rebuilt: Vec<char> = chars[0].clone();
        for w in &chars[1..] {
            prop_assert_eq!(w.len(), 3);
            rebuilt.push(w[2]);
        }
        let padded: String = std::iter::once('^').chain(form.chars()).chain(std::iter::once('$')).collect();
        prop_assert_eq!(rebuilt.into_iter().collect::<String>(), padded);
        prop_assert_eq!(grams.len(), form.chars().count().max(1));
    }

    #[test]
    fn conllu_round_trips(sentences in prop::collection::vec(sentence_strategy(), 0..5)) {
        let mut tb = Treebank::new(sentences);
        for (i, s) in tb.sentences.iter_mut().enumerate() {
            s.comments.push(format!(" sent_id = s{i}"));
        }
        let text = tb.to_conllu_string();
        let back = parse_conllu_str(&text).unwrap();
        prop_assert_eq!(&back, &tb);
        prop_assert_eq!(back.to_conllu_string(), text);
    }

    #[test]
    fn labeled_score_never_exceeds_unlabeled(
        gold in prop::collection::vec(sentence_strategy(), 1..4),
        seed in any::<u64>(),
    ) {
        let gold = Treebank::new(gold);
        let pred = perturb(&gold, seed);
        let r = score(&gold, &pred).unwrap();
        prop_assert!(r.las() <= r.uas());
        prop_assert!(r.correct_labeled <= r.correct_heads && r.correct_heads <= r.tokens);
    }

    /// Both models are counted over the same tokens, so every gold row holds
    /// the same number of entries.
    #[test]
    fn confusion_rows_balance(
        gold in prop::collection::vec(sentence_strategy(), 1..4),
        seeds in (any::<u64>(), any::<u64>()),
    ) {
        let gold = Treebank::new(gold);
        let a = perturb(&gold, seeds.0);
        let b = perturb(&gold, seeds.1);
        let d = confusion_diff(&gold, &a, &b, FOCUS_LABELS).unwrap();
        for row in &d.diff {
            prop_assert_eq!(row.iter().sum::<i64>(), 0);
        }
        for (ra, rb) in d.a.iter().zip(&d.b) {
            prop_assert!(ra.iter().sum::<i64>() >= 0 && rb.iter().sum::<i64>() >= 0);
        }
        prop_assert!(confusion_diff(&gold, &a, &a, FOCUS_LABELS).unwrap().is_zero());
    }

    #[test]
    fn length_batches_partition_indices(
        lengths in prop::collection::vec(1usize..30, 0..80),
        batch in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = length_batches(&lengths, batch, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..lengths.len()).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-500.0f64..500.0, 1..30)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_global_norm(grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 1..6), 1..5)) {
        let mut store = ParamStore::new();
        let ids: Vec<_> = grads
            .iter()
            .enumerate()
            .map(|(i, g)| store.zeros(format!("p{i}"), &[g.len()]))
            .collect();
        {
            let (values, out) = store.split();
            let mut graph = Graph::new(values);
            let mut terms = Vec::new();
            for (id, g) in ids.iter().zip(&grads) {
                let p = graph.param(*id);
                let r = graph.input(Tensor::vector(g.clone()));
                terms.push(graph.dot(p, r).unwrap());
            }
            let loss = graph.add_all(&terms).unwrap();
            graph.backward(loss, out);
        }
        let before = store.grad_norm();
        clip_global_norm(&mut store, 5.0);
        prop_assert!(store.grad_norm() <= 5.0 + 1e-9);
        if before <= 5.0 {
            prop_assert_eq!(store.grad_norm(), before);
        }
    }

    #[test]
    fn char_cnn_ignores_trailing_padding(form in "[a-z]{1,9}", extra in 0usize..6) {
        let tb = Treebank::new(vec![Sentence::new(vec![Token::new(&form, "X", 0, "root")])]);
        let vocab = build_vocab(&tb, VocabConfig::default()).unwrap();
        let config = EncoderConfig {
            kind: EncoderKind::CharCnn,
            word_dim: 6,
            char_cnn: CharCnnConfig { char_dim: 4, widths: vec![1, 2, 3, 4], filters_per_width: 3, highway_layers: 1 },
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        let encoder = WordEncoder::new(&mut store, "w", &config, &vocab, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let token = &tb.sentences[0].tokens[0];
        let mut g = Graph::new(store.values());
        let plain = encoder.represent(&mut g, token, &vocab).unwrap();
        let padded = encoder.represent_padded(&mut g, token, &vocab, extra).unwrap();
        prop_assert_eq!(g.value(plain), g.value(padded));
    }
}

/// Copy of `gold` with some heads and labels changed, still a tree.
fn perturb(gold: &Treebank, seed: u64) -> Treebank {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = gold.clone();
    for s in &mut out.sentences {
        let n = s.len();
        for i in 0..n {
            if rng.gen_bool(0.3) {
                s.tokens[i].deprel = LABELS[rng.gen_range(0..LABELS.len())].to_string();
            }
            if rng.gen_bool(0.3) {
                let h = rng.gen_range(0..=n);
                let old = s.tokens[i].head;
                if h != i + 1 {
                    s.tokens[i].head = h;
                    if !is_tree(&s.heads()) {
                        s.tokens[i].head = old;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn probing_leaves_the_parser_unchanged() {
    let tb = toy_treebank(10, 3);
    let vocab = build_vocab(&tb, VocabConfig::default()).unwrap();
    let config = ParserConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::CharLstm,
            word_dim: 8,
            pos_dim: 4,
            unit_dim: 4,
            subword_hidden: 4,
            sentence_hidden: 6,
            ..EncoderConfig::default()
        },
        scorer_hidden: 5,
        ..ParserConfig::default()
    };
    let parser = Parser::new(config, vocab, 1).unwrap();
    let before = parser.params().snapshot();
    let grads: Vec<Tensor> = parser.params().iter().map(|p| p.gradient.clone()).collect();
    for source in [RepresentationSource::Embedding, RepresentationSource::Encoding] {
        let data = extract_probe_data(&parser, &tb, ProbeFeature::Case, source).unwrap();
        assert!(!data.is_empty());
        let again = extract_probe_data(&parser, &tb, ProbeFeature::Case, source).unwrap();
        assert_eq!(data, again);
    }
    assert_eq!(parser.params().values(), before.as_slice());
    let after: Vec<Tensor> = parser.params().iter().map(|p| p.gradient.clone()).collect();
    assert_eq!(grads, after);
}
