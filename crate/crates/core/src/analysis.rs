//! Attachment scores, grouped breakdowns, label confusion differences and
//! attention aggregation, with tabular renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{
    ambiguity_index, build_vocab, AmbiguityIndex, FeatureFilter, Index, Sentence, Token, Treebank,
    VocabConfig,
};
use crate::error::{Error, Result};
use crate::parser::AttentionRecord;

/// Labels tracked individually by [`confusion_diff`].
pub const FOCUS_LABELS: &[&str] = &["root", "nsubj", "obj", "iobj", "nmod", "amod", "obl", "case"];
/// Bucket for labels outside the focus set.
pub const OTHER_LABEL: &str = "other";
/// Core argument labels reported by [`aggregate_attention`].
pub const CORE_ARGUMENTS: &[&str] = &["nsubj", "obj", "iobj"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub tokens: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
}

impl EvalReport {
    fn add(&mut self, gold: &Token, pred: &Token) {
        self.tokens += 1;
        if gold.head == pred.head {
            self.correct_heads += 1;
            if gold.deprel == pred.deprel {
                self.correct_labeled += 1;
            }
        }
    }

    fn percent(count: usize, total: usize) -> f64 {
        if total == 0 {
            0.0
        } else {
            100.0 * count as f64 / total as f64
        }
    }

    pub fn uas(&self) -> f64 {
        Self::percent(self.correct_heads, self.tokens)
    }

    pub fn las(&self) -> f64 {
        Self::percent(self.correct_labeled, self.tokens)
    }

    /// `scope  group  metric  value` rows for tokens, UAS and LAS.
    pub fn metric_rows(&self, scope: &str, group: &str) -> Vec<MetricRow> {
        [
            ("tokens", self.tokens as f64),
            ("UAS", self.uas()),
            ("LAS", self.las()),
        ]
        .into_iter()
        .map(|(metric, value)| MetricRow {
            scope: scope.to_string(),
            group: group.to_string(),
            metric: metric.to_string(),
            value,
        })
        .collect()
    }
}

/// One line of a machine-readable report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scope: String,
    pub group: String,
    pub metric: String,
    pub value: f64,
}

pub fn metrics_tsv(rows: &[MetricRow]) -> String {
    let mut out = String::from("scope\tgroup\tmetric\tvalue\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.scope, r.group, r.metric, r.value);
    }
    out
}

/// Aligned-column rendering of metric rows.
pub fn metrics_table(rows: &[MetricRow]) -> String {
    let header = ["scope", "group", "metric", "value"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            let value = if r.metric == "tokens" {
                format!("{}", r.value)
            } else {
                format!("{:.2}", r.value)
            };
            [r.scope.clone(), r.group.clone(), r.metric.clone(), value]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cols: [&str; 4], out: &mut String| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header, &mut out);
    for row in &cells {
        line([&row[0], &row[1], &row[2], &row[3]], &mut out);
    }
    out
}

fn check_aligned(index: usize, gold: &Sentence, pred: &Sentence) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "sentence {} has {} gold tokens but {} predicted",
            index + 1,
            gold.len(),
            pred.len()
        )));
    }
    for (t, (g, p)) in gold.tokens.iter().zip(&pred.tokens).enumerate() {
        if g.form != p.form {
            return Err(Error::Alignment(format!(
                "sentence {} token {}: gold form {:?} but predicted {:?}",
                index + 1,
                t + 1,
                g.form,
                p.form
            )));
        }
    }
    Ok(())
}

/// Token pairs of two aligned treebanks.
fn aligned<'a>(gold: &'a Treebank, pred: &'a Treebank) -> Result<Vec<(&'a Token, &'a Token)>> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut pairs = Vec::with_capacity(gold.num_tokens());
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        check_aligned(i, g, p)?;
        pairs.extend(g.tokens.iter().zip(&p.tokens));
    }
    Ok(pairs)
}

pub fn score(gold: &Treebank, pred: &Treebank) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (g, p) in aligned(gold, pred)? {
        report.add(g, p);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// Forms outside the retained training vocabulary versus the rest.
    Oov,
    /// Training-seen forms with one versus several observed analyses.
    Ambiguity,
    /// Gold universal POS of the dependent.
    Pos,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oov" => Ok(Partition::Oov),
            "ambiguity" => Ok(Partition::Ambiguity),
            "pos" | "per-pos" => Ok(Partition::Pos),
            _ => Err(Error::Config(format!("unknown partition {s:?}"))),
        }
    }
}

/// Training-split statistics that decide group membership.
#[derive(Debug, Clone)]
pub struct PartitionContext {
    words: Index,
    ambiguity: AmbiguityIndex,
}

impl PartitionContext {
    pub fn from_training(train: &Treebank, config: VocabConfig) -> Result<Self> {
        Ok(PartitionContext {
            words: build_vocab(train, config)?.words,
            ambiguity: ambiguity_index(train, config.feature_filter),
        })
    }

    pub fn with_filter(train: &Treebank, filter: FeatureFilter) -> Result<Self> {
        Self::from_training(
            train,
            VocabConfig {
                feature_filter: filter,
                ..VocabConfig::default()
            },
        )
    }

    /// Group of a gold token, `None` when the partition does not cover it.
    pub fn group(&self, partition: Partition, token: &Token) -> Option<String> {
        match partition {
            Partition::Oov => Some(if self.words.contains(&token.form) {
                "in-vocabulary".to_string()
            } else {
                "oov".to_string()
            }),
            Partition::Ambiguity => self.ambiguity.is_ambiguous(&token.form).map(|a| {
                if a {
                    "ambiguous".to_string()
                } else {
                    "unambiguous".to_string()
                }
            }),
            Partition::Pos => Some(token.upos.clone()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    pub overall: EvalReport,
    /// Scores over every token that belongs to some group.
    pub covered: EvalReport,
    /// Only non-empty groups appear.
    pub groups: BTreeMap<String, EvalReport>,
}

impl SplitReport {
    pub fn metric_rows(&self, scope: &str) -> Vec<MetricRow> {
        let mut rows = self.overall.metric_rows(scope, "all");
        for (group, report) in &self.groups {
            rows.extend(report.metric_rows(scope, group));
        }
        rows
    }
}

pub fn split_eval(
    gold: &Treebank,
    pred: &Treebank,
    context: &PartitionContext,
    partition: Partition,
) -> Result<SplitReport> {
    let mut out = SplitReport::default();
    for (g, p) in aligned(gold, pred)? {
        out.overall.add(g, p);
        if let Some(group) = context.group(partition, g) {
            out.covered.add(g, p);
            out.groups.entry(group).or_default().add(g, p);
        }
    }
    Ok(out)
}

/// Gold × predicted label counts for two models on the tokens whose head
/// both predicted correctly, and their difference `b − a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionDiff {
    /// Row and column labels; the last is [`OTHER_LABEL`].
    pub labels: Vec<String>,
    pub a: Vec<Vec<i64>>,
    pub b: Vec<Vec<i64>>,
    pub diff: Vec<Vec<i64>>,
}

impl ConfusionDiff {
    pub fn is_zero(&self) -> bool {
        self.diff.iter().flatten().all(|&c| c == 0)
    }

    pub fn total(&self) -> i64 {
        self.diff.iter().flatten().sum()
    }

    /// Dense matrix with a header row and a gold-label column.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("gold\\pred\t{}\n", self.labels.join("\t"));
        for (label, row) in self.labels.iter().zip(&self.diff) {
            let cells: Vec<String> = row.iter().map(i64::to_string).collect();
            let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
        }
        out
    }
}

pub fn confusion_diff(
    gold: &Treebank,
    pred_a: &Treebank,
    pred_b: &Treebank,
    focus: &[&str],
) -> Result<ConfusionDiff> {
    let pairs_a = aligned(gold, pred_a)?;
    let pairs_b = aligned(gold, pred_b)?;
    let mut labels: Vec<String> = focus.iter().map(|s| s.to_string()).collect();
    labels.push(OTHER_LABEL.to_string());
    let k = labels.len();
    let slot = |l: &str| focus.iter().position(|f| *f == l).unwrap_or(k - 1);
    let mut a = vec![vec![0i64; k]; k];
    let mut b = vec![vec![0i64; k]; k];
    for ((g, pa), (_, pb)) in pairs_a.iter().zip(&pairs_b) {
        if pa.head != g.head || pb.head != g.head {
            continue;
        }
        let row = slot(&g.deprel);
        a[row][slot(&pa.deprel)] += 1;
        b[row][slot(&pb.deprel)] += 1;
    }
    let diff = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| y - x).collect())
        .collect();
    Ok(ConfusionDiff { labels, a, b, diff })
}

/// Mean attention per head-feature key for one (case, label) group.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAggregate {
    pub case: String,
    pub label: String,
    pub count: usize,
    pub weights: BTreeMap<String, f64>,
}

/// Averages attention over records whose head and label are both correct,
/// grouped by the dependent's case and its label among `labels`. A key
/// absent from a record contributes weight zero.
pub fn aggregate_attention(records: &[AttentionRecord], labels: &[&str]) -> Vec<AttentionAggregate> {
    let mut groups: BTreeMap<(String, String), (usize, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in records {
        let correct = r.head == r.gold_head && r.pred_label == r.gold_label;
        if !correct || !labels.contains(&r.gold_label.as_str()) {
            continue;
        }
        let entry = groups
            .entry((r.dependent_case.clone(), r.gold_label.clone()))
            .or_default();
        entry.0 += 1;
        for (key, w) in &r.weights {
            *entry.1.entry(key.clone()).or_default() += w;
        }
    }
    groups
        .into_iter()
        .map(|((case, label), (count, sums))| AttentionAggregate {
            case,
            label,
            count,
            weights: sums
                .into_iter()
                .map(|(k, s)| (k, s / count as f64))
                .collect(),
        })
        .collect()
}

/// One row per (case, label, key).
pub fn attention_tsv(aggregates: &[AttentionAggregate]) -> String {
    let mut out = String::from("case\tlabel\tcount\tfeature\tweight\n");
    for a in aggregates {
        for (key, w) in &a.weights {
            let _ = writeln!(out, "{}\t{}\t{}\t{key}\t{w}", a.case, a.label, a.count);
        }
    }
    out
}

/// One row per attention record: sentence, dependent, head, labels, case
/// and `feature:weight` pairs.
pub fn attention_records_tsv(records: &[AttentionRecord]) -> String {
    let mut out = String::from("sentence\tdependent\thead\tgold_label\tpred_label\tcase\tweights\n");
    for r in records {
        let weights: Vec<String> = r.weights.iter().map(|(k, w)| format!("{k}:{w}")).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.sentence,
            r.dependent,
            r.head,
            r.gold_label,
            r.pred_label,
            r.dependent_case,
            weights.join(" ")
        );
    }
    out
}
