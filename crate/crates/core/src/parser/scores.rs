use crate::numerics::{softmax, Tensor};

/// Arc scores `a[i][j]` for dependents `1..=n` and candidate heads `0..=n`,
/// `j != i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// All entries zero except the excluded self-attachments.
    pub fn new(n: usize) -> Self {
        let mut s = ScoreMatrix {
            n,
            data: vec![0.0; n * (n + 1)],
        };
        for i in 1..=n {
            s.data[(i - 1) * (n + 1) + i] = f64::NEG_INFINITY;
        }
        s
    }

    /// From an `n × (n+1)` matrix whose row `r` holds dependent `r + 1`;
    /// the self-attachment entries are discarded.
    pub fn from_pair_tensor(t: &Tensor) -> Self {
        let n = t.rows();
        assert_eq!(t.cols(), n + 1, "pair scores must be n × (n+1)");
        let mut s = ScoreMatrix {
            n,
            data: t.data().to_vec(),
        };
        for i in 1..=n {
            s.data[(i - 1) * (n + 1) + i] = f64::NEG_INFINITY;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, dep: usize, head: usize) -> f64 {
        self.data[(dep - 1) * (self.n + 1) + head]
    }

    pub fn set(&mut self, dep: usize, head: usize, value: f64) {
        assert!(dep != head, "self-attachment is not a candidate");
        self.data[(dep - 1) * (self.n + 1) + head] = value;
    }

    /// Scores of dependent `dep` over heads `0..=n`, with `-inf` at `dep`.
    pub fn row(&self, dep: usize) -> &[f64] {
        &self.data[(dep - 1) * (self.n + 1)..dep * (self.n + 1)]
    }

    /// Square `(n+1) × (n+1)` layout indexed `[dep][head]`; row 0 and the
    /// diagonal are `-inf`.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![f64::NEG_INFINITY; self.n + 1]];
        w.extend((1..=self.n).map(|i| self.row(i).to_vec()));
        w
    }

    /// Sum of the chosen arc scores, accumulated in token order.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| self.get(i + 1, h))
            .sum()
    }
}

/// Probability of each head `0..=n` for dependent `dep`; entry `dep` is 0.
pub fn head_distribution(scores: &ScoreMatrix, dep: usize) -> Vec<f64> {
    softmax(scores.row(dep))
}

/// Softmax over label scores.
pub fn label_distribution(label_scores: &[f64]) -> Vec<f64> {
    softmax(label_scores)
}
