//! Maximum spanning arborescence by Chu-Liu-Edmonds contraction.

use super::scores::ScoreMatrix;

/// Highest-scoring head assignment for tokens `1..=n`, as 1-based heads in
/// token order. Several tokens may attach to the root.
pub fn decode_cle(scores: &ScoreMatrix) -> Vec<usize> {
    let parent = arborescence(&scores.dense());
    parent[1..].to_vec()
}

/// As [`decode_cle`] but with exactly one dependent of the root: every
/// candidate root child is tried and the best resulting tree is kept.
pub fn decode_cle_single_root(scores: &ScoreMatrix) -> Vec<usize> {
    let heads = decode_cle(scores);
    if heads.iter().filter(|&&h| h == 0).count() <= 1 {
        return heads;
    }
    let dense = scores.dense();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for root_child in 1..dense.len() {
        let mut w = dense.clone();
        for (v, row) in w.iter_mut().enumerate().skip(1) {
            if v != root_child {
                row[0] = f64::NEG_INFINITY;
            }
        }
        let heads = arborescence(&w)[1..].to_vec();
        let total = scores.tree_score(&heads);
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, heads));
        }
    }
    best.map(|(_, h)| h).unwrap_or(heads)
}

/// `w[dep][head]` over nodes `0..m` with node 0 the root; returns the parent
/// of every node (`parent[0]` is 0).
fn arborescence(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut parent = vec![0usize; m];
    for v in 1..m {
        let mut best = usize::MAX;
        for u in 0..m {
            if u != v && (best == usize::MAX || w[v][u] > w[v][best]) {
                best = u;
            }
        }
        parent[v] = best;
    }
    let Some(cycle) = find_cycle(&parent) else {
        return parent;
    };

    let mut in_cycle = vec![false; m];
    cycle.iter().for_each(|&v| in_cycle[v] = true);
    let outside: Vec<usize> = (0..m).filter(|&v| !in_cycle[v]).collect();
    let mut new_id = vec![usize::MAX; m];
    outside.iter().enumerate().for_each(|(i, &v)| new_id[v] = i);
    let c = outside.len();
    let m2 = c + 1;

    let mut w2 = vec![vec![f64::NEG_INFINITY; m2]; m2];
    // cycle member receiving the edge from each outside head
    let mut enter = vec![0usize; m2];
    // cycle member acting as head for each outside dependent
    let mut leave = vec![0usize; m2];
    for (nv, &v) in outside.iter().enumerate().skip(1) {
        for (nu, &u) in outside.iter().enumerate() {
            if nu != nv {
                w2[nv][nu] = w[v][u];
            }
        }
        let mut best = usize::MAX;
        for &u in &cycle {
            if best == usize::MAX || w[v][u] > w[v][best] || (w[v][u] == w[v][best] && u < best) {
                best = u;
            }
        }
        w2[nv][c] = w[v][best];
        leave[nv] = best;
    }
    for (nu, &u) in outside.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for &v in &cycle {
            let gain = w[v][u] - w[v][parent[v]];
            let better = match best {
                None => true,
                Some((b, bv)) => gain > b || (gain == b && v < bv),
            };
            if better {
                best = Some((gain, v));
            }
        }
        let (gain, v) = best.expect("cycle is non-empty");
        w2[c][nu] = gain;
        enter[nu] = v;
    }

    let p2 = arborescence(&w2);
    for (nv, &v) in outside.iter().enumerate().skip(1) {
        parent[v] = if p2[nv] == c {
            leave[nv]
        } else {
            outside[p2[nv]]
        };
    }
    let nu = p2[c];
    parent[enter[nu]] = outside[nu];
    parent
}

/// Nodes of some cycle in the parent graph, if one exists.
fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let m = parent.len();
    // 0 unvisited, 1 on current walk, 2 finished
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&x| x == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        path.iter().for_each(|&x| state[x] = 2);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> ScoreMatrix {
        let mut s = ScoreMatrix::new(n);
        for i in 1..=n {
            for j in 0..=n {
                if i != j {
                    s.set(i, j, f(i, j));
                }
            }
        }
        s
    }

    #[test]
    fn single_token_attaches_to_root() {
        let s = matrix(1, |_, _| -3.0);
        assert_eq!(decode_cle(&s), [0]);
    }

    #[test]
    fn greedy_cycle_is_broken() {
        // greedy: 1<-2, 2<-1, 3<-2 (cycle between 1 and 2)
        let table = [
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 10.0, 0.0],
            [2.0, 9.0, 0.0, 0.0],
            [0.0, 0.0, 5.0, 0.0],
        ];
        let s = matrix(3, |i, j| table[i][j]);
        let heads = decode_cle(&s);
        assert_eq!(heads, [2, 0, 2]);
        assert_eq!(s.tree_score(&heads), 17.0);
    }

    #[test]
    fn single_root_constraint() {
        let s = matrix(3, |_, j| if j == 0 { 5.0 } else { 0.0 });
        assert_eq!(decode_cle(&s), [0, 0, 0]);
        let heads = decode_cle_single_root(&s);
        assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
        assert_eq!(s.tree_score(&heads), 5.0);
    }

    #[test]
    fn nested_cycles() {
        // 1 <-> 2 and 3 <-> 4 cycles, then the contracted nodes form a cycle
        let mut table = vec![vec![-5.0; 5]; 5];
        table[1][2] = 10.0;
        table[2][1] = 10.0;
        table[3][4] = 10.0;
        table[4][3] = 10.0;
        table[1][3] = 8.0;
        table[3][1] = 8.0;
        table[2][0] = 1.0;
        let s = matrix(4, |i, j| table[i][j]);
        let heads = decode_cle(&s);
        assert_eq!(heads, [2, 0, 1, 3]);
    }
}
