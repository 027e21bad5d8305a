use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{BoundLinear, Graph, Linear, ParamId, ParamStore, Var};

/// Arc scorer `v · tanh(U h_dep + W h_head)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadScorer {
    pub dep: Linear,
    pub head: Linear,
    pub v: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHeadScorer {
    dep: BoundLinear,
    head: BoundLinear,
    v: Var,
}

impl HeadScorer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (hidden + 1) as f64).sqrt();
        HeadScorer {
            dep: Linear::new(store, &format!("{name}.dep"), input, hidden, false, rng),
            head: Linear::new(store, &format!("{name}.head"), input, hidden, false, rng),
            v: store.uniform(format!("{name}.v"), &[hidden], limit, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundHeadScorer {
        BoundHeadScorer {
            dep: self.dep.bind(g),
            head: self.head.bind(g),
            v: g.param(self.v),
        }
    }
}

impl BoundHeadScorer {
    pub fn project_dep(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.dep.apply(g, h)
    }

    pub fn project_head(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.head.apply(g, h)
    }

    /// `deps.len() × heads.len()` matrix of scores over projected inputs.
    pub fn matrix(&self, g: &mut Graph, deps: &[Var], heads: &[Var]) -> Result<Var> {
        g.pair_scores(deps, heads, self.v)
    }

    /// Score of one projected pair.
    pub fn pair(&self, g: &mut Graph, dep: Var, head: Var) -> Result<Var> {
        let s = g.add(dep, head)?;
        let t = g.tanh(s);
        g.dot(self.v, t)
    }
}

/// Label scorer `V tanh(U h_dep + W h_head)` with one row of `V` per label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelScorer {
    pub dep: Linear,
    pub head: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLabelScorer {
    dep: BoundLinear,
    head: BoundLinear,
    out: BoundLinear,
}

impl LabelScorer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        labels: usize,
        rng: &mut R,
    ) -> Self {
        LabelScorer {
            dep: Linear::new(store, &format!("{name}.dep"), input, hidden, false, rng),
            head: Linear::new(store, &format!("{name}.head"), input, hidden, false, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, labels, false, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLabelScorer {
        BoundLabelScorer {
            dep: self.dep.bind(g),
            head: self.head.bind(g),
            out: self.out.bind(g),
        }
    }
}

impl BoundLabelScorer {
    pub fn project_dep(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.dep.apply(g, h)
    }

    pub fn project_head(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.head.apply(g, h)
    }

    pub fn logits(&self, g: &mut Graph, dep: Var, head: Var) -> Result<Var> {
        let s = g.add(dep, head)?;
        let t = g.tanh(s);
        self.out.apply(g, t)
    }
}
