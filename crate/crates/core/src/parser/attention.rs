//! Gated attention over the morphological features of a candidate head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{oracle_keys, oracle_sequence, Token, Vocabulary, NO_FEAT};
use crate::error::{Error, Result};
use crate::numerics::{BoundLinear, Embedding, Graph, Linear, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorphAttention {
    /// Feature symbol embeddings, as wide as the encodings.
    pub features: Embedding,
    /// Bilinear form between features and the dependent's encoding.
    pub bilinear: ParamId,
    pub gate_h: Linear,
    pub gate_m: Linear,
}

/// Attention parameters placed on a graph once per sentence.
#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    bilinear: Var,
    gate_h: BoundLinear,
    gate_m: BoundLinear,
}

impl MorphAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        symbols: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        MorphAttention {
            features: Embedding::new(store, &format!("{name}.features"), symbols, dim, rng),
            bilinear: store.glorot(format!("{name}.bilinear"), dim, dim, rng),
            gate_h: Linear::new(store, &format!("{name}.gate_h"), dim, dim, false, rng),
            gate_m: Linear::new(store, &format!("{name}.gate_m"), dim, dim, false, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundAttention {
        BoundAttention {
            bilinear: g.param(self.bilinear),
            gate_h: self.gate_h.bind(g),
            gate_m: self.gate_m.bind(g),
        }
    }

    /// Embedded feature symbols of a head; `None` is the root.
    pub fn embed_features(&self, g: &mut Graph, ids: &[usize]) -> Vec<Var> {
        ids.iter().map(|&id| self.features.lookup(g, id)).collect()
    }
}

/// Feature symbol ids of a head token (`None` for the root).
pub fn feature_ids(token: Option<&Token>, vocab: &Vocabulary) -> Vec<usize> {
    match token {
        None => vec![vocab.morphemes.get_or_unk(NO_FEAT)],
        Some(t) => oracle_sequence(t, vocab.feature_filter)
            .iter()
            .map(|s| vocab.morphemes.get_or_unk(s))
            .collect(),
    }
}

/// Human-readable keys aligned with [`feature_ids`].
pub fn feature_keys(token: Option<&Token>, vocab: &Vocabulary) -> Vec<String> {
    match token {
        None => vec![NO_FEAT.to_string()],
        Some(t) => oracle_keys(t, vocab.feature_filter),
    }
}

impl BoundAttention {
    /// `V h_i`, shared by every candidate head of dependent `i`.
    pub fn query(&self, g: &mut Graph, h_dep: Var) -> Result<Var> {
        g.affine(self.bilinear, h_dep, None)
    }

    /// Returns `(m_j, k)` with `k = softmax(f_jt · V h_i)` and
    /// `m_j = Σ_t k_t f_jt`.
    pub fn attend(&self, g: &mut Graph, query: Var, features: &[Var]) -> Result<(Var, Var)> {
        if features.is_empty() {
            return Err(Error::Argument("attention over an empty feature list".into()));
        }
        let scores = features
            .iter()
            .map(|&f| g.dot(f, query))
            .collect::<Result<Vec<_>>>()?;
        let logits = g.concat(&scores);
        let k = g.softmax(logits);
        let m = g.weighted_sum(k, features)?;
        Ok((m, k))
    }

    /// `W_1 h_j`, shared by every dependent considering head `j`.
    pub fn gate_head_term(&self, g: &mut Graph, h_head: Var) -> Result<Var> {
        self.gate_h.apply(g, h_head)
    }

    /// `z = g ⊙ h + (1 − g) ⊙ m` with `g = σ(W_1 h + W_2 m)`; `head_term`
    /// is the precomputed `W_1 h`. Returns `(z, g)`.
    pub fn combine(&self, g: &mut Graph, h: Var, head_term: Var, m: Var) -> Result<(Var, Var)> {
        let (hl, ml) = (g.value(h).len(), g.value(m).len());
        if hl != ml {
            return Err(Error::shape("gate_combine", &[hl], &[ml]));
        }
        let mt = self.gate_m.apply(g, m)?;
        let pre = g.add(head_term, mt)?;
        let gate = g.sigmoid(pre);
        let diff = g.sub(h, m)?;
        let scaled = g.mul(gate, diff)?;
        Ok((g.add(m, scaled)?, gate))
    }
}

/// `attend_morph` for one dependent/head pair; returns `(m_j, k)`.
pub fn attend_morph(
    g: &mut Graph,
    attention: &BoundAttention,
    h_dep: Var,
    features: &[Var],
) -> Result<(Var, Var)> {
    let q = attention.query(g, h_dep)?;
    attention.attend(g, q, features)
}

/// `gate_combine` for one head encoding and its attended features;
/// returns `(z_j, g)`.
pub fn gate_combine(
    g: &mut Graph,
    attention: &BoundAttention,
    h_head: Var,
    m: Var,
) -> Result<(Var, Var)> {
    let (hl, ml) = (g.value(h_head).len(), g.value(m).len());
    if hl != ml {
        return Err(Error::shape("gate_combine", &[hl], &[ml]));
    }
    let term = attention.gate_head_term(g, h_head)?;
    attention.combine(g, h_head, term, m)
}
