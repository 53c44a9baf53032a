//! Multi-hop temporal reasoning over a question subgraph: temporal edge
//! attention (Eq. 7), row-stochastic attention with parallel-edge
//! merging (Eq. 8), hop-weighted diffusion (Eq. 9), propagation (Eq. 10),
//! and question-conditioned pooling (Eq. 11).

use crate::numerics::{NumericsError, Result as NumResult, Tape, Tensor};
use crate::params::{BoundParams, ParamSet};
use crate::store::TemporalSubgraph;
use crate::tkge::Tkge;
use rand::Rng;

pub const ENT_PROJ: &str = "gr.ent_proj";
pub const REL_PROJ: &str = "gr.rel_proj";
pub const TIME_PROJ: &str = "gr.time_proj";
pub const XI: &str = "gr.xi";

pub fn w_ad_name(layer: usize) -> String {
    format!("gr.w_ad.{layer}")
}

pub fn beta_name(layer: usize) -> String {
    format!("gr.beta.{layer}")
}

/// Layer count and diffusion horizon for the reasoner.
#[derive(Debug, Clone)]
pub struct Reasoner {
    pub d_model: usize,
    /// L: number of propagation layers, each with its own (W_ad, beta).
    pub layers: usize,
    /// Aleph: maximum diffusion hop; xi has aleph + 1 coefficients.
    pub max_hop: usize,
}

/// Per-subgraph edge features projected to d_model, plus the directed
/// (src, dst) pair list the attention matrix is scattered over. Each
/// stored edge contributes both directions so messages flow from objects
/// back to subjects as well.
pub struct EdgeFeatures {
    /// 2E x d relation features (forward edges then reverse edges).
    pub rel: Option<Tensor>,
    /// 2E x d timestamp features in the same order.
    pub time: Option<Tensor>,
    /// Directed pairs (local node indices), length 2E.
    pub pairs: Vec<(usize, usize)>,
    /// Source and destination row selectors, length 2E each.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl Reasoner {
    pub fn init_params(&self, params: &mut ParamSet, kg_width: usize, scale: f64, rng: &mut impl Rng) {
        let d = self.d_model;
        params.insert_uniform(ENT_PROJ, vec![kg_width, d], scale, rng);
        params.insert_uniform(REL_PROJ, vec![kg_width, d], scale, rng);
        params.insert_uniform(TIME_PROJ, vec![kg_width, d], scale, rng);
        for l in 0..self.layers {
            params.insert_uniform(&w_ad_name(l), vec![4 * d, 1], scale, rng);
            params.insert(&beta_name(l), vec![1], vec![1.0]);
        }
        params.insert_zeros(XI, vec![self.max_hop + 1]);
    }

    /// H^0: projected entity rows of the subgraph's nodes.
    pub fn initial_state(
        &self,
        b: &BoundParams,
        _tkge: &Tkge,
        subgraph: &TemporalSubgraph,
    ) -> NumResult<Tensor> {
        let rows = b
            .get(crate::tkge::ENTITY_TABLE)
            .select_rows(&subgraph.nodes)?;
        rows.matmul(b.get(ENT_PROJ))
    }

    /// Projected relation and timestamp features per directed edge.
    pub fn edge_features(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        subgraph: &TemporalSubgraph,
    ) -> NumResult<EdgeFeatures> {
        let edges = &subgraph.edges;
        let mut pairs = Vec::with_capacity(2 * edges.len());
        let mut src = Vec::with_capacity(2 * edges.len());
        let mut dst = Vec::with_capacity(2 * edges.len());
        for e in edges {
            pairs.push((e.src, e.dst));
            src.push(e.src);
            dst.push(e.dst);
        }
        for e in edges {
            pairs.push((e.dst, e.src));
            src.push(e.dst);
            dst.push(e.src);
        }
        if edges.is_empty() {
            return Ok(EdgeFeatures {
                rel: None,
                time: None,
                pairs,
                src,
                dst,
            });
        }
        let rel_ids: Vec<usize> = edges.iter().map(|e| e.relation).collect();
        let rel_rows = b.get(crate::tkge::RELATION_TABLE).select_rows(&rel_ids)?;
        let rel_single = rel_rows.matmul(b.get(REL_PROJ))?;
        let rel = tape.concat(&[&rel_single, &rel_single], 0)?;
        let time_ids: Vec<usize> = edges.iter().map(|e| e.time).collect();
        let time_rows = b.get(crate::tkge::TIMESTAMP_TABLE).select_rows(&time_ids)?;
        let mut codes = Vec::with_capacity(time_ids.len() * tkge.width());
        for &t in &time_ids {
            if tkge.time_aware {
                codes.extend(crate::tkge::positional_encoding(t, tkge.width())?);
            } else {
                codes.extend(std::iter::repeat(0.0).take(tkge.width()));
            }
        }
        let code = tape.leaf(&[time_ids.len(), tkge.width()], codes, false)?;
        let time_single = time_rows.add(&code)?.matmul(b.get(TIME_PROJ))?;
        let time = tape.concat(&[&time_single, &time_single], 0)?;
        Ok(EdgeFeatures {
            rel: Some(rel),
            time: Some(time),
            pairs,
            src,
            dst,
        })
    }

    /// Eq. 7: per directed edge, beta^l * ReLU(W_ad^T [h_i ; h_j ; h_r ; h_t]).
    /// Returns a length-2E vector aligned with `feats.pairs`.
    pub fn edge_logits(
        &self,
        b: &BoundParams,
        layer: usize,
        h: &Tensor,
        feats: &EdgeFeatures,
    ) -> NumResult<Tensor> {
        let tape = h.tape();
        if feats.pairs.is_empty() {
            return Ok(tape.zeros(&[0]));
        }
        let hi = h.select_rows(&feats.src)?;
        let hj = h.select_rows(&feats.dst)?;
        let rel = feats.rel.as_ref().expect("edges imply features");
        let time = feats.time.as_ref().expect("edges imply features");
        let x = tape.concat(&[&hi, &hj, rel, time], 1)?;
        let raw = x
            .matmul(b.get(&w_ad_name(layer)))?
            .reshape(&[feats.pairs.len()])?
            .relu();
        raw.mul_scalar_tensor(b.get(&beta_name(layer)))
    }

    /// Eq. 8: merge parallel directed edges by log-sum-exp, add logit-0
    /// self-loops on every node, mask absent pairs, row-softmax.
    pub fn attention_matrix(
        &self,
        tape: &Tape,
        logits: &Tensor,
        pairs: &[(usize, usize)],
        n: usize,
    ) -> NumResult<Tensor> {
        let self_logits = tape.zeros(&[n]);
        let mut all_pairs = pairs.to_vec();
        all_pairs.extend((0..n).map(|i| (i, i)));
        let full = if pairs.is_empty() {
            self_logits
        } else {
            tape.concat(&[logits, &self_logits], 0)?
        };
        let merged = full.scatter_lse(&all_pairs, n)?;
        merged.softmax(1)
    }

    /// Eq. 9: D = sum_tau softmax(xi)_tau A^tau with A^0 = I.
    pub fn diffusion(&self, tape: &Tape, b: &BoundParams, a: &Tensor) -> NumResult<Tensor> {
        let n = a.shape()[0];
        let xi_hat = b.get(XI).softmax(0)?;
        let mut power = tape.eye(n);
        let mut d = power.mul_scalar_tensor(&xi_hat.gather(&[0])?)?;
        for tau in 1..=self.max_hop {
            power = power.matmul(a)?;
            d = d.add(&power.mul_scalar_tensor(&xi_hat.gather(&[tau])?)?)?;
        }
        Ok(d)
    }

    /// Eq. 10: H^{l+1} = D H^l, exactly.
    pub fn propagate(&self, d: &Tensor, h: &Tensor) -> NumResult<Tensor> {
        d.matmul(h)
    }

    /// Full L-layer pass; attention is recomputed per layer from that
    /// layer's node features. Returns (H^L, H^0).
    pub fn run(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        subgraph: &TemporalSubgraph,
    ) -> NumResult<(Tensor, Tensor)> {
        let h0 = self.initial_state(b, tkge, subgraph)?;
        let feats = self.edge_features(tape, b, tkge, subgraph)?;
        let n = subgraph.nodes.len();
        let mut h = h0.clone();
        for layer in 0..self.layers {
            let logits = self.edge_logits(b, layer, &h, &feats)?;
            let a = self.attention_matrix(tape, &logits, &feats.pairs, n)?;
            let d = self.diffusion(tape, b, &a)?;
            h = self.propagate(&d, &h)?;
        }
        Ok((h, h0))
    }

    /// Eq. 11: scaled dot-product attention of seed nodes against the
    /// question summary, then the printed mean-scaled weighted sum.
    pub fn pool(&self, h: &Tensor, seed_nodes: &[usize], qhat: &Tensor) -> NumResult<Tensor> {
        if seed_nodes.is_empty() {
            return Err(NumericsError::Contract("pool over empty seed set".into()));
        }
        let hv = h.select_rows(seed_nodes)?;
        let k = seed_nodes.len();
        let logits = hv
            .matmul(&qhat.reshape(&[self.d_model, 1])?)?
            .reshape(&[k])?
            .scale(1.0 / (self.d_model as f64).sqrt());
        let alpha = logits.softmax(0)?;
        alpha
            .reshape(&[1, k])?
            .matmul(&hv)?
            .scale(1.0 / k as f64)
            .reshape(&[1, self.d_model])
    }
}

/// Brute-force diffusion oracle: D[i][j] = sum over path lengths tau of
/// xi[tau] times the total probability of all tau-step paths i -> j.
pub fn diffusion_path_oracle(a: &[Vec<f64>], xi: &[f64]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut d = vec![vec![0.0; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        // tau = 0: the empty path
        row[i] += xi[0];
        for (tau, &w) in xi.iter().enumerate().skip(1) {
            // enumerate all paths of exactly tau steps from i
            let mut stack: Vec<(usize, usize, f64)> = vec![(i, 0, 1.0)];
            while let Some((node, depth, prob)) = stack.pop() {
                if depth == tau {
                    row[node] += w * prob;
                    continue;
                }
                for next in 0..n {
                    if a[node][next] != 0.0 {
                        stack.push((next, depth + 1, prob * a[node][next]));
                    }
                }
            }
        }
    }
    d
}
