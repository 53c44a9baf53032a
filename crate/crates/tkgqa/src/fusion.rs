//! Multi-view adaptive fusion (Eqs. 12–14), answer prediction (Eq. 15),
//! and the question-answering loss.

use crate::numerics::{NumericsError, Result as NumResult, Tape, Tensor};
use crate::params::{BoundParams, ParamSet};
use crate::store::TemporalSubgraph;
use crate::tkge::Tkge;
use rand::Rng;

pub const W_T: &str = "fu.w_t";
pub const W_G: &str = "fu.w_g";
pub const B_G: &str = "fu.b_g";
pub const W_O: &str = "fu.w_o";
pub const B_O: &str = "fu.b_o";
/// Plain concat + linear replacement used by the "w/o adaptive" ablation.
pub const W_ALT: &str = "fu.w_alt";

/// Fusion head dimensions; the answer space is [entities, timestamps].
#[derive(Debug, Clone)]
pub struct Fusion {
    pub d_model: usize,
    pub n_entities: usize,
    pub n_timestamps: usize,
}

impl Fusion {
    pub fn answer_space(&self) -> usize {
        self.n_entities + self.n_timestamps
    }

    pub fn init_params(&self, params: &mut ParamSet, scale: f64, rng: &mut impl Rng) {
        let d = self.d_model;
        params.insert_uniform(W_T, vec![3 * d, d], scale, rng);
        params.insert_uniform(W_G, vec![3 * d, d], scale, rng);
        params.insert_zeros(B_G, vec![1, d]);
        params.insert_uniform(W_O, vec![d, self.answer_space()], scale, rng);
        params.insert_zeros(B_O, vec![1, self.answer_space()]);
        params.insert_uniform(W_ALT, vec![3 * d, d], scale, rng);
    }

    /// Eq. 12: cross-modal attention against the pooled graph vector.
    /// Every question row attends over the single graph key, so H^q2g is
    /// the graph vector itself; H^g2q attends the graph vector over the
    /// question rows.
    pub fn view1_align(&self, q_new: &Tensor, s_graph: &Tensor) -> NumResult<(Tensor, Tensor)> {
        let scale = 1.0 / (self.d_model as f64).sqrt();
        let g2q = s_graph
            .matmul(&q_new.transpose()?)?
            .scale(scale)
            .softmax(1)?
            .matmul(q_new)?;
        Ok((s_graph.clone(), g2q))
    }

    /// T: mean projected (timestamp embedding + positional code) over the
    /// subgraph's edges; zero when the subgraph has no edges.
    pub fn temporal_feature(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        subgraph: &TemporalSubgraph,
    ) -> NumResult<Tensor> {
        if subgraph.edges.is_empty() {
            return Ok(tape.zeros(&[1, self.d_model]));
        }
        let time_ids: Vec<usize> = subgraph.edges.iter().map(|e| e.time).collect();
        let rows = b.get(crate::tkge::TIMESTAMP_TABLE).select_rows(&time_ids)?;
        let mut codes = Vec::with_capacity(time_ids.len() * tkge.width());
        for &t in &time_ids {
            if tkge.time_aware {
                codes.extend(crate::tkge::positional_encoding(t, tkge.width())?);
            } else {
                codes.extend(std::iter::repeat(0.0).take(tkge.width()));
            }
        }
        let code = tape.leaf(&[time_ids.len(), tkge.width()], codes, false)?;
        let projected = rows.add(&code)?.matmul(b.get(crate::reasoner::TIME_PROJ))?;
        crate::encoder::mean_rows(&projected)
    }

    /// Eq. 13: H^temp = ReLU(W_t [H^q2g ; H^g2q ; T]).
    pub fn view2_temporal(
        &self,
        b: &BoundParams,
        q2g: &Tensor,
        g2q: &Tensor,
        t: &Tensor,
    ) -> NumResult<Tensor> {
        let x = q2g.tape().concat(&[q2g, g2q, t], 1)?;
        Ok(x.matmul(b.get(W_T))?.relu())
    }

    /// Eq. 14: g = sigma(W_g [H^q2g ; H^g2q ; H^temp] + b_g);
    /// H^fusion = g * H^q2g + (1-g) * H^g2q + H^temp. Returns (H^fusion, g).
    pub fn view3_gate(
        &self,
        b: &BoundParams,
        q2g: &Tensor,
        g2q: &Tensor,
        temp: &Tensor,
    ) -> NumResult<(Tensor, Tensor)> {
        let x = q2g.tape().concat(&[q2g, g2q, temp], 1)?;
        let g = x.matmul(b.get(W_G))?.add(b.get(B_G))?.sigmoid();
        let one_minus = g.scale(-1.0).add_scalar(1.0);
        let fusion = g
            .mul(q2g)?
            .add(&one_minus.mul(g2q)?)?
            .add(temp)?;
        Ok((fusion, g))
    }

    /// "w/o adaptive" replacement: concat(question summary, mean node
    /// features, T) through a single linear map.
    pub fn alt_fusion(
        &self,
        b: &BoundParams,
        qhat: &Tensor,
        h_mean: &Tensor,
        t: &Tensor,
    ) -> NumResult<Tensor> {
        let x = qhat.tape().concat(&[qhat, h_mean, t], 1)?;
        x.matmul(b.get(W_ALT))
    }

    /// Eq. 15 logits: W_o H^fusion + b_o over [entities, timestamps].
    pub fn logits(&self, b: &BoundParams, h_fusion: &Tensor) -> NumResult<Tensor> {
        h_fusion
            .matmul(b.get(W_O))?
            .add(b.get(B_O))?
            .reshape(&[self.answer_space()])
    }

    /// Eq. 15: softmax over the joint answer space.
    pub fn predict(&self, b: &BoundParams, h_fusion: &Tensor) -> NumResult<Tensor> {
        self.logits(b, h_fusion)?.softmax(0)
    }

    /// Cross-entropy against a uniform target over the gold ids.
    pub fn qa_loss(&self, logits: &Tensor, gold: &[usize]) -> NumResult<Tensor> {
        if gold.is_empty() {
            return Err(NumericsError::Contract("qa_loss with no gold answers".into()));
        }
        let space = self.answer_space();
        if let Some(bad) = gold.iter().find(|&&g| g >= space) {
            return Err(NumericsError::Contract(format!(
                "gold answer id {bad} outside answer space {space}"
            )));
        }
        let logp = logits.log_softmax()?;
        Ok(logp.gather(gold)?.mean().scale(-1.0))
    }
}
