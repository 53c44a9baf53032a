//! Constraint-aware question encoding: a closed-vocabulary token encoder
//! with one self-attention layer stands in for a pretrained LM, followed
//! by question/fact cross-attention and a gated fusion into Q_new.

use std::collections::{BTreeMap, BTreeSet};

use crate::numerics::{NumericsError, Result as NumResult, Tape, Tensor};
use crate::params::{BoundParams, ParamSet};
use crate::store::{QuestionRecord, Quadruple, TkgStore};
use crate::tkge::{positional_encoding, Tkge};
use rand::Rng;
use thiserror::Error;

pub const WORD_TABLE: &str = "enc.words";
pub const ATTN_WQ: &str = "enc.wq";
pub const ATTN_WK: &str = "enc.wk";
pub const ATTN_WV: &str = "enc.wv";
pub const ATTN_WO: &str = "enc.wo";
pub const ENT_PROJ: &str = "enc.ent_proj";
pub const TIME_PROJ: &str = "enc.time_proj";
pub const GATE_W: &str = "enc.w_g";
pub const GATE_B: &str = "enc.b_g";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("token not in vocabulary: {token:?}")]
    UnknownToken { token: String },
    #[error("annotation position {pos} out of range for {len} tokens")]
    BadAnnotation { pos: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Token encoder over a closed template vocabulary.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub d_model: usize,
    /// Width (2D) of the KG embedding rows projected into token slots.
    pub kg_width: usize,
    vocab: Vec<String>,
    index: BTreeMap<String, usize>,
    /// Add sinusoidal token-position codes to the input rows. Disabled in
    /// symmetry tests.
    pub use_token_positions: bool,
}

impl Encoder {
    /// Build the vocabulary from every token that can reach the encoder:
    /// question tokens plus relation names (used when verbalizing facts).
    pub fn new<'a>(
        d_model: usize,
        kg_width: usize,
        tokens: impl IntoIterator<Item = &'a str>,
        store: &TkgStore,
    ) -> Self {
        let mut set: BTreeSet<String> = tokens.into_iter().map(|t| t.to_string()).collect();
        for r in 0..store.relation_count() {
            set.insert(store.relation_names[r].clone());
        }
        let vocab: Vec<String> = set.into_iter().collect();
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Encoder {
            d_model,
            kg_width,
            vocab,
            index,
            use_token_positions: true,
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| EncoderError::UnknownToken {
                token: token.to_string(),
            })
    }

    pub fn init_params(&self, params: &mut ParamSet, scale: f64, rng: &mut impl Rng) {
        let d = self.d_model;
        params.insert_uniform(WORD_TABLE, vec![self.vocab.len(), d], scale, rng);
        for name in [ATTN_WQ, ATTN_WK, ATTN_WV, ATTN_WO] {
            params.insert_uniform(name, vec![d, d], scale, rng);
        }
        params.insert_uniform(ENT_PROJ, vec![self.kg_width, d], scale, rng);
        params.insert_uniform(TIME_PROJ, vec![self.kg_width, d], scale, rng);
        params.insert_uniform(GATE_W, vec![2 * d, d], scale, rng);
        params.insert_zeros(GATE_B, vec![1, d]);
    }

    /// One self-attention layer with residual: X + softmax(XWq (XWk)^T / sqrt(d)) XWv Wo.
    fn self_attend(&self, b: &BoundParams, x: &Tensor) -> NumResult<Tensor> {
        let q = x.matmul(b.get(ATTN_WQ))?;
        let k = x.matmul(b.get(ATTN_WK))?;
        let v = x.matmul(b.get(ATTN_WV))?;
        let logits = q
            .matmul(&k.transpose()?)?
            .scale(1.0 / (self.d_model as f64).sqrt());
        let attn = logits.softmax(1)?;
        x.add(&attn.matmul(&v)?.matmul(b.get(ATTN_WO))?)
    }

    /// Project a KG row (width 2D) through `proj` into a 1 x d_model row.
    fn project(&self, b: &BoundParams, proj: &str, row: &Tensor) -> NumResult<Tensor> {
        row.reshape(&[1, self.kg_width])?.matmul(b.get(proj))
    }

    /// Eq. 4 stand-in: word embeddings with annotated entity/time slots
    /// replaced by projected KG rows, plus one self-attention layer.
    pub fn encode_question(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        record: &QuestionRecord,
    ) -> Result<Tensor> {
        let n = record.tokens.len();
        if n == 0 {
            return Err(NumericsError::Contract("empty question".into()).into());
        }
        let mut slot: Vec<Option<Tensor>> = vec![None; n];
        for a in &record.entities {
            if a.pos >= n {
                return Err(EncoderError::BadAnnotation { pos: a.pos, len: n });
            }
            let row = tkge.entity_row(b, a.id)?;
            slot[a.pos] = Some(self.project(b, ENT_PROJ, &row)?);
        }
        for a in &record.times {
            if a.pos >= n {
                return Err(EncoderError::BadAnnotation { pos: a.pos, len: n });
            }
            let row = tkge
                .timestamp_row(b, a.id)?
                .add(&tkge.positional_code(tape, a.id)?)?;
            slot[a.pos] = Some(self.project(b, TIME_PROJ, &row)?);
        }
        let mut rows: Vec<Tensor> = Vec::with_capacity(n);
        for (pos, token) in record.tokens.iter().enumerate() {
            let base = match slot[pos].take() {
                Some(t) => t,
                None => {
                    let id = self.token_id(token)?;
                    b.get(WORD_TABLE).select_rows(&[id])?
                }
            };
            let row = if self.use_token_positions {
                let code = tape.leaf(
                    &[1, self.d_model],
                    pos_code(pos, self.d_model),
                    false,
                )?;
                base.add(&code)?
            } else {
                base
            };
            rows.push(row);
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        let x = tape.concat(&refs, 0)?;
        Ok(self.self_attend(b, &x)?)
    }

    /// Pre-pool token matrix of a verbalized fact: subject placeholder,
    /// relation word, object placeholder, time placeholder.
    pub fn encode_spo_rows(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        store: &TkgStore,
        fact: &Quadruple,
    ) -> Result<Tensor> {
        let t = crate::store::edge_timestamp(fact);
        let subj = self.project(b, ENT_PROJ, &tkge.entity_row(b, fact.subject)?)?;
        let rel_id = self.token_id(&store.relation_names[fact.predicate])?;
        let rel = b.get(WORD_TABLE).select_rows(&[rel_id])?;
        let obj = self.project(b, ENT_PROJ, &tkge.entity_row(b, fact.object)?)?;
        let time_row = tkge
            .timestamp_row(b, t)?
            .add(&tkge.positional_code(tape, t)?)?;
        let time = self.project(b, TIME_PROJ, &time_row)?;
        let mut rows = vec![subj, rel, obj, time];
        if self.use_token_positions {
            for (pos, row) in rows.iter_mut().enumerate() {
                let code = tape.leaf(&[1, self.d_model], pos_code(pos, self.d_model), false)?;
                *row = row.add(&code)?;
            }
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        let x = tape.concat(&refs, 0)?;
        Ok(self.self_attend(b, &x)?)
    }

    /// Eq. 4's s_i: mean-pooled encoding of the verbalized fact.
    pub fn encode_spo(
        &self,
        tape: &Tape,
        b: &BoundParams,
        tkge: &Tkge,
        store: &TkgStore,
        fact: &Quadruple,
    ) -> Result<Tensor> {
        let rows = self.encode_spo_rows(tape, b, tkge, store, fact)?;
        Ok(mean_rows(&rows)?)
    }
}

/// Row-mean of an n x d matrix as a 1 x d row.
pub fn mean_rows(x: &Tensor) -> NumResult<Tensor> {
    let n = x.shape()[0];
    let ones = x.tape().ones(&[1, n]);
    Ok(ones.matmul(x)?.scale(1.0 / n as f64))
}

fn pos_code(pos: usize, d: usize) -> Vec<f64> {
    // token positions reuse the sinusoid; d_model is even by config check
    positional_encoding(pos, d).expect("even d_model")
}

/// Output of Eq. 5: both matrices are n x d so Eq. 6 can pair rows.
pub struct CrossAttended {
    pub qbar: Tensor,
    pub sbar: Tensor,
    /// Question-to-fact attention rows (n x m); empty facts leave `None`.
    pub q_weights: Option<Tensor>,
    /// Question self-attention rows (n x n).
    pub s_weights: Tensor,
    pub no_facts: bool,
}

/// Eq. 5: Qbar_i attends over fact summaries; Sbar re-expresses the
/// question per position. With no facts, Qbar is zero and the fallback is
/// flagged.
pub fn cross_attend(tape: &Tape, q: &Tensor, s: Option<&Tensor>) -> NumResult<CrossAttended> {
    let n = q.shape()[0];
    let d = q.shape()[1];
    let scale = 1.0 / (d as f64).sqrt();
    let s_logits = q.matmul(&q.transpose()?)?.scale(scale);
    let s_weights = s_logits.softmax(1)?;
    let sbar = s_weights.matmul(q)?;
    match s {
        Some(s) if s.shape()[0] > 0 => {
            let q_logits = q.matmul(&s.transpose()?)?.scale(scale);
            let q_weights = q_logits.softmax(1)?;
            let qbar = q_weights.matmul(s)?;
            Ok(CrossAttended {
                qbar,
                sbar,
                q_weights: Some(q_weights),
                s_weights,
                no_facts: false,
            })
        }
        _ => Ok(CrossAttended {
            qbar: tape.zeros(&[n, d]),
            sbar,
            q_weights: None,
            s_weights,
            no_facts: true,
        }),
    }
}

/// Eq. 6: per-position gate g = sigma(W_g [qbar ; sbar] + b), output
/// g * qbar + (1 - g) * sbar. Returns (Q_new, gates).
pub fn gate_fuse(
    b: &BoundParams,
    qbar: &Tensor,
    sbar: &Tensor,
) -> NumResult<(Tensor, Tensor)> {
    if qbar.shape() != sbar.shape() {
        return Err(NumericsError::Contract(format!(
            "gate_fuse shape mismatch: {:?} vs {:?}",
            qbar.shape(),
            sbar.shape()
        )));
    }
    let n = qbar.shape()[0];
    let x = qbar.tape().concat(&[qbar, sbar], 1)?;
    let ones = qbar.tape().ones(&[n, 1]);
    let bias = ones.matmul(b.get(GATE_B))?;
    let g = x.matmul(b.get(GATE_W))?.add(&bias)?.sigmoid();
    let one_minus = g.scale(-1.0).add_scalar(1.0);
    let v = g.mul(qbar)?.add(&one_minus.mul(sbar)?)?;
    Ok((v, g))
}
