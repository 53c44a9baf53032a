//! End-to-end pipeline: retrieval, question encoding, graph reasoning,
//! fusion, and the combined training loss. Ablation switches reshape the
//! pipeline at construction time.

use crate::encoder::{self, Encoder, EncoderError};
use crate::fusion::Fusion;
use crate::numerics::{NumericsError, Result as NumResult, Tape, Tensor, NEG_INF};
use crate::params::{BoundParams, ParamSet};
use crate::reasoner::{self, Reasoner};
use crate::store::{
    extract_subgraph, retrieve_spo, AnswerKind, QuestionRecord, StoreError, TkgStore,
};
use crate::tkge::Tkge;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Pipeline hyperparameters and ablation switches.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// D: complex dimension of the KG tables (rows are 2D wide).
    pub dim: usize,
    pub d_model: usize,
    /// L: reasoner depth.
    pub layers: usize,
    /// Aleph: diffusion horizon.
    pub max_hop: usize,
    /// SPO retrieval budget per question.
    pub max_facts: usize,
    /// Subgraph extraction radius and node cap.
    pub hops: usize,
    pub max_nodes: usize,
    /// Weight of the continued embedding objective; 0 freezes KG tables.
    pub mu: f64,
    /// Ordering coefficient inside L_fin.
    pub lambda: f64,
    /// Restrict candidates to the annotated answer type (diagnostic).
    pub type_mask: bool,
    /// Ablation switches; all true for the full model.
    pub time_aware: bool,
    pub constraint_aware: bool,
    pub multi_hop: bool,
    pub adaptive_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 8,
            d_model: 16,
            layers: 2,
            max_hop: 2,
            max_facts: 6,
            hops: 2,
            max_nodes: 32,
            mu: 0.1,
            lambda: 0.3,
            type_mask: false,
            time_aware: true,
            constraint_aware: true,
            multi_hop: true,
            adaptive_fusion: true,
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub tkge: Tkge,
    pub encoder: Encoder,
    pub reasoner: Reasoner,
    pub fusion: Fusion,
}

/// Intermediate activations surfaced for tests and diagnostics.
pub struct Forward {
    pub logits: Tensor,
    pub prediction: Tensor,
    pub q_new: Tensor,
    pub h_final: Tensor,
    pub h_initial: Tensor,
    pub s_graph: Tensor,
    pub gates: Option<Tensor>,
    pub no_facts: bool,
    pub subgraph_nodes: usize,
    pub subgraph_edges: usize,
}

impl Model {
    /// Assemble the pipeline for a store and the question vocabulary.
    pub fn build<'a>(
        store: &TkgStore,
        tokens: impl IntoIterator<Item = &'a str>,
        config: ModelConfig,
    ) -> Model {
        let tkge = Tkge {
            dim: config.dim,
            n_entities: store.entity_count(),
            n_relations: store.relation_count(),
            n_timestamps: store.timestamp_count(),
            time_aware: config.time_aware,
            learnable_offset: false,
        };
        let encoder = Encoder::new(config.d_model, tkge.width(), tokens, store);
        let reasoner = Reasoner {
            d_model: config.d_model,
            layers: config.layers,
            max_hop: if config.multi_hop { config.max_hop } else { 0 },
        };
        let fusion = Fusion {
            d_model: config.d_model,
            n_entities: store.entity_count(),
            n_timestamps: store.timestamp_count(),
        };
        Model {
            config,
            tkge,
            encoder,
            reasoner,
            fusion,
        }
    }

    /// Deterministic parameter initialization; insertion order fixes the
    /// checkpoint layout.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        // KG tables use their own scale; the pipeline scale is too small
        // for the multiplicative scoring to escape its initial plateau.
        let kg_scale = 0.5 / (self.config.dim as f64).sqrt();
        self.tkge.init_params(&mut params, kg_scale, &mut rng);
        self.encoder.init_params(&mut params, scale, &mut rng);
        // Placeholder projections start near dot-preserving so that an
        // exact entity/time match already wins the cross-attention softmax.
        let proj_scale = 3.0 * (3.0 / self.config.d_model as f64).sqrt();
        for name in [encoder::ENT_PROJ, encoder::TIME_PROJ] {
            params.insert_uniform(
                name,
                vec![self.tkge.width(), self.config.d_model],
                proj_scale,
                &mut rng,
            );
        }
        // Start the diffusion near the identity (hop-0 heavy) so node
        // identity survives to the pooled readout; deeper hops stay trainable.
        let mut xi = vec![-2.0; self.config.max_hop + 1];
        xi[0] = 2.0;
        params.insert(reasoner::XI, vec![self.config.max_hop + 1], xi);
        self.reasoner
            .init_params(&mut params, self.tkge.width(), scale, &mut rng);
        self.fusion.init_params(&mut params, scale, &mut rng);
        params.meta.insert("dim".into(), self.config.dim.to_string());
        params
            .meta
            .insert("d_model".into(), self.config.d_model.to_string());
        params
            .meta
            .insert("entities".into(), self.tkge.n_entities.to_string());
        params
            .meta
            .insert("relations".into(), self.tkge.n_relations.to_string());
        params
            .meta
            .insert("timestamps".into(), self.tkge.n_timestamps.to_string());
        params
    }

    /// Align the readout path with the KG tables (run after pretraining):
    /// the encoder and reasoner share one entity and one time projection,
    /// and each output column starts as the projected embedding row of its
    /// answer candidate. Attention then selects answers the head can
    /// already decode; all matrices remain free parameters.
    pub fn align_readout(&self, params: &mut ParamSet) {
        let ent = params.get(crate::encoder::ENT_PROJ).values.clone();
        let time = params.get(crate::encoder::TIME_PROJ).values.clone();
        params.get_mut(crate::reasoner::ENT_PROJ).values = ent;
        params.get_mut(crate::reasoner::TIME_PROJ).values = time;

        let w = self.tkge.width();
        let d = self.config.d_model;
        let n_e = self.tkge.n_entities;
        let n_t = self.tkge.n_timestamps;
        let proj = |table: &[f64], row: usize, p: &[f64], out: &mut [f64]| {
            let r = &table[row * w..(row + 1) * w];
            for (i, o) in out.iter_mut().enumerate() {
                *o = r.iter().zip(p.chunks(d)).map(|(x, pk)| x * pk[i]).sum();
            }
        };
        let ent_proj = params.get(crate::encoder::ENT_PROJ).values.clone();
        let time_proj = params.get(crate::encoder::TIME_PROJ).values.clone();
        let entities = params.get(crate::tkge::ENTITY_TABLE).values.clone();
        let mut timestamps = params.get(crate::tkge::TIMESTAMP_TABLE).values.clone();
        if self.tkge.time_aware {
            for t in 0..n_t {
                let code = crate::tkge::positional_encoding(t, w).expect("even width");
                for (v, c) in timestamps[t * w..(t + 1) * w].iter_mut().zip(&code) {
                    *v += c;
                }
            }
        }
        let mut col = vec![0.0; d];
        let w_o = &mut params.get_mut(crate::fusion::W_O).values;
        for e in 0..n_e {
            proj(&entities, e, &ent_proj, &mut col);
            for i in 0..d {
                w_o[i * (n_e + n_t) + e] = col[i];
            }
        }
        for t in 0..n_t {
            proj(&timestamps, t, &time_proj, &mut col);
            for i in 0..d {
                w_o[i * (n_e + n_t) + n_e + t] = col[i];
            }
        }
    }

    /// Trainable-name filter: mu = 0 freezes the KG embedding tables and
    /// the ordering head (the whole continued-pretraining block).
    pub fn trainable(&self) -> impl Fn(&str) -> bool {
        let train_kg = self.config.mu > 0.0;
        move |name: &str| train_kg || !name.starts_with("tkge.")
    }

    /// Joint answer id: entities first, then timestamps.
    pub fn answer_id(&self, kind: AnswerKind, id: usize) -> usize {
        match kind {
            AnswerKind::Entity => id,
            AnswerKind::Time => self.tkge.n_entities + id,
        }
    }

    pub fn gold_ids(&self, record: &QuestionRecord) -> Vec<usize> {
        record
            .answers
            .iter()
            .map(|a| self.answer_id(a.kind, a.id))
            .collect()
    }

    /// One forward pass over a question.
    pub fn forward(
        &self,
        tape: &Tape,
        b: &BoundParams,
        store: &TkgStore,
        record: &QuestionRecord,
    ) -> Result<Forward> {
        let facts = retrieve_spo(store, record, self.config.max_facts);
        let seeds: Vec<usize> = record.entities.iter().map(|a| a.id).collect();
        let subgraph = extract_subgraph(store, &seeds, self.config.hops, self.config.max_nodes)?;

        let q = self
            .encoder
            .encode_question(tape, b, &self.tkge, record)?;

        let (q_new, gates, no_facts) = if self.config.constraint_aware {
            let s = if facts.is_empty() {
                None
            } else {
                let rows: Vec<Tensor> = facts
                    .iter()
                    .map(|f| self.encoder.encode_spo(tape, b, &self.tkge, store, f))
                    .collect::<std::result::Result<_, _>>()?;
                let refs: Vec<&Tensor> = rows.iter().collect();
                Some(tape.concat(&refs, 0)?)
            };
            let ca = encoder::cross_attend(tape, &q, s.as_ref())?;
            let (v, g) = encoder::gate_fuse(b, &ca.qbar, &ca.sbar)?;
            (v, Some(g), ca.no_facts)
        } else {
            (q, None, facts.is_empty())
        };

        let (h_final, h_initial) = self.reasoner.run(tape, b, &self.tkge, &subgraph)?;
        let qhat = encoder::mean_rows(&q_new)?;
        // V_q: candidate nodes. Entities named in the question are given,
        // not candidates, so seeds are pooled over only when nothing else is.
        let seeds: std::collections::HashSet<usize> =
            subgraph.seed_nodes.iter().copied().collect();
        let mut candidates: Vec<usize> = (0..subgraph.nodes.len())
            .filter(|i| !seeds.contains(i))
            .collect();
        if candidates.is_empty() {
            candidates = (0..subgraph.nodes.len()).collect();
        }
        let s_graph = self.reasoner.pool(&h_final, &candidates, &qhat)?;

        let t_feat = self
            .fusion
            .temporal_feature(tape, b, &self.tkge, &subgraph)?;
        let h_fusion = if self.config.adaptive_fusion {
            let (q2g, g2q) = self.fusion.view1_align(&q_new, &s_graph)?;
            let temp = self.fusion.view2_temporal(b, &q2g, &g2q, &t_feat)?;
            let (fused, _) = self.fusion.view3_gate(b, &q2g, &g2q, &temp)?;
            fused
        } else {
            let h_mean = encoder::mean_rows(&h_final)?;
            self.fusion.alt_fusion(b, &qhat, &h_mean, &t_feat)?
        };

        let mut logits = self.fusion.logits(b, &h_fusion)?;
        if self.config.type_mask {
            logits = logits.add(&self.type_mask_tensor(tape, record)?)?;
        }
        let prediction = logits.softmax(0)?;
        Ok(Forward {
            logits,
            prediction,
            q_new,
            h_final,
            h_initial,
            s_graph,
            gates,
            no_facts,
            subgraph_nodes: subgraph.nodes.len(),
            subgraph_edges: subgraph.edges.len(),
        })
    }

    fn type_mask_tensor(&self, tape: &Tape, record: &QuestionRecord) -> NumResult<Tensor> {
        let n_e = self.tkge.n_entities;
        let space = self.fusion.answer_space();
        let mut mask = vec![NEG_INF; space];
        let keep = match record.atype {
            crate::store::AnswerType::Entity => 0..n_e,
            crate::store::AnswerType::Time => n_e..space,
        };
        for v in &mut mask[keep] {
            *v = 0.0;
        }
        tape.leaf(&[space], mask, false)
    }

    /// qa_loss + mu * L_fin on a sampled fact batch.
    pub fn loss(
        &self,
        tape: &Tape,
        b: &BoundParams,
        store: &TkgStore,
        record: &QuestionRecord,
        rng: &mut ChaCha8Rng,
        fin_batch: usize,
    ) -> Result<Tensor> {
        let fwd = self.forward(tape, b, store, record)?;
        let qa = self.fusion.qa_loss(&fwd.logits, &self.gold_ids(record))?;
        if self.config.mu == 0.0 || fin_batch == 0 || store.facts.is_empty() {
            return Ok(qa);
        }
        let facts: Vec<usize> = (0..fin_batch)
            .map(|_| rng.gen_range(0..store.facts.len()))
            .collect();
        let n_t = self.tkge.n_timestamps;
        let pairs: Vec<(usize, usize)> = if self.config.lambda > 0.0 && n_t > 1 {
            (0..fin_batch)
                .map(|_| {
                    let m = rng.gen_range(0..n_t);
                    let mut n = rng.gen_range(0..n_t - 1);
                    if n >= m {
                        n += 1;
                    }
                    (m, n)
                })
                .collect()
        } else {
            Vec::new()
        };
        let fin = self
            .tkge
            .fin_loss(tape, b, store, &facts, &pairs, self.config.lambda)?;
        Ok(qa.add(&fin.scale(self.config.mu))?)
    }
}

#[cfg(test)]
mod tests {
    const GRAD_SEED: u64 = 42;
    use super::*;
    use crate::numerics::{grad_check, ParamSpec};
    use crate::store::synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};

    fn tiny_model(flags: fn(&mut ModelConfig)) -> (SyntheticDataset, Model, ParamSet) {
        let data = generate_synthetic(&SyntheticConfig::tiny(), 13).unwrap();
        let mut cfg = ModelConfig {
            dim: 3,
            d_model: 6,
            layers: 1,
            max_hop: 1,
            max_facts: 4,
            hops: 1,
            max_nodes: 12,
            ..ModelConfig::default()
        };
        flags(&mut cfg);
        let tokens: Vec<&str> = data
            .train
            .iter()
            .chain(&data.dev)
            .chain(&data.test)
            .flat_map(|r| r.tokens.iter().map(|s| s.as_str()))
            .collect();
        let model = Model::build(&data.store, tokens, cfg);
        let params = model.init_params(99);
        (data, model, params)
    }

    #[test]
    fn forward_produces_distribution_and_gates() {
        let (data, model, params) = tiny_model(|_| {});
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let rec = &data.dev[0];
        let fwd = model.forward(&tape, &b, &data.store, rec).unwrap();
        let s: f64 = fwd.prediction.values().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(fwd.prediction.values().iter().all(|v| *v >= 0.0));
        let gates = fwd.gates.expect("constraint-aware run has gates");
        assert!(gates.values().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(!fwd.no_facts);
        assert!(fwd.subgraph_nodes >= 1);
    }

    #[test]
    fn same_seed_gives_identical_params_and_logits() {
        let (data, model, params) = tiny_model(|_| {});
        let params2 = model.init_params(99);
        for name in params.names() {
            assert_eq!(params.get(name).values, params2.get(name).values);
        }
        let rec = &data.dev[0];
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let l1 = model.forward(&tape, &b, &data.store, rec).unwrap().logits;
        let tape2 = Tape::new();
        let b2 = params2.bind(&tape2, |_| false).unwrap();
        let l2 = model.forward(&tape2, &b2, &data.store, rec).unwrap().logits;
        assert_eq!(l1.values(), l2.values());
    }

    #[test]
    fn mu_zero_freezes_kg_tables() {
        let (data, model, mut params) = tiny_model(|c| c.mu = 0.0);
        let before = params.get(crate::tkge::ENTITY_TABLE).values.clone();
        let tape = Tape::new();
        let b = params.bind(&tape, model.trainable()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loss = model
            .loss(&tape, &b, &data.store, &data.train[0], &mut rng, 2)
            .unwrap();
        loss.backward().unwrap();
        params.apply_sgd(&b, 0.1);
        assert_eq!(params.get(crate::tkge::ENTITY_TABLE).values, before);
        // non-KG parameters did move
        assert!(params
            .get(crate::fusion::W_O)
            .values
            .iter()
            .zip(model.init_params(99).get(crate::fusion::W_O).values.iter())
            .any(|(a, b)| a != b));
    }

    #[test]
    fn ablation_flags_reshape_only_their_stage() {
        // w/o adaptive: Q_new and H^L identical to the full model, logits differ
        let (data, full, params) = tiny_model(|_| {});
        let (_, noad, _) = tiny_model(|c| c.adaptive_fusion = false);
        let rec = &data.dev[0];
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let f1 = full.forward(&tape, &b, &data.store, rec).unwrap();
        let f2 = noad.forward(&tape, &b, &data.store, rec).unwrap();
        assert_eq!(f1.q_new.values(), f2.q_new.values());
        assert_eq!(f1.h_final.values(), f2.h_final.values());
        assert_ne!(f1.logits.values(), f2.logits.values());
        // w/o multi-hop: H^L collapses to H^0
        let (_, nohop, _) = tiny_model(|c| c.multi_hop = false);
        let pn = nohop.init_params(99);
        let bn = pn.bind(&tape, |_| false).unwrap();
        let f3 = nohop.forward(&tape, &bn, &data.store, rec).unwrap();
        for (a, bb) in f3.h_final.values().iter().zip(f3.h_initial.values()) {
            assert!((a - bb).abs() < 1e-12);
        }
        // w/o constraint-aware: Q_new is the raw question encoding (no gates)
        let (_, nocon, _) = tiny_model(|c| c.constraint_aware = false);
        let f4 = nocon.forward(&tape, &b, &data.store, rec).unwrap();
        assert!(f4.gates.is_none());
        assert_ne!(f4.q_new.values(), f1.q_new.values());
    }

    #[test]
    fn type_mask_zeroes_other_kind() {
        let (data, model, params) = tiny_model(|c| c.type_mask = true);
        let rec = data
            .dev
            .iter()
            .chain(&data.train)
            .find(|r| r.atype == crate::store::AnswerType::Entity)
            .unwrap();
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let fwd = model.forward(&tape, &b, &data.store, rec).unwrap();
        let n_e = model.tkge.n_entities;
        assert!(fwd.prediction.values()[n_e..].iter().all(|v| *v == 0.0));
        let s: f64 = fwd.prediction.values()[..n_e].iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_pipeline_gradient_passes_grad_check() {
        let (data, model, _) = tiny_model(|c| {
            c.d_model = 4;
            c.dim = 2;
        });
        let params = model.init_params(GRAD_SEED);
        let rec = &data.dev[0];
        let names = [
            crate::encoder::ENT_PROJ,
            crate::encoder::GATE_W,
            crate::reasoner::ENT_PROJ,
            crate::reasoner::XI,
            crate::fusion::W_G,
            crate::fusion::W_O,
        ];
        let specs: Vec<ParamSpec> = names
            .iter()
            .map(|n| {
                let buf = params.get(n);
                ParamSpec::new(buf.shape.clone(), buf.values.clone())
            })
            .collect();
        let err = grad_check(
            |tape, p| {
                let overrides: Vec<(&str, &Tensor)> =
                    names.iter().zip(p).map(|(n, t)| (*n, t)).collect();
                let b = params.bind_with_overrides(tape, |_| false, &overrides)?;
                let fwd = model
                    .forward(tape, &b, &data.store, rec)
                    .map_err(|e| NumericsError::Contract(e.to_string()))?;
                model
                    .fusion
                    .qa_loss(&fwd.logits, &model.gold_ids(rec))
            },
            &specs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "pipeline gradient error {err}");
    }
}
