//! Temporal KG embedding: complex-valued quadruple scoring, sinusoidal
//! timestamp codes, a temporal-ordering auxiliary objective, and SGD
//! pretraining on reconstruction + ordering.
//!
//! Embedding rows have width 2D: D real parts followed by D imaginary
//! parts. Entities, relations, and timestamps share the same D.

use crate::numerics::{NumericsError, Result as NumResult, Tape, Tensor};
use crate::params::{BoundParams, ParamSet};
use crate::store::TkgStore;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const ENTITY_TABLE: &str = "tkge.entities";
pub const RELATION_TABLE: &str = "tkge.relations";
pub const TIMESTAMP_TABLE: &str = "tkge.timestamps";
pub const ORDER_WEIGHT: &str = "tkge.w_ts";
pub const POS_OFFSET: &str = "tkge.pos_offset";

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TkgeError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("training diverged (NaN loss) at step {step}")]
    Diverged { step: usize },
}

/// Dimensions and switches for the embedding sub-model.
#[derive(Debug, Clone)]
pub struct Tkge {
    /// D: complex dimension; table rows have width 2D.
    pub dim: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_timestamps: usize,
    /// Zero the positional codes (the "w/o time-aware" ablation).
    pub time_aware: bool,
    /// Allocate a learnable additive offset on top of the fixed sinusoid
    /// codes. Off by default.
    pub learnable_offset: bool,
}

/// Sinusoidal positional encoding of rank `k`, width `2d` (even):
/// component `2i` is `sin(k / 10000^(2i/2d))`, component `2i+1` the cosine.
pub fn positional_encoding(k: usize, width: usize) -> NumResult<Vec<f64>> {
    if width % 2 != 0 {
        return Err(NumericsError::Contract(format!(
            "positional encoding width must be even, got {width}"
        )));
    }
    let mut out = vec![0.0; width];
    for i in 0..width / 2 {
        let angle = k as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Complex elementwise product of two rank-1 tensors laid out as
/// [real; imag] halves of equal width.
pub fn complex_mul(a: &Tensor, b: &Tensor) -> NumResult<Tensor> {
    let d = a.numel() / 2;
    let (ar, ai) = (a.slice(0, d)?, a.slice(d, d)?);
    let (br, bi) = (b.slice(0, d)?, b.slice(d, d)?);
    let re = ar.mul(&br)?.sub(&ai.mul(&bi)?)?;
    let im = ar.mul(&bi)?.add(&ai.mul(&br)?)?;
    a.tape().concat(&[&re, &im], 0)
}

/// Complex conjugate: negate the imaginary half.
pub fn complex_conj(a: &Tensor) -> NumResult<Tensor> {
    let d = a.numel() / 2;
    let re = a.slice(0, d)?;
    let im = a.slice(d, d)?.scale(-1.0);
    a.tape().concat(&[&re, &im], 0)
}

impl Tkge {
    pub fn width(&self) -> usize {
        2 * self.dim
    }

    pub fn init_params(&self, params: &mut ParamSet, scale: f64, rng: &mut impl Rng) {
        let w = self.width();
        params.insert_uniform(ENTITY_TABLE, vec![self.n_entities, w], scale, rng);
        params.insert_uniform(RELATION_TABLE, vec![self.n_relations, w], scale, rng);
        params.insert_uniform(TIMESTAMP_TABLE, vec![self.n_timestamps, w], scale, rng);
        params.insert_zeros(ORDER_WEIGHT, vec![w]);
        if self.learnable_offset {
            params.insert_zeros(POS_OFFSET, vec![self.n_timestamps, w]);
        }
    }

    fn row(&self, b: &BoundParams, table: &str, id: usize, count: usize) -> NumResult<Tensor> {
        if id >= count {
            return Err(NumericsError::Contract(format!(
                "{table} id {id} out of range {count}"
            )));
        }
        b.get(table).select_rows(&[id])?.reshape(&[self.width()])
    }

    pub fn entity_row(&self, b: &BoundParams, id: usize) -> NumResult<Tensor> {
        self.row(b, ENTITY_TABLE, id, self.n_entities)
    }

    pub fn relation_row(&self, b: &BoundParams, id: usize) -> NumResult<Tensor> {
        self.row(b, RELATION_TABLE, id, self.n_relations)
    }

    pub fn timestamp_row(&self, b: &BoundParams, id: usize) -> NumResult<Tensor> {
        self.row(b, TIMESTAMP_TABLE, id, self.n_timestamps)
    }

    /// Positional code of timestamp rank `k` as a constant tensor; all
    /// zeros when `time_aware` is off.
    pub fn positional_code(&self, tape: &Tape, k: usize) -> NumResult<Tensor> {
        let w = self.width();
        if self.time_aware {
            tape.leaf(&[w], positional_encoding(k, w)?, false)
        } else {
            Ok(tape.zeros(&[w]))
        }
    }

    /// Quadruple score Re(<e_s, e_p ⊙ e_t, conj(e_o)>), differentiable in
    /// all four rows.
    pub fn score(
        &self,
        b: &BoundParams,
        s: usize,
        p: usize,
        o: usize,
        t: usize,
    ) -> NumResult<Tensor> {
        let e_s = self.entity_row(b, s)?;
        let e_p = self.relation_row(b, p)?;
        let e_o = self.entity_row(b, o)?;
        let e_t = self.timestamp_row(b, t)?;
        let w = complex_mul(&e_s, &complex_mul(&e_p, &e_t)?)?;
        // Re(w · conj(o)) = wr·or + wi·oi = plain dot product of the rows
        w.mul(&e_o)?.sum().reshape(&[1])
    }

    /// Scores of (s, p, ?, t) against every entity, as a rank-1 tensor.
    pub fn scores_all_objects(
        &self,
        b: &BoundParams,
        s: usize,
        p: usize,
        t: usize,
    ) -> NumResult<Tensor> {
        let e_s = self.entity_row(b, s)?;
        let e_p = self.relation_row(b, p)?;
        let e_t = self.timestamp_row(b, t)?;
        let w = complex_mul(&e_s, &complex_mul(&e_p, &e_t)?)?;
        let col = w.reshape(&[self.width(), 1])?;
        b.get(ENTITY_TABLE)
            .matmul(&col)?
            .reshape(&[self.n_entities])
    }

    /// Scores of (?, p, o, t) against every entity.
    pub fn scores_all_subjects(
        &self,
        b: &BoundParams,
        p: usize,
        o: usize,
        t: usize,
    ) -> NumResult<Tensor> {
        let e_p = self.relation_row(b, p)?;
        let e_o = self.entity_row(b, o)?;
        let e_t = self.timestamp_row(b, t)?;
        // Re(e_s · u) with u = e_p ⊙ e_t ⊙ conj(e_o): dot each entity row
        // with [Re(u); -Im(u)]
        let u = complex_mul(&complex_mul(&e_p, &e_t)?, &complex_conj(&e_o)?)?;
        let v = complex_conj(&u)?; // [ur; -ui]
        let col = v.reshape(&[self.width(), 1])?;
        b.get(ENTITY_TABLE)
            .matmul(&col)?
            .reshape(&[self.n_entities])
    }

    /// Eq.-3 ordering probability: sigma(W_ts^T ((e_m + t_m) - (e_n + t_n))).
    pub fn order_prob(
        &self,
        tape: &Tape,
        b: &BoundParams,
        m: usize,
        n: usize,
    ) -> NumResult<Tensor> {
        let mut em = self
            .timestamp_row(b, m)?
            .add(&self.positional_code(tape, m)?)?;
        let mut en = self
            .timestamp_row(b, n)?
            .add(&self.positional_code(tape, n)?)?;
        if self.learnable_offset {
            em = em.add(&self.row(b, POS_OFFSET, m, self.n_timestamps)?)?;
            en = en.add(&self.row(b, POS_OFFSET, n, self.n_timestamps)?)?;
        }
        let diff = em.sub(&en)?.reshape(&[self.width(), 1])?;
        let w = b.get(ORDER_WEIGHT).reshape(&[1, self.width()])?;
        Ok(w.matmul(&diff)?.reshape(&[1])?.sigmoid())
    }

    /// Binary cross-entropy of the ordering probability against the label
    /// alpha(m, n) = 1 if m < n else 0 (ids are chronological ranks).
    pub fn order_loss(&self, rho: &Tensor, m: usize, n: usize) -> NumResult<Tensor> {
        let alpha = if m < n { 1.0 } else { 0.0 };
        let pos = rho.add_scalar(LOG_CLAMP).log()?;
        let neg = rho.scale(-1.0).add_scalar(1.0 + LOG_CLAMP).log()?;
        pos.scale(-alpha).sub(&neg.scale(1.0 - alpha))
    }

    /// Dual cross-entropy reconstruction loss over a fact batch: object
    /// and subject each replaced by all entities under Eq.-1 scores.
    pub fn reconstruction_loss(
        &self,
        tape: &Tape,
        b: &BoundParams,
        store: &TkgStore,
        fact_indices: &[usize],
    ) -> NumResult<Tensor> {
        if fact_indices.is_empty() {
            return Err(NumericsError::Contract(
                "reconstruction loss over empty batch".into(),
            ));
        }
        let mut terms: Vec<Tensor> = Vec::new();
        for &idx in fact_indices {
            let f = &store.facts[idx];
            let t = crate::store::edge_timestamp(f);
            let obj = self
                .scores_all_objects(b, f.subject, f.predicate, t)?
                .log_softmax()?
                .gather(&[f.object])?
                .scale(-1.0);
            let subj = self
                .scores_all_subjects(b, f.predicate, f.object, t)?
                .log_softmax()?
                .gather(&[f.subject])?
                .scale(-1.0);
            terms.push(obj);
            terms.push(subj);
        }
        let refs: Vec<&Tensor> = terms.iter().collect();
        Ok(tape.concat(&refs, 0)?.mean())
    }

    /// L_fin = L_tc + lambda * L_ts on one sampled batch. With lambda = 0
    /// the ordering term is never evaluated, so W_ts receives no gradient.
    pub fn fin_loss(
        &self,
        tape: &Tape,
        b: &BoundParams,
        store: &TkgStore,
        fact_indices: &[usize],
        pairs: &[(usize, usize)],
        lambda: f64,
    ) -> NumResult<Tensor> {
        let recon = self.reconstruction_loss(tape, b, store, fact_indices)?;
        if lambda == 0.0 || pairs.is_empty() {
            return Ok(recon);
        }
        let mut terms = Vec::new();
        for &(m, n) in pairs {
            let rho = self.order_prob(tape, b, m, n)?;
            terms.push(self.order_loss(&rho, m, n)?);
        }
        let refs: Vec<&Tensor> = terms.iter().collect();
        let order = tape.concat(&refs, 0)?.mean();
        recon.add(&order.scale(lambda))
    }

    /// Fraction of ordered timestamp pairs (m != n) ranked correctly by
    /// the ordering head.
    pub fn pairwise_order_accuracy(&self, params: &ParamSet) -> NumResult<f64> {
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false)?;
        let mut correct = 0usize;
        let mut total = 0usize;
        for m in 0..self.n_timestamps {
            for n in 0..self.n_timestamps {
                if m == n {
                    continue;
                }
                let rho = self.order_prob(&tape, &b, m, n)?.item();
                if (rho > 0.5) == (m < n) {
                    correct += 1;
                }
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub dim: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub fact_batch: usize,
    pub pair_batch: usize,
    pub seed: u64,
    pub time_aware: bool,
}

/// SGD pretraining of the embedding tables and ordering head on
/// L_fin = L_tc + lambda * L_ts. Deterministic given the seed.
pub fn pretrain(
    store: &TkgStore,
    config: &PretrainConfig,
) -> Result<(Tkge, ParamSet, Vec<f64>), TkgeError> {
    let tkge = Tkge {
        dim: config.dim,
        n_entities: store.entity_count(),
        n_relations: store.relation_count(),
        n_timestamps: store.timestamp_count(),
        time_aware: config.time_aware,
        learnable_offset: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    tkge.init_params(&mut params, 0.5 / (config.dim as f64).sqrt(), &mut rng);
    params.meta.insert("dim".into(), config.dim.to_string());
    params
        .meta
        .insert("entities".into(), tkge.n_entities.to_string());
    params
        .meta
        .insert("relations".into(), tkge.n_relations.to_string());
    params
        .meta
        .insert("timestamps".into(), tkge.n_timestamps.to_string());
    params.meta.insert("lambda".into(), config.lambda.to_string());
    params.meta.insert("seed".into(), config.seed.to_string());
    let trace = pretrain_into(store, &tkge, &mut params, config, &mut rng)?;
    Ok((tkge, params, trace))
}

/// Mean reciprocal rank of the gold subject and object of each listed
/// fact under all-entity scoring. Ranks are pessimistic on ties.
pub fn fact_mrr(
    tkge: &Tkge,
    params: &ParamSet,
    store: &TkgStore,
    fact_indices: &[usize],
) -> NumResult<f64> {
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for &idx in fact_indices {
        let f = &store.facts[idx];
        let t = crate::store::edge_timestamp(f);
        for (scores, gold) in [
            (tkge.scores_all_objects(&b, f.subject, f.predicate, t)?, f.object),
            (tkge.scores_all_subjects(&b, f.predicate, f.object, t)?, f.subject),
        ] {
            let vals = scores.values();
            let rank = 1 + vals
                .iter()
                .enumerate()
                .filter(|&(i, &v)| v > vals[gold] || (v == vals[gold] && i < gold))
                .count();
            total += 1.0 / rank as f64;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Pretraining against an existing parameter set (used when the tables
/// live inside the full pipeline's ParamSet).
pub fn pretrain_into(
    store: &TkgStore,
    tkge: &Tkge,
    params: &mut ParamSet,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, TkgeError> {
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..store.facts.len()).collect();
    let mut step = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.fact_batch.max(1)) {
            let pairs: Vec<(usize, usize)> = if config.lambda > 0.0 && tkge.n_timestamps > 1 {
                (0..config.pair_batch)
                    .map(|_| {
                        let m = rng.gen_range(0..tkge.n_timestamps);
                        let mut n = rng.gen_range(0..tkge.n_timestamps - 1);
                        if n >= m {
                            n += 1;
                        }
                        (m, n)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let tape = Tape::new();
            let bound = params.bind(&tape, |_| true)?;
            let loss = tkge.fin_loss(&tape, &bound, store, batch, &pairs, config.lambda)?;
            let value = loss.item();
            if value.is_nan() {
                return Err(TkgeError::Diverged { step });
            }
            loss.backward()?;
            params.apply_sgd(&bound, config.lr);
            epoch_loss += value;
            batches += 1;
            step += 1;
        }
        trace.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamSpec};
    use crate::store::FactRow;

    fn toy_store() -> TkgStore {
        let rows = vec![
            FactRow {
                subject: "a".into(),
                predicate: "p".into(),
                object: "b".into(),
                t_start: 0,
                t_end: 1,
                line: 1,
            },
            FactRow {
                subject: "b".into(),
                predicate: "p".into(),
                object: "c".into(),
                t_start: 1,
                t_end: 2,
                line: 2,
            },
        ];
        TkgStore::build(&rows).unwrap()
    }

    fn toy_tkge(store: &TkgStore, dim: usize) -> (Tkge, ParamSet) {
        let tkge = Tkge {
            dim,
            n_entities: store.entity_count(),
            n_relations: store.relation_count(),
            n_timestamps: store.timestamp_count(),
            time_aware: true,
            learnable_offset: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = ParamSet::new();
        tkge.init_params(&mut params, 0.3, &mut rng);
        (tkge, params)
    }

    #[test]
    fn positional_encoding_basics() {
        // k = 0: sin 0 = 0, cos 0 = 1, alternating
        let v = positional_encoding(0, 6).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // k = 1, width 4: independent direct evaluation
        let v = positional_encoding(1, 4).unwrap();
        assert!((v[0] - 1f64.sin()).abs() < 1e-15);
        assert!((v[1] - 1f64.cos()).abs() < 1e-15);
        let angle = 1.0 / 10000f64.powf(2.0 / 4.0);
        assert!((v[2] - angle.sin()).abs() < 1e-15);
        assert!((v[3] - angle.cos()).abs() < 1e-15);
        assert!(positional_encoding(1, 5).is_err());
    }

    #[test]
    fn positional_encoding_pythagorean_and_exact() {
        for k in [0usize, 1, 7, 63] {
            let v = positional_encoding(k, 16).unwrap();
            for i in 0..8 {
                let s = v[2 * i] * v[2 * i] + v[2 * i + 1] * v[2 * i + 1];
                assert!((s - 1.0).abs() < 1e-12);
            }
            // recomputation is bit-exact
            assert_eq!(v, positional_encoding(k, 16).unwrap());
        }
    }

    #[test]
    fn score_with_unit_relation_time_is_squared_norm() {
        // force e_p ⊙ e_t = (1 + 0i)^D and e_o = e_s
        let store = toy_store();
        let (tkge, mut params) = toy_tkge(&store, 3);
        let w = tkge.width();
        let mut unit = vec![0.0; w];
        for d in 0..tkge.dim {
            unit[d] = 1.0; // real part 1, imaginary 0
        }
        params.get_mut(RELATION_TABLE).values[..w].copy_from_slice(&unit);
        let mut ones_t = vec![0.0; w];
        ones_t[..tkge.dim].fill(1.0);
        params.get_mut(TIMESTAMP_TABLE).values[..w].copy_from_slice(&ones_t);
        let e_s: Vec<f64> = params.get(ENTITY_TABLE).values[..w].to_vec();
        {
            let buf = params.get_mut(ENTITY_TABLE);
            let stride = w;
            for (i, v) in e_s.iter().enumerate() {
                buf.values[stride + i] = *v; // entity 1 := entity 0
            }
        }
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let score = tkge.score(&b, 0, 0, 1, 0).unwrap().item();
        let norm2: f64 = e_s.iter().map(|x| x * x).sum();
        assert!((score - norm2).abs() < 1e-12, "{score} vs {norm2}");
    }

    #[test]
    fn zero_subject_scores_zero() {
        let store = toy_store();
        let (tkge, mut params) = toy_tkge(&store, 3);
        let w = tkge.width();
        params.get_mut(ENTITY_TABLE).values[..w].fill(0.0);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        assert_eq!(tkge.score(&b, 0, 0, 1, 0).unwrap().item(), 0.0);
    }

    #[test]
    fn score_matches_independent_complex_arithmetic() {
        // D = 4 random rows vs a separate complex-number evaluation
        let store = toy_store();
        let (tkge, params) = toy_tkge(&store, 4);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let (s, p, o, t) = (0usize, 0usize, 2usize, 1usize);
        let got = tkge.score(&b, s, p, o, t).unwrap().item();
        let row = |name: &str, id: usize| -> Vec<f64> {
            let buf = params.get(name);
            buf.values[id * 8..(id + 1) * 8].to_vec()
        };
        let (es, ep, eo, et) = (
            row(ENTITY_TABLE, s),
            row(RELATION_TABLE, p),
            row(ENTITY_TABLE, o),
            row(TIMESTAMP_TABLE, t),
        );
        let mut expected = 0.0;
        for d in 0..4 {
            let a = (es[d], es[d + 4]);
            let bb = (ep[d], ep[d + 4]);
            let c = (et[d], et[d + 4]);
            let o_conj = (eo[d], -eo[d + 4]);
            let ab = (a.0 * bb.0 - a.1 * bb.1, a.0 * bb.1 + a.1 * bb.0);
            let abc = (ab.0 * c.0 - ab.1 * c.1, ab.0 * c.1 + ab.1 * c.0);
            expected += abc.0 * o_conj.0 - abc.1 * o_conj.1;
        }
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn score_gradient_passes_grad_check() {
        // Eq.-1 score w.r.t. all four embedding rows, tolerance 1e-6
        let dim = 4;
        let w = 2 * dim;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rand_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..w).map(|_| rng.gen_range(-0.8..0.8)).collect()
        };
        let specs = vec![
            ParamSpec::new(vec![w], rand_row(&mut rng)),
            ParamSpec::new(vec![w], rand_row(&mut rng)),
            ParamSpec::new(vec![w], rand_row(&mut rng)),
            ParamSpec::new(vec![w], rand_row(&mut rng)),
        ];
        let err = grad_check(
            |_, p| {
                let prod = complex_mul(&p[0], &complex_mul(&p[1], &p[3])?)?;
                Ok(prod.mul(&p[2])?.sum())
            },
            &specs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "score gradient error {err}");
    }

    #[test]
    fn order_prob_trivia() {
        let store = toy_store();
        let (tkge, params) = toy_tkge(&store, 3);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        // W_ts is zero-initialized, so rho = 0.5 for all pairs
        for (m, n) in [(0, 1), (1, 0), (2, 2)] {
            let rho = tkge.order_prob(&tape, &b, m, n).unwrap().item();
            assert!((rho - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn order_loss_labels_and_symmetry() {
        let store = toy_store();
        let (tkge, _) = toy_tkge(&store, 3);
        let tape = Tape::new();
        let rho = tape.leaf(&[1], vec![0.5], false).unwrap();
        // alpha = 1, rho = 0.5 -> ln 2
        let l = tkge.order_loss(&rho, 3, 5).unwrap().item();
        assert!((l - 2f64.ln()).abs() < 1e-9);
        // alpha(3,5) = 1 and alpha(5,3) = 0: swapping flips the label
        let rho1 = tape.leaf(&[1], vec![0.8], false).unwrap();
        let rho2 = tape.leaf(&[1], vec![0.2], false).unwrap();
        let a = tkge.order_loss(&rho1, 3, 5).unwrap().item();
        let b = tkge.order_loss(&rho2, 5, 3).unwrap().item();
        assert!((a - b).abs() < 1e-9);
        // clamped at exact 0/1
        let rho0 = tape.leaf(&[1], vec![0.0], false).unwrap();
        assert!(tkge.order_loss(&rho0, 0, 1).unwrap().item().is_finite());
    }

    #[test]
    fn reconstruction_loss_degenerate_cases() {
        // single entity: both softmaxes are over one candidate -> loss 0
        let rows = vec![FactRow {
            subject: "a".into(),
            predicate: "p".into(),
            object: "a".into(),
            t_start: 0,
            t_end: 0,
            line: 1,
        }];
        let store = TkgStore::build(&rows).unwrap();
        let (tkge, params) = toy_tkge(&store, 2);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let loss = tkge
            .reconstruction_loss(&tape, &b, &store, &[0])
            .unwrap()
            .item();
        assert!(loss.abs() < 1e-12);

        // two entities, all-zero embeddings: uniform scores -> ln 2
        let rows = vec![FactRow {
            subject: "a".into(),
            predicate: "p".into(),
            object: "b".into(),
            t_start: 0,
            t_end: 0,
            line: 1,
        }];
        let store = TkgStore::build(&rows).unwrap();
        let (tkge, mut params) = toy_tkge(&store, 2);
        for name in [ENTITY_TABLE, RELATION_TABLE, TIMESTAMP_TABLE] {
            params.get_mut(name).values.fill(0.0);
        }
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let loss = tkge
            .reconstruction_loss(&tape, &b, &store, &[0])
            .unwrap()
            .item();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_loss_matches_dense_enumeration() {
        let store = toy_store();
        let (tkge, params) = toy_tkge(&store, 3);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let got = tkge
            .reconstruction_loss(&tape, &b, &store, &[0, 1])
            .unwrap()
            .item();
        // independent dense computation from the raw tables
        let w = tkge.width();
        let row = |name: &str, id: usize| params.get(name).values[id * w..(id + 1) * w].to_vec();
        let cscore = |es: &[f64], ep: &[f64], eo: &[f64], et: &[f64]| -> f64 {
            let d = w / 2;
            let mut total = 0.0;
            for i in 0..d {
                let ab = (
                    es[i] * ep[i] - es[i + d] * ep[i + d],
                    es[i] * ep[i + d] + es[i + d] * ep[i],
                );
                let abc = (
                    ab.0 * et[i] - ab.1 * et[i + d],
                    ab.0 * et[i + d] + ab.1 * et[i],
                );
                total += abc.0 * eo[i] + abc.1 * eo[i + d];
            }
            total
        };
        let mut terms = Vec::new();
        for f in &store.facts {
            let (es, ep, et) = (
                row(ENTITY_TABLE, f.subject),
                row(RELATION_TABLE, f.predicate),
                row(TIMESTAMP_TABLE, f.time_start),
            );
            let all_obj: Vec<f64> = (0..store.entity_count())
                .map(|o| cscore(&es, &ep, &row(ENTITY_TABLE, o), &et))
                .collect();
            terms.push(nll(&all_obj, f.object));
            let eo = row(ENTITY_TABLE, f.object);
            let all_subj: Vec<f64> = (0..store.entity_count())
                .map(|s| cscore(&row(ENTITY_TABLE, s), &ep, &eo, &et))
                .collect();
            terms.push(nll(&all_subj, f.subject));
        }
        let expected = terms.iter().sum::<f64>() / terms.len() as f64;
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    fn nll(scores: &[f64], gold: usize) -> f64 {
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        -(scores[gold] - mx - z.ln())
    }

    #[test]
    fn lambda_zero_never_touches_order_weight() {
        let store = toy_store();
        let cfg = PretrainConfig {
            dim: 3,
            lambda: 0.0,
            lr: 0.05,
            epochs: 3,
            fact_batch: 2,
            pair_batch: 4,
            seed: 5,
            time_aware: true,
        };
        let (_, params, trace) = pretrain(&store, &cfg).unwrap();
        assert_eq!(trace.len(), 3);
        assert!(params.get(ORDER_WEIGHT).values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pretrain_beats_random_mrr_on_held_out_facts() {
        // 50 entities, 20 timestamps; each (s, p, o) pair recurs at ten
        // timestamps so ranking a held-out timestamp's fact is learnable
        let mut rows = Vec::new();
        for i in 0..25usize {
            for j in 0..10usize {
                rows.push(FactRow {
                    subject: format!("a{i}"),
                    predicate: format!("p{}", i % 2),
                    object: format!("b{i}"),
                    t_start: 2 * j as i64 + (i % 2) as i64,
                    t_end: 2 * j as i64 + (i % 2) as i64,
                    line: rows.len() + 1,
                });
            }
        }
        let store = TkgStore::build(&rows).unwrap();
        assert_eq!(store.entity_count(), 50);
        assert_eq!(store.timestamp_count(), 20);
        let n = store.facts.len();
        let held_out: Vec<usize> = (0..n).filter(|i| i % 10 == 3).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % 10 != 3).collect();
        let tkge = Tkge {
            dim: 12,
            n_entities: store.entity_count(),
            n_relations: store.relation_count(),
            n_timestamps: store.timestamp_count(),
            time_aware: true,
            learnable_offset: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        tkge.init_params(&mut params, 0.4, &mut rng);
        let mut order = train.clone();
        for _ in 0..40 {
            order.shuffle(&mut rng);
            for batch in order.chunks(16) {
                let tape = Tape::new();
                let b = params.bind(&tape, |_| true).unwrap();
                let loss = tkge.reconstruction_loss(&tape, &b, &store, batch).unwrap();
                loss.backward().unwrap();
                params.apply_sgd(&b, 0.5);
            }
        }
        let mrr = fact_mrr(&tkge, &params, &store, &held_out).unwrap();
        let baseline = 2.0 / store.entity_count() as f64;
        assert!(mrr >= 5.0 * baseline, "mrr {mrr} vs baseline {baseline}");
    }

    #[test]
    fn higher_lambda_raises_order_accuracy() {
        let mut rows = Vec::new();
        for t in 0..12 {
            rows.push(FactRow {
                subject: format!("s{}", t % 4),
                predicate: "p".into(),
                object: "o".into(),
                t_start: t,
                t_end: t,
                line: t as usize + 1,
            });
        }
        let store = TkgStore::build(&rows).unwrap();
        let base = PretrainConfig {
            dim: 6,
            lambda: 0.0,
            lr: 0.3,
            epochs: 20,
            fact_batch: 4,
            pair_batch: 16,
            seed: 11,
            time_aware: true,
        };
        let (t0, p0, _) = pretrain(&store, &base).unwrap();
        let acc0 = t0.pairwise_order_accuracy(&p0).unwrap();
        let with = PretrainConfig {
            lambda: 1.0,
            ..base
        };
        let (t1, p1, _) = pretrain(&store, &with).unwrap();
        let acc1 = t1.pairwise_order_accuracy(&p1).unwrap();
        assert!(acc1 > acc0, "lambda=1 acc {acc1} <= lambda=0 acc {acc0}");
    }

    #[test]
    fn order_training_drives_loss_down_and_accuracy_up() {
        // frozen zero embeddings + fixed positional codes; train W_ts only
        let n_timestamps = 16;
        let tkge = Tkge {
            dim: 8,
            n_entities: 2,
            n_relations: 1,
            n_timestamps,
            time_aware: true,
            learnable_offset: false,
        };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        tkge.init_params(&mut params, 0.1, &mut rng);
        for name in [ENTITY_TABLE, RELATION_TABLE, TIMESTAMP_TABLE] {
            params.get_mut(name).values.fill(0.0); // frozen zero embeddings
        }
        let acc0 = tkge.pairwise_order_accuracy(&params).unwrap();
        let mut losses = Vec::new();
        for step in 0..120 {
            let _ = step;
            let tape = Tape::new();
            let b = params.bind(&tape, |n| n == ORDER_WEIGHT).unwrap();
            let mut terms = Vec::new();
            for m in 0..n_timestamps {
                for n in 0..n_timestamps {
                    if m != n {
                        let rho = tkge.order_prob(&tape, &b, m, n).unwrap();
                        terms.push(tkge.order_loss(&rho, m, n).unwrap());
                    }
                }
            }
            let refs: Vec<&Tensor> = terms.iter().collect();
            let loss = tape.concat(&refs, 0).unwrap().mean();
            losses.push(loss.item());
            loss.backward().unwrap();
            params.apply_sgd(&b, 2.0);
        }
        let acc = tkge.pairwise_order_accuracy(&params).unwrap();
        assert!(acc > acc0.max(0.9), "accuracy {acc0} -> {acc}");
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }
}
