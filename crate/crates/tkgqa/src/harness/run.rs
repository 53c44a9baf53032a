//! Training, evaluation, and ablation drivers.

use super::config::{ConfigError, RunConfig};
use super::metrics::{best_gold_rank, EvalReport, MetricError, QuestionOutcome};
use crate::model::{Model, ModelError};
use crate::numerics::Tape;
use crate::params::{CheckpointError, ParamSet};
use crate::store::jsonl::{read_questions, write_questions};
use crate::store::synthetic::{generate_synthetic, SyntheticConfig};
use crate::store::{QuestionRecord, StoreError, TkgStore};
use crate::tkge::{self, PretrainConfig, TkgeError};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Store(#[from] StoreError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("embedding: {0}")]
    Tkge(#[from] TkgeError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("numerics: {0}")]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Facts plus all three question splits.
pub struct Dataset {
    pub store: TkgStore,
    pub train: Vec<QuestionRecord>,
    pub dev: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Dataset> {
        Ok(Dataset {
            store: TkgStore::load_tsv(&cfg.facts)?,
            train: read_questions(&cfg.train)?,
            dev: read_questions(&cfg.dev)?,
            test: read_questions(&cfg.test)?,
        })
    }

    /// Union of question tokens over every split; the encoder vocabulary.
    pub fn tokens(&self) -> BTreeSet<String> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .flat_map(|q| q.tokens.iter().cloned())
            .collect()
    }
}

/// Generate the synthetic corpus and write all four files.
pub fn generate(cfg: &RunConfig, seed: u64) -> Result<()> {
    let synth = SyntheticConfig {
        entity_count: cfg.entities,
        relation_count: cfg.relations,
        timestamp_count: cfg.timestamps,
        facts_per_entity: cfg.facts_per_entity,
        questions_per_template: cfg.questions_per_template,
    };
    let data = generate_synthetic(&synth, seed)?;
    if let Some(dir) = cfg.facts.parent() {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    data.store.save_tsv(&cfg.facts)?;
    write_questions(&cfg.train, &data.train)?;
    write_questions(&cfg.dev, &data.dev)?;
    write_questions(&cfg.test, &data.test)?;
    Ok(())
}

/// Pretrain the embedding tables alone and save them as a checkpoint.
pub fn pretrain(cfg: &RunConfig, seed: u64) -> Result<Vec<f64>> {
    let store = TkgStore::load_tsv(&cfg.facts)?;
    let pc = PretrainConfig {
        dim: cfg.dim,
        lambda: cfg.lambda,
        lr: cfg.pretrain_lr,
        epochs: cfg.pretrain_epochs,
        fact_batch: cfg.pretrain_batch,
        pair_batch: cfg.pretrain_batch,
        seed,
        time_aware: cfg.time_aware,
    };
    let (_, params, trace) = tkge::pretrain(&store, &pc)?;
    params.save(&cfg.checkpoint)?;
    Ok(trace)
}

fn write_run_meta(params: &mut ParamSet, model: &Model, cfg: &RunConfig, seed: u64) {
    let m = &mut params.meta;
    m.insert("layers".into(), cfg.layers.to_string());
    m.insert("max_hop".into(), cfg.max_hop.to_string());
    m.insert("hops".into(), cfg.hops.to_string());
    m.insert("max_nodes".into(), cfg.max_nodes.to_string());
    m.insert("max_facts".into(), cfg.max_facts.to_string());
    m.insert("time_aware".into(), cfg.time_aware.to_string());
    m.insert("adaptive_fusion".into(), cfg.adaptive_fusion.to_string());
    m.insert("multi_hop".into(), cfg.multi_hop.to_string());
    m.insert("constraint_aware".into(), cfg.constraint_aware.to_string());
    m.insert("type_mask".into(), cfg.type_mask.to_string());
    m.insert("seed".into(), seed.to_string());
    m.insert("vocab".into(), model.encoder.vocab().join(","));
}

fn meta_get<'a>(params: &'a ParamSet, key: &str) -> Result<&'a str> {
    params
        .meta
        .get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| CheckpointError::Format(format!("missing meta key {key:?}")).into())
}

fn meta_usize(params: &ParamSet, key: &str) -> Result<usize> {
    meta_get(params, key)?
        .parse()
        .map_err(|_| CheckpointError::Format(format!("bad meta value for {key:?}")).into())
}

fn meta_bool(params: &ParamSet, key: &str) -> Result<bool> {
    meta_get(params, key)?
        .parse()
        .map_err(|_| CheckpointError::Format(format!("bad meta value for {key:?}")).into())
}

/// Score every question once; returns per-question outcomes in input order.
pub fn evaluate_split(
    model: &Model,
    params: &ParamSet,
    store: &TkgStore,
    questions: &[QuestionRecord],
) -> Result<Vec<QuestionOutcome>> {
    let mut outcomes = Vec::with_capacity(questions.len());
    for (index, record) in questions.iter().enumerate() {
        let tape = Tape::new();
        let bound = params.bind(&tape, |_| false)?;
        let fwd = model.forward(&tape, &bound, store, record)?;
        let rank = best_gold_rank(&fwd.logits.values(), &model.gold_ids(record))?;
        outcomes.push(QuestionOutcome {
            index,
            template: record.template,
            qtype: record.qtype,
            atype: record.atype,
            rank,
            hit1: rank <= 1,
            hit10: rank <= 10,
        });
    }
    Ok(outcomes)
}

/// Everything a training run produces. `dev_reports[0]` is the report of
/// the initial (untrained) parameters; entry `e` covers epoch `e`.
pub struct TrainOutcome {
    pub loss_trace: Vec<f64>,
    pub pretrain_trace: Vec<f64>,
    pub dev_reports: Vec<EvalReport>,
    /// Index into `dev_reports` of the checkpointed parameters.
    pub best_epoch: usize,
    pub best_params: ParamSet,
}

impl TrainOutcome {
    pub fn best_report(&self) -> &EvalReport {
        &self.dev_reports[self.best_epoch]
    }
}

/// Full training run: optional embedding pretraining, then end-to-end SGD
/// with per-epoch dev evaluation. The best-dev parameters are saved to the
/// checkpoint directory. Deterministic given `seed`.
pub fn train(cfg: &RunConfig, seed: u64) -> Result<TrainOutcome> {
    let data = Dataset::load(cfg)?;
    train_on(cfg, seed, &data, Some(cfg.checkpoint.as_path()))
}

/// Training over an in-memory dataset; `checkpoint` of `None` skips disk.
pub fn train_on(
    cfg: &RunConfig,
    seed: u64,
    data: &Dataset,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    let tokens = data.tokens();
    let model = Model::build(
        &data.store,
        tokens.iter().map(|s| s.as_str()),
        cfg.model_config(),
    );
    let mut params = model.init_params(seed);
    write_run_meta(&mut params, &model, cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pretrain_trace = if cfg.pretrain_epochs > 0 {
        let pc = PretrainConfig {
            dim: cfg.dim,
            lambda: cfg.lambda,
            lr: cfg.pretrain_lr,
            epochs: cfg.pretrain_epochs,
            fact_batch: cfg.pretrain_batch,
            pair_batch: cfg.pretrain_batch,
            seed,
            time_aware: cfg.time_aware,
        };
        tkge::pretrain_into(&data.store, &model.tkge, &mut params, &pc, &mut rng)?
    } else {
        Vec::new()
    };
    model.align_readout(&mut params);

    let initial = EvalReport::from_outcomes(&evaluate_split(
        &model,
        &params,
        &data.store,
        &data.dev,
    )?);
    let mut dev_reports = vec![initial];
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();

    let trainable = model.trainable();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch.max(1)) {
            let mut grads: IndexMap<String, Vec<f64>> = IndexMap::new();
            for &qi in batch {
                let tape = Tape::new();
                let bound = params.bind(&tape, &trainable)?;
                let loss = model.loss(
                    &tape,
                    &bound,
                    &data.store,
                    &data.train[qi],
                    &mut rng,
                    cfg.fin_batch,
                )?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(HarnessError::Diverged { step });
                }
                loss.backward()?;
                for (name, tensor) in bound.iter() {
                    if let Some(g) = tensor.grad() {
                        let acc = grads
                            .entry(name.clone())
                            .or_insert_with(|| vec![0.0; g.len()]);
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                }
                epoch_loss += value;
                step += 1;
            }
            let mut scale = 1.0 / batch.len() as f64;
            if cfg.clip > 0.0 {
                let norm: f64 = grads
                    .values()
                    .flat_map(|g| g.iter().map(|v| (v * scale) * (v * scale)))
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.clip {
                    scale *= cfg.clip / norm;
                }
            }
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            params.apply_sgd_accumulated(&grads, cfg.lr);
        }
        loss_trace.push(epoch_loss / data.train.len().max(1) as f64);
        let report = EvalReport::from_outcomes(&evaluate_split(
            &model,
            &params,
            &data.store,
            &data.dev,
        )?);
        if report.overall.hits1 > dev_reports[best_epoch].overall.hits1 {
            best_epoch = dev_reports.len();
            best_params = params.clone();
        }
        dev_reports.push(report);
    }
    if let Some(dir) = checkpoint {
        best_params.save(dir)?;
    }
    Ok(TrainOutcome {
        loss_trace,
        pretrain_trace,
        dev_reports,
        best_epoch,
        best_params,
    })
}

/// Rebuild the model a checkpoint was trained with. The stored vocabulary
/// and graph sizes must match the store the questions reference.
pub fn model_from_checkpoint(
    params: &ParamSet,
    store: &TkgStore,
    mu: f64,
    lambda: f64,
) -> Result<Model> {
    for (key, have) in [
        ("entities", store.entity_count()),
        ("relations", store.relation_count()),
        ("timestamps", store.timestamp_count()),
    ] {
        let want = meta_usize(params, key)?;
        if want != have {
            return Err(CheckpointError::Format(format!(
                "checkpoint expects {want} {key}, store has {have}"
            ))
            .into());
        }
    }
    let vocab: Vec<String> = meta_get(params, "vocab")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect();
    let config = crate::model::ModelConfig {
        dim: meta_usize(params, "dim")?,
        d_model: meta_usize(params, "d_model")?,
        layers: meta_usize(params, "layers")?,
        max_hop: meta_usize(params, "max_hop")?,
        max_facts: meta_usize(params, "max_facts")?,
        hops: meta_usize(params, "hops")?,
        max_nodes: meta_usize(params, "max_nodes")?,
        mu,
        lambda,
        type_mask: meta_bool(params, "type_mask")?,
        time_aware: meta_bool(params, "time_aware")?,
        constraint_aware: meta_bool(params, "constraint_aware")?,
        multi_hop: meta_bool(params, "multi_hop")?,
        adaptive_fusion: meta_bool(params, "adaptive_fusion")?,
    };
    let model = Model::build(store, vocab.iter().map(|s| s.as_str()), config);
    let expected = model.encoder.vocab_len();
    if !params.contains(crate::encoder::WORD_TABLE) {
        return Err(CheckpointError::Format("checkpoint lacks a word table".into()).into());
    }
    let have = params.get(crate::encoder::WORD_TABLE).shape[0];
    if have != expected {
        return Err(CheckpointError::Format(format!(
            "vocabulary mismatch: checkpoint word table has {have} rows, model expects {expected}"
        ))
        .into());
    }
    Ok(model)
}

/// Evaluate a saved checkpoint on the test split.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvalReport, Vec<QuestionOutcome>)> {
    let data = Dataset::load(cfg)?;
    let params = ParamSet::load(&cfg.checkpoint)?;
    let model = model_from_checkpoint(&params, &data.store, cfg.mu, cfg.lambda)?;
    for q in data.test.iter().chain(&data.dev).chain(&data.train) {
        for tok in &q.tokens {
            if model.encoder.token_id(tok).is_err() {
                return Err(CheckpointError::Format(format!(
                    "vocabulary mismatch: token {tok:?} absent from checkpoint"
                ))
                .into());
            }
        }
    }
    let outcomes = evaluate_split(&model, &params, &data.store, &data.test)?;
    Ok((EvalReport::from_outcomes(&outcomes), outcomes))
}

pub const ABLATION_VARIANTS: [&str; 5] = [
    "full",
    "no_time_aware",
    "no_multi_hop",
    "no_adaptive_fusion",
    "no_constraint_aware",
];

fn variant_config(cfg: &RunConfig, name: &str) -> RunConfig {
    let mut v = cfg.clone();
    match name {
        "full" => {}
        "no_time_aware" => v.time_aware = false,
        "no_multi_hop" => v.multi_hop = false,
        "no_adaptive_fusion" => v.adaptive_fusion = false,
        "no_constraint_aware" => v.constraint_aware = false,
        other => unreachable!("unknown ablation variant {other}"),
    }
    v
}

pub struct AblationRun {
    pub name: String,
    pub report: EvalReport,
}

pub struct AblationOutcome {
    pub runs: Vec<AblationRun>,
}

impl AblationOutcome {
    pub fn get(&self, name: &str) -> &EvalReport {
        &self
            .runs
            .iter()
            .find(|r| r.name == name)
            .expect("variant present")
            .report
    }

    /// Variant-by-category comparison table (best dev Hits@1).
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
            "variant", "hits@1", "hits@10", "T1", "T2", "T3", "T4", "T5"
        ));
        for run in &self.runs {
            let r = &run.report;
            out.push_str(&format!(
                "{:<22} {:>8.4} {:>8.4} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}\n",
                run.name,
                r.overall.hits1,
                r.overall.hits10,
                r.by_template.t1.hits1,
                r.by_template.t2.hits1,
                r.by_template.t3.hits1,
                r.by_template.t4.hits1,
                r.by_template.t5.hits1,
            ));
        }
        out
    }
}

/// Train the full model and each single-flag-off variant from the same
/// seed; each variant checkpoints into its own subdirectory.
pub fn ablate(cfg: &RunConfig, seed: u64) -> Result<AblationOutcome> {
    let data = Dataset::load(cfg)?;
    let mut runs = Vec::new();
    for name in ABLATION_VARIANTS {
        let vcfg = variant_config(cfg, name);
        let dir = cfg.checkpoint.join(name);
        let outcome = train_on(&vcfg, seed, &data, Some(dir.as_path()))?;
        runs.push(AblationRun {
            name: name.to_string(),
            report: outcome.best_report().clone(),
        });
    }
    Ok(AblationOutcome { runs })
}
