//! Synthetic temporal KG and question generation.
//!
//! The KG has role-holder structure: "target" entities (organizations)
//! carry, per relation, a timeline of disjoint intervals each held by a
//! distinct "holder" entity drawn from a small per-target pool. Five
//! question templates are instantiated over the generated facts, with
//! gold answers computed exhaustively by scanning the fact list.

use super::{
    Annotation, Answer, AnswerKind, AnswerType, FactRow, QuestionRecord, QuestionType, Result,
    StoreError, TemplateId, TkgStore,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

pub const ENTITY_PLACEHOLDER: &str = "<ent>";
pub const TIME_PLACEHOLDER: &str = "<time>";

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub entity_count: usize,
    pub relation_count: usize,
    pub timestamp_count: usize,
    /// Timeline segments per (target entity, relation) pair.
    pub facts_per_entity: usize,
    pub questions_per_template: usize,
}

impl SyntheticConfig {
    /// The standard synthetic dataset used by the acceptance runs.
    pub fn standard() -> Self {
        Self {
            entity_count: 200,
            relation_count: 4,
            timestamp_count: 40,
            facts_per_entity: 5,
            questions_per_template: 80,
        }
    }

    /// Smallest instance that still instantiates every template.
    pub fn tiny() -> Self {
        Self {
            entity_count: 30,
            relation_count: 2,
            timestamp_count: 10,
            facts_per_entity: 3,
            questions_per_template: 4,
        }
    }
}

#[derive(Debug)]
pub struct SyntheticDataset {
    pub store: TkgStore,
    pub train: Vec<QuestionRecord>,
    pub dev: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
}

/// Timeline segment at name level, pre-vocabulary.
#[derive(Debug, Clone)]
struct Segment {
    holder: String,
    start: usize, // timestamp rank
    end: usize,
}

fn timestamp_label(rank: usize) -> i64 {
    1900 + rank as i64
}

/// Build a deterministic synthetic KG plus train/dev/test question splits.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (config.entity_count / 10).max(1);
    let holders = config
        .entity_count
        .checked_sub(targets)
        .filter(|h| *h >= config.facts_per_entity)
        .ok_or_else(|| {
            StoreError::Config(format!(
                "entity_count {} leaves fewer holder entities than the {} facts per timeline",
                config.entity_count, config.facts_per_entity
            ))
        })?;
    if config.facts_per_entity > config.timestamp_count {
        return Err(StoreError::Config(format!(
            "facts_per_entity {} exceeds the {} timestamp slots",
            config.facts_per_entity, config.timestamp_count
        )));
    }
    if config.facts_per_entity == 0 || config.relation_count == 0 || config.timestamp_count == 0 {
        return Err(StoreError::Config(
            "relation, timestamp, and facts-per-entity counts must be positive".into(),
        ));
    }

    let holder_names: Vec<String> = (0..holders).map(|i| format!("per{i}")).collect();
    let target_names: Vec<String> = (0..targets).map(|j| format!("org{j}")).collect();
    let relation_names: Vec<String> = (0..config.relation_count)
        .map(|r| format!("rel{r}"))
        .collect();

    // per-target holder pool: small so holders recur across that target's
    // timelines, which makes embeddings informative
    let pool_size = holders.min(config.facts_per_entity + 2);
    let mut timelines: Vec<(String, String, Vec<Segment>)> = Vec::new();
    let mut rows: Vec<FactRow> = Vec::new();
    for target in &target_names {
        let mut pool = holder_names.clone();
        pool.shuffle(&mut rng);
        pool.truncate(pool_size);
        for relation in &relation_names {
            let segments = build_timeline(config, &pool, &mut rng);
            for seg in &segments {
                rows.push(FactRow {
                    subject: seg.holder.clone(),
                    predicate: relation.clone(),
                    object: target.clone(),
                    t_start: timestamp_label(seg.start),
                    t_end: timestamp_label(seg.end),
                    line: rows.len() + 1,
                });
            }
            timelines.push((target.clone(), relation.clone(), segments));
        }
    }

    let store = TkgStore::build(&rows)?;
    let questions = instantiate_templates(&store, &timelines, config, &mut rng)?;

    // split each template's instantiations disjointly
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for per_template in questions {
        let n = per_template.len();
        if n < 3 {
            return Err(StoreError::Config(format!(
                "template produced only {n} instantiations; need at least 3 for splits"
            )));
        }
        let n_dev = (n * 15 / 100).max(1);
        let n_test = (n * 15 / 100).max(1);
        for (i, q) in per_template.into_iter().enumerate() {
            if i < n_dev {
                dev.push(q);
            } else if i < n_dev + n_test {
                test.push(q);
            } else {
                train.push(q);
            }
        }
    }
    Ok(SyntheticDataset {
        store,
        train,
        dev,
        test,
    })
}

fn build_timeline(config: &SyntheticConfig, pool: &[String], rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let k = config.facts_per_entity;
    // distinct segment start ranks, ascending
    let mut ranks: Vec<usize> = (0..config.timestamp_count).collect();
    ranks.shuffle(rng);
    let mut starts: Vec<usize> = ranks.into_iter().take(k).collect();
    starts.sort_unstable();
    // distinct holders within the timeline
    let mut holder_pool: Vec<&String> = pool.iter().collect();
    holder_pool.shuffle(rng);
    let mut segments = Vec::with_capacity(k);
    for i in 0..k {
        let start = starts[i];
        let end = if i + 1 < k {
            starts[i + 1] - 1
        } else {
            rng.gen_range(starts[i]..config.timestamp_count)
        };
        segments.push(Segment {
            holder: holder_pool[i].clone(),
            start,
            end,
        });
    }
    segments
}

// ---------------------------------------------------------------------
// Exhaustive answer computation over the fact list
// ---------------------------------------------------------------------

/// Entities holding `rel` of `target` at timestamp rank `t`.
pub fn scan_holders_at(store: &TkgStore, rel: usize, target: usize, t: usize) -> Vec<usize> {
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for f in &store.facts {
        if f.predicate == rel && f.object == target && f.time_start <= t && t <= f.time_end {
            out.insert(f.subject);
        }
    }
    out.into_iter().collect()
}

/// Start and end timestamp ranks of `holder` holding `rel` of `target`.
pub fn scan_when(store: &TkgStore, holder: usize, rel: usize, target: usize) -> Vec<usize> {
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for f in &store.facts {
        if f.subject == holder && f.predicate == rel && f.object == target {
            out.insert(f.time_start);
            out.insert(f.time_end);
        }
    }
    out.into_iter().collect()
}

/// Holders of `rel` of `target` immediately before (`after = false`) or
/// after the reference holder's interval.
pub fn scan_adjacent(
    store: &TkgStore,
    rel: usize,
    target: usize,
    ref_holder: usize,
    after: bool,
) -> Vec<usize> {
    let reference: Vec<(usize, usize)> = store
        .facts
        .iter()
        .filter(|f| f.subject == ref_holder && f.predicate == rel && f.object == target)
        .map(|f| (f.time_start, f.time_end))
        .collect();
    let mut best: Option<usize> = None;
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for f in &store.facts {
        if f.predicate != rel || f.object != target || f.subject == ref_holder {
            continue;
        }
        for &(a, b) in &reference {
            let (key, better) = if after {
                if f.time_start <= b {
                    continue;
                }
                (f.time_start, best.map_or(true, |x| f.time_start < x))
            } else {
                if f.time_end >= a {
                    continue;
                }
                (f.time_end, best.map_or(true, |x| f.time_end > x))
            };
            if better {
                best = Some(key);
                out.clear();
                out.insert(f.subject);
            } else if best == Some(key) {
                out.insert(f.subject);
            }
        }
    }
    out.into_iter().collect()
}

/// First (`last = false`) or last holder of `rel` of `target` by interval
/// start time.
pub fn scan_extremal(store: &TkgStore, rel: usize, target: usize, last: bool) -> Vec<usize> {
    let mut best: Option<usize> = None;
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for f in &store.facts {
        if f.predicate != rel || f.object != target {
            continue;
        }
        let better = match best {
            None => true,
            Some(x) => {
                if last {
                    f.time_start > x
                } else {
                    f.time_start < x
                }
            }
        };
        if better {
            best = Some(f.time_start);
            out.clear();
            out.insert(f.subject);
        } else if best == Some(f.time_start) {
            out.insert(f.subject);
        }
    }
    out.into_iter().collect()
}

/// Holders of `rel` of `target` whose interval overlaps `[a, b]`
/// (brute-force interval-overlap join).
pub fn scan_overlap(store: &TkgStore, rel: usize, target: usize, a: usize, b: usize) -> Vec<usize> {
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for f in &store.facts {
        if f.predicate == rel && f.object == target && f.time_start <= b && a <= f.time_end {
            out.insert(f.subject);
        }
    }
    out.into_iter().collect()
}

// ---------------------------------------------------------------------
// Template instantiation
// ---------------------------------------------------------------------

fn entity_answers(ids: Vec<usize>) -> Vec<Answer> {
    ids.into_iter()
        .map(|id| Answer {
            kind: AnswerKind::Entity,
            id,
        })
        .collect()
}

struct ResolvedTimeline {
    target: usize,
    relation: usize,
    segments: Vec<(usize, usize, usize)>, // (holder, start rank, end rank)
}

fn instantiate_templates(
    store: &TkgStore,
    timelines: &[(String, String, Vec<Segment>)],
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<QuestionRecord>>> {
    let resolved: Vec<ResolvedTimeline> = timelines
        .iter()
        .map(|(target, relation, segments)| ResolvedTimeline {
            target: store.entity_id(target).expect("generated target in vocab"),
            relation: store
                .relation_id(relation)
                .expect("generated relation in vocab"),
            segments: segments
                .iter()
                .map(|s| {
                    (
                        store.entity_id(&s.holder).expect("generated holder in vocab"),
                        store
                            .timestamp_id(timestamp_label(s.start))
                            .expect("generated start in vocab"),
                        store
                            .timestamp_id(timestamp_label(s.end))
                            .expect("generated end in vocab"),
                    )
                })
                .collect(),
        })
        .collect();

    let rel_name = |r: usize| store.relation_names[r].clone();
    let mut per_template: Vec<Vec<QuestionRecord>> = Vec::new();

    // T1 simple-entity: "who held r of X at t"
    let mut t1: Vec<QuestionRecord> = Vec::new();
    for tl in &resolved {
        for &(_, start, _) in &tl.segments {
            // Ask at the segment start: facts are indexed by their start
            // timestamp, so the question time token has an exact KG anchor.
            {
                let t = start;
                let answers = entity_answers(scan_holders_at(store, tl.relation, tl.target, t));
                if answers.is_empty() {
                    continue;
                }
                t1.push(QuestionRecord {
                    tokens: vec![
                        "who".into(),
                        "held".into(),
                        rel_name(tl.relation),
                        "of".into(),
                        ENTITY_PLACEHOLDER.into(),
                        "at".into(),
                        TIME_PLACEHOLDER.into(),
                        "?".into(),
                    ],
                    entities: vec![Annotation {
                        pos: 4,
                        id: tl.target,
                    }],
                    times: vec![Annotation { pos: 6, id: t }],
                    answers,
                    qtype: QuestionType::Simple,
                    atype: AnswerType::Entity,
                    template: TemplateId::T1,
                });
            }
        }
    }
    per_template.push(sample(t1, config.questions_per_template, rng));

    // T2 simple-time: "when did S hold r of X"
    let mut t2: Vec<QuestionRecord> = Vec::new();
    for tl in &resolved {
        for &(holder, _, _) in &tl.segments {
            let times = scan_when(store, holder, tl.relation, tl.target);
            if times.is_empty() {
                continue;
            }
            t2.push(QuestionRecord {
                tokens: vec![
                    "when".into(),
                    "did".into(),
                    ENTITY_PLACEHOLDER.into(),
                    "hold".into(),
                    rel_name(tl.relation),
                    "of".into(),
                    ENTITY_PLACEHOLDER.into(),
                    "?".into(),
                ],
                entities: vec![
                    Annotation { pos: 2, id: holder },
                    Annotation {
                        pos: 6,
                        id: tl.target,
                    },
                ],
                times: vec![],
                answers: times
                    .into_iter()
                    .map(|id| Answer {
                        kind: AnswerKind::Time,
                        id,
                    })
                    .collect(),
                qtype: QuestionType::Simple,
                atype: AnswerType::Time,
                template: TemplateId::T2,
            });
        }
    }
    per_template.push(sample(t2, config.questions_per_template, rng));

    // T3 before/after: "who held r of X before/after S did"
    let mut t3: Vec<QuestionRecord> = Vec::new();
    for tl in &resolved {
        for (i, &(holder, _, _)) in tl.segments.iter().enumerate() {
            for after in [false, true] {
                if (!after && i == 0) || (after && i + 1 == tl.segments.len()) {
                    continue;
                }
                let answers =
                    entity_answers(scan_adjacent(store, tl.relation, tl.target, holder, after));
                if answers.is_empty() {
                    continue;
                }
                let word = if after { "after" } else { "before" };
                t3.push(QuestionRecord {
                    tokens: vec![
                        "who".into(),
                        "held".into(),
                        rel_name(tl.relation),
                        "of".into(),
                        ENTITY_PLACEHOLDER.into(),
                        word.into(),
                        ENTITY_PLACEHOLDER.into(),
                        "did".into(),
                        "?".into(),
                    ],
                    entities: vec![
                        Annotation {
                            pos: 4,
                            id: tl.target,
                        },
                        Annotation { pos: 6, id: holder },
                    ],
                    times: vec![],
                    answers,
                    qtype: QuestionType::Complex,
                    atype: AnswerType::Entity,
                    template: TemplateId::T3,
                });
            }
        }
    }
    per_template.push(sample(t3, config.questions_per_template, rng));

    // T4 first/last: "who was the first/last r of X"
    let mut t4: Vec<QuestionRecord> = Vec::new();
    for tl in &resolved {
        for last in [false, true] {
            let answers = entity_answers(scan_extremal(store, tl.relation, tl.target, last));
            if answers.is_empty() {
                continue;
            }
            let word = if last { "last" } else { "first" };
            t4.push(QuestionRecord {
                tokens: vec![
                    "who".into(),
                    "was".into(),
                    "the".into(),
                    word.into(),
                    rel_name(tl.relation),
                    "of".into(),
                    ENTITY_PLACEHOLDER.into(),
                    "?".into(),
                ],
                entities: vec![Annotation {
                    pos: 6,
                    id: tl.target,
                }],
                times: vec![],
                answers,
                qtype: QuestionType::Complex,
                atype: AnswerType::Entity,
                template: TemplateId::T4,
            });
        }
    }
    per_template.push(sample(t4, config.questions_per_template, rng));

    // T5 two-hop time-join: "who held r2 of Z while X held r1 of Y"
    let mut t5: Vec<QuestionRecord> = Vec::new();
    for tl_ref in &resolved {
        for &(x, a, b) in &tl_ref.segments {
            for tl_join in &resolved {
                if tl_join.target == tl_ref.target && tl_join.relation == tl_ref.relation {
                    continue;
                }
                let joined = scan_overlap(store, tl_join.relation, tl_join.target, a, b);
                if joined.is_empty() {
                    continue;
                }
                t5.push(QuestionRecord {
                    tokens: vec![
                        "who".into(),
                        "held".into(),
                        rel_name(tl_join.relation),
                        "of".into(),
                        ENTITY_PLACEHOLDER.into(),
                        "while".into(),
                        ENTITY_PLACEHOLDER.into(),
                        "held".into(),
                        rel_name(tl_ref.relation),
                        "of".into(),
                        ENTITY_PLACEHOLDER.into(),
                        "?".into(),
                    ],
                    entities: vec![
                        Annotation {
                            pos: 4,
                            id: tl_join.target,
                        },
                        Annotation { pos: 6, id: x },
                        Annotation {
                            pos: 10,
                            id: tl_ref.target,
                        },
                    ],
                    times: vec![],
                    answers: entity_answers(joined),
                    qtype: QuestionType::Complex,
                    atype: AnswerType::Entity,
                    template: TemplateId::T5,
                });
            }
        }
    }
    per_template.push(sample(t5, config.questions_per_template, rng));

    Ok(per_template)
}

fn sample(
    mut candidates: Vec<QuestionRecord>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<QuestionRecord> {
    candidates.shuffle(rng);
    candidates.truncate(count);
    candidates
}
