//! Temporal KG data model: quadruple facts with validity intervals,
//! vocabularies, SPO retrieval, temporal subgraph extraction, and the
//! TSV / JSON-lines file contracts.

pub mod jsonl;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// One temporal fact; all fields are vocabulary ids. Timestamp ids are
/// chronological ranks, so `time_start <= time_end` holds on ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruple {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
    pub time_start: usize,
    pub time_end: usize,
}

/// Immutable temporal KG: vocabularies, fact list, and an entity-incidence
/// index. Safe for concurrent readers once built.
#[derive(Debug, Clone)]
pub struct TkgStore {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    /// Timestamp labels sorted ascending; index = chronological rank = id.
    pub timestamp_labels: Vec<i64>,
    pub facts: Vec<Quadruple>,
    /// entity id -> indices of incident facts (as subject or object)
    pub adjacency: Vec<Vec<usize>>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
    timestamp_ids: HashMap<i64, usize>,
}

/// Raw fact row, pre-vocabulary.
#[derive(Debug, Clone)]
pub struct FactRow {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub t_start: i64,
    pub t_end: i64,
    pub line: usize,
}

impl TkgStore {
    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn timestamp_count(&self) -> usize {
        self.timestamp_labels.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn timestamp_id(&self, label: i64) -> Option<usize> {
        self.timestamp_ids.get(&label).copied()
    }

    /// Build vocabularies and the fact list from raw rows. Entities and
    /// relations get stable first-seen ids; timestamps get chronological
    /// ids. Duplicate rows collapse to one fact.
    pub fn build(rows: &[FactRow]) -> Result<Self> {
        for row in rows {
            if row.t_start > row.t_end {
                return Err(StoreError::Validation {
                    line: row.line,
                    msg: format!("time_start {} > time_end {}", row.t_start, row.t_end),
                });
            }
        }
        let mut labels: Vec<i64> = rows
            .iter()
            .flat_map(|r| [r.t_start, r.t_end])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        labels.sort_unstable();
        let timestamp_ids: HashMap<i64, usize> =
            labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

        let mut entity_names = Vec::new();
        let mut entity_ids = HashMap::new();
        let mut relation_names = Vec::new();
        let mut relation_ids = HashMap::new();
        let intern = |names: &mut Vec<String>, ids: &mut HashMap<String, usize>, s: &str| {
            *ids.entry(s.to_string()).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        };

        let mut facts = Vec::new();
        let mut seen = HashSet::new();
        for row in rows {
            let fact = Quadruple {
                subject: intern(&mut entity_names, &mut entity_ids, &row.subject),
                predicate: intern(&mut relation_names, &mut relation_ids, &row.predicate),
                object: intern(&mut entity_names, &mut entity_ids, &row.object),
                time_start: timestamp_ids[&row.t_start],
                time_end: timestamp_ids[&row.t_end],
            };
            if seen.insert(fact) {
                facts.push(fact);
            }
        }

        let mut adjacency = vec![Vec::new(); entity_names.len()];
        for (idx, fact) in facts.iter().enumerate() {
            adjacency[fact.subject].push(idx);
            if fact.object != fact.subject {
                adjacency[fact.object].push(idx);
            }
        }

        Ok(Self {
            entity_names,
            relation_names,
            timestamp_labels: labels,
            facts,
            adjacency,
            entity_ids,
            relation_ids,
            timestamp_ids,
        })
    }

    /// Load a fact file: UTF-8 TSV, 5 columns
    /// `subject<TAB>predicate<TAB>object<TAB>time_start<TAB>time_end`,
    /// '#' comment lines allowed.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(StoreError::Parse {
                    line: lineno,
                    msg: format!("expected 5 tab-separated columns, got {}", cols.len()),
                });
            }
            let parse_ts = |s: &str| -> Result<i64> {
                s.trim().parse().map_err(|_| StoreError::Parse {
                    line: lineno,
                    msg: format!("timestamp `{s}` is not an integer"),
                })
            };
            rows.push(FactRow {
                subject: cols[0].to_string(),
                predicate: cols[1].to_string(),
                object: cols[2].to_string(),
                t_start: parse_ts(cols[3])?,
                t_end: parse_ts(cols[4])?,
                line: lineno,
            });
        }
        Self::build(&rows)
    }

    /// Write facts in list order using the vocabulary names.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for f in &self.facts {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                self.entity_names[f.subject],
                self.relation_names[f.predicate],
                self.entity_names[f.object],
                self.timestamp_labels[f.time_start],
                self.timestamp_labels[f.time_end],
            ));
        }
        std::fs::write(path, out).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub pos: usize,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerKind {
    #[serde(rename = "entity")]
    Entity,
    #[serde(rename = "time")]
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: AnswerKind,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "complex")]
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "entity")]
    Entity,
    #[serde(rename = "time")]
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::T1,
        TemplateId::T2,
        TemplateId::T3,
        TemplateId::T4,
        TemplateId::T5,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TemplateId::T1 => "T1",
            TemplateId::T2 => "T2",
            TemplateId::T3 => "T3",
            TemplateId::T4 => "T4",
            TemplateId::T5 => "T5",
        }
    }
}

/// One question: token sequence with entity/timestamp annotations, the
/// gold answer set, and category labels. Field names match the JSON-lines
/// contract exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub tokens: Vec<String>,
    pub entities: Vec<Annotation>,
    pub times: Vec<Annotation>,
    pub answers: Vec<Answer>,
    pub qtype: QuestionType,
    pub atype: AnswerType,
    pub template: TemplateId,
}

/// Edge of a temporal subgraph: local node indices, relation id, and the
/// single active timestamp id (fact start time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubgraphEdge {
    pub src: usize,
    pub relation: usize,
    pub dst: usize,
    pub time: usize,
}

/// Breadth-first temporal subgraph around question entities.
#[derive(Debug, Clone)]
pub struct TemporalSubgraph {
    /// Global entity ids; position in this vector is the local index.
    pub nodes: Vec<usize>,
    pub edges: Vec<SubgraphEdge>,
    /// Local indices of the question seed entities.
    pub seed_nodes: Vec<usize>,
}

/// Interval facts contribute one edge timestamped at their start time;
/// end times are still indexed for time-typed answers.
pub fn edge_timestamp(fact: &Quadruple) -> usize {
    fact.time_start
}

/// Retrieve up to `max_facts` facts incident to the question's annotated
/// entities, ordered by (annotation order, time_start ascending, fact id).
pub fn retrieve_spo(store: &TkgStore, question: &QuestionRecord, max_facts: usize) -> Vec<Quadruple> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for ann in &question.entities {
        if ann.id >= store.entity_count() {
            continue;
        }
        let mut incident: Vec<usize> = store.adjacency[ann.id].clone();
        incident.sort_by_key(|&idx| (store.facts[idx].time_start, idx));
        for idx in incident {
            if out.len() >= max_facts {
                return out;
            }
            if seen.insert(idx) {
                out.push(store.facts[idx]);
            }
        }
    }
    out
}

/// Breadth-first expansion `hops` hops from `seeds` over facts in either
/// direction, capped at `max_nodes` with closer-hop nodes preferred and
/// ties broken by entity id ascending. Every fact with both endpoints
/// admitted becomes an edge.
pub fn extract_subgraph(
    store: &TkgStore,
    seeds: &[usize],
    hops: usize,
    max_nodes: usize,
) -> Result<TemporalSubgraph> {
    if seeds.is_empty() {
        return Err(StoreError::Lookup("subgraph extraction needs seeds".into()));
    }
    for &s in seeds {
        if s >= store.entity_count() {
            return Err(StoreError::Lookup(format!(
                "seed entity id {s} out of range {}",
                store.entity_count()
            )));
        }
    }
    let seed_set: BTreeSet<usize> = seeds.iter().copied().collect();
    let mut nodes: Vec<usize> = Vec::new();
    let mut admitted: HashSet<usize> = HashSet::new();
    for &s in seed_set.iter() {
        if nodes.len() >= max_nodes {
            break;
        }
        nodes.push(s);
        admitted.insert(s);
    }
    let mut frontier: Vec<usize> = nodes.clone();
    for _ in 0..hops {
        if nodes.len() >= max_nodes || frontier.is_empty() {
            break;
        }
        let mut next: BTreeSet<usize> = BTreeSet::new();
        for &u in &frontier {
            for &fidx in &store.adjacency[u] {
                let f = &store.facts[fidx];
                for v in [f.subject, f.object] {
                    if !admitted.contains(&v) {
                        next.insert(v);
                    }
                }
            }
        }
        frontier = Vec::new();
        for v in next {
            if nodes.len() >= max_nodes {
                break;
            }
            nodes.push(v);
            admitted.insert(v);
            frontier.push(v);
        }
    }
    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let mut edges: BTreeSet<SubgraphEdge> = BTreeSet::new();
    for fact in &store.facts {
        if let (Some(&i), Some(&j)) = (local.get(&fact.subject), local.get(&fact.object)) {
            edges.insert(SubgraphEdge {
                src: i,
                relation: fact.predicate,
                dst: j,
                time: edge_timestamp(fact),
            });
        }
    }
    let seed_nodes: Vec<usize> = seed_set
        .iter()
        .filter_map(|s| local.get(s).copied())
        .collect();
    Ok(TemporalSubgraph {
        nodes,
        edges: edges.into_iter().collect(),
        seed_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tsv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_single_line() {
        let f = write_tsv("A\tp\tB\t2010\t2014\n");
        let store = TkgStore::load_tsv(f.path()).unwrap();
        assert_eq!(store.entity_count(), 2);
        assert_eq!(store.relation_count(), 1);
        assert_eq!(store.timestamp_count(), 2);
        assert_eq!(store.facts.len(), 1);
    }

    #[test]
    fn duplicate_lines_dedup() {
        let f = write_tsv("A\tp\tB\t2010\t2014\nA\tp\tB\t2010\t2014\n");
        let store = TkgStore::load_tsv(f.path()).unwrap();
        assert_eq!(store.facts.len(), 1);
    }

    #[test]
    fn timestamps_sorted_chronologically() {
        let f = write_tsv("A\tp\tB\t2014\t2014\nC\tp\tD\t2010\t2010\n");
        let store = TkgStore::load_tsv(f.path()).unwrap();
        assert_eq!(store.timestamp_labels, vec![2010, 2014]);
        assert_eq!(store.timestamp_id(2010), Some(0));
        assert_eq!(store.timestamp_id(2014), Some(1));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tsv("A\tp\tB\t2010\t2014\nA\tp\tB\n");
        match TkgStore::load_tsv(f.path()) {
            Err(StoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn reversed_interval_is_validation_error() {
        let f = write_tsv("A\tp\tB\t2014\t2010\n");
        assert!(matches!(
            TkgStore::load_tsv(f.path()),
            Err(StoreError::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let f = write_tsv("# header\n\nA\tp\tB\t2010\t2014\n");
        let store = TkgStore::load_tsv(f.path()).unwrap();
        assert_eq!(store.facts.len(), 1);
    }

    fn chain_store() -> TkgStore {
        // A -p-> B (2010-2011), B -p-> C (2012-2013)
        let rows = vec![
            FactRow {
                subject: "A".into(),
                predicate: "p".into(),
                object: "B".into(),
                t_start: 2010,
                t_end: 2011,
                line: 1,
            },
            FactRow {
                subject: "B".into(),
                predicate: "p".into(),
                object: "C".into(),
                t_start: 2012,
                t_end: 2013,
                line: 2,
            },
        ];
        TkgStore::build(&rows).unwrap()
    }

    #[test]
    fn subgraph_zero_hops_keeps_seed_edges_only() {
        let store = chain_store();
        let a = store.entity_id("A").unwrap();
        let b = store.entity_id("B").unwrap();
        let sg = extract_subgraph(&store, &[a], 0, 10).unwrap();
        assert_eq!(sg.nodes, vec![a]);
        assert!(sg.edges.is_empty());
        let sg2 = extract_subgraph(&store, &[a, b], 0, 10).unwrap();
        assert_eq!(sg2.edges.len(), 1);
    }

    #[test]
    fn subgraph_one_hop_on_chain() {
        let store = chain_store();
        let a = store.entity_id("A").unwrap();
        let b = store.entity_id("B").unwrap();
        let sg = extract_subgraph(&store, &[a], 1, 10).unwrap();
        assert_eq!(sg.nodes, vec![a, b]);
        assert_eq!(sg.edges.len(), 1);
        assert_eq!(sg.seed_nodes, vec![0]);
    }

    #[test]
    fn subgraph_unknown_seed_is_lookup_error() {
        let store = chain_store();
        assert!(matches!(
            extract_subgraph(&store, &[99], 1, 10),
            Err(StoreError::Lookup(_))
        ));
    }

    #[test]
    fn retrieve_spo_orders_by_time_then_id() {
        let rows = vec![
            FactRow {
                subject: "A".into(),
                predicate: "p".into(),
                object: "B".into(),
                t_start: 2014,
                t_end: 2014,
                line: 1,
            },
            FactRow {
                subject: "A".into(),
                predicate: "p".into(),
                object: "C".into(),
                t_start: 2010,
                t_end: 2010,
                line: 2,
            },
            FactRow {
                subject: "A".into(),
                predicate: "q".into(),
                object: "D".into(),
                t_start: 2012,
                t_end: 2012,
                line: 3,
            },
        ];
        let store = TkgStore::build(&rows).unwrap();
        let q = QuestionRecord {
            tokens: vec!["<ent>".into()],
            entities: vec![Annotation {
                pos: 0,
                id: store.entity_id("A").unwrap(),
            }],
            times: vec![],
            answers: vec![Answer {
                kind: AnswerKind::Entity,
                id: 0,
            }],
            qtype: QuestionType::Simple,
            atype: AnswerType::Entity,
            template: TemplateId::T1,
        };
        let facts = retrieve_spo(&store, &q, 10);
        assert_eq!(facts.len(), 3);
        let starts: Vec<usize> = facts.iter().map(|f| f.time_start).collect();
        assert_eq!(
            starts,
            vec![
                store.timestamp_id(2010).unwrap(),
                store.timestamp_id(2012).unwrap(),
                store.timestamp_id(2014).unwrap()
            ]
        );
        // max_facts=1 keeps the earliest fact of the first annotated entity
        let first = retrieve_spo(&store, &q, 1);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].time_start, store.timestamp_id(2010).unwrap());
    }
}
