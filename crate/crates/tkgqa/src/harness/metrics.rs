//! Ranking metrics and the evaluation report.

use crate::store::{AnswerType, QuestionType, TemplateId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric contract: {0}")]
    Contract(String),
}

/// Pessimistic rank of candidate `id`: one plus the number of strictly
/// greater scores plus the number of equal scores at a smaller index.
pub fn rank_of(scores: &[f64], id: usize) -> Result<usize, MetricError> {
    if id >= scores.len() {
        return Err(MetricError::Contract(format!(
            "candidate {id} outside score vector of length {}",
            scores.len()
        )));
    }
    let s = scores[id];
    let mut rank = 1;
    for (j, &v) in scores.iter().enumerate() {
        if v > s || (v == s && j < id) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Best (smallest) pessimistic rank over the gold set.
pub fn best_gold_rank(scores: &[f64], gold: &[usize]) -> Result<usize, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::Contract("empty gold set".into()));
    }
    let mut best = usize::MAX;
    for &g in gold {
        best = best.min(rank_of(scores, g)?);
    }
    Ok(best)
}

/// True when any gold answer ranks within the top `k`. `k` below 1 is a
/// contract violation.
pub fn hits_at_k(scores: &[f64], gold: &[usize], k: usize) -> Result<bool, MetricError> {
    if k < 1 {
        return Err(MetricError::Contract("hits@k requires k >= 1".into()));
    }
    Ok(best_gold_rank(scores, gold)? <= k)
}

/// Per-question evaluation record; enough to recount every report cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub index: usize,
    pub template: TemplateId,
    pub qtype: QuestionType,
    pub atype: AnswerType,
    pub rank: usize,
    pub hit1: bool,
    pub hit10: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub hits1: f64,
    pub hits10: f64,
    pub n: usize,
}

impl Cell {
    fn from_outcomes<'a>(it: impl Iterator<Item = &'a QuestionOutcome>) -> Cell {
        let mut n = 0usize;
        let mut h1 = 0usize;
        let mut h10 = 0usize;
        for o in it {
            n += 1;
            h1 += o.hit1 as usize;
            h10 += o.hit10 as usize;
        }
        if n == 0 {
            Cell {
                hits1: 0.0,
                hits10: 0.0,
                n: 0,
            }
        } else {
            Cell {
                hits1: h1 as f64 / n as f64,
                hits10: h10 as f64 / n as f64,
                n,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QtypeCells {
    pub complex: Cell,
    pub simple: Cell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtypeCells {
    pub entity: Cell,
    pub time: Cell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateCells {
    #[serde(rename = "T1")]
    pub t1: Cell,
    #[serde(rename = "T2")]
    pub t2: Cell,
    #[serde(rename = "T3")]
    pub t3: Cell,
    #[serde(rename = "T4")]
    pub t4: Cell,
    #[serde(rename = "T5")]
    pub t5: Cell,
}

impl TemplateCells {
    pub fn get(&self, t: TemplateId) -> &Cell {
        match t {
            TemplateId::T1 => &self.t1,
            TemplateId::T2 => &self.t2,
            TemplateId::T3 => &self.t3,
            TemplateId::T4 => &self.t4,
            TemplateId::T5 => &self.t5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Cell,
    pub by_qtype: QtypeCells,
    pub by_atype: AtypeCells,
    pub by_template: TemplateCells,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[QuestionOutcome]) -> EvalReport {
        let cell = |f: &dyn Fn(&QuestionOutcome) -> bool| {
            Cell::from_outcomes(outcomes.iter().filter(|o| f(o)))
        };
        EvalReport {
            overall: Cell::from_outcomes(outcomes.iter()),
            by_qtype: QtypeCells {
                complex: cell(&|o| o.qtype == QuestionType::Complex),
                simple: cell(&|o| o.qtype == QuestionType::Simple),
            },
            by_atype: AtypeCells {
                entity: cell(&|o| o.atype == AnswerType::Entity),
                time: cell(&|o| o.atype == AnswerType::Time),
            },
            by_template: TemplateCells {
                t1: cell(&|o| o.template == TemplateId::T1),
                t2: cell(&|o| o.template == TemplateId::T2),
                t3: cell(&|o| o.template == TemplateId::T3),
                t4: cell(&|o| o.template == TemplateId::T4),
                t5: cell(&|o| o.template == TemplateId::T5),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table: one row per category cell.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>6}\n",
            "cell", "hits@1", "hits@10", "n"
        ));
        let mut row = |name: &str, c: &Cell| {
            out.push_str(&format!(
                "{:<16} {:>8.4} {:>8.4} {:>6}\n",
                name, c.hits1, c.hits10, c.n
            ));
        };
        row("overall", &self.overall);
        row("qtype/complex", &self.by_qtype.complex);
        row("qtype/simple", &self.by_qtype.simple);
        row("atype/entity", &self.by_atype.entity);
        row("atype/time", &self.by_atype.time);
        for t in TemplateId::ALL {
            row(
                &format!("template/{}", t.name()),
                self.by_template.get(t),
            );
        }
        out
    }
}
