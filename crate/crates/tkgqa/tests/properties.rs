//! Property tests over randomized inputs: softmax stochasticity, gate
//! convexity, and metric/report invariants.

use proptest::prelude::*;

use tkgqa::encoder::{cross_attend, gate_fuse, Encoder};
use tkgqa::harness::{hits_at_k, EvalReport, QuestionOutcome};
use tkgqa::numerics::Tape;
use tkgqa::params::ParamSet;
use tkgqa::store::{AnswerType, QuestionType, TemplateId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Cross-attention rows are probability distributions.
    #[test]
    fn cross_attention_rows_are_stochastic(
        q in matrix(3, 4),
        s in matrix(5, 4),
    ) {
        let tape = Tape::new();
        let q = tape.leaf(&[3, 4], q, false).unwrap();
        let s = tape.leaf(&[5, 4], s, false).unwrap();
        let ca = cross_attend(&tape, &q, Some(&s)).unwrap();
        for row in ca.q_weights.unwrap().values().chunks(5) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    /// Eq. 6: gates stay in (0,1) and Q_new is an entry-wise convex
    /// combination of its two inputs.
    #[test]
    fn gate_output_is_convex_combination(
        qbar in matrix(4, 8),
        sbar in matrix(4, 8),
        seed in 0u64..1000,
    ) {
        let store = tkgqa::store::TkgStore::build(&[tkgqa::store::FactRow {
            subject: "a".into(),
            predicate: "r".into(),
            object: "b".into(),
            t_start: 0,
            t_end: 1,
            line: 1,
        }])
        .unwrap();
        let enc = Encoder::new(8, 16, ["w"], &store);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        enc.init_params(&mut params, 0.4, &mut rng);
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false).unwrap();
        let qv = qbar.clone();
        let sv = sbar.clone();
        let qbar = tape.leaf(&[4, 8], qbar, false).unwrap();
        let sbar = tape.leaf(&[4, 8], sbar, false).unwrap();
        let (v, g) = gate_fuse(&b, &qbar, &sbar).unwrap();
        prop_assert!(g.values().iter().all(|&x| 0.0 < x && x < 1.0));
        for (i, &x) in v.values().iter().enumerate() {
            let (lo, hi) = (qv[i].min(sv[i]), qv[i].max(sv[i]));
            prop_assert!(lo - 1e-12 <= x && x <= hi + 1e-12);
        }
    }

    /// hits@k is monotone in k and agrees with a direct scan at k=1.
    #[test]
    fn hits_monotone_in_k(scores in proptest::collection::vec(-10.0f64..10.0, 2..40), gold in 0usize..40) {
        prop_assume!(gold < scores.len());
        let h1 = hits_at_k(&scores, &[gold], 1).unwrap();
        let h5 = hits_at_k(&scores, &[gold], 5).unwrap();
        let h10 = hits_at_k(&scores, &[gold], 10).unwrap();
        prop_assert!(h1 <= h5 && h5 <= h10);
        let strictly_better = scores.iter().filter(|&&s| s > scores[gold]).count();
        if strictly_better == 0 && scores.iter().filter(|&&s| s == scores[gold]).count() == 1 {
            prop_assert!(h1);
        }
        if strictly_better >= 10 {
            prop_assert!(!h10);
        }
    }

    /// Report cells stay consistent under arbitrary outcome mixes.
    #[test]
    fn report_partitions_reweight_to_overall(picks in proptest::collection::vec((0usize..5, 0usize..3), 1..60)) {
        let outcomes: Vec<QuestionOutcome> = picks
            .iter()
            .enumerate()
            .map(|(i, &(t, r))| {
                let template = [TemplateId::T1, TemplateId::T2, TemplateId::T3, TemplateId::T4, TemplateId::T5][t];
                QuestionOutcome {
                    index: i,
                    template,
                    qtype: if t < 2 { QuestionType::Simple } else { QuestionType::Complex },
                    atype: if t == 1 { AnswerType::Time } else { AnswerType::Entity },
                    rank: [1, 7, 99][r],
                    hit1: r == 0,
                    hit10: r <= 1,
                }
            })
            .collect();
        let report = EvalReport::from_outcomes(&outcomes);
        let n = outcomes.len() as f64;
        let overall = report.overall.hits1;
        let by_q = (report.by_qtype.simple.hits1 * report.by_qtype.simple.n as f64
            + report.by_qtype.complex.hits1 * report.by_qtype.complex.n as f64)
            / n;
        prop_assert!((overall - by_q).abs() < 1e-9);
        for cell in [&report.overall, &report.by_qtype.simple, &report.by_qtype.complex] {
            prop_assert!(cell.hits1 <= cell.hits10 + 1e-12);
        }
    }
}
