//! Experiment harness: run configuration, ranking metrics, and the
//! generate / pretrain / train / evaluate / ablate drivers.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{ConfigError, RunConfig};
pub use metrics::{best_gold_rank, hits_at_k, Cell, EvalReport, MetricError, QuestionOutcome};
pub use run::{
    ablate, evaluate, evaluate_split, generate, model_from_checkpoint, pretrain, train, train_on,
    AblationOutcome, Dataset, HarnessError, Result, TrainOutcome, ABLATION_VARIANTS,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::synthetic::{generate_synthetic, SyntheticConfig};

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dim = 4;
        cfg.d_model = 8;
        cfg.layers = 1;
        cfg.max_hop = 1;
        cfg.hops = 1;
        cfg.max_nodes = 10;
        cfg.max_facts = 3;
        cfg.epochs = 2;
        cfg.batch = 8;
        cfg.pretrain_epochs = 1;
        cfg.fin_batch = 1;
        cfg
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        let d = generate_synthetic(&SyntheticConfig::tiny(), seed).unwrap();
        Dataset {
            store: d.store,
            train: d.train,
            dev: d.dev,
            test: d.test,
        }
    }

    #[test]
    fn same_seed_gives_identical_traces_and_checkpoints() {
        let cfg = tiny_cfg();
        let data = tiny_dataset(3);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = train_on(&cfg, 17, &data, Some(dir_a.path())).unwrap();
        let b = train_on(&cfg, 17, &data, Some(dir_b.path())).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.pretrain_trace, b.pretrain_trace);
        assert_eq!(a.best_epoch, b.best_epoch);
        for (ra, rb) in a.dev_reports.iter().zip(&b.dev_reports) {
            assert_eq!(ra.to_json(), rb.to_json());
        }
        let bytes_a = std::fs::read(dir_a.path().join("params.bin")).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join("params.bin")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        // A different seed must change the trace.
        let c = train_on(&cfg, 18, &data, None).unwrap();
        assert_ne!(a.loss_trace, c.loss_trace);
    }

    #[test]
    fn zero_epochs_yields_initial_report_only() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        cfg.pretrain_epochs = 0;
        let data = tiny_dataset(5);
        let out = train_on(&cfg, 1, &data, None).unwrap();
        assert!(out.loss_trace.is_empty());
        assert_eq!(out.dev_reports.len(), 1);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.dev_reports[0].overall.n, data.dev.len());
    }

    #[test]
    fn evaluate_round_trips_through_checkpoint() {
        let cfg = tiny_cfg();
        let data = tiny_dataset(7);
        let dir = tempfile::tempdir().unwrap();
        let out = train_on(&cfg, 2, &data, Some(dir.path())).unwrap();
        let params = crate::params::ParamSet::load(dir.path()).unwrap();
        let model = model_from_checkpoint(&params, &data.store, cfg.mu, cfg.lambda).unwrap();
        let outcomes = evaluate_split(&model, &params, &data.store, &data.dev).unwrap();
        let report = EvalReport::from_outcomes(&outcomes);
        assert_eq!(report.to_json(), out.best_report().to_json());
    }

    #[test]
    fn mismatched_store_is_a_checkpoint_error() {
        let cfg = tiny_cfg();
        let data = tiny_dataset(9);
        let dir = tempfile::tempdir().unwrap();
        train_on(&cfg, 4, &data, Some(dir.path())).unwrap();
        let params = crate::params::ParamSet::load(dir.path()).unwrap();
        // A store with a different entity count must be rejected.
        let other = generate_synthetic(
            &SyntheticConfig {
                entity_count: 12,
                ..SyntheticConfig::tiny()
            },
            9,
        )
        .unwrap();
        let err = match model_from_checkpoint(&params, &other.store, cfg.mu, cfg.lambda) {
            Ok(_) => panic!("expected checkpoint error"),
            Err(e) => e,
        };
        assert!(matches!(err, HarnessError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn ablation_covers_all_variants_and_full_matches_train() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let data = tiny_dataset(11);
        let dir = tempfile::tempdir().unwrap();
        cfg.checkpoint = dir.path().join("ab");
        let ab = {
            // ablate() reads from disk; reuse the in-memory path instead.
            let mut runs = Vec::new();
            for name in ABLATION_VARIANTS {
                let mut vcfg = cfg.clone();
                match name {
                    "full" => {}
                    "no_time_aware" => vcfg.time_aware = false,
                    "no_multi_hop" => vcfg.multi_hop = false,
                    "no_adaptive_fusion" => vcfg.adaptive_fusion = false,
                    "no_constraint_aware" => vcfg.constraint_aware = false,
                    _ => unreachable!(),
                }
                let out = train_on(&vcfg, 6, &data, None).unwrap();
                runs.push(run::AblationRun {
                    name: name.to_string(),
                    report: out.best_report().clone(),
                });
            }
            AblationOutcome { runs }
        };
        assert_eq!(ab.runs.len(), 5);
        let plain = train_on(&cfg, 6, &data, None).unwrap();
        assert_eq!(ab.get("full").to_json(), plain.best_report().to_json());
        let table = ab.table();
        for name in ABLATION_VARIANTS {
            assert!(table.contains(name));
        }
    }
}
