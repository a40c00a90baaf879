use stackfed::data::{self, Dataset};
use stackfed::harness::{
    compare_strategies, compare_strategies_with_threads, emit_results, read_results_csv,
    read_summary_csv, run_experiment, run_experiment_with_threads, ExperimentConfig,
    OutputFormat, RESULTS_CSV, SUMMARY_CSV,
};
use stackfed::nn::Matrix;
use stackfed::strategies::StrategyKind;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_samples: 600,
        n_features: 8,
        rounds: 4,
        reps: 2,
        ..Default::default()
    }
}

#[test]
fn run_produces_one_row_per_node_round_and_rep() {
    let mut cfg = small();
    cfg.strategy = StrategyKind::Dswm;
    let table = run_experiment(&cfg).unwrap();
    assert!(table.is_success());
    assert_eq!(table.trajectories.len(), cfg.reps * cfg.rounds * cfg.n_nodes);
    assert_eq!(table.finals.len(), cfg.reps * cfg.n_nodes);
    assert_eq!(table.summary.len(), cfg.n_nodes);
    for row in &table.summary {
        assert_eq!(row.strategy, StrategyKind::Dswm);
        assert!(row.delta_vs_fedavg_pct.is_none());
        assert!((0.0..=1.0).contains(&row.mean_auc));
    }
    for row in &table.trajectories {
        assert!((cfg.c_min..=cfg.c_max).contains(&row.contribution_weight));
    }
}

#[test]
fn strategies_share_partitions_and_fedavg_is_the_reference() {
    let cfg = small();
    let table = compare_strategies(&cfg, &[StrategyKind::FedAvg, StrategyKind::Aswm]).unwrap();
    assert!(table.is_success());
    for rep in 0..cfg.reps {
        let hashes: Vec<u64> = table
            .partition_hashes
            .iter()
            .filter(|h| h.rep == rep)
            .map(|h| h.hash)
            .collect();
        assert_eq!(hashes.len(), 2);
        assert_eq!(hashes[0], hashes[1]);
    }
    for row in table.summary.iter().filter(|r| r.strategy == StrategyKind::FedAvg) {
        assert_eq!(row.delta_vs_fedavg_pct, Some(0.0));
    }
    for row in table.summary.iter().filter(|r| r.strategy == StrategyKind::Aswm) {
        let reference = table.summary_row(StrategyKind::FedAvg, row.node_id).unwrap();
        let expected = 100.0 * (row.mean_auc - reference.mean_auc) / reference.mean_auc;
        assert!((row.delta_vs_fedavg_pct.unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn hidden_reference_is_not_reported() {
    let cfg = small();
    let table = compare_strategies(&cfg, &[StrategyKind::PwFedAvg]).unwrap();
    assert!(table.summary.iter().all(|r| r.strategy == StrategyKind::PwFedAvg));
    assert!(table.trajectories.iter().all(|r| r.strategy == StrategyKind::PwFedAvg));
    assert!(table.summary.iter().all(|r| r.delta_vs_fedavg_pct.is_some()));
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = small();
    let kinds = [StrategyKind::FedAvg, StrategyKind::Dswm, StrategyKind::Aswm];
    let serial = compare_strategies_with_threads(&cfg, &kinds, 1).unwrap();
    let parallel = compare_strategies_with_threads(&cfg, &kinds, 4).unwrap();
    assert_eq!(serial, parallel);
    let mut one = cfg.clone();
    one.strategy = StrategyKind::Aswm;
    assert_eq!(
        run_experiment_with_threads(&one, 1).unwrap(),
        run_experiment_with_threads(&one, 3).unwrap()
    );
}

#[test]
fn csv_files_round_trip() {
    let cfg = small();
    let table = compare_strategies(&cfg, &[StrategyKind::FedAvg, StrategyKind::Dswm]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_results(&table, OutputFormat::Csv, dir.path()).unwrap();
    let summary = read_summary_csv(dir.path().join(SUMMARY_CSV)).unwrap();
    assert_eq!(summary.len(), table.summary.len());
    for (a, b) in summary.iter().zip(&table.summary) {
        assert_eq!((a.strategy, a.node_id, a.role), (b.strategy, b.node_id, b.role));
        assert_eq!(a.mean_auc, b.mean_auc);
    }
    assert_eq!(read_results_csv(dir.path().join(RESULTS_CSV)).unwrap(), table.trajectories);
}

#[test]
fn dataset_file_is_used_when_configured() {
    let ds = data::synthetic_dataset(500, 6, 3, 4.0, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.sfd");
    data::save_dataset(&ds, &path).unwrap();
    let mut cfg = small();
    cfg.dataset_path = Some(path);
    cfg.strategy = StrategyKind::FedAvg;
    let table = run_experiment(&cfg).unwrap();
    assert!(table.is_success());
    // The file does not change between repetitions; only partitions and noise do.
    assert_ne!(table.partition_hashes[0].hash, table.partition_hashes[1].hash);
}

#[test]
fn failed_repetitions_are_reported_not_fatal() {
    // A single-class dataset cannot give any node two classes.
    let ds = Dataset::new(Matrix::zeros(300, 2), vec![0; 300], 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one_class.sfd");
    data::save_dataset(&ds, &path).unwrap();
    let mut cfg = small();
    cfg.dataset_path = Some(path);
    let table = run_experiment(&cfg).unwrap();
    assert!(!table.is_success());
    assert_eq!(table.failures.len(), cfg.reps);
    assert!(table.trajectories.is_empty());
    assert!(table.summary.is_empty());
}

#[test]
fn missing_dataset_file_is_an_error() {
    let mut cfg = small();
    cfg.dataset_path = Some("/nonexistent/data.sfd".into());
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn fedavg_leader_is_not_below_smallest_follower_on_average() {
    let cfg = ExperimentConfig {
        strategy: StrategyKind::FedAvg,
        ..Default::default()
    };
    let table = run_experiment(&cfg).unwrap();
    let leader = table.summary_row(StrategyKind::FedAvg, 0).unwrap().mean_auc;
    let smallest = table.summary_row(StrategyKind::FedAvg, 2).unwrap().mean_auc;
    assert!(leader >= smallest, "leader {leader} follower 2 {smallest}");
}
