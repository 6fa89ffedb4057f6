use fedatt::aggregation::{AggregationConfig, Strategy};
use fedatt::config::{Scenario, ScenarioConfig};
use fedatt::data::{DriftSpec, NormStats};
use fedatt::federation::{
    eval_steps, prepare_fogs, run_scenario, FederationState, RoundMetrics, RunOptions,
};
use fedatt::params::ParameterSet;

fn tiny(scenario: Scenario, fogs: usize, rounds: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::for_scenario(scenario);
    c.num_fogs = fogs;
    c.rounds = rounds;
    c.steps_per_round = 60;
    c.learner.input_window = 5;
    c.learner.hidden_sizes = vec![4, 4];
    c
}

fn run(config: &ScenarioConfig) -> Vec<RoundMetrics> {
    run_scenario(config, &RunOptions::default(), &mut |_, _| {})
        .unwrap()
        .remove(0)
        .metrics
}

#[test]
fn symmetric_fogs_make_fedatt_match_fedavg() {
    let mut c = tiny(Scenario::SingleDrift, 3, 4);
    c.drift_specs = vec![DriftSpec {
        magnitude: 0.0,
        ..DriftSpec::step([0], 0)
    }];
    let one = prepare_fogs(&c, 3).unwrap().remove(0);
    let fogs = vec![one.clone(), one.clone(), one];
    let mut trajectories = Vec::new();
    for agg in [AggregationConfig::fedavg(), AggregationConfig::fedatt(1.0)] {
        c.aggregation = agg;
        let mut state = FederationState::with_fogs(&c, fogs.clone(), vec![9, 9, 9], 1).unwrap();
        let mut globals: Vec<ParameterSet> = Vec::new();
        for _ in 0..c.rounds {
            let m = state.run_round().unwrap();
            if let Some((_, att)) = &m.attention {
                for (_, a) in att.layers() {
                    assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
                }
            }
            globals.push(state.global_params().clone());
        }
        trajectories.push(globals);
    }
    for (avg, att) in trajectories[0].iter().zip(&trajectories[1]) {
        for (x, y) in avg.iter_values().zip(att.iter_values()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn single_client_fedatt_keeps_the_local_model() {
    let mut c = tiny(Scenario::SingleDrift, 2, 2);
    c.aggregation = AggregationConfig::fedatt(1.0);
    let fog = prepare_fogs(&c, 2).unwrap().remove(0);
    let mut state = FederationState::with_fogs(&c, vec![fog], vec![4], 1).unwrap();
    for _ in 0..2 {
        state.run_round().unwrap();
        let (global, local) = (state.global_params(), state.client(0).params());
        for (g, l) in global.iter_values().zip(local.iter_values()) {
            assert!((g - l).abs() < 1e-12, "{g} vs {l}");
        }
    }
}

#[test]
fn drift_is_applied_once_after_the_history_block() {
    let drifted = tiny(Scenario::SingleDrift, 3, 3);
    let clean = ScenarioConfig {
        scenario: Scenario::BaselineK,
        ..drifted.clone()
    };
    let a = prepare_fogs(&drifted, 3).unwrap();
    let b = prepare_fogs(&clean, 3).unwrap();
    let history = drifted.steps_per_round;
    for t in 0..a[0].raw.len() {
        let expected = if t >= history { 0.5 } else { 0.0 };
        assert!((a[0].raw.target[t] - b[0].raw.target[t] - expected).abs() < 1e-12);
    }
    assert_eq!(a[1].raw.target, b[1].raw.target);
    // Statistics come from the undrifted history only.
    assert_eq!(a[0].stats, b[0].stats);
    let recomputed = NormStats::from_window(&b[0].raw, 0..history).unwrap();
    assert_eq!(a[0].stats, recomputed);
    // The offset survives normalization as magnitude / std.
    let t = history + 5;
    let shift = a[0].series.target[t] - b[0].series.target[t];
    assert!((shift - 0.5 / a[0].stats.std).abs() < 1e-9);
}

#[test]
fn held_out_slice_is_the_tail_of_each_round() {
    let c = tiny(Scenario::SingleDrift, 2, 3);
    let mut state = FederationState::new(&c, 2, 1).unwrap();
    for round in 0..3 {
        state.run_round().unwrap();
        let end = c.steps_per_round * (round + 2);
        let start = end - eval_steps(c.steps_per_round);
        let held = state.heldout(1).unwrap();
        assert_eq!(held.len(), eval_steps(c.steps_per_round));
        assert_eq!(
            held.regression_targets().unwrap(),
            &state.fog(1).series.target[start..end]
        );
    }
}

#[test]
fn drifted_fogs_follow_the_schedule() {
    let c = tiny(Scenario::TransferDrift, 3, 4);
    let metrics = run(&c);
    let sets: Vec<Vec<usize>> = metrics
        .iter()
        .map(|m| m.drifted_fogs.iter().copied().collect())
        .collect();
    assert_eq!(sets, vec![vec![0], vec![0], vec![1], vec![1]]);

    let c = tiny(Scenario::TemporaryDrift, 2, 20);
    let c = ScenarioConfig { rounds: 20, ..c };
    let specs = c.effective_drift_specs();
    assert_eq!((specs[0].start_round, specs[0].end_round), (7, Some(14)));
}

#[test]
fn output_files_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(Scenario::SingleDrift, 3, 2);
    let options = RunOptions {
        threads: 2,
        out_dir: Some(dir.path().to_path_buf()),
        checkpoint: true,
    };
    let outcome = run_scenario(&c, &options, &mut |_, _| {})
        .unwrap()
        .remove(0);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);
    let attention = std::fs::read_to_string(dir.path().join("attention.csv")).unwrap();
    let layers = 8;
    assert_eq!(attention.lines().count(), 1 + 2 * layers * 3);
    let last = ParameterSet::load(&dir.path().join("checkpoints/round_001.json")).unwrap();
    assert!(dir.path().join("checkpoints/round_000.json").exists());
    // Re-running to the same point reproduces the checkpoint.
    let mut state = FederationState::new(&c, 3, 1).unwrap();
    state.run_round().unwrap();
    state.run_round().unwrap();
    assert_eq!(&last, state.global_params());
    assert_eq!(outcome.files.len(), 2);
}

#[test]
fn fedavg_runs_write_no_attention_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Scenario::SingleDrift, 2, 1);
    c.aggregation = AggregationConfig::fedavg();
    let options = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let outcome = run_scenario(&c, &options, &mut |_, _| {})
        .unwrap()
        .remove(0);
    assert_eq!(outcome.strategy, Strategy::FedAvg);
    assert!(outcome.metrics[0].attention.is_none());
    assert!(!dir.path().join("attention.csv").exists());
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("fedavg")));
}

#[test]
fn baseline_k_writes_one_file_per_fog_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Scenario::BaselineK, 2, 1);
    c.k_values = vec![2, 3];
    let options = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let outcomes = run_scenario(&c, &options, &mut |_, _| {}).unwrap();
    assert_eq!(outcomes.len(), 2);
    for (o, k) in outcomes.iter().zip([2, 3]) {
        assert_eq!(o.num_fogs, k);
        let text = std::fs::read_to_string(dir.path().join(format!("metrics_k{k}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1 + k);
        assert!(dir.path().join(format!("attention_k{k}.csv")).exists());
        assert!(o.metrics.iter().all(|m| m.drifted_fogs.is_empty()));
    }
}

#[test]
fn new_station_routes_queries_during_warmup() {
    let mut c = tiny(Scenario::NewStation, 4, 4);
    c.steps_per_round = 120;
    c.new_station.warmup_rounds = 2;
    c.new_station.regime_block = 30;
    let mut state = FederationState::new(&c, 4, 1).unwrap();
    let routing = state.routing().unwrap();
    assert_eq!(routing.new_fog, 3);
    assert_eq!(routing.neighbors, vec![0, 1, 2]);
    assert!(
        routing.classifier_accuracy >= 0.9,
        "{}",
        routing.classifier_accuracy
    );
    for round in 0..4 {
        let m = state.run_round().unwrap();
        let (participants, _) = m.attention.unwrap();
        if round < 2 {
            assert_eq!(m.routed_fogs.iter().copied().collect::<Vec<_>>(), vec![3]);
            assert_eq!(participants, vec![0, 1, 2]);
        } else {
            assert!(m.routed_fogs.is_empty());
            assert_eq!(participants, vec![0, 1, 2, 3]);
        }
        assert!(m.per_fog_mae.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn runaway_training_aborts_with_the_fog_named() {
    let mut c = tiny(Scenario::SingleDrift, 2, 3);
    c.learning_rate = 1e30;
    let err = run_scenario(&c, &RunOptions::default(), &mut |_, _| {}).unwrap_err();
    assert!(err.is_runtime_abort(), "{err}");
    assert!(err.to_string().contains("fog"), "{err}");
}

#[test]
fn ingested_csv_drives_the_federation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let mut text = String::from("ts,cell,load,hour\n");
    for t in 0..200 {
        for fog in 0..2 {
            let load = 1.0 + fog as f64 + (t as f64 / 10.0).sin() * 0.3 + (t % 7) as f64 * 0.01;
            text.push_str(&format!("{},{fog},{load},{}\n", t * 60, t % 24));
        }
    }
    std::fs::write(&path, text).unwrap();
    let json = format!(
        r#"{{"scenario":"single_drift","num_fogs":2,"rounds":2,"steps_per_round":60,
             "learner":{{"input_window":4,"hidden_sizes":[3,3]}},
             "csv":{{"path":{:?},"schema":{{"timestamp_column":"ts","target_column":"load",
                     "feature_columns":["hour"],"fog_column":"cell"}}}}}}"#,
        path.to_str().unwrap()
    );
    let c = ScenarioConfig::from_json_str(&json, &[]).unwrap();
    let metrics = run(&c);
    assert_eq!(metrics.len(), 2);
    assert!(metrics.iter().all(|m| m.per_fog_mae.len() == 2));

    let short = ScenarioConfig { rounds: 10, ..c };
    let err = run_scenario(&short, &RunOptions::default(), &mut |_, _| {}).unwrap_err();
    assert!(err.to_string().contains("csv.path"), "{err}");
}

#[test]
fn thread_count_does_not_change_results() {
    let c = tiny(Scenario::MultiDrift, 4, 2);
    let mut texts = Vec::new();
    for threads in [1, 3] {
        let options = RunOptions {
            threads,
            ..RunOptions::default()
        };
        let m = run_scenario(&c, &options, &mut |_, _| {})
            .unwrap()
            .remove(0)
            .metrics;
        texts.push(fedatt::federation::metrics_csv(&m, Strategy::FedAtt));
    }
    assert_eq!(texts[0], texts[1]);
}
