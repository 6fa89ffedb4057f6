//! Round-based federation engine.
//!
//! Each round every participating fog (1) receives its next contiguous
//! slice of data with drift applied, (2) imports the global parameters and
//! trains locally, then (3) the server aggregates, (4) broadcasts, and (5)
//! the global model is scored on each fog's held-out tail of the slice.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aggregation::{aggregate, AttentionWeights, Strategy};
use crate::config::{Scenario, ScenarioConfig};
use crate::data::{
    apply_drift, generate_regime_trace, generate_trace, ingest_csv, windowize_targets, DriftSpec,
    NormStats, TraceGenerator, TraceSeries, LAG_FEATURE,
};
use crate::error::{Error, Result};
use crate::models::{init_learner, mae, Learner, LearnerSpec, SupervisedBatch};
use crate::params::{assert_schema_compatible, ParameterSet};
use crate::rng::derive_seed;
use crate::switching::{
    build_switch_dataset, evaluate_switch, switch_step_width, train_switch_classifier,
    ConfusionMatrix, SwitchClassifier,
};

/// Fraction of each round's slice held out for evaluation.
pub const EVAL_FRACTION: f64 = 0.2;
const HORIZON: usize = 1;

const DATA_STREAM: u64 = 0xda7a;
const CLIENT_STREAM: u64 = 0xc11e;
const CLASSIFIER_STREAM: u64 = 0xc1a5;

/// Held-out steps at the end of a slice of `steps_per_round`.
pub fn eval_steps(steps_per_round: usize) -> usize {
    ((steps_per_round as f64) * EVAL_FRACTION).ceil() as usize
}

/// One fog's full stream: an undrifted history block followed by one slice
/// per round.
#[derive(Debug, Clone)]
pub struct FogData {
    pub fog_id: usize,
    /// Drifted series in original units.
    pub raw: TraceSeries,
    /// Drifted series z-scored with `stats`.
    pub series: TraceSeries,
    /// Statistics of the undrifted history block.
    pub stats: NormStats,
}

impl FogData {
    /// Applies `drifts` to `clean` and normalizes with statistics of its
    /// first `history` steps, which precede round 0.
    pub fn prepare(
        clean: TraceSeries,
        drifts: &[DriftSpec],
        history: usize,
        steps_per_round: usize,
    ) -> Result<Self> {
        let stats = NormStats::from_window(&clean, 0..history)?;
        let round_of = |t: usize| round_of_step(t, history, steps_per_round);
        let mut raw = clean;
        for spec in drifts {
            raw = apply_drift(&raw, spec, round_of)?;
        }
        let series = stats.apply(&raw);
        Ok(Self {
            fog_id: raw.fog_id,
            raw,
            series,
            stats,
        })
    }
}

/// Round index of step `t`; the history block maps to round −1.
pub fn round_of_step(t: usize, history: usize, steps_per_round: usize) -> i64 {
    (t as i64 - history as i64).div_euclid(steps_per_round as i64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// MAE of each fog, indexed by fog id.
    pub per_fog_mae: Vec<f64>,
    pub aggregation_loss: f64,
    /// Attention weights for FedAtt rounds, with the fog id of each column.
    pub attention: Option<(Vec<usize>, AttentionWeights)>,
    pub drifted_fogs: BTreeSet<usize>,
    /// Fogs whose queries were answered by a neighbour's model this round.
    pub routed_fogs: BTreeSet<usize>,
}

/// Query routing for a new station during its warm-up rounds.
#[derive(Debug, Clone)]
pub struct StationRouting {
    pub new_fog: usize,
    pub neighbors: Vec<usize>,
    pub warmup_rounds: usize,
    pub classifier: SwitchClassifier,
    /// Test accuracy of the classifier on held-out neighbour windows.
    pub classifier_accuracy: f64,
}

pub struct FederationState {
    config: ScenarioConfig,
    drifts: Vec<DriftSpec>,
    history: usize,
    global: Learner,
    clients: Vec<Learner>,
    fogs: Vec<FogData>,
    round: usize,
    heldout: Vec<Option<SupervisedBatch>>,
    routing: Option<StationRouting>,
    pool: rayon::ThreadPool,
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}

fn fog_seed(config: &ScenarioConfig, fog: usize) -> u64 {
    derive_seed(config.master_seed, &[DATA_STREAM, fog as u64])
}

/// Builds every fog's stream for a run with `num_fogs` fogs.
pub fn prepare_fogs(config: &ScenarioConfig, num_fogs: usize) -> Result<Vec<FogData>> {
    let history = config.steps_per_round;
    let total = history + config.rounds * config.steps_per_round;
    let drifts = config.effective_drift_specs();
    let cleans: Vec<TraceSeries> = match &config.csv {
        Some(source) => {
            let ingested = ingest_csv(&source.path, &source.schema)?;
            if ingested.series.len() < num_fogs {
                return Err(Error::config(
                    "csv.path",
                    format!(
                        "{} fogs in file, scenario needs {num_fogs}",
                        ingested.series.len()
                    ),
                ));
            }
            ingested
                .series
                .into_iter()
                .take(num_fogs)
                .enumerate()
                .map(|(i, mut s)| {
                    if s.len() < total {
                        return Err(Error::config(
                            "csv.path",
                            format!("fog {} has {} rows, need {total}", s.fog_id, s.len()),
                        ));
                    }
                    s.timestamps.truncate(total);
                    s.features.truncate(total);
                    s.target.truncate(total);
                    s.fog_id = i;
                    Ok(s)
                })
                .collect::<Result<_>>()?
        }
        None => {
            let generator = TraceGenerator {
                location_slots: num_fogs,
                ..config.generator.clone()
            };
            (0..num_fogs)
                .map(|fog| {
                    let seed = fog_seed(config, fog);
                    if config.scenario == Scenario::NewStation && fog == num_fogs - 1 {
                        let ns = &config.new_station;
                        let block = ns.regime_block;
                        generate_regime_trace(&generator, fog, total, seed, |t| {
                            ns.neighbors[(t / block) % ns.neighbors.len()]
                        })
                    } else {
                        generate_trace(&generator, fog, total, seed)
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    cleans
        .into_iter()
        .map(|clean| FogData::prepare(clean, &drifts, history, config.steps_per_round))
        .collect()
}

impl FederationState {
    /// Initial state for a run with `num_fogs` fogs on generated or
    /// ingested data.
    pub fn new(config: &ScenarioConfig, num_fogs: usize, threads: usize) -> Result<Self> {
        let fogs = prepare_fogs(config, num_fogs)?;
        let client_seeds = (0..num_fogs)
            .map(|f| derive_seed(config.master_seed, &[CLIENT_STREAM, f as u64]))
            .collect();
        Self::with_fogs(config, fogs, client_seeds, threads)
    }

    /// Initial state over caller-supplied fog streams. Each stream must hold
    /// `steps_per_round` history steps plus `rounds` slices.
    pub fn with_fogs(
        config: &ScenarioConfig,
        fogs: Vec<FogData>,
        client_seeds: Vec<u64>,
        threads: usize,
    ) -> Result<Self> {
        config.validate()?;
        if fogs.is_empty() || client_seeds.len() != fogs.len() {
            return Err(Error::config(
                "num_fogs",
                "one client seed per fog is required",
            ));
        }
        let history = config.steps_per_round;
        let needed = history + config.rounds * config.steps_per_round;
        let features = fogs[0].series.num_features();
        for fog in &fogs {
            fog.series.validate()?;
            if fog.series.len() < needed {
                return Err(Error::InvalidData(format!(
                    "fog {} has {} steps, {needed} needed",
                    fog.fog_id,
                    fog.series.len()
                )));
            }
            if fog.series.num_features() != features {
                return Err(Error::InvalidData(
                    "fogs have different feature layouts".into(),
                ));
            }
        }
        let spec = LearnerSpec {
            kind: config.learner.kind,
            input_window: config.learner.input_window,
            input_features: features,
            hidden_sizes: config.learner.hidden_sizes.clone(),
            output_dim: 1,
            seed: config.learner.seed,
            batch_size: config.learner.batch_size,
        };
        let global = init_learner(&spec).map_err(|e| Error::config("learner", e.to_string()))?;
        let mut clients = Vec::with_capacity(fogs.len());
        for seed in client_seeds {
            let mut client = init_learner(&LearnerSpec {
                seed,
                ..spec.clone()
            })?;
            client.import_params(global.params())?;
            clients.push(client);
        }
        let routing = if config.scenario == Scenario::NewStation {
            Some(build_routing(config, &fogs)?)
        } else {
            None
        };
        let n = fogs.len();
        Ok(Self {
            config: config.clone(),
            drifts: config.effective_drift_specs(),
            history,
            global,
            clients,
            fogs,
            round: 0,
            heldout: vec![None; n],
            routing,
            pool: build_pool(threads)?,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn num_fogs(&self) -> usize {
        self.fogs.len()
    }

    pub fn global_params(&self) -> &ParameterSet {
        self.global.params()
    }

    pub fn client(&self, fog: usize) -> &Learner {
        &self.clients[fog]
    }

    pub fn fog(&self, fog: usize) -> &FogData {
        &self.fogs[fog]
    }

    pub fn routing(&self) -> Option<&StationRouting> {
        self.routing.as_ref()
    }

    pub fn heldout(&self, fog: usize) -> Option<&SupervisedBatch> {
        self.heldout.get(fog).and_then(Option::as_ref)
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.rounds
    }

    fn slice_start(&self, round: usize) -> usize {
        self.history + round * self.config.steps_per_round
    }

    fn is_routed(&self, fog: usize, round: usize) -> bool {
        self.routing
            .as_ref()
            .is_some_and(|r| r.new_fog == fog && round < r.warmup_rounds)
    }

    fn drifted_fogs(&self, round: usize) -> BTreeSet<usize> {
        self.drifts
            .iter()
            .filter(|d| d.is_active(round as i64))
            .flat_map(|d| d.target_fogs.iter().copied())
            .filter(|&f| f < self.fogs.len())
            .collect()
    }

    /// Runs one federation round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let round = self.round;
        if self.is_finished() {
            return Err(Error::config(
                "rounds",
                format!("all {} rounds already ran", self.config.rounds),
            ));
        }
        let window = self.config.learner.input_window;
        let start = self.slice_start(round);
        let end = start + self.config.steps_per_round;
        let split = end - eval_steps(self.config.steps_per_round);

        let mut train = Vec::with_capacity(self.fogs.len());
        for (f, fog) in self.fogs.iter().enumerate() {
            let abort = |e| Error::FogAborted {
                fog: f,
                round,
                source: Box::new(e),
            };
            train.push(
                windowize_targets(&fog.series, window, HORIZON, start..split).map_err(abort)?,
            );
            self.heldout[f] =
                Some(windowize_targets(&fog.series, window, HORIZON, split..end).map_err(abort)?);
        }

        let participants: Vec<usize> = (0..self.fogs.len())
            .filter(|&f| !self.is_routed(f, round))
            .collect();
        let global = self.global.export_params();
        let epochs = self.config.local_epochs;
        let rate = self.config.learning_rate;
        let skip: Vec<bool> = (0..self.fogs.len())
            .map(|f| self.is_routed(f, round))
            .collect();
        let trained: Vec<Result<Option<ParameterSet>>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .enumerate()
                .map(|(f, client)| {
                    if skip[f] {
                        return Ok(None);
                    }
                    let mut run = || -> Result<ParameterSet> {
                        client.import_params(&global)?;
                        for _ in 0..epochs {
                            client.train_epoch(&train[f], rate)?;
                        }
                        Ok(client.export_params())
                    };
                    run().map(Some).map_err(|e| Error::FogAborted {
                        fog: f,
                        round,
                        source: Box::new(e),
                    })
                })
                .collect()
        });
        let mut local = Vec::with_capacity(participants.len());
        let mut counts = Vec::with_capacity(participants.len());
        for (f, result) in trained.into_iter().enumerate() {
            if let Some(params) = result? {
                local.push(params);
                counts.push(train[f].len());
            }
        }

        let step = aggregate(&global, &local, &counts, &self.config.aggregation)?;
        assert_schema_compatible(&[&global, &step.params])?;
        self.global.import_params(&step.params)?;

        let mut per_fog_mae = Vec::with_capacity(self.fogs.len());
        let mut routed = BTreeSet::new();
        for f in 0..self.fogs.len() {
            let value = if self.is_routed(f, round) {
                routed.insert(f);
                self.routed_mae(f, split..end)?
            } else {
                self.evaluate_global(f)?
            };
            if !value.is_finite() {
                return Err(Error::FogAborted {
                    fog: f,
                    round,
                    source: Box::new(Error::NonFinite {
                        context: "evaluation MAE".into(),
                    }),
                });
            }
            per_fog_mae.push(value);
        }

        self.round += 1;
        Ok(RoundMetrics {
            round,
            per_fog_mae,
            aggregation_loss: step.loss,
            attention: step.attention.map(|a| (participants, a)),
            drifted_fogs: self.drifted_fogs(round),
            routed_fogs: routed,
        })
    }

    /// MAE of the global model on the fog's current held-out slice.
    pub fn evaluate_global(&self, fog: usize) -> Result<f64> {
        let batch = self
            .heldout(fog)
            .ok_or(Error::Empty("no held-out data yet for this fog"))?;
        let predictions = self.global.predict(batch)?;
        mae(
            &predictions,
            batch.regression_targets().expect("regression batch"),
        )
    }

    /// MAE of answering the new fog's held-out queries with the local model
    /// of the neighbour each query is classified to.
    fn routed_mae(&self, fog: usize, targets: std::ops::Range<usize>) -> Result<f64> {
        let routing = self.routing.as_ref().expect("routed fog implies routing");
        let window = self.config.learner.input_window;
        let own = &self.fogs[fog];
        let lag = own.raw.feature_index(LAG_FEATURE);
        let own_loc = own.raw.feature_index(&format!("loc_{fog}"));
        let mut predictions = Vec::with_capacity(targets.len());
        let mut actual = Vec::with_capacity(targets.len());
        for t in targets {
            let last = t - HORIZON;
            let class = routing.classifier.classify_series(&own.raw, last)?;
            let neighbor = routing.neighbors[class];
            let donor = &self.fogs[neighbor];
            let donor_loc = own.raw.feature_index(&format!("loc_{neighbor}"));
            let mut input = Vec::with_capacity(window * own.raw.num_features());
            for s in last + 1 - window..=last {
                let mut step = own.raw.features[s].clone();
                if let (Some(a), Some(b)) = (own_loc, donor_loc) {
                    step[a] = 0.0;
                    step[b] = 1.0;
                }
                if let Some(k) = lag {
                    step[k] = donor.stats.forward(step[k]);
                }
                input.extend(step);
            }
            let raw_pred = donor
                .stats
                .inverse(self.clients[neighbor].predict_one(&input)?[0]);
            predictions.push(own.stats.forward(raw_pred));
            actual.push(own.series.target[t]);
        }
        mae(&predictions, &actual)
    }
}

fn history_prefix(series: &TraceSeries, len: usize) -> TraceSeries {
    TraceSeries {
        fog_id: series.fog_id,
        timestamps: series.timestamps[..len].to_vec(),
        feature_names: series.feature_names.clone(),
        features: series.features[..len].to_vec(),
        target: series.target[..len].to_vec(),
    }
}

/// Trains the query classifier on `traces` (one class per trace) and scores
/// it on the chronologically last 20% of each.
pub fn neighbor_classifier(
    config: &ScenarioConfig,
    traces: &[TraceSeries],
) -> Result<(SwitchClassifier, f64, ConfusionMatrix)> {
    let ns = &config.new_station;
    let window = config.learner.input_window;
    let (train, test) = build_switch_dataset(traces, window, 0.8)?;
    let spec = LearnerSpec::mlp_classifier(
        window,
        switch_step_width(&traces[0]),
        ns.classifier_hidden,
        traces.len(),
        derive_seed(config.master_seed, &[CLASSIFIER_STREAM]),
    );
    let classifier = train_switch_classifier(
        &train,
        &spec,
        ns.classifier_epochs,
        ns.classifier_learning_rate,
    )?;
    let (accuracy, matrix) = evaluate_switch(&classifier, &test)?;
    Ok((classifier, accuracy, matrix))
}

/// Archived streams of the neighbour fogs, `classifier_steps` long and drawn
/// on their own seed stream so they never overlap the simulated rounds.
fn neighbor_archive(config: &ScenarioConfig) -> Result<Vec<TraceSeries>> {
    let generator = TraceGenerator {
        location_slots: 0,
        ..config.generator.clone()
    };
    config
        .new_station
        .neighbors
        .iter()
        .map(|&n| {
            let seed = derive_seed(config.master_seed, &[CLASSIFIER_STREAM, n as u64]);
            generate_trace(&generator, n, config.new_station.classifier_steps, seed)
        })
        .collect()
}

/// The classifier setup alone: trained and scored on the neighbour archive.
pub fn switch_demo(config: &ScenarioConfig) -> Result<(SwitchClassifier, f64, ConfusionMatrix)> {
    config.generator.validate()?;
    if config.new_station.neighbors.len() < 2 {
        return Err(Error::config(
            "new_station.neighbors",
            "at least 2 neighbours needed",
        ));
    }
    neighbor_classifier(config, &neighbor_archive(config)?)
}

fn build_routing(config: &ScenarioConfig, fogs: &[FogData]) -> Result<StationRouting> {
    let ns = &config.new_station;
    // Ingested data has no archive beyond the history block.
    let traces: Vec<TraceSeries> = if config.csv.is_some() {
        ns.neighbors
            .iter()
            .map(|&n| history_prefix(&fogs[n].raw, config.steps_per_round))
            .collect()
    } else {
        neighbor_archive(config)?
    };
    let (classifier, accuracy, _) = neighbor_classifier(config, &traces)?;
    Ok(StationRouting {
        new_fog: fogs.len() - 1,
        neighbors: ns.neighbors.clone(),
        warmup_rounds: ns.warmup_rounds,
        classifier,
        classifier_accuracy: accuracy,
    })
}

/// Execution options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for client training; 0 uses every core.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
    /// Write the global parameters after every round.
    pub checkpoint: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub num_fogs: usize,
    pub strategy: Strategy,
    pub metrics: Vec<RoundMetrics>,
    pub classifier_accuracy: Option<f64>,
    pub files: Vec<PathBuf>,
}

/// Runs every round of one federation.
pub fn run_federation(
    config: &ScenarioConfig,
    num_fogs: usize,
    options: &RunOptions,
    on_round: &mut dyn FnMut(usize, &RoundMetrics),
) -> Result<(FederationState, Vec<RoundMetrics>)> {
    let mut state = FederationState::new(config, num_fogs, options.threads)?;
    let mut metrics = Vec::with_capacity(config.rounds);
    while !state.is_finished() {
        let m = state.run_round()?;
        on_round(num_fogs, &m);
        if options.checkpoint {
            if let Some(dir) = &options.out_dir {
                let dir = checkpoint_dir(dir, config, num_fogs);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                state
                    .global_params()
                    .save(&dir.join(format!("round_{:03}.json", m.round)))?;
            }
        }
        metrics.push(m);
    }
    Ok((state, metrics))
}

fn suffix(config: &ScenarioConfig, num_fogs: usize) -> String {
    if config.scenario == Scenario::BaselineK {
        format!("_k{num_fogs}")
    } else {
        String::new()
    }
}

fn checkpoint_dir(out: &Path, config: &ScenarioConfig, num_fogs: usize) -> PathBuf {
    out.join(format!("checkpoints{}", suffix(config, num_fogs)))
}

/// Runs the configured scenario: one federation, or one per fog count for
/// `baseline_k`. Writes metrics and attention CSVs when `out_dir` is set.
pub fn run_scenario(
    config: &ScenarioConfig,
    options: &RunOptions,
    on_round: &mut dyn FnMut(usize, &RoundMetrics),
) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    let fog_counts = if config.scenario == Scenario::BaselineK {
        config.k_values.clone()
    } else {
        vec![config.num_fogs]
    };
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut outcomes = Vec::with_capacity(fog_counts.len());
    for k in fog_counts {
        let cfg = ScenarioConfig {
            num_fogs: k,
            ..config.clone()
        };
        let (state, metrics) = run_federation(&cfg, k, options, on_round)?;
        let mut files = Vec::new();
        if let Some(dir) = &options.out_dir {
            let tag = suffix(config, k);
            let path = dir.join(format!("metrics{tag}.csv"));
            write_file(&path, &metrics_csv(&metrics, config.aggregation.strategy))?;
            files.push(path);
            if config.aggregation.strategy == Strategy::FedAtt {
                let path = dir.join(format!("attention{tag}.csv"));
                write_file(&path, &attention_csv(&metrics))?;
                files.push(path);
            }
        }
        outcomes.push(RunOutcome {
            num_fogs: k,
            strategy: config.aggregation.strategy,
            metrics,
            classifier_accuracy: state.routing().map(|r| r.classifier_accuracy),
            files,
        });
    }
    Ok(outcomes)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `round,fog_id,strategy,mae,drifted`, one row per fog per round.
pub fn metrics_csv(metrics: &[RoundMetrics], strategy: Strategy) -> String {
    let mut out = String::from("round,fog_id,strategy,mae,drifted\n");
    for m in metrics {
        for (fog, value) in m.per_fog_mae.iter().enumerate() {
            let drifted = u8::from(m.drifted_fogs.contains(&fog));
            out.push_str(&format!("{},{fog},{strategy},{value},{drifted}\n", m.round));
        }
    }
    out
}

/// `round,layer,fog_id,alpha` for every FedAtt round.
pub fn attention_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,layer,fog_id,alpha\n");
    for m in metrics {
        if let Some((fogs, weights)) = &m.attention {
            for (layer, alphas) in weights.layers() {
                for (fog, alpha) in fogs.iter().zip(alphas) {
                    out.push_str(&format!("{},{layer},{fog},{alpha}\n", m.round));
                }
            }
        }
    }
    out
}
