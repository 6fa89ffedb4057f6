//! Scenario configuration: a single JSON document whose field names mirror
//! [`ScenarioConfig`], plus `dotted.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregation::AggregationConfig;
use crate::data::{CsvSchema, DriftKind, DriftSpec, TraceGenerator};
use crate::error::{Error, Result};
use crate::models::{LearnerKind, DEFAULT_BATCH_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No drift; sweeps the number of fogs.
    #[serde(rename = "baseline_k")]
    BaselineK,
    SingleDrift,
    MultiDrift,
    TemporaryDrift,
    TransferDrift,
    NewStation,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::BaselineK => "baseline_k",
            Scenario::SingleDrift => "single_drift",
            Scenario::MultiDrift => "multi_drift",
            Scenario::TemporaryDrift => "temporary_drift",
            Scenario::TransferDrift => "transfer_drift",
            Scenario::NewStation => "new_station",
        }
    }

    fn min_fogs(self) -> usize {
        match self {
            Scenario::BaselineK | Scenario::SingleDrift | Scenario::TemporaryDrift => 2,
            Scenario::TransferDrift => 3,
            Scenario::MultiDrift | Scenario::NewStation => 4,
        }
    }
}

/// Learner settings; the per-step feature width and output size are
/// derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub input_window: usize,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::LstmRegressor,
            input_window: 10,
            hidden_sizes: vec![16, 16],
            seed: 1,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Ingested traces instead of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewStationConfig {
    /// Rounds during which the new fog's queries are routed to neighbours.
    pub warmup_rounds: usize,
    pub neighbors: Vec<usize>,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    /// Steps per regime block in the new fog's query stream.
    pub regime_block: usize,
    /// Length of the archived neighbour streams the classifier learns from
    /// on synthetic data.
    pub classifier_steps: usize,
}

impl Default for NewStationConfig {
    fn default() -> Self {
        Self {
            warmup_rounds: 5,
            neighbors: vec![0, 1, 2],
            classifier_hidden: 32,
            classifier_epochs: 300,
            classifier_learning_rate: 0.05,
            regime_block: 50,
            classifier_steps: 576,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub num_fogs: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub aggregation: AggregationConfig,
    pub learner: LearnerConfig,
    /// Empty means the scenario's default schedule.
    pub drift_specs: Vec<DriftSpec>,
    pub steps_per_round: usize,
    pub master_seed: u64,
    pub generator: TraceGenerator,
    pub csv: Option<CsvSource>,
    /// Fog counts swept by `baseline_k`.
    pub k_values: Vec<usize>,
    pub new_station: NewStationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::SingleDrift,
            num_fogs: 10,
            rounds: 20,
            local_epochs: 2,
            learning_rate: 0.01,
            aggregation: AggregationConfig::default(),
            learner: LearnerConfig::default(),
            drift_specs: Vec::new(),
            steps_per_round: 200,
            master_seed: 2021,
            generator: TraceGenerator::default(),
            csv: None,
            k_values: vec![2, 5, 10, 20],
            new_station: NewStationConfig::default(),
        }
    }
}

/// Fogs named in the knowledge-transfer scenario.
pub const BLUE_FOG: usize = 0;
pub const ORANGE_FOG: usize = 1;

impl ScenarioConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    /// The scenario's drift schedule when `drift_specs` is empty.
    pub fn default_drift_specs(&self) -> Vec<DriftSpec> {
        match self.scenario {
            Scenario::BaselineK | Scenario::NewStation => Vec::new(),
            Scenario::SingleDrift => vec![DriftSpec::step([0], 0)],
            Scenario::MultiDrift => vec![DriftSpec::step([0, 1, 2], 0)],
            Scenario::TemporaryDrift => {
                // Stages [0, 7), [7, 14), [14, 20) for 20 rounds.
                let start = (self.rounds * 7) / 20;
                let end = (self.rounds * 14) / 20;
                vec![DriftSpec::temporary([0], start, end.max(start + 1))]
            }
            Scenario::TransferDrift => {
                let onset = self.rounds / 2;
                vec![
                    DriftSpec::temporary([BLUE_FOG], 0, onset),
                    DriftSpec::step([ORANGE_FOG], onset),
                ]
            }
        }
    }

    pub fn effective_drift_specs(&self) -> Vec<DriftSpec> {
        if self.drift_specs.is_empty() {
            self.default_drift_specs()
        } else {
            self.drift_specs.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("num_fogs", self.num_fogs)?;
        positive("rounds", self.rounds)?;
        positive("local_epochs", self.local_epochs)?;
        positive("steps_per_round", self.steps_per_round)?;
        positive("learner.input_window", self.learner.input_window)?;
        positive("learner.batch_size", self.learner.batch_size)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        self.aggregation.validate()?;
        self.generator.validate()?;
        if self.learner.kind == LearnerKind::MlpClassifier {
            return Err(Error::config(
                "learner.kind",
                "federated fogs need a regressor (lstm_regressor or linear_ar)",
            ));
        }
        let eval = crate::federation::eval_steps(self.steps_per_round);
        if self.steps_per_round < eval + 1 || self.steps_per_round <= self.learner.input_window {
            return Err(Error::config(
                "steps_per_round",
                format!(
                    "{} is too small for window {}",
                    self.steps_per_round, self.learner.input_window
                ),
            ));
        }
        if let Some(csv) = &self.csv {
            csv.schema.validate()?;
        }

        let fog_counts: Vec<usize> = if self.scenario == Scenario::BaselineK {
            if self.k_values.is_empty() {
                return Err(Error::config(
                    "k_values",
                    "must list at least one fog count",
                ));
            }
            self.k_values.clone()
        } else {
            vec![self.num_fogs]
        };
        let min = self.scenario.min_fogs();
        for &k in &fog_counts {
            if k < min {
                let field = if self.scenario == Scenario::BaselineK {
                    "k_values"
                } else {
                    "num_fogs"
                };
                return Err(Error::config(
                    field,
                    format!(
                        "{} needs at least {min} fogs, got {k}",
                        self.scenario.name()
                    ),
                ));
            }
        }

        let specs = self.effective_drift_specs();
        for spec in &specs {
            spec.validate()?;
            if let Some(&bad) = spec.target_fogs.iter().find(|&&f| f >= self.num_fogs) {
                return Err(Error::config(
                    "drift_specs.target_fogs",
                    format!("fog {bad} outside [0, {})", self.num_fogs),
                ));
            }
            if spec.target_fogs.is_empty() {
                return Err(Error::config(
                    "drift_specs.target_fogs",
                    "must not be empty",
                ));
            }
        }
        self.validate_schedule(&specs)?;

        if self.scenario == Scenario::NewStation {
            let ns = &self.new_station;
            let new_fog = self.num_fogs - 1;
            if ns.neighbors.len() < 2 {
                return Err(Error::config(
                    "new_station.neighbors",
                    "need at least 2 neighbours",
                ));
            }
            if ns.neighbors.iter().any(|&n| n >= new_fog) {
                return Err(Error::config(
                    "new_station.neighbors",
                    format!("neighbours must be existing fogs below {new_fog}"),
                ));
            }
            if ns.warmup_rounds >= self.rounds {
                return Err(Error::config(
                    "new_station.warmup_rounds",
                    "must be smaller than rounds",
                ));
            }
            positive("new_station.regime_block", ns.regime_block)?;
            positive("new_station.classifier_steps", ns.classifier_steps)?;
            positive("new_station.classifier_hidden", ns.classifier_hidden)?;
            if !(ns.classifier_learning_rate > 0.0) {
                return Err(Error::config(
                    "new_station.classifier_learning_rate",
                    "must be positive",
                ));
            }
            if self.csv.is_some() {
                return Err(Error::config(
                    "csv",
                    "new_station runs on synthetic traces only",
                ));
            }
        }
        Ok(())
    }

    fn validate_schedule(&self, specs: &[DriftSpec]) -> Result<()> {
        let field = "drift_specs";
        let fogs: std::collections::BTreeSet<usize> = specs
            .iter()
            .flat_map(|s| s.target_fogs.iter().copied())
            .collect();
        match self.scenario {
            Scenario::BaselineK | Scenario::NewStation if !specs.is_empty() => Err(Error::config(
                field,
                format!("{} runs without drift", self.scenario.name()),
            )),
            Scenario::SingleDrift
                if specs.len() != 1 || specs[0].kind != DriftKind::Step || fogs.len() != 1 =>
            {
                Err(Error::config(
                    field,
                    "single_drift needs one step drift on one fog",
                ))
            }
            Scenario::MultiDrift
                if specs.iter().any(|s| s.kind != DriftKind::Step) || fogs.len() < 3 =>
            {
                Err(Error::config(
                    field,
                    "multi_drift needs step drifts on at least 3 fogs",
                ))
            }
            Scenario::TemporaryDrift
                if specs.len() != 1 || specs[0].kind != DriftKind::Temporary =>
            {
                Err(Error::config(
                    field,
                    "temporary_drift needs one temporary drift",
                ))
            }
            Scenario::TransferDrift => {
                let ok = specs.len() == 2
                    && specs[0].kind == DriftKind::Temporary
                    && specs[1].kind == DriftKind::Step
                    && specs[0].target_fogs.is_disjoint(&specs[1].target_fogs)
                    && specs[0]
                        .end_round
                        .is_some_and(|end| end <= specs[1].start_round);
                if ok {
                    Ok(())
                } else {
                    Err(Error::config(
                        field,
                        "transfer_drift needs a temporary drift followed by a step drift on another fog",
                    ))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: ScenarioConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<document>".to_owned());
            Error::config(field, msg)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Applies `dotted.path=value`. The value is parsed as JSON when possible
/// and used as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like path=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::config(assignment, "empty override path"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(Error::config(
                    parts[..i].join("."),
                    "is not an object, cannot override a nested field",
                ))
            }
        };
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = map.entry((*part).to_owned()).or_insert(Value::Null);
    }
    unreachable!("path has at least one component")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Strategy;

    #[test]
    fn defaults_validate_for_every_scenario() {
        for s in [
            Scenario::BaselineK,
            Scenario::SingleDrift,
            Scenario::MultiDrift,
            Scenario::TemporaryDrift,
            Scenario::TransferDrift,
            Scenario::NewStation,
        ] {
            ScenarioConfig::for_scenario(s).validate().unwrap();
        }
    }

    #[test]
    fn default_schedules() {
        let t = ScenarioConfig::for_scenario(Scenario::TemporaryDrift).effective_drift_specs();
        assert_eq!((t[0].start_round, t[0].end_round), (7, Some(14)));
        let x = ScenarioConfig::for_scenario(Scenario::TransferDrift).effective_drift_specs();
        assert_eq!(x[0].end_round, Some(10));
        assert_eq!(x[1].start_round, 10);
        assert!(x[1].affects(ORANGE_FOG) && x[0].affects(BLUE_FOG));
        let m = ScenarioConfig::for_scenario(Scenario::MultiDrift).effective_drift_specs();
        assert_eq!(m[0].target_fogs.len(), 3);
        let s = ScenarioConfig::for_scenario(Scenario::SingleDrift).effective_drift_specs();
        assert_eq!((s[0].magnitude, s[0].start_round), (0.5, 0));
    }

    #[test]
    fn multi_drift_needs_four_fogs() {
        let mut c = ScenarioConfig::for_scenario(Scenario::MultiDrift);
        c.num_fogs = 3;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("num_fogs"), "{err}");
    }

    #[test]
    fn drift_on_missing_fog_is_rejected() {
        let mut c = ScenarioConfig::for_scenario(Scenario::SingleDrift);
        c.drift_specs = vec![DriftSpec::step([12], 0)];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("target_fogs"), "{err}");
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let text = r#"{"scenario":"single_drift","aggregation":{"strategy":"fedatt"}}"#;
        let c = ScenarioConfig::from_json_str(
            text,
            &[
                "aggregation.strategy=fedavg".into(),
                "rounds=3".into(),
                "learner.hidden_sizes=[4,4]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.aggregation.strategy, Strategy::FedAvg);
        assert_eq!(c.rounds, 3);
        assert_eq!(c.learner.hidden_sizes, vec![4, 4]);
    }

    #[test]
    fn bad_fields_are_named() {
        let err = ScenarioConfig::from_json_str(r#"{"rounds":0}"#, &[]).unwrap_err();
        assert!(err.to_string().contains("rounds"), "{err}");
        let err = ScenarioConfig::from_json_str(r#"{"roundz":3}"#, &[]).unwrap_err();
        assert!(err.to_string().contains("roundz"), "{err}");
        let err =
            ScenarioConfig::from_json_str("{}", &["aggregation.epsilon=-1".into()]).unwrap_err();
        assert!(err.to_string().contains("aggregation.epsilon"), "{err}");
        assert!(ScenarioConfig::from_json_str("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::for_scenario(Scenario::TransferDrift);
        let back = ScenarioConfig::from_json_str(&c.to_json_pretty().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
