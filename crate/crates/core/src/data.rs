//! Throughput traces: synthetic generation, CSV ingestion, drift injection,
//! normalization and windowing into supervised batches.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{SupervisedBatch, Targets};
use crate::rng;

/// Name of the lagged-target feature.
pub const LAG_FEATURE: &str = "lag_target";
/// Prefix shared by every location feature.
pub const LOCATION_PREFIX: &str = "loc";

/// One fog's time series. `features[t]` is the feature vector observed at
/// step `t`; `target[t]` is the throughput at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub fog_id: usize,
    pub timestamps: Vec<i64>,
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl TraceSeries {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Indices of every feature that is not a location code.
    pub fn non_location_features(&self) -> Vec<usize> {
        (0..self.feature_names.len())
            .filter(|&i| !self.feature_names[i].starts_with(LOCATION_PREFIX))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.target.len();
        if n == 0 {
            return Err(Error::InvalidData(format!(
                "fog {} has an empty series",
                self.fog_id
            )));
        }
        if self.timestamps.len() != n || self.features.len() != n {
            return Err(Error::InvalidData(format!(
                "fog {}: timestamps ({}), features ({}) and target ({n}) lengths differ",
                self.fog_id,
                self.timestamps.len(),
                self.features.len()
            )));
        }
        if let Some(i) = self
            .features
            .iter()
            .position(|f| f.len() != self.feature_names.len())
        {
            return Err(Error::InvalidData(format!(
                "fog {}: step {i} has {} features, expected {}",
                self.fog_id,
                self.features[i].len(),
                self.feature_names.len()
            )));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(format!(
                "fog {}: timestamps not strictly increasing at step {}",
                self.fog_id,
                i + 1
            )));
        }
        Ok(())
    }

    /// Rewrites the lagged-target feature from the current targets.
    pub fn recompute_lag(&mut self) {
        if let Some(k) = self.feature_index(LAG_FEATURE) {
            for t in 0..self.target.len() {
                self.features[t][k] = self.target[t.saturating_sub(1)];
            }
        }
    }
}

/// Parameters of the synthetic throughput generator.
///
/// `target_t = base + A·sin(2π t / P + phase) + n_t`, with AR(1) noise
/// `n_t = φ n_{t−1} + σ e_t`. Base level and phase depend on the fog id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceGenerator {
    pub amplitude: f64,
    /// Sinusoid period in steps.
    pub period: usize,
    pub ar_coefficient: f64,
    pub noise_std: f64,
    pub base_level: f64,
    /// Base-level increment between consecutive fog ids.
    pub base_spacing: f64,
    /// Phase increment in radians between consecutive fog ids.
    pub phase_step: f64,
    pub step_seconds: i64,
    /// Width of the one-hot location code; 0 emits a single scalar code.
    pub location_slots: usize,
}

impl Default for TraceGenerator {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            period: 288,
            ar_coefficient: 0.8,
            noise_std: 0.05,
            base_level: 1.0,
            base_spacing: 1.0,
            phase_step: 0.1,
            step_seconds: 300,
            location_slots: 0,
        }
    }
}

impl TraceGenerator {
    pub fn base_of(&self, fog_id: usize) -> f64 {
        self.base_level + self.base_spacing * fog_id as f64
    }

    pub fn phase_of(&self, fog_id: usize) -> f64 {
        (self.phase_step * fog_id as f64).rem_euclid(2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("generator.{name}");
        if self.period == 0 {
            return Err(Error::config(field("period"), "must be positive"));
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::config(
                field("ar_coefficient"),
                "must lie in (-1, 1)",
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(field("noise_std"), "must be non-negative"));
        }
        if !self.phase_step.is_finite() {
            return Err(Error::config(field("phase_step"), "must be finite"));
        }
        if self.step_seconds <= 0 {
            return Err(Error::config(field("step_seconds"), "must be positive"));
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["tod_sin".to_owned(), "tod_cos".to_owned()];
        if self.location_slots == 0 {
            names.push(LOCATION_PREFIX.to_owned());
        } else {
            names.extend((0..self.location_slots).map(|i| format!("{LOCATION_PREFIX}_{i}")));
        }
        names.push(LAG_FEATURE.to_owned());
        names
    }

    fn location_code(&self, fog_id: usize) -> Result<Vec<f64>> {
        if self.location_slots == 0 {
            return Ok(vec![fog_id as f64]);
        }
        if fog_id >= self.location_slots {
            return Err(Error::InvalidData(format!(
                "fog {fog_id} has no slot in a {}-wide location code",
                self.location_slots
            )));
        }
        let mut code = vec![0.0; self.location_slots];
        code[fog_id] = 1.0;
        Ok(code)
    }
}

/// Synthetic series for one fog, fully determined by its arguments.
pub fn generate_trace(
    generator: &TraceGenerator,
    fog_id: usize,
    length: usize,
    seed: u64,
) -> Result<TraceSeries> {
    generate_regime_trace(generator, fog_id, length, seed, |_| fog_id)
}

/// Like [`generate_trace`], but step `t` follows the base level and phase
/// of fog `regime(t)`. The location code stays that of `fog_id`.
pub fn generate_regime_trace(
    generator: &TraceGenerator,
    fog_id: usize,
    length: usize,
    seed: u64,
    regime: impl Fn(usize) -> usize,
) -> Result<TraceSeries> {
    generator.validate()?;
    if length < 2 {
        return Err(Error::InvalidData(format!(
            "trace length {length} too short to form a window"
        )));
    }
    let mut rng = rng::stream(seed, &[0x7ace, fog_id as u64]);
    let phi = generator.ar_coefficient;
    let sigma = generator.noise_std;
    let innovations = Normal::new(0.0, 1.0).expect("unit normal");
    let stationary_std = sigma / (1.0 - phi * phi).sqrt();
    let mut noise = stationary_std * innovations.sample(&mut rng);

    let location = generator.location_code(fog_id)?;
    let names = generator.feature_names();
    let lag_index = names.len() - 1;
    let p = generator.period as f64;
    let mut timestamps = Vec::with_capacity(length);
    let mut features = Vec::with_capacity(length);
    let mut target = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            noise = phi * noise + sigma * innovations.sample(&mut rng);
        }
        let r = regime(t);
        let angle = 2.0 * PI * t as f64 / p;
        let value = generator.base_of(r)
            + generator.amplitude * (angle + generator.phase_of(r)).sin()
            + noise;
        target.push(value);
        timestamps.push(t as i64 * generator.step_seconds);
        let mut f = Vec::with_capacity(names.len());
        f.push(angle.sin());
        f.push(angle.cos());
        f.extend_from_slice(&location);
        f.push(0.0);
        features.push(f);
    }
    for t in 0..length {
        features[t][lag_index] = target[t.saturating_sub(1)];
    }
    Ok(TraceSeries {
        fog_id,
        timestamps,
        feature_names: names,
        features,
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Step,
    Temporary,
}

fn default_magnitude() -> f64 {
    0.5
}

/// A level shift of the target on some fogs over a range of rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub kind: DriftKind,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    pub target_fogs: BTreeSet<usize>,
    pub start_round: usize,
    #[serde(default)]
    pub end_round: Option<usize>,
}

impl DriftSpec {
    pub fn step(fogs: impl IntoIterator<Item = usize>, start_round: usize) -> Self {
        Self {
            kind: DriftKind::Step,
            magnitude: default_magnitude(),
            target_fogs: fogs.into_iter().collect(),
            start_round,
            end_round: None,
        }
    }

    pub fn temporary(
        fogs: impl IntoIterator<Item = usize>,
        start_round: usize,
        end_round: usize,
    ) -> Self {
        Self {
            kind: DriftKind::Temporary,
            magnitude: default_magnitude(),
            target_fogs: fogs.into_iter().collect(),
            start_round,
            end_round: Some(end_round),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(Error::config("drift_specs.magnitude", "must be finite"));
        }
        match (self.kind, self.end_round) {
            (DriftKind::Step, Some(_)) => Err(Error::config(
                "drift_specs.end_round",
                "a step drift has no end round",
            )),
            (DriftKind::Temporary, None) => Err(Error::config(
                "drift_specs.end_round",
                "a temporary drift needs an end round",
            )),
            (DriftKind::Temporary, Some(end)) if end <= self.start_round => Err(Error::config(
                "drift_specs.end_round",
                format!("must exceed start_round {}", self.start_round),
            )),
            _ => Ok(()),
        }
    }

    /// Whether the drift is in effect during `round`.
    pub fn is_active(&self, round: i64) -> bool {
        let start = self.start_round as i64;
        match self.end_round {
            None => round >= start,
            Some(end) => round >= start && round < end as i64,
        }
    }

    pub fn affects(&self, fog_id: usize) -> bool {
        self.target_fogs.contains(&fog_id)
    }
}

/// Adds the drift magnitude to every target whose round is in effect and
/// recomputes the lagged-target feature. Fogs outside `target_fogs` are
/// returned unchanged.
pub fn apply_drift(
    series: &TraceSeries,
    spec: &DriftSpec,
    round_of_step: impl Fn(usize) -> i64,
) -> Result<TraceSeries> {
    spec.validate()?;
    let mut out = series.clone();
    if !spec.affects(series.fog_id) {
        return Ok(out);
    }
    for (t, y) in out.target.iter_mut().enumerate() {
        if spec.is_active(round_of_step(t)) {
            *y += spec.magnitude;
        }
    }
    out.recompute_lag();
    Ok(out)
}

/// Column mapping for throughput CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp_column: String,
    pub target_column: String,
    pub feature_columns: Vec<String>,
    pub fog_column: String,
}

impl CsvSchema {
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = vec![
            &self.timestamp_column,
            &self.target_column,
            &self.fog_column,
        ];
        names.extend(self.feature_columns.iter().map(String::as_str));
        if names.iter().any(|n| n.is_empty()) {
            return Err(Error::config(
                "csv.schema",
                "column names must be non-empty",
            ));
        }
        let distinct: BTreeSet<&str> = names.iter().copied().collect();
        if distinct.len() != names.len() {
            return Err(Error::config("csv.schema", "column names must be distinct"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    /// One series per fog, ordered by fog id.
    pub series: Vec<TraceSeries>,
    /// Rows dropped because a numeric field failed to parse.
    pub skipped_rows: usize,
}

/// Reads a CSV with a header row, groups rows by fog and sorts each group
/// by timestamp. A lagged-target feature is appended after the schema's
/// feature columns.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<IngestResult> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let ts_col = column(&schema.timestamp_column)?;
    let target_col = column(&schema.target_column)?;
    let fog_col = column(&schema.fog_column)?;
    let feature_cols = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    type Row = (i64, f64, Vec<f64>);
    let mut groups: BTreeMap<usize, Vec<Row>> = BTreeMap::new();
    let mut skipped = 0;
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let parsed = (|| {
            let fog: usize = field(fog_col).parse().ok()?;
            let ts: i64 = field(ts_col).parse().ok()?;
            let y: f64 = field(target_col)
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())?;
            let feats = feature_cols
                .iter()
                .map(|&c| field(c).parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()?;
            Some((fog, (ts, y, feats)))
        })();
        match parsed {
            Some((fog, row)) => groups.entry(fog).or_default().push(row),
            None => skipped += 1,
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} contains no usable rows",
            path.display()
        )));
    }
    let mut feature_names = schema.feature_columns.clone();
    feature_names.push(LAG_FEATURE.to_owned());
    let mut series = Vec::with_capacity(groups.len());
    for (fog_id, mut rows) in groups {
        rows.sort_by_key(|r| r.0);
        let mut s = TraceSeries {
            fog_id,
            timestamps: rows.iter().map(|r| r.0).collect(),
            feature_names: feature_names.clone(),
            features: rows
                .iter()
                .map(|r| {
                    let mut f = r.2.clone();
                    f.push(0.0);
                    f
                })
                .collect(),
            target: rows.iter().map(|r| r.1).collect(),
        };
        s.recompute_lag();
        s.validate()?;
        series.push(s);
    }
    Ok(IngestResult {
        series,
        skipped_rows: skipped,
    })
}

/// Mean and standard deviation used to z-score a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Statistics of the target over `window` (population standard deviation).
    pub fn from_window(series: &TraceSeries, window: Range<usize>) -> Result<Self> {
        let slice = series.target.get(window.clone()).ok_or_else(|| {
            Error::InvalidData(format!(
                "stats window {window:?} outside series of length {}",
                series.len()
            ))
        })?;
        if slice.is_empty() {
            return Err(Error::Empty("normalization window"));
        }
        let n = slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12) {
            return Err(Error::InvalidData(format!(
                "fog {}: zero standard deviation in the normalization window",
                series.fog_id
            )));
        }
        Ok(Self { mean, std })
    }

    /// Z-scores the target and lagged-target feature.
    pub fn apply(&self, series: &TraceSeries) -> TraceSeries {
        let mut out = series.clone();
        for y in &mut out.target {
            *y = self.forward(*y);
        }
        if let Some(k) = out.feature_index(LAG_FEATURE) {
            for f in &mut out.features {
                f[k] = self.forward(f[k]);
            }
        }
        out
    }

    pub fn forward(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }

    pub fn inverse(&self, value: f64) -> f64 {
        value * self.std + self.mean
    }
}

/// Z-scores `series` with statistics from `stats_window` only.
pub fn normalize(
    series: &TraceSeries,
    stats_window: Range<usize>,
) -> Result<(TraceSeries, NormStats)> {
    let stats = NormStats::from_window(series, stats_window)?;
    Ok((stats.apply(series), stats))
}

/// Flattened feature window ending at step `last` (inclusive).
pub fn window_features(series: &TraceSeries, last: usize, window: usize) -> Vec<f64> {
    let first = last + 1 - window;
    series.features[first..=last].concat()
}

/// Sliding windows of `window` feature steps, each predicting the target
/// `horizon` steps after the window's last step.
pub fn windowize(series: &TraceSeries, window: usize, horizon: usize) -> Result<SupervisedBatch> {
    let reach = window + horizon;
    if window == 0 || horizon == 0 {
        return Err(Error::InvalidData(
            "window and horizon must be positive".into(),
        ));
    }
    if series.len() < reach {
        return Err(Error::InvalidData(format!(
            "fog {}: series of length {} is too short for window {window} + horizon {horizon}",
            series.fog_id,
            series.len()
        )));
    }
    windowize_targets(series, window, horizon, reach - 1..series.len())
}

/// Windows whose target step lies in `targets`; target steps without a
/// full window of history are skipped.
pub fn windowize_targets(
    series: &TraceSeries,
    window: usize,
    horizon: usize,
    targets: Range<usize>,
) -> Result<SupervisedBatch> {
    let first_valid = window + horizon - 1;
    let start = targets.start.max(first_valid);
    let end = targets.end.min(series.len());
    let mut inputs = Vec::new();
    let mut ys = Vec::new();
    for t in start..end {
        inputs.push(window_features(series, t - horizon, window));
        ys.push(series.target[t]);
    }
    SupervisedBatch::new(
        window,
        series.num_features(),
        inputs,
        Targets::Regression(ys),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn quiet() -> TraceGenerator {
        TraceGenerator {
            amplitude: 0.0,
            noise_std: 0.0,
            ..TraceGenerator::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let g = TraceGenerator::default();
        let a = generate_trace(&g, 3, 500, 11).unwrap();
        let b = generate_trace(&g, 3, 500, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(&g, 3, 500, 12).unwrap();
        assert_ne!(a.target, c.target);
        a.validate().unwrap();
    }

    #[test]
    fn degenerate_generator_is_constant() {
        let g = quiet();
        let s = generate_trace(&g, 2, 50, 1).unwrap();
        assert!(s.target.iter().all(|&y| y == g.base_of(2)));
    }

    #[test]
    fn sample_mean_approaches_base_level() {
        // Independent check: plain arithmetic mean over the emitted series.
        let g = TraceGenerator::default();
        let s = generate_trace(&g, 1, 10_000, 5).unwrap();
        let mean: f64 = s.target.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - g.base_of(1)).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn features_layout() {
        let g = TraceGenerator {
            location_slots: 4,
            ..TraceGenerator::default()
        };
        let s = generate_trace(&g, 2, 20, 1).unwrap();
        assert_eq!(
            s.feature_names,
            [
                "tod_sin",
                "tod_cos",
                "loc_0",
                "loc_1",
                "loc_2",
                "loc_3",
                "lag_target"
            ]
        );
        assert_eq!(&s.features[5][2..6], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.features[5][6], s.target[4]);
        assert_eq!(s.features[0][6], s.target[0]);
        assert_eq!(s.non_location_features(), vec![0, 1, 6]);
        assert!(generate_trace(&g, 4, 20, 1).is_err());
    }

    #[test]
    fn drift_skips_other_fogs() {
        let s = generate_trace(&TraceGenerator::default(), 1, 40, 3).unwrap();
        let spec = DriftSpec::step([0], 0);
        assert_eq!(apply_drift(&s, &spec, |_| 0).unwrap(), s);
    }

    #[test]
    fn step_drift_shifts_every_target() {
        let s = generate_trace(&TraceGenerator::default(), 0, 40, 3).unwrap();
        let d = apply_drift(&s, &DriftSpec::step([0], 0), |t| (t / 10) as i64).unwrap();
        for (a, b) in s.target.iter().zip(&d.target) {
            assert_eq!(*b, a + 0.5);
        }
        let k = d.feature_index(LAG_FEATURE).unwrap();
        assert_eq!(d.features[7][k], d.target[6]);
    }

    #[test]
    fn temporary_drift_has_three_stages() {
        let s = generate_trace(&TraceGenerator::default(), 0, 200, 3).unwrap();
        let spec = DriftSpec::temporary([0], 5, 10);
        let d = apply_drift(&s, &spec, |t| (t / 10) as i64).unwrap();
        for t in 0..200 {
            let expected = if (50..100).contains(&t) {
                s.target[t] + 0.5
            } else {
                s.target[t]
            };
            assert_eq!(d.target[t], expected, "step {t}");
        }
    }

    #[test]
    fn drift_is_reversible() {
        let s = generate_trace(&TraceGenerator::default(), 0, 120, 3).unwrap();
        let spec = DriftSpec::temporary([0], 2, 7);
        let round = |t: usize| (t / 10) as i64 - 1;
        let mut d = apply_drift(&s, &spec, round).unwrap();
        for t in 0..d.len() {
            if spec.is_active(round(t)) {
                d.target[t] -= spec.magnitude;
            }
        }
        d.recompute_lag();
        assert_eq!(d, s);
    }

    #[test]
    fn drift_spec_validation() {
        let mut s = DriftSpec::step([0], 1);
        s.end_round = Some(3);
        assert!(s.validate().is_err());
        let t = DriftSpec::temporary([0], 4, 4);
        assert!(t.validate().is_err());
        let json = r#"{"kind":"temporary","target_fogs":[1],"start_round":2,"end_round":5}"#;
        let parsed: DriftSpec = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.magnitude, 0.5);
        assert!(parsed.validate().is_ok());
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            timestamp_column: "ts".into(),
            target_column: "tput".into(),
            feature_columns: vec!["rsrp".into()],
            fog_column: "cell".into(),
        }
    }

    const FIXTURE: &str = "ts,cell,tput,rsrp\n\
        30,0,1.5,-90\n10,0,1.0,-91\n20,1,2.0,-80\n\
        20,0,1.2,-92\n10,1,2.5,-81\n30,1,2.2,-82\n";

    #[test]
    fn ingest_groups_and_sorts() {
        let f = write_csv(FIXTURE);
        let out = ingest_csv(f.path(), &schema()).unwrap();
        assert_eq!(out.skipped_rows, 0);
        assert_eq!(out.series.len(), 2);
        assert!(out.series.iter().all(|s| s.len() == 3));
        let s0 = &out.series[0];
        assert_eq!(s0.timestamps, vec![10, 20, 30]);
        assert_eq!(s0.target, vec![1.0, 1.2, 1.5]);
        assert_eq!(s0.feature_names, vec!["rsrp", "lag_target"]);
        assert_eq!(s0.features[2], vec![-90.0, 1.2]);
    }

    #[test]
    fn ingest_missing_column_is_named() {
        let f = write_csv("ts,cell,rsrp\n1,0,2\n");
        let err = ingest_csv(f.path(), &schema()).unwrap_err();
        assert!(
            matches!(&err, Error::MissingColumn(c) if c == "tput"),
            "{err}"
        );
    }

    #[test]
    fn ingest_skips_malformed_rows() {
        let text = format!("{FIXTURE}40,1,oops,-83\n");
        let f = write_csv(&text);
        let out = ingest_csv(f.path(), &schema()).unwrap();
        assert_eq!(out.skipped_rows, 1);
        assert_eq!(out.series[1].len(), 3);
    }

    #[test]
    fn ingest_empty_is_error() {
        let f = write_csv("ts,cell,tput,rsrp\n");
        assert!(ingest_csv(f.path(), &schema()).is_err());
    }

    #[test]
    fn normalize_constant_window_fails() {
        let s = generate_trace(&quiet(), 0, 30, 1).unwrap();
        assert!(normalize(&s, 0..10).is_err());
    }

    #[test]
    fn normalize_standard_series_is_identity() {
        let mut s = generate_trace(&TraceGenerator::default(), 0, 100, 1).unwrap();
        let mean = s.target.iter().sum::<f64>() / 100.0;
        let std = (s.target.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        for y in &mut s.target {
            *y = (*y - mean) / std;
        }
        s.recompute_lag();
        let (n, stats) = normalize(&s, 0..100).unwrap();
        assert!(stats.mean.abs() < 1e-9 && (stats.std - 1.0).abs() < 1e-9);
        for (a, b) in n.target.iter().zip(&s.target) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn drift_offset_survives_normalization() {
        let s = generate_trace(&TraceGenerator::default(), 0, 200, 1).unwrap();
        let d = apply_drift(&s, &DriftSpec::step([0], 1), |t| (t / 100) as i64).unwrap();
        let (n, stats) = normalize(&d, 0..100).unwrap();
        let clean = stats.apply(&s);
        for t in 100..200 {
            assert!((n.target[t] - clean.target[t] - 0.5 / stats.std).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts_and_overlap() {
        let s = generate_trace(&TraceGenerator::default(), 0, 40, 1).unwrap();
        let w = 10;
        let one = TraceSeries {
            timestamps: s.timestamps[..w + 1].to_vec(),
            features: s.features[..w + 1].to_vec(),
            target: s.target[..w + 1].to_vec(),
            ..s.clone()
        };
        assert_eq!(windowize(&one, w, 1).unwrap().len(), 1);
        let five = TraceSeries {
            timestamps: s.timestamps[..w + 5].to_vec(),
            features: s.features[..w + 5].to_vec(),
            target: s.target[..w + 5].to_vec(),
            ..s.clone()
        };
        let b = windowize(&five, w, 1).unwrap();
        assert_eq!(b.len(), 5);
        let f = s.num_features();
        assert_eq!(b.inputs[0][f..], b.inputs[1][..(w - 1) * f]);
        assert_eq!(b.regression_targets().unwrap()[0], s.target[w]);
        assert!(windowize(&one, w + 1, 1).is_err());
        let (n, _) = normalize(&s, 0..20).unwrap();
        assert_eq!(
            windowize(&n, w, 2).unwrap().len(),
            windowize(&s, w, 2).unwrap().len()
        );
    }
}
