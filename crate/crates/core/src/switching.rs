//! Query switching for a newly added fog station.
//!
//! While a new station has no trained model, each incoming query window is
//! classified to one of the neighbouring fogs and answered by that fog's
//! local model. The classifier is the two-layer MLP from [`crate::models`]
//! trained with cross-entropy on windows (target plus every non-location
//! feature per step) labelled by source fog. Inputs are standardized per
//! column with statistics of the training windows.

use std::io::Write;
use std::path::Path;

use crate::data::TraceSeries;
use crate::error::{Error, Result};
use crate::models::{init_learner, Learner, LearnerKind, LearnerSpec, SupervisedBatch, Targets};

/// Minimum number of training windows per class.
pub const MIN_PER_CLASS: usize = 10;

/// Raw window ending at step `last`: per step, the target followed by the
/// non-location features.
pub fn switch_window(series: &TraceSeries, last: usize, window: usize) -> Vec<f64> {
    let cols = series.non_location_features();
    let mut out = Vec::with_capacity(window * (cols.len() + 1));
    for t in last + 1 - window..=last {
        out.push(series.target[t]);
        out.extend(cols.iter().map(|&c| series.features[t][c]));
    }
    out
}

/// Values per time step in a [`switch_window`].
pub fn switch_step_width(series: &TraceSeries) -> usize {
    series.non_location_features().len() + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchDataset {
    pub window: usize,
    pub step_width: usize,
    pub classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl SwitchDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn to_batch(&self) -> Result<SupervisedBatch> {
        SupervisedBatch::new(
            self.window,
            self.step_width,
            self.inputs.clone(),
            Targets::Classes(self.labels.clone()),
        )
    }
}

/// Windows from each neighbour trace, labelled by the trace's position in
/// `neighbor_traces`, split chronologically per fog.
pub fn build_switch_dataset(
    neighbor_traces: &[TraceSeries],
    window: usize,
    split: f64,
) -> Result<(SwitchDataset, SwitchDataset)> {
    if neighbor_traces.len() < 2 {
        return Err(Error::InvalidData(format!(
            "switching needs at least 2 neighbour fogs, got {}",
            neighbor_traces.len()
        )));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::config(
            "split",
            format!("must lie in (0, 1), got {split}"),
        ));
    }
    if window == 0 {
        return Err(Error::InvalidData("window must be positive".into()));
    }
    let width = switch_step_width(&neighbor_traces[0]);
    let empty = || SwitchDataset {
        window,
        step_width: width,
        classes: neighbor_traces.len(),
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    let (mut train, mut test) = (empty(), empty());
    for (label, trace) in neighbor_traces.iter().enumerate() {
        if switch_step_width(trace) != width {
            return Err(Error::Dimension(format!(
                "fog {} has a different feature layout",
                trace.fog_id
            )));
        }
        let windows = trace.len().saturating_sub(window - 1);
        if trace.len() < window || windows < MIN_PER_CLASS {
            return Err(Error::InvalidData(format!(
                "fog {} yields {windows} windows, need at least {MIN_PER_CLASS}",
                trace.fog_id
            )));
        }
        let cut = ((windows as f64) * split).floor() as usize;
        if cut == 0 || cut == windows {
            return Err(Error::InvalidData(format!(
                "fog {}: split {split} leaves an empty partition",
                trace.fog_id
            )));
        }
        for i in 0..windows {
            let x = switch_window(trace, i + window - 1, window);
            let part = if i < cut { &mut train } else { &mut test };
            part.inputs.push(x);
            part.labels.push(label);
        }
    }
    if let Some(c) = train.class_counts().iter().position(|&n| n < MIN_PER_CLASS) {
        return Err(Error::InvalidData(format!(
            "class {c} has fewer than {MIN_PER_CLASS} training windows"
        )));
    }
    Ok((train, test))
}

/// A trained switching classifier.
#[derive(Debug, Clone)]
pub struct SwitchClassifier {
    learner: Learner,
    window: usize,
    /// Per-column mean and std of the training inputs.
    scale: Vec<(f64, f64)>,
}

impl SwitchClassifier {
    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn classes(&self) -> usize {
        self.learner.spec().output_dim
    }

    /// Classifies the raw window of `series` ending at step `last`.
    pub fn classify_series(&self, series: &TraceSeries, last: usize) -> Result<usize> {
        classify_query(self, &switch_window(series, last, self.window))
    }
}

/// Trains an MLP classifier on `train` for `epochs` passes.
pub fn train_switch_classifier(
    train: &SwitchDataset,
    spec: &LearnerSpec,
    epochs: usize,
    rate: f64,
) -> Result<SwitchClassifier> {
    if spec.kind != LearnerKind::MlpClassifier {
        return Err(Error::InvalidSpec(format!(
            "switching needs an MlpClassifier, got {}",
            spec.kind.name()
        )));
    }
    if spec.output_dim != train.classes {
        return Err(Error::InvalidSpec(format!(
            "output_dim {} does not match {} classes",
            spec.output_dim, train.classes
        )));
    }
    if spec.input_window != train.window || spec.input_features != train.step_width {
        return Err(Error::InvalidSpec(format!(
            "classifier expects {}×{} windows, dataset has {}×{}",
            spec.input_window, spec.input_features, train.window, train.step_width
        )));
    }
    let scale = column_scale(train);
    let scaled = SwitchDataset {
        inputs: train
            .inputs
            .iter()
            .map(|x| standardize(x, &scale))
            .collect(),
        ..train.clone()
    };
    let batch = scaled.to_batch()?;
    let mut learner = init_learner(spec)?;
    for _ in 0..epochs {
        learner.train_epoch(&batch, rate)?;
    }
    Ok(SwitchClassifier {
        learner,
        window: train.window,
        scale,
    })
}

/// Mean and std of each step column over every training window. Constant
/// columns get std 1.
fn column_scale(train: &SwitchDataset) -> Vec<(f64, f64)> {
    let width = train.step_width;
    let mut sums = vec![(0.0, 0.0, 0usize); width];
    for x in &train.inputs {
        for (i, v) in x.iter().enumerate() {
            let s = &mut sums[i % width];
            s.0 += v;
            s.1 += v * v;
            s.2 += 1;
        }
    }
    sums.into_iter()
        .map(|(sum, sq, n)| {
            let n = n.max(1) as f64;
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            (mean, if var > 1e-24 { var.sqrt() } else { 1.0 })
        })
        .collect()
}

fn standardize(window: &[f64], scale: &[(f64, f64)]) -> Vec<f64> {
    window
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (mean, std) = scale[i % scale.len()];
            (v - mean) / std
        })
        .collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify_query(classifier: &SwitchClassifier, window: &[f64]) -> Result<usize> {
    let x = standardize(window, &classifier.scale);
    Ok(argmax(&classifier.learner.predict_one(&x)?))
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(classes);
        for (t, p) in pairs {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    /// `true,predicted,count` rows followed by `accuracy,,<value>`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "true,predicted,count")?;
        for (t, row) in self.counts.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                writeln!(out, "{t},{p},{c}")?;
            }
        }
        writeln!(out, "accuracy,,{}", self.accuracy())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Accuracy and confusion matrix of `classifier` on `test`.
pub fn evaluate_switch(
    classifier: &SwitchClassifier,
    test: &SwitchDataset,
) -> Result<(f64, ConfusionMatrix)> {
    if test.is_empty() {
        return Err(Error::Empty("switch test set"));
    }
    let mut pairs = Vec::with_capacity(test.len());
    for (x, &label) in test.inputs.iter().zip(&test.labels) {
        pairs.push((label, classify_query(classifier, x)?));
    }
    let matrix = ConfusionMatrix::from_pairs(test.classes, pairs);
    Ok((matrix.accuracy(), matrix))
}
