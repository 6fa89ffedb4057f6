//! Local learners with hand-written gradients.
//!
//! Three architectures share one [`Learner`] type: a two-layer LSTM
//! regressor, a linear autoregressive regressor, and a two-layer MLP
//! classifier. Each keeps its weights in a [`ParameterSet`] so the
//! federation layer can exchange them without knowing the architecture.

mod linear;
mod lstm;
mod mlp;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{assert_schema_compatible, ParameterSet};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LstmRegressor,
    #[serde(rename = "linear_ar")]
    LinearAr,
    MlpClassifier,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [
        LearnerKind::LinearAr,
        LearnerKind::MlpClassifier,
        LearnerKind::LstmRegressor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::LstmRegressor => "LstmRegressor",
            LearnerKind::LinearAr => "LinearAR",
            LearnerKind::MlpClassifier => "MlpClassifier",
        }
    }

    pub fn is_classifier(self) -> bool {
        self == LearnerKind::MlpClassifier
    }
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

/// Architecture and initialization seed of a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Window length `W` in time steps.
    pub input_window: usize,
    /// Feature dimension of each time step.
    pub input_features: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl LearnerSpec {
    pub fn lstm(input_window: usize, input_features: usize, hidden: [usize; 2], seed: u64) -> Self {
        Self {
            kind: LearnerKind::LstmRegressor,
            input_window,
            input_features,
            hidden_sizes: hidden.to_vec(),
            output_dim: 1,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn linear_ar(input_window: usize, input_features: usize, seed: u64) -> Self {
        Self {
            kind: LearnerKind::LinearAr,
            input_window,
            input_features,
            hidden_sizes: Vec::new(),
            output_dim: 1,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn mlp_classifier(
        input_window: usize,
        input_features: usize,
        hidden: usize,
        classes: usize,
        seed: u64,
    ) -> Self {
        Self {
            kind: LearnerKind::MlpClassifier,
            input_window,
            input_features,
            hidden_sizes: vec![hidden],
            output_dim: classes,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    /// Length of one flattened example.
    pub fn input_len(&self) -> usize {
        self.input_window * self.input_features
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.input_window == 0 || self.input_features == 0 {
            return bad("input_window and input_features must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be positive".into());
        }
        match self.kind {
            LearnerKind::LstmRegressor if self.hidden_sizes.len() != 2 => bad(format!(
                "LstmRegressor needs exactly two hidden sizes, got {:?}",
                self.hidden_sizes
            )),
            LearnerKind::MlpClassifier if self.hidden_sizes.len() != 1 => bad(format!(
                "MlpClassifier needs exactly one hidden size, got {:?}",
                self.hidden_sizes
            )),
            LearnerKind::MlpClassifier if self.output_dim < 2 => bad(format!(
                "MlpClassifier needs at least two classes, got {}",
                self.output_dim
            )),
            LearnerKind::LstmRegressor | LearnerKind::LinearAr if self.output_dim != 1 => bad(
                format!("regressors have output_dim 1, got {}", self.output_dim),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(t) => t.len(),
            Targets::Classes(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Windowed training data. Each input is a flattened `window × features`
/// sequence in time-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedBatch {
    pub window: usize,
    pub features: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl SupervisedBatch {
    pub fn new(
        window: usize,
        features: usize,
        inputs: Vec<Vec<f64>>,
        targets: Targets,
    ) -> Result<Self> {
        let batch = Self {
            window,
            features,
            inputs,
            targets,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("batch has no examples"));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let len = self.window * self.features;
        if let Some(i) = self.inputs.iter().position(|x| x.len() != len) {
            return Err(Error::Dimension(format!(
                "example {i} has {} values, expected {} ({}×{})",
                self.inputs[i].len(),
                len,
                self.window,
                self.features
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn regression_targets(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Regression(t) => Some(t),
            Targets::Classes(_) => None,
        }
    }

    /// Sub-batch with the given example indices.
    pub fn select(&self, indices: &[usize]) -> SupervisedBatch {
        let inputs = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Regression(t) => Targets::Regression(indices.iter().map(|&i| t[i]).collect()),
            Targets::Classes(t) => Targets::Classes(indices.iter().map(|&i| t[i]).collect()),
        };
        SupervisedBatch {
            window: self.window,
            features: self.features,
            inputs,
            targets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean training loss over the epoch's mini-batches.
    pub final_loss: f64,
    pub mae: Option<f64>,
}

/// A learner instance: its spec, parameters and shuffling stream.
#[derive(Debug, Clone)]
pub struct Learner {
    spec: LearnerSpec,
    params: ParameterSet,
    rng: ChaCha8Rng,
}

/// Builds a learner with Xavier-uniform weights drawn from `spec.seed`.
pub fn init_learner(spec: &LearnerSpec) -> Result<Learner> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = match spec.kind {
        LearnerKind::LstmRegressor => {
            lstm::init(spec.input_features, &spec.hidden_sizes, &mut rng)?
        }
        LearnerKind::LinearAr => linear::init(spec.input_len(), &mut rng)?,
        LearnerKind::MlpClassifier => mlp::init(
            spec.input_len(),
            spec.hidden_sizes[0],
            spec.output_dim,
            &mut rng,
        )?,
    };
    // Shuffling uses its own stream so it does not depend on the number of
    // values drawn during initialization.
    let shuffle = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed_5eed_5eed);
    Ok(Learner {
        spec: spec.clone(),
        params,
        rng: shuffle,
    })
}

impl Learner {
    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Deep copy of the current parameters.
    pub fn export_params(&self) -> ParameterSet {
        self.params.clone()
    }

    /// Replaces every parameter; the schema must match this learner's.
    pub fn import_params(&mut self, params: &ParameterSet) -> Result<()> {
        assert_schema_compatible(&[&self.params, params])?;
        params.ensure_finite()?;
        self.params = params.clone();
        Ok(())
    }

    fn check_batch(&self, batch: &SupervisedBatch) -> Result<()> {
        batch.validate()?;
        if batch.window * batch.features != self.spec.input_len() {
            return Err(Error::Dimension(format!(
                "batch is {}×{} but the learner expects {}×{}",
                batch.window, batch.features, self.spec.input_window, self.spec.input_features
            )));
        }
        match (&batch.targets, self.spec.kind.is_classifier()) {
            (Targets::Classes(c), true) => {
                if let Some(&bad) = c.iter().find(|&&c| c >= self.spec.output_dim) {
                    return Err(Error::Dimension(format!(
                        "class index {bad} out of range for {} classes",
                        self.spec.output_dim
                    )));
                }
                Ok(())
            }
            (Targets::Regression(_), false) => Ok(()),
            _ => Err(Error::Dimension(
                "target type does not match the learner kind".into(),
            )),
        }
    }

    /// Output for one flattened example: one value for regressors, the
    /// logits for the classifier.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_len() {
            return Err(Error::Dimension(format!(
                "input has {} values, expected {}",
                input.len(),
                self.spec.input_len()
            )));
        }
        Ok(self.predict_unchecked(input))
    }

    fn predict_unchecked(&self, input: &[f64]) -> Vec<f64> {
        match self.spec.kind {
            LearnerKind::LstmRegressor => {
                vec![lstm::forward(&self.params, input, self.spec.input_window)]
            }
            LearnerKind::LinearAr => vec![linear::forward(&self.params, input)],
            LearnerKind::MlpClassifier => mlp::forward(&self.params, input),
        }
    }

    /// Outputs for every example in the batch.
    pub fn forward(&self, batch: &SupervisedBatch) -> Result<Vec<Vec<f64>>> {
        self.check_batch(batch)?;
        Ok(batch
            .inputs
            .iter()
            .map(|x| self.predict_unchecked(x))
            .collect())
    }

    /// Scalar predictions of a regressor.
    pub fn predict(&self, batch: &SupervisedBatch) -> Result<Vec<f64>> {
        if self.spec.kind.is_classifier() {
            return Err(Error::Dimension("predict is for regressors".into()));
        }
        Ok(self.forward(batch)?.into_iter().map(|v| v[0]).collect())
    }

    /// Mean loss over the batch (MSE or cross-entropy) and its gradient.
    pub fn loss_and_gradient(&self, batch: &SupervisedBatch) -> Result<(f64, ParameterSet)> {
        self.check_batch(batch)?;
        Ok(self.loss_and_gradient_unchecked(batch))
    }

    fn loss_and_gradient_unchecked(&self, batch: &SupervisedBatch) -> (f64, ParameterSet) {
        let mut grad = self.params.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (i, x) in batch.inputs.iter().enumerate() {
            loss += match (&batch.targets, self.spec.kind) {
                (Targets::Regression(t), LearnerKind::LstmRegressor) => lstm::loss_and_grad(
                    &self.params,
                    x,
                    self.spec.input_window,
                    t[i],
                    scale,
                    &mut grad,
                ),
                (Targets::Regression(t), LearnerKind::LinearAr) => {
                    linear::loss_and_grad(&self.params, x, t[i], scale, &mut grad)
                }
                (Targets::Classes(c), LearnerKind::MlpClassifier) => {
                    mlp::loss_and_grad(&self.params, x, c[i], scale, &mut grad)
                }
                _ => unreachable!("checked by check_batch"),
            };
        }
        (loss * scale, grad)
    }

    /// Mean loss over the batch without computing gradients.
    pub fn loss(&self, batch: &SupervisedBatch) -> Result<f64> {
        self.check_batch(batch)?;
        Ok(self.loss_unchecked(batch))
    }

    fn loss_unchecked(&self, batch: &SupervisedBatch) -> f64 {
        let total: f64 = match &batch.targets {
            Targets::Regression(t) => batch
                .inputs
                .iter()
                .zip(t)
                .map(|(x, y)| {
                    let e = self.predict_unchecked(x)[0] - y;
                    e * e
                })
                .sum(),
            Targets::Classes(c) => batch
                .inputs
                .iter()
                .zip(c)
                .map(|(x, &k)| -log_softmax(&self.predict_unchecked(x))[k])
                .sum(),
        };
        total / batch.len() as f64
    }

    /// One shuffled pass of mini-batch SGD over `batch`.
    pub fn train_epoch(
        &mut self,
        batch: &SupervisedBatch,
        learning_rate: f64,
    ) -> Result<TrainReport> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be positive, got {learning_rate}"),
            ));
        }
        self.check_batch(batch)?;
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut chunks = 0usize;
        for chunk in order.chunks(self.spec.batch_size) {
            let sub = batch.select(chunk);
            let (loss, grad) = self.loss_and_gradient_unchecked(&sub);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss ({})", self.spec.kind.name()),
                });
            }
            self.params.add_scaled(&grad, -learning_rate)?;
            loss_sum += loss;
            chunks += 1;
        }
        self.params.ensure_finite()?;
        let mae = match &batch.targets {
            Targets::Regression(t) => Some(mae(&self.predict(batch)?, t)?),
            Targets::Classes(_) => None,
        };
        Ok(TrainReport {
            epochs_run: 1,
            final_loss: loss_sum / chunks as f64,
            mae,
        })
    }
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("mae of an empty slice"));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Step used by [`gradient_check`] for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between the analytic gradient and central finite
/// differences, over every parameter.
pub fn gradient_check(learner: &Learner, batch: &SupervisedBatch) -> Result<f64> {
    gradient_check_perturbed(learner, batch, 0.0)
}

/// As [`gradient_check`], with `perturbation` added to every analytic
/// gradient entry before comparison. Used to exercise failure reporting.
pub fn gradient_check_perturbed(
    learner: &Learner,
    batch: &SupervisedBatch,
    perturbation: f64,
) -> Result<f64> {
    let (_, analytic) = learner.loss_and_gradient(batch)?;
    let mut probe = learner.clone();
    let mut worst = 0.0f64;
    for l in 0..analytic.num_layers() {
        for i in 0..analytic.layers()[l].len() {
            let original = probe.params.layers()[l].values()[i];
            probe.params.layers_mut()[l].values_mut()[i] = original + FD_STEP;
            let plus = probe.loss_unchecked(batch);
            probe.params.layers_mut()[l].values_mut()[i] = original - FD_STEP;
            let minus = probe.loss_unchecked(batch);
            probe.params.layers_mut()[l].values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let exact = analytic.layers()[l].values()[i] + perturbation;
            let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// `count` draws from U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier_uniform(
    rng: &mut impl Rng,
    fan_in: usize,
    fan_out: usize,
    count: usize,
) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(spec: &LearnerSpec, n: usize, seed: u64) -> SupervisedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..spec.input_len())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let targets = if spec.kind.is_classifier() {
            Targets::Classes((0..n).map(|i| i % spec.output_dim).collect())
        } else {
            Targets::Regression((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        SupervisedBatch::new(spec.input_window, spec.input_features, inputs, targets).unwrap()
    }

    fn zero_params(learner: &mut Learner) {
        let zeros = learner.params().zeros_like();
        learner.import_params(&zeros).unwrap();
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        for kind in LearnerKind::ALL {
            let spec = match kind {
                LearnerKind::LstmRegressor => LearnerSpec::lstm(4, 3, [5, 5], 9),
                LearnerKind::LinearAr => LearnerSpec::linear_ar(4, 3, 9),
                LearnerKind::MlpClassifier => LearnerSpec::mlp_classifier(4, 3, 6, 3, 9),
            };
            let a = init_learner(&spec).unwrap();
            let b = init_learner(&spec).unwrap();
            assert_eq!(a.params(), b.params());
            let other = init_learner(&LearnerSpec { seed: 10, ..spec }).unwrap();
            assert_ne!(a.params(), other.params());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = LearnerSpec::lstm(4, 3, [5, 5], 1);
        s.hidden_sizes = vec![5];
        assert!(init_learner(&s).is_err());
        let mut s = LearnerSpec::mlp_classifier(4, 3, 6, 3, 1);
        s.output_dim = 1;
        assert!(init_learner(&s).is_err());
        let s = LearnerSpec::linear_ar(0, 3, 1);
        assert!(init_learner(&s).is_err());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        for spec in [
            LearnerSpec::lstm(4, 3, [5, 5], 2),
            LearnerSpec::linear_ar(4, 3, 2),
            LearnerSpec::mlp_classifier(4, 3, 6, 3, 2),
        ] {
            let mut learner = init_learner(&spec).unwrap();
            zero_params(&mut learner);
            let batch = random_batch(&spec, 5, 3);
            for out in learner.forward(&batch).unwrap() {
                assert!(out.iter().all(|&v| v == 0.0), "{:?}", spec.kind);
            }
        }
    }

    #[test]
    fn linear_selector_weights_copy_first_element() {
        let spec = LearnerSpec::linear_ar(3, 2, 0);
        let mut learner = init_learner(&spec).unwrap();
        let mut p = learner.params().zeros_like();
        p.layers_mut()[0].values_mut()[0] = 1.0;
        learner.import_params(&p).unwrap();
        let out = learner
            .predict_one(&[0.73, 5.0, 6.0, 7.0, 8.0, 9.0])
            .unwrap();
        assert_eq!(out, vec![0.73]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let spec = LearnerSpec::lstm(4, 3, [5, 5], 2);
        let learner = init_learner(&spec).unwrap();
        let batch =
            SupervisedBatch::new(4, 2, vec![vec![0.0; 8]], Targets::Regression(vec![0.0])).unwrap();
        assert!(matches!(learner.forward(&batch), Err(Error::Dimension(_))));
        assert!(learner.predict_one(&[0.0; 3]).is_err());
    }

    #[test]
    fn batch_invariants() {
        assert!(SupervisedBatch::new(2, 1, vec![], Targets::Regression(vec![])).is_err());
        assert!(
            SupervisedBatch::new(2, 1, vec![vec![0.0, 1.0]], Targets::Regression(vec![])).is_err()
        );
        assert!(
            SupervisedBatch::new(2, 1, vec![vec![0.0]], Targets::Regression(vec![1.0])).is_err()
        );
    }

    #[test]
    fn zero_learning_rate_rejected_and_tiny_rate_is_inert() {
        let spec = LearnerSpec::lstm(4, 3, [5, 5], 4);
        let mut learner = init_learner(&spec).unwrap();
        let batch = random_batch(&spec, 12, 5);
        assert!(learner.train_epoch(&batch, 0.0).is_err());
        let before = learner.loss(&batch).unwrap();
        learner.train_epoch(&batch, 1e-12).unwrap();
        let after = learner.loss(&batch).unwrap();
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        for classes in [2usize, 3, 7] {
            let spec = LearnerSpec::mlp_classifier(3, 2, 4, classes, 1);
            let mut learner = init_learner(&spec).unwrap();
            zero_params(&mut learner);
            let batch = random_batch(&spec, 10, 2);
            let loss = learner.loss(&batch).unwrap();
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn class_index_out_of_range_is_rejected() {
        let spec = LearnerSpec::mlp_classifier(2, 1, 3, 2, 1);
        let learner = init_learner(&spec).unwrap();
        let batch =
            SupervisedBatch::new(2, 1, vec![vec![0.0, 0.0]], Targets::Classes(vec![2])).unwrap();
        assert!(learner.loss(&batch).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn export_import_round_trip_and_mismatch() {
        let spec = LearnerSpec::lstm(4, 3, [5, 5], 4);
        let mut a = init_learner(&spec).unwrap();
        let b = init_learner(&LearnerSpec {
            seed: 99,
            ..spec.clone()
        })
        .unwrap();
        let p = b.export_params();
        a.import_params(&p).unwrap();
        assert_eq!(a.export_params(), p);
        let batch = random_batch(&spec, 4, 1);
        assert_eq!(a.forward(&batch).unwrap(), b.forward(&batch).unwrap());

        let wider = init_learner(&LearnerSpec::lstm(4, 3, [6, 5], 4)).unwrap();
        let err = a.import_params(wider.params()).unwrap_err().to_string();
        assert!(err.contains("lstm1.w_ih"), "{err}");
    }

    #[test]
    fn non_finite_loss_fails_fast() {
        let spec = LearnerSpec::linear_ar(2, 1, 0);
        let mut learner = init_learner(&spec).unwrap();
        let batch = SupervisedBatch::new(
            2,
            1,
            vec![vec![1e200, 1e200]],
            Targets::Regression(vec![0.0]),
        )
        .unwrap();
        let err = learner.train_epoch(&batch, 1.0).unwrap_err();
        assert!(err.is_runtime_abort(), "{err}");
    }

    #[test]
    fn perturbed_gradient_is_detected() {
        let spec = LearnerSpec::linear_ar(3, 2, 7);
        let learner = init_learner(&spec).unwrap();
        let batch = random_batch(&spec, 6, 7);
        assert!(gradient_check(&learner, &batch).unwrap() < 1e-7);
        assert!(gradient_check_perturbed(&learner, &batch, 1e-2).unwrap() > 1e-4);
    }
}
