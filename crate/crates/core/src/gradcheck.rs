//! Fixed-seed gradient checks for every learner kind.

use rand::Rng;

use crate::error::Result;
use crate::models::{
    gradient_check_perturbed, init_learner, LearnerKind, LearnerSpec, SupervisedBatch, Targets,
};
use crate::rng;

/// Pass threshold on the maximum relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckResult {
    pub kind: LearnerKind,
    pub parameters: usize,
    pub max_relative_error: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// Small spec used for checking each kind (under 2000 parameters).
pub fn check_spec(kind: LearnerKind, seed: u64) -> LearnerSpec {
    match kind {
        LearnerKind::LinearAr => LearnerSpec::linear_ar(5, 3, seed),
        LearnerKind::MlpClassifier => LearnerSpec::mlp_classifier(5, 3, 8, 3, seed),
        LearnerKind::LstmRegressor => LearnerSpec::lstm(5, 3, [6, 5], seed),
    }
}

/// Eight random examples matching `spec`, drawn from `seed`.
pub fn check_batch(spec: &LearnerSpec, seed: u64) -> Result<SupervisedBatch> {
    let mut rng = rng::stream(seed, &[0x96ad]);
    let n = 8;
    let inputs = (0..n)
        .map(|_| {
            (0..spec.input_len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let targets = if spec.kind.is_classifier() {
        Targets::Classes((0..n).map(|_| rng.gen_range(0..spec.output_dim)).collect())
    } else {
        Targets::Regression((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    SupervisedBatch::new(spec.input_window, spec.input_features, inputs, targets)
}

/// Runs the check for all three kinds. `perturbation` is added to every
/// analytic gradient entry; pass 0 for a genuine check.
pub fn run_all(seed: u64, perturbation: f64) -> Result<Vec<GradCheckResult>> {
    LearnerKind::ALL
        .iter()
        .map(|&kind| {
            let spec = check_spec(kind, seed);
            let learner = init_learner(&spec)?;
            let batch = check_batch(&spec, seed)?;
            Ok(GradCheckResult {
                kind,
                parameters: learner.params().num_values(),
                max_relative_error: gradient_check_perturbed(&learner, &batch, perturbation)?,
            })
        })
        .collect()
}
